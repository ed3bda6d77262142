//! Counter-based random numbers keyed by `(seed, iteration, substep, particle)`.
//!
//! Every draw is a pure function of its key, so particle loops can be split
//! across any number of workers and still reproduce the single-threaded
//! result bit for bit. The block function is Philox4x32-10; Gaussians come
//! from the Box-Muller transform, two per block.

use std::f64::consts::PI;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Philox4x32 with ten rounds.
pub fn philox4x32_10(mut ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let p0 = u64::from(PHILOX_M0) * u64::from(ctr[0]);
        let p1 = u64::from(PHILOX_M1) * u64::from(ctr[2]);
        let (hi0, lo0) = ((p0 >> 32) as u32, p0 as u32);
        let (hi1, lo1) = ((p1 >> 32) as u32, p1 as u32);
        ctr = [hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0];
    }
    ctr
}

/// Domain tags keep the different uses of one `(k, i, p)` key apart.
const DOMAIN_NORMAL: u32 = 0x0000;
const DOMAIN_RESAMPLE: u32 = 0x0100;
const DOMAIN_INIT: u32 = 0x0200;

#[inline]
fn unit_open_closed(bits: u64) -> f64 {
    // (0, 1]
    ((bits >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn unit_closed_open(bits: u64) -> f64 {
    // [0, 1)
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Source of the Gaussian increments and resampling uniforms consumed by the
/// particle system. [`RngStream`] is the production implementation; tests
/// substitute deterministic sources.
pub trait RandomSource: Sync {
    /// Fills `out` with independent standard normals for particle `p` at
    /// substep `i` of iteration `k`.
    fn normals(&self, k: u64, i: u64, p: u64, out: &mut [f64]);

    /// Uniform in `[0, 1)` used to pick the parent of offspring `p`.
    fn resample_uniform(&self, k: u64, i: u64, p: u64) -> f64;

    /// Uniforms in `[0, 1)` for drawing the initial position of particle `p`.
    fn initial_uniforms(&self, p: u64, out: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    fn key(&self) -> [u32; 2] {
        [self.seed as u32, (self.seed >> 32) as u32]
    }

    #[inline]
    fn block(&self, k: u64, i: u64, p: u64, domain: u32) -> [u64; 2] {
        debug_assert!(k <= u64::from(u32::MAX) && i <= u64::from(u32::MAX));
        let ctr = [p as u32, domain | (((p >> 32) as u32) << 16), k as u32, i as u32];
        let r = philox4x32_10(ctr, self.key());
        [
            u64::from(r[0]) | (u64::from(r[1]) << 32),
            u64::from(r[2]) | (u64::from(r[3]) << 32),
        ]
    }
}

impl RandomSource for RngStream {
    #[inline]
    fn normals(&self, k: u64, i: u64, p: u64, out: &mut [f64]) {
        for (j, pair) in out.chunks_mut(2).enumerate() {
            let [a, b] = self.block(k, i, p, DOMAIN_NORMAL + j as u32);
            let r = (-2.0 * unit_open_closed(a).ln()).sqrt();
            let (s, c) = (2.0 * PI * unit_closed_open(b)).sin_cos();
            pair[0] = r * c;
            if pair.len() > 1 {
                pair[1] = r * s;
            }
        }
    }

    #[inline]
    fn resample_uniform(&self, k: u64, i: u64, p: u64) -> f64 {
        unit_closed_open(self.block(k, i, p, DOMAIN_RESAMPLE)[0])
    }

    fn initial_uniforms(&self, p: u64, out: &mut [f64]) {
        for (j, pair) in out.chunks_mut(2).enumerate() {
            let [a, b] = self.block(0, 0, p, DOMAIN_INIT + j as u32);
            pair[0] = unit_closed_open(a);
            if pair.len() > 1 {
                pair[1] = unit_closed_open(b);
            }
        }
    }
}

/// Mixes a base seed with integer coordinates into an independent seed.
/// Used to give each (σ, λ) cell of a sweep its own stream.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    // SplitMix64 finalizer applied along the coordinate list.
    let mut h = base ^ 0x6A09_E667_F3BC_C909;
    for &c in coords {
        h = h.wrapping_add(c.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}
