//! Seeded multi-octave value noise.

/// Lowest intensity produced by [`procedural_texture`].
pub const TEXTURE_MIN: f64 = 0.1;
/// Highest intensity produced by [`procedural_texture`].
pub const TEXTURE_MAX: f64 = 0.9;
const OCTAVES: u32 = 3;
const OCTAVE_SHIFT: f64 = 0.37;

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x632b_e59b_d9b4_e019) ^ (iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (fade(x - fx), fade(y - fy));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// RGB colour of a surface point given in lattice units. Every channel is a
/// normalised sum of octaves with halving amplitude, mapped into
/// `[TEXTURE_MIN, TEXTURE_MAX]`; the quintic fade keeps it C2 and Lipschitz.
pub fn procedural_texture(seed: u64, p: [f64; 2]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (c, v) in out.iter_mut().enumerate() {
        let ch_seed = splitmix(seed.wrapping_add(c as u64 * 0x1000_0000_01b3));
        let (mut sum, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, 1.0);
        for o in 0..OCTAVES {
            let oct_seed = splitmix(ch_seed ^ u64::from(o));
            // The fade is flat on lattice lines; shifting each octave keeps
            // those lines from lining up into textureless stripes.
            let shift = OCTAVE_SHIFT * f64::from(o);
            sum += amp * value_noise(oct_seed, p[0] * freq + shift, p[1] * freq + 0.5 * shift);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        let t = (sum / norm).clamp(0.0, 1.0);
        *v = TEXTURE_MIN + (TEXTURE_MAX - TEXTURE_MIN) * t;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_and_seed_dependent() {
        let mut differ = 0;
        let n = 10_000;
        for i in 0..n {
            let p = [i as f64 * 0.137, (i % 97) as f64 * 0.291];
            let a = procedural_texture(7, p);
            assert_eq!(a, procedural_texture(7, p));
            let b = procedural_texture(8, p);
            if (a[0] - b[0]).abs() > 1e-6 {
                differ += 1;
            }
        }
        assert!(differ > n / 2, "{differ}");
    }

    #[test]
    fn not_flat() {
        let vals: Vec<f64> = (0..1000).map(|i| procedural_texture(3, [i as f64 * 0.31, 0.5])[1]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(var.sqrt() > 0.05, "{}", var.sqrt());
    }

    proptest! {
        #[test]
        fn in_range(seed in any::<u64>(), x in -1e4f64..1e4, y in -1e4f64..1e4) {
            for v in procedural_texture(seed, [x, y]) {
                prop_assert!((TEXTURE_MIN..=TEXTURE_MAX).contains(&v));
            }
        }

        #[test]
        fn lipschitz(seed in any::<u64>(), x in -100.0f64..100.0, y in -100.0f64..100.0,
                     dx in -1e-3f64..1e-3, dy in -1e-3f64..1e-3) {
            // Each octave's slope is at most 1.875 * freq per axis.
            let bound = 0.8 * 1.875 * 3.0 / 1.75;
            let a = procedural_texture(seed, [x, y]);
            let b = procedural_texture(seed, [x + dx, y + dy]);
            for c in 0..3 {
                prop_assert!((a[c] - b[c]).abs() <= bound * (dx.abs() + dy.abs()) + 1e-12);
            }
        }
    }
}
