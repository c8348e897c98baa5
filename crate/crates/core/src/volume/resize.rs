use super::{Shape3, Volume, VolumeError};

/// Per-axis sampling taps: lower index, upper index and weight of the upper tap.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + w * (b - a)
}

/// Trilinear resampling with half-voxel-centred coordinates and edge clamping.
///
/// Every output voxel is a convex combination of input voxels, so the output
/// range never leaves the input range. Resizing to the same shape is exact.
pub fn resize_volume(v: &Volume, target: Shape3) -> Result<Volume, VolumeError> {
    if target.contains(&0) {
        return Err(VolumeError::EmptyDimension(target));
    }
    let shape = v.shape();
    if shape == target {
        return Ok(v.clone());
    }
    let tx = axis_taps(shape[0], target[0]);
    let ty = axis_taps(shape[1], target[1]);
    let tz = axis_taps(shape[2], target[2]);
    let at = |x: usize, y: usize, z: usize| f64::from(v.get(x, y, z));

    let mut data = Vec::with_capacity(target.iter().product());
    for &(z0, z1, wz) in &tz {
        for &(y0, y1, wy) in &ty {
            for &(x0, x1, wx) in &tx {
                let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), wx);
                let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), wx);
                let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), wx);
                let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), wx);
                let c0 = lerp(c00, c10, wy);
                let c1 = lerp(c01, c11, wy);
                data.push(lerp(c0, c1, wz) as f32);
            }
        }
    }
    let spacing = std::array::from_fn(|a| v.spacing()[a] * shape[a] as f32 / target[a] as f32);
    Volume::new(data, target, spacing, v.id())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: locate the nearest lower voxel per axis, then
    /// weight the 8 surrounding voxels by products of 1-D hat functions.
    fn oracle(v: &Volume, target: Shape3, x: usize, y: usize, z: usize) -> f64 {
        let s = v.shape();
        let coord = |o: usize, a: usize| {
            let c = (o as f64 + 0.5) * s[a] as f64 / target[a] as f64 - 0.5;
            c.max(0.0).min((s[a] - 1) as f64)
        };
        let c = [coord(x, 0), coord(y, 1), coord(z, 2)];
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let idx = [
                        c[0].floor() as usize + dx,
                        c[1].floor() as usize + dy,
                        c[2].floor() as usize + dz,
                    ];
                    if (0..3).any(|a| idx[a] >= s[a]) {
                        continue;
                    }
                    let w: f64 = (0..3)
                        .map(|a| (1.0 - (c[a] - idx[a] as f64).abs()).max(0.0))
                        .product();
                    acc += w * f64::from(v.get(idx[0], idx[1], idx[2]));
                }
            }
        }
        acc
    }

    #[test]
    fn identity_resize_is_exact() {
        let v = Volume::from_fn([5, 4, 3], "r", |x, y, z| (x * y + z) as f32 / 20.0).unwrap();
        assert_eq!(resize_volume(&v, [5, 4, 3]).unwrap(), v);
    }

    #[test]
    fn constant_stays_constant() {
        let v = Volume::filled([7, 5, 3], 0.37, "c").unwrap();
        for target in [[3, 3, 3], [14, 10, 6], [1, 1, 1], [9, 2, 5]] {
            let r = resize_volume(&v, target).unwrap();
            assert!(r.data().iter().all(|&x| x == 0.37), "{target:?}");
        }
    }

    #[test]
    fn linear_ramp_matches_oracle() {
        let v = Volume::from_fn([12, 9, 6], "ramp", |x, y, z| {
            (0.05 * x as f64 + 0.02 * y as f64 + 0.1 * z as f64) as f32
        })
        .unwrap();
        let target = [17, 5, 11];
        let r = resize_volume(&v, target).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (x, y, z) = (
                rng.random_range(0..target[0]),
                rng.random_range(0..target[1]),
                rng.random_range(0..target[2]),
            );
            let got = f64::from(r.get(x, y, z));
            assert!((got - oracle(&v, target, x, y, z)).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_target_rejected() {
        let v = Volume::filled([2, 2, 2], 0.0, "z").unwrap();
        assert!(resize_volume(&v, [0, 2, 2]).is_err());
    }

    proptest! {
        #[test]
        fn no_overshoot(
            seed in any::<u64>(),
            src in (1usize..9, 1usize..9, 1usize..9),
            dst in (1usize..12, 1usize..12, 1usize..12),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = [src.0, src.1, src.2];
            let v = Volume::from_fn(shape, "p", |_, _, _| rng.random::<f32>()).unwrap();
            let (lo, hi) = v.min_max();
            let r = resize_volume(&v, [dst.0, dst.1, dst.2]).unwrap();
            let (rlo, rhi) = r.min_max();
            prop_assert!(rlo >= lo && rhi <= hi);
        }
    }
}
