//! Synthetic "abdomen" phantoms.
//!
//! Every sample shares the same organ ordering and nominal centres; only a
//! bounded per-sample jitter and additive noise differ. This gives a dataset
//! whose anatomy sits at consistent relative positions across scans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Shape3, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("phantom shape {0:?} must be at least 8 voxels per axis")]
    ShapeTooSmall(Shape3),
    #[error("organ {index}: centre {center:?} +/- jitter {jitter} leaves the unit cube")]
    OrganOutOfCube {
        index: usize,
        center: [f64; 3],
        jitter: f64,
    },
    #[error("phantom spec lists {num_organs} organs but {field} has {len} entries")]
    CountMismatch {
        num_organs: usize,
        field: &'static str,
        len: usize,
    },
    #[error("invalid phantom parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub num_organs: usize,
    /// Fractional (x, y, z) centres in [0, 1]^3, shared by all samples.
    pub organ_centers: Vec<[f64; 3]>,
    /// Fractional radii, measured per axis relative to the volume extent.
    pub organ_radii: Vec<f64>,
    /// Peak intensity per organ before normalization; defaults to an evenly
    /// spaced ramp so that organs are distinguishable.
    #[serde(default)]
    pub organ_intensities: Option<Vec<f64>>,
    /// Maximum fractional displacement of each centre per axis, per sample.
    pub jitter: f64,
    pub noise_level: f64,
    /// Width of the sigmoid edge, as a fraction of the volume extent.
    #[serde(default = "default_edge")]
    pub edge_softness: f64,
    pub seed: u64,
}

fn default_edge() -> f64 {
    0.02
}

impl PhantomSpec {
    /// The default eight-structure layout used by the toy experiments: a body
    /// outline with seven inner organs of distinct brightness.
    pub fn toy() -> Self {
        let organs: [([f64; 3], f64, f64); 8] = [
            ([0.50, 0.50, 0.50], 0.46, 0.20),
            ([0.30, 0.35, 0.50], 0.17, 0.75),
            ([0.76, 0.32, 0.50], 0.09, 0.60),
            ([0.30, 0.72, 0.50], 0.07, 0.85),
            ([0.70, 0.72, 0.50], 0.07, 0.95),
            ([0.50, 0.62, 0.50], 0.04, 1.00),
            ([0.60, 0.40, 0.50], 0.10, 0.45),
            ([0.50, 0.85, 0.50], 0.06, 0.55),
        ];
        Self {
            num_organs: organs.len(),
            organ_centers: organs.iter().map(|o| o.0).collect(),
            organ_radii: organs.iter().map(|o| o.1).collect(),
            organ_intensities: Some(organs.iter().map(|o| o.2).collect()),
            jitter: 0.03,
            noise_level: 0.03,
            edge_softness: default_edge(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let check_len = |field: &'static str, len: usize| {
            if len != self.num_organs {
                Err(PhantomError::CountMismatch {
                    num_organs: self.num_organs,
                    field,
                    len,
                })
            } else {
                Ok(())
            }
        };
        check_len("organ_centers", self.organ_centers.len())?;
        check_len("organ_radii", self.organ_radii.len())?;
        if let Some(i) = &self.organ_intensities {
            check_len("organ_intensities", i.len())?;
        }
        if !(self.jitter >= 0.0) || !(self.noise_level >= 0.0) || !(self.edge_softness > 0.0) {
            return Err(PhantomError::Invalid(format!(
                "jitter {}, noise_level {}, edge_softness {} (need >= 0, >= 0, > 0)",
                self.jitter, self.noise_level, self.edge_softness
            )));
        }
        if let Some(r) = self.organ_radii.iter().position(|r| !(*r > 0.0)) {
            return Err(PhantomError::Invalid(format!("organ {r}: radius must be > 0")));
        }
        for (index, c) in self.organ_centers.iter().enumerate() {
            let inside = c
                .iter()
                .all(|&x| x - self.jitter >= 0.0 && x + self.jitter <= 1.0);
            if !inside {
                return Err(PhantomError::OrganOutOfCube {
                    index,
                    center: *c,
                    jitter: self.jitter,
                });
            }
        }
        Ok(())
    }

    fn intensity(&self, organ: usize) -> f64 {
        match &self.organ_intensities {
            Some(v) => v[organ],
            None => (organ + 1) as f64 / self.num_organs as f64,
        }
    }

    fn sample_rng(&self, sample_seed: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&sample_seed.to_le_bytes());
        key[16..24].copy_from_slice(b"phantom\0");
        ChaCha8Rng::from_seed(key)
    }

    /// Centres after this sample's jitter, in organ order.
    /// Id of the phantom generated for `sample_seed`.
    pub fn sample_id(&self, sample_seed: u64) -> String {
        format!("phantom-{}-{}", self.seed, sample_seed)
    }

    pub fn jittered_centers(&self, sample_seed: u64) -> Vec<[f64; 3]> {
        let mut rng = self.sample_rng(sample_seed);
        self.jitter_with(&mut rng)
    }

    fn jitter_with(&self, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        self.organ_centers
            .iter()
            .map(|c| {
                std::array::from_fn(|a| {
                    if self.jitter > 0.0 {
                        c[a] + rng.random_range(-self.jitter..=self.jitter)
                    } else {
                        c[a]
                    }
                })
            })
            .collect()
    }
}

/// Renders one phantom sample. Pure in `(spec, sample_seed, shape)`.
pub fn generate_phantom(
    spec: &PhantomSpec,
    sample_seed: u64,
    shape: Shape3,
) -> Result<Volume, PhantomError> {
    if shape.iter().any(|&d| d < 8) {
        return Err(PhantomError::ShapeTooSmall(shape));
    }
    spec.validate()?;
    let mut rng = spec.sample_rng(sample_seed);
    let centers = spec.jitter_with(&mut rng);
    let noise = Normal::new(0.0, spec.noise_level).map_err(|e| PhantomError::Invalid(e.to_string()))?;

    let frac = |i: usize, a: usize| (i as f64 + 0.5) / shape[a] as f64;
    let volume = Volume::from_fn(shape, spec.sample_id(sample_seed), |x, y, z| {
        let p = [frac(x, 0), frac(y, 1), frac(z, 2)];
        let mut value = 0.0f64;
        for (k, c) in centers.iter().enumerate() {
            let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
            let edge = 1.0 / (1.0 + ((r - spec.organ_radii[k]) / spec.edge_softness).exp());
            value = value.max(spec.intensity(k) * edge);
        }
        if spec.noise_level > 0.0 {
            value += noise.sample(&mut rng);
        }
        value as f32
    })?;
    let mut volume = volume;
    volume.normalize_unit();
    Ok(volume)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_center() -> PhantomSpec {
        PhantomSpec {
            num_organs: 1,
            organ_centers: vec![[0.5, 0.5, 0.5]],
            organ_radii: vec![0.2],
            organ_intensities: None,
            jitter: 0.0,
            noise_level: 0.0,
            edge_softness: 0.05,
            seed: 7,
        }
    }

    #[test]
    fn noiseless_center_organ_peaks_at_center_voxel() {
        let v = generate_phantom(&single_center(), 0, [9, 11, 13]).unwrap();
        let argmax = v
            .data()
            .iter()
            .enumerate()
            .fold((0, f32::MIN), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
            .0;
        assert_eq!(argmax, v.index(4, 5, 6));
    }

    #[test]
    fn deterministic_and_normalized() {
        let spec = PhantomSpec::toy();
        let a = generate_phantom(&spec, 3, [16, 16, 8]).unwrap();
        let b = generate_phantom(&spec, 3, [16, 16, 8]).unwrap();
        assert_eq!(a.data(), b.data());
        let c = generate_phantom(&spec, 4, [16, 16, 8]).unwrap();
        assert_ne!(a.data(), c.data());
        let (lo, hi) = a.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn out_of_cube_organ_is_named() {
        let mut spec = PhantomSpec::toy();
        spec.organ_centers[3] = [0.99, 0.5, 0.5];
        match generate_phantom(&spec, 0, [8, 8, 8]) {
            Err(PhantomError::OrganOutOfCube { index, .. }) => assert_eq!(index, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn small_shapes_rejected() {
        assert!(matches!(
            generate_phantom(&PhantomSpec::toy(), 0, [8, 7, 8]),
            Err(PhantomError::ShapeTooSmall(_))
        ));
    }

    #[test]
    fn jitter_is_bounded_and_centred() {
        // Monte Carlo: 100 samples; each jittered centre lies within the
        // jitter box and the mean centre sits well inside it.
        let mut spec = PhantomSpec::toy();
        spec.organ_centers.truncate(4);
        spec.organ_radii.truncate(4);
        spec.organ_intensities = None;
        spec.num_organs = 4;
        let mut sums = [[0.0f64; 3]; 4];
        for s in 0..100 {
            for (k, c) in spec.jittered_centers(s).iter().enumerate() {
                for a in 0..3 {
                    assert!((c[a] - spec.organ_centers[k][a]).abs() <= spec.jitter);
                    sums[k][a] += c[a];
                }
            }
        }
        for (k, sum) in sums.iter().enumerate() {
            for a in 0..3 {
                let mean = sum[a] / 100.0;
                // uniform jitter: std of mean = jitter / sqrt(3 * 100)
                let tol = 4.0 * spec.jitter / 300f64.sqrt();
                assert!((mean - spec.organ_centers[k][a]).abs() < tol);
            }
        }
    }
}
