//! Volumetric intensity grids: container, on-disk format, resampling and a
//! synthetic phantom generator with a fixed organ layout.

mod format;
mod phantom;
mod resize;

pub use format::{decode_volume, encode_volume, read_volume, write_volume, VOL1_MAGIC};
pub use phantom::{generate_phantom, PhantomError, PhantomSpec};
pub use resize::resize_volume;

use thiserror::Error;

/// Voxel extents along x, y, z.
pub type Shape3 = [usize; 3];

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume dimensions must be >= 1, got {0:?}")]
    EmptyDimension(Shape3),
    #[error("data length {actual} does not match shape {shape:?} ({expected} voxels)")]
    LengthMismatch {
        shape: Shape3,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite intensity at voxel {0}")]
    NonFinite(usize),
    #[error("block at {origin:?} of size {size:?} exceeds volume shape {shape:?}")]
    BlockOutOfBounds {
        origin: Shape3,
        size: Shape3,
        shape: Shape3,
    },
    #[error("not a VOL1 file: bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("malformed VOL1 header: {0}")]
    MalformedHeader(String),
    #[error("VOL1 payload truncated: header declares {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("VOL1 dimension mismatch: header declares {declared} bytes of voxels, payload has {found}")]
    DimensionMismatch { declared: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A 3D scalar grid stored x-fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Vec<f32>,
    shape: Shape3,
    spacing: [f32; 3],
    id: String,
}

impl Volume {
    pub fn new(
        data: Vec<f32>,
        shape: Shape3,
        spacing: [f32; 3],
        id: impl Into<String>,
    ) -> Result<Self, VolumeError> {
        if shape.contains(&0) {
            return Err(VolumeError::EmptyDimension(shape));
        }
        let expected = shape[0] * shape[1] * shape[2];
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self {
            data,
            shape,
            spacing,
            id: id.into(),
        })
    }

    /// Constant-valued volume with unit spacing.
    pub fn filled(shape: Shape3, value: f32, id: impl Into<String>) -> Result<Self, VolumeError> {
        let len = shape.iter().product();
        Self::new(vec![value; len], shape, [1.0; 3], id)
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        shape: Shape3,
        id: impl Into<String>,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, VolumeError> {
        let mut data = Vec::with_capacity(shape.iter().product());
        for z in 0..shape[2] {
            for y in 0..shape[1] {
                for x in 0..shape[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(data, shape, [1.0; 3], id)
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Rescales intensities linearly onto [0, 1]. A constant volume maps to zeros.
    pub fn normalize_unit(&mut self) {
        let (lo, hi) = self.min_max();
        let range = f64::from(hi) - f64::from(lo);
        for v in &mut self.data {
            *v = if range > 0.0 {
                ((f64::from(*v) - f64::from(lo)) / range).clamp(0.0, 1.0) as f32
            } else {
                0.0
            };
        }
    }

    /// Copies the axis-aligned block `[origin, origin + size)`.
    pub fn sub_block(&self, origin: Shape3, size: Shape3) -> Result<Volume, VolumeError> {
        let in_bounds = (0..3).all(|a| size[a] >= 1 && origin[a] + size[a] <= self.shape[a]);
        if !in_bounds {
            return Err(VolumeError::BlockOutOfBounds {
                origin,
                size,
                shape: self.shape,
            });
        }
        let mut data = Vec::with_capacity(size.iter().product());
        for z in origin[2]..origin[2] + size[2] {
            for y in origin[1]..origin[1] + size[1] {
                let row = self.index(origin[0], y, z);
                data.extend_from_slice(&self.data[row..row + size[0]]);
            }
        }
        Volume::new(data, size, self.spacing, self.id.clone())
    }

    /// Mirrors the volume along `axis` (0 = x, 1 = y, 2 = z).
    pub fn flipped(&self, axis: usize) -> Volume {
        let [sx, sy, sz] = self.shape;
        let mut out = self.clone();
        for z in 0..sz {
            for y in 0..sy {
                for x in 0..sx {
                    let (mut fx, mut fy, mut fz) = (x, y, z);
                    match axis {
                        0 => fx = sx - 1 - x,
                        1 => fy = sy - 1 - y,
                        _ => fz = sz - 1 - z,
                    }
                    let dst = out.index(x, y, z);
                    out.data[dst] = self.get(fx, fy, fz);
                }
            }
        }
        out
    }

    /// Rotates the volume by `quarter_turns` x 90 degrees about the z axis,
    /// mapping voxel (x, y) to (sy - 1 - y, x) per turn.
    pub fn rotated_z(&self, quarter_turns: u8) -> Volume {
        let mut v = self.clone();
        for _ in 0..quarter_turns % 4 {
            let [sx, sy, sz] = v.shape;
            let mut data = vec![0.0; v.data.len()];
            // new shape is (sy, sx, sz)
            for z in 0..sz {
                for y in 0..sy {
                    for x in 0..sx {
                        let (nx, ny) = (sy - 1 - y, x);
                        data[nx + sy * (ny + sx * z)] = v.get(x, y, z);
                    }
                }
            }
            v = Volume {
                data,
                shape: [sy, sx, sz],
                spacing: [v.spacing[1], v.spacing[0], v.spacing[2]],
                id: v.id,
            };
        }
        v
    }
}
