//! Geometry of the pretext task: base-grid tiling, random crops and the
//! overlap-proportion position labels.
//!
//! Cells are enumerated x-fastest, then y, then z (0-based internally;
//! human-facing reports add 1).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{resize_volume, Shape3, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("grid counts must be >= 1, got {0:?}")]
    ZeroGrid(Shape3),
    #[error("volume {axis} extent {extent} is not divisible by {count} grid cells")]
    Indivisible {
        axis: char,
        extent: usize,
        count: usize,
    },
    #[error("crop size {size:?} exceeds volume shape {shape:?} on the {axis} axis")]
    CropTooLarge {
        size: Shape3,
        shape: Shape3,
        axis: char,
    },
    #[error("crop size must be >= 1 per axis, got {0:?}")]
    EmptyCrop(Shape3),
    #[error("crop {crop:?} is not inside the tiled region {shape:?}")]
    OutsideGrid { crop: CropRegion, shape: Shape3 },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

const AXES: [char; 3] = ['x', 'y', 'z'];

/// Axis-aligned box `[origin, origin + size)` in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRegion {
    pub origin: Shape3,
    pub size: Shape3,
}

impl CropRegion {
    pub fn new(origin: Shape3, size: Shape3) -> Result<Self, GeometryError> {
        if size.contains(&0) {
            return Err(GeometryError::EmptyCrop(size));
        }
        Ok(Self { origin, size })
    }

    pub fn end(&self) -> Shape3 {
        std::array::from_fn(|a| self.origin[a] + self.size[a])
    }

    pub fn voxel_count(&self) -> u64 {
        self.size.iter().map(|&s| s as u64).product()
    }

    pub fn fits_in(&self, shape: Shape3) -> bool {
        (0..3).all(|a| self.size[a] >= 1 && self.origin[a] + self.size[a] <= shape[a])
    }

    pub fn contains(&self, p: Shape3) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] < self.origin[a] + self.size[a])
    }

    /// Number of voxels shared with `other`.
    pub fn overlap(&self, other: &CropRegion) -> u64 {
        let (a_end, b_end) = (self.end(), other.end());
        (0..3)
            .map(|a| {
                let lo = self.origin[a].max(other.origin[a]);
                let hi = a_end[a].min(b_end[a]);
                hi.saturating_sub(lo) as u64
            })
            .product()
    }

    pub fn translated(&self, offset: [isize; 3]) -> Option<CropRegion> {
        let mut origin = self.origin;
        for a in 0..3 {
            origin[a] = self.origin[a].checked_add_signed(offset[a])?;
        }
        Some(CropRegion { origin, size: self.size })
    }

    /// Region occupied by this box after mirroring a volume of `shape` along `axis`.
    pub fn flipped(&self, axis: usize, shape: Shape3) -> CropRegion {
        let mut r = *self;
        r.origin[axis] = shape[axis] - self.origin[axis] - self.size[axis];
        r
    }

    /// Region after one quarter turn about z of a volume of `shape`
    /// (voxel (x, y) goes to (shape_y - 1 - y, x)).
    pub fn rotated_z(&self, shape: Shape3) -> CropRegion {
        CropRegion {
            origin: [
                shape[1] - self.origin[1] - self.size[1],
                self.origin[0],
                self.origin[2],
            ],
            size: [self.size[1], self.size[0], self.size[2]],
        }
    }
}

/// `n = gx * gy * gz` equal cells tiling a volume without overlap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseGrid {
    grid: Shape3,
    volume_shape: Shape3,
    cell_size: Shape3,
    cells: Vec<CropRegion>,
}

impl BaseGrid {
    pub fn grid(&self) -> Shape3 {
        self.grid
    }

    pub fn volume_shape(&self) -> Shape3 {
        self.volume_shape
    }

    pub fn cell_size(&self) -> Shape3 {
        self.cell_size
    }

    pub fn cells(&self) -> &[CropRegion] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_index(&self, cx: usize, cy: usize, cz: usize) -> usize {
        cx + self.grid[0] * (cy + self.grid[1] * cz)
    }

    pub fn cell_coords(&self, index: usize) -> Shape3 {
        [
            index % self.grid[0],
            (index / self.grid[0]) % self.grid[1],
            index / (self.grid[0] * self.grid[1]),
        ]
    }

    /// Index of the cell holding voxel `p`.
    pub fn cell_of_voxel(&self, p: Shape3) -> usize {
        self.cell_index(
            p[0] / self.cell_size[0],
            p[1] / self.cell_size[1],
            p[2] / self.cell_size[2],
        )
    }

    /// `perm[i]` is the index cell `i` moves to when the volume is mirrored along `axis`.
    pub fn flip_permutation(&self, axis: usize) -> Vec<usize> {
        (0..self.len())
            .map(|i| {
                let mut c = self.cell_coords(i);
                c[axis] = self.grid[axis] - 1 - c[axis];
                self.cell_index(c[0], c[1], c[2])
            })
            .collect()
    }

    /// Grid after a quarter turn about z, and the matching cell permutation.
    pub fn rotated_z(&self) -> (BaseGrid, Vec<usize>) {
        let [sx, sy, sz] = self.volume_shape;
        let rotated = make_base_grid([sy, sx, sz], [self.grid[1], self.grid[0], self.grid[2]])
            .expect("rotated grid stays divisible");
        let perm = (0..self.len())
            .map(|i| {
                let [cx, cy, cz] = self.cell_coords(i);
                rotated.cell_index(self.grid[1] - 1 - cy, cx, cz)
            })
            .collect();
        (rotated, perm)
    }
}

/// Overlap proportions between one crop and every cell of a [`BaseGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionLabel(Vec<f64>);

impl PositionLabel {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest proportion; ties resolve to the lowest index.
    /// Wraps raw proportions without checking them.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Cells with a nonzero share, as `(index, proportion)`.
    pub fn support(&self) -> Vec<(usize, f64)> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, &v)| (i, v))
            .collect()
    }

    /// Relabels cells: entry `i` moves to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> PositionLabel {
        let mut out = vec![0.0; self.0.len()];
        for (i, &v) in self.0.iter().enumerate() {
            out[perm[i]] = v;
        }
        PositionLabel(out)
    }

    pub fn to_csv_row(&self) -> String {
        self.0
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn make_base_grid(volume_shape: Shape3, grid: Shape3) -> Result<BaseGrid, GeometryError> {
    if grid.contains(&0) {
        return Err(GeometryError::ZeroGrid(grid));
    }
    for a in 0..3 {
        if !volume_shape[a].is_multiple_of(grid[a]) {
            return Err(GeometryError::Indivisible {
                axis: AXES[a],
                extent: volume_shape[a],
                count: grid[a],
            });
        }
    }
    let cell_size: Shape3 = std::array::from_fn(|a| volume_shape[a] / grid[a]);
    let mut cells = Vec::with_capacity(grid.iter().product());
    for cz in 0..grid[2] {
        for cy in 0..grid[1] {
            for cx in 0..grid[0] {
                cells.push(CropRegion {
                    origin: [cx * cell_size[0], cy * cell_size[1], cz * cell_size[2]],
                    size: cell_size,
                });
            }
        }
    }
    Ok(BaseGrid {
        grid,
        volume_shape,
        cell_size,
        cells,
    })
}

/// Uniform origin over every position that keeps the crop inside the volume.
pub fn sample_random_crop<R: Rng + ?Sized>(
    volume_shape: Shape3,
    crop_size: Shape3,
    rng: &mut R,
) -> Result<CropRegion, GeometryError> {
    if crop_size.contains(&0) {
        return Err(GeometryError::EmptyCrop(crop_size));
    }
    if let Some(a) = (0..3).find(|&a| crop_size[a] > volume_shape[a]) {
        return Err(GeometryError::CropTooLarge {
            size: crop_size,
            shape: volume_shape,
            axis: AXES[a],
        });
    }
    let origin = std::array::from_fn(|a| rng.random_range(0..=volume_shape[a] - crop_size[a]));
    Ok(CropRegion {
        origin,
        size: crop_size,
    })
}

/// `y_i = |crop ∩ cell_i| / |crop|`, evaluated as a product of per-axis overlaps.
pub fn position_label(crop: &CropRegion, grid: &BaseGrid) -> Result<PositionLabel, GeometryError> {
    if !crop.fits_in(grid.volume_shape) {
        return Err(GeometryError::OutsideGrid {
            crop: *crop,
            shape: grid.volume_shape,
        });
    }
    let total = crop.voxel_count() as f64;
    Ok(PositionLabel(
        grid.cells
            .iter()
            .map(|cell| crop.overlap(cell) as f64 / total)
            .collect(),
    ))
}

/// Extracts `region` and resamples it to `out_shape`.
pub fn crop_and_resize(
    v: &Volume,
    region: &CropRegion,
    out_shape: Shape3,
) -> Result<Volume, GeometryError> {
    let block = v.sub_block(region.origin, region.size)?;
    Ok(resize_volume(&block, out_shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn voxel_count_label(crop: &CropRegion, grid: &BaseGrid) -> Vec<f64> {
        let mut counts = vec![0u64; grid.len()];
        let e = crop.end();
        for z in crop.origin[2]..e[2] {
            for y in crop.origin[1]..e[1] {
                for x in crop.origin[0]..e[0] {
                    counts[grid.cell_of_voxel([x, y, z])] += 1;
                }
            }
        }
        counts
            .iter()
            .map(|&c| c as f64 / crop.voxel_count() as f64)
            .collect()
    }

    #[test]
    fn grid_cell_offsets() {
        let g = make_base_grid([384, 384, 64], [4, 4, 1]).unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g.cell_size(), [96, 96, 64]);
        assert_eq!(g.cells()[0].origin, [0, 0, 0]);
        assert_eq!(g.cells()[5].origin, [96, 96, 0]);
    }

    #[test]
    fn identity_tiling() {
        let g = make_base_grid([8, 8, 8], [1, 1, 1]).unwrap();
        assert_eq!(g.cells(), &[CropRegion { origin: [0; 3], size: [8; 3] }]);
    }

    #[test]
    fn indivisible_names_axis() {
        let err = make_base_grid([96, 90, 16], [4, 4, 1]).unwrap_err();
        assert!(matches!(err, GeometryError::Indivisible { axis: 'y', .. }));
        assert!(err.to_string().contains("y"));
    }

    #[test]
    fn every_voxel_in_exactly_one_cell() {
        for (shape, grid) in [
            ([32, 32, 32], [4, 4, 2]),
            ([12, 9, 6], [3, 3, 1]),
            ([8, 8, 8], [2, 2, 2]),
            ([30, 20, 10], [5, 4, 2]),
        ] {
            let g = make_base_grid(shape, grid).unwrap();
            for z in 0..shape[2] {
                for y in 0..shape[1] {
                    for x in 0..shape[0] {
                        let n = g.cells().iter().filter(|c| c.contains([x, y, z])).count();
                        assert_eq!(n, 1);
                    }
                }
            }
        }
    }

    #[test]
    fn full_size_crop_has_single_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = sample_random_crop([10, 7, 3], [10, 7, 3], &mut rng).unwrap();
        assert_eq!(c.origin, [0, 0, 0]);
        assert!(matches!(
            sample_random_crop([10, 7, 3], [11, 7, 3], &mut rng),
            Err(GeometryError::CropTooLarge { axis: 'x', .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = a.clone();
        assert_eq!(
            sample_random_crop([100, 100, 10], [50, 50, 5], &mut a).unwrap(),
            sample_random_crop([100, 100, 10], [50, 50, 5], &mut b).unwrap()
        );
    }

    #[test]
    fn aligned_crop_is_one_hot() {
        let g = make_base_grid([96, 96, 16], [4, 4, 1]).unwrap();
        for k in [0, 7, 15] {
            let y = position_label(&g.cells()[k], &g).unwrap();
            for (i, &v) in y.values().iter().enumerate() {
                assert_eq!(v, if i == k { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn outside_crop_rejected() {
        let g = make_base_grid([8, 8, 8], [2, 2, 2]).unwrap();
        let c = CropRegion::new([5, 0, 0], [4, 4, 4]).unwrap();
        assert!(matches!(position_label(&c, &g), Err(GeometryError::OutsideGrid { .. })));
    }

    #[test]
    fn crop_and_resize_identity_and_constant() {
        let v = Volume::from_fn([6, 6, 4], "v", |x, y, z| (x + y + z) as f32 / 14.0).unwrap();
        let whole = CropRegion::new([0; 3], [6, 6, 4]).unwrap();
        assert_eq!(crop_and_resize(&v, &whole, [6, 6, 4]).unwrap(), v);
        let c = Volume::from_fn([6, 6, 4], "c", |x, _, _| if x < 3 { 0.25 } else { 0.9 }).unwrap();
        let left = CropRegion::new([0, 1, 0], [3, 4, 4]).unwrap();
        let r = crop_and_resize(&c, &left, [5, 7, 2]).unwrap();
        assert!(r.data().iter().all(|&x| x == 0.25));
    }

    #[test]
    fn augmentation_commutes_with_labels() {
        let shape = [48, 48, 8];
        let g = make_base_grid(shape, [4, 4, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let crop = sample_random_crop(shape, [12, 12, 8], &mut rng).unwrap();
            let y = position_label(&crop, &g).unwrap();
            for axis in 0..2 {
                let flipped = position_label(&crop.flipped(axis, shape), &g).unwrap();
                assert_eq!(flipped, y.permuted(&g.flip_permutation(axis)));
            }
            let (rg, perm) = g.rotated_z();
            let rotated = position_label(&crop.rotated_z(shape), &rg).unwrap();
            assert_eq!(rotated, y.permuted(&perm));
        }
    }

    #[test]
    fn region_transforms_track_voxels() {
        let shape = [6, 4, 3];
        let v = Volume::from_fn(shape, "v", |x, y, z| (x + 10 * y + 100 * z) as f32).unwrap();
        let r = CropRegion::new([1, 0, 1], [2, 3, 2]).unwrap();
        let block = v.sub_block(r.origin, r.size).unwrap();
        let rot = v.rotated_z(1);
        let rr = r.rotated_z(shape);
        assert_eq!(rot.sub_block(rr.origin, rr.size).unwrap().data(), block.rotated_z(1).data());
        let fl = v.flipped(0);
        let fr = r.flipped(0, shape);
        assert_eq!(fl.sub_block(fr.origin, fr.size).unwrap().data(), block.flipped(0).data());
    }

    proptest! {
        #[test]
        fn label_is_a_distribution_matching_voxel_counts(
            gx in 1usize..5, gy in 1usize..5, gz in 1usize..3,
            cx in 1usize..8, cy in 1usize..8, cz in 1usize..5,
            seed in any::<u64>(),
        ) {
            let shape = [gx * cx, gy * cy, gz * cz];
            let g = make_base_grid(shape, [gx, gy, gz]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let size = std::array::from_fn(|a| rng.random_range(1..=shape[a]));
            let crop = sample_random_crop(shape, size, &mut rng).unwrap();
            let y = position_label(&crop, &g).unwrap();
            let sum: f64 = y.values().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(y.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
            for (a, b) in y.values().iter().zip(voxel_count_label(&crop, &g)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn crop_within_cell_size_touches_at_most_four_cells(
            gx in 1usize..6, gy in 1usize..6, cell in 2usize..10, seed in any::<u64>(),
        ) {
            let shape = [gx * cell, gy * cell, 4];
            let g = make_base_grid(shape, [gx, gy, 1]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let size = [rng.random_range(1..=cell), rng.random_range(1..=cell), rng.random_range(1..=4)];
            let crop = sample_random_crop(shape, size, &mut rng).unwrap();
            prop_assert!(position_label(&crop, &g).unwrap().support().len() <= 4);
        }

        #[test]
        fn translating_by_a_cell_shifts_the_label(
            gx in 2usize..5, gy in 1usize..4, cell in 2usize..8, seed in any::<u64>(),
        ) {
            let shape = [gx * cell, gy * cell, 2];
            let g = make_base_grid(shape, [gx, gy, 1]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // crop confined to the first gx-1 columns so the shifted crop stays inside
            let size = [rng.random_range(1..=cell), rng.random_range(1..=cell), 2];
            let crop = sample_random_crop([shape[0] - cell, shape[1], 2], size, &mut rng).unwrap();
            let moved = crop.translated([cell as isize, 0, 0]).unwrap();
            let y = position_label(&crop, &g).unwrap();
            let ym = position_label(&moved, &g).unwrap();
            for i in 0..g.len() {
                let [cx, cy, cz] = g.cell_coords(i);
                let shifted = if cx + 1 < gx { ym.values()[g.cell_index(cx + 1, cy, cz)] } else { 0.0 };
                prop_assert_eq!(y.values()[i], shifted);
            }
        }
    }
}
