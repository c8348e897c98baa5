use rand::SeedableRng;
use voco::geometry::{make_base_grid, position_label, sample_random_crop, CropRegion};

use crate::failure::Failure;

pub fn run(
    grid: [usize; 3],
    crop_size: [usize; 3],
    seed: u64,
    volume_shape: [usize; 3],
    origin: Option<[usize; 3]>,
) -> Result<(), Failure> {
    let invalid = |e: voco::GeometryError| Failure::Validation(e.to_string());
    let base = make_base_grid(volume_shape, grid).map_err(invalid)?;
    let crop = match origin {
        Some(o) => {
            let c = CropRegion::new(o, crop_size).map_err(invalid)?;
            if !c.fits_in(volume_shape) {
                return Err(Failure::Validation(format!(
                    "crop at {o:?} of size {crop_size:?} leaves the volume {volume_shape:?}"
                )));
            }
            c
        }
        None => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            sample_random_crop(volume_shape, crop_size, &mut rng).map_err(invalid)?
        }
    };
    let y = position_label(&crop, &base).map_err(invalid)?;
    let total: f64 = y.values().iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Failure::Runtime(format!("label sums to {total}, not 1")));
    }
    let [cx, cy, cz] = base.cell_size();
    let [ox, oy, oz] = crop.origin;
    let [sx, sy, sz] = crop.size;
    println!(
        "volume_shape={},{},{} grid={},{},{} cell={cx},{cy},{cz}",
        volume_shape[0], volume_shape[1], volume_shape[2], grid[0], grid[1], grid[2]
    );
    println!("crop origin={ox},{oy},{oz} size={sx},{sy},{sz}");
    println!("class,proportion");
    for (i, p) in y.support() {
        println!("{},{p}", i + 1);
    }
    Ok(())
}
