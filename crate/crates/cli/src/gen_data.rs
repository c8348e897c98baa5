use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use voco::volume::{encode_volume, generate_phantom, write_volume, PhantomSpec};

use crate::failure::Failure;

#[derive(Serialize)]
struct DatasetEntry {
    id: String,
    sample_seed: u64,
    file: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct DatasetManifest {
    spec_sha256: String,
    spec: PhantomSpec,
    shape: [usize; 3],
    volumes: Vec<DatasetEntry>,
}

pub const DATASET_MANIFEST: &str = "dataset.json";

pub fn load_spec(path: &Path) -> Result<PhantomSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let spec: PhantomSpec = if path.extension().is_some_and(|x| x == "json") {
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?
    };
    spec.validate()
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    Ok(spec)
}

pub fn run(spec_path: &Path, count: usize, out: &Path, shape: [usize; 3], first_seed: u64) -> Result<(), Failure> {
    let spec = load_spec(spec_path)?;
    if shape.iter().any(|&d| d < 8) {
        return Err(Failure::Validation(format!("--shape {shape:?}: phantoms need >= 8 voxels per axis")));
    }
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let spec_sha256 = hex::encode(Sha256::digest(serde_json::to_vec(&spec).expect("spec serializes")));
    let mut volumes = Vec::with_capacity(count);
    for sample_seed in first_seed..first_seed + count as u64 {
        let v = generate_phantom(&spec, sample_seed, shape).map_err(Failure::runtime)?;
        let file = PathBuf::from(format!("{}.vol1", v.id()));
        write_volume(&v, out.join(&file)).map_err(Failure::runtime)?;
        volumes.push(DatasetEntry {
            id: v.id().to_string(),
            sample_seed,
            file,
            sha256: hex::encode(Sha256::digest(encode_volume(&v))),
        });
        eprintln!("wrote {}", v.id());
    }
    let manifest = DatasetManifest {
        spec_sha256,
        spec,
        shape,
        volumes,
    };
    let path = out.join(DATASET_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(|e| Failure::io(&path, e))?;
    println!("{}", path.display());
    Ok(())
}
