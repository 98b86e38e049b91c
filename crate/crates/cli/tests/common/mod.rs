#![allow(dead_code)]

use std::path::Path;

use lgseg_cli::checkpoint::Checkpoint;
use lgseg_cli::ModelSpec;
use lgseg_models::SegModel;
use lgseg_tensor::{ParamBuilder, ParamStore, Tensor};

/// Model sections for every named variant.
pub const NAMED: &[&str] = &[
    "name = setr-naive\nbackbone = t-base",
    "name = setr-pup\nbackbone = t-base",
    "name = setr-mla\nbackbone = t-base",
    "name = setr-naive\nbackbone = t-large",
    "name = setr-pup\nbackbone = t-large",
    "name = setr-mla\nbackbone = t-large",
    "name = hlg-mobile",
    "name = hlg-tiny",
    "name = hlg-small",
    "name = hlg-medium",
    "name = hlg-large",
];

pub fn spec(model_section: &str) -> ModelSpec {
    ModelSpec::from_canonical(model_section).expect("valid model section")
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Arbitrary finite bit patterns, including subnormals and negative zero.
pub fn pattern(entry: usize, i: usize) -> f32 {
    let mut bits = splitmix(((entry as u64) << 40) ^ i as u64) as u32;
    if (bits >> 23) & 0xff == 0xff {
        bits &= !(1 << 23);
    }
    f32::from_bits(bits)
}

/// Saves a pattern-filled store of the named model, reloads it and compares
/// every entry bit for bit. Returns the number of scalars checked.
pub fn roundtrip_named(model_section: &str, dir: &Path) -> Result<usize, String> {
    let spec = spec(model_section);
    let mut b = ParamBuilder::<f32>::zero_filled();
    SegModel::new(&mut b, &spec.seg).map_err(|e| e.to_string())?;
    let mut store: ParamStore<f32> = b.finish();
    let mut layout = Vec::new();
    for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let shape = store.get(id).shape().to_vec();
        let n: usize = shape.iter().product();
        let t = Tensor::from_vec(&shape, (0..n).map(|i| pattern(k, i)).collect()).map_err(|e| e.to_string())?;
        store.set(id, t).map_err(|e| e.to_string())?;
        layout.push((store.entry(id).name.clone(), shape));
    }
    let path = dir.join(format!("{}.bin", spec.name));
    Checkpoint::save_training(&path, &spec.fingerprint(), &spec.canonical, &store, None).map_err(|e| e.to_string())?;
    drop(store);
    let ckpt = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    std::fs::remove_file(&path).map_err(|e| e.to_string())?;
    if ckpt.fingerprint != spec.fingerprint() || ckpt.manifest != spec.canonical {
        return Err(format!("{}: header changed", spec.name));
    }
    if ckpt.entries.len() != layout.len() {
        return Err(format!(
            "{}: {} entries, expected {}",
            spec.name,
            ckpt.entries.len(),
            layout.len()
        ));
    }
    let mut checked = 0;
    for (k, (e, (name, shape))) in ckpt.entries.iter().zip(&layout).enumerate() {
        if &e.name != name || &e.shape != shape {
            return Err(format!(
                "{}: entry {k} is {} {:?}, expected {name} {shape:?}",
                spec.name, e.name, e.shape
            ));
        }
        let t = e.to_tensor::<f32>().map_err(|e| e.to_string())?;
        if let Some(i) = (0..t.numel()).find(|&i| t.data()[i].to_bits() != pattern(k, i).to_bits()) {
            return Err(format!("{}: {name}[{i}] differs", spec.name));
        }
        checked += t.numel();
    }
    Ok(checked)
}
