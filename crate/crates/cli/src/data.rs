use std::fs;
use std::path::Path;

use lgseg_harness::{synth_seg_dataset, Mask, SynthSegSample, IGNORE_INDEX};
use lgseg_tensor::Tensor;

use crate::config::DataSource;
use crate::error::CliError;
use crate::netpbm;

pub fn load_corpus(source: &DataSource, num_classes: usize) -> Result<Vec<SynthSegSample>, CliError> {
    match source {
        DataSource::Synth {
            count,
            height,
            width,
            seed,
        } => Ok(synth_seg_dataset(*count, *height, *width, num_classes, *seed)?),
        DataSource::Directory(dir) => load_dir(dir, num_classes),
    }
}

/// Every `NAME.ppm` in `dir` (sorted by name) paired with `NAME.pgm`, whose
/// gray values are class ids (255 = ignore).
fn load_dir(dir: &Path, num_classes: usize) -> Result<Vec<SynthSegSample>, CliError> {
    let bad = |m: String| CliError::Data(m);
    let mut images: Vec<_> = fs::read_dir(dir)
        .map_err(|e| bad(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(bad(format!("{}: no .ppm images", dir.display())));
    }
    images
        .iter()
        .enumerate()
        .map(|(index, path)| {
            let read = |p: &Path| {
                fs::read(p)
                    .map_err(|e| bad(format!("{}: {e}", p.display())))
                    .and_then(|b| netpbm::decode(&b))
            };
            let img = read(path)?;
            let mask_path = path.with_extension("pgm");
            let mask = read(&mask_path)?;
            if img.channels != 3 || mask.channels != 1 || (img.width, img.height) != (mask.width, mask.height) {
                return Err(bad(format!(
                    "{}: expected an RGB image and a same-size grayscale mask",
                    path.display()
                )));
            }
            if let Some(&l) = mask
                .pixels
                .iter()
                .find(|&&l| l != IGNORE_INDEX && l as usize >= num_classes)
            {
                return Err(bad(format!(
                    "{}: label {l} >= {num_classes} classes",
                    mask_path.display()
                )));
            }
            let data = img.pixels.iter().map(|&v| v as f32 / 255.0).collect();
            Ok(SynthSegSample {
                image: Tensor::from_vec(&[img.height, img.width, 3], data)?,
                mask: Mask::new(img.height, img.width, mask.pixels)?,
                seed: 0,
                index,
            })
        })
        .collect()
}
