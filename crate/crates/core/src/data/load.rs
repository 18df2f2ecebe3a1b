use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, PrepOptions, SamplePair};
use crate::error::{FreaError, Result};
use crate::image_ops::read_image;

#[derive(Default)]
struct Pair {
    mr: Option<PathBuf>,
    pet: Option<PathBuf>,
}

/// Loads every `<subject>_mr.*` / `<subject>_pet.*` pair in `dir`,
/// centre-cropped to `opts.size`. Other files are ignored.
pub fn load_dataset(dir: impl AsRef<Path>, opts: &PrepOptions) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut pairs: BTreeMap<String, Pair> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| FreaError::io(dir, e))? {
        let path = entry.map_err(|e| FreaError::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let (subject, slot) = if let Some(s) = stem.strip_suffix("_mr") {
            (s, true)
        } else if let Some(s) = stem.strip_suffix("_pet") {
            (s, false)
        } else {
            continue;
        };
        let pair = pairs.entry(subject.to_string()).or_default();
        let target = if slot { &mut pair.mr } else { &mut pair.pet };
        if let Some(prev) = target {
            return Err(FreaError::Dataset(format!(
                "subject {subject}: both {} and {} present",
                prev.display(),
                path.display()
            )));
        }
        *target = Some(path);
    }
    if pairs.is_empty() {
        return Err(FreaError::Dataset(format!("no image pairs in {}", dir.display())));
    }
    let mut samples = Vec::with_capacity(pairs.len());
    for (subject, pair) in pairs {
        let (mr, pet) = match (pair.mr, pair.pet) {
            (Some(m), Some(p)) => (m, p),
            (m, _) => {
                let missing = if m.is_none() { "MR" } else { "PET" };
                return Err(FreaError::Dataset(format!("subject {subject}: missing {missing} image")));
            }
        };
        let (mr, pet) = (read_image(&mr)?, read_image(&pet)?);
        if (mr.height, mr.width, mr.channels) != (pet.height, pet.width, pet.channels) {
            return Err(FreaError::Dataset(format!(
                "subject {subject}: MR is {}x{} but PET is {}x{}",
                mr.height, mr.width, pet.height, pet.width
            )));
        }
        let crop = |img: &crate::image_ops::ImageFile| {
            img.center_crop(opts.size)
                .map_err(|e| FreaError::Dataset(format!("subject {subject}: {e}")))
        };
        samples.push(SamplePair::new(subject.clone(), crop(&mr)?, crop(&pet)?, opts)?);
    }
    Dataset::new(samples)
}
