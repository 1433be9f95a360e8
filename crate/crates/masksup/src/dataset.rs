//! Image/mask directories.
//!
//! ```text
//! root/images/<stem>.png|jpg|jpeg
//! root/masks/<stem>.png
//! root/splits/{train,val,test}.txt   (optional, one stem per line)
//! ```
//!
//! Without split files the stems are split 70/15/15 by
//! [`split_by_stem_hash`](masksup_core::data::split_by_stem_hash).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use masksup_core::data::{split_by_stem_hash, DatasetSplit, Sample};
use masksup_core::tensor::Label;

use crate::error::{Error, Result};
use crate::imageio::{load_labels, load_rgb, save_labels, save_rgb};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
const SPLITS: [&str; 3] = ["train", "val", "test"];

fn files_by_stem(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        let path = entry.map_err(Error::io(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        let stem = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned);
        if let (Some(ext), Some(stem)) = (ext, stem) {
            if extensions.contains(&ext.as_str()) {
                out.insert(stem, path);
            }
        }
    }
    Ok(out)
}

fn read_split_files(root: &Path) -> Result<Option<[Vec<String>; 3]>> {
    let dir = root.join("splits");
    let paths = SPLITS.map(|s| dir.join(format!("{s}.txt")));
    if !paths.iter().any(|p| p.is_file()) {
        return Ok(None);
    }
    let mut out: [Vec<String>; 3] = Default::default();
    for (slot, path) in out.iter_mut().zip(&paths) {
        if path.is_file() {
            let text = fs::read_to_string(path).map_err(Error::io(path))?;
            *slot = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect();
        }
    }
    Ok(Some(out))
}

/// Loads a stem-matched image/mask directory. Mask gray levels are class
/// indices; `ignore_label` (typically 255) is excluded from training and
/// scoring.
pub fn load_image_mask_dir(root: &Path, num_classes: usize, ignore_label: Option<Label>) -> Result<DatasetSplit> {
    let images = files_by_stem(&root.join("images"), &IMAGE_EXTENSIONS)?;
    let masks = files_by_stem(&root.join("masks"), &["png"])?;
    if let Some(stem) = images.keys().find(|s| !masks.contains_key(*s)) {
        return Err(Error::MissingPair { stem: stem.clone(), missing: "mask" });
    }
    if let Some(stem) = masks.keys().find(|s| !images.contains_key(*s)) {
        return Err(Error::MissingPair { stem: stem.clone(), missing: "image" });
    }
    if images.is_empty() {
        return Err(masksup_core::Error::EmptyDataset.into());
    }
    let [train, val, test] = match read_split_files(root)? {
        Some(lists) => lists,
        None => {
            let stems: Vec<String> = images.keys().cloned().collect();
            let (a, b, c) = split_by_stem_hash(&stems);
            [a, b, c]
        }
    };
    let load = |stems: Vec<String>| -> Result<Vec<Sample>> {
        stems
            .into_iter()
            .map(|stem| {
                let (Some(img), Some(mask)) = (images.get(&stem), masks.get(&stem)) else {
                    return Err(Error::MissingPair { stem, missing: "image or mask" });
                };
                let image = load_rgb(img)?;
                let label = load_labels(mask)?;
                Ok(Sample { image, label, id: stem, layout: None })
            })
            .collect()
    };
    Ok(DatasetSplit::new(load(train)?, load(val)?, load(test)?, num_classes, ignore_label)?)
}

/// Writes a dataset in the layout read by [`load_image_mask_dir`], with split
/// files preserving the given partition.
pub fn write_image_mask_dir(data: &DatasetSplit, root: &Path) -> Result<()> {
    for sub in ["images", "masks", "splits"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    }
    for (name, samples) in SPLITS.iter().zip([&data.train, &data.val, &data.test]) {
        for s in samples {
            save_rgb(&s.image, &root.join("images").join(format!("{}.png", s.id)))?;
            save_labels(&s.label, &root.join("masks").join(format!("{}.png", s.id)))?;
        }
        let list: String = samples.iter().map(|s| format!("{}\n", s.id)).collect();
        let path = root.join("splits").join(format!("{name}.txt"));
        fs::write(&path, list).map_err(Error::io(&path))?;
    }
    Ok(())
}
