use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::data::image_io::{load_image, save_image};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RAINY_DIR: &str = "rainy";
pub const CLEAN_DIR: &str = "clean";

/// A rainy image and its clean background, both `(1, 3, h, w)` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub rainy: Tensor<f32>,
    pub clean: Tensor<f32>,
}

impl PairedSample {
    pub fn new(id: impl Into<String>, rainy: Tensor<f32>, clean: Tensor<f32>) -> Result<Self> {
        let id = id.into();
        if rainy.shape() != clean.shape() {
            return Err(Error::Data(format!(
                "pair `{id}`: rainy {} and clean {} differ in shape",
                rainy.shape(),
                clean.shape()
            )));
        }
        let s = rainy.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::Data(format!(
                "pair `{id}`: expected (1, 3, h, w), got {s}"
            )));
        }
        Ok(PairedSample { id, rainy, clean })
    }
}

/// File locations of one pair; the id is the shared file name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub id: String,
    pub rainy: PathBuf,
    pub clean: PathBuf,
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string());
            }
        }
    }
    Ok(out)
}

/// Lists `root/rainy/*.png` against `root/clean/*.png`, sorted by file name.
pub fn scan_paired_dir(root: &Path) -> Result<Vec<PairEntry>> {
    let rainy_dir = root.join(RAINY_DIR);
    let clean_dir = root.join(CLEAN_DIR);
    let rainy = if rainy_dir.is_dir() {
        png_names(&rainy_dir)?
    } else {
        BTreeSet::new()
    };
    let clean = if clean_dir.is_dir() {
        png_names(&clean_dir)?
    } else {
        BTreeSet::new()
    };
    if rainy.is_empty() && clean.is_empty() {
        return Err(Error::Data(format!(
            "no pairs found under {}",
            root.display()
        )));
    }
    if let Some(name) = rainy.difference(&clean).next() {
        return Err(Error::Data(format!(
            "{} has no counterpart {}",
            rainy_dir.join(name).display(),
            clean_dir.join(name).display()
        )));
    }
    if let Some(name) = clean.difference(&rainy).next() {
        return Err(Error::Data(format!(
            "{} has no counterpart {}",
            clean_dir.join(name).display(),
            rainy_dir.join(name).display()
        )));
    }
    Ok(rainy
        .into_iter()
        .map(|name| PairEntry {
            rainy: rainy_dir.join(&name),
            clean: clean_dir.join(&name),
            id: name,
        })
        .collect())
}

pub fn load_pair(entry: &PairEntry) -> Result<PairedSample> {
    let rainy = load_image(&entry.rainy)?;
    let clean = load_image(&entry.clean)?;
    if rainy.shape() != clean.shape() {
        return Err(Error::Data(format!(
            "{} is {} but {} is {}",
            entry.rainy.display(),
            rainy.shape(),
            entry.clean.display(),
            clean.shape()
        )));
    }
    PairedSample::new(entry.id.clone(), rainy, clean)
}

/// Loads every pair under `root`, sorted by id; the first failure aborts.
pub fn load_paired_dataset(root: &Path) -> Result<Vec<PairedSample>> {
    scan_paired_dir(root)?.iter().map(load_pair).collect()
}

/// Writes `sample` into the `root/rainy`, `root/clean` layout.
pub fn save_pair(root: &Path, sample: &PairedSample) -> Result<()> {
    for (sub, img) in [(RAINY_DIR, &sample.rainy), (CLEAN_DIR, &sample.clean)] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_image(img, &dir.join(&sample.id))?;
    }
    Ok(())
}

/// Cuts the same `size × size` window out of both images. The top offset is
/// drawn before the left offset.
pub fn random_crop_pair<R: Rng + ?Sized>(
    sample: &PairedSample,
    size: usize,
    rng: &mut R,
) -> Result<PairedSample> {
    let s = sample.rainy.shape();
    if size == 0 || s.h < size || s.w < size {
        return Err(Error::Data(format!(
            "pair `{}` of size {}x{} cannot supply a {size}x{size} crop",
            sample.id, s.h, s.w
        )));
    }
    let top = rng.random_range(0..=s.h - size);
    let left = rng.random_range(0..=s.w - size);
    Ok(PairedSample {
        id: sample.id.clone(),
        rainy: sample.rainy.crop(top, left, size, size)?,
        clean: sample.clean.crop(top, left, size, size)?,
    })
}
