//! Annotation parsing, dataset layout on disk, splitting, synthetic scenes
//! and augmentation.

mod image_io;
mod synth;
mod voc;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use image_io::{draw_boxes, load_image, rescale_boxes, save_image, LoadedImage};
pub use synth::{generate_one, generate_synthetic, hat_color, Background, SizeDistribution, SynthConfig};
pub use voc::{parse_voc_xml, write_voc_xml};

use crate::error::{Error, Result};
use crate::targets::GroundTruthBox;
use crate::tensor::Tensor;

/// Class vocabulary of the construction-site hardhat dataset.
pub const HARDHAT_CLASSES: [&str; 5] = ["blue", "red", "white", "yellow", "none"];

pub fn hardhat_classes() -> Vec<String> {
    HARDHAT_CLASSES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[1, 3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub boxes: Vec<GroundTruthBox>,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// `(train, val, test)`, summing to 1.
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: (0.5, 0.25, 0.25),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::invalid(format!("unknown split {other:?}; use train, val or test"))),
        }
    }
}

/// Seeded shuffle, then a ratio partition (train and val rounded, test takes
/// the rest).
pub fn split_dataset(ids: &[String], spec: &SplitSpec) -> Result<Splits> {
    let (a, b, c) = spec.ratios;
    if [a, b, c].iter().any(|r| *r < 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {:?} must be >= 0 and sum to 1", spec.ratios)));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(*id)) {
        return Err(Error::invalid(format!("duplicate sample id {dup:?}")));
    }
    let mut order = ids.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n = order.len();
    let n_train = ((n as f64) * a).round() as usize;
    let n_val = (((n as f64) * b).round() as usize).min(n - n_train);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(Splits { train: order, val, test })
}

/// Horizontal mirror: `x' = W - 1 - x`, corners re-ordered.
pub fn flip_augment(s: &Sample) -> Sample {
    let w = s.image.shape().w() as f64;
    Sample {
        image: s.image.flip_horizontal(),
        boxes: s
            .boxes
            .iter()
            .map(|b| GroundTruthBox::new(w - 1.0 - b.br_x, b.tl_y, w - 1.0 - b.tl_x, b.br_y, b.class_id))
            .collect(),
        id: s.id.clone(),
    }
}

/// `splits.json`: the split id lists plus the class vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitsFile {
    pub classes: Vec<String>,
    #[serde(flatten)]
    pub splits: Splits,
}

/// `images/`, `annotations/` (VOC XML) and `splits.json` under one root.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub splits: Splits,
}

const IMAGE_EXTS: [&str; 5] = ["png", "ppm", "pnm", "jpg", "jpeg"];

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("splits.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let f: SplitsFile = serde_json::from_str(&text).map_err(|e| Error::file(&path, e))?;
        Ok(Dataset {
            root: root.to_path_buf(),
            classes: f.classes,
            splits: f.splits,
        })
    }

    pub fn image_path(&self, id: &str) -> Result<PathBuf> {
        IMAGE_EXTS
            .iter()
            .map(|e| self.root.join("images").join(format!("{id}.{e}")))
            .find(|p| p.exists())
            .ok_or_else(|| Error::file(self.root.join("images").join(id), "no image with a supported extension"))
    }

    pub fn annotations(&self, id: &str) -> Result<Vec<GroundTruthBox>> {
        let path = self.root.join("annotations").join(format!("{id}.xml"));
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        parse_voc_xml(&text, &self.classes).map_err(|e| Error::file(&path, e))
    }

    /// Loads one sample resized to `size`, boxes rescaled to match.
    pub fn load(&self, id: &str, size: (usize, usize)) -> Result<Sample> {
        let img = load_image(&self.image_path(id)?, Some(size))?;
        let boxes = rescale_boxes(&self.annotations(id)?, img.original, size);
        Ok(Sample {
            image: img.tensor,
            boxes,
            id: id.to_string(),
        })
    }

    pub fn load_split(&self, split: &str, size: (usize, usize)) -> Result<Vec<Sample>> {
        self.splits.get(split)?.iter().map(|id| self.load(id, size)).collect()
    }

    /// Writes samples as PNG + VOC XML and the given splits.
    pub fn write(root: &Path, classes: &[String], samples: &[Sample], splits: &Splits) -> Result<Dataset> {
        let images = root.join("images");
        let ann = root.join("annotations");
        for d in [&images, &ann] {
            fs::create_dir_all(d).map_err(|e| Error::file(d, e))?;
        }
        for s in samples {
            let sh = s.image.shape();
            save_image(&images.join(format!("{}.png", s.id)), &s.image)?;
            let xml = write_voc_xml(&format!("{}.png", s.id), (sh.h(), sh.w()), &s.boxes, classes);
            let p = ann.join(format!("{}.xml", s.id));
            fs::write(&p, xml).map_err(|e| Error::file(&p, e))?;
        }
        let file = SplitsFile {
            classes: classes.to_vec(),
            splits: splits.clone(),
        };
        let p = root.join("splits.json");
        fs::write(&p, serde_json::to_string_pretty(&file)?).map_err(|e| Error::file(&p, e))?;
        Ok(Dataset {
            root: root.to_path_buf(),
            classes: classes.to_vec(),
            splits: splits.clone(),
        })
    }
}
