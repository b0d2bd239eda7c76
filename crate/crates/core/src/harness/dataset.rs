//! Reading a ground-truth dataset in the synthetic corpus layout.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::{BBox, GroundTruth};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn file(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Test => "test.txt",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    /// One entry per class present, sorted by class id.
    pub truths: Vec<GroundTruth>,
}

impl Sample {
    pub fn classes(&self) -> Vec<usize> {
        self.truths.iter().map(|t| t.class_id).collect()
    }

    pub fn truth(&self, class_id: usize) -> Option<&GroundTruth> {
        self.truths.iter().find(|t| t.class_id == class_id)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    pub class_names: Vec<String>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Parses `class_id x_min y_min x_max y_max` lines.
pub fn parse_boxes(text: &str) -> Result<Vec<(usize, BBox)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("box line {}: `{line}`", n + 1)))?;
        let [c, x_min, y_min, x_max, y_max] = nums[..] else {
            return Err(Error::Format(format!("box line {} needs 5 fields", n + 1)));
        };
        if x_max <= x_min || y_max <= y_min {
            return Err(Error::Format(format!("box line {} is empty", n + 1)));
        }
        out.push((
            c as usize,
            BBox {
                x_min,
                y_min,
                x_max,
                y_max,
            },
        ));
    }
    Ok(out)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8())
}

/// Loads an 8-bit mask; any nonzero pixel is foreground.
pub fn load_mask(path: &Path) -> Result<Grid> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Grid::from_vec(
        h as usize,
        w as usize,
        img.pixels()
            .map(|p| if p.0[0] > 0 { 1.0 } else { 0.0 })
            .collect(),
    )
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let classes = root.join("classes.txt");
        if !classes.is_file() {
            return Err(Error::Config(format!(
                "{} is not a dataset (no classes.txt)",
                root.display()
            )));
        }
        Ok(Dataset {
            class_names: read_lines(&classes)?,
            root,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ids(&self, split: Split) -> Result<Vec<String>> {
        read_lines(&self.root.join(split.file()))
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.png"))
    }

    pub fn load(&self, id: &str) -> Result<Sample> {
        let image = load_rgb(&self.image_path(id))?;
        let boxes_path = self.root.join("boxes").join(format!("{id}.txt"));
        let boxes = if boxes_path.is_file() {
            parse_boxes(&fs::read_to_string(&boxes_path).map_err(|e| Error::io(&boxes_path, e))?)?
        } else {
            Vec::new()
        };
        let mut truths = Vec::new();
        for class_id in 0..self.class_names.len() {
            let mask_path = self.root.join("masks").join(format!("{id}_{class_id}.png"));
            if !mask_path.is_file() {
                continue;
            }
            let mask = load_mask(&mask_path)?;
            if mask.dims() != (image.height() as usize, image.width() as usize) {
                return Err(Error::Format(format!(
                    "{} does not match its image",
                    mask_path.display()
                )));
            }
            let class_boxes: Vec<BBox> = boxes
                .iter()
                .filter(|(c, _)| *c == class_id)
                .map(|(_, b)| *b)
                .collect();
            truths.push(GroundTruth {
                class_id,
                mask,
                boxes: (!class_boxes.is_empty()).then_some(class_boxes),
            });
        }
        Ok(Sample {
            id: id.to_string(),
            image,
            truths,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.ids(split)?.iter().map(|id| self.load(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_lines_parse() {
        let b = parse_boxes("2 1 2 5 6\n\n0 0 0 3 3\n").unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(
            b[0],
            (
                2,
                BBox {
                    x_min: 1,
                    y_min: 2,
                    x_max: 5,
                    y_max: 6
                }
            )
        );
        assert!(parse_boxes("1 2 3").is_err());
        assert!(parse_boxes("1 5 5 5 9").is_err());
    }

    #[test]
    fn generated_corpus_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = crate::harness::synthetic::SyntheticConfig {
            count: 5,
            test_count: 2,
            seed: 1,
            ..Default::default()
        };
        crate::harness::synthetic::generate(&cfg, dir.path()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.class_names.len(), 4);
        let test = ds.load_split(Split::Test).unwrap();
        assert_eq!(test.len(), 2);
        for s in &test {
            assert!(!s.truths.is_empty());
            for t in &s.truths {
                assert!(t.foreground() > 0);
                // every box lies on foreground pixels of its class
                for b in t.boxes.as_ref().unwrap() {
                    let inside = (b.y_min..b.y_max)
                        .flat_map(|y| (b.x_min..b.x_max).map(move |x| (y, x)))
                        .filter(|&(y, x)| t.mask.get(y as usize, x as usize) > 0.0)
                        .count();
                    assert!(inside > 0);
                }
            }
        }
    }

    #[test]
    fn missing_dataset_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::open(dir.path()), Err(Error::Config(_))));
    }
}
