//! Synthetic shapes corpus: colored shapes on textured backgrounds with
//! exact per-class masks and boxes.
//!
//! Layout written under the output directory:
//!
//! ```text
//! classes.txt              one class name per line, index = class id
//! train.txt / test.txt     image ids, one per line
//! images/<id>.png          RGB image
//! masks/<id>_<class>.png   8-bit mask per present class, 255 = foreground
//! boxes/<id>.txt           `class_id x_min y_min x_max y_max`, half-open
//! recipe.json              training recipe for the desk CNN
//! ```

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::TrainRecipe;
use crate::error::{Error, Result};
use crate::metrics::BBox;

pub const SHAPE_CLASSES: [&str; 4] = ["circle", "square", "triangle", "cross"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Cross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Circle,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Cross,
    ];

    pub fn class_id(self) -> usize {
        self as usize
    }

    /// Whether the pixel centre offset `(dx, dy)` from the shape centre lies
    /// inside a shape of radius `r`.
    fn covers(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
            ShapeKind::Triangle => {
                // apex up, base at dy = +0.8r
                let t = (dy + r) / (1.8 * r);
                (0.0..=1.0).contains(&t) && dx.abs() <= t * r
            }
            ShapeKind::Cross => {
                let arm = r / 3.0;
                (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub count: usize,
    pub test_count: usize,
    pub height: u32,
    pub width: u32,
    pub seed: u64,
    pub max_shapes: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            count: 1000,
            test_count: 200,
            height: 32,
            width: 32,
            seed: 0,
            max_shapes: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeInstance {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    pub radius: f64,
    pub color: [u8; 3],
}

/// One rendered scene with its exact ground truth.
#[derive(Clone, Debug)]
pub struct Scene {
    pub image: RgbImage,
    pub shapes: Vec<ShapeInstance>,
    /// Per shape, its visible pixels (later shapes paint over earlier ones).
    pub supports: Vec<Vec<(u32, u32)>>,
}

impl Scene {
    pub fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.shapes.iter().map(|s| s.kind.class_id()).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn class_mask(&self, class_id: usize) -> GrayImage {
        let mut m = GrayImage::new(self.image.width(), self.image.height());
        for (s, sup) in self.shapes.iter().zip(&self.supports) {
            if s.kind.class_id() == class_id {
                for &(x, y) in sup {
                    m.put_pixel(x, y, Luma([255]));
                }
            }
        }
        m
    }

    pub fn boxes(&self) -> Vec<(usize, BBox)> {
        self.shapes
            .iter()
            .zip(&self.supports)
            .filter(|(_, sup)| !sup.is_empty())
            .map(|(s, sup)| {
                let bb = BBox {
                    x_min: sup.iter().map(|p| p.0).min().unwrap(),
                    y_min: sup.iter().map(|p| p.1).min().unwrap(),
                    x_max: sup.iter().map(|p| p.0).max().unwrap() + 1,
                    y_max: sup.iter().map(|p| p.1).max().unwrap() + 1,
                };
                (s.kind.class_id(), bb)
            })
            .collect()
    }
}

fn luminance(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Renders a scene with 1..=`max_shapes` non-overlapping shapes.
pub fn render_scene(rng: &mut impl Rng, height: u32, width: u32, max_shapes: usize) -> Scene {
    let (h, w) = (height as f64, width as f64);
    let base = [
        rng.random_range(40.0..200.0),
        rng.random_range(40.0..200.0),
        rng.random_range(40.0..200.0),
    ];
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let freq: f64 = rng.random_range(0.3..1.2);
    let amp: f64 = rng.random_range(5.0..20.0);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut image = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let stripe = amp * ((x as f64 * ca + y as f64 * sa) * freq).sin();
            let mut px = [0u8; 3];
            for c in 0..3 {
                let noise: f64 = rng.random_range(-10.0..10.0);
                px[c] = (base[c] + stripe + noise).clamp(0.0, 255.0) as u8;
            }
            image.put_pixel(x, y, Rgb(px));
        }
    }

    let wanted = rng.random_range(1..=max_shapes.max(1));
    let min_r = (h.min(w) / 8.0).max(2.5);
    let max_r = (h.min(w) / 4.5).max(min_r + 0.5);
    let mut shapes: Vec<ShapeInstance> = Vec::new();
    let mut attempts = 0;
    while shapes.len() < wanted && attempts < 200 {
        attempts += 1;
        let kind = ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())];
        let radius = rng.random_range(min_r..max_r);
        let cx = rng.random_range(radius..w - radius);
        let cy = rng.random_range(radius..h - radius);
        let clear = shapes.iter().all(|s| {
            let d = ((s.center.0 - cx).powi(2) + (s.center.1 - cy).powi(2)).sqrt();
            d > s.radius + radius + 1.0
        });
        if !clear {
            continue;
        }
        // shape colour must stand out from the background mean
        let color = loop {
            let c = [
                rng.random_range(0.0..255.0),
                rng.random_range(0.0..255.0),
                rng.random_range(0.0..255.0),
            ];
            if (luminance(c) - luminance(base)).abs() > 60.0 {
                break [c[0] as u8, c[1] as u8, c[2] as u8];
            }
        };
        shapes.push(ShapeInstance {
            kind,
            center: (cx, cy),
            radius,
            color,
        });
    }

    let mut owner: Vec<Option<usize>> = vec![None; (height * width) as usize];
    for (i, s) in shapes.iter().enumerate() {
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 + 0.5 - s.center.0;
                let dy = y as f64 + 0.5 - s.center.1;
                if s.kind.covers(dx, dy, s.radius) {
                    owner[(y * width + x) as usize] = Some(i);
                    image.put_pixel(x, y, Rgb(s.color));
                }
            }
        }
    }
    let mut supports = vec![Vec::new(); shapes.len()];
    for y in 0..height {
        for x in 0..width {
            if let Some(i) = owner[(y * width + x) as usize] {
                supports[i].push((x, y));
            }
        }
    }
    Scene {
        image,
        shapes,
        supports,
    }
}

pub fn image_id(index: usize) -> String {
    format!("{index:05}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub images: usize,
    pub train: usize,
    pub test: usize,
    pub instances: usize,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Generates the corpus. The last `test_count` images form the test split.
pub fn generate(config: &SyntheticConfig, out: &Path) -> Result<SyntheticSummary> {
    if config.count == 0 || config.test_count > config.count {
        return Err(Error::Config(
            "need count >= 1 and test_count <= count".into(),
        ));
    }
    if config.height < 8 || config.width < 8 {
        return Err(Error::Config(
            "synthetic images must be at least 8x8".into(),
        ));
    }
    for sub in ["images", "masks", "boxes"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut instances = 0;
    let mut train_ids = String::new();
    let mut test_ids = String::new();
    for i in 0..config.count {
        let id = image_id(i);
        let scene = render_scene(&mut rng, config.height, config.width, config.max_shapes);
        instances += scene.shapes.len();
        save_png(&scene.image, &out.join("images").join(format!("{id}.png")))?;
        for c in scene.classes() {
            save_png(
                &scene.class_mask(c),
                &out.join("masks").join(format!("{id}_{c}.png")),
            )?;
        }
        let boxes: String = scene
            .boxes()
            .iter()
            .map(|(c, b)| format!("{c} {} {} {} {}\n", b.x_min, b.y_min, b.x_max, b.y_max))
            .collect();
        write_file(&out.join("boxes").join(format!("{id}.txt")), boxes)?;
        let list = if i < config.count - config.test_count {
            &mut train_ids
        } else {
            &mut test_ids
        };
        list.push_str(&id);
        list.push('\n');
    }
    write_file(&out.join("train.txt"), &train_ids)?;
    write_file(&out.join("test.txt"), &test_ids)?;
    let classes: String = SHAPE_CLASSES.iter().map(|c| format!("{c}\n")).collect();
    write_file(&out.join("classes.txt"), classes)?;
    let recipe = TrainRecipe::for_input(
        config.height as usize,
        config.width as usize,
        SHAPE_CLASSES.len(),
    );
    write_file(
        &out.join("recipe.json"),
        serde_json::to_string_pretty(&recipe)?,
    )?;
    Ok(SyntheticSummary {
        images: config.count,
        train: config.count - config.test_count,
        test: config.test_count,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_equal_rendered_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let scene = render_scene(&mut rng, 32, 32, 3);
            assert!(!scene.shapes.is_empty());
            for c in scene.classes() {
                let mask = scene.class_mask(c);
                for (x, y, px) in mask.enumerate_pixels() {
                    let owned = scene
                        .shapes
                        .iter()
                        .zip(&scene.supports)
                        .any(|(s, sup)| s.kind.class_id() == c && sup.contains(&(x, y)));
                    assert_eq!(px.0[0] == 255, owned);
                    if owned {
                        let shape = scene
                            .shapes
                            .iter()
                            .zip(&scene.supports)
                            .find(|(_, sup)| sup.contains(&(x, y)))
                            .unwrap()
                            .0;
                        assert_eq!(scene.image.get_pixel(x, y).0, shape.color);
                    }
                }
            }
        }
    }

    #[test]
    fn boxes_enclose_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scene = render_scene(&mut rng, 48, 40, 3);
        for ((_, b), sup) in scene.boxes().iter().zip(&scene.supports) {
            for &(x, y) in sup {
                assert!(b.contains(y as usize, x as usize));
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            count: 6,
            test_count: 2,
            seed: 42,
            ..SyntheticConfig::default()
        };
        generate(&cfg, a.path()).unwrap();
        generate(&cfg, b.path()).unwrap();
        for rel in [
            "images/00003.png",
            "boxes/00005.txt",
            "test.txt",
            "recipe.json",
        ] {
            assert_eq!(
                fs::read(a.path().join(rel)).unwrap(),
                fs::read(b.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
        assert_eq!(
            fs::read_to_string(a.path().join("test.txt")).unwrap(),
            "00004\n00005\n"
        );
    }
}
