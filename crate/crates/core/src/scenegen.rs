//! Synthetic person-search scenes.
//!
//! Each scene is a noisy grey background with one to four "people", drawn as
//! a shirt block stacked on a pants block. One of them is the target; its body
//! box is the ground truth and its attributes are spelled out in a templated
//! description.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageExtent};

pub const MANIFEST_FILE: &str = "manifest.txt";
const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
    White,
    Black,
}

impl Color {
    pub const PALETTE: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
        Color::White,
        Color::Black,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
            Color::White => "white",
            Color::Black => "black",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [230, 25, 25],
            Color::Green => [25, 190, 25],
            Color::Blue => [25, 50, 230],
            Color::Yellow => [242, 230, 25],
            Color::Purple => [150, 25, 180],
            Color::Orange => [255, 140, 0],
            Color::White => [248, 248, 248],
            Color::Black => [12, 12, 12],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }

    /// Nominal body height as a fraction of the image height.
    fn height_fraction(self) -> f64 {
        match self {
            SizeClass::Small => 0.5,
            SizeClass::Medium => 0.65,
            SizeClass::Large => 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Position {
    Left,
    Center,
    Right,
}

impl Position {
    pub fn name(self) -> &'static str {
        match self {
            Position::Left => "left",
            Position::Center => "center",
            Position::Right => "right",
        }
    }

    /// Horizontal third of the image containing `center_x`.
    pub fn from_center(center_x: f64, width: f64) -> Position {
        if center_x < width / 3.0 {
            Position::Left
        } else if center_x < 2.0 * width / 3.0 {
            Position::Center
        } else {
            Position::Right
        }
    }
}

macro_rules! parse_by_name {
    ($ty:ty, $all:expr) => {
        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                $all.iter()
                    .copied()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!(
                            "unknown {} `{s}`",
                            stringify!($ty).to_lowercase()
                        ))
                    })
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

parse_by_name!(Color, Color::PALETTE);
parse_by_name!(SizeClass, SizeClass::ALL);
parse_by_name!(Position, [Position::Left, Position::Center, Position::Right]);

/// One rendered person.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureSpec {
    pub body: BoundingBox,
    pub shirt: Color,
    pub pants: Color,
    pub size: SizeClass,
    pub position: Position,
}

impl FigureSpec {
    /// What a bag-of-words reader can tell apart: size, position and the
    /// unordered pair of colours.
    fn described_key(&self) -> (SizeClass, Position, Color, Color) {
        let (a, b) = if self.shirt <= self.pants {
            (self.shirt, self.pants)
        } else {
            (self.pants, self.shirt)
        };
        (self.size, self.position, a, b)
    }

    fn encode(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.body, self.shirt, self.pants, self.size, self.position
        )
    }

    fn decode(s: &str) -> Result<FigureSpec> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        if toks.len() != 8 {
            return Err(Error::InvalidParameter(format!(
                "figure record needs 8 fields, got `{s}`"
            )));
        }
        Ok(FigureSpec {
            body: toks[..4].join(" ").parse()?,
            shirt: toks[4].parse()?,
            pants: toks[5].parse()?,
            size: toks[6].parse()?,
            position: toks[7].parse()?,
        })
    }
}

/// Renders the natural-language query for a figure.
pub fn describe_target(figure: &FigureSpec) -> String {
    format!(
        "a {} person wearing a {} shirt and {} pants on the {}",
        figure.size, figure.shirt, figure.pants, figure.position
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub extent: ImageExtent,
    pub pixels: RgbImage,
    pub ground_truth: BoundingBox,
    pub description: String,
    pub figures: Vec<FigureSpec>,
    /// Index into `figures` of the described person.
    pub target: usize,
}

impl Scene {
    /// Channel value in `[0, 1]`.
    pub fn pixel(&self, x: u32, y: u32, channel: usize) -> f64 {
        f64::from(self.pixels.get_pixel(x, y)[channel]) / 255.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub width: u32,
    pub height: u32,
    pub min_figures: usize,
    pub max_figures: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            min_figures: 1,
            max_figures: 4,
        }
    }
}

impl SceneParams {
    fn validate(&self) -> Result<ImageExtent> {
        let extent = ImageExtent::new(self.width, self.height)?;
        if self.min_figures == 0 || self.min_figures > self.max_figures || self.max_figures > 4 {
            return Err(Error::InvalidParameter(format!(
                "figure count range {}..={} must lie within 1..=4",
                self.min_figures, self.max_figures
            )));
        }
        Ok(extent)
    }
}

const LAYOUT_ATTEMPTS: usize = 200;
const COLOR_ATTEMPTS: usize = 32;
const BODY_ASPECT: f64 = 0.4;
const SHIRT_FRACTION: f64 = 0.45;

/// Generates one scene. Identical `(seed, params)` give bit-identical scenes.
pub fn generate_scene(id: impl Into<String>, seed: u64, params: &SceneParams) -> Result<Scene> {
    let extent = params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (params.width, params.height);
    let count = rng.random_range(params.min_figures..=params.max_figures);

    let figures = (0..LAYOUT_ATTEMPTS)
        .find_map(|_| try_layout(&mut rng, count, w, h))
        .ok_or(Error::InfeasiblePlacement {
            seed,
            attempts: LAYOUT_ATTEMPTS,
        })?;
    let target = rng.random_range(0..figures.len());
    let figures = assign_colors(&mut rng, figures, target).ok_or(Error::InfeasiblePlacement {
        seed,
        attempts: COLOR_ATTEMPTS,
    })?;

    let mut pixels = RgbImage::new(w, h);
    for p in pixels.pixels_mut() {
        let v = (0.30 + 0.25 * rng.random::<f64>()) * 255.0;
        let v = v.round() as u8;
        *p = Rgb([v, v, v]);
    }
    for fig in &figures {
        draw_figure(&mut pixels, fig);
    }

    Ok(Scene {
        id: id.into(),
        extent,
        pixels,
        ground_truth: figures[target].body,
        description: describe_target(&figures[target]),
        figures,
        target,
    })
}

/// Generates `count` scenes whose per-scene seeds are derived from `base_seed`.
pub fn generate_dataset(base_seed: u64, count: usize, params: &SceneParams) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| {
            let seed = derive_seed(base_seed, i as u64);
            generate_scene(format!("s{base_seed}-{i:05}"), seed, params)
        })
        .collect()
}

/// SplitMix64 finalizer over `(base, index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lays out `count` non-overlapping bodies left to right with random gaps.
/// Colours are filled in later.
fn try_layout(rng: &mut ChaCha8Rng, count: usize, w: u32, h: u32) -> Option<Vec<FigureSpec>> {
    let sizes: Vec<(SizeClass, u32, u32)> = (0..count)
        .map(|_| {
            let size = SizeClass::ALL[rng.random_range(0..3)];
            let jitter = 1.0 + rng.random_range(-0.05..0.05);
            let bh = (size.height_fraction() * jitter * f64::from(h)).round() as u32;
            let bw = ((f64::from(bh) * BODY_ASPECT).round() as u32).max(2);
            (size, bw, bh.min(h - 2))
        })
        .collect();
    let used: u32 = sizes.iter().map(|s| s.1).sum();
    // one-pixel margin at both image edges
    let free = i64::from(w) - 2 - i64::from(used);
    if free < 0 {
        return None;
    }
    let mut cuts: Vec<u32> = (0..count)
        .map(|_| rng.random_range(0..=free as u32))
        .collect();
    cuts.sort_unstable();

    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);

    let mut figures = Vec::with_capacity(count);
    let mut cursor = 1u32;
    let mut prev_cut = 0u32;
    for (slot, &fig) in order.iter().enumerate() {
        let (size, bw, bh) = sizes[fig];
        cursor += cuts[slot] - prev_cut;
        prev_cut = cuts[slot];
        let y0 = rng.random_range(1..=(h - 1 - bh));
        let body = BoundingBox::new(
            f64::from(cursor),
            f64::from(y0),
            f64::from(cursor + bw),
            f64::from(y0 + bh),
        )
        .ok()?;
        let position = Position::from_center(body.center().0, f64::from(w));
        figures.push(FigureSpec {
            body,
            shirt: Color::Red,
            pants: Color::Red,
            size,
            position,
        });
        cursor += bw;
    }
    Some(figures)
}

fn random_color(rng: &mut ChaCha8Rng) -> Color {
    Color::PALETTE[rng.random_range(0..Color::PALETTE.len())]
}

fn assign_colors(
    rng: &mut ChaCha8Rng,
    mut figures: Vec<FigureSpec>,
    target: usize,
) -> Option<Vec<FigureSpec>> {
    figures[target].shirt = random_color(rng);
    figures[target].pants = random_color(rng);
    let target_key = figures[target].described_key();
    for (i, fig) in figures.iter_mut().enumerate() {
        if i == target {
            continue;
        }
        let mut placed = false;
        for _ in 0..COLOR_ATTEMPTS {
            fig.shirt = random_color(rng);
            fig.pants = random_color(rng);
            if fig.described_key() != target_key {
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(figures)
}

fn draw_figure(img: &mut RgbImage, fig: &FigureSpec) {
    let x0 = fig.body.x_min() as u32;
    let x1 = fig.body.x_max() as u32;
    let y0 = fig.body.y_min() as u32;
    let y1 = fig.body.y_max() as u32;
    let split = y0 + ((f64::from(y1 - y0) * SHIRT_FRACTION).round() as u32);
    for y in y0..y1 {
        let color = if y < split { fig.shirt } else { fig.pants };
        for x in x0..x1 {
            img.put_pixel(x, y, Rgb(color.rgb()));
        }
    }
}

/// A copy of the scene with `bbox` outlined in `color`, two pixels thick.
/// Edges are rounded to the nearest pixel and kept inside the image.
pub fn draw_box(scene: &Scene, bbox: &BoundingBox, color: [u8; 3]) -> RgbImage {
    let mut img = scene.pixels.clone();
    let (w, h) = img.dimensions();
    let px = |v: f64, limit: u32| (v.round().max(0.0) as u32).min(limit - 1);
    let (x0, x1) = (px(bbox.x_min(), w), px(bbox.x_max() - 1.0, w));
    let (y0, y1) = (px(bbox.y_min(), h), px(bbox.y_max() - 1.0, h));
    for t in 0..2 {
        for x in x0..=x1 {
            img.put_pixel(x, (y0 + t).min(y1), Rgb(color));
            img.put_pixel(x, y1.saturating_sub(t).max(y0), Rgb(color));
        }
        for y in y0..=y1 {
            img.put_pixel((x0 + t).min(x1), y, Rgb(color));
            img.put_pixel(x1.saturating_sub(t).max(x0), y, Rgb(color));
        }
    }
    img
}

/// Saves an image as binary PPM.
pub fn write_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::ImageEncoder;

    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes `scenes` under `dir`: a manifest plus one binary PPM per scene.
pub fn save_dataset(scenes: &[Scene], dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let image_dir = dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut manifest = String::new();
    for scene in scenes {
        let rel = format!("{IMAGE_DIR}/{}.ppm", scene.id);
        let path = dir.join(&rel);
        write_ppm(&scene.pixels, &path)?;
        let figures: Vec<String> = scene.figures.iter().map(FigureSpec::encode).collect();
        manifest.push_str(&format!(
            "id={}\timage_path={}\tground_truth={}\tdescription={}\ttarget={}\tfigures={}\n",
            scene.id,
            rel,
            scene.ground_truth,
            scene.description,
            scene.target,
            figures.join(";")
        ));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Reads a dataset written by [`save_dataset`]. `path` may be the dataset
/// directory or the manifest file itself.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;

    let mut scenes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::parse(&manifest_path, lineno + 1, msg);
        let mut fields = HashMap::new();
        for part in line.split('\t') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("field `{part}` is not key=value")))?;
            fields.insert(k, v);
        }
        let field = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| bad(format!("missing field `{k}`")))
        };

        let image_path = root.join(field("image_path")?);
        if !image_path.is_file() {
            return Err(bad(format!(
                "image file `{}` does not exist",
                image_path.display()
            )));
        }
        let pixels = image::open(&image_path)
            .map_err(|source| Error::Image {
                path: image_path.clone(),
                source,
            })?
            .to_rgb8();
        let extent = ImageExtent::new(pixels.width(), pixels.height())?;
        let ground_truth: BoundingBox = field("ground_truth")?
            .parse()
            .map_err(|e: Error| bad(e.to_string()))?;
        if !ground_truth.is_inside(extent) {
            return Err(bad(format!("ground truth {ground_truth} lies outside the image")));
        }
        let figures = field("figures")?
            .split(';')
            .map(FigureSpec::decode)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| bad(e.to_string()))?;
        let target: usize = field("target")?
            .parse()
            .map_err(|_| bad("target is not an index".into()))?;
        if target >= figures.len() {
            return Err(bad(format!("target {target} out of range")));
        }
        scenes.push(Scene {
            id: field("id")?.to_string(),
            extent,
            pixels,
            ground_truth,
            description: field("description")?.to_string(),
            figures,
            target,
        });
    }
    Ok(scenes)
}
