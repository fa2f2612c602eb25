//! Axis-aligned bounding boxes, overlap scoring, and the nine box transforms
//! available to the agent.
//!
//! Coordinates are continuous pixels with the origin at the top-left corner
//! and `y` growing downward. Rounding to whole pixels only happens when a box
//! is rasterized (feature extraction and rendering).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of discrete actions, terminate included.
pub const NUM_ACTIONS: usize = 9;

/// An axis-aligned box with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_max <= x_min || y_max <= y_min {
            return Err(Error::DegenerateBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// The box covering the whole image.
    pub fn full(extent: ImageExtent) -> Self {
        Self {
            x_min: 0.0,
            y_min: 0.0,
            x_max: f64::from(extent.width()),
            y_max: f64::from(extent.height()),
        }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Intersection over union with `other`.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        if self == other {
            return 1.0;
        }
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    /// True when the box lies within `[0, W] x [0, H]`.
    pub fn is_inside(&self, extent: ImageExtent) -> bool {
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= f64::from(extent.width())
            && self.y_max <= f64::from(extent.height())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Free-function form of [`BoundingBox::iou`].
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

/// Formats as `x_min y_min x_max y_max` using the shortest representation
/// that parses back to the same value.
impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

impl FromStr for BoundingBox {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let values: Vec<f64> = s
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("bad box coordinate `{tok}`")))
            })
            .collect::<Result<_>>()?;
        match values[..] {
            [x0, y0, x1, y1] => BoundingBox::new(x0, y0, x1, y1),
            _ => Err(Error::InvalidParameter(format!(
                "box needs four numbers, got `{s}`"
            ))),
        }
    }
}

/// Image size in pixels; both sides at least 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageExtent {
    width: u32,
    height: u32,
}

impl ImageExtent {
    pub const MIN_SIDE: u32 = 16;

    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width < Self::MIN_SIDE || height < Self::MIN_SIDE {
            return Err(Error::ExtentTooSmall { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }
}

/// The agent's action set. Discriminants are the fixed action indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    ShrinkWidth = 0,
    ShrinkHeight = 1,
    ExpandWidth = 2,
    ExpandHeight = 3,
    MoveUp = 4,
    MoveDown = 5,
    MoveLeft = 6,
    MoveRight = 7,
    Terminate = 8,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::ShrinkWidth,
        Action::ShrinkHeight,
        Action::ExpandWidth,
        Action::ExpandHeight,
        Action::MoveUp,
        Action::MoveDown,
        Action::MoveLeft,
        Action::MoveRight,
        Action::Terminate,
    ];

    /// The eight box-changing actions.
    pub const GEOMETRIC: [Action; 8] = [
        Action::ShrinkWidth,
        Action::ShrinkHeight,
        Action::ExpandWidth,
        Action::ExpandHeight,
        Action::MoveUp,
        Action::MoveDown,
        Action::MoveLeft,
        Action::MoveRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }

    pub fn is_terminate(self) -> bool {
        self == Action::Terminate
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::ShrinkWidth => "shrink-width",
            Action::ShrinkHeight => "shrink-height",
            Action::ExpandWidth => "expand-width",
            Action::ExpandHeight => "expand-height",
            Action::MoveUp => "move-up",
            Action::MoveDown => "move-down",
            Action::MoveLeft => "move-left",
            Action::MoveRight => "move-right",
            Action::Terminate => "terminate",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Step size and size floor for the box transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionParams {
    /// Fraction of the box's own width/height used by every transform.
    pub alpha: f64,
    /// Minimum box side as a fraction of the matching image side.
    pub min_frac: f64,
}

impl Default for ActionParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            min_frac: 0.05,
        }
    }
}

impl ActionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 0.5), got {}",
                self.alpha
            )));
        }
        if !(self.min_frac > 0.0 && self.min_frac < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "min_frac must lie in (0, 1), got {}",
                self.min_frac
            )));
        }
        Ok(())
    }
}

/// Applies `action` to `bbox` and clamps the result into the image.
///
/// Shrink/expand rescale one side by `1 -/+ alpha` about the center; moves
/// translate by `alpha` times the box's own width (horizontal) or height
/// (vertical). Terminate returns the box untouched, without clamping.
pub fn apply_action(
    bbox: &BoundingBox,
    action: Action,
    extent: ImageExtent,
    params: &ActionParams,
) -> BoundingBox {
    let a = params.alpha;
    let (cx, cy) = bbox.center();
    let (w, h) = (bbox.width(), bbox.height());
    let (x0, y0, x1, y1) = match action {
        Action::Terminate => return *bbox,
        Action::ShrinkWidth => (cx - 0.5 * w * (1.0 - a), bbox.y_min, cx + 0.5 * w * (1.0 - a), bbox.y_max),
        Action::ExpandWidth => (cx - 0.5 * w * (1.0 + a), bbox.y_min, cx + 0.5 * w * (1.0 + a), bbox.y_max),
        Action::ShrinkHeight => (bbox.x_min, cy - 0.5 * h * (1.0 - a), bbox.x_max, cy + 0.5 * h * (1.0 - a)),
        Action::ExpandHeight => (bbox.x_min, cy - 0.5 * h * (1.0 + a), bbox.x_max, cy + 0.5 * h * (1.0 + a)),
        Action::MoveUp => (bbox.x_min, bbox.y_min - a * h, bbox.x_max, bbox.y_max - a * h),
        Action::MoveDown => (bbox.x_min, bbox.y_min + a * h, bbox.x_max, bbox.y_max + a * h),
        Action::MoveLeft => (bbox.x_min - a * w, bbox.y_min, bbox.x_max - a * w, bbox.y_max),
        Action::MoveRight => (bbox.x_min + a * w, bbox.y_min, bbox.x_max + a * w, bbox.y_max),
    };
    let (x0, x1) = clamp_interval(x0, x1, f64::from(extent.width()), params.min_frac);
    let (y0, y1) = clamp_interval(y0, y1, f64::from(extent.height()), params.min_frac);
    BoundingBox {
        x_min: x0,
        y_min: y0,
        x_max: x1,
        y_max: y1,
    }
}

/// Brings `bbox` inside the image: minimal translation when it fits, crop
/// when a side is longer than the image, then symmetric growth up to
/// `min_frac` of the image side. Idempotent.
pub fn clamp(bbox: &BoundingBox, extent: ImageExtent, min_frac: f64) -> BoundingBox {
    let (x0, x1) = clamp_interval(
        bbox.x_min,
        bbox.x_max,
        f64::from(extent.width()),
        min_frac,
    );
    let (y0, y1) = clamp_interval(
        bbox.y_min,
        bbox.y_max,
        f64::from(extent.height()),
        min_frac,
    );
    BoundingBox {
        x_min: x0,
        y_min: y0,
        x_max: x1,
        y_max: y1,
    }
}

// Relative slack on the size floor so a grown interval is not grown again
// because of rounding in `hi - lo`.
const MIN_SIZE_SLACK: f64 = 1e-12;

fn clamp_interval(lo: f64, hi: f64, limit: f64, min_frac: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (lo, hi);
    if hi - lo > limit {
        lo = lo.max(0.0);
        hi = hi.min(limit);
    } else {
        shift_inside(&mut lo, &mut hi, limit);
    }
    let min_len = min_frac * limit;
    if hi - lo < min_len * (1.0 - MIN_SIZE_SLACK) {
        let c = 0.5 * (lo + hi);
        lo = c - 0.5 * min_len;
        hi = lo + min_len;
        shift_inside(&mut lo, &mut hi, limit);
    }
    (lo, hi)
}

fn shift_inside(lo: &mut f64, hi: &mut f64, limit: f64) {
    let len = *hi - *lo;
    if *lo < 0.0 {
        *lo = 0.0;
        *hi = len.min(limit);
    } else if *hi > limit {
        *lo = (limit - len).max(0.0);
        *hi = limit;
    }
}
