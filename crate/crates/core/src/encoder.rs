//! State features: pooled crop pixels, a hashed sentence vector, and one-hot
//! codes of the last ten actions, concatenated in that order.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::env::{EnvState, HISTORY_LEN};
use crate::error::{Error, Result};
use crate::geometry::{Action, BoundingBox, NUM_ACTIONS};
use crate::scenegen::Scene;

/// Length of the action-history segment.
pub const HISTORY_DIM: usize = HISTORY_LEN * NUM_ACTIONS;

/// Which sentence vector the agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum QueryMode {
    /// The scene's own description.
    #[default]
    Regular,
    /// A description taken from a different scene.
    Random,
    /// An all-zero vector.
    None,
}

impl QueryMode {
    pub fn name(self) -> &'static str {
        match self {
            QueryMode::Regular => "regular",
            QueryMode::Random => "random",
            QueryMode::None => "none",
        }
    }
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(QueryMode::Regular),
            "random" => Ok(QueryMode::Random),
            "none" => Ok(QueryMode::None),
            other => Err(Error::InvalidParameter(format!(
                "unknown query mode `{other}` (expected regular, random or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub d_img: usize,
    pub d_query: usize,
    pub region_grid: usize,
    pub query_mode: QueryMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_img: 16 * 16 * 3,
            d_query: 100,
            region_grid: 16,
            query_mode: QueryMode::Regular,
        }
    }
}

impl EncoderConfig {
    /// Feature sizes used with an external 4096-d image model.
    pub fn paper_profile() -> Self {
        Self {
            d_img: 4096,
            ..Self::default()
        }
    }

    pub fn state_dim(&self) -> usize {
        self.d_img + self.d_query + HISTORY_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_img == 0 || self.d_query == 0 || self.region_grid == 0 {
            return Err(Error::InvalidParameter(
                "encoder dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A concatenated state vector. Cheap to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoding(Arc<[f64]>);

impl StateEncoding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values.into())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The trailing action-history segment.
    pub fn history_segment(&self) -> &[f64] {
        &self.0[self.0.len() - HISTORY_DIM..]
    }
}

/// Slot `i` (0 = most recent) is a one-hot block at `[9i, 9i + 9)`.
pub fn encode_history(history: &[Action]) -> Vec<f64> {
    let mut out = vec![0.0; HISTORY_DIM];
    for (slot, action) in history.iter().take(HISTORY_LEN).enumerate() {
        out[slot * NUM_ACTIONS + action.index()] = 1.0;
    }
    out
}

/// Maps an image region to a fixed-length feature vector.
pub trait RegionEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, scene: &Scene, bbox: &BoundingBox) -> Result<Vec<f64>>;
}

/// Area-averages the crop onto a `grid x grid` lattice per channel, values in
/// `[0, 1]`, flattened row-major with channels innermost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PooledPixels {
    pub grid: usize,
}

impl RegionEncoder for PooledPixels {
    fn dim(&self) -> usize {
        self.grid * self.grid * 3
    }

    fn encode(&self, scene: &Scene, bbox: &BoundingBox) -> Result<Vec<f64>> {
        if !bbox.is_inside(scene.extent) {
            return Err(Error::BoxOutsideImage {
                bbox: bbox.to_string(),
                width: scene.extent.width(),
                height: scene.extent.height(),
            });
        }
        let (x0, x1) = pixel_span(bbox.x_min(), bbox.x_max(), scene.extent.width());
        let (y0, y1) = pixel_span(bbox.y_min(), bbox.y_max(), scene.extent.height());
        let g = self.grid;
        let cols = cell_weights(x0, x1, g);
        let rows = cell_weights(y0, y1, g);

        // Reduce each crop row onto the column cells first.
        let crop_h = (y1 - y0) as usize;
        let mut row_cells = vec![0.0; crop_h * g * 3];
        for (ry, y) in (y0..y1).enumerate() {
            for (cx, cell) in cols.iter().enumerate() {
                let base = (ry * g + cx) * 3;
                for &(x, w) in cell {
                    let p = scene.pixels.get_pixel(x, y).0;
                    for c in 0..3 {
                        row_cells[base + c] += w * f64::from(p[c]);
                    }
                }
            }
        }
        let mut out = vec![0.0; g * g * 3];
        for (cy, cell) in rows.iter().enumerate() {
            for &(y, w) in cell {
                let ry = (y - y0) as usize;
                for cx in 0..g {
                    let src = (ry * g + cx) * 3;
                    let dst = (cy * g + cx) * 3;
                    for c in 0..3 {
                        out[dst + c] += w * row_cells[src + c];
                    }
                }
            }
        }
        for v in &mut out {
            *v /= 255.0;
        }
        Ok(out)
    }
}

/// Rounds a continuous span to whole pixels, at least one pixel wide.
fn pixel_span(lo: f64, hi: f64, limit: u32) -> (u32, u32) {
    let limit_f = f64::from(limit);
    let a = lo.round().clamp(0.0, limit_f - 1.0) as u32;
    let b = (hi.round().clamp(0.0, limit_f) as u32).max(a + 1);
    (a, b)
}

/// For each of `cells` equal sub-intervals of `[lo, hi)`, the covered pixels
/// and their normalized overlap weights.
fn cell_weights(lo: u32, hi: u32, cells: usize) -> Vec<Vec<(u32, f64)>> {
    let len = f64::from(hi - lo);
    let step = len / cells as f64;
    (0..cells)
        .map(|i| {
            let a = f64::from(lo) + step * i as f64;
            let b = f64::from(lo) + step * (i + 1) as f64;
            let first = a.floor() as u32;
            let last = (b.ceil() as u32).min(hi);
            (first..last)
                .filter_map(|p| {
                    let overlap = (b.min(f64::from(p + 1)) - a.max(f64::from(p))).max(0.0);
                    (overlap > 0.0).then_some((p, overlap / step))
                })
                .collect()
        })
        .collect()
}

/// Region features read from a file instead of computed from pixels. Lookup
/// returns the stored box for the scene with the highest overlap.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedFeatures {
    dim: usize,
    entries: HashMap<String, Vec<(BoundingBox, Vec<f64>)>>,
}

impl PrecomputedFeatures {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn insert(&mut self, scene_id: &str, bbox: BoundingBox, features: Vec<f64>) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: features.len(),
            });
        }
        self.entries
            .entry(scene_id.to_string())
            .or_default()
            .push((bbox, features));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `D_img N` followed by `N` lines of `scene_id x0 y0 x1 y1 f_1 .. f_D`.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| Error::parse(origin, 1, "header must be `D_img N`"))?;
        let [dim, count] = head[..] else {
            return Err(Error::parse(origin, 1, "header must be `D_img N`"));
        };
        if dim == 0 {
            return Err(Error::parse(origin, 1, "D_img must be positive"));
        }
        let mut out = Self::new(dim);
        let mut seen = 0;
        for (i, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 5 + dim {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("expected {} fields, found {}", 5 + dim, toks.len()),
                ));
            }
            let bbox: BoundingBox = toks[1..5]
                .join(" ")
                .parse()
                .map_err(|e: Error| Error::parse(origin, i + 1, e.to_string()))?;
            let feats = toks[5..]
                .iter()
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(origin, i + 1, "bad feature value"))?;
            out.insert(toks[0], bbox, feats)?;
            seen += 1;
        }
        if seen != count {
            return Err(Error::parse(
                origin,
                1,
                format!("header declares {count} rows, found {seen}"),
            ));
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort();
        let mut out = format!("{} {}\n", self.dim, self.len());
        for id in ids {
            for (bbox, feats) in &self.entries[id] {
                out.push_str(id);
                out.push(' ');
                out.push_str(&bbox.to_string());
                for v in feats {
                    out.push(' ');
                    out.push_str(&v.to_string());
                }
                out.push('\n');
            }
        }
        out
    }
}

impl RegionEncoder for PrecomputedFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, scene: &Scene, bbox: &BoundingBox) -> Result<Vec<f64>> {
        let rows = self
            .entries
            .get(&scene.id)
            .ok_or_else(|| Error::MissingFeatures(scene.id.clone()))?;
        let mut best = &rows[0];
        let mut best_iou = -1.0;
        for row in rows {
            let v = row.0.iou(bbox);
            if v > best_iou {
                best_iou = v;
                best = row;
            }
        }
        Ok(best.1.clone())
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Hashed bag of lowercase words, L2-normalized.
pub fn hash_description(description: &str, dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    let mut any = false;
    for word in description
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        let token = word.to_lowercase();
        out[(fnv1a(token.as_bytes()) % dim as u64) as usize] += 1.0;
        any = true;
    }
    if !any {
        return Err(Error::EmptyDescription);
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut out {
        *v /= norm;
    }
    Ok(out)
}

/// Sentence vector for `description` under `cfg.query_mode`.
///
/// `pool` supplies the alternative descriptions for [`QueryMode::Random`]; a
/// pool entry equal to `description` is never chosen.
pub fn encode_query<R: Rng + ?Sized>(
    description: &str,
    cfg: &EncoderConfig,
    pool: &[&str],
    rng: &mut R,
) -> Result<Vec<f64>> {
    match cfg.query_mode {
        QueryMode::None => Ok(vec![0.0; cfg.d_query]),
        QueryMode::Regular => hash_description(description, cfg.d_query),
        QueryMode::Random => {
            let others: Vec<&str> = pool.iter().copied().filter(|d| *d != description).collect();
            if others.is_empty() {
                return Err(Error::InvalidParameter(
                    "random query mode needs at least one other description".into(),
                ));
            }
            let pick = others[rng.random_range(0..others.len())];
            hash_description(pick, cfg.d_query)
        }
    }
}

/// Builds full state vectors from a region encoder plus a query vector that
/// stays fixed for the episode.
pub struct StateEncoder<'a> {
    region: &'a dyn RegionEncoder,
    cfg: EncoderConfig,
}

impl<'a> StateEncoder<'a> {
    pub fn new(region: &'a dyn RegionEncoder, cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        if region.dim() != cfg.d_img {
            return Err(Error::DimensionMismatch {
                expected: cfg.d_img,
                actual: region.dim(),
            });
        }
        Ok(Self { region, cfg })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.state_dim()
    }

    pub fn encode(&self, scene: &Scene, state: &EnvState, query: &[f64]) -> Result<StateEncoding> {
        encode_state(self.region, scene, state, query, &self.cfg)
    }
}

/// `[region || query || history]`.
pub fn encode_state(
    region: &dyn RegionEncoder,
    scene: &Scene,
    state: &EnvState,
    query: &[f64],
    cfg: &EncoderConfig,
) -> Result<StateEncoding> {
    if query.len() != cfg.d_query {
        return Err(Error::DimensionMismatch {
            expected: cfg.d_query,
            actual: query.len(),
        });
    }
    let mut values = region.encode(scene, &state.bbox)?;
    if values.len() != cfg.d_img {
        return Err(Error::DimensionMismatch {
            expected: cfg.d_img,
            actual: values.len(),
        });
    }
    values.reserve(cfg.d_query + HISTORY_DIM);
    values.extend_from_slice(query);
    values.extend(encode_history(&state.history));
    Ok(StateEncoding::new(values))
}
