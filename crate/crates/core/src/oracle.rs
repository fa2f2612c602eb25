//! Reference policies that read the ground truth directly. They are test
//! fixtures for the environment, not agents.

use crate::env::SUCCESS_IOU;
use crate::error::{Error, Result};
use crate::geometry::{apply_action, Action, ActionParams, BoundingBox};
use crate::scenegen::Scene;

pub const MAX_EXHAUSTIVE_HORIZON: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub actions: Vec<Action>,
    /// IoU after each action, terminate included.
    pub ious: Vec<f64>,
    pub reached: bool,
    pub steps: usize,
}

impl OracleResult {
    pub fn final_iou(&self) -> f64 {
        *self.ious.last().expect("rollout always terminates")
    }
}

/// Hill-climbs on true IoU from the full-image box, taking the best strictly
/// improving geometric action until none improves, then terminates. The
/// terminate counts toward `max_steps`.
pub fn greedy_rollout(scene: &Scene, max_steps: usize, params: &ActionParams) -> OracleResult {
    let gt = scene.ground_truth;
    let mut bbox = BoundingBox::full(scene.extent);
    let mut current = bbox.iou(&gt);
    let mut actions = Vec::new();
    let mut ious = Vec::new();

    while actions.len() + 1 < max_steps {
        let best = Action::GEOMETRIC
            .iter()
            .map(|&a| {
                let b = apply_action(&bbox, a, scene.extent, params);
                (a, b, b.iou(&gt))
            })
            .fold(None, |best: Option<(Action, BoundingBox, f64)>, cand| match best {
                Some(b) if b.2 >= cand.2 => Some(b),
                _ => Some(cand),
            })
            .expect("eight candidates");
        if best.2 <= current {
            break;
        }
        actions.push(best.0);
        ious.push(best.2);
        bbox = best.1;
        current = best.2;
    }
    actions.push(Action::Terminate);
    ious.push(current);
    OracleResult {
        steps: actions.len(),
        reached: current >= SUCCESS_IOU,
        actions,
        ious,
    }
}

/// Best strictly improving sequence of at most `depth` geometric actions from
/// `bbox`, preferring shorter sequences among equal IoUs.
fn best_sequence(
    scene: &Scene,
    bbox: BoundingBox,
    depth: usize,
    params: &ActionParams,
) -> (f64, Vec<Action>, BoundingBox) {
    let mut best = (bbox.iou(&scene.ground_truth), Vec::new(), bbox);
    if depth == 0 {
        return best;
    }
    for &a in &Action::GEOMETRIC {
        let next = apply_action(&bbox, a, scene.extent, params);
        let (v, mut seq, end) = best_sequence(scene, next, depth - 1, params);
        if v > best.0 {
            seq.insert(0, a);
            best = (v, seq, end);
        }
    }
    best
}

/// Goal-directed variant of [`greedy_rollout`]: terminates as soon as the
/// success threshold is met, and when no single action improves IoU it
/// searches sequences of up to `lookahead` actions for one that does.
/// With `lookahead = 1` it differs from [`greedy_rollout`] only in stopping
/// at the threshold.
pub fn lookahead_rollout(
    scene: &Scene,
    max_steps: usize,
    lookahead: usize,
    params: &ActionParams,
) -> OracleResult {
    let gt = scene.ground_truth;
    let mut bbox = BoundingBox::full(scene.extent);
    let mut current = bbox.iou(&gt);
    let mut actions = Vec::new();
    let mut ious = Vec::new();

    'search: while current < SUCCESS_IOU {
        for depth in 1..=lookahead {
            let (v, seq, _) = best_sequence(scene, bbox, depth, params);
            if v > current && actions.len() + seq.len() < max_steps {
                for a in seq {
                    bbox = apply_action(&bbox, a, scene.extent, params);
                    actions.push(a);
                    ious.push(bbox.iou(&gt));
                }
                current = v;
                continue 'search;
            }
        }
        break;
    }
    actions.push(Action::Terminate);
    ious.push(current);
    OracleResult {
        steps: actions.len(),
        reached: current >= SUCCESS_IOU,
        actions,
        ious,
    }
}

/// Best IoU reachable with at most `horizon` geometric actions (stopping
/// early is allowed), by enumerating all `8^horizon` sequences.
pub fn exhaustive_best(scene: &Scene, horizon: usize, params: &ActionParams) -> Result<f64> {
    if horizon > MAX_EXHAUSTIVE_HORIZON {
        return Err(Error::HorizonTooLarge(horizon));
    }
    fn search(scene: &Scene, bbox: BoundingBox, depth: usize, params: &ActionParams) -> f64 {
        let here = bbox.iou(&scene.ground_truth);
        if depth == 0 {
            return here;
        }
        Action::GEOMETRIC.iter().fold(here, |best, &a| {
            let next = apply_action(&bbox, a, scene.extent, params);
            best.max(search(scene, next, depth - 1, params))
        })
    }
    Ok(search(scene, BoundingBox::full(scene.extent), horizon, params))
}
