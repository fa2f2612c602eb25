//! The person-search decision process: reset to the full image, transform the
//! box one action at a time, and score each move by its change in overlap with
//! the hidden ground truth.

use crate::error::{Error, Result};
use crate::geometry::{apply_action, Action, ActionParams, BoundingBox};
use crate::scenegen::Scene;

/// Number of past actions kept in the state.
pub const HISTORY_LEN: usize = 10;

/// Overlap required for a terminate to count as a find.
pub const SUCCESS_IOU: f64 = 0.5;

pub const TERMINATE_SUCCESS_REWARD: f64 = 4.0;
pub const TERMINATE_FAILURE_REWARD: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub actions: ActionParams,
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            actions: ActionParams::default(),
            max_steps: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub scene_id: String,
    pub bbox: BoundingBox,
    /// Most recent action first, at most [`HISTORY_LEN`] entries.
    pub history: Vec<Action>,
    pub step_count: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: f64,
    pub terminal: bool,
    pub iou_before: f64,
    pub iou_after: f64,
}

/// Sign reward for geometric actions; fixed payoff for terminate depending on
/// whether the final overlap reaches [`SUCCESS_IOU`].
pub fn compute_reward(iou_before: f64, iou_after: f64, action: Action) -> f64 {
    if action.is_terminate() {
        if iou_after >= SUCCESS_IOU {
            TERMINATE_SUCCESS_REWARD
        } else {
            TERMINATE_FAILURE_REWARD
        }
    } else {
        let delta = iou_after - iou_before;
        if delta > 0.0 {
            1.0
        } else if delta < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Holds one scene and its ground truth; states are plain values passed in
/// and out, so an environment can be shared by many episodes.
#[derive(Debug, Clone, Copy)]
pub struct Environment<'a> {
    scene: &'a Scene,
    config: EnvConfig,
}

impl<'a> Environment<'a> {
    pub fn new(scene: &'a Scene, config: EnvConfig) -> Result<Self> {
        config.actions.validate()?;
        if config.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        if !scene.ground_truth.is_inside(scene.extent) {
            return Err(Error::BoxOutsideImage {
                bbox: scene.ground_truth.to_string(),
                width: scene.extent.width(),
                height: scene.extent.height(),
            });
        }
        Ok(Self { scene, config })
    }

    pub fn scene(&self) -> &'a Scene {
        self.scene
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reset(&self) -> EnvState {
        EnvState {
            scene_id: self.scene.id.clone(),
            bbox: BoundingBox::full(self.scene.extent),
            history: Vec::with_capacity(HISTORY_LEN),
            step_count: 0,
            done: false,
        }
    }

    pub fn iou(&self, bbox: &BoundingBox) -> f64 {
        bbox.iou(&self.scene.ground_truth)
    }

    pub fn step(&self, state: &EnvState, action: Action) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::EpisodeFinished);
        }
        let bbox = apply_action(
            &state.bbox,
            action,
            self.scene.extent,
            &self.config.actions,
        );
        let iou_before = self.iou(&state.bbox);
        let iou_after = self.iou(&bbox);
        let reward = compute_reward(iou_before, iou_after, action);

        let mut history = Vec::with_capacity(HISTORY_LEN);
        history.push(action);
        history.extend(state.history.iter().take(HISTORY_LEN - 1));
        let step_count = state.step_count + 1;
        let terminal = action.is_terminate() || step_count >= self.config.max_steps;

        Ok(StepOutcome {
            next_state: EnvState {
                scene_id: state.scene_id.clone(),
                bbox,
                history,
                step_count,
                done: terminal,
            },
            reward,
            terminal,
            iou_before,
            iou_after,
        })
    }
}

/// One line of the episode trace: `step action_name iou reward`.
pub fn trace_line(step: usize, action: Action, iou: f64, reward: f64) -> String {
    format!("{step} {} {iou:.4} {reward}", action.name())
}
