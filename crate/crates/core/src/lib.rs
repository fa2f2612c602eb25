//! Reinforcement-learning person search on synthetic scenes.
//!
//! An agent starts from a box covering the whole image and reshapes it one
//! action at a time until it declares the described person found. The
//! crate provides the box geometry and the decision process ([`geometry`],
//! [`env`]), the state features ([`encoder`]), a Q-network with experience
//! replay ([`qnet`], [`replay`]), training and evaluation ([`agent`]), a
//! synthetic scene generator ([`scenegen`]) and ground-truth reference
//! policies ([`oracle`]).

pub mod agent;
pub mod encoder;
pub mod env;
pub mod error;
pub mod geometry;
pub mod oracle;
pub mod qnet;
pub mod replay;
pub mod scenegen;

pub use agent::{evaluate, select_action, train, AblationMode, EpisodeRecord, Metrics, TrainConfig};
pub use encoder::{EncoderConfig, PooledPixels, QueryMode, StateEncoder, StateEncoding};
pub use env::{compute_reward, EnvConfig, EnvState, Environment, StepOutcome};
pub use error::{Error, Result};
pub use geometry::{apply_action, clamp, iou, Action, ActionParams, BoundingBox, ImageExtent};
pub use qnet::{OptimState, QNetwork};
pub use replay::{ReplayBuffer, Transition};
pub use scenegen::{generate_dataset, generate_scene, Scene, SceneParams};
