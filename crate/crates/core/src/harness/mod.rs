//! Synthetic scenes, metrics, file formats and the experiment driver.

pub mod experiment;
pub mod io;
pub mod metrics;
pub mod scene;

pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport};
pub use metrics::{psnr, PsnrReport};
pub use scene::{synth_scene, SceneKind, SyntheticSceneSpec};
