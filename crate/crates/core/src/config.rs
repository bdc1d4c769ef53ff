//! `key = value` run configuration shared by every pipeline stage.
//!
//! One setting per line, `#` starts a comment. Unknown keys are errors. Defaults are
//! the module defaults; per-stage seeds are derived from the single root `seed`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gradcheck::GradCheckConfig;
use crate::metrics::EvalOptions;
use crate::pose::PoseConfig;
use crate::seed;
use crate::shape::{FitConfig, ShapeConfig, ShapeLossWeights};
use crate::synth::DatasetConfig;
use crate::ttt::TttConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub dataset: DatasetConfig,
    pub shape: ShapeConfig,
    pub fit: FitConfig,
    pub pose: PoseConfig,
    pub ttt: TttConfig,
    pub gradcheck: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            jobs: 1,
            dataset: DatasetConfig::default(),
            shape: ShapeConfig::default(),
            fit: FitConfig::default(),
            pose: PoseConfig::default(),
            ttt: TttConfig::default(),
            gradcheck: GradCheckConfig::default(),
        }
    }
}

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "data_dir",
    "out_dir",
    "jobs",
    "characters",
    "poses",
    "prior_poses",
    "pose_dim",
    "stylized_train",
    "test_characters",
    "test_poses",
    "code_dim",
    "parts",
    "shape_steps",
    "shape_lr",
    "code_lr",
    "shape_batch_characters",
    "shape_points",
    "shape_surface_points",
    "shape_pool",
    "query_sigma",
    "code_init_std",
    "weight_occupancy",
    "weight_part",
    "weight_inverse",
    "fit_iterations",
    "fit_batch",
    "fit_pool",
    "fit_lr",
    "pose_steps",
    "pose_lr",
    "pose_batch",
    "pose_points",
    "lambda_v",
    "lambda_e",
    "lambda_dr",
    "ttt_iterations",
    "ttt_lr",
    "ttt_pairs",
    "ttt_surface",
    "gradcheck_seeds",
    "gradcheck_coordinates",
    "gradcheck_step",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "jobs" => self.jobs = parse(key, v)?,
            "characters" => self.dataset.characters = parse(key, v)?,
            "poses" => self.dataset.poses = parse(key, v)?,
            "prior_poses" => self.dataset.prior_poses = parse(key, v)?,
            "pose_dim" => self.dataset.pose_dim = parse(key, v)?,
            "stylized_train" => self.dataset.stylized_train = parse(key, v)?,
            "test_characters" => self.dataset.test_characters = parse(key, v)?,
            "test_poses" => self.dataset.test_poses = parse(key, v)?,
            "code_dim" => self.shape.code_dim = parse(key, v)?,
            "parts" => self.shape.parts = parse(key, v)?,
            "shape_steps" => self.shape.steps = parse(key, v)?,
            "shape_lr" => self.shape.learning_rate = parse(key, v)?,
            "code_lr" => self.shape.code_learning_rate = parse(key, v)?,
            "shape_batch_characters" => self.shape.batch_characters = parse(key, v)?,
            "shape_points" => self.shape.points_per_character = parse(key, v)?,
            "shape_surface_points" => self.shape.surface_per_character = parse(key, v)?,
            "shape_pool" => self.shape.pool_size = parse(key, v)?,
            "query_sigma" => {
                self.shape.sigma = parse(key, v)?;
                self.fit.sigma = self.shape.sigma;
            }
            "code_init_std" => {
                self.shape.code_init_std = parse(key, v)?;
                self.fit.code_init_std = self.shape.code_init_std;
            }
            "weight_occupancy" => self.shape.weights.occupancy = parse(key, v)?,
            "weight_part" => self.shape.weights.part = parse(key, v)?,
            "weight_inverse" => self.shape.weights.inverse = parse(key, v)?,
            "fit_iterations" => self.fit.iterations = parse(key, v)?,
            "fit_batch" => self.fit.batch = parse(key, v)?,
            "fit_pool" => self.fit.pool_size = parse(key, v)?,
            "fit_lr" => self.fit.learning_rate = parse(key, v)?,
            "pose_steps" => self.pose.steps = parse(key, v)?,
            "pose_lr" => self.pose.learning_rate = parse(key, v)?,
            "pose_batch" => self.pose.batch = parse(key, v)?,
            "pose_points" => self.pose.points_per_item = parse(key, v)?,
            "lambda_v" => self.ttt.lambda_v = parse(key, v)?,
            "lambda_e" => self.ttt.lambda_e = parse(key, v)?,
            "lambda_dr" => self.ttt.lambda_dr = parse(key, v)?,
            "ttt_iterations" => self.ttt.iterations = parse(key, v)?,
            "ttt_lr" => self.ttt.learning_rate = parse(key, v)?,
            "ttt_pairs" => self.ttt.pairs_per_part = parse(key, v)?,
            "ttt_surface" => self.ttt.surface_samples = parse(key, v)?,
            "gradcheck_seeds" => self.gradcheck.seeds = parse(key, v)?,
            "gradcheck_coordinates" => self.gradcheck.coordinates = parse(key, v)?,
            "gradcheck_step" => self.gradcheck.step = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let s = match key {
            "seed" => self.seed.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "jobs" => self.jobs.to_string(),
            "characters" => self.dataset.characters.to_string(),
            "poses" => self.dataset.poses.to_string(),
            "prior_poses" => self.dataset.prior_poses.to_string(),
            "pose_dim" => self.dataset.pose_dim.to_string(),
            "stylized_train" => self.dataset.stylized_train.to_string(),
            "test_characters" => self.dataset.test_characters.to_string(),
            "test_poses" => self.dataset.test_poses.to_string(),
            "code_dim" => self.shape.code_dim.to_string(),
            "parts" => self.shape.parts.to_string(),
            "shape_steps" => self.shape.steps.to_string(),
            "shape_lr" => self.shape.learning_rate.to_string(),
            "code_lr" => self.shape.code_learning_rate.to_string(),
            "shape_batch_characters" => self.shape.batch_characters.to_string(),
            "shape_points" => self.shape.points_per_character.to_string(),
            "shape_surface_points" => self.shape.surface_per_character.to_string(),
            "shape_pool" => self.shape.pool_size.to_string(),
            "query_sigma" => self.shape.sigma.to_string(),
            "code_init_std" => self.shape.code_init_std.to_string(),
            "weight_occupancy" => self.shape.weights.occupancy.to_string(),
            "weight_part" => self.shape.weights.part.to_string(),
            "weight_inverse" => self.shape.weights.inverse.to_string(),
            "fit_iterations" => self.fit.iterations.to_string(),
            "fit_batch" => self.fit.batch.to_string(),
            "fit_pool" => self.fit.pool_size.to_string(),
            "fit_lr" => self.fit.learning_rate.to_string(),
            "pose_steps" => self.pose.steps.to_string(),
            "pose_lr" => self.pose.learning_rate.to_string(),
            "pose_batch" => self.pose.batch.to_string(),
            "pose_points" => self.pose.points_per_item.to_string(),
            "lambda_v" => self.ttt.lambda_v.to_string(),
            "lambda_e" => self.ttt.lambda_e.to_string(),
            "lambda_dr" => self.ttt.lambda_dr.to_string(),
            "ttt_iterations" => self.ttt.iterations.to_string(),
            "ttt_lr" => self.ttt.learning_rate.to_string(),
            "ttt_pairs" => self.ttt.pairs_per_part.to_string(),
            "ttt_surface" => self.ttt.surface_samples.to_string(),
            "gradcheck_seeds" => self.gradcheck.seeds.to_string(),
            "gradcheck_coordinates" => self.gradcheck.coordinates.to_string(),
            "gradcheck_step" => self.gradcheck.step.to_string(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        };
        Ok(s)
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.ttt;
        if [t.lambda_v, t.lambda_e, t.lambda_dr].iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        let w: ShapeLossWeights = self.shape.weights;
        if [w.occupancy, w.part, w.inverse].iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("shape loss weights must be non-negative".into()));
        }
        let rates = [self.shape.learning_rate, self.shape.code_learning_rate, self.fit.learning_rate, self.pose.learning_rate, t.learning_rate];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.dataset.pose_dim == 0 || self.shape.code_dim == 0 || self.shape.parts == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        Ok(())
    }

    // Stage configs with seeds split from the root.

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: seed::derive(self.seed, "gen-data"),
            ..self.dataset.clone()
        }
    }

    pub fn shape_config(&self) -> ShapeConfig {
        ShapeConfig {
            seed: seed::derive(self.seed, "train-shape"),
            ..self.shape.clone()
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            seed: seed::derive(self.seed, "fit-shape"),
            ..self.fit.clone()
        }
    }

    pub fn pose_config(&self) -> PoseConfig {
        PoseConfig {
            seed: seed::derive(self.seed, "train-pose"),
            ..self.pose.clone()
        }
    }

    pub fn ttt_config(&self) -> TttConfig {
        TttConfig {
            seed: seed::derive(self.seed, "ttt"),
            ..self.ttt.clone()
        }
    }

    pub fn gradcheck_config(&self) -> GradCheckConfig {
        GradCheckConfig {
            seed: seed::derive(self.seed, "gradcheck"),
            ..self.gradcheck.clone()
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            fit: self.fit.clone(),
            ttt_surface_samples: self.ttt.surface_samples,
            jobs: self.jobs,
            seed: seed::derive(self.seed, "eval"),
        }
    }
}
