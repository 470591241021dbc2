//! Tunables shared by the pipeline commands: an optional TOML file with
//! command-line flags layered on top.

use std::path::Path;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use htdetect::explain::{DEFAULT_IG_STEPS, DEFAULT_RULE_CLAUSES};
use htdetect::features::LocalityConfig;
use htdetect::model::TrainConfig;
use htdetect::postprocess::{C2Mode, PostProcessConfig};

use crate::error::CliError;

pub const DEFAULT_LOCALITY: usize = 7;

/// Every tunable the commands use, echoed verbatim into their reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub locality: usize,
    pub seed: u64,
    pub ig_steps: usize,
    pub max_clauses: usize,
    pub train: TrainConfig,
    pub postprocess: PostProcessConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            locality: DEFAULT_LOCALITY,
            seed: 0,
            ig_steps: DEFAULT_IG_STEPS,
            max_clauses: DEFAULT_RULE_CLAUSES,
            train: TrainConfig::default(),
            postprocess: PostProcessConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum C2Flag {
    AtLeast,
    AtMost,
}

impl From<C2Flag> for C2Mode {
    fn from(f: C2Flag) -> Self {
        match f {
            C2Flag::AtLeast => C2Mode::AtLeast,
            C2Flag::AtMost => C2Mode::AtMost,
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct TuningFlags {
    /// TOML file with any of the settings below; flags win over it.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Gates collected around each wire [default: 7]
    #[arg(long)]
    pub locality: Option<usize>,
    /// Seed for every random choice [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Integration steps per attribution [default: 128]
    #[arg(long)]
    pub ig_steps: Option<usize>,
    /// Clauses in a rendered rule [default: 5]
    #[arg(long)]
    pub max_clauses: Option<usize>,
    /// Adam learning rate [default: 0.005]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed nodes per mini-batch [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epoch cap [default: 500]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping [default: 20]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Share of each class held out for validation [default: 0.2]
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Width of the first attention layer [default: 64]
    #[arg(long)]
    pub hidden1: Option<usize>,
    /// Width of the second attention layer [default: 64]
    #[arg(long)]
    pub hidden2: Option<usize>,
    /// Inverse-frequency class weights in the loss [default: true]
    #[arg(long)]
    pub balanced: Option<bool>,
    /// Multiplier N of the first switching condition [default: 2]
    #[arg(long)]
    pub multiplier: Option<f64>,
    /// Threshold T_h of the second switching condition [default: 0.1]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Attributions kept per wire [default: 10]
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Direction of the second switching condition [default: at-least]
    #[arg(long, value_enum)]
    pub c2_mode: Option<C2Flag>,
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl TuningFlags {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<Settings, CliError> {
        let mut s = match &self.config {
            Some(path) => load_settings(path)?,
            None => Settings::default(),
        };
        set(&mut s.locality, self.locality);
        set(&mut s.seed, self.seed);
        set(&mut s.ig_steps, self.ig_steps);
        set(&mut s.max_clauses, self.max_clauses);
        set(&mut s.train.learning_rate, self.lr);
        set(&mut s.train.batch_size, self.batch_size);
        set(&mut s.train.max_epochs, self.max_epochs);
        set(&mut s.train.patience, self.patience);
        set(&mut s.train.validation_fraction, self.val_fraction);
        set(&mut s.train.hidden1, self.hidden1);
        set(&mut s.train.hidden2, self.hidden2);
        set(&mut s.train.balanced, self.balanced);
        set(&mut s.postprocess.multiplier, self.multiplier);
        set(&mut s.postprocess.threshold, self.threshold);
        set(&mut s.postprocess.top_n, self.top_n);
        set(&mut s.postprocess.c2_mode, self.c2_mode.map(C2Mode::from));
        s.train.seed = s.seed;
        if s.locality == 0 {
            return Err(CliError::input("locality must be at least 1"));
        }
        if s.ig_steps == 0 {
            return Err(CliError::input("ig-steps must be at least 1"));
        }
        if s.max_clauses == 0 {
            return Err(CliError::input("max-clauses must be at least 1"));
        }
        s.train.validate()?;
        s.postprocess.validate()?;
        Ok(s)
    }

    /// Whether the locality was pinned by a flag or the config file.
    pub fn explicit_locality(&self) -> Result<Option<usize>, CliError> {
        if self.locality.is_some() {
            return Ok(self.locality);
        }
        let Some(path) = &self.config else { return Ok(None) };
        let text = read_text(path)?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Ok(table.get("locality").and_then(|v| v.as_integer()).map(|v| v as usize))
    }
}

impl Settings {
    pub fn locality_config(&self) -> LocalityConfig {
        LocalityConfig::new(self.locality)
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_settings(path: &Path) -> Result<Settings, CliError> {
    toml::from_str(&read_text(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}
