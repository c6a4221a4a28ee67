//! Line-based `key = value` experiment configuration.

use std::fmt::{self, Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;
use ulab::estimator::{CriticConfig, CriticUpdate};
use ulab::moments::MeasurePoint;
use ulab::nn::{MlpSpec, NormKind, SgdConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key '{key}' given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("line {line}: '{key}' expects {expected}, got '{value}'")]
    Type { line: usize, key: String, expected: &'static str, value: String },
    #[error("line {line}: missing required key '{key}' for mode {mode}")]
    Missing { line: usize, key: String, mode: Mode },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Moments,
    Emdist,
    Bounds,
    OracleCheck,
}

impl Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Train => "train",
            Mode::Moments => "moments",
            Mode::Emdist => "emdist",
            Mode::Bounds => "bounds",
            Mode::OracleCheck => "oracle-check",
        })
    }
}

impl FromStr for Mode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "train" => Ok(Mode::Train),
            "moments" => Ok(Mode::Moments),
            "emdist" => Ok(Mode::Emdist),
            "bounds" => Ok(Mode::Bounds),
            "oracle-check" => Ok(Mode::OracleCheck),
            _ => Err(()),
        }
    }
}

/// Normalization entry of a per-layer override list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerNorm {
    /// Whatever the current variant uses.
    Variant,
    Fixed(NormKind),
}

impl Display for LayerNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerNorm::Variant => f.write_str("variant"),
            LayerNorm::Fixed(k) => k.fmt(f),
        }
    }
}

impl FromStr for LayerNorm {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        if s == "variant" {
            Ok(LayerNorm::Variant)
        } else {
            s.parse().map(LayerNorm::Fixed).map_err(|_| ())
        }
    }
}

/// Where the emdist mode takes its snapshot pairs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmSource {
    /// Consecutive training checkpoints.
    Checkpoints,
    /// A 1-D Gaussian against shifted copies of itself.
    ShiftGrid,
}

impl Display for EmSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmSource::Checkpoints => "checkpoints",
            EmSource::ShiftGrid => "shift-grid",
        })
    }
}

impl FromStr for EmSource {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "checkpoints" => Ok(EmSource::Checkpoints),
            "shift-grid" => Ok(EmSource::ShiftGrid),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    /// Variants trained side by side from one initialization.
    pub variants: Vec<NormKind>,
    /// Optional per-layer override; empty means every layer follows the variant.
    pub layer_norms: Vec<LayerNorm>,
}

impl NetworkConfig {
    pub fn spec(&self, variant: NormKind) -> MlpSpec {
        let mut spec = MlpSpec::uniform(784, self.hidden.clone(), 10, variant);
        for (slot, over) in spec.norms.iter_mut().zip(&self.layer_norms) {
            if let LayerNorm::Fixed(k) = over {
                *slot = *k;
            }
        }
        spec
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    /// Use only the first `n` training / test samples (0 = all).
    pub train_limit: usize,
    pub test_limit: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentConfig {
    /// Block whose outputs are tracked; `None` means the last hidden block.
    pub layer: Option<usize>,
    pub point: MeasurePoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmdistConfig {
    pub source: EmSource,
    pub layers: Option<Vec<usize>>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Inputs the critic trains on / is evaluated on (0 = all).
    pub train_samples: usize,
    pub test_samples: usize,
    pub shift_grid: Vec<f64>,
    pub grid_samples: usize,
    pub critic: CriticConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsConfig {
    pub sandwich_instances: usize,
    pub sample_size: usize,
    pub dims: Vec<usize>,
    pub lipschitz_pairs: usize,
    pub unitized_instances: usize,
    pub unbounded_c_primes: Vec<f64>,
    pub unbounded_n: usize,
    pub unbounded_dim: usize,
    pub oracle_instances: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub out_dir: PathBuf,
    /// Write wall-clock columns; off keeps CSVs byte-identical across runs.
    pub record_timing: bool,
    pub network: NetworkConfig,
    pub sgd: SgdConfig<f64>,
    pub data: DataConfig,
    pub moments: MomentConfig,
    pub emdist: EmdistConfig,
    pub bounds: BoundsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Train,
            seed: 1,
            epochs: 10,
            batch_size: 128,
            out_dir: PathBuf::from("runs/default"),
            record_timing: false,
            network: NetworkConfig {
                hidden: MlpSpec::desk(NormKind::None).hidden,
                variants: vec![NormKind::BatchNorm, NormKind::Unitization],
                layer_norms: Vec::new(),
            },
            sgd: SgdConfig::default(),
            data: DataConfig { dir: None, train_limit: 0, test_limit: 0 },
            moments: MomentConfig { layer: None, point: MeasurePoint::PostAffine },
            emdist: EmdistConfig {
                source: EmSource::Checkpoints,
                layers: None,
                checkpoint_dir: None,
                train_samples: 10_000,
                test_samples: 0,
                shift_grid: vec![0.0, 0.5, 1.0, 2.0, 4.0],
                grid_samples: 4096,
                critic: CriticConfig::default(),
            },
            bounds: BoundsConfig {
                sandwich_instances: 100,
                sample_size: 64,
                dims: vec![1, 2, 8],
                lipschitz_pairs: 10_000,
                unitized_instances: 50,
                unbounded_c_primes: vec![1.0, 10.0, 100.0],
                unbounded_n: 256,
                unbounded_dim: 2,
                oracle_instances: 100,
            },
        }
    }
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn point_name(p: MeasurePoint) -> &'static str {
    match p {
        MeasurePoint::PreAffine => "pre-affine",
        MeasurePoint::PostAffine => "post-affine",
    }
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

impl Entry<'_> {
    fn bad(&self, expected: &'static str) -> ConfigError {
        ConfigError::Type { line: self.line, key: self.key.into(), expected, value: self.value.into() }
    }

    fn parse<T: FromStr>(&self, expected: &'static str) -> Result<T, ConfigError> {
        self.value.parse().map_err(|_| self.bad(expected))
    }

    fn list<T: FromStr>(&self, expected: &'static str) -> Result<Vec<T>, ConfigError> {
        if self.value.is_empty() {
            return Ok(Vec::new());
        }
        self.value.split(',').map(|s| s.trim().parse().map_err(|_| self.bad(expected))).collect()
    }

    fn optional<T: FromStr>(&self, expected: &'static str) -> Result<Option<T>, ConfigError> {
        if self.value == "auto" {
            Ok(None)
        } else {
            self.parse(expected).map(Some)
        }
    }

    fn path(&self) -> Option<PathBuf> {
        (!self.value.is_empty()).then(|| PathBuf::from(self.value))
    }
}

impl ExperimentConfig {
    /// Parses configuration text for `mode`; missing keys keep their defaults.
    pub fn parse(text: &str, mode: Mode) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig { mode, ..Default::default() };
        let mut seen: Vec<&str> = Vec::new();
        let mut critic_rho = None;
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            last_line = line;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| ConfigError::Syntax { line, text: content.into() })?;
            if seen.contains(&key) {
                return Err(ConfigError::DuplicateKey { line, key: key.into() });
            }
            seen.push(key);
            let e = Entry { line, key, value };
            match key {
                "mode" => {
                    let m: Mode = e.parse("a mode name")?;
                    if m != mode {
                        return Err(ConfigError::Invalid { line, message: format!("file is for mode {m}, not {mode}") });
                    }
                }
                "seed" => cfg.seed = e.parse("an unsigned integer")?,
                "epochs" => cfg.epochs = e.parse("an unsigned integer")?,
                "batch_size" => cfg.batch_size = e.parse("a positive integer")?,
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "record_timing" => cfg.record_timing = e.parse("true or false")?,
                "hidden" => cfg.network.hidden = e.list("a comma-separated list of widths")?,
                "variants" => cfg.network.variants = e.list("a list of none, bn, unitization")?,
                "layer_norms" => cfg.network.layer_norms = e.list("a list of variant, none, bn, unitization")?,
                "lr" => cfg.sgd.lr = e.parse("a real number")?,
                "momentum" => cfg.sgd.momentum_coef = e.parse("a real number")?,
                "nesterov" => cfg.sgd.nesterov = e.parse("true or false")?,
                "weight_decay" => cfg.sgd.weight_decay = e.parse("a real number")?,
                "milestones" => cfg.sgd.milestones = e.list("a list of epochs")?,
                "decay_factor" => cfg.sgd.decay_factor = e.parse("a real number")?,
                "data_dir" => cfg.data.dir = e.path(),
                "train_limit" => cfg.data.train_limit = e.parse("an unsigned integer")?,
                "test_limit" => cfg.data.test_limit = e.parse("an unsigned integer")?,
                "moment_layer" => cfg.moments.layer = e.optional("a block index or auto")?,
                "moment_point" => {
                    cfg.moments.point = match value {
                        "pre-affine" => MeasurePoint::PreAffine,
                        "post-affine" => MeasurePoint::PostAffine,
                        _ => return Err(e.bad("pre-affine or post-affine")),
                    }
                }
                "emdist_source" => cfg.emdist.source = e.parse("checkpoints or shift-grid")?,
                "emdist_layers" => {
                    cfg.emdist.layers = if value == "auto" { None } else { Some(e.list("a list of block indices")?) }
                }
                "checkpoint_dir" => cfg.emdist.checkpoint_dir = e.path(),
                "emdist_train_samples" => cfg.emdist.train_samples = e.parse("an unsigned integer")?,
                "emdist_test_samples" => cfg.emdist.test_samples = e.parse("an unsigned integer")?,
                "shift_grid" => cfg.emdist.shift_grid = e.list("a list of real numbers")?,
                "grid_samples" => cfg.emdist.grid_samples = e.parse("a positive integer")?,
                "critic_iterations" => cfg.emdist.critic.iterations = e.parse("a positive integer")?,
                "critic_batch_size" => cfg.emdist.critic.batch_size = e.parse("a positive integer")?,
                "critic_clip" => cfg.emdist.critic.clip = e.parse("a real number")?,
                "critic_lr" => cfg.emdist.critic.lr = e.parse("a real number")?,
                "critic_update" => {
                    cfg.emdist.critic.update = match value {
                        "plain" => CriticUpdate::Plain,
                        "rmsprop" => CriticUpdate::RmsProp { rho: 0.9 },
                        _ => return Err(e.bad("plain or rmsprop")),
                    }
                }
                "critic_rho" => critic_rho = Some((line, e.parse::<f64>("a real number")?)),
                "critic_hidden" => cfg.emdist.critic.hidden_widths = e.list("a list of widths")?,
                "critic_sigmoid" => cfg.emdist.critic.sigmoid_head = e.parse("true or false")?,
                "critic_seed" => cfg.emdist.critic.seed = e.parse("an unsigned integer")?,
                "sandwich_instances" => cfg.bounds.sandwich_instances = e.parse("an unsigned integer")?,
                "sample_size" => cfg.bounds.sample_size = e.parse("a positive integer")?,
                "dims" => cfg.bounds.dims = e.list("a list of dimensions")?,
                "lipschitz_pairs" => cfg.bounds.lipschitz_pairs = e.parse("an unsigned integer")?,
                "unitized_instances" => cfg.bounds.unitized_instances = e.parse("an unsigned integer")?,
                "unbounded_c_primes" => cfg.bounds.unbounded_c_primes = e.list("a list of real numbers")?,
                "unbounded_n" => cfg.bounds.unbounded_n = e.parse("a positive integer")?,
                "unbounded_dim" => cfg.bounds.unbounded_dim = e.parse("a positive integer")?,
                "oracle_instances" => cfg.bounds.oracle_instances = e.parse("an unsigned integer")?,
                _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
            }
        }
        if let Some((line, rho)) = critic_rho {
            match &mut cfg.emdist.critic.update {
                CriticUpdate::RmsProp { rho: r } => *r = rho,
                CriticUpdate::Plain => {
                    return Err(ConfigError::Invalid { line, message: "critic_rho needs critic_update = rmsprop".into() })
                }
            }
        }
        cfg.validate(last_line + 1)?;
        Ok(cfg)
    }

    pub fn load(path: &Path, mode: Mode) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text, mode)
    }

    /// Checks mode-required fields; `end` is the line reported for absent keys.
    pub fn validate(&self, end: usize) -> Result<(), ConfigError> {
        let invalid = |message: String| ConfigError::Invalid { line: end, message };
        let needs_data = match self.mode {
            Mode::Train | Mode::Moments => true,
            Mode::Emdist => self.emdist.source == EmSource::Checkpoints,
            Mode::Bounds | Mode::OracleCheck => false,
        };
        if needs_data && self.data.dir.is_none() {
            return Err(ConfigError::Missing { line: end, key: "data_dir".into(), mode: self.mode });
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive".into()));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(invalid("hidden must list at least one positive width".into()));
        }
        if self.network.variants.is_empty() {
            return Err(invalid("variants must name at least one normalization".into()));
        }
        if !self.network.layer_norms.is_empty() && self.network.layer_norms.len() != self.network.hidden.len() {
            return Err(invalid(format!(
                "layer_norms has {} entries for {} hidden layers",
                self.network.layer_norms.len(),
                self.network.hidden.len()
            )));
        }
        let blocks = self.network.hidden.len();
        if let Some(l) = self.moments.layer {
            if l >= blocks {
                return Err(invalid(format!("moment_layer {l} out of range for {blocks} blocks")));
            }
        }
        if let Some(ls) = &self.emdist.layers {
            if ls.is_empty() || ls.iter().any(|&l| l >= blocks) {
                return Err(invalid(format!("emdist_layers must be non-empty indices below {blocks}")));
            }
        }
        if self.emdist.source == EmSource::ShiftGrid && (self.emdist.shift_grid.is_empty() || self.emdist.grid_samples < 2) {
            return Err(invalid("shift-grid source needs a non-empty shift_grid and grid_samples ≥ 2".into()));
        }
        self.sgd.validate().map_err(|e| invalid(e.to_string()))?;
        self.emdist.critic.validate().map_err(|e| invalid(e.to_string()))?;
        let b = &self.bounds;
        if b.sample_size == 0 || b.dims.is_empty() || b.dims.contains(&0) || b.unbounded_n == 0 || b.unbounded_dim == 0 {
            return Err(invalid("bound sample sizes and dimensions must be positive".into()));
        }
        if b.sample_size > ulab::transport::MAX_ASSIGNMENT_SIZE || b.unbounded_n > ulab::transport::MAX_ASSIGNMENT_SIZE {
            return Err(invalid(format!("bound sample sizes are capped at {}", ulab::transport::MAX_ASSIGNMENT_SIZE)));
        }
        if b.unbounded_c_primes.iter().any(|&c| !(c > 0.0)) {
            return Err(invalid("unbounded_c_primes must be positive".into()));
        }
        Ok(())
    }

    /// Text that [`ExperimentConfig::parse`] maps back to this configuration.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let c = &self.emdist.critic;
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("mode", self.mode.to_string());
        put("seed", self.seed.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("record_timing", self.record_timing.to_string());
        put("hidden", join(&self.network.hidden));
        put("variants", join(&self.network.variants));
        put("layer_norms", join(&self.network.layer_norms));
        put("lr", self.sgd.lr.to_string());
        put("momentum", self.sgd.momentum_coef.to_string());
        put("nesterov", self.sgd.nesterov.to_string());
        put("weight_decay", self.sgd.weight_decay.to_string());
        put("milestones", join(&self.sgd.milestones));
        put("decay_factor", self.sgd.decay_factor.to_string());
        put("data_dir", opt_path(&self.data.dir));
        put("train_limit", self.data.train_limit.to_string());
        put("test_limit", self.data.test_limit.to_string());
        put("moment_layer", self.moments.layer.map_or("auto".into(), |l| l.to_string()));
        put("moment_point", point_name(self.moments.point).into());
        put("emdist_source", self.emdist.source.to_string());
        put("emdist_layers", self.emdist.layers.as_ref().map_or("auto".into(), |l| join(l)));
        put("checkpoint_dir", opt_path(&self.emdist.checkpoint_dir));
        put("emdist_train_samples", self.emdist.train_samples.to_string());
        put("emdist_test_samples", self.emdist.test_samples.to_string());
        put("shift_grid", join(&self.emdist.shift_grid));
        put("grid_samples", self.emdist.grid_samples.to_string());
        put("critic_iterations", c.iterations.to_string());
        put("critic_batch_size", c.batch_size.to_string());
        put("critic_clip", c.clip.to_string());
        put("critic_lr", c.lr.to_string());
        match c.update {
            CriticUpdate::Plain => put("critic_update", "plain".into()),
            CriticUpdate::RmsProp { rho } => {
                put("critic_update", "rmsprop".into());
                put("critic_rho", rho.to_string());
            }
        }
        put("critic_hidden", join(&c.hidden_widths));
        put("critic_sigmoid", c.sigmoid_head.to_string());
        put("critic_seed", c.seed.to_string());
        let b = &self.bounds;
        put("sandwich_instances", b.sandwich_instances.to_string());
        put("sample_size", b.sample_size.to_string());
        put("dims", join(&b.dims));
        put("lipschitz_pairs", b.lipschitz_pairs.to_string());
        put("unitized_instances", b.unitized_instances.to_string());
        put("unbounded_c_primes", join(&b.unbounded_c_primes));
        put("unbounded_n", b.unbounded_n.to_string());
        put("unbounded_dim", b.unbounded_dim.to_string());
        put("oracle_instances", b.oracle_instances.to_string());
        s
    }

    pub fn moment_layer(&self) -> usize {
        self.moments.layer.unwrap_or(self.network.hidden.len() - 1)
    }

    pub fn emdist_layers(&self) -> Vec<usize> {
        self.emdist.layers.clone().unwrap_or_else(|| (0..self.network.hidden.len()).collect())
    }
}
