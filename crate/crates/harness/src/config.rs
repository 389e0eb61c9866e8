//! Experiment configuration: a flat `key = value` text format with typed
//! parsing, per-experiment defaults, and strict rejection of unknown keys.
//! A resolved config serializes to a canonical form whose SHA-256 prefix is
//! embedded in every output file, so any record can be traced back to the
//! exact settings that produced it.

use std::fmt;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Which optimizee family a run trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    LeastSquares,
    H1,
    H2,
    Mnist,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::LeastSquares => "least_squares",
            ExperimentId::H1 => "h1",
            ExperimentId::H2 => "h2",
            ExperimentId::Mnist => "mnist",
        }
    }

    fn parse(s: &str) -> Result<ExperimentId> {
        Ok(match s {
            "least_squares" => ExperimentId::LeastSquares,
            "h1" => ExperimentId::H1,
            "h2" => ExperimentId::H2,
            "mnist" => ExperimentId::Mnist,
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown experiment `{other}` (expected least_squares, h1, h2, or mnist)"
                )))
            }
        })
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which update rule drives the optimizee.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerId {
    Gd,
    Sgd,
    NaCfgd,
    AtCfgd,
    L2o,
    L2oCfgd,
}

impl OptimizerId {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerId::Gd => "gd",
            OptimizerId::Sgd => "sgd",
            OptimizerId::NaCfgd => "na_cfgd",
            OptimizerId::AtCfgd => "at_cfgd",
            OptimizerId::L2o => "l2o",
            OptimizerId::L2oCfgd => "l2o_cfgd",
        }
    }

    /// True for the two meta-learned optimizers, which need a checkpoint to
    /// run and a head kind to train.
    pub fn is_learned(self) -> bool {
        matches!(self, OptimizerId::L2o | OptimizerId::L2oCfgd)
    }

    /// True for the two static fractional variants.
    pub fn is_cfgd(self) -> bool {
        matches!(self, OptimizerId::NaCfgd | OptimizerId::AtCfgd)
    }

    fn parse(s: &str) -> Result<OptimizerId> {
        Ok(match s {
            "gd" => OptimizerId::Gd,
            "sgd" => OptimizerId::Sgd,
            "na_cfgd" => OptimizerId::NaCfgd,
            "at_cfgd" => OptimizerId::AtCfgd,
            "l2o" => OptimizerId::L2o,
            "l2o_cfgd" => OptimizerId::L2oCfgd,
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown optimizer `{other}` \
                     (expected gd, sgd, na_cfgd, at_cfgd, l2o, or l2o_cfgd)"
                )))
            }
        })
    }
}

impl fmt::Display for OptimizerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Meta-training budget and controller settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaBlock {
    /// Outer runs (fresh optimizee instance each).
    pub runs: u64,
    /// Inner steps per run.
    pub steps: usize,
    /// Unroll length between controller updates.
    pub unroll: usize,
    /// Adam learning rate for the controller.
    pub lr: f64,
    /// Hutchinson probes per fractional update during training.
    pub probes: usize,
    /// Master seed for problem sampling, initialization, and probes.
    pub seed: u64,
    /// Controller hidden width.
    pub hidden: usize,
}

/// One fully resolved experiment description. Every field has a default
/// (most depend on the experiment), so the empty config is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub optimizer: OptimizerId,
    /// Least-squares iterate dimension d.
    pub dim: usize,
    /// Least-squares measurement count m.
    pub measurements: usize,
    /// Optimizee hidden width (tanh regression, MNIST classifier).
    pub hidden: usize,
    /// Regression dataset size.
    pub points: usize,
    /// MNIST minibatch size.
    pub batch: usize,
    /// Use only the first `subset` MNIST images (0 = all).
    pub subset: usize,
    /// Evaluation steps T.
    pub steps: usize,
    /// Seeds to run; each seed is an independent problem + start.
    pub seeds: Vec<u64>,
    /// Static fractional order (na_cfgd / at_cfgd).
    pub alpha: f64,
    /// Static smoothing coefficient.
    pub beta: f64,
    /// Static integral terminal (na_cfgd; scalar broadcast over coordinates).
    pub c: f64,
    /// Terminal lag L (at_cfgd).
    pub lag: usize,
    /// Fixed step size where the experiment's rate rule is a constant.
    pub lr: f64,
    /// Hutchinson probes for fractional updates outside meta-training.
    pub probes: usize,
    /// Controller checkpoint (required by l2o / l2o_cfgd runs).
    pub checkpoint: Option<PathBuf>,
    /// Directory holding the MNIST IDX files.
    pub mnist_dir: Option<PathBuf>,
    pub meta: MetaBlock,
}

impl ExperimentConfig {
    /// The defaults for one experiment; budgets and sizes follow the
    /// published protocol for that task.
    pub fn default_for(experiment: ExperimentId) -> ExperimentConfig {
        let (dim, hidden, steps, meta_runs, meta_steps, meta_unroll) = match experiment {
            ExperimentId::LeastSquares => (100, 50, 800, 2000, 800, 20),
            ExperimentId::H1 | ExperimentId::H2 => (151, 50, 600, 1200, 600, 40),
            ExperimentId::Mnist => (15910, 20, 400, 1200, 400, 40),
        };
        ExperimentConfig {
            experiment,
            optimizer: OptimizerId::Gd,
            dim,
            measurements: 100,
            hidden,
            points: 100,
            batch: 128,
            subset: if experiment == ExperimentId::Mnist { 10000 } else { 0 },
            steps,
            seeds: vec![0],
            alpha: 0.9,
            beta: 0.0,
            c: 0.0,
            lag: 1,
            lr: 0.1,
            probes: 3,
            checkpoint: None,
            mnist_dir: None,
            meta: MetaBlock {
                runs: meta_runs,
                steps: meta_steps,
                unroll: meta_unroll,
                lr: 1e-3,
                probes: 3,
                seed: 0,
                hidden: 20,
            },
        }
    }

    /// Shrinks problem sizes and budgets so the full pipeline — sweep,
    /// meta-training, evaluation — finishes on a single desktop core while
    /// keeping the protocol shape (same experiments, same rate rules, same
    /// unroll structure). Evaluation seed lists are left alone.
    pub fn apply_desk_scale(&mut self) {
        match self.experiment {
            ExperimentId::LeastSquares => {
                self.dim = 20;
                self.measurements = 20;
                self.steps = 200;
                self.meta.runs = 200;
                self.meta.steps = 200;
            }
            ExperimentId::H1 | ExperimentId::H2 => {
                self.steps = 300;
                self.meta.runs = 300;
                self.meta.steps = 300;
            }
            ExperimentId::Mnist => {
                self.subset = 10000;
                self.steps = 200;
                self.meta.runs = 40;
                self.meta.steps = 200;
            }
        }
        self.meta.unroll = self.meta.unroll.min(self.meta.steps);
    }

    /// Parses the flat text format. Lines are `key = value`; blank lines and
    /// lines starting with `#` are ignored. Unknown or duplicate keys are
    /// rejected by name. The experiment key is read first so the remaining
    /// defaults can depend on it.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut pairs = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    idx + 1
                )));
            };
            let key = key.trim().to_string();
            if pairs.iter().any(|(k, _)| *k == key) {
                return Err(HarnessError::Config(format!("duplicate key `{key}`")));
            }
            pairs.push((key, value.trim().to_string()));
        }

        let experiment = match pairs.iter().find(|(k, _)| k == "experiment") {
            Some((_, v)) => ExperimentId::parse(v)?,
            None => ExperimentId::LeastSquares,
        };
        let mut cfg = ExperimentConfig::default_for(experiment);

        for (key, value) in &pairs {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = ExperimentId::parse(value)?,
            "optimizer" => self.optimizer = OptimizerId::parse(value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "measurements" => self.measurements = parse_num(key, value)?,
            "hidden" => self.hidden = parse_num(key, value)?,
            "points" => self.points = parse_num(key, value)?,
            "batch" => self.batch = parse_num(key, value)?,
            "subset" => self.subset = parse_num(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "seeds" => {
                let mut seeds = Vec::new();
                for part in value.split(',') {
                    seeds.push(parse_num(key, part.trim())?);
                }
                self.seeds = seeds;
            }
            "alpha" => self.alpha = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "c" => self.c = parse_num(key, value)?,
            "lag" => self.lag = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "probes" => self.probes = parse_num(key, value)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "mnist_dir" => self.mnist_dir = Some(PathBuf::from(value)),
            "meta_runs" => self.meta.runs = parse_num(key, value)?,
            "meta_steps" => self.meta.steps = parse_num(key, value)?,
            "meta_unroll" => self.meta.unroll = parse_num(key, value)?,
            "meta_lr" => self.meta.lr = parse_num(key, value)?,
            "meta_probes" => self.meta.probes = parse_num(key, value)?,
            "meta_seed" => self.meta.seed = parse_num(key, value)?,
            "meta_hidden" => self.meta.hidden = parse_num(key, value)?,
            other => {
                return Err(HarnessError::Config(format!("unknown key `{other}`")));
            }
        }
        Ok(())
    }

    /// Re-checks the invariants `parse` enforces; call after mutating a
    /// parsed config directly.
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 6] = [
            ("dim", self.dim),
            ("measurements", self.measurements),
            ("hidden", self.hidden),
            ("points", self.points),
            ("batch", self.batch),
            ("steps", self.steps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(HarnessError::Config(format!("{name} must be positive")));
            }
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        if self.lag == 0 {
            return Err(HarnessError::Config("lag must be positive".into()));
        }
        if self.optimizer.is_cfgd() && !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(HarnessError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(HarnessError::Config(format!(
                "lr must be a non-negative finite number, got {}",
                self.lr
            )));
        }
        if self.meta.unroll == 0 || self.meta.unroll > self.meta.steps {
            return Err(HarnessError::Config(format!(
                "meta_unroll must lie in 1..=meta_steps, got {} (meta_steps {})",
                self.meta.unroll, self.meta.steps
            )));
        }
        if self.meta.hidden == 0 {
            return Err(HarnessError::Config("meta_hidden must be positive".into()));
        }
        Ok(())
    }

    /// Canonical serialization: every field as `key = value`, fixed order.
    /// Parsing the result reproduces the config exactly.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("experiment", self.experiment.to_string());
        put("optimizer", self.optimizer.to_string());
        put("dim", self.dim.to_string());
        put("measurements", self.measurements.to_string());
        put("hidden", self.hidden.to_string());
        put("points", self.points.to_string());
        put("batch", self.batch.to_string());
        put("subset", self.subset.to_string());
        put("steps", self.steps.to_string());
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        put("seeds", seeds.join(","));
        put("alpha", self.alpha.to_string());
        put("beta", self.beta.to_string());
        put("c", self.c.to_string());
        put("lag", self.lag.to_string());
        put("lr", self.lr.to_string());
        put("probes", self.probes.to_string());
        if let Some(p) = &self.checkpoint {
            put("checkpoint", p.display().to_string());
        }
        if let Some(p) = &self.mnist_dir {
            put("mnist_dir", p.display().to_string());
        }
        put("meta_runs", self.meta.runs.to_string());
        put("meta_steps", self.meta.steps.to_string());
        put("meta_unroll", self.meta.unroll.to_string());
        put("meta_lr", self.meta.lr.to_string());
        put("meta_probes", self.meta.probes.to_string());
        put("meta_seed", self.meta.seed.to_string());
        put("meta_hidden", self.meta.hidden.to_string());
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical form — the config
    /// fingerprint embedded in every output row.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut s = String::with_capacity(16);
        for b in &digest[..8] {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    /// Iterate dimension of the configured optimizee.
    pub fn problem_dim(&self) -> usize {
        match self.experiment {
            ExperimentId::LeastSquares => self.dim,
            ExperimentId::H1 | ExperimentId::H2 => 3 * self.hidden + 1,
            ExperimentId::Mnist => {
                784 * self.hidden + self.hidden + self.hidden * 10 + 10
            }
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        HarnessError::Config(format!("invalid value `{value}` for key `{key}`"))
    })
}
