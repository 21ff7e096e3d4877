use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rerank::{CalibrationConfig, LossKind, OptimizerKind, SoftenSign};

/// Evaluation modes, from the plain baseline up to calibration with fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Npc,
    NpcL2,
    RdcNoSubspace,
    Rdc,
    RdcftNoSubspace,
    Rdcft,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Npc,
        Mode::NpcL2,
        Mode::RdcNoSubspace,
        Mode::Rdc,
        Mode::RdcftNoSubspace,
        Mode::Rdcft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Npc => "npc",
            Mode::NpcL2 => "npc-l2",
            Mode::RdcNoSubspace => "rdc-no-subspace",
            Mode::Rdc => "rdc",
            Mode::RdcftNoSubspace => "rdcft-no-subspace",
            Mode::Rdcft => "rdcft",
        }
    }

    pub fn is_finetune(self) -> bool {
        matches!(self, Mode::RdcftNoSubspace | Mode::Rdcft)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Everything needed to reproduce a batch evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub episodes: usize,
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub calibration: CalibrationConfig,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Rdc,
            episodes: 2000,
            ways: 5,
            shots: 1,
            queries: 15,
            calibration: CalibrationConfig::default(),
            seed: 0,
            input: None,
            output: None,
            precision: Precision::F64,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "" | "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!(
            "bad boolean {value:?} for {key}"
        ))),
    }
}

impl RunConfig {
    /// Set one option by its flag name (without leading dashes).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let cal = &mut self.calibration;
        match key.trim() {
            "mode" => self.mode = value.parse()?,
            "input" => self.input = Some(PathBuf::from(value)),
            "out" | "output" => self.output = Some(PathBuf::from(value)),
            "episodes" => self.episodes = parse(key, value)?,
            "way" => self.ways = parse(key, value)?,
            "shot" => self.shots = parse(key, value)?,
            "query" => self.queries = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "k" => cal.k = parse(key, value)?,
            "k2" => cal.k2 = parse(key, value)?,
            "lambda" => cal.lambda = parse(key, value)?,
            "p" => cal.p = parse(key, value)?,
            "alpha" => cal.alpha = parse(key, value)?,
            "tau" => cal.tau = parse(key, value)?,
            "epochs" => cal.epochs = parse(key, value)?,
            "lr" => cal.lr = parse(key, value)?,
            "loss" => {
                cal.loss = match value {
                    "kl" => LossKind::Kl,
                    "mse" => LossKind::Mse,
                    _ => return Err(Error::InvalidConfig(format!("unknown loss {value:?}"))),
                }
            }
            "no-attention" => cal.use_attention = !parse_bool(key, value)?,
            "no-subspace" => cal.use_subspace = !parse_bool(key, value)?,
            "qe-plain-knn" => cal.qe_plain_knn = parse_bool(key, value)?,
            "soften-sign" => {
                cal.soften_sign = match value {
                    "positive" => SoftenSign::Positive,
                    "negated" => SoftenSign::Negated,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "unknown soften sign {value:?}"
                        )))
                    }
                }
            }
            "optimizer" => {
                cal.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd,
                    "adaptive-moments" | "adam" => OptimizerKind::AdaptiveMoments,
                    _ => return Err(Error::InvalidConfig(format!("unknown optimizer {value:?}"))),
                }
            }
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(Error::InvalidConfig(format!("unknown precision {value:?}"))),
                }
            }
            other => return Err(Error::InvalidConfig(format!("unknown option {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            self.apply(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text)
    }

    /// Calibration settings as the mode actually uses them.
    pub fn effective_calibration(&self) -> CalibrationConfig {
        let mut cal = self.calibration.clone();
        if matches!(self.mode, Mode::RdcNoSubspace | Mode::RdcftNoSubspace) {
            cal.use_subspace = false;
        }
        cal
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::InvalidConfig("episodes must be at least 1".into()));
        }
        if self.ways == 0 || self.shots == 0 || self.queries == 0 {
            return Err(Error::InvalidConfig(
                "way, shot and query must be positive".into(),
            ));
        }
        if !matches!(self.mode, Mode::Npc | Mode::NpcL2) {
            self.effective_calibration().validate()?;
        }
        Ok(())
    }

    /// Stable `key=value` echo of every setting that affects results.
    pub fn echo(&self) -> String {
        let c = self.effective_calibration();
        let loss = match c.loss {
            LossKind::Kl => "kl",
            LossKind::Mse => "mse",
        };
        let sign = match c.soften_sign {
            SoftenSign::Positive => "positive",
            SoftenSign::Negated => "negated",
        };
        let opt = match c.optimizer {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::AdaptiveMoments => "adaptive-moments",
        };
        let precision = match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        format!(
            "mode={} episodes={} way={} shot={} query={} seed={} k={} k2={} lambda={} p={} \
             alpha={} tau={} epochs={} lr={} loss={} attention={} subspace={} qe-plain-knn={} \
             soften-sign={} optimizer={} precision={}",
            self.mode,
            self.episodes,
            self.ways,
            self.shots,
            self.queries,
            self.seed,
            c.k,
            c.k2,
            c.lambda,
            c.p,
            c.alpha,
            c.tau,
            c.epochs,
            c.lr,
            loss,
            c.use_attention,
            c.use_subspace,
            c.qe_plain_knn,
            sign,
            opt,
            precision,
        )
    }
}
