use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bsvt::BsvtConfig;
use crate::error::{Error, Result};
use crate::io::{read_matrix_csv, read_vector_csv};
use crate::opta::CapacityLog;
use crate::sampling::Calibration;
use crate::source::{synthetic_covariance, GaussianSourceSpec, MismatchMode};
use crate::svt::SvtConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lmmse,
    Svt,
    Bsvt,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Lmmse => "lmmse",
            Method::Svt => "svt",
            Method::Bsvt => "bsvt",
        }
    }

    /// Whether the method consumes postulated statistics (and so runs once
    /// per mismatch level).
    pub fn uses_model(self) -> bool {
        !matches!(self, Method::Svt)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lmmse" => Ok(Method::Lmmse),
            "svt" => Ok(Method::Svt),
            "bsvt" => Ok(Method::Bsvt),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Postulated statistics: the true covariance, or a perturbation of it at a
/// given signal-to-mismatch ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmrLevel {
    Exact,
    Ratio(f64),
}

impl SmrLevel {
    pub fn label(&self) -> String {
        match self {
            SmrLevel::Exact => "exact".to_string(),
            SmrLevel::Ratio(r) => r.to_string(),
        }
    }
}

impl Serialize for SmrLevel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SmrLevel::Exact => s.serialize_str("exact"),
            SmrLevel::Ratio(r) => s.serialize_f64(*r),
        }
    }
}

impl<'de> Deserialize<'de> for SmrLevel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Int(i64),
            Float(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) if t == "exact" => Ok(SmrLevel::Exact),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "smr level must be \"exact\" or a positive number, got `{t}`"
            ))),
            Raw::Int(i) => Ok(SmrLevel::Ratio(i as f64)),
            Raw::Float(x) => Ok(SmrLevel::Ratio(x)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingKind {
    #[default]
    Uniform,
    Markov,
}

impl SamplingKind {
    pub fn label(self) -> &'static str {
        match self {
            SamplingKind::Uniform => "uniform",
            SamplingKind::Markov => "markov",
        }
    }
}

fn default_variance() -> f64 {
    4.0
}
fn default_mean() -> f64 {
    240.0
}
fn default_rho() -> f64 {
    0.9
}
fn default_snr() -> f64 {
    20.0
}
fn default_repeats() -> usize {
    20
}
fn default_smr() -> Vec<SmrLevel> {
    vec![SmrLevel::Exact]
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// One Monte-Carlo sweep, read from TOML. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Per-entry variance of the synthetic covariance.
    #[serde(default = "default_variance")]
    pub variance: f64,
    /// Correlation decay of the synthetic covariance.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Constant mean used when no mean file is given.
    #[serde(default = "default_mean")]
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_file: Option<PathBuf>,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    pub gammas: Vec<f64>,
    pub methods: Vec<Method>,
    #[serde(default = "default_smr")]
    pub smr: Vec<SmrLevel>,
    #[serde(default)]
    pub mismatch_mode: MismatchMode,
    #[serde(default)]
    pub sampling: SamplingKind,
    /// Target mean missing-run length for Markov sampling; defaults to
    /// `n_rows`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markov_l0: Option<f64>,
    #[serde(default)]
    pub markov_calibration: Calibration,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Emit the rate-distortion floor alongside the estimator curves.
    #[serde(default)]
    pub opta: bool,
    #[serde(default)]
    pub opta_log: CapacityLog,
    /// Record wall-clock seconds per run. Off by default so that results are
    /// byte-reproducible.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub svt: SvtConfig,
    #[serde(default)]
    pub bsvt: BsvtConfig,
}

impl ExperimentConfig {
    /// Minimal configuration with every optional key at its default.
    pub fn new(n_rows: usize, n_cols: usize, gammas: Vec<f64>, methods: Vec<Method>) -> Self {
        Self {
            n_rows,
            n_cols,
            variance: default_variance(),
            rho: default_rho(),
            mean: default_mean(),
            covariance_file: None,
            mean_file: None,
            snr_db: default_snr(),
            gammas,
            methods,
            smr: default_smr(),
            mismatch_mode: MismatchMode::default(),
            sampling: SamplingKind::default(),
            markov_l0: None,
            markov_calibration: Calibration::default(),
            repeats: default_repeats(),
            base_seed: 0,
            output: default_output(),
            opta: false,
            opta_log: CapacityLog::default(),
            timing: false,
            svt: SvtConfig::default(),
            bsvt: BsvtConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative data-file paths are
    /// resolved against the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(reason) => Error::Config(format!("{}: {reason}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for file in [&mut cfg.covariance_file, &mut cfg.mean_file].into_iter().flatten() {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_rows == 0 || self.n_cols == 0 {
            return fail("n_rows and n_cols must be positive".into());
        }
        if self.gammas.is_empty() {
            return fail("gammas must not be empty".into());
        }
        if self.gammas.iter().any(|g| !(0.0..1.0).contains(g)) {
            return fail("every gamma must lie in [0, 1)".into());
        }
        if self.gammas.windows(2).any(|w| w[0] >= w[1]) {
            return fail("gammas must be distinct and sorted ascending".into());
        }
        if self.methods.is_empty() {
            return fail("methods must not be empty".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return fail("methods must not repeat".into());
        }
        if self.smr.is_empty() {
            return fail("smr must list at least one level".into());
        }
        for level in &self.smr {
            if let SmrLevel::Ratio(r) = level {
                if !(*r > 0.0 && r.is_finite()) {
                    return fail(format!("smr levels must be positive, got {r}"));
                }
            }
        }
        let labels: Vec<String> = self.smr.iter().map(SmrLevel::label).collect();
        if (1..labels.len()).any(|i| labels[..i].contains(&labels[i])) {
            return fail("smr levels must not repeat".into());
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1".into());
        }
        if !self.snr_db.is_finite() {
            return fail("snr_db must be finite".into());
        }
        if let Some(l0) = self.markov_l0 {
            if !(l0 >= 1.0) {
                return fail(format!("markov_l0 must be at least 1, got {l0}"));
            }
        }
        if self.covariance_file.is_none() {
            if !(self.variance > 0.0 && self.variance.is_finite()) {
                return fail("variance must be positive".into());
            }
            if !(0.0..1.0).contains(&self.rho) {
                return fail("rho must lie in [0, 1)".into());
            }
        }
        if !self.mean.is_finite() {
            return fail("mean must be finite".into());
        }
        self.svt.validate()?;
        self.bsvt.validate()?;
        Ok(())
    }

    pub fn markov_l0(&self) -> f64 {
        self.markov_l0.unwrap_or(self.n_rows as f64)
    }

    /// Loads or synthesizes the source law.
    pub fn source(&self) -> Result<GaussianSourceSpec> {
        let covariance: DMatrix<f64> = match &self.covariance_file {
            Some(path) => read_matrix_csv(path)?,
            None => synthetic_covariance(self.n_rows, self.variance, self.rho)?,
        };
        if covariance.nrows() != self.n_rows {
            return Err(Error::shape(
                format!("{0}x{0} covariance", self.n_rows),
                format!("{}x{}", covariance.nrows(), covariance.ncols()),
            ));
        }
        let mean = match &self.mean_file {
            Some(path) => read_vector_csv(path)?,
            None => DVector::from_element(self.n_rows, self.mean),
        };
        GaussianSourceSpec::new(mean, covariance)
    }
}
