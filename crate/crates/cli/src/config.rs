//! Run configuration: JSON file layer, flag overrides, resolution and hashing.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use gan_audit::ais::AisConfig;
use gan_audit::inference::Method;
use gan_audit::projection::InversionConfig;
use gan_audit::typicality::{DEFAULT_GROUP_SIZE, DEFAULT_LEVEL, DEFAULT_RESAMPLES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "GAN_AUDIT_OUT";
pub const DEFAULT_OUT: &str = "gan-audit-out";

/// Observation variance: a number, or `"estimate"` to derive it from the
/// reconstruction error of the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Sigma2Repr", into = "Sigma2Repr")]
pub enum Sigma2 {
    Value(f64),
    Estimate,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Sigma2Repr {
    Value(f64),
    Word(String),
}

impl TryFrom<Sigma2Repr> for Sigma2 {
    type Error = String;

    fn try_from(r: Sigma2Repr) -> Result<Self, String> {
        match r {
            Sigma2Repr::Value(v) => Ok(Sigma2::Value(v)),
            Sigma2Repr::Word(w) => w.parse(),
        }
    }
}

impl From<Sigma2> for Sigma2Repr {
    fn from(s: Sigma2) -> Self {
        match s {
            Sigma2::Value(v) => Sigma2Repr::Value(v),
            Sigma2::Estimate => Sigma2Repr::Word("estimate".into()),
        }
    }
}

impl FromStr for Sigma2 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "estimate" {
            return Ok(Sigma2::Estimate);
        }
        s.parse::<f64>()
            .map(Sigma2::Value)
            .map_err(|_| format!("expected a number or \"estimate\", got {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    TwoClassPpca,
    Spiral,
    SingleColor,
    ShiftedCluster,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::TwoClassPpca => "two-class-ppca",
            SynthKind::Spiral => "spiral",
            SynthKind::SingleColor => "single-color",
            SynthKind::ShiftedCluster => "shifted-cluster",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub n: usize,
    /// Sample shape; ignored by `spiral`, which is always 2-D.
    pub shape: Vec<usize>,
    /// Latent dimension of each two-class PPCA component.
    pub latent_dim: usize,
    /// Two-class PPCA components are centred at `+class_mean` and `-class_mean`.
    pub class_mean: f64,
    pub loading_scale: f64,
    pub sigma2: f64,
    /// Fixed colour for `single-color` (uniform per image when absent) and
    /// base level for `shifted-cluster` (0.5 when absent).
    pub value: Option<f64>,
    /// Per-coordinate offset of `shifted-cluster`.
    pub shift: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: SynthKind::TwoClassPpca,
            n: 200,
            shape: vec![16],
            latent_dim: 4,
            class_mean: 3.0,
            loading_scale: 0.5,
            sigma2: 0.05,
            value: None,
            shift: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypicalityConfig {
    /// Fresh model samples behind the entropy and the bootstrap.
    pub pool: usize,
    pub group_size: usize,
    pub level: f64,
    pub resamples: usize,
}

impl Default for TypicalityConfig {
    fn default() -> Self {
        Self {
            pool: 1000,
            group_size: DEFAULT_GROUP_SIZE,
            level: DEFAULT_LEVEL,
            resamples: DEFAULT_RESAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    pub input: Option<PathBuf>,
    pub column: String,
    pub group_column: String,
    pub bins: usize,
    /// Typicality report supplying the band centre `-H` and half-width `eps`.
    pub typicality: Option<PathBuf>,
    pub center: Option<f64>,
    pub epsilon: Option<f64>,
    pub title: Option<String>,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            input: None,
            column: "ll_nats".into(),
            group_column: "group".into(),
            bins: 30,
            typicality: None,
            center: None,
            epsilon: None,
            title: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    /// Stem of every file the run writes; defaults to the command name.
    pub name: Option<String>,
    pub models: Vec<PathBuf>,
    pub data: Vec<PathBuf>,
    pub train: Option<PathBuf>,
    pub sigma2: Option<Sigma2>,
    pub ais: AisConfig,
    pub inversion: InversionConfig,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub formats: Vec<Format>,
    pub workers: Option<usize>,
    pub method: Method,
    pub k: Option<usize>,
    /// Restricts `fit-ppca` to one class of a labelled dataset.
    pub class: Option<usize>,
    pub n: usize,
    pub patch: usize,
    /// Also write per-level AIS traces.
    pub trace: bool,
    pub synth: SynthConfig,
    pub typicality: TypicalityConfig,
    pub plot: PlotConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            name: None,
            models: Vec::new(),
            data: Vec::new(),
            train: None,
            sigma2: None,
            ais: AisConfig::default(),
            inversion: InversionConfig::default(),
            seed: 0,
            out_dir: None,
            formats: vec![Format::Csv, Format::Json, Format::Svg],
            workers: None,
            method: Method::Ll,
            k: None,
            class: None,
            n: 100,
            patch: gan_audit::analysis::DEFAULT_PATCH,
            trace: false,
            synth: SynthConfig::default(),
            typicality: TypicalityConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e).in_field("config"))?;
        serde_json::from_str(&text).map_err(|e| {
            let msg = e.to_string();
            // serde names unknown and mistyped keys between backticks
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".into());
            CliError::config(field, format!("{}: {msg}", path.display()))
        })
    }

    pub fn stem(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.command)
    }

    /// Fills the output directory from the environment when neither the
    /// flags nor the file set it.
    pub fn resolve_out_dir(&mut self) {
        if self.out_dir.is_none() {
            let dir = std::env::var_os(OUT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            self.out_dir = Some(dir);
        }
    }

    pub fn out_dir(&self) -> &Path {
        self.out_dir.as_deref().unwrap_or(Path::new(DEFAULT_OUT))
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    /// SHA-256 of the config with the fields that cannot change results
    /// (worker count and output location) cleared.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.workers = None;
        canon.out_dir = None;
        let bytes = serde_json::to_vec(&canon).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.ais.validate().map_err(|e| CliError::from(e).in_field("ais"))?;
        self.inversion
            .validate()
            .map_err(|e| CliError::from(e).in_field("inversion"))?;
        if let Some(Sigma2::Value(v)) = self.sigma2 {
            if !(v.is_finite() && v > 0.0) && self.command != "sample" {
                return Err(CliError::config("sigma2", format!("must be positive and finite, got {v}")));
            }
        }
        if self.workers == Some(0) {
            return Err(CliError::config("workers", "must be at least 1"));
        }
        if self.formats.is_empty() {
            return Err(CliError::config("formats", "at least one report format is required"));
        }
        if self.patch == 0 {
            return Err(CliError::config("patch", "must be at least 1"));
        }
        if let Some(name) = &self.name {
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(CliError::config("name", format!("not a plain file stem: {name:?}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma2_accepts_numbers_and_estimate() {
        let c: RunConfig = serde_json::from_str(r#"{"sigma2": 0.25}"#).unwrap();
        assert_eq!(c.sigma2, Some(Sigma2::Value(0.25)));
        let c: RunConfig = serde_json::from_str(r#"{"sigma2": "estimate"}"#).unwrap();
        assert_eq!(c.sigma2, Some(Sigma2::Estimate));
        assert!(serde_json::from_str::<RunConfig>(r#"{"sigma2": "guess"}"#).is_err());
        assert_eq!("estimate".parse::<Sigma2>(), Ok(Sigma2::Estimate));
    }

    #[test]
    fn nested_sections_reject_unknown_keys() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"ais": {"steps": 10, "temperature": 2}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"ais": {"steps": 10}}"#).unwrap();
        assert_eq!(c.ais.steps, 10);
        assert_eq!(c.ais.chains, AisConfig::default().chains);
    }

    #[test]
    fn hash_ignores_workers_and_out_dir() {
        let a = RunConfig {
            command: "ll".into(),
            ..RunConfig::default()
        };
        let mut b = a.clone();
        b.workers = Some(3);
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn round_trips_through_json() {
        let mut c = RunConfig {
            sigma2: Some(Sigma2::Estimate),
            ..RunConfig::default()
        };
        c.synth.kind = SynthKind::ShiftedCluster;
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
