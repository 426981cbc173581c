//! Run configuration: a TOML file (or a previously emitted JSON manifest).
//!
//! ```toml
//! command = "sweep"          # solve | sweep | mc | efficiency
//!
//! [wave]
//! k_grid = { start = 2.2, stop = 20.0, count = 81 }   # or k = 2.5, or a list
//! theta = 0.0
//! period = 6.283185307179586
//! b = 1.0
//!
//! [profile]
//! kind = "trig"              # flat | trig | samples | kl
//! mean = 0.0
//! cos = [0.0]
//! sin = [0.1]
//!
//! [numerics]
//! N = "auto"                 # or an integer; same for M and P
//!
//! [stability]
//! eps_min = 0.2
//!
//! [mc]
//! n_samples = 64
//! seed = 1
//!
//! [output]
//! directory = "out"
//! formats = ["csv", "json"]
//! ```

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use grating_core::harness::{linspace, GridRule};
use grating_core::modes::PlaneWaveConfig;
use grating_core::random::KlModel;
use grating_core::transform::GratingProfile;
use grating_core::GratingError;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Solve,
    Sweep,
    Mc,
    Efficiency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub wave: WaveSection,
    #[serde(default)]
    pub profile: ProfileSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSection {
    pub k: Option<f64>,
    pub k_grid: Option<KGrid>,
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "default_period", alias = "Lambda")]
    pub period: f64,
    pub b: f64,
}

fn default_period() -> f64 {
    2.0 * std::f64::consts::PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KGrid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl KGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            KGrid::List(v) => v.clone(),
            KGrid::Range { start, stop, count } => linspace(*start, *stop, *count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProfileSection {
    #[default]
    Flat,
    Trig {
        #[serde(default)]
        mean: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
    Samples {
        values: Vec<f64>,
    },
    /// Gaussian-covariance random surface around a trigonometric mean.
    Kl {
        sigma: f64,
        ell: f64,
        order: Option<usize>,
        #[serde(default)]
        mean: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
}

/// `"auto"` or a fixed count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Count {
    #[default]
    Auto,
    Fixed(usize),
}

impl Serialize for Count {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Count::Auto => s.serialize_str("auto"),
            Count::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Count {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(Count::Fixed(n)),
            Raw::Text(t) if t == "auto" => Ok(Count::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected \"auto\" or an integer, got \"{t}\""
            ))),
        }
    }
}

impl Count {
    fn get(self) -> Option<usize> {
        match self {
            Count::Auto => None,
            Count::Fixed(n) => Some(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(default, rename = "N")]
    pub order: Count,
    #[serde(default, rename = "M")]
    pub m: Count,
    #[serde(default, rename = "P")]
    pub p: Count,
    pub points_per_wavelength: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    #[serde(default = "default_eps_min")]
    pub eps_min: f64,
    /// Fit the growth exponent of a sweep; too few usable records is an error.
    #[serde(default)]
    pub fit_exponent: bool,
}

fn default_eps_min() -> f64 {
    0.2
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            eps_min: default_eps_min(),
            fit_exponent: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    64
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            n_samples: default_samples(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Write the field snapshot of a `solve` run.
    #[serde(default = "yes")]
    pub field: bool,
}

fn default_directory() -> String {
    "out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
            field: true,
        }
    }
}

/// Manifests carry the full configuration under this key.
#[derive(Deserialize)]
struct ManifestConfig {
    config: RunConfig,
}

/// Read and validate a TOML config or a JSON run manifest.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Parse {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    let config = if text.trim_start().starts_with('{') {
        parse_manifest(&text)?
    } else {
        parse_toml(&text)?
    };
    config.validate()?;
    Ok(config)
}

pub fn parse_toml(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        CliError::Parse {
            line,
            message: e.message().to_string(),
        }
    })
}

fn parse_manifest(text: &str) -> Result<RunConfig, CliError> {
    serde_json::from_str::<ManifestConfig>(text)
        .map(|m| m.config)
        .map_err(|e| CliError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
}

fn violation(field: &str, constraint: impl Into<String>) -> CliError {
    CliError::Validation {
        field: field.to_string(),
        constraint: constraint.into(),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let w = &self.wave;
        let wants_grid = self.command == Command::Sweep;
        match (&w.k, &w.k_grid, wants_grid) {
            (Some(_), None, false) | (None, Some(_), true) => {}
            (_, _, true) => return Err(violation("wave.k_grid", "required by sweep, and k must be absent")),
            (_, _, false) => return Err(violation("wave.k", "required, and k_grid must be absent")),
        }
        if !(w.theta.is_finite() && w.theta.abs() < FRAC_PI_2) {
            return Err(violation("theta", "in (-pi/2, pi/2)"));
        }
        for (name, v) in [("wave.period", w.period), ("wave.b", w.b)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(violation(name, "> 0"));
            }
        }
        let ks = match (&w.k, &w.k_grid) {
            (Some(k), _) => vec![*k],
            (_, Some(g)) => g.values(),
            _ => vec![],
        };
        if ks.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(violation("wave.k", "> 0"));
        }
        if wants_grid && ks.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(violation("wave.k_grid", "strictly ascending"));
        }
        if !(self.stability.eps_min > 0.0) {
            return Err(violation("stability.eps_min", "> 0"));
        }
        if let Some(v) = self.numerics.points_per_wavelength {
            if !(v.is_finite() && v > 0.0) {
                return Err(violation("numerics.points_per_wavelength", "> 0"));
            }
        }
        if self.command == Command::Mc {
            if !matches!(self.profile, ProfileSection::Kl { .. }) {
                return Err(violation("profile.kind", "mc needs kind = \"kl\""));
            }
            if self.mc.n_samples < 2 {
                return Err(violation("mc.n_samples", ">= 2"));
            }
        }
        if let ProfileSection::Kl { sigma, ell, .. } = self.profile {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(violation("profile.sigma", ">= 0"));
            }
            if !(ell.is_finite() && ell > 0.0) {
                return Err(violation("profile.ell", "> 0"));
            }
        }
        if self.output.formats.is_empty() {
            return Err(violation("output.formats", "at least one format"));
        }
        self.profile().map_err(core_violation)?;
        Ok(())
    }

    /// Wave configuration at wavenumber `k`.
    pub fn wave_at(&self, k: f64) -> Result<PlaneWaveConfig, CliError> {
        PlaneWaveConfig::new(k, self.wave.theta, self.wave.period, self.wave.b).map_err(core_violation)
    }

    pub fn k_values(&self) -> Vec<f64> {
        match (&self.wave.k, &self.wave.k_grid) {
            (Some(k), _) => vec![*k],
            (_, Some(g)) => g.values(),
            _ => vec![],
        }
    }

    /// Deterministic surface, or the KL mean for random profiles.
    pub fn profile(&self) -> Result<GratingProfile, GratingError> {
        let period = self.wave.period;
        match &self.profile {
            ProfileSection::Flat => Ok(GratingProfile::flat(period)),
            ProfileSection::Trig { mean, cos, sin } | ProfileSection::Kl { mean, cos, sin, .. } => {
                GratingProfile::trig(period, *mean, cos.clone(), sin.clone())
            }
            ProfileSection::Samples { values } => GratingProfile::samples(period, values.clone()),
        }
    }

    pub fn kl_model(&self) -> Result<Option<KlModel>, GratingError> {
        match self.profile {
            ProfileSection::Kl { sigma, ell, order, .. } => {
                let mean = self.profile()?;
                Ok(Some(match order {
                    Some(j) => KlModel::with_order(mean, sigma, ell, j)?,
                    None => KlModel::new(mean, sigma, ell)?,
                }))
            }
            _ => Ok(None),
        }
    }

    pub fn grid_rule(&self) -> GridRule {
        let n = &self.numerics;
        let mut rule = GridRule {
            order: n.order.get(),
            m: n.m.get(),
            p: n.p.get(),
            ..GridRule::default()
        };
        if let Some(v) = n.points_per_wavelength {
            rule.points_per_wavelength = v;
        }
        rule
    }

    pub fn wants(&self, format: Format) -> bool {
        self.output.formats.contains(&format)
    }
}

fn core_violation(e: GratingError) -> CliError {
    match e {
        GratingError::InvalidParameter { name, reason } => violation(name, reason),
        other => CliError::Core(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "command = \"solve\"\n[wave]\nk = 2.5\nb = 1.0\n";

    #[test]
    fn minimal_config_uses_auto_numerics() {
        let c = parse_toml(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.command, Command::Solve);
        assert_eq!(c.numerics.order, Count::Auto);
        assert_eq!(c.grid_rule(), GridRule::default());
        assert_eq!(c.profile, ProfileSection::Flat);
        assert!((c.wave.period - 2.0 * std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn theta_out_of_range() {
        let c = parse_toml("command = \"solve\"\n[wave]\nk = 2.5\ntheta = 2.0\nb = 1.0\n").unwrap();
        match c.validate() {
            Err(CliError::Validation { field, constraint }) => {
                assert_eq!(field, "theta");
                assert_eq!(constraint, "in (-pi/2, pi/2)");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_names_the_key() {
        let text = "command = \"sweep\"\n[wave]\nk_grid = [2.3]\nb = 1.0\n[stability]\nepsilonn = 0.1\n";
        match parse_toml(text) {
            Err(CliError::Parse { line, message }) => {
                assert!(message.contains("epsilonn"), "{message}");
                assert_eq!(line, 6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_profile_key_is_rejected() {
        let text = "command = \"solve\"\n[wave]\nk = 2.5\nb = 1.0\n[profile]\nkind = \"trig\"\nsinn = [0.1]\n";
        assert!(matches!(parse_toml(text), Err(CliError::Parse { .. })));
    }

    #[test]
    fn k_and_grid_are_exclusive() {
        let c = parse_toml("command = \"sweep\"\n[wave]\nk = 2.5\nb = 1.0\n").unwrap();
        assert!(matches!(c.validate(), Err(CliError::Validation { .. })));
        let c = parse_toml("command = \"sweep\"\n[wave]\nk_grid = { start = 2.0, stop = 3.0, count = 3 }\nb = 1.0\n").unwrap();
        c.validate().unwrap();
        assert_eq!(c.k_values(), vec![2.0, 2.5, 3.0]);
    }

    #[test]
    fn fixed_numerics_and_kl_profile() {
        let text = "command = \"mc\"\n[wave]\nk = 4.4\nb = 1.0\n[profile]\nkind = \"kl\"\nsigma = 0.02\nell = 0.5\n\
                    [numerics]\nN = 12\nM = \"auto\"\nP = 40\n";
        let c = parse_toml(text).unwrap();
        c.validate().unwrap();
        let r = c.grid_rule();
        assert_eq!((r.order, r.m, r.p), (Some(12), None, Some(40)));
        assert!(c.kl_model().unwrap().is_some());
        let bad = text.replace("M = \"auto\"", "M = \"fast\"");
        assert!(matches!(parse_toml(&bad), Err(CliError::Parse { .. })));
    }

    #[test]
    fn mc_requires_random_profile() {
        let c = parse_toml("command = \"mc\"\n[wave]\nk = 4.4\nb = 1.0\n").unwrap();
        assert!(matches!(c.validate(), Err(CliError::Validation { .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let c = parse_toml(MINIMAL).unwrap();
        let json = serde_json::json!({ "tool": "grating", "config": c }).to_string();
        assert_eq!(parse_manifest(&json).unwrap(), c);
    }
}
