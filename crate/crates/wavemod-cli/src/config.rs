use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use wavemod::checks::{RunSpec, SystemSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Wavetrain,
    Spectrum,
    Coeffs,
    SemigroupBench,
    PhaseBench,
    Simulate,
    Compare,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] =
        [Stage::Wavetrain, Stage::Spectrum, Stage::Coeffs, Stage::SemigroupBench, Stage::PhaseBench, Stage::Simulate, Stage::Compare, Stage::Report];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Wavetrain => "wavetrain",
            Stage::Spectrum => "spectrum",
            Stage::Coeffs => "coeffs",
            Stage::SemigroupBench => "semigroup-bench",
            Stage::PhaseBench => "phase-bench",
            Stage::Simulate => "simulate",
            Stage::Compare => "compare",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub residual: f64,
    pub omega: f64,
    pub kernel: f64,
    /// Relative agreement of two coefficient routes.
    pub route: f64,
    /// Absolute size below which a coefficient counts as zero.
    pub zero: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { residual: 1e-10, omega: 1e-9, kernel: 1e-8, route: 1e-3, zero: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub xi_count: usize,
    pub zero_radius: f64,
    pub slack: f64,
    pub simplicity_floor: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { xi_count: 64, zero_radius: 1e-6, slack: 1e-10, simplicity_floor: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemigroupConfig {
    pub periods: usize,
    pub random_count: usize,
    pub window: [f64; 2],
}

impl Default for SemigroupConfig {
    fn default() -> Self {
        Self { periods: 64, random_count: 4, window: [4.0, 100.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub system: SystemSpec,
    pub tolerances: Tolerances,
    pub spectrum: SpectrumConfig,
    pub semigroup: SemigroupConfig,
    pub run: RunSpec,
    /// Also simulate at half the amplitude for the error-scaling check.
    pub halving: bool,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub stages: Vec<Stage>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            system: SystemSpec::default(),
            tolerances: Tolerances::default(),
            spectrum: SpectrumConfig::default(),
            semigroup: SemigroupConfig::default(),
            run: RunSpec::default(),
            halving: false,
            output_dir: PathBuf::from("out"),
            seed: 11,
            stages: Stage::ALL.to_vec(),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn positive(errors: &mut Vec<String>, path: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errors.push(format!("{path}: must be positive and finite (got {v})"));
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError(format!("{}: {}", if path == "." { "config".into() } else { path }, e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut e = vec![];
        if self.schema_version != SCHEMA_VERSION {
            e.push(format!("schema_version: unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        positive(&mut e, "system.k0", self.system.k0);
        if self.system.n_profile < 8 || self.system.n_profile % 2 != 0 {
            e.push(format!("system.n_profile: need an even number >= 8 (got {})", self.system.n_profile));
        }
        let t = &self.tolerances;
        for (name, v) in [("residual", t.residual), ("omega", t.omega), ("kernel", t.kernel), ("route", t.route), ("zero", t.zero)] {
            positive(&mut e, &format!("tolerances.{name}"), v);
        }
        let s = &self.spectrum;
        if s.xi_count < 4 {
            e.push(format!("spectrum.xi_count: need at least 4 (got {})", s.xi_count));
        }
        positive(&mut e, "spectrum.zero_radius", s.zero_radius);
        positive(&mut e, "spectrum.slack", s.slack);
        positive(&mut e, "spectrum.simplicity_floor", s.simplicity_floor);
        if self.semigroup.periods < 4 {
            e.push(format!("semigroup.periods: need at least 4 (got {})", self.semigroup.periods));
        }
        let w = self.semigroup.window;
        if !(w[0] > 0.0 && w[1] > w[0]) {
            e.push("semigroup.window: need 0 < t_min < t_max".into());
        }
        if self.run.periods == 0 {
            e.push("run.periods: need at least one period".into());
        }
        if self.run.per_period < 8 || self.run.per_period % 2 != 0 {
            e.push(format!("run.per_period: need an even number >= 8 (got {})", self.run.per_period));
        }
        if let Err(msg) = self.run.validate() {
            e.push(format!("run.{msg}"));
        }
        if self.stages.is_empty() {
            e.push("stages: at least one stage is required".into());
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(e.join("\n")))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("{}").unwrap(), cfg);
    }

    #[test]
    fn field_paths_in_errors() {
        let e = RunConfig::parse(r#"{"tolerances": {"residual": -1e-10}}"#).unwrap_err();
        assert!(e.0.starts_with("tolerances.residual:"), "{e}");
        let e = RunConfig::parse(r#"{"run": {"sim": {"dt": "x"}}}"#).unwrap_err();
        assert!(e.0.starts_with("run.sim.dt:"), "{e}");
        let e = RunConfig::parse(r#"{"system": {"bogus": 1}}"#).unwrap_err();
        assert!(e.0.contains("bogus"), "{e}");
        let e = RunConfig::parse(r#"{"schema_version": 7}"#).unwrap_err();
        assert!(e.0.starts_with("schema_version"), "{e}");
        let e = RunConfig::parse(r#"{"stages": ["nope"]}"#).unwrap_err();
        assert!(e.0.starts_with("stages"), "{e}");
    }
}
