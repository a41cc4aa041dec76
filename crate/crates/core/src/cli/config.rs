use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::metrics::SpikeRule;
use crate::optim::{AdamWHyper, MuonHyper, OptimizerSpec, TrasMuonHyper};
use crate::rng::derive_seed;
use crate::stress::{build_problem, BurstConfig, BurstMode, QuadraticProblem, StressOptions};

/// Named optimizer presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Adamw,
    Muon,
    Normuon,
    /// `[trasmuon]` exactly as configured.
    Trasmuon,
    /// Gate off, `rho = 0`.
    TrasmuonNoclip,
    /// Gate on, `rho = 0`.
    TrasmuonClipOnly,
    /// Gate on, configured `rho > 0`.
    TrasmuonClipSf,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Adamw,
        Variant::Muon,
        Variant::Normuon,
        Variant::Trasmuon,
        Variant::TrasmuonNoclip,
        Variant::TrasmuonClipOnly,
        Variant::TrasmuonClipSf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Adamw => "adamw",
            Variant::Muon => "muon",
            Variant::Normuon => "normuon",
            Variant::Trasmuon => "trasmuon",
            Variant::TrasmuonNoclip => "trasmuon-noclip",
            Variant::TrasmuonClipOnly => "trasmuon-clip-only",
            Variant::TrasmuonClipSf => "trasmuon-clip-sf",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
            invalid("optimizer.name", format!("unknown optimizer `{s}` (expected one of {})", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub d: usize,
    pub kappa: f64,
    pub fix_v: bool,
    pub seed: u64,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self { d: 64, kappa: 1e4, fix_v: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub name: Variant,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self { name: Variant::Trasmuon }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurstSection {
    pub enabled: bool,
    pub period: usize,
    pub count: usize,
    pub amplitude: f64,
    pub mode: BurstMode,
    pub start_step: usize,
    pub seed: u64,
    pub persist: bool,
    /// Gradient mode cap on the perturbation length; 0 disables the cap.
    pub max_alpha: f64,
}

impl Default for BurstSection {
    fn default() -> Self {
        let b = BurstConfig::default();
        Self {
            enabled: true,
            period: b.period,
            count: b.count,
            amplitude: b.amplitude,
            mode: b.mode,
            start_step: b.start_step,
            seed: b.seed,
            persist: b.persist,
            max_alpha: 0.0,
        }
    }
}

impl BurstSection {
    pub fn to_config(&self) -> Option<BurstConfig> {
        self.enabled.then(|| BurstConfig {
            period: self.period,
            count: self.count,
            amplitude: self.amplitude,
            mode: self.mode,
            start_step: self.start_step,
            seed: self.seed,
            persist: self.persist,
            max_alpha: (self.max_alpha > 0.0).then_some(self.max_alpha),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Relative paths resolve under `TRASMUON_OUTPUT_ROOT` when it is set.
    pub directory: PathBuf,
    pub trace: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: PathBuf::from("runs"), trace: true }
    }
}

/// Complete description of one experiment. Every field has a default, so a
/// dumped default config lists every knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub optimizer: OptimizerSection,
    pub trasmuon: TrasMuonHyper,
    pub muon: MuonHyper,
    pub adamw: AdamWHyper,
    pub burst: BurstSection,
    pub run: StressOptions,
    pub spike: SpikeRule,
    pub output: OutputSection,
}

/// Stress study defaults. `trasmuon.beta_e` and `spike.factor` differ from
/// the library defaults.
impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSection::default(),
            optimizer: OptimizerSection::default(),
            trasmuon: TrasMuonHyper { beta_e: STUDY_BETA_E, ..TrasMuonHyper::default() },
            muon: MuonHyper::default(),
            adamw: AdamWHyper::default(),
            burst: BurstSection::default(),
            run: StressOptions::default(),
            spike: SpikeRule { factor: STUDY_SPIKE_FACTOR, ..SpikeRule::default() },
            output: OutputSection::default(),
        }
    }
}

pub const STUDY_BETA_E: f64 = 0.9;
pub const STUDY_SPIKE_FACTOR: f64 = 1.75;

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.problem.d < 2 {
            return Err(invalid("problem.d", "must be at least 2"));
        }
        if !(self.problem.kappa >= 1.0 && self.problem.kappa.is_finite()) {
            return Err(invalid("problem.kappa", "must be finite and >= 1"));
        }
        if self.run.total_steps == 0 {
            return Err(invalid("run.total_steps", "must be at least 1"));
        }
        if let Some(b) = self.burst.to_config() {
            b.validate().map_err(|e| prefix("burst", e))?;
            if b.count >= self.problem.d {
                return Err(invalid("burst.count", "must be below problem.d"));
            }
        }
        self.spike.validate().map_err(|e| prefix("spike", e))?;
        self.trasmuon.validate().map_err(|e| prefix("trasmuon", e))?;
        self.muon.validate().map_err(|e| prefix("muon", e))?;
        self.adamw.validate().map_err(|e| prefix("adamw", e))?;
        self.optimizer_spec(self.optimizer.name).map(|_| ())
    }

    /// Hyperparameters a variant runs with.
    pub fn optimizer_spec(&self, variant: Variant) -> Result<OptimizerSpec> {
        let h = self.trasmuon.clone();
        Ok(match variant {
            Variant::Adamw => OptimizerSpec::AdamW(self.adamw.clone()),
            Variant::Muon => OptimizerSpec::Muon(self.muon.clone()),
            Variant::Normuon => OptimizerSpec::NorMuon(h),
            Variant::Trasmuon => OptimizerSpec::TrasMuon(h),
            Variant::TrasmuonNoclip => OptimizerSpec::TrasMuon(TrasMuonHyper { gate_enabled: false, rho: 0.0, ..h }),
            Variant::TrasmuonClipOnly => OptimizerSpec::TrasMuon(TrasMuonHyper { gate_enabled: true, rho: 0.0, ..h }),
            Variant::TrasmuonClipSf => {
                if h.rho <= 0.0 {
                    return Err(invalid("trasmuon.rho", "trasmuon-clip-sf needs rho > 0"));
                }
                OptimizerSpec::TrasMuon(TrasMuonHyper { gate_enabled: true, ..h })
            }
        })
    }

    pub fn build_problem(&self) -> Result<QuadraticProblem> {
        build_problem(self.problem.d, self.problem.kappa, self.problem.fix_v, self.problem.seed)
    }

    /// Copy with the seeds of sweep seed `s`: problem, initial iterate and
    /// burst selection use streams 0, 1 and 2 of `s`.
    pub fn with_sweep_seed(&self, s: u64) -> Self {
        let mut cfg = self.clone();
        cfg.problem.seed = derive_seed(s, 0);
        cfg.run.init_seed = derive_seed(s, 1);
        cfg.burst.seed = derive_seed(s, 2);
        cfg
    }
}

fn prefix(section: &str, e: crate::Error) -> crate::Error {
    match e {
        crate::Error::InvalidArgument { name, reason } => {
            crate::Error::InvalidArgument { name: "config", reason: format!("{section}.{name}: {reason}") }
        }
        other => other,
    }
}
