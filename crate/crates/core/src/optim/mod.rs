//! Stateful optimizers over matrix parameters.
//!
//! The free functions (`trasmuon_step`, `muon_step`, `adamw_step`, ...) act on
//! one parameter and its state. [`Optimizer`] owns a state per parameter keyed
//! by a caller-supplied name, routes vector-shaped parameters of the Muon
//! family to AdamW, and snapshots everything to JSON.

mod adamw;
pub mod gate;
mod muon;
mod trasmuon;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use adamw::{adamw_step, adamw_step_intercepted, AdamWHyper, AdamWState};
pub use gate::{compute_gate, ratio_stats, soft_clip_raw, GateComputation, RatioStats};
pub use muon::{muon_step, muon_step_intercepted, MuonHyper, MuonState};
pub use trasmuon::{
    calibrated_step_size, momentum_update, normuon_step, orthogonalized_direction, row_scale, schedule_free_mix,
    trasmuon_step, trasmuon_step_intercepted, update_energy_reference, GateOutput, ParamState, TrasMuonHyper,
};

/// Rewrites the momentum buffer inside a step, after it absorbs the
/// gradient and before anything reads it.
///
/// With `persist` the rewritten buffer replaces the stored state; otherwise
/// only the current step sees it.
pub struct MomentumIntercept<'a> {
    pub apply: &'a mut dyn FnMut(&mut Matrix),
    pub persist: bool,
}

/// What one step did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Frobenius norm of the direction part of the update (weight decay
    /// excluded).
    pub delta_norm: f64,
    /// Step size applied to the direction.
    pub eta_hat: f64,
    /// Momentum had (near) zero norm; only weight decay was applied.
    pub degenerate: bool,
    /// Gate observables for the TrasMuon family.
    pub gate: Option<GateOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "hyper")]
pub enum OptimizerSpec {
    AdamW(AdamWHyper),
    Muon(MuonHyper),
    /// TrasMuon with the gate forced off and `rho = 0`.
    NorMuon(TrasMuonHyper),
    TrasMuon(TrasMuonHyper),
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerSpec::AdamW(h) => h.validate(),
            OptimizerSpec::Muon(h) => h.validate(),
            OptimizerSpec::NorMuon(h) | OptimizerSpec::TrasMuon(h) => h.validate(),
        }
    }

    /// AdamW settings used for vector-shaped parameters.
    pub fn fallback(&self) -> AdamWHyper {
        match self {
            OptimizerSpec::AdamW(h) => h.clone(),
            OptimizerSpec::Muon(h) => {
                AdamWHyper { lr: h.lr, eps: h.eps, weight_decay: h.weight_decay, ..Default::default() }
            }
            OptimizerSpec::NorMuon(h) | OptimizerSpec::TrasMuon(h) => {
                AdamWHyper { lr: h.eta, eps: h.eps, weight_decay: h.weight_decay, ..Default::default() }
            }
        }
    }

    /// The RMS bound `eta` of calibrated optimizers.
    pub fn calibrated_eta(&self) -> Option<f64> {
        match self {
            OptimizerSpec::NorMuon(h) | OptimizerSpec::TrasMuon(h) => Some(h.eta),
            _ => None,
        }
    }

    pub fn c_min(&self) -> Option<f64> {
        match self {
            OptimizerSpec::NorMuon(h) | OptimizerSpec::TrasMuon(h) => Some(h.c_min),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "state")]
pub enum SlotState {
    AdamW(AdamWState),
    Muon(MuonState),
    TrasMuon(ParamState),
}

/// Treated as a vector (AdamW semantics) by the Muon family.
pub fn is_vector_shaped(rows: usize, cols: usize) -> bool {
    rows.min(cols) == 1
}

/// Checkpoint of an [`Optimizer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSnapshot {
    pub format: String,
    pub version: String,
    pub spec: OptimizerSpec,
    pub states: BTreeMap<String, SlotState>,
}

const SNAPSHOT_FORMAT: &str = "trasmuon-optimizer-state/1";

#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    states: BTreeMap<String, SlotState>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, states: BTreeMap::new() })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn state(&self, name: &str) -> Option<&SlotState> {
        self.states.get(name)
    }

    pub fn step(&mut self, name: &str, w: &mut Matrix, g: &Matrix) -> Result<StepReport> {
        self.step_intercepted(name, w, g, None)
    }

    pub fn step_intercepted(
        &mut self,
        name: &str,
        w: &mut Matrix,
        g: &Matrix,
        intercept: Option<&mut MomentumIntercept<'_>>,
    ) -> Result<StepReport> {
        let (rows, cols) = w.shape();
        let vector = is_vector_shaped(rows, cols);
        let slot = self.states.entry(name.to_string()).or_insert_with(|| match (&self.spec, vector) {
            (OptimizerSpec::AdamW(_), _) | (_, true) => SlotState::AdamW(AdamWState::new(rows, cols)),
            (OptimizerSpec::Muon(_), false) => SlotState::Muon(MuonState::new(rows, cols)),
            (_, false) => SlotState::TrasMuon(ParamState::new(rows, cols)),
        });
        let result = match (&self.spec, slot) {
            (OptimizerSpec::AdamW(h), SlotState::AdamW(s)) => adamw_step_intercepted(w, g, s, h, intercept),
            (spec, SlotState::AdamW(s)) if vector => adamw_step_intercepted(w, g, s, &spec.fallback(), intercept),
            (OptimizerSpec::Muon(h), SlotState::Muon(s)) => muon_step_intercepted(w, g, s, h, intercept),
            (OptimizerSpec::TrasMuon(h), SlotState::TrasMuon(s)) => trasmuon_step_intercepted(w, g, s, h, intercept),
            (OptimizerSpec::NorMuon(h), SlotState::TrasMuon(s)) => {
                trasmuon_step_intercepted(w, g, s, &h.clone().normuon(), intercept)
            }
            _ => return Err(Error::StateKind(name.to_string())),
        };
        result.map_err(|e| match e {
            Error::NonFiniteGradient { entry, .. } => Error::NonFiniteGradient { param: name.to_string(), entry },
            other => other,
        })
    }

    pub fn snapshot(&self) -> OptimizerSnapshot {
        OptimizerSnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            version: crate::VERSION.to_string(),
            spec: self.spec.clone(),
            states: self.states.clone(),
        }
    }

    pub fn restore(snapshot: OptimizerSnapshot) -> Result<Self> {
        if snapshot.format != SNAPSHOT_FORMAT {
            return Err(crate::error::invalid("format", format!("unsupported snapshot format `{}`", snapshot.format)));
        }
        let mut opt = Optimizer::new(snapshot.spec)?;
        opt.states = snapshot.states;
        Ok(opt)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snapshot: OptimizerSnapshot =
            serde_json::from_str(text).map_err(|e| crate::error::invalid("snapshot", e.to_string()))?;
        Self::restore(snapshot)
    }
}
