//! Ventilator triage model: cost parameters, priority classes, the NYS
//! guideline encoding and the adapter that turns tree policies into
//! priorities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree_policy::TreePolicy;

pub(crate) mod estimate;
mod kmeans;

pub use estimate::{
    build_triage_mdp, estimate_transitions, CovariateSet, StateEncoder, TriageStateDef, ENCODER_FORMAT,
};
pub use kmeans::{kmeans_cluster, standardize, KMeans};

/// Decision epochs: triage, then 48h and 120h into an intubation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Epoch {
    Triage,
    #[serde(rename = "48h")]
    Reassess48,
    #[serde(rename = "120h")]
    Reassess120,
}

impl Epoch {
    pub const ALL: [Epoch; 3] = [Epoch::Triage, Epoch::Reassess48, Epoch::Reassess120];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Epoch> {
        Epoch::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    Low,
    Medium,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Cost of a death relative to a survival.
    #[serde(rename = "C")]
    pub c: f64,
    /// Escalation per period of ventilator use.
    pub rho: f64,
    /// Penalty (survivors) or bonus (deaths) for extubated patients.
    pub gamma: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            c: 100.0,
            rho: 1.1,
            gamma: 1.5,
        }
    }
}

impl CostParams {
    /// Ratio below which `C/γ` is not considered much larger than `γρ²`.
    pub const COMFORT_RATIO: f64 = 10.0;

    /// Errors unless every parameter exceeds 1 and `C/γ > γρ²`. Returns
    /// warnings when the margin is thin.
    pub fn validate(&self) -> Result<Vec<String>> {
        for (name, v) in [("C", self.c), ("rho", self.rho), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 1.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be finite and > 1")));
            }
        }
        let lhs = self.c / self.gamma;
        let rhs = self.gamma * self.rho * self.rho;
        if lhs <= rhs {
            return Err(Error::InvalidParameter(format!(
                "C/gamma = {lhs:.4} must exceed gamma*rho^2 = {rhs:.4} so that every death costs more than every survival"
            )));
        }
        let mut warnings = Vec::new();
        if lhs < Self::COMFORT_RATIO * rhs {
            warnings.push(format!(
                "C/gamma = {lhs:.3} is less than {}x gamma*rho^2 = {rhs:.3}",
                Self::COMFORT_RATIO
            ));
        }
        Ok(warnings)
    }
}

/// Outcome reached after leaving the ventilator model at period `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Terminal {
    Deceased,
    Alive,
    DeceasedExcluded,
    AliveExcluded,
}

impl Terminal {
    pub const ALL: [Terminal; 4] = [
        Terminal::Deceased,
        Terminal::Alive,
        Terminal::DeceasedExcluded,
        Terminal::AliveExcluded,
    ];

    pub fn name(self, t: usize) -> String {
        match self {
            Terminal::Deceased => format!("D{t}"),
            Terminal::Alive => format!("A{t}"),
            Terminal::DeceasedExcluded => format!("D{t}ex"),
            Terminal::AliveExcluded => format!("A{t}ex"),
        }
    }
}

/// Costs of the terminal states for periods 1..=3.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalCosts {
    params: CostParams,
}

impl TerminalCosts {
    /// `t` is the period (1-based) at which the patient left.
    pub fn cost(&self, terminal: Terminal, t: usize) -> f64 {
        let CostParams { c, rho, gamma } = self.params;
        let scale = rho.powi(t as i32 - 1);
        match terminal {
            Terminal::Alive => scale,
            Terminal::AliveExcluded => gamma * scale,
            Terminal::Deceased => c * scale,
            Terminal::DeceasedExcluded => c / gamma * scale,
        }
    }

    pub fn params(&self) -> CostParams {
        self.params
    }
}

pub fn build_costs(params: CostParams) -> Result<TerminalCosts> {
    params.validate()?;
    Ok(TerminalCosts { params })
}

/// Readings not covered by the published reassessment table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NysGap {
    /// SOFA = 1 at triage is neither "1 < SOFA < 8" nor "SOFA = 0". Mapped to high.
    TriageSofaOne,
    /// SOFA in 8..=11 and improving at reassessment. Mapped to medium.
    ReassessMidImproving,
}

/// NYS priority class, together with a flag when the reading falls in a
/// gap of the published rules.
pub fn nys_priority_flagged(sofa: u32, improving: bool, epoch: Epoch) -> Result<(Priority, Option<NysGap>)> {
    if sofa > 24 {
        return Err(Error::InvalidParameter(format!("SOFA {sofa} outside 0..=24")));
    }
    Ok(match epoch {
        Epoch::Triage => match sofa {
            0 => (Priority::Low, None),
            1 => (Priority::High, Some(NysGap::TriageSofaOne)),
            2..=7 => (Priority::High, None),
            8..=11 => (Priority::Medium, None),
            _ => (Priority::Low, None),
        },
        Epoch::Reassess48 | Epoch::Reassess120 => match (sofa, improving) {
            (12.., _) => (Priority::Low, None),
            (8..=11, false) => (Priority::Low, None),
            (8..=11, true) => (Priority::Medium, Some(NysGap::ReassessMidImproving)),
            (_, false) => (Priority::Medium, None),
            (_, true) => (Priority::High, None),
        },
    })
}

pub fn nys_priority(sofa: u32, improving: bool, epoch: Epoch) -> Result<Priority> {
    nys_priority_flagged(sofa, improving, epoch).map(|(p, _)| p)
}

/// Priority a tree policy assigns: low when its leaf says exclude, high
/// otherwise.
pub fn tree_guideline_priority(tp: &TreePolicy, features: &[f64], epoch: Epoch) -> Result<Priority> {
    let tree = tp
        .trees
        .get(epoch.index())
        .ok_or_else(|| Error::Structure(format!("tree policy has no tree for epoch {epoch:?}")))?;
    if features.len() != tree.feature_names.len() {
        return Err(Error::Structure(format!(
            "{} features given, tree expects {:?}",
            features.len(),
            tree.feature_names
        )));
    }
    let a = tree.predict(features)?;
    Ok(if tree.labels[a] == "exclude" {
        Priority::Low
    } else {
        Priority::High
    })
}
