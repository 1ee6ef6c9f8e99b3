//! Run configuration: TOML file, then `TREEPOLICY_SEED`, then flags.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};
use toml::{Table, Value};
use treepolicy::sim::{float_range, CGrid, SensitivityGrid, UNLIMITED};
use treepolicy::triage::{CostParams, CovariateSet, TriageStateDef};
use treepolicy::tree_policy::{Learner, TreePolicyConfig};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "TREEPOLICY_SEED";

/// Ventilator count, or unlimited (`"inf"`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capacity(pub usize);

impl Serialize for Capacity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == UNLIMITED {
            s.serialize_str("inf")
        } else {
            s.serialize_u64(self.0 as u64)
        }
    }
}

impl<'de> Deserialize<'de> for Capacity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Capacity;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative integer or \"inf\"")
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Capacity, E> {
                usize::try_from(v)
                    .map(Capacity)
                    .map_err(|_| E::custom(format!("capacity {v} is negative")))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Capacity, E> {
                Ok(Capacity(v as usize))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Capacity, E> {
                match v {
                    "inf" | "unlimited" => Ok(Capacity(UNLIMITED)),
                    _ => Err(E::custom(format!("invalid capacity {v:?}, expected an integer or \"inf\""))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidelineName {
    Fcfs,
    Nys,
    Tree,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Patients in a generated cohort.
    pub n: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { n: 807 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    #[serde(rename = "C")]
    pub c: f64,
    pub rho: f64,
    pub gamma: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        let p = CostParams::default();
        CostConfig {
            c: p.c,
            rho: p.rho,
            gamma: p.gamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateConfig {
    pub covariates: CovariateSet,
    pub k: usize,
}

impl Default for StateConfig {
    fn default() -> Self {
        StateConfig {
            covariates: CovariateSet::SofaOnly,
            k: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// One depth for every period, or one per period.
    pub depths: Vec<usize>,
    pub learner: Learner,
    pub min_leaf_size: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            depths: vec![2],
            learner: Learner::Greedy,
            min_leaf_size: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Death probability of an excluded patient.
    pub p: f64,
    pub capacity: Capacity,
    pub replications: usize,
    pub guidelines: Vec<GuidelineName>,
}

fn default_guidelines() -> Vec<GuidelineName> {
    vec![GuidelineName::Fcfs, GuidelineName::Nys, GuidelineName::Tree]
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            p: 0.99,
            capacity: Capacity(180),
            replications: 100,
            guidelines: default_guidelines(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub capacities: Vec<Capacity>,
    pub guidelines: Vec<GuidelineName>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            capacities: (140..=250).step_by(10).map(Capacity).collect(),
            guidelines: default_guidelines(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    pub capacity: Capacity,
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    /// Absolute values of `C`. Ignored when `c_offsets` is set.
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    /// Values of `C - γ²ρ²`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_offsets: Option<Vec<f64>>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            capacity: Capacity(180),
            gamma: vec![1.0, 1.5, 2.0],
            rho: vec![1.0, 1.1, 1.5],
            c: vec![],
            c_offsets: Some(float_range(5.0, 65.0, 30.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Cohort file; `<output_dir>/cohort.jsonl` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cohort: Option<PathBuf>,
    pub seed: u64,
    pub data: DataConfig,
    pub costs: CostConfig,
    pub state: StateConfig,
    pub policy: PolicyConfig,
    pub simulation: SimulationConfig,
    pub sweep: SweepConfig,
    pub sensitivity: SensitivityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            cohort: None,
            seed: 42,
            data: DataConfig::default(),
            costs: CostConfig::default(),
            state: StateConfig::default(),
            policy: PolicyConfig::default(),
            simulation: SimulationConfig::default(),
            sweep: SweepConfig::default(),
            sensitivity: SensitivityConfig::default(),
        }
    }
}

/// The parts of [`RunConfig`] that determine artifact contents.
#[derive(Serialize)]
struct Hashed<'a> {
    seed: u64,
    data: &'a DataConfig,
    costs: &'a CostConfig,
    state: &'a StateConfig,
    policy: &'a PolicyConfig,
    simulation: &'a SimulationConfig,
    sweep: &'a SweepConfig,
    sensitivity: &'a SensitivityConfig,
}

impl RunConfig {
    pub fn cohort_path(&self) -> PathBuf {
        self.cohort.clone().unwrap_or_else(|| self.output_dir.join("cohort.jsonl"))
    }

    pub fn cost_params(&self) -> CostParams {
        CostParams {
            c: self.costs.c,
            rho: self.costs.rho,
            gamma: self.costs.gamma,
        }
    }

    pub fn state_def(&self) -> TriageStateDef {
        TriageStateDef {
            covariates: self.state.covariates,
            k: self.state.k,
            seed: self.seed,
        }
    }

    pub fn tree_config(&self) -> TreePolicyConfig {
        TreePolicyConfig {
            max_depth: self.policy.depths.clone(),
            learner: self.policy.learner,
            min_leaf_size: self.policy.min_leaf_size,
            state_weights: None,
        }
    }

    pub fn sensitivity_grid(&self) -> SensitivityGrid {
        let s = &self.sensitivity;
        SensitivityGrid {
            c: match &s.c_offsets {
                Some(o) => CGrid::OffsetAboveGammaRho(o.clone()),
                None => CGrid::Absolute(s.c.clone()),
            },
            rho: s.rho.clone(),
            gamma: s.gamma.clone(),
        }
    }

    /// SHA-256 over everything but file locations.
    pub fn hash(&self) -> String {
        let h = Hashed {
            seed: self.seed,
            data: &self.data,
            costs: &self.costs,
            state: &self.state,
            policy: &self.policy,
            simulation: &self.simulation,
            sweep: &self.sweep,
            sensitivity: &self.sensitivity,
        };
        let json = serde_json::to_string(&h).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range checks. Errors name the offending key.
    pub fn validate(&self) -> CliResult<Vec<String>> {
        let bad = |key: &str, msg: String| Err(CliError::Config(format!("{key}: {msg}")));
        if self.data.n == 0 {
            return bad("data.n", "must be at least 1".into());
        }
        let warnings = self
            .cost_params()
            .validate()
            .map_err(|e| CliError::Config(format!("costs: {e}")))?;
        if self.state.k == 0 {
            return bad("state.k", "must be at least 1".into());
        }
        if self.policy.depths.is_empty() {
            return bad("policy.depths", "needs at least one depth".into());
        }
        if self.policy.depths.len() != 1 && self.policy.depths.len() != 4 {
            return bad(
                "policy.depths",
                format!("give one depth or one per period (4), got {}", self.policy.depths.len()),
            );
        }
        if let Some(d) = self.policy.depths.iter().find(|d| **d > 12) {
            return bad("policy.depths", format!("depth {d} exceeds 12"));
        }
        if self.policy.min_leaf_size == 0 {
            return bad("policy.min_leaf_size", "must be at least 1".into());
        }
        let sim = &self.simulation;
        if !(0.0..=1.0).contains(&sim.p) {
            return bad("simulation.p", format!("{} outside [0, 1]", sim.p));
        }
        if sim.replications == 0 {
            return bad("simulation.replications", "must be at least 1".into());
        }
        check_guidelines("simulation.guidelines", &sim.guidelines)?;
        check_guidelines("sweep.guidelines", &self.sweep.guidelines)?;
        if self.sweep.capacities.is_empty() {
            return bad("sweep.capacities", "needs at least one capacity".into());
        }
        let s = &self.sensitivity;
        for (key, v) in [("sensitivity.gamma", &s.gamma), ("sensitivity.rho", &s.rho)] {
            if v.is_empty() {
                return bad(key, "needs at least one value".into());
            }
        }
        if s.c_offsets.is_none() && s.c.is_empty() {
            return bad("sensitivity.C", "needs at least one value when c_offsets is unset".into());
        }
        Ok(warnings)
    }
}

fn check_guidelines(key: &str, gs: &[GuidelineName]) -> CliResult<()> {
    if gs.is_empty() {
        return Err(CliError::Config(format!("{key}: needs at least one guideline")));
    }
    for (i, g) in gs.iter().enumerate() {
        if gs[..i].contains(g) {
            return Err(CliError::Config(format!("{key}: {g:?} listed twice")));
        }
    }
    Ok(())
}

/// Parses a `--set` value as a TOML value, falling back to a string.
fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid key {key:?}")));
    }
    let mut t = table;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = t.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = match entry {
            Value::Table(inner) => inner,
            _ => {
                return Err(CliError::Config(format!(
                    "{}: is not a section",
                    parts[..=i].join(".")
                )))
            }
        };
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Overrides layered over the config file, lowest precedence first.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    /// Value of `TREEPOLICY_SEED`, if set.
    pub env_seed: Option<String>,
    /// `key.path = value` pairs from `--set` and dedicated flags.
    pub sets: Vec<(String, String)>,
}

pub fn parse_config_str(text: &str, overrides: &Overrides) -> CliResult<RunConfig> {
    let mut table: Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(s) = &overrides.env_seed {
        let seed: u64 = s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}: {s:?} is not a non-negative integer")))?;
        table.insert("seed".into(), Value::Integer(seed as i64));
    }
    for (k, v) in &overrides.sets {
        set_path(&mut table, k, parse_value(v))?;
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        // The TOML error repeats the key on a line of its own.
        let inner = e.into_inner().to_string();
        let msg = inner
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with("in `"))
            .collect::<Vec<_>>()
            .join(" ");
        if path == "." {
            CliError::Config(msg)
        } else {
            CliError::Config(format!("{path}: {msg}"))
        }
    })?;
    Ok(cfg)
}

/// Reads the file (if any) and applies the overrides. Does not range-check;
/// see [`RunConfig::validate`].
pub fn parse_config(file: Option<&Path>, overrides: &Overrides) -> CliResult<RunConfig> {
    let text = match file {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}
