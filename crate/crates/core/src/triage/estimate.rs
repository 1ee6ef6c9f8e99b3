//! State definition and transition estimation for the four-period triage
//! MDP.
//!
//! Stages: triage (live states), 48h (live states and the period-1
//! terminals), 120h (live states, period-2 terminals, `done`) and discharge
//! (period-3 terminals, `done`). Terminal states carry their cost on every
//! action and move to `done`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_cluster, nearest, standardize};
use super::{build_costs, CostParams, Terminal};
use crate::cohort::{Cohort, Covariates, PatientTrajectory, EPOCH_OFFSETS, MAX_SOFA};
use crate::error::{Error, Result};
use crate::mdp::{MdpInstance, Stage, State};

pub const ENCODER_FORMAT: &str = "triage-encoder-v1";

const SOFA_LEVELS: usize = MAX_SOFA as usize + 1;
const SENTINEL: f64 = -1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateSet {
    #[default]
    SofaOnly,
    SofaAge,
    SofaCovariates,
}

impl CovariateSet {
    fn names(self) -> Vec<String> {
        let names: &[&str] = match self {
            CovariateSet::SofaOnly => &[],
            CovariateSet::SofaAge => &["age"],
            CovariateSet::SofaCovariates => &[
                "age",
                "male",
                "bmi",
                "charlson",
                "diabetes",
                "malignancy",
                "renal",
                "dementia",
                "chf",
            ],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    fn row(self, c: &Covariates) -> Vec<f64> {
        let b = |x: bool| x as u8 as f64;
        match self {
            CovariateSet::SofaOnly => vec![],
            CovariateSet::SofaAge => vec![c.age],
            CovariateSet::SofaCovariates => vec![
                c.age,
                b(c.male),
                c.bmi,
                c.charlson as f64,
                b(c.diabetes),
                b(c.malignancy),
                b(c.renal),
                b(c.dementia),
                b(c.chf),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriageStateDef {
    pub covariates: CovariateSet,
    /// Number of k-means clusters when covariates are used.
    pub k: usize,
    pub seed: u64,
}

impl Default for TriageStateDef {
    fn default() -> Self {
        TriageStateDef {
            covariates: CovariateSet::SofaOnly,
            k: 10,
            seed: 0,
        }
    }
}

/// Maps a patient reading to a state and to tree features. Holds the
/// standardization and centroids fitted on a cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEncoder {
    pub format: String,
    pub covariates: CovariateSet,
    pub covariate_names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Centroids in standardized units; empty without covariates.
    pub centroids: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl StateEncoder {
    pub fn fit(cohort: &Cohort, def: &TriageStateDef) -> Result<Self> {
        let names = def.covariates.names();
        if def.covariates == CovariateSet::SofaOnly {
            return Ok(StateEncoder {
                format: ENCODER_FORMAT.into(),
                covariates: def.covariates,
                covariate_names: names,
                means: vec![],
                sds: vec![],
                centroids: vec![],
                meta: BTreeMap::new(),
            });
        }
        if cohort.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let rows: Vec<Vec<f64>> = cohort.trajectories.iter().map(|p| def.covariates.row(&p.covariates)).collect();
        let (z, means, sds) = standardize(&rows);
        let km = kmeans_cluster(&z, def.k, def.seed)?;
        Ok(StateEncoder {
            format: ENCODER_FORMAT.into(),
            covariates: def.covariates,
            covariate_names: names,
            means,
            sds,
            centroids: km.centroids,
            meta: BTreeMap::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let e: StateEncoder = serde_json::from_str(text)?;
        if e.format != ENCODER_FORMAT {
            return Err(Error::Format(format!(
                "unsupported encoder format {:?}, expected {ENCODER_FORMAT:?}",
                e.format
            )));
        }
        Ok(e)
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.len().max(1)
    }

    fn clustered(&self) -> bool {
        !self.centroids.is_empty()
    }

    pub fn cluster_of(&self, c: &Covariates) -> usize {
        if !self.clustered() {
            return 0;
        }
        let z: Vec<f64> = self
            .covariates
            .row(c)
            .iter()
            .enumerate()
            .map(|(j, x)| (x - self.means[j]) / self.sds[j])
            .collect();
        nearest(&z, &self.centroids).0
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = vec!["sofa".to_string(), "improving".to_string()];
        if self.clustered() {
            names.push("cluster".into());
            names.extend(self.covariate_names.iter().cloned());
        }
        names
    }

    /// Features of a live state. Covariates enter through the centroid of
    /// the state's cluster, in original units.
    pub fn state_features(&self, sofa: u8, improving: bool, cluster: usize) -> Vec<f64> {
        let mut f = vec![sofa as f64, improving as u8 as f64];
        if self.clustered() {
            f.push(cluster as f64);
            f.extend(
                self.centroids[cluster]
                    .iter()
                    .enumerate()
                    .map(|(j, z)| z * self.sds[j] + self.means[j]),
            );
        }
        f
    }

    pub fn patient_features(&self, p: &PatientTrajectory, sofa: u8, improving: bool) -> Vec<f64> {
        self.state_features(sofa, improving, self.cluster_of(&p.covariates))
    }

    fn directions(epoch: usize) -> usize {
        if epoch == 0 {
            1
        } else {
            2
        }
    }

    fn num_live(&self, epoch: usize) -> usize {
        self.num_clusters() * SOFA_LEVELS * Self::directions(epoch)
    }

    fn live_index(&self, epoch: usize, sofa: u8, improving: bool, cluster: usize) -> usize {
        let dirs = Self::directions(epoch);
        let imp = if dirs == 1 { 0 } else { improving as usize };
        (cluster * SOFA_LEVELS + sofa as usize) * dirs + imp
    }

    fn live_states(&self, epoch: usize) -> Vec<State> {
        let dirs = Self::directions(epoch);
        let mut out = Vec::with_capacity(self.num_live(epoch));
        for c in 0..self.num_clusters() {
            for sofa in 0..SOFA_LEVELS as u8 {
                for imp in 0..dirs {
                    let improving = imp == 1;
                    let name = if self.clustered() {
                        format!("sofa{sofa}/imp{imp}/c{c}")
                    } else {
                        format!("sofa{sofa}/imp{imp}")
                    };
                    out.push(State {
                        name,
                        features: self.state_features(sofa, improving, c),
                    });
                }
            }
        }
        out
    }
}

/// SOFA reading at decision epoch `k` of the episode starting at `start`,
/// and whether it is strictly lower than at the previous epoch.
pub fn epoch_reading(p: &PatientTrajectory, start: usize, k: usize) -> (u8, bool) {
    let sofa = p.sofa_at(start + EPOCH_OFFSETS[k]);
    let improving = k > 0 && sofa < p.sofa_at(start + EPOCH_OFFSETS[k - 1]);
    (sofa, improving)
}

/// One intubation episode treated as its own trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeView<'a> {
    pub patient: &'a PatientTrajectory,
    pub start: usize,
    pub end: usize,
    /// Whether the episode ends in a death; earlier episodes of a
    /// re-intubated patient end alive.
    pub died: bool,
}

pub fn episode_trajectories(cohort: &Cohort) -> Vec<EpisodeView<'_>> {
    cohort
        .trajectories
        .iter()
        .flat_map(|p| {
            let last = p.episodes.len() - 1;
            p.episodes.iter().enumerate().map(move |(i, &[start, end])| EpisodeView {
                patient: p,
                start,
                end,
                died: i == last && p.died(),
            })
        })
        .collect()
}

fn terminal_offset(t: Terminal) -> usize {
    match t {
        Terminal::Deceased => 0,
        Terminal::Alive => 1,
        Terminal::DeceasedExcluded => 2,
        Terminal::AliveExcluded => 3,
    }
}

fn normalize(row: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = row.iter().sum();
    (total > 0.0).then(|| row.iter().map(|x| x / total).collect())
}

/// Empirical triage MDP. Maintain (and allocate) rows are observed
/// frequencies, exclude rows are `(p, 1 - p)` over the excluded death and
/// survival terminals, and unobserved live states borrow the pooled row of
/// their stage.
pub fn estimate_transitions(cohort: &Cohort, enc: &StateEncoder, p: f64, params: CostParams) -> Result<MdpInstance> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("p = {p} outside [0, 1]")));
    }
    let costs = build_costs(params)?;
    if cohort.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let live: Vec<usize> = (0..3).map(|k| enc.num_live(k)).collect();
    // Stage sizes: live + 4 terminals (+ done from stage 2 on).
    let sizes = [live[0], live[1] + 4, live[2] + 5, 5];
    let done = |stage: usize| sizes[stage] - 1;
    let terminal = |stage: usize, t: Terminal| if stage == 3 { 0 } else { live[stage] } + terminal_offset(t);

    let mut counts: Vec<Vec<Vec<f64>>> = (0..3).map(|k| vec![vec![0.0; sizes[k + 1]]; live[k]]).collect();
    let mut initial = vec![0.0; live[0]];
    for ep in episode_trajectories(cohort) {
        let cluster = enc.cluster_of(&ep.patient.covariates);
        let present = |k: usize| ep.start + EPOCH_OFFSETS[k] < ep.end;
        let state = |k: usize| {
            let (sofa, imp) = epoch_reading(ep.patient, ep.start, k);
            enc.live_index(k, sofa, imp, cluster)
        };
        initial[state(0)] += 1.0;
        for k in 0..3 {
            if !present(k) {
                break;
            }
            let next = if k < 2 && present(k + 1) {
                state(k + 1)
            } else {
                terminal(k + 1, if ep.died { Terminal::Deceased } else { Terminal::Alive })
            };
            counts[k][state(k)][next] += 1.0;
        }
    }

    let names: Vec<Vec<State>> = (0..3).map(|k| enc.live_states(k)).collect();
    let features = enc.feature_names();
    let sentinel = || vec![SENTINEL; features.len()];
    let mut stages = Vec::with_capacity(4);
    let mut kernel = Vec::with_capacity(3);
    let mut cost = Vec::with_capacity(4);
    let stage_names = ["triage", "48h", "120h", "discharge"];
    for k in 0..4 {
        let mut states = if k < 3 { names[k].clone() } else { Vec::new() };
        if k >= 1 {
            for t in Terminal::ALL {
                states.push(State {
                    name: t.name(k),
                    features: sentinel(),
                });
            }
        }
        if k >= 2 {
            states.push(State {
                name: "done".into(),
                features: sentinel(),
            });
        }
        debug_assert_eq!(states.len(), sizes[k]);
        let actions: Vec<String> = match k {
            0 => vec!["allocate".into(), "exclude".into()],
            1 | 2 => vec!["maintain".into(), "exclude".into()],
            _ => vec!["discharge".into()],
        };
        let na = actions.len();

        let mut stage_cost = vec![vec![0.0; na]; sizes[k]];
        if k >= 1 {
            for t in Terminal::ALL {
                stage_cost[terminal(k, t)] = vec![costs.cost(t, k); na];
            }
        }
        cost.push(stage_cost);

        if k < 3 {
            let pooled = counts[k].iter().fold(vec![0.0; sizes[k + 1]], |mut acc, row| {
                for (a, x) in acc.iter_mut().zip(row) {
                    *a += x;
                }
                acc
            });
            let pooled = normalize(&pooled);
            let mut exclude = vec![0.0; sizes[k + 1]];
            exclude[terminal(k + 1, Terminal::DeceasedExcluded)] = p;
            exclude[terminal(k + 1, Terminal::AliveExcluded)] = 1.0 - p;
            let mut to_done = vec![0.0; sizes[k + 1]];
            to_done[done(k + 1)] = 1.0;

            let mut rows = Vec::with_capacity(sizes[k]);
            for s in 0..sizes[k] {
                if s < live[k] {
                    let maintain = match normalize(&counts[k][s]) {
                        Some(r) => r,
                        None => pooled.clone().ok_or_else(|| {
                            Error::Structure(format!(
                                "state {} of stage {} has no observations and its stage has none to pool",
                                names[k][s].name, stage_names[k]
                            ))
                        })?,
                    };
                    rows.push(vec![maintain, exclude.clone()]);
                } else {
                    rows.push(vec![to_done.clone(); na]);
                }
            }
            kernel.push(rows);
        }
        stages.push(Stage {
            name: stage_names[k].into(),
            feature_names: features.clone(),
            states,
            actions,
        });
    }
    let initial = normalize(&initial).ok_or(Error::EmptyDataset)?;
    let mdp = MdpInstance {
        stages,
        kernel,
        costs: cost,
        initial,
    };
    mdp.ensure_valid()?;
    Ok(mdp)
}

pub fn build_triage_mdp(
    cohort: &Cohort,
    def: &TriageStateDef,
    p: f64,
    params: CostParams,
) -> Result<(MdpInstance, StateEncoder)> {
    let enc = StateEncoder::fit(cohort, def)?;
    let mdp = estimate_transitions(cohort, &enc, p, params)?;
    Ok((mdp, enc))
}
