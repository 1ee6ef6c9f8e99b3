//! Bootstrap replay of ventilator demand under a triage guideline.
//!
//! Every 2-hour tick: ventilators are released at recorded extubations or
//! deaths, patients reaching 48h or 120h on the ventilator are reassessed,
//! then new demand arrives (re-intubations first, then fresh bootstrap
//! draws). Below capacity every arrival is intubated. At capacity a
//! low-priority arrival is excluded, and any other arrival takes the
//! ventilator of an intubated patient with strictly lower priority (low
//! before medium, then longest on the ventilator, then lowest id) or is
//! excluded when there is none. FCFS never preempts. Excluded patients
//! leave the system and die with probability `p`, otherwise keep their
//! recorded outcome.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cohort::{Cohort, PatientTrajectory, EPOCH_OFFSETS};
use crate::error::{Error, Result};
use crate::mdp::dot;
use crate::triage::estimate::epoch_reading;
use crate::triage::{
    build_triage_mdp, nys_priority, tree_guideline_priority, CostParams, Epoch, Priority, StateEncoder,
    TriageStateDef,
};
use crate::tree_policy::{solve_tree_policy_dp, TreePolicy, TreePolicyConfig};

/// Capacity value meaning "no constraint".
pub const UNLIMITED: usize = usize::MAX;

/// Offset between the bootstrap stream and the stream used by
/// [`Guideline::Random`], so that the random guideline does not perturb
/// the draws shared with the other guidelines.
const RANDOM_GUIDELINE_SALT: u64 = 0x5851_f42d_4c95_7f2d;

#[derive(Clone, Debug)]
pub enum Guideline {
    Fcfs,
    Nys,
    Tree {
        name: String,
        policy: TreePolicy,
        encoder: StateEncoder,
    },
    /// Low or high with probability 1/2 each, at every epoch.
    Random,
}

impl Guideline {
    pub fn tree(name: impl Into<String>, policy: TreePolicy, encoder: StateEncoder) -> Result<Self> {
        let g = Guideline::Tree {
            name: name.into(),
            policy,
            encoder,
        };
        g.check()?;
        Ok(g)
    }

    pub fn name(&self) -> &str {
        match self {
            Guideline::Fcfs => "fcfs",
            Guideline::Nys => "nys",
            Guideline::Tree { name, .. } => name,
            Guideline::Random => "random",
        }
    }

    pub fn check(&self) -> Result<()> {
        if let Guideline::Tree { policy, encoder, .. } = self {
            if policy.trees.len() < 3 {
                return Err(Error::Structure(format!(
                    "tree guideline needs trees for 3 decision epochs, got {}",
                    policy.trees.len()
                )));
            }
            let names = encoder.feature_names();
            for (t, tree) in policy.trees.iter().take(3).enumerate() {
                if tree.feature_names != names {
                    return Err(Error::Structure(format!(
                        "tree for epoch {} uses features {:?}, the state encoder produces {:?}",
                        t + 1,
                        tree.feature_names,
                        names
                    )));
                }
            }
        }
        Ok(())
    }

    fn priority(
        &self,
        p: &PatientTrajectory,
        start: usize,
        epoch: Epoch,
        rng: &mut ChaCha8Rng,
    ) -> Result<Priority> {
        let (sofa, improving) = epoch_reading(p, start, epoch.index());
        match self {
            Guideline::Fcfs => Ok(Priority::High),
            Guideline::Nys => nys_priority(sofa as u32, improving, epoch),
            Guideline::Tree { policy, encoder, .. } => {
                tree_guideline_priority(policy, &encoder.patient_features(p, sofa, improving), epoch)
            }
            Guideline::Random => Ok(if rng.random_bool(0.5) {
                Priority::Low
            } else {
                Priority::High
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub capacity: usize,
    pub p: f64,
    pub replications: usize,
    pub seed: u64,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            capacity: 180,
            p: 0.99,
            replications: 100,
            seed: 0,
            trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidParameter(format!("p = {} outside [0, 1]", self.p)));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExclusionKind {
    /// Turned away on arrival.
    Triage,
    /// Removed while holding a priority assigned at a reassessment.
    Reassessment,
    /// Removed while still holding its triage priority.
    Preempted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Exclusion {
    pub tick: usize,
    pub patient: u64,
    pub kind: ExclusionKind,
    /// Recorded outcome, i.e. the outcome had the patient been ventilated.
    pub would_survive: bool,
    pub died: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEvent {
    pub tick: usize,
    pub event: &'static str,
    /// Index of the bootstrap draw within the replication.
    pub patient: usize,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationOutcome {
    pub sampled: usize,
    pub deaths: usize,
    /// Deaths had nobody been excluded.
    pub baseline_deaths: usize,
    pub exclusions: Vec<Exclusion>,
    /// Ventilators in use at the end of each tick.
    pub occupancy: Vec<u32>,
    pub trace: Vec<TraceEvent>,
}

impl ReplicationOutcome {
    pub fn peak_occupancy(&self) -> usize {
        self.occupancy.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn excluded(&self, kind: ExclusionKind) -> usize {
        self.exclusions.iter().filter(|e| e.kind == kind).count()
    }
}

/// One bootstrap draw: a recorded trajectory replayed from a slot tick.
#[derive(Clone, Copy, Debug)]
struct Draw {
    source: usize,
    slot: usize,
    u_death: f64,
}

/// Arrival slots: number of first intubations at each tick.
fn arrival_slots(cohort: &Cohort) -> Vec<usize> {
    let mut slots = vec![0usize; cohort.horizon() + 1];
    for p in &cohort.trajectories {
        slots[p.episodes[0][0]] += 1;
    }
    slots
}

fn draw_replication(cohort: &Cohort, slots: &[usize], seed: u64, replication: u64) -> Vec<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    let n = cohort.len();
    let mut draws = Vec::with_capacity(n);
    for (tick, &count) in slots.iter().enumerate() {
        for _ in 0..count {
            draws.push(Draw {
                source: rng.random_range(0..n),
                slot: tick,
                u_death: rng.random(),
            });
        }
    }
    draws
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Ev {
    End { uid: usize, episode: usize },
    Reassess { uid: usize, episode: usize, epoch: usize },
    Return { uid: usize, episode: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum State {
    Waiting,
    Ventilated {
        episode: usize,
        start: usize,
        priority: Priority,
        reassessed: bool,
    },
    Left,
}

struct Replay<'a> {
    cohort: &'a Cohort,
    guideline: &'a Guideline,
    config: &'a SimConfig,
    draws: Vec<Draw>,
    state: Vec<State>,
    excluded: Vec<bool>,
    events: Vec<Vec<Ev>>,
    occupancy: usize,
    rng: ChaCha8Rng,
    exclusions: Vec<Exclusion>,
    trace: Vec<TraceEvent>,
}

impl<'a> Replay<'a> {
    fn patient(&self, uid: usize) -> &'a PatientTrajectory {
        &self.cohort.trajectories[self.draws[uid].source]
    }

    /// Episode `k` of a draw, shifted to its slot.
    fn episode(&self, uid: usize, k: usize) -> (usize, usize) {
        let p = self.patient(uid);
        let first = p.episodes[0][0];
        let [s, e] = p.episodes[k];
        let slot = self.draws[uid].slot;
        (slot + s - first, slot + e - first)
    }

    fn schedule(&mut self, tick: usize, ev: Ev) {
        if self.events.len() <= tick {
            self.events.resize(tick + 1, Vec::new());
        }
        self.events[tick].push(ev);
    }

    fn log(&mut self, tick: usize, event: &'static str, patient: usize, detail: String) {
        if self.config.trace {
            self.trace.push(TraceEvent {
                tick,
                event,
                patient,
                detail,
            });
        }
    }

    fn priority(&mut self, uid: usize, episode: usize, epoch: Epoch) -> Result<Priority> {
        let p = self.patient(uid);
        let start = p.episodes[episode][0];
        self.guideline.priority(p, start, epoch, &mut self.rng)
    }

    fn intubate(&mut self, tick: usize, uid: usize, episode: usize, priority: Priority) {
        let (start, end) = self.episode(uid, episode);
        self.occupancy += 1;
        self.state[uid] = State::Ventilated {
            episode,
            start,
            priority,
            reassessed: false,
        };
        self.schedule(end, Ev::End { uid, episode });
        for (epoch, offset) in EPOCH_OFFSETS.iter().enumerate().skip(1) {
            let at = start + offset;
            if at < end {
                self.schedule(at, Ev::Reassess { uid, episode, epoch });
            }
        }
        self.log(tick, "intubate", uid, format!("{priority:?}").to_lowercase());
    }

    fn exclude(&mut self, tick: usize, uid: usize, kind: ExclusionKind) {
        if let State::Ventilated { .. } = self.state[uid] {
            self.occupancy -= 1;
        }
        self.state[uid] = State::Left;
        self.excluded[uid] = true;
        let p = self.patient(uid);
        let would_survive = !p.died();
        let died = p.died() || self.draws[uid].u_death < self.config.p;
        self.exclusions.push(Exclusion {
            tick,
            patient: p.id,
            kind,
            would_survive,
            died,
        });
        let kind_name = match kind {
            ExclusionKind::Triage => "triage",
            ExclusionKind::Reassessment => "reassessment",
            ExclusionKind::Preempted => "preempted",
        };
        self.log(tick, "exclude", uid, kind_name.into());
    }

    fn arrive(&mut self, tick: usize, uid: usize, episode: usize) -> Result<()> {
        let fcfs = matches!(self.guideline, Guideline::Fcfs);
        let priority = self.priority(uid, episode, Epoch::Triage)?;
        self.log(tick, "arrive", uid, format!("episode {episode}"));
        if self.occupancy < self.config.capacity {
            self.intubate(tick, uid, episode, priority);
            return Ok(());
        }
        if fcfs || priority == Priority::Low {
            self.exclude(tick, uid, ExclusionKind::Triage);
            return Ok(());
        }
        // Lowest priority first, then longest on the ventilator, then id.
        let victim = self
            .state
            .iter()
            .enumerate()
            .filter_map(|(v, s)| match *s {
                State::Ventilated {
                    start,
                    priority: pv,
                    reassessed,
                    ..
                } if pv < priority => Some((pv, start, v, reassessed)),
                _ => None,
            })
            .min_by_key(|&(pv, start, v, _)| (pv, start, v));
        match victim {
            Some((_, _, v, reassessed)) => {
                let kind = if reassessed {
                    ExclusionKind::Reassessment
                } else {
                    ExclusionKind::Preempted
                };
                self.exclude(tick, v, kind);
                self.intubate(tick, uid, episode, priority);
            }
            None => self.exclude(tick, uid, ExclusionKind::Triage),
        }
        Ok(())
    }

    fn run(mut self, slots_by_tick: Vec<Vec<usize>>) -> Result<ReplicationOutcome> {
        let mut occupancy = Vec::new();
        let mut tick = 0;
        while tick < self.events.len().max(slots_by_tick.len()) {
            let mut evs = std::mem::take(self.events.get_mut(tick).unwrap_or(&mut Vec::new()));
            // Releases, then reassessments, then returning patients by id.
            evs.sort_by_key(|e| match *e {
                Ev::End { uid, .. } => (0, uid),
                Ev::Reassess { uid, .. } => (1, uid),
                Ev::Return { uid, .. } => (2, uid),
            });
            for ev in evs {
                match ev {
                    Ev::End { uid, episode } => {
                        if let State::Ventilated { episode: e, .. } = self.state[uid] {
                            if e == episode {
                                self.occupancy -= 1;
                                let p = self.patient(uid);
                                if episode + 1 < p.episodes.len() {
                                    self.state[uid] = State::Waiting;
                                    let (s, _) = self.episode(uid, episode + 1);
                                    self.schedule(s, Ev::Return { uid, episode: episode + 1 });
                                    self.log(tick, "extubate", uid, "awaiting re-intubation".into());
                                } else {
                                    self.state[uid] = State::Left;
                                    let outcome = if p.died() { "deceased" } else { "alive" };
                                    self.log(tick, "discharge", uid, outcome.into());
                                }
                            }
                        }
                    }
                    Ev::Reassess { uid, episode, epoch } => {
                        if let State::Ventilated { episode: e, start, .. } = self.state[uid] {
                            if e == episode {
                                let ep = Epoch::from_index(epoch).expect("reassessment epoch");
                                let priority = self.priority(uid, episode, ep)?;
                                self.state[uid] = State::Ventilated {
                                    episode,
                                    start,
                                    priority,
                                    reassessed: true,
                                };
                                self.log(tick, "reassess", uid, format!("{priority:?}").to_lowercase());
                            }
                        }
                    }
                    Ev::Return { uid, episode } => {
                        if self.state[uid] == State::Waiting {
                            self.arrive(tick, uid, episode)?;
                        }
                    }
                }
            }
            if let Some(new) = slots_by_tick.get(tick) {
                for &uid in new {
                    self.arrive(tick, uid, 0)?;
                }
            }
            debug_assert!(self.occupancy <= self.config.capacity);
            occupancy.push(self.occupancy as u32);
            tick += 1;
        }

        let mut deaths = 0;
        let mut baseline = 0;
        for uid in 0..self.draws.len() {
            let died = self.patient(uid).died();
            baseline += died as usize;
            if !self.excluded[uid] {
                deaths += died as usize;
            }
        }
        deaths += self.exclusions.iter().filter(|e| e.died).count();
        Ok(ReplicationOutcome {
            sampled: self.draws.len(),
            deaths,
            baseline_deaths: baseline,
            exclusions: self.exclusions,
            occupancy,
            trace: self.trace,
        })
    }
}

pub fn run_replication(
    cohort: &Cohort,
    guideline: &Guideline,
    config: &SimConfig,
    replication: u64,
) -> Result<ReplicationOutcome> {
    config.validate()?;
    guideline.check()?;
    if cohort.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let slots = arrival_slots(cohort);
    let draws = draw_replication(cohort, &slots, config.seed, replication);
    let mut by_tick: Vec<Vec<usize>> = vec![Vec::new(); slots.len()];
    for (uid, d) in draws.iter().enumerate() {
        by_tick[d.slot].push(uid);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ RANDOM_GUIDELINE_SALT);
    rng.set_stream(replication);
    let n = draws.len();
    Replay {
        cohort,
        guideline,
        config,
        draws,
        state: vec![State::Waiting; n],
        excluded: vec![false; n],
        events: Vec::new(),
        occupancy: 0,
        rng,
        exclusions: Vec::new(),
        trace: Vec::new(),
    }
    .run(by_tick)
}

/// Survival rate (had they been ventilated) among excluded patients.
/// `None` when there was no exclusion in the category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ExcludedSurvival {
    pub overall: Option<f64>,
    pub triage: Option<f64>,
    pub reassessment: Option<f64>,
    pub preempted: Option<f64>,
}

pub fn excluded_survival_rates(traces: &[ReplicationOutcome]) -> ExcludedSurvival {
    let rate = |f: &dyn Fn(&Exclusion) -> bool| {
        let (mut n, mut alive) = (0usize, 0usize);
        for e in traces.iter().flat_map(|t| &t.exclusions).filter(|e| f(e)) {
            n += 1;
            alive += e.would_survive as usize;
        }
        (n > 0).then(|| alive as f64 / n as f64)
    };
    ExcludedSurvival {
        overall: rate(&|_| true),
        triage: rate(&|e| e.kind == ExclusionKind::Triage),
        reassessment: rate(&|e| e.kind == ExclusionKind::Reassessment),
        preempted: rate(&|e| e.kind == ExclusionKind::Preempted),
    }
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub guideline: String,
    pub capacity: usize,
    pub p: f64,
    pub deaths: Vec<usize>,
    pub mean_deaths: f64,
    pub ci: (f64, f64),
    /// Mean exclusions per replication.
    pub excluded_triage: f64,
    pub excluded_reassessment: f64,
    pub excluded_preempted: f64,
    pub excluded_survival: ExcludedSurvival,
    pub peak_occupancy: usize,
    pub replications: Vec<ReplicationOutcome>,
}

/// Mean and normal-approximation 95% interval.
pub fn mean_ci(xs: &[f64]) -> (f64, (f64, f64)) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, (m, m));
    }
    let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let h = 1.96 * sd / n.sqrt();
    (m, (m - h, m + h))
}

pub fn run_simulation(cohort: &Cohort, guideline: &Guideline, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let reps = (0..config.replications as u64)
        .into_par_iter()
        .map(|r| run_replication(cohort, guideline, config, r))
        .collect::<Result<Vec<_>>>()?;
    let deaths: Vec<usize> = reps.iter().map(|r| r.deaths).collect();
    let (mean_deaths, ci) = mean_ci(&deaths.iter().map(|&d| d as f64).collect::<Vec<_>>());
    let per_rep = |k: ExclusionKind| reps.iter().map(|r| r.excluded(k)).sum::<usize>() as f64 / reps.len() as f64;
    Ok(SimResult {
        guideline: guideline.name().to_string(),
        capacity: config.capacity,
        p: config.p,
        mean_deaths,
        ci,
        excluded_triage: per_rep(ExclusionKind::Triage),
        excluded_reassessment: per_rep(ExclusionKind::Reassessment),
        excluded_preempted: per_rep(ExclusionKind::Preempted),
        excluded_survival: excluded_survival_rates(&reps),
        peak_occupancy: reps.iter().map(|r| r.peak_occupancy()).max().unwrap_or(0),
        deaths,
        replications: reps,
    })
}

/// Every guideline at every capacity, with the same bootstrap draws.
pub fn capacity_sweep(
    cohort: &Cohort,
    guidelines: &[Guideline],
    capacities: &[usize],
    config: &SimConfig,
) -> Result<Vec<SimResult>> {
    if guidelines.is_empty() || capacities.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one guideline and one capacity".into()));
    }
    let mut out = Vec::with_capacity(guidelines.len() * capacities.len());
    for g in guidelines {
        for &c in capacities {
            let cfg = SimConfig {
                capacity: c,
                ..config.clone()
            };
            out.push(run_simulation(cohort, g, &cfg)?);
        }
    }
    Ok(out)
}

pub const SWEEP_COLUMNS: &str =
    "guideline,capacity,p,mean_deaths,ci_lo,ci_hi,excluded_triage,excluded_reassess,excluded_preempt,excl_survival_rate";

pub fn format_capacity(c: usize) -> String {
    if c == UNLIMITED {
        "inf".into()
    } else {
        c.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), |v| format!("{v:.4}"))
}

/// CSV rows under [`SWEEP_COLUMNS`]. Each line in `comments` is written
/// first, prefixed with `# `.
pub fn sweep_csv(rows: &[SimResult], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(SWEEP_COLUMNS);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{}",
            r.guideline,
            format_capacity(r.capacity),
            r.p,
            r.mean_deaths,
            r.ci.0,
            r.ci.1,
            r.excluded_triage,
            r.excluded_reassessment,
            r.excluded_preempted,
            fmt_opt(r.excluded_survival.overall)
        );
    }
    out
}

/// JSON lines, one event per line.
pub fn trace_jsonl(rep: &ReplicationOutcome) -> Result<String> {
    let mut out = String::new();
    for e in &rep.trace {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

/// `C` values of a sensitivity grid, either absolute or as offsets above
/// `γ²ρ²`.
#[derive(Clone, Debug, PartialEq)]
pub enum CGrid {
    Absolute(Vec<f64>),
    OffsetAboveGammaRho(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityGrid {
    pub c: CGrid,
    pub rho: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl SensitivityGrid {
    pub fn cells(&self) -> Vec<CostParams> {
        let mut out = Vec::new();
        for &gamma in &self.gamma {
            for &rho in &self.rho {
                let cs: Vec<f64> = match &self.c {
                    CGrid::Absolute(v) => v.clone(),
                    CGrid::OffsetAboveGammaRho(v) => v.iter().map(|o| gamma * gamma * rho * rho + o).collect(),
                };
                for c in cs {
                    out.push(CostParams { c, rho, gamma });
                }
            }
        }
        out
    }
}

/// Inclusive arithmetic range `lo, lo + step, ..., <= hi`.
pub fn float_range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || hi < lo {
        return vec![lo];
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

#[derive(Clone, Debug)]
pub struct SensitivityRow {
    pub params: CostParams,
    /// Why the cell was skipped, if it was.
    pub skipped: Option<String>,
    pub mean_deaths: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub mdp_cost: Option<f64>,
    pub policy: Option<TreePolicy>,
    /// Whether the fitted trees equal those of the first admissible cell.
    pub same_policy_as_first: Option<bool>,
}

/// For each admissible `(C, ρ, γ)`: estimate the MDP, fit a tree policy,
/// simulate it. Cells violating `C/γ > γρ²` are reported as skipped.
pub fn sensitivity_sweep(
    cohort: &Cohort,
    state_def: &TriageStateDef,
    grid: &SensitivityGrid,
    tree_cfg: &TreePolicyConfig,
    config: &SimConfig,
) -> Result<Vec<SensitivityRow>> {
    let mut rows = Vec::new();
    let mut first: Option<TreePolicy> = None;
    for params in grid.cells() {
        if let Err(e) = params.validate() {
            rows.push(SensitivityRow {
                params,
                skipped: Some(e.to_string()),
                mean_deaths: None,
                ci: None,
                mdp_cost: None,
                policy: None,
                same_policy_as_first: None,
            });
            continue;
        }
        let (mdp, enc) = build_triage_mdp(cohort, state_def, config.p, params)?;
        let sol = solve_tree_policy_dp(&mdp, tree_cfg)?;
        let g = Guideline::tree("tree", sol.policy.clone(), enc)?;
        let r = run_simulation(cohort, &g, config)?;
        let same = first.as_ref().map(|f| *f == sol.policy);
        if first.is_none() {
            first = Some(sol.policy.clone());
        }
        rows.push(SensitivityRow {
            params,
            skipped: None,
            mean_deaths: Some(r.mean_deaths),
            ci: Some(r.ci),
            mdp_cost: Some(dot(&mdp.initial, sol.values.stage(0))),
            policy: Some(sol.policy),
            same_policy_as_first: Some(same.unwrap_or(true)),
        });
    }
    if first.is_none() {
        return Err(Error::InvalidParameter(
            "no admissible (C, rho, gamma) cell: every cell violates C/gamma > gamma*rho^2".into(),
        ));
    }
    Ok(rows)
}

pub const SENSITIVITY_COLUMNS: &str = "C,rho,gamma,status,mean_deaths,ci_lo,ci_hi,mdp_cost,same_policy_as_first";

pub fn sensitivity_csv(rows: &[SensitivityRow], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(SENSITIVITY_COLUMNS);
    out.push('\n');
    for r in rows {
        let p = r.params;
        match &r.skipped {
            Some(_) => {
                let _ = writeln!(out, "{},{},{},skipped,NA,NA,NA,NA,NA", p.c, p.rho, p.gamma);
            }
            None => {
                let (lo, hi) = r.ci.unwrap_or((f64::NAN, f64::NAN));
                let _ = writeln!(
                    out,
                    "{},{},{},ok,{:.3},{:.3},{:.3},{:.4},{}",
                    p.c,
                    p.rho,
                    p.gamma,
                    r.mean_deaths.unwrap_or(f64::NAN),
                    lo,
                    hi,
                    r.mdp_cost.unwrap_or(f64::NAN),
                    r.same_policy_as_first.unwrap_or(true)
                );
            }
        }
    }
    out
}
