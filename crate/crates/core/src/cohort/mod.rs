//! Patient trajectories on a 2-hour grid, their line-oriented file format,
//! and summary statistics.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod generate;

pub use generate::{generate_cohort, GeneratorParams};

pub const COHORT_FORMAT: &str = "cohort-v1";
pub const TICK_HOURS: u32 = 2;
pub const MAX_SOFA: u8 = 24;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub age: f64,
    pub male: bool,
    pub bmi: f64,
    pub charlson: u32,
    pub diabetes: bool,
    pub malignancy: bool,
    pub renal: bool,
    pub dementia: bool,
    pub chf: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Deceased,
    Alive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discharge {
    pub status: Status,
    pub tick: usize,
}

/// One hospital stay. Ticks are absolute grid indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientTrajectory {
    pub id: u64,
    pub admission_tick: usize,
    pub covariates: Covariates,
    /// `sofa[i]` is the reading at tick `admission_tick + i`, for every tick
    /// of the stay up to (not including) discharge.
    pub sofa: Vec<u8>,
    /// Intubation episodes as `[start, end)` tick pairs, in order.
    pub episodes: Vec<[usize; 2]>,
    pub discharge: Discharge,
}

impl PatientTrajectory {
    /// Reading at an absolute tick, clamped to the stay.
    pub fn sofa_at(&self, tick: usize) -> u8 {
        let i = tick.saturating_sub(self.admission_tick).min(self.sofa.len() - 1);
        self.sofa[i]
    }

    pub fn died(&self) -> bool {
        self.discharge.status == Status::Deceased
    }

    pub fn max_sofa(&self) -> u8 {
        self.sofa.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(format!("patient {}: {msg}", self.id)));
        if self.discharge.tick <= self.admission_tick {
            return bad("discharge is not after admission".into());
        }
        if self.sofa.len() != self.discharge.tick - self.admission_tick {
            return bad(format!(
                "{} SOFA readings for a stay of {} ticks",
                self.sofa.len(),
                self.discharge.tick - self.admission_tick
            ));
        }
        if let Some(s) = self.sofa.iter().find(|s| **s > MAX_SOFA) {
            return bad(format!("SOFA {s} out of range 0..=24"));
        }
        if self.episodes.is_empty() {
            return bad("no intubation episode".into());
        }
        let mut prev_end = self.admission_tick;
        for (k, &[start, end]) in self.episodes.iter().enumerate() {
            if start >= end {
                return bad(format!("episode {k} is empty or reversed"));
            }
            if start < prev_end {
                return bad(format!("episode {k} overlaps the previous episode or precedes admission"));
            }
            if end > self.discharge.tick {
                return bad(format!("episode {k} ends after discharge"));
            }
            prev_end = end;
        }
        if !(self.covariates.age.is_finite() && self.covariates.bmi.is_finite()) {
            return bad("non-finite covariate".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortHeader {
    pub format: String,
    pub tick_hours: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub tick_hours: u32,
    /// Calendar label of tick 0, informational only.
    pub origin: Option<String>,
    /// Free-form provenance carried in the header.
    pub meta: BTreeMap<String, String>,
    pub trajectories: Vec<PatientTrajectory>,
}

impl Default for Cohort {
    fn default() -> Self {
        Cohort {
            tick_hours: TICK_HOURS,
            origin: None,
            meta: BTreeMap::new(),
            trajectories: Vec::new(),
        }
    }
}

impl Cohort {
    pub fn new(trajectories: Vec<PatientTrajectory>) -> Result<Self> {
        let c = Cohort {
            trajectories,
            ..Default::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for p in &self.trajectories {
            p.validate()?;
            if !ids.insert(p.id) {
                return Err(Error::InvalidParameter(format!("duplicate patient id {}", p.id)));
            }
        }
        Ok(())
    }

    /// Last tick at which anything happens.
    pub fn horizon(&self) -> usize {
        self.trajectories.iter().map(|p| p.discharge.tick).max().unwrap_or(0)
    }

    /// Number of ventilators in use at each tick.
    pub fn ventilator_occupancy(&self) -> Vec<usize> {
        let mut delta = vec![0i64; self.horizon() + 1];
        for p in &self.trajectories {
            for &[s, e] in &p.episodes {
                delta[s] += 1;
                delta[e] -= 1;
            }
        }
        let mut level = 0i64;
        delta
            .iter()
            .map(|d| {
                level += d;
                level as usize
            })
            .collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CohortHeader {
            format: COHORT_FORMAT.into(),
            tick_hours: self.tick_hours,
            origin: self.origin.clone(),
            meta: self.meta.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for p in &self.trajectories {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the line format. `label` names the source in errors.
    pub fn read<R: BufRead>(r: R, label: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: label.to_path_buf(),
            line,
            message,
        };
        let mut lines = r.lines().enumerate();
        let header: CohortHeader = loop {
            match lines.next() {
                None => return Err(err(1, "missing header line".into())),
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| err(i + 1, format!("bad header: {e}")))?;
                }
            }
        };
        if header.format != COHORT_FORMAT {
            return Err(Error::Format(format!(
                "{}: unsupported cohort format {:?}, expected {COHORT_FORMAT:?}",
                label.display(),
                header.format
            )));
        }
        if header.tick_hours != TICK_HOURS {
            return Err(Error::Format(format!(
                "{}: tick length {}h, only {TICK_HOURS}h grids are supported",
                label.display(),
                header.tick_hours
            )));
        }
        let mut trajectories = Vec::new();
        let mut ids = HashSet::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let p: PatientTrajectory = serde_json::from_str(&line).map_err(|e| err(i + 1, e.to_string()))?;
            p.validate().map_err(|e| err(i + 1, e.to_string()))?;
            if !ids.insert(p.id) {
                return Err(err(i + 1, format!("duplicate patient id {}", p.id)));
            }
            trajectories.push(p);
        }
        Ok(Cohort {
            tick_hours: header.tick_hours,
            origin: header.origin,
            meta: header.meta,
            trajectories,
        })
    }
}

pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    cohort.write(BufWriter::new(File::create(path)?))
}

pub fn load_cohort(path: &Path) -> Result<Cohort> {
    Cohort::read(BufReader::new(File::open(path)?), path)
}

/// Table-1 style statistics. Durations are in days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub survival: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub male_fraction: f64,
    pub bmi_mean: f64,
    pub charlson_mean: f64,
    pub diabetes_fraction: f64,
    pub malignancy_fraction: f64,
    pub renal_fraction: f64,
    pub dementia_fraction: f64,
    pub chf_fraction: f64,
    pub initial_sofa_mean: f64,
    pub max_sofa_mean: f64,
    /// At the first intubation, then 48h and 120h into it (among patients
    /// still intubated then).
    pub sofa_intubation_mean: f64,
    pub sofa_48h_mean: f64,
    pub sofa_120h_mean: f64,
    pub los_median_days: f64,
    /// Patients with two or more episodes, over n.
    pub reintubation_fraction: f64,
    /// Episode starts per tick.
    pub new_intubations: Vec<usize>,
    pub peak_ventilators: usize,
}

impl CohortSummary {
    /// The published cohort statistics.
    pub fn paper_targets() -> Self {
        CohortSummary {
            n: 807,
            survival: 0.327,
            age_mean: 64.0,
            age_sd: 13.5,
            male_fraction: 0.599,
            bmi_mean: 30.8,
            charlson_mean: 2.9,
            diabetes_fraction: 0.40,
            malignancy_fraction: 0.045,
            renal_fraction: 0.422,
            dementia_fraction: 0.114,
            chf_fraction: 0.185,
            initial_sofa_mean: 2.0,
            max_sofa_mean: 9.7,
            sofa_intubation_mean: 3.7,
            sofa_48h_mean: 6.3,
            sofa_120h_mean: 5.9,
            los_median_days: 16.8,
            reintubation_fraction: 0.057,
            new_intubations: Vec::new(),
            peak_ventilators: 253,
        }
    }

    /// Rejects targets that no cohort could have.
    pub fn validate_targets(&self) -> Result<()> {
        let fractions = [
            ("survival", self.survival),
            ("male_fraction", self.male_fraction),
            ("diabetes_fraction", self.diabetes_fraction),
            ("malignancy_fraction", self.malignancy_fraction),
            ("renal_fraction", self.renal_fraction),
            ("dementia_fraction", self.dementia_fraction),
            ("chf_fraction", self.chf_fraction),
            ("reintubation_fraction", self.reintubation_fraction),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("target {name} = {v} is not a fraction")));
            }
        }
        let positive = [
            ("age_mean", self.age_mean),
            ("bmi_mean", self.bmi_mean),
            ("los_median_days", self.los_median_days),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("target {name} = {v} must be positive")));
            }
        }
        let nonneg = [("age_sd", self.age_sd), ("charlson_mean", self.charlson_mean)];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("target {name} = {v} must be nonnegative")));
            }
        }
        let sofas = [
            ("initial_sofa_mean", self.initial_sofa_mean),
            ("max_sofa_mean", self.max_sofa_mean),
            ("sofa_intubation_mean", self.sofa_intubation_mean),
            ("sofa_48h_mean", self.sofa_48h_mean),
            ("sofa_120h_mean", self.sofa_120h_mean),
        ];
        for (name, v) in sofas {
            if !(0.0..=MAX_SOFA as f64).contains(&v) {
                return Err(Error::InvalidParameter(format!("target {name} = {v} outside 0..=24")));
            }
        }
        Ok(())
    }

    /// Fields with asserted tolerances: (name, value, target, tolerance).
    pub fn calibration_checks(&self, target: &CohortSummary) -> Vec<CalibrationCheck> {
        vec![
            CalibrationCheck::new("survival", self.survival, target.survival, 0.03),
            CalibrationCheck::new("age_mean", self.age_mean, target.age_mean, 1.5),
            CalibrationCheck::new(
                "sofa_intubation_mean",
                self.sofa_intubation_mean,
                target.sofa_intubation_mean,
                0.5,
            ),
            CalibrationCheck::new("sofa_48h_mean", self.sofa_48h_mean, target.sofa_48h_mean, 0.7),
            CalibrationCheck::new(
                "reintubation_fraction",
                self.reintubation_fraction,
                target.reintubation_fraction,
                0.02,
            ),
        ]
    }

    pub fn render(&self) -> String {
        let rows: Vec<(&str, String)> = vec![
            ("n", self.n.to_string()),
            ("survival", format!("{:.1}%", 100.0 * self.survival)),
            ("age", format!("{:.1} (sd {:.1})", self.age_mean, self.age_sd)),
            ("male", format!("{:.1}%", 100.0 * self.male_fraction)),
            ("BMI", format!("{:.1}", self.bmi_mean)),
            ("Charlson", format!("{:.1}", self.charlson_mean)),
            ("diabetes", format!("{:.1}%", 100.0 * self.diabetes_fraction)),
            ("malignancy", format!("{:.1}%", 100.0 * self.malignancy_fraction)),
            ("renal disease", format!("{:.1}%", 100.0 * self.renal_fraction)),
            ("dementia", format!("{:.1}%", 100.0 * self.dementia_fraction)),
            ("CHF", format!("{:.1}%", 100.0 * self.chf_fraction)),
            ("initial SOFA", format!("{:.1}", self.initial_sofa_mean)),
            ("max SOFA", format!("{:.1}", self.max_sofa_mean)),
            ("SOFA at intubation", format!("{:.1}", self.sofa_intubation_mean)),
            ("SOFA at 48h", format!("{:.1}", self.sofa_48h_mean)),
            ("SOFA at 120h", format!("{:.1}", self.sofa_120h_mean)),
            ("LOS median (days)", format!("{:.1}", self.los_median_days)),
            ("re-intubated", format!("{:.1}%", 100.0 * self.reintubation_fraction)),
            ("peak ventilators", self.peak_ventilators.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<20} {v}\n"));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationCheck {
    pub field: &'static str,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
}

impl CalibrationCheck {
    fn new(field: &'static str, value: f64, target: f64, tolerance: f64) -> Self {
        CalibrationCheck {
            field,
            value,
            target,
            tolerance,
        }
    }

    pub fn ok(&self) -> bool {
        (self.value - self.target).abs() <= self.tolerance
    }
}

/// Offsets of the three decision epochs into an episode, in ticks.
pub const EPOCH_OFFSETS: [usize; 3] = [0, 24, 60];

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn frac(cohort: &Cohort, f: impl Fn(&PatientTrajectory) -> bool) -> f64 {
    cohort.trajectories.iter().filter(|p| f(p)).count() as f64 / cohort.len() as f64
}

pub fn cohort_summary(cohort: &Cohort) -> Result<CohortSummary> {
    if cohort.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ps = &cohort.trajectories;
    let n = ps.len();
    let age_mean = mean(ps.iter().map(|p| p.covariates.age));
    let age_var = if n > 1 {
        ps.iter().map(|p| (p.covariates.age - age_mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let at_epoch = |k: usize| {
        mean(ps.iter().filter_map(|p| {
            let [s, e] = p.episodes[0];
            let tick = s + EPOCH_OFFSETS[k];
            (tick < e).then(|| p.sofa_at(tick) as f64)
        }))
    };
    let mut los: Vec<f64> = ps
        .iter()
        .map(|p| ((p.discharge.tick - p.admission_tick) * cohort.tick_hours as usize) as f64 / 24.0)
        .collect();
    los.sort_by(f64::total_cmp);
    let los_median_days = if n % 2 == 1 {
        los[n / 2]
    } else {
        (los[n / 2 - 1] + los[n / 2]) / 2.0
    };
    let mut new_intubations = vec![0usize; cohort.horizon() + 1];
    for p in ps {
        for &[s, _] in &p.episodes {
            new_intubations[s] += 1;
        }
    }
    Ok(CohortSummary {
        n,
        survival: frac(cohort, |p| !p.died()),
        age_mean,
        age_sd: age_var.sqrt(),
        male_fraction: frac(cohort, |p| p.covariates.male),
        bmi_mean: mean(ps.iter().map(|p| p.covariates.bmi)),
        charlson_mean: mean(ps.iter().map(|p| p.covariates.charlson as f64)),
        diabetes_fraction: frac(cohort, |p| p.covariates.diabetes),
        malignancy_fraction: frac(cohort, |p| p.covariates.malignancy),
        renal_fraction: frac(cohort, |p| p.covariates.renal),
        dementia_fraction: frac(cohort, |p| p.covariates.dementia),
        chf_fraction: frac(cohort, |p| p.covariates.chf),
        initial_sofa_mean: mean(ps.iter().map(|p| p.sofa[0] as f64)),
        max_sofa_mean: mean(ps.iter().map(|p| p.max_sofa() as f64)),
        sofa_intubation_mean: at_epoch(0),
        sofa_48h_mean: at_epoch(1),
        sofa_120h_mean: at_epoch(2),
        los_median_days,
        reintubation_fraction: frac(cohort, |p| p.episodes.len() >= 2),
        new_intubations,
        peak_ventilators: cohort.ventilator_occupancy().into_iter().max().unwrap_or(0),
    })
}
