//! Seeded synthetic cohort generator, moment-matched to summary targets.
//!
//! Each patient gets its own ChaCha stream (`set_stream(id)`), so the
//! output does not depend on generation order. Outcomes are drawn first
//! from a logistic risk model whose intercept is solved so that expected
//! mortality equals the target; SOFA paths are then drawn conditionally on
//! the outcome.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal, Poisson};

use super::{Cohort, CohortSummary, Covariates, Discharge, PatientTrajectory, Status, MAX_SOFA, TICK_HOURS};
use crate::error::Result;

const TICKS_PER_DAY: usize = 24 / TICK_HOURS as usize;

/// Shape of the synthetic dynamics. Durations are in ticks.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub horizon_days: usize,
    /// Gamma-shaped admission surge over days.
    pub surge_shape: f64,
    pub surge_scale_days: f64,
    pub pre_vent_mean: f64,
    pub admission_sofa_sd: f64,
    /// Gap between deceased and surviving patients' mean SOFA at intubation.
    pub intubation_gap: f64,
    pub intubation_sd: f64,
    /// Same gap 48h into ventilation.
    pub gap_48h: f64,
    pub sd_48h: f64,
    pub deceased_final_sofa: f64,
    pub final_sd: f64,
    pub survivor_extubation_sofa: f64,
    pub deceased_vent_median: f64,
    pub survivor_vent_median: f64,
    pub vent_sigma: f64,
    pub survivor_post_median: f64,
    pub noise_ar: f64,
    pub noise_sd: f64,
    /// Weight of the unobserved severity term in the mortality model.
    pub latent_weight: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            horizon_days: 88,
            surge_shape: 4.0,
            surge_scale_days: 8.0,
            pre_vent_mean: 12.0,
            admission_sofa_sd: 1.5,
            intubation_gap: 1.0,
            intubation_sd: 2.0,
            gap_48h: 2.5,
            sd_48h: 2.0,
            deceased_final_sofa: 12.0,
            final_sd: 2.5,
            survivor_extubation_sofa: 2.5,
            deceased_vent_median: 132.0,
            survivor_vent_median: 156.0,
            vent_sigma: 0.6,
            survivor_post_median: 168.0,
            noise_ar: 0.9,
            noise_sd: 0.5,
            latent_weight: 1.0,
        }
    }
}

/// Per-patient draws made before the mortality intercept is known.
struct Draft {
    rng: ChaCha8Rng,
    admission_tick: usize,
    covariates: Covariates,
    risk: f64,
    u_outcome: f64,
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd.max(0.0)).expect("finite normal parameters").sample(rng)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intercept `a` with `mean(logistic(a + risk)) = target`.
fn solve_intercept(risks: &[f64], target: f64) -> f64 {
    let mean_at = |a: f64| risks.iter().map(|r| logistic(a + r)).sum::<f64>() / risks.len() as f64;
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn draft(seed: u64, id: u64, t: &CohortSummary, g: &GeneratorParams) -> Draft {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);

    let horizon = g.horizon_days as f64;
    let surge = Gamma::new(g.surge_shape, g.surge_scale_days).expect("positive surge parameters");
    let day = loop {
        let d: f64 = surge.sample(&mut rng);
        if d < horizon {
            break d;
        }
    };
    let admission_tick = (day * TICKS_PER_DAY as f64) as usize;

    let age = normal(&mut rng, t.age_mean, t.age_sd).clamp(18.0, 100.0);
    let male = rng.random_bool(t.male_fraction);
    let bmi = normal(&mut rng, t.bmi_mean, 7.5).clamp(14.0, 70.0);
    // Overdispersed count: Poisson with a gamma-distributed rate.
    let charlson = if t.charlson_mean > 0.0 {
        let r = 1.9;
        let lambda: f64 = Gamma::new(r, t.charlson_mean / r).unwrap().sample(&mut rng);
        if lambda > 0.0 {
            Poisson::new(lambda).unwrap().sample(&mut rng) as u32
        } else {
            0
        }
    } else {
        0
    };
    let covariates = Covariates {
        age,
        male,
        bmi,
        charlson,
        diabetes: rng.random_bool(t.diabetes_fraction),
        malignancy: rng.random_bool(t.malignancy_fraction),
        renal: rng.random_bool(t.renal_fraction),
        dementia: rng.random_bool(t.dementia_fraction),
        chf: rng.random_bool(t.chf_fraction),
    };
    let latent = normal(&mut rng, 0.0, 1.0);
    let age_z = if t.age_sd > 0.0 { (age - t.age_mean) / t.age_sd } else { 0.0 };
    let risk = 0.5 * age_z
        + 0.15 * (charlson as f64 - t.charlson_mean)
        + 0.3 * (male as u8 as f64)
        + 0.2 * (covariates.diabetes as u8 as f64)
        + 0.6 * (covariates.malignancy as u8 as f64)
        + 0.5 * (covariates.renal as u8 as f64)
        + 0.2 * (covariates.dementia as u8 as f64)
        + 0.4 * (covariates.chf as u8 as f64)
        + g.latent_weight * latent;
    let u_outcome = rng.random::<f64>();
    Draft {
        rng,
        admission_tick,
        covariates,
        risk,
        u_outcome,
    }
}

/// Piecewise-linear interpolation through `(tick, level)` knots.
fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    if x <= knots[0].0 {
        return knots[0].1;
    }
    for w in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            return if x1 > x0 { y0 + (y1 - y0) * (x - x0) / (x1 - x0) } else { y1 };
        }
    }
    knots.last().unwrap().1
}

fn finish(id: u64, mut d: Draft, died: bool, t: &CohortSummary, g: &GeneratorParams) -> PatientTrajectory {
    let rng = &mut d.rng;
    let s = t.survival;
    let sign = if died { s } else { -(1.0 - s) };

    let pre = {
        let p = 1.0 / (1.0 + g.pre_vent_mean);
        let mut k = 0usize;
        while !rng.random_bool(p) {
            k += 1;
        }
        k
    };
    let vent_median = if died { g.deceased_vent_median } else { g.survivor_vent_median };
    let vent = (LogNormal::new(vent_median.ln(), g.vent_sigma).unwrap().sample(rng) as usize).max(2);
    let post = if died {
        0
    } else {
        (LogNormal::new(g.survivor_post_median.ln(), 0.6).unwrap().sample(rng) as usize).max(1)
    };
    let reintubated = rng.random_bool(t.reintubation_fraction) && vent >= 8;
    let (first_len, gap) = if reintubated {
        let f = rng.random_range(0.3..0.6);
        ((((vent as f64) * f) as usize).max(1), rng.random_range(24..=60))
    } else {
        (vent, 0)
    };

    let admit = d.admission_tick;
    let start = admit + pre;
    let mut episodes = vec![[start, start + first_len]];
    if reintubated {
        let s2 = start + first_len + gap;
        episodes.push([s2, s2 + (vent - first_len).max(1)]);
    }
    let vent_end = episodes.last().unwrap()[1];
    let discharge = vent_end + post;

    // Mean SOFA level at each tick, then AR(1) noise on top.
    let level_adm = normal(rng, t.initial_sofa_mean, g.admission_sofa_sd);
    let level_int = normal(rng, t.sofa_intubation_mean + sign * g.intubation_gap, g.intubation_sd);
    let level_48 = level_int.max(0.0) + (t.sofa_48h_mean - t.sofa_intubation_mean) + sign * (g.gap_48h - g.intubation_gap)
        + normal(rng, 0.0, g.sd_48h);
    let level_end = if died {
        normal(rng, g.deceased_final_sofa, g.final_sd)
    } else {
        normal(rng, g.survivor_extubation_sofa, 1.0)
    };

    // Ventilation clock: ticks on the ventilator so far, which skips the gap
    // between two episodes.
    let vent_clock = |tick: usize| -> Option<f64> {
        let mut on = 0usize;
        for &[a, b] in &episodes {
            if tick < a {
                return None;
            }
            if tick < b {
                return Some((on + tick - a) as f64);
            }
            on += b - a;
        }
        None
    };
    let vent_knots = [
        (0.0, level_int),
        (24.0f64.min(vent as f64 * 0.5), level_48),
        (vent as f64, level_end),
    ];
    let mut noise = 0.0;
    let mut sofa = Vec::with_capacity(discharge - admit);
    for tick in admit..discharge {
        let mean = if tick < start {
            interpolate(&[(admit as f64, level_adm), (start as f64, level_int)], tick as f64)
        } else if let Some(c) = vent_clock(tick) {
            interpolate(&vent_knots, c)
        } else if tick < vent_end {
            // Between episodes: improved, then worsening again.
            let [_, e1] = episodes[0];
            let [s2, _] = episodes[1];
            let mid = interpolate(&vent_knots, (e1 - start) as f64);
            interpolate(&[(e1 as f64, 3.0), (s2 as f64, mid)], tick as f64)
        } else {
            interpolate(&[(vent_end as f64, level_end), (discharge as f64, 1.0)], tick as f64)
        };
        noise = g.noise_ar * noise + normal(rng, 0.0, g.noise_sd);
        sofa.push((mean + noise).round().clamp(0.0, MAX_SOFA as f64) as u8);
    }

    PatientTrajectory {
        id,
        admission_tick: admit,
        covariates: d.covariates,
        sofa,
        episodes,
        discharge: Discharge {
            status: if died { Status::Deceased } else { Status::Alive },
            tick: discharge,
        },
    }
}

/// Deterministic synthetic cohort of `n` ventilated patients.
pub fn generate_cohort(seed: u64, n: usize, targets: &CohortSummary) -> Result<Cohort> {
    generate_cohort_with(seed, n, targets, &GeneratorParams::default())
}

pub fn generate_cohort_with(seed: u64, n: usize, targets: &CohortSummary, params: &GeneratorParams) -> Result<Cohort> {
    targets.validate_targets()?;
    let drafts: Vec<Draft> = (0..n as u64).map(|id| draft(seed, id, targets, params)).collect();
    let risks: Vec<f64> = drafts.iter().map(|d| d.risk).collect();
    let intercept = if n > 0 { solve_intercept(&risks, 1.0 - targets.survival) } else { 0.0 };
    let trajectories = drafts
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let died = d.u_outcome < logistic(intercept + d.risk);
            finish(i as u64, d, died, targets, params)
        })
        .collect();
    Cohort::new(trajectories).map(|mut c| {
        c.origin = Some("2020-03-01".into());
        c
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::cohort_summary;

    #[test]
    fn empty_cohort() {
        let c = generate_cohort(1, 0, &CohortSummary::paper_targets()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn deterministic_and_valid() {
        let t = CohortSummary::paper_targets();
        let a = generate_cohort(7, 50, &t).unwrap();
        let b = generate_cohort(7, 50, &t).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        let c = generate_cohort(8, 50, &t).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn patients_do_not_depend_on_cohort_size() {
        // Everything except the outcome intercept is per-patient.
        let t = CohortSummary::paper_targets();
        let a = generate_cohort(3, 20, &t).unwrap();
        let b = generate_cohort(3, 30, &t).unwrap();
        for (p, q) in a.trajectories.iter().zip(&b.trajectories) {
            assert_eq!(p.covariates, q.covariates);
            assert_eq!(p.admission_tick, q.admission_tick);
        }
    }

    #[test]
    fn infeasible_targets_rejected() {
        let mut t = CohortSummary::paper_targets();
        t.reintubation_fraction = -0.1;
        assert!(generate_cohort(1, 10, &t).is_err());
    }

    #[test]
    fn intercept_matches_target_mean() {
        let risks = [-1.0, 0.0, 2.0, 0.5];
        let a = solve_intercept(&risks, 0.673);
        let m = risks.iter().map(|r| logistic(a + r)).sum::<f64>() / 4.0;
        assert!((m - 0.673).abs() < 1e-12);
    }

    #[test]
    #[ignore]
    fn print_default_summary() {
        let c = generate_cohort(42, 807, &CohortSummary::paper_targets()).unwrap();
        print!("{}", cohort_summary(&c).unwrap().render());
    }
}
