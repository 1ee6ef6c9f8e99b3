//! Acceptance suite. One PASS/FAIL line per criterion; exits nonzero if
//! any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treepolicy::cohort::{cohort_summary, generate_cohort, Cohort, CohortSummary};
use treepolicy::mdp::{
    bellman_residual, enumerate_policies_oracle, evaluate_policy, random_instance, value_iteration, MarkovPolicy,
    MdpInstance, RandomShape,
};
use treepolicy::sim::{run_simulation, Guideline, SimConfig, UNLIMITED};
use treepolicy::tree::{classification_cost, fit_tree_exact, fit_tree_greedy, WeightedDataset};
use treepolicy::tree_policy::fixtures::{counterexample_fixtures, history_fixture, initial_distribution_fixture};
use treepolicy::tree_policy::{
    expand_to_markov, naive_projection_policy, reduce_ct_to_otp, solve_otp_exact, solve_tree_policy_dp, Learner,
    TreePolicyConfig,
};
use treepolicy::triage::{build_costs, build_triage_mdp, nys_priority_flagged, CostParams, Epoch, NysGap, Priority, Terminal};
use treepolicy::Error;
use treepolicy_cli::{run_pipeline, Command, RunConfig};

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn total(m: &MdpInstance, v: &[f64]) -> f64 {
    m.initial.iter().zip(v).map(|(p, x)| p * x).sum()
}

fn vi_cost(m: &MdpInstance) -> f64 {
    let (v, _) = value_iteration(m).unwrap();
    total(m, v.stage(0))
}

fn instances() -> Vec<MdpInstance> {
    (0..200).map(|s| random_instance(s, RandomShape::default())).collect()
}

fn c1_oracle() -> Check {
    let start = Instant::now();
    for (seed, m) in instances().iter().enumerate() {
        let (best, _) = enumerate_policies_oracle(m).map_err(|e| e.to_string())?;
        let vi = vi_cost(m);
        ensure((vi - best).abs() <= 1e-9, || format!("seed {seed}: VI {vi} vs oracle {best}"))?;
    }
    let t = start.elapsed().as_secs_f64();
    ensure(t < 10.0, || format!("took {t:.2}s"))?;
    Ok(format!("200 instances in {t:.2}s"))
}

fn c2_residuals(triage: &MdpInstance) -> Check {
    let mut worst: f64 = 0.0;
    let fixtures = counterexample_fixtures().into_iter().map(|f| f.mdp);
    for m in instances().into_iter().chain(fixtures).chain([triage.clone()]) {
        let (v, _) = value_iteration(&m).map_err(|e| e.to_string())?;
        worst = worst.max(bellman_residual(&m, &v));
    }
    ensure(worst <= 1e-12, || format!("worst residual {worst:e}"))?;
    Ok(format!("worst residual {worst:e}"))
}

fn dataset(seed: u64) -> WeightedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=8);
    let d = rng.random_range(1..=2);
    let k = rng.random_range(2..=3);
    WeightedDataset::new(
        (0..d).map(|j| format!("f{j}")).collect(),
        (0..k).map(|l| format!("y{l}")).collect(),
        (0..n).map(|_| (0..d).map(|_| rng.random_range(0..5) as f64).collect()).collect(),
        (0..n).map(|_| (0..k).map(|_| rng.random_range(0..6) as f64).collect()).collect(),
    )
    .unwrap()
}

/// Every split on every midpoint of the full dataset, recursively.
fn brute_force(data: &WeightedDataset, idx: &[usize], depth: usize) -> f64 {
    let leaf = (0..data.num_labels())
        .map(|l| idx.iter().map(|&i| data.weights()[i][l]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    if depth == 0 {
        return leaf;
    }
    let mut best = leaf;
    for f in 0..data.feature_names().len() {
        let mut vals: Vec<f64> = data.points().iter().map(|x| x[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let th = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| data.points()[i][f] <= th);
            best = best.min(brute_force(data, &l, depth - 1) + brute_force(data, &r, depth - 1));
        }
    }
    best
}

fn c3_tree_oracle() -> Check {
    let start = Instant::now();
    for seed in 0..50 {
        let data = dataset(seed);
        let idx: Vec<usize> = (0..data.len()).collect();
        for depth in 0..=2 {
            let exact = classification_cost(&fit_tree_exact(&data, depth).unwrap(), &data).unwrap();
            let brute = brute_force(&data, &idx, depth);
            ensure(exact == brute, || format!("seed {seed} depth {depth}: exact {exact} vs brute force {brute}"))?;
            let greedy = classification_cost(&fit_tree_greedy(&data, depth, 1).unwrap(), &data).unwrap();
            ensure(greedy >= exact, || format!("seed {seed} depth {depth}: greedy {greedy} < exact {exact}"))?;
        }
    }
    let t = start.elapsed().as_secs_f64();
    ensure(t < 30.0, || format!("took {t:.2}s"))?;
    Ok(format!("50 datasets, depths 0..=2, in {t:.2}s"))
}

fn c4_round_trip() -> Check {
    for seed in 0..50 {
        let data = dataset(1000 + seed);
        for depth in 1..=2 {
            let m = reduce_ct_to_otp(&data).map_err(|e| e.to_string())?;
            let (_, otp) = solve_otp_exact(&m, &TreePolicyConfig::with_depths(vec![depth], Learner::Exact))
                .map_err(|e| e.to_string())?;
            let ct = classification_cost(&fit_tree_exact(&data, depth).unwrap(), &data).unwrap();
            let scaled = otp * data.len() as f64;
            ensure((scaled - ct).abs() <= 1e-9, || format!("seed {seed} depth {depth}: {scaled} vs {ct}"))?;
        }
    }
    Ok("50 instances at depths 1 and 2".into())
}

fn c5_fixtures() -> Check {
    let leaf = |h| TreePolicyConfig::with_depths(vec![0; h], Learner::Exact);
    let mut shared = Vec::new();
    for p1 in [[1.0, 0.0], [0.0, 1.0]] {
        let m = initial_distribution_fixture(p1);
        let (tp, c) = solve_otp_exact(&m, &leaf(1)).map_err(|e| e.to_string())?;
        ensure(c == 0.0, || format!("p1 {p1:?}: cost {c}"))?;
        shared.push(expand_to_markov(&m, &tp).unwrap().actions().unwrap()[0][0]);
    }
    ensure(shared[0] != shared[1], || format!("shared action does not flip: {shared:?}"))?;

    let m = history_fixture();
    let unconstrained = vi_cost(&m);
    ensure(unconstrained == 0.0, || format!("unconstrained cost {unconstrained}"))?;
    // Single-leaf trees in both periods: the period-2 action is shared.
    let mut by_enumeration = f64::INFINITY;
    for a in 0..m.stage(1).num_actions() {
        let pi = MarkovPolicy::deterministic(vec![vec![0; 2], vec![a; 3]]);
        by_enumeration = by_enumeration.min(evaluate_policy(&m, &pi).unwrap().1);
    }
    ensure((by_enumeration - 4.5).abs() < 1e-12, || format!("enumeration gives {by_enumeration}"))?;
    let (_, otp) = solve_otp_exact(&m, &leaf(2)).map_err(|e| e.to_string())?;
    ensure((otp - 4.5).abs() < 1e-12, || format!("exact tree policy cost {otp}"))?;
    ensure(otp > unconstrained, || "no separation".into())?;
    Ok(format!("shared actions {shared:?}; history instance 0 vs {otp}"))
}

fn c6_consistency() -> Check {
    for (seed, m) in instances().iter().enumerate() {
        let sol = solve_tree_policy_dp(m, &TreePolicyConfig::with_depths(vec![2], Learner::Exact))
            .map_err(|e| e.to_string())?;
        let vi = vi_cost(m);
        ensure((sol.total_cost - vi).abs() <= 1e-9, || format!("seed {seed}: DP {} vs VI {vi}", sol.total_cost))?;
    }
    // One period, uniform initial distribution over 1, 2 or 4 states.
    let mut checked = 0;
    for seed in 0..300 {
        let mut m = random_instance(seed, RandomShape { max_horizon: 1, ..RandomShape::default() });
        let n = m.stage(0).num_states();
        if ![1, 2, 4].contains(&n) {
            continue;
        }
        m.initial = vec![1.0 / n as f64; n];
        for depth in 0..=2 {
            let cfg = TreePolicyConfig::with_depths(vec![depth], Learner::Exact);
            let dp = solve_tree_policy_dp(&m, &cfg).map_err(|e| e.to_string())?.total_cost;
            let (_, otp) = solve_otp_exact(&m, &cfg).map_err(|e| e.to_string())?;
            ensure(dp == otp, || format!("seed {seed} depth {depth}: DP {dp} vs OTP {otp}"))?;
            checked += 1;
        }
    }
    ensure(checked >= 100, || format!("only {checked} one-period checks"))?;
    Ok(format!("200 isolating instances; {checked} one-period checks"))
}

fn c7_dominance() -> Check {
    let mut guarded = 0;
    for (seed, m) in instances().iter().enumerate() {
        let vi = vi_cost(m);
        for depth in 0..=1 {
            for learner in [Learner::Greedy, Learner::Exact] {
                let cfg = TreePolicyConfig::with_depths(vec![depth], learner);
                let dp = solve_tree_policy_dp(m, &cfg).map_err(|e| e.to_string())?.total_cost;
                let (_, naive) = naive_projection_policy(m, &cfg).map_err(|e| e.to_string())?;
                ensure(dp >= vi - 1e-9 && naive >= vi - 1e-9, || format!("seed {seed}: below VI"))?;
                match solve_otp_exact(m, &cfg) {
                    Ok((_, otp)) => {
                        ensure(otp <= dp.min(naive) + 1e-9, || {
                            format!("seed {seed} depth {depth}: OTP {otp} > min(DP {dp}, naive {naive})")
                        })?;
                        ensure(otp >= vi - 1e-9, || format!("seed {seed}: OTP below VI"))?;
                        guarded += 1;
                    }
                    Err(Error::GuardExceeded { .. }) => {}
                    Err(e) => return Err(e.to_string()),
                }
            }
        }
    }
    ensure(guarded > 0, || "no guarded instance".into())?;
    Ok(format!("{guarded} guarded instance/config pairs"))
}

fn c8_costs() -> Check {
    let k = build_costs(CostParams::default()).map_err(|e| e.to_string())?;
    let a1 = k.cost(Terminal::Alive, 1);
    let a3ex = k.cost(Terminal::AliveExcluded, 3);
    let d1ex = k.cost(Terminal::DeceasedExcluded, 1);
    ensure(a1 == 1.0, || format!("c(A1) = {a1}"))?;
    ensure((a3ex - 1.815).abs() < 1e-12, || format!("c(A3ex) = {a3ex}"))?;
    ensure((d1ex - 200.0 / 3.0).abs() < 1e-9, || format!("c(D1ex) = {d1ex}"))?;
    ensure(
        CostParams { c: 9.0, rho: 1.5, gamma: 2.0 }.validate().is_err(),
        || "boundary C/gamma == gamma*rho^2 accepted".into(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let p = CostParams {
            c: rng.random_range(1.01..40.0),
            rho: rng.random_range(1.01..3.0),
            gamma: rng.random_range(1.01..3.0),
        };
        let admissible = p.c / p.gamma > p.gamma * p.rho * p.rho;
        ensure(p.validate().is_ok() == admissible, || format!("{p:?}"))?;
    }
    Ok(format!("c(A1)={a1}, c(A3ex)={a3ex:.3}, c(D1ex)={d1ex:.3}"))
}

fn guidelines(cohort: &Cohort) -> Result<Vec<Guideline>, String> {
    let cfg = RunConfig::default();
    let (mdp, enc) =
        build_triage_mdp(cohort, &cfg.state_def(), cfg.simulation.p, cfg.cost_params()).map_err(|e| e.to_string())?;
    let sol = solve_tree_policy_dp(&mdp, &cfg.tree_config()).map_err(|e| e.to_string())?;
    Ok(vec![
        Guideline::Fcfs,
        Guideline::Nys,
        Guideline::tree("tree-sofa", sol.policy, enc).map_err(|e| e.to_string())?,
        Guideline::Random,
    ])
}

fn c9_conservation(cohort: &Cohort, gs: &[Guideline]) -> Check {
    let mut caps: Vec<usize> = (140..=250).step_by(10).collect();
    caps.push(UNLIMITED);
    for g in gs {
        for &cap in &caps {
            for p in [0.0, 0.99] {
                let cfg = SimConfig { capacity: cap, p, replications: 10, seed: 42, trace: false };
                let r = run_simulation(cohort, g, &cfg).map_err(|e| e.to_string())?;
                for rep in &r.replications {
                    let peak = rep.peak_occupancy();
                    ensure(peak <= cap, || format!("{} cap {cap}: occupancy {peak}", g.name()))?;
                    if p == 0.0 {
                        ensure(rep.deaths == rep.baseline_deaths, || {
                            format!("{} cap {cap}: {} deaths vs baseline {}", g.name(), rep.deaths, rep.baseline_deaths)
                        })?;
                    }
                    if cap == UNLIMITED {
                        ensure(rep.exclusions.is_empty(), || format!("{} excluded at unlimited capacity", g.name()))?;
                    }
                }
            }
        }
    }
    let start = Instant::now();
    run_simulation(cohort, &gs[1], &SimConfig { capacity: 180, ..Default::default() }).map_err(|e| e.to_string())?;
    let t = start.elapsed().as_secs_f64();
    ensure(t < 60.0, || format!("100 replications took {t:.1}s"))?;
    Ok(format!("{} guidelines x {} capacities; 100 replications in {t:.2}s", gs.len(), caps.len()))
}

fn c10_nys() -> Check {
    use Priority::*;
    // (epoch, SOFA, improving, expected)
    let table = [
        (Epoch::Triage, 0, false, Low),
        (Epoch::Triage, 5, false, High),
        (Epoch::Triage, 9, false, Medium),
        (Epoch::Triage, 13, false, Low),
        (Epoch::Reassess48, 13, true, Low),
        (Epoch::Reassess48, 9, false, Low),
        (Epoch::Reassess48, 5, false, Medium),
        (Epoch::Reassess48, 5, true, High),
        (Epoch::Reassess120, 13, true, Low),
        (Epoch::Reassess120, 9, false, Low),
        (Epoch::Reassess120, 5, false, Medium),
        (Epoch::Reassess120, 5, true, High),
    ];
    for (e, s, imp, want) in table {
        let (got, gap) = nys_priority_flagged(s, imp, e).map_err(|e| e.to_string())?;
        ensure(got == want && gap.is_none(), || format!("{e:?} SOFA {s} improving {imp}: {got:?} {gap:?}"))?;
    }
    // Band edges.
    for (e, s, imp, want) in [
        (Epoch::Triage, 2, false, High),
        (Epoch::Triage, 7, false, High),
        (Epoch::Triage, 8, false, Medium),
        (Epoch::Triage, 11, false, Medium),
        (Epoch::Triage, 12, false, Low),
        (Epoch::Reassess48, 7, true, High),
        (Epoch::Reassess48, 12, false, Low),
    ] {
        let (got, _) = nys_priority_flagged(s, imp, e).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("edge {e:?} SOFA {s}: {got:?}"))?;
    }
    let (_, g1) = nys_priority_flagged(1, false, Epoch::Triage).unwrap();
    let (_, g2) = nys_priority_flagged(9, true, Epoch::Reassess48).unwrap();
    let (_, g3) = nys_priority_flagged(9, true, Epoch::Reassess120).unwrap();
    ensure(g1 == Some(NysGap::TriageSofaOne), || format!("SOFA 1 at triage: {g1:?}"))?;
    ensure(
        g2 == Some(NysGap::ReassessMidImproving) && g3 == g2,
        || format!("SOFA 8-11 improving: {g2:?} {g3:?}"),
    )?;
    Ok("12 cases, 7 band edges, 2 flagged gaps".into())
}

fn c11_calibration(s: &CohortSummary) -> Check {
    let checks = [
        ("survival", s.survival, 0.327, 0.03),
        ("age", s.age_mean, 64.0, 1.5),
        ("SOFA at intubation", s.sofa_intubation_mean, 3.7, 0.5),
        ("re-intubation", s.reintubation_fraction, 0.057, 0.02),
    ];
    let mut detail = Vec::new();
    for (name, v, target, tol) in checks {
        ensure((v - target).abs() <= tol, || format!("{name} {v:.4} outside {target} +/- {tol}"))?;
        detail.push(format!("{name} {v:.3}"));
    }
    Ok(detail.join(", "))
}

fn c12_ordering(cohort: &Cohort, gs: &[Guideline], survival: f64) -> Check {
    let cfg = SimConfig { capacity: 180, p: 0.99, replications: 100, seed: 42, trace: false };
    let mut deaths = BTreeMap::new();
    let mut random_rate = None;
    for g in gs {
        let r = run_simulation(cohort, g, &cfg).map_err(|e| e.to_string())?;
        deaths.insert(g.name().to_string(), r.mean_deaths);
        if matches!(g, Guideline::Random) {
            random_rate = r.excluded_survival.overall;
        }
    }
    let (tree, nys, fcfs) = (deaths["tree-sofa"], deaths["nys"], deaths["fcfs"]);
    let summary = format!("deaths tree-sofa {tree:.1}, nys {nys:.1}, fcfs {fcfs:.1}");
    ensure(tree <= nys, || format!("{summary}: tree-sofa above NYS"))?;
    ensure(tree <= fcfs, || format!("{summary}: tree-sofa above FCFS"))?;
    let rate = random_rate.ok_or("random guideline excluded nobody")?;
    ensure((rate - survival).abs() <= 0.03, || {
        format!("random exclusion survival {rate:.4} vs cohort {survival:.4}")
    })?;
    Ok(format!("{summary}; random exclusion survival {rate:.3} vs cohort {survival:.3}"))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        out.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap());
    }
    out
}

fn c13_reproducible() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig { output_dir: tmp.path().join("run"), ..Default::default() };
    let commands = [
        Command::GenData,
        Command::Estimate,
        Command::Solve,
        Command::Simulate { trace: true },
        Command::Sweep { sensitivity: true },
        Command::Report,
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let _ = std::fs::remove_dir_all(&cfg.output_dir);
        for c in commands {
            run_pipeline(&cfg, c).map_err(|e| format!("{c:?}: {e}"))?;
        }
        runs.push(snapshot(&cfg.output_dir));
    }
    ensure(runs[0].len() >= 12, || format!("only {} artifacts", runs[0].len()))?;
    let names: Vec<&String> = runs[0].keys().collect();
    ensure(runs[0].keys().eq(runs[1].keys()), || "different artifact sets".into())?;
    for name in &names {
        ensure(runs[0][*name] == runs[1][*name], || format!("{name} differs"))?;
    }
    let hash = cfg.hash();
    for name in ["cohort.jsonl", "mdp.json", "encoder.json", "tree_policy.json", "sweep.csv", "simulate.csv"] {
        let text = String::from_utf8_lossy(&runs[0][name]);
        ensure(text.contains(&hash), || format!("{name} does not carry the config hash"))?;
    }
    Ok(format!("{} artifacts byte-identical", names.len()))
}

fn main() {
    let targets = CohortSummary::paper_targets();
    let cohort = generate_cohort(42, 807, &targets).expect("default cohort");
    let summary = cohort_summary(&cohort).expect("summary");
    let gs = guidelines(&cohort);
    let triage = {
        let cfg = RunConfig::default();
        build_triage_mdp(&cohort, &cfg.state_def(), cfg.simulation.p, cfg.cost_params())
            .expect("triage MDP")
            .0
    };

    let criteria: Vec<Criterion> = vec![
        ("value iteration matches exhaustive enumeration", Box::new(c1_oracle)),
        ("Bellman residuals", Box::new(|| c2_residuals(&triage))),
        ("exact tree learner matches brute force", Box::new(c3_tree_oracle)),
        ("classification round trip through the one-period reduction", Box::new(c4_round_trip)),
        ("counterexample fixtures", Box::new(c5_fixtures)),
        ("backward tree-policy DP consistency", Box::new(c6_consistency)),
        ("constrained dominance", Box::new(c7_dominance)),
        ("cost model and parameter guard", Box::new(c8_costs)),
        ("simulator conservation", Box::new(|| c9_conservation(&cohort, gs.as_ref().map_err(Clone::clone)?))),
        ("NYS encoding", Box::new(c10_nys)),
        ("generator calibration", Box::new(|| c11_calibration(&summary))),
        (
            "qualitative ordering at capacity 180",
            Box::new(|| c12_ordering(&cohort, gs.as_ref().map_err(Clone::clone)?, summary.survival)),
        ),
        ("byte-identical pipeline rerun", Box::new(c13_reproducible)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        let t = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS: {name} ({detail}) [{t:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL: {name}: {why} [{t:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
