//! Subcommands. Each reads the artifacts of earlier commands from the
//! output directory and writes its own.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use treepolicy::cohort::{cohort_summary, generate_cohort, load_cohort, save_cohort, CalibrationCheck, Cohort, CohortSummary};
use treepolicy::mdp::{value_iteration, MdpDocument, MdpInstance};
use treepolicy::sim::{
    capacity_sweep, format_capacity, run_simulation, sensitivity_csv, sensitivity_sweep, sweep_csv, trace_jsonl,
    Guideline, SimConfig, SimResult,
};
use treepolicy::triage::{build_triage_mdp, CovariateSet, StateEncoder};
use treepolicy::tree_policy::{naive_projection_policy, solve_tree_policy_dp, TreePolicy, TreePolicyDocument};

use crate::config::{GuidelineName, RunConfig};
use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const COHORT_SUMMARY_JSON: &str = "cohort_summary.json";
pub const COHORT_SUMMARY_TXT: &str = "cohort_summary.txt";
pub const MDP_JSON: &str = "mdp.json";
pub const ENCODER_JSON: &str = "encoder.json";
pub const POLICY_JSON: &str = "tree_policy.json";
pub const POLICY_TXT: &str = "tree_policy.txt";
pub const SIMULATE_CSV: &str = "simulate.csv";
pub const EXCLUDED_CSV: &str = "excluded_survival.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SENSITIVITY_CSV: &str = "sensitivity.csv";
pub const REPORT_TXT: &str = "report.txt";

const STAGE_NAMES: [&str; 4] = ["triage", "48h", "120h", "discharge"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Estimate,
    Solve,
    Simulate { trace: bool },
    Sweep { sensitivity: bool },
    Report,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Human-readable summary for stdout.
    pub text: String,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    hash: String,
    out: Outcome,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn write(&mut self, path: PathBuf, contents: &str) -> CliResult<()> {
        std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.out.written.push(path);
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        vec![format!("config_hash {}", self.hash), format!("seed {}", self.cfg.seed)]
    }

    fn meta(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("config_hash".to_string(), self.hash.clone()),
            ("seed".to_string(), self.cfg.seed.to_string()),
        ])
    }

    /// Reads an upstream artifact, naming the command that produces it.
    fn read(&mut self, name: &str, producer: &str) -> CliResult<String> {
        read_artifact(&self.path(name), producer)
    }

    fn check_hash(&mut self, what: &str, meta: &BTreeMap<String, String>) {
        match meta.get("config_hash") {
            Some(h) if *h == self.hash => {}
            Some(h) => self.out.warnings.push(format!(
                "{what} was produced under config {}, current config is {}",
                &h[..h.len().min(12)],
                &self.hash[..12]
            )),
            None => self.out.warnings.push(format!("{what} carries no config hash")),
        }
    }

    fn cohort(&mut self) -> CliResult<Cohort> {
        let path = self.cfg.cohort_path();
        if !path.exists() {
            return Err(CliError::Dependency(format!(
                "cohort file {} not found; run `gen-data` first or set `cohort`",
                path.display()
            )));
        }
        let c = load_cohort(&path)?;
        let meta = c.meta.clone();
        if self.cfg.cohort.is_none() {
            self.check_hash("cohort", &meta);
        }
        Ok(c)
    }
}

fn read_artifact(path: &Path, producer: &str) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::Dependency(format!(
            "{} not found; run `{producer}` first",
            path.display()
        )));
    }
    Ok(std::fs::read_to_string(path)?)
}

pub fn tree_guideline_name(c: CovariateSet) -> &'static str {
    match c {
        CovariateSet::SofaOnly => "tree-sofa",
        CovariateSet::SofaAge => "tree-sofa-age",
        CovariateSet::SofaCovariates => "tree-sofa-covariates",
    }
}

/// Validates the config, writes the resolved copy, runs the command.
pub fn run_pipeline(cfg: &RunConfig, cmd: Command) -> CliResult<Outcome> {
    let warnings = cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    let mut ctx = Ctx {
        cfg,
        hash: cfg.hash(),
        out: Outcome {
            warnings,
            ..Default::default()
        },
    };
    let resolved = format!("# config_hash {}\n{}", ctx.hash, cfg.to_toml());
    ctx.write(ctx.path(RESOLVED_CONFIG), &resolved)?;
    match cmd {
        Command::GenData => gen_data(&mut ctx)?,
        Command::Estimate => estimate(&mut ctx)?,
        Command::Solve => solve(&mut ctx)?,
        Command::Simulate { trace } => simulate(&mut ctx, trace)?,
        Command::Sweep { sensitivity } => sweep(&mut ctx, sensitivity)?,
        Command::Report => report(&mut ctx)?,
    }
    Ok(ctx.out)
}

#[derive(Serialize)]
struct SummaryArtifact<'a> {
    config_hash: &'a str,
    summary: &'a CohortSummary,
    calibration: &'a [CalibrationCheck],
}

fn gen_data(ctx: &mut Ctx) -> CliResult<()> {
    let targets = CohortSummary::paper_targets();
    let mut cohort = generate_cohort(ctx.cfg.seed, ctx.cfg.data.n, &targets)?;
    cohort.meta = ctx.meta();
    let path = ctx.cfg.cohort_path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_cohort(&cohort, &path)?;
    ctx.out.written.push(path);

    let summary = cohort_summary(&cohort)?;
    let checks = summary.calibration_checks(&targets);
    let json = serde_json::to_string_pretty(&SummaryArtifact {
        config_hash: &ctx.hash,
        summary: &summary,
        calibration: &checks,
    })
    .map_err(treepolicy::Error::from)?;
    ctx.write(ctx.path(COHORT_SUMMARY_JSON), &(json + "\n"))?;

    let mut txt = format!("# config_hash {}\n", ctx.hash);
    txt.push_str(&summary.render());
    txt.push_str("\ncalibration\n");
    for c in &checks {
        let _ = writeln!(
            txt,
            "{:<20} {:>9.3} target {:>9.3} +/- {:<6} {}",
            c.field,
            c.value,
            c.target,
            c.tolerance,
            if c.ok() { "ok" } else { "OUT OF RANGE" }
        );
    }
    ctx.write(ctx.path(COHORT_SUMMARY_TXT), &txt)?;
    for c in checks.iter().filter(|c| !c.ok()) {
        ctx.out
            .warnings
            .push(format!("{} = {:.3} is outside {} +/- {}", c.field, c.value, c.target, c.tolerance));
    }
    ctx.out.text = txt;
    Ok(())
}

fn estimate(ctx: &mut Ctx) -> CliResult<()> {
    let cohort = ctx.cohort()?;
    let (mdp, mut enc) = build_triage_mdp(&cohort, &ctx.cfg.state_def(), ctx.cfg.simulation.p, ctx.cfg.cost_params())?;
    let mut doc = MdpDocument::new(mdp);
    doc.meta = ctx.meta();
    let p = ctx.cfg.cost_params();
    doc.meta.insert("C".into(), p.c.to_string());
    doc.meta.insert("rho".into(), p.rho.to_string());
    doc.meta.insert("gamma".into(), p.gamma.to_string());
    doc.meta.insert("p".into(), ctx.cfg.simulation.p.to_string());
    ctx.write(ctx.path(MDP_JSON), &(doc.to_json()? + "\n"))?;
    enc.meta = ctx.meta();
    ctx.write(ctx.path(ENCODER_JSON), &(enc.to_json()? + "\n"))?;
    let sizes: Vec<String> = doc.mdp.stages.iter().map(|s| s.num_states().to_string()).collect();
    ctx.out.text = format!("estimated MDP with {} states per period\n", sizes.join("/"));
    Ok(())
}

fn load_mdp(ctx: &mut Ctx) -> CliResult<MdpInstance> {
    let text = ctx.read(MDP_JSON, "estimate")?;
    let doc = MdpDocument::from_json(&text)?;
    ctx.check_hash("mdp.json", &doc.meta);
    Ok(doc.mdp)
}

fn load_encoder(ctx: &mut Ctx) -> CliResult<StateEncoder> {
    let text = ctx.read(ENCODER_JSON, "estimate")?;
    let enc = StateEncoder::from_json(&text)?;
    let meta = enc.meta.clone();
    ctx.check_hash("encoder.json", &meta);
    Ok(enc)
}

fn solve(ctx: &mut Ctx) -> CliResult<()> {
    let mdp = load_mdp(ctx)?;
    let tree_cfg = ctx.cfg.tree_config();
    let sol = solve_tree_policy_dp(&mdp, &tree_cfg)?;
    let (_, naive) = naive_projection_policy(&mdp, &tree_cfg)?;
    let (v, _) = value_iteration(&mdp)?;
    let unconstrained: f64 = mdp.initial.iter().zip(v.stage(0)).map(|(p, x)| p * x).sum();

    let name = tree_guideline_name(ctx.cfg.state.covariates);
    let mut doc = TreePolicyDocument::new(&sol.policy, Some(&mdp))?;
    doc.meta = ctx.meta();
    doc.meta.insert("guideline".into(), name.into());
    doc.meta.insert("tree_cost".into(), format!("{:.6}", sol.total_cost));
    doc.meta.insert("naive_cost".into(), format!("{naive:.6}"));
    doc.meta.insert("unconstrained_cost".into(), format!("{unconstrained:.6}"));
    let json = serde_json::to_string_pretty(&doc).map_err(treepolicy::Error::from)?;
    ctx.write(ctx.path(POLICY_JSON), &(json + "\n"))?;

    let stage_names: Vec<String> = STAGE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut txt = format!(
        "# config_hash {}\n# guideline {name}\n# expected cost: tree {:.4}, naive projection {naive:.4}, unconstrained {unconstrained:.4}\n",
        ctx.hash, sol.total_cost
    );
    txt.push_str(&sol.policy.render(&stage_names));
    ctx.write(ctx.path(POLICY_TXT), &txt)?;
    ctx.out.text = txt;
    Ok(())
}

fn guidelines(ctx: &mut Ctx, names: &[GuidelineName]) -> CliResult<Vec<Guideline>> {
    names
        .iter()
        .map(|g| {
            Ok(match g {
                GuidelineName::Fcfs => Guideline::Fcfs,
                GuidelineName::Nys => Guideline::Nys,
                GuidelineName::Random => Guideline::Random,
                GuidelineName::Tree => {
                    let text = ctx.read(POLICY_JSON, "solve")?;
                    let doc: TreePolicyDocument = serde_json::from_str(&text).map_err(treepolicy::Error::from)?;
                    ctx.check_hash("tree_policy.json", &doc.meta);
                    let name = doc
                        .meta
                        .get("guideline")
                        .cloned()
                        .unwrap_or_else(|| tree_guideline_name(ctx.cfg.state.covariates).into());
                    let policy = TreePolicy::from_json(&text)?;
                    let enc = load_encoder(ctx)?;
                    Guideline::tree(name, policy, enc)?
                }
            })
        })
        .collect()
}

fn sim_config(cfg: &RunConfig, capacity: usize, trace: bool) -> SimConfig {
    SimConfig {
        capacity,
        p: cfg.simulation.p,
        replications: cfg.simulation.replications,
        seed: cfg.seed,
        trace,
    }
}

fn fmt_rate(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), |v| format!("{v:.4}"))
}

fn excluded_csv(rows: &[SimResult], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("guideline,capacity,category,excluded_per_replication,survival_rate\n");
    for r in rows {
        let s = &r.excluded_survival;
        let per = r.excluded_triage + r.excluded_reassessment + r.excluded_preempted;
        for (cat, n, rate) in [
            ("triage", r.excluded_triage, s.triage),
            ("reassessment", r.excluded_reassessment, s.reassessment),
            ("preempted", r.excluded_preempted, s.preempted),
            ("overall", per, s.overall),
        ] {
            let _ = writeln!(
                out,
                "{},{},{cat},{n:.3},{}",
                r.guideline,
                format_capacity(r.capacity),
                fmt_rate(rate)
            );
        }
    }
    out
}

fn simulate(ctx: &mut Ctx, trace: bool) -> CliResult<()> {
    let cohort = ctx.cohort()?;
    let gs = guidelines(ctx, &ctx.cfg.simulation.guidelines.clone())?;
    let sc = sim_config(ctx.cfg, ctx.cfg.simulation.capacity.0, trace);
    let mut rows = Vec::new();
    for g in &gs {
        let r = run_simulation(&cohort, g, &sc)?;
        if trace {
            let jsonl = trace_jsonl(&r.replications[0])?;
            ctx.write(ctx.path(&format!("trace_{}.jsonl", r.guideline)), &jsonl)?;
        }
        rows.push(r);
    }
    let header = ctx.header();
    let csv = sweep_csv(&rows, &header);
    ctx.write(ctx.path(SIMULATE_CSV), &csv)?;
    ctx.write(ctx.path(EXCLUDED_CSV), &excluded_csv(&rows, &header))?;
    ctx.out.text = ascii_table(&csv);
    Ok(())
}

fn sweep(ctx: &mut Ctx, sensitivity: bool) -> CliResult<()> {
    let cohort = ctx.cohort()?;
    let gs = guidelines(ctx, &ctx.cfg.sweep.guidelines.clone())?;
    let caps: Vec<usize> = ctx.cfg.sweep.capacities.iter().map(|c| c.0).collect();
    let rows = capacity_sweep(&cohort, &gs, &caps, &sim_config(ctx.cfg, 0, false))?;
    let csv = sweep_csv(&rows, &ctx.header());
    ctx.write(ctx.path(SWEEP_CSV), &csv)?;
    ctx.out.text = ascii_table(&csv);
    if sensitivity {
        let sc = sim_config(ctx.cfg, ctx.cfg.sensitivity.capacity.0, false);
        let rows = sensitivity_sweep(
            &cohort,
            &ctx.cfg.state_def(),
            &ctx.cfg.sensitivity_grid(),
            &ctx.cfg.tree_config(),
            &sc,
        )?;
        let skipped = rows.iter().filter(|r| r.skipped.is_some()).count();
        if skipped > 0 {
            ctx.out
                .warnings
                .push(format!("{skipped} sensitivity cells violate C/gamma > gamma*rho^2 and were skipped"));
        }
        let changed = rows.iter().filter(|r| r.same_policy_as_first == Some(false)).count();
        let mut header = ctx.header();
        header.push(format!(
            "capacity {}; {changed} admissible cells fit a different tree policy than the first",
            format_capacity(sc.capacity)
        ));
        let csv = sensitivity_csv(&rows, &header);
        ctx.write(ctx.path(SENSITIVITY_CSV), &csv)?;
        ctx.out.text.push('\n');
        ctx.out.text.push_str(&ascii_table(&csv));
    }
    Ok(())
}

/// Aligns a CSV into columns. Comment lines are kept as they are.
pub fn ascii_table(csv: &str) -> String {
    let mut out = String::new();
    let mut rows: Vec<Vec<&str>> = Vec::new();
    for line in csv.lines() {
        if line.starts_with('#') {
            out.push_str(line);
            out.push('\n');
        } else if !line.is_empty() {
            rows.push(line.split(',').collect());
        }
    }
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|c| c.len()).max().unwrap_or(0))
        .collect();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 0 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// Renders whatever artifacts exist. Never recomputes anything.
fn report(ctx: &mut Ctx) -> CliResult<()> {
    let sections = [
        (COHORT_SUMMARY_TXT, "synthetic cohort", false),
        (POLICY_TXT, "tree policy", false),
        (SIMULATE_CSV, "simulation", true),
        (EXCLUDED_CSV, "survival among excluded patients", true),
        (SWEEP_CSV, "capacity sweep", true),
        (SENSITIVITY_CSV, "cost sensitivity", true),
    ];
    let mut txt = String::new();
    let mut found = 0;
    for (file, title, is_csv) in sections {
        let path = ctx.path(file);
        if !path.exists() {
            continue;
        }
        found += 1;
        let body = std::fs::read_to_string(&path)?;
        let _ = writeln!(txt, "== {title} ({file})");
        txt.push_str(&if is_csv { ascii_table(&body) } else { body });
        txt.push('\n');
    }
    if found == 0 {
        return Err(CliError::Dependency(format!(
            "no artifacts in {}; run `gen-data`, `solve`, `simulate` or `sweep` first",
            ctx.cfg.output_dir.display()
        )));
    }
    ctx.write(ctx.path(REPORT_TXT), &txt)?;
    ctx.out.text = txt;
    Ok(())
}
