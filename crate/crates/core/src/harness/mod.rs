//! Experiment plumbing: instance loading and generation, dispatch to the
//! estimators, and report emission.
//!
//! Every experiment writes `report.csv` (one [`ReportRow`] per checked or
//! informational quantity) and `summary.json`, plus kind-specific extras.
//! Reports depend only on the configuration and the master seed, never on
//! the number of worker threads.

pub mod generate;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::constraint::{Constraint, ConstraintSpec};
use crate::controllers::TRACE_CSV_HEADER;
use crate::crs::{estimate_acceptance, run_crs, AcceptanceReport, CrsInstance, CrsInstanceFile};
use crate::error::{Error, Result};
use crate::mechanisms::{estimate_revenue, AuctionFile, AuctionInstance, AuctionPlan};
use crate::probing::{
    best_adaptive_value, estimate_packing, estimate_probing, solve_probing_mp, solve_setpacking_lp,
    PackingFile, PackingInstance, PackingPlan, ProbingFile, ProbingInstance, ProbingPlan,
    ADAPTIVE_BRUTE_MAX_N,
};
use crate::relaxations::{probing_mp_optimum, PROBING_MP_MAX_N};
use crate::seed::{mix, rng_from_seed, trial_rng};
use crate::stats::{MeanEstimate, Proportion, PASS_MARGIN_SE};
use crate::submodular::{
    brute_force_max, estimate_submodular_crs, measured_continuous_greedy, multilinear_exact,
    GreedyConfig, OracleSpec, SubmodularOracle, EXACT_F_MAX_N,
};

pub use generate::{generate_instance, GeneratedInstance, GeneratorSpec};

/// Trials whose characteristic traces are written by diagnostics runs.
pub const TRACE_TRIALS: u64 = 20;
pub const DEFAULT_GREEDY_STEPS: usize = 100;
/// Stream index reserved for solver randomness, disjoint from trial streams
/// for any realistic trial count.
const SOLVER_STREAM: u64 = u64::MAX;

pub const REPORT_CSV_HEADER: &str = "metric,target,estimate,stderr,ci_lo,ci_hi,bound,pass";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Crs,
    Auction,
    Packing,
    Probing,
    Greedy,
    Diagnostics,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Crs => "crs",
            ExperimentKind::Auction => "auction",
            ExperimentKind::Packing => "packing",
            ExperimentKind::Probing => "probing",
            ExperimentKind::Greedy => "greedy",
            ExperimentKind::Diagnostics => "diagnostics",
        }
    }
}

/// Greedy instance file: maximize `f` over the intersection of matroid
/// constraints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreedyFile {
    pub n: usize,
    pub constraints: Vec<ConstraintSpec>,
    pub oracle: OracleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    Path(PathBuf),
    /// Generated in memory with the given seed.
    Generator {
        spec: GeneratorSpec,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub source: InstanceSource,
    pub trials: u64,
    pub seed: u64,
    pub eps: f64,
    /// Directory receiving the report files; nothing is written without it.
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Probing only: apply the marginal-gain filter.
    pub gain_filter: bool,
    /// Greedy and probing: override the number of greedy steps.
    pub steps: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, source: InstanceSource) -> Self {
        ExperimentConfig {
            kind,
            source,
            trials: 100_000,
            seed: 0,
            eps: 0.1,
            out: None,
            jobs: None,
            gain_filter: true,
            steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::input("trials must be at least 1"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::input(format!("eps = {} outside (0, 1)", self.eps)));
        }
        if self.jobs == Some(0) {
            return Err(Error::input("jobs must be at least 1"));
        }
        if self.steps == Some(0) {
            return Err(Error::input("steps must be at least 1"));
        }
        Ok(())
    }
}

/// Row key. Ordered so that sorting groups per-element rows by element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Target {
    All,
    Element(usize),
    /// Element and step.
    Cell(usize, usize),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::All => write!(f, "all"),
            Target::Element(e) => write!(f, "{e}"),
            Target::Cell(e, t) => write!(f, "{e}@{t}"),
        }
    }
}

/// One line of `report.csv`. Lower-bound rows pass iff
/// `estimate ≥ bound − 3·stderr`; count rows (`infeasible_trials`,
/// `relation_violations`, `envelope_violations`, `blocking`) are upper
/// bounds. Informational rows carry no pass flag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub metric: &'static str,
    pub target: Target,
    pub estimate: f64,
    pub stderr: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub bound: Option<f64>,
    pub pass: Option<bool>,
}

impl ReportRow {
    fn info(metric: &'static str, target: Target, estimate: f64) -> Self {
        ReportRow {
            metric,
            target,
            estimate,
            stderr: 0.0,
            ci_lo: None,
            ci_hi: None,
            bound: None,
            pass: None,
        }
    }

    fn proportion(
        metric: &'static str,
        target: Target,
        p: &Proportion,
        bound: Option<f64>,
    ) -> Self {
        ReportRow {
            metric,
            target,
            estimate: p.mean,
            stderr: p.stderr,
            ci_lo: Some(p.ci_lo),
            ci_hi: Some(p.ci_hi),
            bound,
            pass: bound.map(|b| p.passes_lower_bound(b)),
        }
    }

    fn mean(metric: &'static str, target: Target, m: &MeanEstimate, bound: Option<f64>) -> Self {
        ReportRow {
            metric,
            target,
            estimate: m.mean,
            stderr: m.stderr,
            ci_lo: None,
            ci_hi: None,
            bound,
            pass: bound.map(|b| m.passes_lower_bound(b)),
        }
    }

    /// Zero-tolerance count: passes iff it is zero.
    fn zero_count(metric: &'static str, count: u64) -> Self {
        ReportRow {
            metric,
            target: Target::All,
            estimate: count as f64,
            stderr: 0.0,
            ci_lo: None,
            ci_hi: None,
            bound: Some(0.0),
            pass: Some(count == 0),
        }
    }

    fn exact_lower(metric: &'static str, value: f64, bound: f64) -> Self {
        ReportRow {
            metric,
            target: Target::All,
            estimate: value,
            stderr: 0.0,
            ci_lo: None,
            ci_hi: None,
            bound: Some(bound),
            pass: Some(value >= bound),
        }
    }

    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let pass = match self.pass {
            Some(p) => p.to_string(),
            None => String::new(),
        };
        format!(
            "{},{},{:.6},{:.6},{},{},{},{}\n",
            self.metric,
            self.target,
            self.estimate,
            self.stderr,
            opt(self.ci_lo),
            opt(self.ci_hi),
            opt(self.bound),
            pass
        )
    }
}

/// In-memory result of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<ReportRow>,
    pub summary: serde_json::Value,
    /// Additional files as `(name, contents)`.
    pub extras: Vec<(String, String)>,
}

impl ExperimentOutcome {
    /// No row carries a failed check.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn failures(&self) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.pass == Some(false)).collect()
    }

    pub fn report_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv_line());
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Writes `report.csv`, `summary.json` and the extras into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let mut files = vec![
            ("report.csv".to_string(), self.report_csv()),
            ("summary.json".to_string(), self.summary_json()),
        ];
        files.extend(self.extras.iter().cloned());
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| io_error(&path, e))?;
        }
        Ok(())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Reads and parses a JSON file; parse errors carry the path, the line and
/// column, and the offending key when serde names one.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_json(&text, &path.display().to_string())
}

pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        message: e.to_string(),
    })
}

fn load<T: serde::de::DeserializeOwned>(source: &InstanceSource) -> Result<T> {
    match source {
        InstanceSource::Path(p) => read_json(p),
        InstanceSource::Generator { spec, seed } => {
            let json = generate_instance(spec, *seed)?.to_json();
            parse_json(&json, "generated instance")
        }
    }
}

fn source_json(source: &InstanceSource) -> serde_json::Value {
    match source {
        InstanceSource::Path(p) => json!({ "path": p.display().to_string() }),
        InstanceSource::Generator { spec, seed } => json!({ "generator": spec, "seed": seed }),
    }
}

/// Runs the experiment and, if `config.out` is set, writes its reports.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let outcome = match config.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Logic(format!("cannot build thread pool: {e}")))?
            .install(|| dispatch(config))?,
        None => dispatch(config)?,
    };
    if let Some(dir) = &config.out {
        outcome.write(dir)?;
    }
    Ok(outcome)
}

fn dispatch(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (mut rows, details, extras) = match config.kind {
        ExperimentKind::Crs => crs_experiment(config, false)?,
        ExperimentKind::Diagnostics => crs_experiment(config, true)?,
        ExperimentKind::Auction => auction_experiment(config)?,
        ExperimentKind::Packing => packing_experiment(config)?,
        ExperimentKind::Probing => probing_experiment(config)?,
        ExperimentKind::Greedy => greedy_experiment(config)?,
    };
    rows.sort_by(|a, b| (a.metric, a.target).cmp(&(b.metric, b.target)));
    let failures = rows.iter().filter(|r| r.pass == Some(false)).count();
    let summary = json!({
        "kind": config.kind.name(),
        "instance": source_json(&config.source),
        "trials": config.trials,
        "seed": config.seed,
        "eps": config.eps,
        "pass_margin_stderr": PASS_MARGIN_SE,
        "rows": rows.len(),
        "failed_checks": failures,
        "passed": failures == 0,
        "details": details,
    });
    Ok(ExperimentOutcome {
        rows,
        summary,
        extras,
    })
}

type Parts = (Vec<ReportRow>, serde_json::Value, Vec<(String, String)>);

fn acceptance_rows(report: &AcceptanceReport, rows: &mut Vec<ReportRow>) {
    for e in &report.elements {
        let t = Target::Element(e.element);
        if let Some(p) = &e.conditional {
            rows.push(ReportRow::proportion("acceptance", t, p, Some(e.bound)));
        }
        if let Some(p) = &e.unconditional {
            rows.push(ReportRow::proportion(
                "unconditional",
                t,
                p,
                Some(e.x * e.bound),
            ));
        }
    }
    rows.push(ReportRow::zero_count(
        "infeasible_trials",
        report.infeasible_trials,
    ));
}

fn crs_experiment(config: &ExperimentConfig, diagnostics: bool) -> Result<Parts> {
    let file: CrsInstanceFile = load(&config.source)?;
    let inst = CrsInstance::from_file(&file)?;
    let report = estimate_acceptance(&inst, config.trials, config.seed, diagnostics)?;
    let mut rows = Vec::new();
    acceptance_rows(&report, &mut rows);
    let mut details = json!({
        "n": inst.n(),
        "matroids": inst.matroid_count(),
        "knapsacks": inst.knapsack_count(),
        "reduction": inst.uses_reduction(),
        "lambda": inst.lambda_total(),
        "acceptance_bound": report.bound,
    });

    if let Some(spec) = &file.oracle {
        let f = SubmodularOracle::from_spec(spec)?;
        let value = estimate_submodular_crs(&inst, &f, config.trials, config.seed)?;
        let bound = if f.n() <= EXACT_F_MAX_N {
            let fx = multilinear_exact(&f, inst.x())?;
            details["multilinear"] = json!(fx);
            Some(fx * report.bound)
        } else {
            None
        };
        rows.push(ReportRow::mean("objective", Target::All, &value, bound));
    }

    let mut extras = Vec::new();
    if let Some(d) = &report.diagnostics {
        for m in &d.martingale {
            rows.push(ReportRow::mean(
                "martingale",
                Target::Element(m.element),
                &m.estimate,
                Some(1.0),
            ));
        }
        for c in &d.blocking {
            rows.push(ReportRow {
                metric: "blocking",
                target: Target::Cell(c.element, c.step),
                estimate: c.frequency,
                stderr: c.stderr,
                ci_lo: None,
                ci_hi: None,
                bound: Some(c.bound),
                pass: Some(c.pass),
            });
        }
        rows.push(ReportRow::zero_count(
            "relation_violations",
            d.relation_violations,
        ));
        extras.push(("trace.csv".to_string(), trace_csv(&inst, config)?));
    }
    Ok((rows, details, extras))
}

/// Joint characteristic traces of the first trials, regenerated from their
/// streams.
fn trace_csv(inst: &CrsInstance, config: &ExperimentConfig) -> Result<String> {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for i in 0..config.trials.min(TRACE_TRIALS) {
        let run = match run_crs(inst, &mut trial_rng(config.seed, i), true) {
            Ok(r) => r,
            Err(Error::Invariant(_)) => continue,
            Err(e) => return Err(e),
        };
        if let Some(ts) = run.trace {
            ts.joint.write_csv_rows(i, &mut out);
        }
    }
    Ok(out)
}

fn auction_experiment(config: &ExperimentConfig) -> Result<Parts> {
    let file: AuctionFile = load(&config.source)?;
    let inst = AuctionInstance::from_file(&file)?;
    let plan = AuctionPlan::new(&inst, config.eps)?;
    let report = estimate_revenue(&plan, config.trials, config.seed)?;
    let rows = vec![
        ReportRow::mean("revenue", Target::All, &report.revenue, Some(report.bound)),
        ReportRow::info("lp_value", Target::All, report.lp_value),
        ReportRow::zero_count("infeasible_trials", report.infeasible_trials),
    ];
    let details = json!({
        "clients": inst.clients().len(),
        "items": inst.num_items(),
        "max_value": inst.max_value(),
        "reduction": inst.uses_reduction(),
        "lambda": plan.lambda(),
        "refine_eps": report.refine_eps,
        "lp_value": report.lp_value,
        "revenue_bound": report.bound,
    });
    Ok((
        rows,
        details,
        vec![("revenue.csv".to_string(), report.to_csv())],
    ))
}

fn packing_experiment(config: &ExperimentConfig) -> Result<Parts> {
    let file: PackingFile = load(&config.source)?;
    let inst = PackingInstance::from_file(&file)?;
    let x = match &file.x {
        Some(x) => x.clone(),
        None => solve_setpacking_lp(&inst)?.0,
    };
    let plan = PackingPlan::new(&inst, x)?;
    let report = estimate_packing(&plan, config.trials, config.seed)?;
    let mut rows: Vec<ReportRow> = report
        .elements
        .iter()
        .map(|e| {
            ReportRow::proportion(
                "probe_frequency",
                Target::Element(e.element),
                &e.probed,
                Some(e.bound),
            )
        })
        .collect();
    rows.push(ReportRow::mean(
        "value",
        Target::All,
        &report.value,
        Some(report.value_bound),
    ));
    rows.push(ReportRow::info("lp_value", Target::All, report.lp_value));
    rows.push(ReportRow::zero_count(
        "infeasible_trials",
        report.infeasible_trials,
    ));
    let mut details = json!({
        "n": inst.n(),
        "rows": inst.rows(),
        "k": report.k,
        "lp_value": report.lp_value,
        "value_bound": report.value_bound,
    });
    if inst.n() <= ADAPTIVE_BRUTE_MAX_N {
        let opt = best_adaptive_value(&inst)?;
        rows.push(ReportRow::info("adaptive_optimum", Target::All, opt));
        details["adaptive_optimum"] = json!(opt);
    }
    Ok((rows, details, Vec::new()))
}

fn probing_experiment(config: &ExperimentConfig) -> Result<Parts> {
    let file: ProbingFile = load(&config.source)?;
    let inst = ProbingInstance::from_file(&file)?;
    let n = inst.n();
    let mut rows = Vec::new();
    let mut details = json!({
        "n": n,
        "k_in": inst.inner().len(),
        "k_out": inst.outer().len(),
        "gain_filter": config.gain_filter,
    });
    let solved = file.x.is_none();
    let x = match &file.x {
        Some(x) => x.clone(),
        None => {
            let cfg = greedy_config(config.steps.unwrap_or(DEFAULT_GREEDY_STEPS));
            let mut rng = rng_from_seed(mix(config.seed, SOLVER_STREAM));
            solve_probing_mp(&inst, &cfg, &mut rng)?.x
        }
    };
    let plan = ProbingPlan::new(&inst, x)?;
    let report = estimate_probing(&plan, config.trials, config.seed, config.gain_filter)?;
    for e in &report.elements {
        let bound = (!config.gain_filter).then_some(e.bound);
        rows.push(ReportRow::proportion(
            "probe_frequency",
            Target::Element(e.element),
            &e.probed,
            bound,
        ));
    }
    rows.push(ReportRow::mean(
        "objective",
        Target::All,
        &report.objective,
        report.objective_bound,
    ));
    rows.push(ReportRow::zero_count(
        "infeasible_trials",
        report.infeasible_trials,
    ));
    if let Some(fx) = report.multilinear {
        details["multilinear"] = json!(fx);
    }

    // End to end against the exact relaxation optimum, only when this run
    // solved the relaxation itself.
    if solved && n <= PROBING_MP_MAX_N {
        let table = inst.oracle().value_table()?;
        let opt = probing_mp_optimum(&table, inst.p(), inst.inner(), inst.outer())?;
        let factor = (1.0 / std::f64::consts::E - config.eps) / (inst.lambda() + 1.0);
        let bound = factor * opt;
        rows.push(ReportRow::mean(
            "end_to_end",
            Target::All,
            &report.objective,
            Some(bound),
        ));
        details["relaxation_optimum"] = json!(opt);
    }
    Ok((rows, details, Vec::new()))
}

fn greedy_config(steps: usize) -> GreedyConfig {
    GreedyConfig {
        steps,
        ..GreedyConfig::default()
    }
}

fn greedy_experiment(config: &ExperimentConfig) -> Result<Parts> {
    let file: GreedyFile = load(&config.source)?;
    let f = SubmodularOracle::from_spec(&file.oracle)?;
    if f.n() != file.n {
        return Err(Error::input(format!(
            "oracle has {} elements, n is {}",
            f.n(),
            file.n
        )));
    }
    let constraints = file
        .constraints
        .iter()
        .map(|c| Constraint::from_spec(c, file.n))
        .collect::<Result<Vec<_>>>()?;
    let poly = crate::relaxations::Polytope::from_constraints(file.n, &constraints)?;
    let steps = config.steps.or(file.steps).unwrap_or(DEFAULT_GREEDY_STEPS);
    let cfg = greedy_config(steps);
    let mut rng = rng_from_seed(mix(config.seed, SOLVER_STREAM));
    let traj = measured_continuous_greedy(&f, &poly, &cfg, &mut rng)?;
    let (best_set, opt) = brute_force_max(&f, |s| constraints.iter().all(|c| c.is_feasible(s)))?;
    let value = if file.n <= EXACT_F_MAX_N {
        multilinear_exact(&f, traj.final_point())?
    } else {
        traj.final_value()
    };
    let bound = (1.0 / std::f64::consts::E - config.eps) * opt;
    let envelope = traj.check().err();

    let rows = vec![
        ReportRow::exact_lower("greedy_value", value, bound),
        ReportRow::info("optimum", Target::All, opt),
        ReportRow::zero_count("envelope_violations", envelope.is_some() as u64),
    ];
    let details = json!({
        "n": file.n,
        "steps": steps,
        "delta": traj.delta,
        "exact": traj.exact,
        "optimum": opt,
        "optimum_set": best_set.iter().collect::<Vec<_>>(),
        "final_value": value,
        "final_point": traj.final_point(),
        "envelope_error": envelope.map(|e| e.to_string()),
    });
    let mut csv = String::from("step,t,value\n");
    for (k, (t, v)) in traj.times.iter().zip(&traj.values).enumerate() {
        csv.push_str(&format!("{k},{t:.6},{v:.6}\n"));
    }
    Ok((rows, details, vec![("trajectory.csv".to_string(), csv)]))
}
