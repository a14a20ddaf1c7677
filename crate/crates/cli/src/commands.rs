use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use rerand_core::assignment::{complete_randomization, pair_switch_rerandomize, rejection_rerandomize};
use rerand_core::balance::{threshold_from_chisq, BalanceCriterion, Metric, ThresholdSource};
use rerand_core::config::{CriterionConfig, RunConfig};
use rerand_core::estimators::{estimate, tau_dr, EstimateReport, Method, ObservedExperiment};
use rerand_core::inference::{confidence_interval, randomization_test, v_da, DesignLaw, Statistic, TieRule};
use rerand_core::io::{assignment_from_column, write_assignment, Table};
use rerand_core::missing::{augment_missing_indicators, tau_dr_missing_outcomes, ResponseRecord};
use rerand_core::models::{ColumnChoice, ModelKind, OutcomeModelSpec};
use rerand_core::rng::{derive_seed, stream, Purpose};
use rerand_core::sim::{emit_report, run_scenario, BalanceMetricKind, DgpKind, Figure, SimulationConfig, ThresholdRule};
use rerand_core::{Assignment, Error as CoreError, ExperimentFrame, VERSION};

use crate::{
    AnalyzeArgs, AssignArgs, CiArgs, Cli, Command, CriterionArgs, DataArgs, DesignArg, DesignArgs, EstimatorArgs, MetricArg,
    ModelArg, SettingArg, SimulateArgs, Strategy, TestArgs, TieArg,
};

/// Exit status for an error: 2 for bad input, 3 when no acceptable
/// assignment was found, 4 for numerical failures.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<CoreError>()) {
        Some(CoreError::AcceptanceTimeout { .. }) => 3,
        Some(CoreError::Numerical(_) | CoreError::SingularCovariance { .. }) => 4,
        _ => 2,
    }
}

struct Ctx {
    config: RunConfig,
    seed: u64,
    out: Option<std::path::PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CoreError::Argument("--workers must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().context("configuring worker threads")?;
    }
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = match cli.seed.or(config.seed) {
        Some(s) => s,
        None => {
            let s = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
            eprintln!("no seed given; using {s} (pass --seed {s} to replay)");
            s
        }
    };
    let ctx = Ctx { config, seed, out: cli.out };
    match cli.command {
        Command::Design(a) => design(&ctx, a),
        Command::Assign(a) => assign(&ctx, a),
        Command::Analyze(a) => analyze(&ctx, a),
        Command::Ci(a) => ci(&ctx, a),
        Command::Test(a) => test(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
    }
}

fn emit(ctx: &Ctx, command: &str, body: Value) -> Result<()> {
    let mut doc = json!({ "tool": "rerand", "version": VERSION, "command": command, "seed": ctx.seed });
    if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
        d.extend(b);
    }
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match &ctx.out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn criterion_config(ctx: &Ctx, args: &CriterionArgs) -> CriterionConfig {
    let mut c = ctx.config.criterion.clone();
    if let Some(m) = args.metric {
        c.metric = match m {
            MetricArg::Mahalanobis => BalanceMetricKind::Mahalanobis,
            MetricArg::Euclidean => BalanceMetricKind::Euclidean,
            MetricArg::QuadraticForm => BalanceMetricKind::QuadraticForm,
        };
    }
    if let Some(pa) = args.pa {
        c.pa = pa;
    }
    if let Some(draws) = args.threshold_draws {
        c.threshold = ThresholdRule::MonteCarlo { draws };
    }
    if args.rr_columns.is_some() {
        c.rr_columns = args.rr_columns.clone();
    }
    if args.adj_columns.is_some() {
        c.adj_columns = args.adj_columns.clone();
    }
    if args.n1.is_some() {
        c.n1 = args.n1;
    }
    if args.matrix.is_some() {
        c.matrix = args.matrix.clone();
    }
    c
}

/// Covariate frame; columns with gaps are replaced by zero-filled values
/// plus missingness indicators.
fn load_frame(path: &Path, crit: &CriterionConfig) -> Result<(ExperimentFrame, Option<Vec<String>>)> {
    let table = Table::read(path)?;
    let ids = table.unit_ids.clone();
    let counts: Vec<(String, usize)> =
        table.names.iter().zip(&table.columns).map(|(n, c)| (n.clone(), c.iter().filter(|v| v.is_none()).count())).collect();
    let frame = if counts.iter().any(|(_, c)| *c > 0) {
        for (name, c) in counts.iter().filter(|(_, c)| *c > 0) {
            eprintln!("covariate {name}: {c} missing of {}", table.nrows());
        }
        augment_missing_indicators(&table.into_masked()?)?
    } else {
        table.to_frame()?
    };
    Ok((crit.apply_columns(&frame)?, ids))
}

fn resolve(ctx: &Ctx, crit: &CriterionConfig, frame: &ExperimentFrame) -> Result<BalanceCriterion> {
    let n1 = crit.n1_for(frame.n());
    let spec = crit.spec(derive_seed(ctx.seed, 1))?;
    Ok(BalanceCriterion::resolve(&spec, frame, n1)?)
}

fn criterion_json(c: &BalanceCriterion, crit: &CriterionConfig, frame: &ExperimentFrame) -> Value {
    let source = match c.source() {
        ThresholdSource::ChiSquareQuantile => json!({ "kind": "chi_square" }),
        ThresholdSource::MonteCarlo { draws, seed } => json!({ "kind": "monte_carlo", "draws": draws, "seed": seed }),
        ThresholdSource::Fixed { a } => json!({ "kind": "fixed", "a": a }),
    };
    let names = |cols: &[usize]| cols.iter().map(|&j| frame.names()[j].clone()).collect::<Vec<_>>();
    json!({
        "metric": c.metric().name(),
        "pa": c.target_pa(),
        "a": c.threshold(),
        "d": c.d(),
        "n1": crit.n1_for(frame.n()),
        "threshold_source": source,
        "rr_columns": names(frame.rr_cols()),
        "adj_columns": names(frame.adj_cols()),
    })
}

fn design(ctx: &Ctx, args: DesignArgs) -> Result<()> {
    let crit = criterion_config(ctx, &args.criterion);
    let (frame, _) = load_frame(&args.covariates, &crit)?;
    let c = resolve(ctx, &crit, &frame)?;
    eprintln!("{} criterion on {} covariates: a = {:.6}", c.metric().name(), c.d(), c.threshold());
    let mut body = json!({ "n": frame.n(), "criterion": criterion_json(&c, &crit, &frame) });
    if *c.metric() == Metric::Mahalanobis {
        body["v_da"] = json!(v_da(c.d(), c.threshold()));
    }
    emit(ctx, "design", body)
}

fn assign(ctx: &Ctx, args: AssignArgs) -> Result<()> {
    let mut crit = criterion_config(ctx, &args.criterion);
    if args.max_attempts.is_some() {
        crit.max_attempts = args.max_attempts;
    }
    let (frame, ids) = load_frame(&args.covariates, &crit)?;
    let c = resolve(ctx, &crit, &frame)?;
    let n1 = crit.n1_for(frame.n());
    let mut rng = stream(ctx.seed, Purpose::Rerandomization, 0);
    let result = match args.strategy {
        Strategy::Rejection => rejection_rerandomize(&c, n1, &mut rng, crit.max_attempts),
        Strategy::PairSwitch => {
            let z0 = complete_randomization(frame.n(), n1, &mut rng)?;
            let budget = crit.max_attempts.unwrap_or(rerand_core::assignment::default_max_attempts(crit.pa));
            pair_switch_rerandomize(&c, &z0, &mut rng, budget)
        }
    };
    let strategy = format!("{:?}", args.strategy).to_lowercase();
    let log = match result {
        Ok(log) => log,
        Err(e @ CoreError::AcceptanceTimeout { attempts, best_metric, threshold }) => {
            emit(
                ctx,
                "assign",
                json!({
                    "status": "acceptance_timeout",
                    "strategy": strategy,
                    "criterion": criterion_json(&c, &crit, &frame),
                    "attempts": attempts,
                    "best_metric": best_metric,
                    "threshold": threshold,
                }),
            )?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let file = std::fs::File::create(&args.assignment_out).with_context(|| format!("creating {}", args.assignment_out.display()))?;
    write_assignment(&log.accepted, ids.as_deref(), file)?;
    eprintln!("accepted after {} attempts (metric {:.6} < {:.6})", log.attempts, log.final_metric, c.threshold());
    emit(
        ctx,
        "assign",
        json!({
            "status": "ok",
            "strategy": strategy,
            "criterion": criterion_json(&c, &crit, &frame),
            "attempts": log.attempts,
            "final_metric": log.final_metric,
            "assignment_file": args.assignment_out,
        }),
    )
}

struct Data {
    frame: ExperimentFrame,
    z: Assignment,
    y: Vec<Option<f64>>,
}

fn load_data(args: &DataArgs, crit: &CriterionConfig) -> Result<Data> {
    let (frame, ids) = load_frame(&args.covariates, crit)?;
    let zt = Table::read(&args.assignment)?.align_to(ids.as_deref())?;
    let yt = Table::read(&args.outcomes)?.align_to(ids.as_deref())?;
    let z = assignment_from_column(zt.pick(args.assignment_column.as_deref())?)?;
    let y = yt.pick(args.outcome_column.as_deref())?.to_vec();
    if z.n() != frame.n() || y.len() != frame.n() {
        bail!(CoreError::Argument(format!(
            "covariates have {} rows, assignment {}, outcomes {}",
            frame.n(),
            z.n(),
            y.len()
        )));
    }
    let missing = y.iter().filter(|v| v.is_none()).count();
    if missing > 0 {
        eprintln!("outcome: {missing} missing of {}", y.len());
    }
    Ok(Data { frame, z, y })
}

fn model_spec(ctx: &Ctx, args: &EstimatorArgs) -> OutcomeModelSpec {
    let mut spec = ctx.config.model.clone();
    match args.model {
        Some(ModelArg::Ols) => spec.kind = ModelKind::Ols,
        Some(ModelArg::Forest) if !matches!(spec.kind, ModelKind::RegressionForest(_)) => {
            spec.kind = OutcomeModelSpec::forest(0).kind;
        }
        _ => {}
    }
    if args.stepwise {
        spec.columns = ColumnChoice::Stepwise;
    }
    spec
}

fn method(ctx: &Ctx, args: &EstimatorArgs) -> Result<Method> {
    Ok(match &args.method {
        Some(m) => m.parse()?,
        None => ctx.config.estimator.method,
    })
}

fn folds(ctx: &Ctx, args: &EstimatorArgs) -> usize {
    args.folds.unwrap_or(ctx.config.estimator.folds)
}

fn complete_outcomes(y: &[Option<f64>]) -> Option<Vec<f64>> {
    y.iter().copied().collect()
}

fn estimate_data(ctx: &Ctx, data: &Data, est: &EstimatorArgs) -> Result<(EstimateReport, Option<rerand_core::EifTable>)> {
    let m = method(ctx, est)?;
    let spec = model_spec(ctx, est);
    let k = folds(ctx, est);
    let seed = derive_seed(ctx.seed, 2);
    match complete_outcomes(&data.y) {
        Some(y) => {
            let exp = ObservedExperiment::new(data.frame.clone(), data.z.clone(), y)?;
            if m == Method::Dr {
                let (r, eif) = tau_dr(&exp, &spec, k, seed)?;
                Ok((r, Some(eif)))
            } else {
                Ok((estimate(&exp, m, &spec, k, seed)?, None))
            }
        }
        None if m == Method::Dr => {
            let record = ResponseRecord::from_outcomes(&data.y);
            Ok((tau_dr_missing_outcomes(&data.frame, &data.z, &data.y, &record, &spec, k, seed)?, None))
        }
        None => Err(CoreError::Argument(format!("missing outcomes need --method DR (got {})", m.label())).into()),
    }
}

fn estimator_json(ctx: &Ctx, est: &EstimatorArgs) -> Result<Value> {
    let m = method(ctx, est)?;
    let mut v = json!({ "method": m.label() });
    if m == Method::Dr {
        v["model"] = serde_json::to_value(model_spec(ctx, est))?;
        v["folds"] = json!(folds(ctx, est));
        v["seed"] = json!(derive_seed(ctx.seed, 2));
    }
    Ok(v)
}

fn analyze(ctx: &Ctx, args: AnalyzeArgs) -> Result<()> {
    let crit = criterion_config(ctx, &args.criterion);
    let data = load_data(&args.data, &crit)?;
    let (report, eif) = estimate_data(ctx, &data, &args.estimator)?;
    eprintln!("tau_{} = {:.6} (se {:.6}, R2 {:.4})", report.method.label(), report.tau_hat, report.std_error(), report.r2_hat);
    if let Some(path) = &args.eif_out {
        let eif = eif.ok_or_else(|| anyhow!(CoreError::Argument("--eif-out needs --method DR with complete outcomes".into())))?;
        write_eif(path, &eif)?;
    }
    emit(ctx, "analyze", json!({ "estimator": estimator_json(ctx, &args.estimator)?, "report": report }))
}

fn write_eif(path: &Path, eif: &rerand_core::EifTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit", "fold", "mu1", "mu0", "eif1", "eif0", "eif"])?;
    for i in 0..eif.eif.len() {
        w.write_record([
            i.to_string(),
            eif.fold[i].to_string(),
            eif.mu1[i].to_string(),
            eif.mu0[i].to_string(),
            eif.eif1[i].to_string(),
            eif.eif0[i].to_string(),
            eif.eif[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Asymptotic law of the design. Non-Mahalanobis criteria borrow the
/// Mahalanobis law at the same acceptance probability.
fn design_law(ctx: &Ctx, crit: &CriterionConfig, frame: &ExperimentFrame, design: DesignArg) -> Result<(DesignLaw, Option<Value>)> {
    if design == DesignArg::Cr {
        return Ok((DesignLaw::Complete, None));
    }
    let c = resolve(ctx, crit, frame)?;
    let a = match c.metric() {
        Metric::Mahalanobis => c.threshold(),
        _ => threshold_from_chisq(c.d(), crit.pa)?,
    };
    Ok((DesignLaw::Rerandomized { d: c.d(), a }, Some(criterion_json(&c, crit, frame))))
}

fn ci(ctx: &Ctx, args: CiArgs) -> Result<()> {
    let crit = criterion_config(ctx, &args.criterion);
    let data = load_data(&args.data, &crit)?;
    let (mut report, _) = estimate_data(ctx, &data, &args.estimator)?;
    let alpha = args.alpha.unwrap_or(ctx.config.inference.alpha);
    let draws = args.mixture_draws.unwrap_or(ctx.config.inference.mixture_draws);
    let (law, criterion) = design_law(ctx, &crit, &data.frame, args.design)?;
    let mixture_seed = derive_seed(ctx.seed, 3);
    let interval = confidence_interval(&report, law, alpha, draws, mixture_seed)?;
    eprintln!("{:.0}% interval: [{:.6}, {:.6}]", 100.0 * (1.0 - alpha), interval.lower, interval.upper);
    report.ci = Some(interval);
    emit(
        ctx,
        "ci",
        json!({
            "estimator": estimator_json(ctx, &args.estimator)?,
            "design": law,
            "criterion": criterion,
            "alpha": alpha,
            "mixture_draws": draws,
            "mixture_seed": mixture_seed,
            "report": report,
        }),
    )
}

fn test(ctx: &Ctx, args: TestArgs) -> Result<()> {
    let crit = criterion_config(ctx, &args.criterion);
    let data = load_data(&args.data, &crit)?;
    let y = complete_outcomes(&data.y)
        .ok_or_else(|| anyhow!(CoreError::Argument("the randomization test needs complete outcomes".into())))?;
    let exp = ObservedExperiment::new(data.frame.clone(), data.z.clone(), y)?;
    let statistic = Statistic { method: method(ctx, &args.estimator)?, model: model_spec(ctx, &args.estimator), folds: folds(ctx, &args.estimator) };
    let draws = args.null_draws.unwrap_or(ctx.config.inference.null_draws);
    let tie = match args.tie_rule {
        Some(TieArg::Strict) => TieRule::Strict,
        Some(TieArg::Inclusive) => TieRule::Inclusive,
        None => ctx.config.inference.tie_rule,
    };
    let (criterion, crit_json) = match args.design {
        DesignArg::Cr => (None, None),
        DesignArg::Rr => {
            let c = resolve(ctx, &crit, &data.frame)?;
            let j = criterion_json(&c, &crit, &data.frame);
            (Some(c), Some(j))
        }
    };
    let test_seed = derive_seed(ctx.seed, 4);
    let result = randomization_test(&exp, criterion.as_ref(), &statistic, draws, test_seed, tie)?;
    eprintln!("p = {:.4} from {} null draws", result.p_value, result.null_draws);
    emit(ctx, "test", json!({ "statistic": statistic, "criterion": crit_json, "result": result }))
}

fn simulate(ctx: &Ctx, args: SimulateArgs) -> Result<()> {
    let out = ctx.out.clone().ok_or_else(|| anyhow!(CoreError::Argument("simulate needs --out <directory>".into())))?;
    let mut cfg = ctx.config.simulation.clone().unwrap_or_else(|| SimulationConfig::new(DgpKind::Linear, 0));
    if let Some(s) = args.setting {
        cfg.setting = match s {
            SettingArg::Linear => DgpKind::Linear,
            SettingArg::Nonlinear => DgpKind::NonLinear,
        };
    }
    if let Some(v) = args.sizes {
        cfg.sizes = v;
    }
    if let Some(v) = args.scenarios {
        cfg.scenarios = v;
    }
    if let Some(v) = args.replications {
        cfg.replications = v;
    }
    if let Some(v) = args.covariates_dim {
        cfg.d = v;
    }
    if let Some(v) = args.pa {
        cfg.pa = v;
    }
    if let Some(v) = args.mixture_draws {
        cfg.mixture_draws = v;
    }
    cfg.seed = ctx.seed;
    let figures: Vec<Figure> = match args.figure {
        Some(names) => names
            .iter()
            .map(|n| n.parse::<Figure>().map_err(|e| anyhow!(CoreError::Argument(e))))
            .collect::<Result<_>>()?,
        None => Figure::ALL.to_vec(),
    };
    let table = run_scenario(&cfg)?;
    for row in table.errors() {
        eprintln!("cell n={} scenario={} failed: {}", row.n, row.scenario, row.note);
    }
    let paths = emit_report(&table, &out, &figures)?;
    let manifest = RunManifest { tool: "rerand", version: VERSION, command: "simulate", seed: ctx.seed, simulation: &cfg, files: &paths };
    std::fs::write(out.join("run.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    eprintln!("wrote {} files to {}", paths.len() + 1, out.display());
    Ok(())
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    simulation: &'a SimulationConfig,
    files: &'a [std::path::PathBuf],
}
