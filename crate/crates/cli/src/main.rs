//! Command-line front end: index tables, the MDP verification oracle, the
//! relaxed lower bound, simulation, and size sweeps, all driven by one
//! experiment config file and emitting CSV artifacts.

use whittle_sched_cli::config::ExperimentConfig;
use whittle_sched_cli::output::{fmt_f64, write_csv};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use whittle_sched::mdp::{
    certify_structure, numeric_whittle_index, value_iteration, TruncatedMdp, DEFAULT_INDEX_TOL,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use whittle_sched::policies::PolicyKind;
use whittle_sched::relaxed::lagrangian_lower_bound;
use whittle_sched::sim::{run as simulate, sweep};
use whittle_sched::whittle::{index_discounted, IndexMode, IndexTable};
use whittle_sched::SystemConfig;

const USAGE: &str = "\
usage: whittle-sched <command> --config PATH [options]

commands:
  index      dump the per-class index table as CSV
  oracle     compare closed-form indices against the value-iteration oracle
  bound      compute the relaxed-problem lower bound
  simulate   run the configured policies on one system size
  sweep      run the policies across system sizes and report the bound gap

options:
  --config PATH   experiment config file (required)
  --out DIR       output directory (default: config `out`, else `.`)
  --seed U64      override the config seed
  --beta F64      discount factor for `oracle` and discounted-mode indices
  --n LIST        comma-separated system sizes for `sweep`
  --policy LIST   comma-separated policies (wi, md, md-rate, rand)

environment:
  WHITTLE_SCHED_THREADS   cap worker threads (0 or unset: auto)
";

struct Options {
    command: String,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    beta: Option<f64>,
    sizes: Option<Vec<usize>>,
    policies: Option<Vec<PolicyKind>>,
}

fn parse_args(mut args: std::env::Args) -> Result<Options, String> {
    let command = args.next().ok_or("missing command")?;
    if !["index", "oracle", "bound", "simulate", "sweep"].contains(&command.as_str()) {
        return Err(format!("unknown command `{command}`"));
    }
    let mut options = Options {
        command,
        config: None,
        out: None,
        seed: None,
        beta: None,
        sizes: None,
        policies: None,
    };
    while let Some(flag) = args.next() {
        let mut value = |name: &str| args.next().ok_or(format!("{name} needs a value"));
        match flag.as_str() {
            "--config" => options.config = Some(PathBuf::from(value("--config")?)),
            "--out" => options.out = Some(PathBuf::from(value("--out")?)),
            "--seed" => {
                options.seed = Some(value("--seed")?.parse().map_err(|e| format!("--seed: {e}"))?)
            }
            "--beta" => {
                options.beta = Some(value("--beta")?.parse().map_err(|e| format!("--beta: {e}"))?)
            }
            "--n" => {
                let list = value("--n")?;
                let sizes: Result<Vec<usize>, _> =
                    list.split(',').map(|s| s.trim().parse()).collect();
                options.sizes = Some(sizes.map_err(|e| format!("--n: {e}"))?);
            }
            "--policy" => {
                let list = value("--policy")?;
                let kinds: Result<Vec<PolicyKind>, String> = list
                    .split(',')
                    .map(|s| PolicyKind::parse(s.trim()).ok_or(format!("unknown policy `{s}`")))
                    .collect();
                options.policies = Some(kinds?);
            }
            other => return Err(format!("unknown flag `{other}`")),
        }
    }
    if options.config.is_none() {
        return Err("--config is required".into());
    }
    Ok(options)
}

fn configure_threads() {
    if let Ok(raw) = std::env::var("WHITTLE_SCHED_THREADS") {
        match raw.parse::<usize>() {
            Ok(0) => {}
            Ok(n) => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            Err(_) => eprintln!("warning: ignoring WHITTLE_SCHED_THREADS={raw}"),
        }
    }
}

fn main() -> ExitCode {
    let mut args = std::env::args();
    args.next();
    let options = match parse_args(args) {
        Ok(options) => options,
        Err(message) => {
            eprintln!("error: {message}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    configure_threads();
    match dispatch(&options) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(options: &Options) -> Result<(), String> {
    let experiment = ExperimentConfig::load(options.config.as_ref().unwrap())
        .map_err(|errors| errors.join("\n"))?;
    let out_dir = options
        .out
        .clone()
        .or_else(|| experiment.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(|e| format!("cannot create out dir: {e}"))?;
    if let (_, Some(note)) = experiment.resolve_servers() {
        eprintln!("note: {note}");
    }
    let system = experiment.to_system_config(options.seed)?;
    let beta = options.beta.or(experiment.beta);
    if let Some(b) = beta {
        if !(0.0 < b && b < 1.0) {
            return Err(format!("beta = {b} must lie strictly inside (0, 1)"));
        }
    }
    let policies = options.policies.clone().unwrap_or(experiment.policies.clone());

    match options.command.as_str() {
        "index" => cmd_index(&system, beta, &out_dir),
        "oracle" => cmd_oracle(&system, beta.unwrap_or(0.9), &out_dir),
        "bound" => cmd_bound(&system, &out_dir),
        "simulate" => cmd_simulate(&system, &policies, beta, &out_dir),
        "sweep" => {
            let sizes = options
                .sizes
                .clone()
                .ok_or("sweep needs --n LIST (system sizes)")?;
            cmd_sweep(&system, &sizes, &policies, beta, &out_dir)
        }
        _ => unreachable!(),
    }
}

fn index_mode(beta: Option<f64>) -> IndexMode {
    match beta {
        Some(b) => IndexMode::Discounted(b),
        None => IndexMode::Limit,
    }
}

fn cmd_index(system: &SystemConfig, beta: Option<f64>, out_dir: &Path) -> Result<(), String> {
    let mode = index_mode(beta);
    let table = IndexTable::build(&system.classes, mode).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for params in &system.classes {
        for n in 0..=2 * params.rate {
            rows.push(vec![
                params.class_id.to_string(),
                n.to_string(),
                fmt_f64(table.index(params.class_id, n)),
                mode.label(),
            ]);
        }
    }
    let path = out_dir.join("index.csv");
    write_csv(&path, &["class_id", "n", "index", "mode"], &rows).map_err(|e| e.to_string())?;
    for params in &system.classes {
        println!(
            "class {} (a={}, R={}): index 0 at empty, tail {} from n={}",
            params.class_id,
            params.holding_cost,
            params.rate,
            fmt_f64(table.tail(params.class_id)),
            params.rate
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_oracle(system: &SystemConfig, beta: f64, out_dir: &Path) -> Result<(), String> {
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for params in &system.classes {
        for n in 0..=params.rate + 3 {
            let closed = index_discounted(n, beta, params);
            let numeric = numeric_whittle_index(params, n, beta, DEFAULT_INDEX_TOL)
                .map_err(|e| e.to_string())?;
            let error = (numeric - closed).abs();
            worst = worst.max(error);
            // Certify structure on the solution at the recovered index, the
            // most delicate subsidy for this state.
            let mdp = TruncatedMdp::with_default_truncation(*params, numeric, beta)
                .map_err(|e| e.to_string())?;
            let solution =
                value_iteration(&mdp, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
            let report = certify_structure(&solution);
            rows.push(vec![
                params.class_id.to_string(),
                fmt_f64(beta),
                n.to_string(),
                fmt_f64(closed),
                fmt_f64(numeric),
                fmt_f64(error),
                report.value_monotone.to_string(),
                report.value_r_convex.to_string(),
                report.action_gap_submodular.to_string(),
            ]);
        }
    }
    let path = out_dir.join("oracle.csv");
    write_csv(
        &path,
        &[
            "class_id",
            "beta",
            "n",
            "closed_form_index",
            "numeric_index",
            "abs_error",
            "v_monotone",
            "r_convex",
            "to_submodular",
        ],
        &rows,
    )
    .map_err(|e| e.to_string())?;
    println!(
        "oracle check at beta = {beta}: {} states, max |closed - numeric| = {}",
        rows.len(),
        fmt_f64(worst)
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_bound(system: &SystemConfig, out_dir: &Path) -> Result<(), String> {
    let solution = lagrangian_lower_bound(system).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<String>> = solution
        .per_class
        .iter()
        .map(|mix| {
            vec![
                mix.class_id.to_string(),
                mix.lower_threshold.to_string(),
                mix.upper_threshold.to_string(),
                fmt_f64(mix.mix),
                fmt_f64(mix.activation),
                fmt_f64(mix.mean_weighted_queue),
                fmt_f64(solution.subsidy),
                fmt_f64(solution.expected_activation),
                fmt_f64(solution.lower_bound_per_user),
            ]
        })
        .collect();
    let path = out_dir.join("bound.csv");
    write_csv(
        &path,
        &[
            "class_id",
            "n_lower",
            "n_upper",
            "lambda",
            "activation_prob",
            "mean_weighted_queue",
            "w_star",
            "total_activation",
            "lower_bound_per_user",
        ],
        &rows,
    )
    .map_err(|e| e.to_string())?;
    println!(
        "relaxed bound: W* = {}, expected busy servers = {} ({}), cost per user >= {}",
        fmt_f64(solution.subsidy),
        fmt_f64(solution.expected_activation),
        if solution.binding { "binding" } else { "slack" },
        fmt_f64(solution.lower_bound_per_user)
    );
    for mix in &solution.per_class {
        println!(
            "  class {}: thresholds {}..{} with weight {} on the lower, activation {}",
            mix.class_id,
            mix.lower_threshold,
            mix.upper_threshold,
            fmt_f64(mix.mix),
            fmt_f64(mix.activation)
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_simulate(
    system: &SystemConfig,
    policies: &[PolicyKind],
    beta: Option<f64>,
    out_dir: &Path,
) -> Result<(), String> {
    let mode = index_mode(beta);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &kind in policies {
        let result = simulate(system, kind, mode).map_err(|e| e.to_string())?;
        for (rep, mean) in result.replication_means.iter().enumerate() {
            rows.push(vec![
                kind.name().to_string(),
                result.queues.to_string(),
                result.servers.to_string(),
                rep.to_string(),
                fmt_f64(*mean),
            ]);
        }
        println!(
            "{}: cost per user per slot = {} (se {}, {} replications x {} slots)",
            kind.name(),
            fmt_f64(result.pooled_mean),
            fmt_f64(result.std_error),
            result.replication_means.len(),
            result.measured_slots
        );
        summary.push(vec![
            kind.name().to_string(),
            result.queues.to_string(),
            result.servers.to_string(),
            result.replication_means.len().to_string(),
            fmt_f64(result.pooled_mean),
            fmt_f64(result.std_error),
        ]);
    }
    let path = out_dir.join("simulate.csv");
    write_csv(&path, &["policy", "N", "M", "replication", "mean_cost"], &rows)
        .map_err(|e| e.to_string())?;
    let summary_path = out_dir.join("simulate_summary.csv");
    write_csv(
        &summary_path,
        &["policy", "N", "M", "replications", "pooled_mean", "std_error"],
        &summary,
    )
    .map_err(|e| e.to_string())?;
    println!("wrote {} and {}", path.display(), summary_path.display());
    Ok(())
}

fn cmd_sweep(
    system: &SystemConfig,
    sizes: &[usize],
    policies: &[PolicyKind],
    beta: Option<f64>,
    out_dir: &Path,
) -> Result<(), String> {
    let mode = index_mode(beta);
    let table = sweep(system, sizes, policies, mode).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for row in &table.rows {
        rows.push(vec![
            row.policy.name().to_string(),
            row.queues.to_string(),
            row.servers.to_string(),
            fmt_f64(row.pooled_mean),
            fmt_f64(row.std_error),
        ]);
    }
    for bound in &table.bounds {
        rows.push(vec![
            "rp".to_string(),
            bound.queues.to_string(),
            bound.servers.to_string(),
            fmt_f64(bound.lower_bound_per_user),
            "0".to_string(),
        ]);
    }
    let path = out_dir.join("sweep.csv");
    write_csv(&path, &["policy", "N", "M", "pooled_mean", "std_error"], &rows)
        .map_err(|e| e.to_string())?;

    for &n in sizes {
        let bound = table.bound(n).map(|b| b.lower_bound_per_user);
        let cells: Vec<String> = policies
            .iter()
            .filter_map(|&kind| table.mean(n, kind))
            .map(|row| format!("{} = {}", row.policy.name(), fmt_f64(row.pooled_mean)))
            .collect();
        println!(
            "N = {n}: {}, rp = {}",
            cells.join(", "),
            bound.map(fmt_f64).unwrap_or_else(|| "-".into())
        );
    }
    if policies.contains(&PolicyKind::WhittleIndex) {
        let gaps: Vec<(usize, f64)> = sizes
            .iter()
            .filter_map(|&n| {
                let wi = table.mean(n, PolicyKind::WhittleIndex)?;
                let bound = table.bound(n)?;
                Some((
                    n,
                    (wi.pooled_mean - bound.lower_bound_per_user) / bound.lower_bound_per_user,
                ))
            })
            .collect();
        if gaps.len() >= 2 {
            let first = gaps.first().unwrap();
            let last = gaps.last().unwrap();
            let verdict = if last.1 < first.1 { "SHRINKING" } else { "NOT SHRINKING" };
            let detail: Vec<String> = gaps
                .iter()
                .map(|(n, g)| format!("N={n}: {:.3}%", g * 100.0))
                .collect();
            println!("gap-trend (wi vs rp): {verdict} ({})", detail.join(", "));
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}
