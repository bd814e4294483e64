#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use rkl::checkpoint::{self, Checkpoint};
use rkl::config::RunConfig;
use rkl::edmd::{assemble_snapshots, gram_wellposedness, wellposedness_report, KoopmanModel};
use rkl::observables::Basis;
use rkl::pipeline::{
    collect_initial, convergence_experiment, frechet_distance, rmse, run_seeds, time_lag, timing_experiment, Summary,
};

/// Version stamped into every JSON and CSV artifact this tool writes.
const ARTIFACT_FORMAT_VERSION: u32 = 1;

const EXIT_NUMERICAL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "rkl",
    version,
    about = "Recursive Koopman learning on a simulated two-link arm"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Directory for artifacts; created if missing.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Override a config value, `section.key=value` or `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the initial dataset for every configured seed.
    Collect(Common),
    /// Fit the lifted model on the initial dataset and write a checkpoint.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Seed for generated datasets; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run closed-loop tracking episodes for every configured seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Leave wall-clock timings out of the reports.
        #[arg(long)]
        no_timing: bool,
    },
    /// Score a trajectory CSV with columns tip_x, tip_y, ref_x, ref_y.
    Eval {
        #[arg(long)]
        trajectory: PathBuf,
        /// Sample step in seconds for the time lag.
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Operator error against the stationary reference on a Gaussian chain.
    Converge(Common),
    /// Time recursive updates against batch refits.
    Bench(Common),
    /// Print a checkpoint summary and verify it round-trips.
    Inspect {
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<rkl::Error> for Failure {
    fn from(e: rkl::Error) -> Self {
        let code = if e.is_input_error() { EXIT_USAGE } else { EXIT_NUMERICAL };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn stage<T>(name: &str, r: rkl::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{name}: {}", f.message);
        f
    })
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let r = match path {
        Some(p) => RunConfig::load(p, overrides),
        None => RunConfig::parse("", overrides),
    };
    r.map_err(|e| Failure::usage(format!("config: {e}")))
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    write(
        path,
        &(serde_json::to_string_pretty(value).expect("json value serializes") + "\n"),
    )
}

/// `#`-prefixed header carrying the format version and the resolved config.
fn csv_header(kind: &str, cfg: &RunConfig) -> String {
    let mut s = format!("# rkl-{kind} {ARTIFACT_FORMAT_VERSION}\n");
    for line in cfg.to_text().lines() {
        s.push('#');
        if !line.is_empty() {
            s.push(' ');
            s.push_str(line);
        }
        s.push('\n');
    }
    s
}

fn envelope(cfg: &RunConfig, kind: &str, body: Value) -> Value {
    json!({
        "format_version": ARTIFACT_FORMAT_VERSION,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "kind": kind,
        "config": cfg.to_text(),
        "result": body,
    })
}

fn collect(common: &Common) -> CliResult<()> {
    let cfg = load_config(Some(&common.config), &common.overrides)?;
    prepare_out(&common.out)?;
    for &seed in &cfg.seeds {
        let ds = stage(
            "collect",
            collect_initial(&cfg.arm, &cfg.initial, &cfg.demo, cfg.period, seed),
        )?;
        let mut body = Vec::new();
        stage("collect", ds.write_csv(&mut body))?;
        let text = csv_header("dataset", &cfg) + &String::from_utf8(body).expect("csv is utf-8");
        write(&common.out.join(format!("dataset_seed{seed}.csv")), &text)?;
    }
    Ok(())
}

fn fit(common: &Common, seed: Option<u64>) -> CliResult<()> {
    let cfg = load_config(Some(&common.config), &common.overrides)?;
    prepare_out(&common.out)?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let ds = stage(
        "collect",
        collect_initial(&cfg.arm, &cfg.initial, &cfg.demo, cfg.period, seed),
    )?;
    let basis_x = stage("fit", Basis::new(cfg.basis_state.clone()))?;
    let basis_u = stage("fit", Basis::new(cfg.basis_control.clone()))?;
    let (y, _) = stage("fit", assemble_snapshots(&ds, &basis_x, &basis_u))?;
    let report = wellposedness_report(&y);
    let model = stage("fit", KoopmanModel::fit(&ds, &basis_x, &basis_u, cfg.ridge))?;
    let ckpt = Checkpoint {
        model,
        update_count: 0,
        config: cfg.to_text(),
    };
    let path = common.out.join("model.ckpt");
    write(&path, &ckpt.to_text())?;
    let body = json!({
        "seed": seed,
        "samples": ds.len(),
        "ridge": cfg.ridge,
        "wellposedness": report,
        "checkpoint": path.file_name().map(|p| p.to_string_lossy().into_owned()),
    });
    write_json(
        &common.out.join("wellposedness.json"),
        &envelope(&cfg, "wellposedness", body),
    )?;
    println!(
        "rank {}/{} condition number {:.3e} on {} samples",
        report.rank,
        report.dim,
        report.condition_number,
        ds.len()
    );
    Ok(())
}

fn run(common: &Common, no_timing: bool) -> CliResult<()> {
    let cfg = load_config(Some(&common.config), &common.overrides)?;
    prepare_out(&common.out)?;
    let reports = stage("run", run_seeds(&cfg))?;
    for r in &reports {
        write(
            &common.out.join(format!("report_seed{}.json", r.seed)),
            &(r.to_json(!no_timing) + "\n"),
        )?;
        write(
            &common.out.join(format!("trajectory_seed{}.csv", r.seed)),
            &(csv_header("trajectory", &cfg) + &r.trajectory_csv()),
        )?;
        println!(
            "seed {:>4}  rmse {:.5} m  lag {:+.3} s  frechet {:.5} m  saturation {:.3}",
            r.seed, r.rmse, r.time_lag, r.frechet, r.saturation_rate
        );
    }
    let summary = Summary::of(&reports);
    println!(
        "mean rmse {:.5} ± {:.5} m over {} seeds ({} {} {})",
        summary.rmse.mean,
        summary.rmse.std,
        reports.len(),
        cfg.update_mode,
        cfg.controller,
        cfg.initial
    );
    write_json(
        &common.out.join("summary.json"),
        &envelope(
            &cfg,
            "summary",
            serde_json::to_value(&summary).expect("summary serializes"),
        ),
    )
}

type Trace2 = Vec<[f64; 2]>;

fn read_trajectory(path: &Path) -> CliResult<(Trace2, Trace2)> {
    let bad = |m: String| Failure::usage(format!("{}: {m}", path.display()));
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column `{name}`")))
    };
    let idx = [col("tip_x")?, col("tip_y")?, col("ref_x")?, col("ref_y")?];
    let (mut actual, mut reference) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let mut v = [0.0; 4];
        for (slot, &i) in v.iter_mut().zip(&idx) {
            let field = rec.get(i).unwrap_or("");
            *slot = field.parse().map_err(|_| bad(format!("bad number `{field}`")))?;
        }
        actual.push([v[0], v[1]]);
        reference.push([v[2], v[3]]);
    }
    Ok((actual, reference))
}

fn eval(trajectory: &Path, dt: f64, config: Option<&Path>, out: Option<&Path>, overrides: &[String]) -> CliResult<()> {
    let cfg = load_config(config, overrides)?;
    if !(dt > 0.0) {
        return Err(Failure::usage(format!("dt must be positive, got {dt}")));
    }
    let (actual, reference) = read_trajectory(trajectory)?;
    let body = json!({
        "trajectory": trajectory.display().to_string(),
        "steps": actual.len(),
        "dt": dt,
        "rmse": stage("eval", rmse(&actual, &reference))?,
        "time_lag": stage("eval", time_lag(&actual, &reference, dt))?,
        "frechet": stage("eval", frechet_distance(&actual, &reference))?,
    });
    let doc = envelope(&cfg, "eval", body);
    println!(
        "{}",
        serde_json::to_string_pretty(&doc["result"]).expect("json value serializes")
    );
    if let Some(dir) = out {
        prepare_out(dir)?;
        write_json(&dir.join("eval.json"), &doc)?;
    }
    Ok(())
}

fn converge(common: &Common) -> CliResult<()> {
    let cfg = load_config(Some(&common.config), &common.overrides)?;
    prepare_out(&common.out)?;
    let report = stage("converge", convergence_experiment(&cfg.converge))?;
    for (n, m) in report.checkpoints.iter().zip(&report.medians) {
        println!("N = {n:>9}  median ||K_N - K*||_F = {m:.3e}");
    }
    for ev in &report.rank_events {
        eprintln!(
            "seed {} at N = {}: rank {} of {}, refit with ridge {:.1e}",
            ev.seed, ev.samples, ev.rank, ev.dim, ev.ridge_used
        );
    }
    write_json(
        &common.out.join("convergence.json"),
        &envelope(
            &cfg,
            "convergence",
            serde_json::to_value(&report).expect("report serializes"),
        ),
    )
}

fn bench(common: &Common) -> CliResult<()> {
    let cfg = load_config(Some(&common.config), &common.overrides)?;
    prepare_out(&common.out)?;
    let report = stage("bench", timing_experiment(&cfg.bench))?;
    for row in &report.rows {
        println!(
            "n = {:>3}  N = {:>8}  rls update {:.3e} s  edmd refit {:.3e} s",
            row.dim, row.samples, row.rls_update_secs, row.edmd_fit_secs
        );
    }
    for r in &report.size_ratios {
        println!(
            "n = {:>3}  N {} -> {}: rls x{:.2}  edmd x{:.1}",
            r.dim, r.from_samples, r.to_samples, r.rls, r.edmd
        );
    }
    write_json(
        &common.out.join("timing.json"),
        &envelope(
            &cfg,
            "timing",
            serde_json::to_value(&report).expect("report serializes"),
        ),
    )
}

fn inspect(path: &Path, out: Option<&Path>) -> CliResult<()> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let ckpt = stage("inspect", Checkpoint::from_text(&text))?;
    let m = &ckpt.model;
    let round_trip = ckpt.to_text() == text;
    let doc = json!({
        "format_version": checkpoint::FORMAT_VERSION,
        "basis_state": m.basis_state.to_string(),
        "basis_control": m.basis_control.to_string(),
        "n_z": m.n_z,
        "n_g": m.n_g,
        "dt": m.dt,
        "sample_count": m.sample_count,
        "update_count": ckpt.update_count,
        "covariance_wellposedness": gram_wellposedness(&m.p),
        "p_symmetry_residual": m.symmetry_residual(),
        "round_trip": round_trip,
        "config": ckpt.config,
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("json value serializes"));
    if let Some(dir) = out {
        prepare_out(dir)?;
        write_json(&dir.join("inspect.json"), &doc)?;
    }
    if round_trip {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERICAL,
            message: "checkpoint does not reproduce itself when rewritten".into(),
        })
    }
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Collect(c) => collect(&c),
        Command::Fit { common, seed } => fit(&common, seed),
        Command::Run { common, no_timing } => run(&common, no_timing),
        Command::Eval {
            trajectory,
            dt,
            config,
            out,
            overrides,
        } => eval(&trajectory, dt, config.as_deref(), out.as_deref(), &overrides),
        Command::Converge(c) => converge(&c),
        Command::Bench(c) => bench(&c),
        Command::Inspect { checkpoint, out } => inspect(&checkpoint, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = rkl::par::threads_from_env();
    match rkl::par::with_threads(threads, move || execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
