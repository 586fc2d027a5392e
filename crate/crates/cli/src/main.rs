use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use neuroqp::bench::{run_bench, write_results, BenchSpec, SolverMode};
use neuroqp::fxp::FxpFormat;
use neuroqp::mpcgen::{generate_random, tile, GeneratorSpec, ManifestEntry};
use neuroqp::neurosolver::{build_network, NetworkConfig};
use neuroqp::precond::{ruiz_equilibrate, OriginalFrame, Scaling, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use neuroqp::problem::{load_problem, save_problem};
use neuroqp::reference::{estimate_hyperparams, run};
use neuroqp::Error;

const MANIFEST_VERSION: u64 = 1;

#[derive(Parser)]
#[command(name = "neuroqp", version, about = "Event-based fixed-point QP solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem file and print the terminal cost and violation as JSON.
    Solve {
        problem: PathBuf,
        #[arg(long, default_value = "fxp", value_parser = parse_mode)]
        mode: SolverMode,
        #[arg(long, default_value = "Q17.6", value_parser = parse_fmt)]
        fmt: FxpFormat,
        #[arg(long, default_value_t = 8)]
        weight_bits: u32,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 100)]
        alpha_period: usize,
        #[arg(long, default_value_t = 100)]
        beta_period: usize,
        /// Ruiz-equilibrate before solving.
        #[arg(long)]
        precondition: bool,
        /// Also write solution, trace and statistics here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a random MPC problem and update manifest.json in the output directory.
    Generate {
        #[arg(long, default_value_t = 5)]
        horizon: usize,
        #[arg(long, default_value_t = 24)]
        states: usize,
        #[arg(long, default_value_t = 24)]
        controls: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a benchmark spec; writes per-cell CSV traces and summary.json.
    Bench {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<SolverMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_fmt(s: &str) -> Result<FxpFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[allow(clippy::too_many_arguments)]
fn solve(
    path: &Path,
    mode: SolverMode,
    fmt: FxpFormat,
    weight_bits: u32,
    iters: usize,
    alpha_period: usize,
    beta_period: usize,
    precondition: bool,
    out: Option<&Path>,
) -> neuroqp::Result<()> {
    let problem = load_problem(path)?;
    problem.validate().into_result()?;
    let (scaled, scaling) = if precondition {
        ruiz_equilibrate(&problem, DEFAULT_MAX_ITERS, DEFAULT_TOL)?
    } else {
        (problem.clone(), Scaling::identity(problem.n_vars(), problem.n_constraints()))
    };
    let frame = OriginalFrame::new(problem.clone(), scaling.clone());
    let hp = estimate_hyperparams(&scaled)
        .with_periods(alpha_period, beta_period)
        .with_budget(iters, 1e-6);

    let (solution, trace, events) = match mode {
        SolverMode::Fxp => {
            let cfg = NetworkConfig {
                state_fmt: fmt,
                weight_bits,
                max_iters: iters.max(1),
                ..NetworkConfig::default()
            }
            .with_schedule_of(&hp);
            let mut net = build_network(&scaled, &hp, &cfg)?.with_frame(frame);
            let (sol, trace, stats) = net.solve(iters)?;
            let events = json!({
                "messages_sent": stats.messages_sent,
                "mac_ops": stats.mac_ops,
                "neuron_updates": stats.neuron_updates,
                "saturations": stats.saturations,
            });
            (sol, trace, Some(events))
        }
        m => {
            let r = run(&scaled, m.method(), &hp, None, Some(&frame))?;
            (r.solution, r.trace, None)
        }
    };

    let terminal = json!({
        "mode": mode.as_str(),
        "cost": solution.cost,
        "violation": solution.violation,
        "iterations": solution.iterations,
        "converged": solution.converged,
    });
    println!("{terminal}");
    if let Some(out) = out {
        let full = json!({
            "version": 1,
            "problem": path.display().to_string(),
            "mode": mode.as_str(),
            "state_fmt": fmt.to_string(),
            "weight_bits": weight_bits,
            "hyperparams": hp,
            "scaling": scaling,
            "solution": solution,
            "events": events,
            "trace": trace.records,
        });
        let text = serde_json::to_string_pretty(&full)?;
        fs::write(out, text).map_err(|e| io_error(out, e))?;
    }
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn generate(spec: GeneratorSpec, out: &Path) -> neuroqp::Result<()> {
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let model = generate_random(&spec)?;
    let problem = tile(&model);
    let file = format!("mpc_N{}_s{}.json", spec.horizon, spec.seed);
    save_problem(&problem, out.join(&file))?;

    let manifest_path = out.join("manifest.json");
    let mut entries: Vec<ManifestEntry> = match fs::read_to_string(&manifest_path) {
        Ok(text) => {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            serde_json::from_value(v["entries"].clone())?
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_error(&manifest_path, e)),
    };
    let entry = ManifestEntry::describe(file.clone(), &model, &problem)?;
    entries.retain(|e| e.file != file);
    entries.push(entry);
    entries.sort_by(|a, b| a.file.cmp(&b.file));
    let manifest = json!({ "version": MANIFEST_VERSION, "entries": entries });
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text).map_err(|e| io_error(&manifest_path, e))?;
    println!("{}", out.join(&file).display());
    Ok(())
}

fn bench(spec_path: &Path, out: Option<&Path>) -> neuroqp::Result<()> {
    let text = fs::read_to_string(spec_path).map_err(|e| io_error(spec_path, e))?;
    let spec = BenchSpec::from_json(&text, &spec_path.display().to_string())?;
    let base = spec_path.parent().map(Path::to_path_buf);
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("bench_out"));
    let results = run_bench(&spec, base.as_deref())?;
    write_results(&results, &dir)?;
    println!("{}", serde_json::to_string(&results.summary)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Solve {
            problem,
            mode,
            fmt,
            weight_bits,
            iters,
            alpha_period,
            beta_period,
            precondition,
            out,
        } => solve(
            &problem,
            mode,
            fmt,
            weight_bits,
            iters,
            alpha_period,
            beta_period,
            precondition,
            out.as_deref(),
        ),
        Command::Generate {
            horizon,
            states,
            controls,
            seed,
            out,
        } => generate(GeneratorSpec::new(horizon, seed).with_dims(states, controls), &out),
        Command::Bench { spec, out } => bench(&spec, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
