use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gridsens::estimators::{batch_estimate, least_squares_estimate, Variant};
use gridsens::io;
use gridsens::nalgebra::DMatrix;
use gridsens::metrics::{defined, median, relative_errors};
use gridsens::online::{run_stream, ComparatorConfig, OnlineConfig};
use gridsens::synth::{generate_stream, ScenarioSpec, StreamSource, TruthLog};
use gridsens::{validate_window, EstimatorConfig, Network, SensitivityMatrix};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "gridsens", version, about = "Estimate line-flow sensitivity matrices from measurements")]
struct Cli {
    /// Seed override for anything random (scenario seed for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct NetArgs {
    /// Branch CSV, or `wecc9` for the bundled 9-bus system.
    net: String,
    /// Optional bus CSV (bus_id,nominal_injection_pu,is_slack).
    #[arg(long)]
    buses: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the DC sensitivity matrix of a network as CSV.
    Ptdf {
        #[command(flatten)]
        net: NetArgs,
    },
    /// Synthesize a measurement stream and its ground truth.
    Synth {
        #[command(flatten)]
        net: NetArgs,
        /// Scenario JSON.
        scenario: PathBuf,
        /// Output stream CSV.
        #[arg(short, long)]
        output: PathBuf,
        /// Ground-truth JSON (default: <output>.truth.json).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Batch estimate over a window of a stream.
    Estimate {
        /// ls, nuclear, robust or robust-missing.
        method: String,
        stream: PathBuf,
        /// 1-based inclusive sample range a:b (default: whole stream).
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
        hmin: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        hmax: f64,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Number of lines, when some line is missing at every step.
        #[arg(long)]
        lines: Option<usize>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the online estimator over a stream.
    Online {
        stream: PathBuf,
        /// Window length.
        #[arg(long, default_value_t = 18)]
        m: usize,
        /// Multiplier on the step size 1/L.
        #[arg(long, default_value_t = 1.0)]
        alpha_mult: f64,
        /// Track dynamic regret against a per-step batch comparator.
        #[arg(long)]
        regret: bool,
        /// Solve the comparator every s-th step and interpolate in between.
        #[arg(long, default_value_t = 1)]
        comparator_every: usize,
        /// robust (default), robust-missing or nuclear.
        #[arg(long, default_value = "robust")]
        variant: String,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Ground-truth JSON for error tracking (default: <stream>.truth.json if present).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        lines: Option<usize>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Per-bus relative error of an estimate against a reference matrix.
    Eval { estimate: PathBuf, truth: PathBuf },
}

fn load_network(args: &NetArgs) -> anyhow::Result<Network> {
    if args.net == "wecc9" && !Path::new("wecc9").exists() {
        return Ok(io::bundled_wecc9());
    }
    let parsed = io::parse_network(Path::new(&args.net), args.buses.as_deref())?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    Ok(parsed.network)
}

fn default_truth_path(stream: &Path) -> PathBuf {
    let mut s = stream.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

fn parse_range(spec: &str, steps: usize) -> anyhow::Result<(usize, usize)> {
    let (a, b) = spec
        .split_once(':')
        .ok_or_else(|| anyhow!("--window expects a:b, got {spec:?}"))?;
    let a: usize = a.trim().parse().with_context(|| format!("bad window start {a:?}"))?;
    let b: usize = b.trim().parse().with_context(|| format!("bad window end {b:?}"))?;
    if a == 0 || b < a || b > steps {
        bail!(gridsens::Error::Config(format!(
            "window {a}:{b} outside 1..={steps}"
        )));
    }
    Ok((a, b - a + 1))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ptdf { net } => {
            let h = gridsens::compute_dc_ptdf::<f64>(&load_network(&net)?)?;
            io::write_matrix(std::io::stdout().lock(), h.as_matrix())?;
        }
        Command::Synth {
            net,
            scenario,
            output,
            truth,
        } => {
            let network = load_network(&net)?;
            let mut spec: ScenarioSpec = io::read_json(&scenario)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let (stream, log) = generate_stream(&StreamSource::Network(network), &spec)?;
            io::write_stream_file(&output, &stream)?;
            let truth = truth.unwrap_or_else(|| default_truth_path(&output));
            io::write_json(&truth, &log)?;
            log::info!("wrote {} samples to {}", stream.steps(), output.display());
        }
        Command::Estimate {
            method,
            stream,
            window,
            lambda,
            gamma,
            hmin,
            hmax,
            max_iters,
            lines,
            out,
        } => {
            let s = io::read_stream_file(&stream, lines)?;
            let (start, len) = match window {
                Some(w) => parse_range(&w, s.steps())?,
                None => (1, s.steps()),
            };
            let w = s.window(start, len)?;
            let mut cfg = EstimatorConfig::<f64> {
                lambda,
                gamma,
                h_min: hmin,
                h_max: hmax,
                ..EstimatorConfig::default()
            };
            if let Some(it) = max_iters {
                cfg.max_iters = it;
            }
            std::fs::create_dir_all(&out)?;
            let diag_path = out.join("diagnostics.json");
            let diagnostics = validate_window(&w);
            for warning in &diagnostics.warnings {
                eprintln!("warning: {warning}");
            }
            let mut report = json!({
                "method": method,
                "window": [start, start + len - 1],
                "window_diagnostics": diagnostics,
            });
            if method == "ls" {
                let ls = least_squares_estimate(&w, &cfg)?;
                report["underdetermined"] = json!(ls.underdetermined);
                report["rank"] = json!(ls.rank);
                report["iterations"] = json!(ls.iterations);
                io::write_matrix_file(&out.join("H.csv"), ls.h.as_matrix())?;
                io::write_matrix_file(&out.join("O.csv"), &DMatrix::zeros(w.lines(), w.samples()))?;
                io::write_trace_file(&out.join("trace.csv"), &[])?;
            } else {
                let variant: Variant = method.parse()?;
                match batch_estimate(&w, &cfg, variant) {
                    Ok(est) => {
                        report["underdetermined"] = json!(diagnostics.underdetermined);
                        report["iterations"] = json!(est.iterations);
                        report["converged"] = json!(est.converged);
                        report["lambda"] = json!(est.lambda);
                        report["gamma"] = json!(est.gamma);
                        report["alpha"] = json!(est.alpha);
                        io::write_matrix_file(&out.join("H.csv"), est.h.as_matrix())?;
                        io::write_matrix_file(&out.join("O.csv"), est.o.as_matrix())?;
                        io::write_trace_file(&out.join("trace.csv"), &est.trace.values)?;
                    }
                    Err(e) => {
                        report["error"] = json!(e.to_string());
                        io::write_json(&diag_path, &report)?;
                        return Err(anyhow::Error::new(e)
                            .context(format!("diagnostics written to {}", diag_path.display())));
                    }
                }
            }
            io::write_json(&diag_path, &report)?;
        }
        Command::Online {
            stream,
            m,
            alpha_mult,
            regret,
            comparator_every,
            variant,
            lambda,
            gamma,
            truth,
            lines,
            out,
        } => {
            let s = io::read_stream_file(&stream, lines)?;
            let truth_path = truth.or_else(|| Some(default_truth_path(&stream)).filter(|p| p.exists()));
            let log: Option<TruthLog> = truth_path.as_deref().map(io::read_json).transpose()?;
            let cfg = OnlineConfig::<f64> {
                window: m,
                variant: variant.parse()?,
                estimator: EstimatorConfig {
                    lambda,
                    gamma,
                    ..EstimatorConfig::default()
                },
                step_scale: alpha_mult,
                comparator: regret.then(|| ComparatorConfig {
                    every: comparator_every,
                    ..ComparatorConfig::default()
                }),
                ..OnlineConfig::default()
            };
            let report = run_stream(&s, &cfg, log.as_ref())?;
            std::fs::create_dir_all(&out)?;
            io::write_json(&out.join("report.json"), &report)?;
            io::write_series_file(&out.join("series.csv"), &report)?;
            if let Some((k, v)) = report.tracked_average().last() {
                println!("k={k} average RE (bus {}) = {v:.6}", cfg.tracked_bus + 1);
            }
            if let Some(r) = &report.regret {
                if let (Some(k), Some(v)) = (r.k.last(), r.regret_avg.last()) {
                    println!("k={k} average regret = {v:.6e}");
                }
            }
        }
        Command::Eval { estimate, truth } => {
            let est = SensitivityMatrix::new(io::read_matrix_file(&estimate)?)?;
            let truth = SensitivityMatrix::new(io::read_matrix_file(&truth)?)?;
            if est.as_matrix().shape() != truth.as_matrix().shape() {
                bail!(gridsens::Error::Dimension(format!(
                    "estimate is {}×{} but reference is {}×{}",
                    est.lines(),
                    est.buses(),
                    truth.lines(),
                    truth.buses()
                )));
            }
            let re = relative_errors(&est, &truth);
            println!("bus,relative_error");
            for (j, r) in re.iter().enumerate() {
                match r {
                    Some(v) => println!("{},{v}", j + 1),
                    None => println!("{},", j + 1),
                }
            }
            let vals = defined(&re);
            let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            let max = vals.iter().copied().fold(f64::NAN, f64::max);
            println!("# median {} mean {mean} max {max}", median(&vals));
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<gridsens::Error>()) {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        Some(_) => EXIT_DATA,
        None if err.chain().any(|e| e.is::<std::io::Error>()) => EXIT_DATA,
        None => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
