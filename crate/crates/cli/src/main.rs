use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rskel::bench::{emit_report, run_benchmark, to_json, Format, Metric, Problem, RunConfig, CSV_HEADER, DEFAULT_NOCC};
use rskel::factor::Method;

/// Factor a kernel matrix with recursive skeletonization and report
/// timings, memory and error metrics.
#[derive(Parser, Debug)]
#[command(name = "rskel-bench", version)]
struct Args {
    /// square2d | cube3d | sphere | gaussian-spd
    #[arg(long)]
    problem: Problem,

    /// Cells per side (square2d, cube3d), refinement level (sphere) or
    /// point count (gaussian-spd). Repeat or comma-separate for a sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,

    #[arg(long, default_value_t = 1e-6)]
    eps: f64,

    /// rs-s | rs-ws
    #[arg(long, default_value = "rs-s")]
    method: Method,

    #[arg(long, default_value_t = DEFAULT_NOCC)]
    nocc: usize,

    /// Proxy points per box (default 64 in 2D, 512 in 3D).
    #[arg(long)]
    nproxy: Option<usize>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Comma-separated subset of e_a,e_s,n_i,e_p,logdet.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<Metric>,

    /// Append results here; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// csv | json
    #[arg(long, default_value = "csv")]
    format: Format,
}

fn run(args: Args) -> rskel::Result<()> {
    let metrics: BTreeSet<Metric> = args.metrics.iter().copied().collect();
    let mut header_done = false;
    for &n in &args.n {
        let cfg = RunConfig {
            problem: args.problem,
            size: n,
            eps: args.eps,
            method: args.method,
            n_occ: args.nocc,
            n_p: args.nproxy,
            seed: args.seed,
            metrics: metrics.clone(),
        };
        let report = run_benchmark(&cfg)?;
        match &args.out {
            Some(path) => emit_report(&report, args.format, path)?,
            None => match args.format {
                Format::Csv => {
                    if !header_done {
                        println!("{}", CSV_HEADER.join(","));
                        header_done = true;
                    }
                    println!("{}", report.csv_record().join(","));
                }
                Format::Json => println!("{}", to_json(&report)),
            },
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
