use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mobilicities_cli::config::{parse_ks, Settings};
use mobilicities_cli::error::{CliError, CliResult};
use mobilicities_cli::pipeline::{run_pipeline, synth_preset, write_synth};
use mobilicities_cli::serve::serve;
use mobilicities_cli::sweep::run_sweep;

#[derive(Parser)]
#[command(name = "mobilicities", version, about = "Latent mobility structures from cell-tower event logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run ingest, trip detection, waypoints, NMF and exports.
    Pipeline(PipelineArgs),
    /// Factorize a finished run at several k and write the residual curve.
    Sweep(SweepArgs),
    /// Serve the JSON API over a finished run.
    Serve(ServeArgs),
    /// Write a synthetic city and event log.
    Synth(SynthArgs),
}

/// Every flag mirrors the settings-file key of the same name.
#[derive(Args)]
struct PipelineArgs {
    /// Settings file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    events: Option<String>,
    #[arg(long)]
    towers: Option<String>,
    #[arg(long)]
    infra: Option<String>,
    /// Generate inputs from a preset (small, tiny) instead of reading files.
    #[arg(long)]
    synth: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    restarts: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    ks: Option<String>,
    #[arg(long)]
    window_start: Option<String>,
    #[arg(long)]
    window_end: Option<String>,
    #[arg(long)]
    date_from: Option<String>,
    #[arg(long)]
    date_to: Option<String>,
    #[arg(long)]
    simplify_tol_m: Option<String>,
    #[arg(long)]
    v_stationary_ms: Option<String>,
    #[arg(long)]
    v_max_ms: Option<String>,
    #[arg(long)]
    d_min_m: Option<String>,
    #[arg(long)]
    label_radius_m: Option<String>,
    #[arg(long)]
    metro_surface_radius_m: Option<String>,
    #[arg(long)]
    positive_only: Option<String>,
    #[arg(long)]
    heatmap_n: Option<String>,
}

impl PipelineArgs {
    fn flags(&self) -> Vec<(&'static str, String)> {
        let all = [
            ("events", &self.events),
            ("towers", &self.towers),
            ("infra", &self.infra),
            ("synth", &self.synth),
            ("out", &self.out),
            ("k", &self.k),
            ("seed", &self.seed),
            ("restarts", &self.restarts),
            ("max_iter", &self.max_iter),
            ("tol", &self.tol),
            ("ks", &self.ks),
            ("window_start", &self.window_start),
            ("window_end", &self.window_end),
            ("date_from", &self.date_from),
            ("date_to", &self.date_to),
            ("simplify_tol_m", &self.simplify_tol_m),
            ("v_stationary_ms", &self.v_stationary_ms),
            ("v_max_ms", &self.v_max_ms),
            ("d_min_m", &self.d_min_m),
            ("label_radius_m", &self.label_radius_m),
            ("metro_surface_radius_m", &self.metro_surface_radius_m),
            ("positive_only", &self.positive_only),
            ("heatmap_n", &self.heatmap_n),
        ];
        all.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k, v))).collect()
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Run directory written by `pipeline`.
    #[arg(long, default_value = "run")]
    run: PathBuf,
    #[arg(long, default_value = "4,8,12")]
    ks: String,
    /// Defaults to the run's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "run")]
    run: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Compute factorizations for unknown k on read instead of answering 404.
    #[arg(long)]
    allow_compute: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "small")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Pipeline(args) => {
            let settings = Settings::resolve(args.config.as_deref(), &args.flags())?;
            let outcome = run_pipeline(&settings)?;
            let m = &outcome.manifest;
            println!(
                "run {} -> {}: {} trips, W {}x{}, k = {}, final residual {:.6}",
                m.run_id,
                settings.out.display(),
                outcome.trip_stats.total_trips,
                outcome.data.waypoints.nrows(),
                outcome.data.waypoints.ncols(),
                settings.k,
                outcome.factorization.final_objective(),
            );
        }
        Command::Sweep(args) => {
            let ks = parse_ks(&args.ks)?;
            let sweep = run_sweep(&args.run, &ks, args.seed, args.restarts)?;
            println!("k,nmf_rss,svd_rss");
            for p in &sweep.points {
                println!("{},{:.6},{:.6}", p.k, p.nmf_rss, p.svd_rss);
            }
        }
        Command::Serve(args) => {
            let addr: SocketAddr = format!("{}:{}", args.host, args.port)
                .parse()
                .map_err(|e| CliError::config("serve", format!("bad address: {e}")))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io("serve", e))?;
            rt.block_on(serve(&args.run, addr, args.allow_compute))?;
        }
        Command::Synth(args) => {
            let cfg = synth_preset(&args.preset)?.seed(args.seed);
            let files = write_synth(&cfg, &args.out)?;
            println!("wrote {}, {}, {}, {}", files.towers.display(), files.infra.display(), files.events.display(), files.truth.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
