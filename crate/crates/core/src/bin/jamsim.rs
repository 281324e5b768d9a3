use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jamsim::experiments::{self, Calibration, Verdict};
use jamsim::scenario::{build_clustered_scenario, load_scenario};
use jamsim::service::{serve, ServiceConfig, DEFAULT_CAPACITY, DEFAULT_PORT};
use jamsim::waveforms::{synthesize, write_iq_file, WaveformKind, WaveformSpec};

#[derive(Parser)]
#[command(name = "jamsim", version, about = "Jamming emulator for clustered cellular networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a jamming waveform to an IQ file (plus JSON sidecar).
    Waveform {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 1e6)]
        bandwidth_hz: f64,
        #[arg(long)]
        symbol_rate_hz: Option<f64>,
        #[arg(long, default_value_t = 10e6)]
        sample_rate_hz: f64,
        #[arg(long, default_value_t = 1e-3)]
        duration_s: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        gain_db: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Run one reference experiment and write its record and verdict.
    Experiment {
        #[arg(value_enum)]
        name: Experiment,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = experiments::DEFAULT_SEED)]
        seed: u64,
    },
    /// Start the HTTP/websocket control service.
    Serve {
        #[arg(long, env = "JAMSIM_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, env = "JAMSIM_DATA_DIR", default_value = "jamsim-data")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        bind: IpAddr,
        #[arg(long, default_value_t = DEFAULT_CAPACITY)]
        max_runs: usize,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Parse and validate a scenario file.
    Validate { file: PathBuf },
    /// Write a random clustered layout.
    Build {
        #[arg(long, default_value_t = 10)]
        n_bs: usize,
        #[arg(long, default_value_t = 4)]
        users_per_cluster: usize,
        #[arg(long, default_value_t = jamsim::scenario::DEFAULT_CLUSTER_RADIUS_M)]
        cluster_radius_m: f64,
        #[arg(long, default_value_t = jamsim::scenario::DEFAULT_INTER_BS_SPACING_M)]
        spacing_m: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Fsk,
    Ask,
    Msk,
    Awgn,
    BandNoise,
    Cpfsk,
}

impl From<Kind> for WaveformKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Fsk => WaveformKind::Fsk,
            Kind::Ask => WaveformKind::Ask,
            Kind::Msk => WaveformKind::Msk,
            Kind::Awgn => WaveformKind::Awgn,
            Kind::BandNoise => WaveformKind::BandNoise,
            Kind::Cpfsk => WaveformKind::Cpfsk,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Fig5,
    GainSweep,
    Cluster,
    Chase,
}

fn report<V: Verdict>(out: Result<experiments::Outcome<V>, experiments::ExperimentError>) -> Result<bool, String> {
    let out = out.map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string_pretty(&out.verdict).expect("verdict serializes"));
    Ok(out.verdict.passed())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<bool, String> {
    match cmd {
        Command::Waveform { kind, bandwidth_hz, symbol_rate_hz, sample_rate_hz, duration_s, gain_db, seed, out } => {
            let mut spec = WaveformSpec::new(kind.into(), bandwidth_hz, sample_rate_hz, duration_s).with_gain_db(gain_db);
            if let Some(r) = symbol_rate_hz {
                spec = spec.with_symbol_rate(r);
            }
            let buf = synthesize(&spec, seed, None).map_err(|e| e.to_string())?;
            write_iq_file(&buf, &out).map_err(|e| e.to_string())?;
            println!("{} samples -> {}", buf.len(), out.display());
            Ok(true)
        }
        Command::Scenario(ScenarioCmd::Validate { file }) => {
            let sc = load_scenario(&file).map_err(|e| e.to_string())?;
            println!("ok: {} nodes, {} links", sc.nodes.len(), sc.links().len());
            Ok(true)
        }
        Command::Scenario(ScenarioCmd::Build { n_bs, users_per_cluster, cluster_radius_m, spacing_m, seed, out }) => {
            let sc = build_clustered_scenario(n_bs, users_per_cluster, cluster_radius_m, spacing_m, seed)
                .map_err(|e| e.to_string())?;
            sc.save(&out).map_err(|e| e.to_string())?;
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Experiment { name, out, seed } => {
            let c = Calibration::committed();
            let dir = Some(out.as_path());
            match name {
                Experiment::Fig5 => report(experiments::fig5::run_with(&c.fig5, seed, dir)),
                Experiment::GainSweep => report(experiments::gain_sweep::run_with(&c.gain_sweep, seed, dir)),
                Experiment::Cluster => report(experiments::cluster::run_with(&c.cluster, seed, dir)),
                Experiment::Chase => report(experiments::chase::run_with(&c.chase, seed, dir)),
            }
        }
        Command::Serve { port, data_dir, bind, max_runs } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            let config = ServiceConfig { capacity: max_runs, ..ServiceConfig::new(data_dir) };
            rt.block_on(serve(SocketAddr::new(bind, port), config)).map_err(|e| e.to_string())?;
            Ok(true)
        }
    }
}
