use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use scenario_mcts::harness::{
    metric_table, read_reports, replay_episode, run_experiment, write_outputs, write_tables,
    EpisodeReport, Experiment, ExperimentConfig, HarnessError, Mode, NetworkFormat, NetworkSource,
};
use scenario_mcts::metrics::aggregate_quality;
use scenario_mcts::netmodel::{save_network, RoadNetwork};
use scenario_mcts::simcore::write_trajectory_csv;

#[derive(Parser)]
#[command(
    name = "scenario-mcts",
    version,
    about = "Search traffic simulations for collision scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file.
    Run {
        config: PathBuf,
        /// First episode seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        episodes: Option<u32>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert OpenStreetMap XML to the native network JSON.
    ImportOsm {
        input: PathBuf,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a network or an experiment config.
    #[command(group(ArgGroup::new("source").required(true).args(["config", "network", "fixture"])))]
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Native JSON, or OSM XML when the extension is .osm or .xml.
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        fixture: Option<String>,
    },
    /// Re-execute a stored episode and dump its trajectory CSV.
    Replay {
        config: PathBuf,
        /// An episodes/<seed>.json report.
        episode: PathBuf,
        /// Trajectory CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate the CSV tables from stored run directories.
    Export {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Modes to tabulate; all modes when omitted.
        #[arg(long, value_parser = parse_mode, value_delimiter = ',')]
        modes: Vec<Mode>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Mode::ALL.iter().map(|m| m.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_experiment(config: &Path) -> Result<Experiment, HarnessError> {
    let cfg = ExperimentConfig::from_json(&read(config)?)?;
    Experiment::prepare(cfg, &base_dir(config))
}

fn describe(net: &RoadNetwork) -> String {
    format!(
        "{} nodes, {} edges, {} lanes, {} connected components",
        net.nodes().len(),
        net.edges().len(),
        net.lane_count(),
        net.components().len()
    )
}

fn run(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run {
            config,
            seed,
            mode,
            episodes,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_json(&read(&config)?)?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(n) = episodes {
                cfg.episode_count = n;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let dir = cfg.output_dir.clone();
            let exp = Experiment::prepare(cfg, &base_dir(&config))?;
            let result = run_experiment(&exp)?;
            write_outputs(&dir, &result)?;
            let s = &result.summary;
            println!(
                "{}: {} episodes, {} feasible, failure rate {:.3}, {} distinct collisions -> {}",
                s.mode.as_str(),
                s.episodes,
                s.feasible,
                s.failure_rate,
                s.diversity_count,
                dir.display()
            );
            Ok(())
        }
        Command::ImportOsm { input, out } => {
            let source = NetworkSource {
                path: input.to_string_lossy().into_owned(),
                format: NetworkFormat::Osm,
            };
            let net = source.load(Path::new(""))?;
            let json = save_network(&net);
            match out {
                Some(p) => write(&p, json.as_bytes())?,
                None => println!("{json}"),
            }
            eprintln!("imported {}", describe(&net));
            Ok(())
        }
        Command::Validate {
            config,
            network,
            fixture,
        } => {
            if let Some(c) = config {
                let exp = load_experiment(&c)?;
                println!("config ok: {}", describe(exp.context.network()));
                return Ok(());
            }
            let (source, base) = match (network, fixture) {
                (Some(p), _) => {
                    let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
                    let format = if ext == "osm" || ext == "xml" {
                        NetworkFormat::Osm
                    } else {
                        NetworkFormat::Json
                    };
                    let path = p.to_string_lossy().into_owned();
                    (NetworkSource { path, format }, PathBuf::new())
                }
                (None, Some(f)) => (NetworkSource::fixture(&f), PathBuf::new()),
                (None, None) => unreachable!("clap requires a source"),
            };
            let net = source.load(&base)?;
            println!("network ok: {}", describe(&net));
            Ok(())
        }
        Command::Replay {
            config,
            episode,
            out,
        } => {
            let exp = load_experiment(&config)?;
            let report: EpisodeReport = serde_json::from_str(&read(&episode)?)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", episode.display())))?;
            let exec = replay_episode(&exp, &report)?;
            let mut csv = Vec::new();
            write_trajectory_csv(&exec.rows, &mut csv)
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            match out {
                Some(p) => write(&p, &csv)?,
                None => print!("{}", String::from_utf8_lossy(&csv)),
            }
            if let Some(stored) = report.quality {
                let q = aggregate_quality(&exec.trace, &exp.config.metrics);
                let worst = q
                    .values()
                    .iter()
                    .zip(stored.values())
                    .map(|((_, a), (_, b))| (a - b).abs())
                    .fold(0.0, f64::max);
                eprintln!(
                    "replayed {} steps, largest metric difference {worst:e}",
                    exec.steps
                );
                if worst > 1e-9 {
                    return Err(HarnessError::Runtime(
                        "replay does not reproduce the stored metrics".into(),
                    ));
                }
            }
            Ok(())
        }
        Command::Export { runs, modes, out } => {
            let requested = if modes.is_empty() {
                Mode::ALL.to_vec()
            } else {
                modes
            };
            let mut grouped: Vec<(Mode, Vec<EpisodeReport>)> = Vec::new();
            for dir in &runs {
                for r in read_reports(dir)? {
                    match grouped.iter_mut().find(|(m, _)| *m == r.mode) {
                        Some((_, v)) => v.push(r),
                        None => grouped.push((r.mode, vec![r])),
                    }
                }
            }
            grouped.sort_by_key(|(m, _)| *m);
            write_tables(&out, &requested, &grouped)?;
            for w in metric_table(&requested, &grouped).warnings {
                eprintln!("warning: {w}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
