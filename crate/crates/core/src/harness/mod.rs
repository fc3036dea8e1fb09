//! Experiment orchestration: configuration, seeded episodes, aggregation
//! and the on-disk output layout.

mod export;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    build_action_grid, ActionGrid, ActionGridConfig, ControlInput, IdmParams, VehicleClass,
    VehicleSpec,
};
use crate::fixtures;
use crate::metrics::{
    aggregate_quality, EpisodeTrace, MetricsConfig, TrajectoryQuality, METRIC_NAMES,
};
use crate::netmodel::{load_network, parse_osm_subset, RoadNetwork};
use crate::reward::{
    collision_signature, discounted_return, CollisionSignature, DiversityLedger, RewardConfig,
};
use crate::search::{
    run_search, DecisionStats, SearchConfig, SearchStatus, SelectionStrategy, TrafficEnv,
    TreeExport,
};
use crate::simcore::{
    default_idm, spawn_traffic, AgentId, CollisionEvent, FlowConfig, SimContext, SimParams, SimRng,
    TerminalStatus, TrajectoryRow, WorldState,
};

pub use export::{
    action_distribution, metric_table, metrics_long, quantile, write_action_distribution_csv,
    write_metric_table_csv, write_metrics_long_csv, ActionRow, MetricColumn, MetricRow,
    MetricStats, MetricTable, MetricsLongRow,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    fn config(e: impl std::fmt::Display) -> Self {
        HarnessError::Config(e.to_string())
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SearchHybrid,
    SearchUcbOnly,
    BaselineDefault,
}

impl Mode {
    pub const ALL: [Mode; 3] = [
        Mode::SearchHybrid,
        Mode::SearchUcbOnly,
        Mode::BaselineDefault,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SearchHybrid => "search_hybrid",
            Mode::SearchUcbOnly => "search_ucb_only",
            Mode::BaselineDefault => "baseline_default",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s)
    }

    fn strategy(self) -> Option<SelectionStrategy> {
        match self {
            Mode::SearchHybrid => Some(SelectionStrategy::Hybrid),
            Mode::SearchUcbOnly => Some(SelectionStrategy::UcbOnly),
            Mode::BaselineDefault => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkFormat {
    /// `path` names a bundled fixture.
    Fixture,
    Json,
    Osm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSource {
    /// File path, relative to the config file, or a fixture name.
    pub path: String,
    pub format: NetworkFormat,
}

impl NetworkSource {
    pub fn fixture(name: &str) -> Self {
        Self {
            path: name.to_string(),
            format: NetworkFormat::Fixture,
        }
    }

    pub fn load(&self, base_dir: &Path) -> Result<RoadNetwork, HarnessError> {
        if self.format == NetworkFormat::Fixture {
            return fixtures::load_fixture(&self.path)
                .ok_or_else(|| HarnessError::Config(format!("unknown fixture {:?}", self.path)));
        }
        let path = base_dir.join(&self.path);
        let text = fs::read_to_string(&path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let net = match self.format {
            NetworkFormat::Json => load_network(&text),
            _ => parse_osm_subset(&text),
        };
        net.map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }
}

/// One value per vehicle class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerClass<T> {
    pub bicycle: T,
    pub car: T,
    pub truck: T,
}

impl<T: Copy> PerClass<T> {
    pub fn from_fn(f: impl Fn(VehicleClass) -> T) -> Self {
        Self {
            bicycle: f(VehicleClass::Bicycle),
            car: f(VehicleClass::Car),
            truck: f(VehicleClass::Truck),
        }
    }

    pub fn get(&self, class: VehicleClass) -> T {
        match class {
            VehicleClass::Bicycle => self.bicycle,
            VehicleClass::Car => self.car,
            VehicleClass::Truck => self.truck,
        }
    }

    fn to_map(self) -> BTreeMap<VehicleClass, T> {
        VehicleClass::ALL
            .iter()
            .map(|c| (*c, self.get(*c)))
            .collect()
    }
}

fn default_vehicles() -> PerClass<VehicleSpec> {
    PerClass::from_fn(VehicleSpec::default_for)
}

fn default_idm_table() -> PerClass<IdmParams> {
    PerClass::from_fn(default_idm)
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_ledger_sync() -> u32 {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSource,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default = "default_vehicles")]
    pub vehicles: PerClass<VehicleSpec>,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub action_grid: ActionGridConfig,
    /// Driver parameters of the background traffic.
    #[serde(default = "default_idm_table")]
    pub idm: PerClass<IdmParams>,
    #[serde(default)]
    pub reward: RewardConfig,
    /// `strategy` is overridden by `mode`.
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub episode_count: u32,
    #[serde(default)]
    pub base_seed: u64,
    pub mode: Mode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Episodes searched against the same ledger state before their
    /// collisions are recorded, in seed order.
    #[serde(default = "default_ledger_sync")]
    pub ledger_sync: u32,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn new(network: NetworkSource, mode: Mode, episode_count: u32) -> Self {
        Self {
            network,
            sim: SimParams::default(),
            vehicles: default_vehicles(),
            flow: FlowConfig::default(),
            action_grid: ActionGridConfig::default(),
            idm: default_idm_table(),
            reward: RewardConfig::default(),
            search: SearchConfig::default(),
            metrics: MetricsConfig::default(),
            episode_count,
            base_seed: 0,
            mode,
            output_dir: default_output_dir(),
            ledger_sync: default_ledger_sync(),
            threads: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(HarnessError::config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.episode_count == 0 {
            return Err(HarnessError::config("episode_count must be >= 1"));
        }
        if self.ledger_sync == 0 {
            return Err(HarnessError::config("ledger_sync must be >= 1"));
        }
        if !(self.sim.dt.is_finite() && self.sim.dt > 0.0) {
            return Err(HarnessError::config("sim.dt must be > 0"));
        }
        for class in VehicleClass::ALL {
            self.vehicles
                .get(class)
                .validate()
                .map_err(HarnessError::config)?;
            self.idm
                .get(class)
                .validate()
                .map_err(HarnessError::config)?;
        }
        self.flow.validate().map_err(HarnessError::config)?;
        build_action_grid(&self.action_grid).map_err(HarnessError::config)?;
        self.reward.validate().map_err(HarnessError::config)?;
        self.search_config()
            .validate()
            .map_err(HarnessError::config)?;
        Ok(())
    }

    /// The search settings with the strategy implied by `mode`.
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            strategy: self.mode.strategy().unwrap_or(self.search.strategy),
            ..self.search
        }
    }

    /// Episode length in simulation steps.
    pub fn horizon(&self) -> u64 {
        self.search.max_depth as u64 * self.search.decision_interval as u64
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.episode_count as u64).map(|i| self.base_seed.wrapping_add(i))
    }
}

/// A validated config bound to its loaded network.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub context: Arc<SimContext>,
    pub grid: ActionGrid,
}

impl Experiment {
    /// `base_dir` resolves a relative network path.
    pub fn prepare(config: ExperimentConfig, base_dir: &Path) -> Result<Self, HarnessError> {
        config.validate()?;
        let network = config.network.load(base_dir)?;
        let context = SimContext::new(network, config.sim, config.vehicles.to_map())
            .with_idm(config.idm.to_map());
        let grid = build_action_grid(&config.action_grid).map_err(HarnessError::config)?;
        Ok(Self {
            config,
            context: Arc::new(context),
            grid,
        })
    }

    /// The search environment seeing `ledger` as the signatures found so far.
    pub fn env(&self, ledger: DiversityLedger) -> TrafficEnv {
        TrafficEnv {
            grid: self.grid.clone(),
            decision_interval: self.config.search.decision_interval,
            horizon: self.config.horizon(),
            reward: self.config.reward,
            thresholds: self.config.metrics.thresholds,
            ledger,
            found: RefCell::new(DiversityLedger::new()),
        }
    }

    pub fn spawn(&self, seed: u64) -> Result<WorldState, HarnessError> {
        spawn_traffic(Arc::clone(&self.context), &self.config.flow, seed)
            .map_err(HarnessError::config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    CollisionTarget,
    HorizonReached,
    TargetOffNetwork,
    /// Traffic could not be spawned; excluded from rates.
    Infeasible,
    /// The episode panicked; excluded from rates.
    FailedInfrastructure,
}

impl EpisodeStatus {
    fn from_terminal(t: TerminalStatus) -> Self {
        match t {
            TerminalStatus::CollisionTarget => EpisodeStatus::CollisionTarget,
            TerminalStatus::TargetOffNetwork => EpisodeStatus::TargetOffNetwork,
            TerminalStatus::HorizonReached | TerminalStatus::Running => {
                EpisodeStatus::HorizonReached
            }
        }
    }

    pub fn is_feasible(self) -> bool {
        !matches!(
            self,
            EpisodeStatus::Infeasible | EpisodeStatus::FailedInfrastructure
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionRecord {
    pub event: CollisionEvent,
    pub signature: CollisionSignature,
    /// First occurrence of the signature in the experiment.
    pub novel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCount {
    pub index: usize,
    pub steer_angle: f64,
    pub accel_rate: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub iterations: u32,
    pub failures_found: u64,
    pub status: SearchStatus,
    /// Leading entries of the executed actions that come from the tree.
    pub tree_actions: usize,
    pub decisions: Vec<DecisionStats>,
    /// Signatures of the target collisions the search evaluated, once each.
    pub discoveries: DiversityLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub seed: u64,
    pub mode: Mode,
    pub status: EpisodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub target: Option<AgentId>,
    /// Simulation steps executed from the root.
    pub steps: u64,
    /// Collisions involving the target.
    pub collisions: Vec<CollisionRecord>,
    pub background_collisions: u64,
    /// Executed tree actions; empty for the baseline.
    pub actions: Vec<usize>,
    pub controls: Vec<ControlInput>,
    pub discounted_return: f64,
    pub quality: Option<TrajectoryQuality>,
    /// Selections of each action during the search.
    pub action_counts: Vec<ActionCount>,
    pub search: Option<SearchReport>,
    /// Not serialized, so that outputs depend only on the inputs.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl EpisodeReport {
    fn unfinished(seed: u64, mode: Mode, status: EpisodeStatus, reason: String) -> Self {
        Self {
            seed,
            mode,
            status,
            reason: Some(reason),
            target: None,
            steps: 0,
            collisions: Vec::new(),
            background_collisions: 0,
            actions: Vec::new(),
            controls: Vec::new(),
            discounted_return: 0.0,
            quality: None,
            action_counts: Vec::new(),
            search: None,
            wall_clock_s: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub report: EpisodeReport,
    pub tree: Option<TreeExport>,
}

/// A trajectory executed from the root of an episode.
#[derive(Debug, Clone)]
pub struct Execution {
    pub status: TerminalStatus,
    pub steps: u64,
    pub rewards: Vec<f64>,
    pub events: Vec<CollisionEvent>,
    pub trace: EpisodeTrace,
    pub rows: Vec<TrajectoryRow>,
}

/// Runs `root` to a terminal state. Tree action `k` holds for
/// `decision_interval` steps; once `actions` runs out, or when it is
/// `None`, the target follows the default policy.
pub fn execute(
    env: &TrafficEnv,
    root: &WorldState,
    actions: Option<&[usize]>,
    metrics: &MetricsConfig,
) -> Execution {
    let mut world = root.clone();
    let th = &metrics.thresholds;
    let mut trace = EpisodeTrace::new(world.target_id(), world.params().dt);
    trace.push(&world, th);
    let mut rows = world.trajectory_rows();
    let mut rewards = Vec::new();
    let mut events = Vec::new();
    let mut k = 0usize;
    while !env.status(&world).is_terminal() {
        let control = actions
            .and_then(|a| a.get(k / env.decision_interval as usize))
            .map(|a| env.grid.action(*a));
        let rec = env.step(&mut world, control);
        rewards.push(rec.reward.total);
        events.extend(rec.events);
        trace.push(&world, th);
        rows.extend(world.trajectory_rows());
        k += 1;
    }
    Execution {
        status: env.status(&world),
        steps: k as u64,
        rewards,
        events,
        trace,
        rows,
    }
}

fn search_seed(seed: u64) -> u64 {
    let mut rng = SimRng::new(seed);
    rng.next_u64()
}

/// One seeded episode. Novelty flags are relative to `ledger`; the
/// experiment sets the definitive flags when it records the collisions.
pub fn run_episode(exp: &Experiment, seed: u64, ledger: &DiversityLedger) -> EpisodeOutput {
    let start = Instant::now();
    let cfg = &exp.config;
    let root = match exp.spawn(seed) {
        Ok(w) => w,
        Err(e) => {
            return EpisodeOutput {
                report: EpisodeReport::unfinished(
                    seed,
                    cfg.mode,
                    EpisodeStatus::Infeasible,
                    e.to_string(),
                ),
                tree: None,
            }
        }
    };
    let env = exp.env(ledger.clone());
    let search_cfg = cfg.search_config();
    let searched = cfg.mode.strategy().map(|_| {
        let (result, tree) = run_search(&env, root.clone(), &search_cfg, search_seed(seed));
        let discoveries = env.found.take();
        (result, tree, discoveries)
    });
    let actions = searched.as_ref().map(|(r, _, _)| r.actions.as_slice());
    let exec = execute(&env, &root, actions, &cfg.metrics);

    let collisions = exec
        .events
        .iter()
        .filter(|e| e.target_involved)
        .map(|e| {
            let signature = collision_signature(e, cfg.reward.signature_cell);
            CollisionRecord {
                event: e.clone(),
                signature,
                novel: ledger.count(&signature) == 0,
            }
        })
        .collect::<Vec<_>>();
    let counts = searched
        .as_ref()
        .map(|(r, _, _)| r.selection_counts.clone())
        .unwrap_or_default();
    let action_counts = counts
        .iter()
        .enumerate()
        .map(|(index, count)| {
            let u = exp.grid.action(index);
            ActionCount {
                index,
                steer_angle: u.steer,
                accel_rate: u.accel,
                count: *count,
            }
        })
        .collect();
    let executed: Vec<usize> = actions
        .map(|a| {
            a.iter()
                .take(exec.steps.div_ceil(cfg.search.decision_interval as u64) as usize)
                .copied()
                .collect()
        })
        .unwrap_or_default();
    let report = EpisodeReport {
        seed,
        mode: cfg.mode,
        status: EpisodeStatus::from_terminal(exec.status),
        reason: None,
        target: root.target_id(),
        steps: exec.steps,
        background_collisions: (exec.events.len() - collisions.len()) as u64,
        collisions,
        controls: executed.iter().map(|a| exp.grid.action(*a)).collect(),
        actions: executed,
        discounted_return: discounted_return(&exec.rewards, cfg.reward.discount),
        quality: Some(aggregate_quality(&exec.trace, &cfg.metrics)),
        action_counts,
        search: searched.as_ref().map(|(r, _, d)| SearchReport {
            iterations: r.iterations,
            failures_found: r.failures_found,
            status: r.status,
            tree_actions: r.tree_actions.min(r.actions.len()),
            decisions: r.decisions.clone(),
            discoveries: d.clone(),
        }),
        wall_clock_s: 0.0,
    };
    let tree = searched.map(|(_, t, _)| t.export(&search_cfg));
    EpisodeOutput {
        report: EpisodeReport {
            wall_clock_s: start.elapsed().as_secs_f64(),
            ..report
        },
        tree,
    }
}

/// Re-executes a stored episode from its seed.
pub fn replay_episode(exp: &Experiment, report: &EpisodeReport) -> Result<Execution, HarnessError> {
    let root = exp.spawn(report.seed)?;
    let env = exp.env(DiversityLedger::new());
    let actions = (report.mode != Mode::BaselineDefault).then_some(report.actions.as_slice());
    Ok(execute(&env, &root, actions, &exp.config.metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub mode: Mode,
    pub episodes: u32,
    /// Episodes that ran to a terminal state.
    pub feasible: u32,
    /// Counts per reason.
    pub infeasible: BTreeMap<String, u32>,
    pub failed_infrastructure: u32,
    /// Feasible episodes ending in a target collision.
    pub collisions: u32,
    pub failure_rate: f64,
    /// Distinct signatures among all target collisions the experiment
    /// produced, in searches and in executed trajectories.
    pub diversity_count: u32,
    /// All target collisions the experiment produced.
    pub total_collisions: u64,
    /// Executed trajectories whose collision signature was new.
    pub novel_trajectories: u32,
    pub metrics: Vec<MetricStats>,
}

impl ExperimentSummary {
    /// Aggregates reports in seed order.
    pub fn from_reports(mode: Mode, reports: &[EpisodeReport]) -> Self {
        let mut sorted: Vec<&EpisodeReport> = reports.iter().collect();
        sorted.sort_by_key(|r| r.seed);
        let mut infeasible = BTreeMap::new();
        let mut failed_infrastructure = 0;
        for r in &sorted {
            match r.status {
                EpisodeStatus::Infeasible => {
                    *infeasible
                        .entry(r.reason.clone().unwrap_or_default())
                        .or_insert(0) += 1;
                }
                EpisodeStatus::FailedInfrastructure => failed_infrastructure += 1,
                _ => {}
            }
        }
        let feasible = sorted.iter().filter(|r| r.status.is_feasible()).count() as u32;
        let collisions = sorted
            .iter()
            .filter(|r| r.status == EpisodeStatus::CollisionTarget)
            .count() as u32;
        let mut ledger = DiversityLedger::new();
        for r in &sorted {
            absorb(&mut ledger, r);
        }
        let novel_trajectories = sorted
            .iter()
            .flat_map(|r| &r.collisions)
            .filter(|c| c.novel)
            .count() as u32;
        let qualities: Vec<TrajectoryQuality> = sorted.iter().filter_map(|r| r.quality).collect();
        let metrics = METRIC_NAMES
            .iter()
            .filter_map(|(_, field)| {
                let values: Vec<f64> = qualities
                    .iter()
                    .map(|q| q.field(field).expect("known field"))
                    .collect();
                MetricStats::of(field, &values)
            })
            .collect();
        Self {
            mode,
            episodes: sorted.len() as u32,
            feasible,
            infeasible,
            failed_infrastructure,
            collisions,
            failure_rate: if feasible == 0 {
                0.0
            } else {
                collisions as f64 / feasible as f64
            },
            diversity_count: ledger.len() as u32,
            total_collisions: ledger.total(),
            novel_trajectories,
            metrics,
        }
    }

    pub fn metric(&self, field: &str) -> Option<&MetricStats> {
        self.metrics.iter().find(|m| m.metric == field)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub summary: ExperimentSummary,
    /// In seed order.
    pub reports: Vec<EpisodeReport>,
    pub trees: Vec<(u64, TreeExport)>,
    pub ledger: DiversityLedger,
}

/// Adds an episode's search discoveries and trajectory collisions.
pub fn absorb(ledger: &mut DiversityLedger, report: &EpisodeReport) {
    if let Some(s) = &report.search {
        ledger.merge(&s.discoveries);
    }
    for c in &report.collisions {
        ledger.record(c.signature);
    }
}

fn guarded_episode(exp: &Experiment, seed: u64, ledger: &DiversityLedger) -> EpisodeOutput {
    catch_unwind(AssertUnwindSafe(|| run_episode(exp, seed, ledger))).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| panic.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        log::error!("episode {seed} panicked: {msg}");
        EpisodeOutput {
            report: EpisodeReport::unfinished(
                seed,
                exp.config.mode,
                EpisodeStatus::FailedInfrastructure,
                msg,
            ),
            tree: None,
        }
    })
}

/// Runs every episode. Episodes are searched in waves of `ledger_sync`
/// seeds against the ledger as it stood before the wave; collisions are
/// then recorded in seed order, so results do not depend on scheduling.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentRun, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exp.config.threads)
        .build()
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let seeds: Vec<u64> = exp.config.seeds().collect();
    let mut ledger = DiversityLedger::new();
    let mut reports = Vec::with_capacity(seeds.len());
    let mut trees = Vec::new();
    for wave in seeds.chunks(exp.config.ledger_sync as usize) {
        let view = ledger.clone();
        let outputs: Vec<EpisodeOutput> = pool.install(|| {
            wave.par_iter()
                .map(|s| guarded_episode(exp, *s, &view))
                .collect()
        });
        for mut out in outputs {
            for c in &mut out.report.collisions {
                c.novel = ledger.count(&c.signature) == 0;
            }
            absorb(&mut ledger, &out.report);
            log::info!(
                "episode {} {:?} in {:.2}s",
                out.report.seed,
                out.report.status,
                out.report.wall_clock_s
            );
            if let Some(t) = out.tree {
                trees.push((out.report.seed, t));
            }
            reports.push(out.report);
        }
    }
    Ok(ExperimentRun {
        summary: ExperimentSummary::from_reports(exp.config.mode, &reports),
        reports,
        trees,
        ledger,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

/// Writes the CSV exports for `runs` into `dir`.
pub fn write_tables(
    dir: &Path,
    requested: &[Mode],
    runs: &[(Mode, Vec<EpisodeReport>)],
) -> Result<(), HarnessError> {
    create_dir(dir)?;
    let all: Vec<EpisodeReport> = runs.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    let rows = action_distribution(&all).map_err(HarnessError::Runtime)?;
    let mut buf = Vec::new();
    write_action_distribution_csv(&rows, &mut buf).map_err(|e| HarnessError::io(dir, e))?;
    write_file(&dir.join("action_distribution.csv"), &buf)?;

    let long = metrics_long(runs);
    let mut buf = Vec::new();
    write_metrics_long_csv(&long, &mut buf).map_err(|e| HarnessError::io(dir, e))?;
    write_file(&dir.join("metrics_long.csv"), &buf)?;

    let table = metric_table(requested, runs);
    let mut buf = Vec::new();
    write_metric_table_csv(&table, &mut buf).map_err(|e| HarnessError::io(dir, e))?;
    write_file(&dir.join("metrics_table.csv"), &buf)?;
    write_file(&dir.join("metrics_table.json"), &to_json(&table))
}

/// Writes the full output layout of one experiment.
pub fn write_outputs(dir: &Path, run: &ExperimentRun) -> Result<(), HarnessError> {
    let episodes = dir.join("episodes");
    let trees = dir.join("trees");
    create_dir(&episodes)?;
    create_dir(&trees)?;
    write_file(&dir.join("summary.json"), &to_json(&run.summary))?;
    for r in &run.reports {
        write_file(&episodes.join(format!("{}.json", r.seed)), &to_json(r))?;
    }
    for (seed, t) in &run.trees {
        write_file(&trees.join(format!("{seed}.json")), &to_json(t))?;
    }
    write_file(&dir.join("ledger.json"), &to_json(&run.ledger))?;
    let mode = run.summary.mode;
    write_tables(dir, &[mode], &[(mode, run.reports.clone())])
}

/// Reads every `episodes/*.json` under `dir`, in seed order.
pub fn read_reports(dir: &Path) -> Result<Vec<EpisodeReport>, HarnessError> {
    let episodes = dir.join("episodes");
    let entries = fs::read_dir(&episodes).map_err(|e| HarnessError::io(&episodes, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(&episodes, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        let report: EpisodeReport = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
        out.push(report);
    }
    out.sort_by_key(|r| r.seed);
    Ok(out)
}
