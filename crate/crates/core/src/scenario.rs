//! Experiment driver: allocates pilots, deploys services, runs the pipeline
//! with one of the detector models as cloud handler, and writes CSV
//! artifacts. The command-line runner is a thin layer over this module.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use uuid::Uuid;

use crate::broker::BrokerConfig;
use crate::metrics::{aggregate, export_csv, import_csv, MetricRecord, MetricsError, RunReport, Summary};
use crate::mlops::{
    deserialize_state, iforest_fit, serialize_state, AeState, Generator, GeneratorSpec,
    IForestConfig, KMeansState, ModelError, ModelState, PointBlock, Verdict, AE_LAYOUT,
};
use crate::netem::{LinkSpec, LinkTable};
use crate::param::{model_key, ParamApi, ParamError};
use crate::pilot::{PilotDescription, PilotError, PilotHandle, PilotManager, Tier};
use crate::pipeline::{build_pipeline, FunctionContext, Handler, HandlerResult, PipelineConfig, PipelineError};
use crate::services::{latest, Services, ServicesError, Transport};

pub const KMEANS_CLUSTERS: usize = 25;
pub const AE_LEARNING_RATE: f64 = 1e-2;
pub const DEFAULT_SWEEP_SIZES: [usize; 4] = [25, 100, 1000, 10_000];
const PILOT_START_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Baseline,
    KMeans,
    IForest,
    Autoencoder,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Baseline,
        ModelKind::KMeans,
        ModelKind::IForest,
        ModelKind::Autoencoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::KMeans => "kmeans",
            ModelKind::IForest => "iforest",
            ModelKind::Autoencoder => "autoencoder",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!("unknown model `{s}`, expected one of baseline, kmeans, iforest, autoencoder")
            })
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Pilot(#[from] PilotError),
    #[error(transparent)]
    Services(#[from] ServicesError),
    #[error("repeat {repeat} failed: {source}")]
    RunFailed {
        repeat: u32,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("stored summary of job {job_id} disagrees with its rows on {field}: stored {stored}, recomputed {recomputed}")]
    SummaryMismatch {
        job_id: Uuid,
        field: &'static str,
        stored: f64,
        recomputed: f64,
    },
}

impl ScenarioError {
    /// True for errors caused by the caller's configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, ScenarioError::Config(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: ModelKind,
    pub partitions: u32,
    pub points_per_message: usize,
    pub messages: u64,
    /// Installed from the edge to the cloud tier.
    pub wan: Option<LinkSpec>,
    pub seed: u64,
    pub repeats: u32,
    /// Directory for the CSV artifacts.
    pub out: PathBuf,
    pub transport: Transport,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            model: ModelKind::Baseline,
            partitions: 1,
            points_per_message: 25,
            messages: 512,
            wan: None,
            seed: 0,
            repeats: 3,
            out: PathBuf::from("results"),
            transport: Transport::InProc,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Config(m.to_string()));
        if self.partitions == 0 {
            return bad("partitions must be at least 1");
        }
        if !(1..=1_000_000).contains(&self.points_per_message) {
            return bad("points per message must be in [1, 1000000]");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if let Some(w) = &self.wan {
            w.validate().map_err(ScenarioError::Config)?;
        }
        Ok(())
    }

    /// File-name stem shared by this scenario's artifacts.
    pub fn stem(&self) -> String {
        format!(
            "{}-p{}-n{}-m{}",
            self.model, self.partitions, self.points_per_message, self.messages
        )
    }
}

/// Produce handler drawing blocks from the labeled generator. Partition `p`
/// reads its own deterministic sequence of the shared cluster layout.
pub fn generator_handler(seed: u64, points: usize) -> Handler {
    let gen = Arc::new(Generator::new(GeneratorSpec::with_seed(seed)));
    Handler::produce(move |ctx| {
        let seq = (u64::from(ctx.partition_index) << 32) | ctx.message_id;
        Ok(gen.block(seq, points).0)
    })
}

fn load(params: &dyn ParamApi, key: &str) -> HandlerResult<(Option<ModelState>, u64)> {
    match latest(params, key)? {
        Some(e) => Ok((Some(deserialize_state(&e.blob)?), e.version)),
        None => Ok((None, 0)),
    }
}

fn store(params: &dyn ParamApi, key: &str, state: &ModelState, version: u64) -> Result<u64, ParamError> {
    params.put_model(key, serialize_state(state), Some(version))
}

/// Parameter-server key of a model instance. Each partition owns one, so
/// every state has a single writer.
pub fn partition_model_key(job_id: &Uuid, model: ModelKind, partition: u32) -> String {
    model_key(job_id, &format!("{model}-p{partition}"))
}

fn unexpected(state: &ModelState) -> Box<dyn std::error::Error + Send + Sync> {
    format!("parameter server holds a {} state", state.name()).into()
}

/// Cloud handler for `model`. Stateful models fetch their state from the
/// parameter server, update it with the block, score the block and write
/// the state back with compare-and-set.
pub fn model_handler(model: ModelKind, seed: u64) -> Handler {
    match model {
        ModelKind::Baseline => Handler::identity_cloud(),
        ModelKind::KMeans => Handler::cloud(move |ctx, block| {
            let key = partition_model_key(&ctx.job_id, model, ctx.partition_index);
            let (state, version) = load(ctx.params(), &key)?;
            let mut km = match state {
                Some(ModelState::KMeans(s)) => s,
                Some(other) => return Err(unexpected(&other)),
                None => KMeansState::new(KMEANS_CLUSTERS, seed ^ u64::from(ctx.partition_index)),
            };
            km.update(block)?;
            let verdicts = km.score(block)?;
            store(ctx.params(), &key, &ModelState::KMeans(km), version)?;
            Ok(verdicts)
        }),
        ModelKind::IForest => Handler::cloud(move |ctx, block| {
            let key = partition_model_key(&ctx.job_id, model, ctx.partition_index);
            let config = IForestConfig {
                seed: seed ^ ctx.message_id.rotate_left(17) ^ u64::from(ctx.partition_index),
                ..IForestConfig::default()
            };
            let (state, version) = load(ctx.params(), &key)?;
            let forest = match iforest_fit(block, &config) {
                Ok(f) => f,
                // a single point cannot be fitted; reuse the previous forest
                Err(ModelError::TooFewPoints(_)) => match state {
                    Some(ModelState::IForest(f)) => f,
                    _ => return Err(ModelError::TooFewPoints(block.len()).into()),
                },
                Err(e) => return Err(e.into()),
            };
            let verdicts = forest.score(block)?;
            store(ctx.params(), &key, &ModelState::IForest(forest), version)?;
            Ok(verdicts)
        }),
        ModelKind::Autoencoder => Handler::cloud(move |ctx, block| {
            let key = partition_model_key(&ctx.job_id, model, ctx.partition_index);
            let (state, version) = load(ctx.params(), &key)?;
            let mut ae = match state {
                Some(ModelState::Autoencoder(s)) => s,
                Some(other) => return Err(unexpected(&other)),
                None => AeState::new(&AE_LAYOUT, AE_LEARNING_RATE, seed ^ u64::from(ctx.partition_index)),
            };
            let lr = ae.learning_rate;
            ae.train_step(block, lr)?;
            let verdicts = ae.score(block)?;
            store(ctx.params(), &key, &ModelState::Autoencoder(ae), version)?;
            Ok(verdicts)
        }),
    }
}

/// Scores a block outside the pipeline with a fresh model of `kind`.
pub fn score_once(kind: ModelKind, block: &PointBlock, seed: u64) -> HandlerResult<Vec<Verdict>> {
    let params = Arc::new(crate::param::ParamStore::new());
    let ctx = FunctionContext::standalone(Uuid::new_v4(), 0, params);
    match model_handler(kind, seed) {
        Handler::Cloud(f) => f(&ctx, block),
        _ => unreachable!(),
    }
}

/// Pilots allocated for one scenario.
pub struct Pilots {
    pub edge: PilotHandle,
    pub cloud: PilotHandle,
    pub broker: PilotHandle,
}

impl Pilots {
    /// Edge: one worker per partition; cloud: `max(partitions, 4)`;
    /// broker: one.
    pub fn allocate(manager: &PilotManager, partitions: u32) -> Result<Pilots, PilotError> {
        let p = partitions as usize;
        let edge = manager.submit_pilot(PilotDescription::local(Tier::Edge, p).with_label("role", "edge"))?;
        let cloud = manager.submit_pilot(
            PilotDescription::local(Tier::Cloud, p.max(4)).with_label("role", "cloud-processing"),
        )?;
        let broker = manager.submit_pilot(PilotDescription::local(Tier::Cloud, 1).with_label("role", "cloud-broker"))?;
        for pilot in [&edge, &cloud, &broker] {
            pilot.wait_running(PILOT_START_TIMEOUT)?;
        }
        Ok(Pilots { edge, cloud, broker })
    }

    pub fn cancel(&self) {
        for p in [&self.edge, &self.cloud, &self.broker] {
            if let Err(e) = p.cancel() {
                log::warn!("cancelling pilot {}: {e}", p.id());
            }
        }
    }
}

/// Runs one repeat on already allocated pilots, with fresh services.
pub fn run_once(scenario: &Scenario, pilots: &Pilots, repeat: u32) -> Result<RunReport, ScenarioError> {
    let links = LinkTable::new();
    if let Some(w) = &scenario.wan {
        links
            .install_link((*w).between(Tier::Edge, Tier::Cloud))
            .map_err(ScenarioError::Config)?;
    }
    let services = Arc::new(Services::deploy(
        &pilots.broker,
        scenario.transport,
        BrokerConfig::default(),
        links,
    )?);
    let mut config = PipelineConfig::new(
        pilots.edge.clone(),
        pilots.cloud.clone(),
        pilots.broker.clone(),
        services.clone(),
        generator_handler(scenario.seed, scenario.points_per_message),
        model_handler(scenario.model, scenario.seed),
    );
    config.partitions = scenario.partitions;
    config.messages_per_producer = scenario.messages;
    config.points_per_message = scenario.points_per_message;
    config.user_config = BTreeMap::from([
        ("model".to_string(), scenario.model.to_string()),
        ("repeat".to_string(), repeat.to_string()),
    ]);
    let pipeline = build_pipeline(config).map_err(|source| ScenarioError::RunFailed { repeat, source })?;
    let result = pipeline.run();
    drop(pipeline);
    if let Ok(s) = Arc::try_unwrap(services) {
        s.shutdown();
    }
    result.map_err(|source| ScenarioError::RunFailed { repeat, source })
}

/// Outcome of [`run_scenario`].
#[derive(Debug)]
pub struct ScenarioOutcome {
    pub reports: Vec<RunReport>,
    pub csv_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

impl ScenarioOutcome {
    pub fn summaries(&self) -> Vec<&Summary> {
        self.reports.iter().filter_map(|r| r.summary.as_ref()).collect()
    }

    pub fn cell(&self) -> CellStats {
        CellStats::from_summaries(&self.summaries())
    }
}

pub const SUMMARY_HEADER: [&str; 19] = [
    "model",
    "partitions",
    "points",
    "messages",
    "repeat",
    "job_id",
    "complete_chains",
    "payload_bytes",
    "wall_time_s",
    "throughput_mb_s",
    "latency_mean_ms",
    "latency_p50_ms",
    "latency_p95_ms",
    "latency_p99_ms",
    "produce_to_broker_ms",
    "broker_to_consume_ms",
    "consume_to_processed_ms",
    "bottleneck",
    "dropped_metrics",
];

fn summary_line(s: &Scenario, repeat: u32, r: &RunReport) -> Vec<String> {
    let mut row = vec![
        s.model.to_string(),
        s.partitions.to_string(),
        s.points_per_message.to_string(),
        s.messages.to_string(),
        repeat.to_string(),
        r.job_id.to_string(),
        r.complete_chains().to_string(),
    ];
    match &r.summary {
        Some(m) => row.extend([
            m.payload_bytes.to_string(),
            m.wall_time_s.to_string(),
            m.throughput_mb_s.to_string(),
            m.latency.mean_ms.to_string(),
            m.latency.p50_ms.to_string(),
            m.latency.p95_ms.to_string(),
            m.latency.p99_ms.to_string(),
            m.hop_mean_ms[0].to_string(),
            m.hop_mean_ms[1].to_string(),
            m.hop_mean_ms[2].to_string(),
            m.bottleneck.to_string(),
        ]),
        None => row.extend(std::iter::repeat_n(String::new(), 11)),
    }
    row.push(r.dropped_metrics.to_string());
    row
}

/// Allocates pilots, runs `repeats` times, writes one CSV per repeat and a
/// merged summary CSV. Stops at the first failed repeat.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutcome, ScenarioError> {
    scenario.validate()?;
    fs::create_dir_all(&scenario.out)?;
    let manager = PilotManager::default();
    let pilots = Pilots::allocate(&manager, scenario.partitions)?;
    let result = run_repeats(scenario, &pilots);
    pilots.cancel();
    result
}

fn run_repeats(scenario: &Scenario, pilots: &Pilots) -> Result<ScenarioOutcome, ScenarioError> {
    let stem = scenario.stem();
    let mut reports = Vec::new();
    let mut csv_paths = Vec::new();
    for repeat in 0..scenario.repeats {
        log::info!("{stem}: repeat {}/{}", repeat + 1, scenario.repeats);
        let report = run_once(scenario, pilots, repeat)?;
        let path = scenario.out.join(format!("{stem}-r{repeat}.csv"));
        export_csv(&path, &report.records)?;
        csv_paths.push(path);
        reports.push(report);
    }
    let summary_path = scenario.out.join(format!("{stem}-summary.csv"));
    let mut w = csv::Writer::from_path(&summary_path).map_err(MetricsError::from)?;
    w.write_record(SUMMARY_HEADER).map_err(MetricsError::from)?;
    for (i, r) in reports.iter().enumerate() {
        w.write_record(summary_line(scenario, i as u32, r))
            .map_err(MetricsError::from)?;
    }
    w.flush()?;
    Ok(ScenarioOutcome {
        reports,
        csv_paths,
        summary_path,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> MeanStd {
        if xs.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Statistics of one sweep cell over its repeats.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellStats {
    pub throughput_mb_s: MeanStd,
    pub latency_mean_ms: MeanStd,
    pub latency_p50_ms: MeanStd,
    pub latency_p99_ms: MeanStd,
}

impl CellStats {
    pub fn from_summaries(s: &[&Summary]) -> CellStats {
        let col = |f: fn(&Summary) -> f64| MeanStd::of(&s.iter().map(|x| f(x)).collect::<Vec<_>>());
        CellStats {
            throughput_mb_s: col(|x| x.throughput_mb_s),
            latency_mean_ms: col(|x| x.latency.mean_ms),
            latency_p50_ms: col(|x| x.latency.p50_ms),
            latency_p99_ms: col(|x| x.latency.p99_ms),
        }
    }
}

/// Axes of a sweep; the cross product is run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxes {
    pub models: Vec<ModelKind>,
    pub partitions: Vec<u32>,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub model: ModelKind,
    pub partitions: u32,
    pub points: usize,
    pub repeats: usize,
    pub stats: CellStats,
    /// Set when the cell failed; the sweep carries on.
    pub error: Option<String>,
}

/// Runs every `(model, partitions, size)` cell of `axes` with the other
/// settings from `base`, and writes `sweep.csv` to the output directory.
pub fn sweep(base: &Scenario, axes: &SweepAxes) -> Result<Vec<SweepRow>, ScenarioError> {
    base.validate()?;
    if axes.models.is_empty() || axes.partitions.is_empty() || axes.sizes.is_empty() {
        return Err(ScenarioError::Config("every sweep axis needs a value".into()));
    }
    let mut rows = Vec::new();
    for &model in &axes.models {
        for &partitions in &axes.partitions {
            for &points in &axes.sizes {
                let cell = Scenario {
                    model,
                    partitions,
                    points_per_message: points,
                    ..base.clone()
                };
                let row = match run_scenario(&cell) {
                    Ok(out) => SweepRow {
                        model,
                        partitions,
                        points,
                        repeats: out.reports.len(),
                        stats: out.cell(),
                        error: None,
                    },
                    Err(e) if e.is_config() => return Err(e),
                    Err(e) => {
                        log::error!("{}: {e}", cell.stem());
                        SweepRow {
                            model,
                            partitions,
                            points,
                            repeats: 0,
                            stats: CellStats::default(),
                            error: Some(e.to_string()),
                        }
                    }
                };
                rows.push(row);
            }
        }
    }
    write_sweep_csv(&base.out.join("sweep.csv"), &rows)?;
    Ok(rows)
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_path(path).map_err(MetricsError::from)?;
    w.write_record([
        "model",
        "partitions",
        "points",
        "repeats",
        "throughput_mb_s_mean",
        "throughput_mb_s_std",
        "latency_mean_ms_mean",
        "latency_mean_ms_std",
        "latency_p50_ms_mean",
        "latency_p50_ms_std",
        "latency_p99_ms_mean",
        "latency_p99_ms_std",
        "error",
    ])
    .map_err(MetricsError::from)?;
    for r in rows {
        let s = &r.stats;
        w.write_record([
            r.model.to_string(),
            r.partitions.to_string(),
            r.points.to_string(),
            r.repeats.to_string(),
            s.throughput_mb_s.mean.to_string(),
            s.throughput_mb_s.std.to_string(),
            s.latency_mean_ms.mean.to_string(),
            s.latency_mean_ms.std.to_string(),
            s.latency_p50_ms.mean.to_string(),
            s.latency_p50_ms.std.to_string(),
            s.latency_p99_ms.mean.to_string(),
            s.latency_p99_ms.std.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(MetricsError::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width text table of sweep rows.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:<12} {:>10} {:>8} {:>7} {:>22} {:>24} {:>24}\n",
        "model", "partitions", "points", "repeats", "throughput MB/s", "latency p50 ms", "latency p99 ms"
    );
    for r in rows {
        match &r.error {
            None => out.push_str(&format!(
                "{:<12} {:>10} {:>8} {:>7} {:>22} {:>24} {:>24}\n",
                r.model.name(),
                r.partitions,
                r.points,
                r.repeats,
                r.stats.throughput_mb_s.to_string(),
                r.stats.latency_p50_ms.to_string(),
                r.stats.latency_p99_ms.to_string(),
            )),
            Some(e) => out.push_str(&format!(
                "{:<12} {:>10} {:>8} {:>7} FAILED: {e}\n",
                r.model.name(),
                r.partitions,
                r.points,
                r.repeats
            )),
        }
    }
    out
}

/// One job's recomputed summary from a raw CSV.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub source: PathBuf,
    pub job_id: Uuid,
    pub rows: usize,
    pub summary: Summary,
}

fn close(stored: f64, recomputed: f64) -> bool {
    if stored == recomputed {
        return true;
    }
    let scale = stored.abs().max(recomputed.abs());
    (stored - recomputed).abs() <= 1e-3 * scale
}

/// Recomputes every job's aggregates from the raw rows of `paths`, checks
/// them against the stored summary rows, and groups by job id.
pub fn report(paths: &[PathBuf]) -> Result<Vec<ReportRow>, ScenarioError> {
    let mut out = Vec::new();
    for path in paths {
        let run = import_csv(path)?;
        let mut jobs: BTreeMap<Uuid, Vec<MetricRecord>> = BTreeMap::new();
        for r in run.records {
            jobs.entry(r.job_id).or_default().push(r);
        }
        for (job_id, records) in jobs {
            let summary = aggregate(&records)?;
            if let Some((_, stored)) = run.summaries.iter().find(|(j, _)| *j == job_id) {
                let checks: [(&'static str, f64, f64); 6] = [
                    ("throughput_mb_s", stored.throughput_mb_s, summary.throughput_mb_s),
                    ("wall_time_s", stored.wall_time_s, summary.wall_time_s),
                    ("latency_mean_ms", stored.latency.mean_ms, summary.latency.mean_ms),
                    ("latency_p50_ms", stored.latency.p50_ms, summary.latency.p50_ms),
                    ("latency_p99_ms", stored.latency.p99_ms, summary.latency.p99_ms),
                    ("messages", stored.messages as f64, summary.messages as f64),
                ];
                for (field, s, r) in checks {
                    if !close(s, r) {
                        return Err(ScenarioError::SummaryMismatch {
                            job_id,
                            field,
                            stored: s,
                            recomputed: r,
                        });
                    }
                }
            }
            out.push(ReportRow {
                source: path.clone(),
                job_id,
                rows: records.len(),
                summary,
            });
        }
    }
    Ok(out)
}

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = format!(
        "{:<36} {:>6} {:>12} {:>16} {:>12} {:>12} {:>12} {:>22}\n",
        "job_id", "rows", "payload MB", "throughput MB/s", "mean ms", "p50 ms", "p99 ms", "bottleneck"
    );
    for r in rows {
        let s = &r.summary;
        out.push_str(&format!(
            "{:<36} {:>6} {:>12.3} {:>16.3} {:>12.3} {:>12.3} {:>12.3} {:>22}\n",
            r.job_id,
            r.rows,
            s.payload_bytes as f64 / 1e6,
            s.throughput_mb_s,
            s.latency.mean_ms,
            s.latency.p50_ms,
            s.latency.p99_ms,
            s.bottleneck
        ));
    }
    out
}

/// Long format, one `(job_id, metric, value)` row per aggregate.
pub fn write_long_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["job_id", "metric", "value"]).map_err(MetricsError::from)?;
    for r in rows {
        let s = &r.summary;
        let metrics: [(&str, f64); 12] = [
            ("messages", s.messages as f64),
            ("payload_bytes", s.payload_bytes as f64),
            ("wall_time_s", s.wall_time_s),
            ("throughput_mb_s", s.throughput_mb_s),
            ("latency_mean_ms", s.latency.mean_ms),
            ("latency_p50_ms", s.latency.p50_ms),
            ("latency_p95_ms", s.latency.p95_ms),
            ("latency_p99_ms", s.latency.p99_ms),
            ("produce_to_broker_ms", s.hop_mean_ms[0]),
            ("broker_to_consume_ms", s.hop_mean_ms[1]),
            ("consume_to_processed_ms", s.hop_mean_ms[2]),
            ("rows", r.rows as f64),
        ];
        for (name, v) in metrics {
            w.write_record([r.job_id.to_string(), name.to_string(), v.to_string()])
                .map_err(MetricsError::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_round_trip() {
        for m in ModelKind::ALL {
            assert_eq!(m.name().parse::<ModelKind>().unwrap(), m);
        }
        assert!("svm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn validation() {
        assert!(Scenario::default().validate().is_ok());
        for bad in [
            Scenario {
                partitions: 0,
                ..Scenario::default()
            },
            Scenario {
                points_per_message: 0,
                ..Scenario::default()
            },
            Scenario {
                repeats: 0,
                ..Scenario::default()
            },
            Scenario {
                wan: Some(LinkSpec::new(1.0, 5.0, 10.0)),
                ..Scenario::default()
            },
        ] {
            assert!(bad.validate().unwrap_err().is_config());
        }
    }

    #[test]
    fn model_handlers_keep_state_per_partition() {
        let params: Arc<dyn ParamApi> = Arc::new(crate::param::ParamStore::new());
        let job = Uuid::new_v4();
        let gen = Generator::new(GeneratorSpec::with_seed(1));
        for kind in [ModelKind::KMeans, ModelKind::IForest, ModelKind::Autoencoder] {
            let Handler::Cloud(h) = model_handler(kind, 3) else { panic!() };
            for p in 0..2u32 {
                let mut ctx = FunctionContext::standalone(job, p, params.clone());
                for seq in 0..3 {
                    ctx.message_id = seq;
                    let (b, _) = gen.block(seq, 100);
                    assert_eq!(h(&ctx, &b).unwrap().len(), 100);
                }
                let e = latest(params.as_ref(), &partition_model_key(&job, kind, p))
                    .unwrap()
                    .unwrap();
                assert_eq!(e.version, 3);
            }
        }
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
        assert!(MeanStd::of(&[]).mean.is_nan());
    }
}
