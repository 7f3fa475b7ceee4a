//! The `pipeline` command: ingest, trips, waypoints, factorization and
//! exports, all written into one run directory with a manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use mobilicities::analysis::{
    component_map, departure_histogram, event_counts, label_association, user_component_sample, AssociationTable,
};
use mobilicities::factorize::{
    nmf, normalize_components, rss, truncated_svd, write_factorization, Factorization, NmfConfig, SpectrumRss,
};
use mobilicities::geo::{display_label, label_towers_with, read_infrastructure, InfraPolyline, LabelSet, Tower, TowerLabel, TowerRegistry};
use mobilicities::ingest::{filter_events, open_input, parse_events, restrict_dates, write_events_csv, IngestReport, UserDay};
use mobilicities::synth::{synth_city, synth_events, SynthConfig};
use mobilicities::trips::{
    detect_trips, trip_stats, write_event_classes_csv, write_trips_csv, EventClass, Trip, TripRuleConfig, TripStats,
    UserTripCount,
};
use mobilicities::waypoints::{build_waypoints, matrix_stats, WaypointsMatrix};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::error::{CliError, CliResult, StageExt};

pub const MANIFEST: &str = "manifest.json";
pub const TOWERS_FILE: &str = "input/towers.csv";
pub const INFRA_FILE: &str = "input/infrastructure.geojson";
pub const TRIPLETS_FILE: &str = "waypoints.triplets";
pub const SIDECAR_FILE: &str = "waypoints.index.json";
pub const RSS_CURVE_FILE: &str = "rss_curve.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub started: String,
    pub finished: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: Settings,
    pub trip_rules: TripRuleConfig,
    /// SHA-256 of every input file, by role.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file this run wrote, by path relative to the run
    /// directory.
    pub outputs: BTreeMap<String, String>,
    pub stages: Vec<StageTiming>,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    io::copy(&mut File::open(path)?, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

/// Creates files under a run directory and remembers them for the
/// manifest.
#[derive(Debug)]
pub struct RunWriter {
    root: PathBuf,
    files: Vec<String>,
}

impl RunWriter {
    pub fn new(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::config("output", format!("{}: {e}", root.display())))?;
        Ok(RunWriter { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record(&mut self, rel: &str) {
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_owned());
        }
    }

    pub fn create(&mut self, rel: &str) -> io::Result<BufWriter<File>> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.record(rel);
        Ok(BufWriter::new(File::create(path)?))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        let mut out = self.create(rel).stage("output")?;
        serde_json::to_writer_pretty(&mut out, value).stage("output")?;
        out.write_all(b"\n").stage("output")?;
        out.flush().stage("output")
    }

    pub fn digests(&self) -> CliResult<BTreeMap<String, String>> {
        self.files.iter().map(|rel| Ok((rel.clone(), sha256_file(&self.path(rel)).stage("output")?))).collect()
    }
}

/// Inputs shared by the per-k exports.
#[derive(Debug, Clone)]
pub struct RunData {
    pub registry: TowerRegistry,
    pub infrastructure: Vec<InfraPolyline>,
    pub labels: BTreeMap<String, LabelSet>,
    pub waypoints: WaypointsMatrix,
    pub waypoints_digest: String,
}

impl RunData {
    /// Towers aligned with the waypoints columns.
    pub fn column_towers(&self) -> Vec<&Tower> {
        self.waypoints.cols().iter().map(|id| self.registry.get(id).expect("column tower in registry")).collect()
    }

    pub fn column_labels(&self) -> Vec<TowerLabel> {
        self.waypoints.cols().iter().map(|id| display_label(&self.labels[id])).collect()
    }
}

pub fn synth_preset(name: &str) -> CliResult<SynthConfig> {
    match name {
        "small" => Ok(SynthConfig::small()),
        "tiny" => Ok(SynthConfig::tiny()),
        _ => Err(CliError::config("input", format!("unknown synthetic preset `{name}` (expected small or tiny)"))),
    }
}

/// Paths of a generated dataset.
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub towers: PathBuf,
    pub infra: PathBuf,
    pub events: PathBuf,
    pub truth: PathBuf,
}

/// Generates a synthetic city and event log and writes them as ordinary
/// input files.
pub fn write_synth(cfg: &SynthConfig, dir: &Path) -> CliResult<SynthFiles> {
    let city = synth_city(cfg).stage("input")?;
    let (events, truth) = synth_events(cfg, &city).stage("input")?;
    fs::create_dir_all(dir).stage("input")?;
    let files = SynthFiles {
        towers: dir.join("towers.csv"),
        infra: dir.join("infrastructure.geojson"),
        events: dir.join("events.csv"),
        truth: dir.join("ground_truth.json"),
    };
    city.registry.write_csv(BufWriter::new(File::create(&files.towers).stage("input")?)).stage("input")?;
    let infra = mobilicities::geo::infrastructure_geojson(&city.infrastructure);
    fs::write(&files.infra, serde_json::to_vec_pretty(&infra).stage("input")?).stage("input")?;
    write_events_csv(&events, BufWriter::new(File::create(&files.events).stage("input")?)).stage("input")?;
    let mut out = BufWriter::new(File::create(&files.truth).stage("input")?);
    truth.write_json(&mut out).stage("input")?;
    out.flush().stage("input")?;
    Ok(files)
}

fn require(path: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    let path = path.clone().ok_or_else(|| CliError::config("input", format!("no {what} given")))?;
    if !path.is_file() {
        return Err(CliError::config("input", format!("{what} not found: {}", path.display())));
    }
    Ok(path)
}

fn read_infra(path: &Path) -> CliResult<Vec<InfraPolyline>> {
    read_infrastructure(File::open(path).stage("input")?).stage("input")
}

/// Everything the pipeline computed, for callers that want more than the
/// files on disk.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub data: RunData,
    pub days: Vec<UserDay>,
    pub classes: Vec<Vec<EventClass>>,
    pub trips: Vec<Trip>,
    pub trip_stats: TripStats,
    pub ingest: IngestReport,
    pub factorization: Factorization,
    pub association: AssociationTable,
}

struct Stages(Vec<StageTiming>);

impl Stages {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let started = Utc::now().to_rfc3339();
        let out = f()?;
        self.0.push(StageTiming { stage: stage.into(), started, finished: Utc::now().to_rfc3339() });
        Ok(out)
    }
}

pub fn run_pipeline(settings: &Settings) -> CliResult<PipelineOutcome> {
    settings.validate()?;
    let mut w = RunWriter::new(&settings.out)?;
    let mut stages = Stages(Vec::new());

    let (events_path, towers_path, infra_path) = stages.run("input", || {
        if let Some(preset) = &settings.synth {
            let cfg = synth_preset(preset)?.seed(settings.seed);
            let files = write_synth(&cfg, &w.path("input"))?;
            for rel in ["input/towers.csv", "input/infrastructure.geojson", "input/events.csv", "input/ground_truth.json"] {
                w.record(rel);
            }
            Ok((files.events, files.towers, Some(files.infra)))
        } else {
            let towers = require(&settings.towers, "tower registry")?;
            let events = require(&settings.events, "event log")?;
            let infra = match &settings.infra {
                Some(_) => Some(require(&settings.infra, "infrastructure file")?),
                None => None,
            };
            fs::create_dir_all(w.path("input")).stage("input")?;
            fs::copy(&towers, w.path(TOWERS_FILE)).stage("input")?;
            w.record(TOWERS_FILE);
            if let Some(infra) = &infra {
                fs::copy(infra, w.path(INFRA_FILE)).stage("input")?;
                w.record(INFRA_FILE);
            }
            Ok((events, towers, infra))
        }
    })?;

    let mut inputs = BTreeMap::new();
    inputs.insert("events".to_owned(), sha256_file(&events_path).stage("input")?);
    inputs.insert("towers".to_owned(), sha256_file(&towers_path).stage("input")?);
    if let Some(p) = &infra_path {
        inputs.insert("infra".to_owned(), sha256_file(p).stage("input")?);
    }
    let registry = TowerRegistry::read_csv(File::open(&towers_path).stage("input")?).stage("input")?;
    let infrastructure = match &infra_path {
        Some(p) => read_infra(p)?,
        None => Vec::new(),
    };

    let (days, ingest, parsed_counts) = stages.run("ingest", || {
        let parsed = parse_events(open_input(&events_path).stage("ingest")?).stage("ingest")?;
        let counts = event_counts(
            parsed
                .events
                .iter()
                .filter(|e| settings.date_from.is_none_or(|d| e.timestamp.date() >= d))
                .filter(|e| settings.date_to.is_none_or(|d| e.timestamp.date() <= d)),
        );
        let (days, mut report) = filter_events(&parsed.events, &registry, settings.window()?);
        report.rows_read = parsed.rows_read;
        report.rows_malformed = parsed.rows_malformed;
        Ok((restrict_dates(days, settings.date_from, settings.date_to), report, counts))
    })?;
    w.write_json("ingest_report.json", &ingest)?;

    let rules = settings.trip_rules();
    let (classes, trips, stats) = stages.run("trips", || {
        let mut classes = Vec::with_capacity(days.len());
        let mut trips = Vec::new();
        let mut per_user: BTreeMap<String, UserTripCount> = BTreeMap::new();
        for day in &days {
            let dt = detect_trips(day, &registry, &rules).stage("trips")?;
            let entry = per_user.entry(day.user_id.clone()).or_default();
            entry.trips += dt.trips.len() as u64;
            entry.within_events += dt.trips.iter().map(|t| t.within.len() as u64).sum::<u64>();
            trips.extend(dt.trips);
            classes.push(dt.classes);
        }
        Ok((classes, trips, trip_stats(&per_user)))
    })?;
    write_trips_csv(&trips, w.create("trips.csv").stage("output")?).stage("output")?;
    write_event_classes_csv(days.iter().zip(classes.iter().map(Vec::as_slice)), w.create("event_classes.csv").stage("output")?)
        .stage("output")?;
    w.write_json("trip_stats.json", &stats)?;
    let histogram = departure_histogram(&trips);
    histogram.write_csv(w.create("departure_histogram.csv").stage("output")?).stage("output")?;
    w.write_json("departure_histogram.json", &histogram)?;
    write_event_counts(&mut w, &parsed_counts)?;

    let labels = stages.run("labels", || label_towers_with(registry.towers(), &infrastructure, settings.label_radii()).stage("labels"))?;
    write_tower_labels(&mut w, &labels)?;

    let waypoints = stages.run("waypoints", || {
        build_waypoints(days.iter().zip(classes.iter().map(Vec::as_slice)), &registry).stage("waypoints")
    })?;
    waypoints.write_triplets(w.create(TRIPLETS_FILE).stage("output")?).stage("output")?;
    waypoints.write_sidecar(w.create(SIDECAR_FILE).stage("output")?).stage("output")?;
    w.write_json("waypoints_stats.json", &matrix_stats(&waypoints))?;
    let waypoints_digest = sha256_file(&w.path(TRIPLETS_FILE)).stage("output")?;
    let data = RunData { registry, infrastructure, labels, waypoints, waypoints_digest };

    let f = stages.run("factorize", || {
        let cfg = NmfConfig { max_iter: settings.max_iter, tol: settings.tol, ..NmfConfig::new(settings.k) }
            .seed(settings.seed)
            .restarts(settings.restarts);
        nmf(data.waypoints.matrix(), &cfg).stage("factorize")
    })?;

    let (normalized, association) = stages.run("analysis", || {
        let exported = export_k(&mut w, &data, &f, settings)?;
        let spectrum = SpectrumRss::new(data.waypoints.matrix());
        let point = RssPoint { k: f.k, nmf_rss: rss(data.waypoints.matrix(), &f.u, &f.t).stage("analysis")?, svd_rss: spectrum.rss(f.k) };
        write_rss_curve(&mut w, &[point])?;
        Ok(exported)
    })?;

    let outputs = w.digests()?;
    let manifest = RunManifest {
        run_id: run_id(settings, &inputs),
        config: settings.clone(),
        trip_rules: rules,
        inputs,
        outputs,
        stages: stages.0,
    };
    let mut out = BufWriter::new(File::create(w.path(MANIFEST)).stage("output")?);
    serde_json::to_writer_pretty(&mut out, &manifest).stage("output")?;
    out.flush().stage("output")?;

    Ok(PipelineOutcome {
        manifest,
        data,
        days,
        classes,
        trips,
        trip_stats: stats,
        ingest,
        factorization: normalized,
        association,
    })
}

/// Content hash of the configuration (without the output location) and the
/// input digests.
pub fn run_id(settings: &Settings, inputs: &BTreeMap<String, String>) -> String {
    let mut cfg = settings.clone();
    cfg.out = PathBuf::new();
    let doc = json!({ "config": cfg, "inputs": inputs });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))[..16].to_owned()
}

fn write_event_counts(w: &mut RunWriter, counts: &BTreeMap<chrono::NaiveDate, u64>) -> CliResult<()> {
    let mut out = w.create("event_counts.csv").stage("output")?;
    writeln!(out, "date,events").stage("output")?;
    for (d, n) in counts {
        writeln!(out, "{d},{n}").stage("output")?;
    }
    out.flush().stage("output")?;
    w.write_json("event_counts.json", counts)
}

fn write_tower_labels(w: &mut RunWriter, labels: &BTreeMap<String, LabelSet>) -> CliResult<()> {
    let mut out = w.create("tower_labels.csv").stage("output")?;
    writeln!(out, "tower_id,labels,display_label").stage("output")?;
    for (id, set) in labels {
        let all: Vec<&str> = set.iter().map(TowerLabel::as_str).collect();
        writeln!(out, "{id},{},{}", all.join("|"), display_label(set).as_str()).stage("output")?;
    }
    out.flush().stage("output")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssPoint {
    pub k: usize,
    pub nmf_rss: f64,
    pub svd_rss: f64,
}

pub fn write_rss_curve(w: &mut RunWriter, points: &[RssPoint]) -> CliResult<()> {
    let mut out = w.create(RSS_CURVE_FILE).stage("output")?;
    writeln!(out, "k,nmf_rss,svd_rss").stage("output")?;
    for p in points {
        writeln!(out, "{},{:?},{:?}", p.k, p.nmf_rss, p.svd_rss).stage("output")?;
    }
    out.flush().stage("output")
}

pub fn read_rss_curve(path: &Path) -> CliResult<Vec<RssPoint>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::from_core("sweep", e.into()))?;
    rdr.deserialize().map(|r| r.map_err(|e| CliError::from_core("sweep", e.into()))).collect()
}

pub fn factorization_dir(k: usize) -> String {
    format!("factorization_k{k}")
}

/// Writes the factors and every per-k view of them. Returns the
/// normalized factorization and its label association.
pub fn export_k(
    w: &mut RunWriter,
    data: &RunData,
    f: &Factorization,
    settings: &Settings,
) -> CliResult<(Factorization, AssociationTable)> {
    let k = f.k;
    let normalized = normalize_components(f);
    let wp = &data.waypoints;
    let fdir = factorization_dir(k);
    write_factorization(&w.path(&fdir), &normalized, wp.rows(), wp.cols(), Some(&data.waypoints_digest))
        .stage("analysis")?;
    for name in ["U.csv", "T.csv", "manifest.json"] {
        w.record(&format!("{fdir}/{name}"));
    }

    let towers = data.column_towers();
    for c in 0..k {
        let map = component_map(&normalized, &towers, c, None).stage("analysis")?;
        w.write_json(&format!("components_k{k}/component_{c}.geojson"), &map.to_geojson())?;
    }

    let table = label_association(&normalized, &data.column_labels(), settings.positive_only).stage("analysis")?;
    table.write_csv(w.create(&format!("label_association_k{k}.csv")).stage("output")?).stage("output")?;
    w.write_json(&format!("label_association_k{k}.json"), &table)?;

    let sample = user_component_sample(&normalized, settings.heatmap_n, settings.seed);
    let users: Vec<&str> = sample.users.iter().map(|&i| wp.rows()[i].as_str()).collect();
    w.write_json(
        &format!("heatmap_k{k}.json"),
        &json!({ "k": k, "seed": settings.seed, "users": users, "dominant": sample.dominant, "rows": sample.rows }),
    )?;

    let svd = truncated_svd(wp.matrix(), k, settings.seed).stage("analysis")?;
    let negative = svd.components.iter().filter(|v| **v < 0.0).count() as f64 / svd.components.len() as f64;
    let components: Vec<Vec<f64>> = (0..k).map(|c| svd.components.row(c).iter().copied().collect()).collect();
    w.write_json(
        &format!("svd_k{k}.json"),
        &json!({
            "k": k,
            "singular_values": svd.singular_values,
            "negative_fraction": negative,
            "towers": wp.cols(),
            "components": components,
        }),
    )?;
    Ok((normalized, table))
}

pub fn read_manifest(dir: &Path) -> CliResult<RunManifest> {
    let path = dir.join(MANIFEST);
    let file = File::open(&path).map_err(|e| CliError::config("input", format!("{}: {e}", path.display())))?;
    serde_json::from_reader(file).stage("input")
}

/// Loads the registry, labels and waypoints matrix of a finished run.
pub fn load_run(dir: &Path) -> CliResult<(RunManifest, RunData)> {
    let manifest = read_manifest(dir)?;
    let registry = TowerRegistry::read_csv(File::open(dir.join(TOWERS_FILE)).stage("input")?).stage("input")?;
    let infra_path = dir.join(INFRA_FILE);
    let infrastructure = if infra_path.exists() { read_infra(&infra_path)? } else { Vec::new() };
    let labels = label_towers_with(registry.towers(), &infrastructure, manifest.config.label_radii()).stage("labels")?;
    let waypoints = WaypointsMatrix::read(
        File::open(dir.join(TRIPLETS_FILE)).stage("input")?,
        File::open(dir.join(SIDECAR_FILE)).stage("input")?,
    )
    .stage("input")?;
    let waypoints_digest = sha256_file(&dir.join(TRIPLETS_FILE)).stage("input")?;
    Ok((manifest, RunData { registry, infrastructure, labels, waypoints, waypoints_digest }))
}
