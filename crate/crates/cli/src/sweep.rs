//! The `sweep` command: factorize a finished run at several k and record
//! the residual curve.

use std::collections::BTreeMap;
use std::path::Path;

use mobilicities::factorize::k_sweep;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, StageExt};
use crate::pipeline::{export_k, load_run, read_rss_curve, write_rss_curve, RssPoint, RunWriter, RSS_CURVE_FILE};

pub const SWEEP_MANIFEST: &str = "sweep_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub run_id: String,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub restarts: usize,
    pub points: Vec<RssPoint>,
    pub outputs: BTreeMap<String, String>,
}

/// Runs the sweep over `ks` on the run in `dir`. Points already on the
/// residual curve are kept unless recomputed here.
pub fn run_sweep(dir: &Path, ks: &[usize], seed: Option<u64>, restarts: usize) -> CliResult<SweepManifest> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::config("sweep", "ks must be a non-empty list of positive integers"));
    }
    if restarts == 0 {
        return Err(CliError::config("sweep", "restarts must be positive"));
    }
    let (manifest, data) = load_run(dir)?;
    let mut settings = manifest.config.clone();
    if let Some(seed) = seed {
        settings.seed = seed;
    }
    let entries = k_sweep(data.waypoints.matrix(), ks, settings.seed, restarts).stage("sweep")?;

    let mut w = RunWriter::new(dir)?;
    let mut curve: BTreeMap<usize, RssPoint> =
        read_rss_curve(&dir.join(RSS_CURVE_FILE))?.into_iter().map(|p| (p.k, p)).collect();
    let mut points = Vec::with_capacity(entries.len());
    for e in &entries {
        let mut cfg = settings.clone();
        cfg.k = e.k;
        export_k(&mut w, &data, &e.factorization, &cfg)?;
        let p = RssPoint { k: e.k, nmf_rss: e.nmf_rss, svd_rss: e.svd_rss };
        curve.insert(e.k, p);
        points.push(p);
    }
    write_rss_curve(&mut w, &curve.into_values().collect::<Vec<_>>())?;
    let sweep = SweepManifest {
        run_id: manifest.run_id,
        ks: ks.to_vec(),
        seed: settings.seed,
        restarts,
        points,
        outputs: w.digests()?,
    };
    w.write_json(SWEEP_MANIFEST, &sweep)?;
    Ok(sweep)
}
