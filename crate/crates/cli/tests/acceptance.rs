//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use mobilicities::factorize::{k_sweep, nmf, read_factorization, rss, truncated_svd, NmfConfig};
use mobilicities::sparse::CsrMatrix;
use mobilicities::synth::{synth_waypoints, GroundTruth, SynthConfig};
use mobilicities::trips::{simplify, EventClass, SpaceTimePoint};
use mobilicities::waypoints::WaypointsMatrix;
use mobilicities_cli::pipeline::{run_pipeline, PipelineOutcome};
use mobilicities_cli::Settings;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, n: usize, title: &str, ok: bool, detail: String) {
        println!("criterion {n} [{}] {title}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn random_sparse(m: usize, n: usize, density: f64, seed: u64) -> CsrMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triplets = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if rng.random::<f64>() < density {
                triplets.push((i, j, rng.random_range(0.01..1.0)));
            }
        }
    }
    CsrMatrix::from_triplets(m, n, &triplets).unwrap()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Best one-to-one matching by enumerating every permutation. Returns the
/// mean cosine and, per reference, the matched row.
fn brute_force_match(t: &DMatrix<f64>, refs: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let k = t.nrows();
    assert_eq!(k, refs.len());
    let rows: Vec<Vec<f64>> = (0..k).map(|c| t.row(c).iter().copied().collect()).collect();
    let sim: Vec<Vec<f64>> = refs.iter().map(|r| rows.iter().map(|row| cos(row, r)).collect()).collect();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (f64::NEG_INFINITY, perm.clone());
    let score = |p: &[usize]| p.iter().enumerate().map(|(r, &c)| sim[r][c]).sum::<f64>();
    // Heap's algorithm
    let mut c = vec![0usize; k];
    let s = score(&perm);
    if s > best.0 {
        best = (s, perm.clone());
    }
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let s = score(&perm);
            if s > best.0 {
                best = (s, perm.clone());
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    (best.0 / k as f64, best.1)
}

fn criterion_1(r: &mut Report) {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut violations = 0;
    let mut oracle_gap = 0.0f64;
    for seed in 0..50 {
        let w = random_sparse(500, 100, 0.05, seed);
        let f = nmf(&w, &NmfConfig::new(10).seed(seed)).unwrap();
        for pair in f.objective_history.windows(2) {
            let rise = (pair[1] - pair[0]) / pair[0];
            worst = worst.max(rise);
            if pair[1] > pair[0] * (1.0 + 1e-10) {
                violations += 1;
            }
        }
        let dense = (w.to_dense() - &f.u * &f.t).norm();
        oracle_gap = oracle_gap.max((dense - f.final_objective()).abs() / dense);
    }
    let elapsed = start.elapsed();
    r.check(
        1,
        "NMF objective never increases",
        violations == 0 && oracle_gap < 1e-9 && elapsed < Duration::from_secs(10),
        format!(
            "{violations} violations, largest relative rise {worst:.3e}, stored vs dense residual gap {oracle_gap:.1e}, {:.2} s (limit 10 s)",
            elapsed.as_secs_f64()
        ),
    );
}

struct Planted {
    w: WaypointsMatrix,
}

fn planted() -> Planted {
    let (w, _) = synth_waypoints(2000, 300, 8, 0.05, 42).unwrap();
    Planted { w }
}

fn criterion_2(r: &mut Report, p: &Planted) {
    let start = Instant::now();
    let (w, truth) = synth_waypoints(2000, 300, 8, 0.05, 42).unwrap();
    let f = nmf(w.matrix(), &NmfConfig::new(8).restarts(5).seed(42)).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(w, p.w);
    let (mean, _) = brute_force_match(&f.t, &truth.component_indicators(w.cols()));
    r.check(
        2,
        "planted blocks recovered",
        mean >= 0.9 && elapsed < Duration::from_secs(30),
        format!("mean matched cosine {mean:.4} (need >= 0.9), {:.2} s (limit 30 s)", elapsed.as_secs_f64()),
    );
}

fn criterion_3(r: &mut Report, p: &Planted) {
    let ks = [2, 4, 8, 12];
    let w = p.w.matrix();
    let sweep = k_sweep(w, &ks, 42, 1).unwrap();
    // oracle: dense SVD of the whole matrix
    let dense = w.to_dense();
    let mut sv: Vec<f64> = dense.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let total = dense.norm_squared();
    let mut ok = true;
    let mut lines = Vec::new();
    let mut prev = f64::INFINITY;
    for e in &sweep {
        let svd = truncated_svd(w, e.k, 42).unwrap();
        let svd_rss = rss(w, &svd.user_scores, &svd.components).unwrap();
        let oracle = total - sv.iter().take(e.k).map(|s| s * s).sum::<f64>();
        let agrees = (svd_rss - oracle).abs() <= 1e-6 * total && (e.svd_rss - oracle).abs() <= 1e-6 * total;
        ok &= svd_rss <= e.nmf_rss + 1e-9 && svd_rss < prev && agrees;
        prev = svd_rss;
        lines.push(format!("k={} svd {:.5} nmf {:.5} oracle {:.5}", e.k, svd_rss, e.nmf_rss, oracle));
    }
    r.check(3, "SVD residual below NMF and strictly decreasing", ok, lines.join("; "));
}

fn criterion_4(r: &mut Report, p: &Planted) {
    let w = p.w.matrix();
    let f = nmf(w, &NmfConfig::new(8).restarts(5).seed(42)).unwrap();
    let nmf_neg = f.u.iter().chain(f.t.iter()).filter(|v| **v < 0.0).count();
    let svd = truncated_svd(w, 8, 42).unwrap();
    let neg = svd.components.iter().filter(|v| **v < 0.0).count() as f64 / svd.components.len() as f64;
    r.check(
        4,
        "sign contrast between NMF and SVD",
        nmf_neg == 0 && neg >= 0.10,
        format!("NMF negative entries {nmf_neg}, SVD negative share {:.1}% (need >= 10%)", 100.0 * neg),
    );
}

fn read_triplet_row_sums(dir: &Path) -> (Vec<String>, Vec<f64>) {
    let side: Value = serde_json::from_str(&fs::read_to_string(dir.join("waypoints.index.json")).unwrap()).unwrap();
    let rows: Vec<String> = side["rows"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_owned()).collect();
    let mut sums = vec![0.0; rows.len()];
    for line in fs::read_to_string(dir.join("waypoints.triplets")).unwrap().lines() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let i: usize = parts[0].parse().unwrap();
        sums[i] += parts[2].parse::<f64>().unwrap();
    }
    (rows, sums)
}

fn small_settings(out: &Path) -> Settings {
    let flags = [("synth", "small".to_owned()), ("k", "4".to_owned()), ("seed", "1".to_owned()), ("out", out.display().to_string())];
    Settings::resolve(None, &flags).unwrap()
}

fn criterion_5(r: &mut Report, dir: &Path) -> (PipelineOutcome, GroundTruth) {
    let cfg = SynthConfig::small();
    assert_eq!((cfg.n_users, cfg.n_towers, cfg.k_true, cfg.n_days), (1000, 200, 4, 14));
    assert_eq!((cfg.billing_interval_s, cfg.noise_event_rate), ((900, 1800), 0.0));
    let start = Instant::now();
    let outcome = run_pipeline(&small_settings(dir)).unwrap();
    let elapsed = start.elapsed();

    let truth: GroundTruth = serde_json::from_slice(&fs::read(dir.join("input/ground_truth.json")).unwrap()).unwrap();
    let detected: HashMap<(&str, _), EventClass> = outcome
        .days
        .iter()
        .zip(&outcome.classes)
        .flat_map(|(d, cs)| d.events.iter().zip(cs).map(|(e, c)| ((e.user_id.as_str(), e.timestamp), *c)))
        .collect();
    let correct =
        truth.events.iter().filter(|e| detected.get(&(e.user_id.as_str(), e.timestamp)) == Some(&e.class)).count();
    let accuracy = correct as f64 / truth.events.len() as f64;

    let (rows, sums) = read_triplet_row_sums(dir);
    let worst_sum = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);

    let mut with_within = BTreeSet::new();
    let mut rdr = csv::Reader::from_path(dir.join("event_classes.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[3] == "within_trip" {
            with_within.insert(rec[0].to_owned());
        }
    }
    let row_set: BTreeSet<String> = rows.iter().cloned().collect();
    let n_users = truth.user_mixture.len();

    let (f, _, _, towers) = read_factorization(&dir.join("factorization_k4")).unwrap();
    let (mean_cos, _) = brute_force_match(&f.t, &truth.component_indicators(&towers));

    let ok = accuracy >= 0.9
        && worst_sum <= 1e-9
        && row_set == with_within
        && rows.len() < n_users
        && mean_cos >= 0.8
        && elapsed < Duration::from_secs(120);
    r.check(
        5,
        "end-to-end synthetic pipeline",
        ok,
        format!(
            "class accuracy {:.4} (need >= 0.9), max |row sum - 1| {worst_sum:.1e}, W rows {} of {n_users} users (rows == users with within-trip events: {}), corridor cosine {mean_cos:.4} (need >= 0.8), {:.1} s (limit 120 s)",
            accuracy,
            rows.len(),
            row_set == with_within,
            elapsed.as_secs_f64()
        ),
    );
    (outcome, truth)
}

fn criterion_6(r: &mut Report, dir: &Path, truth: &GroundTruth) {
    let (f, _, _, towers) = read_factorization(&dir.join("factorization_k4")).unwrap();
    let mut display = HashMap::new();
    let mut rdr = csv::Reader::from_path(dir.join("tower_labels.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        display.insert(rec[0].to_owned(), rec[2].to_owned());
    }
    // oracle: unweighted mean of T over each display-label group
    let groups: BTreeSet<&str> = towers.iter().map(|t| display[t].as_str()).collect();
    let top = |c: usize| -> String {
        let mut best = (String::new(), f64::NEG_INFINITY);
        for g in &groups {
            let vals: Vec<f64> =
                towers.iter().enumerate().filter(|(_, t)| display[*t] == *g).map(|(j, _)| f.t[(c, j)]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            if mean > best.1 {
                best = (g.to_string(), mean);
            }
        }
        best.0
    };
    let table: Value = serde_json::from_str(&fs::read_to_string(dir.join("label_association_k4.json")).unwrap()).unwrap();
    let (_, matched) = brute_force_match(&f.t, &truth.component_indicators(&towers));
    let mut hits = 0;
    let mut agree_with_export = true;
    let mut detail = Vec::new();
    for (corridor, &c) in matched.iter().enumerate() {
        let planted = truth.component_labels[corridor].map(|l| l.as_str().to_owned()).unwrap_or_default();
        let got = top(c);
        let labels = table["labels"].as_array().unwrap();
        let exported = labels
            .iter()
            .enumerate()
            .filter_map(|(g, l)| table["mean"][c][g].as_f64().map(|m| (l.as_str().unwrap().to_owned(), m)))
            .fold((String::new(), f64::NEG_INFINITY), |b, (l, m)| if m > b.1 { (l, m) } else { b })
            .0;
        let exported = match exported.as_str() {
            "Highway" => "highway",
            "MetroSurface" => "metro_surface",
            "MetroUnderground" => "metro_underground",
            "None" => "none",
            other => other,
        }
        .to_owned();
        agree_with_export &= exported == got;
        hits += usize::from(got == planted);
        detail.push(format!("corridor {corridor} ({planted}) -> component {c} top {got}"));
    }
    r.check(
        6,
        "top label association matches planted corridor",
        hits >= 3 && agree_with_export,
        format!("{hits}/4 match (need >= 3), export agrees with oracle: {agree_with_export}; {}", detail.join(", ")),
    );
}

fn criterion_7(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = 0;
    let mut worst_ratio = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..80);
        let tol = rng.random_range(10.0..2000.0);
        let mut t = rng.random_range(21_600.0..30_000.0);
        let mut d = 0.0;
        let points: Vec<SpaceTimePoint> = (0..n)
            .map(|i| {
                t += rng.random_range(1.0..3000.0);
                if rng.random_bool(0.6) {
                    d += rng.random_range(0.0..8000.0);
                }
                SpaceTimePoint { t, d, event_index: i }
            })
            .collect();
        let out = simplify(&points, tol);
        let idx: Vec<usize> = out.iter().map(|p| p.event_index).collect();
        let subsequence = idx.windows(2).all(|w| w[0] < w[1]) && out.iter().all(|p| points[p.event_index] == *p);
        let endpoints = idx.first() == Some(&0) && idx.last() == Some(&(n - 1));
        let mut within = true;
        for p in &points {
            let seg = out.windows(2).find(|s| s[0].t <= p.t && p.t <= s[1].t).unwrap();
            let (a, b) = (&seg[0], &seg[1]);
            let on_line = a.d + (b.d - a.d) * (p.t - a.t) / (b.t - a.t);
            let dev = (p.d - on_line).abs();
            worst_ratio = worst_ratio.max(dev / tol);
            within &= dev <= tol * (1.0 + 1e-12);
        }
        if !(subsequence && endpoints && within) {
            failures += 1;
        }
    }
    r.check(
        7,
        "simplification keeps endpoints, order and tolerance",
        failures == 0,
        format!("{failures} of 1000 trajectories violate a property, worst deviation {:.3} x tol", worst_ratio),
    );
}

fn criterion_8(r: &mut Report, dir: &Path, truth: &GroundTruth) {
    let stats: Value = serde_json::from_str(&fs::read_to_string(dir.join("trip_stats.json")).unwrap()).unwrap();
    let keys: BTreeSet<&str> = stats.as_object().unwrap().keys().map(String::as_str).collect();
    let expected: BTreeSet<&str> = [
        "total_trips",
        "total_users",
        "users_with_within_trip_events",
        "mean_trips_per_user",
        "std_trips_per_user",
        "min_trips_per_user",
        "p25_trips_per_user",
        "p50_trips_per_user",
        "p75_trips_per_user",
        "max_trips_per_user",
    ]
    .into_iter()
    .collect();

    let mut by_hour = [0u64; 24];
    let mut rdr = csv::Reader::from_path(dir.join("departure_histogram.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        by_hour[rec[1].parse::<usize>().unwrap()] += rec[2].parse::<u64>().unwrap();
    }
    let argmax = |range: std::ops::Range<usize>| range.max_by_key(|&h| (by_hour[h], std::cmp::Reverse(h))).unwrap();
    let cfg = SynthConfig::small();
    let (am, pm) = (argmax(0..12), argmax(12..24));

    let counts: BTreeMap<String, u64> =
        serde_json::from_str(&fs::read_to_string(dir.join("event_counts.json")).unwrap()).unwrap();
    let emitted: BTreeMap<String, u64> = truth.emission_counts.iter().map(|(d, n)| (d.to_string(), *n)).collect();

    let ok = keys == expected && am == cfg.am_peak_hour as usize && pm == cfg.pm_peak_hour as usize && counts == emitted;
    r.check(
        8,
        "reports",
        ok,
        format!(
            "trip_stats fields exact: {}, departure modes {am}h/{pm}h (planted {}h/{}h), event counts equal emissions on {} days: {}",
            keys == expected,
            cfg.am_peak_hour,
            cfg.pm_peak_hour,
            emitted.len(),
            counts == emitted
        ),
    );
}

fn criterion_9(r: &mut Report, first: &PipelineOutcome, dir: &Path) {
    let again = run_pipeline(&small_settings(dir)).unwrap();
    let (a, b) = (&first.manifest, &again.manifest);
    let same = a.inputs == b.inputs && a.outputs == b.outputs && a.run_id == b.run_id;
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let recorded = on_disk["outputs"].as_object().unwrap().len() == a.outputs.len();
    r.check(
        9,
        "repeated pipeline gives identical digests",
        same && recorded,
        format!("{} input and {} output digests compared, identical: {same}", a.inputs.len(), a.outputs.len()),
    );
}

fn main() {
    let mut report = Report { failed: 0 };
    let tmp = tempfile::tempdir().unwrap();
    let (run_a, run_b) = (tmp.path().join("a"), tmp.path().join("b"));

    criterion_1(&mut report);
    let planted = planted();
    criterion_2(&mut report, &planted);
    criterion_3(&mut report, &planted);
    criterion_4(&mut report, &planted);
    let (outcome, truth) = criterion_5(&mut report, &run_a);
    criterion_6(&mut report, &run_a, &truth);
    criterion_7(&mut report);
    criterion_8(&mut report, &run_a, &truth);
    criterion_9(&mut report, &outcome, &run_b);

    if report.failed > 0 {
        println!("{} acceptance criteria failed", report.failed);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
