//! Exportable views of a factorization and of the detected trips: component
//! maps, label associations, user samples and temporal histograms.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{input, Result};
use crate::factorize::Factorization;
use crate::geo::{GeoPoint, Tower, TowerLabel};
use crate::ingest::Event;
use crate::trips::Trip;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFeature {
    pub tower_id: String,
    pub location: GeoPoint,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMap {
    pub component: usize,
    pub features: Vec<ComponentFeature>,
    pub display_name: Option<String>,
    /// The component has no positive tower weight.
    pub degenerate: bool,
}

impl ComponentMap {
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .features
            .iter()
            .map(|f| {
                json!({
                    "type": "Feature",
                    "geometry": { "type": "Point", "coordinates": [f.location.lon(), f.location.lat()] },
                    "properties": { "tower_id": f.tower_id, "weight": f.weight, "component": self.component },
                })
            })
            .collect();
        json!({
            "type": "FeatureCollection",
            "component": self.component,
            "display_name": self.display_name,
            "degenerate": self.degenerate,
            "features": features,
        })
    }
}

/// Tower weights of component `c`. `towers` must be aligned with the
/// columns of `f.t`.
pub fn component_map(f: &Factorization, towers: &[&Tower], c: usize, display_name: Option<String>) -> Result<ComponentMap> {
    if c >= f.k {
        return input(format!("component {c} out of range for k = {}", f.k));
    }
    if towers.len() != f.t.ncols() {
        return input("tower list does not match factor columns");
    }
    let features: Vec<ComponentFeature> = towers
        .iter()
        .zip(f.t.row(c).iter())
        .filter(|(_, w)| **w > 0.0)
        .map(|(t, w)| ComponentFeature { tower_id: t.id.clone(), location: t.location, weight: *w })
        .collect();
    Ok(ComponentMap { component: c, degenerate: features.is_empty(), features, display_name })
}

pub fn component_geojson(f: &Factorization, towers: &[&Tower], c: usize) -> Result<Value> {
    component_map(f, towers, c, None).map(|m| m.to_geojson())
}

/// Mean tower weight of every component over each label group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationTable {
    pub k: usize,
    pub labels: Vec<TowerLabel>,
    /// `mean[c][g]`; `None` when the group has no towers to average.
    pub mean: Vec<Vec<Option<f64>>>,
    /// Towers per label group (the averaging population).
    pub counts: Vec<usize>,
    pub positive_only: bool,
}

impl AssociationTable {
    pub fn get(&self, c: usize, label: TowerLabel) -> Option<f64> {
        let g = self.labels.iter().position(|l| *l == label)?;
        self.mean[c][g]
    }

    /// Label with the highest mean for component `c`.
    pub fn top_label(&self, c: usize) -> Option<TowerLabel> {
        self.labels
            .iter()
            .zip(&self.mean[c])
            .filter_map(|(l, m)| m.map(|m| (*l, m)))
            .fold(None, |best: Option<(TowerLabel, f64)>, (l, m)| match best {
                Some((_, bm)) if bm >= m => best,
                _ => Some((l, m)),
            })
            .map(|(l, _)| l)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["component", "label", "mean_weight", "n_towers"])?;
        for c in 0..self.k {
            for (g, label) in self.labels.iter().enumerate() {
                let mean = self.mean[c][g].map(|m| format!("{m:?}")).unwrap_or_default();
                w.write_record([c.to_string(), label.as_str().to_owned(), mean, self.counts[g].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per component, the unweighted mean of `T[c, j]` over the towers of each
/// display-label group. With `positive_only` a tower only counts for the
/// components where its weight is positive.
pub fn label_association(f: &Factorization, column_labels: &[TowerLabel], positive_only: bool) -> Result<AssociationTable> {
    if column_labels.len() != f.t.ncols() {
        return input("label list does not match factor columns");
    }
    let labels = TowerLabel::ALL.to_vec();
    let counts: Vec<usize> = labels.iter().map(|l| column_labels.iter().filter(|x| *x == l).count()).collect();
    let mean = (0..f.k)
        .map(|c| {
            labels
                .iter()
                .map(|l| {
                    let row = f.t.row(c);
                    let weights = column_labels
                        .iter()
                        .zip(row.iter())
                        .filter(|(x, w)| *x == l && (!positive_only || **w > 0.0))
                        .map(|(_, w)| *w);
                    let (n, sum) = weights.fold((0usize, 0.0), |(n, s), w| (n + 1, s + w));
                    (n > 0).then(|| sum / n as f64)
                })
                .collect()
        })
        .collect();
    Ok(AssociationTable { k: f.k, labels, mean, counts, positive_only })
}

/// Index of the largest entry, lowest index on ties; `None` for an
/// all-zero (unassigned) row.
pub fn dominant_component(row: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (c, &v) in row.iter().enumerate() {
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((c, v));
        }
    }
    best.map(|(c, _)| c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSample {
    /// Row indices into `U`, in display order.
    pub users: Vec<usize>,
    /// L1-normalized user rows, aligned with `users`.
    pub rows: Vec<Vec<f64>>,
    pub dominant: Vec<Option<usize>>,
}

/// Seeded uniform sample of user rows, sorted by dominant component and
/// then by dominant weight (descending). Unassigned rows go last.
pub fn user_component_sample(f: &Factorization, n: usize, seed: u64) -> UserSample {
    let m = f.u.nrows();
    let n = n.min(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, m, n).into_vec();
    let mut entries: Vec<(usize, Vec<f64>, Option<usize>)> = picked
        .into_iter()
        .map(|i| {
            let raw: Vec<f64> = f.u.row(i).iter().copied().collect();
            let total: f64 = raw.iter().sum();
            let row: Vec<f64> = if total > 0.0 { raw.iter().map(|v| v / total).collect() } else { raw };
            let dom = dominant_component(&row);
            (i, row, dom)
        })
        .collect();
    entries.sort_by(|a, b| {
        let key = |e: &(usize, Vec<f64>, Option<usize>)| e.2.map(|c| (c, e.1[c])).unwrap_or((usize::MAX, 0.0));
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0).then(kb.1.total_cmp(&ka.1)).then(a.0.cmp(&b.0))
    });
    UserSample {
        users: entries.iter().map(|e| e.0).collect(),
        dominant: entries.iter().map(|e| e.2).collect(),
        rows: entries.into_iter().map(|e| e.1).collect(),
    }
}

/// Trip departures per weekday (Monday first) and hour of day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepartureHistogram {
    pub counts: [[u64; 24]; 7],
}

impl DepartureHistogram {
    pub fn total_by_hour(&self) -> [u64; 24] {
        let mut out = [0; 24];
        for day in &self.counts {
            for (h, c) in day.iter().enumerate() {
                out[h] += c;
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["weekday", "hour", "trips"])?;
        for (d, day) in self.counts.iter().enumerate() {
            let name = Weekday::try_from(d as u8).expect("weekday index").to_string();
            for (h, c) in day.iter().enumerate() {
                w.write_record([name.clone(), h.to_string(), c.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn departure_histogram<'a>(trips: impl IntoIterator<Item = &'a Trip>) -> DepartureHistogram {
    let mut counts = [[0u64; 24]; 7];
    for t in trips {
        let day = t.date.weekday().num_days_from_monday() as usize;
        counts[day][(t.start_t / 3600).min(23) as usize] += 1;
    }
    DepartureHistogram { counts }
}

pub fn event_counts<'a>(events: impl IntoIterator<Item = &'a Event>) -> BTreeMap<NaiveDate, u64> {
    let mut out = BTreeMap::new();
    for e in events {
        *out.entry(e.timestamp.date()).or_insert(0) += 1;
    }
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMatch {
    /// `assignment[p]` is the component matched to reference vector `p`.
    pub assignment: Vec<usize>,
    pub cosines: Vec<f64>,
    pub mean_cosine: f64,
}

/// One-to-one matching of reference vectors (e.g. planted tower
/// memberships) to rows of `t` maximizing the total cosine similarity.
/// Exact dynamic program over component subsets; needs `k <= 20`.
pub fn match_components(t: &DMatrix<f64>, references: &[Vec<f64>]) -> Result<ComponentMatch> {
    let (k, p) = (t.nrows(), references.len());
    if p == 0 || p > k {
        return input(format!("cannot match {p} references to {k} components"));
    }
    if k > 20 {
        return input("component matching supports at most 20 components");
    }
    if references.iter().any(|r| r.len() != t.ncols()) {
        return input("reference length does not match factor columns");
    }
    let rows: Vec<Vec<f64>> = (0..k).map(|c| t.row(c).iter().copied().collect()).collect();
    let sim: Vec<Vec<f64>> = references.iter().map(|r| rows.iter().map(|row| cosine(r, row)).collect()).collect();
    let states = 1usize << k;
    let mut best = vec![f64::NEG_INFINITY; states];
    let mut choice = vec![usize::MAX; states];
    best[0] = 0.0;
    for mask in 0..states {
        let used = mask.count_ones() as usize;
        if used >= p || best[mask] == f64::NEG_INFINITY {
            continue;
        }
        for c in (0..k).filter(|c| mask & (1 << c) == 0) {
            let next = mask | (1 << c);
            let value = best[mask] + sim[used][c];
            if value > best[next] {
                best[next] = value;
                choice[next] = c;
            }
        }
    }
    let end = (0..states)
        .filter(|m| m.count_ones() as usize == p)
        .max_by(|a, b| best[*a].total_cmp(&best[*b]).then(b.cmp(a)))
        .expect("some full assignment");
    let mut assignment = vec![0; p];
    let mut mask = end;
    for slot in (0..p).rev() {
        let c = choice[mask];
        assignment[slot] = c;
        mask &= !(1 << c);
    }
    let cosines: Vec<f64> = assignment.iter().enumerate().map(|(i, &c)| sim[i][c]).collect();
    let mean_cosine = cosines.iter().sum::<f64>() / p as f64;
    Ok(ComponentMatch { assignment, cosines, mean_cosine })
}
