//! Synthetic cities, commuter populations and event logs with planted
//! ground truth.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Days, NaiveDate, NaiveDateTime, NaiveTime};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_m, GeoPoint, InfraKind, InfraPolyline, Tower, TowerLabel, TowerRegistry};
use crate::ingest::Event;
use crate::sparse::CsrMatrix;
use crate::trips::EventClass;
use crate::waypoints::WaypointsMatrix;

/// Fewest towers a corridor may receive.
pub const MIN_CORRIDOR_TOWERS: usize = 2;

const DAY_START_S: u32 = 6 * 3600;
const DAY_END_S: u32 = 24 * 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorridorKind {
    Highway,
    MetroSurface,
    MetroUnderground,
}

impl CorridorKind {
    pub fn label(&self) -> TowerLabel {
        match self {
            CorridorKind::Highway => TowerLabel::Highway,
            CorridorKind::MetroSurface => TowerLabel::MetroSurface,
            CorridorKind::MetroUnderground => TowerLabel::MetroUnderground,
        }
    }

    fn cycle(c: usize) -> Self {
        [CorridorKind::Highway, CorridorKind::MetroSurface, CorridorKind::MetroUnderground][c % 3]
    }
}

/// A straight radial corridor leaving the city center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorSpec {
    pub kind: CorridorKind,
    /// Clockwise from north.
    pub bearing_deg: f64,
    /// Distance from the center to the corridor's inner end.
    pub start_m: f64,
    pub length_m: f64,
    /// Relative share of the corridor towers placed on this corridor.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_towers: usize,
    pub k_true: usize,
    pub corridors: Vec<CorridorSpec>,
    /// Share of towers scattered uniformly instead of placed on corridors.
    pub background_fraction: f64,
    pub commuter_fraction: f64,
    /// Fractions of corridor length, measured outward, where commuters live
    /// and work.
    pub home_band: (f64, f64),
    pub work_band: (f64, f64),
    /// Inclusive range of seconds between consecutive events.
    pub billing_interval_s: (u32, u32),
    pub noise_event_rate: f64,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub am_peak_hour: u32,
    pub pm_peak_hour: u32,
    /// Trip speed range in km/h.
    pub speed_kmh: (f64, f64),
    pub center: (f64, f64),
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_users: usize, n_towers: usize, k_true: usize) -> Self {
        let corridors = (0..k_true)
            .map(|c| CorridorSpec {
                kind: CorridorKind::cycle(c),
                bearing_deg: 20.0 + 360.0 * c as f64 / k_true.max(1) as f64,
                start_m: 2_000.0,
                length_m: 20_000.0,
                density: 1.0,
            })
            .collect();
        SynthConfig {
            n_users,
            n_towers,
            k_true,
            corridors,
            background_fraction: 0.2,
            commuter_fraction: 0.8,
            home_band: (0.6, 1.0),
            work_band: (0.0, 0.2),
            billing_interval_s: (900, 1800),
            noise_event_rate: 0.0,
            n_days: 14,
            start_date: NaiveDate::from_ymd_opt(2016, 7, 27).expect("valid date"),
            am_peak_hour: 8,
            pm_peak_hour: 18,
            speed_kmh: (15.0, 60.0),
            center: (-33.45, -70.65),
            seed: 0,
        }
    }

    /// 1,000 users, 200 towers, 4 corridors, two weeks.
    pub fn small() -> Self {
        SynthConfig::new(1_000, 200, 4)
    }

    pub fn tiny() -> Self {
        SynthConfig { n_days: 3, ..SynthConfig::new(60, 40, 2) }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.n_users == 0 || self.n_towers == 0 || self.k_true == 0 || self.n_days == 0 {
            return cfg("n_users, n_towers, k_true and n_days must be positive".into());
        }
        if self.corridors.len() != self.k_true {
            return cfg(format!("{} corridors for k_true = {}", self.corridors.len(), self.k_true));
        }
        let (lo, hi) = self.billing_interval_s;
        if lo < 60 || lo > hi || hi > 6 * 3600 {
            return cfg(format!("billing interval {lo}..{hi} s outside 60 s .. 6 h"));
        }
        for (name, v) in [
            ("background_fraction", self.background_fraction),
            ("commuter_fraction", self.commuter_fraction),
            ("noise_event_rate", self.noise_event_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return cfg(format!("{name} = {v} outside [0, 1]"));
            }
        }
        for (name, (a, b)) in [("home_band", self.home_band), ("work_band", self.work_band)] {
            if !(0.0 <= a && a < b && b <= 1.0) {
                return cfg(format!("{name} {a}..{b} is not a sub-range of [0, 1]"));
            }
        }
        let (s0, s1) = self.speed_kmh;
        if !(s0 > 0.0 && s0 <= s1) {
            return cfg(format!("speed range {s0}..{s1} km/h"));
        }
        if !(self.am_peak_hour >= 6 && self.am_peak_hour < self.pm_peak_hour && self.pm_peak_hour <= 21) {
            return cfg("peak hours must satisfy 6 <= am < pm <= 21".into());
        }
        for (c, spec) in self.corridors.iter().enumerate() {
            if !(spec.length_m > 0.0 && spec.start_m >= 0.0 && spec.density > 0.0) {
                return cfg(format!("corridor {c}: length and density must be positive"));
            }
        }
        GeoPoint::new(self.center.0, self.center.1).map_err(|e| Error::Config(e.to_string()))?;
        let counts = self.corridor_tower_counts();
        if let Some(c) = counts.iter().position(|&n| n < MIN_CORRIDOR_TOWERS) {
            return cfg(format!("corridor {c} receives {} towers, need {MIN_CORRIDOR_TOWERS}", counts[c]));
        }
        Ok(())
    }

    fn background_count(&self) -> usize {
        (self.n_towers as f64 * self.background_fraction).floor() as usize
    }

    /// Corridor towers split by density, remainders to the lowest indices.
    pub fn corridor_tower_counts(&self) -> Vec<usize> {
        let total = self.n_towers - self.background_count().min(self.n_towers);
        let mass: f64 = self.corridors.iter().map(|c| c.density).sum();
        let mut counts: Vec<usize> =
            self.corridors.iter().map(|c| (total as f64 * c.density / mass).floor() as usize).collect();
        let mut left = total - counts.iter().sum::<usize>().min(total);
        let n = counts.len();
        for slot in counts.iter_mut().take(left.min(n)) {
            *slot += 1;
        }
        left = left.saturating_sub(n);
        if let Some(first) = counts.first_mut() {
            *first += left;
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct SynthCity {
    pub registry: TowerRegistry,
    pub infrastructure: Vec<InfraPolyline>,
    /// Planted corridor of each tower in registry order; `None` for background.
    pub tower_component: Vec<Option<usize>>,
    /// Registry indices of each corridor's towers, ordered outward.
    pub corridor_towers: Vec<Vec<usize>>,
    /// Distance along each corridor of the towers in `corridor_towers`.
    pub corridor_offsets: Vec<Vec<f64>>,
    pub corridors: Vec<CorridorSpec>,
    center: GeoPoint,
}

fn corridor_point(center: GeoPoint, spec: &CorridorSpec, along_m: f64) -> Result<GeoPoint> {
    let r = spec.start_m + along_m;
    let b = spec.bearing_deg.to_radians();
    center.offset_m(r * b.sin(), r * b.cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub user_id: String,
    pub timestamp: NaiveDateTime,
    pub tower_id: String,
    pub class: EventClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTrip {
    pub user_id: String,
    pub date: NaiveDate,
    pub depart_s: u32,
    pub arrive_s: u32,
    pub component: usize,
}

/// Planted structure behind a synthetic dataset. Event-level fields are
/// empty for directly generated matrices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub k_true: usize,
    /// Per user, the planted mass on each component; all zeros for users
    /// without a commute.
    pub user_mixture: BTreeMap<String, Vec<f64>>,
    pub tower_component: BTreeMap<String, Option<usize>>,
    /// Infrastructure label of each planted component, when it has one.
    pub component_labels: Vec<Option<TowerLabel>>,
    pub events: Vec<TruthEvent>,
    pub trips: Vec<TruthTrip>,
    pub emission_counts: BTreeMap<NaiveDate, u64>,
}

impl GroundTruth {
    /// One 0/1 vector per planted component over the given tower columns.
    pub fn component_indicators(&self, cols: &[String]) -> Vec<Vec<f64>> {
        (0..self.k_true)
            .map(|c| {
                cols.iter()
                    .map(|id| if self.tower_component.get(id).copied().flatten() == Some(c) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }
}

pub fn synth_city(cfg: &SynthConfig) -> Result<SynthCity> {
    cfg.validate()?;
    let center = GeoPoint::new(cfg.center.0, cfg.center.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut towers = Vec::with_capacity(cfg.n_towers);
    let mut tower_component = Vec::with_capacity(cfg.n_towers);
    let mut corridor_towers = Vec::with_capacity(cfg.k_true);
    let mut corridor_offsets = Vec::with_capacity(cfg.k_true);
    let mut infrastructure = Vec::new();

    for (c, n) in cfg.corridor_tower_counts().into_iter().enumerate() {
        let spec = &cfg.corridors[c];
        let b = spec.bearing_deg.to_radians();
        let (east, north) = (b.sin(), b.cos());
        let underground = spec.kind == CorridorKind::MetroUnderground;
        let mut ids = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for i in 0..n {
            let along = spec.length_m * (i as f64 + 0.5) / n as f64;
            let lateral = rng.random_range(-80.0..80.0);
            let r = spec.start_m + along;
            let loc = center.offset_m(r * east + lateral * north, r * north - lateral * east)?;
            ids.push(towers.len());
            offsets.push(along);
            towers.push(Tower {
                id: format!("T{:04}", towers.len()),
                name: format!("corridor {c} #{i}"),
                location: loc,
                indoor: underground,
                underground_metro: underground,
            });
            tower_component.push(Some(c));
        }
        corridor_towers.push(ids);
        corridor_offsets.push(offsets);
        let kind = match spec.kind {
            CorridorKind::Highway => Some(InfraKind::Highway),
            CorridorKind::MetroSurface => Some(InfraKind::MetroSurface),
            CorridorKind::MetroUnderground => None,
        };
        if let Some(kind) = kind {
            let ends = vec![corridor_point(center, spec, 0.0)?, corridor_point(center, spec, spec.length_m)?];
            infrastructure.push(InfraPolyline::new(kind, ends)?);
        }
    }

    let radius = cfg.corridors.iter().map(|c| c.start_m + c.length_m).fold(0.0, f64::max);
    for i in 0..cfg.n_towers - towers.len() {
        let r = radius * rng.random::<f64>().sqrt();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let loc = center.offset_m(r * theta.cos(), r * theta.sin())?;
        towers.push(Tower {
            id: format!("T{:04}", towers.len()),
            name: format!("background #{i}"),
            location: loc,
            // every fifth background tower is an in-door site outside the metro
            indoor: i % 5 == 4,
            underground_metro: false,
        });
        tower_component.push(None);
    }

    Ok(SynthCity {
        registry: TowerRegistry::new(towers)?,
        infrastructure,
        tower_component,
        corridor_towers,
        corridor_offsets,
        corridors: cfg.corridors.clone(),
        center,
    })
}

impl SynthCity {
    fn point_on(&self, c: usize, along_m: f64) -> Result<GeoPoint> {
        corridor_point(self.center, &self.corridors[c], along_m)
    }

    fn usable_indices(&self) -> Vec<usize> {
        self.registry.towers().iter().enumerate().filter(|(_, t)| t.is_usable()).map(|(i, _)| i).collect()
    }

    fn nearest_usable(&self, usable: &[usize], p: GeoPoint) -> usize {
        let towers = self.registry.towers();
        *usable
            .iter()
            .min_by(|&&a, &&b| haversine_m(towers[a].location, p).total_cmp(&haversine_m(towers[b].location, p)))
            .expect("city has usable towers")
    }

    pub fn ground_truth_towers(&self) -> BTreeMap<String, Option<usize>> {
        self.registry.towers().iter().zip(&self.tower_component).map(|(t, c)| (t.id.clone(), *c)).collect()
    }
}

struct Commute {
    component: usize,
    home_along: f64,
    work_along: f64,
    home: usize,
    work: usize,
}

struct Leg {
    depart: u32,
    arrive: u32,
    from: f64,
    to: f64,
}

fn user_rng(seed: u64, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64 + 1);
    rng
}

/// Event log of the population living in `city`, ordered by user and time,
/// with the planted truth behind every event.
pub fn synth_events(cfg: &SynthConfig, city: &SynthCity) -> Result<(Vec<Event>, GroundTruth)> {
    cfg.validate()?;
    if city.corridor_towers.len() != cfg.k_true {
        return Err(Error::Config("city was generated for a different k_true".into()));
    }
    let usable = city.usable_indices();
    if usable.is_empty() {
        return Err(Error::Config("city has no usable towers".into()));
    }
    let towers = city.registry.towers();
    let width = cfg.n_users.to_string().len().max(4);
    let (lo, hi) = cfg.billing_interval_s;
    let speed = (cfg.speed_kmh.0 / 3.6, cfg.speed_kmh.1 / 3.6);

    let mut truth = GroundTruth {
        k_true: cfg.k_true,
        tower_component: city.ground_truth_towers(),
        component_labels: city.corridors.iter().map(|c| Some(c.kind.label())).collect(),
        ..GroundTruth::default()
    };
    let mut events = Vec::new();

    for u in 0..cfg.n_users {
        let mut rng = user_rng(cfg.seed, u);
        let user_id = format!("u{u:0width$}");
        let commute = if rng.random_bool(cfg.commuter_fraction) {
            let c = rng.random_range(0..cfg.k_true);
            let n = city.corridor_towers[c].len();
            let pick = |rng: &mut ChaCha8Rng, (a, b): (f64, f64)| {
                let lo = ((a * n as f64).floor() as usize).min(n - 1);
                let hi = ((b * n as f64).ceil() as usize).clamp(lo + 1, n);
                rng.random_range(lo..hi)
            };
            let h = pick(&mut rng, cfg.home_band);
            let mut w = pick(&mut rng, cfg.work_band);
            if w == h {
                w = if h == 0 { 1 } else { h - 1 };
            }
            Some(Commute {
                component: c,
                home_along: city.corridor_offsets[c][h],
                work_along: city.corridor_offsets[c][w],
                home: city.corridor_towers[c][h],
                work: city.corridor_towers[c][w],
            })
        } else {
            None
        };
        let idle = usable[rng.random_range(0..usable.len())];
        let mut mixture = vec![0.0; cfg.k_true];
        if let Some(cm) = &commute {
            mixture[cm.component] = 1.0;
        }
        truth.user_mixture.insert(user_id.clone(), mixture);

        for d in 0..cfg.n_days {
            let date = cfg.start_date + Days::new(d as u64);
            let mut legs = Vec::new();
            if let Some(cm) = &commute {
                let dist = (cm.work_along - cm.home_along).abs();
                for (peak, from, to) in
                    [(cfg.am_peak_hour, cm.home_along, cm.work_along), (cfg.pm_peak_hour, cm.work_along, cm.home_along)]
                {
                    let depart = peak * 3600 + rng.random_range(900..=3600);
                    let v = rng.random_range(speed.0..=speed.1);
                    let arrive = depart + ((dist / v).round() as u32).max(60);
                    legs.push(Leg { depart, arrive, from, to });
                }
            }

            let mut times = Vec::new();
            let mut t = DAY_START_S + rng.random_range(0..=hi);
            while t < DAY_END_S {
                times.push(t);
                t += rng.random_range(lo..=hi);
            }

            let mut classes = vec![EventClass::Stationary; times.len()];
            let mut tower_at = Vec::with_capacity(times.len());
            for &t in &times {
                let idx = match &commute {
                    None => idle,
                    Some(cm) => {
                        let mut idx = cm.home;
                        for Leg { depart, arrive, from, to } in &legs {
                            if t <= *depart {
                                break;
                            }
                            if t < *arrive {
                                let frac = (t - depart) as f64 / (arrive - depart) as f64;
                                let along = from + (to - from) * frac;
                                idx = city.nearest_usable(&usable, city.point_on(cm.component, along)?);
                                break;
                            }
                            idx = if *to == cm.work_along { cm.work } else { cm.home };
                        }
                        idx
                    }
                };
                tower_at.push(idx);
            }
            for Leg { depart, arrive, .. } in &legs {
                let start = times.iter().rposition(|&t| t <= *depart);
                let end = times.iter().position(|&t| t >= *arrive);
                if let (Some(s), Some(e)) = (start, end) {
                    classes[s] = EventClass::TripStart;
                    for c in &mut classes[s + 1..e] {
                        *c = EventClass::WithinTrip;
                    }
                    classes[e] = EventClass::TripEnd;
                }
                let cm = commute.as_ref().expect("legs imply a commute");
                truth.trips.push(TruthTrip {
                    user_id: user_id.clone(),
                    date,
                    depart_s: *depart,
                    arrive_s: *arrive,
                    component: cm.component,
                });
            }

            for ((&t, &idx), &class) in times.iter().zip(&tower_at).zip(&classes) {
                let idx = if class == EventClass::Stationary && rng.random_bool(cfg.noise_event_rate) {
                    usable[rng.random_range(0..usable.len())]
                } else {
                    idx
                };
                let ts = date.and_time(NaiveTime::from_num_seconds_from_midnight_opt(t, 0).expect("t < 24 h"));
                let tower_id = towers[idx].id.clone();
                truth.events.push(TruthEvent { user_id: user_id.clone(), timestamp: ts, tower_id: tower_id.clone(), class });
                events.push(Event { user_id: user_id.clone(), timestamp: ts, tower_id });
            }
            *truth.emission_counts.entry(date).or_default() += times.len() as u64;
        }
    }
    Ok((events, truth))
}

/// Row-stochastic waypoints matrix with towers split into `k_true`
/// contiguous blocks. Each user puts `1 - noise` of its mass on a dominant
/// block, shared 70/30 with a secondary block for one user in five, and the
/// remaining `noise` evenly over all towers.
pub fn synth_waypoints(
    n_users: usize,
    n_towers: usize,
    k_true: usize,
    noise: f64,
    seed: u64,
) -> Result<(WaypointsMatrix, GroundTruth)> {
    if k_true == 0 || n_users == 0 || k_true > n_towers {
        return Err(Error::Input(format!("need 1 <= k_true <= n_towers, got k_true = {k_true}, n_towers = {n_towers}")));
    }
    if !(0.0..1.0).contains(&noise) {
        return Err(Error::Input(format!("noise {noise} outside [0, 1)")));
    }
    let block_of = |j: usize| j * k_true / n_towers;
    let blocks: Vec<Vec<usize>> = (0..k_true).map(|b| (0..n_towers).filter(|&j| block_of(j) == b).collect()).collect();
    let width = n_users.to_string().len().max(4);
    let cols: Vec<String> = (0..n_towers).map(|j| format!("T{j:04}")).collect();
    let rows: Vec<String> = (0..n_users).map(|i| format!("u{i:0width$}")).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = GroundTruth {
        k_true,
        tower_component: cols.iter().enumerate().map(|(j, id)| (id.clone(), Some(block_of(j)))).collect(),
        component_labels: vec![None; k_true],
        ..GroundTruth::default()
    };
    let mut triplets = Vec::new();
    for (i, user) in rows.iter().enumerate() {
        let primary = rng.random_range(0..k_true);
        let secondary = (k_true > 1 && rng.random_bool(0.2)).then(|| {
            let s = rng.random_range(0..k_true - 1);
            if s >= primary { s + 1 } else { s }
        });
        let mut mixture = vec![0.0; k_true];
        let mut shares = vec![(primary, 1.0 - noise)];
        if let Some(s) = secondary {
            shares = vec![(primary, 0.7 * (1.0 - noise)), (s, 0.3 * (1.0 - noise))];
        }
        let mut row = vec![noise / n_towers as f64; n_towers];
        for (b, mass) in shares {
            mixture[b] = mass;
            let block = &blocks[b];
            let visits = rng.random_range(3..=8).min(block.len());
            for j in index::sample(&mut rng, block.len(), visits) {
                row[block[j]] += mass / visits as f64;
            }
        }
        let total: f64 = row.iter().sum();
        triplets.extend(row.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(j, v)| (i, j, v / total)));
        truth.user_mixture.insert(user.clone(), mixture);
    }
    let matrix = CsrMatrix::from_triplets(n_users, n_towers, &triplets)?;
    Ok((WaypointsMatrix::new(rows, cols, matrix)?, truth))
}
