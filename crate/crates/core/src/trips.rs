//! Trip detection on space-time trajectories.
//!
//! A user-day becomes a trajectory of (seconds since midnight, cumulative
//! meters travelled between consecutive towers). The trajectory is simplified
//! with a vertical-deviation Douglas-Peucker pass, each simplified segment is
//! classified by its slope, and maximal runs of moving segments become trips.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_m, TowerRegistry};
use crate::ingest::{format_timestamp, Event, UserDay};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    /// Seconds since local midnight.
    pub t: f64,
    /// Cumulative meters since the first event of the day.
    pub d: f64,
    /// Index into the user-day event list.
    pub event_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentClass {
    Stationary,
    Moving,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    Stationary,
    TripStart,
    WithinTrip,
    TripEnd,
}

impl EventClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventClass::Stationary => "stationary",
            EventClass::TripStart => "trip_start",
            EventClass::WithinTrip => "within_trip",
            EventClass::TripEnd => "trip_end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRuleConfig {
    pub simplify_tol_m: f64,
    /// Below this slope a segment is an activity, not a movement.
    pub v_stationary_ms: f64,
    /// Above this slope a segment is tower ping-pong noise.
    pub v_max_ms: f64,
    pub d_min_m: f64,
}

impl Default for TripRuleConfig {
    fn default() -> Self {
        TripRuleConfig { simplify_tol_m: 500.0, v_stationary_ms: 0.42, v_max_ms: 42.0, d_min_m: 500.0 }
    }
}

impl TripRuleConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.simplify_tol_m, self.v_stationary_ms, self.v_max_ms, self.d_min_m]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err(Error::Config("trip rule thresholds must be positive".into()));
        }
        if self.v_stationary_ms >= self.v_max_ms {
            return Err(Error::Config("v_stationary_ms must be below v_max_ms".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedSegment {
    pub start: SpaceTimePoint,
    pub end: SpaceTimePoint,
    pub class: SegmentClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub user_id: String,
    pub date: NaiveDate,
    pub origin: Event,
    pub destination: Event,
    pub within: Vec<Event>,
    pub start_t: u32,
    pub end_t: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DayTrips {
    pub trips: Vec<Trip>,
    /// One class per event of the day, aligned with `UserDay::events`.
    pub classes: Vec<EventClass>,
}

/// Builds the space-time trajectory of a day. Events sharing a timestamp
/// collapse to the last of them.
pub fn build_trajectory(day: &UserDay, registry: &TowerRegistry) -> Result<Vec<SpaceTimePoint>> {
    let mut kept: Vec<usize> = Vec::with_capacity(day.events.len());
    for (i, e) in day.events.iter().enumerate() {
        match kept.last_mut() {
            Some(last) if day.events[*last].timestamp == e.timestamp => *last = i,
            _ => kept.push(i),
        }
    }
    let mut points = Vec::with_capacity(kept.len());
    let mut prev = None;
    let mut d = 0.0;
    for i in kept {
        let e = &day.events[i];
        let tower = registry
            .get(&e.tower_id)
            .ok_or_else(|| Error::Input(format!("unknown tower {}", e.tower_id)))?;
        if let Some(p) = prev {
            d += haversine_m(p, tower.location);
        }
        prev = Some(tower.location);
        points.push(SpaceTimePoint { t: f64::from(e.seconds_of_day()), d, event_index: i });
    }
    Ok(points)
}

fn interp_d(a: &SpaceTimePoint, b: &SpaceTimePoint, t: f64) -> f64 {
    if b.t == a.t {
        return a.d;
    }
    a.d + (b.d - a.d) * (t - a.t) / (b.t - a.t)
}

/// Douglas-Peucker with the vertical (distance-axis) deviation metric.
pub fn simplify(points: &[SpaceTimePoint], tol_m: f64) -> Vec<SpaceTimePoint> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    let mut stack = vec![(0, points.len() - 1)];
    while let Some((s, e)) = stack.pop() {
        if e - s < 2 {
            continue;
        }
        let (a, b) = (&points[s], &points[e]);
        let (mut worst, mut worst_dev) = (s, 0.0);
        for (i, p) in points.iter().enumerate().take(e).skip(s + 1) {
            let dev = (p.d - interp_d(a, b, p.t)).abs();
            if dev > worst_dev {
                worst = i;
                worst_dev = dev;
            }
        }
        if worst_dev > tol_m {
            keep[worst] = true;
            stack.push((s, worst));
            stack.push((worst, e));
        }
    }
    points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect()
}

pub fn classify_segment(a: &SpaceTimePoint, b: &SpaceTimePoint, cfg: &TripRuleConfig) -> SegmentClass {
    let dd = b.d - a.d;
    let dt = b.t - a.t;
    let v = dd / dt;
    if v < cfg.v_stationary_ms || dd < cfg.d_min_m {
        SegmentClass::Stationary
    } else if v > cfg.v_max_ms {
        SegmentClass::Invalid
    } else {
        SegmentClass::Moving
    }
}

pub fn classify_segments(simplified: &[SpaceTimePoint], cfg: &TripRuleConfig) -> Vec<ClassifiedSegment> {
    simplified
        .windows(2)
        .map(|w| ClassifiedSegment { start: w[0], end: w[1], class: classify_segment(&w[0], &w[1], cfg) })
        .collect()
}

/// Turns maximal runs of moving segments into trips and classifies every
/// event of the day.
pub fn extract_trips(day: &UserDay, segments: &[ClassifiedSegment]) -> DayTrips {
    let mut classes = vec![EventClass::Stationary; day.events.len()];
    let mut trips = Vec::new();
    let mut i = 0;
    while i < segments.len() {
        if segments[i].class != SegmentClass::Moving {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < segments.len() && segments[j + 1].class == SegmentClass::Moving {
            j += 1;
        }
        let (a, b) = (segments[i].start.event_index, segments[j].end.event_index);
        let (origin, destination) = (&day.events[a], &day.events[b]);
        classes[a] = EventClass::TripStart;
        classes[b] = EventClass::TripEnd;
        let mut within = Vec::new();
        for k in a + 1..b {
            let e = &day.events[k];
            if e.timestamp > origin.timestamp && e.timestamp < destination.timestamp {
                classes[k] = EventClass::WithinTrip;
                within.push(e.clone());
            }
        }
        trips.push(Trip {
            user_id: day.user_id.clone(),
            date: day.date,
            origin: origin.clone(),
            destination: destination.clone(),
            within,
            start_t: origin.seconds_of_day(),
            end_t: destination.seconds_of_day(),
        });
        i = j + 1;
    }
    DayTrips { trips, classes }
}

/// Runs the full rule chain on one user-day.
pub fn detect_trips(day: &UserDay, registry: &TowerRegistry, cfg: &TripRuleConfig) -> Result<DayTrips> {
    let trajectory = build_trajectory(day, registry)?;
    let simplified = simplify(&trajectory, cfg.simplify_tol_m);
    let segments = classify_segments(&simplified, cfg);
    Ok(extract_trips(day, &segments))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TripStats {
    pub total_trips: u64,
    pub total_users: u64,
    pub users_with_within_trip_events: u64,
    pub mean_trips_per_user: f64,
    pub std_trips_per_user: f64,
    pub min_trips_per_user: f64,
    pub p25_trips_per_user: f64,
    pub p50_trips_per_user: f64,
    pub p75_trips_per_user: f64,
    pub max_trips_per_user: f64,
}

/// Trip and within-trip event totals of one user over the period.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTripCount {
    pub trips: u64,
    pub within_events: u64,
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summary of trips per user. Users with no trips are not counted; the
/// standard deviation is the sample one (zero for a single user) and
/// percentiles interpolate linearly.
pub fn trip_stats(per_user: &BTreeMap<String, UserTripCount>) -> TripStats {
    let mut counts: Vec<f64> = per_user.values().filter(|c| c.trips > 0).map(|c| c.trips as f64).collect();
    if counts.is_empty() {
        return TripStats::default();
    }
    counts.sort_by(f64::total_cmp);
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let std = if counts.len() > 1 {
        (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    TripStats {
        total_trips: per_user.values().map(|c| c.trips).sum(),
        total_users: counts.len() as u64,
        users_with_within_trip_events: per_user.values().filter(|c| c.trips > 0 && c.within_events > 0).count() as u64,
        mean_trips_per_user: mean,
        std_trips_per_user: std,
        min_trips_per_user: counts[0],
        p25_trips_per_user: percentile_sorted(&counts, 0.25),
        p50_trips_per_user: percentile_sorted(&counts, 0.50),
        p75_trips_per_user: percentile_sorted(&counts, 0.75),
        max_trips_per_user: counts[counts.len() - 1],
    }
}

pub fn write_trips_csv<'a, W: Write>(trips: impl IntoIterator<Item = &'a Trip>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "date", "start_t", "end_t", "origin_tower", "destination_tower", "n_within"])?;
    for t in trips {
        w.write_record([
            t.user_id.as_str(),
            &t.date.to_string(),
            &t.start_t.to_string(),
            &t.end_t.to_string(),
            t.origin.tower_id.as_str(),
            t.destination.tower_id.as_str(),
            &t.within.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_event_classes_csv<'a, W: Write>(
    days: impl IntoIterator<Item = (&'a UserDay, &'a [EventClass])>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "timestamp", "tower_id", "class"])?;
    for (day, classes) in days {
        for (e, c) in day.events.iter().zip(classes) {
            w.write_record([e.user_id.as_str(), &format_timestamp(&e.timestamp), e.tower_id.as_str(), c.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoPoint, Tower};
    use crate::ingest::parse_timestamp;
    use proptest::prelude::*;

    fn stp(t: f64, d: f64, i: usize) -> SpaceTimePoint {
        SpaceTimePoint { t, d, event_index: i }
    }

    /// Towers `name -> meters east of a Santiago origin`.
    fn line_registry(towers: &[(&str, f64)]) -> TowerRegistry {
        let origin = GeoPoint::new(-33.45, -70.66).unwrap();
        TowerRegistry::new(
            towers
                .iter()
                .map(|(id, east)| Tower {
                    id: (*id).into(),
                    name: (*id).into(),
                    location: origin.offset_m(*east, 0.0).unwrap(),
                    indoor: false,
                    underground_metro: false,
                })
                .collect(),
        )
        .unwrap()
    }

    fn day(events: &[(&str, &str)]) -> UserDay {
        let events: Vec<Event> = events
            .iter()
            .map(|(hms, tower)| Event::new("u", parse_timestamp(&format!("2016-07-27T{hms}")).unwrap(), *tower))
            .collect();
        UserDay { user_id: "u".into(), date: events[0].timestamp.date(), events }
    }

    #[test]
    fn trajectory_cases() {
        let reg = line_registry(&[("A", 0.0), ("B", 2000.0)]);
        let traj = build_trajectory(&day(&[("08:00:00", "A")]), &reg).unwrap();
        assert_eq!(traj, vec![stp(28_800.0, 0.0, 0)]);

        let traj = build_trajectory(&day(&[("08:00:00", "A"), ("08:30:00", "A")]), &reg).unwrap();
        assert_eq!(traj.iter().map(|p| p.d).collect::<Vec<_>>(), [0.0, 0.0]);

        let ab = haversine_m(reg.get("A").unwrap().location, reg.get("B").unwrap().location);
        assert!((ab - 2000.0).abs() < 1.0);
        let traj = build_trajectory(&day(&[("08:00:00", "A"), ("08:30:00", "B"), ("09:00:00", "A")]), &reg).unwrap();
        let d: Vec<f64> = traj.iter().map(|p| p.d).collect();
        assert_eq!(d, [0.0, ab, 2.0 * ab]);

        let empty = UserDay { user_id: "u".into(), date: NaiveDate::from_ymd_opt(2016, 7, 27).unwrap(), events: vec![] };
        assert!(build_trajectory(&empty, &reg).unwrap().is_empty());
    }

    #[test]
    fn trajectory_collapses_ties_to_last() {
        let reg = line_registry(&[("A", 0.0), ("B", 2000.0)]);
        let traj = build_trajectory(&day(&[("08:00:00", "A"), ("08:00:00", "B"), ("08:30:00", "B")]), &reg).unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj[0].event_index, 1);
        assert_eq!(traj[0].d, 0.0);
        assert_eq!(traj[1].d, 0.0);
    }

    #[test]
    fn simplify_short_and_collinear() {
        let two = vec![stp(0.0, 0.0, 0), stp(10.0, 5.0, 1)];
        assert_eq!(simplify(&two, 1.0), two);
        let line: Vec<_> = (0..10).map(|i| stp(i as f64 * 60.0, i as f64 * 300.0, i)).collect();
        let s = simplify(&line, 1.0);
        assert_eq!(s, vec![line[0], line[9]]);
    }

    #[test]
    fn simplify_three_point_threshold() {
        // chord from (0,0) to (1000,1000) passes 500 at t=500; middle sits at 1100
        let pts = vec![stp(0.0, 0.0, 0), stp(500.0, 1100.0, 1), stp(1000.0, 1000.0, 2)];
        assert_eq!(simplify(&pts, 500.0).len(), 3);
        assert_eq!(simplify(&pts, 700.0).len(), 2);
    }

    #[test]
    fn segment_rules() {
        let cfg = TripRuleConfig::default();
        assert_eq!(classify_segment(&stp(0.0, 0.0, 0), &stp(7200.0, 0.0, 1), &cfg), SegmentClass::Stationary);
        assert_eq!(classify_segment(&stp(0.0, 0.0, 0), &stp(600.0, 5000.0, 1), &cfg), SegmentClass::Moving);
        assert_eq!(classify_segment(&stp(0.0, 0.0, 0), &stp(300.0, 30_000.0, 1), &cfg), SegmentClass::Invalid);
        // fast but short: displacement floor wins
        assert_eq!(classify_segment(&stp(0.0, 0.0, 0), &stp(10.0, 400.0, 1), &cfg), SegmentClass::Stationary);
    }

    #[test]
    fn config_validation() {
        assert!(TripRuleConfig::default().validate().is_ok());
        let bad = TripRuleConfig { v_stationary_ms: 50.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let neg = TripRuleConfig { d_min_m: 0.0, ..Default::default() };
        assert!(neg.validate().is_err());
    }

    fn commute_registry() -> TowerRegistry {
        line_registry(&[("H", 0.0), ("C1", 2500.0), ("C2", 5000.0), ("C3", 7500.0), ("C4", 10_000.0), ("W", 10_200.0)])
    }

    #[test]
    fn stationary_day_has_no_trips() {
        let d = day(&[("07:00:00", "H"), ("09:00:00", "H"), ("12:00:00", "H")]);
        let out = detect_trips(&d, &commute_registry(), &TripRuleConfig::default()).unwrap();
        assert!(out.trips.is_empty());
        assert!(out.classes.iter().all(|c| *c == EventClass::Stationary));
    }

    #[test]
    fn single_commute_fixture() {
        let d = day(&[
            ("07:00:00", "H"),
            ("07:30:00", "H"),
            ("08:00:00", "H"),
            ("08:10:00", "C1"),
            ("08:20:00", "C2"),
            ("08:30:00", "C3"),
            ("08:40:00", "C4"),
            ("09:00:00", "W"),
            ("09:30:00", "W"),
            ("10:00:00", "W"),
        ]);
        let out = detect_trips(&d, &commute_registry(), &TripRuleConfig::default()).unwrap();
        assert_eq!(out.trips.len(), 1);
        use EventClass::*;
        assert_eq!(
            out.classes,
            [Stationary, Stationary, TripStart, WithinTrip, WithinTrip, WithinTrip, TripEnd, Stationary, Stationary, Stationary]
        );
        let trip = &out.trips[0];
        assert_eq!(trip.origin.tower_id, "H");
        assert_eq!(trip.destination.tower_id, "C4");
        assert_eq!(trip.within.len(), 3);
        assert_eq!((trip.start_t, trip.end_t), (8 * 3600, 8 * 3600 + 40 * 60));
    }

    #[test]
    fn two_trips_separated_by_long_stay() {
        let d = day(&[
            ("07:00:00", "H"),
            ("08:00:00", "H"),
            ("08:15:00", "C2"),
            ("08:30:00", "W"),
            ("10:00:00", "W"),
            ("12:30:00", "W"),
            ("12:30:00", "W"),
            ("14:30:00", "W"),
            ("14:45:00", "C2"),
            ("15:00:00", "H"),
            ("16:00:00", "H"),
        ]);
        let out = detect_trips(&d, &commute_registry(), &TripRuleConfig::default()).unwrap();
        assert_eq!(out.trips.len(), 2);
        assert!(out.trips[0].end_t <= out.trips[1].start_t);
        assert_eq!(out.classes.iter().filter(|c| **c == EventClass::TripStart).count(), 2);
        assert_eq!(out.classes.iter().filter(|c| **c == EventClass::TripEnd).count(), 2);
        // the collapsed duplicate timestamp stays stationary
        assert_eq!(out.classes[5], EventClass::Stationary);
    }

    #[test]
    fn invalid_segment_degrades_to_stationary() {
        let reg = line_registry(&[("A", 0.0), ("FAR", 30_000.0)]);
        let d = day(&[("08:00:00", "A"), ("08:05:00", "FAR"), ("08:10:00", "A")]);
        let out = detect_trips(&d, &reg, &TripRuleConfig::default()).unwrap();
        assert!(out.trips.is_empty());
        assert!(out.classes.iter().all(|c| *c == EventClass::Stationary));
    }

    #[test]
    fn trip_stats_cases() {
        assert_eq!(trip_stats(&BTreeMap::new()), TripStats::default());

        let one = BTreeMap::from([("a".to_string(), UserTripCount { trips: 1, within_events: 0 })]);
        let s = trip_stats(&one);
        assert_eq!(s.total_trips, 1);
        assert_eq!(s.mean_trips_per_user, 1.0);
        assert_eq!(s.std_trips_per_user, 0.0);
        assert_eq!((s.min_trips_per_user, s.p25_trips_per_user, s.p50_trips_per_user, s.p75_trips_per_user, s.max_trips_per_user), (1.0, 1.0, 1.0, 1.0, 1.0));

        let two = BTreeMap::from([
            ("a".to_string(), UserTripCount { trips: 10, within_events: 3 }),
            ("b".to_string(), UserTripCount { trips: 30, within_events: 0 }),
            ("c".to_string(), UserTripCount { trips: 0, within_events: 0 }),
        ]);
        let s = trip_stats(&two);
        assert_eq!(s.mean_trips_per_user, 20.0);
        assert_eq!(s.p50_trips_per_user, 20.0);
        assert_eq!(s.p25_trips_per_user, 15.0);
        assert_eq!(s.total_users, 2);
        assert_eq!(s.users_with_within_trip_events, 1);
    }

    #[test]
    fn trip_stats_schema_fields() {
        let v = serde_json::to_value(TripStats::default()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 10);
        for k in ["total_trips", "total_users", "users_with_within_trip_events", "mean_trips_per_user", "std_trips_per_user",
            "min_trips_per_user", "p25_trips_per_user", "p50_trips_per_user", "p75_trips_per_user", "max_trips_per_user"] {
            assert!(keys.contains(&k), "{k}");
        }
    }

    fn arb_trajectory() -> impl Strategy<Value = Vec<SpaceTimePoint>> {
        proptest::collection::vec((1.0..1800.0f64, 0.0..5000.0f64, any::<bool>()), 1..60).prop_map(|steps| {
            let (mut t, mut d) = (21_600.0, 0.0);
            steps
                .into_iter()
                .enumerate()
                .map(|(i, (dt, dd, moved))| {
                    if i > 0 {
                        t += dt;
                        if moved {
                            d += dd;
                        }
                    }
                    stp(t, d, i)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn simplify_is_bounded_subsequence(points in arb_trajectory(), tol in 1.0..2000.0f64) {
            let s = simplify(&points, tol);
            prop_assert_eq!(s.first(), points.first());
            prop_assert_eq!(s.last(), points.last());
            let idx: Vec<usize> = s.iter().map(|p| p.event_index).collect();
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            for w in s.windows(2) {
                for p in &points[w[0].event_index..=w[1].event_index] {
                    prop_assert!((p.d - interp_d(&w[0], &w[1], p.t)).abs() <= tol + 1e-9);
                }
            }
        }

        #[test]
        fn classes_partition_events(points in arb_trajectory()) {
            let events: Vec<Event> = points.iter().map(|p| {
                let ts = NaiveDate::from_ymd_opt(2016, 7, 27).unwrap().and_hms_opt(0, 0, 0).unwrap()
                    + chrono::Duration::seconds(p.t as i64);
                Event::new("u", ts, "x")
            }).collect();
            let user_day = UserDay { user_id: "u".into(), date: events[0].timestamp.date(), events };
            let cfg = TripRuleConfig::default();
            let mut pts = points.clone();
            for p in &mut pts { p.t = p.t.floor(); }
            pts.dedup_by(|b, a| a.t == b.t);
            let out = extract_trips(&user_day, &classify_segments(&simplify(&pts, cfg.simplify_tol_m), &cfg));
            prop_assert_eq!(out.classes.len(), user_day.events.len());
            let count = |c| out.classes.iter().filter(|x| **x == c).count();
            prop_assert_eq!(count(EventClass::TripStart), out.trips.len());
            prop_assert_eq!(count(EventClass::TripEnd), out.trips.len());
            let within: usize = out.trips.iter().map(|t| t.within.len()).sum();
            prop_assert_eq!(count(EventClass::WithinTrip), within);
            for w in out.trips.windows(2) {
                prop_assert!(w[0].end_t <= w[1].start_t);
            }
            for t in &out.trips {
                prop_assert!(t.start_t < t.end_t);
            }
        }
    }
}
