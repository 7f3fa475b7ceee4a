//! Geodesic primitives, the tower registry, infrastructure polylines and
//! proximity labeling of towers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{input, Error, Result};

/// Mean Earth radius used for every distance in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default buffer around infrastructure lines.
pub const DEFAULT_LABEL_RADIUS_M: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = Error;
    fn try_from(raw: RawPoint) -> Result<Self> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return input(format!("non-finite coordinate ({lat}, {lon})"));
        }
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return input(format!("coordinate out of range ({lat}, {lon})"));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Point reached by moving `east_m` / `north_m` meters in the local
    /// equirectangular frame around `self`.
    pub fn offset_m(&self, east_m: f64, north_m: f64) -> Result<GeoPoint> {
        let lat = self.lat + (north_m / EARTH_RADIUS_M).to_degrees();
        let lon = self.lon + (east_m / (EARTH_RADIUS_M * self.lat.to_radians().cos())).to_degrees();
        GeoPoint::new(lat, lon)
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfraKind {
    Highway,
    MetroSurface,
}

impl InfraKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InfraKind::Highway => "highway",
            InfraKind::MetroSurface => "metro_surface",
        }
    }

    pub fn parse(s: &str) -> Option<InfraKind> {
        match s {
            "highway" => Some(InfraKind::Highway),
            "metro_surface" => Some(InfraKind::MetroSurface),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfraPolyline {
    kind: InfraKind,
    vertices: Vec<GeoPoint>,
}

impl InfraPolyline {
    pub fn new(kind: InfraKind, vertices: Vec<GeoPoint>) -> Result<Self> {
        if vertices.len() < 2 {
            return input("polyline needs at least two vertices");
        }
        if vertices.windows(2).any(|w| w[0] == w[1]) {
            return input("polyline has repeated consecutive vertices");
        }
        Ok(InfraPolyline { kind, vertices })
    }

    pub fn kind(&self) -> InfraKind {
        self.kind
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }
}

/// Distance from `p` to the closest point of `line`, measured in an
/// equirectangular projection centered on `p`.
pub fn point_to_polyline_m(p: GeoPoint, line: &InfraPolyline) -> f64 {
    let cos_lat = p.lat.to_radians().cos();
    let project = |q: &GeoPoint| {
        let mut dlon = q.lon - p.lon;
        if dlon > 180.0 {
            dlon -= 360.0;
        } else if dlon < -180.0 {
            dlon += 360.0;
        }
        (
            EARTH_RADIUS_M * dlon.to_radians() * cos_lat,
            EARTH_RADIUS_M * (q.lat - p.lat).to_radians(),
        )
    };
    line.vertices
        .windows(2)
        .map(|w| {
            let (ax, ay) = project(&w[0]);
            let (bx, by) = project(&w[1]);
            origin_to_segment((ax, ay), (bx, by))
        })
        .fold(f64::INFINITY, f64::min)
}

fn origin_to_segment(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let s = if len2 == 0.0 {
        0.0
    } else {
        (-(a.0 * dx + a.1 * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + s * dx, a.1 + s * dy);
    cx.hypot(cy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub id: String,
    pub name: String,
    pub location: GeoPoint,
    pub indoor: bool,
    pub underground_metro: bool,
}

impl Tower {
    /// Whether events at this tower survive ingestion: out-door towers plus
    /// the in-door towers of underground metro stations.
    pub fn is_usable(&self) -> bool {
        !self.indoor || self.underground_metro
    }
}

/// Towers in registry order, indexed by id.
#[derive(Debug, Clone, Default)]
pub struct TowerRegistry {
    towers: Vec<Tower>,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Deserialize, Serialize)]
struct TowerRow {
    tower_id: String,
    name: String,
    lat: f64,
    lon: f64,
    indoor: String,
    underground_metro: String,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "t" | "y" => Some(true),
        "0" | "false" | "no" | "f" | "n" | "" => Some(false),
        _ => None,
    }
}

pub const TOWER_CSV_HEADER: [&str; 6] = ["tower_id", "name", "lat", "lon", "indoor", "underground_metro"];

impl TowerRegistry {
    pub fn new(towers: Vec<Tower>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(towers.len());
        for (i, t) in towers.iter().enumerate() {
            if by_id.insert(t.id.clone(), i).is_some() {
                return input(format!("duplicate tower id {}", t.id));
            }
        }
        Ok(TowerRegistry { towers, by_id })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != TOWER_CSV_HEADER {
            return Err(Error::Format(format!(
                "tower registry header must be `{}`, got `{}`",
                TOWER_CSV_HEADER.join(","),
                header.join(",")
            )));
        }
        let mut towers = Vec::new();
        for (line, row) in rdr.deserialize::<TowerRow>().enumerate() {
            let row = row.map_err(|e| Error::Format(format!("tower registry row {}: {e}", line + 2)))?;
            let bad = |field: &str| Error::Format(format!("tower {}: bad {field}", row.tower_id));
            let location = GeoPoint::new(row.lat, row.lon).map_err(|_| bad("coordinates"))?;
            towers.push(Tower {
                indoor: parse_bool(&row.indoor).ok_or_else(|| bad("indoor"))?,
                underground_metro: parse_bool(&row.underground_metro).ok_or_else(|| bad("underground_metro"))?,
                id: row.tower_id,
                name: row.name,
                location,
            });
        }
        TowerRegistry::new(towers).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TOWER_CSV_HEADER)?;
        for t in &self.towers {
            w.write_record([
                t.id.as_str(),
                t.name.as_str(),
                &t.location.lat.to_string(),
                &t.location.lon.to_string(),
                if t.indoor { "true" } else { "false" },
                if t.underground_metro { "true" } else { "false" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Tower> {
        self.by_id.get(id).map(|&i| &self.towers[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn towers(&self) -> &[Tower] {
        &self.towers
    }

    pub fn len(&self) -> usize {
        self.towers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.towers.is_empty()
    }

    /// Towers that become columns of the waypoints matrix, in registry order.
    pub fn usable(&self) -> impl Iterator<Item = &Tower> {
        self.towers.iter().filter(|t| t.is_usable())
    }
}

/// Reads a GeoJSON FeatureCollection of LineStrings carrying a `kind` property.
pub fn read_infrastructure<R: Read>(reader: R) -> Result<Vec<InfraPolyline>> {
    let doc: Value = serde_json::from_reader(reader)?;
    let fmt = |m: &str| Error::Format(format!("infrastructure GeoJSON: {m}"));
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(fmt("expected a FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| fmt("missing features"))?;
    let mut lines = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let kind = f
            .pointer("/properties/kind")
            .and_then(Value::as_str)
            .and_then(InfraKind::parse)
            .ok_or_else(|| fmt(&format!("feature {i}: kind must be highway or metro_surface")))?;
        let geom = f.get("geometry").ok_or_else(|| fmt(&format!("feature {i}: no geometry")))?;
        if geom.get("type").and_then(Value::as_str) != Some("LineString") {
            return Err(fmt(&format!("feature {i}: geometry must be a LineString")));
        }
        let coords = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| fmt(&format!("feature {i}: missing coordinates")))?;
        let mut vertices = Vec::with_capacity(coords.len());
        for c in coords {
            let pair = c.as_array().filter(|a| a.len() >= 2);
            let (lon, lat) = match pair.map(|a| (a[0].as_f64(), a[1].as_f64())) {
                Some((Some(lon), Some(lat))) => (lon, lat),
                _ => return Err(fmt(&format!("feature {i}: bad coordinate"))),
            };
            vertices.push(GeoPoint::new(lat, lon).map_err(|e| fmt(&e.to_string()))?);
        }
        lines.push(InfraPolyline::new(kind, vertices).map_err(|e| fmt(&format!("feature {i}: {e}")))?);
    }
    Ok(lines)
}

pub fn infrastructure_geojson(lines: &[InfraPolyline]) -> Value {
    let features: Vec<Value> = lines
        .iter()
        .map(|l| {
            let coords: Vec<Value> = l.vertices.iter().map(|p| json!([p.lon, p.lat])).collect();
            json!({
                "type": "Feature",
                "properties": { "kind": l.kind.as_str() },
                "geometry": { "type": "LineString", "coordinates": coords },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

/// Infrastructure class of a tower. The derived ordering is display
/// precedence: the greatest label in a set wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TowerLabel {
    None,
    Highway,
    MetroSurface,
    MetroUnderground,
}

impl TowerLabel {
    pub const ALL: [TowerLabel; 4] = [
        TowerLabel::Highway,
        TowerLabel::MetroSurface,
        TowerLabel::MetroUnderground,
        TowerLabel::None,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TowerLabel::None => "none",
            TowerLabel::Highway => "highway",
            TowerLabel::MetroSurface => "metro_surface",
            TowerLabel::MetroUnderground => "metro_underground",
        }
    }
}

pub type LabelSet = BTreeSet<TowerLabel>;

/// Single label shown for a tower: MetroUnderground > MetroSurface > Highway > None.
pub fn display_label(labels: &LabelSet) -> TowerLabel {
    labels.iter().next_back().copied().unwrap_or(TowerLabel::None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRadii {
    pub highway_m: f64,
    pub metro_surface_m: f64,
}

impl Default for LabelRadii {
    fn default() -> Self {
        LabelRadii::uniform(DEFAULT_LABEL_RADIUS_M)
    }
}

impl LabelRadii {
    pub fn uniform(radius_m: f64) -> Self {
        LabelRadii { highway_m: radius_m, metro_surface_m: radius_m }
    }

    fn for_kind(&self, kind: InfraKind) -> f64 {
        match kind {
            InfraKind::Highway => self.highway_m,
            InfraKind::MetroSurface => self.metro_surface_m,
        }
    }
}

/// Labels every tower by its distance to the infrastructure polylines.
pub fn label_towers(towers: &[Tower], lines: &[InfraPolyline], radius_m: f64) -> Result<BTreeMap<String, LabelSet>> {
    label_towers_with(towers, lines, LabelRadii::uniform(radius_m))
}

pub fn label_towers_with(
    towers: &[Tower],
    lines: &[InfraPolyline],
    radii: LabelRadii,
) -> Result<BTreeMap<String, LabelSet>> {
    if !(radii.highway_m > 0.0 && radii.metro_surface_m > 0.0) {
        return input("label radius must be positive");
    }
    Ok(towers
        .iter()
        .map(|t| {
            let mut set = LabelSet::new();
            if t.underground_metro {
                set.insert(TowerLabel::MetroUnderground);
            }
            for line in lines {
                let label = match line.kind {
                    InfraKind::Highway => TowerLabel::Highway,
                    InfraKind::MetroSurface => TowerLabel::MetroSurface,
                };
                if !set.contains(&label) && point_to_polyline_m(t.location, line) <= radii.for_kind(line.kind) {
                    set.insert(label);
                }
            }
            if set.is_empty() {
                set.insert(TowerLabel::None);
            }
            (t.id.clone(), set)
        })
        .collect())
}
