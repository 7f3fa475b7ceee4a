//! Run settings. A flat `key = value` file and command-line flags share one
//! key set; flags override the file, the file overrides the defaults.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use mobilicities::geo::{LabelRadii, DEFAULT_LABEL_RADIUS_M};
use mobilicities::ingest::DailyWindow;
use mobilicities::trips::TripRuleConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub events: Option<PathBuf>,
    pub towers: Option<PathBuf>,
    pub infra: Option<PathBuf>,
    /// Synthetic preset used instead of input files.
    pub synth: Option<String>,
    pub out: PathBuf,
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub ks: Vec<usize>,
    pub window_start: String,
    pub window_end: String,
    pub date_from: Option<NaiveDate>,
    pub date_to: Option<NaiveDate>,
    pub simplify_tol_m: f64,
    pub v_stationary_ms: f64,
    pub v_max_ms: f64,
    pub d_min_m: f64,
    pub label_radius_m: f64,
    pub metro_surface_radius_m: Option<f64>,
    pub positive_only: bool,
    pub heatmap_n: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let rules = TripRuleConfig::default();
        Settings {
            events: None,
            towers: None,
            infra: None,
            synth: None,
            out: PathBuf::from("run"),
            k: 8,
            seed: 0,
            restarts: 1,
            max_iter: 200,
            tol: 1e-4,
            ks: vec![4, 8, 12],
            window_start: "06:00".into(),
            window_end: "24:00".into(),
            date_from: None,
            date_to: None,
            simplify_tol_m: rules.simplify_tol_m,
            v_stationary_ms: rules.v_stationary_ms,
            v_max_ms: rules.v_max_ms,
            d_min_m: rules.d_min_m,
            label_radius_m: DEFAULT_LABEL_RADIUS_M,
            metro_surface_radius_m: None,
            positive_only: false,
            heatmap_n: 25_000,
        }
    }
}

pub const KEYS: [&str; 23] = [
    "events",
    "towers",
    "infra",
    "synth",
    "out",
    "k",
    "seed",
    "restarts",
    "max_iter",
    "tol",
    "ks",
    "window_start",
    "window_end",
    "date_from",
    "date_to",
    "simplify_tol_m",
    "v_stationary_ms",
    "v_max_ms",
    "d_min_m",
    "label_radius_m",
    "metro_surface_radius_m",
    "positive_only",
    "heatmap_n",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.trim().parse().map_err(|_| CliError::config("config", format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(CliError::config("config", format!("{key}: expected a boolean, got `{value}`"))),
    }
}

pub fn parse_ks(value: &str) -> CliResult<Vec<usize>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse("ks", s)).collect()
}

impl Settings {
    /// Sets one key. Keys may be written with dashes or underscores.
    pub fn apply(&mut self, key: &str, value: &str) -> CliResult<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        let path = || Some(PathBuf::from(v));
        match key.as_str() {
            "events" => self.events = path(),
            "towers" => self.towers = path(),
            "infra" => self.infra = path(),
            "synth" => self.synth = Some(v.to_owned()),
            "out" => self.out = PathBuf::from(v),
            "k" => self.k = parse(&key, v)?,
            "seed" => self.seed = parse(&key, v)?,
            "restarts" => self.restarts = parse(&key, v)?,
            "max_iter" => self.max_iter = parse(&key, v)?,
            "tol" => self.tol = parse(&key, v)?,
            "ks" => self.ks = parse_ks(v)?,
            "window_start" => self.window_start = v.to_owned(),
            "window_end" => self.window_end = v.to_owned(),
            "date_from" => self.date_from = Some(parse(&key, v)?),
            "date_to" => self.date_to = Some(parse(&key, v)?),
            "simplify_tol_m" => self.simplify_tol_m = parse(&key, v)?,
            "v_stationary_ms" => self.v_stationary_ms = parse(&key, v)?,
            "v_max_ms" => self.v_max_ms = parse(&key, v)?,
            "d_min_m" => self.d_min_m = parse(&key, v)?,
            "label_radius_m" => self.label_radius_m = parse(&key, v)?,
            "metro_surface_radius_m" => self.metro_surface_radius_m = Some(parse(&key, v)?),
            "positive_only" => self.positive_only = parse_bool(&key, v)?,
            "heatmap_n" => self.heatmap_n = parse(&key, v)?,
            _ => return Err(CliError::config("config", format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    /// Applies a settings file: `key = value` lines, `#` or `;` comments,
    /// section headers ignored.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config("config", format!("line {}: expected key = value", n + 1)))?;
            self.apply(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Defaults, then the optional file, then the flags in order.
    pub fn resolve(file: Option<&Path>, flags: &[(&str, String)]) -> CliResult<Settings> {
        let mut s = Settings::default();
        if let Some(path) = file {
            s.apply_file(path)?;
        }
        for (key, value) in flags {
            s.apply(key, value)?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn trip_rules(&self) -> TripRuleConfig {
        TripRuleConfig {
            simplify_tol_m: self.simplify_tol_m,
            v_stationary_ms: self.v_stationary_ms,
            v_max_ms: self.v_max_ms,
            d_min_m: self.d_min_m,
        }
    }

    pub fn window(&self) -> CliResult<DailyWindow> {
        let to_config = |e: mobilicities::Error| CliError::config("config", e.to_string());
        let start = DailyWindow::parse_hhmm(&self.window_start).map_err(to_config)?;
        let end = DailyWindow::parse_hhmm(&self.window_end).map_err(to_config)?;
        DailyWindow::new(start, end).map_err(to_config)
    }

    pub fn label_radii(&self) -> LabelRadii {
        LabelRadii {
            highway_m: self.label_radius_m,
            metro_surface_m: self.metro_surface_radius_m.unwrap_or(self.label_radius_m),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::config("config", m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be a non-empty list of positive integers".into());
        }
        if self.restarts == 0 || self.max_iter == 0 {
            return bad("restarts and max_iter must be positive".into());
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol {} must be non-negative", self.tol));
        }
        if !(self.label_radius_m > 0.0) || self.metro_surface_radius_m.is_some_and(|r| !(r > 0.0)) {
            return bad("label radii must be positive".into());
        }
        if let (Some(a), Some(b)) = (self.date_from, self.date_to) {
            if a > b {
                return bad(format!("date_from {a} is after date_to {b}"));
            }
        }
        self.trip_rules().validate().map_err(|e| CliError::config("config", e.to_string()))?;
        self.window()?;
        Ok(())
    }
}
