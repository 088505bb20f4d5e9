//! Plain-text run configuration.
//!
//! One `key = value [unit]` per line, `#` starts a comment. Dimensioned
//! quantities must carry a unit; values are converted to SI on ingestion.
//!
//! ```text
//! tau_1      = 30 s          # s | min | h
//! v_free_1   = 80 km/h       # km/h | m/s
//! area_1     = 10 m^2        # m^2
//! width      = 6.5 m         # m | km
//! rho_star_1 = 150 veh/km    # veh/km | veh/m
//! wavenumber = 0.0126 1/m    # 1/m | 1/km
//! gamma_1    = 2.5           # no unit
//! scenario   = full-state    # open-loop | full-state | output-feedback
//! ```
//!
//! Required: `tau_i`, `gamma_i`, `v_free_i`, `ao_max_i`, `area_i` for both
//! classes, `width`, `length`, `rho_star_1`, `rho_star_2`. Everything else
//! has a default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use stopgo_core::model::compute_equilibrium;
use stopgo_core::units::{kmh_to_ms, per_km_to_per_m};
use stopgo_core::{KernelSettings, RoadParams, Scenario, SimConfig, TrafficParams, VehicleClassParams};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Shipped presets, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("reference", include_str!("../presets/reference.cfg")),
    ("reference_n200", include_str!("../presets/reference_n200.cfg")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Density rectangle and resolution of the regime scan [veh/m].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourConfig {
    pub rho1: (f64, f64),
    pub rho2: (f64, f64),
    pub resolution: (usize, usize),
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self {
            rho1: (per_km_to_per_m(1.0), per_km_to_per_m(300.0)),
            rho2: (per_km_to_per_m(0.5), per_km_to_per_m(140.0)),
            resolution: (200, 200),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: TrafficParams,
    pub rho_star: [f64; 2],
    pub sim: SimConfig,
    pub kernel: KernelSettings,
    pub contour: ContourConfig,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Every precondition the later stages rely on, checked up front.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = |e: stopgo_core::Error| ConfigError::Validation(e.to_string());
        self.params.validate().map_err(v)?;
        compute_equilibrium(self.rho_star, &self.params).map_err(v)?;
        self.sim.validate().map_err(v)?;
        self.kernel.validate().map_err(v)?;
        if !(self.sim.amplitude > 0.0 && self.sim.amplitude < 1.0) {
            return Err(ConfigError::Validation(format!(
                "amplitude = {}: relative oscillation amplitude must lie in (0, 1)",
                self.sim.amplitude
            )));
        }
        let c = &self.contour;
        for (name, (lo, hi)) in [("contour_rho1", c.rho1), ("contour_rho2", c.rho2)] {
            if !(lo >= 0.0 && hi > lo) {
                return Err(ConfigError::Validation(format!(
                    "{name} range [{lo}, {hi}] veh/m: needs 0 <= min < max"
                )));
            }
        }
        if c.resolution.0 < 2 || c.resolution.1 < 2 {
            return Err(ConfigError::Validation(format!(
                "contour_resolution = {}x{}: needs at least 2 samples per axis",
                c.resolution.0, c.resolution.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Time,
    Velocity,
    Density,
    Length,
    Area,
    Wavenumber,
    Number,
    Count,
    Text,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Time => "s | min | h",
            Kind::Velocity => "km/h | m/s",
            Kind::Density => "veh/km | veh/m",
            Kind::Length => "m | km",
            Kind::Area => "m^2",
            Kind::Wavenumber => "1/m | 1/km",
            Kind::Number | Kind::Count | Kind::Text => "no unit",
        })
    }
}

const KEYS: &[(&str, Kind)] = &[
    ("tau_1", Kind::Time),
    ("gamma_1", Kind::Number),
    ("v_free_1", Kind::Velocity),
    ("ao_max_1", Kind::Number),
    ("area_1", Kind::Area),
    ("tau_2", Kind::Time),
    ("gamma_2", Kind::Number),
    ("v_free_2", Kind::Velocity),
    ("ao_max_2", Kind::Number),
    ("area_2", Kind::Area),
    ("width", Kind::Length),
    ("length", Kind::Length),
    ("rho_star_1", Kind::Density),
    ("rho_star_2", Kind::Density),
    ("grid_n", Kind::Count),
    ("cfl", Kind::Number),
    ("t_end", Kind::Time),
    ("scenario", Kind::Text),
    ("amplitude", Kind::Number),
    ("wavenumber", Kind::Wavenumber),
    ("snapshots", Kind::Count),
    ("kernel_n", Kind::Count),
    ("kernel_tol", Kind::Number),
    ("kernel_max_iter", Kind::Count),
    ("kernel_cap", Kind::Number),
    ("contour_rho1_min", Kind::Density),
    ("contour_rho1_max", Kind::Density),
    ("contour_rho2_min", Kind::Density),
    ("contour_rho2_max", Kind::Density),
    ("contour_resolution", Kind::Count),
    ("out", Kind::Text),
];

const REQUIRED: &[&str] = &[
    "tau_1", "gamma_1", "v_free_1", "ao_max_1", "area_1", "tau_2", "gamma_2", "v_free_2", "ao_max_2", "area_2",
    "width", "length", "rho_star_1", "rho_star_2",
];

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Num(f64),
    Count(usize),
    Text(String),
}

fn unit_factor(kind: Kind, unit: &str) -> Option<f64> {
    Some(match (kind, unit) {
        (Kind::Time, "s") => 1.0,
        (Kind::Time, "min") => 60.0,
        (Kind::Time, "h") => 3600.0,
        (Kind::Velocity, "m/s") => 1.0,
        (Kind::Velocity, "km/h") => kmh_to_ms(1.0),
        (Kind::Density, "veh/m") => 1.0,
        (Kind::Density, "veh/km") => per_km_to_per_m(1.0),
        (Kind::Length, "m") => 1.0,
        (Kind::Length, "km") => 1000.0,
        (Kind::Area, "m^2") | (Kind::Area, "m2") => 1.0,
        (Kind::Wavenumber, "1/m") => 1.0,
        (Kind::Wavenumber, "1/km") => 1e-3,
        _ => return None,
    })
}

pub fn scenario_from_str(s: &str) -> Option<Scenario> {
    match s {
        "open-loop" => Some(Scenario::OpenLoop),
        "full-state" => Some(Scenario::FullStateFeedback),
        "output-feedback" => Some(Scenario::OutputFeedback),
        _ => None,
    }
}

pub fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::OpenLoop => "open-loop",
        Scenario::FullStateFeedback => "full-state",
        Scenario::OutputFeedback => "output-feedback",
    }
}

fn parse_value(kind: Kind, rest: &str) -> Result<Value, String> {
    if kind == Kind::Text {
        if rest.is_empty() {
            return Err("missing value".into());
        }
        return Ok(Value::Text(rest.to_string()));
    }
    let mut parts = rest.split_whitespace();
    let number = parts.next().ok_or("missing value")?;
    let unit: Vec<&str> = parts.collect();
    let unit = unit.join("");
    match kind {
        Kind::Count => {
            if !unit.is_empty() {
                return Err(format!("unexpected unit `{unit}` on a count"));
            }
            number
                .parse::<usize>()
                .map(Value::Count)
                .map_err(|_| format!("`{number}` is not a non-negative integer"))
        }
        _ => {
            let x: f64 = number.parse().map_err(|_| format!("`{number}` is not a number"))?;
            if !x.is_finite() {
                return Err(format!("`{number}` is not finite"));
            }
            if kind == Kind::Number {
                if !unit.is_empty() {
                    return Err(format!("unexpected unit `{unit}` on a dimensionless value"));
                }
                return Ok(Value::Num(x));
            }
            if unit.is_empty() {
                return Err(format!("missing unit (expected {kind})"));
            }
            let f = unit_factor(kind, &unit).ok_or_else(|| format!("unknown unit `{unit}` (expected {kind})"))?;
            Ok(Value::Num(x * f))
        }
    }
}

fn parse_entries(text: &str, source_name: &str) -> Result<BTreeMap<&'static str, Value>, ConfigError> {
    let err = |line: usize, message: String| ConfigError::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, rest) = body
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value [unit]`, found `{body}`")))?;
        let key = key.trim();
        let &(name, kind) = KEYS
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| err(line, format!("unknown key `{key}`")))?;
        let value = parse_value(kind, rest.trim()).map_err(|m| err(line, format!("{key}: {m}")))?;
        if map.insert(name, value).is_some() {
            return Err(err(line, format!("duplicate key `{key}`")));
        }
    }
    if let Some(missing) = REQUIRED.iter().find(|k| !map.contains_key(*k)) {
        return Err(ConfigError::Parse {
            source_name: source_name.to_string(),
            line: 0,
            message: format!("missing required key `{missing}`"),
        });
    }
    Ok(map)
}

/// Parse and validate a configuration text. `source_name` labels messages.
pub fn parse_config_str(text: &str, source_name: &str) -> Result<RunConfig, ConfigError> {
    let map = parse_entries(text, source_name)?;
    let num = |k: &str| match map.get(k) {
        Some(Value::Num(x)) => Some(*x),
        _ => None,
    };
    let count = |k: &str| match map.get(k) {
        Some(Value::Count(n)) => Some(*n),
        _ => None,
    };
    let text = |k: &str| match map.get(k) {
        Some(Value::Text(s)) => Some(s.clone()),
        _ => None,
    };
    let req = |k: &str| num(k).expect("required keys are checked while parsing");
    let v = |e: stopgo_core::Error| ConfigError::Validation(e.to_string());

    let class = |i: usize| {
        VehicleClassParams::new(
            req(&format!("tau_{i}")),
            req(&format!("gamma_{i}")),
            req(&format!("v_free_{i}")),
            req(&format!("ao_max_{i}")),
            req(&format!("area_{i}")),
        )
        .map_err(|e| ConfigError::Validation(format!("class {i}: {e}")))
    };
    let road = RoadParams::new(req("width"), req("length")).map_err(v)?;
    let params = TrafficParams::new([class(1)?, class(2)?], road).map_err(v)?;

    let mut sim = SimConfig::default();
    if let Some(n) = count("grid_n") {
        sim.n = n;
    }
    if let Some(c) = num("cfl") {
        sim.cfl_fraction = c;
    }
    sim.t_end = num("t_end");
    if let Some(s) = text("scenario") {
        sim.scenario = scenario_from_str(&s).ok_or_else(|| {
            ConfigError::Validation(format!("scenario = `{s}`: expected open-loop, full-state or output-feedback"))
        })?;
    }
    if let Some(a) = num("amplitude") {
        sim.amplitude = a;
    }
    sim.wavenumber = num("wavenumber");
    if let Some(s) = count("snapshots") {
        sim.snapshots = s;
    }

    let mut kernel = KernelSettings::default();
    if let Some(n) = count("kernel_n") {
        kernel.n = n;
    }
    if let Some(t) = num("kernel_tol") {
        kernel.tol = t;
    }
    if let Some(m) = count("kernel_max_iter") {
        kernel.max_iter = m;
    }
    if let Some(c) = num("kernel_cap") {
        kernel.cap = c;
    }

    let mut contour = ContourConfig::default();
    contour.rho1 = (num("contour_rho1_min").unwrap_or(contour.rho1.0), num("contour_rho1_max").unwrap_or(contour.rho1.1));
    contour.rho2 = (num("contour_rho2_min").unwrap_or(contour.rho2.0), num("contour_rho2_max").unwrap_or(contour.rho2.1));
    if let Some(r) = count("contour_resolution") {
        contour.resolution = (r, r);
    }

    let cfg = RunConfig {
        params,
        rho_star: [req("rho_star_1"), req("rho_star_2")],
        sim,
        kernel,
        contour,
        out: text("out").map(PathBuf::from),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, &path.display().to_string())
}
