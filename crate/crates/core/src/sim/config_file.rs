//! Run-config files: flat `section.key = value` TOML.
//!
//! Values are numbers, quoted strings and (for formation offsets) arrays of
//! `[x, y]` pairs. `[section]` tables work too. Absent keys keep their
//! defaults, so an empty file is the default run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::config::RunConfig;
use super::tasks::TaskKind;
use crate::controllers::FormationKind;
use crate::error::{Error, Result};
use crate::frameworks::FrameworkKind;
use crate::timeline::millis_to_ticks;
use toml::{Spanned, Value};

/// Every recognized key, in serialization order.
pub const CONFIG_KEYS: &[&str] = &[
    "run.task",
    "run.framework",
    "run.seed",
    "run.duration_s",
    "rate.base_hz",
    "rate.control_hz",
    "delay.obs_ms",
    "delay.act_ms",
    "delay.comm_ms",
    "noise.sensor",
    "noise.disturbance",
    "model.accel_ratio",
    "model.wheelbase_ratio",
    "plan.horizon",
    "weights.q_x",
    "weights.q_u",
    "optim.max_iters",
    "optim.g_tol",
    "optim.memory",
    "formation.triangle",
    "formation.line",
    "formation.circle",
    "formation.k_speed",
    "formation.k_steer",
    "formation.k_track",
    "formation.k_accel",
    "formation.ref_point",
    "formation.avoid_radius",
    "formation.k_repel",
    "formation.min_speed",
];

fn config_error(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn number(v: &Value) -> std::result::Result<f64, String> {
    match v {
        Value::Float(n) => Ok(*n),
        Value::Integer(n) => Ok(*n as f64),
        _ => Err("expected a number".into()),
    }
}

fn count(v: &Value) -> std::result::Result<u64, String> {
    let n = number(v)?;
    if n < 0.0 || n.fract() != 0.0 || n > u32::MAX as f64 {
        return Err(format!("expected a non-negative integer, got {n}"));
    }
    Ok(n as u64)
}

fn string(v: &Value) -> std::result::Result<&str, String> {
    match v {
        Value::String(s) => Ok(s),
        _ => Err("expected a quoted string".into()),
    }
}

fn offsets(v: &Value) -> std::result::Result<Vec<[f64; 2]>, String> {
    let bad = || "expected an array of [x, y] pairs".to_string();
    let Value::Array(items) = v else {
        return Err(bad());
    };
    items
        .iter()
        .map(|p| match p {
            Value::Array(xy) if xy.len() == 2 => Ok([
                number(&xy[0]).map_err(|_| bad())?,
                number(&xy[1]).map_err(|_| bad())?,
            ]),
            _ => Err(bad()),
        })
        .collect()
}

fn assign(cfg: &mut RunConfig, key: &str, v: &Value) -> std::result::Result<(), String> {
    let g = &mut cfg.formation_gains;
    match key {
        "run.task" => cfg.task = TaskKind::from_id(string(v)?).map_err(|e| e.to_string())?,
        "run.framework" => {
            cfg.framework = FrameworkKind::from_id(string(v)?).map_err(|e| e.to_string())?
        }
        "run.seed" => cfg.seed = count(v)?,
        "run.duration_s" => cfg.duration_s = number(v)?,
        "rate.base_hz" => cfg.rate_hz = number(v)?,
        "rate.control_hz" => cfg.control_hz = number(v)?,
        "delay.obs_ms" => cfg.obs_ms = number(v)?,
        "delay.act_ms" => cfg.act_ms = number(v)?,
        "delay.comm_ms" => cfg.comm_ms = number(v)?,
        "noise.sensor" => cfg.sensor_noise = number(v)?,
        "noise.disturbance" => cfg.disturbance = number(v)?,
        "model.accel_ratio" => cfg.accel_ratio = number(v)?,
        "model.wheelbase_ratio" => cfg.wheelbase_ratio = number(v)?,
        "plan.horizon" => cfg.horizon = count(v)? as usize,
        "weights.q_x" => cfg.q_x = number(v)?,
        "weights.q_u" => cfg.q_u = Some(number(v)?),
        "optim.max_iters" => cfg.max_iters = count(v)? as usize,
        "optim.g_tol" => cfg.g_tol = number(v)?,
        "optim.memory" => cfg.memory = count(v)? as usize,
        "formation.triangle" => cfg.formation.triangle = offsets(v)?,
        "formation.line" => cfg.formation.line = offsets(v)?,
        "formation.circle" => cfg.formation.circle = offsets(v)?,
        "formation.k_speed" => g.k_speed = number(v)?,
        "formation.k_steer" => g.k_steer = number(v)?,
        "formation.k_track" => g.k_track = number(v)?,
        "formation.k_accel" => g.k_accel = number(v)?,
        "formation.ref_point" => g.ref_point = number(v)?,
        "formation.avoid_radius" => g.avoid_radius = number(v)?,
        "formation.k_repel" => g.k_repel = number(v)?,
        "formation.min_speed" => g.min_speed = number(v)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

/// Checks the value behind `key` against the rest of the configuration.
fn check(cfg: &RunConfig, key: &str) -> std::result::Result<(), String> {
    let positive = |v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(format!("must be positive, got {v}"))
        }
    };
    let non_negative = |v: f64| {
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(format!("must be finite and non-negative, got {v}"))
        }
    };
    let ticks = |what: &'static str, ms: f64| {
        millis_to_ticks(what, ms, cfg.rate_hz)
            .map(|_| ())
            .map_err(|e| e.to_string())
    };
    let g = &cfg.formation_gains;
    match key {
        "run.duration_s" => cfg.n_ticks().map(|_| ()).map_err(|e| e.to_string()),
        "rate.base_hz" => positive(cfg.rate_hz),
        "rate.control_hz" => positive(cfg.control_hz).and_then(|_| {
            let interval = cfg.rate_hz / cfg.control_hz;
            if interval >= 1.0 && (interval - interval.round()).abs() < 1e-9 {
                Ok(())
            } else {
                Err(format!(
                    "control rate {} Hz does not divide base rate {} Hz",
                    cfg.control_hz, cfg.rate_hz
                ))
            }
        }),
        "delay.obs_ms" => ticks("delay.obs_ms", cfg.obs_ms),
        "delay.act_ms" => ticks("delay.act_ms", cfg.act_ms),
        "delay.comm_ms" => ticks("delay.comm_ms", cfg.comm_ms),
        "noise.sensor" => non_negative(cfg.sensor_noise),
        "noise.disturbance" => non_negative(cfg.disturbance),
        "model.accel_ratio" => positive(cfg.accel_ratio),
        "model.wheelbase_ratio" => positive(cfg.wheelbase_ratio),
        "plan.horizon" => positive(cfg.horizon as f64),
        "weights.q_x" => positive(cfg.q_x),
        "weights.q_u" => positive(cfg.actuation_weight()),
        "optim.max_iters" => positive(cfg.max_iters as f64),
        "optim.g_tol" => positive(cfg.g_tol),
        "optim.memory" => positive(cfg.memory as f64),
        "formation.triangle" | "formation.line" | "formation.circle" => {
            let kind = match key {
                "formation.triangle" => FormationKind::Triangle,
                "formation.line" => FormationKind::Line,
                _ => FormationKind::Circle,
            };
            let o = cfg.formation.offsets(kind);
            if o.len() != 3 {
                return Err(format!("expected 3 follower offsets, got {}", o.len()));
            }
            o.iter().flatten().try_for_each(|v| {
                if v.is_finite() {
                    Ok(())
                } else {
                    Err("non-finite offset".to_string())
                }
            })
        }
        "formation.k_speed" => positive(g.k_speed),
        "formation.k_steer" => positive(g.k_steer),
        "formation.k_track" => positive(g.k_track),
        "formation.k_accel" => positive(g.k_accel),
        "formation.ref_point" => positive(g.ref_point),
        "formation.avoid_radius" => non_negative(g.avoid_radius),
        "formation.k_repel" => non_negative(g.k_repel),
        "formation.min_speed" => positive(g.min_speed),
        _ => Ok(()),
    }
}

type Sections = BTreeMap<String, BTreeMap<String, Spanned<Value>>>;

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses config text; errors name the offending key and its 1-based line.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let sections: Sections = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| line_of(text, s.start));
        let key = text
            .lines()
            .nth(line.saturating_sub(1))
            .map(|l| l.split('=').next().unwrap_or(l).trim().to_string())
            .unwrap_or_default();
        config_error(line, &key, e.message())
    })?;
    let mut cfg = RunConfig::default();
    let mut order = Vec::new();
    for (section, entries) in &sections {
        for (name, value) in entries {
            let key = format!("{section}.{name}");
            let line = line_of(text, value.span().start);
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(config_error(line, &key, "unknown key"));
            }
            assign(&mut cfg, &key, value.get_ref()).map_err(|m| config_error(line, &key, m))?;
            order.push((line, key));
        }
    }
    order.sort();
    for (line, key) in &order {
        check(&cfg, key).map_err(|m| config_error(*line, key, m))?;
    }
    // defaults can still clash with explicit values, e.g. a base rate that
    // leaves a default delay between ticks
    for key in CONFIG_KEYS {
        if !order.iter().any(|(_, k)| k == key) {
            check(&cfg, key)
                .map_err(|m| config_error(0, key, format!("default value invalid: {m}")))?;
        }
    }
    cfg.validate()
        .map_err(|e| config_error(0, "", e.to_string()))?;
    Ok(cfg)
}

/// Sets one key from its TOML value text, e.g. `("delay.comm_ms", "300")`
/// or `("run.task", "\"formation-driving\"")`. On error `cfg` is unchanged.
pub fn set_config_value(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    if !CONFIG_KEYS.contains(&key) {
        return Err(config_error(0, key, "unknown key"));
    }
    let table: toml::Table = toml::from_str(&format!("v = {value}"))
        .map_err(|e| config_error(0, key, format!("malformed value: {}", e.message())))?;
    let mut next = cfg.clone();
    assign(&mut next, key, &table["v"]).map_err(|m| config_error(0, key, m))?;
    check(&next, key).map_err(|m| config_error(0, key, m))?;
    next.validate()
        .map_err(|e| config_error(0, key, e.to_string()))?;
    *cfg = next;
    Ok(())
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

fn pairs(p: &[[f64; 2]]) -> String {
    let items: Vec<String> = p.iter().map(|[x, y]| format!("[{x:?}, {y:?}]")).collect();
    format!("[{}]", items.join(", "))
}

/// Writes every key; floats use the shortest exact representation so that
/// parsing the text gives back the same configuration.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let g = &cfg.formation_gains;
    let f = &cfg.formation;
    let mut out = String::new();
    let mut put = |key: &str, value: String| {
        writeln!(out, "{key} = {value}").expect("writing to a string");
    };
    put("run.task", format!("\"{}\"", cfg.task.id()));
    put("run.framework", format!("\"{}\"", cfg.framework.id()));
    put("run.seed", cfg.seed.to_string());
    for (key, v) in [
        ("run.duration_s", cfg.duration_s),
        ("rate.base_hz", cfg.rate_hz),
        ("rate.control_hz", cfg.control_hz),
        ("delay.obs_ms", cfg.obs_ms),
        ("delay.act_ms", cfg.act_ms),
        ("delay.comm_ms", cfg.comm_ms),
        ("noise.sensor", cfg.sensor_noise),
        ("noise.disturbance", cfg.disturbance),
        ("model.accel_ratio", cfg.accel_ratio),
        ("model.wheelbase_ratio", cfg.wheelbase_ratio),
    ] {
        put(key, format!("{v:?}"));
    }
    put("plan.horizon", cfg.horizon.to_string());
    put("weights.q_x", format!("{:?}", cfg.q_x));
    if let Some(q_u) = cfg.q_u {
        put("weights.q_u", format!("{q_u:?}"));
    }
    put("optim.max_iters", cfg.max_iters.to_string());
    put("optim.g_tol", format!("{:?}", cfg.g_tol));
    put("optim.memory", cfg.memory.to_string());
    put("formation.triangle", pairs(&f.triangle));
    put("formation.line", pairs(&f.line));
    put("formation.circle", pairs(&f.circle));
    for (key, v) in [
        ("formation.k_speed", g.k_speed),
        ("formation.k_steer", g.k_steer),
        ("formation.k_track", g.k_track),
        ("formation.k_accel", g.k_accel),
        ("formation.ref_point", g.ref_point),
        ("formation.avoid_radius", g.avoid_radius),
        ("formation.k_repel", g.k_repel),
        ("formation.min_speed", g.min_speed),
    ] {
        put(key, format!("{v:?}"));
    }
    out
}
