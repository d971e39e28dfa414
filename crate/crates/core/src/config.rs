//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! target      = mixture_normals_1d
//! epsilon     = 0.05
//! alpha_tilde = 0.75
//! sigma_pi    = 1
//! sigma_eta   = 10
//! n_iters     = 200000
//! seed        = 2024
//! x0          = uniform:0,10.5
//! epsilons    = 0.05, 0.25, 0.5
//! ```
//!
//! Lists are comma separated. Unknown keys are rejected. [`emit_config`]
//! writes every resolved value so that re-parsing its output gives back the
//! same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::NonlinearKind;
use crate::simulator::{HarnessSettings, InitialSpec, LyapunovSpec, RunConfig, TargetSpec};

pub const MANDATORY_KEYS: [&str; 6] = ["sigma_pi", "sigma_eta", "epsilon", "alpha_tilde", "n_iters", "seed"];

pub const KNOWN_KEYS: [&str; 33] = [
    "target",
    "dimension",
    "weights",
    "means",
    "std_devs",
    "epsilon",
    "alpha_tilde",
    "kind",
    "sigma_pi",
    "sigma_eta",
    "k_iterate",
    "p_iterate",
    "n_iters",
    "burn_in",
    "x0",
    "y0",
    "seed",
    "feed_after_burnin",
    "store_trace",
    "s_v",
    "s_w",
    "r_star",
    "log_pi_sup",
    "repeats",
    "epsilons",
    "baseline_iters",
    "compare_epsilon",
    "calibration_factor",
    "drift_probes",
    "drift_samples",
    "drift_radius",
    "snv_stride",
    "dump_trace",
];

fn parse_err(key: &str, value: &str, reason: impl Into<String>) -> Error {
    Error::Parse { key: key.into(), value: value.into(), reason: reason.into() }
}

/// Splits `key=value` as given to `--set`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| parse_err("--set", s, "expected key=value"))?;
    let k = k.trim();
    if !KNOWN_KEYS.contains(&k) {
        return Err(Error::UnknownKey(k.into()));
    }
    Ok((k.into(), v.trim().into()))
}

struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err("<line>", raw.trim(), format!("line {}: expected key = value", lineno + 1)))?;
            let k = k.trim();
            if !KNOWN_KEYS.contains(&k) {
                return Err(Error::UnknownKey(k.into()));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(parse_err(k, v.trim(), format!("line {}: duplicate key", lineno + 1)));
            }
        }
        Ok(Self { map })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        self.raw(key).map(|v| v.parse::<V>().map_err(|e| parse_err(key, v, e.to_string()))).transpose()
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        self.raw(key).map(|v| parse_count(key, v)).transpose()
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.raw(key).map(|v| parse_list(key, v)).transpose()
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.raw(key)
            .map(|v| match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(parse_err(key, v, "expected true or false")),
            })
            .transpose()
    }

    fn require<V>(&self, key: &str, v: Option<V>) -> Result<V> {
        v.ok_or_else(|| Error::MissingKey(key.into()))
    }
}

/// Non-negative integer; `2e5` style literals are accepted when exact.
fn parse_count(key: &str, v: &str) -> Result<usize> {
    if let Ok(n) = v.parse::<usize>() {
        return Ok(n);
    }
    match v.parse::<f64>() {
        Ok(f) if f >= 0.0 && f.fract() == 0.0 && f <= 1e15 => Ok(f as usize),
        Ok(_) => Err(parse_err(key, v, "expected a non-negative integer")),
        Err(e) => Err(parse_err(key, v, e.to_string())),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .map(|s| s.parse::<f64>().map_err(|e| parse_err(key, v, format!("`{s}`: {e}"))))
        .collect()
}

fn parse_initial(key: &str, v: &str) -> Result<InitialSpec> {
    if let Some(rest) = v.strip_prefix("uniform:") {
        let b = parse_list(key, rest)?;
        if b.len() != 2 {
            return Err(parse_err(key, v, "uniform needs exactly two bounds lo,hi"));
        }
        return Ok(InitialSpec::Uniform { lo: b[0], hi: b[1] });
    }
    let pts = v.strip_prefix("point:").unwrap_or(v);
    Ok(InitialSpec::Point(parse_list(key, pts)?))
}

fn parse_kind(v: &str) -> Result<NonlinearKind> {
    match v {
        "exchange" => Ok(NonlinearKind::Exchange),
        "select" => Ok(NonlinearKind::SelectMutate { with_mutation: false }),
        "select_mutate" => Ok(NonlinearKind::SelectMutate { with_mutation: true }),
        _ => Err(parse_err("kind", v, "expected exchange, select or select_mutate")),
    }
}

pub fn kind_name(kind: NonlinearKind) -> &'static str {
    match kind {
        NonlinearKind::Exchange => "exchange",
        NonlinearKind::SelectMutate { with_mutation: false } => "select",
        NonlinearKind::SelectMutate { with_mutation: true } => "select_mutate",
    }
}

fn parse_target(e: &Entries) -> Result<TargetSpec> {
    let name = e.raw("target").unwrap_or("mixture_normals_1d");
    match name {
        "mixture_normals_1d" => {
            if e.has("dimension") {
                return Err(parse_err("dimension", e.raw("dimension").unwrap_or(""), "mixture_normals_1d is one-dimensional"));
            }
            let TargetSpec::MixtureNormals1d { weights, means, std_devs } = TargetSpec::toy_mixture() else {
                unreachable!()
            };
            Ok(TargetSpec::MixtureNormals1d {
                weights: e.list("weights")?.unwrap_or(weights),
                means: e.list("means")?.unwrap_or(means),
                std_devs: e.list("std_devs")?.unwrap_or(std_devs),
            })
        }
        "std_normal" => {
            for key in ["weights", "means", "std_devs"] {
                if let Some(v) = e.raw(key) {
                    return Err(parse_err(key, v, "only valid with target = mixture_normals_1d"));
                }
            }
            let dimension = e.count("dimension")?.unwrap_or(1);
            if dimension == 0 {
                return Err(Error::Range { key: "dimension".into(), value: "0".into(), bounds: "[1, inf)".into() });
            }
            Ok(TargetSpec::StdNormal { dimension })
        }
        other => Err(parse_err("target", other, "expected mixture_normals_1d or std_normal")),
    }
}

fn parse_lyapunov(e: &Entries) -> Result<Option<LyapunovSpec>> {
    let keys = ["s_v", "s_w", "r_star", "log_pi_sup"];
    if !keys.iter().any(|k| e.has(k)) {
        return Ok(None);
    }
    Ok(Some(LyapunovSpec {
        s_v: e.require("s_v", e.get("s_v")?)?,
        s_w: e.require("s_w", e.get("s_w")?)?,
        r_star: e.require("r_star", e.get("r_star")?)?,
        log_pi_sup: e.get("log_pi_sup")?,
    }))
}

fn build(e: &Entries) -> Result<RunConfig> {
    for key in MANDATORY_KEYS {
        if !e.has(key) {
            return Err(Error::MissingKey(key.into()));
        }
    }
    let d = HarnessSettings::default();
    let harness = HarnessSettings {
        repeats: e.count("repeats")?.unwrap_or(d.repeats),
        epsilons: e.list("epsilons")?.unwrap_or(d.epsilons),
        baseline_iters: e.count("baseline_iters")?.unwrap_or(d.baseline_iters),
        compare_epsilon: e.get("compare_epsilon")?.unwrap_or(d.compare_epsilon),
        calibration_factor: e.get("calibration_factor")?,
        drift_probes: e.list("drift_probes")?.unwrap_or(d.drift_probes),
        drift_samples: e.count("drift_samples")?.unwrap_or(d.drift_samples),
        drift_radius: e.get("drift_radius")?.unwrap_or(d.drift_radius),
        snv_stride: e.count("snv_stride")?.unwrap_or(d.snv_stride),
        dump_trace: e.flag("dump_trace")?.unwrap_or(d.dump_trace),
    };
    let x0 = match e.raw("x0") {
        Some(v) => parse_initial("x0", v)?,
        None => InitialSpec::Point(vec![0.0]),
    };
    let y0 = match e.raw("y0") {
        Some(v) => parse_initial("y0", v)?,
        None => x0.clone(),
    };
    let seed = e.raw("seed").unwrap_or_default();
    let config = RunConfig {
        target: parse_target(e)?,
        alpha_tilde: e.require("alpha_tilde", e.get("alpha_tilde")?)?,
        epsilon: e.require("epsilon", e.get("epsilon")?)?,
        kind: e.raw("kind").map(parse_kind).transpose()?.unwrap_or(NonlinearKind::Exchange),
        sigma_pi: e.require("sigma_pi", e.list("sigma_pi")?)?,
        sigma_eta: e.require("sigma_eta", e.list("sigma_eta")?)?,
        k_iterate: e.count("k_iterate")?.unwrap_or(1),
        p_iterate: e.count("p_iterate")?.unwrap_or(1),
        n_iters: e.require("n_iters", e.count("n_iters")?)?,
        burn_in: e.count("burn_in")?.unwrap_or(0),
        x0,
        y0,
        seed: seed.parse::<u64>().map_err(|err| parse_err("seed", seed, err.to_string()))?,
        feed_after_burnin: e.flag("feed_after_burnin")?.unwrap_or(false),
        store_trace: e.flag("store_trace")?.unwrap_or(false),
        lyapunov: parse_lyapunov(e)?,
        harness,
    };
    config.validate().map_err(|err| {
        if err.is_config() {
            err
        } else {
            // the target or Lyapunov constructor rejected the values
            let msg = err.to_string();
            let key = if msg.contains("log_pi_sup") { "log_pi_sup" } else { "target" };
            parse_err(key, e.raw(key).unwrap_or("mixture_normals_1d"), msg)
        }
    })?;
    Ok(config)
}

/// Parses a configuration, then applies `overrides` on top of it.
pub fn parse_config_with(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut entries = Entries::parse(text)?;
    for (k, v) in overrides {
        if !KNOWN_KEYS.contains(&k.as_str()) {
            return Err(Error::UnknownKey(k.clone()));
        }
        entries.map.insert(k.clone(), v.clone());
    }
    build(&entries)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[])
}

pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config_with(&text, overrides)
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn emit_initial(spec: &InitialSpec) -> String {
    match spec {
        InitialSpec::Point(p) => format!("point:{}", join(p)),
        InitialSpec::Uniform { lo, hi } => format!("uniform:{lo},{hi}"),
    }
}

/// Writes every resolved value. Floats use the shortest representation that
/// parses back to the same bits.
pub fn emit_config(c: &RunConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    match &c.target {
        TargetSpec::StdNormal { dimension } => {
            kv("target", "std_normal".into());
            kv("dimension", dimension.to_string());
        }
        TargetSpec::MixtureNormals1d { weights, means, std_devs } => {
            kv("target", "mixture_normals_1d".into());
            kv("weights", join(weights));
            kv("means", join(means));
            kv("std_devs", join(std_devs));
        }
    }
    kv("epsilon", c.epsilon.to_string());
    kv("alpha_tilde", c.alpha_tilde.to_string());
    kv("kind", kind_name(c.kind).into());
    kv("sigma_pi", join(&c.sigma_pi));
    kv("sigma_eta", join(&c.sigma_eta));
    kv("k_iterate", c.k_iterate.to_string());
    kv("p_iterate", c.p_iterate.to_string());
    kv("n_iters", c.n_iters.to_string());
    kv("burn_in", c.burn_in.to_string());
    kv("x0", emit_initial(&c.x0));
    kv("y0", emit_initial(&c.y0));
    kv("seed", c.seed.to_string());
    kv("feed_after_burnin", c.feed_after_burnin.to_string());
    kv("store_trace", c.store_trace.to_string());
    if let Some(l) = &c.lyapunov {
        kv("s_v", l.s_v.to_string());
        kv("s_w", l.s_w.to_string());
        kv("r_star", l.r_star.to_string());
        if let Some(sup) = l.log_pi_sup {
            kv("log_pi_sup", sup.to_string());
        }
    }
    let h = &c.harness;
    kv("repeats", h.repeats.to_string());
    kv("epsilons", join(&h.epsilons));
    kv("baseline_iters", h.baseline_iters.to_string());
    kv("compare_epsilon", h.compare_epsilon.to_string());
    if let Some(f) = h.calibration_factor {
        kv("calibration_factor", f.to_string());
    }
    kv("drift_probes", join(&h.drift_probes));
    kv("drift_samples", h.drift_samples.to_string());
    kv("drift_radius", h.drift_radius.to_string());
    kv("snv_stride", h.snv_stride.to_string());
    kv("dump_trace", h.dump_trace.to_string());
    s
}
