//! Plain-text experiment configuration.
//!
//! ```text
//! spinsys {
//!     channels 13C
//!     nuclei 13C 13C
//!     shift 1 60p -76p 0.9 0 0 94
//!     dipole 1 2 -2142 0 90 120.8
//! }
//! par {
//!     proton_frequency 400e6
//!     spin_rate 10000
//! }
//! sequence {
//!     name rfdr
//!     p180 5u
//! }
//! ```
//!
//! Numbers accept the suffixes `u` (1e-6), `m` (1e-3) and `k` (1e3); shift
//! values accept `p` (ppm of the nucleus Larmor frequency).

use std::collections::BTreeMap;


use thiserror::Error;

use crate::pulse::{
    build_adiabatic_rfdr, build_c7, build_respiration_cp, build_rfdr, gaussian_pulse, tangential_sweep,
    AmplitudeRamp, C7Element, PhaseCycle, PhaseDirection, PulseSegment, PulseSequence, RespirationParams,
    RespirationVariant, SequenceError,
};
use crate::system::{SpinSystem, SystemError};
use crate::tensor::{EulerAngles, InteractionTensor};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key '{key}' in section {section}")]
    UnknownKey { section: String, key: String },
    #[error("missing key '{key}' in section {section}")]
    MissingKey { section: String, key: String },
    #[error("bad value for {key}: {msg}")]
    Value { key: String, msg: String },
    #[error("ppm value needs proton_frequency and a known nucleus ({0})")]
    PpmWithoutLarmor(String),
    #[error("invalid override '{0}'")]
    Override(String),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// Larmor frequency relative to ¹H.
pub fn larmor_ratio(nucleus: &str) -> Option<f64> {
    Some(match nucleus {
        "1H" => 1.0,
        "2H" => 0.15350609,
        "13C" => 0.25144953,
        "15N" => 0.10136767,
        "19F" => 0.94094011,
        "31P" => 0.40480742,
        _ => return None,
    })
}

/// Keys of the `par` section with their defaults (`None` = required or absent).
pub const PAR_KEYS: &[(&str, Option<&str>)] = &[
    ("proton_frequency", None),
    ("spin_rate", None),
    ("start_operator", Some("I1z")),
    ("detect_operator", Some("I2z")),
    ("crystal_file", Some("zcw89")),
    ("gamma_angles", Some("9")),
    ("slice_dt", None),
    ("grid", Some("200")),
    ("np", None),
    ("rotor_angle", Some("54.735610317245346")),
    ("k_max", Some("30")),
    ("tail_tol", Some("1e-6")),
    ("exact_tol", Some("1e-3")),
    ("near_threshold", None),
];

const SEQ_KEYS: &[(&str, &[&str])] = &[
    ("rfdr", &["channel", "p180", "rf", "delta_tau", "cycle", "blocks"]),
    ("adiabatic_rfdr", &["channel", "p180", "rf", "n_blocks", "tau_sweep", "x_co"]),
    (
        "respiration",
        &[
            "tau_p", "rf", "rf_I", "rf_S", "variant", "tau_com", "ramp_span", "ramp_center", "ramp_repeats", "periods",
        ],
    ),
    ("c7", &["channel", "element", "direction", "cycles"]),
    ("cw", &["channel", "rf", "phase", "duration"]),
    ("gaussian", &["channel", "duration", "sigma", "flip", "steps"]),
];

/// Parses a number with an optional `u`, `m` or `k` suffix.
pub fn parse_number(key: &str, s: &str) -> Result<f64, ConfigError> {
    let bad = |m: String| ConfigError::Value { key: key.into(), msg: m };
    // divide by exact powers of ten so "5u" is the same double as 5e-6
    let (body, mul, div) = match s.chars().last() {
        Some('u') => (&s[..s.len() - 1], 1.0, 1e6),
        Some('m') => (&s[..s.len() - 1], 1.0, 1e3),
        Some('k') => (&s[..s.len() - 1], 1e3, 1.0),
        _ => (s, 1.0, 1.0),
    };
    let v: f64 = body.parse().map_err(|e: std::num::ParseFloatError| bad(format!("'{s}': {e}")))?;
    if !v.is_finite() {
        return Err(bad(format!("'{s}' is not finite")));
    }
    Ok(v * mul / div)
}

/// Sections as parsed, before interpretation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawConfig {
    pub spinsys: Vec<(usize, Vec<String>)>,
    pub par: BTreeMap<String, String>,
    pub sequence: BTreeMap<String, String>,
    pub scan: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        let mut section: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if line == "}" {
                if section.take().is_none() {
                    return Err(ConfigError::Syntax { line: ln, msg: "unmatched '}'".into() });
                }
                continue;
            }
            if let Some(name) = line.strip_suffix('{') {
                if section.is_some() {
                    return Err(ConfigError::Syntax { line: ln, msg: "nested section".into() });
                }
                let name = name.trim();
                if !["spinsys", "par", "sequence", "scan"].contains(&name) {
                    return Err(ConfigError::Syntax { line: ln, msg: format!("unknown section '{name}'") });
                }
                section = Some(name.to_string());
                continue;
            }
            let words: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            match section.as_deref() {
                Some("spinsys") => raw.spinsys.push((ln, words)),
                Some(sec) => {
                    if words.len() < 2 {
                        return Err(ConfigError::Syntax { line: ln, msg: "expected 'key value'".into() });
                    }
                    let map = match sec {
                        "par" => &mut raw.par,
                        "sequence" => &mut raw.sequence,
                        _ => &mut raw.scan,
                    };
                    map.insert(words[0].clone(), words[1..].join(" "));
                }
                None => return Err(ConfigError::Syntax { line: ln, msg: "content outside a section".into() }),
            }
        }
        if section.is_some() {
            return Err(ConfigError::Syntax { line: text.lines().count(), msg: "unterminated section".into() });
        }
        Ok(raw)
    }

    /// `section.key=value`; a bare key goes to `par` when it is a par key, else `sequence`.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (k, v) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
        let (sec, key) = match k.split_once('.') {
            Some((s, k)) => (s.trim(), k.trim()),
            None if PAR_KEYS.iter().any(|(p, _)| *p == k.trim()) => ("par", k.trim()),
            None => ("sequence", k.trim()),
        };
        let map = match sec {
            "par" => &mut self.par,
            "sequence" => &mut self.sequence,
            "scan" => &mut self.scan,
            _ => return Err(ConfigError::Override(spec.into())),
        };
        if key.is_empty() {
            return Err(ConfigError::Override(spec.into()));
        }
        map.insert(key.to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_raw(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Par {
    pub proton_frequency: Option<f64>,
    pub spin_rate: f64,
    pub start_operator: String,
    pub detect_operator: String,
    pub crystal_file: String,
    pub gamma_angles: usize,
    pub slice_dt: Option<f64>,
    pub grid: usize,
    pub np: Option<usize>,
    /// radians
    pub rotor_angle: f64,
    pub k_max: usize,
    pub tail_tol: f64,
    pub exact_tol: f64,
    pub near_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub nuclei: Vec<String>,
    pub system: SpinSystem,
    pub par: Par,
    pub sequence: Option<SequenceSpec>,
    pub scan: BTreeMap<String, String>,
}

fn get_num(map: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>, ConfigError> {
    map.get(key).map(|v| parse_number(key, v)).transpose()
}

fn get_count(map: &BTreeMap<String, String>, key: &str) -> Result<Option<usize>, ConfigError> {
    match get_num(map, key)? {
        Some(v) if v >= 0.0 && v.fract() == 0.0 => Ok(Some(v as usize)),
        Some(v) => Err(ConfigError::Value { key: key.into(), msg: format!("{v} is not a count") }),
        None => Ok(None),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        RawConfig::parse(text)?.resolve()
    }

    fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        for k in raw.par.keys() {
            if !PAR_KEYS.iter().any(|(p, _)| p == k) {
                return Err(ConfigError::UnknownKey { section: "par".into(), key: k.clone() });
            }
        }
        let par_str = |k: &str| -> Option<String> {
            raw.par.get(k).cloned().or_else(|| {
                PAR_KEYS.iter().find(|(p, _)| *p == k).and_then(|(_, d)| d.map(str::to_string))
            })
        };
        let mut full = raw.par.clone();
        for (k, d) in PAR_KEYS {
            if let (false, Some(d)) = (full.contains_key(*k), d) {
                full.insert(k.to_string(), d.to_string());
            }
        }
        let spin_rate = get_num(&full, "spin_rate")?
            .ok_or_else(|| ConfigError::MissingKey { section: "par".into(), key: "spin_rate".into() })?;
        if !(spin_rate > 0.0) {
            return Err(ConfigError::Value { key: "spin_rate".into(), msg: "must be positive".into() });
        }
        let proton_frequency = get_num(&full, "proton_frequency")?;
        let tail_tol = get_num(&full, "tail_tol")?.unwrap();
        let exact_tol = get_num(&full, "exact_tol")?.unwrap();
        let slice_dt = get_num(&full, "slice_dt")?;
        if slice_dt.is_some_and(|d| !(d > 0.0)) {
            return Err(ConfigError::Value { key: "slice_dt".into(), msg: "must be positive".into() });
        }
        let par = Par {
            proton_frequency,
            spin_rate,
            start_operator: par_str("start_operator").unwrap(),
            detect_operator: par_str("detect_operator").unwrap(),
            crystal_file: par_str("crystal_file").unwrap(),
            gamma_angles: get_count(&full, "gamma_angles")?.unwrap().max(1),
            slice_dt,
            grid: get_count(&full, "grid")?.unwrap().max(1),
            np: get_count(&full, "np")?,
            rotor_angle: get_num(&full, "rotor_angle")?.unwrap().to_radians(),
            k_max: get_count(&full, "k_max")?.unwrap(),
            tail_tol,
            exact_tol,
            near_threshold: get_num(&full, "near_threshold")?,
        };

        let (nuclei, system) = parse_spinsys(&raw.spinsys, proton_frequency)?;
        system.validate()?;
        system.operator_from_label(&par.start_operator)?;
        system.operator_from_label(&par.detect_operator)?;

        let sequence = if raw.sequence.is_empty() {
            None
        } else {
            let name = raw
                .sequence
                .get("name")
                .ok_or_else(|| ConfigError::MissingKey { section: "sequence".into(), key: "name".into() })?
                .clone();
            let allowed = SEQ_KEYS
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| ConfigError::Value { key: "sequence.name".into(), msg: format!("unknown '{name}'") })?
                .1;
            let mut params = raw.sequence.clone();
            params.remove("name");
            for k in params.keys() {
                if !allowed.contains(&k.as_str()) {
                    return Err(ConfigError::UnknownKey { section: "sequence".into(), key: k.clone() });
                }
            }
            Some(SequenceSpec { name, params })
        };
        let cfg = ExperimentConfig { raw: raw.clone(), nuclei, system, par, sequence, scan: raw.scan.clone() };
        if cfg.sequence.is_some() {
            cfg.build_sequence()?;
        }
        Ok(cfg)
    }

    pub fn channels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for n in &self.nuclei {
            if !out.contains(n) {
                out.push(n.clone());
            }
        }
        out
    }

    pub fn tau_r(&self) -> f64 {
        1.0 / self.par.spin_rate
    }

    fn seq_num(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match &self.sequence {
            Some(s) => get_num(&s.params, key),
            None => Ok(None),
        }
    }

    fn seq_str(&self, key: &str) -> Option<String> {
        self.sequence.as_ref().and_then(|s| s.params.get(key).cloned())
    }

    fn seq_required(&self, key: &str) -> Result<f64, ConfigError> {
        self.seq_num(key)?
            .ok_or_else(|| ConfigError::MissingKey { section: "sequence".into(), key: key.into() })
    }

    /// Sequence described by the `sequence` block (one element / cycle).
    pub fn build_sequence(&self) -> Result<PulseSequence, ConfigError> {
        let spec = self
            .sequence
            .as_ref()
            .ok_or_else(|| ConfigError::MissingKey { section: "sequence".into(), key: "name".into() })?;
        let tr = self.tau_r();
        let chans = self.channels();
        let channel = self.seq_str("channel").unwrap_or_else(|| chans[0].clone());
        if !chans.contains(&channel) {
            return Err(ConfigError::Value { key: "sequence.channel".into(), msg: format!("no nucleus on '{channel}'") });
        }
        let seq = match spec.name.as_str() {
            "rfdr" => {
                let p = self.seq_required("p180")?;
                let rf = self.seq_num("rf")?.unwrap_or(0.5 / p);
                let cycle = match self.seq_str("cycle").as_deref().unwrap_or("xy8") {
                    "xy8" => PhaseCycle::XY8,
                    "xy4" => PhaseCycle::XY4,
                    "none" => PhaseCycle::None,
                    other => {
                        return Err(ConfigError::Value { key: "sequence.cycle".into(), msg: format!("unknown '{other}'") })
                    }
                };
                build_rfdr(&channel, tr, p, rf, self.seq_num("delta_tau")?.unwrap_or(0.0), cycle)?
            }
            "adiabatic_rfdr" => {
                let p = self.seq_required("p180")?;
                let rf = self.seq_num("rf")?.unwrap_or(0.5 / p);
                let n = self.seq_required("n_blocks")? as usize;
                let ts = self.seq_num("tau_sweep")?.unwrap_or(0.0);
                let xco = self.seq_num("x_co")?.unwrap_or(45.0).to_radians();
                build_adiabatic_rfdr(&channel, tr, p, rf, &tangential_sweep(n, ts, xco)?)?
            }
            "respiration" => build_respiration_cp(&self.respiration_params()?)?,
            "c7" => {
                let element = match self.seq_str("element").as_deref().unwrap_or("c7") {
                    "c7" => C7Element::C7,
                    "post" => C7Element::Post,
                    other => {
                        return Err(ConfigError::Value { key: "sequence.element".into(), msg: format!("unknown '{other}'") })
                    }
                };
                let dir = match self.seq_str("direction").as_deref().unwrap_or("inc") {
                    "inc" => PhaseDirection::Increment,
                    "dec" => PhaseDirection::Decrement,
                    other => {
                        return Err(ConfigError::Value { key: "sequence.direction".into(), msg: format!("unknown '{other}'") })
                    }
                };
                build_c7(&channel, element, self.par.spin_rate, dir)?
            }
            "cw" => {
                let d = self.seq_num("duration")?.unwrap_or(tr);
                let rf = self.seq_required("rf")?;
                let ph = self.seq_num("phase")?.unwrap_or(0.0).to_radians();
                let mut s = PulseSequence::new("cw").with_channel(&channel, vec![PulseSegment::new(d, rf, ph)]);
                s.tau_r = Some(tr);
                s
            }
            "gaussian" => {
                let d = self.seq_required("duration")?;
                let sigma = self.seq_num("sigma")?.unwrap_or(d / 8.0);
                let flip = self.seq_num("flip")?.unwrap_or(90.0).to_radians();
                let steps = self.seq_num("steps")?.unwrap_or(200.0) as usize;
                gaussian_pulse(&channel, d, sigma, flip, steps.max(1))
            }
            other => return Err(ConfigError::Value { key: "sequence.name".into(), msg: format!("unknown '{other}'") }),
        };
        Ok(seq)
    }

    /// RESPIRATION-CP parameters; the first two channels are I and S.
    pub fn respiration_params(&self) -> Result<RespirationParams, ConfigError> {
        let chans = self.channels();
        if chans.len() < 2 {
            return Err(ConfigError::Value { key: "spinsys.channels".into(), msg: "needs two channels".into() });
        }
        let tr = self.tau_r();
        let tau_p = self.seq_required("tau_p")?;
        let rf = self.seq_num("rf")?.unwrap_or(2.0 * self.par.spin_rate);
        let rf_i = self.seq_num("rf_I")?.unwrap_or(rf);
        let rf_s = self.seq_num("rf_S")?.unwrap_or(rf);
        let mut p = RespirationParams::plain(tr, tau_p, &[(&chans[0], rf_i), (&chans[1], rf_s)]);
        p.variant = match self.seq_str("variant").as_deref().unwrap_or("plain") {
            "plain" => RespirationVariant::Plain,
            "bb_sync" => RespirationVariant::BbSync,
            "bb_async" => RespirationVariant::BbAsync,
            "bb_nophase" => RespirationVariant::BbNoPhase,
            other => return Err(ConfigError::Value { key: "sequence.variant".into(), msg: format!("unknown '{other}'") }),
        };
        p.tau_com = self.seq_num("tau_com")?.unwrap_or(0.0);
        if let Some(span) = self.seq_num("ramp_span")? {
            p.sweep = Some(AmplitudeRamp {
                span,
                center: self.seq_num("ramp_center")?.unwrap_or(0.0),
                repeats: self.seq_num("ramp_repeats")?.unwrap_or(1.0) as usize,
            });
        }
        Ok(p)
    }

    /// Integer sequence parameter such as `periods`, `cycles` or `blocks`.
    pub fn sequence_count(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match &self.sequence {
            Some(s) => get_count(&s.params, key),
            None => Ok(None),
        }
    }

    /// Numeric scan value with a default.
    pub fn scan_num(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(get_num(&self.scan, key)?.unwrap_or(default))
    }

    /// `start stop count` grid from the scan block.
    pub fn scan_grid(&self, key: &str, default: (f64, f64, usize)) -> Result<Vec<f64>, ConfigError> {
        let (a, b, n) = match self.scan.get(key) {
            None => default,
            Some(v) => {
                let w: Vec<&str> = v.split_whitespace().collect();
                if w.len() != 3 {
                    return Err(ConfigError::Value { key: format!("scan.{key}"), msg: "expected 'start stop count'".into() });
                }
                (parse_number(key, w[0])?, parse_number(key, w[1])?, parse_number(key, w[2])? as usize)
            }
        };
        Ok(linspace(a, b, n))
    }

    /// Explicit value list from the scan block.
    pub fn scan_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.scan.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v.split_whitespace().map(|w| parse_number(key, w)).collect(),
        }
    }

    /// Every resolved parameter, defaults included, in a stable order.
    pub fn manifest(&self) -> Vec<(String, String)> {
        let mut m = Vec::new();
        m.push(("spinsys.nuclei".into(), self.nuclei.join(" ")));
        for (i, t) in self.system.interactions.iter().enumerate() {
            m.push((
                format!("spinsys.interaction{}", i + 1),
                format!(
                    "{:?} spin={} partner={} iso={} aniso={} eta={} euler=({}, {}, {})",
                    t.kind,
                    t.spin + 1,
                    t.partner.map_or("none".to_string(), |p| (p + 1).to_string()),
                    t.delta_iso,
                    t.delta_aniso,
                    t.eta,
                    t.euler_pas_to_crystal.alpha.to_degrees(),
                    t.euler_pas_to_crystal.beta.to_degrees(),
                    t.euler_pas_to_crystal.gamma.to_degrees()
                ),
            ));
        }
        let p = &self.par;
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        m.push(("par.proton_frequency".into(), opt(p.proton_frequency)));
        m.push(("par.spin_rate".into(), p.spin_rate.to_string()));
        m.push(("par.start_operator".into(), p.start_operator.clone()));
        m.push(("par.detect_operator".into(), p.detect_operator.clone()));
        m.push(("par.crystal_file".into(), p.crystal_file.clone()));
        m.push(("par.gamma_angles".into(), p.gamma_angles.to_string()));
        m.push(("par.slice_dt".into(), opt(p.slice_dt)));
        m.push(("par.grid".into(), p.grid.to_string()));
        m.push(("par.np".into(), p.np.map_or("none".into(), |v| v.to_string())));
        m.push(("par.rotor_angle".into(), p.rotor_angle.to_degrees().to_string()));
        m.push(("par.k_max".into(), p.k_max.to_string()));
        m.push(("par.tail_tol".into(), p.tail_tol.to_string()));
        m.push(("par.exact_tol".into(), p.exact_tol.to_string()));
        m.push(("par.near_threshold".into(), opt(p.near_threshold)));
        if let Some(s) = &self.sequence {
            m.push(("sequence.name".into(), s.name.clone()));
            for (k, v) in &s.params {
                m.push((format!("sequence.{k}"), v.clone()));
            }
        }
        for (k, v) in &self.scan {
            m.push((format!("scan.{k}"), v.clone()));
        }
        m
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn parse_spin_index(word: &str, n: usize, line: usize) -> Result<usize, ConfigError> {
    let i: usize = word
        .parse()
        .map_err(|_| ConfigError::Syntax { line, msg: format!("bad spin index '{word}'") })?;
    if i == 0 || i > n {
        return Err(ConfigError::Syntax { line, msg: format!("spin {i} does not exist") });
    }
    Ok(i - 1)
}

fn parse_spinsys(
    lines: &[(usize, Vec<String>)],
    proton_frequency: Option<f64>,
) -> Result<(Vec<String>, SpinSystem), ConfigError> {
    let nuclei: Vec<String> = lines
        .iter()
        .find(|(_, w)| w[0] == "nuclei")
        .map(|(_, w)| w[1..].to_vec())
        .ok_or_else(|| ConfigError::MissingKey { section: "spinsys".into(), key: "nuclei".into() })?;
    let labels: Vec<&str> = nuclei.iter().map(String::as_str).collect();
    let mut system = SpinSystem::new(&labels);
    let n = nuclei.len();
    let mut channels: Option<Vec<String>> = None;
    for (ln, w) in lines {
        let ln = *ln;
        let need = |k: usize| -> Result<(), ConfigError> {
            if w.len() != k {
                Err(ConfigError::Syntax { line: ln, msg: format!("'{}' expects {} fields", w[0], k - 1) })
            } else {
                Ok(())
            }
        };
        let num = |s: &str| parse_number(&w[0], s);
        match w[0].as_str() {
            "nuclei" => {}
            "channels" => channels = Some(w[1..].to_vec()),
            "shift" => {
                need(8)?;
                let q = parse_spin_index(&w[1], n, ln)?;
                let ppm = |s: &str| -> Result<f64, ConfigError> {
                    match s.strip_suffix('p') {
                        Some(body) => {
                            let lr = larmor_ratio(&nuclei[q]);
                            match (proton_frequency, lr) {
                                (Some(pf), Some(r)) => Ok(parse_number("shift", body)? * pf * r * 1e-6),
                                _ => Err(ConfigError::PpmWithoutLarmor(nuclei[q].clone())),
                            }
                        }
                        None => parse_number("shift", s),
                    }
                };
                let eta = num(&w[4])?;
                let e = EulerAngles::from_degrees(num(&w[5])?, num(&w[6])?, num(&w[7])?);
                system = system.with(InteractionTensor::shift(q, ppm(&w[2])?, ppm(&w[3])?, eta, e));
            }
            "dipole" => {
                need(7)?;
                let i = parse_spin_index(&w[1], n, ln)?;
                let j = parse_spin_index(&w[2], n, ln)?;
                let e = EulerAngles::from_degrees(num(&w[4])?, num(&w[5])?, num(&w[6])?);
                system = system.with(InteractionTensor::dipolar(i, j, num(&w[3])?, e));
            }
            "jcoupling" => {
                if w.len() < 4 {
                    return Err(ConfigError::Syntax { line: ln, msg: "'jcoupling' expects i j J".into() });
                }
                let i = parse_spin_index(&w[1], n, ln)?;
                let j = parse_spin_index(&w[2], n, ln)?;
                system = system.with(InteractionTensor::j_coupling(i, j, num(&w[3])?));
            }
            other => return Err(ConfigError::UnknownKey { section: "spinsys".into(), key: other.into() }),
        }
    }
    if let Some(ch) = channels {
        for nuc in &nuclei {
            if !ch.contains(nuc) {
                return Err(ConfigError::Value { key: "spinsys.channels".into(), msg: format!("no channel for {nuc}") });
            }
        }
    }
    Ok((nuclei, system))
}

