//! Scenario files: sectioned TOML mapped onto [`Scenario`].
//!
//! ```toml
//! [system]
//! N = 100
//! clen = 1000000
//! beta = 0.1          # or xlen, never both
//! vlen = 0
//! lambda = 0.01
//!
//! [repairer]
//! kind = "liquid"     # liquid | advanced
//! variant = "periodic"
//! period = 1.0
//!
//! [codec]
//! backend = "byte"
//!
//! [run]
//! failures = 1000
//! trials = 4
//! seed = 7
//!
//! [output]
//! csv = "trials.csv"
//! trace = false
//! ```

use std::fmt;

use liquidsim_core::failure_gen::IdentifierModel;
use liquidsim_core::sim::{RepairerKind, Scenario, Timing};
use liquidsim_core::{Backend, EpsilonSet};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid { path: String, line: Option<usize>, message: String },
}

/// Bit count that may exceed the TOML integer range; written as a string
/// when it does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bits(pub u128);

impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(self.0) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&self.0.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Bits;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative integer, or a decimal string for values above 2^63")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Bits, E> {
                u128::try_from(v).map(Bits).map_err(|_| E::custom(format!("{v} is negative")))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Bits, E> {
                Ok(Bits(v as u128))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Bits, E> {
                v.parse().map(Bits).map_err(|_| E::custom(format!("`{v}` is not a non-negative integer")))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub system: SystemSection,
    pub repairer: RepairerSection,
    #[serde(default)]
    pub codec: CodecSection,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(rename = "N")]
    pub nodes: u32,
    pub clen: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xlen: Option<Bits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "zero_bits")]
    pub vlen: Bits,
    /// Required for Poisson failures; derived from the period otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

fn zero_bits() -> Bits {
    Bits(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Periodic,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepairerSection {
    pub kind: RepairerKind,
    pub variant: Variant,
    /// Failure interarrival time of the periodic variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default = "default_eps")]
    pub eps_c: f64,
    #[serde(default = "default_eps")]
    pub eps_d: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Advanced repairer helper count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<u32>,
    /// Liquid Poisson step duration; `inf` disables repair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_duration: Option<f64>,
}

fn default_eps() -> f64 {
    EpsilonSet::default().eps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSection {
    pub backend: Backend,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self { backend: Backend::Byte }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ids {
    Uniform,
    DistinctPhase,
    Gseq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub failures: u64,
    #[serde(default = "one")]
    pub trials: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_window: Option<f64>,
    #[serde(default = "uniform")]
    pub ids: Ids,
    /// Block length `m` of the non-uniform id models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids_block: Option<u32>,
    #[serde(default = "one_u64")]
    pub check_every: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_threshold: Option<u32>,
}

fn one() -> u32 {
    1
}

fn one_u64() -> u64 {
    1
}

fn uniform() -> Ids {
    Ids::Uniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Relative paths resolve against `--out`.
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_summary")]
    pub summary: String,
    #[serde(default)]
    pub trace: bool,
}

fn default_csv() -> String {
    "trials.csv".into()
}

fn default_summary() -> String {
    "summary.jsonl".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { csv: default_csv(), summary: default_summary(), trace: false }
    }
}

/// 1-based line of `key` inside `[section]`, or of the section header when
/// the key is absent.
fn line_of(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

impl ScenarioFile {
    pub fn load(path: &str) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&src, path)
    }

    /// Parses and checks `src`; `path` only labels error messages.
    pub fn parse(src: &str, path: &str) -> Result<Self, ConfigError> {
        let file: Self = toml::from_str(src)
            .map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string().trim_end().to_string() })?;
        file.check().map_err(|(section, key, message)| ConfigError::Invalid {
            path: path.into(),
            line: line_of(src, section, key),
            message,
        })?;
        Ok(file)
    }

    /// Cross-key rules serde cannot express, as `(section, key, message)`.
    fn check(&self) -> Result<(), (&'static str, &'static str, String)> {
        let s = &self.system;
        match (s.xlen, s.beta) {
            (Some(_), Some(_)) => {
                return Err(("system", "xlen", "both `beta` and `xlen` are set; give exactly one of them".into()))
            }
            (None, None) => return Err(("system", "beta", "one of `beta` or `xlen` is required".into())),
            _ => {}
        }
        if let Some(Bits(x)) = s.xlen {
            let cap = s.nodes as u128 * s.clen as u128;
            if x == 0 || x >= cap {
                return Err(("system", "xlen", format!("xlen = {x} must lie in (0, N*clen = {cap})")));
            }
        }
        let rep = &self.repairer;
        match rep.variant {
            Variant::Periodic if rep.period.is_none() => {
                return Err(("repairer", "period", "the periodic variant needs `period`".into()))
            }
            Variant::Poisson if rep.period.is_some() => {
                return Err(("repairer", "period", "`period` only applies to the periodic variant".into()))
            }
            Variant::Poisson if s.lambda.is_none() => {
                return Err(("system", "lambda", "the poisson variant needs `lambda`".into()))
            }
            _ => {}
        }
        if rep.r.is_some() && rep.kind != RepairerKind::Advanced {
            return Err(("repairer", "r", "`r` only applies to the advanced repairer".into()));
        }
        if rep.step_duration.is_some() && (rep.kind != RepairerKind::Liquid || rep.variant != Variant::Poisson) {
            return Err(("repairer", "step_duration", "`step_duration` only applies to liquid poisson".into()));
        }
        let run = &self.run;
        match (run.ids, run.ids_block) {
            (Ids::Uniform, Some(_)) => {
                return Err(("run", "ids_block", "`ids_block` needs a non-uniform `ids` model".into()))
            }
            (Ids::DistinctPhase | Ids::Gseq, None) => {
                return Err(("run", "ids_block", "this `ids` model needs `ids_block`".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Storage overhead, from `beta` or `xlen`.
    pub fn beta(&self) -> f64 {
        let s = &self.system;
        match (s.beta, s.xlen) {
            (Some(b), _) => b,
            (None, Some(Bits(x))) => {
                let cap = s.nodes as u128 * s.clen as u128;
                (cap - x) as f64 / cap as f64
            }
            (None, None) => unreachable!("checked at parse time"),
        }
    }

    pub fn scenario(&self) -> Scenario {
        let s = &self.system;
        let rep = &self.repairer;
        let timing = match rep.variant {
            Variant::Periodic => Timing::Periodic { period: rep.period.expect("checked at parse time") },
            Variant::Poisson => Timing::Poisson,
        };
        let mut sc = Scenario::new(s.nodes, s.clen, self.beta(), rep.kind, timing);
        if let Some(l) = s.lambda {
            sc.lambda = l;
        }
        sc.vlen = s.vlen.0;
        sc.r = rep.r;
        sc.step_duration = rep.step_duration;
        sc.backend = self.codec.backend;
        sc.eps = EpsilonSet { eps_c: rep.eps_c, eps_d: rep.eps_d, eps: rep.eps };
        let run = &self.run;
        sc.failures = run.failures;
        sc.trials = run.trials;
        sc.seed = run.seed;
        sc.peak_window = run.peak_window;
        sc.ids = match (run.ids, run.ids_block) {
            (Ids::DistinctPhase, Some(m)) => IdentifierModel::DistinctPhase { m },
            (Ids::Gseq, Some(m)) => IdentifierModel::GseqConstruction { m },
            _ => IdentifierModel::Uniform,
        };
        sc.check_every = run.check_every;
        if let Some(t) = run.check_threshold {
            sc.check_threshold = t;
        }
        sc.trace = self.output.trace;
        sc
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[system]
N = 10
clen = 1000
beta = 0.2

[repairer]
kind = "liquid"
variant = "periodic"
period = 1.0

[run]
failures = 100
seed = 3
"#;

    fn parse(src: &str) -> Result<ScenarioFile, ConfigError> {
        ScenarioFile::parse(src, "test.toml")
    }

    #[test]
    fn defaults_fill_in() {
        let f = parse(BASE).unwrap();
        assert_eq!(f.codec.backend, Backend::Byte);
        assert_eq!(f.output, OutputSection::default());
        let sc = f.scenario();
        assert_eq!((sc.nodes, sc.clen, sc.failures, sc.trials, sc.seed), (10, 1000, 100, 1, 3));
        assert_eq!(sc.timing, Timing::Periodic { period: 1.0 });
        assert_eq!(sc.lambda, 0.1);
        assert_eq!(sc.eps, EpsilonSet::default());
    }

    #[test]
    fn both_sizes_named_with_line() {
        let src = BASE.replace("beta = 0.2", "beta = 0.2\nxlen = 8000");
        let msg = parse(&src).unwrap_err().to_string();
        assert!(msg.contains("`beta`") && msg.contains("`xlen`"), "{msg}");
        assert!(msg.contains("line 6:"), "{msg}");
    }

    #[test]
    fn missing_size_rejected() {
        let msg = parse(&BASE.replace("beta = 0.2\n", "")).unwrap_err().to_string();
        assert!(msg.contains("`beta` or `xlen`") && msg.contains("line 2:"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let msg = parse(&BASE.replace("seed = 3", "seed = 3\nsed = 4")).unwrap_err().to_string();
        assert!(msg.contains("unknown field `sed`") && msg.contains("line 15"), "{msg}");
        let msg = parse(&format!("{BASE}\n[extra]\nx = 1\n")).unwrap_err().to_string();
        assert!(msg.contains("unknown field `extra`"), "{msg}");
    }

    #[test]
    fn xlen_maps_to_beta() {
        let f = parse(&BASE.replace("beta = 0.2", "xlen = 8000")).unwrap();
        assert!((f.scenario().beta - 0.2).abs() < 1e-15);
    }

    #[test]
    fn large_xlen_as_string() {
        let src = BASE.replace(
            "N = 10\nclen = 1000\nbeta = 0.2",
            "N = 100000\nclen = 10000000000000000\nxlen = \"900000000000000000000\"",
        );
        let f = parse(&src).unwrap();
        assert_eq!(f.system.xlen, Some(Bits(9 * 10u128.pow(20))));
        let again = parse(&f.to_toml()).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn dump_round_trip() {
        let src = BASE.replace(
            "[run]",
            "[codec]\nbackend = \"symbolic\"\n\n[run]\npeak_window = 0.5\nids = \"gseq\"\nids_block = 4",
        );
        let f = parse(&src).unwrap();
        let dumped = f.to_toml();
        let g = parse(&dumped).unwrap();
        assert_eq!(f, g);
        assert_eq!(f.scenario(), g.scenario());
        assert_eq!(g.to_toml(), dumped);
    }

    #[test]
    fn infinite_step_duration_round_trips() {
        let src = BASE
            .replace("beta = 0.2", "beta = 0.2\nlambda = 0.1")
            .replace("variant = \"periodic\"\nperiod = 1.0", "variant = \"poisson\"\nstep_duration = inf");
        let f = parse(&src).unwrap();
        assert_eq!(f.scenario().step_duration, Some(f64::INFINITY));
        assert_eq!(parse(&f.to_toml()).unwrap(), f);
    }

    #[test]
    fn variant_specific_keys() {
        let msg = parse(&BASE.replace("period = 1.0", "")).unwrap_err().to_string();
        assert!(msg.contains("`period`"), "{msg}");
        let msg = parse(&BASE.replace("period = 1.0", "period = 1.0\nr = 3")).unwrap_err().to_string();
        assert!(msg.contains("`r`") && msg.contains("line 11"), "{msg}");
        let poisson = BASE.replace("variant = \"periodic\"\nperiod = 1.0", "variant = \"poisson\"");
        let msg = parse(&poisson).unwrap_err().to_string();
        assert!(msg.contains("`lambda`"), "{msg}");
    }

    #[test]
    fn parse_error_has_line() {
        let msg = parse(&BASE.replace("failures = 100", "failures = \"many\"")).unwrap_err().to_string();
        assert!(msg.contains("line 13"), "{msg}");
    }
}
