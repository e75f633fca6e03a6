//! Closed-form capacity and read-rate bounds.
//!
//! Everything here is a pure function of the system parameters. Bit counts
//! that feed layout math (`olen`, `F`, `M`) are exact integers; everything
//! probabilistic is `f64`. Probability bounds are never clamped: a value above
//! one is returned as-is and flagged [`Bound::vacuous`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this magnitude `2^-clen` is reported as exactly zero.
const TWO_POW_NEG_CLEN_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("{func}: argument {value} outside domain {domain}")]
    Domain { func: &'static str, value: f64, domain: &'static str },
    #[error("invalid system parameters: {0}")]
    InvalidSystem(String),
    #[error("unsupported configuration: 2F = {two_f} must be < N = {nodes} (beta' must stay below 1/2)")]
    PhaseTooLarge { two_f: u128, nodes: u64 },
    #[error("invalid epsilon: {0}")]
    InvalidEpsilon(String),
}

/// Storage system parameters. All sizes are in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub nodes: u64,
    pub clen: u128,
    pub xlen: u128,
    pub vlen: u128,
    /// Per-node failure rate, in reciprocal time units.
    pub lambda: f64,
}

impl SystemParams {
    pub fn new(nodes: u64, clen: u128, xlen: u128, vlen: u128, lambda: f64) -> Result<Self, BoundsError> {
        if nodes == 0 {
            return Err(BoundsError::InvalidSystem("N must be positive".into()));
        }
        if clen == 0 {
            return Err(BoundsError::InvalidSystem("clen must be positive".into()));
        }
        if xlen == 0 {
            return Err(BoundsError::InvalidSystem("xlen must be positive".into()));
        }
        if xlen > nodes as u128 * clen {
            return Err(BoundsError::InvalidSystem(format!(
                "xlen = {xlen} exceeds capacity N*clen = {}",
                nodes as u128 * clen
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(BoundsError::InvalidSystem(format!("lambda = {lambda} must be finite and >= 0")));
        }
        Ok(Self { nodes, clen, xlen, vlen, lambda })
    }

    /// Builds parameters from a storage overhead instead of a source size;
    /// `xlen` is `(1 - beta) * N * clen` rounded to the nearest bit.
    pub fn from_beta(nodes: u64, clen: u128, beta: f64, vlen: u128, lambda: f64) -> Result<Self, BoundsError> {
        if !(0.0..1.0).contains(&beta) {
            return Err(BoundsError::InvalidSystem(format!("beta = {beta} must lie in [0, 1)")));
        }
        let capacity = nodes as u128 * clen;
        let xlen = ((1.0 - beta) * capacity as f64).round() as u128;
        Self::new(nodes, clen, xlen.min(capacity), vlen, lambda)
    }

    pub fn capacity(&self) -> u128 {
        self.nodes as u128 * self.clen
    }

    /// Storage overhead `1 - xlen / (N * clen)`.
    pub fn beta(&self) -> f64 {
        let spare = self.capacity() - self.xlen;
        spare as f64 / self.capacity() as f64
    }

    /// Rate at which failures erase capacity, `lambda * N * clen`.
    pub fn erasure_rate(&self) -> f64 {
        self.lambda * self.nodes as f64 * self.clen as f64
    }
}

/// Quantities that define an analysis phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams {
    pub nodes: u64,
    pub olen: u128,
    /// Minimal node count whose capacity covers `olen`.
    pub f: u128,
    pub beta_prime: f64,
    /// Distinct failures per phase, `2F`.
    pub m: u128,
    /// Expected-failure budget `lni(2 beta') * N`.
    pub f_prime: f64,
}

/// Slack parameters of the probabilistic bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSet {
    pub eps_c: f64,
    pub eps_d: f64,
    pub eps: f64,
}

impl Default for EpsilonSet {
    fn default() -> Self {
        Self { eps_c: 0.1, eps_d: 0.1, eps: 0.1 }
    }
}

impl EpsilonSet {
    pub fn new(eps_c: f64, eps_d: f64, eps: f64) -> Result<Self, BoundsError> {
        let set = Self { eps_c, eps_d, eps };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), BoundsError> {
        for (name, v) in [("eps_c", self.eps_c), ("eps_d", self.eps_d), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BoundsError::InvalidEpsilon(format!("{name} = {v} must be > 0")));
            }
        }
        if self.eps_c > 1.0 {
            return Err(BoundsError::InvalidEpsilon(format!("eps_c = {} must be <= 1", self.eps_c)));
        }
        Ok(())
    }
}

/// A probability bound. `vacuous` is set when the value exceeds one and
/// therefore says nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub vacuous: bool,
}

impl Bound {
    pub fn new(value: f64) -> Self {
        Self { value, vacuous: value > 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreBounds {
    /// `Gamma_i` for `i = 1..=2F-1`; entry 0 is `Gamma_1`.
    pub gamma: Vec<f64>,
    pub delta_core: Bound,
    /// Minimum average bits read per distinct failure, in bits.
    pub rate_per_failure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub system: SystemParams,
    pub phase: PhaseParams,
    pub eps: EpsilonSet,
    pub beta: f64,
    /// `Gamma_1..Gamma_{2F-1}`; omitted from serialized output because it can
    /// hold tens of thousands of entries.
    #[serde(skip)]
    pub gamma: Vec<f64>,
    pub delta_core: Bound,
    pub delta_distinct: Bound,
    pub delta_uniform: Bound,
    pub delta_poisson: Bound,
    pub two_pow_neg_clen: f64,
    pub core_rate_per_failure: f64,
    pub uniform_rate_per_failure: f64,
    /// Lower bound on the average read rate in bits per time unit
    /// (zero when `lambda == 0`).
    pub poisson_rate: f64,
    /// Window within which the read-rate statement applies (infinite when
    /// `lambda == 0`).
    pub delta_window: f64,
    /// `(1 - beta') / lni(2 beta')`, the limiting read-rate to erasure-rate ratio.
    pub asymptotic_ratio: f64,
    pub erasure_rate: f64,
    /// Read rate used to evaluate `capacity`.
    pub capacity_read_rate: f64,
    pub capacity: f64,
}

/// `ln(1 / (1 - zeta))` for `0 <= zeta < 1`.
pub fn lni(zeta: f64) -> Result<f64, BoundsError> {
    if !(0.0..1.0).contains(&zeta) {
        return Err(BoundsError::Domain { func: "lni", value: zeta, domain: "[0, 1)" });
    }
    Ok(-(-zeta).ln_1p())
}

/// `zeta - ln(1 + zeta)` for `zeta > -1`.
pub fn lnd(zeta: f64) -> Result<f64, BoundsError> {
    if !(zeta > -1.0) || !zeta.is_finite() {
        return Err(BoundsError::Domain { func: "lnd", value: zeta, domain: "(-1, inf)" });
    }
    if zeta.abs() < 1e-3 {
        // Alternating series; the direct form cancels badly this close to 0.
        let mut term = zeta * zeta;
        let mut sum = 0.0;
        for n in 2..12 {
            let signed = if n % 2 == 0 { term } else { -term };
            sum += signed / n as f64;
            term *= zeta;
        }
        return Ok(sum);
    }
    Ok(zeta - zeta.ln_1p())
}

/// Derives `olen`, `F`, `beta'`, `M` and `F'`. Rejects configurations with
/// `2F >= N`.
pub fn derive_phase_params(sys: &SystemParams) -> Result<PhaseParams, BoundsError> {
    let olen = sys.capacity() - sys.xlen + sys.vlen + 1;
    let f = olen.div_ceil(sys.clen);
    let m = 2 * f;
    if m >= sys.nodes as u128 {
        return Err(BoundsError::PhaseTooLarge { two_f: m, nodes: sys.nodes });
    }
    let beta_prime = f as f64 / sys.nodes as f64;
    let f_prime = lni(2.0 * beta_prime)? * sys.nodes as f64;
    Ok(PhaseParams { nodes: sys.nodes, olen, f, beta_prime, m, f_prime })
}

/// `Gamma_i`, the core failure probability and the per-failure read rate.
pub fn core_bounds(phase: &PhaseParams, clen: u128, eps: &EpsilonSet) -> CoreBounds {
    let n = phase.nodes as f64;
    let f = phase.f as f64;
    let clen = clen as f64;
    let denom = 2.0 * f - 1.0;
    let gamma = (1..phase.m as u64)
        .map(|i| {
            let i = i as f64;
            (1.0 - eps.eps_c) * i * (n - (i + 1.0) / 2.0) * clen / denom
        })
        .collect();
    let delta_core = 2.0 * f * (-eps.eps_c * eps.eps_c * f / 4.0 + eps.eps_c).exp();
    let rate_per_failure = (1.0 - eps.eps_c) * (1.0 - phase.beta_prime) * clen / (2.0 * phase.beta_prime);
    CoreBounds { gamma, delta_core: Bound::new(delta_core), rate_per_failure }
}

/// `2^-clen`, saturated to zero once it drops below `1e-300`.
pub fn two_pow_neg(clen: u128) -> f64 {
    let log = -(clen as f64) * std::f64::consts::LN_2;
    if log < TWO_POW_NEG_CLEN_FLOOR.ln() {
        0.0
    } else {
        log.exp()
    }
}

/// Capacity `(1 - E / (2R)) * N * clen` for erasure rate `E` and read rate `R`.
/// Without erasures the whole raw capacity is usable.
pub fn capacity(erasure_rate: f64, read_rate: f64, nodes: u64, clen: u128) -> f64 {
    let raw = nodes as f64 * clen as f64;
    if erasure_rate == 0.0 {
        return raw;
    }
    (1.0 - erasure_rate / (2.0 * read_rate)) * raw
}

/// Evaluates the full bound set for uniform and Poisson failures.
///
/// `read_rate` is the repairer read rate at which the capacity formula is
/// evaluated; when absent the Poisson lower-bound rate is used.
pub fn poisson_bounds(
    sys: &SystemParams,
    phase: &PhaseParams,
    eps: &EpsilonSet,
    read_rate: Option<f64>,
) -> Result<BoundReport, BoundsError> {
    eps.validate()?;
    let core = core_bounds(phase, sys.clen, eps);
    let n = sys.nodes as f64;
    let f = phase.f as f64;
    let bp = phase.beta_prime;
    let lni2 = lni(2.0 * bp)?;

    let delta_distinct = 2.0 * f * (-2.0 * bp * (1.0 - 2.0 * bp) * n * lnd(eps.eps_d)?).exp() / (1.0 + eps.eps_d);
    let tail = two_pow_neg(sys.clen);
    let delta_uniform = delta_distinct + f * (core.delta_core.value + tail);
    let delta_poisson =
        delta_uniform + (1.0 + eps.eps_d) * 2.0 * phase.f_prime * (-2.0 * f * lnd(eps.eps)?).exp() / (1.0 + eps.eps);

    let erasure_rate = sys.erasure_rate();
    let asymptotic_ratio = (1.0 - bp) / lni2;
    let uniform_rate_per_failure = (1.0 - eps.eps_c) / (1.0 + eps.eps_d) * (1.0 - bp) * sys.clen as f64 / lni2;
    let poisson_rate = (1.0 - eps.eps_c) / ((1.0 + eps.eps_d) * (1.0 + eps.eps)) * asymptotic_ratio * erasure_rate;
    let delta_window =
        if sys.lambda > 0.0 { (1.0 + eps.eps_d) * (1.0 + eps.eps) * 2.0 * lni2 / sys.lambda } else { f64::INFINITY };
    let capacity_read_rate = read_rate.unwrap_or(poisson_rate);
    Ok(BoundReport {
        system: *sys,
        phase: *phase,
        eps: *eps,
        beta: sys.beta(),
        gamma: core.gamma,
        delta_core: core.delta_core,
        delta_distinct: Bound::new(delta_distinct),
        delta_uniform: Bound::new(delta_uniform),
        delta_poisson: Bound::new(delta_poisson),
        two_pow_neg_clen: tail,
        core_rate_per_failure: core.rate_per_failure,
        uniform_rate_per_failure,
        poisson_rate,
        delta_window,
        asymptotic_ratio,
        erasure_rate,
        capacity_read_rate,
        capacity: capacity(erasure_rate, capacity_read_rate, sys.nodes, sys.clen),
    })
}

/// Convenience wrapper: phase derivation followed by [`poisson_bounds`].
pub fn bound_report(sys: &SystemParams, eps: &EpsilonSet) -> Result<BoundReport, BoundsError> {
    let phase = derive_phase_params(sys)?;
    poisson_bounds(sys, &phase, eps, None)
}

/// Expected number of failures until `i` distinct failures beyond the first,
/// `sum_{j=1..i} N / (N - j)`.
pub fn expected_distinct_failures(nodes: u64, i: u64) -> Result<f64, BoundsError> {
    if i >= nodes {
        return Err(BoundsError::Domain { func: "expected_distinct_failures", value: i as f64, domain: "i < N" });
    }
    let n = nodes as f64;
    Ok((1..=i).map(|j| n / (n - j as f64)).sum())
}

/// Tail bound `n * exp(-alpha^2 / (2 n c^2))` for a bounded-difference
/// supermartingale.
pub fn supermartingale_tail(n: u64, c: f64, alpha: f64) -> f64 {
    let n = n as f64;
    n * (-(alpha * alpha) / (2.0 * n * c * c)).exp()
}
