//! Stability criteria, critical clearing time search and margin labels.

use std::collections::HashMap;

use crate::grid::{FaultSpec, Network};
use crate::tds::{simulate, EquilibriumState, Scenario, Trace};
use crate::{Error, Result};

/// Rotor angle spread at or above which a case is angle-unstable.
pub const TSI_LIMIT_DEG: f64 = 180.0;
pub const DEFAULT_V_TH: f64 = 0.8;
pub const DEFAULT_T_MAX_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    Tas,
    Tvs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsiOutcome {
    pub tsi_deg: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvsOutcome {
    pub stable: bool,
    pub v_min_pu: f64,
    /// Longest contiguous post-clearing excursion at or below the threshold.
    pub violation_duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityLabels {
    pub tas_stable: bool,
    pub tvs_stable: bool,
    pub tsi_deg: f64,
    pub v_min_pu: f64,
    pub violation_duration_s: f64,
}

impl StabilityLabels {
    pub fn stable(&self, criterion: Criterion) -> bool {
        match criterion {
            Criterion::Tas => self.tas_stable,
            Criterion::Tvs => self.tvs_stable,
        }
    }
}

/// Transient stability index: the largest rotor angle separation between
/// any two generators over the trace, in degrees.
pub fn tsi(trace: &Trace) -> Result<TsiOutcome> {
    if trace.n_generators < 2 {
        return Err(Error::InvalidArgument("angle criterion needs at least two generators".into()));
    }
    let mut spread: f64 = 0.0;
    for k in 0..trace.len() {
        let (lo, hi) = trace
            .angles_at(k)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
        spread = spread.max(hi - lo);
    }
    let tsi_deg = spread.to_degrees();
    let stable = !trace.diverged && !trace.islanded && tsi_deg < TSI_LIMIT_DEG;
    Ok(TsiOutcome { tsi_deg, stable })
}

/// Voltage recovery criterion: after clearing, every load bus must come back
/// strictly above `v_th`, and no excursion may last `t_max_s` or longer.
/// A bus still at or below `v_th` at the end of the trace has not
/// recovered. The clock of an excursion already in progress at clearing
/// starts at the clearing instant.
pub fn tvs(trace: &Trace, v_th: f64, t_max_s: f64) -> TvsOutcome {
    let first = trace.clear_step.unwrap_or(0).min(trace.len());
    let clock_start = trace.clear_time_s.unwrap_or_else(|| trace.times.get(first).copied().unwrap_or(0.0));
    let mut v_min = f64::INFINITY;
    let mut longest: f64 = 0.0;
    let mut recovered = true;
    for &bus in &trace.load_buses {
        let mut run_start: Option<f64> = None;
        for k in first..trace.len() {
            let v = trace.v_mag_at(k)[bus];
            let t = trace.times[k];
            v_min = v_min.min(v);
            if v <= v_th {
                if run_start.is_none() {
                    run_start = Some(if k == first { clock_start.min(t) } else { t });
                }
            } else if let Some(start) = run_start.take() {
                longest = longest.max(t - start);
            }
        }
        if let Some(start) = run_start {
            recovered = false;
            if let Some(&end) = trace.times.last() {
                longest = longest.max(end - start);
            }
        }
    }
    if !v_min.is_finite() {
        v_min = 0.0;
    }
    let stable = !trace.diverged && !trace.islanded && recovered && longest < t_max_s;
    TvsOutcome { stable, v_min_pu: v_min, violation_duration_s: longest }
}

/// Applies both criteria with the default thresholds.
pub fn label_trace(trace: &Trace) -> Result<StabilityLabels> {
    let angle = tsi(trace)?;
    let voltage = tvs(trace, DEFAULT_V_TH, DEFAULT_T_MAX_S);
    Ok(StabilityLabels {
        tas_stable: angle.stable,
        tvs_stable: voltage.stable,
        tsi_deg: angle.tsi_deg,
        v_min_pu: voltage.v_min_pu,
        violation_duration_s: voltage.violation_duration_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CctSearchConfig {
    pub t_min_s: f64,
    pub t_max_s: f64,
    pub coarse_step_s: f64,
    pub tolerance_s: f64,
}

impl CctSearchConfig {
    pub fn from_cycles(min: f64, max: f64, coarse: f64, tolerance: f64, nominal_hz: f64) -> Self {
        Self {
            t_min_s: min / nominal_hz,
            t_max_s: max / nominal_hz,
            coarse_step_s: coarse / nominal_hz,
            tolerance_s: tolerance / nominal_hz,
        }
    }

    /// Bracket of 1 to 30 cycles, coarse step 2 cycles, resolution 0.25 cycle.
    pub fn default_for(nominal_hz: f64) -> Self {
        Self::from_cycles(1.0, 30.0, 2.0, 0.25, nominal_hz)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min_s < self.t_max_s) {
            return Err(Error::InvalidArgument("CCT bracket needs t_min < t_max".into()));
        }
        if !(self.tolerance_s > 0.0 && self.coarse_step_s > 0.0) {
            return Err(Error::InvalidArgument("CCT steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bracket {
    Within,
    /// Unstable already at `t_min_s`; the reported CCT is `t_min_s`.
    Below,
    /// Stable across the whole bracket; the reported CCT is `t_max_s`.
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CctResult {
    pub t_cct_s: f64,
    pub bracket: Bracket,
    pub evaluations: usize,
}

/// Variable-step bisection for the critical clearing time of a criterion
/// that reports stability for a given clearing time.
///
/// A coarse forward scan brackets the first stable-to-unstable flip, then
/// bisection narrows it to `tolerance_s`. The returned time is stable and
/// the time `tolerance_s` later is unstable when stability is monotone.
pub fn find_cct_by<F>(mut stable_at: F, cfg: &CctSearchConfig) -> Result<CctResult>
where
    F: FnMut(f64) -> Result<bool>,
{
    cfg.validate()?;
    let mut evaluations = 1;
    if !stable_at(cfg.t_min_s)? {
        return Ok(CctResult { t_cct_s: cfg.t_min_s, bracket: Bracket::Below, evaluations });
    }
    let mut lo = cfg.t_min_s;
    let mut hi = None;
    while lo < cfg.t_max_s {
        let next = (lo + cfg.coarse_step_s).min(cfg.t_max_s);
        evaluations += 1;
        if stable_at(next)? {
            lo = next;
        } else {
            hi = Some(next);
            break;
        }
    }
    let Some(mut hi) = hi else {
        return Ok(CctResult { t_cct_s: cfg.t_max_s, bracket: Bracket::Above, evaluations });
    };
    while hi - lo > cfg.tolerance_s {
        let mid = 0.5 * (lo + hi);
        evaluations += 1;
        if stable_at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CctResult { t_cct_s: lo, bracket: Bracket::Within, evaluations })
}

/// Memoizing simulator-backed stability oracle for one fault and motor
/// share. Each simulation evaluates both criteria, so the angle and voltage
/// searches share runs.
pub struct ClearingOracle<'a> {
    network: &'a Network,
    fault: FaultSpec,
    equilibrium: &'a EquilibriumState,
    cache: HashMap<i64, StabilityLabels>,
    runs: usize,
}

fn clearing_key(t_s: f64) -> i64 {
    (t_s * 1e9).round() as i64
}

impl<'a> ClearingOracle<'a> {
    pub fn new(network: &'a Network, fault: FaultSpec, equilibrium: &'a EquilibriumState) -> Self {
        Self { network, fault, equilibrium, cache: HashMap::new(), runs: 0 }
    }

    pub fn scenario(&self, clearing_s: f64) -> Scenario {
        Scenario::new(self.fault, self.equilibrium.motor_fraction, clearing_s * self.network.nominal_hz)
    }

    /// Records labels obtained elsewhere for a clearing time.
    pub fn insert(&mut self, clearing_s: f64, labels: StabilityLabels) {
        self.cache.insert(clearing_key(clearing_s), labels);
    }

    pub fn labels(&mut self, clearing_s: f64) -> Result<StabilityLabels> {
        let key = clearing_key(clearing_s);
        if let Some(l) = self.cache.get(&key) {
            return Ok(*l);
        }
        let trace = simulate(self.network, &self.scenario(clearing_s), self.equilibrium)?;
        self.runs += 1;
        let labels = label_trace(&trace)?;
        self.cache.insert(key, labels);
        Ok(labels)
    }

    pub fn find_cct(&mut self, criterion: Criterion, cfg: &CctSearchConfig) -> Result<CctResult> {
        find_cct_by(|t| Ok(self.labels(t)?.stable(criterion)), cfg)
    }

    /// Number of simulations actually run.
    pub fn runs(&self) -> usize {
        self.runs
    }
}

/// Critical clearing time of `fault` under `criterion`.
pub fn find_cct(
    network: &Network,
    fault: FaultSpec,
    equilibrium: &EquilibriumState,
    criterion: Criterion,
    cfg: &CctSearchConfig,
) -> Result<CctResult> {
    ClearingOracle::new(network, fault, equilibrium).find_cct(criterion, cfg)
}

/// Normalized distance from the critical clearing time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginValue {
    /// `(t_cct - t_clear) / t_cct`, for clearing no later than the CCT.
    Margin(f64),
    /// `(t_clear - t_cct) / t_clear`, for clearing after the CCT.
    Degree(f64),
}

impl MarginValue {
    /// Margin as a positive number, degree as a negative one.
    pub fn signed(self) -> f64 {
        match self {
            MarginValue::Margin(m) => m,
            MarginValue::Degree(d) => -d,
        }
    }

    pub fn magnitude(self) -> f64 {
        match self {
            MarginValue::Margin(v) | MarginValue::Degree(v) => v,
        }
    }

    pub fn is_margin(self) -> bool {
        matches!(self, MarginValue::Margin(_))
    }
}

pub fn margin(t_cct_s: f64, t_clear_s: f64) -> Result<MarginValue> {
    if !(t_cct_s > 0.0 && t_clear_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margin needs positive times, got t_cct = {t_cct_s}, t_clear = {t_clear_s}"
        )));
    }
    Ok(if t_clear_s <= t_cct_s {
        MarginValue::Margin(((t_cct_s - t_clear_s) / t_cct_s).clamp(0.0, 1.0))
    } else {
        MarginValue::Degree(((t_clear_s - t_cct_s) / t_clear_s).clamp(0.0, 1.0))
    })
}

/// Margin label for a clearing time given a CCT search result. A search
/// that never saw instability saturates the margin at 1.
pub fn margin_for(cct: &CctResult, t_clear_s: f64) -> Result<MarginValue> {
    match cct.bracket {
        Bracket::Above => Ok(MarginValue::Margin(1.0)),
        _ => margin(cct.t_cct_s, t_clear_s),
    }
}

pub fn mean_margin(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("mean of an empty margin list".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-sample regression labels for both criteria.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginLabels {
    pub t_clear_s: f64,
    pub tas_cct: CctResult,
    pub tvs_cct: CctResult,
    pub tas: MarginValue,
    pub tvs: MarginValue,
}

impl MarginLabels {
    pub fn new(tas_cct: CctResult, tvs_cct: CctResult, t_clear_s: f64) -> Result<Self> {
        Ok(Self {
            t_clear_s,
            tas: margin_for(&tas_cct, t_clear_s)?,
            tvs: margin_for(&tvs_cct, t_clear_s)?,
            tas_cct,
            tvs_cct,
        })
    }
}
