//! Schemes built on port-based teleportation, scheme reports and log-log
//! slope fits of `1 − F`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{depolarize_effects, vn_effects, Povm, VonNeumannMeasurement};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchemeId {
    #[serde(rename = "pgls")]
    Pgls,
    #[serde(rename = "dpbt")]
    Dpbt,
    #[serde(rename = "ppbt")]
    Ppbt,
    #[serde(rename = "parallel")]
    ParallelSdp,
    #[serde(rename = "adaptive")]
    AdaptiveSdp,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] =
        [SchemeId::AdaptiveSdp, SchemeId::ParallelSdp, SchemeId::Dpbt, SchemeId::Pgls, SchemeId::Ppbt];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Pgls => "pgls",
            SchemeId::Dpbt => "dpbt",
            SchemeId::Ppbt => "ppbt",
            SchemeId::ParallelSdp => "parallel",
            SchemeId::AdaptiveSdp => "adaptive",
        }
    }

    pub fn is_closed_form(self) -> bool {
        matches!(self, SchemeId::Pgls | SchemeId::Dpbt | SchemeId::Ppbt)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    MonteCarlo,
    Sdp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub scheme: SchemeId,
    pub n: usize,
    pub value: f64,
    pub method: Method,
    pub diagnostics: BTreeMap<String, f64>,
}

impl SchemeReport {
    pub fn closed_form(scheme: SchemeId, n: usize, value: f64) -> Self {
        SchemeReport { scheme, n, value, method: Method::ClosedForm, diagnostics: BTreeMap::new() }
    }
}

/// Closed-form Haar-averaged fidelity of a closed-form scheme.
pub fn closed_form_fidelity(scheme: SchemeId, n: usize) -> Result<f64> {
    match scheme {
        SchemeId::Pgls => crate::pgls::pgls_avg_fidelity(n),
        SchemeId::Dpbt => dpbt_avg_fidelity(n, 2, dpbt_entanglement_fidelity_qubit(n)?),
        SchemeId::Ppbt => ppbt_avg_fidelity(n),
        other => Err(Error::InvalidArgument(format!("`{other}` has no closed form"))),
    }
}

fn check_uses(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    Ok(())
}

/// `F_* = cos²(π/(N+2))` for optimal qubit deterministic PBT with `N` ports.
pub fn dpbt_entanglement_fidelity_qubit(n: usize) -> Result<f64> {
    check_uses(n)?;
    Ok((PI / (n + 2) as f64).cos().powi(2))
}

/// `1/(d+1) + d/(d+1) · F_*`.
pub fn dpbt_avg_fidelity(n: usize, d: usize, f_star: f64) -> Result<f64> {
    check_uses(n)?;
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if !(0.0..=1.0).contains(&f_star) {
        return Err(Error::InvalidArgument(format!("entanglement fidelity {f_star} outside [0, 1]")));
    }
    let d = d as f64;
    Ok(1.0 / (d + 1.0) + d / (d + 1.0) * f_star)
}

/// `N/(N+3)`.
pub fn ppbt_success_probability(n: usize) -> Result<f64> {
    check_uses(n)?;
    Ok(n as f64 / (n + 3) as f64)
}

/// `(2N+3)/(2N+6)`.
pub fn ppbt_avg_fidelity(n: usize) -> Result<f64> {
    check_uses(n)?;
    Ok((2 * n + 3) as f64 / (2 * n + 6) as f64)
}

pub fn ppbt_success_probability_exact(n: usize) -> Result<BigRational> {
    check_uses(n)?;
    Ok(BigRational::new(BigInt::from(n), BigInt::from(n + 3)))
}

pub fn ppbt_avg_fidelity_exact(n: usize) -> Result<BigRational> {
    check_uses(n)?;
    Ok(BigRational::new(BigInt::from(2 * n + 3), BigInt::from(2 * n + 6)))
}

/// `p₀ P_U + (1 − p₀) Φ_*`.
pub fn mixture_povm(m: &VonNeumannMeasurement, p0: f64) -> Result<Povm> {
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::InvalidArgument(format!("mixing weight {p0} outside [0, 1]")));
    }
    vn_effects(m).mix(p0, &depolarize_effects(m.dim()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares fit of `log(1 − F)` against `log N`.
pub fn slope_fit(f: impl Fn(usize) -> Result<f64>, ns: &[usize]) -> Result<SlopeFit> {
    let mut pts = Vec::with_capacity(ns.len());
    for &n in ns {
        let v = f(n)?;
        if v >= 1.0 {
            return Err(Error::DegenerateFit(format!("F({n}) = {v} leaves no gap to fit")));
        }
        pts.push(((n as f64).ln(), (1.0 - v).ln()));
    }
    fit_line(&pts)
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn fit_line(pts: &[(f64, f64)]) -> Result<SlopeFit> {
    if pts.len() < 2 {
        return Err(Error::DegenerateFit(format!("{} point(s) cannot determine a line", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all abscissae coincide".into()));
    }
    if syy == 0.0 {
        return Err(Error::DegenerateFit("1 − F is constant over the range".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(SlopeFit { slope, intercept: my - slope * mx })
}

/// Every integer in `[from, to]`; the grid used by the asymptotic fits.
pub fn integer_grid(from: usize, to: usize) -> Result<Vec<usize>> {
    if from == 0 || to <= from {
        return Err(Error::DegenerateFit(format!("range [{from}, {to}] has fewer than two positive points")));
    }
    Ok((from..=to).collect())
}

/// Fitted slope of `1 − F` for a closed-form scheme on the integer grid.
pub fn scheme_slope(scheme: SchemeId, from: usize, to: usize) -> Result<SlopeFit> {
    slope_fit(|n| closed_form_fidelity(scheme, n), &integer_grid(from, to)?)
}

/// Mixture weight realizing a closed-form scheme's fidelity, `2F − 1`.
pub fn mixture_weight(scheme: SchemeId, n: usize) -> Result<f64> {
    Ok(2.0 * closed_form_fidelity(scheme, n)? - 1.0)
}
