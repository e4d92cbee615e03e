//! Checkers for the hop-count, interference and SINR bounds, and the
//! closed-form bound calculator.
//!
//! Every check row stores the two numbers it compares; a row passes when
//! `lhs <= rhs`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::RunMetrics;
use crate::error::{Error, Result};
use crate::geometry::{expected_delta_pow_l, SQRT_PI};
use crate::link::LinkModel;
use crate::routing::Route;

/// Default `ε₁ = ε₂ = 1/32`.
pub const DEFAULT_EPS: f64 = 1.0 / 32.0;
/// `ε` of the arbitrary-routing chain.
pub const ARBITRARY_EPS: f64 = 1.0 / 640.0;
/// Run length and short-hop fraction for the consecutive short hop check.
pub const SHORT_RUN_W: usize = 40;
pub const SHORT_RUN_T: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSet {
    pub eps1: f64,
    pub eps2: f64,
    pub t0: f64,
    pub m0: f64,
    pub beta0: f64,
    pub m0_arbitrary: f64,
    pub beta1: f64,
    /// `K − 1` of the schedule the bounds are evaluated for.
    pub c1: f64,
    pub alpha: f64,
    pub phi_beta0: f64,
    /// `2¹²/(ln φ(β₀))²`; `None` when `φ(β₀)` is 0 or 1 in floating point.
    pub c0: Option<f64>,
}

/// Left side of the short hop inequality per unit `L/ρ`: `(1 − 16t/π)/(8 − t)`.
pub fn short_hop_coefficient(t: f64) -> f64 {
    (1.0 - 16.0 * t / PI) / (8.0 - t)
}

fn solve_t0(eps1: f64) -> Result<f64> {
    let target = 0.125 - eps1;
    let g = |t: f64| short_hop_coefficient(t) - target;
    let (mut lo, mut hi) = (0.0, PI / 16.0);
    if !(g(lo) > 0.0 && g(hi) < 0.0) {
        return Err(Error::Argument(format!(
            "no t0 in (0, pi/16) for eps1 = {eps1}"
        )));
    }
    // g is strictly decreasing on the interval
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Evaluates the bound chain for a schedule with `c1 = K − 1`.
pub fn compute_bounds(
    eps1: f64,
    eps2: f64,
    alpha: f64,
    c1: f64,
    model: &LinkModel,
) -> Result<BoundSet> {
    if !(eps1 > 0.0 && eps2 > 0.0 && eps1 + eps2 < 0.125) {
        return Err(Error::Argument(format!(
            "need eps1, eps2 > 0 and eps1 + eps2 < 1/8, got {eps1} and {eps2}"
        )));
    }
    if !(alpha > 2.0) {
        return Err(Error::Argument(format!("alpha = {alpha} must exceed 2")));
    }
    if !(c1 >= 0.0) {
        return Err(Error::Argument(format!("c1 = {c1} must be non-negative")));
    }
    let t0 = solve_t0(eps1)?;
    let m0 = 2.0 * (1.0 + c1) / eps2;
    let m0_arbitrary = 2.0 * (1.0 + c1) / ARBITRARY_EPS;
    debug_assert!(m0 > 9.0 && m0_arbitrary > 16.0);
    let beta0 = ((m0 + 8.0) / t0).powf(alpha);
    let beta1 = 100f64.powf(alpha) * (m0_arbitrary + 8.0).powf(alpha);
    let phi_beta0 = model.success_probability(beta0);
    let c0 = (phi_beta0 > 0.0 && phi_beta0 < 1.0).then(|| 4096.0 / phi_beta0.ln().powi(2));
    Ok(BoundSet {
        eps1,
        eps2,
        t0,
        m0,
        beta0,
        m0_arbitrary,
        beta1,
        c1,
        alpha,
        phi_beta0,
        c0,
    })
}

/// `n₂ = 2(W·t + 4)²`.
pub fn n2(w: usize, t: f64) -> f64 {
    2.0 * (w as f64 * t + 4.0).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub connection: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl CheckRow {
    fn new(check: &str, connection: usize, lhs: f64, rhs: f64) -> Self {
        Self {
            check: check.to_string(),
            connection,
            lhs,
            rhs,
            pass: lhs <= rhs,
        }
    }
}

/// Hop count bounds `max(L/8ρ, 1) ≤ H ≤ 16L/(πρ)`.
///
/// A third, informational row evaluates the upper bound over a strip
/// lengthened by the two endpoint cells, `16(L + 8ρ)/(πρ)`.
pub fn check_hop_count(route: &Route, rho_n: f64) -> [CheckRow; 3] {
    let h = route.hops() as f64;
    let l = route.geodesic_length;
    let c = route.connection;
    [
        CheckRow::new("hop_count_lower", c, (l / (8.0 * rho_n)).max(1.0), h),
        CheckRow::new("hop_count_upper", c, h, 16.0 * l / (PI * rho_n)),
        CheckRow::new(
            "hop_count_upper_with_endpoints",
            c,
            h,
            16.0 * (l + 8.0 * rho_n) / (PI * rho_n),
        ),
    ]
}

/// Long hop count `H − h(t) ≥ (L/ρ)(1 − 16t/π)/(8 − t)`.
pub fn check_short_hops(route: &Route, rho_n: f64, t: f64) -> Result<CheckRow> {
    if !(t > 0.0 && t < PI / 16.0) {
        return Err(Error::Argument(format!("t = {t} must lie in (0, pi/16)")));
    }
    let short = route.hop_lengths.iter().filter(|&&d| d < t * rho_n).count();
    let long = (route.hops() - short) as f64;
    let need = route.geodesic_length / rho_n * short_hop_coefficient(t);
    Ok(CheckRow::new("short_hops", route.connection, need, long))
}

/// Longest run of consecutive hops shorter than `t·ρ`.
pub fn max_short_run(route: &Route, rho_n: f64, t: f64) -> usize {
    let mut best = 0;
    let mut run = 0;
    for &d in &route.hop_lengths {
        if d < t * rho_n {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

/// No `W` consecutive hops shorter than `t·ρ`; passes when the longest run is
/// at most `W − 1`.
pub fn check_consecutive_short_hops(route: &Route, rho_n: f64) -> CheckRow {
    CheckRow::new(
        "consecutive_short_hops",
        route.connection,
        max_short_run(route, rho_n, SHORT_RUN_T) as f64,
        (SHORT_RUN_W - 1) as f64,
    )
}

/// Which path length scales the interference and SINR bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteKind {
    /// Straight-line routes; bounds use `L_i`.
    Straight,
    /// R1/R2 routes; bounds use the path length `L̂_i`.
    Arbitrary,
}

fn scale_length(route: &Route, kind: RouteKind) -> f64 {
    match kind {
        RouteKind::Straight => route.geodesic_length,
        RouteKind::Arbitrary => route.path_length(),
    }
}

fn require_saturated(m: &RunMetrics) -> Result<()> {
    if m.saturated {
        Ok(())
    } else {
        Err(Error::Precondition(
            "interferer counting needs a saturated run (every scheduled cell transmitting)".into(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityRow {
    pub connection: usize,
    /// Interior hops whose receiver had no concurrent transmitter within `(M+8)ρ`.
    pub n_i: usize,
    /// Interior hops never resolved during measurement.
    pub unobserved: usize,
    pub bound: f64,
    pub pass: bool,
}

/// `N_i ≤ (L/ρ)·2K/M`, counted over interior hops at the slot of each hop's
/// first resolved attempt.
pub fn check_interferer_proximity(
    m: &RunMetrics,
    routes: &[Route],
    big_m: f64,
    kind: RouteKind,
) -> Result<Vec<ProximityRow>> {
    require_saturated(m)?;
    let floor = match kind {
        RouteKind::Straight => 9.0,
        RouteKind::Arbitrary => 16.0,
    };
    if !(big_m > floor) {
        return Err(Error::Argument(format!("M = {big_m} must exceed {floor}")));
    }
    let radius = (big_m + 8.0) * m.rho_n;
    Ok(routes
        .iter()
        .map(|r| {
            let obs = &m.hops[r.connection];
            let mut n_i = 0;
            let mut unobserved = 0;
            for j in r.interior_hops() {
                match obs[j].first_resolution_clearance {
                    Some(d) if d > radius => n_i += 1,
                    Some(_) => {}
                    None => unobserved += 1,
                }
            }
            let bound = scale_length(r, kind) / m.rho_n * 2.0 * m.k as f64 / big_m;
            ProximityRow {
                connection: r.connection,
                n_i,
                unobserved,
                bound,
                pass: n_i as f64 <= bound,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrRow {
    pub connection: usize,
    /// Interior hops whose SINR stayed at or below the ceiling on every attempt.
    pub bounded_hops: usize,
    pub required: f64,
    pub unobserved: usize,
    /// Largest SINR seen on any interior hop.
    pub max_interior_sinr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrReport {
    pub ceiling: f64,
    pub rows: Vec<SinrRow>,
    pub pass_rate: f64,
}

impl SinrReport {
    /// At least 95% of connections meet their required count.
    pub fn passes(&self) -> bool {
        self.pass_rate >= 0.95
    }
}

/// At least `L/(16ρ)` interior hops with SINR ≤ β₀ (straight routes), or
/// `L̂/(640ρ)` with SINR ≤ β₁ (arbitrary routes).
pub fn check_sinr_bounded_fraction(
    m: &RunMetrics,
    routes: &[Route],
    bounds: &BoundSet,
    kind: RouteKind,
) -> Result<SinrReport> {
    require_saturated(m)?;
    let (ceiling, divisor) = match kind {
        RouteKind::Straight => (bounds.beta0, 16.0),
        RouteKind::Arbitrary => (bounds.beta1, 640.0),
    };
    let rows: Vec<SinrRow> = routes
        .iter()
        .map(|r| {
            let obs = &m.hops[r.connection];
            let interior = r.interior_hops();
            let bounded_hops = interior
                .clone()
                .filter(|&j| obs[j].observed() && obs[j].max_sinr <= ceiling)
                .count();
            let unobserved = interior.clone().filter(|&j| !obs[j].observed()).count();
            let max_interior_sinr = interior
                .filter(|&j| obs[j].observed())
                .map(|j| obs[j].max_sinr)
                .fold(f64::NEG_INFINITY, f64::max);
            let required = scale_length(r, kind) / (divisor * m.rho_n);
            SinrRow {
                connection: r.connection,
                bounded_hops,
                required,
                unobserved,
                max_interior_sinr,
                pass: bounded_hops as f64 >= required,
            }
        })
        .collect();
    let pass_rate = if rows.is_empty() {
        1.0
    } else {
        rows.iter().filter(|r| r.pass).count() as f64 / rows.len() as f64
    };
    Ok(SinrReport {
        ceiling,
        rows,
        pass_rate,
    })
}

/// Throughput ceilings for one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ceilings {
    /// `δ = φ(β₀)^{1/(16ρ)}`.
    pub delta: f64,
    /// `λ·E[δ^L]`.
    pub lambda_bound_expectation: f64,
    /// `λ·512πρ²(1 + φ^{√π/(32ρ)})/(1024πρ² + (ln φ)²)`.
    pub lambda_bound_expanded: f64,
    /// `λ·1024πρ²/(1024πρ² + (ln φ)²)`.
    pub lambda_bound_relaxed: f64,
    /// `λ·1024πρ²/(ln φ)²`.
    pub lambda_bound: f64,
    pub c0: f64,
    pub c0_over_n: f64,
    /// `c/(n·ρ·K)`.
    pub conservative: f64,
    /// `c/(K·√(n ln n))`.
    pub conservative_log: f64,
    /// `4/(πnρ²)`.
    pub occupancy: f64,
    /// `1/(50 ln n)`.
    pub occupancy_log: f64,
}

pub fn throughput_ceilings(
    rho_n: f64,
    k: usize,
    lambda: f64,
    phi_beta0: f64,
    n: usize,
    gk_constant: f64,
) -> Result<Ceilings> {
    if !(phi_beta0 > 0.0 && phi_beta0 < 1.0) {
        return Err(Error::Domain(format!(
            "phi(beta0) = {phi_beta0} must lie in (0, 1)"
        )));
    }
    let ln_phi = phi_beta0.ln();
    let delta = phi_beta0.powf(1.0 / (16.0 * rho_n));
    let a = 1024.0 * PI * rho_n * rho_n;
    let nf = n as f64;
    let c0 = 4096.0 / (ln_phi * ln_phi);
    Ok(Ceilings {
        delta,
        lambda_bound_expectation: lambda * expected_delta_pow_l(delta)?,
        lambda_bound_expanded: lambda * 0.5 * a * (1.0 + phi_beta0.powf(SQRT_PI / (32.0 * rho_n)))
            / (a + ln_phi * ln_phi),
        lambda_bound_relaxed: lambda * a / (a + ln_phi * ln_phi),
        lambda_bound: lambda * a / (ln_phi * ln_phi),
        c0,
        c0_over_n: c0 / nf,
        conservative: gk_constant / (nf * rho_n * k as f64),
        conservative_log: gk_constant / (k as f64 * (nf * nf.ln()).sqrt()),
        occupancy: 4.0 / (PI * nf * rho_n * rho_n),
        occupancy_log: 1.0 / (50.0 * nf.ln()),
    })
}

/// All checks for one run, flattened to rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub rows: Vec<CheckRow>,
    /// Fraction of connections meeting the SINR count, when checked.
    pub sinr_pass_rate: Option<f64>,
}

pub const REPORT_SCHEMA: &str = "spherenet-verify/1";

/// Checks that belong to the hard invariant set.
pub const HARD_CHECKS: [&str; 3] = [
    "hop_count_lower",
    "hop_count_upper",
    "consecutive_short_hops",
];

impl VerificationReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn pass_rate(&self, check: &str) -> Option<f64> {
        let rows: Vec<&CheckRow> = self.rows.iter().filter(|r| r.check == check).collect();
        (!rows.is_empty())
            .then(|| rows.iter().filter(|r| r.pass).count() as f64 / rows.len() as f64)
    }

    /// True when no hard check failed and the SINR pass rate (if any) is at
    /// least 95%.
    pub fn hard_invariants_hold(&self) -> bool {
        self.failures()
            .all(|r| !HARD_CHECKS.contains(&r.check.as_str()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        std::io::Write::write_all(&mut file, format!("# schema: {REPORT_SCHEMA}\n").as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Options for [`verify_run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub kind: RouteKind,
    /// Short hop fraction; defaults to `t₀`.
    pub t: Option<f64>,
    /// `M` of the interferer count; defaults to `M₀`.
    pub big_m: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            kind: RouteKind::Straight,
            t: None,
            big_m: None,
        }
    }
}

/// Runs every check that applies: hop-count and short-hop bounds for
/// straight routes, the consecutive short hop bound always, and the
/// interferer and SINR counts for saturated runs.
pub fn verify_run(
    routes: &[Route],
    rho_n: f64,
    metrics: Option<&RunMetrics>,
    bounds: &BoundSet,
    opts: VerifyOptions,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::default();
    for r in routes {
        if opts.kind == RouteKind::Straight {
            report.rows.extend(check_hop_count(r, rho_n));
            report
                .rows
                .push(check_short_hops(r, rho_n, opts.t.unwrap_or(bounds.t0))?);
        }
        report.rows.push(check_consecutive_short_hops(r, rho_n));
    }
    if let Some(m) = metrics.filter(|m| m.saturated) {
        let big_m = opts.big_m.unwrap_or(match opts.kind {
            RouteKind::Straight => bounds.m0,
            RouteKind::Arbitrary => bounds.m0_arbitrary,
        });
        for p in check_interferer_proximity(m, routes, big_m, opts.kind)? {
            report.rows.push(CheckRow::new(
                "interferer_proximity",
                p.connection,
                p.n_i as f64,
                p.bound,
            ));
        }
        let s = check_sinr_bounded_fraction(m, routes, bounds, opts.kind)?;
        for row in &s.rows {
            report.rows.push(CheckRow::new(
                "sinr_bounded_hops",
                row.connection,
                row.required,
                row.bounded_hops as f64,
            ));
        }
        report.sinr_pass_rate = Some(s.pass_rate);
    }
    Ok(report)
}
