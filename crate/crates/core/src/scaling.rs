//! Power-law fits on log-log data, curve collapse, and crossover extraction.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::train::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub stderr: f64,
    pub r_squared: f64,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.prefactor * x.powf(self.exponent)
    }
}

fn logs(values: &[f64], what: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|&v| {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(invalid(format!("{what} must be positive and finite, got {v}")))
            }
        })
        .collect()
}

/// Ordinary least squares `v = c + s u` for `n ≥ 2` points.
fn ols(u: &[f64], v: &[f64]) -> Result<PowerLawFit> {
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let sxx: f64 = u.iter().map(|x| (x - mu).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit("all abscissae are equal".into()));
    }
    let sxy: f64 = u.iter().zip(v).map(|(x, y)| (x - mu) * (y - mv)).sum();
    let slope = sxy / sxx;
    let intercept = mv - slope * mu;
    let ssr: f64 = u.iter().zip(v).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let sst: f64 = v.iter().map(|y| (y - mv).powi(2)).sum();
    let stderr = if u.len() > 2 { (ssr / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    let r_squared = if sst > 0.0 { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 1.0 };
    Ok(PowerLawFit { exponent: slope, prefactor: intercept.exp(), stderr, r_squared })
}

/// Least squares on `(ln x, ln y)`; needs at least three positive points.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", xs.len())));
    }
    ols(&logs(xs, "x")?, &logs(ys, "y")?)
}

/// `ln y = c + e₁ ln x₁ + e₂ ln x₂` by least squares. The two returned fits
/// share the prefactor `e^c` and the overall `r²`.
pub fn fit_two_var(x1: &[f64], x2: &[f64], y: &[f64]) -> Result<(PowerLawFit, PowerLawFit)> {
    let n = y.len();
    if x1.len() != n || x2.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x1.len().min(x2.len()) });
    }
    for (vals, name) in [(x1, "first variable"), (x2, "second variable")] {
        let mut distinct: Vec<f64> = vals.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 3 {
            return Err(Error::DegenerateFit(format!("{name} needs 3 distinct values")));
        }
    }
    let (u1, u2, v) = (logs(x1, "x1")?, logs(x2, "x2")?, logs(y, "y")?);
    let nf = n as f64;
    let mean = |a: &[f64]| a.iter().sum::<f64>() / nf;
    let (m1, m2, mv) = (mean(&u1), mean(&u2), mean(&v));
    let mut s11 = 0.0;
    let mut s22 = 0.0;
    let mut s12 = 0.0;
    let mut s1v = 0.0;
    let mut s2v = 0.0;
    for i in 0..n {
        let (a, b, c) = (u1[i] - m1, u2[i] - m2, v[i] - mv);
        s11 += a * a;
        s22 += b * b;
        s12 += a * b;
        s1v += a * c;
        s2v += b * c;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() <= 1e-12 * s11 * s22 {
        return Err(Error::DegenerateFit("collinear design matrix".into()));
    }
    let e1 = (s22 * s1v - s12 * s2v) / det;
    let e2 = (s11 * s2v - s12 * s1v) / det;
    let c = mv - e1 * m1 - e2 * m2;
    let ssr: f64 = (0..n).map(|i| (v[i] - c - e1 * u1[i] - e2 * u2[i]).powi(2)).sum();
    let sst: f64 = v.iter().map(|y| (y - mv).powi(2)).sum();
    let sigma2 = if n > 3 { ssr / (nf - 3.0) } else { 0.0 };
    let r_squared = if sst > 0.0 { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 1.0 };
    let fit = |e: f64, var: f64| PowerLawFit {
        exponent: e,
        prefactor: c.exp(),
        stderr: (sigma2 * var).sqrt(),
        r_squared,
    };
    Ok((fit(e1, s22 / det), fit(e2, s11 / det)))
}

/// Two-variable fit over converged records; fields are looked up by JSON name.
pub fn fit_two_var_scaling(
    records: &[RunRecord],
    x1_field: &str,
    x2_field: &str,
    y_field: &str,
) -> Result<(PowerLawFit, PowerLawFit)> {
    let mut x1 = Vec::new();
    let mut x2 = Vec::new();
    let mut y = Vec::new();
    for r in records.iter().filter(|r| !r.diverged && r.failure.is_none()) {
        if let (Some(a), Some(b), Some(c)) = (r.field(x1_field), r.field(x2_field), r.field(y_field)) {
            if a > 0.0 && b > 0.0 && c > 0.0 {
                x1.push(a);
                x2.push(b);
                y.push(c);
            }
        }
    }
    fit_two_var(&x1, &x2, &y)
}

/// One curve `y(T)` measured at training-set size `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub p: f64,
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn new(p: f64, mut points: Vec<(f64, f64)>) -> Self {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { p, points }
    }
}

/// Groups converged records into curves `y_field` vs `x_field`, one per
/// `group_field` value, averaging replicas geometrically at equal abscissa.
pub fn curves_from_records(
    records: &[RunRecord],
    group_field: &str,
    x_field: &str,
    y_field: &str,
) -> Vec<Curve> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<u64, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.diverged && r.failure.is_none()) {
        if let (Some(g), Some(x), Some(y)) = (r.field(group_field), r.field(x_field), r.field(y_field)) {
            if x > 0.0 && y > 0.0 {
                let e = groups.entry(g.to_bits()).or_default().entry(x.to_bits()).or_insert((0.0, 0));
                e.0 += y.ln();
                e.1 += 1;
            }
        }
    }
    let mut curves: Vec<Curve> = groups
        .into_iter()
        .map(|(g, pts)| {
            let points = pts
                .into_iter()
                .map(|(x, (s, n))| (f64::from_bits(x), (s / n as f64).exp()))
                .collect();
            Curve::new(f64::from_bits(g), points)
        })
        .collect();
    curves.sort_by(|a, b| a.p.total_cmp(&b.p));
    curves
}

const COLLAPSE_GRID: usize = 64;

fn interp(points: &[(f64, f64)], u: f64) -> f64 {
    let k = points.partition_point(|&(x, _)| x < u);
    if k == 0 {
        return points[0].1;
    }
    if k == points.len() {
        return points[k - 1].1;
    }
    let (x0, y0) = points[k - 1];
    let (x1, y1) = points[k];
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (u - x0) / (x1 - x0)
}

/// Mean squared log-deviation across curves after plotting `y P^{-y_exponent}`
/// against `T P^{a}`, on a common grid spanning the overlap of all curves.
pub fn collapse_score_xy(curves: &[Curve], a: f64, y_exponent: f64) -> Result<f64> {
    if curves.len() < 2 {
        return Err(invalid("collapse needs at least two curves"));
    }
    let mut rescaled = Vec::with_capacity(curves.len());
    for c in curves {
        if c.points.len() < 2 {
            return Err(invalid("each curve needs at least two points"));
        }
        let lp = c.p.ln();
        let pts: Vec<(f64, f64)> = c
            .points
            .iter()
            .map(|&(t, y)| {
                if t > 0.0 && y > 0.0 {
                    Ok((t.ln() + a * lp, y.ln() - y_exponent * lp))
                } else {
                    Err(invalid("curve values must be positive"))
                }
            })
            .collect::<Result<_>>()?;
        rescaled.push(pts);
    }
    let lo = rescaled.iter().map(|p| p[0].0).fold(f64::NEG_INFINITY, f64::max);
    let hi = rescaled.iter().map(|p| p[p.len() - 1].0).fold(f64::INFINITY, f64::min);
    if !(hi > lo) {
        return Err(Error::EmptyOverlap);
    }
    let n = rescaled.len() as f64;
    let mut total = 0.0;
    for g in 0..COLLAPSE_GRID {
        let u = lo + (hi - lo) * g as f64 / (COLLAPSE_GRID - 1) as f64;
        let vals: Vec<f64> = rescaled.iter().map(|p| interp(p, u)).collect();
        let mean = vals.iter().sum::<f64>() / n;
        total += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    }
    Ok(total / COLLAPSE_GRID as f64)
}

pub fn collapse_score(curves: &[Curve], a: f64) -> Result<f64> {
    collapse_score_xy(curves, a, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseResult {
    pub best_exponent: f64,
    pub score_at_best: f64,
    /// Contiguous exponent range around the best where the score stays within
    /// `BRACKET_FACTOR` times the minimum.
    pub bracket: (f64, f64),
}

pub const BRACKET_FACTOR: f64 = 2.0;
const MAX_GRID_STEP: f64 = 0.05 + 1e-9;

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("exponent grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0]) || w[1] - w[0] > MAX_GRID_STEP) {
        return Err(invalid("exponent grid must be increasing with spacing <= 0.05"));
    }
    Ok(())
}

fn best_on_grid(grid: &[f64], score: impl Fn(f64) -> Result<f64>) -> Result<CollapseResult> {
    check_grid(grid)?;
    let scores: Vec<Option<f64>> = grid.iter().map(|&a| score(a).ok()).collect();
    let (best, min) = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(Error::EmptyOverlap)?;
    let limit = BRACKET_FACTOR * min;
    let within = |i: usize| scores[i].is_some_and(|s| s <= limit);
    let mut lo = best;
    while lo > 0 && within(lo - 1) {
        lo -= 1;
    }
    let mut hi = best;
    while hi + 1 < grid.len() && within(hi + 1) {
        hi += 1;
    }
    Ok(CollapseResult { best_exponent: grid[best], score_at_best: min, bracket: (grid[lo], grid[hi]) })
}

/// Grid search for the abscissa exponent `a` in `T P^a`.
pub fn best_collapse_exponent(curves: &[Curve], a_grid: &[f64]) -> Result<CollapseResult> {
    best_on_grid(a_grid, |a| collapse_score(curves, a))
}

/// Grid search for the ordinate exponent `g` in `y P^{-g}` at fixed abscissa
/// exponent.
pub fn best_y_collapse_exponent(curves: &[Curve], a: f64, y_grid: &[f64]) -> Result<CollapseResult> {
    best_on_grid(y_grid, |g| collapse_score_xy(curves, a, g))
}

/// Evenly spaced grid `[lo, hi]` with the given step.
pub fn exponent_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

/// Plateau threshold on the 3-point rolling log-slope.
pub const PLATEAU_SLOPE: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCrossover {
    pub p: f64,
    pub plateau_level: f64,
    pub plateau_points: usize,
    pub t_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverFit {
    pub per_curve: Vec<CurveCrossover>,
    /// Plateau level extrapolated to `P = 1` by the `P^ζ` fit.
    pub plateau_level: f64,
    pub plateau_exponent_zeta: f64,
    /// Exponent `δ` of the rising branch in `T`.
    pub powerlaw_branch: PowerLawFit,
    /// Exponent `γ` of the rising branch in `P`.
    pub branch_gamma: f64,
    pub a_exponent: f64,
    /// `(γ − ζ)/δ` from the independently fitted exponents.
    pub predicted_a: f64,
}

fn rolling_slope(pts: &[(f64, f64)]) -> f64 {
    let u: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let v: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    ols(&u, &v).map(|f| f.exponent).unwrap_or(f64::NAN)
}

/// Number of leading points forming a plateau, or `None` if the first window
/// already rises.
fn plateau_len(points: &[(f64, f64)]) -> Option<usize> {
    let mut len = None;
    for i in 0..points.len().saturating_sub(2) {
        if rolling_slope(&points[i..i + 3]).abs() < PLATEAU_SLOPE {
            len = Some(i + 3);
        } else {
            break;
        }
    }
    len
}

fn fit_loglog_any(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    if xs.len() >= 3 {
        fit_power_law(xs, ys)
    } else if xs.len() == 2 {
        ols(&logs(xs, "x")?, &logs(ys, "y")?)
    } else {
        Err(Error::DegenerateFit("need at least 2 points".into()))
    }
}

/// Splits each curve into a low-T plateau and a high-T power-law branch,
/// intersects them to get `T_c(P)`, then fits `plateau ∝ P^ζ`,
/// `branch ∝ T^δ P^γ` and `T_c ∝ P^{-a}`.
pub fn extract_crossover(curves: &[Curve]) -> Result<CrossoverFit> {
    if curves.len() < 2 {
        return Err(invalid("crossover extraction needs curves at two or more P"));
    }
    let mut plateaus = Vec::new();
    let (mut bt, mut bp, mut by) = (Vec::new(), Vec::new(), Vec::new());
    for c in curves {
        let k = plateau_len(&c.points)
            .ok_or_else(|| Error::NotCrossover(format!("no low-T plateau at P = {}", c.p)))?;
        if c.points.len() - k < 2 {
            return Err(Error::NotCrossover(format!("no rising branch at P = {}", c.p)));
        }
        let level = (c.points[..k].iter().map(|p| p.1.ln()).sum::<f64>() / k as f64).exp();
        plateaus.push((c.p, level, k));
        for &(t, y) in &c.points[k..] {
            bt.push(t);
            bp.push(c.p);
            by.push(y);
        }
    }
    // branch exponents: joint fit when P varies enough, else per-T only
    let (delta_fit, gamma) = match fit_two_var(&bt, &bp, &by) {
        Ok((d, g)) => (d, g.exponent),
        Err(_) => {
            let u1 = logs(&bt, "T")?;
            let u2 = logs(&bp, "P")?;
            let v = logs(&by, "y")?;
            two_var_small(&u1, &u2, &v)?
        }
    };
    if !(delta_fit.exponent > 0.0) {
        return Err(Error::NotCrossover("branch does not rise with T".into()));
    }
    let mut per_curve = Vec::new();
    for &(p, level, k) in &plateaus {
        // ln level = ln c + δ ln T_c + γ ln P
        let ln_tc = (level.ln() - delta_fit.prefactor.ln() - gamma * p.ln()) / delta_fit.exponent;
        per_curve.push(CurveCrossover { p, plateau_level: level, plateau_points: k, t_c: ln_tc.exp() });
    }
    let ps: Vec<f64> = per_curve.iter().map(|c| c.p).collect();
    let levels: Vec<f64> = per_curve.iter().map(|c| c.plateau_level).collect();
    let tcs: Vec<f64> = per_curve.iter().map(|c| c.t_c).collect();
    let zeta_fit = fit_loglog_any(&ps, &levels)?;
    let tc_fit = fit_loglog_any(&ps, &tcs)?;
    let zeta = zeta_fit.exponent;
    Ok(CrossoverFit {
        per_curve,
        plateau_level: zeta_fit.prefactor,
        plateau_exponent_zeta: zeta,
        powerlaw_branch: delta_fit,
        branch_gamma: gamma,
        a_exponent: -tc_fit.exponent,
        predicted_a: (gamma - zeta) / delta_fit.exponent,
    })
}

/// Two-variable least squares without the distinct-value requirement.
fn two_var_small(u1: &[f64], u2: &[f64], v: &[f64]) -> Result<(PowerLawFit, f64)> {
    let n = v.len() as f64;
    if v.len() < 3 {
        return Err(Error::DegenerateFit("branch has fewer than 3 points".into()));
    }
    let mean = |a: &[f64]| a.iter().sum::<f64>() / n;
    let (m1, m2, mv) = (mean(u1), mean(u2), mean(v));
    let (mut s11, mut s22, mut s12, mut s1v, mut s2v) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..v.len() {
        let (a, b, c) = (u1[i] - m1, u2[i] - m2, v[i] - mv);
        s11 += a * a;
        s22 += b * b;
        s12 += a * b;
        s1v += a * c;
        s2v += b * c;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() <= 1e-12 * (s11 * s22).max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateFit("collinear branch design".into()));
    }
    let e1 = (s22 * s1v - s12 * s2v) / det;
    let e2 = (s11 * s2v - s12 * s1v) / det;
    let c = mv - e1 * m1 - e2 * m2;
    Ok((PowerLawFit { exponent: e1, prefactor: c.exp(), stderr: 0.0, r_squared: 1.0 }, e2))
}

/// Marks each record as below (`plateau`) or above (`noise`) its `T_c(P)`.
pub fn tag_phases(records: &mut [RunRecord], fit: &CrossoverFit) {
    for r in records.iter_mut() {
        if let Some(c) = fit.per_curve.iter().find(|c| c.p == r.p as f64) {
            let tag = if r.temperature < c.t_c { "plateau" } else { "noise" };
            r.zeta_phase = Some(tag.to_string());
        }
    }
}

/// Exponent summary with the columns `b, γ, δ, γ/δ, a, ζ`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub label: String,
    pub b: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub gamma_over_delta: Option<f64>,
    pub a: Option<f64>,
    pub zeta: Option<f64>,
}

impl ExponentReport {
    /// Fills `b`, `γ`, `δ` from two-variable fits of `t*` and `Δw` (or the
    /// given weight field) against temperature and `P`.
    pub fn from_records(label: &str, records: &[RunRecord], weight_field: &str) -> Result<Self> {
        let (_, b) = fit_two_var_scaling(records, "temperature", "P", "t_star")?;
        let (delta, gamma) = fit_two_var_scaling(records, "temperature", "P", weight_field)?;
        Ok(Self {
            label: label.to_string(),
            b: Some(b.exponent),
            gamma: Some(gamma.exponent),
            delta: Some(delta.exponent),
            gamma_over_delta: Some(gamma.exponent / delta.exponent),
            a: None,
            zeta: None,
        })
    }
}
