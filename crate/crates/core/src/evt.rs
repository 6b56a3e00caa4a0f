//! Extreme-value statistics of `M_P = max_μ c_μ/|x₁^μ|`.
//!
//! With `c ~ N(0, σ²)` independent of `x₁ ~ ρ_χ`, the ratio `q = c/|x₁|` has
//! density `K (1 + q²/σ²)^{-(χ+2)/2}`. Its power-law tail puts the maximum of
//! `P` draws in the Fréchet domain, with scale `a_P ∝ P^{-1/(1+χ)}`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::data::ChiDistribution;
use crate::error::{invalid, Result};
use crate::scaling::{fit_power_law, PowerLawFit};
use crate::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioDistribution {
    chi: f64,
    sigma: f64,
}

impl RatioDistribution {
    pub fn new(chi: f64, sigma: f64) -> Result<Self> {
        if !(chi.is_finite() && chi >= 0.0) {
            return Err(invalid(format!("chi must be >= 0, got {chi}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { chi, sigma })
    }

    pub fn standard(chi: f64) -> Result<Self> {
        Self::new(chi, 1.0)
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `K = Γ((χ+2)/2) / (√π σ Γ((χ+1)/2))`, the constant that normalizes the
    /// density to one.
    pub fn normalization(&self) -> f64 {
        let chi = self.chi;
        (ln_gamma(0.5 * (chi + 2.0)) - ln_gamma(0.5 * (chi + 1.0))).exp()
            / (std::f64::consts::PI.sqrt() * self.sigma)
    }

    pub fn pdf(&self, q: f64) -> f64 {
        let z = q / self.sigma;
        self.normalization() * (1.0 + z * z).powf(-0.5 * (self.chi + 2.0))
    }

    /// One draw of `c/|x₁|`.
    pub fn sample<R: Rng + ?Sized>(&self, x1: &ChiDistribution, rng: &mut R) -> f64 {
        let c: f64 = rng.sample::<f64, _>(StandardNormal) * self.sigma;
        c / x1.sample_x1(rng).abs()
    }
}

pub fn q_pdf(rd: &RatioDistribution, q: f64) -> f64 {
    rd.pdf(q)
}

/// Fréchet normalizing sequence `a_P = (K σ^{χ+2} P / (χ+1))^{-1/(χ+1)}`.
pub fn frechet_scale(p: usize, chi: f64, sigma: f64) -> Result<f64> {
    if p == 0 {
        return Err(invalid("P must be >= 1"));
    }
    let rd = RatioDistribution::new(chi, sigma)?;
    let k = rd.normalization();
    Ok((k * sigma.powf(chi + 2.0) * p as f64 / (chi + 1.0)).powf(-1.0 / (chi + 1.0)))
}

/// Limiting law `exp(-t^{-χ-1})` of `a_P M_P`; zero for `t ≤ 0`.
pub fn frechet_cdf(t: f64, chi: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-t.powf(-chi - 1.0)).exp()
    }
}

pub fn predicted_gamma(chi: f64) -> Result<f64> {
    if !(chi >= 0.0) {
        return Err(invalid(format!("chi must be >= 0, got {chi}")));
    }
    Ok(1.0 / (1.0 + chi))
}

/// Trial maxima of `P` ratio draws.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxStatistic {
    pub p: usize,
    pub chi: f64,
    pub mean_mp: f64,
    /// Sample median; a finite typical value even when the mean diverges (χ = 0).
    pub median_mp: f64,
    pub samples: Vec<f64>,
}

impl MaxStatistic {
    /// Rows `P,trial,max_value`; header written only when asked.
    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> Result<()> {
        if header {
            writeln!(out, "P,trial,max_value")?;
        }
        for (i, m) in self.samples.iter().enumerate() {
            writeln!(out, "{},{},{}", self.p, i, m)?;
        }
        Ok(())
    }

    /// Kolmogorov–Smirnov distance between the empirical law of `a_P M_P`
    /// and the Fréchet limit.
    pub fn ks_to_frechet(&self) -> Result<f64> {
        let a = frechet_scale(self.p, self.chi, 1.0)?;
        let mut scaled: Vec<f64> = self.samples.iter().map(|m| a * m).collect();
        scaled.sort_by(f64::total_cmp);
        Ok(ks_distance(&scaled, |t| frechet_cdf(t, self.chi)))
    }
}

/// Sup-distance between the empirical CDF of sorted `xs` and `cdf`.
pub fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Each trial draws `P` i.i.d. pairs `(c ~ N(0,1), x₁ ~ ρ_χ)` and keeps the
/// largest `c/|x₁|`. Trials run in parallel on derived seeds and are merged in
/// trial order.
pub fn sample_max_statistic(p: usize, chi: f64, trials: usize, seed: u64) -> Result<MaxStatistic> {
    if trials == 0 {
        return Err(invalid("trials must be >= 1"));
    }
    if p == 0 {
        return Err(invalid("P must be >= 1"));
    }
    // the perpendicular dimension is irrelevant here; 2 is the smallest valid
    let x1 = ChiDistribution::new(chi, 2)?;
    let rd = RatioDistribution::standard(chi)?;
    let samples: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = rng_from_seed(derive_seed(seed, trial));
            (0..p).map(|_| rd.sample(&x1, &mut rng)).fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let mean_mp = samples.iter().sum::<f64>() / samples.len() as f64;
    let median_mp = median(&samples);
    Ok(MaxStatistic { p, chi, mean_mp, median_mp, samples })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Maxima for each `P` in `ps`.
pub fn max_statistics(ps: &[usize], chi: f64, trials: usize, seed: u64) -> Result<Vec<MaxStatistic>> {
    ps.iter()
        .map(|&p| sample_max_statistic(p, chi, trials, derive_seed(seed, p as u64)))
        .collect()
}

/// Log-log fits of the mean and the median maximum against `P`.
pub fn fit_max_growth(stats: &[MaxStatistic]) -> Result<(PowerLawFit, PowerLawFit)> {
    let xs: Vec<f64> = stats.iter().map(|s| s.p as f64).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.mean_mp).collect();
    let medians: Vec<f64> = stats.iter().map(|s| s.median_mp).collect();
    Ok((fit_power_law(&xs, &means)?, fit_power_law(&xs, &medians)?))
}

/// Maxima for each `P` plus the log-log fit of the mean maximum.
pub fn max_statistic_scaling(
    ps: &[usize],
    chi: f64,
    trials: usize,
    seed: u64,
) -> Result<(Vec<MaxStatistic>, PowerLawFit)> {
    let stats = max_statistics(ps, chi, trials, seed)?;
    let (mean_fit, _) = fit_max_growth(&stats)?;
    Ok((stats, mean_fit))
}
