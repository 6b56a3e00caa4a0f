//! Teacher-student data: the χ-parametrized density on the first coordinate,
//! standard normal perpendicular coordinates, labels `sign(x₁)`.

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::rng_from_seed;

/// Density `ρ(x₁) = |x₁|^χ e^{-x₁²/2} / Z(χ)` on the first coordinate, with
/// `d − 1` standard normal coordinates alongside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiDistribution {
    chi: f64,
    dim: usize,
}

impl ChiDistribution {
    pub fn new(chi: f64, dim: usize) -> Result<Self> {
        if !(chi.is_finite() && chi >= 0.0) {
            return Err(invalid(format!("chi must be finite and >= 0, got {chi}")));
        }
        if dim < 2 {
            return Err(invalid(format!("dimension must be >= 2, got {dim}")));
        }
        Ok(Self { chi, dim })
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `ln Z(χ)` with `Z = 2^{(1+χ)/2} Γ((1+χ)/2)`.
    pub fn ln_normalization(&self) -> f64 {
        let h = 0.5 * (1.0 + self.chi);
        h * std::f64::consts::LN_2 + ln_gamma(h)
    }

    pub fn normalization(&self) -> f64 {
        self.ln_normalization().exp()
    }

    pub fn pdf(&self, x1: f64) -> f64 {
        chi_pdf(self.chi, x1)
    }

    /// Draws one nonzero first coordinate.
    ///
    /// `x₁²/2` is Gamma((χ+1)/2, 1) distributed; the sign is a fair coin.
    pub fn sample_x1<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // shape > 0 always holds since chi >= 0
        let gamma = Gamma::new(0.5 * (self.chi + 1.0), 1.0).expect("positive gamma shape");
        loop {
            let g: f64 = gamma.sample(rng);
            let magnitude = (2.0 * g).sqrt();
            if magnitude > 0.0 {
                return if rng.random::<bool>() { magnitude } else { -magnitude };
            }
        }
    }
}

/// Evaluates `|x₁|^χ e^{-x₁²/2} / Z(χ)`.
pub fn chi_pdf(chi: f64, x1: f64) -> f64 {
    let h = 0.5 * (1.0 + chi);
    let ln_z = h * std::f64::consts::LN_2 + ln_gamma(h);
    let ax = x1.abs();
    if ax == 0.0 {
        return if chi == 0.0 { (-ln_z).exp() } else { 0.0 };
    }
    (chi * ax.ln() - 0.5 * x1 * x1 - ln_z).exp()
}

/// A labelled point cloud stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    true_normal: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        points: Vec<f64>,
        labels: Vec<f64>,
        dim: usize,
        true_normal: Option<Vec<f64>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if points.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: points.len(),
            });
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(invalid("labels must be +1 or -1"));
        }
        if let Some(n) = &true_normal {
            if n.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: n.len() });
            }
        }
        Ok(Self { points, labels, dim, true_normal })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn true_normal(&self) -> Option<&[f64]> {
        self.true_normal.as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    /// Builds a new dataset from the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut points = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            points.extend_from_slice(self.point(i));
            labels.push(self.labels[i]);
        }
        Dataset { points, labels, dim: self.dim, true_normal: self.true_normal.clone() }
    }

    /// Applies `f` to every point in place, keeping labels.
    pub fn map_points(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Dataset {
        let mut points = Vec::with_capacity(self.points.len());
        for p in self.points.chunks_exact(self.dim) {
            let q = f(p);
            assert_eq!(q.len(), self.dim, "map_points must preserve dimension");
            points.extend(q);
        }
        Dataset { points, labels: self.labels.clone(), dim: self.dim, true_normal: self.true_normal.clone() }
    }

    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Dataset> {
        Dataset::new(self.points.clone(), labels, self.dim, self.true_normal.clone())
    }

    /// CSV with columns `x_1..x_d,label`, one row per point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|i| format!("x_{i}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for (p, y) in self.iter() {
            for v in p {
                write!(out, "{v},")?;
            }
            writeln!(out, "{}", y as i32)?;
        }
        Ok(())
    }
}

/// Samples `p` teacher-student points; labels are `sign(x₁)`.
pub fn sample_chi_dataset(dist: &ChiDistribution, p: usize, seed: u64) -> Result<Dataset> {
    if p == 0 {
        return Err(invalid("sample count must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    Ok(sample_with(dist, p, &mut rng))
}

fn sample_with(dist: &ChiDistribution, p: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let d = dist.dim();
    let mut points = Vec::with_capacity(p * d);
    let mut labels = Vec::with_capacity(p);
    for _ in 0..p {
        let x1 = dist.sample_x1(rng);
        points.push(x1);
        for _ in 1..d {
            points.push(rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(x1.signum());
    }
    let mut normal = vec![0.0; d];
    normal[0] = 1.0;
    Dataset { points, labels, dim: d, true_normal: Some(normal) }
}

/// Sign of the projection of `x` on `normal`; a zero projection is rejected.
pub fn true_label(x: &[f64], normal: &[f64]) -> Result<f64> {
    if x.len() != normal.len() {
        return Err(Error::DimensionMismatch { expected: normal.len(), got: x.len() });
    }
    let proj: f64 = x.iter().zip(normal).map(|(a, b)| a * b).sum();
    if proj == 0.0 {
        return Err(Error::OnBoundary);
    }
    Ok(proj.signum())
}

/// Disjoint random split into `p_train` training rows and the rest.
pub fn split_train_test(ds: &Dataset, p_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if p_train >= ds.len() {
        return Err(invalid(format!(
            "training size {p_train} must be smaller than dataset size {}",
            ds.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let perm = sample_indices(&mut rng, ds.len(), ds.len()).into_vec();
    let (train, test) = perm.split_at(p_train);
    Ok((ds.select(train), ds.select(test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_bad_parameters() {
        assert!(ChiDistribution::new(-0.5, 3).is_err());
        assert!(ChiDistribution::new(1.0, 1).is_err());
        let dist = ChiDistribution::new(0.0, 3).unwrap();
        assert!(sample_chi_dataset(&dist, 0, 1).is_err());
    }

    #[test]
    fn labels_follow_first_coordinate() {
        let dist = ChiDistribution::new(0.0, 3).unwrap();
        let ds = sample_chi_dataset(&dist, 2, 7).unwrap();
        assert_eq!(ds.len(), 2);
        for (p, y) in ds.iter() {
            assert_eq!(y, p[0].signum());
            assert_ne!(p[0], 0.0);
        }
    }

    #[test]
    fn pdf_reference_values() {
        assert_relative_eq!(chi_pdf(0.0, 0.0), 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);
        for &x in &[-2.0, -0.3, 0.7, 1.9] {
            let expect = f64::abs(x) * (-0.5 * x * x).exp() / 2.0;
            assert_relative_eq!(chi_pdf(1.0, x), expect, epsilon = 1e-12);
        }
        assert_eq!(chi_pdf(2.0, 0.0), 0.0);
        let dist = ChiDistribution::new(1.0, 2).unwrap();
        assert_relative_eq!(dist.normalization(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn true_label_cases() {
        let n = [1.0, 0.0, 0.0];
        assert_eq!(true_label(&[0.5, -3.0, 2.0], &n).unwrap(), 1.0);
        assert_eq!(true_label(&[-1e-9, 0.0, 0.0], &n).unwrap(), -1.0);
        assert!(matches!(true_label(&[0.0, 1.0, 1.0], &n), Err(Error::OnBoundary)));
        assert!(true_label(&[1.0, 1.0], &n).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let dist = ChiDistribution::new(1.5, 4).unwrap();
        let ds = sample_chi_dataset(&dist, 100, 3).unwrap();
        let (a, b) = split_train_test(&ds, 80, 11).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let (a2, b2) = split_train_test(&ds, 80, 11).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert!(split_train_test(&ds, 100, 11).is_err());
    }

    #[test]
    fn split_is_disjoint() {
        let dist = ChiDistribution::new(0.0, 2).unwrap();
        let ds = sample_chi_dataset(&dist, 50, 5).unwrap();
        let (a, b) = split_train_test(&ds, 30, 2).unwrap();
        for (p, _) in a.iter() {
            assert!(b.iter().all(|(q, _)| q != p));
        }
    }

    #[test]
    fn csv_layout() {
        let dist = ChiDistribution::new(0.0, 3).unwrap();
        let ds = sample_chi_dataset(&dist, 4, 1).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x_1,x_2,x_3,label");
        assert_eq!(lines.len(), 5);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
    }
}
