//! Dense vector and matrix primitives, similarity functions, correlation
//! statistics and a finite-difference gradient checker.
//!
//! All arithmetic is `f64` and every reduction runs in plain left-to-right
//! order so results are bit-reproducible across runs.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Which argument of a binary operation was at fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("{0} argument has zero norm")]
    ZeroNorm(Side),
    #[error("{0} sequence has zero variance")]
    ZeroVariance(Side),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("matrix shape {rows}x{cols} does not match {len} values")]
    Shape { rows: usize, cols: usize, len: usize },
}

pub type Result<T> = core::result::Result<T, NumericError>;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(NumericError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(NumericError::Empty);
    }
    Ok(())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `a / ‖a‖₂`, or `None` for the zero vector.
pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(a.iter().map(|x| x / n).collect())
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    libm::sqrt(acc)
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (x - y).abs();
    }
    acc
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let na2 = dot(a, a);
    if na2 == 0.0 {
        return Err(NumericError::ZeroNorm(Side::Left));
    }
    let nb2 = dot(b, b);
    if nb2 == 0.0 {
        return Err(NumericError::ZeroNorm(Side::Right));
    }
    // sqrt(x * x) == x exactly, so cos(v, v) is exactly 1
    let c = dot(a, b) / libm::sqrt(na2 * nb2);
    if !c.is_finite() {
        return Err(NumericError::NonFinite("cosine"));
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// Cosine together with its gradients with respect to both arguments.
///
/// The value is *not* clamped here: gradients are only consistent with the
/// unclamped expression, and losses never need the clamp.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_pair(a, b)?;
    let na = norm(a);
    if na == 0.0 {
        return Err(NumericError::ZeroNorm(Side::Left));
    }
    let nb = norm(b);
    if nb == 0.0 {
        return Err(NumericError::ZeroNorm(Side::Right));
    }
    let c = dot(a, b) / (na * nb);
    // d cos / d a = b / (|a||b|) - cos * a / |a|^2
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - c * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - c * y / (nb * nb))
        .collect();
    Ok((c, ga, gb))
}

/// The similarity functions used by the evaluation grid. Distance-based
/// kinds are negated so that larger always means more similar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Cosine,
    Dot,
    Euclidean,
    Manhattan,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 4] = [
        SimilarityKind::Cosine,
        SimilarityKind::Dot,
        SimilarityKind::Euclidean,
        SimilarityKind::Manhattan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::Dot => "dot",
            SimilarityKind::Euclidean => "euclidean",
            SimilarityKind::Manhattan => "manhattan",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn similarity(kind: SimilarityKind, a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let s = match kind {
        SimilarityKind::Cosine => return cosine(a, b),
        SimilarityKind::Dot => dot(a, b),
        SimilarityKind::Euclidean => -l2_distance(a, b),
        SimilarityKind::Manhattan => -l1_distance(a, b),
    };
    if !s.is_finite() {
        return Err(NumericError::NonFinite(kind.name()));
    }
    Ok(s)
}

fn check_series(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(NumericError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(NumericError::TooShort(x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NumericError::NonFinite("x"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(NumericError::NonFinite("y"));
    }
    if x.iter().all(|v| *v == x[0]) {
        return Err(NumericError::ZeroVariance(Side::Left));
    }
    if y.iter().all(|v| *v == y[0]) {
        return Err(NumericError::ZeroVariance(Side::Right));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in x {
        acc += v;
    }
    acc / x.len() as f64
}

/// Pearson product-moment correlation (two-pass, centered sums).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_series(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(NumericError::ZeroVariance(Side::Left));
    }
    if syy == 0.0 {
        return Err(NumericError::ZeroVariance(Side::Right));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their rank span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap_or(Ordering::Equal).then(i.cmp(&j)));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let r = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_series(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Compares an analytic gradient against central differences.
///
/// Returns the maximum over coordinates of
/// `|fd - analytic| / max(1, |fd|, |analytic|)`.
pub fn grad_check<F>(mut f: F, analytic: &[f64], at: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(NumericError::InvalidStep(step));
    }
    if analytic.len() != at.len() {
        return Err(NumericError::LengthMismatch { left: analytic.len(), right: at.len() });
    }
    let mut x = at.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + step;
        let plus = f(&x);
        x[k] = orig - step;
        let minus = f(&x);
        x[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericError::NonFinite("objective"));
        }
        let fd = (plus - minus) / (2.0 * step);
        let g = analytic[k];
        let denom = 1.0f64.max(fd.abs()).max(g.abs());
        worst = worst.max((fd - g).abs() / denom);
    }
    Ok(worst)
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(NumericError::Shape { rows, cols, len: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Copy of columns `start..start + width`.
    pub fn column_block(&self, start: usize, width: usize) -> Mat {
        Mat::from_fn(self.rows, width, |r, c| self.get(r, start + c))
    }

    /// `self · x` restricted to columns `start..start + x.len()`.
    pub fn block_matvec(&self, start: usize, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| dot(&self.row(r)[start..start + x.len()], x))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_identity_and_orthogonality() {
        let v = [0.3, -1.2, 4.0];
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_formula() {
        // brute-force scalar evaluation of dot / (|a| |b|)
        let (a, b) = ([1.0f64, 2.0, 3.0], [4.0f64, 5.0, 6.0]);
        let d = 1.0 * 4.0 + 2.0 * 5.0 + 3.0 * 6.0;
        let expect = d / ((1.0f64 + 4.0 + 9.0).sqrt() * (16.0f64 + 25.0 + 36.0).sqrt());
        let got = cosine(&a, &b).unwrap();
        assert!(((got - expect) / expect).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_names_side() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(NumericError::ZeroNorm(Side::Left)));
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 0.0]), Err(NumericError::ZeroNorm(Side::Right)));
    }

    #[test]
    fn similarity_hand_values() {
        let v = [1.5, -2.0];
        assert_eq!(similarity(SimilarityKind::Euclidean, &v, &v).unwrap(), 0.0);
        assert_eq!(similarity(SimilarityKind::Manhattan, &[1.0, 1.0], &[2.0, 3.0]).unwrap(), -3.0);
        assert_eq!(similarity(SimilarityKind::Dot, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert!(matches!(
            similarity(SimilarityKind::Dot, &[1.0], &[1.0, 2.0]),
            Err(NumericError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pearson_affine() {
        let x = [1.0, 4.0, 2.5, -3.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &z).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_degenerate() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(NumericError::ZeroVariance(Side::Left)));
        assert_eq!(pearson(&[1.0, 2.0], &[0.1, 0.1]), Err(NumericError::ZeroVariance(Side::Right)));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(NumericError::TooShort(1)));
    }

    #[test]
    fn spearman_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(spearman(&[1.0, 2.0, 2.0, 3.0], &[10.0, 20.0, 20.0, 30.0]).unwrap(), 1.0);
        let x = [0.2, -1.0, 3.0, 0.5];
        let y: Vec<f64> = x.iter().map(|v| libm::exp(*v) * 7.0).collect();
        assert_eq!(spearman(&x, &y).unwrap(), 1.0);
    }

    #[test]
    fn grad_check_quadratic_and_detection() {
        let z = [0.3, -0.7, 1.1, 2.0];
        let f = |v: &[f64]| 0.5 * dot(v, v);
        assert!(grad_check(f, &z, &z, 1e-5).unwrap() < 1e-8);
        let wrong: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        assert!(grad_check(f, &wrong, &z, 1e-5).unwrap() > 0.1);
        assert_eq!(grad_check(f, &z, &z, 0.0), Err(NumericError::InvalidStep(0.0)));
        assert_eq!(
            grad_check(|_| f64::NAN, &z, &z, 1e-5),
            Err(NumericError::NonFinite("objective"))
        );
    }

    #[test]
    fn cosine_gradient_matches_differences() {
        let z = [0.4, -1.3, 0.8];
        let b = [1.0, 0.5, -2.0];
        let (_, ga, _) = cosine_with_grad(&z, &b).unwrap();
        let err = grad_check(|v| cosine_with_grad(v, &b).unwrap().0, &ga, &z, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn mat_shape_checked() {
        assert!(Mat::from_vec(2, 2, vec![1.0; 3]).is_err());
        let m = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(m.block_matvec(1, &[1.0, 1.0]), vec![5.0, 11.0]);
        assert_eq!(m.column_block(1, 2).as_slice(), &[2.0, 3.0, 5.0, 6.0]);
    }
}
