//! Core geometric types: unit vectors, paired anchor/positive batches,
//! angle-space views, and representation-space statistics.
//!
//! A batch holds two l2-normalized views per item: row `i` of `anchors` is
//! the anchor embedding and row `i` of `positives` is its positive sample.
//! Cross-view negatives of anchor `i` are the positive rows `j != i`;
//! same-view negatives are the other anchor rows.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::vecmath::{cos_to_angle, dot, norm, Matrix};
use serde::Serialize;
use std::f64::consts::PI;

pub const UNIT_NORM_TOL: f64 = 1e-12;

/// An l2-normalized direction with at least two coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    coords: Vec<f64>,
}

impl UnitVector {
    /// Validate an already-normalized vector.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "unit vector needs dimension >= 2, got {}",
                coords.len()
            )));
        }
        let n = norm(&coords);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidShape(format!(
                "norm {n} is not 1 within {UNIT_NORM_TOL}"
            )));
        }
        Ok(UnitVector { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

/// `v / ||v||`, rejecting effectively-zero input.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    if v.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "unit vector needs dimension >= 2, got {}",
            v.len()
        )));
    }
    let n = norm(v);
    if n < 1e-300 {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok(UnitVector {
        coords: v.iter().map(|x| x / n).collect(),
    })
}

/// Normalize in place without the UnitVector wrapper.
pub(crate) fn normalize_rows(m: &mut Matrix) -> Result<()> {
    for i in 0..m.rows {
        let r = m.row_mut(i);
        let n = norm(r);
        if n < 1e-300 {
            return Err(Error::ZeroVector { norm: n });
        }
        for x in r.iter_mut() {
            *x /= n;
        }
    }
    Ok(())
}

/// Paired unit-norm anchor/positive views for N items.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    anchors: Matrix,
    positives: Matrix,
}

impl EmbeddingBatch {
    pub fn new(anchors: Matrix, positives: Matrix) -> Result<Self> {
        if anchors.rows != positives.rows || anchors.cols != positives.cols {
            return Err(Error::InvalidShape(format!(
                "anchor shape {}x{} != positive shape {}x{}",
                anchors.rows, anchors.cols, positives.rows, positives.cols
            )));
        }
        if anchors.rows < 2 || anchors.cols < 2 {
            return Err(Error::InvalidShape(format!(
                "batch needs N >= 2 and D >= 2, got {}x{}",
                anchors.rows, anchors.cols
            )));
        }
        for m in [&anchors, &positives] {
            for i in 0..m.rows {
                let n = norm(m.row(i));
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::InvalidBatch(format!(
                        "row {i} has norm {n}, not 1 within {UNIT_NORM_TOL}"
                    )));
                }
            }
        }
        Ok(EmbeddingBatch { anchors, positives })
    }

    pub fn n(&self) -> usize {
        self.anchors.rows
    }

    pub fn d(&self) -> usize {
        self.anchors.cols
    }

    pub fn anchor(&self, i: usize) -> &[f64] {
        self.anchors.row(i)
    }

    pub fn positive(&self, i: usize) -> &[f64] {
        self.positives.row(i)
    }

    pub fn anchors(&self) -> &Matrix {
        &self.anchors
    }

    pub fn positives(&self) -> &Matrix {
        &self.positives
    }

    // raw-row access for finite-difference tests; perturbed rows are
    // intentionally not renormalized
    #[cfg(test)]
    pub(crate) fn anchors_mut(&mut self) -> &mut Matrix {
        &mut self.anchors
    }

    #[cfg(test)]
    pub(crate) fn positives_mut(&mut self) -> &mut Matrix {
        &mut self.positives
    }
}

/// Angle-space view of one anchor: its positive angle and negative angles.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleBatch {
    pub theta_pos: f64,
    pub theta_neg: Vec<f64>,
}

impl AngleBatch {
    pub fn new(theta_pos: f64, theta_neg: Vec<f64>) -> Result<Self> {
        if !(0.0..=PI).contains(&theta_pos) {
            return Err(Error::InvalidAngle(theta_pos));
        }
        if theta_neg.is_empty() {
            return Err(Error::EmptyInput("theta_neg"));
        }
        for &t in &theta_neg {
            if !(0.0..=PI).contains(&t) {
                return Err(Error::InvalidAngle(t));
            }
        }
        Ok(AngleBatch {
            theta_pos,
            theta_neg,
        })
    }
}

/// Normal-distribution parameters driving the angle-space simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributionSpec {
    pub mu_pos: f64,
    pub sigma_pos: f64,
    pub mu_neg: f64,
    pub sigma_neg: f64,
}

pub const MU_POS_RANGE: (f64, f64) = (PI / 20.0, PI / 2.0);
pub const MU_NEG_RANGE: (f64, f64) = (PI / 20.0, PI);

impl DistributionSpec {
    /// Paper-protocol constructor: means restricted to the sweep ranges.
    pub fn new(mu_pos: f64, sigma_pos: f64, mu_neg: f64, sigma_neg: f64) -> Result<Self> {
        let s = Self::new_wide(mu_pos, sigma_pos, mu_neg, sigma_neg)?;
        if !(MU_POS_RANGE.0..=MU_POS_RANGE.1).contains(&mu_pos)
            || !(MU_NEG_RANGE.0..=MU_NEG_RANGE.1).contains(&mu_neg)
        {
            return Err(Error::InvalidConfig(format!(
                "mu_pos {mu_pos} / mu_neg {mu_neg} outside the protocol ranges \
                 (use new_wide to lift them)"
            )));
        }
        Ok(s)
    }

    /// Same validation without the protocol range restriction.
    pub fn new_wide(mu_pos: f64, sigma_pos: f64, mu_neg: f64, sigma_neg: f64) -> Result<Self> {
        if sigma_pos <= 0.0 || sigma_neg <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "sigmas must be positive, got {sigma_pos}, {sigma_neg}"
            )));
        }
        Ok(DistributionSpec {
            mu_pos,
            sigma_pos,
            mu_neg,
            sigma_neg,
        })
    }

    /// One positive angle and `n_neg` negative angles, truncated to [0, pi].
    pub fn sample(&self, n_neg: usize, rng: &mut Rng) -> AngleBatch {
        let theta_pos = rng.angle(self.mu_pos, self.sigma_pos);
        let theta_neg = (0..n_neg)
            .map(|_| rng.angle(self.mu_neg, self.sigma_neg))
            .collect();
        AngleBatch {
            theta_pos,
            theta_neg,
        }
    }
}

impl Default for DistributionSpec {
    fn default() -> Self {
        DistributionSpec {
            mu_pos: PI / 6.0,
            sigma_pos: 0.05,
            mu_neg: PI / 2.0,
            sigma_neg: 0.10,
        }
    }
}

/// Estimated angle statistics of a set of batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceStats {
    pub mu_pos_hat: f64,
    pub mu_neg_hat: f64,
    pub sigma_pos_hat: f64,
    pub sigma_neg_hat: f64,
    pub mean_pos_cos: f64,
    pub hardest_weight_fraction: f64,
}

/// One anchor realized in embedding space together with its positive and
/// prescribed negatives (the output of [`batch_from_angles`]).
#[derive(Debug, Clone)]
pub struct AnchorSlice {
    pub anchor: UnitVector,
    pub positive: UnitVector,
    pub negatives: Vec<UnitVector>,
}

/// Deterministic batch of isotropically random unit rows.
pub fn random_batch(n: usize, d: usize, seed: u64) -> Result<EmbeddingBatch> {
    if n < 2 || d < 2 {
        return Err(Error::InvalidShape(format!(
            "random_batch needs n >= 2 and d >= 2, got {n}x{d}"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut fill = |rows: usize| {
        let mut m = Matrix::zeros(rows, d);
        for x in m.data.iter_mut() {
            *x = rng.normal();
        }
        m
    };
    let mut anchors = fill(n);
    let mut positives = fill(n);
    normalize_rows(&mut anchors)?;
    normalize_rows(&mut positives)?;
    EmbeddingBatch::new(anchors, positives)
}

/// Place `v` at angle `theta` from `anchor`, with the orthogonal component
/// drawn uniformly from the complement of `anchor`.
fn place_at_angle(anchor: &[f64], theta: f64, rng: &mut Rng) -> Result<UnitVector> {
    let d = anchor.len();
    // random direction orthogonal to the anchor
    let mut w = vec![0.0; d];
    loop {
        for x in w.iter_mut() {
            *x = rng.normal();
        }
        let along = dot(&w, anchor);
        for (x, a) in w.iter_mut().zip(anchor) {
            *x -= along * a;
        }
        let n = norm(&w);
        if n > 1e-12 {
            for x in w.iter_mut() {
                *x /= n;
            }
            break;
        }
    }
    let (s, c) = theta.sin_cos();
    let coords = anchor
        .iter()
        .zip(&w)
        .map(|(a, wi)| c * a + s * wi)
        .collect();
    UnitVector::new(coords)
}

/// Realize an [`AngleBatch`] in embedding space: the anchor sits at the
/// first basis direction, each partner at its prescribed angle with a
/// random dihedral placement. Needs `d >= 3` so the placement has freedom.
pub fn batch_from_angles(angles: &AngleBatch, d: usize, seed: u64) -> Result<AnchorSlice> {
    if d < 3 {
        return Err(Error::InvalidShape(format!(
            "batch_from_angles needs d >= 3, got {d}"
        )));
    }
    if !(0.0..=PI).contains(&angles.theta_pos) {
        return Err(Error::InvalidAngle(angles.theta_pos));
    }
    for &t in &angles.theta_neg {
        if !(0.0..=PI).contains(&t) {
            return Err(Error::InvalidAngle(t));
        }
    }
    let mut rng = Rng::new(seed);
    let mut anchor = vec![0.0; d];
    anchor[0] = 1.0;
    let positive = place_at_angle(&anchor, angles.theta_pos, &mut rng)?;
    let negatives = angles
        .theta_neg
        .iter()
        .map(|&t| place_at_angle(&anchor, t, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnchorSlice {
        anchor: UnitVector::new(anchor)?,
        positive,
        negatives,
    })
}

/// Angle-space view of anchor `anchor_index`: positive angle plus the
/// angles to all partners `j != i` (cross-view positives or same-view
/// anchors). Dot products are clamped before `acos`.
pub fn angles_from_batch(
    batch: &EmbeddingBatch,
    anchor_index: usize,
    cross_view: bool,
) -> Result<AngleBatch> {
    let n = batch.n();
    if anchor_index >= n {
        return Err(Error::InvalidShape(format!(
            "anchor index {anchor_index} out of range for batch of {n}"
        )));
    }
    let h = batch.anchor(anchor_index);
    let theta_pos = cos_to_angle(dot(h, batch.positive(anchor_index)));
    let theta_neg = (0..n)
        .filter(|&j| j != anchor_index)
        .map(|j| {
            let partner = if cross_view {
                batch.positive(j)
            } else {
                batch.anchor(j)
            };
            cos_to_angle(dot(h, partner))
        })
        .collect();
    Ok(AngleBatch {
        theta_pos,
        theta_neg,
    })
}

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Pooled angle statistics over batches, plus the mean hardest-negative
/// softmax mass `exp(cos th_min / tau) / sum_k exp(cos th_ik' / tau)`.
pub fn space_stats(batches: &[EmbeddingBatch], tau: f64) -> Result<SpaceStats> {
    if batches.is_empty() {
        return Err(Error::EmptyInput("space_stats needs at least one batch"));
    }
    if tau <= 0.0 {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let mut pos_angles = Vec::new();
    let mut neg_angles = Vec::new();
    let mut pos_cos = Vec::new();
    let mut fractions = Vec::new();
    for batch in batches {
        for i in 0..batch.n() {
            let angles = angles_from_batch(batch, i, true)?;
            pos_cos.push(dot(batch.anchor(i), batch.positive(i)));
            pos_angles.push(angles.theta_pos);
            fractions.push(hardest_fraction_from_angles(&angles.theta_neg, tau));
            neg_angles.extend(angles.theta_neg);
        }
    }
    let (mu_pos_hat, sigma_pos_hat) = mean_and_sd(&pos_angles);
    let (mu_neg_hat, sigma_neg_hat) = mean_and_sd(&neg_angles);
    Ok(SpaceStats {
        mu_pos_hat,
        mu_neg_hat,
        sigma_pos_hat,
        sigma_neg_hat,
        mean_pos_cos: pos_cos.iter().sum::<f64>() / pos_cos.len() as f64,
        hardest_weight_fraction: fractions.iter().sum::<f64>() / fractions.len() as f64,
    })
}

/// Softmax mass of the hardest negative among the negatives, computed in a
/// shift-stable form: `1 / sum_k exp((cos th_k - cos th_min) / tau)`.
pub fn hardest_fraction_from_angles(theta_neg: &[f64], tau: f64) -> f64 {
    let cosines: Vec<f64> = theta_neg.iter().map(|t| t.cos()).collect();
    let cmax = cosines.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = cosines.iter().map(|c| ((c - cmax) / tau).exp()).sum();
    1.0 / denom
}
