//! The unified gradient template: decomposition of each loss into its
//! Gradient Dissipation / Weight / Ratio components, reconstruction of the
//! anchor gradient from those components, and a finite-difference checker
//! that validates the closed forms.
//!
//! Reconstruction computes
//!
//! ```text
//! row_i = gd_i * sum_{j != i} w_ij * (neg_j - ratio_ij * h_i')
//! ```
//!
//! with `neg_j` taken from the view the loss repels (cross-view positives
//! or same-view anchors). The decomposition and the closed-form gradients
//! are written independently of each other, so their agreement is a real
//! check of the component algebra.

use crate::embeddings::{random_batch, EmbeddingBatch};
use crate::error::{Error, Result};
use crate::losses::{
    analytic_grad, cross_dots, fd_target, frozen_factors, primed_dots, same_dots, LossKind,
    LossParams, BOUNDARY_TOL,
};
use crate::rng::derive_seed;
use crate::vecmath::{axpy, cos_to_angle, dist, tangent_project, Matrix};
use rayon::prelude::*;
use serde::Serialize;

/// Which rows supply the repelled negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NegativeSource {
    CrossView,
    SameView,
}

/// Which view the weight values are computed from (informational; the
/// Barlow-family weights read the primed view).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WeightSource {
    AnchorView,
    PrimedView,
}

/// Per-anchor Gradient Dissipation, per-pair Weight and Ratio values.
/// `weights[i]` and `ratios[i]` run over `j != i` in ascending `j`.
#[derive(Debug, Clone)]
pub struct ParadigmComponents {
    pub gd: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub ratios: Vec<Vec<f64>>,
    pub negative_source: NegativeSource,
    pub weight_source: WeightSource,
    /// Subgradient-boundary flags, as in [`analytic_grad`].
    pub boundary: Vec<bool>,
}

/// Finite-difference comparison summary.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub n_checked: usize,
    pub n_boundary_skipped: usize,
    pub epsilon: f64,
}

fn softmax_neg_row(row: &[f64], skip: usize, tau: f64) -> (Vec<f64>, f64) {
    // returns exp((x_j - shift)/tau) for j != skip (compressed) and their sum
    let shift = row
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != skip)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut exps = Vec::with_capacity(row.len() - 1);
    let mut sum = 0.0;
    for (j, &v) in row.iter().enumerate() {
        if j == skip {
            continue;
        }
        let e = ((v - shift) / tau).exp();
        exps.push(e);
        sum += e;
    }
    (exps, sum)
}

/// Materialize the component table row of `kind` on a concrete batch.
pub fn decompose(
    kind: LossKind,
    b: &EmbeddingBatch,
    p: &LossParams,
) -> Result<ParadigmComponents> {
    p.validate(kind)?;
    let n = b.n();
    let frozen = frozen_factors(kind, b, p);
    let mut gd = vec![1.0; n];
    let mut weights = vec![vec![0.0; n - 1]; n];
    let mut ratios = vec![vec![1.0; n - 1]; n];
    let mut boundary = vec![false; n];
    for (i, bf) in frozen.boundary.iter().enumerate() {
        boundary[i] |= bf;
    }
    let negative_source = if kind.cross_view_negatives() {
        NegativeSource::CrossView
    } else {
        NegativeSource::SameView
    };
    let mut weight_source = WeightSource::AnchorView;

    match kind {
        LossKind::Info | LossKind::Arc => {
            let c = cross_dots(b);
            for i in 0..n {
                let row = c.row(i);
                let (exps, z_neg) = softmax_neg_row(row, i, p.tau);
                let shift = row
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, v)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let pos_exponent = if kind == LossKind::Info {
                    row[i]
                } else {
                    let theta = cos_to_angle(row[i]);
                    (theta + p.u).cos()
                };
                let e_pos = ((pos_exponent - shift) / p.tau).exp();
                gd[i] = z_neg / (z_neg + e_pos);
                for (jj, e) in exps.iter().enumerate() {
                    weights[i][jj] = e / (p.tau * z_neg);
                }
                if kind == LossKind::Arc {
                    let theta = cos_to_angle(row[i]);
                    let sin_t = theta.sin();
                    let ratio = if sin_t < BOUNDARY_TOL {
                        boundary[i] = true;
                        0.0
                    } else {
                        (theta + p.u).sin() / sin_t
                    };
                    ratios[i] = vec![ratio; n - 1];
                }
            }
        }
        LossKind::Mpt => {
            let c = cross_dots(b);
            for i in 0..n {
                let (arg, best, tie) = max_offdiag(&c, i);
                let gap = c.row(i)[i] - best;
                boundary[i] |= tie || (gap - p.m).abs() < BOUNDARY_TOL;
                gd[i] = if gap < p.m { 1.0 } else { 0.0 };
                weights[i][compress(i, arg)] = 1.0;
            }
        }
        LossKind::Met => {
            let c = cross_dots(b);
            for i in 0..n {
                let dp = (2.0 - 2.0 * c.row(i)[i]).max(0.0).sqrt();
                let (arg, best, tie) = max_offdiag(&c, i); // max cos = min angle
                let dn = (2.0 - 2.0 * best).max(0.0).sqrt();
                boundary[i] |= tie || (dn - dp - p.m).abs() < BOUNDARY_TOL || dp < BOUNDARY_TOL;
                gd[i] = if dn - dp < p.m { 1.0 } else { 0.0 };
                weights[i][compress(i, arg)] = 1.0 / dn;
                for (jj, j) in neighbors(i, n).enumerate() {
                    ratios[i][jj] =
                        ((1.0 - c.row(i)[j]) / (1.0 - c.row(i)[i])).sqrt();
                }
            }
        }
        LossKind::Baseline => {
            for i in 0..n {
                gd[i] = if frozen.gate[i] { 1.0 } else { 0.0 };
                for (jj, j) in neighbors(i, n).enumerate() {
                    weights[i][jj] = frozen.weights[i * n + j];
                    ratios[i][jj] = p.r;
                }
            }
        }
        LossKind::AlignMhe => {
            let s = same_dots(b);
            // shared shift keeps the row and pair sums on one scale
            let mut shift = f64::NEG_INFINITY;
            for k in 0..n {
                for l in k + 1..n {
                    shift = shift.max(2.0 * s.row(k)[l]);
                }
            }
            let mut pair_sum = 0.0;
            for k in 0..n {
                for l in k + 1..n {
                    pair_sum += (2.0 * s.row(k)[l] - shift).exp();
                }
            }
            for i in 0..n {
                let row_sum: f64 = neighbors(i, n)
                    .map(|j| (2.0 * s.row(i)[j] - shift).exp())
                    .sum();
                let ratio = pair_sum / (p.nu_u * n as f64 * row_sum);
                for (jj, j) in neighbors(i, n).enumerate() {
                    weights[i][jj] = 2.0 * p.nu_u * (2.0 * s.row(i)[j] - shift).exp() / pair_sum;
                    ratios[i][jj] = ratio;
                }
            }
        }
        LossKind::AlignMhs => {
            for i in 0..n {
                let (arg, dmin, tie) = argmin_same_dist(b, i);
                boundary[i] |= tie;
                weights[i][compress(i, arg)] = p.nu_u / dmin;
                for (jj, j) in neighbors(i, n).enumerate() {
                    ratios[i][jj] = 2.0 * dist(b.anchor(i), b.anchor(j)) / (p.nu_u * n as f64);
                }
            }
        }
        LossKind::BarlowEq => {
            // scalar ratio only exists for nu_b = 1, where the positive
            // weight matrix collapses to a multiple of the identity
            if (p.nu_b - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParams {
                    kind: kind.name(),
                    reason: format!(
                        "scalar paradigm ratio requires nu_b = 1 \
                         (diagonal-matrix ratio otherwise), got {}",
                        p.nu_b
                    ),
                });
            }
            weight_source = WeightSource::PrimedView;
            let pd = primed_dots(b);
            let nf = n as f64;
            for i in 0..n {
                let row_sum: f64 = neighbors(i, n).map(|j| pd.row(i)[j]).sum();
                let ratio = nf / row_sum;
                for (jj, j) in neighbors(i, n).enumerate() {
                    weights[i][jj] = 2.0 * p.nu_b * pd.row(i)[j] / (nf * nf);
                    ratios[i][jj] = ratio;
                }
            }
        }
        LossKind::VicregEq => {
            let s = same_dots(b);
            let nf = n as f64;
            let df = b.d() as f64;
            for i in 0..n {
                let row_sum: f64 = neighbors(i, n).map(|j| s.row(i)[j]).sum();
                let ratio = df * (nf - 1.0) * (nf - 1.0) / (2.0 * p.nu_v1 * nf * row_sum);
                for (jj, j) in neighbors(i, n).enumerate() {
                    weights[i][jj] =
                        4.0 * p.nu_v1 * s.row(i)[j] / (df * (nf - 1.0) * (nf - 1.0));
                    ratios[i][jj] = ratio;
                }
            }
        }
        LossKind::ModMhe => {
            let s = same_dots(b);
            let mut shift = f64::NEG_INFINITY;
            for k in 0..n {
                for l in k + 1..n {
                    shift = shift.max(s.row(k)[l]);
                }
            }
            let mut pair_sum = 0.0;
            for k in 0..n {
                for l in k + 1..n {
                    pair_sum += ((s.row(k)[l] - shift) / p.tau).exp();
                }
            }
            for i in 0..n {
                gd[i] = if frozen.gate[i] { 1.0 } else { 0.0 };
                for (jj, j) in neighbors(i, n).enumerate() {
                    weights[i][jj] =
                        ((s.row(i)[j] - shift) / p.tau).exp() / (p.tau * pair_sum);
                    ratios[i][jj] = p.r;
                }
            }
        }
        LossKind::ModMhs => {
            for i in 0..n {
                gd[i] = if frozen.gate[i] { 1.0 } else { 0.0 };
                let (arg, dmin, tie) = argmin_same_dist(b, i);
                boundary[i] |= tie;
                weights[i][compress(i, arg)] = 1.0 / dmin;
                for jj in 0..n - 1 {
                    ratios[i][jj] = p.r;
                }
            }
        }
        LossKind::ModBarlow | LossKind::ModVicreg => {
            if kind == LossKind::ModBarlow {
                weight_source = WeightSource::PrimedView;
            }
            for i in 0..n {
                gd[i] = if frozen.gate[i] { 1.0 } else { 0.0 };
                for (jj, j) in neighbors(i, n).enumerate() {
                    weights[i][jj] = frozen.weights[i * n + j];
                    ratios[i][jj] = p.r;
                }
            }
        }
    }

    Ok(ParadigmComponents {
        gd,
        weights,
        ratios,
        negative_source,
        weight_source,
        boundary,
    })
}

fn compress(i: usize, j: usize) -> usize {
    if j < i {
        j
    } else {
        j - 1
    }
}

fn neighbors(i: usize, n: usize) -> impl Iterator<Item = usize> {
    (0..n).filter(move |&j| j != i)
}

fn max_offdiag(m: &Matrix, i: usize) -> (usize, f64, bool) {
    let n = m.rows;
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    let mut arg = usize::MAX;
    for j in 0..n {
        if j == i {
            continue;
        }
        let v = m.row(i)[j];
        if v > best {
            second = best;
            best = v;
            arg = j;
        } else if v > second {
            second = v;
        }
    }
    (arg, best, (best - second).abs() < BOUNDARY_TOL)
}

fn argmin_same_dist(b: &EmbeddingBatch, i: usize) -> (usize, f64, bool) {
    let mut best = f64::INFINITY;
    let mut second = f64::INFINITY;
    let mut arg = usize::MAX;
    for j in 0..b.n() {
        if j == i {
            continue;
        }
        let d = dist(b.anchor(i), b.anchor(j));
        if d < best {
            second = best;
            best = d;
            arg = j;
        } else if d < second {
            second = d;
        }
    }
    (arg, best, (second - best).abs() < BOUNDARY_TOL)
}

/// Rebuild the anchor-gradient matrix from components:
/// `row_i = gd_i * sum_j w_ij (neg_j - ratio_ij h_i')`.
pub fn reconstruct(components: &ParadigmComponents, b: &EmbeddingBatch) -> Result<Matrix> {
    let n = b.n();
    if components.gd.len() != n
        || components.weights.len() != n
        || components.ratios.len() != n
        || components.weights.iter().any(|w| w.len() != n - 1)
        || components.ratios.iter().any(|r| r.len() != n - 1)
    {
        return Err(Error::ShapeMismatch(format!(
            "components sized for {} anchors",
            components.gd.len()
        )));
    }
    let mut out = Matrix::zeros(n, b.d());
    for i in 0..n {
        let row = out.row_mut(i);
        for (jj, j) in neighbors(i, n).enumerate() {
            let w = components.gd[i] * components.weights[i][jj];
            let neg = match components.negative_source {
                NegativeSource::CrossView => b.positive(j),
                NegativeSource::SameView => b.anchor(j),
            };
            axpy(row, w, neg);
            axpy(row, -w * components.ratios[i][jj], b.positive(i));
        }
    }
    Ok(out)
}

/// Central finite differences of the per-anchor loss (or the global total)
/// with respect to each anchor coordinate; other rows and all stop-gradient
/// factors stay fixed, and the perturbed point is not renormalized.
pub fn fd_grad(
    kind: LossKind,
    b: &EmbeddingBatch,
    p: &LossParams,
    epsilon: f64,
) -> Result<Matrix> {
    Ok(fd_grad_detailed(kind, b, p, epsilon)?.0)
}

/// As [`fd_grad`], also reporting per-anchor whether any probe crossed a
/// discrete state (indicator flip or argmax/argmin change), which makes the
/// stencil invalid there.
pub fn fd_grad_detailed(
    kind: LossKind,
    b: &EmbeddingBatch,
    p: &LossParams,
    epsilon: f64,
) -> Result<(Matrix, Vec<bool>)> {
    if !(1e-8..=1e-4).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "fd epsilon must be in [1e-8, 1e-4], got {epsilon}"
        )));
    }
    p.validate(kind)?;
    let frozen = frozen_factors(kind, b, p);
    let n = b.n();
    let d = b.d();
    let mut out = Matrix::zeros(n, d);
    let mut crossed = vec![false; n];
    let mut row_buf = vec![0.0; d];
    for i in 0..n {
        let (_, base_state) = fd_target(kind, b, p, &frozen, i, b.anchor(i));
        row_buf.copy_from_slice(b.anchor(i));
        for k in 0..d {
            let orig = row_buf[k];
            row_buf[k] = orig + epsilon;
            let (fp, sp) = fd_target(kind, b, p, &frozen, i, &row_buf);
            row_buf[k] = orig - epsilon;
            let (fm, sm) = fd_target(kind, b, p, &frozen, i, &row_buf);
            row_buf[k] = orig;
            if sp != base_state || sm != base_state {
                crossed[i] = true;
            }
            out.row_mut(i)[k] = (fp - fm) / (2.0 * epsilon);
        }
    }
    Ok((out, crossed))
}

const FD_EPSILON_DEFAULT: f64 = 1e-6;
const FD_EPSILON_RICHARDSON: f64 = 1e-5;

/// Tangent-projected comparison of the analytic and finite-difference
/// gradients over random batches. Boundary batches (subgradient points or
/// stencil crossings) are skipped and counted. Per-row relative error uses
/// `max(||fd||, 1e-12)` as the denominator; the per-batch error is the max
/// over rows. When the plain stencil at `1e-6` leaves more than `1e-6`
/// relative error, a Richardson-extrapolated stencil at `1e-5` is tried and
/// the better result kept.
pub fn check(
    kind: LossKind,
    n_trials: usize,
    n: usize,
    d: usize,
    p: &LossParams,
    seed: u64,
) -> Result<GradCheckReport> {
    if n_trials == 0 {
        return Err(Error::InvalidConfig("n_trials must be >= 1".into()));
    }
    p.validate(kind)?;
    let results: Vec<Option<f64>> = (0..n_trials)
        .into_par_iter()
        .map(|t| trial_error(kind, n, d, p, derive_seed(seed, t as u64)))
        .collect::<Result<Vec<_>>>()?;

    let mut max_rel: f64 = 0.0;
    let mut sum = 0.0;
    let mut n_checked = 0usize;
    let mut n_skipped = 0usize;
    for r in results {
        match r {
            Some(err) => {
                max_rel = max_rel.max(err);
                sum += err;
                n_checked += 1;
            }
            None => n_skipped += 1,
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        mean_rel_error: if n_checked > 0 {
            sum / n_checked as f64
        } else {
            0.0
        },
        n_checked,
        n_boundary_skipped: n_skipped,
        epsilon: FD_EPSILON_DEFAULT,
    })
}

fn trial_error(
    kind: LossKind,
    n: usize,
    d: usize,
    p: &LossParams,
    seed: u64,
) -> Result<Option<f64>> {
    let batch = random_batch(n, d, seed)?;
    let analytic = analytic_grad(kind, &batch, p)?;
    if analytic.boundary.iter().any(|&x| x) {
        return Ok(None);
    }
    let (fd, crossed) = fd_grad_detailed(kind, &batch, p, FD_EPSILON_DEFAULT)?;
    if crossed.iter().any(|&x| x) {
        return Ok(None);
    }
    let mut err = batch_rel_error(&analytic.grads, &fd, &batch);
    if err > 1e-6 {
        // curvature or round-off suspected: Richardson extrapolation from
        // stencils at 1e-5 and 5e-6
        let (fd1, c1) = fd_grad_detailed(kind, &batch, p, FD_EPSILON_RICHARDSON)?;
        let (fd2, c2) = fd_grad_detailed(kind, &batch, p, FD_EPSILON_RICHARDSON / 2.0)?;
        if c1.iter().any(|&x| x) || c2.iter().any(|&x| x) {
            return Ok(None);
        }
        let mut rich = Matrix::zeros(fd1.rows, fd1.cols);
        for idx in 0..rich.data.len() {
            rich.data[idx] = (4.0 * fd2.data[idx] - fd1.data[idx]) / 3.0;
        }
        err = err.min(batch_rel_error(&analytic.grads, &rich, &batch));
    }
    Ok(Some(err))
}

fn batch_rel_error(analytic: &Matrix, fd: &Matrix, batch: &EmbeddingBatch) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..batch.n() {
        let pa = tangent_project(analytic.row(i), batch.anchor(i));
        let pf = tangent_project(fd.row(i), batch.anchor(i));
        let diff: f64 = pa
            .iter()
            .zip(&pf)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let denom = pf.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::random_batch;

    fn batch_b2() -> EmbeddingBatch {
        let rows = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        EmbeddingBatch::new(rows.clone(), rows).unwrap()
    }

    #[test]
    fn info_gd_on_b2() {
        let p = LossParams {
            tau: 1.0,
            ..Default::default()
        };
        let c = decompose(LossKind::Info, &batch_b2(), &p).unwrap();
        // 1/(1+e)
        assert!((c.gd[0] - 0.2689414213699951).abs() < 1e-15);
        assert_eq!(c.ratios[0], vec![1.0]);
    }

    #[test]
    fn met_ratio_scalar_example() {
        // theta_ii' = pi/3 (cos = 1/2), hardest theta_ij' = pi/2 (cos = 0)
        // ratio = sqrt((1-0)/(1-0.5)) = sqrt(2)
        let ratio: f64 = ((1.0 - 0.0) / (1.0 - 0.5f64)).sqrt();
        assert!((ratio - 1.4142135623730951).abs() < 1e-15);
    }

    #[test]
    fn arc_zero_margin_gives_unit_ratios() {
        let b = random_batch(5, 6, 9).unwrap();
        let p = LossParams {
            u: 0.0,
            ..Default::default()
        };
        let c = decompose(LossKind::Arc, &b, &p).unwrap();
        for row in &c.ratios {
            for &r in row {
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruction_matches_analytic_for_all_kinds() {
        let p = LossParams::default();
        for kind in LossKind::ALL {
            let mut checked = 0;
            let mut trial = 0u64;
            while checked < 5 {
                let b = random_batch(8, 16, derive_seed(100 + trial, kind as u64)).unwrap();
                trial += 1;
                let g = analytic_grad(kind, &b, &p).unwrap();
                if g.boundary.iter().any(|&x| x) {
                    continue;
                }
                let c = decompose(kind, &b, &p).unwrap();
                let rec = reconstruct(&c, &b).unwrap();
                for (x, y) in rec.data.iter().zip(&g.grads.data) {
                    assert!(
                        (x - y).abs() < 1e-10,
                        "{kind}: reconstruct {x} vs analytic {y}"
                    );
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn baseline_reconstruction_is_bit_exact() {
        let p = LossParams::default();
        let b = random_batch(8, 16, 77).unwrap();
        let g = analytic_grad(LossKind::Baseline, &b, &p).unwrap();
        let c = decompose(LossKind::Baseline, &b, &p).unwrap();
        let rec = reconstruct(&c, &b).unwrap();
        assert_eq!(rec.data, g.grads.data);
    }

    #[test]
    fn zero_gd_reconstructs_zero_matrix() {
        let p = LossParams::default();
        let b = random_batch(4, 8, 5).unwrap();
        let mut c = decompose(LossKind::Mpt, &b, &p).unwrap();
        for g in c.gd.iter_mut() {
            *g = 0.0;
        }
        let rec = reconstruct(&c, &b).unwrap();
        assert!(rec.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn static_ratio_kinds_have_constant_ratio_arrays() {
        let p = LossParams {
            r: 1.5,
            ..Default::default()
        };
        let b = random_batch(6, 12, 21).unwrap();
        for kind in [
            LossKind::Info,
            LossKind::Mpt,
            LossKind::Baseline,
            LossKind::ModMhe,
            LossKind::ModMhs,
            LossKind::ModBarlow,
            LossKind::ModVicreg,
        ] {
            let c = decompose(kind, &b, &p).unwrap();
            let expect = if matches!(kind, LossKind::Info | LossKind::Mpt) {
                1.0
            } else {
                1.5
            };
            for row in &c.ratios {
                for &r in row {
                    assert_eq!(r, expect, "{kind}");
                }
            }
        }
    }

    #[test]
    fn info_weights_sum_to_softmax_mass() {
        // tau * sum_j w_ij = 1 over negatives, and gd scales it to the
        // full-softmax negative mass
        let p = LossParams::default();
        let b = random_batch(8, 16, 13).unwrap();
        let c = decompose(LossKind::Info, &b, &p).unwrap();
        let dots = cross_dots(&b);
        for i in 0..b.n() {
            let w_sum: f64 = c.weights[i].iter().sum();
            assert!((p.tau * w_sum - 1.0).abs() < 1e-12);
            // independent full-softmax negative mass
            let row = dots.row(i);
            let shift = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let neg: f64 = (0..b.n())
                .filter(|&j| j != i)
                .map(|j| ((row[j] - shift) / p.tau).exp())
                .sum();
            let full = neg + ((row[i] - shift) / p.tau).exp();
            assert!((c.gd[i] * p.tau * w_sum - neg / full).abs() < 1e-12);
        }
    }

    #[test]
    fn piecewise_kinds_concentrate_weight_on_hardest() {
        let p = LossParams::default();
        let b = random_batch(7, 10, 41).unwrap();
        for kind in [LossKind::Mpt, LossKind::Met, LossKind::ModMhs, LossKind::AlignMhs] {
            let c = decompose(kind, &b, &p).unwrap();
            for row in &c.weights {
                let nonzero = row.iter().filter(|&&w| w != 0.0).count();
                assert_eq!(nonzero, 1, "{kind}");
            }
        }
    }

    #[test]
    fn unmodified_ineffective_losses_have_unit_gd() {
        let p = LossParams::default();
        let b = random_batch(6, 8, 55).unwrap();
        for kind in [
            LossKind::AlignMhe,
            LossKind::AlignMhs,
            LossKind::BarlowEq,
            LossKind::VicregEq,
        ] {
            let c = decompose(kind, &b, &p).unwrap();
            assert!(c.gd.iter().all(|&g| g == 1.0), "{kind}");
        }
    }

    #[test]
    fn barlow_decompose_requires_unit_nu_b() {
        let b = random_batch(4, 6, 3).unwrap();
        let p = LossParams {
            nu_b: 0.5,
            ..Default::default()
        };
        assert!(decompose(LossKind::BarlowEq, &b, &p).is_err());
    }

    #[test]
    fn fd_matches_linear_function() {
        // on the baseline the loss is linear in the anchor row, so central
        // differences are exact to round-off
        let p = LossParams::default();
        let b = random_batch(6, 8, 19).unwrap();
        let fd = fd_grad(LossKind::Baseline, &b, &p, 1e-6).unwrap();
        let g = analytic_grad(LossKind::Baseline, &b, &p).unwrap();
        for (x, y) in fd.data.iter().zip(&g.grads.data) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn fd_matches_info_example_batch() {
        let p = LossParams {
            tau: 1.0,
            ..Default::default()
        };
        let fd = fd_grad(LossKind::Info, &batch_b2(), &p, 1e-6).unwrap();
        let c = 1.0 / (std::f64::consts::E + 1.0);
        assert!((fd.row(0)[0] - -c).abs() < 1e-8);
        assert!((fd.row(0)[1] - c).abs() < 1e-8);
    }

    #[test]
    fn fd_matches_mpt_inside_margin() {
        let anchors = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let positives = Matrix::from_rows(vec![vec![0.8, 0.6], vec![0.6, 0.8]]);
        let b = EmbeddingBatch::new(anchors, positives).unwrap();
        let fd = fd_grad(LossKind::Mpt, &b, &LossParams::default(), 1e-6).unwrap();
        assert!((fd.row(0)[0] - -0.2).abs() < 1e-8);
        assert!((fd.row(0)[1] - 0.2).abs() < 1e-8);
    }

    #[test]
    fn fd_rejects_out_of_range_epsilon() {
        let b = random_batch(4, 4, 1).unwrap();
        assert!(fd_grad(LossKind::Info, &b, &LossParams::default(), 1e-3).is_err());
        assert!(fd_grad(LossKind::Info, &b, &LossParams::default(), 1e-9).is_err());
    }

    #[test]
    fn check_passes_for_info_quickly() {
        let r = check(LossKind::Info, 20, 8, 16, &LossParams::default(), 5).unwrap();
        assert!(r.max_rel_error < 1e-5, "max rel {}", r.max_rel_error);
        assert!(r.n_checked > 0);
    }

    #[test]
    fn check_on_fully_dissipated_baseline_is_exact_zero() {
        // the cross-view gap lives in [-2, 2], so any m <= -2 shuts the
        // gate for every geometry
        let p = LossParams {
            m: -3.0,
            ..Default::default()
        };
        let r = check(LossKind::Baseline, 20, 8, 16, &p, 6).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.mean_rel_error, 0.0);
    }
}
