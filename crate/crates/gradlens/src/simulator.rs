//! Monte-Carlo sweeps of the paradigm components over angle-space
//! distributions: gradient-dissipation heatmaps, hardest-negative weight
//! fraction curves, and dynamic-ratio heatmaps.
//!
//! Protocol: positive and negative angles follow truncated normals on
//! `[0, pi]`; each batch holds one positive angle and `n_negatives`
//! negative angles; each grid cell averages its component over `n_batches`
//! batches. The mean axes span `[pi/20, pi/2]` (positives) by `[pi/20, pi]`
//! (negatives).
//!
//! Every cell draws its angle pool from a generator derived from
//! `(seed, cell index)`, so grids are bit-identical regardless of how the
//! cells are scheduled, and all kinds evaluated in one run share each
//! cell's pool (paired comparisons see the same noise).

use crate::embeddings::{hardest_fraction_from_angles, AngleBatch, MU_NEG_RANGE, MU_POS_RANGE};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossParams};
use crate::rng::{derive_seed, Rng};
use crate::vecmath::Matrix;
use rayon::prelude::*;
use serde::Serialize;

/// Sweep sizes and distribution widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepProtocol {
    pub n_grid: usize,
    pub n_batches: usize,
    pub n_negatives: usize,
    pub sigma_pos: f64,
    pub sigma_neg: f64,
    pub seed: u64,
}

impl Default for SweepProtocol {
    fn default() -> Self {
        SweepProtocol {
            n_grid: 100,
            n_batches: 1000,
            n_negatives: 127,
            sigma_pos: 0.05,
            sigma_neg: 0.10,
            seed: 0,
        }
    }
}

impl SweepProtocol {
    fn validate(&self) -> Result<()> {
        if self.n_grid == 0 || self.n_batches == 0 || self.n_negatives == 0 {
            return Err(Error::InvalidConfig(
                "sweep counts must all be >= 1".into(),
            ));
        }
        if self.sigma_pos <= 0.0 || self.sigma_neg <= 0.0 {
            return Err(Error::InvalidConfig("sweep sigmas must be > 0".into()));
        }
        Ok(())
    }
}

/// Mean component values over a `mu_pos` x `mu_neg` grid. `values` is
/// indexed `[pos][neg]`; `mask` marks cells excluded from interpretation
/// (`mu_pos >= mu_neg`, or dissipated cells in ratio sweeps).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub mu_pos_axis: Vec<f64>,
    pub mu_neg_axis: Vec<f64>,
    pub values: Matrix,
    pub mask: Vec<bool>,
}

impl SweepGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values.row(i)[j]
    }

    pub fn masked(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.mu_neg_axis.len() + j]
    }
}

/// Hardest-negative weight-fraction curves, one per temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCurves {
    pub mu_neg_axis: Vec<f64>,
    pub taus: Vec<f64>,
    /// `fractions[t][j]`: mean fraction at `taus[t]`, `mu_neg_axis[j]`.
    pub fractions: Vec<Vec<f64>>,
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

// ---------------------------------------------------------------------------
// angle-space component evaluation

/// The gradient-dissipation component of `kind` on one angle batch.
/// Fraction-form for InfoNCE/ArcCon, indicator-form for the triplet-style
/// and modified losses, identically 1 for the unmodified ineffective ones.
pub fn gd_component(kind: LossKind, angles: &AngleBatch, p: &LossParams) -> f64 {
    let cos_pos = angles.theta_pos.cos();
    match kind {
        LossKind::Info | LossKind::Arc => {
            let pos_exponent = if kind == LossKind::Arc {
                (angles.theta_pos + p.u).cos()
            } else {
                cos_pos
            };
            let mut shift = pos_exponent;
            for &t in &angles.theta_neg {
                shift = shift.max(t.cos());
            }
            let z_neg: f64 = angles
                .theta_neg
                .iter()
                .map(|t| ((t.cos() - shift) / p.tau).exp())
                .sum();
            z_neg / (z_neg + ((pos_exponent - shift) / p.tau).exp())
        }
        LossKind::Mpt | LossKind::Baseline | LossKind::ModMhe | LossKind::ModMhs
        | LossKind::ModBarlow | LossKind::ModVicreg => {
            let max_cos = angles
                .theta_neg
                .iter()
                .map(|t| t.cos())
                .fold(f64::NEG_INFINITY, f64::max);
            if cos_pos - max_cos < p.m {
                1.0
            } else {
                0.0
            }
        }
        LossKind::Met => {
            let dp = (2.0 - 2.0 * cos_pos).max(0.0).sqrt();
            let dn = angles
                .theta_neg
                .iter()
                .map(|t| (2.0 - 2.0 * t.cos()).max(0.0).sqrt())
                .fold(f64::INFINITY, f64::min);
            if dn - dp < p.m {
                1.0
            } else {
                0.0
            }
        }
        LossKind::AlignMhe | LossKind::AlignMhs | LossKind::BarlowEq | LossKind::VicregEq => 1.0,
    }
}

/// ArcCon's dynamic ratio `sin(theta_pos + u) / sin(theta_pos)`.
pub fn arc_ratio(theta_pos: f64, u: f64) -> f64 {
    (theta_pos + u).sin() / theta_pos.sin()
}

/// MET's dynamic ratio `sqrt((1 - cos th_neg) / (1 - cos th_pos))`,
/// averaged over the batch's negatives.
pub fn met_ratio_mean(angles: &AngleBatch) -> f64 {
    let denom = 1.0 - angles.theta_pos.cos();
    let sum: f64 = angles
        .theta_neg
        .iter()
        .map(|t| ((1.0 - t.cos()) / denom).sqrt())
        .sum();
    sum / angles.theta_neg.len() as f64
}

// ---------------------------------------------------------------------------
// sweeps

fn sample_cell_batch(mu_pos: f64, mu_neg: f64, proto: &SweepProtocol, rng: &mut Rng) -> AngleBatch {
    let theta_pos = rng.angle(mu_pos, proto.sigma_pos);
    let theta_neg = (0..proto.n_negatives)
        .map(|_| rng.angle(mu_neg, proto.sigma_neg))
        .collect();
    AngleBatch {
        theta_pos,
        theta_neg,
    }
}

/// Mean gradient-dissipation grids for several kinds at once, all kinds
/// sharing each cell's sampled angle pool.
pub fn gd_heatmaps(
    kinds: &[(LossKind, LossParams)],
    proto: &SweepProtocol,
) -> Result<Vec<SweepGrid>> {
    proto.validate()?;
    for (kind, params) in kinds {
        params.validate(*kind)?;
    }
    let mu_pos_axis = linspace(MU_POS_RANGE.0, MU_POS_RANGE.1, proto.n_grid);
    let mu_neg_axis = linspace(MU_NEG_RANGE.0, MU_NEG_RANGE.1, proto.n_grid);
    let n = proto.n_grid;
    let cells: Vec<Vec<f64>> = (0..n * n)
        .into_par_iter()
        .map(|cell| {
            let (i, j) = (cell / n, cell % n);
            let mut rng = Rng::new(derive_seed(proto.seed, cell as u64));
            let mut sums = vec![0.0; kinds.len()];
            for _ in 0..proto.n_batches {
                let angles = sample_cell_batch(mu_pos_axis[i], mu_neg_axis[j], proto, &mut rng);
                for (k, (kind, params)) in kinds.iter().enumerate() {
                    sums[k] += gd_component(*kind, &angles, params);
                }
            }
            sums.iter().map(|s| s / proto.n_batches as f64).collect()
        })
        .collect();

    Ok((0..kinds.len())
        .map(|k| {
            let mut values = Matrix::zeros(n, n);
            for cell in 0..n * n {
                values.data[cell] = cells[cell][k];
            }
            SweepGrid {
                mu_pos_axis: mu_pos_axis.clone(),
                mu_neg_axis: mu_neg_axis.clone(),
                values,
                mask: vec![false; n * n],
            }
        })
        .collect())
}

/// Mean gradient-dissipation grid for one kind.
pub fn gd_heatmap(kind: LossKind, proto: &SweepProtocol, params: &LossParams) -> Result<SweepGrid> {
    Ok(gd_heatmaps(&[(kind, *params)], proto)?.remove(0))
}

/// Mean dynamic-ratio grid for ArcCon or MET. Cells with `mu_pos >= mu_neg`
/// or with the kind's own mean dissipation below 0.01 are masked.
pub fn ratio_heatmap(
    kind: LossKind,
    proto: &SweepProtocol,
    params: &LossParams,
) -> Result<SweepGrid> {
    proto.validate()?;
    params.validate(kind)?;
    if !matches!(kind, LossKind::Arc | LossKind::Met) {
        return Err(Error::UnsupportedKind(kind.name()));
    }
    let mu_pos_axis = linspace(MU_POS_RANGE.0, MU_POS_RANGE.1, proto.n_grid);
    let mu_neg_axis = linspace(MU_NEG_RANGE.0, MU_NEG_RANGE.1, proto.n_grid);
    let n = proto.n_grid;
    let cells: Vec<(f64, f64)> = (0..n * n)
        .into_par_iter()
        .map(|cell| {
            let (i, j) = (cell / n, cell % n);
            let mut rng = Rng::new(derive_seed(proto.seed, cell as u64));
            let mut ratio_sum = 0.0;
            let mut gd_sum = 0.0;
            for _ in 0..proto.n_batches {
                let angles = sample_cell_batch(mu_pos_axis[i], mu_neg_axis[j], proto, &mut rng);
                ratio_sum += match kind {
                    LossKind::Arc => arc_ratio(angles.theta_pos, params.u),
                    _ => met_ratio_mean(&angles),
                };
                gd_sum += gd_component(kind, &angles, params);
            }
            let nb = proto.n_batches as f64;
            (ratio_sum / nb, gd_sum / nb)
        })
        .collect();

    let mut values = Matrix::zeros(n, n);
    let mut mask = vec![false; n * n];
    for cell in 0..n * n {
        let (i, j) = (cell / n, cell % n);
        values.data[cell] = cells[cell].0;
        mask[cell] = mu_pos_axis[i] >= mu_neg_axis[j] || cells[cell].1 < 0.01;
    }
    Ok(SweepGrid {
        mu_pos_axis,
        mu_neg_axis,
        values,
        mask,
    })
}

/// Mean hardest-negative weight fraction against `mu_neg`, one curve per
/// temperature, all temperatures sharing each cell's pool (the curves are
/// then pointwise monotone in `tau` exactly). The exponential-weight kinds
/// (InfoNCE, ArcCon, and the baseline, whose softmax fraction is identical)
/// are computed; the piecewise-weight kinds return the constant-1 curve.
pub fn weight_fraction_curve(
    kind: LossKind,
    mu_pos: f64,
    taus: &[f64],
    proto: &SweepProtocol,
) -> Result<WeightCurves> {
    proto.validate()?;
    if taus.is_empty() {
        return Err(Error::EmptyInput("taus"));
    }
    if taus.iter().any(|&t| t <= 0.0) {
        return Err(Error::InvalidConfig("curve taus must be > 0".into()));
    }
    let mu_neg_axis = linspace(MU_NEG_RANGE.0, MU_NEG_RANGE.1, proto.n_grid);
    let piecewise = matches!(
        kind,
        LossKind::Mpt | LossKind::Met | LossKind::AlignMhs | LossKind::ModMhs
    );
    if piecewise {
        return Ok(WeightCurves {
            fractions: vec![vec![1.0; mu_neg_axis.len()]; taus.len()],
            mu_neg_axis,
            taus: taus.to_vec(),
        });
    }
    if !matches!(kind, LossKind::Info | LossKind::Arc | LossKind::Baseline) {
        return Err(Error::UnsupportedKind(kind.name()));
    }
    let _ = mu_pos; // fixed by protocol; negatives alone decide the fraction
    let columns: Vec<Vec<f64>> = (0..mu_neg_axis.len())
        .into_par_iter()
        .map(|j| {
            let mut rng = Rng::new(derive_seed(proto.seed, j as u64));
            let mut sums = vec![0.0; taus.len()];
            for _ in 0..proto.n_batches {
                let theta_neg: Vec<f64> = (0..proto.n_negatives)
                    .map(|_| rng.angle(mu_neg_axis[j], proto.sigma_neg))
                    .collect();
                for (t, &tau) in taus.iter().enumerate() {
                    sums[t] += hardest_fraction_from_angles(&theta_neg, tau);
                }
            }
            sums.iter().map(|s| s / proto.n_batches as f64).collect()
        })
        .collect();
    let mut fractions = vec![vec![0.0; mu_neg_axis.len()]; taus.len()];
    for (j, col) in columns.iter().enumerate() {
        for (t, &v) in col.iter().enumerate() {
            fractions[t][j] = v;
        }
    }
    Ok(WeightCurves {
        mu_neg_axis,
        taus: taus.to_vec(),
        fractions,
    })
}
