//! Loss values and closed-form anchor gradients for the thirteen loss
//! variants.
//!
//! Conventions, for a batch of N items with unit-norm rows:
//!
//! - cross dots `c[i][j] = h_i . h_j'` feed InfoNCE/ArcCon/MPT/MET, the
//!   baseline, and the gate of every modified loss;
//! - same dots `s[i][j] = h_i . h_j` feed the uniformity-style losses,
//!   whose negatives are the other anchors;
//! - primed dots `p[i][j] = h_i' . h_j'` feed the Barlow weights.
//!
//! Gradients are ambient partial derivatives with respect to the anchor
//! row, written exactly as the closed forms state them; several of those
//! forms drop terms parallel to `h_i`, which l2 normalization annihilates,
//! so comparisons against finite differences must tangent-project both
//! sides (see [`crate::paradigm`]).
//!
//! Quantities marked "stop-gradient" (the baseline's components, the
//! equivalent-form weights, the modified losses' gate and positive
//! coefficients) are captured in [`FrozenFactors`] from the unperturbed
//! batch and treated as constants by both the gradients and the
//! finite-difference target.

use crate::embeddings::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::vecmath::{axpy, cos_to_angle, dist, dot, Matrix};
use serde::{Deserialize, Serialize};

/// Tolerance below which an indicator gap or an argmax tie counts as a
/// subgradient boundary.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    /// InfoNCE with temperature `tau`.
    Info,
    /// ArcCon: InfoNCE with an additive angular margin `u` on the positive.
    Arc,
    /// Triplet loss with the inner-product metric, hardest negative only.
    Mpt,
    /// Triplet loss with the Euclidean metric, hardest negative only.
    Met,
    /// Alignment plus minimum-hyperspherical-energy uniformity.
    AlignMhe,
    /// Alignment plus maximum-hyperspherical-separation uniformity.
    AlignMhs,
    /// Gradient-equivalent Barlow Twins with stop-gradient weights.
    BarlowEq,
    /// Gradient-equivalent VICReg with stop-gradient weights.
    VicregEq,
    /// Modified MHE: gated, temperature softmax weight, static ratio.
    ModMhe,
    /// Modified MHS: gated, hardest-negative weight, static ratio.
    ModMhs,
    /// Modified Barlow Twins: gated, primed-view softmax weight, static ratio.
    ModBarlow,
    /// Modified VICReg: gated, anchor-view softmax weight, static ratio.
    ModVicreg,
    /// The empirical-study loss built directly from stop-gradient
    /// indicator/softmax/static-ratio components.
    Baseline,
}

impl LossKind {
    pub const ALL: [LossKind; 13] = [
        LossKind::Info,
        LossKind::Arc,
        LossKind::Mpt,
        LossKind::Met,
        LossKind::AlignMhe,
        LossKind::AlignMhs,
        LossKind::BarlowEq,
        LossKind::VicregEq,
        LossKind::ModMhe,
        LossKind::ModMhs,
        LossKind::ModBarlow,
        LossKind::ModVicreg,
        LossKind::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Info => "info",
            LossKind::Arc => "arc",
            LossKind::Mpt => "mpt",
            LossKind::Met => "met",
            LossKind::AlignMhe => "a-mhe",
            LossKind::AlignMhs => "a-mhs",
            LossKind::BarlowEq => "barlow-eq",
            LossKind::VicregEq => "vicreg-eq",
            LossKind::ModMhe => "m-mhe",
            LossKind::ModMhs => "m-mhs",
            LossKind::ModBarlow => "m-b",
            LossKind::ModVicreg => "m-v",
            LossKind::Baseline => "baseline",
        }
    }

    pub fn parse(name: &str) -> Option<LossKind> {
        LossKind::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// Whether the loss is one global objective rather than a per-anchor sum
    /// (only the alignment+MHE combination is).
    pub fn is_global(self) -> bool {
        matches!(self, LossKind::AlignMhe)
    }

    /// Negatives come from the primed view (`h_j'`) or the anchor view (`h_j`).
    pub fn cross_view_negatives(self) -> bool {
        matches!(
            self,
            LossKind::Info | LossKind::Arc | LossKind::Mpt | LossKind::Met | LossKind::Baseline
        )
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters shared across the loss family. `gamma` is the VICReg
/// variance target; it never enters the gradient-equivalent form but is kept
/// for config completeness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    pub tau: f64,
    pub u: f64,
    pub m: f64,
    pub nu_u: f64,
    pub nu_b: f64,
    pub nu_v1: f64,
    pub nu_v2: f64,
    pub gamma: f64,
    pub r: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            tau: 0.05,
            u: 0.1,
            m: 0.3,
            nu_u: 1.0,
            nu_b: 1.0,
            nu_v1: 1.0,
            nu_v2: 1.0,
            gamma: 1.0,
            r: 1.0,
        }
    }
}

impl LossParams {
    pub fn validate(&self, kind: LossKind) -> Result<()> {
        let fail = |reason: String| Error::InvalidParams {
            kind: kind.name(),
            reason,
        };
        let needs_tau = !matches!(kind, LossKind::AlignMhe | LossKind::AlignMhs | LossKind::Mpt
            | LossKind::Met | LossKind::ModMhs | LossKind::BarlowEq | LossKind::VicregEq);
        if needs_tau && self.tau <= 0.0 {
            return Err(fail(format!("tau must be > 0, got {}", self.tau)));
        }
        if kind == LossKind::Arc && !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.u) {
            return Err(fail(format!("u must be in [0, pi/2), got {}", self.u)));
        }
        if self.m < 0.0 && !matches!(kind, LossKind::Baseline) {
            return Err(fail(format!("m must be >= 0, got {}", self.m)));
        }
        if self.r <= 0.0 {
            return Err(fail(format!("r must be > 0, got {}", self.r)));
        }
        for (name, v) in [
            ("nu_u", self.nu_u),
            ("nu_b", self.nu_b),
            ("nu_v1", self.nu_v1),
            ("nu_v2", self.nu_v2),
        ] {
            if v < 0.0 {
                return Err(fail(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-anchor loss values and their sum (for the global MHE objective the
/// per-anchor entries are equal additive shares of the total).
#[derive(Debug, Clone)]
pub struct LossValue {
    pub per_anchor: Vec<f64>,
    pub total: f64,
}

/// N x D matrix of anchor gradients plus per-anchor subgradient flags.
#[derive(Debug, Clone)]
pub struct AnchorGradients {
    pub grads: Matrix,
    /// True where the batch sits within [`BOUNDARY_TOL`] of an indicator
    /// threshold or an argmax/argmin tie; gradients there are subgradient
    /// choices.
    pub boundary: Vec<bool>,
}

/// Gradients of the batch objective with respect to every embedding row,
/// with stop-gradient factors frozen. Used by the trainer.
#[derive(Debug, Clone)]
pub struct EmbeddingGrads {
    pub d_anchors: Matrix,
    pub d_positives: Matrix,
}

// ---------------------------------------------------------------------------
// dot tables

pub(crate) fn cross_dots(b: &EmbeddingBatch) -> Matrix {
    let n = b.n();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m.data[i * n + j] = dot(b.anchor(i), b.positive(j));
        }
    }
    m
}

pub(crate) fn same_dots(b: &EmbeddingBatch) -> Matrix {
    let n = b.n();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m.data[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = dot(b.anchor(i), b.anchor(j));
            m.data[i * n + j] = v;
            m.data[j * n + i] = v;
        }
    }
    m
}

pub(crate) fn primed_dots(b: &EmbeddingBatch) -> Matrix {
    let n = b.n();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m.data[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = dot(b.positive(i), b.positive(j));
            m.data[i * n + j] = v;
            m.data[j * n + i] = v;
        }
    }
    m
}

/// Max off-diagonal entry in row i and the arg, with tie detection.
fn row_max_offdiag(m: &Matrix, i: usize) -> (usize, f64, bool) {
    let n = m.rows;
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    let mut arg = usize::MAX;
    for j in 0..n {
        if j == i {
            continue;
        }
        let v = m.data[i * n + j];
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

/// `sum_{k<l} exp((x_kl - shift)/tau)` over off-diagonal pairs, with the
/// shift returned; `shift = max_{k<l} x_kl`.
fn pair_sum_exp(m: &Matrix, tau: f64) -> (f64, f64) {
    let n = m.rows;
    let mut shift = f64::NEG_INFINITY;
    for k in 0..n {
        for l in k + 1..n {
            shift = shift.max(m.data[k * n + l]);
        }
    }
    let mut sum = 0.0;
    for k in 0..n {
        for l in k + 1..n {
            sum += ((m.data[k * n + l] - shift) / tau).exp();
        }
    }
    (sum, shift)
}

// ---------------------------------------------------------------------------
// stop-gradient factors

/// Stop-gradient quantities captured from the unperturbed batch.
#[derive(Debug, Clone, Default)]
pub struct FrozenFactors {
    /// Indicator gate per anchor (baseline and modified losses).
    pub gate: Vec<bool>,
    /// Per-anchor boundary flags contributed by the frozen quantities
    /// (gate gap or argmax tie within tolerance).
    pub boundary: Vec<bool>,
    /// N x N frozen weights (meaning depends on the kind).
    pub weights: Vec<f64>,
    /// Per-anchor frozen positive coefficient (modified losses) or unused.
    pub pos_coeff: Vec<f64>,
    /// Per-dimension diagonal of the Barlow positive weight.
    pub wp_diag: Vec<f64>,
}

/// Gate of the baseline and all modified losses:
/// `I{ c_ii - max_{k != i} c_ik < m }` on cross-view dots.
fn cross_gate(c: &Matrix, m_margin: f64) -> (Vec<bool>, Vec<bool>) {
    let n = c.rows;
    let mut gate = vec![false; n];
    let mut boundary = vec![false; n];
    for i in 0..n {
        let (_, best, tie) = row_max_offdiag(c, i);
        let gap = c.data[i * n + i] - best;
        gate[i] = gap < m_margin;
        boundary[i] = tie || (gap - m_margin).abs() < BOUNDARY_TOL;
    }
    (gate, boundary)
}

/// Capture the stop-gradient factors of `kind` from the batch.
pub fn frozen_factors(kind: LossKind, b: &EmbeddingBatch, p: &LossParams) -> FrozenFactors {
    let n = b.n();
    let mut f = FrozenFactors::default();
    match kind {
        LossKind::Info | LossKind::Arc | LossKind::Mpt | LossKind::Met
        | LossKind::AlignMhe | LossKind::AlignMhs => {}
        LossKind::Baseline => {
            let c = cross_dots(b);
            let (gate, boundary) = cross_gate(&c, p.m);
            f.gate = gate;
            f.boundary = boundary;
            // softmax over cross-view negatives, no 1/tau factor
            f.weights = vec![0.0; n * n];
            for i in 0..n {
                let mut shift = f64::NEG_INFINITY;
                for j in 0..n {
                    if j != i {
                        shift = shift.max(c.data[i * n + j]);
                    }
                }
                let mut z = 0.0;
                for j in 0..n {
                    if j != i {
                        z += ((c.data[i * n + j] - shift) / p.tau).exp();
                    }
                }
                for j in 0..n {
                    if j != i {
                        f.weights[i * n + j] = ((c.data[i * n + j] - shift) / p.tau).exp() / z;
                    }
                }
            }
        }
        LossKind::BarlowEq => {
            // wp = (2/N)(I - (1-nu_b) * C_diag), wn_ij = 2 p_ij / N^2
            let nf = n as f64;
            let d = b.d();
            let mut cdiag = vec![0.0; d];
            for i in 0..n {
                for (k, cd) in cdiag.iter_mut().enumerate() {
                    *cd += b.anchor(i)[k] * b.positive(i)[k];
                }
            }
            for cd in cdiag.iter_mut() {
                *cd /= nf;
            }
            f.wp_diag = cdiag
                .iter()
                .map(|cd| 2.0 / nf * (1.0 - (1.0 - p.nu_b) * cd))
                .collect();
            let pd = primed_dots(b);
            f.weights = (0..n * n)
                .map(|idx| {
                    let (i, j) = (idx / n, idx % n);
                    if i == j {
                        0.0
                    } else {
                        2.0 * pd.data[idx] / (nf * nf)
                    }
                })
                .collect();
        }
        LossKind::VicregEq => {
            let nf = n as f64;
            let s = same_dots(b);
            f.weights = (0..n * n)
                .map(|idx| {
                    let (i, j) = (idx / n, idx % n);
                    if i == j {
                        0.0
                    } else {
                        2.0 * s.data[idx] / (nf * nf)
                    }
                })
                .collect();
        }
        LossKind::ModMhe => {
            let c = cross_dots(b);
            let (gate, boundary) = cross_gate(&c, p.m);
            f.gate = gate;
            f.boundary = boundary;
            let s = same_dots(b);
            let (zsum, shift) = pair_sum_exp(&s, p.tau);
            f.pos_coeff = (0..n)
                .map(|i| {
                    let row: f64 = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| ((s.data[i * n + j] - shift) / p.tau).exp())
                        .sum();
                    p.r * row / (2.0 * p.tau * zsum)
                })
                .collect();
        }
        LossKind::ModMhs => {
            let c = cross_dots(b);
            let (gate, mut boundary) = cross_gate(&c, p.m);
            f.gate = gate;
            // frozen positive coefficient r / (2 min_j ||h_i - h_j||)
            f.pos_coeff = (0..n)
                .map(|i| {
                    let (dmin, tie) = same_view_min_dist(b, i);
                    if tie {
                        boundary[i] = true;
                    }
                    p.r / (2.0 * dmin)
                })
                .collect();
            f.boundary = boundary;
        }
        LossKind::ModBarlow | LossKind::ModVicreg => {
            let c = cross_dots(b);
            let (gate, boundary) = cross_gate(&c, p.m);
            f.gate = gate;
            f.boundary = boundary;
            let dots = if kind == LossKind::ModBarlow {
                primed_dots(b)
            } else {
                same_dots(b)
            };
            let (half_sum, shift) = pair_sum_exp(&dots, p.tau);
            let z = 2.0 * half_sum; // ordered pairs k != l
            f.weights = (0..n * n)
                .map(|idx| {
                    let (i, j) = (idx / n, idx % n);
                    if i == j {
                        0.0
                    } else {
                        ((dots.data[idx] - shift) / p.tau).exp() / z
                    }
                })
                .collect();
            f.pos_coeff = (0..n)
                .map(|i| p.r * (0..n).filter(|&j| j != i).map(|j| f.weights[i * n + j]).sum::<f64>())
                .collect();
        }
    }
    f
}

fn same_view_min_dist(b: &EmbeddingBatch, i: usize) -> (f64, bool) {
    let mut best = f64::INFINITY;
    let mut second = f64::INFINITY;
    for j in 0..b.n() {
        if j == i {
            continue;
        }
        let d = dist(b.anchor(i), b.anchor(j));
        if d < best {
            second = best;
            best = d;
        } else if d < second {
            second = d;
        }
    }
    (best, (second - best).abs() < BOUNDARY_TOL)
}

fn same_view_argmin_dist(anchor_row: &[f64], b: &EmbeddingBatch, skip: usize) -> (usize, f64) {
    let mut best = f64::INFINITY;
    let mut arg = usize::MAX;
    for j in 0..b.n() {
        if j == skip {
            continue;
        }
        let d = dist(anchor_row, b.anchor(j));
        if d < best {
            best = d;
            arg = j;
        }
    }
    (arg, best)
}

// ---------------------------------------------------------------------------
// finite-difference target

/// Value of the quantity whose anchor-`i` partial the closed forms state:
/// the per-anchor loss `L_i` (or the global total for the MHE objective),
/// evaluated with anchor row `i` replaced by `row` and all stop-gradient
/// factors frozen. The second component fingerprints the discrete state
/// (indicator values, argmax selections) so callers can detect when a
/// finite-difference probe crossed a kink.
pub(crate) fn fd_target(
    kind: LossKind,
    b: &EmbeddingBatch,
    p: &LossParams,
    f: &FrozenFactors,
    i: usize,
    row: &[f64],
) -> (f64, u64) {
    let n = b.n();
    let nf = n as f64;
    match kind {
        LossKind::Info => {
            let xs: Vec<f64> = (0..n).map(|j| dot(row, b.positive(j)) / p.tau).collect();
            let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = xs.iter().map(|x| (x - m).exp()).sum();
            (-xs[i] + m + z.ln(), 0)
        }
        LossKind::Arc => {
            let theta = cos_to_angle(dot(row, b.positive(i)));
            let xpos = (theta + p.u).cos() / p.tau;
            let mut xs = vec![xpos];
            for j in 0..n {
                if j != i {
                    xs.push(dot(row, b.positive(j)) / p.tau);
                }
            }
            let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = xs.iter().map(|x| (x - m).exp()).sum();
            (-xpos + m + z.ln(), 0)
        }
        LossKind::Mpt => {
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            for j in 0..n {
                if j != i {
                    let v = dot(row, b.positive(j));
                    if v > best {
                        best = v;
                        arg = j;
                    }
                }
            }
            let margin = -dot(row, b.positive(i)) + best + p.m;
            let active = margin > 0.0;
            (margin.max(0.0), (arg as u64) << 1 | active as u64)
        }
        LossKind::Met => {
            let dp = dist(row, b.positive(i));
            let mut dn = f64::INFINITY;
            let mut arg = usize::MAX;
            for j in 0..n {
                if j != i {
                    let d = dist(row, b.positive(j));
                    if d < dn {
                        dn = d;
                        arg = j;
                    }
                }
            }
            let margin = dp - dn + p.m;
            let active = margin > 0.0;
            (margin.max(0.0), (arg as u64) << 1 | active as u64)
        }
        LossKind::AlignMhe => {
            // global objective: alignment over all rows (with row i replaced)
            // plus nu_u * log mean pair energy over anchors
            let mut align = 0.0;
            for k in 0..n {
                let a = if k == i { row } else { b.anchor(k) };
                align += dist2(a, b.positive(k));
            }
            align /= nf;
            let mut pair_sum = 0.0;
            for k in 0..n {
                for l in k + 1..n {
                    let ak = if k == i { row } else { b.anchor(k) };
                    let al = if l == i { row } else { b.anchor(l) };
                    pair_sum += (-dist2(ak, al)).exp();
                }
            }
            let uni = (2.0 * pair_sum / (nf * (nf - 1.0))).ln();
            (align + p.nu_u * uni, 0)
        }
        LossKind::AlignMhs => {
            let (arg, dmin) = same_view_argmin_dist(row, b, i);
            (dist2(row, b.positive(i)) / nf - p.nu_u * dmin, arg as u64)
        }
        LossKind::BarlowEq => {
            let mut pos = 0.0;
            for k in 0..b.d() {
                pos += row[k] * f.wp_diag[k] * b.positive(i)[k];
            }
            let mut neg = 0.0;
            for j in 0..n {
                if j != i {
                    neg += f.weights[i * n + j] * dot(row, b.anchor(j));
                }
            }
            (-pos + p.nu_b * neg, 0)
        }
        LossKind::VicregEq => {
            let d = b.d() as f64;
            let nu_v = 2.0 * p.nu_v1 * nf * nf / (d * (nf - 1.0) * (nf - 1.0));
            let mut neg = 0.0;
            for j in 0..n {
                if j != i {
                    neg += f.weights[i * n + j] * dot(row, b.anchor(j));
                }
            }
            (-2.0 / nf * dot(row, b.positive(i)) + nu_v * neg, 0)
        }
        LossKind::ModMhe => {
            if !f.gate[i] {
                return (0.0, 0);
            }
            let align = f.pos_coeff[i] * dist2(row, b.positive(i));
            let mut pair_sum = 0.0;
            for k in 0..n {
                for l in k + 1..n {
                    let ak = if k == i { row } else { b.anchor(k) };
                    let al = if l == i { row } else { b.anchor(l) };
                    pair_sum += (-dist2(ak, al) / (2.0 * p.tau)).exp();
                }
            }
            let uni = (2.0 * pair_sum / (nf * (nf - 1.0))).ln();
            (align + uni, 0)
        }
        LossKind::ModMhs => {
            if !f.gate[i] {
                return (0.0, 0);
            }
            let (arg, dmin) = same_view_argmin_dist(row, b, i);
            (f.pos_coeff[i] * dist2(row, b.positive(i)) - dmin, arg as u64)
        }
        LossKind::ModBarlow | LossKind::ModVicreg => {
            if !f.gate[i] {
                return (0.0, 0);
            }
            let mut neg = 0.0;
            for j in 0..n {
                if j != i {
                    neg += f.weights[i * n + j] * dot(row, b.anchor(j));
                }
            }
            (-f.pos_coeff[i] * dot(row, b.positive(i)) + neg, 0)
        }
        LossKind::Baseline => {
            if !f.gate[i] {
                return (0.0, 0);
            }
            let mut v = 0.0;
            let pos = dot(row, b.positive(i));
            for j in 0..n {
                if j != i {
                    v += f.weights[i * n + j] * (dot(row, b.positive(j)) - p.r * pos);
                }
            }
            (v, 0)
        }
    }
}

fn dist2(a: &[f64], c: &[f64]) -> f64 {
    a.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Batch objective (sum of per-anchor losses, or the global total) with the
/// given stop-gradient factors. The batch may differ from the one the
/// factors were captured on; this is what finite differences through the
/// encoder parameters evaluate.
pub(crate) fn total_with_frozen(
    kind: LossKind,
    b: &EmbeddingBatch,
    p: &LossParams,
    f: &FrozenFactors,
) -> f64 {
    if kind.is_global() {
        return fd_target(kind, b, p, f, 0, b.anchor(0)).0;
    }
    (0..b.n())
        .map(|i| fd_target(kind, b, p, f, i, b.anchor(i)).0)
        .sum()
}

// ---------------------------------------------------------------------------
// loss values

/// Per-anchor loss values plus the batch total.
pub fn loss_value(kind: LossKind, b: &EmbeddingBatch, p: &LossParams) -> Result<LossValue> {
    p.validate(kind)?;
    let f = frozen_factors(kind, b, p);
    let n = b.n();
    if kind.is_global() {
        let (total, _) = fd_target(kind, b, p, &f, 0, b.anchor(0));
        // equal additive shares as a reporting convention
        let per_anchor = vec![total / n as f64; n];
        if !total.is_finite() {
            return Err(Error::InvalidBatch("non-finite loss value".into()));
        }
        return Ok(LossValue { per_anchor, total });
    }
    let per_anchor: Vec<f64> = (0..n)
        .map(|i| fd_target(kind, b, p, &f, i, b.anchor(i)).0)
        .collect();
    if per_anchor.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidBatch("non-finite loss value".into()));
    }
    let total = per_anchor.iter().sum();
    Ok(LossValue { per_anchor, total })
}

// ---------------------------------------------------------------------------
// closed-form anchor gradients

/// The paper-form gradient of each per-anchor loss with respect to its
/// anchor row (for the global MHE objective: of the total).
pub fn analytic_grad(kind: LossKind, b: &EmbeddingBatch, p: &LossParams) -> Result<AnchorGradients> {
    p.validate(kind)?;
    let n = b.n();
    let d = b.d();
    let mut grads = Matrix::zeros(n, d);
    let mut boundary = vec![false; n];
    let f = frozen_factors(kind, b, p);
    for (i, bflag) in f.boundary.iter().enumerate() {
        boundary[i] |= bflag;
    }

    match kind {
        LossKind::Info => {
            let c = cross_dots(b);
            for i in 0..n {
                let xs: Vec<f64> = (0..n).map(|j| c.data[i * n + j] / p.tau).collect();
                let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = xs.iter().map(|x| (x - m).exp()).sum();
                let row = grads.row_mut(i);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let w = (xs[j] - m).exp() / (p.tau * z);
                    axpy(row, w, b.positive(j));
                    axpy(row, -w, b.positive(i));
                }
            }
        }
        LossKind::Arc => {
            let c = cross_dots(b);
            for i in 0..n {
                let theta = cos_to_angle(c.data[i * n + i]);
                let sin_t = theta.sin();
                let ratio = if sin_t < BOUNDARY_TOL {
                    boundary[i] = true;
                    0.0 // positive pull undefined at theta = 0; see module docs
                } else {
                    (theta + p.u).sin() / sin_t
                };
                let xpos = (theta + p.u).cos() / p.tau;
                let mut m = xpos;
                for j in 0..n {
                    if j != i {
                        m = m.max(c.data[i * n + j] / p.tau);
                    }
                }
                let mut z = (xpos - m).exp();
                for j in 0..n {
                    if j != i {
                        z += (c.data[i * n + j] / p.tau - m).exp();
                    }
                }
                let row = grads.row_mut(i);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let w = (c.data[i * n + j] / p.tau - m).exp() / (p.tau * z);
                    axpy(row, w, b.positive(j));
                    axpy(row, -w * ratio, b.positive(i));
                }
            }
        }
        LossKind::Mpt => {
            let c = cross_dots(b);
            for i in 0..n {
                let (arg, best, tie) = row_max_offdiag(&c, i);
                let gap = c.data[i * n + i] - best;
                boundary[i] |= tie || (gap - p.m).abs() < BOUNDARY_TOL;
                if gap < p.m {
                    let row = grads.row_mut(i);
                    axpy(row, 1.0, b.positive(arg));
                    axpy(row, -1.0, b.positive(i));
                }
            }
        }
        LossKind::Met => {
            for i in 0..n {
                let dp = dist(b.anchor(i), b.positive(i));
                let mut dn = f64::INFINITY;
                let mut second = f64::INFINITY;
                let mut arg = usize::MAX;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let dcur = dist(b.anchor(i), b.positive(j));
                    if dcur < dn {
                        second = dn;
                        dn = dcur;
                        arg = j;
                    } else if dcur < second {
                        second = dcur;
                    }
                }
                let gap = dn - dp;
                boundary[i] |= (second - dn).abs() < BOUNDARY_TOL
                    || (gap - p.m).abs() < BOUNDARY_TOL
                    || dp < BOUNDARY_TOL;
                if gap < p.m {
                    let row = grads.row_mut(i);
                    axpy(row, 1.0 / dn, b.positive(arg));
                    // coincident positive: the pull term is singular; emit
                    // zero for it (the boundary flag is already set)
                    if dp >= BOUNDARY_TOL {
                        axpy(row, -1.0 / dp, b.positive(i));
                    }
                }
            }
        }
        LossKind::AlignMhe => {
            let s = same_dots(b);
            let (zsum, shift) = pair_sum_exp_scale2(&s);
            for i in 0..n {
                let row = grads.row_mut(i);
                axpy(row, -2.0 / n as f64, b.positive(i));
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let w = p.nu_u * 2.0 * ((2.0 * s.data[i * n + j] - shift).exp()) / zsum;
                    axpy(row, w, b.anchor(j));
                }
            }
        }
        LossKind::AlignMhs => {
            for i in 0..n {
                let (dmin, tie) = same_view_min_dist(b, i);
                boundary[i] |= tie;
                let (arg, _) = same_view_argmin_dist(b.anchor(i), b, i);
                let row = grads.row_mut(i);
                axpy(row, -2.0 / n as f64, b.positive(i));
                axpy(row, p.nu_u / dmin, b.anchor(arg));
            }
        }
        LossKind::BarlowEq => {
            for i in 0..n {
                let row = grads.row_mut(i);
                for k in 0..d {
                    row[k] -= f.wp_diag[k] * b.positive(i)[k];
                }
                for j in 0..n {
                    if j != i {
                        axpy(row, p.nu_b * f.weights[i * n + j], b.anchor(j));
                    }
                }
            }
        }
        LossKind::VicregEq => {
            let nf = n as f64;
            let df = d as f64;
            let nu_v = 2.0 * p.nu_v1 * nf * nf / (df * (nf - 1.0) * (nf - 1.0));
            for i in 0..n {
                let row = grads.row_mut(i);
                axpy(row, -2.0 / nf, b.positive(i));
                for j in 0..n {
                    if j != i {
                        axpy(row, nu_v * f.weights[i * n + j], b.anchor(j));
                    }
                }
            }
        }
        LossKind::ModMhe => {
            let s = same_dots(b);
            let (zsum, shift) = pair_sum_exp(&s, p.tau);
            for i in 0..n {
                if !f.gate[i] {
                    continue;
                }
                let row = grads.row_mut(i);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let w = ((s.data[i * n + j] - shift) / p.tau).exp() / (p.tau * zsum);
                    axpy(row, w, b.anchor(j));
                    axpy(row, -w * p.r, b.positive(i));
                }
            }
        }
        LossKind::ModMhs => {
            for i in 0..n {
                if !f.gate[i] {
                    continue;
                }
                let (arg, dmin) = same_view_argmin_dist(b.anchor(i), b, i);
                let row = grads.row_mut(i);
                axpy(row, 1.0 / dmin, b.anchor(arg));
                axpy(row, -p.r / dmin, b.positive(i));
            }
        }
        LossKind::ModBarlow | LossKind::ModVicreg => {
            for i in 0..n {
                if !f.gate[i] {
                    continue;
                }
                let row = grads.row_mut(i);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let w = f.weights[i * n + j];
                    axpy(row, w, b.anchor(j));
                    axpy(row, -w * p.r, b.positive(i));
                }
            }
        }
        LossKind::Baseline => {
            // defined directly from its components; identical arithmetic to
            // reconstruct(decompose(..)) by construction
            for i in 0..n {
                if !f.gate[i] {
                    continue;
                }
                let row = grads.row_mut(i);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let w = f.weights[i * n + j];
                    axpy(row, w, b.positive(j));
                    axpy(row, -w * p.r, b.positive(i));
                }
            }
        }
    }

    if grads.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidBatch("non-finite gradient".into()));
    }
    Ok(AnchorGradients { grads, boundary })
}

/// `sum_{k<l} exp(2 x_kl - shift)` with `shift = max 2 x_kl` (MHE energies).
fn pair_sum_exp_scale2(m: &Matrix) -> (f64, f64) {
    let n = m.rows;
    let mut shift = f64::NEG_INFINITY;
    for k in 0..n {
        for l in k + 1..n {
            shift = shift.max(2.0 * m.data[k * n + l]);
        }
    }
    let mut sum = 0.0;
    for k in 0..n {
        for l in k + 1..n {
            sum += (2.0 * m.data[k * n + l] - shift).exp();
        }
    }
    (sum, shift)
}

// ---------------------------------------------------------------------------
// full embedding gradients (trainer backward)

/// Gradient of the summed batch objective with respect to every anchor and
/// positive row, stop-gradient factors frozen. This is the quantity the
/// trainer backpropagates through the encoder; unlike [`analytic_grad`] it
/// keeps every term (including the parts parallel to the rows, which the
/// normalization Jacobian later removes) and accumulates the contributions
/// an embedding receives in its negative role.
pub fn embedding_grads(kind: LossKind, b: &EmbeddingBatch, p: &LossParams) -> Result<EmbeddingGrads> {
    let f = frozen_factors(kind, b, p);
    embedding_grads_frozen(kind, b, p, &f)
}

/// [`embedding_grads`] with the stop-gradient factors supplied by the
/// caller (the trainer computes them once per step).
pub(crate) fn embedding_grads_frozen(
    kind: LossKind,
    b: &EmbeddingBatch,
    p: &LossParams,
    f: &FrozenFactors,
) -> Result<EmbeddingGrads> {
    p.validate(kind)?;
    let n = b.n();
    let d = b.d();
    let nf = n as f64;
    let mut da = Matrix::zeros(n, d);
    let mut dp = Matrix::zeros(n, d);

    match kind {
        LossKind::Info => {
            let c = cross_dots(b);
            for i in 0..n {
                let xs: Vec<f64> = (0..n).map(|j| c.data[i * n + j] / p.tau).collect();
                let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = xs.iter().map(|x| (x - m).exp()).sum();
                for j in 0..n {
                    let prob = (xs[j] - m).exp() / z;
                    let coef = (prob - if j == i { 1.0 } else { 0.0 }) / p.tau;
                    axpy(da.row_mut(i), coef, b.positive(j));
                    axpy(dp.row_mut(j), coef, b.anchor(i));
                }
            }
        }
        LossKind::Arc => {
            let c = cross_dots(b);
            for i in 0..n {
                let theta = cos_to_angle(c.data[i * n + i]);
                let sin_t = theta.sin();
                let ratio = if sin_t < BOUNDARY_TOL {
                    0.0
                } else {
                    (theta + p.u).sin() / sin_t
                };
                let xpos = (theta + p.u).cos() / p.tau;
                let mut m = xpos;
                for j in 0..n {
                    if j != i {
                        m = m.max(c.data[i * n + j] / p.tau);
                    }
                }
                let mut z = (xpos - m).exp();
                for j in 0..n {
                    if j != i {
                        z += (c.data[i * n + j] / p.tau - m).exp();
                    }
                }
                let qpos = (xpos - m).exp() / z;
                // d cos(theta+u)/d c_ii = ratio; chain through both rows
                let cpos = (qpos - 1.0) * ratio / p.tau;
                axpy(da.row_mut(i), cpos, b.positive(i));
                axpy(dp.row_mut(i), cpos, b.anchor(i));
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let w = (c.data[i * n + j] / p.tau - m).exp() / (z * p.tau);
                    axpy(da.row_mut(i), w, b.positive(j));
                    axpy(dp.row_mut(j), w, b.anchor(i));
                }
            }
        }
        LossKind::Mpt => {
            let c = cross_dots(b);
            for i in 0..n {
                let (arg, best, _) = row_max_offdiag(&c, i);
                if c.data[i * n + i] - best < p.m {
                    axpy(da.row_mut(i), 1.0, b.positive(arg));
                    axpy(da.row_mut(i), -1.0, b.positive(i));
                    axpy(dp.row_mut(arg), 1.0, b.anchor(i));
                    axpy(dp.row_mut(i), -1.0, b.anchor(i));
                }
            }
        }
        LossKind::Met => {
            for i in 0..n {
                let dpos = dist(b.anchor(i), b.positive(i));
                let mut dn = f64::INFINITY;
                let mut arg = usize::MAX;
                for j in 0..n {
                    if j != i {
                        let dcur = dist(b.anchor(i), b.positive(j));
                        if dcur < dn {
                            dn = dcur;
                            arg = j;
                        }
                    }
                }
                if dn - dpos < p.m && dpos > BOUNDARY_TOL {
                    // full ambient gradients of dpos - dn
                    for k in 0..d {
                        let gp = (b.anchor(i)[k] - b.positive(i)[k]) / dpos;
                        let gn = (b.anchor(i)[k] - b.positive(arg)[k]) / dn;
                        da.row_mut(i)[k] += gp - gn;
                        dp.row_mut(i)[k] -= gp;
                        dp.row_mut(arg)[k] += gn;
                    }
                }
            }
        }
        LossKind::AlignMhe => {
            let s = same_dots(b);
            let (zsum, shift) = pair_sum_exp_scale2(&s);
            for i in 0..n {
                for k in 0..d {
                    let g = 2.0 / nf * (b.anchor(i)[k] - b.positive(i)[k]);
                    da.row_mut(i)[k] += g;
                    dp.row_mut(i)[k] -= g;
                }
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    // d/dh_i of nu_u * log sum exp(-||h_i-h_j||^2)
                    let w = p.nu_u * (2.0 * s.data[i * n + j] - shift).exp() / zsum;
                    for k in 0..d {
                        da.row_mut(i)[k] += w * -2.0 * (b.anchor(i)[k] - b.anchor(j)[k]);
                    }
                }
            }
        }
        LossKind::AlignMhs => {
            for i in 0..n {
                for k in 0..d {
                    let g = 2.0 / nf * (b.anchor(i)[k] - b.positive(i)[k]);
                    da.row_mut(i)[k] += g;
                    dp.row_mut(i)[k] -= g;
                }
                let (arg, dmin) = same_view_argmin_dist(b.anchor(i), b, i);
                for k in 0..d {
                    let g = p.nu_u * (b.anchor(i)[k] - b.anchor(arg)[k]) / dmin;
                    da.row_mut(i)[k] -= g;
                    da.row_mut(arg)[k] += g;
                }
            }
        }
        LossKind::BarlowEq => {
            for i in 0..n {
                for k in 0..d {
                    da.row_mut(i)[k] -= f.wp_diag[k] * b.positive(i)[k];
                    dp.row_mut(i)[k] -= f.wp_diag[k] * b.anchor(i)[k];
                }
                for j in 0..n {
                    if j != i {
                        let w = p.nu_b * f.weights[i * n + j];
                        axpy(da.row_mut(i), w, b.anchor(j));
                        axpy(da.row_mut(j), w, b.anchor(i));
                    }
                }
            }
        }
        LossKind::VicregEq => {
            let df = d as f64;
            let nu_v = 2.0 * p.nu_v1 * nf * nf / (df * (nf - 1.0) * (nf - 1.0));
            for i in 0..n {
                axpy(da.row_mut(i), -2.0 / nf, b.positive(i));
                axpy(dp.row_mut(i), -2.0 / nf, b.anchor(i));
                for j in 0..n {
                    if j != i {
                        let w = nu_v * f.weights[i * n + j];
                        axpy(da.row_mut(i), w, b.anchor(j));
                        axpy(da.row_mut(j), w, b.anchor(i));
                    }
                }
            }
        }
        LossKind::ModMhe => {
            let s = same_dots(b);
            let (zsum, shift) = pair_sum_exp(&s, p.tau);
            let gates: f64 = f.gate.iter().map(|&g| g as u32 as f64).sum();
            for i in 0..n {
                if f.gate[i] {
                    for k in 0..d {
                        let g = 2.0 * f.pos_coeff[i] * (b.anchor(i)[k] - b.positive(i)[k]);
                        da.row_mut(i)[k] += g;
                        dp.row_mut(i)[k] -= g;
                    }
                }
                // the shared log-sum term appears once per gated anchor
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let w = gates * ((s.data[i * n + j] - shift) / p.tau).exp() / (p.tau * zsum);
                    for k in 0..d {
                        da.row_mut(i)[k] -= w * (b.anchor(i)[k] - b.anchor(j)[k]);
                    }
                }
            }
        }
        LossKind::ModMhs => {
            for i in 0..n {
                if !f.gate[i] {
                    continue;
                }
                for k in 0..d {
                    let g = 2.0 * f.pos_coeff[i] * (b.anchor(i)[k] - b.positive(i)[k]);
                    da.row_mut(i)[k] += g;
                    dp.row_mut(i)[k] -= g;
                }
                let (arg, dmin) = same_view_argmin_dist(b.anchor(i), b, i);
                for k in 0..d {
                    let g = (b.anchor(i)[k] - b.anchor(arg)[k]) / dmin;
                    da.row_mut(i)[k] -= g;
                    da.row_mut(arg)[k] += g;
                }
            }
        }
        LossKind::ModBarlow | LossKind::ModVicreg => {
            for i in 0..n {
                if !f.gate[i] {
                    continue;
                }
                axpy(da.row_mut(i), -f.pos_coeff[i], b.positive(i));
                axpy(dp.row_mut(i), -f.pos_coeff[i], b.anchor(i));
                for j in 0..n {
                    if j != i {
                        let w = f.weights[i * n + j];
                        axpy(da.row_mut(i), w, b.anchor(j));
                        axpy(da.row_mut(j), w, b.anchor(i));
                    }
                }
            }
        }
        LossKind::Baseline => {
            for i in 0..n {
                if !f.gate[i] {
                    continue;
                }
                let wsum: f64 = (0..n).filter(|&j| j != i).map(|j| f.weights[i * n + j]).sum();
                axpy(da.row_mut(i), -p.r * wsum, b.positive(i));
                axpy(dp.row_mut(i), -p.r * wsum, b.anchor(i));
                for j in 0..n {
                    if j != i {
                        let w = f.weights[i * n + j];
                        axpy(da.row_mut(i), w, b.positive(j));
                        axpy(dp.row_mut(j), w, b.anchor(i));
                    }
                }
            }
        }
    }
    Ok(EmbeddingGrads {
        d_anchors: da,
        d_positives: dp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::random_batch;

    /// {h_1=(1,0), h_1'=(1,0), h_2=(0,1), h_2'=(0,1)}
    fn batch_b2() -> EmbeddingBatch {
        let rows = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        EmbeddingBatch::new(rows.clone(), rows).unwrap()
    }

    /// h_1=(1,0), h_1'=(0.8,0.6), h_2'=(0.6,0.8); second anchor arbitrary
    fn batch_margin() -> EmbeddingBatch {
        let anchors = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let positives = Matrix::from_rows(vec![vec![0.8, 0.6], vec![0.6, 0.8]]);
        EmbeddingBatch::new(anchors, positives).unwrap()
    }

    #[test]
    fn info_value_on_b2() {
        let p = LossParams {
            tau: 1.0,
            ..Default::default()
        };
        let v = loss_value(LossKind::Info, &batch_b2(), &p).unwrap();
        // L_1 = log(1 + e^-1)
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((v.per_anchor[0] - expect).abs() < 1e-15);
        assert!((v.per_anchor[0] - 0.31326168751822286).abs() < 1e-12);
        assert!((v.total - 2.0 * expect).abs() < 1e-15);
    }

    #[test]
    fn info_grad_on_b2() {
        let p = LossParams {
            tau: 1.0,
            ..Default::default()
        };
        let g = analytic_grad(LossKind::Info, &batch_b2(), &p).unwrap();
        let c = 1.0 / (std::f64::consts::E + 1.0);
        assert!((g.grads.row(0)[0] - -c).abs() < 1e-15);
        assert!((g.grads.row(0)[1] - c).abs() < 1e-15);
        assert!((g.grads.row(0)[0] - -0.2689414213699951).abs() < 1e-12);
    }

    #[test]
    fn mpt_dissipates_on_b2() {
        let v = loss_value(LossKind::Mpt, &batch_b2(), &LossParams::default()).unwrap();
        assert_eq!(v.per_anchor[0], 0.0);
        let g = analytic_grad(LossKind::Mpt, &batch_b2(), &LossParams::default()).unwrap();
        assert_eq!(g.grads.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn mpt_inside_margin_gradient() {
        let b = batch_margin();
        let g = analytic_grad(LossKind::Mpt, &b, &LossParams::default()).unwrap();
        // gap = 0.8 - 0.6 = 0.2 < 0.3; grad = h_2' - h_1' = (-0.2, 0.2)
        assert!((g.grads.row(0)[0] - -0.2).abs() < 1e-15);
        assert!((g.grads.row(0)[1] - 0.2).abs() < 1e-15);
        let v = loss_value(LossKind::Mpt, &b, &LossParams::default()).unwrap();
        assert!((v.per_anchor[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn arc_with_zero_margin_equals_info() {
        let b = random_batch(6, 8, 5).unwrap();
        let p0 = LossParams {
            u: 0.0,
            ..Default::default()
        };
        let vi = loss_value(LossKind::Info, &b, &p0).unwrap();
        let va = loss_value(LossKind::Arc, &b, &p0).unwrap();
        for (x, y) in vi.per_anchor.iter().zip(&va.per_anchor) {
            assert!((x - y).abs() < 1e-12);
        }
        let gi = analytic_grad(LossKind::Info, &b, &p0).unwrap();
        let ga = analytic_grad(LossKind::Arc, &b, &p0).unwrap();
        for (x, y) in gi.grads.data.iter().zip(&ga.grads.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn effective_grad_rows_lie_in_partner_span() {
        // residual after projecting onto span{h_i', negatives} vanishes
        for kind in [LossKind::Info, LossKind::Arc, LossKind::Mpt, LossKind::Met, LossKind::Baseline]
        {
            let b = random_batch(5, 7, 33).unwrap();
            let g = analytic_grad(kind, &b, &LossParams::default()).unwrap();
            for i in 0..b.n() {
                let mut residual = g.grads.row(i).to_vec();
                // Gram-Schmidt against the positives (span of all partner rows)
                let mut basis: Vec<Vec<f64>> = Vec::new();
                for j in 0..b.n() {
                    let mut v = b.positive(j).to_vec();
                    for e in &basis {
                        let c = dot(&v, e);
                        axpy(&mut v, -c, e);
                    }
                    let nv = crate::vecmath::norm(&v);
                    if nv > 1e-12 {
                        v.iter_mut().for_each(|x| *x /= nv);
                        basis.push(v);
                    }
                }
                for e in &basis {
                    let c = dot(&residual, e);
                    axpy(&mut residual, -c, e);
                }
                assert!(
                    crate::vecmath::norm(&residual) < 1e-9,
                    "{kind}: residual {}",
                    crate::vecmath::norm(&residual)
                );
            }
        }
    }

    #[test]
    fn gate_boundary_is_flagged() {
        // gap exactly equal to m
        let anchors = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let positives = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.8, 0.6]]);
        let b = EmbeddingBatch::new(anchors, positives).unwrap();
        // c_11 = 1, c_12 = 0.8, gap = 0.2
        let p = LossParams {
            m: 0.2,
            ..Default::default()
        };
        let g = analytic_grad(LossKind::Mpt, &b, &p).unwrap();
        assert!(g.boundary[0]);
    }

    #[test]
    fn met_coincident_positive_flags_boundary() {
        let anchors = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let positives = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.6, 0.8]]);
        let b = EmbeddingBatch::new(anchors, positives).unwrap();
        let g = analytic_grad(LossKind::Met, &b, &LossParams::default()).unwrap();
        assert!(g.boundary[0]);
        // positive term dropped, negative term finite
        assert!(g.grads.row(0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn all_kinds_produce_finite_values_and_grads() {
        let b = random_batch(8, 16, 11).unwrap();
        let p = LossParams::default();
        for kind in LossKind::ALL {
            let v = loss_value(kind, &b, &p).unwrap();
            assert!(v.total.is_finite(), "{kind}");
            let g = analytic_grad(kind, &b, &p).unwrap();
            assert!(g.grads.data.iter().all(|x| x.is_finite()), "{kind}");
        }
    }

    #[test]
    fn global_share_convention_sums_to_total() {
        let b = random_batch(6, 8, 3).unwrap();
        let v = loss_value(LossKind::AlignMhe, &b, &LossParams::default()).unwrap();
        let sum: f64 = v.per_anchor.iter().sum();
        assert!((sum - v.total).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let b = random_batch(4, 4, 1).unwrap();
        let bad_tau = LossParams {
            tau: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            loss_value(LossKind::Info, &b, &bad_tau),
            Err(Error::InvalidParams { .. })
        ));
        let bad_u = LossParams {
            u: 2.0,
            ..Default::default()
        };
        assert!(analytic_grad(LossKind::Arc, &b, &bad_u).is_err());
    }

    #[test]
    fn baseline_gd_off_gives_zero_gradient() {
        let b = random_batch(8, 16, 2).unwrap();
        let p = LossParams {
            m: -1.0,
            ..Default::default()
        };
        let g = analytic_grad(LossKind::Baseline, &b, &p).unwrap();
        assert!(g.grads.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in LossKind::ALL {
            assert_eq!(LossKind::parse(kind.name()), Some(kind));
        }
        assert_eq!(LossKind::parse("nosuch"), None);
    }
}
