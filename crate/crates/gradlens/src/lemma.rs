//! The minimum-ratio bound for an attractive optimization step, verified in
//! the tangent-plane model it is derived in.
//!
//! Setup: an anchor with positive at angle `theta_pos` and negative at
//! `theta_neg`, dihedral angle `alpha` between the two planes through the
//! anchor. All points project orthogonally onto the tangent plane at the
//! anchor, where the positive sits at distance `sin(theta_pos)` along
//! `u_p`, the negative at `sin(theta_neg)` along `u_n`, and the angle
//! between `u_p` and `u_n` is `alpha`. A step `lambda * (r h_pos - h_neg)`
//! moves the projected anchor to
//!
//! ```text
//! x(r) = lambda r sin(theta_pos) u_p - lambda sin(theta_neg) u_n
//! ```
//!
//! and the bound is the smallest `r` for which the distance from `x(r)` to
//! the projected positive does not exceed its starting value. The closed
//! form is
//!
//! ```text
//! r_min = 1/lambda + sin(theta_neg) cos(alpha) / sin(theta_pos)
//!         - sqrt(1/lambda^2 - sin^2(theta_neg) sin^2(alpha) / sin^2(theta_pos))
//! ```
//!
//! which [`r_min_oracle`] reproduces by pure bracketing and bisection on
//! the distance condition. The bound can be negative (repulsion alone
//! already attracts when `alpha > pi/2`); the satisfying set is the
//! interval between the two roots of a quadratic, and `r_min` is its lower
//! edge.

use crate::embeddings::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::vecmath::{cos_to_angle, dot, norm};
use serde::Serialize;
use std::f64::consts::PI;

/// The `(theta_pos, theta_neg, alpha, lambda, r)` tuple the bound
/// constrains. `r` is optional; satisfaction checks need it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaConfig {
    pub theta_pos: f64,
    pub theta_neg: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub r: Option<f64>,
}

impl LemmaConfig {
    pub fn new(theta_pos: f64, theta_neg: f64, alpha: f64, lambda: f64) -> Result<Self> {
        if !(0.0 < theta_pos && theta_pos < PI) {
            return Err(Error::InvalidAngle(theta_pos));
        }
        if !(0.0 < theta_neg && theta_neg < PI) {
            return Err(Error::InvalidAngle(theta_neg));
        }
        if !(0.0..=PI).contains(&alpha) {
            return Err(Error::InvalidAngle(alpha));
        }
        if lambda <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be > 0, got {lambda}"
            )));
        }
        Ok(LemmaConfig {
            theta_pos,
            theta_neg,
            alpha,
            lambda,
            r: None,
        })
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }

    /// `1/lambda^2 - sin^2(theta_neg) sin^2(alpha) / sin^2(theta_pos)`;
    /// non-negative iff the closed form is real.
    pub fn radicand(&self) -> f64 {
        let ratio = self.theta_neg.sin() * self.alpha.sin() / self.theta_pos.sin();
        1.0 / (self.lambda * self.lambda) - ratio * ratio
    }

    pub fn feasible(&self) -> bool {
        self.radicand() >= 0.0
    }

    /// Distance in the tangent plane from the moved anchor to the
    /// projected positive, as a function of the step ratio.
    pub fn tangent_move_distance(&self, r: f64) -> f64 {
        let a = self.theta_pos.sin();
        let b = self.lambda * self.theta_neg.sin();
        let t = self.lambda * r - 1.0;
        (a * a * t * t + b * b - 2.0 * a * b * t * self.alpha.cos())
            .max(0.0)
            .sqrt()
    }
}

/// The closed-form lower bound on the step ratio.
pub fn r_min_closed_form(config: &LemmaConfig) -> Result<f64> {
    let radicand = config.radicand();
    if radicand < 0.0 {
        return Err(Error::InfeasibleGeometry { radicand });
    }
    Ok(1.0 / config.lambda
        + config.theta_neg.sin() * config.alpha.cos() / config.theta_pos.sin()
        - radicand.sqrt())
}

const ORACLE_R_LIMIT: f64 = 1e6;

/// Brute-force evaluation of the bound, independent of the closed form:
/// locate the minimizer of the move distance (an exact quadratic fit
/// through three distance evaluations), check the condition is met there,
/// then bisect the lower boundary of the satisfying interval.
pub fn r_min_oracle(config: &LemmaConfig, tol: f64) -> Result<f64> {
    if !(1e-12..=1e-3).contains(&tol) {
        return Err(Error::InvalidConfig(format!(
            "oracle tol must be in [1e-12, 1e-3], got {tol}"
        )));
    }
    let a = config.theta_pos.sin();
    let d2 = |r: f64| {
        let d = config.tangent_move_distance(r);
        d * d
    };
    // d^2 is a quadratic in r; fit it through three points to find the vertex
    let (f_m, f_0, f_p) = (d2(-1.0), d2(0.0), d2(1.0));
    let quad = (f_p + f_m - 2.0 * f_0) / 2.0;
    let lin = (f_p - f_m) / 2.0;
    let vertex = -lin / (2.0 * quad);
    if !vertex.is_finite() || vertex.abs() > ORACLE_R_LIMIT {
        return Err(Error::NoSolution {
            lo: -ORACLE_R_LIMIT,
            hi: ORACLE_R_LIMIT,
        });
    }
    if config.tangent_move_distance(vertex) > a {
        // even the closest approach stays farther than the start
        return Err(Error::InfeasibleGeometry {
            radicand: config.radicand(),
        });
    }
    // expand left from the vertex until the condition fails
    let mut span = 1.0;
    let mut lo = vertex - span;
    while config.tangent_move_distance(lo) <= a {
        span *= 2.0;
        lo = vertex - span;
        if span > 4.0 * ORACLE_R_LIMIT {
            return Err(Error::NoSolution {
                lo: -ORACLE_R_LIMIT,
                hi: ORACLE_R_LIMIT,
            });
        }
    }
    let mut hi = vertex;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if config.tangent_move_distance(mid) <= a {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Whether the tangent-plane move with the config's `r` ends at most as far
/// from the positive as it started, plus the signed distance change.
pub fn satisfied(config: &LemmaConfig) -> Result<(bool, f64)> {
    let r = config.r.ok_or(Error::InvalidConfig(
        "satisfied() needs a configured step ratio r".into(),
    ))?;
    let delta = config.tangent_move_distance(r) - config.theta_pos.sin();
    Ok((delta <= 0.0, delta))
}

/// Histogram of closed-form minimum ratios over the anchors of a batch set.
#[derive(Debug, Clone, Serialize)]
pub struct MinRatioHistogram {
    pub bin_low: Vec<f64>,
    pub bin_high: Vec<f64>,
    pub counts: Vec<u64>,
    pub skipped: usize,
    pub infeasible: usize,
    pub lambda: f64,
    /// Raw per-triple bound values (not part of the CSV serialization).
    #[serde(skip)]
    pub values: Vec<f64>,
}

/// For each anchor, take its hardest cross-view negative, measure
/// `(theta_pos, theta_neg, alpha)` from the embedding triple (alpha is the
/// angle between the components of the positive and the negative orthogonal
/// to the anchor), and histogram the closed-form bound. Triples with a
/// degenerate tangent projection are skipped; infeasible triples are
/// counted separately.
pub fn min_ratio_distribution(
    batches: &[EmbeddingBatch],
    lambda: f64,
    bins: usize,
    range: Option<(f64, f64)>,
) -> Result<MinRatioHistogram> {
    if batches.is_empty() {
        return Err(Error::EmptyInput("min_ratio_distribution needs batches"));
    }
    if lambda <= 0.0 || bins == 0 {
        return Err(Error::InvalidConfig(
            "lambda must be > 0 and bins >= 1".into(),
        ));
    }
    let mut values = Vec::new();
    let mut skipped = 0usize;
    let mut infeasible = 0usize;
    for batch in batches {
        for i in 0..batch.n() {
            let anchor = batch.anchor(i);
            // hardest cross-view negative
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            for j in 0..batch.n() {
                if j != i {
                    let c = dot(anchor, batch.positive(j));
                    if c > best {
                        best = c;
                        arg = j;
                    }
                }
            }
            match triple_config(anchor, batch.positive(i), batch.positive(arg), lambda) {
                None => skipped += 1,
                Some(cfg) => match r_min_closed_form(&cfg) {
                    Ok(v) => values.push(v),
                    Err(_) => infeasible += 1,
                },
            }
        }
    }
    let (lo, hi) = match range {
        Some(r) => r,
        None => {
            if values.is_empty() {
                (0.0, 1.0)
            } else {
                (
                    values.iter().cloned().fold(f64::INFINITY, f64::min),
                    values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            }
        }
    };
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0u64; bins];
    for &v in &values {
        if v < lo || v > hi {
            continue;
        }
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(MinRatioHistogram {
        bin_low: (0..bins).map(|k| lo + width * k as f64).collect(),
        bin_high: (1..=bins).map(|k| lo + width * k as f64).collect(),
        counts,
        skipped,
        infeasible,
        lambda,
        values,
    })
}

/// Measure `(theta_pos, theta_neg, alpha)` from an embedding triple.
/// Returns `None` when either partner's component orthogonal to the anchor
/// is degenerate (the dihedral angle is then undefined).
pub fn triple_config(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    lambda: f64,
) -> Option<LemmaConfig> {
    let c_pos = dot(anchor, positive);
    let c_neg = dot(anchor, negative);
    let mut p_orth: Vec<f64> = positive
        .iter()
        .zip(anchor)
        .map(|(p, a)| p - c_pos * a)
        .collect();
    let mut n_orth: Vec<f64> = negative
        .iter()
        .zip(anchor)
        .map(|(v, a)| v - c_neg * a)
        .collect();
    let np = norm(&p_orth);
    let nn = norm(&n_orth);
    if np < 1e-9 || nn < 1e-9 {
        return None;
    }
    for x in p_orth.iter_mut() {
        *x /= np;
    }
    for x in n_orth.iter_mut() {
        *x /= nn;
    }
    let alpha = cos_to_angle(dot(&p_orth, &n_orth));
    LemmaConfig::new(cos_to_angle(c_pos), cos_to_angle(c_neg), alpha, lambda).ok()
}

/// Comparison between the tangent-plane distance model and the actual
/// sphere step `normalize(h + lambda (r h_pos - h_neg))`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SphereStepReport {
    /// Tangent-plane distance change.
    pub tangent_delta: f64,
    /// Anchor-positive angle change after the renormalized ambient step.
    pub ambient_delta: f64,
    pub signs_agree: bool,
}

/// Realize the config's triple on the sphere (the dihedral fixes the
/// geometry up to rotation), apply the renormalized ambient step, and
/// compare the sign of the anchor-positive angle change with the tangent
/// model's.
pub fn sphere_step_check(config: &LemmaConfig, d: usize) -> Result<SphereStepReport> {
    if d < 3 {
        return Err(Error::InvalidShape(format!(
            "sphere_step_check needs d >= 3, got {d}"
        )));
    }
    let r = config.r.ok_or(Error::InvalidConfig(
        "sphere_step_check needs a configured step ratio r".into(),
    ))?;
    let mut anchor = vec![0.0; d];
    anchor[0] = 1.0;
    let mut positive = vec![0.0; d];
    positive[0] = config.theta_pos.cos();
    positive[1] = config.theta_pos.sin();
    let mut negative = vec![0.0; d];
    negative[0] = config.theta_neg.cos();
    negative[1] = config.theta_neg.sin() * config.alpha.cos();
    negative[2] = config.theta_neg.sin() * config.alpha.sin();

    let mut moved: Vec<f64> = (0..d)
        .map(|k| anchor[k] + config.lambda * (r * positive[k] - negative[k]))
        .collect();
    let n = norm(&moved);
    if n < 1e-300 {
        return Err(Error::ZeroVector { norm: n });
    }
    for x in moved.iter_mut() {
        *x /= n;
    }
    let ambient_delta = cos_to_angle(dot(&moved, &positive)) - config.theta_pos;
    let (_, tangent_delta) = satisfied(config)?;
    Ok(SphereStepReport {
        tangent_delta,
        ambient_delta,
        signs_agree: (tangent_delta <= 0.0) == (ambient_delta <= 0.0),
    })
}

/// Uniformly random feasible configs for verification sweeps:
/// angles in `[pi/20, 19 pi/20]`, dihedral in `[0, pi]`, lambda from the
/// given set; infeasible draws are rejected.
pub fn random_feasible_config(rng: &mut Rng, lambdas: &[f64]) -> LemmaConfig {
    loop {
        let theta_pos = rng.uniform(PI / 20.0, 19.0 * PI / 20.0);
        let theta_neg = rng.uniform(PI / 20.0, 19.0 * PI / 20.0);
        let alpha = rng.uniform(0.0, PI);
        let lambda = lambdas[rng.index(lambdas.len())];
        let cfg = LemmaConfig::new(theta_pos, theta_neg, alpha, lambda).unwrap();
        if cfg.feasible() {
            return cfg;
        }
    }
}
