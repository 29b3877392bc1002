//! Toy self-supervised training on synthetic data.
//!
//! Synthetic "sentences" are latent vectors drawn from a seeded Gaussian
//! mixture; an item's two views are the latent plus independent isotropic
//! noise. The encoder (bias-free linear map or small tanh MLP) produces
//! l2-normalized embeddings, and plain gradient descent follows the mean
//! per-anchor loss with the loss's stop-gradient components refreshed from
//! each batch and held constant inside the step.
//!
//! Every `eval_interval` steps the held-out items are encoded with fresh
//! view noise and summarized into space statistics (angle means and
//! spreads, mean positive cosine, hardest-negative softmax mass at the
//! configured stats temperature), plus the two dynamic-ratio values at the
//! hardest negative.

use crate::embeddings::{space_stats, EmbeddingBatch, SpaceStats};
use crate::error::Error;
use crate::losses::{
    embedding_grads_frozen, frozen_factors, total_with_frozen, LossKind, LossParams,
};
use crate::rng::{derive_seed, Rng};
use crate::vecmath::{cos_to_angle, dot, norm, Matrix};
use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EncoderKind {
    Linear,
    Mlp { width: usize, depth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub n_items: usize,
    pub n_clusters: usize,
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub noise_sigma: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_interval: usize,
    pub learning_rate: f64,
    pub holdout_fraction: f64,
    pub encoder: EncoderKind,
    pub loss: LossKind,
    pub params: LossParams,
    pub seed: u64,
    /// Temperature for the trace's hardest-negative fraction; defaults to
    /// the loss temperature.
    pub stats_tau: Option<f64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            n_items: 2048,
            n_clusters: 8,
            latent_dim: 16,
            embed_dim: 32,
            noise_sigma: 0.35,
            batch_size: 128,
            steps: 2000,
            eval_interval: 50,
            learning_rate: 0.05,
            holdout_fraction: 0.10,
            encoder: EncoderKind::Linear,
            loss: LossKind::Baseline,
            params: LossParams::default(),
            seed: 0,
            stats_tau: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidConfig(
                "holdout_fraction must be in [0, 1)".into(),
            ));
        }
        if self.learning_rate < 0.0 {
            // zero is allowed: a frozen-model run is a useful probe
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        if self.n_items < self.batch_size {
            return Err(Error::InvalidConfig(
                "n_items must be at least batch_size".into(),
            ));
        }
        if self.latent_dim < 2 || self.embed_dim < 2 {
            return Err(Error::InvalidConfig("dimensions must be >= 2".into()));
        }
        if self.n_clusters == 0 || self.steps == 0 || self.eval_interval == 0 {
            return Err(Error::InvalidConfig("counts must be >= 1".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        self.params.validate(self.loss)
    }

    fn stats_tau(&self) -> f64 {
        self.stats_tau.unwrap_or(self.params.tau)
    }
}

/// Latent vectors for the synthetic items.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub latents: Matrix,
}

/// Seeded Gaussian-mixture latents: `n_clusters` component means at scale 2
/// with unit within-cluster spread.
pub fn make_dataset(config: &TrainerConfig) -> Result<Dataset, Error> {
    config.validate()?;
    let mut rng = Rng::new(derive_seed(config.seed, 0));
    let k = config.n_clusters;
    let d = config.latent_dim;
    let mut centers = Matrix::zeros(k, d);
    for x in centers.data.iter_mut() {
        *x = 2.0 * rng.normal();
    }
    let mut latents = Matrix::zeros(config.n_items, d);
    for i in 0..config.n_items {
        let c = rng.index(k);
        for (x, m) in latents.row_mut(i).iter_mut().zip(centers.row(c)) {
            *x = m + rng.normal();
        }
    }
    Ok(Dataset { latents })
}

/// Bias-free encoder: a single matrix, or `depth` tanh layers of `width`
/// units followed by a linear output layer.
#[derive(Debug, Clone)]
pub struct Encoder {
    layers: Vec<Matrix>,
}

impl Encoder {
    fn init(kind: EncoderKind, latent_dim: usize, embed_dim: usize, rng: &mut Rng) -> Encoder {
        let dims: Vec<usize> = match kind {
            EncoderKind::Linear => vec![latent_dim, embed_dim],
            EncoderKind::Mlp { width, depth } => {
                let mut v = vec![latent_dim];
                v.extend(std::iter::repeat(width).take(depth));
                v.push(embed_dim);
                v
            }
        };
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                let mut m = Matrix::zeros(fan_out, fan_in);
                for x in m.data.iter_mut() {
                    *x = scale * rng.normal();
                }
                m
            })
            .collect();
        Encoder { layers }
    }

    /// Activations per layer (input first, final pre-normalization output
    /// last); tanh between hidden layers, linear output.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for (l, w) in self.layers.iter().enumerate() {
            let prev = acts.last().unwrap();
            let mut out = vec![0.0; w.rows];
            for (r, o) in out.iter_mut().enumerate() {
                *o = dot(w.row(r), prev);
            }
            if l + 1 < self.layers.len() {
                for o in out.iter_mut() {
                    *o = o.tanh();
                }
            }
            acts.push(out);
        }
        acts
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>, Error> {
        let acts = self.forward(x);
        let y = acts.last().unwrap();
        let n = norm(y);
        if n < 1e-300 {
            return Err(Error::ZeroVector { norm: n });
        }
        Ok(y.iter().map(|v| v / n).collect())
    }

    /// Accumulate parameter gradients for one sample: `d_out` is the
    /// gradient with respect to the final (pre-normalization) output.
    fn backward(&self, acts: &[Vec<f64>], d_out: &[f64], grads: &mut [Matrix]) {
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let input = &acts[l];
            for (r, &dr) in delta.iter().enumerate() {
                let grow = grads[l].row_mut(r);
                for (c, &xin) in input.iter().enumerate() {
                    grow[c] += dr * xin;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.layers[l];
            let mut prev = vec![0.0; w.cols];
            for (r, &dr) in delta.iter().enumerate() {
                for (c, p) in prev.iter_mut().enumerate() {
                    *p += dr * w.row(r)[c];
                }
            }
            // tanh' = 1 - a^2 on the hidden activation
            for (p, &a) in prev.iter_mut().zip(&acts[l]) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    fn zeros_like(&self) -> Vec<Matrix> {
        self.layers
            .iter()
            .map(|w| Matrix::zeros(w.rows, w.cols))
            .collect()
    }

    fn step(&mut self, grads: &[Matrix], lr: f64) {
        for (w, g) in self.layers.iter_mut().zip(grads) {
            for (x, gx) in w.data.iter_mut().zip(&g.data) {
                *x -= lr * gx;
            }
        }
    }

    /// FNV-1a over the parameter bit patterns.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for w in &self.layers {
            for &x in &w.data {
                for byte in x.to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// One holdout evaluation record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub stats: SpaceStats,
    /// Mean `sin(theta_pos + u) / sin(theta_pos)` over holdout anchors.
    pub ratio_arc: f64,
    /// Mean MET ratio at each anchor's hardest cross-view negative.
    pub ratio_met: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub final_digest: u64,
}

impl TrainTrace {
    pub fn first(&self) -> &TraceRow {
        self.rows.first().expect("trace has a step-0 row")
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace has a final row")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: TrainTrace,
    pub encoder: Encoder,
    /// Holdout batches encoded at the final parameters.
    pub final_holdout: Vec<EmbeddingBatch>,
}

#[derive(Debug, ThisError)]
pub enum TrainError {
    #[error("loss diverged at step {step}")]
    Diverged { step: usize, trace: TrainTrace },
    #[error(transparent)]
    Lib(#[from] Error),
}

fn encode_pairs(
    encoder: &Encoder,
    latents: &Matrix,
    indices: &[usize],
    noise_sigma: f64,
    rng: &mut Rng,
) -> Result<(EmbeddingBatch, Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>, Matrix, Matrix), Error> {
    let d = encoder.layers.last().unwrap().rows;
    let latent_dim = latents.cols;
    let n = indices.len();
    let mut anchors = Matrix::zeros(n, d);
    let mut positives = Matrix::zeros(n, d);
    let mut acts_a = Vec::with_capacity(n);
    let mut acts_p = Vec::with_capacity(n);
    let mut view = vec![0.0; latent_dim];
    for (row, &idx) in indices.iter().enumerate() {
        for pass in 0..2 {
            for (v, &l) in view.iter_mut().zip(latents.row(idx)) {
                *v = l + noise_sigma * rng.normal();
            }
            let acts = encoder.forward(&view);
            let y = acts.last().unwrap();
            let nrm = norm(y);
            if nrm < 1e-300 {
                return Err(Error::ZeroVector { norm: nrm });
            }
            let target = if pass == 0 {
                anchors.row_mut(row)
            } else {
                positives.row_mut(row)
            };
            for (t, &v) in target.iter_mut().zip(y) {
                *t = v / nrm;
            }
            if pass == 0 {
                acts_a.push(acts);
            } else {
                acts_p.push(acts);
            }
        }
    }
    let batch = EmbeddingBatch::new(anchors.clone(), positives.clone())?;
    Ok((batch, acts_a, acts_p, anchors, positives))
}

/// Holdout view pairs, drawn once per run so evaluations at different
/// steps see the identical inputs.
fn holdout_views(
    latents: &Matrix,
    holdout: &[usize],
    noise_sigma: f64,
    rng: &mut Rng,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    holdout
        .iter()
        .map(|&idx| {
            let make = |rng: &mut Rng| {
                latents
                    .row(idx)
                    .iter()
                    .map(|&l| l + noise_sigma * rng.normal())
                    .collect::<Vec<f64>>()
            };
            (make(rng), make(rng))
        })
        .collect()
}

fn encode_holdout(
    encoder: &Encoder,
    views: &[(Vec<f64>, Vec<f64>)],
    batch_size: usize,
) -> Result<Vec<EmbeddingBatch>, Error> {
    let mut batches = Vec::new();
    for chunk in views.chunks(batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let d = encoder.layers.last().unwrap().rows;
        let mut anchors = Matrix::zeros(chunk.len(), d);
        let mut positives = Matrix::zeros(chunk.len(), d);
        for (row, (v1, v2)) in chunk.iter().enumerate() {
            anchors.row_mut(row).copy_from_slice(&encoder.embed(v1)?);
            positives.row_mut(row).copy_from_slice(&encoder.embed(v2)?);
        }
        batches.push(EmbeddingBatch::new(anchors, positives)?);
    }
    Ok(batches)
}

fn eval_row(
    step: usize,
    batches: &[EmbeddingBatch],
    config: &TrainerConfig,
) -> Result<TraceRow, Error> {
    let stats = space_stats(batches, config.stats_tau())?;
    let mut arc_sum = 0.0;
    let mut met_sum = 0.0;
    let mut count = 0usize;
    for b in batches {
        for i in 0..b.n() {
            let c_pos = dot(b.anchor(i), b.positive(i));
            let theta_pos = cos_to_angle(c_pos);
            if theta_pos.sin() < 1e-9 || (1.0 - c_pos) < 1e-12 {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for j in 0..b.n() {
                if j != i {
                    best = best.max(dot(b.anchor(i), b.positive(j)));
                }
            }
            arc_sum += (theta_pos + config.params.u).sin() / theta_pos.sin();
            met_sum += ((1.0 - best) / (1.0 - c_pos)).sqrt();
            count += 1;
        }
    }
    let denom = count.max(1) as f64;
    Ok(TraceRow {
        step,
        stats,
        ratio_arc: arc_sum / denom,
        ratio_met: met_sum / denom,
    })
}

/// Plain gradient descent on the encoder under the configured loss.
/// The trace records the holdout at step 0, every `eval_interval` steps,
/// and after the final step.
pub fn train(config: &TrainerConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let dataset = make_dataset(config)?;
    let mut init_rng = Rng::new(derive_seed(config.seed, 1));
    let mut encoder = Encoder::init(
        config.encoder,
        config.latent_dim,
        config.embed_dim,
        &mut init_rng,
    );
    let mut train_rng = Rng::new(derive_seed(config.seed, 2));

    // seeded split: holdout takes the head of a shuffled index list
    let mut order: Vec<usize> = (0..config.n_items).collect();
    let mut split_rng = Rng::new(derive_seed(config.seed, 3));
    split_rng.shuffle(&mut order);
    let n_holdout = ((config.n_items as f64) * config.holdout_fraction) as usize;
    let (holdout, train_ids) = order.split_at(n_holdout);

    let mut eval_rng = Rng::new(derive_seed(config.seed, 4));
    let views = holdout_views(&dataset.latents, holdout, config.noise_sigma, &mut eval_rng);

    let mut rows = Vec::new();
    let record = |rows: &mut Vec<TraceRow>,
                      step: usize,
                      encoder: &Encoder|
     -> Result<Vec<EmbeddingBatch>, Error> {
        let batches = encode_holdout(encoder, &views, config.batch_size)?;
        rows.push(eval_row(step, &batches, config)?);
        Ok(batches)
    };
    record(&mut rows, 0, &encoder)?;

    let mut pool = train_ids.to_vec();
    for step in 1..=config.steps {
        // deterministic minibatch: reshuffle the pool prefix each step
        train_rng.shuffle(&mut pool);
        let batch_ids = &pool[..config.batch_size];
        // an encoder blow-up (overflowed or vanished pre-normalization
        // outputs) aborts the run the same way a non-finite loss does
        let diverged = |rows: &[TraceRow], encoder: &Encoder| TrainError::Diverged {
            step,
            trace: TrainTrace {
                rows: rows.to_vec(),
                final_digest: encoder.digest(),
            },
        };
        let encoded = encode_pairs(
            &encoder,
            &dataset.latents,
            batch_ids,
            config.noise_sigma,
            &mut train_rng,
        );
        let (batch, acts_a, acts_p, _, _) = match encoded {
            Ok(x) => x,
            Err(Error::ZeroVector { .. }) | Err(Error::InvalidBatch(_)) => {
                return Err(diverged(&rows, &encoder))
            }
            Err(e) => return Err(e.into()),
        };
        let frozen = frozen_factors(config.loss, &batch, &config.params);
        let total = total_with_frozen(config.loss, &batch, &config.params, &frozen);
        if !total.is_finite() {
            return Err(diverged(&rows, &encoder));
        }
        let grads =
            embedding_grads_frozen(config.loss, &batch, &config.params, &frozen)?;
        let scale = 1.0 / config.batch_size as f64;
        let mut pgrads = encoder.zeros_like();
        let mut d_out = vec![0.0; config.embed_dim];
        for (row, acts) in acts_a.iter().enumerate() {
            chain_through_normalization(
                grads.d_anchors.row(row),
                batch.anchor(row),
                acts.last().unwrap(),
                scale,
                &mut d_out,
            );
            encoder.backward(acts, &d_out, &mut pgrads);
        }
        for (row, acts) in acts_p.iter().enumerate() {
            chain_through_normalization(
                grads.d_positives.row(row),
                batch.positive(row),
                acts.last().unwrap(),
                scale,
                &mut d_out,
            );
            encoder.backward(acts, &d_out, &mut pgrads);
        }
        encoder.step(&pgrads, config.learning_rate);

        if step % config.eval_interval == 0 && step != config.steps {
            record(&mut rows, step, &encoder)?;
        }
    }
    let final_holdout = record(&mut rows, config.steps, &encoder)?;
    Ok(TrainOutcome {
        trace: TrainTrace {
            final_digest: encoder.digest(),
            rows,
        },
        encoder,
        final_holdout,
    })
}

/// `d_y = scale * (g - (g . h) h) / ||y||`: the l2-normalization Jacobian
/// applied to an embedding gradient.
fn chain_through_normalization(
    g: &[f64],
    h: &[f64],
    y: &[f64],
    scale: f64,
    out: &mut [f64],
) {
    let radial = dot(g, h);
    let ny = norm(y);
    for ((o, &gi), &hi) in out.iter_mut().zip(g).zip(h) {
        *o = scale * (gi - radial * hi) / ny;
    }
}

// ---------------------------------------------------------------------------
// conjecture evaluation

/// Traces grouped by the swept component, each entry `(value, seed, trace)`.
#[derive(Debug, Default)]
pub struct ConjectureInputs {
    /// Gate-margin sweep (`m`); `m >= 2` disables dissipation entirely.
    pub gd_traces: Vec<(f64, u64, TrainTrace)>,
    /// Weight-temperature sweep (`tau`).
    pub weight_traces: Vec<(f64, u64, TrainTrace)>,
    /// Static-ratio sweep (`r`).
    pub ratio_traces: Vec<(f64, u64, TrainTrace)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairedCheck {
    pub pass: bool,
    /// One entry per seed: the compared numbers, in sweep order.
    pub values: Vec<(u64, Vec<f64>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjectureReport {
    /// Final angle gap `mu_neg - mu_pos` strictly smaller with dissipation
    /// than without.
    pub c1_gap_smaller_with_gd: Option<PairedCheck>,
    /// Hardest-negative fraction strictly larger after training than before.
    pub c2_fraction_grows: Option<PairedCheck>,
    /// Final mean positive cosine strictly increasing in the ratio.
    pub c3_cos_increasing_in_r: Option<PairedCheck>,
    /// Final gap non-decreasing in the gate margin.
    pub gd_trend_gap_non_decreasing: Option<PairedCheck>,
    /// Hardest-negative dominance collapses at the largest temperature.
    pub tau_collapse_fraction: Option<PairedCheck>,
}

impl ConjectureReport {
    pub fn all_pass(&self) -> bool {
        [
            &self.c1_gap_smaller_with_gd,
            &self.c2_fraction_grows,
            &self.c3_cos_increasing_in_r,
            &self.gd_trend_gap_non_decreasing,
            &self.tau_collapse_fraction,
        ]
        .into_iter()
        .flatten()
        .all(|c| c.pass)
    }
}

fn gap(row: &TraceRow) -> f64 {
    row.stats.mu_neg_hat - row.stats.mu_pos_hat
}

fn group_by_seed(entries: &[(f64, u64, TrainTrace)]) -> Vec<(u64, Vec<(f64, &TrainTrace)>)> {
    let mut seeds: Vec<u64> = entries.iter().map(|e| e.1).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
        .into_iter()
        .map(|s| {
            let mut group: Vec<(f64, &TrainTrace)> = entries
                .iter()
                .filter(|e| e.1 == s)
                .map(|e| (e.0, &e.2))
                .collect();
            group.sort_by(|a, b| a.0.total_cmp(&b.0));
            (s, group)
        })
        .collect()
}

/// Evaluate the component-role conjectures and ablation trends over paired
/// traces (shared seeds across variants).
pub fn evaluate_conjectures(inputs: &ConjectureInputs) -> Result<ConjectureReport, Error> {
    if inputs.gd_traces.is_empty()
        && inputs.weight_traces.is_empty()
        && inputs.ratio_traces.is_empty()
    {
        return Err(Error::MissingVariant("no traces provided"));
    }
    if inputs.ratio_traces.len() == 1 {
        return Err(Error::MissingVariant(
            "a ratio sweep needs at least two r values",
        ));
    }

    // C1: smallest-m vs gd-off (m >= 2) per seed
    let c1 = {
        let groups = group_by_seed(&inputs.gd_traces);
        let mut values = Vec::new();
        let mut pass = true;
        let mut evaluable = !groups.is_empty();
        for (seed, group) in &groups {
            let with_gd = group.iter().find(|(m, _)| *m < 2.0);
            let without = group.iter().find(|(m, _)| *m >= 2.0);
            match (with_gd, without) {
                (Some((_, t_on)), Some((_, t_off))) => {
                    let (g_on, g_off) = (gap(t_on.last()), gap(t_off.last()));
                    pass &= g_on < g_off;
                    values.push((*seed, vec![g_on, g_off]));
                }
                _ => evaluable = false,
            }
        }
        if evaluable && !values.is_empty() {
            Some(PairedCheck { pass, values })
        } else {
            None
        }
    };

    // C2: first vs last fraction on the smallest-m trace per seed
    let c2 = {
        let groups = group_by_seed(&inputs.gd_traces);
        let mut values = Vec::new();
        let mut pass = true;
        for (seed, group) in &groups {
            if let Some((_, trace)) = group.first() {
                let before = trace.first().stats.hardest_weight_fraction;
                let after = trace.last().stats.hardest_weight_fraction;
                pass &= after > before;
                values.push((*seed, vec![before, after]));
            }
        }
        if values.is_empty() {
            None
        } else {
            Some(PairedCheck { pass, values })
        }
    };

    // C3: mean positive cosine strictly increasing across sorted r
    let c3 = {
        let groups = group_by_seed(&inputs.ratio_traces);
        let mut values = Vec::new();
        let mut pass = true;
        for (seed, group) in &groups {
            let coss: Vec<f64> = group
                .iter()
                .map(|(_, t)| t.last().stats.mean_pos_cos)
                .collect();
            pass &= coss.windows(2).all(|w| w[1] > w[0]);
            values.push((*seed, coss));
        }
        if values.is_empty() {
            None
        } else {
            Some(PairedCheck { pass, values })
        }
    };

    // margin trend: gap non-decreasing in m
    let gd_trend = {
        let groups = group_by_seed(&inputs.gd_traces);
        let mut values = Vec::new();
        let mut pass = true;
        for (seed, group) in &groups {
            if group.len() < 2 {
                continue;
            }
            let gaps: Vec<f64> = group.iter().map(|(_, t)| gap(t.last())).collect();
            pass &= gaps.windows(2).all(|w| w[1] >= w[0]);
            values.push((*seed, gaps));
        }
        if values.is_empty() {
            None
        } else {
            Some(PairedCheck { pass, values })
        }
    };

    // temperature collapse: fraction at the largest tau below 0.1
    let tau_collapse = {
        let groups = group_by_seed(&inputs.weight_traces);
        let mut values = Vec::new();
        let mut pass = true;
        for (seed, group) in &groups {
            if let Some((_, trace)) = group.last() {
                let f = trace.last().stats.hardest_weight_fraction;
                pass &= f < 0.1;
                values.push((*seed, vec![f]));
            }
        }
        if values.is_empty() {
            None
        } else {
            Some(PairedCheck { pass, values })
        }
    };

    Ok(ConjectureReport {
        c1_gap_smaller_with_gd: c1,
        c2_fraction_grows: c2,
        c3_cos_increasing_in_r: c3,
        gd_trend_gap_non_decreasing: gd_trend,
        tau_collapse_fraction: tau_collapse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{fd_target, loss_value};

    fn tiny_config(seed: u64) -> TrainerConfig {
        TrainerConfig {
            n_items: 64,
            n_clusters: 4,
            latent_dim: 6,
            embed_dim: 8,
            batch_size: 16,
            steps: 20,
            eval_interval: 10,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let c = tiny_config(5);
        let a = make_dataset(&c).unwrap();
        let b = make_dataset(&c).unwrap();
        assert_eq!(a.latents, b.latents);
    }

    #[test]
    fn training_is_deterministic() {
        let c = tiny_config(9);
        let a = train(&c).unwrap();
        let b = train(&c).unwrap();
        assert_eq!(a.trace.final_digest, b.trace.final_digest);
        for (x, y) in a.trace.rows.iter().zip(&b.trace.rows) {
            assert_eq!(x.stats.mu_pos_hat, y.stats.mu_pos_hat);
            assert_eq!(x.stats.hardest_weight_fraction, y.stats.hardest_weight_fraction);
        }
    }

    #[test]
    fn zero_noise_gives_zero_positive_angle() {
        // identical views encode to bitwise-identical rows; the angle is
        // zero up to the arccos round-off near cos = 1
        let c = TrainerConfig {
            noise_sigma: 0.0,
            ..tiny_config(3)
        };
        let out = train(&c).unwrap();
        for row in &out.trace.rows {
            assert!(row.stats.mu_pos_hat < 1e-7, "{}", row.stats.mu_pos_hat);
        }
    }

    #[test]
    fn zero_learning_rate_freezes_the_trace() {
        let c = TrainerConfig {
            learning_rate: 0.0,
            steps: 40,
            ..tiny_config(7)
        };
        let out = train(&c).unwrap();
        let first = out.trace.first();
        for row in &out.trace.rows {
            assert_eq!(row.stats, first.stats);
        }
    }

    #[test]
    fn recorded_embeddings_are_unit_norm() {
        let out = train(&tiny_config(11)).unwrap();
        for b in &out.final_holdout {
            for i in 0..b.n() {
                assert!((norm(b.anchor(i)) - 1.0).abs() < 1e-9);
                assert!((norm(b.positive(i)) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn holdout_mu_pos_matches_fresh_noise_monte_carlo() {
        // untrained random linear encoder: the trace's step-0 mu_pos must
        // match an independent estimate over fresh noise draws
        let c = TrainerConfig {
            noise_sigma: 0.1,
            steps: 1,
            n_items: 512,
            holdout_fraction: 0.25,
            ..tiny_config(13)
        };
        let dataset = make_dataset(&c).unwrap();
        let mut rng = Rng::new(derive_seed(c.seed, 1));
        let encoder = Encoder::init(c.encoder, c.latent_dim, c.embed_dim, &mut rng);
        let mut mc = Rng::new(777);
        let mut angles = Vec::new();
        for _ in 0..4000 {
            let idx = mc.index(c.n_items);
            let mut v1 = dataset.latents.row(idx).to_vec();
            let mut v2 = v1.clone();
            for x in v1.iter_mut() {
                *x += c.noise_sigma * mc.normal();
            }
            for x in v2.iter_mut() {
                *x += c.noise_sigma * mc.normal();
            }
            let h1 = encoder.embed(&v1).unwrap();
            let h2 = encoder.embed(&v2).unwrap();
            angles.push(cos_to_angle(dot(&h1, &h2)));
        }
        let mc_mean = angles.iter().sum::<f64>() / angles.len() as f64;
        let out = train(&c).unwrap();
        let trace_mean = out.trace.first().stats.mu_pos_hat;
        assert!(
            (mc_mean - trace_mean).abs() < 0.02,
            "mc {mc_mean} vs trace {trace_mean}"
        );
    }

    #[test]
    fn linear_parameter_gradient_matches_finite_differences() {
        // n=4 items, d=4: perturb every weight entry and compare against
        // the chained analytic gradient with frozen stop-grad factors
        for kind in [LossKind::Baseline, LossKind::Info, LossKind::ModVicreg] {
            let c = TrainerConfig {
                n_items: 8,
                n_clusters: 2,
                latent_dim: 4,
                embed_dim: 4,
                batch_size: 4,
                loss: kind,
                ..tiny_config(17)
            };
            let dataset = make_dataset(&c).unwrap();
            let mut rng = Rng::new(derive_seed(c.seed, 1));
            let mut encoder = Encoder::init(c.encoder, c.latent_dim, c.embed_dim, &mut rng);
            let ids = [0usize, 1, 2, 3];
            // fixed views: zero noise keeps the FD target a pure function
            // of the parameters
            let mut view_rng = Rng::new(123);
            let (batch, acts_a, acts_p, _, _) =
                encode_pairs(&encoder, &dataset.latents, &ids, 0.0, &mut view_rng).unwrap();
            let frozen = frozen_factors(kind, &batch, &c.params);
            let grads = embedding_grads_frozen(kind, &batch, &c.params, &frozen).unwrap();
            let mut pgrads = encoder.zeros_like();
            let mut d_out = vec![0.0; c.embed_dim];
            for (row, acts) in acts_a.iter().enumerate() {
                chain_through_normalization(
                    grads.d_anchors.row(row),
                    batch.anchor(row),
                    acts.last().unwrap(),
                    1.0,
                    &mut d_out,
                );
                encoder.backward(acts, &d_out, &mut pgrads);
            }
            for (row, acts) in acts_p.iter().enumerate() {
                chain_through_normalization(
                    grads.d_positives.row(row),
                    batch.positive(row),
                    acts.last().unwrap(),
                    1.0,
                    &mut d_out,
                );
                encoder.backward(acts, &d_out, &mut pgrads);
            }
            let eps = 1e-6;
            let total_at = |enc: &Encoder| {
                let mut vr = Rng::new(123);
                let (b, ..) = encode_pairs(enc, &dataset.latents, &ids, 0.0, &mut vr).unwrap();
                let n = b.n();
                if kind.is_global() {
                    fd_target(kind, &b, &c.params, &frozen, 0, b.anchor(0)).0
                } else {
                    (0..n)
                        .map(|i| fd_target(kind, &b, &c.params, &frozen, i, b.anchor(i)).0)
                        .sum()
                }
            };
            for idx in 0..encoder.layers[0].data.len() {
                let orig = encoder.layers[0].data[idx];
                encoder.layers[0].data[idx] = orig + eps;
                let fp = total_at(&encoder);
                encoder.layers[0].data[idx] = orig - eps;
                let fm = total_at(&encoder);
                encoder.layers[0].data[idx] = orig;
                let fd = (fp - fm) / (2.0 * eps);
                let an = pgrads[0].data[idx];
                let denom = fd.abs().max(1e-8);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "{kind} param {idx}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn embedding_gradients_match_fd_through_total() {
        // perturb individual embedding rows of a fixed batch and compare
        // against embedding_grads, stop-grad factors frozen
        use crate::embeddings::random_batch;
        let p = LossParams::default();
        for kind in LossKind::ALL {
            let b = random_batch(6, 8, 300 + kind as u64).unwrap();
            let frozen = frozen_factors(kind, &b, &p);
            let grads = embedding_grads_frozen(kind, &b, &p, &frozen).unwrap();
            let eps = 1e-6;
            let total = |bb: &EmbeddingBatch| -> f64 {
                let n = bb.n();
                if kind.is_global() {
                    fd_target(kind, bb, &p, &frozen, 0, bb.anchor(0)).0
                } else {
                    (0..n)
                        .map(|i| fd_target(kind, bb, &p, &frozen, i, bb.anchor(i)).0)
                        .sum()
                }
            };
            let mut worst = 0.0f64;
            for i in 0..b.n() {
                for k in 0..b.d() {
                    for (is_anchor, gmat) in
                        [(true, &grads.d_anchors), (false, &grads.d_positives)]
                    {
                        let mut bb = b.clone();
                        let perturb = |bb: &mut EmbeddingBatch, delta: f64| {
                            let m = if is_anchor {
                                bb.anchors_mut()
                            } else {
                                bb.positives_mut()
                            };
                            m.row_mut(i)[k] += delta;
                        };
                        perturb(&mut bb, eps);
                        let fp = total(&bb);
                        perturb(&mut bb, -2.0 * eps);
                        let fm = total(&bb);
                        let fd = (fp - fm) / (2.0 * eps);
                        let an = gmat.row(i)[k];
                        worst = worst.max((fd - an).abs() / fd.abs().max(1.0));
                    }
                }
            }
            assert!(worst < 1e-4, "{kind}: worst embedding-grad error {worst}");
        }
    }

    #[test]
    fn divergence_is_detected() {
        // an absurd learning rate overflows the pre-normalization outputs
        let c = TrainerConfig {
            learning_rate: 1e160,
            steps: 50,
            ..tiny_config(19)
        };
        match train(&c) {
            Err(TrainError::Diverged { step, trace }) => {
                assert!(step >= 1);
                assert!(!trace.rows.is_empty(), "trace so far is preserved");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn conjecture_report_requires_paired_ratio_traces() {
        let out = train(&tiny_config(23)).unwrap();
        let inputs = ConjectureInputs {
            ratio_traces: vec![(1.0, 23, out.trace)],
            ..Default::default()
        };
        assert!(matches!(
            evaluate_conjectures(&inputs),
            Err(Error::MissingVariant(_))
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = TrainerConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            holdout_fraction: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            n_items: 10,
            batch_size: 128,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn loss_value_total_matches_frozen_total() {
        use crate::embeddings::random_batch;
        let p = LossParams::default();
        let b = random_batch(6, 8, 71).unwrap();
        for kind in LossKind::ALL {
            let v = loss_value(kind, &b, &p).unwrap();
            let frozen = frozen_factors(kind, &b, &p);
            let t = total_with_frozen(kind, &b, &p, &frozen);
            assert!((v.total - t).abs() < 1e-12, "{kind}");
        }
    }
}
