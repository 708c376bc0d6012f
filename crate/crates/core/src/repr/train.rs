use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::encoder::{distance_table, effective_dimension, one_hot, DistanceKind, Encoder, ForwardCache};
use crate::bisim::ScalingConfig;
use crate::dataset::{OfflineDataset, Transition};
use crate::error::{invalid, Error, Result};
use crate::rng;

/// Loss above this aborts training.
pub const DIVERGENCE_LOSS: f64 = 1e6;
/// Singular-value cutoff for the logged effective dimension.
pub const EFFECTIVE_DIM_DELTA: f64 = 0.01;

fn default_tau() -> f64 {
    0.5
}
fn default_lr() -> f64 {
    1e-2
}
fn default_batch() -> usize {
    32
}
fn default_steps() -> usize {
    2000
}
fn default_ema() -> f64 {
    0.01
}
fn default_scaling() -> ScalingConfig {
    ScalingConfig::reward_scaled(0.9)
}
fn default_distance() -> DistanceKind {
    DistanceKind::Cosine
}
fn default_dim() -> usize {
    8
}
fn default_log_every() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_ema")]
    pub ema_coefficient: f64,
    #[serde(default = "default_scaling")]
    pub scaling: ScalingConfig,
    #[serde(default = "default_distance")]
    pub distance: DistanceKind,
    /// Set from the run's global seed, never from a config file.
    #[serde(skip)]
    pub seed: u64,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    /// Log a row every this many steps (and after the last step).
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            steps: default_steps(),
            ema_coefficient: default_ema(),
            scaling: default_scaling(),
            distance: default_distance(),
            seed: 0,
            embedding_dim: default_dim(),
            log_every: default_log_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid(format!("tau = {} outside (0, 1)", self.tau)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.batch_size < 2 {
            return Err(invalid("batch size must be at least 2"));
        }
        if !(self.ema_coefficient > 0.0 && self.ema_coefficient < 1.0) {
            return Err(invalid("EMA coefficient must lie in (0, 1)"));
        }
        if self.embedding_dim == 0 || self.log_every == 0 {
            return Err(invalid("embedding_dim and log_every must be positive"));
        }
        if let DistanceKind::MicoAngular { beta } = self.distance {
            if !(beta > 0.0) {
                return Err(invalid("beta must be positive"));
            }
        }
        self.scaling.validate()
    }

    /// `c_r + c_k = 1` with `c_r < 1`: the bounded-target prescription, which needs rewards in `[0, 1]`.
    pub fn is_reward_scaled(&self) -> bool {
        self.scaling.c_r < 1.0 && (self.scaling.c_r + self.scaling.c_k - 1.0).abs() < 1e-12
    }
}

/// Slowly tracking copy of the online encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEncoder {
    pub encoder: Encoder,
    pub ema_coefficient: f64,
}

impl TargetEncoder {
    pub fn new(online: &Encoder, ema_coefficient: f64) -> Self {
        Self {
            encoder: online.clone(),
            ema_coefficient,
        }
    }

    /// `target <- (1 - m) target + m online`.
    pub fn update(&mut self, online: &Encoder) {
        let m = self.ema_coefficient;
        for (t, o) in self.encoder.params.iter_mut().zip(&online.params) {
            *t = (1.0 - m) * *t + m * o;
        }
    }
}

fn asym_weight(eps: f64, tau: f64) -> f64 {
    if eps > 0.0 {
        tau
    } else {
        1.0 - tau
    }
}

/// Batch loss and its gradient in the online parameters. All ordered pairs of
/// the batch count, the diagonal included; the target branch is a constant.
pub fn expectile_loss_batch(
    online: &Encoder,
    target: &Encoder,
    batch: &[Transition],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    if batch.len() < 2 {
        return Err(invalid("a batch needs at least two transitions"));
    }
    let n_in = online.input_dim();
    let caches: Vec<ForwardCache> = batch
        .iter()
        .map(|t| online.forward_cached(&one_hot(n_in, t.s)))
        .collect::<Result<_>>()?;
    let next: Vec<Vec<f64>> = batch
        .iter()
        .map(|t| target.forward(&one_hot(n_in, t.s_next)))
        .collect::<Result<_>>()?;
    let b = batch.len();
    let scale = 1.0 / (b * b) as f64;
    let d_out = online.output_dim();
    let mut g_emb = vec![vec![0.0; d_out]; b];
    let mut loss = 0.0;
    let ScalingConfig { c_r, c_k } = cfg.scaling;
    for i in 0..b {
        for j in 0..b {
            let (ti, tj) = (&batch[i], &batch[j]);
            let cont = if ti.done || tj.done { 0.0 } else { c_k };
            let (u, v) = (&caches[i].output, &caches[j].output);
            let eps = c_r * (ti.r - tj.r).abs() + cont * cfg.distance.distance(&next[i], &next[j])
                - cfg.distance.distance(u, v);
            let w = asym_weight(eps, cfg.tau);
            let term = w * eps * eps;
            if !term.is_finite() {
                return Err(Error::Validation(format!("non-finite loss at batch pair ({i}, {j})")));
            }
            loss += scale * term;
            // d(term)/dD = -2 w eps
            let k = -2.0 * w * eps * scale;
            if k != 0.0 {
                let (gu, gv) = cfg.distance.grad(u, v);
                for t in 0..d_out {
                    g_emb[i][t] += k * gu[t];
                    g_emb[j][t] += k * gv[t];
                }
            }
        }
    }
    let mut grad = vec![0.0; online.params.len()];
    for (cache, g) in caches.iter().zip(&g_emb) {
        online.backward(cache, g, &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub mean_residual: f64,
    pub effective_dimension: usize,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: usize,
    pub online: Encoder,
    pub target: Encoder,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: Encoder,
    pub target: TargetEncoder,
    pub log: Vec<LogRow>,
    /// Encoder pairs at every logged step, oldest first.
    pub history: Vec<Checkpoint>,
}

pub const LOG_HEADER: &str = "step,loss,mean_residual,effective_dimension";

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.loss, r.mean_residual, r.effective_dimension);
    }
    out
}

/// Mean of the signed residual over all ordered pairs of dataset tuples, with
/// the next-state distance read from `target`.
pub fn mean_residual(online: &Encoder, target: &Encoder, ds: &OfflineDataset, cfg: &TrainConfig) -> Result<f64> {
    let d_now = distance_table(&online.embed_states()?, cfg.distance).g;
    let d_next = distance_table(&target.embed_states()?, cfg.distance).g;
    // tuples with equal (s, r, s', done) contribute identically
    let mut groups: BTreeMap<(usize, u64, usize, bool), f64> = BTreeMap::new();
    for t in ds.transitions() {
        *groups.entry((t.s, t.r.to_bits(), t.s_next, t.done)).or_default() += 1.0;
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let ScalingConfig { c_r, c_k } = cfg.scaling;
    let mut total = 0.0;
    for &((si, ri, ni, di), wi) in &groups {
        for &((sj, rj, nj, dj), wj) in &groups {
            let cont = if di || dj { 0.0 } else { c_k };
            let eps = c_r * (f64::from_bits(ri) - f64::from_bits(rj)).abs() + cont * d_next[(ni, nj)] - d_now[(si, sj)];
            total += wi * wj * eps;
        }
    }
    let n = ds.len() as f64;
    Ok(total / (n * n))
}

/// Mean residual at every checkpoint of a run.
pub fn residual_trace(history: &[Checkpoint], ds: &OfflineDataset, cfg: &TrainConfig) -> Result<Vec<(usize, f64)>> {
    history
        .iter()
        .map(|c| Ok((c.step, mean_residual(&c.online, &c.target, ds, cfg)?)))
        .collect()
}

fn log_row(step: usize, loss: f64, online: &Encoder, target: &Encoder, ds: &OfflineDataset, cfg: &TrainConfig) -> Result<LogRow> {
    Ok(LogRow {
        step,
        loss,
        mean_residual: mean_residual(online, target, ds, cfg)?,
        effective_dimension: effective_dimension(&online.embed_states()?, EFFECTIVE_DIM_DELTA),
    })
}

/// Trains a tabular encoder with plain SGD on the batch loss. The encoder is
/// initialized from the `(seed, "init")` stream and batches are drawn with
/// replacement from the `(seed, "batch")` stream.
pub fn train(ds: &OfflineDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.is_reward_scaled() {
        let (lo, hi) = ds
            .transitions()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), t| (l.min(t.r), h.max(t.r)));
        if lo < 0.0 || hi > 1.0 {
            return Err(invalid("reward-scaled training needs rewards in [0, 1]; normalize the dataset first"));
        }
    }
    let d = cfg.embedding_dim;
    let mut online = Encoder::tabular(ds.n_states(), d, cfg.distance, &mut rng::stream(cfg.seed, "init", 0))?;
    let mut target = TargetEncoder::new(&online, cfg.ema_coefficient);
    let mut batch_rng = rng::stream(cfg.seed, "batch", 0);
    let ts = ds.transitions();
    let mut log = Vec::new();
    let mut history = Vec::new();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut last_loss = f64::NAN;
    for step in 0..cfg.steps {
        batch.clear();
        batch.extend((0..cfg.batch_size).map(|_| ts[batch_rng.random_range(0..ts.len())]));
        let (loss, grad) = expectile_loss_batch(&online, &target.encoder, &batch, cfg).map_err(|e| Error::Divergence {
            step,
            msg: e.to_string(),
        })?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence {
                step,
                msg: format!("loss {loss}"),
            });
        }
        for (p, g) in online.params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        target.update(&online);
        last_loss = loss;
        let done = step + 1;
        if done % cfg.log_every == 0 || done == cfg.steps {
            let row = log_row(done, loss, &online, &target.encoder, ds, cfg).map_err(|e| Error::Divergence {
                step,
                msg: e.to_string(),
            })?;
            log.push(row);
            history.push(Checkpoint {
                step: done,
                online: online.clone(),
                target: target.encoder.clone(),
            });
        }
    }
    if cfg.steps == 0 {
        log.push(log_row(0, last_loss, &online, &target.encoder, ds, cfg)?);
        history.push(Checkpoint {
            step: 0,
            online: online.clone(),
            target: target.encoder.clone(),
        });
    }
    Ok(TrainOutcome {
        encoder: online,
        target,
        log,
        history,
    })
}

/// Relative error `|a - f| / max(|a|, |f|, 1e-12)` in the Euclidean norm between an
/// analytic gradient and central differences at step `h`.
pub fn gradient_check(
    online: &Encoder,
    target: &Encoder,
    batch: &[Transition],
    cfg: &TrainConfig,
    h: f64,
) -> Result<f64> {
    let (_, analytic) = expectile_loss_batch(online, target, batch, cfg)?;
    let mut probe = online.clone();
    let mut numeric = vec![0.0; analytic.len()];
    for k in 0..analytic.len() {
        let p0 = probe.params[k];
        probe.params[k] = p0 + h;
        let (lp, _) = expectile_loss_batch(&probe, target, batch, cfg)?;
        probe.params[k] = p0 - h;
        let (lm, _) = expectile_loss_batch(&probe, target, batch, cfg)?;
        probe.params[k] = p0;
        numeric[k] = (lp - lm) / (2.0 * h);
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, f)| a - f).collect();
    Ok(norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12))
}

/// Smallest distance of any rectified preactivation to its kink over the given
/// inputs; finite differences are only meaningful when this is not tiny.
pub fn kink_margin(enc: &Encoder, inputs: &[usize]) -> Result<f64> {
    let n = enc.input_dim();
    let mut margin = f64::INFINITY;
    let layers = enc.sizes().len() - 1;
    for &s in inputs {
        let c = enc.forward_cached(&one_hot(n, s))?;
        for (l, z) in c.pre_activations().iter().enumerate() {
            if l + 1 < layers || enc.kind == DistanceKind::Cosine {
                margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            }
        }
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_garnet, Policy};

    fn toy() -> OfflineDataset {
        let mdp = make_garnet(6, 2, 2, 0.0, 5).unwrap();
        crate::dataset::collect(&mdp, &Policy::uniform(6, 2), 200, 20, 1).unwrap().minmax_normalize()
    }

    #[test]
    fn symmetric_tau_is_half_mean_square() {
        let ds = toy();
        let cfg = TrainConfig::default();
        let e = Encoder::tabular(6, 3, DistanceKind::Cosine, &mut rng::from_seed(4)).unwrap();
        let batch = &ds.transitions()[..5];
        let (loss, _) = expectile_loss_batch(&e, &e, batch, &cfg).unwrap();
        let mut acc = 0.0;
        let n = 6;
        for ti in batch {
            for tj in batch {
                let d = |enc: &Encoder, a: usize, b: usize| {
                    cfg.distance.distance(&enc.forward(&one_hot(n, a)).unwrap(), &enc.forward(&one_hot(n, b)).unwrap())
                };
                let c = if ti.done || tj.done { 0.0 } else { cfg.scaling.c_k };
                let eps = cfg.scaling.c_r * (ti.r - tj.r).abs() + c * d(&e, ti.s_next, tj.s_next) - d(&e, ti.s, tj.s);
                acc += eps * eps;
            }
        }
        assert!((loss - 0.5 * acc / 25.0).abs() < 1e-14);
    }

    #[test]
    fn zero_residual_gives_zero_loss() {
        // every tuple is the same self-loop with zero reward
        let t = Transition { s: 0, a: 0, r: 0.0, s_next: 0, done: false };
        let e = Encoder::tabular(2, 2, DistanceKind::Cosine, &mut rng::from_seed(1)).unwrap();
        let (loss, grad) = expectile_loss_batch(&e, &e, &[t, t, t], &TrainConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let ds = toy();
        for (k, kind) in [DistanceKind::Cosine, DistanceKind::mico()].into_iter().enumerate() {
            let cfg = TrainConfig { tau: 0.8, distance: kind, ..Default::default() };
            let mut g = rng::stream(3, "grad", k as u64);
            let mut checked = 0;
            while checked < 5 {
                let e = Encoder::init(vec![6, 5, 3], kind, &mut g).unwrap();
                let t = Encoder::init(vec![6, 5, 3], kind, &mut g).unwrap();
                let batch: Vec<Transition> = (0..4).map(|_| ds.transitions()[g.random_range(0..ds.len())]).collect();
                if kink_margin(&e, &(0..6).collect::<Vec<_>>()).unwrap() < 1e-3 {
                    continue;
                }
                let err = gradient_check(&e, &t, &batch, &cfg, 1e-5).unwrap();
                assert!(err < 1e-4, "{kind:?}: relative error {err}");
                checked += 1;
            }
        }
    }

    #[test]
    fn ema_matches_recursion() {
        let a = Encoder::tabular(3, 2, DistanceKind::mico(), &mut rng::from_seed(1)).unwrap();
        let b = Encoder::tabular(3, 2, DistanceKind::mico(), &mut rng::from_seed(2)).unwrap();
        let mut t = TargetEncoder::new(&a, 0.1);
        for _ in 0..5 {
            t.update(&b);
        }
        let w = 0.9f64.powi(5);
        for ((x, y), z) in a.params.iter().zip(&b.params).zip(&t.encoder.params) {
            assert!((w * x + (1.0 - w) * y - z).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_steps_returns_the_initialization() {
        let ds = toy();
        let cfg = TrainConfig { steps: 0, ..Default::default() };
        let out = train(&ds, &cfg).unwrap();
        let init = Encoder::tabular(6, cfg.embedding_dim, cfg.distance, &mut rng::stream(0, "init", 0)).unwrap();
        assert_eq!(out.encoder, init);
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig { steps: 50, log_every: 10, ..Default::default() };
        let a = train(&toy(), &cfg).unwrap();
        let b = train(&toy(), &cfg).unwrap();
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(log_to_csv(&a.log), log_to_csv(&b.log));
    }

    #[test]
    fn raw_rewards_are_rejected_under_reward_scaling() {
        let ds = toy().map_rewards(|r| 3.0 * r).unwrap();
        assert!(train(&ds, &TrainConfig::default()).is_err());
    }

    #[test]
    fn collapsed_encoder_on_zero_rewards_has_zero_residual() {
        let ds = toy().map_rewards(|_| 0.0).unwrap();
        // all states share one embedding
        let mut p = vec![0.0; 6 * 2 + 2];
        p[12] = 1.0;
        let e = Encoder::new(vec![6, 2], p, DistanceKind::Cosine).unwrap();
        assert_eq!(mean_residual(&e, &e, &ds, &TrainConfig::default()).unwrap(), 0.0);
    }
}
