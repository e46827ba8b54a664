//! Analytic gradients of the click-through loss and the minibatch trainer.
//!
//! The loss only sees the final outputs `y(T)` of the query and document
//! sequences, so each sequence receives a single external error signal at its
//! last timestep. That signal is pushed back through the cosine and softmax
//! head, then through time along the recurrent weights and the cell-state
//! chain. Query and documents share one parameter set, so their gradients add.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{instance_loss, norm, SimilaritySet, MIN_NORM};
use crate::lstm::{dot, embed_sequence, init_parameters, Gate, LstmParameters, ModelDims, SequenceTrace};
use crate::text::{fill_negatives, hash_sequence, ClickThroughInstance, SparseTermVector, TrigramVocabulary};

/// Same shape as the parameters, one entry per trainable scalar.
pub type Gradients = LstmParameters;

/// Nesterov momentum state.
pub type Velocity = LstmParameters;

/// How far back in time error signals travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Truncation {
    #[default]
    Full,
    Steps(usize),
}

impl Truncation {
    fn first_step(self, len: usize) -> usize {
        match self {
            Truncation::Full => 0,
            Truncation::Steps(k) => len.saturating_sub(k),
        }
    }
}

impl std::str::FromStr for Truncation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(Truncation::Full);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Truncation::Steps(k)),
            _ => Err(format!("truncation depth must be \"full\" or a positive integer, got {s:?}")),
        }
    }
}

impl std::fmt::Display for Truncation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Truncation::Full => f.write_str("full"),
            Truncation::Steps(k) => write!(f, "{k}"),
        }
    }
}

/// Gradients of the instance loss with respect to the query embedding and
/// each candidate embedding. `y_docs[0]` is the clicked document.
pub fn loss_head_gradients(y_q: &[f64], y_docs: &[&[f64]], gamma: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let nq = norm(y_q);
    if !(nq > MIN_NORM) {
        return Err(Error::ZeroNorm(nq));
    }
    let mut d_norms = Vec::with_capacity(y_docs.len());
    let mut sims = Vec::with_capacity(y_docs.len());
    for d in y_docs {
        if d.len() != y_q.len() {
            return Err(Error::DimensionMismatch {
                expected: y_q.len(),
                actual: d.len(),
            });
        }
        let nd = norm(d);
        if !(nd > MIN_NORM) {
            return Err(Error::ZeroNorm(nd));
        }
        d_norms.push(nd);
        sims.push(dot(y_q, d) / (nq * nd));
    }

    // dL/dR_j = gamma (P_j - [j = clicked])
    let max = sims.iter().map(|s| gamma * s).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|s| (gamma * s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let d_sims: Vec<f64> = exps
        .iter()
        .enumerate()
        .map(|(j, e)| gamma * (e / total - if j == 0 { 1.0 } else { 0.0 }))
        .collect();

    let mut d_q = vec![0.0; y_q.len()];
    let mut d_docs = Vec::with_capacity(y_docs.len());
    for (j, d) in y_docs.iter().enumerate() {
        let (r, nd, g) = (sims[j], d_norms[j], d_sims[j]);
        // dR/dq = d/(|q||d|) - R q/|q|^2, and symmetrically for d.
        for k in 0..y_q.len() {
            d_q[k] += g * (d[k] / (nq * nd) - r * y_q[k] / (nq * nq));
        }
        d_docs.push(
            (0..y_q.len())
                .map(|k| g * (y_q[k] / (nq * nd) - r * d[k] / (nd * nd)))
                .collect(),
        );
    }
    Ok((d_q, d_docs))
}

/// Backpropagates `dl_dy_last`, the only external error signal, from the
/// last timestep of `trace`.
pub fn backward_sequence(
    params: &LstmParameters,
    trace: &SequenceTrace,
    dl_dy_last: &[f64],
    truncation: Truncation,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros(params.dims());
    backward_sequence_into(params, trace, dl_dy_last, truncation, &mut grads)?;
    Ok(grads)
}

/// As [`backward_sequence`], adding into `grads`.
pub fn backward_sequence_into(
    params: &LstmParameters,
    trace: &SequenceTrace,
    dl_dy_last: &[f64],
    truncation: Truncation,
    grads: &mut Gradients,
) -> Result<()> {
    let n = params.dims().ncell;
    if dl_dy_last.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: dl_dy_last.len(),
        });
    }
    if trace.is_empty() {
        return Err(Error::EmptySequence);
    }
    if dl_dy_last.iter().all(|&v| v == 0.0) {
        return Ok(());
    }

    const O: usize = Gate::Output as usize;
    const F: usize = Gate::Forget as usize;
    const I: usize = Gate::Input as usize;
    const G: usize = Gate::Cell as usize;

    let mut dy = dl_dy_last.to_vec();
    let mut dc_carry = vec![0.0; n];
    let mut d_pre: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let mut dc = vec![0.0; n];

    let first = truncation.first_step(trace.len());
    for t in (first..trace.len()).rev() {
        let s = &trace.snapshots[t];
        let x = &trace.inputs[t];
        let (y_prev, c_prev) = trace.previous_state(t);
        let (p_o, p_f, p_i) = (&params.peephole[O], &params.peephole[F], &params.peephole[I]);

        for k in 0..n {
            let da_o = dy[k] * s.h_c[k] * s.o[k] * (1.0 - s.o[k]);
            let dck = dc_carry[k] + dy[k] * s.o[k] * (1.0 - s.h_c[k] * s.h_c[k]) + da_o * p_o[k];
            d_pre[O][k] = da_o;
            d_pre[G][k] = dck * s.i[k] * (1.0 - s.y_g[k] * s.y_g[k]);
            d_pre[I][k] = dck * s.y_g[k] * s.i[k] * (1.0 - s.i[k]);
            d_pre[F][k] = dck * c_prev[k] * s.f[k] * (1.0 - s.f[k]);
            dc[k] = dck;
        }

        for (g, d) in d_pre.iter().enumerate() {
            grads.input[g].add_outer_sparse(d, x);
            grads.recurrent[g].add_outer(d, y_prev);
            for (b, v) in grads.bias[g].iter_mut().zip(d) {
                *b += v;
            }
        }
        for k in 0..n {
            grads.peephole[O][k] += d_pre[O][k] * s.c[k];
            grads.peephole[F][k] += d_pre[F][k] * c_prev[k];
            grads.peephole[I][k] += d_pre[I][k] * c_prev[k];
        }

        if t > first {
            dy.fill(0.0);
            for (rec, d) in params.recurrent.iter().zip(&d_pre) {
                rec.mul_t_add(d, &mut dy);
            }
            for k in 0..n {
                dc_carry[k] = dc[k] * s.f[k] + d_pre[I][k] * p_i[k] + d_pre[F][k] * p_f[k];
            }
        }
    }

    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(())
}

/// An instance with every text already hashed.
#[derive(Debug, Clone)]
pub struct HashedInstance {
    pub query: Vec<SparseTermVector>,
    /// Clicked document first, then negatives.
    pub docs: Vec<Vec<SparseTermVector>>,
}

impl HashedInstance {
    pub fn new(instance: &ClickThroughInstance, vocab: &TrigramVocabulary) -> Result<Self> {
        Ok(HashedInstance {
            query: hash_sequence(&instance.query, vocab)?,
            docs: std::iter::once(&instance.clicked)
                .chain(&instance.negatives)
                .map(|d| hash_sequence(d, vocab))
                .collect::<Result<_>>()?,
        })
    }
}

/// Adds one instance's gradient into `grads` and returns its loss.
pub fn accumulate_instance_gradients(
    params: &LstmParameters,
    instance: &HashedInstance,
    gamma: f64,
    truncation: Truncation,
    grads: &mut Gradients,
) -> Result<f64> {
    let q = embed_sequence(params, &instance.query)?;
    let docs: Vec<SequenceTrace> = instance
        .docs
        .iter()
        .map(|d| embed_sequence(params, d))
        .collect::<Result<_>>()?;
    let y_docs: Vec<&[f64]> = docs.iter().map(|d| d.embedding()).collect();
    let (d_q, d_docs) = loss_head_gradients(q.embedding(), &y_docs, gamma)?;

    let sims: Vec<f64> = y_docs
        .iter()
        .map(|d| crate::loss::cosine_similarity(q.embedding(), d))
        .collect::<Result<_>>()?;
    let loss = instance_loss(&SimilaritySet::new(sims[0], sims[1..].to_vec(), gamma)?);

    backward_sequence_into(params, &q, &d_q, truncation, grads)?;
    for (trace, seed) in docs.iter().zip(&d_docs) {
        backward_sequence_into(params, trace, seed, truncation, grads)?;
    }
    Ok(loss)
}

/// Gradient of one instance's loss with respect to the shared parameters.
pub fn instance_gradients(
    params: &LstmParameters,
    instance: &ClickThroughInstance,
    vocab: &TrigramVocabulary,
    gamma: f64,
    truncation: Truncation,
) -> Result<Gradients> {
    let hashed = HashedInstance::new(instance, vocab)?;
    let mut grads = Gradients::zeros(params.dims());
    accumulate_instance_gradients(params, &hashed, gamma, truncation, &mut grads)?;
    Ok(grads)
}

/// One Nesterov step in lookahead form:
/// `v ← mu·v − lr·∇L(θ + mu·v)`, `θ ← θ + v`.
///
/// On a non-finite result both `params` and `velocity` are left untouched.
pub fn nesterov_update<F>(
    params: &mut LstmParameters,
    velocity: &mut Velocity,
    mut grad_fn: F,
    lr: f64,
    mu: f64,
) -> Result<()>
where
    F: FnMut(&LstmParameters) -> Result<Gradients>,
{
    if params.dims() != velocity.dims() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: velocity.len(),
        });
    }
    let mut lookahead = params.clone();
    lookahead.add_scaled(velocity, mu);
    let grad = grad_fn(&lookahead)?;

    let mut new_velocity = velocity.clone();
    new_velocity.scale(mu);
    new_velocity.add_scaled(&grad, -lr);
    let mut new_params = params.clone();
    new_params.add_scaled(&new_velocity, 1.0);
    if !new_params.is_finite() || !new_velocity.is_finite() {
        return Err(Error::NonFinite("parameter update".into()));
    }
    *params = new_params;
    *velocity = new_velocity;
    Ok(())
}

/// Rescales `grads` to `max_norm` if its global norm exceeds it. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let n = grads.norm();
    if n > max_norm {
        grads.scale(max_norm / n);
    }
    n
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Negatives sampled for instances that arrive without any.
    pub n_negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub truncation: Truncation,
    pub clip_norm: Option<f64>,
    pub max_sequence_length: usize,
    pub ncell: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            n_negatives: 4,
            batch_size: 100,
            epochs: 10,
            gamma: 1.0,
            truncation: Truncation::Full,
            clip_norm: Some(5.0),
            max_sequence_length: 64,
            ncell: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.n_negatives == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("n_negatives, batch_size and epochs must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.truncation == Truncation::Steps(0) {
            return bad("truncation depth must be at least 1".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip norm must be positive, got {c}"));
            }
        }
        if self.max_sequence_length == 0 || self.ncell == 0 {
            return bad("max_sequence_length and ncell must be at least 1".into());
        }
        Ok(())
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Summed loss over the batch, at the lookahead point.
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

impl std::fmt::Display for BatchRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.epoch, self.batch, self.loss, self.grad_norm)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LstmParameters,
    pub velocity: Velocity,
    /// Parameter updates applied.
    pub steps: u64,
    pub log: Vec<BatchRecord>,
}

impl TrainOutcome {
    /// Mean batch loss for each epoch.
    pub fn epoch_mean_losses(&self) -> Vec<f64> {
        let epochs = self.log.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let losses: Vec<f64> = self.log.iter().filter(|r| r.epoch == e).map(|r| r.loss).collect();
                losses.iter().sum::<f64>() / losses.len() as f64
            })
            .collect()
    }

    /// The tab-separated loss log, one line per batch.
    pub fn log_string(&self) -> String {
        self.log.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// Truncates over-long sequences and samples negatives for instances without
/// any. Returns the prepared training set.
pub fn prepare_instances(data: &[ClickThroughInstance], config: &TrainConfig) -> Result<Vec<ClickThroughInstance>> {
    let max = config.max_sequence_length;
    let mut truncated = 0usize;
    let mut out: Vec<ClickThroughInstance> = data
        .iter()
        .map(|inst| {
            let mut inst = inst.clone();
            let mut cut = |w: &mut Vec<String>| {
                if w.len() > max {
                    w.truncate(max);
                    truncated += 1;
                }
            };
            cut(&mut inst.query);
            cut(&mut inst.clicked);
            inst.negatives.iter_mut().for_each(&mut cut);
            inst
        })
        .collect();
    if truncated > 0 {
        warn!("truncated {truncated} sequences to {max} words");
    }
    fill_negatives(&mut out, config.n_negatives, config.seed)?;
    Ok(out)
}

/// Minibatch training from freshly initialized parameters.
pub fn train(config: &TrainConfig, data: &[ClickThroughInstance], vocab: &TrigramVocabulary) -> Result<TrainOutcome> {
    let dims = ModelDims::new(vocab.dimension(), config.ncell)?;
    let params = init_parameters(dims, config.seed);
    let velocity = Velocity::zeros(dims);
    train_from(config, data, vocab, params, velocity)
}

/// Minibatch training continuing from the given parameters and velocity.
///
/// Each epoch reshuffles the data with a seeded generator. Each minibatch
/// sums per-instance gradients in instance order into one update.
pub fn train_from(
    config: &TrainConfig,
    data: &[ClickThroughInstance],
    vocab: &TrigramVocabulary,
    mut params: LstmParameters,
    mut velocity: Velocity,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no training instances".into()));
    }
    if params.dims().input_dim != vocab.dimension() {
        return Err(Error::DimensionMismatch {
            expected: vocab.dimension(),
            actual: params.dims().input_dim,
        });
    }
    let prepared = prepare_instances(data, config)?;
    let hashed: Vec<HashedInstance> = prepared
        .iter()
        .enumerate()
        .map(|(r, i)| HashedInstance::new(i, vocab).map_err(|e| e.at_instance(r)))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..hashed.len()).collect();
    let mut log = Vec::new();
    let mut steps = 0u64;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, members) in order.chunks(config.batch_size).enumerate() {
            let diverged = |reason: String| Error::Diverged { epoch, batch, reason };
            let mut batch_loss = 0.0;
            let mut grad_norm = 0.0;
            let grad_fn = |at: &LstmParameters| -> Result<Gradients> {
                let mut grads = Gradients::zeros(at.dims());
                batch_loss = 0.0;
                for &r in members {
                    batch_loss += accumulate_instance_gradients(at, &hashed[r], config.gamma, config.truncation, &mut grads)
                        .map_err(|e| e.at_instance(r))?;
                }
                grad_norm = match config.clip_norm {
                    Some(c) => clip_global_norm(&mut grads, c),
                    None => grads.norm(),
                };
                Ok(grads)
            };
            nesterov_update(&mut params, &mut velocity, grad_fn, config.learning_rate, config.momentum)
                .map_err(|e| diverged(e.to_string()))?;
            if !batch_loss.is_finite() {
                return Err(diverged(format!("loss {batch_loss}")));
            }
            steps += 1;
            log.push(BatchRecord {
                epoch,
                batch,
                loss: batch_loss,
                grad_norm,
            });
        }
    }
    Ok(TrainOutcome {
        params,
        velocity,
        steps,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::init_parameters;
    use crate::text::tokenize;

    fn dims(d: usize, n: usize) -> ModelDims {
        ModelDims::new(d, n).unwrap()
    }

    #[test]
    fn single_candidate_head_is_flat() {
        let (dq, dd) = loss_head_gradients(&[1.0, 0.0], &[&[0.3, 0.4]], 1.0).unwrap();
        assert!(dq.iter().chain(&dd[0]).all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_gradient_by_hand() {
        // With one negative at R = 0 and gamma = 1, dL/dR_clicked = P_0 - 1.
        let q = [1.0, 0.0];
        let clicked = [0.0, 1.0];
        let negative = [0.0, -1.0];
        let (dq, _) = loss_head_gradients(&q, &[&clicked, &negative], 1.0).unwrap();
        // dR_clicked/dq = (0, 1), dR_negative/dq = (0, -1), both at R = 0.
        let expected = (0.5 - 1.0) * 1.0 - 0.5 * 1.0;
        assert!(dq[0].abs() < 1e-15);
        assert!((dq[1] - expected).abs() < 1e-15);
    }

    #[test]
    fn head_rejects_zero_norm() {
        assert!(loss_head_gradients(&[0.0, 0.0], &[&[1.0, 0.0]], 1.0).is_err());
        assert!(loss_head_gradients(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 0.0]], 1.0).is_err());
    }

    fn sparse(dim: usize, idx: &[usize]) -> SparseTermVector {
        SparseTermVector::from_pairs(dim, idx.iter().map(|&i| (i, 1))).unwrap()
    }

    fn random_trace(seed: u64) -> (LstmParameters, SequenceTrace) {
        let p = init_parameters(dims(12, 5), seed);
        let seq: Vec<_> = (0..6).map(|t| sparse(12, &[t, (t * 5 + 1) % 12])).collect();
        let trace = embed_sequence(&p, &seq).unwrap();
        (p, trace)
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let (p, trace) = random_trace(4);
        let g = backward_sequence(&p, &trace, &[0.0; 5], Truncation::Full).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deep_truncation_equals_full() {
        let (p, trace) = random_trace(5);
        let seed = [0.3, -0.1, 0.7, 0.0, 1.1];
        let full = backward_sequence(&p, &trace, &seed, Truncation::Full).unwrap();
        for k in [6, 7, 100] {
            assert_eq!(backward_sequence(&p, &trace, &seed, Truncation::Steps(k)).unwrap(), full);
        }
        let short = backward_sequence(&p, &trace, &seed, Truncation::Steps(2)).unwrap();
        assert_ne!(short, full);
    }

    #[test]
    fn one_step_truncation_touches_only_last_input() {
        let (p, trace) = random_trace(6);
        let g = backward_sequence(&p, &trace, &[1.0; 5], Truncation::Steps(1)).unwrap();
        let last: Vec<usize> = trace.inputs[5].pairs().iter().map(|&(i, _)| i).collect();
        for m in &g.input {
            for c in 0..12 {
                let touched = (0..5).any(|r| m.get(r, c) != 0.0);
                assert_eq!(touched, last.contains(&c), "column {c}");
            }
        }
    }

    #[test]
    fn symmetric_documents_cancel() {
        let t = tokenize("red shoes sale");
        let inst = ClickThroughInstance {
            query: tokenize("shoes"),
            clicked: t.clone(),
            negatives: vec![t.clone(), t],
        };
        let vocab = TrigramVocabulary::build(inst.sequences()).unwrap();
        let p = init_parameters(dims(vocab.dimension(), 4), 2);
        let g = instance_gradients(&p, &inst, &vocab, 1.0, Truncation::Full).unwrap();
        // Every candidate is identical, so the head gradient is zero everywhere.
        assert!(g.norm() < 1e-14, "norm {}", g.norm());
    }

    #[test]
    fn gamma_scales_head_at_symmetric_point() {
        let q = [0.2, 0.5, -0.1];
        let d = [0.4, -0.3, 0.9];
        let (dq1, dd1) = loss_head_gradients(&q, &[&d, &d], 1.0).unwrap();
        let (dq2, dd2) = loss_head_gradients(&q, &[&d, &d], 2.0).unwrap();
        // Equal similarities: P = 1/2 for any gamma, so dL/dR_j = gamma (1/2 - [j = 0]).
        for (a, b) in dd1.iter().flatten().zip(dd2.iter().flatten()) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
        for (a, b) in dq1.iter().zip(&dq2) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
        assert!(dd1[0].iter().zip(&dd1[1]).all(|(a, b)| (a + b).abs() < 1e-15));
    }

    fn quadratic_setup() -> (LstmParameters, Velocity) {
        let mut p = LstmParameters::zeros(dims(1, 1));
        p.bias[0][0] = 1.0;
        (p, Velocity::zeros(dims(1, 1)))
    }

    fn quadratic_grad(at: &LstmParameters) -> Result<Gradients> {
        // L = theta^2 / 2 on every coordinate.
        Ok(at.clone())
    }

    #[test]
    fn nesterov_by_hand() {
        let (mut p, mut v) = quadratic_setup();
        nesterov_update(&mut p, &mut v, quadratic_grad, 0.1, 0.9).unwrap();
        assert!((v.bias[0][0] + 0.1).abs() < 1e-15);
        assert!((p.bias[0][0] - 0.9).abs() < 1e-15);

        // Second step uses the lookahead point 0.9 + 0.9 * -0.1 = 0.81.
        nesterov_update(&mut p, &mut v, quadratic_grad, 0.1, 0.9).unwrap();
        assert!((v.bias[0][0] - (0.9 * -0.1 - 0.1 * 0.81)).abs() < 1e-15);
    }

    #[test]
    fn nesterov_reductions() {
        let (p0, v0) = quadratic_setup();
        let (mut p, mut v) = (p0.clone(), v0.clone());
        nesterov_update(&mut p, &mut v, quadratic_grad, 0.25, 0.0).unwrap();
        assert_eq!(p.bias[0][0], 1.0 - 0.25 * 1.0);

        let (mut p, mut v) = (p0.clone(), v0);
        nesterov_update(&mut p, &mut v, |at| Ok(Gradients::zeros(at.dims())), 0.5, 0.9).unwrap();
        assert_eq!(p, p0);
    }

    #[test]
    fn nesterov_rejects_non_finite() {
        let (mut p, mut v) = quadratic_setup();
        let before = p.clone();
        let err = nesterov_update(
            &mut p,
            &mut v,
            |at| {
                let mut g = at.clone();
                g.fill(f64::INFINITY);
                Ok(g)
            },
            0.1,
            0.9,
        );
        assert!(err.is_err());
        assert_eq!(p, before);
    }

    #[test]
    fn clipping_preserves_direction() {
        let (p, trace) = random_trace(8);
        let mut g = backward_sequence(&p, &trace, &[3.0, -2.0, 5.0, 1.0, 4.0], Truncation::Full).unwrap();
        let original = g.clone();
        let before = clip_global_norm(&mut g, 0.01);
        assert!(before > 0.01);
        assert!((g.norm() - 0.01).abs() < 1e-12);
        let cos = g.dot(&original) / (g.norm() * original.norm());
        assert!((cos - 1.0).abs() < 1e-12);

        let mut small = original.clone();
        clip_global_norm(&mut small, before * 2.0);
        assert_eq!(small, original);
    }

    #[test]
    fn truncation_parses() {
        assert_eq!("full".parse::<Truncation>().unwrap(), Truncation::Full);
        assert_eq!("7".parse::<Truncation>().unwrap(), Truncation::Steps(7));
        assert!("0".parse::<Truncation>().is_err());
        assert!("deep".parse::<Truncation>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { gamma: 0.0, ..Default::default() },
            TrainConfig { clip_norm: Some(0.0), ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn prepare_truncates_and_samples() {
        let mut data: Vec<ClickThroughInstance> = ["alpha beta gamma delta", "one two", "x y z", "p q"]
            .iter()
            .enumerate()
            .map(|(i, t)| ClickThroughInstance::new(vec![format!("q{i}")], tokenize(t), vec![]).unwrap())
            .collect();
        data[0].query = tokenize("a b c d e");
        let config = TrainConfig {
            max_sequence_length: 3,
            n_negatives: 2,
            ..Default::default()
        };
        let prepared = prepare_instances(&data, &config).unwrap();
        assert_eq!(prepared[0].query.len(), 3);
        assert_eq!(prepared[0].clicked, tokenize("alpha beta gamma"));
        assert!(prepared.iter().all(|i| i.negatives.len() == 2));
    }
}
