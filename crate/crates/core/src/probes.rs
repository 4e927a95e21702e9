//! The three probe families and their training.
//!
//! - Concept vector: a direction `v` trained on (positive, negative) pairs
//!   with the pairwise hinge `ReLU(v·r⁻ − v·r⁺)` plus `λ‖v‖₁`. Instances are
//!   classified by comparing `v·r` with a midpoint threshold calibrated on
//!   the training pairs.
//! - Logistic: `σ(v·r + b)`, class-balanced log loss plus `λ‖(v, b)‖₁`.
//! - Sequence: `S(R) = σ(v₂ᵀ ReLU(Rᵀv₁ + b₁) + b₂)` over a whole `T × D`
//!   layer matrix `R` (rows are tokens), same loss as logistic.
//!
//! All arithmetic is `f64`. Inputs may be `f32` or `f64` slices; sequence
//! inputs are flat row-major `T × D` slices.
//!
//! Losses return the full subgradient with `sign(0) = 0`. A hinge pair
//! counts as violated when `v·r⁻ ≥ v·r⁺`, so the all-zero start still gets
//! a descent direction. Training uses seeded minibatch SGD; by default the
//! L1 term is applied as a proximal soft-threshold after each data step,
//! which is what produces exact zeros. [`L1Step::Subgradient`] gives the
//! plain subgradient step instead.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Element type accepted by the probes.
pub trait Scalar: Copy + Into<f64> + Send + Sync {}
impl<T: Copy + Into<f64> + Send + Sync> Scalar for T {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("training data holds only one class")]
    SingleClassData,
    #[error("no training pairs")]
    EmptyTrainingSet,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("invalid hyperparameters: {0}")]
    BadHyper(String),
    #[error("cannot parse probe file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ConceptVector,
    Logistic,
    Sequence,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ConceptVector, Method::Logistic, Method::Sequence];

    pub fn slug(self) -> &'static str {
        match self {
            Method::ConceptVector => "concept_vector",
            Method::Logistic => "logistic",
            Method::Sequence => "sequence",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Method::ConceptVector => "Concept Vector",
            Method::Logistic => "Log. Regression",
            Method::Sequence => "Sequence Probe",
        }
    }

    pub fn code(self) -> u64 {
        self as u64
    }

    /// Whether the method reads the whole layer matrix rather than the
    /// move-token vector.
    pub fn uses_sequence(self) -> bool {
        self == Method::Sequence
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let k = s.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match k.as_str() {
            "concept_vector" | "cv" | "vector" => Method::ConceptVector,
            "logistic" | "lr" | "log_regression" => Method::Logistic,
            "sequence" | "seq" => Method::Sequence,
            _ => return Err(format!("unknown method {s:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Step {
    /// Soft-threshold by `lr·λ` after the data-gradient step.
    Proximal,
    /// Add `λ·sign(θ)` to the gradient.
    Subgradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub lambda: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Consecutive low-improvement epochs before stopping.
    pub patience: usize,
    pub l1_step: L1Step,
    /// Cap on training pairs for the concept vector.
    pub max_pairs: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 1e-3,
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 200,
            seed: 0,
            tolerance: 1e-6,
            patience: 10,
            l1_step: L1Step::Proximal,
            max_pairs: 4096,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::BadHyper(m.to_string()));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return bad("tolerance must be non-negative");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if self.max_pairs == 0 {
            return bad("max_pairs must be positive");
        }
        Ok(())
    }

    /// Stable textual fingerprint, hashed into result files.
    pub fn canonical(&self) -> String {
        format!(
            "lambda={:?};batch={};lr={:?};epochs={};tol={:?};patience={};l1={:?};max_pairs={}",
            self.lambda,
            self.batch_size,
            self.learning_rate,
            self.epochs,
            self.tolerance,
            self.patience,
            self.l1_step,
            self.max_pairs
        )
    }
}

fn dot<F: Scalar>(w: &[f64], x: &[F]) -> f64 {
    w.iter().zip(x).map(|(a, &b)| a * b.into()).sum()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn l1(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x.abs()).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_dims<F>(rows: &[&[F]], d: usize, what: &str) -> Result<(), ProbeError> {
    match rows.iter().position(|r| r.len() != d) {
        Some(i) => Err(ProbeError::DimensionMismatch(format!(
            "{what} {i} has length {}, expected {d}",
            rows[i].len()
        ))),
        None => Ok(()),
    }
}

fn common_dim<F>(pos: &[&[F]], neg: &[&[F]]) -> Result<usize, ProbeError> {
    let d = pos.first().or(neg.first()).map(|r| r.len()).unwrap_or(0);
    check_dims(pos, d, "positive")?;
    check_dims(neg, d, "negative")?;
    Ok(d)
}

// ---------------------------------------------------------------- probes

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptVectorProbe {
    pub v: Vec<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    pub v: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceProbe {
    pub v1: Vec<f64>,
    pub b1: Vec<f64>,
    pub v2: Vec<f64>,
    pub b2: f64,
}

impl ConceptVectorProbe {
    pub fn score<F: Scalar>(&self, r: &[F]) -> f64 {
        dot(&self.v, r)
    }

    pub fn predict<F: Scalar>(&self, r: &[F]) -> bool {
        self.score(r) > self.threshold
    }

    pub fn nonzeros(&self, eps: f64) -> usize {
        self.v.iter().filter(|x| x.abs() > eps).count()
    }
}

impl LogisticProbe {
    pub fn zeros(dim: usize) -> LogisticProbe {
        LogisticProbe { v: vec![0.0; dim], b: 0.0 }
    }

    pub fn logit<F: Scalar>(&self, r: &[F]) -> f64 {
        dot(&self.v, r) + self.b
    }

    pub fn probability<F: Scalar>(&self, r: &[F]) -> f64 {
        sigmoid(self.logit(r))
    }

    pub fn predict<F: Scalar>(&self, r: &[F]) -> bool {
        self.probability(r) > 0.5
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.v.clone();
        out.push(self.b);
        out
    }

    pub fn from_flat(theta: &[f64]) -> LogisticProbe {
        let (v, b) = theta.split_at(theta.len() - 1);
        LogisticProbe { v: v.to_vec(), b: b[0] }
    }
}

impl SequenceProbe {
    pub fn zeros(tokens: usize, dim: usize) -> SequenceProbe {
        SequenceProbe {
            v1: vec![0.0; tokens],
            b1: vec![0.0; dim],
            v2: vec![0.0; dim],
            b2: 0.0,
        }
    }

    /// Seeded uniform(±1/√max(T, D)) for `v1` and `v2`; biases zero.
    pub fn init(tokens: usize, dim: usize, seed: u64) -> SequenceProbe {
        let s = 1.0 / (tokens.max(dim) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SequenceProbe::zeros(tokens, dim);
        for x in p.v1.iter_mut().chain(p.v2.iter_mut()) {
            *x = rng.random_range(-s..s);
        }
        p
    }

    pub fn tokens(&self) -> usize {
        self.v1.len()
    }

    pub fn dim(&self) -> usize {
        self.b1.len()
    }

    /// Hidden pre-activations `Rᵀv₁ + b₁`.
    fn hidden<F: Scalar>(&self, r: &[F]) -> Vec<f64> {
        let d = self.dim();
        let mut z = self.b1.clone();
        for (t, &w) in self.v1.iter().enumerate() {
            for (zj, &x) in z.iter_mut().zip(&r[t * d..(t + 1) * d]) {
                *zj += w * x.into();
            }
        }
        z
    }

    pub fn logit<F: Scalar>(&self, r: &[F]) -> f64 {
        let z = self.hidden(r);
        z.iter().zip(&self.v2).map(|(z, w)| z.max(0.0) * w).sum::<f64>() + self.b2
    }

    pub fn probability<F: Scalar>(&self, r: &[F]) -> f64 {
        sigmoid(self.logit(r))
    }

    pub fn predict<F: Scalar>(&self, r: &[F]) -> bool {
        self.probability(r) > 0.5
    }

    /// Layout: `v1 (T) | b1 (D) | v2 (D) | b2`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.tokens() + 2 * self.dim() + 1);
        out.extend_from_slice(&self.v1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.v2);
        out.push(self.b2);
        out
    }

    pub fn from_flat(tokens: usize, dim: usize, theta: &[f64]) -> SequenceProbe {
        assert_eq!(theta.len(), tokens + 2 * dim + 1);
        SequenceProbe {
            v1: theta[..tokens].to_vec(),
            b1: theta[tokens..tokens + dim].to_vec(),
            v2: theta[tokens + dim..tokens + 2 * dim].to_vec(),
            b2: theta[tokens + 2 * dim],
        }
    }
}

// ---------------------------------------------------------------- losses

fn hinge_data<F: Scalar>(v: &[f64], pairs: &[(&[F], &[F])]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; v.len()];
    let scale = 1.0 / pairs.len() as f64;
    for (pos, neg) in pairs {
        let margin = dot(v, neg) - dot(v, pos);
        // ReLU(0) = 0 contributes no loss but still counts as violated
        if margin >= 0.0 {
            loss += margin * scale;
            for ((g, &p), &n) in grad.iter_mut().zip(*pos).zip(*neg) {
                *g += (n.into() - p.into()) * scale;
            }
        }
    }
    (loss, grad)
}

fn check_pairs<F>(v_len: usize, pairs: &[(&[F], &[F])]) -> Result<(), ProbeError> {
    if pairs.is_empty() {
        return Err(ProbeError::EmptyTrainingSet);
    }
    for (i, (p, n)) in pairs.iter().enumerate() {
        if p.len() != v_len || n.len() != v_len {
            return Err(ProbeError::DimensionMismatch(format!(
                "pair {i} has lengths ({}, {}), expected {v_len}",
                p.len(),
                n.len()
            )));
        }
    }
    Ok(())
}

/// `λ‖v‖₁ + mean ReLU(v·r⁻ − v·r⁺)` and its subgradient. Pairs are
/// `(r⁺, r⁻)`.
pub fn loss_concept_vector<F: Scalar>(
    v: &[f64],
    pairs: &[(&[F], &[F])],
    lambda: f64,
) -> Result<(f64, Vec<f64>), ProbeError> {
    check_pairs(v.len(), pairs)?;
    let (data, mut grad) = hinge_data(v, pairs);
    for (g, &x) in grad.iter_mut().zip(v) {
        *g += lambda * sign(x);
    }
    Ok((data + lambda * l1(v), grad))
}

/// Class-balanced negative log likelihood and its gradient for any
/// `logit(θ, r) -> (s, ds/dθ accumulation)`.
fn balanced_log_loss<F: Scalar>(
    pos: &[&[F]],
    neg: &[&[F]],
    n_params: usize,
    mut logit_and_backprop: impl FnMut(&[F], Option<(f64, &mut [f64])>) -> f64,
) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    let wp = 0.5 / pos.len() as f64;
    let wn = 0.5 / neg.len() as f64;
    for r in pos {
        let s = logit_and_backprop(r, None);
        loss += wp * softplus(-s);
        logit_and_backprop(r, Some((wp * (sigmoid(s) - 1.0), &mut grad)));
    }
    for r in neg {
        let s = logit_and_backprop(r, None);
        loss += wn * softplus(s);
        logit_and_backprop(r, Some((wn * sigmoid(s), &mut grad)));
    }
    (loss, grad)
}

fn logistic_data<F: Scalar>(p: &LogisticProbe, pos: &[&[F]], neg: &[&[F]]) -> (f64, Vec<f64>) {
    let d = p.v.len();
    balanced_log_loss(pos, neg, d + 1, |r, back| match back {
        None => p.logit(r),
        Some((gs, grad)) => {
            for (g, &x) in grad[..d].iter_mut().zip(r) {
                *g += gs * x.into();
            }
            grad[d] += gs;
            0.0
        }
    })
}

fn sequence_data<F: Scalar>(p: &SequenceProbe, pos: &[&[F]], neg: &[&[F]]) -> (f64, Vec<f64>) {
    let (t, d) = (p.tokens(), p.dim());
    balanced_log_loss(pos, neg, t + 2 * d + 1, |r, back| {
        let z = p.hidden(r);
        match back {
            None => z.iter().zip(&p.v2).map(|(z, w)| z.max(0.0) * w).sum::<f64>() + p.b2,
            Some((gs, grad)) => {
                let (gv1, rest) = grad.split_at_mut(t);
                let (gb1, rest) = rest.split_at_mut(d);
                let (gv2, gb2) = rest.split_at_mut(d);
                gb2[0] += gs;
                let mut gz = vec![0.0; d];
                for j in 0..d {
                    if z[j] > 0.0 {
                        gv2[j] += gs * z[j];
                        gz[j] = gs * p.v2[j];
                        gb1[j] += gz[j];
                    }
                }
                for (tt, g) in gv1.iter_mut().enumerate() {
                    *g += dot(&gz, &r[tt * d..(tt + 1) * d]);
                }
                0.0
            }
        }
    })
}

fn check_classes<F>(pos: &[&[F]], neg: &[&[F]], d: usize) -> Result<(), ProbeError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(ProbeError::SingleClassData);
    }
    check_dims(pos, d, "positive")?;
    check_dims(neg, d, "negative")
}

/// `λ‖(v, b)‖₁ − ½[mean log σ(v·r⁺ + b) + mean log(1 − σ(v·r⁻ + b))]`.
/// With equal class counts `B` this is the usual `1/(2B)` sum.
pub fn loss_logistic<F: Scalar>(
    p: &LogisticProbe,
    pos: &[&[F]],
    neg: &[&[F]],
    lambda: f64,
) -> Result<(f64, LogisticProbe), ProbeError> {
    check_classes(pos, neg, p.v.len())?;
    let theta = p.flat();
    let (data, mut grad) = logistic_data(p, pos, neg);
    for (g, &x) in grad.iter_mut().zip(&theta) {
        *g += lambda * sign(x);
    }
    Ok((data + lambda * l1(&theta), LogisticProbe::from_flat(&grad)))
}

/// Same loss as [`loss_logistic`] with `S(R)` in place of `σ(v·r + b)`.
/// Each input is a flat `T × D` row-major matrix.
pub fn loss_sequence<F: Scalar>(
    p: &SequenceProbe,
    pos: &[&[F]],
    neg: &[&[F]],
    lambda: f64,
) -> Result<(f64, SequenceProbe), ProbeError> {
    check_classes(pos, neg, p.tokens() * p.dim())?;
    let theta = p.flat();
    let (data, mut grad) = sequence_data(p, pos, neg);
    for (g, &x) in grad.iter_mut().zip(&theta) {
        *g += lambda * sign(x);
    }
    Ok((
        data + lambda * l1(&theta),
        SequenceProbe::from_flat(p.tokens(), p.dim(), &grad),
    ))
}

// ---------------------------------------------------------------- training

/// One minibatch as index lists into the positive and negative sets (or
/// into the pair list, with `neg` unused).
struct Batch {
    pos: Vec<usize>,
    neg: Vec<usize>,
}

/// `m = min(B, max(|P|, |N|))` of each class per batch; the smaller class
/// cycles through its permutation.
fn balanced_batches(n_pos: usize, n_neg: usize, b: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
    let mut pp: Vec<usize> = (0..n_pos).collect();
    let mut nn: Vec<usize> = (0..n_neg).collect();
    pp.shuffle(rng);
    nn.shuffle(rng);
    let big = n_pos.max(n_neg);
    let m = b.min(big);
    let n_batches = big.div_ceil(m);
    (0..n_batches)
        .map(|k| Batch {
            pos: (0..m).map(|j| pp[(k * m + j) % n_pos]).collect(),
            neg: (0..m).map(|j| nn[(k * m + j) % n_neg]).collect(),
        })
        .collect()
}

fn pair_batches(n: usize, b: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(b)
        .map(|c| Batch {
            pos: c.to_vec(),
            neg: Vec::new(),
        })
        .collect()
}

/// Seeded minibatch descent over a flat parameter vector. `data` returns
/// the unregularized loss and gradient on one batch.
fn optimize(
    theta: &mut [f64],
    hyper: &HyperParams,
    mut batches: impl FnMut(&mut ChaCha8Rng) -> Vec<Batch>,
    mut data: impl FnMut(&[f64], &Batch) -> (f64, Vec<f64>),
) -> Result<(), ProbeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let (lr, lambda) = (hyper.learning_rate, hyper.lambda);
    let mut prev = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..hyper.epochs {
        let plan = batches(&mut rng);
        let mut total = 0.0;
        for batch in &plan {
            let (loss, grad) = data(theta, batch);
            total += loss + lambda * l1(theta);
            match hyper.l1_step {
                L1Step::Subgradient => {
                    for (x, g) in theta.iter_mut().zip(&grad) {
                        *x -= lr * (g + lambda * sign(*x));
                    }
                }
                L1Step::Proximal => {
                    let shrink = lr * lambda;
                    for (x, g) in theta.iter_mut().zip(&grad) {
                        let y = *x - lr * g;
                        *x = sign(y) * (y.abs() - shrink).max(0.0);
                    }
                }
            }
        }
        let mean = total / plan.len() as f64;
        if !mean.is_finite() || theta.iter().any(|x| !x.is_finite()) {
            return Err(ProbeError::NonFiniteLoss { epoch });
        }
        if prev - mean < hyper.tolerance {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        } else {
            stale = 0;
        }
        prev = mean;
    }
    Ok(())
}

/// Trains on `(r⁺, r⁻)` pairs. The threshold is the midpoint of the mean
/// positive and mean negative training scores.
pub fn train_concept_vector<F: Scalar>(
    pairs: &[(&[F], &[F])],
    hyper: &HyperParams,
) -> Result<ConceptVectorProbe, ProbeError> {
    hyper.validate()?;
    let d = pairs.first().ok_or(ProbeError::EmptyTrainingSet)?.0.len();
    check_pairs(d, pairs)?;
    let mut v = vec![0.0; d];
    let mut scratch: Vec<(&[F], &[F])> = Vec::with_capacity(hyper.batch_size);
    optimize(
        &mut v,
        hyper,
        |rng| pair_batches(pairs.len(), hyper.batch_size, rng),
        |theta, batch| {
            scratch.clear();
            scratch.extend(batch.pos.iter().map(|&i| pairs[i]));
            hinge_data(theta, &scratch)
        },
    )?;
    let n = pairs.len() as f64;
    let mean_pos = pairs.iter().map(|(p, _)| dot(&v, p)).sum::<f64>() / n;
    let mean_neg = pairs.iter().map(|(_, q)| dot(&v, q)).sum::<f64>() / n;
    Ok(ConceptVectorProbe {
        v,
        threshold: 0.5 * (mean_pos + mean_neg),
    })
}

fn gather<'a, F>(rows: &[&'a [F]], idx: &[usize]) -> Vec<&'a [F]> {
    idx.iter().map(|&i| rows[i]).collect()
}

pub fn train_logistic<F: Scalar>(
    pos: &[&[F]],
    neg: &[&[F]],
    hyper: &HyperParams,
) -> Result<LogisticProbe, ProbeError> {
    hyper.validate()?;
    if pos.is_empty() || neg.is_empty() {
        return Err(ProbeError::SingleClassData);
    }
    let d = common_dim(pos, neg)?;
    let mut theta = vec![0.0; d + 1];
    optimize(
        &mut theta,
        hyper,
        |rng| balanced_batches(pos.len(), neg.len(), hyper.batch_size, rng),
        |th, batch| {
            let p = LogisticProbe::from_flat(th);
            logistic_data(&p, &gather(pos, &batch.pos), &gather(neg, &batch.neg))
        },
    )?;
    Ok(LogisticProbe::from_flat(&theta))
}

/// Inputs are flat `tokens × dim` matrices.
pub fn train_sequence<F: Scalar>(
    pos: &[&[F]],
    neg: &[&[F]],
    tokens: usize,
    dim: usize,
    hyper: &HyperParams,
) -> Result<SequenceProbe, ProbeError> {
    hyper.validate()?;
    if tokens == 0 || dim == 0 {
        return Err(ProbeError::DimensionMismatch("tokens and dim must be positive".into()));
    }
    check_classes(pos, neg, tokens * dim)?;
    let mut theta = SequenceProbe::init(tokens, dim, hyper.seed).flat();
    optimize(
        &mut theta,
        hyper,
        |rng| balanced_batches(pos.len(), neg.len(), hyper.batch_size, rng),
        |th, batch| {
            let p = SequenceProbe::from_flat(tokens, dim, th);
            sequence_data(&p, &gather(pos, &batch.pos), &gather(neg, &batch.neg))
        },
    )?;
    Ok(SequenceProbe::from_flat(tokens, dim, &theta))
}

// ---------------------------------------------------------------- evaluation

#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    ConceptVector(ConceptVectorProbe),
    Logistic(LogisticProbe),
    Sequence(SequenceProbe),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub positive: f64,
    pub negative: f64,
    pub n_positive: usize,
    pub n_negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    pub n: usize,
    pub per_class: Option<PerClass>,
    /// Concept vectors only: fraction of (positive, negative) test pairs
    /// ordered correctly by the score.
    pub pairwise: Option<f64>,
}

impl Probe {
    pub fn method(&self) -> Method {
        match self {
            Probe::ConceptVector(_) => Method::ConceptVector,
            Probe::Logistic(_) => Method::Logistic,
            Probe::Sequence(_) => Method::Sequence,
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            Probe::ConceptVector(p) => p.v.len(),
            Probe::Logistic(p) => p.v.len(),
            Probe::Sequence(p) => p.tokens() * p.dim(),
        }
    }

    pub fn predict<F: Scalar>(&self, r: &[F]) -> bool {
        match self {
            Probe::ConceptVector(p) => p.predict(r),
            Probe::Logistic(p) => p.predict(r),
            Probe::Sequence(p) => p.predict(r),
        }
    }

    pub fn evaluate<F: Scalar>(&self, pos: &[&[F]], neg: &[&[F]]) -> Result<Accuracy, ProbeError> {
        let n = pos.len() + neg.len();
        if n == 0 {
            return Err(ProbeError::EmptyTestSet);
        }
        let d = self.input_len();
        check_dims(pos, d, "positive")?;
        check_dims(neg, d, "negative")?;
        let tp = pos.iter().filter(|r| self.predict(r)).count();
        let tn = neg.iter().filter(|r| !self.predict(r)).count();
        let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let pairwise = match self {
            Probe::ConceptVector(p) if !pos.is_empty() && !neg.is_empty() => {
                let sp: Vec<f64> = pos.iter().map(|r| p.score(r)).collect();
                let sn: Vec<f64> = neg.iter().map(|r| p.score(r)).collect();
                let ok: usize = sp.iter().map(|a| sn.iter().filter(|&&b| *a > b).count()).sum();
                Some(frac(ok, sp.len() * sn.len()))
            }
            _ => None,
        };
        Ok(Accuracy {
            accuracy: frac(tp + tn, n),
            n,
            per_class: Some(PerClass {
                positive: frac(tp, pos.len()),
                negative: frac(tn, neg.len()),
                n_positive: pos.len(),
                n_negative: neg.len(),
            }),
            pairwise,
        })
    }

    /// Text parameter file. One `key value...` per line; arrays are written
    /// as `key <len> x0 x1 ...` with shortest round-trip float formatting.
    pub fn to_text(&self) -> String {
        fn arr(out: &mut String, key: &str, xs: &[f64]) {
            out.push_str(key);
            out.push(' ');
            out.push_str(&xs.len().to_string());
            for x in xs {
                out.push_str(&format!(" {x:?}"));
            }
            out.push('\n');
        }
        let mut out = format!("kind {}\n", self.method());
        match self {
            Probe::ConceptVector(p) => {
                out.push_str(&format!("dim {}\nthreshold {:?}\n", p.v.len(), p.threshold));
                arr(&mut out, "v", &p.v);
            }
            Probe::Logistic(p) => {
                out.push_str(&format!("dim {}\nb {:?}\n", p.v.len(), p.b));
                arr(&mut out, "v", &p.v);
            }
            Probe::Sequence(p) => {
                out.push_str(&format!("tokens {}\ndim {}\nb2 {:?}\n", p.tokens(), p.dim(), p.b2));
                arr(&mut out, "v1", &p.v1);
                arr(&mut out, "b1", &p.b1);
                arr(&mut out, "v2", &p.v2);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Probe, ProbeError> {
        use std::collections::BTreeMap;
        let err = |m: String| ProbeError::Parse(m);
        let mut fields: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap();
            if fields.insert(key, it.collect()).is_some() {
                return Err(err(format!("duplicate key {key}")));
            }
        }
        let mut take = |key: &str| fields.remove(key).ok_or_else(|| err(format!("missing key {key}")));
        let float = |s: &str| -> Result<f64, ProbeError> {
            let x: f64 = s.parse().map_err(|_| ProbeError::Parse(format!("bad number {s:?}")))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(ProbeError::Parse(format!("non-finite value {s:?}")))
            }
        };
        let scalar = |vals: Vec<&str>| -> Result<f64, ProbeError> {
            match vals.as_slice() {
                [x] => float(x),
                _ => Err(ProbeError::Parse("expected one value".into())),
            }
        };
        let count = |vals: Vec<&str>| -> Result<usize, ProbeError> {
            match vals.as_slice() {
                [x] => x.parse().map_err(|_| ProbeError::Parse(format!("bad count {x:?}"))),
                _ => Err(ProbeError::Parse("expected one value".into())),
            }
        };
        let array = |vals: Vec<&str>, want: usize| -> Result<Vec<f64>, ProbeError> {
            let (n, rest) = vals.split_first().ok_or_else(|| ProbeError::Parse("empty array".into()))?;
            let n: usize = n.parse().map_err(|_| ProbeError::Parse(format!("bad length {n:?}")))?;
            if n != want || rest.len() != n {
                return Err(ProbeError::Parse(format!(
                    "array declares {n} values, holds {}, expected {want}",
                    rest.len()
                )));
            }
            rest.iter().map(|s| float(s)).collect()
        };

        let kind: Method = match take("kind")?.as_slice() {
            [k] => k.parse().map_err(err)?,
            _ => return Err(err("bad kind line".into())),
        };
        let probe = match kind {
            Method::ConceptVector => {
                let d = count(take("dim")?)?;
                Probe::ConceptVector(ConceptVectorProbe {
                    threshold: scalar(take("threshold")?)?,
                    v: array(take("v")?, d)?,
                })
            }
            Method::Logistic => {
                let d = count(take("dim")?)?;
                Probe::Logistic(LogisticProbe {
                    b: scalar(take("b")?)?,
                    v: array(take("v")?, d)?,
                })
            }
            Method::Sequence => {
                let t = count(take("tokens")?)?;
                let d = count(take("dim")?)?;
                Probe::Sequence(SequenceProbe {
                    b2: scalar(take("b2")?)?,
                    v1: array(take("v1")?, t)?,
                    b1: array(take("b1")?, d)?,
                    v2: array(take("v2")?, d)?,
                })
            }
        };
        if let Some(k) = fields.keys().next() {
            return Err(err(format!("unexpected key {k}")));
        }
        Ok(probe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn randn(r: &mut ChaCha8Rng) -> f64 {
        // sum of uniforms is good enough for test data
        (0..12).map(|_| r.random::<f64>()).sum::<f64>() - 6.0
    }

    fn randvec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| randn(r)).collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn zero_cases() {
        let a = vec![1.0, 2.0];
        let b = vec![-1.0, 0.5];
        let pairs = [(a.as_slice(), b.as_slice())];
        let (l, g) = loss_concept_vector(&[0.0, 0.0], &pairs, 0.3).unwrap();
        assert_eq!(l, 0.0);
        // zero margin counts as violated
        assert_eq!(g, vec![-2.0, -1.5]);

        let same = [(a.as_slice(), a.as_slice())];
        let (l, _) = loss_concept_vector(&[0.5, -1.0], &same, 0.5).unwrap();
        assert!((l - 0.75).abs() < 1e-15);

        let (l, _) = loss_logistic(&LogisticProbe::zeros(2), &[a.as_slice()], &[b.as_slice()], 0.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

        let p = SequenceProbe::zeros(3, 2);
        let m = vec![0.3; 6];
        let (l, _) = loss_sequence(&p, &[m.as_slice()], &[m.as_slice()], 0.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_logistic_scores_have_tiny_loss() {
        let p = LogisticProbe { v: vec![100.0], b: 0.0 };
        let (l, _) = loss_logistic(&p, &[&[5.0][..]], &[&[-5.0][..]], 0.0).unwrap();
        assert!(l < 1e-200, "{l}");
    }

    #[test]
    fn sequence_ignores_v1_on_zero_input() {
        let mut r = rng(3);
        let mut p = SequenceProbe::init(4, 3, 9);
        p.b1 = randvec(&mut r, 3);
        let zero = vec![0.0f32; 12];
        let s0 = p.logit(&zero);
        p.v1 = randvec(&mut r, 4);
        assert_eq!(p.logit(&zero), s0);
        let expect: f64 = p.b1.iter().zip(&p.v2).map(|(b, w)| b.max(0.0) * w).sum::<f64>() + p.b2;
        assert!((s0 - expect).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(11);
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        let (t, d) = (3, 4);
        let pos: Vec<Vec<f64>> = (0..4).map(|_| randvec(&mut r, t * d)).collect();
        let neg: Vec<Vec<f64>> = (0..4).map(|_| randvec(&mut r, t * d)).collect();
        let (pr, nr) = (refs(&pos), refs(&neg));

        let p = SequenceProbe {
            v1: randvec(&mut r, t),
            b1: randvec(&mut r, d),
            v2: randvec(&mut r, d),
            b2: randn(&mut r),
        };
        let (_, g) = loss_sequence(&p, &pr, &nr, 0.1).unwrap();
        let theta = p.flat();
        for (i, ga) in g.flat().iter().enumerate() {
            let f = |dx: f64| {
                let mut th = theta.clone();
                th[i] += dx;
                loss_sequence(&SequenceProbe::from_flat(t, d, &th), &pr, &nr, 0.1).unwrap().0
            };
            let n = (f(h) - f(-h)) / (2.0 * h);
            assert!(rel(*ga, n) < 1e-4, "param {i}: {ga} vs {n}");
        }
    }

    #[test]
    fn separable_2d() {
        let pos = [[2.0, 1.0], [1.0, 2.0], [1.5, 0.5], [0.5, 1.5]];
        let neg: Vec<[f64; 2]> = pos.iter().map(|p| [-p[0], -p[1]]).collect();
        let pr: Vec<&[f64]> = pos.iter().map(|x| &x[..]).collect();
        let nr: Vec<&[f64]> = neg.iter().map(|x| &x[..]).collect();
        let hyper = HyperParams {
            lambda: 0.0,
            epochs: 500,
            ..HyperParams::default()
        };
        let lp = train_logistic(&pr, &nr, &hyper).unwrap();
        assert_eq!(Probe::Logistic(lp).evaluate(&pr, &nr).unwrap().accuracy, 1.0);
        let pairs: Vec<(&[f64], &[f64])> = pr.iter().flat_map(|&p| nr.iter().map(move |&n| (p, n))).collect();
        let cv = train_concept_vector(&pairs, &hyper).unwrap();
        let acc = Probe::ConceptVector(cv).evaluate(&pr, &nr).unwrap();
        assert_eq!(acc.accuracy, 1.0);
        assert_eq!(acc.pairwise, Some(1.0));
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![1.0, 2.0];
        let e = train_logistic::<f64>(&[x.as_slice()], &[], &HyperParams::default());
        assert_eq!(e, Err(ProbeError::SingleClassData));
        let e = train_sequence::<f64>(&[], &[x.as_slice()], 1, 2, &HyperParams::default());
        assert_eq!(e, Err(ProbeError::SingleClassData));
        let e = train_concept_vector::<f64>(&[], &HyperParams::default());
        assert_eq!(e, Err(ProbeError::EmptyTrainingSet));
    }

    #[test]
    fn dimension_mismatch() {
        let a = vec![1.0, 2.0];
        let b = vec![1.0];
        assert!(matches!(
            train_logistic(&[a.as_slice()], &[b.as_slice()], &HyperParams::default()),
            Err(ProbeError::DimensionMismatch(_))
        ));
        let p = Probe::Logistic(LogisticProbe::zeros(3));
        assert!(matches!(p.evaluate(&[a.as_slice()], &[]), Err(ProbeError::DimensionMismatch(_))));
        assert_eq!(p.evaluate::<f64>(&[], &[]), Err(ProbeError::EmptyTestSet));
    }

    #[test]
    fn everything_positive_is_half() {
        let p = Probe::ConceptVector(ConceptVectorProbe {
            v: vec![0.0],
            threshold: -1.0,
        });
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let acc = p.evaluate(&refs(&xs[..5]), &refs(&xs[5..])).unwrap();
        assert_eq!(acc.accuracy, 0.5);
        assert_eq!(acc.per_class.unwrap().positive, 1.0);
    }

    #[test]
    fn ties_at_half_are_negative() {
        let p = LogisticProbe::zeros(1);
        assert!(!p.predict(&[3.0f64]));
        let c = ConceptVectorProbe { v: vec![1.0], threshold: 2.0 };
        assert!(!c.predict(&[2.0f64]));
    }

    #[test]
    fn huge_lambda_zeroes_the_vector() {
        let mut r = rng(5);
        let u = randvec(&mut r, 8);
        let pos: Vec<Vec<f64>> = (0..50).map(|_| u.iter().map(|x| x + 0.1 * randn(&mut r)).collect()).collect();
        let neg: Vec<Vec<f64>> = (0..50).map(|_| u.iter().map(|x| -x + 0.1 * randn(&mut r)).collect()).collect();
        let pairs: Vec<(&[f64], &[f64])> = pos.iter().zip(&neg).map(|(p, n)| (&p[..], &n[..])).collect();
        let hyper = HyperParams {
            lambda: 1e3,
            ..HyperParams::default()
        };
        let cv = train_concept_vector(&pairs, &hyper).unwrap();
        assert!(l1(&cv.v) < 1e-3);
    }

    #[test]
    fn text_round_trip() {
        let probes = [
            Probe::ConceptVector(ConceptVectorProbe {
                v: vec![0.1, -1e-300, 3.0],
                threshold: 1.0 / 3.0,
            }),
            Probe::Logistic(LogisticProbe {
                v: vec![f64::MAX, 0.0],
                b: -2.5e-7,
            }),
            Probe::Sequence(SequenceProbe::init(3, 2, 4)),
        ];
        for p in probes {
            let text = p.to_text();
            assert_eq!(Probe::from_text(&text).unwrap(), p, "{text}");
        }
    }

    #[test]
    fn text_errors() {
        for bad in [
            "",
            "kind nope\n",
            "kind logistic\ndim 2\nb 0.0\n",
            "kind logistic\ndim 2\nb 0.0\nv 3 1 2 3\n",
            "kind logistic\ndim 2\nb 0.0\nv 2 1 NaN\n",
            "kind logistic\ndim 2\nb 0.0\nv 2 1 2\nextra 1\n",
            "kind logistic\nkind logistic\n",
        ] {
            assert!(matches!(Probe::from_text(bad), Err(ProbeError::Parse(_))), "{bad:?}");
        }
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.slug().parse::<Method>().unwrap(), m);
        }
        assert_eq!("LR".parse::<Method>().unwrap(), Method::Logistic);
        assert!("svm".parse::<Method>().is_err());
    }

    #[test]
    fn bad_hyper() {
        for h in [
            HyperParams { lambda: -1.0, ..Default::default() },
            HyperParams { batch_size: 0, ..Default::default() },
            HyperParams { learning_rate: 0.0, ..Default::default() },
            HyperParams { epochs: 0, ..Default::default() },
            HyperParams { tolerance: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(h.validate(), Err(ProbeError::BadHyper(_))));
        }
    }
}
