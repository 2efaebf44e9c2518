//! Training objectives: weighted binary cross-entropy on the activation
//! curves, the boundary/function weighting, and the connectionist temporal
//! localization (CTL) sequence loss.
//!
//! CTL scores how well a `T × 7` matrix of per-frame class distributions
//! explains an ordered token sequence of length `S`. An alignment assigns
//! every frame one token index, starting at the first token, ending at the
//! last, and advancing by at most one per frame. The loss is the negative
//! log of the summed probability of all alignments. There is no blank
//! symbol and no token may be skipped.

use serde::{Deserialize, Serialize};

use crate::annotation::FunctionLabel;
use crate::error::{Error, Result};
use crate::targets::TokenSequence;

/// Probability clip used by [`weighted_bce`].
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub boundary_weight: f64,
    pub function_weight: f64,
    /// Scale of the CTL term inside the function loss.
    pub ctl_weight: f64,
    /// Positive-class weight of the boundary BCE.
    pub boundary_pos_weight: f64,
    /// Positive-class weight of each function BCE.
    pub function_pos_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            boundary_weight: 0.9,
            function_weight: 0.1,
            ctl_weight: 0.1,
            boundary_pos_weight: 3.0,
            function_pos_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.boundary_weight + self.function_weight - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "boundary_weight + function_weight must be 1, got {}",
                self.boundary_weight + self.function_weight
            )));
        }
        if self.ctl_weight < 0.0 || self.boundary_pos_weight < 1.0 || self.function_pos_weight < 1.0
        {
            return Err(Error::Config(
                "ctl_weight must be >= 0 and positive weights >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Mean over frames of `-[w·y·ln p + (1-y)·ln(1-p)]`, with `p` clipped to
/// `[1e-7, 1 - 1e-7]`.
pub fn weighted_bce(pred: &[f64], target: &[f64], pos_weight: f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Contract(format!(
            "prediction has {} frames, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(pos_weight * y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// [`weighted_bce`] evaluated on logits, returning the loss and its gradient
/// with respect to each logit. Computed without clipping, in a numerically
/// stable form.
pub fn weighted_bce_logits(
    logits: &[f64],
    target: &[f64],
    pos_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    if logits.len() != target.len() {
        return Err(Error::Contract(format!(
            "prediction has {} frames, target {}",
            logits.len(),
            target.len()
        )));
    }
    if logits.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(target) {
        // -ln σ(z) = softplus(-z), -ln(1-σ(z)) = softplus(z)
        loss += pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z);
        let s = crate::autodiff::sigmoid(z);
        grad.push((-pos_weight * y * (1.0 - s) + (1.0 - y) * s) / n);
    }
    Ok((loss / n, grad))
}

/// `boundary_weight·boundary + function_weight·(function + ctl_weight·ctl)`.
pub fn combine(boundary: f64, function: f64, ctl: f64, cfg: &LossConfig) -> f64 {
    cfg.boundary_weight * boundary + cfg.function_weight * (function + cfg.ctl_weight * ctl)
}

fn check_ctl_inputs(probs: &[Vec<f64>], tokens: &TokenSequence) -> Result<()> {
    let (t, s) = (probs.len(), tokens.len());
    if s == 0 {
        return Err(Error::Contract("empty token sequence".into()));
    }
    if s > t {
        return Err(Error::InfeasibleAlignment {
            tokens: s,
            frames: t,
        });
    }
    for (i, row) in probs.iter().enumerate() {
        if row.len() != FunctionLabel::COUNT {
            return Err(Error::Contract(format!(
                "row {i} has {} classes",
                row.len()
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Contract(format!(
                "row {i} is not a distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-probabilities `ln probs[t][class(token_s)]`, shape `T × S`.
fn emission_logs(probs: &[Vec<f64>], tokens: &TokenSequence) -> Vec<Vec<f64>> {
    probs
        .iter()
        .map(|row| {
            tokens
                .tokens()
                .iter()
                .map(|c| row[c.index()].ln())
                .collect()
        })
        .collect()
}

fn forward_lattice(em: &[Vec<f64>], s_len: usize) -> Vec<Vec<f64>> {
    let t_len = em.len();
    let mut alpha = vec![vec![f64::NEG_INFINITY; s_len]; t_len];
    alpha[0][0] = em[0][0];
    for t in 1..t_len {
        // token index s is reachable at frame t only if s <= t
        for s in 0..s_len.min(t + 1) {
            let stay = alpha[t - 1][s];
            let advance = if s > 0 {
                alpha[t - 1][s - 1]
            } else {
                f64::NEG_INFINITY
            };
            alpha[t][s] = log_add(stay, advance) + em[t][s];
        }
    }
    alpha
}

fn backward_lattice(em: &[Vec<f64>], s_len: usize) -> Vec<Vec<f64>> {
    let t_len = em.len();
    let mut beta = vec![vec![f64::NEG_INFINITY; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = 0.0;
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let stay = beta[t + 1][s] + em[t + 1][s];
            let advance = if s + 1 < s_len {
                beta[t + 1][s + 1] + em[t + 1][s + 1]
            } else {
                f64::NEG_INFINITY
            };
            beta[t][s] = log_add(stay, advance);
        }
    }
    beta
}

/// CTL loss by dynamic programming over the `T × S` lattice in log space.
/// Returns `+inf` when no alignment has positive probability.
pub fn ctl_loss(probs: &[Vec<f64>], tokens: &TokenSequence) -> Result<f64> {
    check_ctl_inputs(probs, tokens)?;
    let em = emission_logs(probs, tokens);
    let alpha = forward_lattice(&em, tokens.len());
    Ok(-alpha[probs.len() - 1][tokens.len() - 1])
}

/// Largest instance [`ctl_loss_bruteforce`] accepts.
pub const BRUTEFORCE_MAX_FRAMES: usize = 12;
pub const BRUTEFORCE_MAX_TOKENS: usize = 5;

/// CTL loss by explicit enumeration of every monotonic alignment.
/// Verification oracle for [`ctl_loss`]; refuses instances beyond 12 frames
/// or 5 tokens.
pub fn ctl_loss_bruteforce(probs: &[Vec<f64>], tokens: &TokenSequence) -> Result<f64> {
    if probs.len() > BRUTEFORCE_MAX_FRAMES || tokens.len() > BRUTEFORCE_MAX_TOKENS {
        return Err(Error::Contract(format!(
            "brute force limited to T <= {BRUTEFORCE_MAX_FRAMES}, S <= {BRUTEFORCE_MAX_TOKENS}"
        )));
    }
    check_ctl_inputs(probs, tokens)?;
    let classes: Vec<usize> = tokens.tokens().iter().map(|c| c.index()).collect();
    let (t_len, s_len) = (probs.len(), classes.len());
    // An alignment is fixed by the frames where tokens 1..S start: a strictly
    // increasing choice of S-1 frames from 1..T.
    let mut total = 0.0;
    let mut starts = Vec::with_capacity(s_len);
    fn walk(
        next_frame: usize,
        starts: &mut Vec<usize>,
        probs: &[Vec<f64>],
        classes: &[usize],
        t_len: usize,
        total: &mut f64,
    ) {
        if starts.len() == classes.len() - 1 {
            let mut p = 1.0;
            let mut token = 0;
            for (t, row) in probs.iter().enumerate() {
                if token < starts.len() && starts[token] == t {
                    token += 1;
                }
                p *= row[classes[token]];
            }
            *total += p;
            return;
        }
        let remaining = classes.len() - 1 - starts.len();
        for f in next_frame..=(t_len - remaining) {
            starts.push(f);
            walk(f + 1, starts, probs, classes, t_len, total);
            starts.pop();
        }
    }
    walk(1, &mut starts, probs, &classes, t_len, &mut total);
    Ok(-total.ln())
}

/// Gradient of [`ctl_loss`] with respect to `probs`, via forward-backward
/// occupancies: `-Σ_{s: class(s)=k} γ[t][s] / probs[t][k]`.
pub fn ctl_gradient(probs: &[Vec<f64>], tokens: &TokenSequence) -> Result<(f64, Vec<Vec<f64>>)> {
    let (loss, occupancy) = ctl_occupancy(probs, tokens)?;
    let grad = probs
        .iter()
        .zip(&occupancy)
        .map(|(row, occ)| {
            row.iter()
                .zip(occ)
                .map(|(&p, &o)| if o == 0.0 { 0.0 } else { -o / p })
                .collect()
        })
        .collect();
    Ok((loss, grad))
}

/// Posterior class occupancy per frame: `occ[t][k]` is the probability, over
/// alignments weighted by their likelihood, that frame `t` emits class `k`.
/// Rows sum to one.
pub fn ctl_occupancy(probs: &[Vec<f64>], tokens: &TokenSequence) -> Result<(f64, Vec<Vec<f64>>)> {
    check_ctl_inputs(probs, tokens)?;
    let s_len = tokens.len();
    let em = emission_logs(probs, tokens);
    let alpha = forward_lattice(&em, s_len);
    let beta = backward_lattice(&em, s_len);
    let log_z = alpha[probs.len() - 1][s_len - 1];
    if !log_z.is_finite() {
        return Err(Error::NonFinite(
            "CTL loss is infinite; no feasible alignment".into(),
        ));
    }
    let occ = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| {
            let mut row = vec![0.0; FunctionLabel::COUNT];
            for (s, c) in tokens.tokens().iter().enumerate() {
                let lg = a[s] + b[s] - log_z;
                if lg > f64::NEG_INFINITY {
                    row[c.index()] += lg.exp();
                }
            }
            row
        })
        .collect();
    Ok((-log_z, occ))
}

/// CTL loss on softmax-normalised logits, with the gradient with respect to
/// the logits: `softmax(z) - occupancy`.
pub fn ctl_logits(logits: &[Vec<f64>], tokens: &TokenSequence) -> Result<(f64, Vec<Vec<f64>>)> {
    let probs: Vec<Vec<f64>> = logits
        .iter()
        .map(|row| {
            let mut r = row.clone();
            crate::autodiff::softmax_in_place(&mut r);
            r
        })
        .collect();
    let (loss, occ) = ctl_occupancy(&probs, tokens)?;
    let grad = probs
        .iter()
        .zip(&occ)
        .map(|(p, o)| p.iter().zip(o).map(|(p, o)| p - o).collect())
        .collect();
    Ok((loss, grad))
}
