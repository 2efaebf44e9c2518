//! One optimisation step: forward, objective, backward, Adam.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::features::Spectrogram;
use crate::loss::{combine, ctl_logits, weighted_bce_logits, LossConfig};
use crate::targets::TokenSequence;

use super::optim::{AdamConfig, AdamState};
use super::spectnt::ForwardOptions;
use super::{instant, spectnt, ModelConfig, ModelKind, Parameters, BOUNDARY_COLUMN, N_OUTPUTS};

/// One training chunk with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// `chunk_frames × n_bins`, zero past the end of the song.
    pub spec: Spectrogram,
    /// Per-frame function targets for the chunk.
    pub function_targets: Vec<[f64; 7]>,
    pub boundary_targets: Vec<f64>,
    /// Frames that belong to the song; the rest are padding and carry no loss.
    pub valid_frames: usize,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub bce_boundary: f64,
    pub bce_function: f64,
    /// CTL per valid frame.
    pub ctl: f64,
    pub combined: f64,
}

impl StepLosses {
    fn accumulate(&mut self, other: &StepLosses, weight: f64) {
        self.bce_boundary += weight * other.bce_boundary;
        self.bce_function += weight * other.bce_function;
        self.ctl += weight * other.ctl;
        self.combined += weight * other.combined;
    }
}

/// Training objective of one example evaluated on raw logits, with the
/// gradient of the combined loss with respect to those logits.
///
/// For SpecTNT the logits are `chunk_frames × 8`; for the instant model a
/// single row supervised by the chunk's centre frame.
pub fn objective_from_logits(
    kind: ModelKind,
    logits: &[f64],
    ex: &TrainingExample,
    cfg: &LossConfig,
) -> Result<(StepLosses, Vec<f64>)> {
    let (rows, first): (usize, usize) = match kind {
        ModelKind::Spectnt => (ex.valid_frames, 0),
        ModelKind::Instant => (1, ex.function_targets.len() / 2),
    };
    if logits.len() < rows * N_OUTPUTS || first + rows > ex.function_targets.len() || rows == 0 {
        return Err(Error::Contract(
            "logits do not cover the supervised frames".into(),
        ));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("model produced non-finite logits".into()));
    }
    let mut seed = vec![0.0; logits.len()];
    let column = |c: usize| -> Vec<f64> { (0..rows).map(|t| logits[t * N_OUTPUTS + c]).collect() };

    let (bce_boundary, g_b) = weighted_bce_logits(
        &column(BOUNDARY_COLUMN),
        &ex.boundary_targets[first..first + rows],
        cfg.boundary_pos_weight,
    )?;
    for (t, g) in g_b.iter().enumerate() {
        seed[t * N_OUTPUTS + BOUNDARY_COLUMN] += cfg.boundary_weight * g;
    }

    let mut bce_function = 0.0;
    for c in 0..7 {
        let target: Vec<f64> = ex.function_targets[first..first + rows]
            .iter()
            .map(|r| r[c])
            .collect();
        let (l, g) = weighted_bce_logits(&column(c), &target, cfg.function_pos_weight)?;
        bce_function += l / 7.0;
        for (t, g) in g.iter().enumerate() {
            seed[t * N_OUTPUTS + c] += cfg.function_weight * g / 7.0;
        }
    }

    let mut ctl = 0.0;
    if kind == ModelKind::Spectnt && ex.tokens.len() <= rows && !ex.tokens.is_empty() {
        let fn_logits: Vec<Vec<f64>> = (0..rows)
            .map(|t| logits[t * N_OUTPUTS..t * N_OUTPUTS + 7].to_vec())
            .collect();
        let (raw, g) = ctl_logits(&fn_logits, &ex.tokens)?;
        ctl = raw / rows as f64;
        if cfg.ctl_weight > 0.0 {
            let scale = cfg.function_weight * cfg.ctl_weight / rows as f64;
            for (t, row) in g.iter().enumerate() {
                for (c, g) in row.iter().enumerate() {
                    seed[t * N_OUTPUTS + c] += scale * g;
                }
            }
        }
    }

    let losses = StepLosses {
        bce_boundary,
        bce_function,
        ctl,
        combined: combine(bce_boundary, bce_function, ctl, cfg),
    };
    Ok((losses, seed))
}

/// Loss and parameter gradients (one flat vector per tensor) for one example.
pub fn example_gradients(
    kind: ModelKind,
    params: &Parameters,
    model: &ModelConfig,
    loss: &LossConfig,
    ex: &TrainingExample,
) -> Result<(StepLosses, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let (logits, vars) = match kind {
        ModelKind::Spectnt => {
            spectnt::forward_logits(&mut g, params, model, &ex.spec, ForwardOptions::default())?
        }
        ModelKind::Instant => instant::forward_logits(&mut g, params, model, &ex.spec)?,
    };
    let (losses, seed) = objective_from_logits(kind, g.value(logits).data(), ex, loss)?;
    if !losses.combined.is_finite() {
        return Err(Error::NonFinite(format!("loss is not finite: {losses:?}")));
    }
    let grads = g.backward_with_seed(logits, &seed)?;
    let per_param = vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t.len()))
        .collect();
    Ok((losses, per_param))
}

/// Mean loss and mean gradient over a batch. Examples are evaluated in
/// parallel and reduced in batch order, so the result is deterministic.
pub fn batch_gradients(
    kind: ModelKind,
    params: &Parameters,
    model: &ModelConfig,
    loss: &LossConfig,
    batch: &[TrainingExample],
) -> Result<(StepLosses, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let results: Vec<_> = batch
        .par_iter()
        .map(|ex| example_gradients(kind, params, model, loss, ex))
        .collect::<Result<_>>()?;
    let w = 1.0 / batch.len() as f64;
    let mut total = StepLosses::default();
    let mut grads: Vec<Vec<f64>> = params
        .tensors()
        .iter()
        .map(|t| vec![0.0; t.len()])
        .collect();
    for (losses, g) in &results {
        total.accumulate(losses, w);
        for (acc, g) in grads.iter_mut().zip(g) {
            acc.iter_mut().zip(g).for_each(|(a, g)| *a += w * g);
        }
    }
    Ok((total, grads))
}

/// Evaluates the batch, then applies one Adam update. Parameters are left
/// untouched when the loss is not finite.
pub fn train_step(
    kind: ModelKind,
    batch: &[TrainingExample],
    params: &mut Parameters,
    state: &mut AdamState,
    model: &ModelConfig,
    loss: &LossConfig,
    adam: &AdamConfig,
) -> Result<StepLosses> {
    let (losses, grads) = batch_gradients(kind, params, model, loss, batch)?;
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient is not finite (losses {losses:?})"
        )));
    }
    state.update(params, &grads, adam);
    Ok(losses)
}

/// Mean combined loss over examples without updating anything.
pub fn evaluate_loss(
    kind: ModelKind,
    params: &Parameters,
    model: &ModelConfig,
    loss: &LossConfig,
    examples: &[TrainingExample],
) -> Result<StepLosses> {
    if examples.is_empty() {
        return Err(Error::Contract("no examples to evaluate".into()));
    }
    let results: Vec<StepLosses> = examples
        .par_iter()
        .map(|ex| {
            let mut g = Graph::new();
            let logits = match kind {
                ModelKind::Spectnt => {
                    spectnt::forward_logits(
                        &mut g,
                        params,
                        model,
                        &ex.spec,
                        ForwardOptions::default(),
                    )?
                    .0
                }
                ModelKind::Instant => instant::forward_logits(&mut g, params, model, &ex.spec)?.0,
            };
            objective_from_logits(kind, g.value(logits).data(), ex, loss).map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    let mut total = StepLosses::default();
    for r in &results {
        total.accumulate(r, 1.0 / results.len() as f64);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::FunctionLabel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_example(cfg: &ModelConfig, seed: u64) -> TrainingExample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = cfg.chunk_frames;
        let mut spec = Spectrogram::zeros(t, cfg.n_bins, cfg.frame_hop);
        spec.values
            .iter_mut()
            .for_each(|v| *v = rng.random_range(0.0..2.0));
        let half = t / 2;
        let (a, b) = (FunctionLabel::Verse, FunctionLabel::Chorus);
        let function_targets = (0..t)
            .map(|i| {
                let mut row = [0.0; 7];
                row[if i < half { a.index() } else { b.index() }] = 1.0;
                row
            })
            .collect();
        let boundary_targets = (0..t)
            .map(|i| if i.abs_diff(half) <= 1 { 1.0 } else { 0.0 })
            .collect();
        TrainingExample {
            spec,
            function_targets,
            boundary_targets,
            valid_frames: t - 1,
            tokens: TokenSequence(vec![a, b]),
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let cfg = ModelConfig::miniature(8, 16);
        let mut params = Parameters::init(&cfg, ModelKind::Spectnt).unwrap();
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let adam = AdamConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let batch = [random_example(&cfg, 1), random_example(&cfg, 2)];
        train_step(
            ModelKind::Spectnt,
            &batch,
            &mut params,
            &mut state,
            &cfg,
            &LossConfig::default(),
            &adam,
        )
        .unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn steps_are_deterministic() {
        let cfg = ModelConfig::miniature(8, 16);
        let batch = [
            random_example(&cfg, 1),
            random_example(&cfg, 2),
            random_example(&cfg, 3),
        ];
        let run = || {
            let mut params = Parameters::init(&cfg, ModelKind::Spectnt).unwrap();
            let mut state = AdamState::new(&params);
            let mut log = Vec::new();
            for _ in 0..5 {
                let l = train_step(
                    ModelKind::Spectnt,
                    &batch,
                    &mut params,
                    &mut state,
                    &cfg,
                    &LossConfig::default(),
                    &AdamConfig::default(),
                )
                .unwrap();
                log.push(l);
            }
            (params, log)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fixed_batch_loss_decreases() {
        let cfg = ModelConfig::miniature(8, 16);
        let batch = [random_example(&cfg, 4), random_example(&cfg, 5)];
        let mut params = Parameters::init(&cfg, ModelKind::Spectnt).unwrap();
        let mut state = AdamState::new(&params);
        let adam = AdamConfig {
            learning_rate: 2e-3,
            ..Default::default()
        };
        let losses: Vec<f64> = (0..200)
            .map(|_| {
                train_step(
                    ModelKind::Spectnt,
                    &batch,
                    &mut params,
                    &mut state,
                    &cfg,
                    &LossConfig::default(),
                    &adam,
                )
                .unwrap()
                .combined
            })
            .collect();
        let after_warmup = &losses[20..];
        let non_increasing = after_warmup
            .windows(2)
            .filter(|w| w[1] <= w[0] + 1e-12)
            .count();
        assert!(
            non_increasing as f64 >= 0.95 * (after_warmup.len() - 1) as f64,
            "{losses:?}"
        );
        assert!(losses[199] < 0.5 * losses[0]);
    }

    #[test]
    fn instant_objective_uses_the_centre_frame() {
        let cfg = ModelConfig::miniature(9, 16);
        let ex = random_example(&cfg, 6);
        let logits = [0.0; N_OUTPUTS];
        let (l, seed) =
            objective_from_logits(ModelKind::Instant, &logits, &ex, &LossConfig::default())
                .unwrap();
        assert_eq!(seed.len(), N_OUTPUTS);
        assert_eq!(l.ctl, 0.0);
        // centre frame 4 is in the chorus half and on the boundary
        assert!(seed[FunctionLabel::Chorus.index()] < 0.0);
        assert!(seed[BOUNDARY_COLUMN] < 0.0);
        assert!(seed[FunctionLabel::Verse.index()] > 0.0);
    }

    fn check_gradients(kind: ModelKind, cfg: &ModelConfig, ex: &TrainingExample, stride: usize) {
        let loss = LossConfig::default();
        let params = Parameters::init(cfg, kind).unwrap();
        let (_, grads) = example_gradients(kind, &params, cfg, &loss, ex).unwrap();
        let eps = 1e-5;
        let f = |p: &Parameters| {
            evaluate_loss(kind, p, cfg, &loss, std::slice::from_ref(ex))
                .unwrap()
                .combined
        };
        for (ti, name) in params.names().iter().enumerate() {
            for i in (0..params.tensors()[ti].len()).step_by(stride) {
                let mut p = params.clone();
                p.tensors_mut()[ti].data_mut()[i] += eps;
                let up = f(&p);
                p.tensors_mut()[ti].data_mut()[i] -= 2.0 * eps;
                let down = f(&p);
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads[ti][i];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    err <= 1e-4,
                    "{name}[{i}]: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn spectnt_gradients_match_finite_differences() {
        let cfg = ModelConfig::miniature(6, 16);
        check_gradients(ModelKind::Spectnt, &cfg, &random_example(&cfg, 7), 3);
    }

    #[test]
    fn instant_gradients_match_finite_differences() {
        let cfg = ModelConfig::miniature(9, 16);
        check_gradients(ModelKind::Instant, &cfg, &random_example(&cfg, 8), 3);
    }
}
