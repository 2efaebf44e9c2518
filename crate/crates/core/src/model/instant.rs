//! Centre-frame baseline: seven 2-D convolutions with stride-2 pooling in
//! time and frequency, a frequency average, then two dense layers over the
//! remaining time positions.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;
use crate::features::Spectrogram;

use super::layers::{conv2d, linear, Bound};
use super::spectnt::check_input;
use super::{ModelConfig, Parameters, PredictionMatrix, SpecBuilder, N_OUTPUTS};

const STRIDES: [(usize, usize); 7] = [(1, 1), (2, 2), (1, 1), (2, 2), (1, 1), (2, 2), (2, 2)];

fn output_extent(n: usize, axis: usize) -> usize {
    STRIDES.iter().fold(n, |n, s| {
        let stride = if axis == 0 { s.0 } else { s.1 };
        (n - 1) / stride + 1
    })
}

pub(crate) fn param_specs(cfg: &ModelConfig) -> SpecBuilder {
    let mut b = SpecBuilder::new();
    let c = cfg.instant_channels;
    for (i, _) in STRIDES.iter().enumerate() {
        b.conv(
            &format!("instant.conv{i}"),
            cfg.resnet_kernel,
            if i == 0 { 1 } else { c },
            c,
        );
    }
    let t_out = output_extent(cfg.chunk_frames, 0);
    b.linear("instant.fc1", t_out * c, cfg.instant_hidden);
    b.linear("instant.fc2", cfg.instant_hidden, N_OUTPUTS);
    b
}

/// Builds the forward graph and returns the `[8]` logits node for the
/// centre frame.
pub fn forward_logits(
    g: &mut Graph,
    params: &Parameters,
    cfg: &ModelConfig,
    spec: &Spectrogram,
) -> Result<(Var, Vec<Var>)> {
    check_input(spec, cfg)?;
    let p = Bound::new(g, params);
    let c = cfg.instant_channels;
    let mut h = g.leaf(Tensor::new(
        vec![cfg.chunk_frames, cfg.n_bins, 1],
        spec.values.clone(),
    ));
    for (i, &stride) in STRIDES.iter().enumerate() {
        h = conv2d(
            g,
            &p,
            &format!("instant.conv{i}"),
            h,
            cfg.resnet_kernel,
            stride,
        );
        h = g.gelu(h);
    }
    let (t_out, f_out) = (
        output_extent(cfg.chunk_frames, 0),
        output_extent(cfg.n_bins, 1),
    );
    // [T', F', C] -> [F', T'·C], then average over F'
    let perm = (0..f_out)
        .flat_map(|f| (0..t_out).flat_map(move |t| (0..c).map(move |ci| (t * f_out + f) * c + ci)))
        .collect();
    let h = g.gather(h, perm, vec![f_out, t_out * c]);
    let h = g.mean_rows(h);
    let h = linear(g, &p, "instant.fc1", h);
    let h = g.gelu(h);
    let logits = linear(g, &p, "instant.fc2", h);
    Ok((logits, p.vars))
}

/// Sigmoid activations for the centre frame of the chunk.
pub fn instant_forward(
    spec: &Spectrogram,
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<[f64; 8]> {
    let mut g = Graph::new();
    let (logits, _) = forward_logits(&mut g, params, cfg, spec)?;
    Ok(PredictionMatrix::from_logits(g.value(logits).data()).row(0))
}
