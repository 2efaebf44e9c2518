//! Multi-point spectral-temporal Transformer.
//!
//! Layout through the network (desk sizes in brackets):
//!
//! ```text
//! [T, 80, 1] --ResNet--> [T, 10, C] --proj + freq pos--> [T, 10, Ds]
//!   prepend FCT            [T, 11, Ds]
//!   per block:
//!     spectral encoder     attention over the 11 positions of each frame
//!     FCT slot -> proj + sinusoidal time codes -> temporal encoder over T
//!     -> proj back into the FCT slot
//!   head                   LN + linear on the FCT of every frame -> [T, 8]
//! ```

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::Spectrogram;

use super::layers::{
    conv2d, encoder_layer, layer_norm, linear, residual_block, sinusoidal_positions, Bound,
};
use super::{ModelConfig, Parameters, PredictionMatrix, SpecBuilder, N_OUTPUTS};

/// Ablation switches for [`forward_logits`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    /// When false the temporal encoders are bypassed and each frame's
    /// prediction depends only on its ResNet receptive field.
    pub temporal: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { temporal: true }
    }
}

/// ResNet and the per-position spectral projection.
pub(crate) fn front_end_specs(b: &mut SpecBuilder, cfg: &ModelConfig) {
    let (k, c) = (cfg.resnet_kernel, cfg.resnet_channels);
    b.conv("resnet.stem", k, 1, c);
    for stage in 1..=2 {
        b.conv(&format!("resnet.stage{stage}.down"), k, c, c);
        b.conv(&format!("resnet.stage{stage}.res.conv1"), k, c, c);
        b.conv(&format!("resnet.stage{stage}.res.conv2"), k, c, c);
    }
    b.linear("spectral.proj", c, cfg.spectral_dim);
}

pub(crate) fn param_specs(cfg: &ModelConfig) -> SpecBuilder {
    let mut b = SpecBuilder::new();
    front_end_specs(&mut b, cfg);
    let (ds, dt) = (cfg.spectral_dim, cfg.temporal_dim);
    b.embedding("spectral.freq_pos", vec![cfg.freq_positions(), ds]);
    b.embedding("spectral.fct", vec![ds]);
    for i in 0..cfg.n_blocks {
        b.encoder(&format!("block{i}.spectral"), ds, cfg.ffn_mult);
        b.linear(&format!("block{i}.to_temporal"), ds, dt);
        b.encoder(&format!("block{i}.temporal"), dt, cfg.ffn_mult);
        b.linear(&format!("block{i}.from_temporal"), dt, ds);
    }
    b.layer_norm("head.ln", ds);
    b.linear("head", ds, N_OUTPUTS);
    b
}

pub(crate) fn check_input(spec: &Spectrogram, cfg: &ModelConfig) -> Result<()> {
    if spec.n_frames != cfg.chunk_frames || spec.n_bins != cfg.n_bins {
        return Err(Error::Contract(format!(
            "model expects {}x{} input, got {}x{}",
            cfg.chunk_frames, cfg.n_bins, spec.n_frames, spec.n_bins
        )));
    }
    Ok(())
}

/// ResNet front-end on a `[T, F, 1]` input: a stride-2 stem, then two
/// stages of stride-2 downsampling plus one residual block.
pub(crate) fn resnet(g: &mut Graph, p: &Bound, cfg: &ModelConfig, x: Var) -> Var {
    let k = cfg.resnet_kernel;
    let h = conv2d(g, p, "resnet.stem", x, k, (1, 2));
    let mut h = g.gelu(h);
    for stage in 1..=2 {
        let d = conv2d(g, p, &format!("resnet.stage{stage}.down"), h, k, (1, 2));
        let d = g.gelu(d);
        h = residual_block(g, p, &format!("resnet.stage{stage}.res"), d, k);
    }
    h
}

/// Builds the forward graph and returns the `[T, 8]` logits node.
pub fn forward_logits(
    g: &mut Graph,
    params: &Parameters,
    cfg: &ModelConfig,
    spec: &Spectrogram,
    opts: ForwardOptions,
) -> Result<(Var, Vec<Var>)> {
    check_input(spec, cfg)?;
    let p = Bound::new(g, params);
    let (t, nf) = (cfg.chunk_frames, cfg.freq_positions());
    let (ds, dt) = (cfg.spectral_dim, cfg.temporal_dim);
    let len = nf + 1;

    let x = g.leaf(Tensor::new(vec![t, cfg.n_bins, 1], spec.values.clone()));
    let h = resnet(g, &p, cfg, x);
    let tokens = linear(g, &p, "spectral.proj", h);
    let pos_index = (0..t * nf * ds).map(|i| i % (nf * ds)).collect();
    let pos = g.gather(p.get("spectral.freq_pos"), pos_index, vec![t, nf, ds]);
    let tokens = g.add(tokens, pos);

    // slot 0 of every frame holds its frequency class token
    let fct_len = ds;
    let interleave = |fct_rows: bool| -> Vec<usize> {
        let mut idx = Vec::with_capacity(t * len * ds);
        for ti in 0..t {
            for j in 0..ds {
                idx.push(if fct_rows { ti * ds + j } else { j });
            }
            for f in 0..nf {
                for j in 0..ds {
                    idx.push(fct_len * if fct_rows { t } else { 1 } + (ti * nf + f) * ds + j);
                }
            }
        }
        idx
    };
    let joined = g.concat(&[p.get("spectral.fct"), tokens]);
    let mut seq = g.gather(joined, interleave(false), vec![t, len, ds]);

    let fct_pick: Vec<usize> = (0..t)
        .flat_map(|ti| (0..ds).map(move |j| ti * len * ds + j))
        .collect();
    let body_pick: Vec<usize> = (0..t)
        .flat_map(|ti| (0..nf * ds).map(move |j| ti * len * ds + ds + j))
        .collect();
    let time_codes = g.leaf(sinusoidal_positions(t, dt));

    let mut fct = seq;
    for i in 0..cfg.n_blocks {
        seq = encoder_layer(
            g,
            &p,
            &format!("block{i}.spectral"),
            seq,
            cfg.spectral_heads,
        );
        fct = g.gather(seq, fct_pick.clone(), vec![t, ds]);
        if opts.temporal {
            let e = linear(g, &p, &format!("block{i}.to_temporal"), fct);
            let e = g.add(e, time_codes);
            let e = g.reshape(e, vec![1, t, dt]);
            let e = encoder_layer(g, &p, &format!("block{i}.temporal"), e, cfg.temporal_heads);
            let e = g.reshape(e, vec![t, dt]);
            fct = linear(g, &p, &format!("block{i}.from_temporal"), e);
        }
        if i + 1 < cfg.n_blocks {
            let body = g.gather(seq, body_pick.clone(), vec![t * nf * ds]);
            let joined = g.concat(&[fct, body]);
            seq = g.gather(joined, interleave(true), vec![t, len, ds]);
        }
    }
    let h = layer_norm(g, &p, "head.ln", fct);
    let logits = linear(g, &p, "head", h);
    Ok((logits, p.vars))
}

/// Sigmoid activations for every frame of a chunk.
pub fn spectnt_forward(
    spec: &Spectrogram,
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<PredictionMatrix> {
    forward_with(spec, params, cfg, ForwardOptions::default())
}

pub fn forward_with(
    spec: &Spectrogram,
    params: &Parameters,
    cfg: &ModelConfig,
    opts: ForwardOptions,
) -> Result<PredictionMatrix> {
    let mut g = Graph::new();
    let (logits, _) = forward_logits(&mut g, params, cfg, spec, opts)?;
    Ok(PredictionMatrix::from_logits(g.value(logits).data()))
}
