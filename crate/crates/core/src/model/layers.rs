use crate::autodiff::{Graph, Tensor, Var, ZERO_INDEX};

use super::Parameters;

/// Graph leaves for every tensor of a [`Parameters`] set, in the same order.
pub(crate) struct Bound<'p> {
    params: &'p Parameters,
    pub(crate) vars: Vec<Var>,
}

impl<'p> Bound<'p> {
    pub(crate) fn new(g: &mut Graph, params: &'p Parameters) -> Self {
        let vars = params.tensors().iter().map(|t| g.leaf(t.clone())).collect();
        Self { params, vars }
    }

    pub(crate) fn get(&self, name: &str) -> Var {
        let i = self
            .params
            .position(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from model"));
        self.vars[i]
    }
}

pub(crate) fn linear(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Var {
    let y = g.matmul(x, p.get(&format!("{prefix}.w")));
    g.add_bias(y, p.get(&format!("{prefix}.b")))
}

pub(crate) fn layer_norm(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Var {
    g.layer_norm(
        x,
        p.get(&format!("{prefix}.g")),
        p.get(&format!("{prefix}.b")),
    )
}

/// 2-D convolution over a channels-last `[T, F, C_in]` map with "same"
/// padding and the given strides, as an im2col gather followed by a matmul.
pub(crate) fn conv2d(
    g: &mut Graph,
    p: &Bound,
    prefix: &str,
    x: Var,
    kernel: usize,
    stride: (usize, usize),
) -> Var {
    let shape = g.value(x).shape().to_vec();
    let (t_in, f_in, c_in) = (shape[0], shape[1], shape[2]);
    let pad = (kernel / 2) as isize;
    let t_out = (t_in - 1) / stride.0 + 1;
    let f_out = (f_in - 1) / stride.1 + 1;
    let patch = kernel * kernel * c_in;
    let mut index = Vec::with_capacity(t_out * f_out * patch);
    for to in 0..t_out {
        for fo in 0..f_out {
            for dt in 0..kernel {
                let ti = (to * stride.0) as isize + dt as isize - pad;
                for df in 0..kernel {
                    let fi = (fo * stride.1) as isize + df as isize - pad;
                    let inside = ti >= 0 && (ti as usize) < t_in && fi >= 0 && (fi as usize) < f_in;
                    for ci in 0..c_in {
                        index.push(if inside {
                            ((ti as usize) * f_in + fi as usize) * c_in + ci
                        } else {
                            ZERO_INDEX
                        });
                    }
                }
            }
        }
    }
    let cols = g.gather(x, index, vec![t_out, f_out, patch]);
    linear(g, p, prefix, cols)
}

/// `x + conv(gelu(conv(x)))` followed by GELU.
pub(crate) fn residual_block(g: &mut Graph, p: &Bound, prefix: &str, x: Var, kernel: usize) -> Var {
    let h = conv2d(g, p, &format!("{prefix}.conv1"), x, kernel, (1, 1));
    let h = g.gelu(h);
    let h = conv2d(g, p, &format!("{prefix}.conv2"), h, kernel, (1, 1));
    let s = g.add(x, h);
    g.gelu(s)
}

/// Multi-head self-attention over `[B, L, D]`, independently per batch item.
pub(crate) fn self_attention(g: &mut Graph, p: &Bound, prefix: &str, x: Var, heads: usize) -> Var {
    let shape = g.value(x).shape().to_vec();
    let (b, l, d) = (shape[0], shape[1], shape[2]);
    let dh = d / heads;
    // [B, L, H, dh] -> [B, H, L, dh]
    let split: Vec<usize> = (0..b)
        .flat_map(|bi| {
            (0..heads).flat_map(move |h| {
                (0..l)
                    .flat_map(move |li| (0..dh).map(move |j| ((bi * l + li) * heads + h) * dh + j))
            })
        })
        .collect();
    let mut merge = vec![0; split.len()];
    for (dst, &src) in split.iter().enumerate() {
        merge[src] = dst;
    }
    let q = linear(g, p, &format!("{prefix}.q"), x);
    let k = linear(g, p, &format!("{prefix}.k"), x);
    let v = linear(g, p, &format!("{prefix}.v"), x);
    let heads_shape = vec![b * heads, l, dh];
    let q = g.gather(q, split.clone(), heads_shape.clone());
    let k = g.gather(k, split.clone(), heads_shape.clone());
    let v = g.gather(v, split, heads_shape);
    let scores = g.bmm(q, k, true);
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let attn = g.softmax(scores);
    let ctx = g.bmm(attn, v, false);
    let ctx = g.gather(ctx, merge, vec![b, l, d]);
    linear(g, p, &format!("{prefix}.o"), ctx)
}

/// Pre-norm encoder layer: attention and feed-forward sublayers, each
/// wrapped in a residual connection.
pub(crate) fn encoder_layer(g: &mut Graph, p: &Bound, prefix: &str, x: Var, heads: usize) -> Var {
    let h = layer_norm(g, p, &format!("{prefix}.ln1"), x);
    let h = self_attention(g, p, &format!("{prefix}.attn"), h, heads);
    let x = g.add(x, h);
    let h = layer_norm(g, p, &format!("{prefix}.ln2"), x);
    let h = linear(g, p, &format!("{prefix}.ffn1"), h);
    let h = g.gelu(h);
    let h = linear(g, p, &format!("{prefix}.ffn2"), h);
    g.add(x, h)
}

/// Fixed sinusoidal position codes, `[len, dim]`.
pub(crate) fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / dim as f64);
            data[pos * dim + 2 * i] = (pos as f64 * freq).sin();
            data[pos * dim + 2 * i + 1] = (pos as f64 * freq).cos();
        }
    }
    Tensor::new(vec![len, dim], data)
}
