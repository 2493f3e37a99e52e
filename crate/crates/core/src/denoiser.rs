//! Adapted 1-D U-Net predicting the scaled noise from the noisy future
//! trajectory, the diffusion step, and the pooled car-following context.
//!
//! The trajectory enters as a single-channel signal. Down stages are
//! stride-2 convolutions following the channel ladder (lengths round up,
//! e.g. 50 -> 25 -> 13 -> 7 -> 4); up stages mirror them with
//! nearest-neighbour upsampling, skip concatenation and stride-1
//! convolutions. Every stage applies convolution, a silu nonlinearity, and
//! feature-wise affine modulation whose scale and shift are projected from
//! the sum of a sinusoidal step embedding and the time-pooled context.

use rand_chacha::ChaCha12Rng;

use crate::config::ModelConfig;
use crate::graph::{Graph, Var};
use crate::params::{init_conv, init_linear, Lifted, ParamStore};
use crate::tensor::Tensor;

const KERNEL: usize = 3;

/// Output length of one stride-2 stage with kernel 3 and padding 1.
fn down_len(len: usize) -> usize {
    (len + 2 - KERNEL) / 2 + 1
}

/// Per-stage signal lengths along the down path, starting at the input
/// length. One entry per channel width in `unet_channels`.
pub fn stage_lengths(cfg: &ModelConfig) -> Vec<usize> {
    let mut lens = vec![cfg.future_len];
    for _ in 1..cfg.unet_channels.len() {
        lens.push(down_len(*lens.last().unwrap()));
    }
    lens
}

/// Registers the U-Net parameters under `denoiser.*`.
pub fn init_denoiser(store: &mut ParamStore, rng: &mut ChaCha12Rng, cfg: &ModelConfig) {
    let ch = &cfg.unet_channels;
    let f = cfg.future_len;
    init_conv(store, rng, "denoiser.lift", 1, ch[0], KERNEL);
    init_linear(store, rng, "denoiser.film.lift", f, 2 * ch[0]);
    for i in 0..ch.len() - 1 {
        init_conv(store, rng, &format!("denoiser.down{i}"), ch[i], ch[i + 1], KERNEL);
        init_linear(store, rng, &format!("denoiser.film.down{i}"), f, 2 * ch[i + 1]);
    }
    for i in 0..ch.len() - 1 {
        let cin = ch[ch.len() - 1 - i] + ch[ch.len() - 2 - i];
        let cout = ch[ch.len() - 2 - i];
        init_conv(store, rng, &format!("denoiser.up{i}"), cin, cout, KERNEL);
        init_linear(store, rng, &format!("denoiser.film.up{i}"), f, 2 * cout);
    }
    init_conv(store, rng, "denoiser.head", ch[0], 1, KERNEL);
}

/// Sinusoidal embedding of the diffusion step: interleaved sin/cos pairs at
/// geometric frequencies, one vector per step, distinct for every step in
/// `1..=K`.
pub fn step_embedding(k: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = vec![0.0; dim];
    for i in 0..half {
        let freq = (10_000.0f64).powf(-(i as f64) / half.max(1) as f64);
        let angle = k as f64 * freq;
        data[2 * i] = angle.sin();
        data[2 * i + 1] = angle.cos();
    }
    if dim % 2 == 1 {
        data[dim - 1] = k as f64 / 10_000.0;
    }
    Tensor::row_vec(data)
}

/// Mean over the time axis of the context: T x F -> 1 x F.
pub fn pool_context(g: &mut Graph, c: Var) -> Var {
    g.mean_rows(c)
}

fn film_from(g: &mut Graph, l: &Lifted<'_>, name: &str, cond: Var, x: Var) -> Var {
    let w = l.var(&format!("denoiser.film.{name}.w"));
    let b = l.var(&format!("denoiser.film.{name}.b"));
    let sc = g.linear(cond, w, b);
    let c_out = g.value(x).rows();
    let s = g.slice_cols(sc, 0, c_out);
    let t = g.slice_cols(sc, c_out, 2 * c_out);
    g.film(x, s, t)
}

fn stage(
    g: &mut Graph,
    l: &Lifted<'_>,
    name: &str,
    x: Var,
    cond: Var,
    stride: usize,
) -> Var {
    let w = l.var(&format!("denoiser.{name}.w"));
    let b = l.var(&format!("denoiser.{name}.b"));
    let y = g.conv1d(x, w, b, KERNEL, stride, 1);
    let y = g.silu(y);
    film_from(g, l, name, cond, y)
}

/// U-Net forward pass. `x_k` is the 1 x F noisy trajectory, `c_pooled` the
/// 1 x F time-pooled context.
pub fn predict_noise(
    g: &mut Graph,
    l: &Lifted<'_>,
    cfg: &ModelConfig,
    x_k: Var,
    k: usize,
    c_pooled: Var,
) -> Var {
    let emb = g.leaf(step_embedding(k, cfg.future_len));
    let cond = g.add(emb, c_pooled);
    let lens = stage_lengths(cfg);
    let n_stages = cfg.unet_channels.len() - 1;

    let mut feats = Vec::with_capacity(n_stages + 1);
    let mut h = stage(g, l, "lift", x_k, cond, 1);
    feats.push(h);
    for i in 0..n_stages {
        h = stage(g, l, &format!("down{i}"), h, cond, 2);
        feats.push(h);
    }
    for i in 0..n_stages {
        let skip = feats[n_stages - 1 - i];
        let target = lens[n_stages - 1 - i];
        let up = g.upsample2_to(h, target);
        let cat = g.concat_rows(&[up, skip]);
        h = stage(g, l, &format!("up{i}"), cat, cond, 1);
    }
    let w = l.var("denoiser.head.w");
    let b = l.var("denoiser.head.b");
    g.conv1d(h, w, b, KERNEL, 1, 1)
}
