//! History encoder: stacked GRUs, location-based attention, and a Fourier
//! embedding turn the study vehicle's (position, speed) history into the
//! temporal feature sequence `z_stu_his`.
//!
//! Stages, for a history of H frames with GRU hidden width G and embedding
//! width F (tied to the future horizon):
//!
//! 1. `gru_encode`:   H x 2  -> H x G      (two stacked GRU layers)
//! 2. `location_attention`: softmax over the time axis per channel of
//!    `(z (x) w0) W + b`, weights multiply the sequence elementwise
//! 3. `project_weighted`: per-step affine H x G -> H x G
//! 4. `fft_embed`:    unnormalized DFT along time, H x G -> H x 2G
//!    (real and imaginary parts concatenated per step)
//! 5. `finalize_encoding`: affine H x 2G -> H x F

use rand_chacha::ChaCha12Rng;

use crate::config::ModelConfig;
use crate::graph::{Graph, Var};
use crate::gru::{gru_forward, init_gru};
use crate::params::{init_linear, Lifted, ParamStore};
use crate::tensor::Tensor;

/// Registers the full-variant encoder parameters under `encoder.*`.
pub fn init_encoder(store: &mut ParamStore, rng: &mut ChaCha12Rng, cfg: &ModelConfig) {
    let g = cfg.gru_hidden;
    init_gru(store, rng, "encoder.gru0", 2, g);
    init_gru(store, rng, "encoder.gru1", g, g);
    let bound = 1.0 / (g as f64).sqrt();
    store.insert("encoder.attn.w", crate::params::uniform(rng, g, g, bound));
    store.insert("encoder.attn.b", crate::params::uniform(rng, 1, g, bound));
    // initial attention weights start at all-ones so the Hadamard gate is
    // transparent until trained
    store.insert("encoder.attn.w0", Tensor::filled(cfg.history_len, g, 1.0));
    init_linear(store, rng, "encoder.post", g, g);
    init_linear(store, rng, "encoder.fft", 2 * g, cfg.future_len);
}

/// Registers the reduced encoder of the no-history-encoding variant:
/// a single per-step linear map.
pub fn init_encoder_simple(store: &mut ParamStore, rng: &mut ChaCha12Rng, cfg: &ModelConfig) {
    init_linear(store, rng, "encoder.simple", 2, cfg.future_len);
}

/// All intermediate stages of the encoder, for introspection and tests.
pub struct EncoderStages {
    pub z_gru: Var,
    pub w1: Var,
    pub z_loc: Var,
    pub z_prime: Var,
    pub z_fft: Var,
    pub z_stu: Var,
}

/// Stacked two-layer GRU over the (position, speed) history.
pub fn gru_encode(g: &mut Graph, l: &Lifted<'_>, hist: Var) -> Var {
    let z1 = gru_forward(g, l, "encoder.gru0", hist);
    gru_forward(g, l, "encoder.gru1", z1)
}

/// Location-based attention: `w1 = softmax_time((z (x) w0) W + b)`,
/// `z_loc = w1 (x) z`. Returns `(w1, z_loc)`. Each feature channel's
/// weights sum to one over the time axis.
pub fn location_attention(
    g: &mut Graph,
    z_gru: Var,
    w: Var,
    b: Var,
    w0: Var,
) -> (Var, Var) {
    let gated = g.mul(z_gru, w0);
    let logits = g.linear(gated, w, b);
    let w1 = g.softmax_cols(logits);
    let z_loc = g.mul(w1, z_gru);
    (w1, z_loc)
}

/// Per-step affine projection of the attention-weighted sequence.
pub fn project_weighted(g: &mut Graph, z_loc: Var, w: Var, b: Var) -> Var {
    g.linear(z_loc, w, b)
}

/// Unnormalized DFT along the time axis of every channel; output carries
/// real parts in the first half of the feature axis and imaginary parts in
/// the second half.
pub fn fft_embed(g: &mut Graph, z_prime: Var) -> Var {
    g.dft_concat(z_prime)
}

/// Final affine projection of the concatenated spectrum to the embedding
/// width.
pub fn finalize_encoding(g: &mut Graph, z_fft: Var, w: Var, b: Var) -> Var {
    g.linear(z_fft, w, b)
}

/// Full-variant forward pass.
pub fn encode_history(g: &mut Graph, l: &Lifted<'_>, hist: Var) -> EncoderStages {
    let z_gru = gru_encode(g, l, hist);
    let (w1, z_loc) = location_attention(
        g,
        z_gru,
        l.var("encoder.attn.w"),
        l.var("encoder.attn.b"),
        l.var("encoder.attn.w0"),
    );
    let z_prime = project_weighted(g, z_loc, l.var("encoder.post.w"), l.var("encoder.post.b"));
    let z_fft = fft_embed(g, z_prime);
    let z_stu = finalize_encoding(g, z_fft, l.var("encoder.fft.w"), l.var("encoder.fft.b"));
    EncoderStages {
        z_gru,
        w1,
        z_loc,
        z_prime,
        z_fft,
        z_stu,
    }
}

/// Reduced forward pass of the no-history-encoding variant.
pub fn encode_history_simple(g: &mut Graph, l: &Lifted<'_>, hist: Var) -> Var {
    g.linear(hist, l.var("encoder.simple.w"), l.var("encoder.simple.b"))
}

/// Every stage of the encoding as plain tensors (inference mode).
pub struct EncodedHistory {
    pub z_gru: Tensor,
    pub w1: Tensor,
    pub z_loc: Tensor,
    pub z_gru_prime: Tensor,
    /// H x 2G spectrum, real parts then imaginary parts along features.
    pub z_fft: Tensor,
    pub z_stu_his: Tensor,
}

pub fn encode_history_tensors(store: &ParamStore, hist: &Tensor) -> EncodedHistory {
    let mut g = Graph::inference();
    let l = store.lift(&mut g);
    let hv = g.leaf(hist.clone());
    let stages = encode_history(&mut g, &l, hv);
    EncodedHistory {
        z_gru: g.value(stages.z_gru).clone(),
        w1: g.value(stages.w1).clone(),
        z_loc: g.value(stages.z_loc).clone(),
        z_gru_prime: g.value(stages.z_prime).clone(),
        z_fft: g.value(stages.z_fft).clone(),
        z_stu_his: g.value(stages.z_stu).clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut r = rng::derive(seed, "enc-test", &[]);
        Tensor::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn location_attention_uniform_at_zero_logits() {
        // W = 0, b = 0 -> w1 uniformly 1/T, z_loc = z / T
        let t = 6;
        let d = 4;
        let z = rand_tensor(t, d, 1);
        let mut g = Graph::inference();
        let zv = g.leaf(z.clone());
        let w = g.leaf(Tensor::zeros(d, d));
        let b = g.leaf(Tensor::zeros(1, d));
        let w0 = g.leaf(Tensor::filled(t, d, 1.0));
        let (w1, z_loc) = location_attention(&mut g, zv, w, b, w0);
        for r in 0..t {
            for c in 0..d {
                assert!((g.value(w1).get(r, c) - 1.0 / t as f64).abs() < 1e-12);
                assert!((g.value(z_loc).get(r, c) - z.get(r, c) / t as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn location_attention_shift_invariance() {
        // adding a constant to all logits of one channel leaves that
        // channel's weights unchanged; realized by shifting the bias
        let t = 5;
        let d = 3;
        let z = rand_tensor(t, d, 2);
        let w = rand_tensor(d, d, 3);
        let b = rand_tensor(1, d, 4);
        let run = |bias: &Tensor| {
            let mut g = Graph::inference();
            let zv = g.leaf(z.clone());
            let wv = g.leaf(w.clone());
            let bv = g.leaf(bias.clone());
            let w0 = g.leaf(Tensor::filled(t, d, 1.0));
            let (w1, _) = location_attention(&mut g, zv, wv, bv, w0);
            g.value(w1).clone()
        };
        let base = run(&b);
        let mut shifted = b.to_vec();
        shifted[1] += 7.5;
        let after = run(&Tensor::row_vec(shifted));
        assert!(base.max_abs_diff(&after) < 1e-12);
    }

    #[test]
    fn location_attention_matches_direct_oracle() {
        // random 4 x 3 toy case against an independent elementwise/softmax
        // evaluation
        let t = 4;
        let d = 3;
        let z = rand_tensor(t, d, 5);
        let w = rand_tensor(d, d, 6);
        let b = rand_tensor(1, d, 7);
        let w0 = rand_tensor(t, d, 8).map(|x| x + 1.5);

        let mut g = Graph::inference();
        let zv = g.leaf(z.clone());
        let wv = g.leaf(w.clone());
        let bv = g.leaf(b.clone());
        let w0v = g.leaf(w0.clone());
        let (w1, z_loc) = location_attention(&mut g, zv, wv, bv, w0v);

        // oracle
        let mut logits = vec![0.0; t * d];
        for r in 0..t {
            for c in 0..d {
                let mut acc = b.get(0, c);
                for k in 0..d {
                    acc += z.get(r, k) * w0.get(r, k) * w.get(k, c);
                }
                logits[r * d + c] = acc;
            }
        }
        for c in 0..d {
            let mut z_sum = 0.0;
            let mut col = vec![0.0; t];
            for r in 0..t {
                col[r] = logits[r * d + c].exp();
                z_sum += col[r];
            }
            for r in 0..t {
                let expect_w = col[r] / z_sum;
                assert!((g.value(w1).get(r, c) - expect_w).abs() < 1e-12);
                let expect_z = expect_w * z.get(r, c);
                assert!((g.value(z_loc).get(r, c) - expect_z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_weights_normalize_per_channel() {
        let mut store = ParamStore::new();
        let mut r = rng::derive(9, "enc-norm", &[]);
        let cfg = ModelConfig {
            history_len: 8,
            future_len: 6,
            gru_hidden: 5,
            attention_heads: 2,
            ..ModelConfig::default()
        };
        init_encoder(&mut store, &mut r, &cfg);
        let enc = encode_history_tensors(&store, &rand_tensor(8, 2, 10));
        for c in 0..5 {
            let mut sum = 0.0;
            for t in 0..8 {
                let v = enc.w1.get(t, c);
                assert!(v >= 0.0);
                sum += v;
            }
            assert!((sum - 1.0).abs() < 1e-6, "channel {c} sums to {sum}");
        }
    }

    #[test]
    fn project_weighted_identity_and_bias() {
        let t = 4;
        let d = 3;
        let z = rand_tensor(t, d, 11);
        let mut g = Graph::inference();
        let zv = g.leaf(z.clone());
        let id = g.leaf(Tensor::from_fn(d, d, |r, c| if r == c { 1.0 } else { 0.0 }));
        let zero = g.leaf(Tensor::zeros(1, d));
        let same = project_weighted(&mut g, zv, id, zero);
        assert!(g.value(same).max_abs_diff(&z) < 1e-15);

        let zw = g.leaf(Tensor::zeros(d, d));
        let beta = g.leaf(Tensor::row_vec(vec![1.0, -2.0, 3.0]));
        let rows = project_weighted(&mut g, zv, zw, beta);
        for r in 0..t {
            assert_eq!(g.value(rows).row(r), &[1.0, -2.0, 3.0]);
        }

        // random case against a direct matrix-multiply oracle
        let w = rand_tensor(d, d, 12);
        let b = rand_tensor(1, d, 13);
        let wv = g.leaf(w.clone());
        let bv = g.leaf(b.clone());
        let out = project_weighted(&mut g, zv, wv, bv);
        for r in 0..t {
            for c in 0..d {
                let mut acc = b.get(0, c);
                for k in 0..d {
                    acc += z.get(r, k) * w.get(k, c);
                }
                assert!((g.value(out).get(r, c) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fft_constant_sequence_is_dc_only() {
        let n = 30;
        let c = 2.5;
        let mut g = Graph::inference();
        let x = g.leaf(Tensor::filled(n, 1, c));
        let out = fft_embed(&mut g, x);
        let v = g.value(out);
        assert!((v.get(0, 0) - n as f64 * c).abs() < 1e-9);
        assert!(v.get(0, 1).abs() < 1e-9);
        for i in 1..n {
            assert!(v.get(i, 0).abs() < 1e-9, "re bin {i}");
            assert!(v.get(i, 1).abs() < 1e-9, "im bin {i}");
        }
    }

    #[test]
    fn fft_unit_impulse_is_flat() {
        let n = 30;
        let mut data = vec![0.0; n];
        data[0] = 1.0;
        let mut g = Graph::inference();
        let x = g.leaf(Tensor::col_vec(data));
        let out = fft_embed(&mut g, x);
        for i in 0..n {
            assert!((g.value(out).get(i, 0) - 1.0).abs() < 1e-12);
            assert!(g.value(out).get(i, 1).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_matches_quadratic_dft_oracle() {
        let n = 30;
        for trial in 0..20u64 {
            let x = rand_tensor(n, 1, 100 + trial);
            let mut g = Graph::inference();
            let xv = g.leaf(x.clone());
            let out = fft_embed(&mut g, xv);
            for i in 0..n {
                let mut re = 0.0;
                let mut im = 0.0;
                for t in 0..n {
                    let ang = -2.0 * std::f64::consts::PI * (i * t) as f64 / n as f64;
                    re += x.get(t, 0) * ang.cos();
                    im += x.get(t, 0) * ang.sin();
                }
                assert!((g.value(out).get(i, 0) - re).abs() < 1e-9);
                assert!((g.value(out).get(i, 1) - im).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fft_conjugate_symmetry_and_parseval() {
        let n = 30;
        let d = 3;
        let x = rand_tensor(n, d, 14);
        let mut g = Graph::inference();
        let xv = g.leaf(x.clone());
        let out = fft_embed(&mut g, xv);
        let v = g.value(out);
        for c in 0..d {
            for i in 1..n {
                let re_i = v.get(i, c);
                let im_i = v.get(i, d + c);
                let re_m = v.get(n - i, c);
                let im_m = v.get(n - i, d + c);
                assert!((re_i - re_m).abs() < 1e-9);
                assert!((im_i + im_m).abs() < 1e-9);
            }
            let spec_energy: f64 = (0..n)
                .map(|i| v.get(i, c).powi(2) + v.get(i, d + c).powi(2))
                .sum();
            let time_energy: f64 = (0..n).map(|t| x.get(t, c).powi(2)).sum();
            let rel = (spec_energy - n as f64 * time_energy).abs() / (n as f64 * time_energy);
            assert!(rel < 1e-6, "parseval rel err {rel}");
        }
    }

    #[test]
    fn finalize_zero_spectrum_yields_bias() {
        let n = 5;
        let gdim = 3;
        let f = 4;
        let mut g = Graph::inference();
        let zf = g.leaf(Tensor::zeros(n, 2 * gdim));
        let w = g.leaf(rand_tensor(2 * gdim, f, 15));
        let b = g.leaf(Tensor::row_vec(vec![0.5, -1.0, 2.0, 0.0]));
        let out = finalize_encoding(&mut g, zf, w, b);
        for r in 0..n {
            assert_eq!(g.value(out).row(r), &[0.5, -1.0, 2.0, 0.0]);
        }
    }

    #[test]
    fn finalize_selector_on_real_spectrum_ignores_imag_columns() {
        // purely real spectrum with a projection selecting only imaginary
        // columns gives zero output
        let n = 4;
        let gdim = 2;
        let mut g = Graph::inference();
        let mut spec = Tensor::zeros(n, 2 * gdim).to_vec();
        for r in 0..n {
            spec[r * 2 * gdim] = 1.0 + r as f64;
            spec[r * 2 * gdim + 1] = -2.0 * r as f64;
        }
        let zf = g.leaf(Tensor::from_vec(n, 2 * gdim, spec));
        // selector: rows 0..gdim (real part) map to zero, rows gdim..2gdim
        // (imag part) map to identity-ish
        let w = g.leaf(Tensor::from_fn(2 * gdim, gdim, |r, c| {
            if r >= gdim && r - gdim == c {
                1.0
            } else {
                0.0
            }
        }));
        let b = g.leaf(Tensor::zeros(1, gdim));
        let out = finalize_encoding(&mut g, zf, w, b);
        assert_eq!(g.value(out).max_abs(), 0.0);

        // random case against a concat+matmul oracle
        let zfr = rand_tensor(n, 2 * gdim, 16);
        let wr = rand_tensor(2 * gdim, gdim, 17);
        let br = rand_tensor(1, gdim, 18);
        let zv = g.leaf(zfr.clone());
        let wv = g.leaf(wr.clone());
        let bv = g.leaf(br.clone());
        let out = finalize_encoding(&mut g, zv, wv, bv);
        for r in 0..n {
            for c in 0..gdim {
                let mut acc = br.get(0, c);
                for k in 0..2 * gdim {
                    acc += zfr.get(r, k) * wr.get(k, c);
                }
                assert!((g.value(out).get(r, c) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn end_to_end_gradient_check_shrunken() {
        // 4-frame history, 3-unit hidden width; gradient of a scalar
        // function of z_stu_his w.r.t. every encoder parameter array
        let cfg = ModelConfig {
            history_len: 4,
            future_len: 5,
            gru_hidden: 3,
            attention_heads: 1,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let mut r = rng::derive(20, "enc-e2e", &[]);
        init_encoder(&mut store, &mut r, &cfg);
        let hist = rand_tensor(4, 2, 21);
        let target = rand_tensor(4, 5, 22);

        let loss_of = |store: &ParamStore| {
            let mut g = Graph::inference();
            let l = store.lift(&mut g);
            let hv = g.leaf(hist.clone());
            let stages = encode_history(&mut g, &l, hv);
            let tt = g.leaf(target.clone());
            let loss = g.mse(stages.z_stu, tt);
            g.value(loss).scalar_value()
        };

        let mut g = Graph::new();
        let l = store.lift(&mut g);
        let hv = g.leaf(hist.clone());
        let stages = encode_history(&mut g, &l, hv);
        let tt = g.leaf(target.clone());
        let loss = g.mse(stages.z_stu, tt);
        let grads = g.backward(loss);
        let analytic = l.grads(&grads);

        let h = 1e-5;
        for i in 0..store.len() {
            let base = store.tensor_at(i).clone();
            for e in 0..base.len() {
                let mut plus = store.clone();
                let mut minus = store.clone();
                let mut dp = base.to_vec();
                let mut dm = base.to_vec();
                dp[e] += h;
                dm[e] -= h;
                plus.set_at(i, Tensor::from_vec(base.rows(), base.cols(), dp));
                minus.set_at(i, Tensor::from_vec(base.rows(), base.cols(), dm));
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = analytic[i].data()[e];
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (an - fd).abs() / denom < 1e-4,
                    "param {} elem {e}: {an} vs {fd}",
                    store.name_at(i)
                );
            }
        }
    }

    #[test]
    fn non_finite_input_is_rejected_by_scale_path() {
        let z = Tensor::from_vec(2, 2, vec![1.0, f64::NAN, 0.0, 0.0]);
        assert!(crate::diffusion::NoiseScale::from_encoding(&z).is_err());
    }
}
