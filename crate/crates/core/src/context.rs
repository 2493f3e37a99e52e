//! Car-following interaction encoder: leader and follower streams are
//! GRU-encoded into key and value sequences, then a multi-head
//! cross-attention transformer block conditioned on the study vehicle's
//! encoding produces the denoiser context `c`.
//!
//! Queries come straight from the study vehicle's encoded history. Keys
//! pool the (position, speed, leading-gap) streams of the leader, values
//! pool the follower's streams. No positional encoding is added; the GRUs
//! upstream already order-encode time.

use rand_chacha::ChaCha12Rng;

use crate::config::ModelConfig;
use crate::graph::{Graph, Var};
use crate::gru::{gru_forward, init_gru};
use crate::params::{init_linear, uniform, Lifted, ParamStore};
use crate::tensor::Tensor;

const STREAMS: [&str; 6] = [
    "lea.pos", "lea.spd", "lea.gap", "fol.pos", "fol.spd", "fol.gap",
];

/// Registers the full-variant context parameters under `context.*`.
pub fn init_context(store: &mut ParamStore, rng: &mut ChaCha12Rng, cfg: &ModelConfig) {
    let g = cfg.gru_hidden;
    let f = cfg.future_len;
    for s in STREAMS {
        init_gru(store, rng, &format!("context.{s}.gru"), 1, g);
        init_linear(store, rng, &format!("context.{s}.lin"), g, f);
    }
    let dh = f / cfg.attention_heads;
    let bound = 1.0 / (f as f64).sqrt();
    for h in 0..cfg.attention_heads {
        store.insert(format!("context.attn.h{h}.wq"), uniform(rng, f, dh, bound));
        store.insert(format!("context.attn.h{h}.wk"), uniform(rng, f, dh, bound));
        store.insert(format!("context.attn.h{h}.wv"), uniform(rng, f, dh, bound));
    }
    store.insert("context.attn.w_out", uniform(rng, f, f, bound));
    store.insert("context.block.ln1.gamma", Tensor::filled(1, f, 1.0));
    store.insert("context.block.ln1.beta", Tensor::zeros(1, f));
    init_linear(store, rng, "context.block.ff1", f, cfg.feed_forward);
    init_linear(store, rng, "context.block.ff2", cfg.feed_forward, f);
    store.insert("context.block.ln2.gamma", Tensor::filled(1, f, 1.0));
    store.insert("context.block.ln2.beta", Tensor::zeros(1, f));
}

/// Registers the reduced context of the no-cross-attention variant: the
/// stream encoders stay, the attention block is replaced by a single
/// linear fusion of (Q, K, V).
pub fn init_context_linear(store: &mut ParamStore, rng: &mut ChaCha12Rng, cfg: &ModelConfig) {
    let g = cfg.gru_hidden;
    let f = cfg.future_len;
    for s in STREAMS {
        init_gru(store, rng, &format!("context.{s}.gru"), 1, g);
        init_linear(store, rng, &format!("context.{s}.lin"), g, f);
    }
    init_linear(store, rng, "context.fuse", 3 * f, f);
}

/// The query is the study vehicle's encoded history, passed through by
/// value.
pub fn build_query(z_stu_his: &Tensor) -> Tensor {
    z_stu_his.clone()
}

/// Encodes one scalar stream: GRU then per-step linear map.
fn encode_stream(g: &mut Graph, l: &Lifted<'_>, name: &str, xs: Var) -> Var {
    let z = gru_forward(g, l, &format!("context.{name}.gru"), xs);
    g.linear(
        z,
        l.var(&format!("context.{name}.lin.w")),
        l.var(&format!("context.{name}.lin.b")),
    )
}

/// Builds the key sequence from the leader streams and the value sequence
/// from the follower streams. Each is
/// `pool(concat(lin(gru(pos)), lin(gru(spd)), lin(gru(gap))))` where the
/// pool is a parameter-free mean across the three concatenated blocks,
/// keeping the time axis.
pub fn build_key_value(
    g: &mut Graph,
    l: &Lifted<'_>,
    lea: [Var; 3],
    fol: [Var; 3],
) -> (Var, Var) {
    let lp = encode_stream(g, l, "lea.pos", lea[0]);
    let lv = encode_stream(g, l, "lea.spd", lea[1]);
    let lg = encode_stream(g, l, "lea.gap", lea[2]);
    let cat_k = g.concat_cols(&[lp, lv, lg]);
    let k = g.pool3(cat_k);

    let fp = encode_stream(g, l, "fol.pos", fol[0]);
    let fv = encode_stream(g, l, "fol.spd", fol[1]);
    let fg = encode_stream(g, l, "fol.gap", fol[2]);
    let cat_v = g.concat_cols(&[fp, fv, fg]);
    let v = g.pool3(cat_v);
    (k, v)
}

/// Multi-head cross-attention. Per head `i`:
/// `A_i = softmax((Q Wq_i)(K Wk_i)^T / sqrt(d_head))`, `head_i = A_i (V Wv_i)`;
/// the concatenated heads are mixed by `W_out`. Returns the output and the
/// per-head attention matrices.
pub fn multi_head_cross_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: &[(Var, Var, Var)],
    w_out: Var,
) -> (Var, Vec<Var>) {
    let d_head = g.value(heads[0].0).cols();
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut outs = Vec::with_capacity(heads.len());
    let mut attns = Vec::with_capacity(heads.len());
    for &(wq, wk, wv) in heads {
        let qh = g.matmul(q, wq);
        let kh = g.matmul(k, wk);
        let scores = g.matmul_bt(qh, kh);
        let scaled = g.scale(scores, scale);
        let attn = g.softmax_rows(scaled);
        let vh = g.matmul(v, wv);
        let head = g.matmul(attn, vh);
        outs.push(head);
        attns.push(attn);
    }
    let cat = g.concat_cols(&outs);
    let z_mca = g.matmul(cat, w_out);
    (z_mca, attns)
}

/// Post-norm transformer block: `c = LN2(u + FF(u))` with
/// `u = LN1(Q + z_mca)` and a silu feed-forward.
#[allow(clippy::too_many_arguments)]
pub fn transformer_block(
    g: &mut Graph,
    z_mca: Var,
    q: Var,
    ln1: (Var, Var),
    ff1: (Var, Var),
    ff2: (Var, Var),
    ln2: (Var, Var),
) -> Var {
    let resid = g.add(q, z_mca);
    let u = g.layer_norm_rows(resid, ln1.0, ln1.1);
    let h = g.linear(u, ff1.0, ff1.1);
    let h = g.silu(h);
    let h = g.linear(h, ff2.0, ff2.1);
    let resid2 = g.add(u, h);
    g.layer_norm_rows(resid2, ln2.0, ln2.1)
}

/// Context forward pass output.
pub struct ContextStages {
    pub k: Var,
    pub v: Var,
    pub z_mca: Option<Var>,
    pub attention: Vec<Var>,
    pub c: Var,
}

/// Full-variant context: K/V streams, multi-head cross-attention,
/// transformer block.
pub fn encode_context(
    g: &mut Graph,
    l: &Lifted<'_>,
    cfg: &ModelConfig,
    q: Var,
    lea: [Var; 3],
    fol: [Var; 3],
) -> ContextStages {
    let (k, v) = build_key_value(g, l, lea, fol);
    let heads: Vec<(Var, Var, Var)> = (0..cfg.attention_heads)
        .map(|h| {
            (
                l.var(&format!("context.attn.h{h}.wq")),
                l.var(&format!("context.attn.h{h}.wk")),
                l.var(&format!("context.attn.h{h}.wv")),
            )
        })
        .collect();
    let (z_mca, attention) =
        multi_head_cross_attention(g, q, k, v, &heads, l.var("context.attn.w_out"));
    let c = transformer_block(
        g,
        z_mca,
        q,
        (l.var("context.block.ln1.gamma"), l.var("context.block.ln1.beta")),
        (l.var("context.block.ff1.w"), l.var("context.block.ff1.b")),
        (l.var("context.block.ff2.w"), l.var("context.block.ff2.b")),
        (l.var("context.block.ln2.gamma"), l.var("context.block.ln2.beta")),
    );
    ContextStages {
        k,
        v,
        z_mca: Some(z_mca),
        attention,
        c,
    }
}

/// Reduced context of the no-cross-attention variant:
/// `c = linear(concat(Q, K, V))` per time step.
pub fn encode_context_linear(
    g: &mut Graph,
    l: &Lifted<'_>,
    q: Var,
    lea: [Var; 3],
    fol: [Var; 3],
) -> ContextStages {
    let (k, v) = build_key_value(g, l, lea, fol);
    let cat = g.concat_cols(&[q, k, v]);
    let c = g.linear(cat, l.var("context.fuse.w"), l.var("context.fuse.b"));
    ContextStages {
        k,
        v,
        z_mca: None,
        attention: Vec::new(),
        c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut r = rng::derive(seed, "ctx-test", &[]);
        Tensor::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn build_query_is_identity_with_value_semantics() {
        let z = rand_tensor(30, 50, 1);
        let q = build_query(&z);
        assert_eq!(q, z);
        assert_eq!(q.shape(), (30, 50));
        // rebinding the source does not alter the returned query
        let snapshot = q.to_vec();
        let z = z.map(|x| x + 100.0);
        let _ = z;
        assert_eq!(q.to_vec(), snapshot);
    }

    #[test]
    fn identical_streams_pool_to_common_output() {
        // all three leader streams identical and all per-stream maps
        // identical -> K equals the common per-stream output
        let cfg = ModelConfig {
            history_len: 5,
            future_len: 4,
            gru_hidden: 3,
            attention_heads: 1,
            feed_forward: 8,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let mut r = rng::derive(2, "ctx-pool", &[]);
        init_context(&mut store, &mut r, &cfg);
        // copy lea.pos weights over the other two leader streams
        for name in ["lea.spd", "lea.gap"] {
            let params: Vec<(String, Tensor)> = store
                .iter()
                .filter(|(n, _)| n.starts_with("context.lea.pos."))
                .map(|(n, t)| (n.replace("lea.pos", name), t.clone()))
                .collect();
            for (n, t) in params {
                store.set(&n, t).unwrap();
            }
        }
        let stream = rand_tensor(5, 1, 3);
        let mut g = Graph::inference();
        let l = store.lift(&mut g);
        let s = g.leaf(stream.clone());
        let (k, _) = build_key_value(&mut g, &l, [s, s, s], [s, s, s]);
        let single = encode_stream(&mut g, &l, "lea.pos", s);
        assert!(g.value(k).max_abs_diff(g.value(single)) < 1e-12);
    }

    #[test]
    fn zero_parameters_give_bias_constant_keys() {
        let cfg = ModelConfig {
            history_len: 4,
            future_len: 4,
            gru_hidden: 3,
            attention_heads: 2,
            feed_forward: 8,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let mut r = rng::derive(4, "ctx-zero", &[]);
        init_context(&mut store, &mut r, &cfg);
        // zero the GRUs and weights but keep the linear biases
        let biases: Vec<(String, Tensor)> = store
            .iter()
            .filter(|(n, _)| n.ends_with("lin.b"))
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        store.zero_prefix("context.");
        for (n, t) in biases {
            store.set(&n, t).unwrap();
        }
        let mut g = Graph::inference();
        let l = store.lift(&mut g);
        let s = g.leaf(rand_tensor(4, 1, 5));
        let (k, v) = build_key_value(&mut g, &l, [s, s, s], [s, s, s]);
        // every row identical (GRU output is zero, so rows are pure bias)
        for out in [k, v] {
            let first = g.value(out).row(0).to_vec();
            for t in 1..4 {
                assert_eq!(g.value(out).row(t), &first[..]);
            }
        }
    }

    #[test]
    fn pool_matches_group_mean_oracle() {
        // H = 4, width 6, group 3 toy case against a direct concat and
        // strided group-mean evaluation
        let a = rand_tensor(4, 2, 6);
        let b = rand_tensor(4, 2, 7);
        let c = rand_tensor(4, 2, 8);
        let mut g = Graph::inference();
        let av = g.leaf(a.clone());
        let bv = g.leaf(b.clone());
        let cv = g.leaf(c.clone());
        let cat = g.concat_cols(&[av, bv, cv]);
        let pooled = g.pool3(cat);
        for r in 0..4 {
            for d in 0..2 {
                let expect = (a.get(r, d) + b.get(r, d) + c.get(r, d)) / 3.0;
                assert!((g.value(pooled).get(r, d) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_attention_over_identical_keys() {
        // single head, identity-like projections, identical key rows:
        // attention is uniform and the output is the mean projected value
        let t = 6;
        let f = 4;
        let q = rand_tensor(t, f, 9);
        let k = {
            let row = rand_tensor(1, f, 10);
            Tensor::from_fn(t, f, |_, c| row.get(0, c))
        };
        let v = rand_tensor(t, f, 11);
        let id = Tensor::from_fn(f, f, |r, c| if r == c { 1.0 } else { 0.0 });
        let mut g = Graph::inference();
        let qv = g.leaf(q);
        let kv = g.leaf(k);
        let vv = g.leaf(v.clone());
        let idv = g.leaf(id.clone());
        let w_out = g.leaf(id);
        let (z, attns) =
            multi_head_cross_attention(&mut g, qv, kv, vv, &[(idv, idv, idv)], w_out);
        for r in 0..t {
            for c in 0..t {
                assert!((g.value(attns[0]).get(r, c) - 1.0 / t as f64).abs() < 1e-12);
            }
        }
        let mean: Vec<f64> = (0..f)
            .map(|c| (0..t).map(|r| v.get(r, c)).sum::<f64>() / t as f64)
            .collect();
        for r in 0..t {
            for c in 0..f {
                assert!((g.value(z).get(r, c) - mean[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_value_projection_nullifies_output() {
        let t = 5;
        let f = 4;
        let mut g = Graph::inference();
        let q = g.leaf(rand_tensor(t, f, 12));
        let k = g.leaf(rand_tensor(t, f, 13));
        let v = g.leaf(rand_tensor(t, f, 14));
        let wq = g.leaf(rand_tensor(f, 2, 15));
        let wk = g.leaf(rand_tensor(f, 2, 16));
        let wv = g.leaf(Tensor::zeros(f, 2));
        let wq2 = g.leaf(rand_tensor(f, 2, 17));
        let wk2 = g.leaf(rand_tensor(f, 2, 18));
        let wv2 = g.leaf(Tensor::zeros(f, 2));
        let w_out = g.leaf(rand_tensor(4, f, 19));
        let (z, _) = multi_head_cross_attention(
            &mut g,
            q,
            k,
            v,
            &[(wq, wk, wv), (wq2, wk2, wv2)],
            w_out,
        );
        assert_eq!(g.value(z).max_abs(), 0.0);
    }

    #[test]
    fn attention_matches_dense_softmax_oracle() {
        // 2 heads, 4 x 4 toy case vs a direct dense evaluation
        let t = 4;
        let f = 4;
        let dh = 2;
        let q = rand_tensor(t, f, 20);
        let k = rand_tensor(t, f, 21);
        let v = rand_tensor(t, f, 22);
        let wq: Vec<Tensor> = (0..2).map(|h| rand_tensor(f, dh, 23 + h)).collect();
        let wk: Vec<Tensor> = (0..2).map(|h| rand_tensor(f, dh, 25 + h)).collect();
        let wv: Vec<Tensor> = (0..2).map(|h| rand_tensor(f, dh, 27 + h)).collect();
        let w_out = rand_tensor(2 * dh, f, 29);

        let mut g = Graph::inference();
        let qv = g.leaf(q.clone());
        let kv = g.leaf(k.clone());
        let vv = g.leaf(v.clone());
        let heads: Vec<(Var, Var, Var)> = (0..2)
            .map(|h| {
                (
                    g.leaf(wq[h].clone()),
                    g.leaf(wk[h].clone()),
                    g.leaf(wv[h].clone()),
                )
            })
            .collect();
        let w_out_v = g.leaf(w_out.clone());
        let (z, _) = multi_head_cross_attention(&mut g, qv, kv, vv, &heads, w_out_v);

        // dense oracle
        let matmul = |a: &Tensor, b: &Tensor| -> Tensor {
            Tensor::from_fn(a.rows(), b.cols(), |r, c| {
                (0..a.cols()).map(|i| a.get(r, i) * b.get(i, c)).sum()
            })
        };
        let mut head_outs = Vec::new();
        for h in 0..2 {
            let qh = matmul(&q, &wq[h]);
            let kh = matmul(&k, &wk[h]);
            let vh = matmul(&v, &wv[h]);
            let mut attn = Tensor::zeros(t, t).to_vec();
            for r in 0..t {
                let mut row = vec![0.0; t];
                let mut mx = f64::NEG_INFINITY;
                for c in 0..t {
                    let s: f64 = (0..dh).map(|i| qh.get(r, i) * kh.get(c, i)).sum::<f64>()
                        / (dh as f64).sqrt();
                    row[c] = s;
                    mx = mx.max(s);
                }
                let z_sum: f64 = row.iter().map(|&s| (s - mx).exp()).sum();
                for c in 0..t {
                    attn[r * t + c] = (row[c] - mx).exp() / z_sum;
                }
            }
            let attn = Tensor::from_vec(t, t, attn);
            head_outs.push(matmul(&attn, &vh));
        }
        let cat = Tensor::from_fn(t, 2 * dh, |r, c| {
            if c < dh {
                head_outs[0].get(r, c)
            } else {
                head_outs[1].get(r, c - dh)
            }
        });
        let expect = matmul(&cat, &w_out);
        assert!(g.value(z).max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let cfg = ModelConfig {
            history_len: 7,
            future_len: 6,
            gru_hidden: 4,
            attention_heads: 2,
            feed_forward: 10,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let mut r = rng::derive(31, "ctx-attn", &[]);
        init_context(&mut store, &mut r, &cfg);
        let mut g = Graph::inference();
        let l = store.lift(&mut g);
        let q = g.leaf(rand_tensor(7, 6, 32));
        let s1 = g.leaf(rand_tensor(7, 1, 33));
        let s2 = g.leaf(rand_tensor(7, 1, 34));
        let s3 = g.leaf(rand_tensor(7, 1, 35));
        let s4 = g.leaf(rand_tensor(7, 1, 36));
        let s5 = g.leaf(rand_tensor(7, 1, 37));
        let s6 = g.leaf(rand_tensor(7, 1, 38));
        let stages = encode_context(&mut g, &l, &cfg, q, [s1, s2, s3], [s4, s5, s6]);
        for attn in &stages.attention {
            let a = g.value(*attn);
            for r in 0..a.rows() {
                let mut sum = 0.0;
                for c in 0..a.cols() {
                    assert!(a.get(r, c) >= 0.0);
                    sum += a.get(r, c);
                }
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
        assert!(g.value(stages.c).all_finite());
    }

    #[test]
    fn joint_key_value_permutation_leaves_output_unchanged() {
        // attention over key positions has no positional encoding: jointly
        // permuting K and V rows leaves z_mca unchanged
        let t = 6;
        let f = 4;
        let q = rand_tensor(t, f, 40);
        let k = rand_tensor(t, f, 41);
        let v = rand_tensor(t, f, 42);
        let wq = rand_tensor(f, 2, 43);
        let wk = rand_tensor(f, 2, 44);
        let wv = rand_tensor(f, 2, 45);
        let w_out = rand_tensor(2, f, 46);
        let run = |k: &Tensor, v: &Tensor| {
            let mut g = Graph::inference();
            let qv = g.leaf(q.clone());
            let kv = g.leaf(k.clone());
            let vv = g.leaf(v.clone());
            let h = (g.leaf(wq.clone()), g.leaf(wk.clone()), g.leaf(wv.clone()));
            let w = g.leaf(w_out.clone());
            let (z, _) = multi_head_cross_attention(&mut g, qv, kv, vv, &[h], w);
            g.value(z).clone()
        };
        let base = run(&k, &v);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let kp = Tensor::from_fn(t, f, |r, c| k.get(perm[r], c));
        let vp = Tensor::from_fn(t, f, |r, c| v.get(perm[r], c));
        let shuffled = run(&kp, &vp);
        assert!(base.max_abs_diff(&shuffled) < 1e-10);
    }

    #[test]
    fn block_residual_only_path() {
        // z_mca = 0 and zero feed-forward: c = LN(LN(Q))
        let t = 5;
        let f = 4;
        let q = rand_tensor(t, f, 50);
        let mut g = Graph::inference();
        let qv = g.leaf(q.clone());
        let zero = g.leaf(Tensor::zeros(t, f));
        let gamma1 = g.leaf(Tensor::filled(1, f, 1.0));
        let beta1 = g.leaf(Tensor::zeros(1, f));
        let ff1w = g.leaf(Tensor::zeros(f, 8));
        let ff1b = g.leaf(Tensor::zeros(1, 8));
        let ff2w = g.leaf(Tensor::zeros(8, f));
        let ff2b = g.leaf(Tensor::zeros(1, f));
        let gamma2 = g.leaf(Tensor::filled(1, f, 1.0));
        let beta2 = g.leaf(Tensor::zeros(1, f));
        let c = transformer_block(
            &mut g,
            zero,
            qv,
            (gamma1, beta1),
            (ff1w, ff1b),
            (ff2w, ff2b),
            (gamma2, beta2),
        );
        // oracle: LayerNorm(LayerNorm(Q)) row-wise
        let ln = |x: &Tensor| -> Tensor {
            Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                let row = x.row(r);
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                let var =
                    row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
                (x.get(r, c) - mean) / (var + 1e-8).sqrt()
            })
        };
        let expect = ln(&ln(&q));
        assert!(g.value(c).max_abs_diff(&expect) < 1e-9);
    }

    #[test]
    fn block_matches_composed_oracle() {
        let t = 3;
        let f = 4;
        let ff = 6;
        let q = rand_tensor(t, f, 51);
        let z_mca = rand_tensor(t, f, 52);
        let g1 = rand_tensor(1, f, 53).map(|x| x + 1.5);
        let b1 = rand_tensor(1, f, 54);
        let f1w = rand_tensor(f, ff, 55);
        let f1b = rand_tensor(1, ff, 56);
        let f2w = rand_tensor(ff, f, 57);
        let f2b = rand_tensor(1, f, 58);
        let g2 = rand_tensor(1, f, 59).map(|x| x + 1.5);
        let b2 = rand_tensor(1, f, 60);

        let mut g = Graph::inference();
        let qv = g.leaf(q.clone());
        let zv = g.leaf(z_mca.clone());
        let g1v = g.leaf(g1.clone());
        let b1v = g.leaf(b1.clone());
        let f1wv = g.leaf(f1w.clone());
        let f1bv = g.leaf(f1b.clone());
        let f2wv = g.leaf(f2w.clone());
        let f2bv = g.leaf(f2b.clone());
        let g2v = g.leaf(g2.clone());
        let b2v = g.leaf(b2.clone());
        let c = transformer_block(
            &mut g,
            zv,
            qv,
            (g1v, b1v),
            (f1wv, f1bv),
            (f2wv, f2bv),
            (g2v, b2v),
        );

        // composed oracle
        let ln = |x: &Tensor, gamma: &Tensor, beta: &Tensor| -> Tensor {
            Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                let row = x.row(r);
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                let var =
                    row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
                (x.get(r, c) - mean) / (var + 1e-8).sqrt() * gamma.get(0, c) + beta.get(0, c)
            })
        };
        let u = ln(&q.zip_map(&z_mca, |a, b| a + b), &g1, &b1);
        let h1 = Tensor::from_fn(t, ff, |r, c| {
            let mut acc = f1b.get(0, c);
            for k in 0..f {
                acc += u.get(r, k) * f1w.get(k, c);
            }
            let s = 1.0 / (1.0 + (-acc).exp());
            acc * s
        });
        let h2 = Tensor::from_fn(t, f, |r, c| {
            let mut acc = f2b.get(0, c);
            for k in 0..ff {
                acc += h1.get(r, k) * f2w.get(k, c);
            }
            acc
        });
        let expect = ln(&u.zip_map(&h2, |a, b| a + b), &g2, &b2);
        assert!(g.value(c).max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn block_gradient_check_shrunken() {
        let cfg = ModelConfig {
            history_len: 3,
            future_len: 4,
            gru_hidden: 2,
            attention_heads: 2,
            feed_forward: 6,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let mut r = rng::derive(61, "ctx-grad", &[]);
        init_context(&mut store, &mut r, &cfg);
        let q = rand_tensor(3, 4, 62);
        let streams: Vec<Tensor> = (0..6).map(|i| rand_tensor(3, 1, 63 + i)).collect();
        let target = rand_tensor(3, 4, 70);

        let loss_of = |store: &ParamStore| {
            let mut g = Graph::inference();
            let l = store.lift(&mut g);
            let qv = g.leaf(q.clone());
            let sv: Vec<Var> = streams.iter().map(|s| g.leaf(s.clone())).collect();
            let st = encode_context(&mut g, &l, &cfg, qv, [sv[0], sv[1], sv[2]], [sv[3], sv[4], sv[5]]);
            let tt = g.leaf(target.clone());
            let loss = g.mse(st.c, tt);
            g.value(loss).scalar_value()
        };

        let mut g = Graph::new();
        let l = store.lift(&mut g);
        let qv = g.leaf(q.clone());
        let sv: Vec<Var> = streams.iter().map(|s| g.leaf(s.clone())).collect();
        let st = encode_context(&mut g, &l, &cfg, qv, [sv[0], sv[1], sv[2]], [sv[3], sv[4], sv[5]]);
        let tt = g.leaf(target.clone());
        let loss = g.mse(st.c, tt);
        let grads = g.backward(loss);
        let analytic = l.grads(&grads);

        let h = 1e-5;
        for i in 0..store.len() {
            let base = store.tensor_at(i).clone();
            // sample a few elements per parameter to keep runtime sane
            let step = (base.len() / 6).max(1);
            for e in (0..base.len()).step_by(step) {
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
}
