//! Gated recurrent unit used by the history and context encoders.
//!
//! Gate equations follow the reset-after-matmul convention:
//!
//! ```text
//! r_t = sigmoid(x_t W_ir + h_{t-1} W_hr + b_r)
//! z_t = sigmoid(x_t W_iz + h_{t-1} W_hz + b_z)
//! n_t = tanh(x_t W_in + b_in + r_t (x) (h_{t-1} W_hn + b_hn))
//! h_t = (1 - z_t) (x) n_t + z_t (x) h_{t-1}
//! ```

use rand_chacha::ChaCha12Rng;

use crate::graph::{Graph, Var};
use crate::params::{uniform, Lifted, ParamStore};

/// Registers one GRU layer's weights under `{prefix}.*`.
pub fn init_gru(
    store: &mut ParamStore,
    rng: &mut ChaCha12Rng,
    prefix: &str,
    input: usize,
    hidden: usize,
) {
    let bound = 1.0 / (hidden as f64).sqrt();
    for gate in ["w_ir", "w_iz", "w_in"] {
        store.insert(format!("{prefix}.{gate}"), uniform(rng, input, hidden, bound));
    }
    for gate in ["w_hr", "w_hz", "w_hn"] {
        store.insert(format!("{prefix}.{gate}"), uniform(rng, hidden, hidden, bound));
    }
    for bias in ["b_r", "b_z", "b_in", "b_hn"] {
        store.insert(format!("{prefix}.{bias}"), uniform(rng, 1, hidden, bound));
    }
}

/// Runs one GRU layer over a T x input sequence, returning the T x hidden
/// sequence of hidden states. The initial state is zero.
pub fn gru_forward(g: &mut Graph, l: &Lifted<'_>, prefix: &str, xs: Var) -> Var {
    let w_ir = l.var(&format!("{prefix}.w_ir"));
    let w_iz = l.var(&format!("{prefix}.w_iz"));
    let w_in = l.var(&format!("{prefix}.w_in"));
    let w_hr = l.var(&format!("{prefix}.w_hr"));
    let w_hz = l.var(&format!("{prefix}.w_hz"));
    let w_hn = l.var(&format!("{prefix}.w_hn"));
    let b_r = l.var(&format!("{prefix}.b_r"));
    let b_z = l.var(&format!("{prefix}.b_z"));
    let b_in = l.var(&format!("{prefix}.b_in"));
    let b_hn = l.var(&format!("{prefix}.b_hn"));

    let steps = g.value(xs).rows();
    let hidden = g.value(w_hr).rows();
    let mut h = g.leaf(crate::tensor::Tensor::zeros(1, hidden));
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = g.slice_rows(xs, t, t + 1);
        let xr = g.matmul(xt, w_ir);
        let hr = g.matmul(h, w_hr);
        let pre_r = g.add(xr, hr);
        let pre_r = g.add_rowvec(pre_r, b_r);
        let r = g.sigmoid(pre_r);

        let xz = g.matmul(xt, w_iz);
        let hz = g.matmul(h, w_hz);
        let pre_z = g.add(xz, hz);
        let pre_z = g.add_rowvec(pre_z, b_z);
        let z = g.sigmoid(pre_z);

        let xn = g.matmul(xt, w_in);
        let xn = g.add_rowvec(xn, b_in);
        let hn = g.matmul(h, w_hn);
        let hn = g.add_rowvec(hn, b_hn);
        let gated = g.mul(r, hn);
        let pre_n = g.add(xn, gated);
        let n = g.tanh(pre_n);

        // h' = n + z (x) (h - n)
        let diff = g.sub(h, n);
        let scaled = g.mul(z, diff);
        h = g.add(n, scaled);
        outputs.push(h);
    }
    g.concat_rows(&outputs)
}
