//! Window normalization.
//!
//! Positions are first re-expressed as displacements relative to the study
//! vehicle's last history position, which anchors `x_stu_his[H-1]` at
//! exactly zero and makes the diffusion target translation-invariant.
//! Position channels are then scaled by their training-split standard
//! deviation (no shift, preserving the anchor); speed and gap channels are
//! fully standardized (mean shift and scale). Statistics come from the
//! training split only. Applying then inverting is the identity to within
//! 1e-9 relative error.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::platoon::{PlatoonWindow, HISTORY_LEN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shift/scale pair for one channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub shift: f64,
    pub scale: f64,
}

impl ChannelStats {
    fn apply(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    fn invert(&self, x: f64) -> f64 {
        x * self.scale + self.shift
    }
}

/// Per-channel normalization statistics, fit on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub pos_lea: ChannelStats,
    pub pos_stu: ChannelStats,
    pub pos_fol: ChannelStats,
    pub pos_fut: ChannelStats,
    pub spd_lea: ChannelStats,
    pub spd_stu: ChannelStats,
    pub spd_fol: ChannelStats,
    pub gap_lead: ChannelStats,
    pub gap_follow: ChannelStats,
}

/// One normalized sample ready for the model, laid out as tensors:
/// `stu_hist` is H x 2 (position, speed); the six context streams are
/// H x 1 each; `future` is 1 x F.
#[derive(Clone, Debug)]
pub struct NormalizedWindow {
    pub stu_hist: Tensor,
    pub lea_pos: Tensor,
    pub lea_spd: Tensor,
    pub gap1: Tensor,
    pub fol_pos: Tensor,
    pub fol_spd: Tensor,
    pub gap2: Tensor,
    pub future: Tensor,
    /// Anchor in feet: the study vehicle's last history position.
    pub anchor_ft: f64,
}

struct Accum {
    n: usize,
    sum: f64,
    sumsq: f64,
}

impl Accum {
    fn new() -> Self {
        Self {
            n: 0,
            sum: 0.0,
            sumsq: 0.0,
        }
    }

    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    fn stats(&self, name: &str, keep_shift: bool) -> ChannelStats {
        let mean = self.sum / self.n as f64;
        let var = (self.sumsq / self.n as f64 - mean * mean).max(0.0);
        let mut scale = var.sqrt();
        if scale < 1e-12 {
            warn!("channel {name} has zero variance; scale clamped to 1");
            scale = 1.0;
        }
        ChannelStats {
            shift: if keep_shift { mean } else { 0.0 },
            scale,
        }
    }
}

/// Fits per-channel statistics on the training split.
pub fn fit_normalization(train: &[PlatoonWindow]) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("normalization requires a training split"));
    }
    let mut acc = [
        Accum::new(), // pos_lea
        Accum::new(), // pos_stu
        Accum::new(), // pos_fol
        Accum::new(), // pos_fut
        Accum::new(), // spd_lea
        Accum::new(), // spd_stu
        Accum::new(), // spd_fol
        Accum::new(), // gap_lead
        Accum::new(), // gap_follow
    ];
    for w in train {
        let anchor = w.x_stu_his[HISTORY_LEN - 1];
        for t in 0..HISTORY_LEN {
            acc[0].push(w.x_lea_his[t] - anchor);
            acc[1].push(w.x_stu_his[t] - anchor);
            acc[2].push(w.x_fol_his[t] - anchor);
            acc[4].push(w.v_lea_his[t]);
            acc[5].push(w.v_stu_his[t]);
            acc[6].push(w.v_fol_his[t]);
            acc[7].push(w.dx1_his[t]);
            acc[8].push(w.dx2_his[t]);
        }
        for &x in &w.x_stu_fut {
            acc[3].push(x - anchor);
        }
    }
    Ok(NormalizationStats {
        pos_lea: acc[0].stats("pos_lea", false),
        pos_stu: acc[1].stats("pos_stu", false),
        pos_fol: acc[2].stats("pos_fol", false),
        pos_fut: acc[3].stats("pos_fut", false),
        spd_lea: acc[4].stats("spd_lea", true),
        spd_stu: acc[5].stats("spd_stu", true),
        spd_fol: acc[6].stats("spd_fol", true),
        gap_lead: acc[7].stats("gap_lead", true),
        gap_follow: acc[8].stats("gap_follow", true),
    })
}

/// Applies anchoring and per-channel normalization, producing model-ready
/// tensors.
pub fn normalize_window(w: &PlatoonWindow, stats: &NormalizationStats) -> NormalizedWindow {
    let h = w.x_stu_his.len();
    let anchor = w.x_stu_his[h - 1];
    let col = |data: Vec<f64>| Tensor::col_vec(data);

    let mut hist = Vec::with_capacity(h * 2);
    for t in 0..h {
        hist.push(stats.pos_stu.apply(w.x_stu_his[t] - anchor));
        hist.push(stats.spd_stu.apply(w.v_stu_his[t]));
    }
    NormalizedWindow {
        stu_hist: Tensor::from_vec(h, 2, hist),
        lea_pos: col(
            w.x_lea_his
                .iter()
                .map(|&x| stats.pos_lea.apply(x - anchor))
                .collect(),
        ),
        lea_spd: col(w.v_lea_his.iter().map(|&v| stats.spd_lea.apply(v)).collect()),
        gap1: col(w.dx1_his.iter().map(|&x| stats.gap_lead.apply(x)).collect()),
        fol_pos: col(
            w.x_fol_his
                .iter()
                .map(|&x| stats.pos_fol.apply(x - anchor))
                .collect(),
        ),
        fol_spd: col(w.v_fol_his.iter().map(|&v| stats.spd_fol.apply(v)).collect()),
        gap2: col(w.dx2_his.iter().map(|&x| stats.gap_follow.apply(x)).collect()),
        future: Tensor::row_vec(
            w.x_stu_fut
                .iter()
                .map(|&x| stats.pos_fut.apply(x - anchor))
                .collect(),
        ),
        anchor_ft: anchor,
    }
}

impl NormalizationStats {
    /// Denormalizes a predicted future back to feet.
    pub fn invert_future(&self, pred: &[f64], anchor_ft: f64) -> Vec<f64> {
        pred.iter()
            .map(|&x| self.pos_fut.invert(x) + anchor_ft)
            .collect()
    }

    /// Denormalizes history positions of the given channel back to feet.
    pub fn invert_position(&self, channel: &ChannelStats, xs: &[f64], anchor_ft: f64) -> Vec<f64> {
        xs.iter().map(|&x| channel.invert(x) + anchor_ft).collect()
    }
}
