//! Platoon trajectories, training windows, and the train/test split.
//!
//! A platoon is a leader / study / follower triple sharing one lane over a
//! contiguous frame span at 10 Hz. Windows slide over each platoon taking
//! 30 history frames and 50 future frames. Units are feet and feet/second
//! throughout.

use log::warn;

use crate::error::{Error, Result};
use crate::rng;

/// History length in frames (3 s at 10 Hz).
pub const HISTORY_LEN: usize = 30;
/// Future horizon in frames (5 s at 10 Hz).
pub const FUTURE_LEN: usize = 50;
/// Total span of one window.
pub const WINDOW_LEN: usize = HISTORY_LEN + FUTURE_LEN;

/// One vehicle's contiguous track.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleTrack {
    pub vehicle_id: i64,
    pub start_frame: i64,
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
}

impl VehicleTrack {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// A leader / study / follower triple over a shared frame span.
#[derive(Clone, Debug, PartialEq)]
pub struct PlatoonTrajectory {
    pub platoon_id: u64,
    pub lane: i64,
    pub lea: VehicleTrack,
    pub stu: VehicleTrack,
    pub fol: VehicleTrack,
}

impl PlatoonTrajectory {
    pub fn len(&self) -> usize {
        self.stu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stu.is_empty()
    }

    /// Gap positivity over the whole span: leader ahead of study, study
    /// ahead of follower.
    pub fn gaps_positive(&self) -> bool {
        (0..self.len()).all(|t| {
            self.lea.positions[t] > self.stu.positions[t]
                && self.stu.positions[t] > self.fol.positions[t]
        })
    }
}

/// Identifies where a window came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowMeta {
    pub platoon_id: u64,
    pub lea_id: i64,
    pub stu_id: i64,
    pub fol_id: i64,
    pub start_frame: i64,
}

/// One sample: 30-frame histories of the three vehicles plus gaps, and the
/// study vehicle's 50-frame future. Positions in feet, speeds in ft/s.
#[derive(Clone, Debug, PartialEq)]
pub struct PlatoonWindow {
    pub x_lea_his: Vec<f64>,
    pub x_stu_his: Vec<f64>,
    pub x_fol_his: Vec<f64>,
    pub v_lea_his: Vec<f64>,
    pub v_stu_his: Vec<f64>,
    pub v_fol_his: Vec<f64>,
    /// Per-frame gap leader - study (> 0).
    pub dx1_his: Vec<f64>,
    /// Per-frame gap study - follower (> 0).
    pub dx2_his: Vec<f64>,
    pub x_stu_fut: Vec<f64>,
    pub meta: WindowMeta,
}

impl PlatoonWindow {
    /// Checks the length, finiteness and gap-positivity invariants.
    pub fn validate(&self) -> Result<()> {
        let his = [
            &self.x_lea_his,
            &self.x_stu_his,
            &self.x_fol_his,
            &self.v_lea_his,
            &self.v_stu_his,
            &self.v_fol_his,
            &self.dx1_his,
            &self.dx2_his,
        ];
        for h in his {
            if h.len() != HISTORY_LEN {
                return Err(Error::ShapeMismatch {
                    context: "platoon window history",
                    expected: HISTORY_LEN.to_string(),
                    got: h.len().to_string(),
                });
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("platoon window history"));
            }
        }
        if self.x_stu_fut.len() != FUTURE_LEN {
            return Err(Error::ShapeMismatch {
                context: "platoon window future",
                expected: FUTURE_LEN.to_string(),
                got: self.x_stu_fut.len().to_string(),
            });
        }
        if self.x_stu_fut.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("platoon window future"));
        }
        for t in 0..HISTORY_LEN {
            if self.dx1_his[t] <= 0.0 || self.dx2_his[t] <= 0.0 {
                return Err(Error::NonFinite("platoon window gap positivity"));
            }
        }
        Ok(())
    }
}

/// Number of windows a platoon of `len` frames yields at the given stride:
/// `floor((len - 80) / stride) + 1` for `len >= 80`.
pub fn expected_window_count(len: usize, stride: usize) -> usize {
    if len < WINDOW_LEN {
        0
    } else {
        (len - WINDOW_LEN) / stride + 1
    }
}

/// Slides 80-frame windows over each platoon. Platoons shorter than one
/// window are skipped with a warning.
pub fn window_platoons(platoons: &[PlatoonTrajectory], stride: usize) -> Vec<PlatoonWindow> {
    assert!(stride >= 1, "stride must be at least 1");
    let mut out = Vec::new();
    for p in platoons {
        if p.len() < WINDOW_LEN {
            warn!(
                "platoon {} has {} frames, need {}; skipped",
                p.platoon_id,
                p.len(),
                WINDOW_LEN
            );
            continue;
        }
        let mut s = 0;
        while s + WINDOW_LEN <= p.len() {
            let h = s + HISTORY_LEN;
            let f = s + WINDOW_LEN;
            let win = PlatoonWindow {
                x_lea_his: p.lea.positions[s..h].to_vec(),
                x_stu_his: p.stu.positions[s..h].to_vec(),
                x_fol_his: p.fol.positions[s..h].to_vec(),
                v_lea_his: p.lea.speeds[s..h].to_vec(),
                v_stu_his: p.stu.speeds[s..h].to_vec(),
                v_fol_his: p.fol.speeds[s..h].to_vec(),
                dx1_his: (s..h)
                    .map(|t| p.lea.positions[t] - p.stu.positions[t])
                    .collect(),
                dx2_his: (s..h)
                    .map(|t| p.stu.positions[t] - p.fol.positions[t])
                    .collect(),
                x_stu_fut: p.stu.positions[h..f].to_vec(),
                meta: WindowMeta {
                    platoon_id: p.platoon_id,
                    lea_id: p.lea.vehicle_id,
                    stu_id: p.stu.vehicle_id,
                    fol_id: p.fol.vehicle_id,
                    start_frame: p.stu.start_frame + s as i64,
                },
            };
            out.push(win);
            s += stride;
        }
    }
    out
}

/// Splits windows by source platoon id so no platoon contributes to both
/// sides. Deterministic given the seed.
pub fn split_train_test(
    windows: &[PlatoonWindow],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<PlatoonWindow>, Vec<PlatoonWindow>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let mut ids: Vec<u64> = Vec::new();
    for w in windows {
        if !ids.contains(&w.meta.platoon_id) {
            ids.push(w.meta.platoon_id);
        }
    }
    if ids.len() < 2 {
        return Err(Error::TooFewPlatoons(ids.len()));
    }
    // seeded Fisher-Yates
    let mut r = rng::derive(seed, "split", &[]);
    for i in (1..ids.len()).rev() {
        let j = rand::Rng::gen_range(&mut r, 0..=i);
        ids.swap(i, j);
    }
    let n_train = ((ids.len() as f64 * ratio).round() as usize).clamp(1, ids.len() - 1);
    let train_ids: std::collections::HashSet<u64> = ids[..n_train].iter().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for w in windows {
        if train_ids.contains(&w.meta.platoon_id) {
            train.push(w.clone());
        } else {
            test.push(w.clone());
        }
    }
    Ok((train, test))
}
