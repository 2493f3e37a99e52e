//! Synthetic car-following data for desk-scale verification.
//!
//! Three vehicles are integrated at 10 Hz: the leader follows a scripted
//! acceleration profile per scenario, the study vehicle and the follower
//! respond with the Intelligent Driver Model. Followers start at the IDM
//! equilibrium spacing of the leader's initial speed (plus a seeded jitter
//! factor outside the steady scenario), so generated platoons are
//! collision-free and the steady scenario sits exactly on the model's
//! fixed point.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::data::platoon::{PlatoonTrajectory, VehicleTrack};
use crate::error::{Error, Result};
use crate::rng;

/// Frames per platoon (20 s at 10 Hz).
pub const PLATOON_FRAMES: usize = 200;
const DT: f64 = 0.1;
const MAX_ATTEMPTS: usize = 10;

/// Leader behaviour of one generated platoon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Constant leader speed; followers start on the equilibrium manifold.
    Steady,
    /// Hard braking at t = 5 s followed by recovery.
    Brake,
    /// Sinusoidal leader speed oscillation.
    Oscillate,
}

/// Intelligent Driver Model parameters in feet / seconds.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IdmParams {
    /// Maximum acceleration (ft/s^2).
    pub a_max: f64,
    /// Comfortable braking deceleration (ft/s^2).
    pub b_comf: f64,
    /// Jam spacing (ft).
    pub s0: f64,
    /// Desired time headway (s).
    pub headway: f64,
    /// Desired-speed margin added to the leader's base speed (ft/s).
    pub v0_margin: f64,
    /// Acceleration exponent.
    pub delta: f64,
    /// Bumper-to-bumper vehicle length subtracted from front-to-front
    /// spacing (ft).
    pub vehicle_len: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            a_max: 4.5,
            b_comf: 6.5,
            s0: 8.0,
            headway: 1.5,
            v0_margin: 25.0,
            delta: 4.0,
            vehicle_len: 15.0,
        }
    }
}

impl IdmParams {
    /// IDM acceleration given own speed, net gap and leader speed.
    fn accel(&self, v: f64, net_gap: f64, v_lead: f64, v0: f64) -> f64 {
        let dv = v - v_lead;
        let s_star =
            self.s0 + (v * self.headway).max(0.0) + v * dv / (2.0 * (self.a_max * self.b_comf).sqrt());
        let s_star = s_star.max(self.s0);
        self.a_max * (1.0 - (v / v0).powf(self.delta) - (s_star / net_gap).powi(2))
    }

    /// Net equilibrium gap for steady following at speed `v`: the spacing
    /// at which IDM acceleration is exactly zero.
    pub fn equilibrium_gap(&self, v: f64, v0: f64) -> f64 {
        let s_star = self.s0 + v * self.headway;
        s_star / (1.0 - (v / v0).powf(self.delta)).sqrt()
    }
}

struct LeaderProfile {
    base_speed: f64,
    scenario: Scenario,
}

impl LeaderProfile {
    fn accel_at(&self, t: f64, v: f64) -> f64 {
        match self.scenario {
            Scenario::Steady => 0.0,
            Scenario::Brake => {
                let brake_target = (self.base_speed - 30.0).max(15.0);
                if (5.0..8.0).contains(&t) && v > brake_target {
                    -10.0
                } else if t >= 8.0 && v < self.base_speed {
                    6.0
                } else {
                    0.0
                }
            }
            Scenario::Oscillate => {
                // v(t) = base + A sin(w t): a(t) = A w cos(w t)
                let amp = 8.0;
                let omega = 2.0 * std::f64::consts::PI / 8.0;
                amp * omega * (omega * t).cos()
            }
        }
    }
}

fn simulate(
    profile: &LeaderProfile,
    params: &IdmParams,
    spacing_jitter: [f64; 2],
    frames: usize,
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let v_base = profile.base_speed;
    let v0 = v_base + params.v0_margin;
    let eq_gap = params.equilibrium_gap(v_base, v0);

    let mut x_lea = 2.0 * (eq_gap + params.vehicle_len) + 100.0;
    let mut x_stu = x_lea - (eq_gap * spacing_jitter[0] + params.vehicle_len);
    let mut x_fol = x_stu - (eq_gap * spacing_jitter[1] + params.vehicle_len);
    let mut v_lea = v_base;
    let mut v_stu = v_base;
    let mut v_fol = v_base;

    let mut out = (
        Vec::with_capacity(frames),
        Vec::with_capacity(frames),
        Vec::with_capacity(frames),
        Vec::with_capacity(frames),
        Vec::with_capacity(frames),
        Vec::with_capacity(frames),
    );
    for frame in 0..frames {
        out.0.push(x_lea);
        out.1.push(x_stu);
        out.2.push(x_fol);
        out.3.push(v_lea);
        out.4.push(v_stu);
        out.5.push(v_fol);

        let t = frame as f64 * DT;
        let gap1 = x_lea - x_stu - params.vehicle_len;
        let gap2 = x_stu - x_fol - params.vehicle_len;
        if gap1 <= 0.0 || gap2 <= 0.0 {
            return None;
        }
        let a_lea = profile.accel_at(t, v_lea);
        let a_stu = params.accel(v_stu, gap1, v_lea, v0);
        let a_fol = params.accel(v_fol, gap2, v_stu, v0);

        // trapezoidal speed update with non-negative speeds
        let step = |x: &mut f64, v: &mut f64, a: f64| {
            let v_next = (*v + a * DT).max(0.0);
            *x += 0.5 * (*v + v_next) * DT;
            *v = v_next;
        };
        step(&mut x_lea, &mut v_lea, a_lea);
        step(&mut x_stu, &mut v_stu, a_stu);
        step(&mut x_fol, &mut v_fol, a_fol);
    }
    // final gap check
    if x_lea - x_stu <= params.vehicle_len || x_stu - x_fol <= params.vehicle_len {
        return None;
    }
    Some(out)
}

/// Generates `n_platoons` collision-free 200-frame platoons. Pure function
/// of `(n_platoons, seed, scenario)`.
pub fn generate_synthetic(
    n_platoons: usize,
    seed: u64,
    scenario: Scenario,
) -> Result<Vec<PlatoonTrajectory>> {
    generate_with(n_platoons, seed, scenario, &IdmParams::default(), PLATOON_FRAMES)
}

/// As [`generate_synthetic`] with explicit IDM parameters and frame count.
pub fn generate_with(
    n_platoons: usize,
    seed: u64,
    scenario: Scenario,
    params: &IdmParams,
    frames: usize,
) -> Result<Vec<PlatoonTrajectory>> {
    assert!(n_platoons >= 1, "need at least one platoon");
    let mut out = Vec::with_capacity(n_platoons);
    for i in 0..n_platoons {
        let platoon = generate_one(i as u64, seed, scenario, params, frames)?;
        out.push(platoon);
    }
    Ok(out)
}

fn generate_one(
    index: u64,
    seed: u64,
    scenario: Scenario,
    params: &IdmParams,
    frames: usize,
) -> Result<PlatoonTrajectory> {
    let tag = match scenario {
        Scenario::Steady => "synthetic-steady",
        Scenario::Brake => "synthetic-brake",
        Scenario::Oscillate => "synthetic-oscillate",
    };
    let mut r: ChaCha12Rng = rng::derive(seed, tag, &[index]);
    let base_speed = match scenario {
        Scenario::Steady => r.gen_range(40.0..90.0),
        Scenario::Brake => r.gen_range(60.0..80.0),
        Scenario::Oscillate => r.gen_range(50.0..75.0),
    };
    let profile = LeaderProfile {
        base_speed,
        scenario,
    };
    for attempt in 0..MAX_ATTEMPTS {
        // the steady scenario starts exactly on the equilibrium manifold;
        // the transient scenarios jitter the initial spacing upward
        let jitter = if scenario == Scenario::Steady {
            [1.0, 1.0]
        } else {
            [
                r.gen_range(1.0..1.3) + 0.05 * attempt as f64,
                r.gen_range(1.0..1.3) + 0.05 * attempt as f64,
            ]
        };
        if let Some((xl, xs, xf, vl, vs, vf)) = simulate(&profile, params, jitter, frames) {
            let vid = index as i64 * 3;
            return Ok(PlatoonTrajectory {
                platoon_id: index,
                lane: 2,
                lea: VehicleTrack {
                    vehicle_id: vid + 1,
                    start_frame: 0,
                    positions: xl,
                    speeds: vl,
                },
                stu: VehicleTrack {
                    vehicle_id: vid + 2,
                    start_frame: 0,
                    positions: xs,
                    speeds: vs,
                },
                fol: VehicleTrack {
                    vehicle_id: vid + 3,
                    start_frame: 0,
                    positions: xf,
                    speeds: vf,
                },
            });
        }
    }
    Err(Error::CollisionRetriesExhausted {
        attempts: MAX_ATTEMPTS,
    })
}

/// Convenience mix cycling steady / brake / oscillate platoons, re-keyed so
/// platoon ids stay unique.
pub fn generate_mixed(n_platoons: usize, seed: u64) -> Result<Vec<PlatoonTrajectory>> {
    let mut out = Vec::with_capacity(n_platoons);
    for i in 0..n_platoons {
        let scenario = match i % 3 {
            0 => Scenario::Steady,
            1 => Scenario::Brake,
            _ => Scenario::Oscillate,
        };
        let mut p = generate_one(i as u64, seed, scenario, &IdmParams::default(), PLATOON_FRAMES)?;
        p.platoon_id = i as u64;
        out.push(p);
    }
    Ok(out)
}
