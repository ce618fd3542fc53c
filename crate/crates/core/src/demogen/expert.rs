use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::doorworld::{Action, EnvParams, WorldState};
use crate::stage::Stage;

/// Scripted controller gains and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Noise scale, relative to each actuator's rate limit.
    pub sigma: f64,
    /// Distance held while the left hand is raised.
    pub approach_d: f64,
    /// Docked working distance in front of the door.
    pub work_d: f64,
    /// Raised left-hand height, just above the handle.
    pub raise_h: f64,
    pub raise_rate: f64,
    pub press_rate: f64,
    pub reach_rate: f64,
    pub push_reach: f64,
    pub dock_speed: f64,
    pub push_speed: f64,
    pub exit_speed: f64,
    /// Per-step probability of starting the press once docked.
    pub press_prob: f64,
    /// Per-step probability of starting the reach once the hand is clear.
    pub reach_prob: f64,
    pub gain: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            sigma: 0.15,
            approach_d: 0.9,
            work_d: 0.35,
            raise_h: 1.03,
            raise_rate: 0.08,
            press_rate: 0.05,
            reach_rate: 0.06,
            push_reach: 0.5,
            dock_speed: 0.3,
            push_speed: 0.25,
            exit_speed: 0.4,
            press_prob: 0.4,
            reach_prob: 0.5,
            gain: 1.5,
        }
    }
}

fn toward(current: f64, target: f64, rate: f64) -> f64 {
    (target - current).clamp(-rate, rate)
}

/// One expert action for the given state and commanded stage.
///
/// The controller is memoryless; the waits before pressing and before
/// reaching for the door are per-step coin flips, so they are geometric.
pub fn expert_action(s: &WorldState, stage: Stage, p: &EnvParams, cfg: &ExpertConfig, rng: &mut impl Rng) -> Action {
    let d = s.distance(p);
    let rest = |v: f64| toward(v, 0.0, p.arm_rate_limit);
    let mut a = match stage {
        Stage::S1 => Action {
            d_arm_left: rest(s.arm_left_h),
            d_arm_right: rest(s.arm_right_r),
            base_v: (cfg.gain * (d - cfg.approach_d)).clamp(-1.0, 1.0),
        },
        Stage::S2 => {
            let raised = s.arm_left_h >= p.handle_height - 0.01;
            let docked = d <= cfg.work_d + 0.01;
            let mut d_left = toward(s.arm_left_h, cfg.raise_h, cfg.raise_rate);
            let base_v = if !raised {
                (cfg.gain * (d - (cfg.approach_d - 0.05))).clamp(-cfg.dock_speed, cfg.dock_speed)
            } else if docked {
                if rng.random::<f64>() < cfg.press_prob {
                    d_left = -cfg.press_rate;
                }
                0.0
            } else {
                (cfg.gain * (d - cfg.work_d)).clamp(0.0, cfg.dock_speed)
            };
            Action {
                d_arm_left: d_left,
                d_arm_right: rest(s.arm_right_r),
                base_v,
            }
        }
        Stage::S3 => {
            let top = s.arm_left_h >= cfg.raise_h - 0.01;
            if s.latch_engaged && s.hand_above_handle {
                // Press until the latch gives.
                Action {
                    d_arm_left: -cfg.press_rate,
                    d_arm_right: rest(s.arm_right_r),
                    base_v: 0.0,
                }
            } else if s.hand_above_handle && !top && s.arm_right_r < 0.05 {
                // Lift off the lever and let the handle spring back.
                Action {
                    d_arm_left: toward(s.arm_left_h, cfg.raise_h, cfg.raise_rate),
                    d_arm_right: rest(s.arm_right_r),
                    base_v: 0.0,
                }
            } else {
                // Hand clear: reach for the door, after a short random pause.
                let go = s.arm_right_r >= 0.05 || !s.hand_above_handle || rng.random::<f64>() < cfg.reach_prob;
                Action {
                    d_arm_left: 0.0,
                    d_arm_right: if go { cfg.reach_rate } else { rest(s.arm_right_r) },
                    base_v: 0.0,
                }
            }
        }
        Stage::S4 => Action {
            d_arm_left: 0.0,
            d_arm_right: toward(s.arm_right_r, cfg.push_reach, cfg.reach_rate),
            base_v: cfg.push_speed,
        },
        Stage::S5 => {
            let gap = p.through_x() + 0.1 - s.base_x;
            Action {
                d_arm_left: rest(s.arm_left_h),
                d_arm_right: rest(s.arm_right_r),
                base_v: if gap > 0.0 { (cfg.gain * gap).clamp(0.1, cfg.exit_speed) } else { 0.0 },
            }
        }
    };
    if cfg.sigma > 0.0 {
        let mut n = || rng.sample::<f64, _>(StandardNormal) * cfg.sigma;
        a.d_arm_left += n() * p.arm_rate_limit;
        a.d_arm_right += n() * p.arm_rate_limit;
        a.base_v += n();
    }
    a
}
