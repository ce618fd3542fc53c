//! One-dimensional door-opening world with a hidden latch.
//!
//! The robot walks along a single axis toward a door. Its left hand works at a
//! fixed lateral offset, so the only left-arm coordinate is height; pressing
//! the handle lever down past `theta_unlatch` releases the latch. The right
//! arm reaches forward to push the door once it is unlatched. Both the handle
//! and the door return under springs, and the latch re-engages if the handle
//! springs back below `theta_relatch` while the door is still closed.
//!
//! The latch flag never enters an [`Observation`].

mod params;

pub use params::EnvParams;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stage::Stage;

pub const VISUAL_DIM: usize = 16;
pub const PROPRIO_DIM: usize = 2;
pub const TORQUE_DIM: usize = 2;
/// Flattened observation width: visual, proprio, torque.
pub const OBS_DIM: usize = VISUAL_DIM + PROPRIO_DIM + TORQUE_DIM;
pub const ACTION_DIM: usize = 3;
const RAY_COUNT: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub base_x: f64,
    pub arm_left_h: f64,
    pub arm_right_r: f64,
    pub handle_angle: f64,
    pub door_angle: f64,
    pub latch_engaged: bool,
    pub left_contact: bool,
    pub right_contact: bool,
    /// The left hand came onto the handle from above (it can press the lever).
    pub hand_above_handle: bool,
    /// Blocked base travel accumulated while the hand rests on the lever.
    pub lever_strain: f64,
    pub torque_left: f64,
    pub torque_right: f64,
    pub t: usize,
}

impl WorldState {
    pub fn distance(&self, p: &EnvParams) -> f64 {
        p.door_x - self.base_x
    }

    fn hand_over_handle(&self, p: &EnvParams) -> bool {
        over_handle(self.distance(p), self.door_angle, p)
    }

    pub fn arms_at_rest(&self, p: &EnvParams) -> bool {
        self.arm_left_h <= p.rest_tol && self.arm_right_r <= p.rest_tol
    }

    /// Terminal success: through the doorway, door open, arms lowered.
    pub fn is_success(&self, p: &EnvParams) -> bool {
        self.base_x >= p.through_x() && self.door_angle >= p.theta_open && self.arms_at_rest(p)
    }

    /// Snap the handle back and re-engage the latch, as if the hand slipped
    /// off the lever. No-op on the latch when the door is already open.
    pub fn force_relatch(&mut self, p: &EnvParams) {
        self.handle_angle = 0.0;
        self.hand_above_handle = false;
        self.lever_strain = 0.0;
        self.left_contact = false;
        self.torque_left = 0.0;
        if self.door_angle <= p.door_closed_tol && !p.latch_disabled {
            self.door_angle = 0.0;
            self.latch_engaged = true;
        }
    }
}

fn over_handle(d: f64, door_angle: f64, p: &EnvParams) -> bool {
    (0.0..=p.handle_reach).contains(&d) && door_angle <= 0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub visual: [f64; VISUAL_DIM],
    pub proprio: [f64; PROPRIO_DIM],
    pub torque: [f64; TORQUE_DIM],
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.extend_from_slice(&self.visual);
        v.extend_from_slice(&self.proprio);
        v.extend_from_slice(&self.torque);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != OBS_DIM {
            return Err(Error::dim(format!("observation needs {OBS_DIM} values, got {}", v.len())));
        }
        let mut o = Observation {
            visual: [0.0; VISUAL_DIM],
            proprio: [0.0; PROPRIO_DIM],
            torque: [0.0; TORQUE_DIM],
        };
        o.visual.copy_from_slice(&v[..VISUAL_DIM]);
        o.proprio.copy_from_slice(&v[VISUAL_DIM..VISUAL_DIM + PROPRIO_DIM]);
        o.torque.copy_from_slice(&v[VISUAL_DIM + PROPRIO_DIM..]);
        Ok(o)
    }

    pub fn handle_visible(&self) -> bool {
        self.visual[3] > 0.5
    }

    /// Door angle recovered from the visual sine/cosine pair.
    pub fn door_angle(&self) -> f64 {
        self.visual[1].atan2(self.visual[2])
    }

    /// Depth reading toward the door (saturated at close range).
    pub fn depth(&self) -> f64 {
        self.visual[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// Left-hand height change, m/step.
    pub d_arm_left: f64,
    /// Right-hand reach change, m/step.
    pub d_arm_right: f64,
    /// Commanded base velocity, m/s.
    pub base_v: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        d_arm_left: 0.0,
        d_arm_right: 0.0,
        base_v: 0.0,
    };

    pub fn from_slice(v: &[f64]) -> Action {
        Action {
            d_arm_left: v[0],
            d_arm_right: v[1],
            base_v: v[2],
        }
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [self.d_arm_left, self.d_arm_right, self.base_v]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Applies actuator limits: arm rates and the ±1 m/s velocity bound.
    pub fn clamped(self, p: &EnvParams) -> Action {
        let r = p.arm_rate_limit;
        Action {
            d_arm_left: self.d_arm_left.clamp(-r, r),
            d_arm_right: self.d_arm_right.clamp(-r, r),
            base_v: self.base_v.clamp(-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub stage: Stage,
    pub latch_released: bool,
    pub relatched: bool,
    pub left_contact_onset: bool,
    pub right_contact_onset: bool,
    pub collision: bool,
    pub success: bool,
}

/// Fresh episode: latched, closed, arms at rest.
pub fn reset(seed: u64, randomize_init: bool, p: &EnvParams) -> (WorldState, Observation) {
    let base_x = if randomize_init {
        sample_start(&mut ChaCha8Rng::seed_from_u64(seed), p)
    } else {
        p.start_x_canonical
    };
    let s = WorldState {
        base_x,
        arm_left_h: 0.0,
        arm_right_r: 0.0,
        handle_angle: 0.0,
        door_angle: 0.0,
        latch_engaged: !p.latch_disabled,
        left_contact: false,
        right_contact: false,
        hand_above_handle: false,
        lever_strain: 0.0,
        torque_left: 0.0,
        torque_right: 0.0,
        t: 0,
    };
    let o = observe(&s, p);
    (s, o)
}

/// Uniform over the configured start interval with the approach zone cut
/// out, so every episode begins with a non-empty search stage.
fn sample_start(rng: &mut impl Rng, p: &EnvParams) -> f64 {
    let (lo, hi) = (p.start_x_min, p.start_x_max);
    let cut_lo = (p.door_x - p.approach_far).clamp(lo, hi);
    let cut_hi = (p.door_x - p.approach_near).clamp(lo, hi);
    let left = cut_lo - lo;
    let right = hi - cut_hi;
    let total = left + right;
    if total <= 0.0 {
        return lo;
    }
    let u = rng.random::<f64>() * total;
    if u < left {
        lo + u
    } else {
        cut_hi + (u - left) + 1e-9
    }
}

/// Advances the world by one control period.
pub fn step(state: &WorldState, action: &Action, p: &EnvParams) -> Result<(WorldState, Observation, StepInfo)> {
    if !action.is_finite() {
        return Err(Error::Environment {
            step: state.t,
            reason: format!("non-finite action {action:?}"),
        });
    }
    let a = action.clamped(p);
    let prev = state;

    // Arms.
    let h_cmd = (prev.arm_left_h + a.d_arm_left).clamp(0.0, p.left_h_max);
    let r_cmd = (prev.arm_right_r + a.d_arm_right).clamp(0.0, p.right_r_max);

    // Left hand and handle, evaluated at the previous base position.
    let over_prev = prev.hand_over_handle(p);
    let mut theta_h = prev.handle_angle * p.handle_decay();
    let mut h = h_cmd;
    let mut above = prev.hand_above_handle;
    let mut left_contact = false;
    let mut torque_left = 0.0;
    let mut collision = false;
    if over_prev {
        if above {
            if h < p.handle_height {
                let geom = (p.handle_height - h) / p.handle_lever;
                if geom > p.theta_handle_max {
                    // Pressed past the lever tip: the hand slips under it.
                    above = false;
                } else {
                    left_contact = geom >= theta_h;
                    theta_h = theta_h.max(geom);
                }
            }
        } else {
            let ceiling = p.handle_height - p.handle_lever * theta_h - 0.005;
            if h > ceiling {
                let blocked = ceiling.max(prev.arm_left_h.min(h));
                torque_left += p.collision_force + p.block_gain * (h - blocked);
                collision = true;
                h = blocked;
            }
        }
    } else {
        above = h >= p.handle_height - p.grab_clearance;
    }

    let mut latch = prev.latch_engaged && !p.latch_disabled;
    let mut latch_released = false;
    if latch && theta_h >= p.theta_unlatch {
        latch = false;
        latch_released = true;
    }

    // Base, right hand and door.
    let mut x = prev.base_x + a.base_v * p.dt;
    let r = r_cmd;
    let mut theta_d;
    let mut strain = if over_prev && above { prev.lever_strain } else { 0.0 };
    let mut torque_right = 0.0;
    let mut block_excess = 0.0;
    if latch {
        theta_d = 0.0;
        let hand_limit = p.door_x - r;
        if x > hand_limit {
            block_excess = x - hand_limit;
            x = hand_limit;
        }
        let body_limit = p.door_x - p.body_front;
        let shove = block_excess.max(x - body_limit);
        x = x.min(body_limit);
        if over_prev && above && h < p.handle_height + p.grab_clearance {
            strain += shove;
            if strain > p.shove_slip_tol {
                // Shoving a latched door jars the hand off the lever.
                above = false;
                left_contact = false;
                collision = true;
                strain = 0.0;
            }
        }
    } else {
        let in_swing = x + p.body_front > p.door_x && x - p.body_front < p.door_x + p.door_leaf;
        let sprung = if in_swing {
            prev.door_angle
        } else {
            prev.door_angle * p.door_decay()
        };
        let push = ((x + r - p.door_x) / p.door_lever).max(0.0);
        let body = if x + p.body_front > p.door_x {
            (x + p.body_front - p.door_x) / p.door_lever
        } else {
            0.0
        };
        theta_d = sprung.max(push).max(body).min(p.theta_door_max);
        if push == 0.0 && body == 0.0 && theta_d <= p.door_closed_tol {
            theta_d = 0.0;
        }
    }
    let surface = p.door_x + p.door_lever * theta_d;
    let right_contact = r > p.body_front && x + r >= surface - 1e-9;
    if right_contact {
        torque_right = p.door_spring * (theta_d + p.door_preload) + p.block_gain * block_excess;
    }

    // Left hand cannot enter the handle zone from beneath the lever.
    let over_now = over_handle(p.door_x - x, theta_d, p);
    if over_now && !over_prev && !above {
        x = p.door_x - p.handle_reach - 1e-6;
        torque_left += p.collision_force;
        collision = true;
    }

    let mut relatched = false;
    if !latch && !p.latch_disabled && theta_h < p.theta_relatch && theta_d <= p.door_closed_tol {
        latch = true;
        relatched = true;
        theta_d = 0.0;
    }

    if left_contact {
        torque_left += p.handle_spring * (theta_h + p.handle_preload);
    }

    let next = WorldState {
        base_x: x,
        arm_left_h: h,
        arm_right_r: r,
        handle_angle: theta_h,
        door_angle: theta_d,
        latch_engaged: latch,
        left_contact,
        right_contact,
        hand_above_handle: above,
        lever_strain: strain,
        torque_left,
        torque_right,
        t: prev.t + 1,
    };
    let obs = observe(&next, p);
    let info = StepInfo {
        stage: true_stage(&next, p),
        latch_released,
        relatched,
        left_contact_onset: left_contact && !prev.left_contact,
        right_contact_onset: right_contact && !prev.right_contact,
        collision,
        success: next.is_success(p),
    };
    Ok((next, obs, info))
}

/// Sensor model. Reads nothing but geometry, arm positions and contact forces.
pub fn observe(s: &WorldState, p: &EnvParams) -> Observation {
    let d = s.distance(p);
    let clip = |z: f64| z.clamp(p.depth_min_range, p.depth_max_range);
    let mut visual = [0.0; VISUAL_DIM];
    visual[0] = clip(d);
    visual[1] = s.door_angle.sin();
    visual[2] = s.door_angle.cos();
    let visible = d >= p.depth_min_range && d <= p.view_radius;
    visual[3] = if visible { 1.0 } else { 0.0 };
    visual[4] = if visible { s.handle_angle } else { 0.0 };

    let gap_edge = p.door_half_width - p.door_leaf * s.door_angle.cos();
    for i in 0..RAY_COUNT {
        let phi = -0.5 + 0.1 * i as f64;
        let depth = if d <= 0.0 {
            p.depth_max_range
        } else {
            let y = d * phi.tan();
            if y.abs() > p.door_half_width {
                d
            } else if y < gap_edge {
                d + p.room_depth
            } else {
                d + (p.door_half_width - y) * s.door_angle.tan()
            }
        };
        visual[5 + i] = clip(depth);
    }
    Observation {
        visual,
        proprio: [s.arm_left_h, s.arm_right_r],
        torque: [s.torque_left, s.torque_right],
    }
}

/// Stage read off the privileged world state.
pub fn true_stage(s: &WorldState, p: &EnvParams) -> Stage {
    let d = s.distance(p);
    let unlatched = !s.latch_engaged;
    if s.door_angle >= p.theta_open {
        Stage::S5
    } else if unlatched && (s.right_contact || s.door_angle > p.door_closed_tol) {
        Stage::S4
    } else if s.left_contact || (unlatched && s.handle_angle >= p.theta_relatch) {
        Stage::S3
    } else if (p.approach_near..=p.approach_far).contains(&d)
        || (d < p.approach_near && s.arm_left_h >= p.handle_height - p.grab_clearance && !(s.hand_over_handle(p) && !s.hand_above_handle))
    {
        Stage::S2
    } else {
        Stage::S1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    /// Per-stage completion, in funnel order.
    pub completed: [bool; 5],
    pub success: bool,
    pub duration_s: f64,
    /// Index of the first successful state, if any.
    pub success_step: Option<usize>,
}

impl EpisodeOutcome {
    /// Number of stages passed (0..=5).
    pub fn stages_passed(&self) -> usize {
        self.completed.iter().take_while(|&&c| c).count()
    }
}

/// Funnel accounting over a state sequence (initial state first).
///
/// Stage k is complete once the oracle has reached a later stage after stage
/// k−1 completed; skipped stages count as passed. The final stage completes
/// on the success predicate.
pub fn episode_outcome(states: &[WorldState], p: &EnvParams) -> Result<EpisodeOutcome> {
    if states.is_empty() {
        return Err(Error::contract("episode_outcome needs at least one state"));
    }
    let mut reached = 0usize;
    let mut success_step = None;
    for (i, s) in states.iter().enumerate() {
        reached = reached.max(true_stage(s, p).index());
        if s.is_success(p) {
            success_step = Some(i);
            break;
        }
    }
    let mut completed = [false; 5];
    for (k, c) in completed.iter_mut().enumerate().take(4) {
        *c = reached > k;
    }
    completed[4] = success_step.is_some();
    let steps = success_step.unwrap_or(states.len() - 1);
    Ok(EpisodeOutcome {
        completed,
        success: success_step.is_some(),
        duration_s: steps as f64 * p.dt,
        success_step,
    })
}

#[cfg(test)]
mod tests;
