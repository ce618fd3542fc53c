use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Geometry, spring constants and control timing of the door world.
///
/// Distances are meters along the approach axis; `d` denotes the distance
/// from the robot base to the closed door plane at `door_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvParams {
    pub dt: f64,
    pub door_x: f64,
    pub start_x_min: f64,
    pub start_x_max: f64,
    pub start_x_canonical: f64,

    /// Handle is visible for `depth_min_range <= d <= view_radius`.
    pub view_radius: f64,
    /// Depth readings saturate below this; the handle leaves the view.
    pub depth_min_range: f64,
    pub depth_max_range: f64,
    /// Approach zone `[approach_near, approach_far]` in `d`.
    pub approach_near: f64,
    pub approach_far: f64,
    /// Left hand is over the handle for `0 <= d <= handle_reach`.
    pub handle_reach: f64,
    pub body_front: f64,

    pub handle_height: f64,
    /// Meters of downward hand travel per radian of handle rotation.
    pub handle_lever: f64,
    pub grab_clearance: f64,
    pub theta_unlatch: f64,
    pub theta_relatch: f64,
    pub theta_handle_max: f64,
    pub handle_spring: f64,
    pub handle_damping: f64,
    pub handle_preload: f64,

    pub door_spring: f64,
    pub hinge_damping: f64,
    pub door_preload: f64,
    /// Meters of push-point travel per radian of door rotation.
    pub door_lever: f64,
    pub door_leaf: f64,
    pub door_half_width: f64,
    pub room_depth: f64,
    pub theta_open: f64,
    pub theta_door_max: f64,
    pub door_closed_tol: f64,
    /// Walk-through target, measured past the door plane.
    pub through_offset: f64,

    pub arm_rate_limit: f64,
    pub left_h_max: f64,
    pub right_r_max: f64,
    pub rest_tol: f64,
    pub block_gain: f64,
    pub collision_force: f64,
    /// Total base travel a latched door may block while the hand rests on
    /// the lever before the hand is jarred off it.
    pub shove_slip_tol: f64,

    /// Latch permanently released (guidance experiments).
    pub latch_disabled: bool,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            dt: 0.1,
            door_x: 3.0,
            start_x_min: 0.0,
            start_x_max: 2.7,
            start_x_canonical: 1.0,
            view_radius: 2.2,
            depth_min_range: 0.7,
            depth_max_range: 5.0,
            approach_near: 0.8,
            approach_far: 1.0,
            handle_reach: 0.55,
            body_front: 0.2,
            handle_height: 1.0,
            handle_lever: 0.2,
            grab_clearance: 0.04,
            theta_unlatch: 1.0,
            theta_relatch: 0.6,
            theta_handle_max: 1.3,
            handle_spring: 2.0,
            handle_damping: 6.0,
            handle_preload: 0.5,
            door_spring: 3.0,
            hinge_damping: 3.0,
            door_preload: 0.3,
            door_lever: 0.35,
            door_leaf: 0.9,
            door_half_width: 0.45,
            room_depth: 3.0,
            theta_open: 1.2,
            theta_door_max: 1.7,
            door_closed_tol: 0.02,
            through_offset: 0.6,
            arm_rate_limit: 0.1,
            left_h_max: 1.3,
            right_r_max: 0.8,
            rest_tol: 0.05,
            block_gain: 5.0,
            collision_force: 2.0,
            shove_slip_tol: 0.15,
            latch_disabled: false,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.theta_relatch
            && self.theta_relatch < self.theta_unlatch
            && self.theta_unlatch < self.theta_handle_max
            && self.handle_spring > 0.0
            && self.handle_damping > 0.0
            && self.door_spring > 0.0
            && self.hinge_damping > 0.0
            && self.dt > 0.0
            && self.start_x_min <= self.start_x_max
            && self.approach_near < self.approach_far
            && self.theta_open < self.theta_door_max;
        if ok {
            Ok(())
        } else {
            Err(Error::Configuration(format!("inconsistent environment parameters: {self:?}")))
        }
    }

    pub fn through_x(&self) -> f64 {
        self.door_x + self.through_offset
    }

    /// Per-step multiplicative decay of the handle under its return spring.
    pub fn handle_decay(&self) -> f64 {
        (-self.dt * self.handle_spring / self.handle_damping).exp()
    }

    /// Per-step multiplicative decay of the door under its closer spring.
    pub fn door_decay(&self) -> f64 {
        (-self.dt * self.door_spring / self.hinge_damping).exp()
    }

    /// Spring and damping constants scaled by the given factors.
    pub fn perturbed(&self, handle_spring: f64, door_spring: f64, damping: f64) -> EnvParams {
        EnvParams {
            handle_spring: self.handle_spring * handle_spring,
            door_spring: self.door_spring * door_spring,
            hinge_damping: self.hinge_damping * damping,
            handle_damping: self.handle_damping * damping,
            ..self.clone()
        }
    }

    /// Content hash of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("params serialize");
        hex::encode(Sha256::digest(&json))
    }
}
