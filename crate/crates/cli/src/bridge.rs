//! JSON messages exchanged with the steering console.

use serde::{Deserialize, Serialize};
use stagebc::doorworld::{EnvParams, EpisodeOutcome, WorldState};
use stagebc::runtime::{parse_stage, Prompt};
use stagebc::Stage;

/// Bumped on any incompatible change to [`BridgeMessage`].
pub const SCHEMA_VERSION: u32 = 1;

/// World snapshot for rendering. The latch flag is only present in debug
/// sessions: the operator sees as much as the policy does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub base_x: f64,
    pub arm_left_h: f64,
    pub arm_right_r: f64,
    pub handle_angle: f64,
    pub door_angle: f64,
    pub door_open: bool,
    pub stage_fed: u8,
    pub torque_left: f64,
    pub torque_right: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latch_engaged: Option<bool>,
}

impl Snapshot {
    pub fn new(s: &WorldState, p: &EnvParams, stage_fed: Stage, debug_latch: bool) -> Snapshot {
        Snapshot {
            base_x: s.base_x,
            arm_left_h: s.arm_left_h,
            arm_right_r: s.arm_right_r,
            handle_angle: s.handle_angle,
            door_angle: s.door_angle,
            door_open: s.door_angle >= p.theta_open,
            stage_fed: stage_fed.number(),
            torque_left: s.torque_left,
            torque_right: s.torque_right,
            latch_engaged: debug_latch.then_some(s.latch_engaged),
        }
    }
}

/// Stage field of a prompt: a stage number or `"auto"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PromptStage {
    Number(u8),
    Text(String),
}

impl PromptStage {
    pub fn to_prompt(&self) -> Option<Prompt> {
        match self {
            PromptStage::Number(n) => Stage::from_number(*n).ok().map(Prompt::Stage),
            PromptStage::Text(t) if t.eq_ignore_ascii_case("auto") => Some(Prompt::Auto),
            PromptStage::Text(t) => parse_stage(t).map(Prompt::Stage),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BridgeMessage {
    /// Server to client, once per control step (newest wins).
    State { episode: u64, step: usize, snapshot: Snapshot },
    /// Server to client whenever the fed stage changes or a prompt lands.
    StageFed { episode: u64, step: usize, stage: u8 },
    /// Client to server only.
    Prompt { stage: PromptStage },
    /// Server to client at episode end.
    Outcome {
        episode: u64,
        step: usize,
        success: bool,
        completed: [bool; 5],
        duration_s: f64,
    },
    /// Client to server to start a new episode; echoed by the server with the
    /// episode number once it starts.
    Reset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schema: Option<u32>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<usize>,
        message: String,
    },
}

impl BridgeMessage {
    pub fn outcome(episode: u64, steps: usize, o: &EpisodeOutcome) -> BridgeMessage {
        BridgeMessage::Outcome {
            episode,
            step: steps,
            success: o.success,
            completed: o.completed,
            duration_s: o.duration_s,
        }
    }

    pub fn error(step: Option<usize>, message: impl Into<String>) -> BridgeMessage {
        BridgeMessage::Error {
            step,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bridge messages serialize")
    }

    pub fn parse(text: &str) -> Result<BridgeMessage, serde_json::Error> {
        serde_json::from_str(text)
    }
}
