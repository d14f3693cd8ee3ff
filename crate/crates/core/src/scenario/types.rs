use serde::{Deserialize, Serialize};

use crate::error::{EmpError, Result};

/// Sampling period of every track, seconds (10 Hz).
pub const STEP_PERIOD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
    Other,
}

impl AgentType {
    pub const COUNT: usize = 4;
    pub const ALL: [AgentType; 4] = [
        AgentType::Vehicle,
        AgentType::Pedestrian,
        AgentType::Cyclist,
        AgentType::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneType {
    Lane,
    Crosswalk,
    Other,
}

impl LaneType {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Dataset profile; fixes history/future horizons and the aggregation radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Av2,
    Av1,
    Custom,
}

impl Profile {
    /// `(t_h, t_f)` step counts; `None` for custom files.
    pub fn horizons(self) -> Option<(usize, usize)> {
        match self {
            Profile::Av2 => Some((50, 60)),
            Profile::Av1 => Some((20, 30)),
            Profile::Custom => None,
        }
    }

    /// Radius of interest around the focal agent, meters.
    pub fn radius(self) -> f64 {
        match self {
            Profile::Av1 => 65.0,
            Profile::Av2 | Profile::Custom => 150.0,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = EmpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "av2" => Ok(Profile::Av2),
            "av1" => Ok(Profile::Av1),
            "custom" => Ok(Profile::Custom),
            other => Err(EmpError::Config(format!("unknown profile `{other}`"))),
        }
    }
}

/// One sampled state; serialized as `[x, y, vx, vy, observed]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "StateRecord", into = "StateRecord")]
pub struct AgentState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub observed: bool,
}

impl AgentState {
    pub const UNOBSERVED: AgentState = AgentState {
        position: [0.0, 0.0],
        velocity: [0.0, 0.0],
        observed: false,
    };

    pub fn observed(position: [f64; 2], velocity: [f64; 2]) -> Self {
        Self {
            position,
            velocity,
            observed: true,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StateRecord(f64, f64, f64, f64, bool);

impl From<StateRecord> for AgentState {
    fn from(r: StateRecord) -> Self {
        AgentState {
            position: [r.0, r.1],
            velocity: [r.2, r.3],
            observed: r.4,
        }
    }
}

impl From<AgentState> for StateRecord {
    fn from(s: AgentState) -> Self {
        StateRecord(s.position[0], s.position[1], s.velocity[0], s.velocity[1], s.observed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: String,
    #[serde(rename = "type")]
    pub agent_type: AgentType,
    pub is_focal: bool,
    pub states: Vec<AgentState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSegment {
    pub id: String,
    #[serde(rename = "type")]
    pub lane_type: LaneType,
    pub centerline: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub step_period: f64,
    pub t_h: usize,
    pub t_f: usize,
    pub agents: Vec<AgentTrack>,
    pub lanes: Vec<LaneSegment>,
}

impl Scenario {
    /// Index of the last history step, where center poses are anchored.
    pub fn reference_step(&self) -> usize {
        self.t_h - 1
    }

    pub fn focal_index(&self) -> Option<usize> {
        self.agents.iter().position(|a| a.is_focal)
    }

    pub fn focal(&self) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.is_focal)
    }

    /// Checks every structural invariant of a scenario.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| {
            Err(EmpError::Invariant {
                scenario: self.id.clone(),
                msg,
            })
        };
        if (self.step_period - STEP_PERIOD).abs() > 1e-9 {
            return fail(format!("step_period {} != {STEP_PERIOD}", self.step_period));
        }
        if self.t_h == 0 || self.t_f == 0 {
            return fail("t_h and t_f must be positive".into());
        }
        let focal_count = self.agents.iter().filter(|a| a.is_focal).count();
        if focal_count != 1 {
            return fail(format!("expected exactly one focal agent, found {focal_count}"));
        }
        let len = self.t_h + self.t_f;
        for a in &self.agents {
            if a.states.len() != len {
                return fail(format!(
                    "agent `{}` has {} states, expected {len}",
                    a.id,
                    a.states.len()
                ));
            }
            for (t, s) in a.states.iter().enumerate() {
                let vals = [s.position[0], s.position[1], s.velocity[0], s.velocity[1]];
                if vals.iter().any(|v| !v.is_finite()) {
                    return fail(format!("agent `{}` step {t} is not finite", a.id));
                }
                if !s.observed && vals.iter().any(|&v| v != 0.0) {
                    return fail(format!(
                        "agent `{}` step {t} is unobserved but carries non-zero state",
                        a.id
                    ));
                }
            }
            if a.is_focal && !a.states[self.reference_step()].observed {
                return fail(format!(
                    "focal agent `{}` is unobserved at the reference step",
                    a.id
                ));
            }
        }
        for l in &self.lanes {
            if l.centerline.len() < 2 {
                return fail(format!("lane `{}` has fewer than two points", l.id));
            }
            if l.centerline.iter().flatten().any(|v| !v.is_finite()) {
                return fail(format!("lane `{}` has non-finite points", l.id));
            }
            if l.centerline.windows(2).any(|w| w[0] == w[1]) {
                return fail(format!("lane `{}` repeats a consecutive point", l.id));
            }
        }
        Ok(())
    }
}
