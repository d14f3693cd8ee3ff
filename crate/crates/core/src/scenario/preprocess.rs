//! Scenario → model-ready, frame-local feature tensors.

use serde::{Deserialize, Serialize};

use super::geometry::{resample_polyline, velocity_magnitude, Pose};
use super::types::{AgentTrack, LaneSegment, Scenario};
use crate::error::{EmpError, Result};

/// Points per resampled lane segment.
pub const LANE_POINTS: usize = 20;
/// Width of one agent state row: x, y, speed, step counter, mask.
pub const AGENT_FEATURES: usize = 5;
/// Width of one lane point row: x, y, mask.
pub const LANE_FEATURES: usize = 3;
/// Below this speed (m/s) the velocity direction is not trusted for heading.
pub const MIN_HEADING_SPEED: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Entities whose center lies farther than this from the focal center are dropped.
    pub radius: f64,
    pub lane_points: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            radius: 150.0,
            lane_points: LANE_POINTS,
        }
    }
}

impl PreprocessConfig {
    pub fn with_radius(radius: f64) -> Self {
        Self {
            radius,
            ..Self::default()
        }
    }
}

/// Frame-local tensors for one scenario. Flat buffers are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedScene {
    pub scenario_id: String,
    pub t_h: usize,
    pub t_f: usize,
    pub lane_points: usize,
    /// `A × T_h × 5`
    pub agent_features: Vec<f64>,
    /// `A × T_h`
    pub agent_step_mask: Vec<bool>,
    /// World-frame center pose per agent.
    pub agent_centers: Vec<Pose>,
    pub agent_type_ids: Vec<usize>,
    pub agent_ids: Vec<String>,
    pub focal_index: usize,
    /// `L × N × 3`
    pub lane_features: Vec<f64>,
    pub lane_centers: Vec<Pose>,
    pub lane_type_ids: Vec<usize>,
    /// `T_f` points in the focal center frame.
    pub focal_future_target: Vec<[f64; 2]>,
    /// Whether every future step of the focal track is observed.
    pub focal_future_valid: bool,
    /// `A × T_f` points, each agent in its own center frame.
    pub agent_future_targets: Vec<[f64; 2]>,
    /// `A × T_f`
    pub agent_future_mask: Vec<bool>,
    /// Entities removed by the radius filter.
    pub dropped_agents: usize,
    pub dropped_lanes: usize,
}

impl PreprocessedScene {
    pub fn agent_count(&self) -> usize {
        self.agent_centers.len()
    }

    pub fn lane_count(&self) -> usize {
        self.lane_centers.len()
    }

    pub fn focal_center(&self) -> Pose {
        self.agent_centers[self.focal_index]
    }
}

/// Center pose of a track: position at the last observed history step and
/// heading from the last observed displacement (falling back to velocity,
/// then to α = 0). `None` when the history is entirely unobserved.
pub fn track_center(track: &AgentTrack, t_h: usize) -> Option<Pose> {
    let observed: Vec<usize> = (0..t_h).filter(|&t| track.states[t].observed).collect();
    let &last = observed.last()?;
    let s = track.states[last];
    if observed.len() >= 2 {
        let prev = track.states[observed[observed.len() - 2]].position;
        let d = [s.position[0] - prev[0], s.position[1] - prev[1]];
        if d[0] != 0.0 || d[1] != 0.0 {
            return Some(Pose::from_direction(s.position, d));
        }
    }
    if velocity_magnitude(s.velocity) >= MIN_HEADING_SPEED {
        Some(Pose::from_direction(s.position, s.velocity))
    } else {
        Some(Pose::from_direction(s.position, [0.0, 0.0]))
    }
}

/// Center pose of a resampled centerline: midpoint with the chord heading
/// around it.
pub fn lane_center(points: &[[f64; 2]]) -> Pose {
    let n = points.len();
    let (a, b, mid) = if n.is_multiple_of(2) {
        let (a, b) = (points[n / 2 - 1], points[n / 2]);
        (a, b, [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5])
    } else {
        let m = n / 2;
        (points[m - 1], points[m + 1], points[m])
    };
    Pose::from_direction(mid, [b[0] - a[0], b[1] - a[1]])
}

struct LaneGeometry<'a> {
    lane: &'a LaneSegment,
    points: Vec<[f64; 2]>,
    center: Pose,
}

pub fn preprocess(s: &Scenario, cfg: &PreprocessConfig) -> Result<PreprocessedScene> {
    let invalid = |msg: &str| EmpError::InvalidScenario {
        scenario: s.id.clone(),
        msg: msg.to_string(),
    };
    let t_h = s.t_h;
    let t_f = s.t_f;
    let ref_step = s.reference_step();
    let focal = s.focal().ok_or_else(|| invalid("no focal agent"))?;
    if !focal.states.get(ref_step).is_some_and(|st| st.observed) {
        return Err(invalid("focal agent unobserved at the reference step"));
    }
    let focal_center = track_center(focal, t_h).expect("focal observed at reference step");

    let mut kept: Vec<(&AgentTrack, Pose)> = Vec::new();
    let mut dropped_agents = 0;
    for a in &s.agents {
        let center = match track_center(a, t_h) {
            Some(c) => c,
            None => {
                dropped_agents += 1;
                continue;
            }
        };
        if !a.is_focal && center.distance(&focal_center) > cfg.radius {
            dropped_agents += 1;
            continue;
        }
        kept.push((a, center));
    }
    let focal_index = kept.iter().position(|(a, _)| a.is_focal).unwrap();

    let mut lanes = Vec::new();
    let mut dropped_lanes = 0;
    for lane in &s.lanes {
        let points = resample_polyline(&lane.centerline, cfg.lane_points)?;
        let center = lane_center(&points);
        if center.distance(&focal_center) > cfg.radius {
            dropped_lanes += 1;
            continue;
        }
        lanes.push(LaneGeometry {
            lane,
            points,
            center,
        });
    }

    let a_count = kept.len();
    let mut agent_features = Vec::with_capacity(a_count * t_h * AGENT_FEATURES);
    let mut agent_step_mask = Vec::with_capacity(a_count * t_h);
    let mut agent_future_targets = Vec::with_capacity(a_count * t_f);
    let mut agent_future_mask = Vec::with_capacity(a_count * t_f);
    for (a, center) in &kept {
        for t in 0..t_h {
            let st = a.states[t];
            if st.observed {
                let p = center.to_local(st.position);
                agent_features.extend_from_slice(&[
                    p[0],
                    p[1],
                    velocity_magnitude(st.velocity),
                    t as f64,
                    1.0,
                ]);
            } else {
                agent_features.extend_from_slice(&[0.0, 0.0, 0.0, t as f64, 0.0]);
            }
            agent_step_mask.push(st.observed);
        }
        for t in t_h..t_h + t_f {
            let st = a.states[t];
            agent_future_targets.push(if st.observed {
                center.to_local(st.position)
            } else {
                [0.0, 0.0]
            });
            agent_future_mask.push(st.observed);
        }
    }
    let focal_future_target =
        agent_future_targets[focal_index * t_f..(focal_index + 1) * t_f].to_vec();
    let focal_future_valid = agent_future_mask[focal_index * t_f..(focal_index + 1) * t_f]
        .iter()
        .all(|&m| m);

    let mut lane_features = Vec::with_capacity(lanes.len() * cfg.lane_points * LANE_FEATURES);
    for l in &lanes {
        for &p in &l.points {
            let q = l.center.to_local(p);
            lane_features.extend_from_slice(&[q[0], q[1], 1.0]);
        }
    }

    Ok(PreprocessedScene {
        scenario_id: s.id.clone(),
        t_h,
        t_f,
        lane_points: cfg.lane_points,
        agent_features,
        agent_step_mask,
        agent_centers: kept.iter().map(|(_, c)| *c).collect(),
        agent_type_ids: kept.iter().map(|(a, _)| a.agent_type.index()).collect(),
        agent_ids: kept.iter().map(|(a, _)| a.id.clone()).collect(),
        focal_index,
        lane_features,
        lane_centers: lanes.iter().map(|l| l.center).collect(),
        lane_type_ids: lanes.iter().map(|l| l.lane.lane_type.index()).collect(),
        focal_future_target,
        focal_future_valid,
        agent_future_targets,
        agent_future_mask,
        dropped_agents,
        dropped_lanes,
    })
}
