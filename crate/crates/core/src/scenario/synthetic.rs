//! Synthetic scenes: constant-curvature lanes with agents driving along
//! them at a constant turn rate, plus positional noise and dropouts.

use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::types::{AgentState, AgentTrack, AgentType, LaneSegment, LaneType, Profile, Scenario, STEP_PERIOD};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub t_h: usize,
    pub t_f: usize,
    /// Inclusive agent-count range (focal included).
    pub agents: (usize, usize),
    /// Inclusive lane-count range.
    pub lanes: (usize, usize),
    /// Speed range, m/s.
    pub speed: (f64, f64),
    /// Maximum absolute lane curvature, 1/m.
    pub max_curvature: f64,
    /// Standard deviation of positional noise, m.
    pub position_noise: f64,
    /// Probability of dropping a non-reference observation.
    pub dropout: f64,
    /// Spacing between generated centerline vertices, m.
    pub lane_spacing: f64,
}

impl SyntheticSpec {
    pub fn for_profile(profile: Profile) -> Self {
        let (t_h, t_f) = profile.horizons().unwrap_or((50, 60));
        Self {
            t_h,
            t_f,
            agents: (3, 8),
            lanes: (4, 12),
            speed: (2.0, 12.0),
            max_curvature: 0.02,
            position_noise: 0.05,
            dropout: 0.05,
            lane_spacing: 4.0,
        }
    }

    /// Same horizons, no noise and no dropouts.
    pub fn noiseless(mut self) -> Self {
        self.position_noise = 0.0;
        self.dropout = 0.0;
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    origin: [f64; 2],
    heading: f64,
    curvature: f64,
}

impl Arc {
    fn point(&self, s: f64) -> [f64; 2] {
        let [x0, y0] = self.origin;
        if self.curvature.abs() < 1e-9 {
            return [x0 + s * self.heading.cos(), y0 + s * self.heading.sin()];
        }
        let k = self.curvature;
        let th = self.heading + k * s;
        [
            x0 + (th.sin() - self.heading.sin()) / k,
            y0 - (th.cos() - self.heading.cos()) / k,
        ]
    }

    fn normal(&self, s: f64) -> [f64; 2] {
        let th = self.heading + self.curvature * s;
        [-th.sin(), th.cos()]
    }
}

/// `count` scenarios, deterministic in `seed`. Scenario `i` draws from its
/// own substream so prefixes agree across different counts.
pub fn generate_synthetic(seed: u64, count: usize, spec: &SyntheticSpec) -> Vec<Scenario> {
    (0..count)
        .map(|i| generate_one(seed, i, spec))
        .collect()
}

fn generate_one(seed: u64, index: usize, spec: &SyntheticSpec) -> Scenario {
    let mut r = rng::substream(seed, streams::SYNTHETIC, index as u64);
    let n_lanes = r.gen_range(spec.lanes.0..=spec.lanes.1.max(spec.lanes.0));
    let n_agents = r.gen_range(spec.agents.0.max(1)..=spec.agents.1.max(spec.agents.0.max(1)));
    let steps = spec.t_h + spec.t_f;

    let arcs: Vec<(Arc, f64)> = (0..n_lanes.max(1))
        .map(|j| {
            let origin = if j == 0 {
                [r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0)]
            } else {
                [r.gen_range(-50.0..50.0), r.gen_range(-50.0..50.0)]
            };
            let arc = Arc {
                origin,
                heading: r.gen_range(0.0..TAU),
                curvature: r.gen_range(-spec.max_curvature..=spec.max_curvature),
            };
            (arc, r.gen_range(80.0..140.0))
        })
        .collect();

    let lanes = arcs
        .iter()
        .take(n_lanes)
        .enumerate()
        .map(|(j, (arc, length))| {
            let n = (length / spec.lane_spacing).ceil() as usize + 1;
            LaneSegment {
                id: format!("lane-{j}"),
                lane_type: if r.gen_bool(0.9) {
                    LaneType::Lane
                } else {
                    LaneType::Crosswalk
                },
                centerline: (0..n)
                    .map(|i| arc.point(length * i as f64 / (n - 1) as f64))
                    .collect(),
            }
        })
        .collect();

    let noise = Normal::new(0.0, spec.position_noise.max(0.0)).unwrap();
    let agents = (0..n_agents)
        .map(|a| {
            let focal = a == 0;
            let (arc, length) = arcs[if focal { 0 } else { r.gen_range(0..arcs.len()) }];
            let speed = r.gen_range(spec.speed.0..=spec.speed.1);
            let offset = r.gen_range(-0.5..0.5);
            // arc position at the reference step
            let s_ref = r.gen_range(0.2 * length..0.5 * length);
            let agent_type = if focal {
                AgentType::Vehicle
            } else {
                AgentType::ALL[[0, 0, 0, 1, 2, 3][r.gen_range(0..6)]]
            };
            let ref_step = spec.t_h as f64 - 1.0;
            // samples for steps -1 ..= steps so every kept step has a central difference
            let raw: Vec<[f64; 2]> = (0..steps + 2)
                .map(|i| {
                    let t = i as f64 - 1.0;
                    let s = s_ref + speed * (t - ref_step) * STEP_PERIOD;
                    let p = arc.point(s);
                    let n = arc.normal(s);
                    let mut q = [p[0] + offset * n[0], p[1] + offset * n[1]];
                    if spec.position_noise > 0.0 {
                        q[0] += noise.sample(&mut r);
                        q[1] += noise.sample(&mut r);
                    }
                    q
                })
                .collect();
            let states = (0..steps)
                .map(|t| {
                    let reference = t == spec.t_h - 1;
                    let protected = reference || (focal && t >= spec.t_h);
                    if !protected && spec.dropout > 0.0 && r.gen_bool(spec.dropout) {
                        return AgentState::UNOBSERVED;
                    }
                    let (prev, next) = (raw[t], raw[t + 2]);
                    let vel = [
                        (next[0] - prev[0]) / (2.0 * STEP_PERIOD),
                        (next[1] - prev[1]) / (2.0 * STEP_PERIOD),
                    ];
                    AgentState::observed(raw[t + 1], vel)
                })
                .collect();
            AgentTrack {
                id: if focal { "focal".into() } else { format!("agent-{a}") },
                agent_type,
                is_focal: focal,
                states,
            }
        })
        .collect();

    Scenario {
        id: format!("synthetic-{seed}-{index}"),
        step_period: STEP_PERIOD,
        t_h: spec.t_h,
        t_f: spec.t_f,
        agents,
        lanes,
    }
}
