use super::config::ModelConfig;
use crate::error::{EmpError, Result};
use crate::scenario::{Pose, PreprocessedScene, AGENT_FEATURES, LANE_FEATURES};
use crate::tensor::Tensor;

/// Several preprocessed scenes packed for one forward pass.
///
/// Agents and lanes of all scenes are stacked for the per-entity encoders.
/// The scene encoder then sees `scenes × slots` rows: each scene's agents,
/// then its lanes, then masked padding up to the largest scene.
#[derive(Debug, Clone)]
pub struct SceneBatch {
    pub scenes: usize,
    pub t_h: usize,
    pub lane_points: usize,
    /// `A_total·T_h × 5`
    pub agent_features: Tensor<f64>,
    pub agent_step_mask: Vec<bool>,
    pub agent_type_ids: Vec<usize>,
    /// `L_total·N × 3`
    pub lane_features: Tensor<f64>,
    pub lane_point_mask: Vec<bool>,
    pub lane_type_ids: Vec<usize>,
    pub slots: usize,
    /// Per slot, row of `[agent tokens; lane tokens]` or `None` for padding.
    pub slot_index: Vec<Option<usize>>,
    /// `scenes·slots × 4` centers relative to each scene's focal position.
    pub slot_centers: Tensor<f64>,
    pub slot_mask: Vec<bool>,
    /// Global agent index of each scene's focal agent.
    pub focal_agents: Vec<usize>,
    /// Scene-encoder row of each scene's focal agent.
    pub focal_slots: Vec<usize>,
    /// Scene-encoder row of every agent.
    pub agent_slots: Vec<usize>,
    pub lanes_per_scene: usize,
    /// `scenes·lanes_per_scene` scene-encoder rows of lanes, `None` for padding.
    pub lane_slot_index: Vec<Option<usize>>,
    pub lane_slot_mask: Vec<bool>,
    pub scene_has_lanes: Vec<bool>,
}

/// `[x − x_f, y − y_f, cos α, sin α]`
pub fn relative_center(pose: &Pose, focal: &Pose) -> [f64; 4] {
    [pose.x - focal.x, pose.y - focal.y, pose.cos, pose.sin]
}

impl SceneBatch {
    pub fn new(scenes: &[&PreprocessedScene], cfg: &ModelConfig) -> Result<Self> {
        if scenes.is_empty() {
            return Err(EmpError::Contract("empty batch".into()));
        }
        for s in scenes {
            if s.t_h != cfg.t_h || s.lane_points != cfg.lane_points {
                return Err(EmpError::Config(format!(
                    "scene `{}` has t_h={} n={}, model expects t_h={} n={}",
                    s.scenario_id, s.t_h, s.lane_points, cfg.t_h, cfg.lane_points
                )));
            }
        }
        let b = scenes.len();
        let a_total: usize = scenes.iter().map(|s| s.agent_count()).sum();
        let l_total: usize = scenes.iter().map(|s| s.lane_count()).sum();
        let slots = scenes
            .iter()
            .map(|s| s.agent_count() + s.lane_count())
            .max()
            .unwrap();
        let lanes_per_scene = scenes.iter().map(|s| s.lane_count()).max().unwrap();

        let mut agent_features = Vec::with_capacity(a_total * cfg.t_h * AGENT_FEATURES);
        let mut agent_step_mask = Vec::new();
        let mut agent_type_ids = Vec::new();
        let mut lane_features = Vec::with_capacity(l_total * cfg.lane_points * LANE_FEATURES);
        let mut lane_point_mask = Vec::new();
        let mut lane_type_ids = Vec::new();
        let mut slot_index = vec![None; b * slots];
        let mut slot_centers = Vec::with_capacity(b * slots * 4);
        let mut slot_mask = vec![false; b * slots];
        let mut focal_agents = Vec::with_capacity(b);
        let mut focal_slots = Vec::with_capacity(b);
        let mut agent_slots = Vec::with_capacity(a_total);
        let mut lane_slot_index = vec![None; b * lanes_per_scene];
        let mut lane_slot_mask = vec![false; b * lanes_per_scene];
        let mut scene_has_lanes = Vec::with_capacity(b);

        let (mut agent_base, mut lane_base) = (0, 0);
        for (si, s) in scenes.iter().enumerate() {
            let (na, nl) = (s.agent_count(), s.lane_count());
            agent_features.extend_from_slice(&s.agent_features);
            agent_step_mask.extend_from_slice(&s.agent_step_mask);
            agent_type_ids.extend_from_slice(&s.agent_type_ids);
            lane_features.extend_from_slice(&s.lane_features);
            lane_point_mask.extend(s.lane_features.chunks(LANE_FEATURES).map(|r| r[2] > 0.5));
            lane_type_ids.extend_from_slice(&s.lane_type_ids);

            let focal = s.focal_center();
            let row0 = si * slots;
            for a in 0..na {
                slot_index[row0 + a] = Some(agent_base + a);
                slot_mask[row0 + a] = true;
                slot_centers.extend_from_slice(&relative_center(&s.agent_centers[a], &focal));
                agent_slots.push(row0 + a);
            }
            for l in 0..nl {
                slot_index[row0 + na + l] = Some(a_total + lane_base + l);
                slot_mask[row0 + na + l] = true;
                slot_centers.extend_from_slice(&relative_center(&s.lane_centers[l], &focal));
                lane_slot_index[si * lanes_per_scene + l] = Some(row0 + na + l);
                lane_slot_mask[si * lanes_per_scene + l] = true;
            }
            for _ in na + nl..slots {
                slot_centers.extend_from_slice(&[0.0, 0.0, 1.0, 0.0]);
            }
            focal_agents.push(agent_base + s.focal_index);
            focal_slots.push(row0 + s.focal_index);
            scene_has_lanes.push(nl > 0);
            agent_base += na;
            lane_base += nl;
        }

        Ok(Self {
            scenes: b,
            t_h: cfg.t_h,
            lane_points: cfg.lane_points,
            agent_features: Tensor::new(vec![a_total * cfg.t_h, AGENT_FEATURES], agent_features)?,
            agent_step_mask,
            agent_type_ids,
            lane_features: Tensor::new(vec![l_total * cfg.lane_points, LANE_FEATURES], lane_features)?,
            lane_point_mask,
            lane_type_ids,
            slots,
            slot_index,
            slot_centers: Tensor::new(vec![b * slots, 4], slot_centers)?,
            slot_mask,
            focal_agents,
            focal_slots,
            agent_slots,
            lanes_per_scene,
            lane_slot_index,
            lane_slot_mask,
            scene_has_lanes,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.agent_type_ids.len()
    }

    pub fn lane_count(&self) -> usize {
        self.lane_type_ids.len()
    }
}
