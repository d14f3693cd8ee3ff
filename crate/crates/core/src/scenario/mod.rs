//! Scenario data model, file format, preprocessing and synthetic data.

mod geometry;
mod io;
mod preprocess;
mod synthetic;
mod types;

pub use geometry::{resample_polyline, velocity_magnitude, Pose, RigidTransform};
pub use io::{
    load_scenario_file, load_scenarios, parse_header, parse_scenarios, save_scenarios, write_scenarios,
    FileHeader, ScenarioFile, SCENARIO_SCHEMA,
};
pub use preprocess::{
    lane_center, preprocess, track_center, PreprocessConfig, PreprocessedScene, AGENT_FEATURES,
    LANE_FEATURES, LANE_POINTS, MIN_HEADING_SPEED,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use types::{
    AgentState, AgentTrack, AgentType, LaneSegment, LaneType, Profile, Scenario, STEP_PERIOD,
};

impl Scenario {
    /// Applies a rigid motion to every position, velocity and centerline.
    pub fn transformed(&self, tf: &RigidTransform) -> Scenario {
        let mut s = self.clone();
        for a in &mut s.agents {
            for st in a.states.iter_mut().filter(|st| st.observed) {
                st.position = tf.apply(st.position);
                st.velocity = tf.rotate(st.velocity);
            }
        }
        for l in &mut s.lanes {
            for p in &mut l.centerline {
                *p = tf.apply(*p);
            }
        }
        s
    }
}
