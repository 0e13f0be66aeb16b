//! Brain-inspired spatial memory and navigation for embodied agents, at desk
//! scale: a landmark store fused from object detections, a voxelized
//! cognitive map with surprise-gated buffers, working-memory retrieval and
//! ranking, occupancy-grid planning, a deterministic grid-world simulator,
//! and pluggable perception interfaces with both mock and HTTP backends.

pub mod agent;
pub mod cogmap;
pub mod eval;
pub mod geometry;
pub mod landmark;
pub mod perception;
pub mod planner;
pub mod sim;
pub mod working_memory;

pub use agent::{AgentConfig, MemoryBundle, NavAgent};
pub use cogmap::{CognitiveMap, FeatureVector};
pub use eval::{llm_match, run_benchmark, spl, success_rate, BenchmarkReport, SuiteConfig};
pub use geometry::{AgentPose, CameraIntrinsics, GridParams, RigidTransform, VoxelIndex};
pub use landmark::{Landmark, LandmarkStore};
pub use perception::{Detection, GoalSpec, InterfaceSet};
pub use planner::{Action, CellState, OccupancyGrid};
pub use sim::{EpisodeResult, Scene, SimConfig, SimObservation, Simulator};
