//! Agent orchestration: frontier exploration that builds the landmark store
//! and cognitive map, hierarchical retrieval, candidate-sequenced navigation
//! with on-arrival verification, instruction decomposition, and embodied
//! question answering.

use crate::cogmap::{CognitiveMap, MapError};
use crate::geometry::{
    pixel_to_camera, pose_to_world_transform, AgentPose, GridParams, RigidTransform,
};
use crate::landmark::{Landmark, LandmarkError, LandmarkStore};
use crate::perception::remote::ChatEndpointConfig;
use crate::perception::{GoalModality, GoalSpec, InterfaceSet};
use crate::planner::{
    astar, exploration_budget, find_frontiers, inflate_obstacles, path_to_actions, select_nearest,
    Action, CellState, OccupancyGrid, PlannerError, FORWARD_STEP_M,
};
use crate::sim::{
    distance_to_targets, geodesic_shortest, goal_targets, splitmix64, EpisodeResult, ScanColumn,
    ScanReading, Scene, SimConfig, SimObservation, Simulator,
};
use crate::working_memory::{
    rank_candidates, retrieve_cognitive_candidates_with, retrieve_landmark_candidates,
    CandidateGoal,
};
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::Digest as _;
use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// Views per 360° rotational scan (at the 30° turn granularity).
pub const SCAN_VIEWS: u32 = 12;
/// Episode success radius: stop within this range of a true goal, meters.
pub const SUCCESS_RADIUS_M: f64 = 1.0;
/// Preferred minimum standoff when approaching a candidate, meters. Parking
/// closer than the camera's near plane blinds the detector to the goal.
pub const APPROACH_STANDOFF_M: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Landmark(#[from] LandmarkError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("config: {0}")]
    Config(String),
}

/// Every tunable the stack exposes, with the documented defaults. Serialized
/// as the run-manifest config and hashed for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Voxel edge length Δ, meters.
    pub voxel_size: f64,
    /// Horizontal grid dimension G, voxels.
    pub grid_dim: u32,
    /// Per-voxel feature buffer capacity B.
    pub buffer_capacity: usize,
    /// Surprise threshold τ.
    pub tau: f64,
    /// Neighborhood hop radius n for the surprise context.
    pub hop: i64,
    /// Patch feature dimension the encoder emits.
    pub feature_dim: usize,
    /// Landmark fusion radius, meters.
    pub overlap_distance: f64,
    /// Minimum detection confidence admitted to the landmark store.
    pub confidence_floor: f64,
    /// Priority mixing weight λ.
    pub lambda: f64,
    /// Maximum landmark-branch candidates K.
    pub landmark_k: usize,
    /// Maximum cognitive-branch candidates Q.
    pub cognitive_q: usize,
    /// Patch pooling temperature α, per pixel.
    pub pool_alpha: f64,
    /// Match clustering radius, voxels (Chebyshev).
    pub cluster_eps: i64,
    /// Match clustering density floor.
    pub cluster_min_pts: usize,
    /// Rank both retrieval branches together instead of falling back.
    pub mix_branches: bool,
    /// Per-episode action budget.
    pub step_budget: u32,
    /// Maximum extra forward steps during verification.
    pub verify_max_forwards: u32,
    /// A candidate is approachable if a known-free cell lies within this
    /// range of it, meters.
    pub approach_radius_m: f64,
    /// Simulator/sensing settings (image size, FOV, depth range, stride).
    pub sim: SimConfig,
    /// Remote endpoint settings; `None` runs fully mocked.
    pub endpoint: Option<ChatEndpointConfig>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            grid_dim: 1000,
            buffer_capacity: 10,
            tau: 0.5,
            hop: 1,
            feature_dim: crate::sim::DEFAULT_FEATURE_DIM,
            overlap_distance: 1.0,
            confidence_floor: 0.55,
            lambda: 0.5,
            landmark_k: 3,
            cognitive_q: 3,
            pool_alpha: 0.01,
            cluster_eps: 3,
            cluster_min_pts: 1,
            mix_branches: false,
            step_budget: 500,
            verify_max_forwards: 3,
            approach_radius_m: 2.0,
            sim: SimConfig::default(),
            endpoint: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return fail("voxel_size must be positive");
        }
        if self.grid_dim == 0 || self.grid_dim % 2 != 0 {
            return fail("grid_dim must be positive and even");
        }
        if self.buffer_capacity == 0 {
            return fail("buffer_capacity must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return fail("tau must be in [0,1]");
        }
        if self.hop < 0 {
            return fail("hop must be non-negative");
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive");
        }
        if !(self.overlap_distance >= 0.0 && self.overlap_distance.is_finite()) {
            return fail("overlap_distance must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return fail("confidence_floor must be in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail("lambda must be in [0,1]");
        }
        if self.landmark_k == 0 || self.cognitive_q == 0 {
            return fail("candidate counts must be at least 1");
        }
        if !(self.pool_alpha >= 0.0 && self.pool_alpha.is_finite()) {
            return fail("pool_alpha must be non-negative");
        }
        if self.cluster_eps <= 0 {
            return fail("cluster_eps must be positive");
        }
        if self.cluster_min_pts == 0 {
            return fail("cluster_min_pts must be at least 1");
        }
        if self.step_budget == 0 {
            return fail("step_budget must be positive");
        }
        if !(self.approach_radius_m > 0.0) {
            return fail("approach_radius_m must be positive");
        }
        self.sim.validate().map_err(|e| AgentError::Config(e.to_string()))?;
        Ok(())
    }

    /// Hex digest of the canonical JSON encoding, recorded in run manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = sha2::Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid_params(&self) -> GridParams {
        GridParams::new(self.voxel_size, self.grid_dim).expect("validated grid parameters")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let config: Self = serde_json::from_str(text).map_err(|e| AgentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

/// The three memory artifacts exploration produces and navigation consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBundle {
    pub landmarks: LandmarkStore,
    pub map: CognitiveMap,
    pub grid: OccupancyGrid,
}

impl MemoryBundle {
    /// Fresh, empty memories sized for one scene.
    pub fn empty(config: &AgentConfig, scene: &Scene) -> Self {
        Self {
            landmarks: LandmarkStore::new(config.overlap_distance, config.confidence_floor),
            map: CognitiveMap::with_params(
                config.grid_params(),
                config.feature_dim,
                config.buffer_capacity,
                config.tau,
                config.hop,
            ),
            grid: OccupancyGrid::new(scene.width, scene.height, scene.cell_size, (0.0, 0.0)),
        }
    }

    /// Writes landmarks.json, cogmap.bscm, and grid.pgm/grid.json under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), AgentError> {
        std::fs::create_dir_all(dir)?;
        self.landmarks.save(&dir.join("landmarks.json"))?;
        self.map.save(&dir.join("cogmap.bscm"))?;
        self.grid.save_pgm(&dir.join("grid.pgm"), &dir.join("grid.json"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, AgentError> {
        Ok(Self {
            landmarks: LandmarkStore::load(&dir.join("landmarks.json"))?,
            map: CognitiveMap::load(&dir.join("cogmap.bscm"))?,
            grid: OccupancyGrid::load_pgm(&dir.join("grid.pgm"), &dir.join("grid.json"))?,
        })
    }
}

/// How far an in-episode control phase got.
#[derive(Debug, Clone, PartialEq)]
enum NavOutcome {
    /// A candidate verified; Stop was issued when terminal.
    Verified,
    /// Every candidate was visited and failed verification.
    Exhausted,
    /// Neither branch produced a candidate.
    RetrievalEmpty,
    /// The step budget ran out mid-episode.
    BudgetExhausted,
}

/// One agent bound to one simulator instance and one interface set.
pub struct NavAgent {
    pub config: AgentConfig,
    pub interfaces: InterfaceSet,
    sim: Simulator,
    t_base_cam: RigidTransform,
}

impl NavAgent {
    pub fn new(
        scene: Arc<Scene>,
        config: AgentConfig,
        interfaces: InterfaceSet,
        start: AgentPose,
        seed: u64,
    ) -> Self {
        config.validate().expect("agent config must validate");
        let sim = Simulator::new(scene, config.sim.clone(), start, seed);
        let t_base_cam = config.sim.t_base_cam();
        Self { config, interfaces, sim, t_base_cam }
    }

    pub fn sim(&self) -> &Simulator {
        &self.sim
    }

    fn budget_left(&self) -> bool {
        self.sim.steps() < self.config.step_budget
    }

    /// Steps the simulator, panicking on a post-stop step (programming error).
    fn step(&mut self, action: Action) -> (SimObservation, bool) {
        self.sim.step(action).expect("agent never acts after stop")
    }

    // ------------------------------------------------------------------
    // Perception ingestion
    // ------------------------------------------------------------------

    /// Marks cells along every scan ray free and wall hits occupied.
    fn update_grid_from_scan(grid: &mut OccupancyGrid, pose: &AgentPose, scan: &[ScanColumn]) {
        if let Some((r, c)) = grid.world_to_cell(pose.x, pose.y) {
            grid.set(r, c, CellState::Free);
        }
        let march = grid.resolution * 0.5;
        for col in scan {
            let (free_until, wall_hit) = match col.reading {
                ScanReading::TooClose => continue,
                ScanReading::Hit { range, wall } => (range, wall),
                ScanReading::MaxRange { range } => (range, false),
            };
            let (dx, dy) = (col.bearing.cos(), col.bearing.sin());
            let mut s = march;
            while s < free_until - 1e-9 {
                if let Some((r, c)) = grid.world_to_cell(pose.x + s * dx, pose.y + s * dy) {
                    if grid.get(r, c) != CellState::Occupied {
                        grid.set(r, c, CellState::Free);
                    }
                }
                s += march;
            }
            if wall_hit {
                let hx = pose.x + (free_until + march * 0.5) * dx;
                let hy = pose.y + (free_until + march * 0.5) * dy;
                if let Some((r, c)) = grid.world_to_cell(hx, hy) {
                    grid.set(r, c, CellState::Occupied);
                }
            }
        }
    }

    /// Back-projects a detection to world coordinates through the camera.
    fn detection_world_position(&self, obs: &SimObservation, det: &crate::perception::Detection) -> Option<[f64; 3]> {
        let k = self.config.sim.intrinsics();
        let p_cam = pixel_to_camera(det.center.0, det.center.1, det.depth, &k).ok()?;
        let p_base = self.t_base_cam.apply(p_cam);
        let t_world_base = pose_to_world_transform(&obs.pose, 0.0);
        Some(t_world_base.apply(p_base))
    }

    /// Ingests one view: occupancy from the scan, detections into the
    /// landmark store, and patch features into the cognitive map.
    fn ingest_view(&mut self, obs: &SimObservation, mem: &mut MemoryBundle) {
        Self::update_grid_from_scan(&mut mem.grid, &obs.pose, &obs.scan);
        let detections = self.interfaces.detector.detect(obs).unwrap_or_default();
        for det in &detections {
            let Some(position) = self.detection_world_position(obs, det) else { continue };
            let description = self
                .interfaces
                .enricher
                .describe(obs, det)
                .unwrap_or_else(|_| format!("a {}", det.category));
            mem.landmarks.insert(Landmark::new(&det.category, position, det.confidence, description));
        }
        let k = self.config.sim.intrinsics();
        if let Ok(patches) = self.interfaces.encoder.encode_observation(obs) {
            mem.map.integrate(&patches, &obs.depth, &obs.pose, &k, &self.t_base_cam);
        }
    }

    /// Rotates a full turn, ingesting every view. Costs `SCAN_VIEWS` steps.
    fn scan_and_ingest(&mut self, mem: &mut MemoryBundle) {
        let obs = self.sim.observe();
        self.ingest_view(&obs, mem);
        for _ in 1..SCAN_VIEWS {
            let (obs, _) = self.step(Action::TurnLeft);
            self.ingest_view(&obs, mem);
        }
        let (obs, _) = self.step(Action::TurnLeft);
        self.ingest_view(&obs, mem);
    }

    // ------------------------------------------------------------------
    // Locomotion
    // ------------------------------------------------------------------

    /// Drives toward `target`, replanning on collision. Planning prefers an
    /// obstacle-inflated copy of the grid so the discretized follower keeps
    /// a cell of wall clearance and cannot clip corners; when an endpoint
    /// sits inside the inflated band the raw grid is used instead. Each
    /// collision marks the cell ahead as occupied in the working copy so
    /// replans route around it. Returns false when no plan exists or
    /// replanning keeps colliding. Does not issue Stop.
    fn drive_to_cell(&mut self, grid: &OccupancyGrid, target: (u32, u32), respect_budget: bool) -> bool {
        let pose = self.sim.pose();
        let mut inflated = inflate_obstacles(grid, 1);
        // Carve the endpoints back out: standing next to a wall (or walking
        // up to a wall-adjacent goal) must not forbid planning outright.
        let here = grid.world_to_cell(pose.x, pose.y);
        for &cell in here.iter().chain([target].iter()) {
            if grid.get(cell.0, cell.1) == CellState::Free {
                inflated.set(cell.0, cell.1, grid.get(cell.0, cell.1));
            }
        }
        let inflated_ok = here.map_or(false, |here| {
            here == target || astar(&inflated, here, target).is_some()
        });
        if inflated_ok && self.drive_attempts(inflated, target, respect_budget) {
            return true;
        }
        self.drive_attempts(grid.clone(), target, respect_budget)
    }

    /// The replanning loop behind [`Self::drive_to_cell`], run against one
    /// working grid that accumulates collision marks.
    fn drive_attempts(&mut self, mut work: OccupancyGrid, target: (u32, u32), respect_budget: bool) -> bool {
        for _attempt in 0..8 {
            let pose = self.sim.pose();
            let Some(here) = work.world_to_cell(pose.x, pose.y) else { return false };
            if here == target {
                return true;
            }
            if work.get(here.0, here.1) != CellState::Free {
                // Standing on a cell the map later marked occupied/unknown:
                // planning cannot start here.
                return false;
            }
            let Some(path) = astar(&work, here, target) else { return false };
            let actions = path_to_actions(&work, &path.cells, &pose);
            let mut collided = false;
            for action in actions {
                if action == Action::Stop {
                    break;
                }
                if respect_budget && !self.budget_left() {
                    return false;
                }
                let (_, hit) = self.step(action);
                if hit {
                    collided = true;
                    break;
                }
            }
            if !collided {
                return true;
            }
            let blocked = self.sim.pose();
            if let Some(obstacle) = Self::cell_ahead(&work, &blocked) {
                if obstacle != target {
                    work.set(obstacle.0, obstacle.1, CellState::Occupied);
                }
            }
        }
        false
    }

    /// First cell along the pose's heading that differs from the cell the
    /// pose stands in — the best estimate of what a forward step just hit.
    fn cell_ahead(grid: &OccupancyGrid, pose: &AgentPose) -> Option<(u32, u32)> {
        let here = grid.world_to_cell(pose.x, pose.y)?;
        let (dx, dy) = (pose.yaw.cos(), pose.yaw.sin());
        for i in 1..=8 {
            let t = f64::from(i) * 0.25 * FORWARD_STEP_M;
            let cell = grid.world_to_cell(pose.x + t * dx, pose.y + t * dy)?;
            if cell != here {
                return Some(cell);
            }
        }
        None
    }

    /// Free cell nearest to a world point, within `radius` of it. Cells
    /// beyond the sensing standoff are preferred so the camera can still see
    /// the goal after arrival; anything free within radius is the fallback.
    fn nearest_free_cell(grid: &OccupancyGrid, x: f64, y: f64, radius: f64) -> Option<(u32, u32)> {
        let mut best_standoff: Option<(f64, (u32, u32))> = None;
        let mut best_any: Option<(f64, (u32, u32))> = None;
        for r in 0..grid.height {
            for c in 0..grid.width {
                if grid.get(r, c) != CellState::Free {
                    continue;
                }
                let (cx, cy) = grid.cell_center(r, c);
                let d = ((cx - x).powi(2) + (cy - y).powi(2)).sqrt();
                if d > radius {
                    continue;
                }
                if d >= APPROACH_STANDOFF_M && best_standoff.map_or(true, |(bd, _)| d < bd) {
                    best_standoff = Some((d, (r, c)));
                }
                if best_any.map_or(true, |(bd, _)| d < bd) {
                    best_any = Some((d, (r, c)));
                }
            }
        }
        best_standoff.or(best_any).map(|(_, cell)| cell)
    }

    // ------------------------------------------------------------------
    // Exploration
    // ------------------------------------------------------------------

    /// Frontier exploration with the budget rule (half the traversable area);
    /// returns the populated memories.
    pub fn explore_and_build(&mut self) -> MemoryBundle {
        let budget = exploration_budget(&self.sim.scene().truth_grid());
        self.explore_with_budget(budget)
    }

    /// Frontier exploration capped at `budget` frontier visits.
    pub fn explore_with_budget(&mut self, budget: u32) -> MemoryBundle {
        let scene = self.sim.scene().clone();
        let mut mem = MemoryBundle::empty(&self.config, &scene);
        let mut visited: BTreeSet<(u32, u32)> = BTreeSet::new();
        self.scan_and_ingest(&mut mem);
        let mut visits: u32 = 0;
        while visits < budget {
            let pose = self.sim.pose();
            let Some(here) = mem.grid.world_to_cell(pose.x, pose.y) else { break };
            let frontiers: Vec<(u32, u32)> = find_frontiers(&mem.grid)
                .into_iter()
                .filter(|f| !visited.contains(f))
                .collect();
            let Some(target) = select_nearest(&frontiers, here) else { break };
            visited.insert(target);
            let grid_snapshot = mem.grid.clone();
            if astar(&grid_snapshot, here, target).is_none() {
                continue; // unreachable frontier: skip, try the next
            }
            self.drive_to_cell(&grid_snapshot, target, false);
            self.scan_and_ingest(&mut mem);
            visits += 1;
        }
        mem
    }

    // ------------------------------------------------------------------
    // Navigation
    // ------------------------------------------------------------------

    /// Hierarchical retrieval: landmark branch first for category and
    /// waypoint goals, cognitive branch first for instance goals; the other
    /// branch fills in when the first is empty (or always, with mixing on).
    fn retrieve(&self, goal: &GoalSpec, mem: &MemoryBundle) -> Vec<CandidateGoal> {
        let c = &self.config;
        let landmark_branch = || -> Vec<CandidateGoal> {
            if goal.text.is_none() {
                return Vec::new();
            }
            retrieve_landmark_candidates(
                goal,
                &mem.landmarks,
                self.interfaces.reasoner.as_ref(),
                c.landmark_k,
            )
            .unwrap_or_default()
        };
        let cognitive_branch = || -> Vec<CandidateGoal> {
            retrieve_cognitive_candidates_with(
                goal,
                &mem.map,
                self.interfaces.enricher.as_ref(),
                self.interfaces.imaginer.as_ref(),
                self.interfaces.encoder.as_ref(),
                c.cognitive_q,
                c.pool_alpha,
                c.cluster_eps,
                c.cluster_min_pts,
            )
            .unwrap_or_default()
        };
        match goal.modality {
            GoalModality::Category | GoalModality::Waypoint => {
                let mut pool = landmark_branch();
                if pool.is_empty() || c.mix_branches {
                    pool.extend(cognitive_branch());
                }
                pool
            }
            GoalModality::TextInstance | GoalModality::ImageInstance => {
                let mut pool = cognitive_branch();
                if pool.is_empty() || c.mix_branches {
                    pool.extend(landmark_branch());
                }
                pool
            }
        }
    }

    /// Rotational verification at the current position. On success, takes up
    /// to `verify_max_forwards` extra forward steps while the verifier keeps
    /// asking to close in. Returns true once verified.
    fn verify_here(&mut self, goal: &GoalSpec) -> Option<bool> {
        for view in 0..SCAN_VIEWS {
            let obs = if view == 0 {
                self.sim.observe()
            } else {
                if !self.budget_left() {
                    return None;
                }
                self.step(Action::TurnLeft).0
            };
            let Ok(outcome) = self.interfaces.verifier.verify(&obs, goal) else { continue };
            if !outcome.success {
                continue;
            }
            let mut need_forward = outcome.need_forward;
            let mut extra = 0;
            while need_forward && extra < self.config.verify_max_forwards {
                if !self.budget_left() {
                    return None;
                }
                let (obs, collided) = self.step(Action::Forward);
                extra += 1;
                if collided {
                    break;
                }
                match self.interfaces.verifier.verify(&obs, goal) {
                    Ok(o) if o.success => need_forward = o.need_forward,
                    _ => break,
                }
            }
            return Some(true);
        }
        Some(false)
    }

    /// Core candidate loop shared by navigate / follow_instruction / EQA.
    /// When `terminal`, a verified candidate (or exhaustion) ends the episode
    /// with Stop.
    fn navigate_inner(&mut self, goal: &GoalSpec, mem: &MemoryBundle, terminal: bool) -> NavOutcome {
        let ranked = rank_candidates(
            self.retrieve(goal, mem),
            &self.sim.start_pose(),
            self.config.lambda,
        );
        if ranked.is_empty() {
            return NavOutcome::RetrievalEmpty;
        }
        let visit_cap = self.config.landmark_k + self.config.cognitive_q;
        let mut episode_grid = mem.grid.clone();
        for cand in ranked.iter().take(visit_cap) {
            if !self.budget_left() {
                return NavOutcome::BudgetExhausted;
            }
            let Some(target) = Self::nearest_free_cell(
                &episode_grid,
                cand.position[0],
                cand.position[1],
                self.config.approach_radius_m,
            ) else {
                continue;
            };
            if !self.drive_to_cell(&episode_grid, target, true) {
                if !self.budget_left() {
                    return NavOutcome::BudgetExhausted;
                }
                continue;
            }
            // Keep the local map current for later candidate approaches.
            let obs = self.sim.observe();
            Self::update_grid_from_scan(&mut episode_grid, &obs.pose, &obs.scan);
            match self.verify_here(goal) {
                None => return NavOutcome::BudgetExhausted,
                Some(true) => {
                    if terminal {
                        if !self.budget_left() {
                            return NavOutcome::BudgetExhausted;
                        }
                        self.step(Action::Stop);
                    }
                    return NavOutcome::Verified;
                }
                Some(false) => {}
            }
        }
        if terminal && self.budget_left() {
            self.step(Action::Stop);
        }
        NavOutcome::Exhausted
    }

    /// Assembles the episode record from the simulator state and scene truth.
    fn finish_episode(&self, goal: &GoalSpec, reason: &str) -> EpisodeResult {
        let scene = self.sim.scene();
        let targets = goal_targets(scene, goal);
        let pose = self.sim.pose();
        let start = self.sim.start_pose();
        let stop_distance = if targets.is_empty() {
            f64::INFINITY
        } else {
            distance_to_targets(scene, &targets, pose.x, pose.y)
        };
        let geodesic_length = targets
            .iter()
            .filter_map(|&t| {
                let p = scene.instances[t].position;
                geodesic_shortest(scene, (start.x, start.y), (p[0], p[1]))
            })
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))));
        let success = self.sim.finished()
            && self.sim.steps() <= self.config.step_budget
            && stop_distance <= SUCCESS_RADIUS_M;
        EpisodeResult {
            success,
            executed_length: self.sim.executed_length(),
            geodesic_length,
            steps: self.sim.steps(),
            stop_distance,
            reason: reason.to_string(),
        }
    }

    /// Memory-guided navigation to one goal. Retrieves and ranks candidates,
    /// visits them in priority order, verifies on arrival, and stops at the
    /// first verified candidate.
    pub fn navigate(&mut self, goal: &GoalSpec, mem: &MemoryBundle) -> EpisodeResult {
        match self.navigate_inner(goal, mem, true) {
            NavOutcome::Verified => self.finish_episode(goal, ""),
            NavOutcome::Exhausted => self.finish_episode(goal, "verification-failed"),
            NavOutcome::RetrievalEmpty => {
                let mut r = self.finish_episode(goal, "retrieval-empty");
                r.success = false;
                r
            }
            NavOutcome::BudgetExhausted => {
                let mut r = self.finish_episode(goal, "budget-exhausted");
                r.success = false;
                r
            }
        }
    }

    /// Decomposes a long-horizon instruction into waypoints and navigates
    /// them sequentially; overall success is the final waypoint's success.
    pub fn follow_instruction(&mut self, instruction: &str, mem: &MemoryBundle) -> EpisodeResult {
        let plan = match self.interfaces.reasoner.decompose_instruction(instruction) {
            Ok(p) if !p.is_empty() => p,
            _ => {
                let goal = GoalSpec::waypoint(instruction);
                let mut r = self.finish_episode(&goal, "decomposition-failed");
                r.success = false;
                return r;
            }
        };
        let last = plan.len() - 1;
        for (i, waypoint) in plan.iter().enumerate() {
            let goal = GoalSpec::waypoint(waypoint.clone());
            let terminal = i == last;
            match self.navigate_inner(&goal, mem, terminal) {
                NavOutcome::Verified => {
                    if terminal {
                        return self.finish_episode(&goal, "");
                    }
                }
                NavOutcome::Exhausted => {
                    let reason = if terminal { "verification-failed" } else { "waypoint-failed" };
                    let mut r = self.finish_episode(&goal, reason);
                    r.success = r.success && terminal;
                    return r;
                }
                NavOutcome::RetrievalEmpty => {
                    let mut r = self.finish_episode(&goal, "retrieval-empty");
                    r.success = false;
                    return r;
                }
                NavOutcome::BudgetExhausted => {
                    let mut r = self.finish_episode(&goal, "budget-exhausted");
                    r.success = false;
                    return r;
                }
            }
        }
        unreachable!("terminal waypoint always returns")
    }

    /// Embodied question answering: localize the question to a waypoint,
    /// navigate there, look around, and answer from the best matching
    /// detection's description.
    pub fn answer_question(&mut self, question: &str, mem: &MemoryBundle) -> (EpisodeResult, String) {
        let waypoint = match self.interfaces.reasoner.eqa_waypoint(question) {
            Ok(w) => w,
            Err(_) => {
                let goal = GoalSpec::waypoint(question);
                let mut r = self.finish_episode(&goal, "eqa-waypoint-failed");
                r.success = false;
                return (r, String::new());
            }
        };
        let goal = GoalSpec::waypoint(waypoint.clone());
        if waypoint == crate::perception::EQA_EXPLORE_SENTINEL {
            // Nothing to localize: answer from wherever the agent stands.
            let answer = self.answer_scan(question, &waypoint, mem);
            if self.budget_left() {
                self.step(Action::Stop);
            }
            let mut r = self.finish_episode(&goal, "eqa-unlocalized");
            r.success = false;
            return (r, answer);
        }
        match self.navigate_inner(&goal, mem, false) {
            NavOutcome::Verified => {
                let answer = self.answer_scan(question, &waypoint, mem);
                if self.budget_left() {
                    self.step(Action::Stop);
                }
                (self.finish_episode(&goal, ""), answer)
            }
            NavOutcome::Exhausted => {
                let answer = self.answer_scan(question, &waypoint, mem);
                if self.budget_left() {
                    self.step(Action::Stop);
                }
                let mut r = self.finish_episode(&goal, "verification-failed");
                r.success = false;
                (r, answer)
            }
            NavOutcome::RetrievalEmpty => {
                // Cannot localize the waypoint; still give the best answer
                // memory affords rather than none at all.
                let answer = self.answer_scan(question, &waypoint, mem);
                if self.budget_left() {
                    self.step(Action::Stop);
                }
                let mut r = self.finish_episode(&goal, "retrieval-empty");
                r.success = false;
                (r, answer)
            }
            NavOutcome::BudgetExhausted => {
                let mut r = self.finish_episode(&goal, "budget-exhausted");
                r.success = false;
                (r, String::new())
            }
        }
    }

    /// Looks around once and describes the highest-confidence detection
    /// matching the question or waypoint text. When the current views miss
    /// the goal (too close, occluded, out of frame), the stored landmark
    /// description answers instead — that recall is the point of the memory.
    fn answer_scan(&mut self, question: &str, waypoint: &str, mem: &MemoryBundle) -> String {
        let matches_text = |category: &str| {
            let cat = category.to_ascii_lowercase();
            let word_match = |text: &str| {
                text.to_ascii_lowercase()
                    .split(|ch: char| !ch.is_ascii_alphanumeric())
                    .any(|w| w == cat)
            };
            word_match(question) || word_match(waypoint)
        };
        let mut best: Option<(f64, String)> = None;
        for view in 0..SCAN_VIEWS {
            let obs = if view == 0 {
                self.sim.observe()
            } else {
                if !self.budget_left() {
                    break;
                }
                self.step(Action::TurnLeft).0
            };
            let detections = self.interfaces.detector.detect(&obs).unwrap_or_default();
            for det in &detections {
                if !matches_text(&det.category) {
                    continue;
                }
                if best.as_ref().map_or(true, |(c, _)| det.confidence > *c) {
                    let description = self
                        .interfaces
                        .enricher
                        .describe(&obs, det)
                        .unwrap_or_else(|_| format!("a {}", det.category));
                    best = Some((det.confidence, description));
                }
            }
        }
        if let Some((_, d)) = best {
            return d;
        }
        let pose = self.sim.pose();
        mem.landmarks
            .landmarks()
            .iter()
            .filter(|lm| matches_text(&lm.category))
            .map(|lm| {
                let d = ((lm.position[0] - pose.x).powi(2) + (lm.position[1] - pose.y).powi(2))
                    .sqrt();
                (d, lm)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, lm)| lm.description.clone())
            .unwrap_or_else(|| "unknown".to_string())
    }

    // ------------------------------------------------------------------
    // Memoryless baseline
    // ------------------------------------------------------------------

    /// Frontier search without memories: scan-and-verify at every frontier
    /// until the verifier fires or the budget runs out. The comparison
    /// baseline for memory-guided navigation.
    pub fn baseline_search(&mut self, goal: &GoalSpec) -> EpisodeResult {
        let scene = self.sim.scene().clone();
        let mut grid = OccupancyGrid::new(scene.width, scene.height, scene.cell_size, (0.0, 0.0));
        let mut visited: BTreeSet<(u32, u32)> = BTreeSet::new();
        loop {
            // 360° scan: verify and map at each heading.
            for view in 0..SCAN_VIEWS {
                let obs = if view == 0 {
                    self.sim.observe()
                } else {
                    if !self.budget_left() {
                        let mut r = self.finish_episode(goal, "budget-exhausted");
                        r.success = false;
                        return r;
                    }
                    self.step(Action::TurnLeft).0
                };
                Self::update_grid_from_scan(&mut grid, &obs.pose, &obs.scan);
                if let Ok(outcome) = self.interfaces.verifier.verify(&obs, goal) {
                    if outcome.success {
                        let mut need_forward = outcome.need_forward;
                        let mut extra = 0;
                        while need_forward && extra < self.config.verify_max_forwards {
                            if !self.budget_left() {
                                let mut r = self.finish_episode(goal, "budget-exhausted");
                                r.success = false;
                                return r;
                            }
                            let (obs, collided) = self.step(Action::Forward);
                            extra += 1;
                            if collided {
                                break;
                            }
                            match self.interfaces.verifier.verify(&obs, goal) {
                                Ok(o) if o.success => need_forward = o.need_forward,
                                _ => break,
                            }
                        }
                        if !self.budget_left() {
                            let mut r = self.finish_episode(goal, "budget-exhausted");
                            r.success = false;
                            return r;
                        }
                        self.step(Action::Stop);
                        return self.finish_episode(goal, "");
                    }
                }
            }
            // Move to the next frontier.
            let pose = self.sim.pose();
            let Some(here) = grid.world_to_cell(pose.x, pose.y) else {
                break;
            };
            let frontiers: Vec<(u32, u32)> =
                find_frontiers(&grid).into_iter().filter(|f| !visited.contains(f)).collect();
            let Some(target) = select_nearest(&frontiers, here) else { break };
            visited.insert(target);
            let snapshot = grid.clone();
            if astar(&snapshot, here, target).is_none() {
                continue;
            }
            if !self.drive_to_cell(&snapshot, target, true) && !self.budget_left() {
                let mut r = self.finish_episode(goal, "budget-exhausted");
                r.success = false;
                return r;
            }
        }
        if self.budget_left() {
            self.step(Action::Stop);
        }
        let mut r = self.finish_episode(goal, "frontier-exhausted");
        r.success = false;
        r
    }
}

/// Derives the episode's deterministic start pose from its seed.
pub fn episode_start_pose(scene: &Scene, seed: u64) -> AgentPose {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x9e37_79b9_7f4a_7c15));
    scene.random_free_pose(&mut rng)
}

/// Runs one memory-guided navigation episode end to end: deterministic start
/// pose from the seed, then candidate-sequenced navigation over the bundle.
pub fn run_episode(
    scene: &Arc<Scene>,
    config: &AgentConfig,
    interfaces: &InterfaceSet,
    mem: &MemoryBundle,
    goal: &GoalSpec,
    seed: u64,
) -> EpisodeResult {
    let start = episode_start_pose(scene, seed);
    let mut agent = NavAgent::new(scene.clone(), config.clone(), interfaces.clone(), start, seed);
    agent.navigate(goal, mem)
}

/// Runs the memoryless frontier-search baseline on the same start pose the
/// memory-guided episode would get for this seed.
pub fn run_baseline_episode(
    scene: &Arc<Scene>,
    config: &AgentConfig,
    interfaces: &InterfaceSet,
    goal: &GoalSpec,
    seed: u64,
) -> EpisodeResult {
    let start = episode_start_pose(scene, seed);
    let mut agent = NavAgent::new(scene.clone(), config.clone(), interfaces.clone(), start, seed);
    agent.baseline_search(goal)
}
