//! Deterministic 2D grid world with raycast depth, FOV-limited object
//! visibility, discrete agent dynamics, and episode bookkeeping.
//!
//! The world is a wall grid (0.25 m cells by default) plus vertical cylinder
//! instances standing on the floor. Rendering is 2.5D: per-column horizontal
//! raycasts resolve wall and instance silhouettes, and per-pixel vertical
//! geometry adds floor, wall-height, and instance-height structure. Agents
//! collide with walls only; instances are sensed but never block movement.

use crate::geometry::{AgentPose, CameraIntrinsics, RigidTransform};
use crate::perception::{DepthImage, Detection};
use crate::planner::{self, Action, CellState, OccupancyGrid, FORWARD_STEP_M, TURN_STEP_RAD};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

/// Dimension of identity and patch features produced by the mock encoder.
pub const DEFAULT_FEATURE_DIM: usize = 64;
/// Wall height used by the 2.5D renderer, meters.
pub const WALL_HEIGHT_M: f64 = 3.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene format: {0}")]
    Format(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// A sensed object: a vertical cylinder standing on the floor. Instances are
/// visible to the camera but transparent to motion (no collision).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub category: String,
    pub description: String,
    /// Center of the cylinder: (x, y, height/2).
    pub position: [f64; 3],
    pub radius: f64,
    pub height: f64,
    pub feature_seed: u64,
}

/// Static world: wall occupancy at `cell_size` resolution plus instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub cell_size: f64,
    pub width: u32,
    pub height: u32,
    walls: Vec<bool>,
    pub instances: Vec<Instance>,
    /// Identity-feature seed for wall surfaces (shared background feature).
    pub wall_feature_seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    version: u32,
    name: String,
    cell_size: f64,
    width: u32,
    height: u32,
    /// Per-row runs of consecutive wall cells: [start_col, len].
    wall_rows: Vec<Vec<[u32; 2]>>,
    wall_feature_seed: u64,
    instances: Vec<Instance>,
}

/// Category list the scene generator samples from.
pub const CATALOG: &[(&str, &str)] = &[
    ("sofa", "a plush crimson sofa with rolled arms"),
    ("chair", "a ladder-back oak chair"),
    ("table", "a round walnut dining table"),
    ("plant", "a tall potted fiddle-leaf fig"),
    ("lamp", "a brass floor lamp with a linen shade"),
    ("bed", "a queen bed with a striped duvet"),
    ("fridge", "a brushed-steel refrigerator"),
    ("tv", "a wide matte-black television"),
];

/// Deterministic 64-bit mixer used for seed derivation and per-observation
/// jitter that must not depend on call order.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Unit identity feature derived from a seed. Two surfaces share appearance
/// exactly when they share a seed.
pub fn identity_feature(seed: u64, dim: usize) -> crate::cogmap::FeatureVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 1e-3 {
            let unit: Vec<f32> = v.iter().map(|x| x / norm).collect();
            return crate::cogmap::FeatureVector::new(unit).expect("finite unit vector");
        }
    }
}

fn cos_between(a: &crate::cogmap::FeatureVector, b: &crate::cogmap::FeatureVector) -> f64 {
    crate::cogmap::cosine_similarity(a, b)
}

impl Scene {
    pub fn is_wall_cell(&self, r: u32, c: u32) -> bool {
        if r >= self.height || c >= self.width {
            return true;
        }
        self.walls[(r * self.width + c) as usize]
    }

    fn is_wall_cell_i(&self, r: i64, c: i64) -> bool {
        if r < 0 || c < 0 {
            return true;
        }
        self.is_wall_cell(r as u32, c as u32)
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(u32, u32)> {
        let c = (x / self.cell_size).floor();
        let r = (y / self.cell_size).floor();
        if c >= 0.0 && r >= 0.0 && (c as u32) < self.width && (r as u32) < self.height {
            Some((r as u32, c as u32))
        } else {
            None
        }
    }

    pub fn cell_center(&self, r: u32, c: u32) -> (f64, f64) {
        ((c as f64 + 0.5) * self.cell_size, (r as f64 + 0.5) * self.cell_size)
    }

    pub fn is_wall_at(&self, x: f64, y: f64) -> bool {
        match self.world_to_cell(x, y) {
            Some((r, c)) => self.is_wall_cell(r, c),
            None => true,
        }
    }

    pub fn bounds_meters(&self) -> (f64, f64) {
        (self.width as f64 * self.cell_size, self.height as f64 * self.cell_size)
    }

    pub fn free_cell_count(&self) -> usize {
        self.walls.iter().filter(|w| !**w).count()
    }

    /// Ground-truth occupancy grid over the wall layout (instances are not
    /// obstacles).
    pub fn truth_grid(&self) -> OccupancyGrid {
        let mut g = OccupancyGrid::new(self.width, self.height, self.cell_size, (0.0, 0.0));
        for r in 0..self.height {
            for c in 0..self.width {
                let s = if self.is_wall_cell(r, c) { CellState::Occupied } else { CellState::Free };
                g.set(r, c, s);
            }
        }
        g
    }

    /// Builds a scene from ASCII art rows: '#' = wall, anything else free.
    /// Rows must be equal length. Intended for tests and fixtures.
    pub fn from_ascii(
        name: &str,
        cell_size: f64,
        rows: &[&str],
        instances: Vec<Instance>,
        wall_feature_seed: u64,
    ) -> Self {
        assert!(!rows.is_empty(), "need at least one row");
        let width = rows[0].len() as u32;
        assert!(rows.iter().all(|r| r.len() as u32 == width), "ragged rows");
        let mut walls = Vec::with_capacity((width as usize) * rows.len());
        for row in rows {
            for ch in row.chars() {
                walls.push(ch == '#');
            }
        }
        Scene {
            name: name.to_string(),
            cell_size,
            width,
            height: rows.len() as u32,
            walls,
            instances,
            wall_feature_seed,
        }
    }

    /// Procedurally generates a connected scene: boundary walls, up to two
    /// interior dividers with door gaps, and 3–6 catalog instances placed
    /// with wall clearance and mutual separation. Deterministic per seed.
    pub fn generate(seed: u64) -> Scene {
        for attempt in 0..64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ splitmix64(attempt));
            if let Some(scene) = Self::try_generate(seed, &mut rng) {
                debug_assert!(scene.validate().is_ok());
                return scene;
            }
        }
        panic!("scene generation failed to converge for seed {seed}");
    }

    fn try_generate(seed: u64, rng: &mut ChaCha8Rng) -> Option<Scene> {
        let cell_size = 0.25;
        let width: u32 = rng.random_range(36..=56);
        let height: u32 = rng.random_range(36..=56);
        let mut walls = vec![false; (width as usize) * (height as usize)];
        let set_wall = |walls: &mut Vec<bool>, r: u32, c: u32| {
            walls[(r * width + c) as usize] = true;
        };
        for c in 0..width {
            set_wall(&mut walls, 0, c);
            set_wall(&mut walls, height - 1, c);
        }
        for r in 0..height {
            set_wall(&mut walls, r, 0);
            set_wall(&mut walls, r, width - 1);
        }

        let layout: u32 = rng.random_range(0..3);
        if layout >= 1 {
            // Vertical divider with a 3-cell door.
            let vc = rng.random_range(width / 3..=2 * width / 3);
            let door = rng.random_range(2..height - 5);
            for r in 0..height {
                if !(door..door + 3).contains(&r) {
                    set_wall(&mut walls, r, vc);
                }
            }
            if layout == 2 {
                // Horizontal divider on one side of the vertical wall.
                let left = rng.random_bool(0.5);
                let (c_lo, c_hi) = if left { (1, vc) } else { (vc + 1, width - 1) };
                if c_hi > c_lo + 6 {
                    let hr = rng.random_range(height / 3..=2 * height / 3);
                    let door_c = rng.random_range(c_lo + 1..c_hi - 4);
                    for c in c_lo..c_hi {
                        if !(door_c..door_c + 3).contains(&c) {
                            set_wall(&mut walls, hr, c);
                        }
                    }
                }
            }
        }

        let mut scene = Scene {
            name: format!("gen-{seed}"),
            cell_size,
            width,
            height,
            walls,
            instances: Vec::new(),
            wall_feature_seed: 0,
        };
        if !scene.free_connected() {
            return None;
        }

        // Identity feature seeds: wall background first, then one per
        // instance, each re-drawn until well separated from all accepted.
        let n_inst = rng.random_range(3..=6usize);
        let mut seeds: Vec<u64> = Vec::new();
        let mut feats: Vec<crate::cogmap::FeatureVector> = Vec::new();
        for _ in 0..=n_inst {
            let mut ok = false;
            for _ in 0..200 {
                let s: u64 = rng.random();
                let f = identity_feature(s, DEFAULT_FEATURE_DIM);
                if feats.iter().all(|g| cos_between(&f, g).abs() < 0.3) {
                    seeds.push(s);
                    feats.push(f);
                    ok = true;
                    break;
                }
            }
            if !ok {
                return None;
            }
        }
        scene.wall_feature_seed = seeds[0];

        let picks = sample_indices(rng, CATALOG.len(), n_inst);
        for (k, cat_idx) in picks.iter().enumerate() {
            let (category, description) = CATALOG[cat_idx];
            let mut placed = false;
            for _ in 0..400 {
                let r = rng.random_range(4..height - 4);
                let c = rng.random_range(4..width - 4);
                if !scene.clearance_ok(r, c, 3) {
                    continue;
                }
                let (x, y) = scene.cell_center(r, c);
                let far_enough = scene
                    .instances
                    .iter()
                    .all(|i| ((i.position[0] - x).powi(2) + (i.position[1] - y).powi(2)).sqrt() >= 1.2);
                if !far_enough {
                    continue;
                }
                let h = rng.random_range(1.0..2.2);
                scene.instances.push(Instance {
                    id: format!("{category}_{k}"),
                    category: category.to_string(),
                    description: description.to_string(),
                    position: [x, y, h / 2.0],
                    radius: 0.2,
                    height: h,
                    feature_seed: seeds[k + 1],
                });
                placed = true;
                break;
            }
            if !placed {
                return None;
            }
        }
        Some(scene)
    }

    /// True when every cell within Chebyshev `radius` of (r, c) is free.
    fn clearance_ok(&self, r: u32, c: u32, radius: i64) -> bool {
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                if self.is_wall_cell_i(r as i64 + dr, c as i64 + dc) {
                    return false;
                }
            }
        }
        true
    }

    fn free_connected(&self) -> bool {
        let total_free = self.free_cell_count();
        if total_free == 0 {
            return false;
        }
        let start = (0..self.walls.len()).find(|&i| !self.walls[i]).expect("has free cell");
        let mut seen = vec![false; self.walls.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0usize;
        while let Some(i) = stack.pop() {
            count += 1;
            let (r, c) = ((i as u32 / self.width) as i64, (i as u32 % self.width) as i64);
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr as u32 >= self.height || nc as u32 >= self.width {
                    continue;
                }
                let ni = (nr as u32 * self.width + nc as u32) as usize;
                if !seen[ni] && !self.walls[ni] {
                    seen[ni] = true;
                    stack.push(ni);
                }
            }
        }
        count == total_free
    }

    /// Full structural validation used by the generator and by load paths.
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::InvalidScene(m));
        if self.cell_size <= 0.0 {
            return fail("cell_size must be positive".into());
        }
        if self.width < 8 || self.height < 8 {
            return fail("scene too small".into());
        }
        if self.walls.len() != (self.width as usize) * (self.height as usize) {
            return fail("wall buffer size mismatch".into());
        }
        for c in 0..self.width {
            if !self.is_wall_cell(0, c) || !self.is_wall_cell(self.height - 1, c) {
                return fail("boundary must be walled".into());
            }
        }
        for r in 0..self.height {
            if !self.is_wall_cell(r, 0) || !self.is_wall_cell(r, self.width - 1) {
                return fail("boundary must be walled".into());
            }
        }
        if !self.free_connected() {
            return fail("free space must be connected".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for inst in &self.instances {
            if !ids.insert(inst.id.clone()) {
                return fail(format!("duplicate instance id {}", inst.id));
            }
            if inst.radius <= 0.0 || inst.height <= 0.0 {
                return fail(format!("instance {} has non-positive extent", inst.id));
            }
            match self.world_to_cell(inst.position[0], inst.position[1]) {
                Some((r, c)) if !self.is_wall_cell(r, c) => {}
                _ => return fail(format!("instance {} not on free space", inst.id)),
            }
        }
        let mut feats = vec![identity_feature(self.wall_feature_seed, DEFAULT_FEATURE_DIM)];
        feats.extend(self.instances.iter().map(|i| identity_feature(i.feature_seed, DEFAULT_FEATURE_DIM)));
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                if cos_between(&feats[i], &feats[j]).abs() >= 0.3 {
                    return fail("identity features insufficiently separated".into());
                }
            }
        }
        Ok(())
    }

    /// Samples a collision-clear start pose: a free cell with free 8-neighbors,
    /// at least 0.5 m from every instance center; yaw is a multiple of 30°.
    pub fn random_free_pose(&self, rng: &mut ChaCha8Rng) -> AgentPose {
        for _ in 0..10_000 {
            let r = rng.random_range(1..self.height - 1);
            let c = rng.random_range(1..self.width - 1);
            if !self.clearance_ok(r, c, 1) {
                continue;
            }
            let (x, y) = self.cell_center(r, c);
            if self
                .instances
                .iter()
                .any(|i| ((i.position[0] - x).powi(2) + (i.position[1] - y).powi(2)).sqrt() < 0.5)
            {
                continue;
            }
            let yaw = rng.random_range(0..12) as f64 * TURN_STEP_RAD;
            return AgentPose::new(x, y, yaw);
        }
        panic!("no clear spawn cell found in scene {}", self.name);
    }

    pub fn to_json(&self) -> String {
        let mut wall_rows = Vec::with_capacity(self.height as usize);
        for r in 0..self.height {
            let mut runs: Vec<[u32; 2]> = Vec::new();
            let mut c = 0;
            while c < self.width {
                if self.is_wall_cell(r, c) {
                    let start = c;
                    while c < self.width && self.is_wall_cell(r, c) {
                        c += 1;
                    }
                    runs.push([start, c - start]);
                } else {
                    c += 1;
                }
            }
            wall_rows.push(runs);
        }
        let file = SceneFile {
            version: 1,
            name: self.name.clone(),
            cell_size: self.cell_size,
            width: self.width,
            height: self.height,
            wall_rows,
            wall_feature_seed: self.wall_feature_seed,
            instances: self.instances.clone(),
        };
        serde_json::to_string_pretty(&file).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<Scene, SimError> {
        let file: SceneFile =
            serde_json::from_str(text).map_err(|e| SimError::Format(e.to_string()))?;
        if file.version != 1 {
            return Err(SimError::Format(format!("unsupported scene version {}", file.version)));
        }
        if file.wall_rows.len() != file.height as usize {
            return Err(SimError::Format("wall_rows length != height".into()));
        }
        let mut walls = vec![false; (file.width as usize) * (file.height as usize)];
        for (r, runs) in file.wall_rows.iter().enumerate() {
            for &[start, len] in runs {
                if start + len > file.width {
                    return Err(SimError::Format(format!("run out of bounds in row {r}")));
                }
                for c in start..start + len {
                    walls[r * file.width as usize + c as usize] = true;
                }
            }
        }
        let scene = Scene {
            name: file.name,
            cell_size: file.cell_size,
            width: file.width,
            height: file.height,
            walls,
            instances: file.instances,
            wall_feature_seed: file.wall_feature_seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scene, SimError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Horizontal DDA raycast against the wall grid: returns the distance to
    /// the first wall cell along the unit direction (ex, ey). The boundary is
    /// closed, so a hit always exists.
    pub fn raycast_wall(&self, x: f64, y: f64, ex: f64, ey: f64) -> f64 {
        let cs = self.cell_size;
        let (mut cr, mut cc) = match self.world_to_cell(x, y) {
            Some(rc) => (rc.0 as i64, rc.1 as i64),
            None => return 0.0,
        };
        if self.is_wall_cell_i(cr, cc) {
            return 0.0;
        }
        let step_c: i64 = if ex > 0.0 { 1 } else { -1 };
        let step_r: i64 = if ey > 0.0 { 1 } else { -1 };
        let t_delta_x = if ex != 0.0 { cs / ex.abs() } else { f64::INFINITY };
        let t_delta_y = if ey != 0.0 { cs / ey.abs() } else { f64::INFINITY };
        let next_cx = if ex > 0.0 { (cc as f64 + 1.0) * cs } else { cc as f64 * cs };
        let next_cy = if ey > 0.0 { (cr as f64 + 1.0) * cs } else { cr as f64 * cs };
        let mut t_max_x = if ex != 0.0 { (next_cx - x) / ex } else { f64::INFINITY };
        let mut t_max_y = if ey != 0.0 { (next_cy - y) / ey } else { f64::INFINITY };
        loop {
            let t;
            if t_max_x < t_max_y {
                t = t_max_x;
                t_max_x += t_delta_x;
                cc += step_c;
            } else {
                t = t_max_y;
                t_max_y += t_delta_y;
                cr += step_r;
            }
            if self.is_wall_cell_i(cr, cc) {
                return t.max(0.0);
            }
        }
    }

    /// Entry distance of the ray into instance `inst`'s footprint circle, if
    /// it intersects ahead of the origin.
    fn ray_circle_entry(&self, x: f64, y: f64, ex: f64, ey: f64, inst: &Instance) -> Option<f64> {
        let ox = inst.position[0] - x;
        let oy = inst.position[1] - y;
        let b = ox * ex + oy * ey;
        let perp2 = (ox * ox + oy * oy) - b * b;
        let disc = inst.radius * inst.radius - perp2;
        if disc < 0.0 {
            return None;
        }
        let s_enter = b - disc.sqrt();
        (s_enter > 1e-9).then_some(s_enter)
    }
}

/// Camera, motion, and sensing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub image_width: u32,
    pub image_height: u32,
    pub fov_deg: f64,
    pub patch_stride: u32,
    pub min_depth: f64,
    pub max_depth: f64,
    pub camera_height: f64,
    pub detection_jitter: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            image_width: 64,
            image_height: 64,
            fov_deg: 87.0,
            patch_stride: 8,
            min_depth: 0.3,
            max_depth: 8.0,
            camera_height: 1.5,
            detection_jitter: 0.03,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: &str| Err(SimError::InvalidScene(m.to_string()));
        if self.image_width == 0 || self.image_height == 0 {
            return fail("image dimensions must be positive");
        }
        if self.patch_stride == 0
            || self.patch_stride % 2 != 0
            || self.image_width % self.patch_stride != 0
            || self.image_height % self.patch_stride != 0
        {
            return fail("patch stride must be even and divide both image dimensions");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return fail("fov must be in (0, 180) degrees");
        }
        if !(self.min_depth > 0.0 && self.max_depth > self.min_depth) {
            return fail("need 0 < min_depth < max_depth");
        }
        if self.camera_height <= 0.0 {
            return fail("camera height must be positive");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let half_fov = (self.fov_deg / 2.0).to_radians();
        let fx = (self.image_width as f64 / 2.0) / half_fov.tan();
        CameraIntrinsics::new(
            fx,
            fx,
            self.image_width as f64 / 2.0,
            self.image_height as f64 / 2.0,
            self.image_width,
            self.image_height,
        )
        .expect("validated config yields valid intrinsics")
    }

    /// Camera mount: optical axis along base +x, image-right along base −y,
    /// image-down along base −z, lens at `camera_height` above the base.
    pub fn t_base_cam(&self) -> RigidTransform {
        RigidTransform::from_rotation_translation(
            [[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]],
            [0.0, 0.0, self.camera_height],
        )
    }

    pub fn patch_rows(&self) -> u32 {
        self.image_height / self.patch_stride
    }

    pub fn patch_cols(&self) -> u32 {
        self.image_width / self.patch_stride
    }
}

/// What a patch center pixel is looking at. The encoder maps this to feature
/// vectors; floor and sky produce no feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchHit {
    None,
    Wall,
    Instance { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchHitGrid {
    pub rows: u32,
    pub cols: u32,
    pub stride: u32,
    hits: Vec<PatchHit>,
}

impl PatchHitGrid {
    fn new(rows: u32, cols: u32, stride: u32) -> Self {
        Self { rows, cols, stride, hits: vec![PatchHit::None; (rows * cols) as usize] }
    }

    pub fn get(&self, i: u32, j: u32) -> PatchHit {
        self.hits[(i * self.cols + j) as usize]
    }

    fn set(&mut self, i: u32, j: u32, h: PatchHit) {
        self.hits[(i * self.cols + j) as usize] = h;
    }
}

/// One column of the horizontal range scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanColumn {
    /// Absolute world bearing of this column's ray.
    pub bearing: f64,
    pub reading: ScanReading,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScanReading {
    /// Surface nearer than the minimum sensing range; discard.
    TooClose,
    /// Surface within range at `range` meters (horizontal).
    Hit { range: f64, wall: bool },
    /// Nothing within the maximum sensing range.
    MaxRange { range: f64 },
}

/// Everything the agent senses at one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct SimObservation {
    pub pose: AgentPose,
    pub depth: DepthImage,
    pub detections: Vec<Detection>,
    pub patch_hits: PatchHitGrid,
    pub scan: Vec<ScanColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u32,
    pub action: Action,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub collided: bool,
}

/// Episode outcome record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    /// Executed trajectory length L, meters.
    pub executed_length: f64,
    /// Geodesic shortest length L*, meters; `None` marks an unsolvable episode.
    pub geodesic_length: Option<f64>,
    pub steps: u32,
    /// Euclidean (x, y) distance from the stop pose to the nearest true goal.
    pub stop_distance: f64,
    /// Empty on clean outcomes; otherwise a failure reason tag.
    pub reason: String,
}

/// Single-threaded simulator over one scene. Independent instances may run
/// concurrently; nothing is shared mutably.
#[derive(Debug, Clone)]
pub struct Simulator {
    scene: std::sync::Arc<Scene>,
    config: SimConfig,
    pose: AgentPose,
    start_pose: AgentPose,
    detection_seed: u64,
    steps: u32,
    executed_length: f64,
    collisions: u32,
    finished: bool,
    trace: Vec<TraceStep>,
}

impl Simulator {
    pub fn new(scene: std::sync::Arc<Scene>, config: SimConfig, start: AgentPose, seed: u64) -> Self {
        config.validate().expect("simulator config must validate");
        assert!(
            !scene.is_wall_at(start.x, start.y),
            "start pose must be on free space"
        );
        Self {
            scene,
            config,
            pose: start,
            start_pose: start,
            detection_seed: seed,
            steps: 0,
            executed_length: 0.0,
            collisions: 0,
            finished: false,
            trace: Vec::new(),
        }
    }

    pub fn scene(&self) -> &std::sync::Arc<Scene> {
        &self.scene
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn pose(&self) -> AgentPose {
        self.pose
    }

    pub fn start_pose(&self) -> AgentPose {
        self.start_pose
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn executed_length(&self) -> f64 {
        self.executed_length
    }

    pub fn collisions(&self) -> u32 {
        self.collisions
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn trace(&self) -> &[TraceStep] {
        &self.trace
    }

    /// Applies one action. Forward moves 0.25 m along yaw unless a wall
    /// blocks any point of the swept segment (then the pose is unchanged and
    /// `collided` is true); turns rotate ±30° exactly; stop ends the episode.
    pub fn step(&mut self, action: Action) -> Result<(SimObservation, bool), SimError> {
        if self.finished {
            return Err(SimError::EpisodeFinished);
        }
        let mut collided = false;
        match action {
            Action::Forward => {
                let nx = self.pose.x + FORWARD_STEP_M * self.pose.yaw.cos();
                let ny = self.pose.y + FORWARD_STEP_M * self.pose.yaw.sin();
                if self.forward_blocked(nx, ny) {
                    collided = true;
                    self.collisions += 1;
                } else {
                    self.executed_length += FORWARD_STEP_M;
                    self.pose = AgentPose::new(nx, ny, self.pose.yaw);
                }
            }
            Action::TurnLeft => {
                self.pose = AgentPose::new(self.pose.x, self.pose.y, self.pose.yaw + TURN_STEP_RAD);
            }
            Action::TurnRight => {
                self.pose = AgentPose::new(self.pose.x, self.pose.y, self.pose.yaw - TURN_STEP_RAD);
            }
            Action::Stop => {
                self.finished = true;
            }
        }
        self.steps += 1;
        self.trace.push(TraceStep {
            step: self.steps,
            action,
            x: self.pose.x,
            y: self.pose.y,
            yaw: self.pose.yaw,
            collided,
        });
        Ok((self.observe(), collided))
    }

    fn forward_blocked(&self, nx: f64, ny: f64) -> bool {
        let (x0, y0) = (self.pose.x, self.pose.y);
        [0.25, 0.5, 0.75, 1.0].iter().any(|&t| {
            let x = x0 + (nx - x0) * t;
            let y = y0 + (ny - y0) * t;
            self.scene.is_wall_at(x, y)
        })
    }

    /// Renders the current observation. Pure in the pose: repeated calls at
    /// the same pose produce identical output.
    pub fn observe(&self) -> SimObservation {
        let cfg = &self.config;
        let k = cfg.intrinsics();
        let (w, h) = (cfg.image_width, cfg.image_height);
        let pose = self.pose;
        let (fwd_x, fwd_y) = (pose.yaw.cos(), pose.yaw.sin());
        let (right_x, right_y) = (pose.yaw.sin(), -pose.yaw.cos());
        let cam_h = cfg.camera_height;

        struct Column {
            h_factor: f64,
            s_wall: f64,
            entries: Vec<(usize, f64)>, // (instance index, horizontal entry dist)
            bearing: f64,
        }

        let mut columns = Vec::with_capacity(w as usize);
        for c in 0..w {
            let x_c = (c as f64 - k.cx) / k.fx;
            let h_factor = (1.0 + x_c * x_c).sqrt();
            let dx = fwd_x + x_c * right_x;
            let dy = fwd_y + x_c * right_y;
            let (ex, ey) = (dx / h_factor, dy / h_factor);
            let s_wall = self.scene.raycast_wall(pose.x, pose.y, ex, ey);
            let mut entries: Vec<(usize, f64)> = self
                .scene
                .instances
                .iter()
                .enumerate()
                .filter_map(|(i, inst)| {
                    self.scene
                        .ray_circle_entry(pose.x, pose.y, ex, ey, inst)
                        .filter(|&s| s < s_wall)
                        .map(|s| (i, s))
                })
                .collect();
            entries.sort_by(|a, b| a.1.total_cmp(&b.1));
            columns.push(Column { h_factor, s_wall, entries, bearing: ey.atan2(ex) });
        }

        let mut depth = DepthImage::new(w, h);
        let mut patch_hits = PatchHitGrid::new(cfg.patch_rows(), cfg.patch_cols(), cfg.patch_stride);
        let half_stride = cfg.patch_stride / 2;
        for c in 0..w {
            let col = &columns[c as usize];
            for v in 0..h {
                let slope_down = (v as f64 - k.cy) / k.fy;
                let mut surface = PatchHit::None;
                let mut z_cam = f64::NAN;
                // Instance side shells, nearest entry first.
                for &(idx, s_enter) in &col.entries {
                    let z = s_enter / col.h_factor;
                    let z_at = cam_h - z * slope_down;
                    let inst = &self.scene.instances[idx];
                    if (0.0..=inst.height).contains(&z_at) {
                        surface = PatchHit::Instance { index: idx };
                        z_cam = z;
                        break;
                    }
                }
                if surface == PatchHit::None {
                    let z_wall = col.s_wall / col.h_factor;
                    if slope_down > 1e-12 && cam_h / slope_down <= z_wall {
                        // Floor: valid depth, but masked from the patch grid.
                        z_cam = cam_h / slope_down;
                    } else {
                        let z_at = cam_h - z_wall * slope_down;
                        if (0.0..=WALL_HEIGHT_M).contains(&z_at) {
                            surface = PatchHit::Wall;
                            z_cam = z_wall;
                        }
                    }
                }
                let in_range = z_cam.is_finite() && z_cam >= cfg.min_depth && z_cam <= cfg.max_depth;
                if in_range {
                    depth.set(c, v, z_cam);
                }
                if c % cfg.patch_stride == half_stride && v % cfg.patch_stride == half_stride {
                    let hit = if in_range { surface } else { PatchHit::None };
                    patch_hits.set(v / cfg.patch_stride, c / cfg.patch_stride, hit);
                }
            }
        }

        let scan = columns
            .iter()
            .map(|col| {
                let (s_hit, wall) = match col.entries.first() {
                    Some(&(_, s)) => (s, false),
                    None => (col.s_wall, true),
                };
                let reading = if s_hit < cfg.min_depth {
                    ScanReading::TooClose
                } else if s_hit <= cfg.max_depth {
                    ScanReading::Hit { range: s_hit, wall }
                } else {
                    ScanReading::MaxRange { range: cfg.max_depth }
                };
                ScanColumn { bearing: col.bearing, reading }
            })
            .collect();

        let mut detections = Vec::new();
        for (idx, inst) in self.scene.instances.iter().enumerate() {
            let dx = inst.position[0] - pose.x;
            let dy = inst.position[1] - pose.y;
            let z_cam = dx * fwd_x + dy * fwd_y;
            if z_cam < cfg.min_depth || z_cam > cfg.max_depth {
                continue;
            }
            let x_cam = dx * right_x + dy * right_y;
            let y_cam = cam_h - inst.position[2];
            let u = k.cx + k.fx * x_cam / z_cam;
            let v = k.cy + k.fy * y_cam / z_cam;
            if !(0.0..=(w - 1) as f64).contains(&u) || !(0.0..=(h - 1) as f64).contains(&v) {
                continue;
            }
            let dist2d = (dx * dx + dy * dy).sqrt();
            if dist2d > 1e-9 {
                let (ex, ey) = (dx / dist2d, dy / dist2d);
                if self.scene.raycast_wall(pose.x, pose.y, ex, ey) < dist2d - 1e-9 {
                    continue; // occluded by a wall
                }
            }
            let jitter_bits = splitmix64(
                self.detection_seed
                    ^ splitmix64(idx as u64)
                    ^ splitmix64(pose.x.to_bits() ^ pose.y.to_bits().rotate_left(17) ^ pose.yaw.to_bits().rotate_left(37)),
            );
            let unit = (jitter_bits >> 11) as f64 / (1u64 << 53) as f64; // [0, 1)
            let jitter = (unit * 2.0 - 1.0) * cfg.detection_jitter;
            let base = 0.95 - 0.35 * (z_cam - cfg.min_depth) / (cfg.max_depth - cfg.min_depth);
            let confidence = (base + jitter).clamp(0.05, 0.99);
            detections.push(Detection {
                category: inst.category.clone(),
                center: (u, v),
                depth: z_cam,
                confidence,
            });
        }

        SimObservation { pose, depth, detections, patch_hits, scan }
    }

    pub fn write_trace_jsonl(&self, path: &Path) -> Result<(), SimError> {
        let mut f = std::fs::File::create(path)?;
        for step in &self.trace {
            serde_json::to_writer(&mut f, step).map_err(|e| SimError::Format(e.to_string()))?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn read_trace_jsonl(path: &Path) -> Result<Vec<TraceStep>, SimError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| SimError::Format(e.to_string())))
        .collect()
}

/// Shortest geodesic distance in meters between two free-space points over
/// the scene's wall grid (8-connected, octile costs). `None` when the goal
/// is unreachable from the start.
pub fn geodesic_shortest(scene: &Scene, start: (f64, f64), goal: (f64, f64)) -> Option<f64> {
    let grid = scene.truth_grid();
    let s = grid
        .world_to_cell(start.0, start.1)
        .filter(|&(r, c)| grid.get(r, c) == CellState::Free)
        .expect("geodesic start must be on free space");
    let g = grid
        .world_to_cell(goal.0, goal.1)
        .filter(|&(r, c)| grid.get(r, c) == CellState::Free)
        .expect("geodesic goal must be on free space");
    planner::astar(&grid, s, g).map(|p| p.length_meters(scene.cell_size))
}

/// True goal instances for a goal spec: category match, description/text
/// match, or synthetic-image feature-seed match. Empty when nothing in the
/// scene satisfies the goal.
pub fn goal_targets(scene: &Scene, goal: &crate::perception::GoalSpec) -> Vec<usize> {
    use crate::perception::{GoalModality, ImageToken};
    match goal.modality {
        GoalModality::Category => {
            let want = goal.text.as_deref().unwrap_or("").trim();
            scene
                .instances
                .iter()
                .enumerate()
                .filter(|(_, i)| i.category.eq_ignore_ascii_case(want))
                .map(|(n, _)| n)
                .collect()
        }
        GoalModality::TextInstance | GoalModality::Waypoint => {
            let text = goal.text.as_deref().unwrap_or("").to_ascii_lowercase();
            let by_desc: Vec<usize> = scene
                .instances
                .iter()
                .enumerate()
                .filter(|(_, i)| text.contains(&i.description.to_ascii_lowercase()))
                .map(|(n, _)| n)
                .collect();
            if !by_desc.is_empty() {
                return by_desc;
            }
            scene
                .instances
                .iter()
                .enumerate()
                .filter(|(_, i)| {
                    text.split(|ch: char| !ch.is_ascii_alphanumeric())
                        .any(|word| word.eq_ignore_ascii_case(&i.category))
                })
                .map(|(n, _)| n)
                .collect()
        }
        GoalModality::ImageInstance => match &goal.image {
            Some(ImageToken::Synthetic(s)) => scene
                .instances
                .iter()
                .enumerate()
                .filter(|(_, i)| i.feature_seed == s.feature_seed)
                .map(|(n, _)| n)
                .collect(),
            _ => Vec::new(),
        },
    }
}

/// Minimum 2D distance from (x, y) to any of the given instance centers.
pub fn distance_to_targets(scene: &Scene, targets: &[usize], x: f64, y: f64) -> f64 {
    targets
        .iter()
        .map(|&i| {
            let p = scene.instances[i].position;
            ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Renders a top-down view: walls dark, free space light, instances as
/// colored discs, and an optional trajectory polyline. Binary PPM (P6).
pub fn render_scene_ppm(scene: &Scene, trace: Option<&[TraceStep]>) -> Vec<u8> {
    const SCALE: u32 = 6;
    let w = scene.width * SCALE;
    let h = scene.height * SCALE;
    let mut px = vec![235u8; (w as usize) * (h as usize) * 3];
    let put = |px: &mut Vec<u8>, x: i64, y: i64, rgb: [u8; 3]| {
        if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h {
            let i = ((y as u32 * w + x as u32) * 3) as usize;
            px[i..i + 3].copy_from_slice(&rgb);
        }
    };
    for r in 0..scene.height {
        for c in 0..scene.width {
            if scene.is_wall_cell(r, c) {
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        put(&mut px, (c * SCALE + dx) as i64, (r * SCALE + dy) as i64, [40, 40, 40]);
                    }
                }
            }
        }
    }
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        (
            (x / scene.cell_size * SCALE as f64).round() as i64,
            (y / scene.cell_size * SCALE as f64).round() as i64,
        )
    };
    for inst in &scene.instances {
        let hue = splitmix64(inst.feature_seed);
        let rgb = [
            96 + (hue & 0x7f) as u8,
            96 + ((hue >> 8) & 0x7f) as u8,
            96 + ((hue >> 16) & 0x7f) as u8,
        ];
        let (cx, cy) = to_px(inst.position[0], inst.position[1]);
        let rad = (inst.radius / scene.cell_size * SCALE as f64).round() as i64;
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                if dx * dx + dy * dy <= rad * rad {
                    put(&mut px, cx + dx, cy + dy, rgb);
                }
            }
        }
    }
    if let Some(steps) = trace {
        let mut prev: Option<(i64, i64)> = None;
        for s in steps {
            let (x, y) = to_px(s.x, s.y);
            if let Some((px0, py0)) = prev {
                let n = (x - px0).abs().max((y - py0).abs()).max(1);
                for t in 0..=n {
                    let ix = px0 + (x - px0) * t / n;
                    let iy = py0 + (y - py0) * t / n;
                    put(&mut px, ix, iy, [200, 30, 30]);
                }
            }
            prev = Some((x, y));
        }
        if let Some(first) = steps.first() {
            let (x, y) = to_px(first.x, first.y);
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    put(&mut px, x + dx, y + dy, [30, 120, 220]);
                }
            }
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(px);
    out
}
