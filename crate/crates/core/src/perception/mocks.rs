//! Deterministic, scene-backed mock interfaces: oracles over simulator
//! ground truth with seeded noise, so the full stack runs offline and every
//! run is bit-reproducible.

use super::*;
use crate::geometry::normalize_angle;
use crate::landmark::Landmark;
use crate::sim::{
    goal_targets, identity_feature, splitmix64, PatchHit, Scene, SimConfig, DEFAULT_FEATURE_DIM,
};
use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::VecDeque;
use std::sync::Mutex;

/// Verification distance threshold: success within this range, meters.
pub const VERIFY_SUCCESS_M: f64 = 2.0;
/// Verification closeness threshold: beyond this, one more forward step.
pub const VERIFY_NEAR_M: f64 = 1.0;
/// Upper bound on mock patch feature noise magnitude.
pub const MAX_PATCH_NOISE: f64 = 0.05;

/// Builds a complete mock interface set over one scene.
pub fn mock_interfaces(scene: std::sync::Arc<Scene>, config: &SimConfig, seed: u64) -> InterfaceSet {
    InterfaceSet {
        detector: Arc::new(MockDetector),
        encoder: Arc::new(MockEncoder::new(scene.clone(), seed)),
        enricher: Arc::new(MockEnricher { scene: scene.clone() }),
        imaginer: Arc::new(MockImaginer::new(scene.clone(), config)),
        verifier: Arc::new(MockVerifier { scene: scene.clone(), fov_deg: config.fov_deg }),
        scorer: Arc::new(MockScorer),
        reasoner: Arc::new(StoreReasoner),
    }
}

/// Passes through the simulator's ground-truth detections (already
/// FOV-, range-, and line-of-sight-filtered).
pub struct MockDetector;

impl ObjectDetector for MockDetector {
    fn detect(&self, obs: &SimObservation) -> Result<Vec<Detection>, InterfaceError> {
        Ok(obs.detections.clone())
    }
}

/// Emits identity features for surfaces the observation's patch rays hit:
/// instance patches get the instance's identity feature plus bounded seeded
/// noise, wall patches get the scene's shared background feature exactly,
/// floor and sky patches stay empty.
pub struct MockEncoder {
    scene: std::sync::Arc<Scene>,
    noise_seed: u64,
    dim: usize,
}

impl MockEncoder {
    pub fn new(scene: std::sync::Arc<Scene>, noise_seed: u64) -> Self {
        Self { scene, noise_seed, dim: DEFAULT_FEATURE_DIM }
    }

    fn noisy_identity(&self, feature_seed: u64, mix: u64) -> FeatureVector {
        let base = identity_feature(feature_seed, self.dim);
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.noise_seed ^ mix) ^ feature_seed);
        let dir: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let magnitude = rng.random::<f64>() * MAX_PATCH_NOISE;
        let noisy: Vec<f32> = base
            .values()
            .iter()
            .zip(&dir)
            .map(|(b, d)| b + (d / norm * magnitude) as f32)
            .collect();
        FeatureVector::new(noisy).expect("bounded noise keeps features valid")
    }
}

impl PatchEncoder for MockEncoder {
    fn encode_observation(&self, obs: &SimObservation) -> Result<PatchGrid, InterfaceError> {
        let hits = &obs.patch_hits;
        let mut grid = PatchGrid::new(hits.rows, hits.cols, hits.stride);
        let pose_mix = splitmix64(
            obs.pose.x.to_bits() ^ obs.pose.y.to_bits().rotate_left(17) ^ obs.pose.yaw.to_bits().rotate_left(37),
        );
        for i in 0..hits.rows {
            for j in 0..hits.cols {
                match hits.get(i, j) {
                    PatchHit::None => {}
                    PatchHit::Wall => {
                        grid.set(i, j, identity_feature(self.scene.wall_feature_seed, self.dim));
                    }
                    PatchHit::Instance { index } => {
                        let inst = &self.scene.instances[index];
                        let mix = pose_mix ^ splitmix64((i as u64) << 32 | j as u64);
                        grid.set(i, j, self.noisy_identity(inst.feature_seed, mix));
                    }
                }
            }
        }
        Ok(grid)
    }

    fn encode_image(&self, image: &ImageToken) -> Result<PatchGrid, InterfaceError> {
        match image {
            ImageToken::Synthetic(s) => {
                let mut grid = PatchGrid::new(s.rows, s.cols, s.stride);
                let feature = identity_feature(s.feature_seed, self.dim);
                for i in 0..s.rows {
                    for j in 0..s.cols {
                        grid.set(i, j, feature.clone());
                    }
                }
                Ok(grid)
            }
            ImageToken::External(path) => Err(InterfaceError::Unavailable(format!(
                "mock encoder cannot decode external image {path}"
            ))),
        }
    }
}

/// Resolves text to the scene instance it names: by full description
/// containment first, then by category word.
fn resolve_instance<'s>(scene: &'s Scene, text: &str) -> Option<&'s crate::sim::Instance> {
    let lower = text.to_ascii_lowercase();
    scene
        .instances
        .iter()
        .find(|i| lower.contains(&i.description.to_ascii_lowercase()))
        .or_else(|| {
            scene.instances.iter().find(|i| {
                lower
                    .split(|ch: char| !ch.is_ascii_alphanumeric())
                    .any(|w| w.eq_ignore_ascii_case(&i.category))
            })
        })
}

/// Ground-truth enrichment: expands goal text with the named instance's full
/// catalog description, and describes detections with the instance's
/// description verbatim.
pub struct MockEnricher {
    pub scene: std::sync::Arc<Scene>,
}

impl DescriptionEnricher for MockEnricher {
    fn enrich(&self, goal_text: &str) -> Result<String, InterfaceError> {
        match resolve_instance(&self.scene, goal_text) {
            Some(inst) => Ok(format!("{goal_text} — {}", inst.description)),
            None => Ok(goal_text.to_string()),
        }
    }

    fn describe(&self, _obs: &SimObservation, det: &Detection) -> Result<String, InterfaceError> {
        match self
            .scene
            .instances
            .iter()
            .find(|i| i.category.eq_ignore_ascii_case(&det.category))
        {
            Some(inst) => Ok(inst.description.clone()),
            None => Ok(format!("a {}", det.category)),
        }
    }
}

/// Renders a description into synthetic image tokens carrying the named
/// instance's identity-feature seed, closing the imagine-then-localize loop
/// without a generative model.
pub struct MockImaginer {
    scene: std::sync::Arc<Scene>,
    rows: u32,
    cols: u32,
    stride: u32,
}

impl MockImaginer {
    pub fn new(scene: std::sync::Arc<Scene>, config: &SimConfig) -> Self {
        Self {
            scene,
            rows: config.patch_rows(),
            cols: config.patch_cols(),
            stride: config.patch_stride,
        }
    }
}

impl ImageImaginer for MockImaginer {
    fn imagine(&self, description: &str, count: usize) -> Result<Vec<ImageToken>, InterfaceError> {
        let inst = resolve_instance(&self.scene, description).ok_or_else(|| {
            InterfaceError::Unavailable(format!("mock imaginer cannot depict: {description}"))
        })?;
        Ok((0..count)
            .map(|variant| {
                ImageToken::Synthetic(SyntheticImage {
                    feature_seed: inst.feature_seed,
                    rows: self.rows,
                    cols: self.cols,
                    stride: self.stride,
                    variant: variant as u64,
                })
            })
            .collect())
    }
}

/// Oracle verification: success iff some true goal instance is within 2.0 m,
/// inside the horizontal field of view, and not behind a wall; one more
/// forward step is requested when the match is farther than 1.0 m.
pub struct MockVerifier {
    pub scene: std::sync::Arc<Scene>,
    pub fov_deg: f64,
}

impl GoalVerifier for MockVerifier {
    fn verify(&self, obs: &SimObservation, goal: &GoalSpec) -> Result<VerifyOutcome, InterfaceError> {
        let targets = goal_targets(&self.scene, goal);
        let half_fov = (self.fov_deg / 2.0).to_radians();
        let mut best: Option<f64> = None;
        for &t in &targets {
            let p = self.scene.instances[t].position;
            let dx = p[0] - obs.pose.x;
            let dy = p[1] - obs.pose.y;
            let dist = (dx * dx + dy * dy).sqrt();
            if dist > VERIFY_SUCCESS_M {
                continue;
            }
            if dist > 1e-9 {
                let bearing = dy.atan2(dx);
                if normalize_angle(bearing - obs.pose.yaw).abs() > half_fov {
                    continue;
                }
                let (ex, ey) = (dx / dist, dy / dist);
                if self.scene.raycast_wall(obs.pose.x, obs.pose.y, ex, ey) < dist - 1e-9 {
                    continue;
                }
            }
            best = Some(best.map_or(dist, |b: f64| b.min(dist)));
        }
        Ok(match best {
            Some(dist) => VerifyOutcome {
                success: true,
                need_forward: dist > VERIFY_NEAR_M,
                analysis: format!("goal sighted {dist:.2} m away"),
            },
            None => VerifyOutcome {
                success: false,
                need_forward: false,
                analysis: "goal not in view within 2 m".into(),
            },
        })
    }
}

fn normalize_text(s: &str) -> String {
    s.chars()
        .filter_map(|c| {
            if c.is_ascii_alphanumeric() {
                Some(c.to_ascii_lowercase())
            } else if c.is_whitespace() {
                Some(' ')
            } else {
                None
            }
        })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Judge oracle: full marks for answers matching the reference after
/// normalization, minimum otherwise.
pub struct MockScorer;

impl AnswerScorer for MockScorer {
    fn score(&self, _question: &str, answer: &str, reference: &str) -> Result<u8, InterfaceError> {
        Ok(if normalize_text(answer) == normalize_text(reference) { 5 } else { 1 })
    }
}

/// Reasoner that reads the serialized landmark memory the way the remote
/// model would: matching entries by category word or description, ordered by
/// confidence.
pub struct StoreReasoner;

fn landmark_matches(goal_text: &str, lm: &Landmark) -> bool {
    let lower = goal_text.to_ascii_lowercase();
    lower
        .split(|ch: char| !ch.is_ascii_alphanumeric())
        .any(|w| w.eq_ignore_ascii_case(&lm.category))
        || lower.contains(&lm.description.to_ascii_lowercase())
}

impl Reasoner for StoreReasoner {
    fn locate_landmarks(
        &self,
        goal_text: &str,
        store: &LandmarkStore,
        k: usize,
    ) -> Result<Vec<LandmarkCandidate>, InterfaceError> {
        let mut hits: Vec<&Landmark> =
            store.landmarks().iter().filter(|lm| landmark_matches(goal_text, lm)).collect();
        hits.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(hits
            .into_iter()
            .take(k)
            .map(|lm| LandmarkCandidate { position: lm.position, confidence: lm.confidence })
            .collect())
    }

    fn decompose_instruction(&self, instruction: &str) -> Result<Vec<String>, InterfaceError> {
        let parsed = super::parse_waypoints(instruction);
        if !parsed.is_empty() {
            return Ok(parsed);
        }
        let waypoints: Vec<String> = instruction
            .split([',', ';'])
            .flat_map(|part| part.split(" then "))
            .map(|p| {
                let p = p.trim();
                let lower = p.to_ascii_lowercase();
                for prefix in ["go to the", "go to", "move to the", "move to", "visit the", "visit", "then"] {
                    if lower.starts_with(prefix) {
                        return p[prefix.len()..].trim().to_string();
                    }
                }
                p.to_string()
            })
            .filter(|p| !p.is_empty())
            .collect();
        if waypoints.is_empty() {
            Err(InterfaceError::Parse(format!("no waypoints in instruction: {instruction}")))
        } else {
            Ok(waypoints)
        }
    }

    fn eqa_waypoint(&self, question: &str) -> Result<String, InterfaceError> {
        let lower = question.to_ascii_lowercase();
        for (category, _) in crate::sim::CATALOG {
            if lower
                .split(|ch: char| !ch.is_ascii_alphanumeric())
                .any(|w| w.eq_ignore_ascii_case(category))
            {
                return Ok(format!("the {category}"));
            }
        }
        Ok(EQA_EXPLORE_SENTINEL.to_string())
    }
}

/// Reasoner fed by pre-queued replies, for scripting exact scenarios in
/// tests. Each call pops the next queued reply; an empty queue returns
/// `Unavailable`.
#[derive(Default)]
pub struct ScriptedReasoner {
    locate: Mutex<VecDeque<Vec<LandmarkCandidate>>>,
    waypoints: Mutex<VecDeque<Vec<String>>>,
    eqa: Mutex<VecDeque<String>>,
}

impl ScriptedReasoner {
    pub fn push_locate(&self, reply: Vec<LandmarkCandidate>) {
        self.locate.lock().unwrap().push_back(reply);
    }

    pub fn push_waypoints(&self, reply: Vec<String>) {
        self.waypoints.lock().unwrap().push_back(reply);
    }

    pub fn push_eqa(&self, reply: impl Into<String>) {
        self.eqa.lock().unwrap().push_back(reply.into());
    }
}

impl Reasoner for ScriptedReasoner {
    fn locate_landmarks(
        &self,
        _goal_text: &str,
        _store: &LandmarkStore,
        _k: usize,
    ) -> Result<Vec<LandmarkCandidate>, InterfaceError> {
        self.locate
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| InterfaceError::Unavailable("locate script exhausted".into()))
    }

    fn decompose_instruction(&self, _instruction: &str) -> Result<Vec<String>, InterfaceError> {
        self.waypoints
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| InterfaceError::Unavailable("waypoint script exhausted".into()))
    }

    fn eqa_waypoint(&self, _question: &str) -> Result<String, InterfaceError> {
        self.eqa
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| InterfaceError::Unavailable("eqa script exhausted".into()))
    }
}
