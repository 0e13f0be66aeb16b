//! Pluggable interfaces for every foundation-model role in the stack, plus
//! the shared observation-side data types they exchange.
//!
//! Each role is a trait. Deterministic mocks (see [`mocks`]) close the loop
//! against the grid-world simulator with no network; HTTP adapters (see
//! [`remote`]) speak to OpenAI-compatible endpoints for real deployments.

pub mod mocks;
pub mod remote;

use crate::cogmap::FeatureVector;
use crate::landmark::LandmarkStore;
use crate::sim::SimObservation;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum InterfaceError {
    /// Transport or upstream failure: the caller may fall back to another
    /// retrieval branch.
    #[error("retrieval unavailable: {0}")]
    Unavailable(String),
    #[error("reply parse failure: {0}")]
    Parse(String),
    /// Non-recoverable failure for the current operation.
    #[error("interface failure: {0}")]
    Fatal(String),
}

/// One detector output: category, bounding-box center, metric depth at that
/// center, and detection confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category: String,
    pub center: (f64, f64),
    pub depth: f64,
    pub confidence: f64,
}

/// Row-major grid of optional patch features. `None` marks patches the
/// encoder produced nothing for (no surface return).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub rows: u32,
    pub cols: u32,
    pub stride: u32,
    patches: Vec<Option<FeatureVector>>,
}

impl PatchGrid {
    pub fn new(rows: u32, cols: u32, stride: u32) -> Self {
        Self {
            rows,
            cols,
            stride,
            patches: vec![None; (rows * cols) as usize],
        }
    }

    pub fn set(&mut self, i: u32, j: u32, f: FeatureVector) {
        let idx = (i * self.cols + j) as usize;
        self.patches[idx] = Some(f);
    }

    pub fn get(&self, i: u32, j: u32) -> Option<&FeatureVector> {
        self.patches.get((i * self.cols + j) as usize).and_then(Option::as_ref)
    }

    /// Iterates present patches as (row, col, feature).
    pub fn iter_present(&self) -> impl Iterator<Item = (u32, u32, &FeatureVector)> {
        self.patches.iter().enumerate().filter_map(move |(idx, p)| {
            p.as_ref().map(|f| {
                let i = idx as u32 / self.cols;
                let j = idx as u32 % self.cols;
                (i, j, f)
            })
        })
    }

    pub fn present_count(&self) -> usize {
        self.patches.iter().filter(|p| p.is_some()).count()
    }
}

/// Dense per-pixel depth in meters; entries ≤ 0 or non-finite are invalid.
#[derive(Debug, Clone)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    data: Vec<f64>,
}

// Bitwise equality so images with invalid (NaN) pixels still compare equal
// to their replays.
impl PartialEq for DepthImage {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl DepthImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![f64::NAN; (width * height) as usize] }
    }

    pub fn set(&mut self, u: u32, v: u32, d: f64) {
        self.data[(v * self.width + u) as usize] = d;
    }

    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        let d = *self.data.get((v * self.width + u) as usize)?;
        (d.is_finite() && d > 0.0).then_some(d)
    }

    /// Depth at the integer pixel nearest (u, v), clamped to the image.
    pub fn sample_nearest(&self, u: f64, v: f64) -> Option<f64> {
        let ui = (u.round().max(0.0) as u32).min(self.width.saturating_sub(1));
        let vi = (v.round().max(0.0) as u32).min(self.height.saturating_sub(1));
        self.get(ui, vi)
    }
}

/// Navigation goal. Category, text-instance, and waypoint goals carry text;
/// image-instance goals carry an image handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub modality: GoalModality,
    pub text: Option<String>,
    pub image: Option<ImageToken>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalModality {
    Category,
    TextInstance,
    ImageInstance,
    Waypoint,
}

impl GoalSpec {
    pub fn category(text: impl Into<String>) -> Self {
        Self { modality: GoalModality::Category, text: Some(text.into()), image: None }
    }

    pub fn text_instance(text: impl Into<String>) -> Self {
        Self { modality: GoalModality::TextInstance, text: Some(text.into()), image: None }
    }

    pub fn image_instance(image: ImageToken) -> Self {
        Self { modality: GoalModality::ImageInstance, text: None, image: Some(image) }
    }

    pub fn waypoint(text: impl Into<String>) -> Self {
        Self { modality: GoalModality::Waypoint, text: Some(text.into()), image: None }
    }

    pub fn validate(&self) -> Result<(), InterfaceError> {
        match self.modality {
            GoalModality::ImageInstance if self.image.is_none() => {
                Err(InterfaceError::Fatal("image goal without image handle".into()))
            }
            GoalModality::Category | GoalModality::TextInstance | GoalModality::Waypoint
                if self.text.as_deref().is_none_or(str::is_empty) =>
            {
                Err(InterfaceError::Fatal("text goal without text".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn display(&self) -> String {
        match (&self.text, &self.image) {
            (Some(t), _) => t.clone(),
            (None, Some(ImageToken::External(p))) => format!("image:{p}"),
            (None, Some(ImageToken::Synthetic(s))) => format!("image:seed-{}", s.feature_seed),
            (None, None) => String::from("<empty goal>"),
        }
    }
}

/// Opaque image currency. Mock imaginers emit synthetic tokens that the mock
/// encoder can decode; remote imaginers return external references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ImageToken {
    External(String),
    Synthetic(SyntheticImage),
}

/// Recipe for a mock-rendered image: the identity feature seed it depicts
/// and the patch layout the encoder should produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticImage {
    pub feature_seed: u64,
    pub rows: u32,
    pub cols: u32,
    pub stride: u32,
    pub variant: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub success: bool,
    pub need_forward: bool,
    pub analysis: String,
}

pub trait ObjectDetector: Send + Sync {
    fn detect(&self, obs: &SimObservation) -> Result<Vec<Detection>, InterfaceError>;
}

pub trait PatchEncoder: Send + Sync {
    /// Patch features for a simulator observation.
    fn encode_observation(&self, obs: &SimObservation) -> Result<PatchGrid, InterfaceError>;
    /// Patch features for a standalone (goal or imagined) image.
    fn encode_image(&self, image: &ImageToken) -> Result<PatchGrid, InterfaceError>;
}

pub trait DescriptionEnricher: Send + Sync {
    /// Association-enhanced expansion of a goal description.
    fn enrich(&self, goal_text: &str) -> Result<String, InterfaceError>;
    /// Short description of a detection, for landmark storage.
    fn describe(&self, obs: &SimObservation, det: &Detection) -> Result<String, InterfaceError>;
}

pub trait ImageImaginer: Send + Sync {
    fn imagine(&self, description: &str, count: usize) -> Result<Vec<ImageToken>, InterfaceError>;
}

pub trait GoalVerifier: Send + Sync {
    fn verify(&self, obs: &SimObservation, goal: &GoalSpec) -> Result<VerifyOutcome, InterfaceError>;
}

pub trait AnswerScorer: Send + Sync {
    /// Judge score on the 1..=5 scale.
    fn score(&self, question: &str, answer: &str, reference: &str) -> Result<u8, InterfaceError>;
}

/// Candidate coordinate returned by landmark-memory reasoning.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkCandidate {
    pub position: [f64; 3],
    pub confidence: f64,
}

pub trait Reasoner: Send + Sync {
    /// Up to k candidate coordinates for a text goal, most likely first.
    fn locate_landmarks(
        &self,
        goal_text: &str,
        store: &LandmarkStore,
        k: usize,
    ) -> Result<Vec<LandmarkCandidate>, InterfaceError>;
    /// Ordered waypoint descriptions for a long-horizon instruction.
    fn decompose_instruction(&self, instruction: &str) -> Result<Vec<String>, InterfaceError>;
    /// Waypoint description for an embodied question, or the go-and-check
    /// sentinel when the question cannot be localized.
    fn eqa_waypoint(&self, question: &str) -> Result<String, InterfaceError>;
}

/// Complete set of role implementations required to build an agent.
#[derive(Clone)]
pub struct InterfaceSet {
    pub detector: Arc<dyn ObjectDetector>,
    pub encoder: Arc<dyn PatchEncoder>,
    pub enricher: Arc<dyn DescriptionEnricher>,
    pub imaginer: Arc<dyn ImageImaginer>,
    pub verifier: Arc<dyn GoalVerifier>,
    pub scorer: Arc<dyn AnswerScorer>,
    pub reasoner: Arc<dyn Reasoner>,
}

/// Sentinel the EQA prompt uses when the question cannot be localized.
pub const EQA_EXPLORE_SENTINEL: &str = "We need to go around and check";
/// Sentinel the landmark-retrieval prompt uses for an empty result.
pub const NAV_LOC_UNABLE: &str = "Unable to find";

/// Prompt templates for every remote role, rendered by `{key}` substitution.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub landmark_retrieval: String,
    pub association_enrichment: String,
    pub goal_verification: String,
    pub instruction_decomposition: String,
    pub eqa_waypoint: String,
    pub detection_description: String,
    pub answer_scoring: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            landmark_retrieval: include_str!("../../assets/prompts/landmark_retrieval.txt").into(),
            association_enrichment: include_str!("../../assets/prompts/association_enrichment.txt").into(),
            goal_verification: include_str!("../../assets/prompts/goal_verification.txt").into(),
            instruction_decomposition: include_str!("../../assets/prompts/instruction_decomposition.txt").into(),
            eqa_waypoint: include_str!("../../assets/prompts/eqa_waypoint.txt").into(),
            detection_description: include_str!("../../assets/prompts/detection_description.txt").into(),
            answer_scoring: include_str!("../../assets/prompts/answer_scoring.txt").into(),
        }
    }
}

impl PromptTemplates {
    /// Loads templates from a directory of .txt files, falling back to the
    /// bundled defaults for any missing file.
    pub fn from_dir(dir: &std::path::Path) -> Self {
        let mut t = Self::default();
        let load = |name: &str, slot: &mut String| {
            if let Ok(text) = std::fs::read_to_string(dir.join(name)) {
                *slot = text;
            }
        };
        load("landmark_retrieval.txt", &mut t.landmark_retrieval);
        load("association_enrichment.txt", &mut t.association_enrichment);
        load("goal_verification.txt", &mut t.goal_verification);
        load("instruction_decomposition.txt", &mut t.instruction_decomposition);
        load("eqa_waypoint.txt", &mut t.eqa_waypoint);
        load("detection_description.txt", &mut t.detection_description);
        load("answer_scoring.txt", &mut t.answer_scoring);
        t
    }
}

/// Substitutes `{key}` placeholders; unknown placeholders are left intact so
/// literal braces in reply-format examples survive.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Parses "{Nav Loc i: [x, y, z]}" lines into coordinates. The unable-to-find
/// sentinel maps to an empty list; malformed lines are skipped.
pub fn parse_nav_locs(reply: &str) -> Vec<[f64; 3]> {
    if reply.contains(NAV_LOC_UNABLE) {
        return Vec::new();
    }
    let re = regex::Regex::new(r"Nav Loc\s*\d*\s*:\s*\[([^\]]*)\]").expect("static regex");
    let mut out = Vec::new();
    for cap in re.captures_iter(reply) {
        let parts: Vec<f64> = cap[1]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .filter_map(|s| s.parse().ok())
            .collect();
        match parts.len() {
            3 => out.push([parts[0], parts[1], parts[2]]),
            2 => out.push([parts[0], parts[1], 0.0]),
            _ => {}
        }
    }
    out
}

/// Parses a labeled yes/no line such as "Success: yes" (case-insensitive).
pub fn parse_yes_no(reply: &str, label: &str) -> Result<bool, InterfaceError> {
    let needle = label.to_ascii_lowercase();
    for line in reply.lines() {
        let line = line.trim().to_ascii_lowercase();
        if let Some(rest) = line.strip_prefix(&needle) {
            let rest = rest.trim_start_matches(':').trim();
            if rest.starts_with("yes") {
                return Ok(true);
            }
            if rest.starts_with("no") {
                return Ok(false);
            }
        }
    }
    Err(InterfaceError::Parse(format!("no '{label}: yes|no' line in reply")))
}

/// Parses "Move to the {waypoint}" lines (braces optional) into waypoint
/// descriptions, in order.
pub fn parse_waypoints(reply: &str) -> Vec<String> {
    let re = regex::Regex::new(r"Move to the\s+\{([^}]*)\}|Move to the\s+([^\n{]+)").expect("static regex");
    let mut out = Vec::new();
    for cap in re.captures_iter(reply) {
        let text = cap.get(1).or_else(|| cap.get(2)).map(|m| m.as_str().trim());
        if let Some(t) = text {
            if !t.is_empty() {
                out.push(t.to_string());
            }
        }
    }
    out
}

/// Extracts the enriched description, stripping the reply-format prefix.
pub fn parse_enrichment(reply: &str) -> Result<String, InterfaceError> {
    for line in reply.lines() {
        let lower = line.trim_start().to_ascii_lowercase();
        if lower.starts_with("enhancement description:") {
            let idx = line.to_ascii_lowercase().find("enhancement description:").unwrap();
            let rest = line[idx + "enhancement description:".len()..].trim();
            if !rest.is_empty() {
                return Ok(rest.to_string());
            }
        }
    }
    let t = reply.trim();
    if t.is_empty() {
        Err(InterfaceError::Parse("empty enrichment reply".into()))
    } else {
        Ok(t.to_string())
    }
}

/// Extracts the first 1..=5 judge score in the reply.
pub fn parse_score(reply: &str) -> Result<u8, InterfaceError> {
    for token in reply.split(|c: char| !c.is_ascii_digit()) {
        if token.is_empty() {
            continue;
        }
        if let Ok(n) = token.parse::<u8>() {
            if (1..=5).contains(&n) {
                return Ok(n);
            }
        }
    }
    Err(InterfaceError::Parse("no 1-5 score in reply".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nav_loc_parsing() {
        let locs = parse_nav_locs("{Nav Loc 1: [1.0, 2.0, 0.5]}\n{Nav Loc 2: [3, 4, 5]}");
        assert_eq!(locs, vec![[1.0, 2.0, 0.5], [3.0, 4.0, 5.0]]);
        assert!(parse_nav_locs("{Nav Loc: Unable to find}").is_empty());
        // Malformed lines are skipped, valid ones retained.
        let locs = parse_nav_locs("Nav Loc 1: [oops]\nNav Loc 2: [1, 2]");
        assert_eq!(locs, vec![[1.0, 2.0, 0.0]]);
    }

    #[test]
    fn yes_no_parsing() {
        assert!(parse_yes_no("Success: yes\nneed forward: no", "Success").unwrap());
        assert!(!parse_yes_no("Success: yes\nneed forward: no", "need forward").unwrap());
        assert!(parse_yes_no("success:YES", "Success").unwrap());
        assert!(parse_yes_no("nothing here", "Success").is_err());
    }

    #[test]
    fn waypoint_parsing() {
        let wps = parse_waypoints("Move to the {wooden stairs}\nMove to the {red sofa}");
        assert_eq!(wps, vec!["wooden stairs", "red sofa"]);
        let wps = parse_waypoints("Move to the kitchen counter");
        assert_eq!(wps, vec!["kitchen counter"]);
        assert!(parse_waypoints("no waypoints at all").is_empty());
    }

    #[test]
    fn enrichment_parsing() {
        let e = parse_enrichment("enhancement description: a plush crimson sofa near a window").unwrap();
        assert_eq!(e, "a plush crimson sofa near a window");
        let e = parse_enrichment("just a bare sentence").unwrap();
        assert_eq!(e, "just a bare sentence");
        assert!(parse_enrichment("   ").is_err());
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score("The answer deserves a 4 out of 5.").unwrap(), 4);
        assert_eq!(parse_score("5").unwrap(), 5);
        assert!(parse_score("nine").is_err());
        assert!(parse_score("score: 9").is_err());
    }

    #[test]
    fn template_rendering_preserves_literal_braces() {
        let t = PromptTemplates::default();
        let rendered = render_template(&t.landmark_retrieval, &[("goal", "sofa"), ("memory", "[]"), ("k", "3")]);
        assert!(rendered.contains("Navigation target: sofa"));
        assert!(rendered.contains("{Nav Loc 1: [x, y, z]}"));
        assert!(!rendered.contains("{goal}"));
    }

    #[test]
    fn depth_image_sampling() {
        let mut d = DepthImage::new(4, 4);
        d.set(2, 1, 3.5);
        assert_eq!(d.sample_nearest(2.2, 0.9), Some(3.5));
        assert_eq!(d.sample_nearest(0.0, 0.0), None);
        d.set(0, 0, -1.0);
        assert_eq!(d.get(0, 0), None);
    }

    #[test]
    fn goal_validation() {
        assert!(GoalSpec::category("sofa").validate().is_ok());
        let bad = GoalSpec { modality: GoalModality::Category, text: None, image: None };
        assert!(bad.validate().is_err());
        let bad = GoalSpec { modality: GoalModality::ImageInstance, text: None, image: None };
        assert!(bad.validate().is_err());
    }
}
