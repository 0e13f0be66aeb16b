//! Landmark memory: salient object instances stored as (category, position,
//! confidence, description) tuples with spatial-overlap fusion.
//!
//! Inserting a detection whose category matches an existing landmark within
//! the overlap distance fuses the two instead of storing a duplicate. Fusion
//! cascades until no same-category pair sits within the overlap distance.

use crate::geometry::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed landmark file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported landmark file version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub category: String,
    pub position: Point3,
    pub confidence: f64,
    pub description: String,
}

impl Landmark {
    pub fn new(category: impl Into<String>, position: Point3, confidence: f64, description: impl Into<String>) -> Self {
        Self {
            category: category.into(),
            position,
            confidence: confidence.clamp(0.0, 1.0),
            description: description.into(),
        }
    }
}

fn dist3(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn same_category(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

/// Counters for insert outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkStats {
    pub inserted: u64,
    pub fused: u64,
    pub below_floor: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkStore {
    landmarks: Vec<Landmark>,
    pub overlap_distance: f64,
    pub confidence_floor: f64,
    stats: LandmarkStats,
}

impl Default for LandmarkStore {
    fn default() -> Self {
        Self::new(1.0, 0.55)
    }
}

/// Fuses a new landmark with its non-empty spatial overlap set: the position
/// is the confidence-weighted mean, the confidence is the arithmetic mean,
/// and the description comes from the most confident member (the newer one
/// on ties).
pub fn fuse(new: &Landmark, overlaps: &[Landmark]) -> Landmark {
    assert!(!overlaps.is_empty(), "fuse requires a non-empty overlap set");
    // `new` is last so that on equal max confidence the newer description wins.
    let members = overlaps.iter().chain(std::iter::once(new));
    let mut weight_sum = 0.0;
    let mut conf_sum = 0.0;
    let mut pos = [0.0; 3];
    let mut best: Option<&Landmark> = None;
    let mut n = 0usize;
    for m in members {
        weight_sum += m.confidence;
        conf_sum += m.confidence;
        for (p, q) in pos.iter_mut().zip(m.position) {
            *p += m.confidence * q;
        }
        if best.is_none_or(|b| m.confidence >= b.confidence) {
            best = Some(m);
        }
        n += 1;
    }
    let position = if weight_sum > 0.0 {
        pos.map(|p| p / weight_sum)
    } else {
        // All-zero confidences cannot pass the insert floor, but keep fuse
        // total: fall back to the unweighted mean.
        let inv = 1.0 / n as f64;
        let mut acc = [0.0; 3];
        for m in overlaps.iter().chain(std::iter::once(new)) {
            for (a, q) in acc.iter_mut().zip(m.position) {
                *a += q;
            }
        }
        acc.map(|a| a * inv)
    };
    Landmark {
        category: new.category.clone(),
        position,
        confidence: conf_sum / n as f64,
        description: best.expect("non-empty").description.clone(),
    }
}

impl LandmarkStore {
    pub fn new(overlap_distance: f64, confidence_floor: f64) -> Self {
        Self {
            landmarks: Vec::new(),
            overlap_distance,
            confidence_floor,
            stats: LandmarkStats::default(),
        }
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn stats(&self) -> LandmarkStats {
        self.stats
    }

    /// Inserts a detection, fusing it with any same-category landmarks within
    /// the overlap distance. Detections below the confidence floor are
    /// dropped silently (counted in stats).
    pub fn insert(&mut self, new: Landmark) {
        if new.confidence < self.confidence_floor {
            self.stats.below_floor += 1;
            return;
        }
        let mut current = new;
        loop {
            let overlap_idx: Vec<usize> = self
                .landmarks
                .iter()
                .enumerate()
                .filter(|(_, l)| {
                    same_category(&l.category, &current.category)
                        && dist3(&l.position, &current.position) <= self.overlap_distance
                })
                .map(|(i, _)| i)
                .collect();
            if overlap_idx.is_empty() {
                self.landmarks.push(current);
                self.stats.inserted += 1;
                return;
            }
            let overlaps: Vec<Landmark> = overlap_idx.iter().map(|&i| self.landmarks[i].clone()).collect();
            for &i in overlap_idx.iter().rev() {
                self.landmarks.remove(i);
            }
            self.stats.fused += 1;
            // The fused centroid may have moved into range of another member
            // of the same category; repeat until the store invariant holds.
            current = fuse(&current, &overlaps);
        }
    }

    /// All landmarks of the given category (case-insensitive), sorted by
    /// confidence descending; ties keep insertion order.
    pub fn query_category(&self, category: &str) -> Vec<Landmark> {
        let mut hits: Vec<&Landmark> = self
            .landmarks
            .iter()
            .filter(|l| same_category(&l.category, category))
            .collect();
        hits.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap_or(std::cmp::Ordering::Equal));
        hits.into_iter().cloned().collect()
    }

    pub fn to_json(&self) -> String {
        let doc = LandmarkFile {
            version: FILE_VERSION,
            overlap_distance: self.overlap_distance,
            confidence_floor: self.confidence_floor,
            landmarks: self.landmarks.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("landmark store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LandmarkError> {
        let doc: LandmarkFile = serde_json::from_str(text)?;
        if doc.version != FILE_VERSION {
            return Err(LandmarkError::Version(doc.version));
        }
        let mut store = LandmarkStore::new(doc.overlap_distance, doc.confidence_floor);
        store.landmarks = doc.landmarks;
        Ok(store)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), LandmarkError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LandmarkError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

const FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LandmarkFile {
    version: u32,
    overlap_distance: f64,
    confidence_floor: f64,
    landmarks: Vec<Landmark>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(cat: &str, pos: Point3, conf: f64, desc: &str) -> Landmark {
        Landmark::new(cat, pos, conf, desc)
    }

    #[test]
    fn fuse_weighted_mean() {
        let new = lm("sofa", [1.0, 0.0, 0.0], 0.8, "new sofa");
        let old = lm("sofa", [0.0, 0.0, 0.0], 0.6, "old sofa");
        let f = fuse(&new, &[old]);
        assert!((f.position[0] - 0.8 / 1.4).abs() < 1e-12);
        assert_eq!(f.position[1], 0.0);
        assert!((f.confidence - 0.7).abs() < 1e-12);
        assert_eq!(f.description, "new sofa");
    }

    #[test]
    fn fuse_self_is_identity() {
        let l = lm("lamp", [2.0, -1.0, 0.5], 0.9, "tall lamp");
        let f = fuse(&l, &[l.clone()]);
        for (a, b) in f.position.iter().zip(l.position) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((f.confidence - l.confidence).abs() < 1e-12);
    }

    #[test]
    fn fuse_equal_confidence_midpoint() {
        let a = lm("chair", [0.0, 0.0, 0.0], 0.5, "first");
        let b = lm("chair", [2.0, 0.0, 0.0], 0.5, "second");
        let f = fuse(&b, &[a]);
        assert!((f.position[0] - 1.0).abs() < 1e-12);
        assert!((f.confidence - 0.5).abs() < 1e-12);
        // Equal max confidence keeps the newer description.
        assert_eq!(f.description, "second");
    }

    #[test]
    #[should_panic(expected = "non-empty overlap set")]
    fn fuse_empty_overlaps_panics() {
        fuse(&lm("sofa", [0.0; 3], 0.8, ""), &[]);
    }

    #[test]
    fn insert_beyond_overlap_keeps_both() {
        let mut s = LandmarkStore::default();
        s.insert(lm("sofa", [0.0, 0.0, 0.0], 0.8, "a"));
        s.insert(lm("sofa", [1.5, 0.0, 0.0], 0.7, "b"));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn insert_category_mismatch_keeps_both() {
        let mut s = LandmarkStore::default();
        s.insert(lm("sofa", [0.0, 0.0, 0.0], 0.8, "a"));
        s.insert(lm("table", [0.0, 0.0, 0.0], 0.7, "b"));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn insert_overlap_fuses() {
        let mut s = LandmarkStore::default();
        s.insert(lm("sofa", [0.0, 0.0, 0.0], 0.6, "a"));
        s.insert(lm("sofa", [0.5, 0.0, 0.0], 0.8, "b"));
        assert_eq!(s.len(), 1);
        let f = &s.landmarks()[0];
        assert!((f.confidence - 0.7).abs() < 1e-12);
        assert!((f.position[0] - 0.8 * 0.5 / 1.4).abs() < 1e-12);
        assert_eq!(f.description, "b");
    }

    #[test]
    fn insert_below_floor_is_noop() {
        let mut s = LandmarkStore::default();
        s.insert(lm("sofa", [0.0; 3], 0.5, "weak"));
        assert!(s.is_empty());
        assert_eq!(s.stats().below_floor, 1);
    }

    #[test]
    fn cascaded_fusion_restores_invariant() {
        let mut s = LandmarkStore::default();
        // Two sofas 1.8 m apart, then one in between that overlaps both.
        s.insert(lm("sofa", [0.0, 0.0, 0.0], 0.9, "left"));
        s.insert(lm("sofa", [1.8, 0.0, 0.0], 0.9, "right"));
        assert_eq!(s.len(), 2);
        s.insert(lm("sofa", [0.9, 0.0, 0.0], 0.9, "middle"));
        assert_eq!(s.len(), 1);
        for (i, a) in s.landmarks().iter().enumerate() {
            for b in &s.landmarks()[i + 1..] {
                if same_category(&a.category, &b.category) {
                    assert!(dist3(&a.position, &b.position) > s.overlap_distance);
                }
            }
        }
    }

    #[test]
    fn query_category_sorted_and_stable() {
        let mut s = LandmarkStore::default();
        s.insert(lm("sofa", [0.0, 0.0, 0.0], 0.7, "a"));
        s.insert(lm("sofa", [3.0, 0.0, 0.0], 0.9, "b"));
        s.insert(lm("Sofa", [6.0, 0.0, 0.0], 0.7, "c"));
        s.insert(lm("table", [9.0, 0.0, 0.0], 0.8, "d"));
        let hits = s.query_category("sofa");
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].description, "b");
        assert_eq!(hits[1].description, "a");
        assert_eq!(hits[2].description, "c");
        assert!(s.query_category("plant").is_empty());
    }

    #[test]
    fn json_round_trip() {
        let mut s = LandmarkStore::default();
        s.insert(lm("sofa", [1.25, -0.5, 0.4], 0.875, "green sofa"));
        s.insert(lm("table", [0.0, 2.0, 0.7], 0.6, "round table"));
        let text = s.to_json();
        let loaded = LandmarkStore::from_json(&text).unwrap();
        assert_eq!(loaded.landmarks(), s.landmarks());
        assert_eq!(loaded.overlap_distance, s.overlap_distance);
    }

    #[test]
    fn json_version_gate() {
        let text = r#"{"version": 2, "overlap_distance": 1.0, "confidence_floor": 0.55, "landmarks": []}"#;
        assert!(matches!(LandmarkStore::from_json(text), Err(LandmarkError::Version(2))));
    }
}
