//! Sparse voxelized visual memory with surprise-gated buffer updates.
//!
//! Each populated voxel holds a bounded buffer of patch features. A new
//! feature is admitted only when its surprise score (mean cosine distance to
//! everything buffered in the surrounding voxel cube) exceeds a threshold,
//! which keeps the map small and duplicate-free. Retrieval scans all voxels
//! for the best cosine match and clusters the hits into candidate regions.

use crate::geometry::{
    camera_to_world, patch_center, pixel_to_camera, pose_to_world_transform, voxel_to_world,
    world_to_voxel, AgentPose, CameraIntrinsics, GridParams, RigidTransform, VoxelIndex,
};
use crate::perception::{DepthImage, PatchGrid};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("feature entries must be finite with non-zero norm")]
    InvalidFeature,
    #[error("feature dimension {got} does not match map dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed map file: {0}")]
    Format(String),
}

/// Dense feature vector of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self, MapError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(MapError::InvalidFeature);
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(MapError::InvalidFeature);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt()
    }
}

/// Cosine similarity, accumulated in f64.
pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.0.iter().zip(&b.0) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Cosine distance clamped to [0, 1].
pub fn cosine_distance(a: &FeatureVector, b: &FeatureVector) -> f64 {
    (1.0 - cosine_similarity(a, b)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferedFeature {
    pub feature: FeatureVector,
    pub surprise_at_insert: f32,
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelMatch {
    pub voxel: VoxelIndex,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrateStats {
    pub inserted: u64,
    pub rejected: u64,
    pub evicted: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InsertOutcome {
    Inserted { surprise: f64, evicted: bool },
    Rejected { surprise: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CognitiveMap {
    pub grid: GridParams,
    pub buffer_capacity: usize,
    pub tau: f64,
    pub hop: i64,
    dim: usize,
    cells: BTreeMap<VoxelIndex, Vec<BufferedFeature>>,
    tick_counter: u64,
}

pub const DEFAULT_BUFFER_CAPACITY: usize = 10;
pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_HOP: i64 = 1;

impl CognitiveMap {
    pub fn new(grid: GridParams, dim: usize) -> Self {
        Self::with_params(grid, dim, DEFAULT_BUFFER_CAPACITY, DEFAULT_TAU, DEFAULT_HOP)
    }

    pub fn with_params(grid: GridParams, dim: usize, buffer_capacity: usize, tau: f64, hop: i64) -> Self {
        assert!(buffer_capacity >= 1, "buffer capacity must be at least 1");
        assert!(hop >= 0, "neighborhood hop must be non-negative");
        Self {
            grid,
            buffer_capacity,
            tau,
            hop,
            dim,
            cells: BTreeMap::new(),
            tick_counter: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn feature_count(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, v: &VoxelIndex) -> Option<&[BufferedFeature]> {
        self.cells.get(v).map(Vec::as_slice)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&VoxelIndex, &Vec<BufferedFeature>)> {
        self.cells.iter()
    }

    /// Mean cosine distance between `f` and every feature buffered within the
    /// hop-n cube around `v`. An empty neighborhood scores 1.0 so the first
    /// feature in a region always passes the gate.
    pub fn surprise(&self, f: &FeatureVector, v: &VoxelIndex) -> f64 {
        let mut sum = 0.0;
        let mut n = 0u64;
        for dx in -self.hop..=self.hop {
            for dy in -self.hop..=self.hop {
                for dz in -self.hop..=self.hop {
                    let nb = VoxelIndex::new(v.vx + dx, v.vy + dy, v.vz + dz);
                    if let Some(buf) = self.cells.get(&nb) {
                        for bf in buf {
                            sum += cosine_distance(f, &bf.feature);
                            n += 1;
                        }
                    }
                }
            }
        }
        if n == 0 {
            1.0
        } else {
            sum / n as f64
        }
    }

    /// Gated insert of one feature at one voxel. Inserts iff surprise > tau
    /// (strict); when the target buffer is full, the entry with the lowest
    /// stored surprise (oldest on ties) is evicted first.
    pub fn insert_feature(&mut self, f: FeatureVector, v: VoxelIndex) -> InsertOutcome {
        assert_eq!(f.dim(), self.dim, "feature dimension must match the map");
        let s = self.surprise(&f, &v);
        if s <= self.tau {
            return InsertOutcome::Rejected { surprise: s };
        }
        let buf = self.cells.entry(v).or_default();
        let mut evicted = false;
        if buf.len() >= self.buffer_capacity {
            let victim = buf
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (a.surprise_at_insert, a.tick)
                        .partial_cmp(&(b.surprise_at_insert, b.tick))
                        .expect("surprise values are finite")
                })
                .map(|(i, _)| i)
                .expect("full buffer is non-empty");
            buf.remove(victim);
            evicted = true;
        }
        buf.push(BufferedFeature {
            feature: f,
            surprise_at_insert: s as f32,
            tick: self.tick_counter,
        });
        self.tick_counter += 1;
        InsertOutcome::Inserted { surprise: s, evicted }
    }

    /// Projects every patch of an observation into the grid and runs the
    /// gated insert. Invalid depths and out-of-grid projections are skipped
    /// and counted, never fatal.
    pub fn integrate(
        &mut self,
        patches: &PatchGrid,
        depth: &DepthImage,
        pose: &AgentPose,
        k: &CameraIntrinsics,
        t_base_cam: &RigidTransform,
    ) -> IntegrateStats {
        let t_world_base = pose_to_world_transform(pose, 0.0);
        let mut stats = IntegrateStats::default();
        for i in 0..patches.rows {
            for j in 0..patches.cols {
                let Some(f) = patches.get(i, j) else {
                    stats.rejected += 1;
                    continue;
                };
                let (u, v) = patch_center(i, j, patches.stride);
                let Some(d) = depth.sample_nearest(u, v) else {
                    stats.rejected += 1;
                    continue;
                };
                let Ok(p_cam) = pixel_to_camera(u, v, d, k) else {
                    stats.rejected += 1;
                    continue;
                };
                let p_world = camera_to_world(p_cam, t_base_cam, &t_world_base);
                let Ok(voxel) = world_to_voxel(p_world, &self.grid) else {
                    stats.rejected += 1;
                    continue;
                };
                match self.insert_feature(f.clone(), voxel) {
                    InsertOutcome::Inserted { evicted, .. } => {
                        stats.inserted += 1;
                        if evicted {
                            stats.evicted += 1;
                        }
                    }
                    InsertOutcome::Rejected { .. } => stats.rejected += 1,
                }
            }
        }
        stats
    }

    /// Up to k voxels scored by the best cosine match in each buffer, sorted
    /// by similarity descending with lexicographic voxel-index tie-break.
    /// Exhaustive scan; exactly equals the brute-force oracle by contract.
    pub fn query_topk(&self, q: &FeatureVector, k: usize) -> Vec<VoxelMatch> {
        assert!(k >= 1, "k must be at least 1");
        let mut matches: Vec<VoxelMatch> = self
            .cells
            .iter()
            .filter(|(_, buf)| !buf.is_empty())
            .map(|(v, buf)| {
                let best = buf
                    .iter()
                    .map(|bf| cosine_similarity(q, &bf.feature))
                    .fold(f64::NEG_INFINITY, f64::max);
                VoxelMatch { voxel: *v, similarity: best }
            })
            .collect();
        matches.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .expect("similarities are finite")
                .then_with(|| a.voxel.cmp(&b.voxel))
        });
        matches.truncate(k);
        matches
    }
}

/// DBSCAN over voxel coordinates with the Chebyshev metric. Each cluster is
/// reduced to the similarity-weighted centroid of its member voxel centers;
/// the cluster score is the max member similarity. Output sorted by score
/// descending. Weights only shape the centroid, not core-point density.
pub fn cluster_matches(
    matches: &[VoxelMatch],
    eps: i64,
    min_pts: usize,
    gp: &GridParams,
) -> Vec<([f64; 3], f64)> {
    assert!(eps > 0, "eps must be positive");
    let n = matches.len();
    if n == 0 {
        return Vec::new();
    }
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| matches[i].voxel.chebyshev(&matches[j].voxel) <= eps)
                .collect()
        })
        .collect();
    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let mut label = vec![UNVISITED; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if label[i] != UNVISITED {
            continue;
        }
        if neighbors[i].len() < min_pts {
            label[i] = NOISE;
            continue;
        }
        let cid = clusters.len();
        label[i] = cid;
        let mut members = vec![i];
        let mut queue: Vec<usize> = neighbors[i].clone();
        let mut qi = 0;
        while qi < queue.len() {
            let j = queue[qi];
            qi += 1;
            if label[j] == NOISE {
                label[j] = cid;
                members.push(j);
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = cid;
            members.push(j);
            if neighbors[j].len() >= min_pts {
                queue.extend(neighbors[j].iter().copied());
            }
        }
        clusters.push(members);
    }
    let mut out: Vec<([f64; 3], f64)> = clusters
        .iter()
        .map(|members| {
            let mut wsum = 0.0;
            let mut acc = [0.0f64; 3];
            let mut score = f64::NEG_INFINITY;
            for &idx in members {
                let m = &matches[idx];
                let c = voxel_to_world(&m.voxel, gp).unwrap_or_else(|_| {
                    // Out-of-grid matches cannot come from a valid map; keep
                    // the raw center formula for robustness.
                    let half = gp.g as f64 / 2.0;
                    [
                        (m.voxel.vx as f64 - half + 0.5) * gp.delta,
                        (m.voxel.vy as f64 - half + 0.5) * gp.delta,
                        (m.voxel.vz as f64 + 0.5) * gp.delta,
                    ]
                });
                let w = m.similarity.max(0.0);
                wsum += w;
                for (a, x) in acc.iter_mut().zip(c) {
                    *a += w * x;
                }
                score = score.max(m.similarity);
            }
            let centroid = if wsum > 0.0 {
                acc.map(|a| a / wsum)
            } else {
                let inv = 1.0 / members.len() as f64;
                let mut mean = [0.0f64; 3];
                for &idx in members {
                    let c = voxel_to_world(&matches[idx].voxel, gp).unwrap_or([0.0; 3]);
                    for (m, x) in mean.iter_mut().zip(c) {
                        *m += x;
                    }
                }
                mean.map(|m| m * inv)
            };
            (centroid, score)
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("scores are finite"));
    out
}

const MAGIC: &[u8; 4] = b"BSCM";
const FILE_VERSION: u32 = 1;

impl CognitiveMap {
    /// Serializes the map into the binary container format (little-endian).
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), MapError> {
        w.write_all(MAGIC)?;
        w.write_all(&FILE_VERSION.to_le_bytes())?;
        w.write_all(&self.grid.delta.to_le_bytes())?;
        w.write_all(&self.grid.g.to_le_bytes())?;
        w.write_all(&(self.buffer_capacity as u32).to_le_bytes())?;
        w.write_all(&self.tau.to_le_bytes())?;
        w.write_all(&(self.hop as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.tick_counter.to_le_bytes())?;
        w.write_all(&(self.cells.len() as u64).to_le_bytes())?;
        for (v, buf) in &self.cells {
            for c in [v.vx, v.vy, v.vz] {
                w.write_all(&(c as u32).to_le_bytes())?;
            }
            w.write_all(&(buf.len() as u32).to_le_bytes())?;
            for bf in buf {
                for x in bf.feature.values() {
                    w.write_all(&x.to_le_bytes())?;
                }
                w.write_all(&bf.surprise_at_insert.to_le_bytes())?;
                w.write_all(&bf.tick.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, MapError> {
        fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], MapError> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)?;
            Ok(buf)
        }
        let magic: [u8; 4] = read_exact(r)?;
        if &magic != MAGIC {
            return Err(MapError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(read_exact(r)?);
        if version != FILE_VERSION {
            return Err(MapError::Format(format!("unsupported version {version}")));
        }
        let delta = f64::from_le_bytes(read_exact(r)?);
        let g = u32::from_le_bytes(read_exact(r)?);
        let grid = GridParams::new(delta, g).map_err(|e| MapError::Format(e.to_string()))?;
        let capacity = u32::from_le_bytes(read_exact(r)?) as usize;
        let tau = f64::from_le_bytes(read_exact(r)?);
        let hop = u32::from_le_bytes(read_exact(r)?) as i64;
        let dim = u32::from_le_bytes(read_exact(r)?) as usize;
        let tick_counter = u64::from_le_bytes(read_exact(r)?);
        let cell_count = u64::from_le_bytes(read_exact(r)?);
        let mut map = CognitiveMap::with_params(grid, dim, capacity.max(1), tau, hop);
        map.tick_counter = tick_counter;
        for _ in 0..cell_count {
            let vx = u32::from_le_bytes(read_exact(r)?) as i64;
            let vy = u32::from_le_bytes(read_exact(r)?) as i64;
            let vz = u32::from_le_bytes(read_exact(r)?) as i64;
            let count = u32::from_le_bytes(read_exact(r)?) as usize;
            if count > capacity {
                return Err(MapError::Format(format!("cell over capacity: {count}")));
            }
            let mut buf = Vec::with_capacity(count);
            for _ in 0..count {
                let mut values = vec![0f32; dim];
                for x in values.iter_mut() {
                    *x = f32::from_le_bytes(read_exact(r)?);
                }
                let feature = FeatureVector::new(values).map_err(|e| MapError::Format(e.to_string()))?;
                let surprise_at_insert = f32::from_le_bytes(read_exact(r)?);
                let tick = u64::from_le_bytes(read_exact(r)?);
                buf.push(BufferedFeature { feature, surprise_at_insert, tick });
            }
            map.cells.insert(VoxelIndex::new(vx, vy, vz), buf);
        }
        Ok(map)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), MapError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        use std::io::Write as _;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, MapError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    /// Debug export of per-voxel occupancy.
    pub fn occupancy_csv(&self) -> String {
        let mut out = String::from("vx,vy,vz,count,max_tick\n");
        for (v, buf) in &self.cells {
            let max_tick = buf.iter().map(|b| b.tick).max().unwrap_or(0);
            out.push_str(&format!("{},{},{},{},{}\n", v.vx, v.vy, v.vz, buf.len(), max_tick));
        }
        out
    }
}
