//! Task-triggered retrieval: the landmark branch asks a reasoner to read the
//! landmark store, the cognitive-map branch imagines the goal and matches it
//! against stored patch features, and a composite priority ranks the merged
//! candidates by existence probability and travel distance.

use crate::cogmap::{cluster_matches, CognitiveMap, FeatureVector, VoxelMatch};
use crate::geometry::{AgentPose, Point3};
use crate::landmark::LandmarkStore;
use crate::perception::{
    DescriptionEnricher, GoalModality, GoalSpec, ImageImaginer, InterfaceError, PatchEncoder,
    PatchGrid, Reasoner,
};

/// Maximum candidates from the landmark branch (K).
pub const DEFAULT_LANDMARK_K: usize = 3;
/// Maximum candidates from the cognitive-map branch (Q).
pub const DEFAULT_COGNITIVE_Q: usize = 3;
/// Priority mixing weight between existence probability and proximity.
pub const DEFAULT_LAMBDA: f64 = 0.5;
/// Pooling temperature per pixel of center distance.
pub const DEFAULT_POOL_ALPHA: f64 = 0.01;
/// Candidates closer than this merge before ranking, meters.
pub const DEDUP_RADIUS_M: f64 = 0.5;
/// Voxel matches retrieved per imagined image before clustering.
pub const MAP_QUERY_TOPK: usize = 10;
/// DBSCAN radius for grouping voxel matches, in voxels (Chebyshev).
pub const CLUSTER_EPS_VOXELS: i64 = 3;
/// DBSCAN density floor; 1 keeps every match in some cluster.
pub const CLUSTER_MIN_PTS: usize = 1;
/// Imagined images rendered per text goal.
pub const IMAGINED_BATCH: usize = 3;

/// Which retrieval branch produced a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateSource {
    Landmark,
    CognitiveMap,
}

/// A possible goal location with its existence probability and, once ranked,
/// its distance from the start and composite priority.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGoal {
    pub position: Point3,
    /// Existence probability p ∈ [0,1]: detection confidence for landmark
    /// candidates, clamped cluster similarity for cognitive-map candidates.
    pub p: f64,
    /// Euclidean ground-plane distance from the ranking start pose, meters.
    pub d: f64,
    /// λ·p + (1−λ)·(1 − d/d_max); zero until ranked.
    pub priority: f64,
    pub source: CandidateSource,
}

impl CandidateGoal {
    pub fn new(position: Point3, p: f64, source: CandidateSource) -> Self {
        Self { position, p: p.clamp(0.0, 1.0), d: 0.0, priority: 0.0, source }
    }
}

/// Asks the reasoner to read the landmark store for locations matching the
/// goal text. Transport failure surfaces as an error so the caller can fall
/// back to the cognitive-map branch; an unable-to-find reply is an empty list.
pub fn retrieve_landmark_candidates(
    goal: &GoalSpec,
    store: &LandmarkStore,
    reasoner: &dyn Reasoner,
    k: usize,
) -> Result<Vec<CandidateGoal>, InterfaceError> {
    let text = goal.text.as_deref().expect("landmark retrieval needs a text goal");
    let located = reasoner.locate_landmarks(text, store, k)?;
    Ok(located
        .into_iter()
        .take(k)
        .map(|c| CandidateGoal::new(c.position, c.confidence, CandidateSource::Landmark))
        .collect())
}

/// Center-distance weighted pooling of patch features: w_i = exp(−α·‖x_i − c‖).
///
/// # Panics
/// On an empty patch list (contract violation).
pub fn pool_patch_features(
    patches: &[(&FeatureVector, (f64, f64))],
    center: (f64, f64),
    alpha: f64,
) -> FeatureVector {
    assert!(!patches.is_empty(), "pooling needs at least one patch");
    let dim = patches[0].0.dim();
    let mut acc = vec![0.0f64; dim];
    let mut wsum = 0.0f64;
    for (f, (px, py)) in patches {
        assert_eq!(f.dim(), dim, "pooled features must share a dimension");
        let dist = ((px - center.0).powi(2) + (py - center.1).powi(2)).sqrt();
        let w = (-alpha * dist).exp();
        wsum += w;
        for (a, v) in acc.iter_mut().zip(f.values()) {
            *a += w * *v as f64;
        }
    }
    let pooled: Vec<f32> = acc.into_iter().map(|a| (a / wsum) as f32).collect();
    FeatureVector::new(pooled).expect("pooled feature must stay finite and non-zero")
}

/// Pools every present patch of a grid against the image center in pixels.
fn pool_grid(grid: &PatchGrid, alpha: f64) -> Option<FeatureVector> {
    let stride = grid.stride as f64;
    let patches: Vec<(&FeatureVector, (f64, f64))> = grid
        .iter_present()
        .map(|(i, j, f)| (f, (j as f64 * stride + stride / 2.0, i as f64 * stride + stride / 2.0)))
        .collect();
    if patches.is_empty() {
        return None;
    }
    let center = (grid.cols as f64 * stride / 2.0, grid.rows as f64 * stride / 2.0);
    Some(pool_patch_features(&patches, center, alpha))
}

/// Imagine-then-localize retrieval against the cognitive map. Text goals are
/// enriched and rendered to a small batch of imagined images; image goals are
/// encoded directly. Matches from all images are pooled into one clustering
/// pass, and the top-q cluster centers become candidates scored by their best
/// member similarity.
pub fn retrieve_cognitive_candidates(
    goal: &GoalSpec,
    map: &CognitiveMap,
    enricher: &dyn DescriptionEnricher,
    imaginer: &dyn ImageImaginer,
    encoder: &dyn PatchEncoder,
    q: usize,
) -> Result<Vec<CandidateGoal>, InterfaceError> {
    retrieve_cognitive_candidates_with(
        goal,
        map,
        enricher,
        imaginer,
        encoder,
        q,
        DEFAULT_POOL_ALPHA,
        CLUSTER_EPS_VOXELS,
        CLUSTER_MIN_PTS,
    )
}

/// [`retrieve_cognitive_candidates`] with explicit pooling temperature and
/// clustering parameters, for configured agents.
#[allow(clippy::too_many_arguments)]
pub fn retrieve_cognitive_candidates_with(
    goal: &GoalSpec,
    map: &CognitiveMap,
    enricher: &dyn DescriptionEnricher,
    imaginer: &dyn ImageImaginer,
    encoder: &dyn PatchEncoder,
    q: usize,
    alpha: f64,
    cluster_eps: i64,
    cluster_min_pts: usize,
) -> Result<Vec<CandidateGoal>, InterfaceError> {
    if map.is_empty() {
        return Ok(Vec::new());
    }
    let images = match goal.modality {
        GoalModality::ImageInstance => {
            vec![goal.image.clone().expect("image goal carries an image")]
        }
        _ => {
            let text = goal.text.as_deref().expect("text goal carries text");
            let enriched = enricher.enrich(text)?;
            imaginer.imagine(&enriched, IMAGINED_BATCH)?
        }
    };
    let mut union: Vec<VoxelMatch> = Vec::new();
    for image in &images {
        let grid = encoder.encode_image(image)?;
        let Some(pooled) = pool_grid(&grid, alpha) else { continue };
        union.extend(map.query_topk(&pooled, MAP_QUERY_TOPK));
    }
    let clusters = cluster_matches(&union, cluster_eps, cluster_min_pts, &map.grid);
    Ok(clusters
        .into_iter()
        .take(q)
        .map(|(center, score)| CandidateGoal::new(center, score, CandidateSource::CognitiveMap))
        .collect())
}

fn dist2d(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Greedy spatial merge in input order: a candidate within `DEDUP_RADIUS_M`
/// of an already-kept one folds into it, keeping the maximum existence
/// probability. The survivors are pairwise separated by more than the radius.
pub fn dedup_candidates(cands: Vec<CandidateGoal>) -> Vec<CandidateGoal> {
    let mut kept: Vec<CandidateGoal> = Vec::with_capacity(cands.len());
    for c in cands {
        match kept.iter_mut().find(|k| dist2d(k.position, c.position) <= DEDUP_RADIUS_M) {
            Some(k) => k.p = k.p.max(c.p),
            None => kept.push(c),
        }
    }
    kept
}

/// Composite priority ranking: dedups, computes each candidate's ground-plane
/// distance from `start`, and sorts by H = λ·p + (1−λ)·(1 − d/d_max)
/// descending. Ties break toward the smaller distance, then landmark
/// candidates before cognitive-map ones, then input order. When every
/// candidate sits at the start (d_max = 0) the distance term is 1 for all and
/// the ranking falls back to p.
pub fn rank_candidates(cands: Vec<CandidateGoal>, start: &AgentPose, lambda: f64) -> Vec<CandidateGoal> {
    assert!((0.0..=1.0).contains(&lambda), "lambda must be in [0,1]");
    let mut cands = dedup_candidates(cands);
    let origin = [start.x, start.y, 0.0];
    for c in &mut cands {
        c.d = dist2d(c.position, origin);
    }
    let d_max = cands.iter().map(|c| c.d).fold(0.0f64, f64::max);
    for c in &mut cands {
        let proximity = if d_max > 0.0 { 1.0 - c.d / d_max } else { 1.0 };
        c.priority = lambda * c.p + (1.0 - lambda) * proximity;
    }
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&cands[i], &cands[j]);
        b.priority
            .total_cmp(&a.priority)
            .then(a.d.total_cmp(&b.d))
            .then_with(|| {
                let rank = |s: CandidateSource| match s {
                    CandidateSource::Landmark => 0,
                    CandidateSource::CognitiveMap => 1,
                };
                rank(a.source).cmp(&rank(b.source))
            })
            .then(i.cmp(&j))
    });
    order.into_iter().map(|i| cands[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cogmap::cosine_similarity;
    use crate::geometry::{voxel_to_world, GridParams, VoxelIndex};
    use crate::landmark::Landmark;
    use crate::perception::mocks::{
        mock_interfaces, MockEncoder, MockImaginer, ScriptedReasoner, StoreReasoner,
    };
    use crate::perception::{ImageToken, SyntheticImage};
    use crate::sim::{identity_feature, Instance, Scene, SimConfig, DEFAULT_FEATURE_DIM};
    use rand::Rng as _;
    use rand::SeedableRng as _;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn feature(values: Vec<f32>) -> FeatureVector {
        FeatureVector::new(values).unwrap()
    }

    fn cand(x: f64, y: f64, p: f64, source: CandidateSource) -> CandidateGoal {
        CandidateGoal::new([x, y, 0.5], p, source)
    }

    #[test]
    fn landmark_branch_sorts_by_confidence_and_truncates() {
        let mut store = LandmarkStore::default();
        store.insert(Landmark::new("sofa", [0.0, 0.0, 0.5], 0.9, "a red sofa"));
        store.insert(Landmark::new("sofa", [5.0, 0.0, 0.5], 0.7, "a blue sofa"));
        store.insert(Landmark::new("sofa", [0.0, 5.0, 0.5], 0.6, "a green sofa"));
        store.insert(Landmark::new("sofa", [5.0, 5.0, 0.5], 0.58, "a grey sofa"));
        let goal = GoalSpec::category("sofa");
        let got =
            retrieve_landmark_candidates(&goal, &store, &StoreReasoner, DEFAULT_LANDMARK_K).unwrap();
        let ps: Vec<f64> = got.iter().map(|c| c.p).collect();
        assert_eq!(ps, vec![0.9, 0.7, 0.6]);
        assert!(got.iter().all(|c| c.source == CandidateSource::Landmark));
    }

    #[test]
    fn landmark_branch_absent_category_is_empty() {
        let mut store = LandmarkStore::default();
        store.insert(Landmark::new("lamp", [0.0, 0.0, 0.5], 0.9, "a lamp"));
        let goal = GoalSpec::category("sofa");
        let got =
            retrieve_landmark_candidates(&goal, &store, &StoreReasoner, DEFAULT_LANDMARK_K).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn landmark_branch_scripted_unable_maps_to_empty() {
        let r = ScriptedReasoner::default();
        r.push_locate(Vec::new());
        let store = LandmarkStore::default();
        let got = retrieve_landmark_candidates(&GoalSpec::category("sofa"), &store, &r, 3).unwrap();
        assert!(got.is_empty());
        // Exhausted script behaves like a transport failure.
        assert!(retrieve_landmark_candidates(&GoalSpec::category("sofa"), &store, &r, 3).is_err());
    }

    #[test]
    fn pooling_singleton_is_identity() {
        let f = feature(vec![0.3, -0.4, 0.5]);
        let pooled = pool_patch_features(&[(&f, (10.0, 20.0))], (32.0, 32.0), DEFAULT_POOL_ALPHA);
        assert_eq!(pooled, f);
    }

    #[test]
    fn pooling_alpha_zero_is_unweighted_mean() {
        let a = feature(vec![1.0, 0.0]);
        let b = feature(vec![0.0, 1.0]);
        let pooled = pool_patch_features(&[(&a, (0.0, 0.0)), (&b, (63.0, 63.0))], (32.0, 32.0), 0.0);
        assert_eq!(pooled.values(), &[0.5, 0.5]);
    }

    #[test]
    fn pooling_equidistant_pair_averages() {
        let a = feature(vec![1.0, 0.0]);
        let b = feature(vec![0.0, 1.0]);
        let pooled = pool_patch_features(
            &[(&a, (22.0, 32.0)), (&b, (42.0, 32.0))],
            (32.0, 32.0),
            DEFAULT_POOL_ALPHA,
        );
        assert!((pooled.values()[0] - 0.5).abs() < 1e-6);
        assert!((pooled.values()[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn pooling_weights_decay_with_center_distance() {
        let a = feature(vec![1.0, 0.0]);
        let b = feature(vec![0.0, 1.0]);
        // a sits on the center, b far away: the pool should lean toward a.
        let pooled =
            pool_patch_features(&[(&a, (32.0, 32.0)), (&b, (0.0, 0.0))], (32.0, 32.0), 0.05);
        assert!(pooled.values()[0] > pooled.values()[1]);
    }

    fn map_with_feature(seed: u64, voxel: VoxelIndex) -> CognitiveMap {
        let gp = GridParams::new(0.5, 40).unwrap();
        let mut map = CognitiveMap::new(gp, DEFAULT_FEATURE_DIM);
        let f = identity_feature(seed, DEFAULT_FEATURE_DIM);
        map.insert_feature(f, voxel);
        map
    }

    fn synthetic_goal(seed: u64) -> GoalSpec {
        GoalSpec::image_instance(ImageToken::Synthetic(SyntheticImage {
            feature_seed: seed,
            rows: 8,
            cols: 8,
            stride: 8,
            variant: 0,
        }))
    }

    fn one_instance_scene(seed: u64) -> Arc<Scene> {
        let mut rows: Vec<String> = Vec::new();
        for r in 0..40 {
            let row: String = (0..40)
                .map(|c| if r == 0 || r == 39 || c == 0 || c == 39 { '#' } else { '.' })
                .collect();
            rows.push(row);
        }
        let refs: Vec<&str> = rows.iter().map(|s| s.as_str()).collect();
        let mut scene = Scene::from_ascii("wm", 0.25, &refs, vec![], 4242);
        scene.instances.push(Instance {
            id: "sofa_0".into(),
            category: "sofa".into(),
            description: "a plush crimson sofa with rolled arms".into(),
            position: [5.0, 5.0, 0.8],
            radius: 0.2,
            height: 1.6,
            feature_seed: seed,
        });
        Arc::new(scene)
    }

    #[test]
    fn cognitive_branch_exact_match_hits_voxel_center() {
        let voxel = VoxelIndex::new(24, 21, 1);
        let map = map_with_feature(77, voxel);
        let scene = one_instance_scene(77);
        let encoder = MockEncoder::new(scene.clone(), 5);
        let imaginer = MockImaginer::new(scene.clone(), &SimConfig::default());
        let enricher = crate::perception::mocks::MockEnricher { scene: scene.clone() };
        let goal = synthetic_goal(77);
        let got = retrieve_cognitive_candidates(
            &goal,
            &map,
            &enricher,
            &imaginer,
            &encoder,
            DEFAULT_COGNITIVE_Q,
        )
        .unwrap();
        assert_eq!(got.len(), 1);
        let expected = voxel_to_world(&voxel, &map.grid).unwrap();
        assert_eq!(got[0].position, expected);
        assert!((got[0].p - 1.0).abs() < 1e-9, "exact match similarity, got {}", got[0].p);
        assert_eq!(got[0].source, CandidateSource::CognitiveMap);
    }

    #[test]
    fn cognitive_branch_text_goal_clusters_one_region() {
        let voxel = VoxelIndex::new(24, 21, 1);
        let map = map_with_feature(77, voxel);
        let scene = one_instance_scene(77);
        let encoder = MockEncoder::new(scene.clone(), 5);
        let imaginer = MockImaginer::new(scene.clone(), &SimConfig::default());
        let enricher = crate::perception::mocks::MockEnricher { scene: scene.clone() };
        let goal = GoalSpec::category("sofa");
        let got = retrieve_cognitive_candidates(
            &goal,
            &map,
            &enricher,
            &imaginer,
            &encoder,
            DEFAULT_COGNITIVE_Q,
        )
        .unwrap();
        // Three imagined images, one stored region: a single cluster.
        assert_eq!(got.len(), 1);
        assert!((got[0].p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cognitive_branch_empty_map_is_empty() {
        let gp = GridParams::new(0.5, 40).unwrap();
        let map = CognitiveMap::new(gp, DEFAULT_FEATURE_DIM);
        let scene = one_instance_scene(77);
        let ifs = mock_interfaces(scene, &SimConfig::default(), 1);
        let got = retrieve_cognitive_candidates(
            &synthetic_goal(77),
            &map,
            ifs.enricher.as_ref(),
            ifs.imaginer.as_ref(),
            ifs.encoder.as_ref(),
            3,
        )
        .unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn cognitive_branch_unresolvable_text_goal_errors() {
        let voxel = VoxelIndex::new(24, 21, 1);
        let map = map_with_feature(77, voxel);
        let scene = one_instance_scene(77);
        let ifs = mock_interfaces(scene, &SimConfig::default(), 1);
        let err = retrieve_cognitive_candidates(
            &GoalSpec::category("piano"),
            &map,
            ifs.enricher.as_ref(),
            ifs.imaginer.as_ref(),
            ifs.encoder.as_ref(),
            3,
        );
        assert!(err.is_err(), "imaginer cannot depict an absent category");
    }

    #[test]
    fn ranking_lambda_one_is_p_descending() {
        let cands = vec![
            cand(9.0, 0.0, 0.2, CandidateSource::Landmark),
            cand(0.0, 1.0, 0.9, CandidateSource::CognitiveMap),
            cand(3.0, 3.0, 0.5, CandidateSource::Landmark),
        ];
        let ranked = rank_candidates(cands, &AgentPose::new(0.0, 0.0, 0.0), 1.0);
        let ps: Vec<f64> = ranked.iter().map(|c| c.p).collect();
        assert_eq!(ps, vec![0.9, 0.5, 0.2]);
    }

    #[test]
    fn ranking_lambda_zero_is_distance_ascending() {
        let cands = vec![
            cand(9.0, 0.0, 0.99, CandidateSource::Landmark),
            cand(0.0, 1.0, 0.01, CandidateSource::CognitiveMap),
            cand(3.0, 3.0, 0.5, CandidateSource::Landmark),
        ];
        let ranked = rank_candidates(cands, &AgentPose::new(0.0, 0.0, 0.0), 0.0);
        let ds: Vec<f64> = ranked.iter().map(|c| c.d).collect();
        assert!(ds.windows(2).all(|w| w[0] <= w[1]), "distances not ascending: {ds:?}");
    }

    #[test]
    fn ranking_worked_example() {
        let far = cand(4.0, 0.0, 1.0, CandidateSource::Landmark); // d = d_max
        let near = cand(0.0, 0.0, 0.8, CandidateSource::CognitiveMap); // d = 0
        let ranked =
            rank_candidates(vec![far, near], &AgentPose::new(0.0, 0.0, 0.0), DEFAULT_LAMBDA);
        assert!((ranked[0].priority - 0.9).abs() < 1e-12);
        assert!((ranked[1].priority - 0.5).abs() < 1e-12);
        assert_eq!(ranked[0].source, CandidateSource::CognitiveMap);
    }

    #[test]
    fn ranking_single_candidate_and_degenerate_dmax() {
        let ranked = rank_candidates(
            vec![cand(3.0, 4.0, 0.7, CandidateSource::Landmark)],
            &AgentPose::new(0.0, 0.0, 0.0),
            DEFAULT_LAMBDA,
        );
        assert_eq!(ranked.len(), 1);
        // Sole candidate has d = d_max, so the distance term vanishes.
        assert!((ranked[0].priority - DEFAULT_LAMBDA * 0.7).abs() < 1e-12);
        assert!((ranked[0].d - 5.0).abs() < 1e-12);

        // All candidates at the start: distance term pinned to 1.
        let ranked = rank_candidates(
            vec![
                cand(0.0, 0.0, 0.3, CandidateSource::Landmark),
                cand(0.7, 0.0, 0.9, CandidateSource::CognitiveMap),
            ],
            &AgentPose::new(0.35, 0.0, 0.0),
            DEFAULT_LAMBDA,
        );
        assert!(ranked.iter().all(|c| (c.d - 0.35).abs() < 1e-12));
        assert!(ranked[0].p > ranked[1].p, "falls back to p when distances tie");
    }

    #[test]
    fn ranking_dedups_within_half_meter_keeping_max_p() {
        let cands = vec![
            cand(2.0, 1.0, 0.4, CandidateSource::Landmark),
            cand(2.3, 1.0, 0.8, CandidateSource::CognitiveMap), // 0.3 m from the first
            cand(6.0, 6.0, 0.5, CandidateSource::Landmark),
        ];
        let ranked = rank_candidates(cands, &AgentPose::new(0.0, 0.0, 0.0), DEFAULT_LAMBDA);
        assert_eq!(ranked.len(), 2);
        let merged = ranked.iter().find(|c| c.position == [2.0, 1.0, 0.5]).unwrap();
        assert_eq!(merged.p, 0.8, "merge keeps the maximum p");
        assert_eq!(merged.source, CandidateSource::Landmark, "merge keeps the kept entry");
        for a in 0..ranked.len() {
            for b in a + 1..ranked.len() {
                assert!(dist2d(ranked[a].position, ranked[b].position) > DEDUP_RADIUS_M);
            }
        }
    }

    #[test]
    fn ranking_is_permutation_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..8);
            let cands: Vec<CandidateGoal> = (0..n)
                .map(|i| {
                    // Spread out beyond the dedup radius so nothing merges.
                    cand(
                        2.0 * i as f64 + rng.random_range(0.0..0.4),
                        rng.random_range(-0.2..0.2),
                        rng.random_range(0.0..1.0),
                        if rng.random_bool(0.5) {
                            CandidateSource::Landmark
                        } else {
                            CandidateSource::CognitiveMap
                        },
                    )
                })
                .collect();
            let start = AgentPose::new(-1.0, 0.0, 0.0);
            let lambda = rng.random_range(0.0..=1.0);
            let ranked = rank_candidates(cands.clone(), &start, lambda);
            assert_eq!(ranked.len(), cands.len());
            for c in &cands {
                assert!(ranked.iter().any(|r| r.position == c.position && r.p == c.p));
            }
            // Scaling all positions about the start by 3 preserves the order.
            let scaled: Vec<CandidateGoal> = cands
                .iter()
                .map(|c| {
                    let mut c = c.clone();
                    c.position = [
                        start.x + 3.0 * (c.position[0] - start.x),
                        start.y + 3.0 * (c.position[1] - start.y),
                        c.position[2],
                    ];
                    c
                })
                .collect();
            let ranked_scaled = rank_candidates(scaled, &start, lambda);
            let order_a: Vec<f64> = ranked.iter().map(|c| c.p).collect();
            let order_b: Vec<f64> = ranked_scaled.iter().map(|c| c.p).collect();
            assert_eq!(order_a, order_b, "distance scaling must not change the order");
        }
    }

    #[test]
    fn ranking_equal_distances_is_p_descending_for_every_lambda() {
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let cands = vec![
                cand(3.0, 0.0, 0.2, CandidateSource::CognitiveMap),
                cand(0.0, 3.0, 0.9, CandidateSource::Landmark),
                cand(-3.0, 0.0, 0.6, CandidateSource::Landmark),
            ];
            let ranked = rank_candidates(cands, &AgentPose::new(0.0, 0.0, 0.0), lambda);
            let ps: Vec<f64> = ranked.iter().map(|c| c.p).collect();
            assert_eq!(ps, vec![0.9, 0.6, 0.2], "lambda={lambda}");
        }
    }

    #[test]
    fn ranking_ties_prefer_landmark_then_input_order() {
        // Same position and p: H ties, d ties; landmark must come first.
        let cands = vec![
            cand(1.0, 1.0, 0.5, CandidateSource::CognitiveMap),
            cand(1.0, -1.0, 0.5, CandidateSource::Landmark),
        ];
        let ranked = rank_candidates(cands, &AgentPose::new(0.0, 0.0, 0.0), DEFAULT_LAMBDA);
        assert_eq!(ranked[0].source, CandidateSource::Landmark);
    }

    #[test]
    fn pooled_identity_still_matches_its_source() {
        // Pooling noisy copies of one identity feature keeps high similarity.
        let base = identity_feature(42, DEFAULT_FEATURE_DIM);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy: Vec<FeatureVector> = (0..4)
            .map(|_| {
                let v: Vec<f32> = base
                    .values()
                    .iter()
                    .map(|x| x + rng.random_range(-0.01..0.01))
                    .collect();
                FeatureVector::new(v).unwrap()
            })
            .collect();
        let pairs: Vec<(&FeatureVector, (f64, f64))> =
            noisy.iter().enumerate().map(|(i, f)| (f, (i as f64 * 8.0, 0.0))).collect();
        let pooled = pool_patch_features(&pairs, (16.0, 0.0), DEFAULT_POOL_ALPHA);
        assert!(cosine_similarity(&pooled, &base) > 0.99);
    }
}
