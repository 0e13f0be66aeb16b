//! Evaluation: navigation metrics (success rate, SPL, LLM-match), the batch
//! benchmark harness, and report serialization (JSON, CSV, SVG plots).

use crate::agent::{episode_start_pose, AgentConfig, MemoryBundle, NavAgent};
use crate::perception::mocks::mock_interfaces;
use crate::perception::{GoalSpec, InterfaceSet};
use crate::sim::{
    distance_to_targets, goal_targets, splitmix64, EpisodeResult, Scene, TraceStep,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("suite config: {0}")]
    Config(String),
    #[error("report format: {0}")]
    Format(String),
}

// ----------------------------------------------------------------------
// Metrics
// ----------------------------------------------------------------------

/// Fraction of successful episodes. Panics on an empty slice.
pub fn success_rate(results: &[EpisodeResult]) -> f64 {
    assert!(!results.is_empty(), "success_rate requires at least one episode");
    let wins = results.iter().filter(|r| r.success).count();
    wins as f64 / results.len() as f64
}

/// Success weighted by path length: mean over episodes of
/// `S · L* / max(L, L*)`. Failures contribute zero. Panics on an empty
/// slice and on a success whose shortest-path length is missing or zero.
pub fn spl(results: &[EpisodeResult]) -> f64 {
    assert!(!results.is_empty(), "spl requires at least one episode");
    let total: f64 = results
        .iter()
        .map(|r| {
            if !r.success {
                return 0.0;
            }
            let optimal = r
                .geodesic_length
                .expect("successful episode must carry a shortest-path length");
            assert!(
                optimal > 0.0,
                "successful episode must have a positive shortest-path length"
            );
            optimal / r.executed_length.max(optimal)
        })
        .sum();
    total / results.len() as f64
}

/// Rubric-score aggregate: mean of `(σ − 1) / 4`, as a percentage. Panics on
/// an empty slice and on any score outside 1..=5.
pub fn llm_match(scores: &[u8]) -> f64 {
    assert!(!scores.is_empty(), "llm_match requires at least one score");
    let total: f64 = scores
        .iter()
        .map(|&s| {
            assert!((1..=5).contains(&s), "rubric score {s} outside 1..=5");
            (s as f64 - 1.0) / 4.0
        })
        .sum();
    total / scores.len() as f64 * 100.0
}

// ----------------------------------------------------------------------
// Suite configuration
// ----------------------------------------------------------------------

/// Benchmark suite settings, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    /// Scenes to generate, one per seed.
    pub scene_seeds: Vec<u64>,
    /// Solvable goals derived per scene (alternating category and instance).
    pub goals_per_scene: usize,
    /// Additional per-scene goals naming a category absent from the scene.
    pub unsolvable_per_scene: usize,
    /// Master seed: episode seeds and goal draws derive from it.
    pub seed: u64,
    /// Worker threads for scene-parallel execution.
    pub workers: usize,
    /// Also run the memoryless frontier-search baseline on every episode.
    pub with_baseline: bool,
    /// Agent and simulator settings shared by all episodes.
    pub agent: AgentConfig,
    /// When set, report JSON/CSV/SVG files are written here.
    pub out_dir: Option<PathBuf>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            scene_seeds: vec![1, 2],
            goals_per_scene: 2,
            unsolvable_per_scene: 0,
            seed: 7,
            workers: 4,
            with_baseline: false,
            agent: AgentConfig::default(),
            out_dir: None,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.scene_seeds.is_empty() {
            return Err(EvalError::Config("scene_seeds must not be empty".into()));
        }
        if self.goals_per_scene == 0 && self.unsolvable_per_scene == 0 {
            return Err(EvalError::Config("at least one goal per scene required".into()));
        }
        if self.workers == 0 {
            return Err(EvalError::Config("workers must be at least 1".into()));
        }
        self.agent.validate().map_err(|e| EvalError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| EvalError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn episodes_per_scene(&self) -> usize {
        self.goals_per_scene + self.unsolvable_per_scene
    }
}

// ----------------------------------------------------------------------
// Report types
// ----------------------------------------------------------------------

/// One benchmark episode: identity, outcome, and the optional paired
/// baseline outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scene_seed: u64,
    /// Task family: "category", "instance", or "unsolvable".
    pub task: String,
    pub goal: String,
    pub seed: u64,
    pub success: bool,
    pub steps: u32,
    pub executed_length: f64,
    pub geodesic_length: Option<f64>,
    /// Infinite when the goal names nothing in the scene; JSON encodes that
    /// as null (JSON numbers cannot carry infinities).
    #[serde(with = "inf_as_null")]
    pub stop_distance: f64,
    pub reason: String,
    pub baseline_success: Option<bool>,
    pub baseline_steps: Option<u32>,
    pub baseline_executed_length: Option<f64>,
}

impl EpisodeRow {
    fn result(&self) -> EpisodeResult {
        EpisodeResult {
            success: self.success,
            executed_length: self.executed_length,
            geodesic_length: self.geodesic_length,
            steps: self.steps,
            stop_distance: self.stop_distance,
            reason: self.reason.clone(),
        }
    }

    fn baseline_result(&self) -> Option<EpisodeResult> {
        Some(EpisodeResult {
            success: self.baseline_success?,
            executed_length: self.baseline_executed_length?,
            geodesic_length: self.geodesic_length,
            steps: self.baseline_steps?,
            stop_distance: 0.0,
            reason: String::new(),
        })
    }
}

/// SR and SPL over one group of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub episodes: usize,
    pub sr: f64,
    pub spl: f64,
}

impl TaskMetrics {
    fn from_results(results: &[EpisodeResult]) -> Self {
        let m = Self {
            episodes: results.len(),
            sr: success_rate(results),
            spl: spl(results),
        };
        assert!((0.0..=1.0).contains(&m.sr) && (0.0..=1.0).contains(&m.spl));
        m
    }
}

/// Aggregated benchmark outcome plus every per-episode row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub per_task: BTreeMap<String, TaskMetrics>,
    pub overall: TaskMetrics,
    /// Baseline aggregate over the rows that carry baseline outcomes.
    pub baseline: Option<TaskMetrics>,
    pub rows: Vec<EpisodeRow>,
    pub config_hash: String,
    pub wall_clock_secs: f64,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Format(e.to_string()))
    }

    /// CSV with one row per episode. Numeric fields use the shortest
    /// round-trippable decimal form, so parsing restores them bit-exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scene_seed,task,goal,seed,success,steps,executed_length,geodesic_length,\
             stop_distance,reason,baseline_success,baseline_steps,baseline_executed_length\n",
        );
        for r in &self.rows {
            let geo = r.geodesic_length.map(|v| v.to_string()).unwrap_or_default();
            let b_s = r.baseline_success.map(|v| v.to_string()).unwrap_or_default();
            let b_n = r.baseline_steps.map(|v| v.to_string()).unwrap_or_default();
            let b_l = r
                .baseline_executed_length
                .map(|v| v.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.scene_seed,
                csv_escape(&r.task),
                csv_escape(&r.goal),
                r.seed,
                r.success,
                r.steps,
                r.executed_length,
                geo,
                r.stop_distance,
                csv_escape(&r.reason),
                b_s,
                b_n,
                b_l,
            ));
        }
        out
    }

    /// Parses rows back out of [`Self::to_csv`] output.
    pub fn rows_from_csv(text: &str) -> Result<Vec<EpisodeRow>, EvalError> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let fields = split_csv_line(line);
            if fields.len() != 13 {
                return Err(EvalError::Format(format!(
                    "line {}: expected 13 fields, found {}",
                    n + 1,
                    fields.len()
                )));
            }
            let num = |s: &str, what: &str| -> Result<f64, EvalError> {
                s.parse::<f64>()
                    .map_err(|_| EvalError::Format(format!("line {}: bad {what}: {s}", n + 1)))
            };
            let opt_num = |s: &str, what: &str| -> Result<Option<f64>, EvalError> {
                if s.is_empty() { Ok(None) } else { num(s, what).map(Some) }
            };
            rows.push(EpisodeRow {
                scene_seed: fields[0]
                    .parse()
                    .map_err(|_| EvalError::Format(format!("line {}: bad scene_seed", n + 1)))?,
                task: fields[1].clone(),
                goal: fields[2].clone(),
                seed: fields[3]
                    .parse()
                    .map_err(|_| EvalError::Format(format!("line {}: bad seed", n + 1)))?,
                success: fields[4]
                    .parse()
                    .map_err(|_| EvalError::Format(format!("line {}: bad success", n + 1)))?,
                steps: fields[5]
                    .parse()
                    .map_err(|_| EvalError::Format(format!("line {}: bad steps", n + 1)))?,
                executed_length: num(&fields[6], "executed_length")?,
                geodesic_length: opt_num(&fields[7], "geodesic_length")?,
                stop_distance: num(&fields[8], "stop_distance")?,
                reason: fields[9].clone(),
                baseline_success: if fields[10].is_empty() {
                    None
                } else {
                    Some(fields[10].parse().map_err(|_| {
                        EvalError::Format(format!("line {}: bad baseline_success", n + 1))
                    })?)
                },
                baseline_steps: if fields[11].is_empty() {
                    None
                } else {
                    Some(fields[11].parse().map_err(|_| {
                        EvalError::Format(format!("line {}: bad baseline_steps", n + 1))
                    })?)
                },
                baseline_executed_length: opt_num(&fields[12], "baseline_executed_length")?,
            });
        }
        Ok(rows)
    }

    /// Writes report.json, report.csv, and metrics.svg under `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        let mut groups: Vec<(String, TaskMetrics)> =
            self.per_task.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        groups.push(("overall".to_string(), self.overall.clone()));
        if let Some(b) = &self.baseline {
            groups.push(("baseline".to_string(), b.clone()));
        }
        std::fs::write(dir.join("metrics.svg"), metrics_bar_chart_svg(&groups))?;
        Ok(())
    }
}

/// JSON cannot represent infinite floats; encode them as null.
mod inf_as_null {
    use serde::{Deserialize as _, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '"' if quoted => {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    cur.push('"');
                } else {
                    quoted = false;
                }
            }
            '"' => quoted = true,
            ',' if !quoted => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(ch),
        }
    }
    fields.push(cur);
    fields
}

// ----------------------------------------------------------------------
// Benchmark harness
// ----------------------------------------------------------------------

/// A goal planned for one scene before execution.
#[derive(Debug, Clone)]
struct PlannedEpisode {
    task: &'static str,
    goal: GoalSpec,
    seed: u64,
}

/// Draws the per-scene goal list deterministically from the suite seed.
fn plan_scene_episodes(config: &SuiteConfig, scene: &Scene, scene_seed: u64) -> Vec<PlannedEpisode> {
    use rand::Rng as _;
    use rand::SeedableRng as _;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(splitmix64(
        config.seed ^ splitmix64(scene_seed),
    ));
    let mut planned = Vec::new();
    for g in 0..config.goals_per_scene {
        let inst = &scene.instances[rng.random_range(0..scene.instances.len())];
        let goal = if g % 2 == 0 {
            GoalSpec::category(&inst.category)
        } else {
            GoalSpec::text_instance(&inst.description)
        };
        let task = if g % 2 == 0 { "category" } else { "instance" };
        planned.push(PlannedEpisode {
            task,
            goal,
            seed: splitmix64(config.seed ^ splitmix64(scene_seed) ^ (g as u64 + 1)),
        });
    }
    for g in 0..config.unsolvable_per_scene {
        // A category no generated scene contains.
        planned.push(PlannedEpisode {
            task: "unsolvable",
            goal: GoalSpec::category("grandfather clock"),
            seed: splitmix64(config.seed ^ splitmix64(scene_seed) ^ (0x5151 + g as u64)),
        });
    }
    planned
}

/// Picks the episode seed variant whose start pose is clear of the goal, so
/// a success can never have a degenerate (zero) shortest path.
fn settle_episode_seed(scene: &Scene, goal: &GoalSpec, base_seed: u64) -> u64 {
    let targets = goal_targets(scene, goal);
    if targets.is_empty() {
        return base_seed;
    }
    let mut seed = base_seed;
    for attempt in 0..64u64 {
        let start = episode_start_pose(scene, seed);
        let d = distance_to_targets(scene, &targets, start.x, start.y);
        if d > crate::agent::SUCCESS_RADIUS_M + 0.5 {
            return seed;
        }
        seed = splitmix64(base_seed ^ (attempt + 1));
    }
    base_seed
}

struct SceneOutput {
    rows: Vec<EpisodeRow>,
    /// Guided trajectory of the first episode, when capture was requested.
    trace: Option<(Arc<Scene>, Vec<TraceStep>)>,
}

/// Runs one scene end to end: generate, explore once, then execute every
/// planned episode against the shared memories. Panics inside an episode
/// become failure rows; a panic during setup fails the whole scene's rows.
fn run_scene(config: &SuiteConfig, scene_seed: u64, capture_trace: bool) -> SceneOutput {
    let setup = std::panic::catch_unwind(|| {
        let scene = Arc::new(Scene::generate(scene_seed));
        let explore_seed = splitmix64(config.seed ^ splitmix64(scene_seed) ^ 0xE0);
        let interfaces = mock_interfaces(scene.clone(), &config.agent.sim, explore_seed);
        let start = episode_start_pose(&scene, explore_seed);
        let mut agent = NavAgent::new(
            scene.clone(),
            config.agent.clone(),
            interfaces.clone(),
            start,
            explore_seed,
        );
        let mem = agent.explore_and_build();
        (scene, interfaces, mem)
    });
    let (scene, interfaces, mem) = match setup {
        Ok(v) => v,
        Err(e) => {
            // Synthesize one failure row per planned episode slot.
            let reason = format!("panic during scene setup: {}", panic_text(&e));
            let n = config.episodes_per_scene();
            let rows = (0..n)
                .map(|g| EpisodeRow {
                    scene_seed,
                    task: "setup-failed".to_string(),
                    goal: String::new(),
                    seed: splitmix64(config.seed ^ splitmix64(scene_seed) ^ (g as u64 + 1)),
                    success: false,
                    steps: 0,
                    executed_length: 0.0,
                    geodesic_length: None,
                    stop_distance: f64::INFINITY,
                    reason: reason.clone(),
                    baseline_success: None,
                    baseline_steps: None,
                    baseline_executed_length: None,
                })
                .collect();
            return SceneOutput { rows, trace: None };
        }
    };

    let planned = plan_scene_episodes(config, &scene, scene_seed);
    let mut rows = Vec::with_capacity(planned.len());
    let mut trace = None;
    for (i, ep) in planned.iter().enumerate() {
        let seed = settle_episode_seed(&scene, &ep.goal, ep.seed);
        let want_trace = capture_trace && i == 0;
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            run_guided(&scene, &config.agent, &interfaces, &mem, &ep.goal, seed, want_trace)
        }));
        let (result, ep_trace) = match outcome {
            Ok(v) => v,
            Err(e) => (
                EpisodeResult {
                    success: false,
                    executed_length: 0.0,
                    geodesic_length: None,
                    steps: 0,
                    stop_distance: f64::INFINITY,
                    reason: format!("panic: {}", panic_text(&e)),
                },
                None,
            ),
        };
        if let Some(t) = ep_trace {
            trace = Some((scene.clone(), t));
        }
        let baseline = if config.with_baseline {
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                crate::agent::run_baseline_episode(
                    &scene,
                    &config.agent,
                    &interfaces,
                    &ep.goal,
                    seed,
                )
            }))
            .ok()
        } else {
            None
        };
        rows.push(EpisodeRow {
            scene_seed,
            task: ep.task.to_string(),
            goal: ep.goal.display(),
            seed,
            success: result.success,
            steps: result.steps,
            executed_length: result.executed_length,
            geodesic_length: result.geodesic_length,
            stop_distance: result.stop_distance,
            reason: result.reason,
            baseline_success: baseline.as_ref().map(|b| b.success),
            baseline_steps: baseline.as_ref().map(|b| b.steps),
            baseline_executed_length: baseline.as_ref().map(|b| b.executed_length),
        });
    }
    SceneOutput { rows, trace }
}

/// One guided episode, optionally capturing the trajectory.
fn run_guided(
    scene: &Arc<Scene>,
    config: &AgentConfig,
    interfaces: &InterfaceSet,
    mem: &MemoryBundle,
    goal: &GoalSpec,
    seed: u64,
    want_trace: bool,
) -> (EpisodeResult, Option<Vec<TraceStep>>) {
    let start = episode_start_pose(scene, seed);
    let mut agent = NavAgent::new(scene.clone(), config.clone(), interfaces.clone(), start, seed);
    let result = agent.navigate(goal, mem);
    let trace = want_trace.then(|| agent.sim().trace().to_vec());
    (result, trace)
}

fn panic_text(e: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = e.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = e.downcast_ref::<String>() {
        s.clone()
    } else {
        "opaque panic payload".to_string()
    }
}

/// Runs the whole suite: scene-parallel execution, deterministic row order,
/// aggregation after the join barrier, optional file output.
pub fn run_benchmark(config: &SuiteConfig) -> Result<BenchmarkReport, EvalError> {
    config.validate()?;
    let started = std::time::Instant::now();
    let n_scenes = config.scene_seeds.len();
    let next = AtomicUsize::new(0);
    let outputs: Mutex<Vec<(usize, SceneOutput)>> = Mutex::new(Vec::with_capacity(n_scenes));
    let workers = config.workers.min(n_scenes).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_scenes {
                    break;
                }
                let out = run_scene(config, config.scene_seeds[i], i == 0);
                outputs.lock().expect("collector lock").push((i, out));
            });
        }
    });
    let mut outputs = outputs.into_inner().expect("collector lock");
    outputs.sort_by_key(|(i, _)| *i);

    let mut rows = Vec::new();
    let mut first_trace = None;
    for (_, out) in outputs {
        rows.extend(out.rows);
        if first_trace.is_none() {
            first_trace = out.trace;
        }
    }
    assert_eq!(
        rows.len(),
        n_scenes * config.episodes_per_scene(),
        "one row per planned episode"
    );

    let mut by_task: BTreeMap<String, Vec<EpisodeResult>> = BTreeMap::new();
    for row in &rows {
        by_task.entry(row.task.clone()).or_default().push(row.result());
    }
    let per_task: BTreeMap<String, TaskMetrics> = by_task
        .iter()
        .map(|(task, results)| (task.clone(), TaskMetrics::from_results(results)))
        .collect();
    let all: Vec<EpisodeResult> = rows.iter().map(|r| r.result()).collect();
    let overall = TaskMetrics::from_results(&all);
    let baseline_results: Vec<EpisodeResult> =
        rows.iter().filter_map(|r| r.baseline_result()).collect();
    let baseline = if baseline_results.is_empty() {
        None
    } else {
        Some(TaskMetrics::from_results(&baseline_results))
    };

    let report = BenchmarkReport {
        per_task,
        overall,
        baseline,
        rows,
        config_hash: config.agent.hash(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };

    if let Some(dir) = &config.out_dir {
        report.write_files(dir)?;
        if let Some((scene, trace)) = &first_trace {
            std::fs::write(
                dir.join("trajectory.svg"),
                trajectory_svg(scene, &[("guided", trace.as_slice())]),
            )?;
        }
    }
    Ok(report)
}

// ----------------------------------------------------------------------
// SVG plots
// ----------------------------------------------------------------------

/// Grouped bar chart of SR and SPL per task family.
pub fn metrics_bar_chart_svg(groups: &[(String, TaskMetrics)]) -> String {
    let group_w = 110.0;
    let bar_w = 36.0;
    let chart_h = 220.0;
    let left = 56.0;
    let bottom = 40.0;
    let width = left + group_w * groups.len() as f64 + 24.0;
    let height = chart_h + bottom + 48.0;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str("<text x=\"12\" y=\"22\" font-size=\"15\" font-weight=\"bold\">Success rate and SPL by task</text>\n");
    let y0 = 36.0;
    for tick in 0..=5 {
        let frac = tick as f64 / 5.0;
        let y = y0 + chart_h * (1.0 - frac);
        s.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n",
            width - 16.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" fill=\"#555\">{frac:.1}</text>\n",
            left - 6.0,
            y + 4.0
        ));
    }
    for (i, (name, m)) in groups.iter().enumerate() {
        let gx = left + group_w * i as f64 + 14.0;
        for (j, (value, color, label)) in
            [(m.sr, "#2c7fb8", "SR"), (m.spl, "#7fcdbb", "SPL")].iter().enumerate()
        {
            let h = chart_h * value;
            let x = gx + (bar_w + 6.0) * j as f64;
            let y = y0 + chart_h - h;
            s.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w}\" height=\"{h:.1}\" fill=\"{color}\"/>\n"
            ));
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#333\">{value:.2}</text>\n",
                x + bar_w / 2.0,
                y - 4.0
            ));
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#777\" font-size=\"10\">{label}</text>\n",
                x + bar_w / 2.0,
                y0 + chart_h + 14.0
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-weight=\"bold\">{name}</text>\n",
            gx + bar_w + 3.0,
            y0 + chart_h + 30.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Top-down scene plot: walls, instances, and trajectory polylines.
pub fn trajectory_svg(scene: &Scene, traces: &[(&str, &[TraceStep])]) -> String {
    let scale = 40.0; // pixels per meter
    let (wm, hm) = scene.bounds_meters();
    let width = wm * scale + 20.0;
    let height = hm * scale + 40.0;
    let px = |x: f64| 10.0 + x * scale;
    let py = |y: f64| 10.0 + (hm - y) * scale;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let cs = scene.cell_size * scale;
    for r in 0..scene.height {
        for c in 0..scene.width {
            if scene.is_wall_cell(r, c) {
                let x = px(c as f64 * scene.cell_size);
                let y = py((r + 1) as f64 * scene.cell_size);
                s.push_str(&format!(
                    "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cs:.1}\" height=\"{cs:.1}\" fill=\"#444\"/>\n"
                ));
            }
        }
    }
    for inst in &scene.instances {
        let x = px(inst.position[0]);
        let y = py(inst.position[1]);
        let r = inst.radius * scale;
        s.push_str(&format!(
            "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"{r:.1}\" fill=\"#d95f02\" fill-opacity=\"0.8\"/>\n"
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#d95f02\">{}</text>\n",
            x + r + 3.0,
            y + 4.0,
            inst.category
        ));
    }
    let colors = ["#1b9e77", "#7570b3", "#e7298a", "#66a61e"];
    for (i, (label, trace)) in traces.iter().enumerate() {
        if trace.is_empty() {
            continue;
        }
        let color = colors[i % colors.len()];
        let points: Vec<String> =
            trace.iter().map(|t| format!("{:.1},{:.1}", px(t.x), py(t.y))).collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" \
             stroke-opacity=\"0.85\"/>\n",
            points.join(" ")
        ));
        let first = &trace[0];
        let last = &trace[trace.len() - 1];
        s.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"5\" fill=\"{color}\"/>\n",
            px(first.x),
            py(first.y)
        ));
        s.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"9\" height=\"9\" fill=\"{color}\"/>\n",
            px(last.x) - 4.5,
            py(last.y) - 4.5
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{height:.0}\" fill=\"{color}\">{label}</text>\n",
            14.0 + 90.0 * i as f64,
            height = height - 12.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes a top-down trajectory SVG for an externally captured trace.
pub fn write_trajectory_svg(
    path: &Path,
    scene: &Scene,
    traces: &[(&str, &[TraceStep])],
) -> Result<(), EvalError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(trajectory_svg(scene, traces).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(success: bool, executed: f64, geodesic: Option<f64>) -> EpisodeResult {
        EpisodeResult {
            success,
            executed_length: executed,
            geodesic_length: geodesic,
            steps: 10,
            stop_distance: if success { 0.4 } else { f64::INFINITY },
            reason: String::new(),
        }
    }

    #[test]
    fn success_rate_examples() {
        let all: Vec<EpisodeResult> = (0..10).map(|_| ep(true, 5.0, Some(5.0))).collect();
        assert_eq!(success_rate(&all), 1.0);
        let none: Vec<EpisodeResult> = (0..10).map(|_| ep(false, 5.0, Some(5.0))).collect();
        assert_eq!(success_rate(&none), 0.0);
        let mixed = vec![
            ep(true, 5.0, Some(5.0)),
            ep(true, 5.0, Some(5.0)),
            ep(true, 5.0, Some(5.0)),
            ep(false, 5.0, Some(5.0)),
        ];
        assert_eq!(success_rate(&mixed), 0.75);
    }

    #[test]
    #[should_panic(expected = "at least one episode")]
    fn success_rate_empty_panics() {
        success_rate(&[]);
    }

    #[test]
    fn spl_examples() {
        let optimal: Vec<EpisodeResult> = (0..4).map(|_| ep(true, 6.0, Some(6.0))).collect();
        assert_eq!(spl(&optimal), 1.0);
        assert_eq!(spl(&[ep(true, 10.0, Some(5.0))]), 0.5);
        // Failure contributes zero regardless of lengths.
        assert_eq!(spl(&[ep(false, 1.0, Some(100.0))]), 0.0);
        // Shorter-than-optimal executed path caps the ratio at 1.
        assert_eq!(spl(&[ep(true, 3.0, Some(5.0))]), 1.0);
        // Failures dilute the mean: one optimal success of two episodes.
        let half = spl(&[ep(true, 5.0, Some(5.0)), ep(false, 5.0, None)]);
        assert_eq!(half, 0.5);
    }

    #[test]
    #[should_panic(expected = "shortest-path length")]
    fn spl_success_without_geodesic_panics() {
        spl(&[ep(true, 5.0, None)]);
    }

    #[test]
    #[should_panic(expected = "positive shortest-path")]
    fn spl_success_with_zero_geodesic_panics() {
        spl(&[ep(true, 5.0, Some(0.0))]);
    }

    #[test]
    #[should_panic(expected = "at least one episode")]
    fn spl_empty_panics() {
        spl(&[]);
    }

    #[test]
    fn llm_match_examples() {
        assert_eq!(llm_match(&[5, 5, 5]), 100.0);
        assert_eq!(llm_match(&[1, 1, 1]), 0.0);
        assert_eq!(llm_match(&[1, 3, 5]), 50.0);
    }

    #[test]
    #[should_panic(expected = "outside 1..=5")]
    fn llm_match_out_of_range_panics() {
        llm_match(&[3, 6]);
    }

    #[test]
    #[should_panic(expected = "at least one score")]
    fn llm_match_empty_panics() {
        llm_match(&[]);
    }

    #[test]
    fn spl_never_exceeds_success_rate() {
        use rand::Rng as _;
        use rand::SeedableRng as _;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.random_range(1..20);
            let results: Vec<EpisodeResult> = (0..n)
                .map(|_| {
                    let success = rng.random_bool(0.5);
                    let optimal = rng.random_range(0.5..20.0);
                    let executed = optimal * rng.random_range(1.0..4.0);
                    ep(success, executed, Some(optimal))
                })
                .collect();
            let sr = success_rate(&results);
            let s = spl(&results);
            assert!(s <= sr + 1e-12, "spl {s} > sr {sr}");
        }
    }

    #[test]
    fn suite_config_json_round_trip_and_validation() {
        let config = SuiteConfig::default();
        config.validate().unwrap();
        let parsed = SuiteConfig::from_json(&config.to_json()).unwrap();
        assert_eq!(config, parsed);

        assert!(SuiteConfig::from_json("{\"scene_seeds\": []}").is_err());
        assert!(SuiteConfig::from_json("{\"workers\": 0}").is_err());
        // Defaults fill everything else in.
        let sparse = SuiteConfig::from_json("{\"scene_seeds\": [42]}").unwrap();
        assert_eq!(sparse.scene_seeds, vec![42]);
        assert_eq!(sparse.goals_per_scene, 2);
    }

    #[test]
    fn csv_escaping_round_trips() {
        let row = EpisodeRow {
            scene_seed: 3,
            task: "category".into(),
            goal: "a sofa, with \"quotes\"".into(),
            seed: 11,
            success: true,
            steps: 120,
            executed_length: 7.25,
            geodesic_length: Some(6.143000000000001),
            stop_distance: 0.33,
            reason: String::new(),
            baseline_success: Some(false),
            baseline_steps: Some(500),
            baseline_executed_length: Some(61.000000000000014),
        };
        let report = BenchmarkReport {
            per_task: BTreeMap::new(),
            overall: TaskMetrics { episodes: 1, sr: 1.0, spl: 0.85 },
            baseline: None,
            rows: vec![row.clone()],
            config_hash: "x".into(),
            wall_clock_secs: 0.0,
        };
        let parsed = BenchmarkReport::rows_from_csv(&report.to_csv()).unwrap();
        assert_eq!(parsed, vec![row]);
    }

    #[test]
    fn mini_benchmark_runs_and_is_deterministic() {
        let out_dir = tempfile::tempdir().unwrap();
        let mut config = SuiteConfig {
            scene_seeds: vec![101, 202],
            goals_per_scene: 2,
            unsolvable_per_scene: 1,
            seed: 5,
            workers: 2,
            with_baseline: false,
            agent: AgentConfig::default(),
            out_dir: Some(out_dir.path().to_path_buf()),
        };
        let report = run_benchmark(&config).unwrap();
        assert_eq!(report.rows.len(), 6, "2 scenes x (2 goals + 1 unsolvable)");
        assert!((0.0..=1.0).contains(&report.overall.sr));
        assert!(report.overall.spl <= report.overall.sr);
        // Unsolvable episodes always fail with zero contribution.
        let unsolvable = &report.per_task["unsolvable"];
        assert_eq!(unsolvable.sr, 0.0);
        assert_eq!(unsolvable.spl, 0.0);
        // Solvable tasks should mostly succeed with oracle mocks.
        assert!(report.per_task["category"].sr > 0.0);

        // Files land in the output directory.
        assert!(out_dir.path().join("report.json").is_file());
        assert!(out_dir.path().join("report.csv").is_file());
        assert!(out_dir.path().join("metrics.svg").is_file());
        assert!(out_dir.path().join("trajectory.svg").is_file());

        // CSV rows round-trip losslessly.
        let parsed = BenchmarkReport::rows_from_csv(&report.to_csv()).unwrap();
        assert_eq!(parsed, report.rows);

        // Rerun: identical modulo wall clock, even single-threaded.
        config.workers = 1;
        config.out_dir = None;
        let rerun = run_benchmark(&config).unwrap();
        assert_eq!(rerun.rows, report.rows);
        assert_eq!(rerun.per_task, report.per_task);
        assert_eq!(rerun.overall, report.overall);

        // Report JSON round-trips.
        let back = BenchmarkReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn baseline_rows_aggregate_separately() {
        let config = SuiteConfig {
            scene_seeds: vec![303],
            goals_per_scene: 1,
            unsolvable_per_scene: 0,
            seed: 9,
            workers: 1,
            with_baseline: true,
            agent: AgentConfig::default(),
            out_dir: None,
        };
        let report = run_benchmark(&config).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert!(row.baseline_success.is_some());
        assert!(row.baseline_executed_length.is_some());
        let baseline = report.baseline.as_ref().expect("baseline aggregate");
        assert_eq!(baseline.episodes, 1);
    }

    #[test]
    fn svg_plots_are_well_formed() {
        let groups = vec![
            ("category".to_string(), TaskMetrics { episodes: 4, sr: 0.75, spl: 0.6 }),
            ("instance".to_string(), TaskMetrics { episodes: 4, sr: 1.0, spl: 0.9 }),
        ];
        let chart = metrics_bar_chart_svg(&groups);
        assert!(chart.starts_with("<svg"));
        assert!(chart.trim_end().ends_with("</svg>"));
        assert_eq!(chart.matches("<rect").count(), 1 + 4); // background + 2 bars per group

        let scene = Scene::generate(77);
        let trace = vec![
            TraceStep { step: 0, action: crate::planner::Action::Forward, x: 2.0, y: 2.0, yaw: 0.0, collided: false },
            TraceStep { step: 1, action: crate::planner::Action::Forward, x: 2.25, y: 2.0, yaw: 0.0, collided: false },
        ];
        let svg = trajectory_svg(&scene, &[("guided", &trace)]);
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("</svg>"));
    }
}
