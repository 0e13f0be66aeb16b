//! Command-line front end: explore a scene into saved memories, navigate
//! against them, run benchmark suites, and inspect stored memory artifacts.
//!
//! Exit codes: 0 success, 1 task failure, 2 configuration error.

use clap::{Parser, Subcommand};
use navmem::agent::{episode_start_pose, AgentConfig, MemoryBundle, NavAgent};
use navmem::eval::{run_benchmark, write_trajectory_svg, SuiteConfig};
use navmem::perception::mocks::mock_interfaces;
use navmem::perception::remote::remote_interfaces;
use navmem::perception::{GoalSpec, ImageToken, InterfaceSet, PromptTemplates};
use navmem::planner::CellState;
use navmem::sim::Scene;
use std::path::{Path, PathBuf};
use std::sync::Arc;

const EXIT_OK: i32 = 0;
const EXIT_TASK_FAILURE: i32 = 1;
const EXIT_CONFIG_ERROR: i32 = 2;

#[derive(Parser)]
#[command(
    name = "navmem",
    version,
    about = "Spatial-memory navigation: explore, navigate, benchmark, inspect"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explore a scene and save the resulting memories.
    Explore {
        /// Scene: a JSON file path, or `seed:N` for a generated scene.
        scene: String,
        /// Directory the memory bundle is written to.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Navigate to a goal using previously saved memories.
    Navigate {
        /// Scene: a JSON file path, or `seed:N` for a generated scene.
        scene: String,
        /// Directory holding a saved memory bundle.
        #[arg(long)]
        mem: PathBuf,
        /// Goal: `category:sofa`, `text:<description>`, `image:<path>`,
        /// `instruction:<steps>`, or `question:<query>`.
        #[arg(long)]
        goal: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a benchmark suite described by a JSON file.
    Bench {
        /// Suite configuration JSON.
        suite: PathBuf,
        /// Override the suite's worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the suite's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the suite's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump a saved memory bundle: landmark JSON on stdout, voxel CSV and
    /// occupancy PGM files next to it.
    Inspect {
        /// Directory holding a saved memory bundle.
        mem: PathBuf,
    },
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Run seed (start pose, sensing noise, tie-breaking).
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Agent configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use deterministic mock perception (the default).
    #[arg(long, conflicts_with = "remote")]
    mock: bool,
    /// Use the remote chat endpoint from the agent config.
    #[arg(long)]
    remote: bool,
}

/// Configuration problems exit with 2, task failures with 1.
enum CliError {
    Config(String),
    Task(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG_ERROR,
            CliError::Task(_) => EXIT_TASK_FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Task(m) => m,
        }
    }
}

/// Prints to stdout, exiting quietly when the reading end has closed
/// (e.g. piping into `head`).
fn emit(text: &str) {
    use std::io::Write as _;
    let mut out = std::io::stdout();
    if writeln!(out, "{text}").is_err() {
        std::process::exit(EXIT_OK);
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Explore { scene, out, common } => cmd_explore(&scene, &out, &common),
        Command::Navigate { scene, mem, goal, common } => {
            cmd_navigate(&scene, &mem, &goal, &common)
        }
        Command::Bench { suite, workers, seed, out } => cmd_bench(&suite, workers, seed, out),
        Command::Inspect { mem } => cmd_inspect(&mem),
    }
}

fn load_scene(spec: &str) -> Result<Arc<Scene>, CliError> {
    if let Some(seed_text) = spec.strip_prefix("seed:") {
        let seed: u64 = seed_text
            .parse()
            .map_err(|_| CliError::Config(format!("bad scene seed: {seed_text}")))?;
        return Ok(Arc::new(Scene::generate(seed)));
    }
    Scene::load(Path::new(spec))
        .map(Arc::new)
        .map_err(|e| CliError::Config(format!("cannot load scene {spec}: {e}")))
}

fn load_agent_config(path: &Option<PathBuf>) -> Result<AgentConfig, CliError> {
    match path {
        None => Ok(AgentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            AgentConfig::from_json(&text)
                .map_err(|e| CliError::Config(format!("bad config {}: {e}", p.display())))
        }
    }
}

fn build_interfaces(
    scene: &Arc<Scene>,
    config: &AgentConfig,
    common: &CommonArgs,
) -> Result<InterfaceSet, CliError> {
    if common.remote {
        let endpoint = config.endpoint.clone().ok_or_else(|| {
            CliError::Config("--remote requires an `endpoint` block in the agent config".into())
        })?;
        remote_interfaces(
            scene.clone(),
            &config.sim,
            endpoint,
            PromptTemplates::default(),
            common.seed,
        )
        .map_err(|e| CliError::Config(format!("remote endpoint setup failed: {e}")))
    } else {
        Ok(mock_interfaces(scene.clone(), &config.sim, common.seed))
    }
}

fn parse_goal(spec: &str) -> Result<GoalKind, CliError> {
    if let Some(rest) = spec.strip_prefix("category:") {
        Ok(GoalKind::Nav(GoalSpec::category(rest.trim())))
    } else if let Some(rest) = spec.strip_prefix("text:") {
        Ok(GoalKind::Nav(GoalSpec::text_instance(rest.trim())))
    } else if let Some(rest) = spec.strip_prefix("image:") {
        Ok(GoalKind::Nav(GoalSpec::image_instance(ImageToken::External(rest.trim().to_string()))))
    } else if let Some(rest) = spec.strip_prefix("instruction:") {
        Ok(GoalKind::Instruction(rest.trim().to_string()))
    } else if let Some(rest) = spec.strip_prefix("question:") {
        Ok(GoalKind::Question(rest.trim().to_string()))
    } else {
        Err(CliError::Config(format!(
            "goal must start with category:, text:, image:, instruction:, or question: — got {spec}"
        )))
    }
}

enum GoalKind {
    Nav(GoalSpec),
    Instruction(String),
    Question(String),
}

fn cmd_explore(scene_spec: &str, out: &Path, common: &CommonArgs) -> Result<i32, CliError> {
    let scene = load_scene(scene_spec)?;
    let config = load_agent_config(&common.config)?;
    let interfaces = build_interfaces(&scene, &config, common)?;
    let start = episode_start_pose(&scene, common.seed);
    let mut agent = NavAgent::new(scene.clone(), config, interfaces, start, common.seed);
    let mem = agent.explore_and_build();
    mem.save(out)
        .map_err(|e| CliError::Task(format!("cannot save memories to {}: {e}", out.display())))?;
    scene
        .save(&out.join("scene.json"))
        .map_err(|e| CliError::Task(format!("cannot save scene: {e}")))?;
    write_trajectory_svg(
        &out.join("exploration.svg"),
        &scene,
        &[("exploration", agent.sim().trace())],
    )
    .map_err(|e| CliError::Task(format!("cannot write trajectory plot: {e}")))?;
    let summary = serde_json::json!({
        "scene": scene.name,
        "steps": agent.sim().steps(),
        "landmarks": mem.landmarks.len(),
        "map_cells": mem.map.cell_count(),
        "map_features": mem.map.feature_count(),
        "known_free_cells": mem.grid.count(CellState::Free),
        "out_dir": out.display().to_string(),
    });
    emit(&serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(EXIT_OK)
}

fn cmd_navigate(
    scene_spec: &str,
    mem_dir: &Path,
    goal_spec: &str,
    common: &CommonArgs,
) -> Result<i32, CliError> {
    let scene = load_scene(scene_spec)?;
    let config = load_agent_config(&common.config)?;
    let goal = parse_goal(goal_spec)?;
    let mem = MemoryBundle::load(mem_dir)
        .map_err(|e| CliError::Config(format!("cannot load memories from {}: {e}", mem_dir.display())))?;
    let interfaces = build_interfaces(&scene, &config, common)?;
    let start = episode_start_pose(&scene, common.seed);
    let mut agent = NavAgent::new(scene.clone(), config, interfaces, start, common.seed);

    let (result, answer) = match goal {
        GoalKind::Nav(g) => (agent.navigate(&g, &mem), None),
        GoalKind::Instruction(text) => (agent.follow_instruction(&text, &mem), None),
        GoalKind::Question(text) => {
            let (r, a) = agent.answer_question(&text, &mem);
            (r, Some(a))
        }
    };
    let mut output = serde_json::to_value(&result).expect("result serializes");
    if let Some(a) = answer {
        output["answer"] = serde_json::Value::String(a);
    }
    emit(&serde_json::to_string_pretty(&output).expect("output serializes"));
    Ok(if result.success { EXIT_OK } else { EXIT_TASK_FAILURE })
}

fn cmd_bench(
    suite_path: &Path,
    workers: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<i32, CliError> {
    let mut suite = SuiteConfig::load(suite_path)
        .map_err(|e| CliError::Config(format!("bad suite {}: {e}", suite_path.display())))?;
    if let Some(w) = workers {
        suite.workers = w;
    }
    if let Some(s) = seed {
        suite.seed = s;
    }
    if let Some(o) = out {
        suite.out_dir = Some(o);
    }
    suite
        .validate()
        .map_err(|e| CliError::Config(format!("bad suite {}: {e}", suite_path.display())))?;
    let report =
        run_benchmark(&suite).map_err(|e| CliError::Task(format!("benchmark failed: {e}")))?;
    for (task, m) in &report.per_task {
        emit(&format!("{task}: episodes={} SR={:.3} SPL={:.3}", m.episodes, m.sr, m.spl));
    }
    emit(&format!(
        "overall: episodes={} SR={:.3} SPL={:.3}",
        report.overall.episodes, report.overall.sr, report.overall.spl
    ));
    if let Some(b) = &report.baseline {
        emit(&format!("baseline: episodes={} SR={:.3} SPL={:.3}", b.episodes, b.sr, b.spl));
    }
    emit(&format!("wall clock: {:.1}s", report.wall_clock_secs));
    if let Some(dir) = &suite.out_dir {
        emit(&format!("report written to {}", dir.display()));
    }
    Ok(EXIT_OK)
}

fn cmd_inspect(mem_dir: &Path) -> Result<i32, CliError> {
    let mem = MemoryBundle::load(mem_dir)
        .map_err(|e| CliError::Config(format!("cannot load memories from {}: {e}", mem_dir.display())))?;
    // Landmark JSON on stdout; derived artifacts as files next to the bundle.
    emit(&mem.landmarks.to_json());
    let csv_path = mem_dir.join("voxels.csv");
    std::fs::write(&csv_path, mem.map.occupancy_csv())
        .map_err(|e| CliError::Task(format!("cannot write {}: {e}", csv_path.display())))?;
    let pgm_path = mem_dir.join("map.pgm");
    mem.grid
        .save_pgm(&pgm_path, &mem_dir.join("map.json"))
        .map_err(|e| CliError::Task(format!("cannot write {}: {e}", pgm_path.display())))?;
    eprintln!(
        "landmarks: {}   map cells: {}   map features: {}   grid: {}x{} ({} free)",
        mem.landmarks.len(),
        mem.map.cell_count(),
        mem.map.feature_count(),
        mem.grid.width,
        mem.grid.height,
        mem.grid.count(CellState::Free)
    );
    eprintln!("wrote {} and {}", csv_path.display(), pgm_path.display());
    Ok(EXIT_OK)
}
