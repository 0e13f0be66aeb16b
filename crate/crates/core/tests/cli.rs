//! End-to-end smoke tests for the command-line binary: explore a scene,
//! navigate from the saved memories, inspect the bundle, and check the
//! documented exit codes.

use std::path::Path;
use std::process::Command;

fn navmem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_navmem"))
}

fn json_stdout(output: &std::process::Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&output.stdout);
    serde_json::from_str(&text)
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {text}"))
}

#[test]
fn explore_navigate_inspect_round_trip() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mem = dir.path().join("mem");

    // Explore a generated scene and persist the memories.
    let explore = navmem()
        .args(["explore", "seed:42", "--seed", "42", "--out"])
        .arg(&mem)
        .output()
        .expect("explore runs");
    assert!(explore.status.success(), "explore failed: {}", String::from_utf8_lossy(&explore.stderr));
    let summary = json_stdout(&explore);
    assert!(summary["landmarks"].as_u64().unwrap_or(0) > 0, "exploration found no landmarks");
    assert!(summary["known_free_cells"].as_u64().unwrap_or(0) > 0);
    for file in ["landmarks.json", "cogmap.bscm", "grid.pgm", "grid.json", "scene.json", "exploration.svg"] {
        assert!(mem.join(file).exists(), "missing {file}");
    }

    // Navigate to a category that exists in scene 42.
    let landmarks: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(mem.join("landmarks.json")).expect("landmarks readable"),
    )
    .expect("landmark JSON parses");
    let category = landmarks["landmarks"][0]["category"]
        .as_str()
        .expect("at least one landmark")
        .to_string();
    let navigate = navmem()
        .args(["navigate", "seed:42", "--seed", "9", "--mem"])
        .arg(&mem)
        .args(["--goal", &format!("category:{category}")])
        .output()
        .expect("navigate runs");
    assert!(
        navigate.status.success(),
        "navigate to {category} failed: {}",
        String::from_utf8_lossy(&navigate.stderr)
    );
    let result = json_stdout(&navigate);
    assert_eq!(result["success"], serde_json::Value::Bool(true));
    assert!(result["steps"].as_u64().unwrap_or(0) > 0);

    // Inspect prints the landmark store and writes sidecar dumps.
    let inspect = navmem().arg("inspect").arg(&mem).output().expect("inspect runs");
    assert!(inspect.status.success());
    let dump = json_stdout(&inspect);
    assert!(dump["landmarks"].as_array().map_or(false, |a| !a.is_empty()));
    assert!(mem.join("voxels.csv").exists());
    assert!(mem.join("map.pgm").exists());
}

#[test]
fn navigate_failure_exits_one() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mem = dir.path().join("mem");
    let explore = navmem()
        .args(["explore", "seed:42", "--seed", "42", "--out"])
        .arg(&mem)
        .output()
        .expect("explore runs");
    assert!(explore.status.success());

    // A category absent from every scene: retrieval comes up empty and the
    // episode is a task failure, not a usage error.
    let navigate = navmem()
        .args(["navigate", "seed:42", "--seed", "9", "--mem"])
        .arg(&mem)
        .args(["--goal", "category:submarine"])
        .output()
        .expect("navigate runs");
    assert_eq!(navigate.status.code(), Some(1), "task failure must exit 1");
    let result = json_stdout(&navigate);
    assert_eq!(result["success"], serde_json::Value::Bool(false));
}

#[test]
fn config_errors_exit_two() {
    // Missing memory bundle directory.
    let navigate = navmem()
        .args(["navigate", "seed:42", "--mem", "/nonexistent/place", "--goal", "category:sofa"])
        .output()
        .expect("navigate runs");
    assert_eq!(navigate.status.code(), Some(2), "bad bundle must exit 2");

    // Malformed goal prefix.
    let dir = tempfile::tempdir().expect("tempdir");
    let mem = dir.path().join("mem");
    let explore = navmem()
        .args(["explore", "seed:42", "--seed", "42", "--out"])
        .arg(&mem)
        .output()
        .expect("explore runs");
    assert!(explore.status.success());
    let navigate = navmem()
        .args(["navigate", "seed:42", "--mem"])
        .arg(&mem)
        .args(["--goal", "riddle:what walks on four legs"])
        .output()
        .expect("navigate runs");
    assert_eq!(navigate.status.code(), Some(2), "unknown goal kind must exit 2");

    // Unparseable scene argument.
    let explore = navmem()
        .args(["explore", "seed:notanumber", "--out"])
        .arg(dir.path().join("other"))
        .output()
        .expect("explore runs");
    assert_eq!(explore.status.code(), Some(2), "bad scene spec must exit 2");
}

#[test]
fn bench_runs_a_small_suite() {
    let dir = tempfile::tempdir().expect("tempdir");
    let suite = dir.path().join("suite.json");
    std::fs::write(
        &suite,
        serde_json::json!({
            "scene_seeds": [11, 12],
            "goals_per_scene": 1,
            "seed": 3,
            "workers": 2
        })
        .to_string(),
    )
    .expect("suite written");
    let out = dir.path().join("bench");
    let bench = navmem()
        .arg("bench")
        .arg(&suite)
        .arg("--out")
        .arg(&out)
        .output()
        .expect("bench runs");
    assert!(bench.status.success(), "bench failed: {}", String::from_utf8_lossy(&bench.stderr));
    let text = String::from_utf8_lossy(&bench.stdout);
    assert!(text.contains("overall"), "summary must mention overall metrics: {text}");
    assert!(Path::new(&out).join("report.json").exists());
    assert!(Path::new(&out).join("report.csv").exists());
    assert!(Path::new(&out).join("metrics.svg").exists());
}
