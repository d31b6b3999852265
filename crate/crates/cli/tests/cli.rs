use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mobl_cli::commands::execute;
use mobl_cli::config::{parse, resolve};
use mobl_cli::trace_io::{assemble_trace, read_trace, RunRecord};

fn mobl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobl"))
        .args(args)
        .current_dir(dir)
        .env_remove("MOBL_SEED")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const PRESET: &str = "\
[problem]
family = \"quadratic\"
p = 10
q = 10
s = 3
seed = 1

[preference]
pattern = \"preferred\"
index = 1
";

const SMALL: &str = "\
[problem]
family = \"quadratic\"
p = 3
q = 4
s = 2
seed = 2

[solver]
outer_iters = 20
option = \"cg\"
cg_iters = 4

[preference]
pattern = \"uniform\"
";

const TOY: &str = "\
[problem]
family = \"hypercleaning\"
feature_dim = 3
n_train = 12
n_val = 12
corruption = [0.0, 0.3]
seed = 3

[solver]
algorithm = \"stochastic\"
outer_iters = 8
inner_iters = 10
ul_step = 1.0
ll_batch = 4
ul_batch = 4
jacobian_batch = 4
hessian_batch = 4
seed = 5

[preference]
weights = [0.3, 0.7]
";

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn preset_run_writes_five_hundred_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", PRESET);
    let out = mobl(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = lines(&tmp.path().join("out/trace.csv"));
    assert_eq!(rows.len(), 501);
    assert!(rows[0].starts_with("k,phi_1,phi_2,phi_3,lambda_1"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final phi"), "{stdout}");
    assert!(
        stdout.contains("counters: gc_f=3000 gc_g=16000"),
        "{stdout}"
    );

    let record: RunRecord =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/run.json")).unwrap())
            .unwrap();
    assert_eq!(record.status, "ok");
    assert_eq!(record.config.solver.outer_iters, 500);
    assert_eq!(record.config.solver.inner_iters, 32);
    assert_eq!(record.config.solver.tradeoff, 10.0);
    assert!(record.wall_time_s.is_none());
}

#[test]
fn zero_iterations_give_header_only_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", SMALL);
    let out = mobl(
        tmp.path(),
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "solver.outer_iters=0",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(lines(&tmp.path().join("out/trace.csv")).len(), 1);
    let record: RunRecord =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/run.json")).unwrap())
            .unwrap();
    assert_eq!(record.counters.gc_f + record.counters.gc_g, 0);
    assert_eq!(record.counters.jv_g + record.counters.hv_g, 0);
    assert_eq!(record.iterations, 0);
}

#[test]
fn indefinite_matrix_is_a_config_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "\
[problem]
family = \"quadratic\"
p = 2
q = 2
s = 2
a = [[2.0, 0.0], [0.0, -0.5]]

[preference]
pattern = \"uniform\"
";
    let cfg = write(tmp.path(), "bad.toml", text);
    let out = mobl(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("bad.toml:6: problem.a"), "{msg}");
    assert!(msg.contains("positive definite"), "{msg}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn syntax_errors_exit_two_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.toml",
        "[problem]\nfamily = \"quadratic\"\n\n[solver\n",
    );
    let out = mobl(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.toml:4"), "{}", stderr(&out));

    let out = mobl(tmp.path(), &["run", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverging_run_exits_one_with_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", SMALL);
    let out = mobl(
        tmp.path(),
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "solver.ll_step=1e6",
        ],
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let record: RunRecord =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/run.json")).unwrap())
            .unwrap();
    assert_eq!(record.status, "failed");
    assert!(record.iterations < 20);
    assert_eq!(
        lines(&tmp.path().join("out/trace.csv")).len(),
        record.iterations + 1
    );
    assert!(record.error.unwrap().contains("not finite"));
    assert!(stderr(&out).contains("run aborted"));
}

fn round_trip(text: &str) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", text);
    let out = mobl(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let loaded = parse(text, "run.toml", &[], None).unwrap();
    let expected = execute(&resolve(&loaded, None).unwrap()).unwrap();
    let rows = read_trace(std::fs::File::open(tmp.path().join("out/trace.csv")).unwrap()).unwrap();
    let record: RunRecord =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/run.json")).unwrap())
            .unwrap();
    let back = assemble_trace(rows, &record).unwrap();
    assert_eq!(back, expected);
}

#[test]
fn deterministic_trace_round_trips_exactly() {
    round_trip(SMALL);
}

#[test]
fn stochastic_trace_round_trips_exactly() {
    round_trip(TOY);
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn repeated_commands_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = write(tmp.path(), "toy.toml", TOY);
    let small = write(tmp.path(), "small.toml", SMALL);
    let commands: Vec<Vec<&str>> = vec![
        vec!["run", "--config", toy.to_str().unwrap()],
        vec![
            "sweep",
            "--config",
            small.to_str().unwrap(),
            "--grid",
            "r1:0.2,0.5,0.8",
            "--jobs",
            "3",
        ],
    ];
    for args in commands {
        let _ = std::fs::remove_dir_all(tmp.path().join("out"));
        assert!(mobl(tmp.path(), &args).status.success());
        let first = snapshot(&tmp.path().join("out"));
        std::fs::remove_dir_all(tmp.path().join("out")).unwrap();
        assert!(mobl(tmp.path(), &args).status.success());
        let second = snapshot(&tmp.path().join("out"));
        assert!(!first.is_empty());
        assert_eq!(first, second, "{args:?}");
    }
}

#[test]
fn seed_variable_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "toy.toml", TOY);
    let run = |seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mobl"));
        c.args(["run", "--config", cfg.to_str().unwrap()])
            .current_dir(tmp.path());
        match seed {
            Some(s) => c.env("MOBL_SEED", s),
            None => c.env_remove("MOBL_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        let r: RunRecord = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join("out/run.json")).unwrap(),
        )
        .unwrap();
        r
    };
    let base = run(None);
    let reseeded = run(Some("42"));
    assert_eq!(reseeded.config.solver.seed, 42);
    assert_ne!(base.final_x, reseeded.final_x);
}

#[test]
fn sweep_over_five_objectives() {
    let tmp = tempfile::tempdir().unwrap();
    let text = PRESET
        .replace("s = 3", "s = 5")
        .replace("p = 10\nq = 10", "p = 4\nq = 4");
    let cfg = write(tmp.path(), "sweep.toml", &text);
    let out = mobl(
        tmp.path(),
        &[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--grid",
            "preferred",
            "--set",
            "solver.outer_iters=30",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = lines(&tmp.path().join("out/summary.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("run,r_1,r_2,r_3,r_4,r_5,phi_1"));
    for i in 0..5 {
        assert!(tmp
            .path()
            .join(format!("out/traces/run_{i:03}.csv"))
            .exists());
        assert!(tmp
            .path()
            .join(format!("out/traces/run_{i:03}.json"))
            .exists());
    }
}

#[test]
fn single_uniform_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let c = cfg.to_str().unwrap();
    assert!(mobl(tmp.path(), &["run", "--config", c]).status.success());
    let out = mobl(tmp.path(), &["sweep", "--config", c, "--grid", "uniform"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run_trace = std::fs::read(tmp.path().join("out/trace.csv")).unwrap();
    let sweep_trace = std::fs::read(tmp.path().join("out/traces/run_000.csv")).unwrap();
    assert_eq!(run_trace, sweep_trace);

    let last = lines(&tmp.path().join("out/trace.csv")).pop().unwrap();
    let last: Vec<&str> = last.split(',').collect();
    let summary = lines(&tmp.path().join("out/summary.csv"));
    assert_eq!(summary.len(), 2);
    let row: Vec<&str> = summary[1].split(',').collect();
    // phi_1, phi_2 and d_norm_sq
    assert_eq!(&row[3..5], &last[1..3]);
    assert_eq!(row[5], last[5]);
}

#[test]
fn two_objective_front_is_ordered() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let out = mobl(
        tmp.path(),
        &[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--grid",
            "r1:0.1,0.3,0.5,0.7,0.9",
            "--jobs",
            "2",
            "--set",
            "solver.outer_iters=400",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let phi1: Vec<f64> = lines(&tmp.path().join("out/summary.csv"))[1..]
        .iter()
        .map(|r| r.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    for w in phi1.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{phi1:?}");
    }
}

#[test]
fn bad_grid_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let out = mobl(
        tmp.path(),
        &[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--grid",
            "r1:1.5",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--grid"));
}

#[test]
fn verify_quick_passes_and_fault_is_caught() {
    let tmp = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let out = mobl(tmp.path(), &["verify"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(start.elapsed().as_secs() < 60);

    let out = mobl(tmp.path(), &["verify", "--inject-fault", "asymmetric-hvp"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL oracle_validation"), "{stdout}");
    assert!(stderr(&out).contains("hvp_symmetry"));
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = std::fs::read_to_string(&path).unwrap();
            let loaded = parse(&text, &path.display().to_string(), &[], None).unwrap();
            resolve(&loaded, None).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
