//! End-to-end checks of the command-line surface: golden outputs for the
//! three-part reference tree, byte-determinism of every subcommand, CSV
//! re-validation against fresh simulations, and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ckprof_core::{optimizer, parse_config, parse_tree, sim, CheckpointConfig, StaticRef};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ckprof"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn ckprof");
    assert!(
        out.status.success(),
        "ckprof {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_of(args: &[&str]) -> String {
    String::from_utf8(run_ok(args).stdout).unwrap()
}

fn exit_code(args: &[&str]) -> i32 {
    bin().args(args)
        .output()
        .expect("spawn ckprof")
        .status
        .code()
        .expect("exit code")
}

#[test]
fn simulate_prints_the_reference_numbers() {
    let tree = fixture("t1.json");
    let out = stdout_of(&["simulate", "--tree", tree.to_str().unwrap()]);
    assert_eq!(
        out,
        "time_s=21.000000000\npeak_bytes=44\nturn_bytes=44\nprimal_s=6.000000000\nslowdown=3.500000000\n"
    );

    let config = fixture("inhibit_c.cfg");
    let out = stdout_of(&[
        "simulate",
        "--tree",
        tree.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(out.starts_with("time_s=18.000000000\npeak_bytes=60\nturn_bytes=60\n"));
}

#[test]
fn event_log_is_golden() {
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("events.log");
    run_ok(&[
        "simulate",
        "--tree",
        fixture("t1.json").to_str().unwrap(),
        "--events",
        log_path.to_str().unwrap(),
    ]);
    let log = fs::read_to_string(&log_path).unwrap();
    let expected = "\
SNP_WRITE\tC\t42\t2.000000000\t14
BEGIN_ADVANCE\tC\t42\t2.500000000\t14
END_ADVANCE\tC\t42\t4.500000000\t14
TURN\t-\t-\t8.500000000\t44
SNP_READ\tC\t42\t12.500000000\t14
BEGIN_REVERSE\tC\t42\t13.000000000\t10
TURN\t-\t-\t16.000000000\t30
END_REVERSE\tC\t42\t19.000000000\t10
";
    assert_eq!(log, expected);
}

#[test]
fn optimize_walks_the_reference_trajectory() {
    let out = stdout_of(&[
        "optimize",
        "--tree",
        fixture("t1.json").to_str().unwrap(),
        "--strategy",
        "time-first",
    ]);
    assert_eq!(
        out,
        "step=0 time_s=21.000000000 peak_bytes=44 applied=-\n\
         step=1 time_s=18.000000000 peak_bytes=60 applied=C@42\n"
    );
    // A 50-byte budget blocks the only suggestion (44 + 16 > 50).
    let out = stdout_of(&[
        "optimize",
        "--tree",
        fixture("t1.json").to_str().unwrap(),
        "--strategy",
        "memory-first",
        "--budget",
        "50",
    ]);
    assert_eq!(out, "step=0 time_s=21.000000000 peak_bytes=44 applied=-\n");
}

#[test]
fn profile_reports_the_reference_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout_of(&[
        "profile",
        "--tree",
        fixture("t1.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.contains("C@42"));
    assert!(out.contains("round trip: time_s=21.000000000 turn_bytes=44 peak_bytes=44"));
    let csv = fs::read_to_string(dir.path().join("suggestions.csv")).unwrap();
    assert_eq!(
        csv,
        "ref,occurrences,category,dt_s,dtn_bytes,dpk_bytes\nC@42,1,3,-3.000000000,16,16\n"
    );
}

#[test]
fn binomial_loop_run_matches_the_library() {
    let out = stdout_of(&[
        "simulate",
        "--tree",
        fixture("loop.json").to_str().unwrap(),
        "--config",
        fixture("binomial.cfg").to_str().unwrap(),
    ]);
    let tree = parse_tree(&fs::read_to_string(fixture("loop.json")).unwrap()).unwrap();
    let config = parse_config(&fs::read_to_string(fixture("binomial.cfg")).unwrap()).unwrap();
    let cost = sim::simulate(&tree, &config).unwrap();
    assert!(out.contains(&format!("time_s={:.9}\n", cost.time_s)));
    assert!(out.contains(&format!("peak_bytes={}\n", cost.peak_bytes)));
}

#[test]
fn revolve_row_matches_the_library() {
    let out = stdout_of(&["revolve", "--l", "80", "--d", "5"]);
    let summary = ckprof_core::schedule(80, 5).unwrap().summary();
    let expected = format!(
        "l\td\tr\tE\tstores\trestores\n80\t5\t4\t{}\t{}\t{}\n",
        summary.executions, summary.stores, summary.restores
    );
    assert_eq!(out, expected);
}

#[test]
fn gen_emits_a_parseable_tree_with_the_requested_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "gen",
        "--seed",
        "7",
        "--n-calls",
        "85",
        "--max-depth",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let doc = fs::read_to_string(dir.path().join("tree.json")).unwrap();
    let tree = parse_tree(&doc).unwrap();
    assert_eq!(tree.call_refs().len(), 85);
}

#[test]
fn random_emits_exactly_n_rows_on_the_large_tree() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "gen",
        "--seed",
        "7",
        "--n-calls",
        "85",
        "--max-depth",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let tree_path = dir.path().join("tree.json");
    let out = stdout_of(&[
        "random",
        "--tree",
        tree_path.to_str().unwrap(),
        "--n",
        "250",
        "--seed",
        "1",
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "config_id,time_s,peak_bytes");
    assert_eq!(lines.len(), 251);
}

#[test]
fn csv_outputs_revalidate_against_fresh_simulations() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let tree_path = fixture("t1.json");
    let tree = parse_tree(&fs::read_to_string(&tree_path).unwrap()).unwrap();

    // Trajectory: accumulate the applied column and re-simulate each row.
    run_ok(&[
        "optimize",
        "--tree",
        tree_path.to_str().unwrap(),
        "--strategy",
        "time-first",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let trajectory = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    let mut config = CheckpointConfig::default();
    for line in trajectory.lines().skip(1) {
        let fields: Vec<&str> = line.splitn(4, ',').collect();
        let time: f64 = fields[1].parse().unwrap();
        let peak: u64 = fields[2].parse().unwrap();
        for token in fields[3].split(';').filter(|t| !t.is_empty()) {
            config.inhibited.insert(token.parse::<StaticRef>().unwrap());
        }
        let cost = sim::simulate(&tree, &config).unwrap();
        assert!((cost.time_s - time).abs() < 1e-8, "trajectory row {line:?}");
        assert_eq!(cost.peak_bytes, peak);
    }

    // Pareto: each row's config cell re-simulates to the row's values.
    run_ok(&[
        "pareto",
        "--tree",
        tree_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let front = fs::read_to_string(out_dir.join("pareto.csv")).unwrap();
    for line in front.lines().skip(1) {
        let fields: Vec<&str> = line.splitn(3, ',').collect();
        let time: f64 = fields[0].parse().unwrap();
        let peak: u64 = fields[1].parse().unwrap();
        let mut config = CheckpointConfig::default();
        for token in fields[2].split(';').filter(|t| !t.is_empty()) {
            config.inhibited.insert(token.parse::<StaticRef>().unwrap());
        }
        let cost = sim::simulate(&tree, &config).unwrap();
        assert!((cost.time_s - time).abs() < 1e-8, "pareto row {line:?}");
        assert_eq!(cost.peak_bytes, peak);
    }

    // Scatter: the sampler with the same seed reproduces every row.
    run_ok(&[
        "random",
        "--tree",
        tree_path.to_str().unwrap(),
        "--n",
        "16",
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let scatter = fs::read_to_string(out_dir.join("scatter.csv")).unwrap();
    let rows = optimizer::random_configs(&tree, &CheckpointConfig::default(), 16, 3).unwrap();
    for (line, (_, cost)) in scatter.lines().skip(1).zip(&rows) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], format!("{:.9}", cost.time_s));
        assert_eq!(fields[2], cost.peak_bytes.to_string());
    }
    assert_eq!(scatter.lines().count(), 17);
}

/// Repeated runs of every subcommand with fixed seeds must be
/// byte-identical, files and stdout alike.
#[test]
fn acceptance_determinism_of_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let gen_dir = dir.path().join("gen");
    fs::create_dir_all(&out_dir).unwrap();

    run_ok(&[
        "gen",
        "--seed",
        "5",
        "--n-calls",
        "9",
        "--max-depth",
        "2",
        "--out",
        gen_dir.to_str().unwrap(),
    ]);
    let gen_tree = gen_dir.join("tree.json");
    let t1 = fixture("t1.json");
    let loop_tree = fixture("loop.json");
    let binomial_cfg = fixture("binomial.cfg");
    let events_log = out_dir.join("events.log");

    let invocations: Vec<Vec<String>> = vec![
        vec![
            "simulate".into(),
            "--tree".into(),
            loop_tree.to_str().unwrap().into(),
            "--config".into(),
            binomial_cfg.to_str().unwrap().into(),
            "--events".into(),
            events_log.to_str().unwrap().into(),
        ],
        vec![
            "profile".into(),
            "--tree".into(),
            gen_tree.to_str().unwrap().into(),
            "--out".into(),
            out_dir.to_str().unwrap().into(),
        ],
        vec![
            "optimize".into(),
            "--tree".into(),
            gen_tree.to_str().unwrap().into(),
            "--strategy".into(),
            "memory-first".into(),
            "--out".into(),
            out_dir.to_str().unwrap().into(),
        ],
        vec![
            "random".into(),
            "--tree".into(),
            gen_tree.to_str().unwrap().into(),
            "--n".into(),
            "40".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            out_dir.to_str().unwrap().into(),
        ],
        vec![
            "pareto".into(),
            "--tree".into(),
            gen_tree.to_str().unwrap().into(),
            "--out".into(),
            out_dir.to_str().unwrap().into(),
        ],
        vec!["revolve".into(), "--l".into(), "64".into(), "--d".into(), "4".into()],
        vec![
            "gen".into(),
            "--seed".into(),
            "5".into(),
            "--n-calls".into(),
            "9".into(),
            "--max-depth".into(),
            "2".into(),
            "--out".into(),
            gen_dir.to_str().unwrap().into(),
        ],
        vec![
            "experiment".into(),
            "fig6".into(),
            "--out".into(),
            out_dir.join("fig6").to_str().unwrap().into(),
            "--seed".into(),
            "2".into(),
            "--n-calls".into(),
            "12".into(),
            "--n-random".into(),
            "60".into(),
        ],
        vec!["simulate".into(), "--tree".into(), t1.to_str().unwrap().into()],
    ];

    let snapshot = |root: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    files.push((
                        path.strip_prefix(root).unwrap().display().to_string(),
                        fs::read(&path).unwrap(),
                    ));
                }
            }
        }
        files.sort();
        files
    };

    for args in &invocations {
        let argv: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let first = run_ok(&argv);
        let first_files = snapshot(dir.path());
        let second = run_ok(&argv);
        let second_files = snapshot(dir.path());
        assert_eq!(
            first.stdout, second.stdout,
            "stdout of {argv:?} is not reproducible"
        );
        assert_eq!(
            first_files.iter().map(|(n, _)| n).collect::<Vec<_>>(),
            second_files.iter().map(|(n, _)| n).collect::<Vec<_>>(),
            "file set of {argv:?} changed between runs"
        );
        for ((name, a), (_, b)) in first_files.iter().zip(&second_files) {
            assert_eq!(a, b, "{name} differs after rerunning {argv:?}");
        }
    }
    println!("ACCEPTANCE determinism of every subcommand: PASS");
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    // 3: unreadable input file.
    assert_eq!(
        exit_code(&["simulate", "--tree", "/nonexistent/tree.json"]),
        3
    );
    // 4: malformed documents.
    let dir = tempfile::tempdir().unwrap();
    let bad_tree = dir.path().join("bad.json");
    fs::write(&bad_tree, "{\"name\": \"x\", \"items\": [{\"seg\": {}}]}").unwrap();
    assert_eq!(exit_code(&["simulate", "--tree", bad_tree.to_str().unwrap()]), 4);
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "frobnicate all").unwrap();
    assert_eq!(
        exit_code(&[
            "simulate",
            "--tree",
            fixture("t1.json").to_str().unwrap(),
            "--config",
            bad_cfg.to_str().unwrap(),
        ]),
        4
    );
    // 5: domain errors: unknown loop id, guard violation, bad revolve args.
    assert_eq!(
        exit_code(&[
            "simulate",
            "--tree",
            fixture("t1.json").to_str().unwrap(),
            "--config",
            fixture("binomial.cfg").to_str().unwrap(),
        ]),
        5
    );
    assert_eq!(
        exit_code(&[
            "pareto",
            "--tree",
            fixture("t1.json").to_str().unwrap(),
            "--guard",
            "0",
        ]),
        5
    );
    assert_eq!(exit_code(&["revolve", "--l", "0", "--d", "2"]), 5);
    // 2: usage errors, straight from the argument parser.
    assert_eq!(exit_code(&["simulate"]), 2);
    assert_eq!(exit_code(&["no-such-command"]), 2);
}

#[test]
fn experiment_fig6_produces_the_whole_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout_of(&[
        "experiment",
        "fig6",
        "--out",
        dir.path().to_str().unwrap(),
        "--seed",
        "3",
        "--n-calls",
        "10",
        "--n-random",
        "30",
    ]);
    for name in [
        "tree.json",
        "scatter.csv",
        "trajectory_time_first.csv",
        "trajectory_memory_first.csv",
        "pareto.csv",
    ] {
        assert!(dir.path().join(name).exists(), "missing {name}:\n{out}");
    }
    // Above the guard the front is skipped, with a note.
    let big = tempfile::tempdir().unwrap();
    let out = stdout_of(&[
        "experiment",
        "fig6",
        "--out",
        big.path().to_str().unwrap(),
        "--seed",
        "3",
        "--n-calls",
        "25",
        "--n-random",
        "10",
    ]);
    assert!(!big.path().join("pareto.csv").exists());
    assert!(out.contains("pareto skipped"));
}
