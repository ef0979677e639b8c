use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cogcubes_core::formats::{load_prototype, write_log, write_prototype};
use cogcubes_core::{Action, CubeCoord, Outcome, Polycube, PrototypeFile, ShapeType, TaskEvent, TaskRecord};

fn cogcubes(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogcubes")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn domino_fixture(dir: &Path, events: Vec<TaskEvent>) -> (PathBuf, PathBuf) {
    let record = TaskRecord {
        task_id: "t1".into(),
        prototype_id: "domino".into(),
        participant_code: "P".into(),
        initial: Polycube::base(),
        events,
        outcome: Some(Outcome::CompletedByParticipant),
    };
    let log = dir.join("t1.jsonl");
    fs::write(&log, write_log(&record)).unwrap();
    let proto = dir.join("domino.txt");
    let file = PrototypeFile { id: Some("domino".into()), task_hint: None, cells: Polycube::from_triples([(0, 0, 0), (1, 0, 0)]) };
    fs::write(&proto, write_prototype(&file)).unwrap();
    (log, proto)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn score_prints_measures_and_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let (log, proto) = domino_fixture(tmp.path(), vec![TaskEvent::new(3.0, Action::Connect, CubeCoord::new(1, 0, 0), 1)]);
    let trace = tmp.path().join("trace.csv");
    let o = cogcubes(&["score", s(&log), s(&proto), "--trace", s(&trace)], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "similarity 100\nlast_connect 3\nderivative 16.666666666666668\nzero_crossings 0\n");
    let rows: Vec<String> = fs::read_to_string(&trace).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(rows, ["t,similarity", "0,50", "3,100"]);

    let o = cogcubes(&["--format", "csv", "score", s(&log), s(&proto)], tmp.path());
    assert_eq!(stdout(&o), "similarity,last_connect,derivative,zero_crossings\n100,3,16.666666666666668,0\n");
}

#[test]
fn score_rejects_invalid_logs_and_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cell = CubeCoord::new(1, 0, 0);
    let (log, proto) = domino_fixture(
        tmp.path(),
        vec![TaskEvent::new(1.0, Action::Connect, cell, 1), TaskEvent::new(2.0, Action::Connect, cell, 2)],
    );
    let o = cogcubes(&["score", s(&log), s(&proto)], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("CellOccupied"), "{}", stderr(&o));

    let o = cogcubes(&["score", "no-such.jsonl", s(&proto)], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_prototypes_respects_limits_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cogcubes(&["gen-prototypes", "--count", "3", "--cells", "10", "--shape", "3d", "--out", "a"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(tmp.path().join("a")).unwrap().count(), 3);

    let o = cogcubes(&["gen-prototypes", "--count", "1", "--cells", "11", "--shape", "3d"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("TooManyCubes"), "{}", stderr(&o));

    for out in ["b", "c"] {
        let o = cogcubes(&["--seed", "9", "gen-prototypes", "--count", "5", "--cells", "6", "--shape", "2d", "--out", out], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for entry in fs::read_dir(tmp.path().join("b")).unwrap() {
        let path = entry.unwrap().path();
        let file = load_prototype(&path).unwrap();
        assert_eq!(file.cells.len(), 6);
        assert_eq!(file.cells.shape_type().unwrap(), ShapeType::TwoD);
        let twin = tmp.path().join("c").join(path.file_name().unwrap());
        assert_eq!(fs::read(&path).unwrap(), fs::read(twin).unwrap());
    }
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(read_tree(&path));
        } else {
            out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

fn prototype(dir: &Path) -> PathBuf {
    let o = cogcubes(&["--seed", "3", "gen-prototypes", "--count", "1", "--cells", "6", "--shape", "3d", "--out", "protos"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    PathBuf::from(stdout(&o).trim())
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let proto = prototype(tmp.path());
    for out in ["x", "y"] {
        let o = cogcubes(
            &["--seed", "4", "--out", out, "simulate", "--prototype", s(&proto), "--agent", "monotone,erratic", "--participants", "2"],
            tmp.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).lines().count(), 4);
    }
    let x = read_tree(&tmp.path().join("x"));
    assert_eq!(x.len(), 8);
    assert_eq!(x, read_tree(&tmp.path().join("y")));
}

fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let idx = reader.headers().unwrap().iter().position(|h| h == name).unwrap();
    reader.records().map(|r| r.unwrap()[idx].to_owned()).collect()
}

#[test]
fn analyze_separates_groups_and_skips_bad_sessions() {
    let tmp = tempfile::tempdir().unwrap();
    let proto = prototype(tmp.path());
    let o = cogcubes(
        &["--out", "sessions", "simulate", "--prototype", s(&proto), "--agent", "monotone,slow", "--participants", "3"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    fs::create_dir(tmp.path().join("sessions/broken")).unwrap();
    fs::write(tmp.path().join("sessions/broken/manifest.json"), "{").unwrap();

    let o = cogcubes(&["--out", "out", "analyze", "sessions", "--by", "group"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("skipped broken"), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("rows 6\n"), "{}", stdout(&o));

    let out = tmp.path().join("out");
    let groups = csv_column(&out.join("aggregate.csv"), "group");
    let means = csv_column(&out.join("aggregate.csv"), "last_connect_mean");
    let mean = |g: &str| -> f64 { means[groups.iter().position(|x| x == g).unwrap()].parse().unwrap() };
    assert!(mean("monotone") < mean("slow"), "{means:?}");

    let events: usize = read_tree(&tmp.path().join("sessions"))
        .iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "jsonl"))
        .map(|(_, bytes)| bytes.iter().filter(|&&b| b == b'\n').count() - 1)
        .sum();
    let rows = fs::read_to_string(out.join("curves.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, events + 6);
    assert!(out.join("measures.csv").is_file() && out.join("correlations.csv").is_file());
    assert!(fs::read_dir(out.join("trees")).unwrap().count() >= 2);
}

#[test]
fn analyze_refuses_correlations_for_one_session() {
    let tmp = tempfile::tempdir().unwrap();
    let proto = prototype(tmp.path());
    let o = cogcubes(&["--out", "one", "simulate", "--prototype", s(&proto)], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cogcubes(&["--out", "out", "analyze", "one"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("not computed: TooFewSamples"), "{}", stdout(&o));
    assert!(!stdout(&o).contains(") = "), "{}", stdout(&o));
}

#[test]
fn help_documents_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &[&str]); 6] = [
        (&["--help"], &["--seed", "--out", "--format", "score", "simulate", "gen-prototypes", "analyze", "serve"]),
        (&["score", "--help"], &["--trace"]),
        (&["simulate", "--help"], &["--library", "--prototype", "--kind", "--agent", "--participants"]),
        (&["gen-prototypes", "--help"], &["--count", "--cells", "--shape"]),
        (&["analyze", "--help"], &["--by", "--scores"]),
        (&["serve", "--help"], &["--listen", "--sessions-dir", "--library", "--assessor-token", "COGCUBES_LISTEN"]),
    ];
    for (args, flags) in cases {
        let o = cogcubes(args, tmp.path());
        assert!(o.status.success());
        let text = stdout(&o);
        for flag in flags {
            assert!(text.contains(flag), "{args:?} help lacks {flag}:\n{text}");
        }
    }
}
