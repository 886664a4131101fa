use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use intensity_reloc::mapdb::load_database;

fn reloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reloc"))
        .args(args)
        .output()
        .expect("failed to spawn reloc")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SYNTH: &str = r#"
n_poses = 12
n_queries = 3

[scene]
seed = 4
extent = [22.0, 10.0, 8.0]

[query]
trans_sigma_m = 0.1
rot_sigma_deg = 1.0
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn db(&self) -> PathBuf {
        self.dir.path().join("db")
    }
}

/// A synthesized dataset and its database, shared by the tests below.
fn workspace() -> &'static Workspace {
    static W: OnceLock<Workspace> = OnceLock::new();
    W.get_or_init(|| {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        let cfg = ws.dir.path().join("synth.toml");
        std::fs::write(&cfg, SYNTH).unwrap();
        let out = reloc(&["synth", "--out", s(&ws.data()), "--config", s(&cfg)]);
        assert!(out.status.success(), "{}", stderr(&out));
        let data = ws.data();
        let out = reloc(&[
            "build-db",
            "--map",
            s(&data.join("map.ply")),
            "--traj",
            s(&data.join("traj.txt")),
            "--out",
            s(&ws.db()),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stdout(&out).contains("images 12"), "{}", stdout(&out));
        ws
    })
}

#[test]
fn synth_build_relocalize_evaluate() {
    let ws = workspace();
    let data = ws.data();
    let k = data.join("intrinsics.cfg");
    let queries = data.join("queries");
    let out = reloc(&["relocalize", "--db", s(&ws.db()), "--intrinsics", s(&k), s(&queries)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let ok = text.lines().filter(|l| l.starts_with("OK ")).count();
    assert_eq!(ok, 3, "{text}");
    let results = ws.dir.path().join("results.txt");
    std::fs::write(&results, &text).unwrap();

    let out = reloc(&["retrieve", "--db", s(&ws.db()), "--intrinsics", s(&k), s(&queries)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("# selected")).count(), 3);
    let retrieval = ws.dir.path().join("retrieval.txt");
    std::fs::write(&retrieval, stdout(&out)).unwrap();

    let report_dir = ws.dir.path().join("report");
    std::fs::create_dir_all(&report_dir).unwrap();
    let out = reloc(&[
        "evaluate",
        "--results",
        s(&results),
        "--gt",
        s(&data.join("gt.txt")),
        "--retrieval",
        s(&retrieval),
        "--db",
        s(&ws.db()),
        "--out",
        s(&report_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("R@1 "), "{text}");
    assert!(text.contains("RR(1m/3deg) 1.000"), "{text}");

    let tsv = std::fs::read_to_string(report_dir.join("report.tsv")).unwrap();
    let blocks: Vec<&str> = tsv.split("\n\n").collect();
    assert_eq!(blocks.len(), 3, "{tsv}");
    assert!(blocks[0].starts_with("K\tR@K\n1\t"));
    assert_eq!(blocks[0].lines().count(), 5);
    let rr: Vec<&str> = blocks[1].lines().collect();
    assert_eq!(rr[0], "trans_m\trot_deg\tRR");
    assert_eq!(&rr[1..].iter().map(|l| l.rsplit_once('\t').unwrap().0).collect::<Vec<_>>(), &["0.5\t1", "1\t3", "3\t5"]);
    let stats: Vec<&str> = blocks[2].lines().collect();
    assert_eq!(stats[0], "rmse\tmse\tmae\tmax");
    assert_eq!(stats[1].split('\t').count(), 4);
}

#[test]
fn missing_trajectory_is_an_input_error() {
    let ws = workspace();
    let missing = ws.dir.path().join("nowhere").join("traj.txt");
    let out = reloc(&[
        "build-db",
        "--map",
        s(&ws.data().join("map.ply")),
        "--traj",
        s(&missing),
        "--out",
        s(&ws.dir.path().join("db2")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(s(&missing)), "{}", stderr(&out));
}

#[test]
fn no_equalization_reaches_the_database() {
    let ws = workspace();
    let db2 = ws.dir.path().join("db_raw");
    let out = reloc(&[
        "build-db",
        "--map",
        s(&ws.data().join("map.ply")),
        "--traj",
        s(&ws.data().join("traj.txt")),
        "--out",
        s(&db2),
        "--no-equalization",
        "--set",
        "projection.face_size=96",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let db = load_database(&db2).unwrap();
    assert!(!db.config.ablation.use_equalization);
    assert!(db.config.ablation.use_hec);
    assert_eq!(db.images[0].width(), 4 * 96);
}

#[test]
fn noise_query_fails_and_dump_matches_writes_files() {
    let ws = workspace();
    let dir = ws.dir.path().join("noise");
    std::fs::create_dir_all(&dir).unwrap();
    let k = intensity_reloc::io::load_intrinsics(&ws.data().join("intrinsics.cfg")).unwrap();
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let noise = intensity_reloc::GrayImage::from_fn(k.width, k.height, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 56) as u8
    });
    intensity_reloc::io::save_pgm(&dir.join("7.pgm"), &noise).unwrap();
    let real = ws.data().join("queries").join("0001.pgm");
    let dump = ws.dir.path().join("dump");
    let out = reloc(&[
        "relocalize",
        "--db",
        s(&ws.db()),
        "--intrinsics",
        s(&ws.data().join("intrinsics.cfg")),
        "--dump-matches",
        s(&dump),
        s(&dir.join("7.pgm")),
        s(&real),
        s(&dir.join("absent.pgm")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# query 7");
    assert!(lines[1].starts_with("FAILED nan"), "{text}");
    assert_eq!(lines[2], "# query 1");
    assert!(lines[3].starts_with("OK "), "{text}");
    assert!(lines[5].starts_with("FAILED"), "{text}");
    let corrs = std::fs::read_to_string(dump.join("0001").join("corrs.txt")).unwrap();
    assert!(corrs.lines().filter(|l| !l.starts_with('#')).count() >= 20);
    let pgms = std::fs::read_dir(dump.join("0001"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert!(pgms >= 1);
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn evaluate(results: &Path, gt: &Path, out: &Path) -> Output {
    reloc(&["evaluate", "--results", s(results), "--gt", s(gt), "--out", s(out)])
}

/// Rotation about z by `deg`, as `qx qy qz qw`.
fn yaw_q(deg: f64) -> String {
    let h = deg.to_radians() / 2.0;
    format!("0 0 {} {}", h.sin(), h.cos())
}

#[test]
fn four_result_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let gt = write(dir.path(), "gt.txt", &(0..4).map(|i| format!("{i} 0 0 0 0 0 0 1\n")).collect::<String>());
    let mut results = String::new();
    for (i, (t, r)) in [(0.2, 0.5), (0.8, 2.0), (2.0, 4.0), (10.0, 1.0)].iter().enumerate() {
        results += &format!("# query {i}\nOK {t} 0 0 {} 100 0.5 1.0\n", yaw_q(*r));
    }
    let results = write(dir.path(), "results.txt", &results);
    let out = evaluate(&results, &gt, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("RR(0.5m/1deg) 0.250"), "{text}");
    assert!(text.contains("RR(1m/3deg) 0.500"), "{text}");
    assert!(text.contains("RR(3m/5deg) 0.750"), "{text}");
    assert!(text.contains("MAE 1.0000"), "{text}");
    assert!(text.contains("Max Error 2.0000"), "{text}");
    let tsv = std::fs::read_to_string(dir.path().join("report.tsv")).unwrap();
    assert!(tsv.contains("0.5\t1\t0.25\n1\t3\t0.5\n3\t5\t0.75\n"), "{tsv}");
}

#[test]
fn empty_results_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let gt = write(dir.path(), "gt.txt", "0 0 0 0 0 0 0 1\n");
    let results = write(dir.path(), "results.txt", "");
    assert_eq!(evaluate(&results, &gt, dir.path()).status.code(), Some(2));
}

#[test]
fn unknown_query_id_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let gt = write(dir.path(), "gt.txt", "0 0 0 0 0 0 0 1\n");
    let results = write(dir.path(), "results.txt", "# query 5\nOK 0 0 0 0 0 0 1 50 0.9 1.0\n");
    let out = evaluate(&results, &gt, dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn bad_override_exit_2() {
    let ws = workspace();
    let out = reloc(&[
        "relocalize",
        "--db",
        s(&ws.db()),
        "--intrinsics",
        s(&ws.data().join("intrinsics.cfg")),
        "--set",
        "retrieval.no_such_key=3",
        s(&ws.data().join("queries")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
