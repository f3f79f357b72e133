use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rrt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrt"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn write_data(dir: &Path) {
    let mut s = String::from("x1,x2,y\n");
    for i in 0..60 {
        let x1 = ((i * 37) % 60) as f64 / 30.0 - 1.0;
        let x2 = ((i * 11) % 60) as f64 / 60.0;
        let y = if x1 > 0.0 { 3.0 } else { 0.0 } + ((i * 7919) % 13) as f64 / 6.5 - 1.0;
        s.push_str(&format!("{x1},{x2},{y}\n"));
    }
    fs::write(dir.join("d.csv"), s).unwrap();
}

#[test]
fn fit_then_infer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_data(d);
    let out = rrt(
        &[
            "fit",
            "--data",
            "d.csv",
            "--response",
            "y",
            "--seed",
            "3",
            "--sigma",
            "1",
            "--out",
            "t.json",
        ],
        d,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rendering = String::from_utf8(out.stdout).unwrap();
    assert!(rendering.starts_with("root n=60"));
    assert!(rendering.contains("[leaf 0]"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("t.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);

    let out = rrt(
        &[
            "infer",
            "--tree",
            "t.json",
            "--data",
            "d.csv",
            "--response",
            "y",
            "--sigma",
            "1",
            "--out",
            "ci.csv",
        ],
        d,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut rdr = csv::Reader::from_path(d.join("ci.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[0], "leaf");
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert!(!rows.is_empty());
    for r in &rows {
        let (lo, est, hi): (f64, f64, f64) = (
            r[4].parse().unwrap(),
            r[3].parse().unwrap(),
            r[5].parse().unwrap(),
        );
        assert!(lo < hi && est.is_finite());
        assert_eq!(&r[7], "conditioned(r=1)");
    }

    // deterministic given the seed
    rrt(
        &[
            "fit",
            "--data",
            "d.csv",
            "--response",
            "y",
            "--seed",
            "3",
            "--sigma",
            "1",
            "--out",
            "t2.json",
        ],
        d,
    );
    let a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("t.json")).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("t2.json")).unwrap()).unwrap();
    assert_eq!(a["tree"], b["tree"]);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_data(d);
    assert_eq!(
        rrt(
            &[
                "fit",
                "--data",
                "d.csv",
                "--response",
                "nope",
                "--seed",
                "1",
                "--out",
                "t.json"
            ],
            d
        )
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        rrt(
            &[
                "fit",
                "--data",
                "d.csv",
                "--response",
                "y",
                "--out",
                "t.json"
            ],
            d
        )
        .status
        .code(),
        Some(2)
    );
    // tau defaults to sigma, so one of them is needed
    assert_eq!(
        rrt(
            &[
                "fit",
                "--data",
                "d.csv",
                "--response",
                "y",
                "--seed",
                "1",
                "--out",
                "t.json"
            ],
            d
        )
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        rrt(
            &[
                "fit",
                "--data",
                "d.csv",
                "--response",
                "y",
                "--seed",
                "1",
                "--sigma",
                "1",
                "--out",
                "t.json"
            ],
            d
        )
        .status
        .code(),
        Some(0)
    );
    // no sigma
    assert_eq!(
        rrt(
            &[
                "infer",
                "--tree",
                "t.json",
                "--data",
                "d.csv",
                "--response",
                "y"
            ],
            d
        )
        .status
        .code(),
        Some(2)
    );
    // tampered data
    let text = fs::read_to_string(d.join("d.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[1].push('1');
    fs::write(d.join("e.csv"), lines.join("\n") + "\n").unwrap();
    let out = rrt(
        &[
            "infer",
            "--tree",
            "t.json",
            "--data",
            "e.csv",
            "--response",
            "y",
            "--sigma",
            "1",
        ],
        d,
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // fixed depth is the lambda = -inf threshold rule
    assert_eq!(
        rrt(
            &[
                "infer",
                "--tree",
                "t.json",
                "--data",
                "d.csv",
                "--response",
                "y",
                "--sigma",
                "1",
                "--variant",
                "threshold"
            ],
            d
        )
        .status
        .code(),
        Some(0)
    );
    fs::write(d.join("bad.json"), "{\"schema\": \"other/9\"}").unwrap();
    assert_eq!(
        rrt(
            &[
                "infer",
                "--tree",
                "bad.json",
                "--data",
                "d.csv",
                "--response",
                "y",
                "--sigma",
                "1"
            ],
            d
        )
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        rrt(&["simulate", "--preset", "nope", "--out", "s"], d)
            .status
            .code(),
        Some(2)
    );
    assert_eq!(rrt(&["bogus"], d).status.code(), Some(2));
}

#[test]
fn config_file_and_tau_mult() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_data(d);
    fs::write(
        d.join("grow.toml"),
        "seed = 5\nmax_depth = 1\nmin_split_size = 10\nmin_leaf_size = 5\n",
    )
    .unwrap();
    let out = rrt(
        &[
            "fit",
            "--data",
            "d.csv",
            "--response",
            "y",
            "--config",
            "grow.toml",
            "--sigma",
            "2",
            "--tau-mult",
            "0.5",
            "--out",
            "t.json",
        ],
        d,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("t.json")).unwrap()).unwrap();
    assert_eq!(doc["tree"]["seed"], 5);
    let nodes = doc["tree"]["nodes"].as_array().unwrap();
    assert_eq!(nodes[0]["trace"]["tau"], 1.0);
    assert!(nodes.iter().all(|n| n["depth"].as_u64().unwrap() <= 1));
    fs::write(d.join("bad.toml"), "sead = 5\n").unwrap();
    assert_eq!(
        rrt(
            &[
                "fit",
                "--data",
                "d.csv",
                "--response",
                "y",
                "--config",
                "bad.toml",
                "--out",
                "t.json"
            ],
            d
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn simulate_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = rrt(
        &["simulate", "--preset", "smoke", "--reps", "3", "--out", "s"],
        d,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("3/3"));
    for f in [
        "s.csv",
        "s.summary.json",
        "s.figure.csv",
        "s.summary.json.manifest.json",
    ] {
        assert!(d.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("s.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema"], "rrt.simulation-summary/1");

    fs::write(d.join("cfg.toml"), ExperimentToml::text()).unwrap();
    let out = rrt(&["simulate", "--config", "cfg.toml", "--out", "c"], d);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = rrt(
        &[
            "compare",
            "smoke=s.figure.csv",
            "custom=c.figure.csv",
            "--out",
            "cmp.csv",
        ],
        d,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(d.join("cmp.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("cell,method,coverage@smoke,coverage@custom"));
    // the custom run has a method the smoke run lacks: outer join keeps it
    assert!(text.lines().any(|l| l.contains("uv(gamma=0.3)")));
    fs::write(d.join("junk.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(
        rrt(&["compare", "s.figure.csv", "junk.csv"], d)
            .status
            .code(),
        Some(2)
    );
}

struct ExperimentToml;

impl ExperimentToml {
    fn text() -> String {
        let mut cfg = rrt::simlab::ExperimentConfig::preset("smoke").unwrap();
        cfg.name = "custom".into();
        cfg.reps = 2;
        cfg.methods = vec![
            rrt::simlab::Method::Naive,
            rrt::simlab::Method::Uv { gamma: 0.3 },
        ];
        cfg.to_toml().unwrap()
    }
}
