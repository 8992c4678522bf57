use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn svo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svo"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("svo runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = svo(args, cwd);
    assert!(
        out.status.success(),
        "svo {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn generate(dir: &Path, name: &str, seed: &str) {
    ok(
        &["generate", "--track", "line", "--frames", "6", "--res", "128x128", "--seed", seed, "--out", name],
        dir,
    );
}

#[test]
fn generate_run_eval_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d, "ds", "3");
    let frames = fs::read_dir(d.join("ds/frames")).unwrap().count();
    assert_eq!(frames, 6);
    let gt = fs::read_to_string(d.join("ds/groundtruth.csv")).unwrap();
    assert_eq!(gt.lines().next(), Some("frame,x,y,z,yaw"));
    assert_eq!(gt.lines().count(), 7);
    assert!(d.join("ds/manifest").exists());

    for mode in ["fmt", "efmt", "oefmt"] {
        let out = format!("{mode}.csv");
        let stdout = ok(
            &["run", "--frames", "ds/frames", "--mode", mode, "--out", &out, "--steps", "steps.csv"],
            d,
        );
        assert!(stdout.starts_with(mode), "{stdout}");
        let csv = fs::read_to_string(d.join(&out)).unwrap();
        assert_eq!(csv.lines().next(), Some("frame,x,y,log_zoom,yaw"));
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,0,0,"));
        let manifest = fs::read_to_string(d.join(format!("{mode}.manifest"))).unwrap();
        assert!(manifest.contains(&format!("mode = \"{mode}\"")), "{manifest}");
        assert_eq!(fs::read_to_string(d.join("steps.csv")).unwrap().lines().count(), 6);
    }

    ok(&["eval", "--traj", "oefmt.csv", "--gt", "ds/groundtruth.csv", "--out", "report.csv"], d);
    let report = fs::read_to_string(d.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("n,max,mean,median"));
    let fields: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(fields[0], 6.0);
    assert!(fields[1] >= fields[2] && fields[2] >= 0.0);

    ok(&["eval", "--traj", "ds/groundtruth.csv", "--gt", "ds/groundtruth.csv", "--out", "self.csv"], d);
    let own = fs::read_to_string(d.join("self.csv")).unwrap();
    let row: Vec<f64> = own.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 6.0);
    assert!(row[1..].iter().all(|e| *e < 1e-9), "{own}");

    ok(
        &["plot", "--traj", "fmt.csv,oefmt.csv", "--gt", "ds/groundtruth.csv", "--out", "fig.svg"],
        d,
    );
    let svg = fs::read_to_string(d.join("fig.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert!(svg.contains("ground truth") && svg.contains(">fmt<") && svg.contains(">oefmt<"));
    let errors = fs::read_to_string(d.join("fig.errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 1 + 3 * 6);

    ok(&["curve", "--frames", "ds/frames", "--frame", "3", "--out", "curve.csv"], d);
    let curve = fs::read_to_string(d.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 121);
    assert_eq!(curve.lines().filter(|l| l.ends_with(",1")).count(), 1);
    assert!(d.join("curve.svg").exists());
    ok(&["curve", "--frames", "ds/frames", "--frame", "3", "--factor", "scale", "--out", "zoom.csv"], d);
}

#[test]
fn generation_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d, "a", "9");
    generate(d, "b", "9");
    generate(d, "c", "10");
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/frames/000004.png"), read("b/frames/000004.png"));
    assert_eq!(read("a/manifest"), read("b/manifest"));
    assert_ne!(read("a/frames/000004.png"), read("c/frames/000004.png"));

    // a manifest regenerates its dataset
    ok(&["generate", "--scene", "a/manifest", "--out", "m"], d);
    assert_eq!(read("a/frames/000004.png"), read("m/frames/000004.png"));
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d, "ds", "1");
    fs::write(d.join("cfg.toml"), "mode = \"efmt\"\n[matching]\nbound = 2.0\n").unwrap();
    let out = ok(&["run", "--frames", "ds/frames", "--config", "cfg.toml", "--out", "t.csv"], d);
    assert!(out.starts_with("efmt"), "{out}");
    let manifest = fs::read_to_string(d.join("t.manifest")).unwrap();
    assert!(manifest.contains("bound = 2.0"), "{manifest}");
    let out = ok(
        &["run", "--frames", "ds/frames", "--config", "cfg.toml", "--mode", "fmt", "--out", "t.csv"],
        d,
    );
    assert!(out.starts_with("fmt"), "{out}");
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cases: [&[&str]; 5] = [
        &["generate", "--res", "wide", "--out", "x"],
        &["generate", "--scene", "nowhere.toml", "--out", "x"],
        &["run", "--frames", "missing", "--out", "t.csv"],
        &["run", "--frames", ".", "--mode", "sift", "--out", "t.csv"],
        &["eval", "--traj", "a.csv", "--gt", "b.csv", "--out", "r.csv"],
    ];
    for args in cases {
        let out = svo(args, d);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty());
    }
    generate(d, "ds", "2");
    let out = svo(&["curve", "--frames", "ds/frames", "--frame", "1", "--out", "c.csv"], d);
    assert!(!out.status.success());
}
