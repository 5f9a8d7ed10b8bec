use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use morphforge::image_io::{read_binary_image, write_binary_image};
use morphforge::mesh::shapes::{hex_block, icosphere};
use morphforge::{write_femesh, write_stl, Grid, StlFormat, Vec3, Volume};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphforge"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sphere_stl(dir: &Path, name: &str, r: f64) {
    write_stl(&icosphere(Vec3::zeros(), r, 3), dir.join(name), StlFormat::Ascii).unwrap();
}

fn ball_image(dir: &Path, name: &str, r: f64) {
    let g = Grid::new([20; 3], [1.0; 3], [-9.5; 3]).unwrap();
    let img = Volume::from_fn(g, |i, j, k| g.position(i, j, k).norm() <= r);
    write_binary_image(&img, dir.join(name)).unwrap();
}

fn pulse_csv(dir: &Path, name: &str, channels: usize, amp: f64) {
    let mut s = String::from("time_s");
    for c in 0..channels {
        write!(s, ",ch{c}").unwrap();
    }
    s.push('\n');
    for i in 0..2000 {
        let t = i as f64 * 1e-4;
        write!(s, "{t}").unwrap();
        for c in 0..channels {
            let v = amp * (-((t - 0.1) / (0.02 + 0.005 * c as f64)).powi(2)).exp();
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    std::fs::write(dir.join(name), s).unwrap();
}

#[test]
fn voxelize_reports_count() {
    let d = tempfile::tempdir().unwrap();
    sphere_stl(d.path(), "s.stl", 5.0);
    let o = run(&["voxelize", "s.stl", "--spacing", "0.5", "-o", "s.mhd"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let img = read_binary_image(d.path().join("s.mhd")).unwrap();
    assert!(stdout(&o).contains(&format!("occupied: {}", img.count())));
    assert!(img.count() > 3000);
}

#[test]
fn missing_input_names_path() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["voxelize", "nowhere.stl", "--spacing", "1", "-o", "x.mhd"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.stl"));
}

#[test]
fn zero_spacing_rejected() {
    let d = tempfile::tempdir().unwrap();
    sphere_stl(d.path(), "s.stl", 5.0);
    let o = run(&["voxelize", "s.stl", "--spacing", "0", "-o", "x.mhd"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--spacing"));
    assert!(!d.path().join("x.mhd").exists());
}

#[test]
fn evaluate_identical_and_empty() {
    let d = tempfile::tempdir().unwrap();
    ball_image(d.path(), "a.mhd", 6.0);
    ball_image(d.path(), "e.mhd", -1.0);
    let o = run(&["evaluate", "a.mhd", "a.mhd", "-o", "r.json"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r["dice"], 1.0);
    assert_eq!(r["hd95"], 0.0);

    let o = run(&["evaluate", "a.mhd", "e.mhd"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("HD95"));
}

#[test]
fn cora_identical_channels_rate_good() {
    let d = tempfile::tempdir().unwrap();
    pulse_csv(d.path(), "r.csv", 1, 1.0);
    let o = run(&["cora", "--reference", "r.csv", "--test", "r.csv"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["channels"][0]["result"]["total"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(v["classification"], "good");
    assert!(v["average"].is_null());
}

#[test]
fn cora_three_channels_average_and_filter() {
    let d = tempfile::tempdir().unwrap();
    pulse_csv(d.path(), "r.csv", 3, 1.0);
    pulse_csv(d.path(), "t.csv", 3, 0.7);
    let o = run(
        &[
            "cora",
            "--reference",
            "r.csv",
            "--test",
            "t.csv",
            "--cfc",
            "60",
            "-o",
            "c.json",
        ],
        d.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("c.json")).unwrap()).unwrap();
    assert_eq!(v["filter"], "CFC60");
    assert_eq!(v["channels"].as_array().unwrap().len(), 3);
    let avg = v["average"].as_f64().unwrap();
    assert!(avg > 0.0 && avg < 1.0);
}

#[test]
fn filter_writes_all_channels() {
    let d = tempfile::tempdir().unwrap();
    pulse_csv(d.path(), "r.csv", 2, 1.0);
    let o = run(&["filter", "r.csv", "--cfc", "CFC180", "-o", "f.csv"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(d.path().join("f.csv")).unwrap();
    assert!(text.starts_with("time_s,ch0,ch1"));
    assert_eq!(text.lines().count(), 2001);
}

#[test]
fn jacobian_of_block() {
    let d = tempfile::tempdir().unwrap();
    write_femesh(
        &hex_block(Vec3::zeros(), Vec3::repeat(2.0), [2, 2, 2], "p"),
        d.path().join("m.fem"),
    )
    .unwrap();
    let o = run(&["jacobian", "m.fem"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("elements: 8"));
    assert!(out.contains("min: 1.000000"));
}

#[test]
fn register_invert_warp_chain() {
    let d = tempfile::tempdir().unwrap();
    ball_image(d.path(), "f.mhd", 5.0);
    ball_image(d.path(), "m.mhd", 6.0);
    let o = run(
        &[
            "register", "--fixed", "f.mhd", "--moving", "m.mhd", "-o", "d.mhd", "--levels", "2",
        ],
        d.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["invert-field", "d.mhd", "-o", "inv.mhd"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["warp-image", "m.mhd", "--field", "d.mhd", "-o", "w.mhd"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["evaluate", "w.mhd", "f.mhd"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["dice"].as_f64().unwrap() > 0.9, "{v}");
}

fn manifest_dir(landmarks: bool) -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    sphere_stl(d.path(), "skin.stl", 8.0);
    if landmarks {
        let p = [[0.0, 0.0, 8.0], [8.0, 0.0, 0.0], [0.0, 8.0, 0.0]];
        let lm = serde_json::json!({ "template": p, "target": p });
        std::fs::write(d.path().join("lm.json"), lm.to_string()).unwrap();
    }
    let m = serde_json::json!({
        "template": { "skin": "skin.stl" },
        "target": { "skin": "skin.stl" },
        "landmarks": "lm.json",
        "spacing": 1.0,
        "output_dir": "out"
    });
    std::fs::write(d.path().join("m.json"), m.to_string()).unwrap();
    d
}

#[test]
fn personalize_missing_landmarks_fails_before_compute() {
    let d = manifest_dir(false);
    let o = run(&["personalize", "m.json"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lm.json"), "{}", stderr(&o));
    assert!(!d.path().join("out/template_image.mhd").exists());
}

#[test]
fn personalize_identity_case() {
    let d = manifest_dir(true);
    let o = run(&["personalize", "m.json"], d.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("out/summary.json")).unwrap()).unwrap();
    assert!(s["accuracy"]["dice"].as_f64().unwrap() >= 0.99, "{s}");
    assert!(d.path().join("out/morphed_skin.stl").exists());
    assert!(!d.path().join("out/.morphforge.lock").exists());
}
