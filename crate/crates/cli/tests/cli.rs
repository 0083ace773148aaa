use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn raysense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raysense")).args(args).output().unwrap()
}

fn run_with(config: &str, experiment: &str, extra: &[&str]) -> (tempfile::TempDir, PathBuf, Output) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.path().join("out");
    let mut args = vec![experiment, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let res = raysense(&args);
    (dir, out, res)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_CONSTANT_SCATTER: &str = r#"
[field]
kind = "constant"

[scatter]
n_boundary = 2
n_dir = 2
t_max = 10.0
"#;

#[test]
fn constant_field_rows_are_chords() {
    let (_dir, out, res) = run_with(SMALL_CONSTANT_SCATTER, "scatter", &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let (header, rows) = read_csv(&out.join("scattering.csv"));
    assert_eq!(header.len(), 1 + 3 * 4 + 1 + 1);
    assert!(!rows.is_empty());
    for row in rows {
        let v: Vec<f64> = row[1..14].iter().map(|s| s.parse().unwrap()).collect();
        let (x0, xi0, l, x1, xi1) = (&v[0..3], &v[3..6], v[6], &v[7..10], &v[10..13]);
        let dot: f64 = x0.iter().zip(xi0).map(|(a, b)| a * b).sum();
        assert!((l + 2.0 * dot).abs() < 1e-9);
        for k in 0..3 {
            assert!((x1[k] - x0[k] - l * xi0[k]).abs() < 1e-9);
            assert!((xi1[k] - xi0[k]).abs() < 1e-9);
        }
    }
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["experiment"], "scatter");
    assert_eq!(m["outputs"], serde_json::json!(["scattering.csv", "summary.json"]));
}

#[test]
fn bad_configs_exit_2_and_write_nothing() {
    let cases = [
        "[scatter]\nn_boundry = 2\n",
        "[field]\nkind = \"gaussian_lens\"\nalpha = 1.2\nsigma = 0.5\n",
        "[domain]\ndim = 3\nradius = -1.0\n",
        "[scatter]\nn_dir = 0\n",
        "experiment = \"beam\"\n",
        "this is not toml",
    ];
    for text in cases {
        let (_dir, out, res) = run_with(text, "scatter", &[]);
        assert_eq!(res.status.code(), Some(2), "config {text:?}");
        assert!(!out.exists(), "config {text:?} left outputs behind");
    }
    let (_dir, out, res) = run_with("[beam]\nray = { direction = [1.0, 0.0, 0.0], offset = [0.0, 2.0, 0.0] }\n", "beam", &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn runs_are_byte_identical() {
    let cfg = "seed = 5\n[scatter]\nn_boundary = 2\nn_dir = 2\n";
    let (_a, out_a, ra) = run_with(cfg, "scatter", &["--workers", "1"]);
    let (_b, out_b, rb) = run_with(cfg, "scatter", &["--workers", "1"]);
    assert!(ra.status.success() && rb.status.success());
    for name in ["scattering.csv", "summary.json", "manifest.json"] {
        assert_eq!(fs::read(out_a.join(name)).unwrap(), fs::read(out_b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let (_dir, out, res) = run_with("seed = 5\n[caustics]\ncompleteness = false\n", "caustics", &["--seed", "11"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config"]["seed"], 11);
}

#[test]
fn linearize_remainder_is_quadratic() {
    let (_dir, out, res) = run_with("", "linearize", &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let s = json(&out.join("summary.json"));
    let slope = s["remainder"]["fit"]["slope"].as_f64().unwrap();
    assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    assert!((s["weight_determinant"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn sensitivity_chain_small_fan() {
    let cfg = "[sensitivity_chain]\nn_boundary = 2\nn_dir = 2\n";
    let (_dir, out, res) = run_with(cfg, "sensitivity-chain", &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let s = json(&out.join("summary.json"));
    let slope = s["remainder_fit"]["slope"].as_f64().unwrap();
    assert!((slope - 2.0).abs() < 0.15, "slope {slope}");
    let (_, rows) = read_csv(&out.join("sensitivity.csv"));
    assert!(rows.len() >= 4);
}

#[test]
fn selftest_runs_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("st");
    let res = raysense(&["selftest", "--only", "1,4", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let (_, rows) = read_csv(&out.join("criteria.csv"));
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["1", "4"]);
    assert!(rows.iter().all(|r| r[2] == "true"));
    let res = raysense(&["selftest", "--only", "16", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn beam_modes_write_their_tables() {
    for (mode, file) in [("propagate", "beam_path.csv"), ("reflect", "boundary_window.csv")] {
        let cfg = format!("[beam]\nmode = \"{mode}\"\nlambdas = [50.0, 100.0]\nn_per_axis = 8\n");
        let (_dir, out, res) = run_with(&cfg, "beam", &[]);
        assert!(res.status.success(), "{mode}: {}", String::from_utf8_lossy(&res.stderr));
        let (_, rows) = read_csv(&out.join(file));
        assert!(!rows.is_empty(), "{mode}");
    }
}
