use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use radpose::scene::{CartesianGrid, RadarConfig};

fn radpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radpose")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

/// Two TX, four RX, short chirps, 3.2 x 2.4 x 2 m grid.
fn write_compact_config(path: &Path) {
    let mut cfg = RadarConfig::default().with_tx_offsets(&[[0, 0], [2, 1]], 4);
    cfg.samples_per_chirp = 128;
    cfg.chirps_per_frame = 16;
    cfg.azimuth_bins = 16;
    cfg.elevation_bins = 8;
    cfg.grid = CartesianGrid {
        origin: [-1.0, 2.0, -0.8],
        voxel_extent: [0.1, 0.1, 0.1],
        dims: [20, 24, 32],
    };
    fs::write(path, cfg.to_toml()).unwrap();
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_process_train_infer_decode_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = t.join("radar.toml");
    write_compact_config(&cfg);
    let seq = t.join("seq");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let o = radpose(&["simulate", "--config", &s(&cfg), "--persons", "1", "--frames", "3", "--action", "walk", "--seed", "4", "--out", &s(&seq)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..3 {
        assert!(seq.join(format!("frames/{i:06}.adc")).exists());
        assert!(seq.join(format!("frames/{i:06}.pose")).exists());
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(seq.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["action"], "walk");
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["frames"], 3);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    // single-file form
    let one = t.join("one.tensor");
    let adc0 = seq.join("frames/000000.adc");
    let o = radpose(&["process", "--config", &s(&cfg), "--in", &s(&adc0), "--out", &s(&one), "--window", "none", "--power"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(one.exists());

    let o = radpose(&["process", "--in", &s(&seq)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(seq.join("frames/000002.tensor").exists());

    let o = radpose(&["cfar", "--in", &s(&adc0), "--out", &s(&t.join("p.txt")), "--pfa", "1e-3", "--guard", "1", "--train", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(t.join("p.txt")).unwrap().starts_with("# format_version 1"));

    let params = t.join("net.params");
    let losses = t.join("loss.csv");
    let o = radpose(&["train-micro", "--data", &s(&seq), "--epochs", "3", "--lr", "0.01", "--out", &s(&params), "--losses", &s(&losses)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&losses).unwrap().lines().count(), 5);

    let heads = t.join("heads");
    let o = radpose(&["infer", "--params", &s(&params), "--in", &s(&seq), "--out", &s(&heads)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pred = t.join("pred");
    let o = radpose(&["decode", "--in", &s(&heads), "--out", &s(&pred), "--threshold", "0.05"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(pred.join("frames/000001.pose").exists());

    let json = t.join("report.json");
    let o = radpose(&["eval", "--gt", &s(&seq), "--pred", &s(&pred), "--json", &s(&json)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("walk") && text.contains("MPJPE"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["overall"]["frames"], 3);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = t.join("radar.toml");
    write_compact_config(&cfg);
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let dir = t.join(name);
        let d = dir.to_str().unwrap();
        let c = cfg.to_str().unwrap();
        let o = radpose(&["simulate", "--config", c, "--persons", "2", "--frames", "2", "--seed", "9", "--out", d]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = radpose(&["process", "--in", d]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        trees.push(tree_bytes(&dir));
    }
    assert_eq!(trees[0], trees[1]);
    assert!(trees[0].len() >= 2 * 3 + 2);
    // a different seed changes the noise
    let dir = t.join("c");
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&radpose(&["simulate", "--config", c, "--persons", "2", "--frames", "2", "--seed", "10", "--out", dir.to_str().unwrap()])), 0);
    assert_ne!(fs::read(dir.join("frames/000000.adc")).unwrap(), fs::read(t.join("a/frames/000000.adc")).unwrap());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let o = radpose(&["process", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&radpose(&["frobnicate"])), 1);
    assert_eq!(code(&radpose(&["--help"])), 0);
    let out = t.join("x");
    // neither a scene nor persons
    assert_eq!(code(&radpose(&["simulate", "--out", out.to_str().unwrap()])), 1);
    // missing input file
    assert_eq!(code(&radpose(&["process", "--in", t.join("none.adc").to_str().unwrap()])), 1);
    assert_eq!(code(&radpose(&["process", "--in", "x.adc", "--window", "kaiser"])), 1);
    assert_eq!(code(&radpose(&["oracle", "--cases", "3", "--seed", "1"])), 0);

    // divergent training is a numerical failure
    let cfg = t.join("radar.toml");
    write_compact_config(&cfg);
    let seq = t.join("seq");
    let (c, d) = (cfg.to_str().unwrap(), seq.to_str().unwrap());
    assert_eq!(code(&radpose(&["simulate", "--config", c, "--persons", "1", "--frames", "1", "--out", d])), 0);
    assert_eq!(code(&radpose(&["process", "--in", d])), 0);
    let p = t.join("p.bin");
    let o = radpose(&["train-micro", "--data", d, "--epochs", "30", "--lr", "1e9", "--out", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}
