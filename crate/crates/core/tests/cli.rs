use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use myopinn::io::{read_dataset, read_maps};
use myopinn::pinn::HISTORY_HEADER;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_myopinn")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn default_phantom_layout() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-dro", "--out", "d.pqd", "--snr", "inf"]);
    let ds = read_dataset(dir.path().join("d.pqd")).unwrap();
    assert_eq!((ds.dims.nx, ds.dims.ny, ds.dims.nz, ds.grid.n), (40, 120, 3, 100));
    assert!(ds.truth.is_some());
    assert!(ds.metadata.contains("snr = inf"), "{}", ds.metadata);
}

#[test]
fn commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-dro", "--out", "a.pqd", "--mini", "2", "--seed", "4"]);
    ok(d, &["gen-dro", "--out", "b.pqd", "--mini", "2", "--seed", "4"]);
    ok(d, &["gen-dro", "--out", "c.pqd", "--mini", "2", "--seed", "5"]);
    let read = |f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.pqd"), read("b.pqd"));
    assert_ne!(read("a.pqd"), read("c.pqd"));

    for (i, m) in ["nlls", "pinn-2cxm"].iter().enumerate() {
        let o1 = format!("m{i}a.pqm");
        let o2 = format!("m{i}b.pqm");
        ok(d, &["fit", "--method", m, "--in", "a.pqd", "--out", &o1, "--iterations", "20", "--seed", "1"]);
        ok(d, &["fit", "--method", m, "--in", "a.pqd", "--out", &o2, "--iterations", "20", "--seed", "1", "--threads", "2"]);
        assert_eq!(read(&o1), read(&o2), "{m}");
    }
    ok(d, &["eval", "--est", "m0a.pqm", "m1a.pqm", "--gt-dataset", "a.pqd", "--out", "t1.csv"]);
    ok(d, &["eval", "--est", "m0a.pqm", "m1a.pqm", "--gt-dataset", "a.pqd", "--out", "t2.csv"]);
    assert_eq!(read("t1.csv"), read("t2.csv"));
}

#[test]
fn pinn_fit_writes_history_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), "seed = 3\n[pinn]\nlog_interval = 10\n").unwrap();
    ok(d, &["gen-dro", "--out", "a.pqd", "--mini", "2"]);
    ok(d, &["fit", "--method", "pinn-reduced", "--in", "a.pqd", "--out", "r.pqm", "--config", "run.toml", "--iterations", "30"]);
    let hist = fs::read_to_string(d.join("r.pqm.history.csv")).unwrap();
    let lines: Vec<&str> = hist.lines().collect();
    assert_eq!(lines[0], HISTORY_HEADER);
    assert_eq!(lines.len(), 4);
    let m = read_maps(d.join("r.pqm")).unwrap();
    assert_eq!(m.method, "pinn-reduced");
    assert!(m.config.contains("iterations = 30"));
    assert!(m.config.contains("global_seed = 3"));
    assert!(m.config.contains(&format!("seed = {}", m.seed)));
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-dro", "--out", "a.pqd", "--snr", "inf"]);
    // Ground-truth maps written as a map file through the library.
    let ds = read_dataset(d.join("a.pqd")).unwrap();
    let m = myopinn::io::MapFile::new(ds.truth.as_ref().unwrap(), "truth", "", 0);
    myopinn::io::write_maps(d.join("gt.pqm"), &m).unwrap();
    ok(d, &["eval", "--est", "gt.pqm", "--gt-dataset", "a.pqd", "--out", "t.csv"]);
    let table = fs::read_to_string(d.join("t.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,param,NMSE,SSIM");
    for l in &lines[1..] {
        assert!(l.ends_with(",0.000000,1.000000"), "{l}");
    }
}

#[test]
fn eval_needs_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("t,aif,p0\n");
    for i in 0..10 {
        csv += &format!("{},{},{}\n", i as f64 * 0.02, (i % 4) as f64, 0.1 * (i % 3) as f64);
    }
    fs::write(d.join("c.csv"), csv).unwrap();
    ok(d, &["fit", "--method", "nlls", "--in", "c.csv", "--out", "n.pqm"]);
    ok(d, &["gen-dro", "--out", "a.pqd", "--mini", "1"]);
    let ds = read_dataset(d.join("a.pqd")).unwrap();
    let no_truth = myopinn::io::CurveDataset { truth: None, ..ds };
    myopinn::io::write_dataset(d.join("nt.pqd"), &no_truth).unwrap();
    let out = run(d, &["eval", "--est", "n.pqm", "--gt-dataset", "nt.pqd", "--out", "t.csv"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ground-truth"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["fit", "--method", "svd", "--in", "x", "--out", "y"])), 1);
    assert_eq!(code(&run(d, &["frobnicate"])), 1);
    assert_eq!(code(&run(d, &["--help"])), 0);
    assert_eq!(code(&run(d, &["fit", "--method", "nlls", "--in", "missing.pqd", "--out", "y"])), 2);
    fs::write(d.join("bad.pqd"), b"PQD1\0\0").unwrap();
    let out = run(d, &["fit", "--method", "nlls", "--in", "bad.pqd", "--out", "y"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));
    fs::write(d.join("bad.toml"), "[pinn]\nwhatever = 1\n").unwrap();
    assert_eq!(code(&run(d, &["gen-dro", "--out", "z.pqd", "--config", "bad.toml"])), 2);
    // A learning rate this large overflows the log-parameters.
    ok(d, &["gen-dro", "--out", "a.pqd", "--mini", "1"]);
    fs::write(d.join("hot.toml"), "[pinn]\nlearning_rate = 1e300\n").unwrap();
    assert_eq!(code(&run(d, &["fit", "--method", "pinn-2cxm", "--in", "a.pqd", "--out", "h.pqm", "--config", "hot.toml", "--iterations", "5"])), 3);
}

#[test]
fn convert_matches_formula() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["convert", "--fp", "1.0", "--hct", "0.45", "--rho", "1.05"]);
    assert!(out.contains("Fb = 1.7316"), "{out}");
    assert_eq!(code(&run(dir.path(), &["convert", "--fp", "1.0", "--hct", "1.2"])), 2);
}

fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes[..20]).to_string();
    let mut it = text.split_whitespace();
    assert_eq!(it.next(), Some("P5"));
    let w: usize = it.next().unwrap().parse().unwrap();
    let h: usize = it.next().unwrap().parse().unwrap();
    let header = format!("P5\n{w} {h}\n255\n").len();
    (w, h, bytes[header..].to_vec())
}

#[test]
fn render_phantom_flow_map_shows_four_bands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-dro", "--out", "a.pqd", "--snr", "inf"]);
    ok(d, &["render", "--maps", "a.pqd", "--param", "Fp", "--out", "fp.pgm"]);
    let (w, h, px) = read_pgm(&d.join("fp.pgm"));
    assert_eq!((w, h), (40, 360));
    // Every row reads 10 x 0, 10 x 85, 10 x 170, 10 x 255.
    for row in px.chunks(w) {
        for (x, v) in row.iter().enumerate() {
            assert_eq!(*v, [0, 85, 170, 255][x / 10]);
        }
    }
    let side = fs::read_to_string(d.join("fp.pgm.range.txt")).unwrap();
    assert!(side.contains("min = 5e-1") && side.contains("max = 2e0"), "{side}");

    ok(d, &["render", "--maps", "a.pqd", "--param", "ve", "--out", "ve.png", "--range", "0,1"]);
    assert!(fs::read(d.join("ve.png")).unwrap().starts_with(b"\x89PNG"));
}

#[test]
fn render_constant_map_is_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-dro", "--out", "a.pqd", "--mini", "2"]);
    // ve is 0.2 everywhere on the small phantom.
    let out = run(d, &["render", "--maps", "a.pqd", "--param", "ve", "--out", "flat.pgm"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mid-gray"));
    let (_, _, px) = read_pgm(&d.join("flat.pgm"));
    assert!(px.iter().all(|&v| v == 128));
    ok(d, &["render", "--maps", "a.pqd", "--param", "ve", "--out", "fixed.pgm", "--range", "0,0.4"]);
    let (_, _, px) = read_pgm(&d.join("fixed.pgm"));
    assert!(px.iter().all(|&v| v == 128));
}
