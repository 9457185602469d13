use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn vgpls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vgpls")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const FAST: &str = "max_outer=4\ninner_steps=10\ninducing_count=8\nsampler.inducing_count=8\n";

#[test]
fn synth_writes_counted_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&vgpls(&["synth", "--out", p(out), "--points", "100", "--dims", "6", "--latent", "2", "--noise", "0.1", "--seed", "7"]));
    }
    let data = fs::read_to_string(a.join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 1 + 100 * 6);
    assert_eq!(data.lines().next().unwrap(), "time,dim,value");
    let truth = fs::read_to_string(a.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 101);
    assert_eq!(fs::read(a.join("data.csv")).unwrap(), fs::read(b.join("data.csv")).unwrap());
    assert_eq!(fs::read(a.join("truth.csv")).unwrap(), fs::read(b.join("truth.csv")).unwrap());
}

#[test]
fn noiseless_synth_data_equals_truth() {
    let dir = tempfile::tempdir().unwrap();
    ok(&vgpls(&["synth", "--out", p(dir.path()), "--points", "20", "--dims", "3", "--noise", "0", "--seed", "1"]));
    let data = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    let truth = fs::read_to_string(dir.path().join("truth.csv")).unwrap();
    let rows: Vec<Vec<f64>> = truth
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    for line in data.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let t: f64 = f[0].parse().unwrap();
        let d: usize = f[1].parse().unwrap();
        let v: f64 = f[2].parse().unwrap();
        let row = rows.iter().find(|r| r[0] == t).unwrap();
        assert_eq!(v, row[d + 1]);
    }
}

#[test]
fn train_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&vgpls(&["synth", "--out", p(root), "--points", "30", "--dims", "4", "--seed", "3"]));
    let cfg = root.join("run.cfg");
    fs::write(&cfg, format!("{FAST}data=data.csv\nout=model\n")).unwrap();
    let start = Instant::now();
    ok(&vgpls(&["train", "--config", p(&cfg)]));
    assert!(start.elapsed().as_secs() < 60);
    let model = root.join("model/model.vgpls");
    assert!(fs::read_to_string(&model).unwrap().starts_with("format_version=1\n"));
    let trace = fs::read_to_string(root.join("model/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 4);

    let (a, b) = (root.join("p1.csv"), root.join("p2.csv"));
    for out in [&a, &b] {
        ok(&vgpls(&["predict", "--model", p(&model), "--grid", "25", "--out", p(out)]));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 2 * 4);
    assert_eq!(&header[..3], &["time", "y0_mean", "y0_var"]);
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(v[1..].chunks(2).all(|mv| mv[1] > 0.0));
    }
    assert_eq!(text.lines().count(), 26);

    // far from the data both ends sit at the same prior-driven marginal
    let far = root.join("far.csv");
    ok(&vgpls(&["predict", "--model", p(&model), "--grid", "2", "--from", "1e5", "--to", "2e5", "--out", p(&far)]));
    let rows: Vec<Vec<f64>> = fs::read_to_string(&far)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    for c in (2..rows[0].len()).step_by(2) {
        assert!((rows[0][c] - rows[1][c]).abs() <= 0.01 * rows[0][c]);
    }

    let times = root.join("times.txt");
    fs::write(&times, "time\n0.5\n1.25\n").unwrap();
    ok(&vgpls(&["predict", "--model", p(&model), "--times", p(&times), "--out", p(&a)]));
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 3);
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&vgpls(&["synth", "--out", p(root), "--points", "10", "--dims", "2"]));
    let cfg = root.join("bad.cfg");
    fs::write(&cfg, "latent_dim=2\nlatent_dimension=3\n").unwrap();
    let out = vgpls(&["train", "--data", p(&root.join("data.csv")), "--config", p(&cfg), "--out", p(root)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("latent_dimension"));

    assert_eq!(vgpls(&["train", "--bogus"]).status.code(), Some(2));
    fs::write(&cfg, "sampler=conv\nkernel.dynamical.family=periodic\nkernel.dynamical.period=2\n").unwrap();
    let out = vgpls(&["train", "--data", p(&root.join("data.csv")), "--config", p(&cfg), "--out", p(root)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_files_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = vgpls(&["train", "--data", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    let out = vgpls(&["predict", "--model", p(&missing), "--grid", "3", "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bench_covers_the_grid_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&vgpls(&["synth", "--out", p(root), "--points", "30", "--dims", "4", "--seed", "5"]));
    let cfg = root.join("run.cfg");
    fs::write(&cfg, format!("{FAST}data=data.csv\ntruth=truth.csv\n")).unwrap();
    let run = |out: &Path| {
        vgpls(&[
            "bench", "--config", p(&cfg), "--densities", "0.9,0.5,0.3", "--methods", "nn,dgplvm,vgpls", "--seeds", "1,2,3",
            "--out", p(out),
        ])
    };
    let (a, b) = (root.join("b1.csv"), root.join("b2.csv"));
    ok(&run(&a));
    ok(&run(&b));
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(text.lines().next().unwrap(), "density,method,mean_error,sd_error,n_seeds");
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    let seeds: usize = rows.iter().map(|r| r.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(seeds, 27);
}

#[test]
fn bench_with_no_successful_cell_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&vgpls(&["synth", "--out", p(root), "--points", "10", "--dims", "4"]));
    let out_csv = root.join("b.csv");
    let out = vgpls(&[
        "bench", "--data", p(&root.join("data.csv")), "--truth", p(&root.join("truth.csv")), "--densities", "0.01",
        "--methods", "nn", "--seeds", "1", "--out", p(&out_csv),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(fs::read_to_string(&out_csv).unwrap().contains("FAILED"));
    let out = vgpls(&["bench", "--data", p(&root.join("data.csv")), "--methods", "nn", "--out", p(&out_csv)]);
    assert_eq!(out.status.code(), Some(2));
}
