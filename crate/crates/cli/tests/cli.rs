use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn caflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caflow"))
        .args(args)
        .env("CAFLOW_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A tiny run configuration writing to `out`.
fn smoke_config(dir: &Path, out: &Path, iters: u64, resume: Option<&Path>) -> PathBuf {
    let cfg = format!(
        "[model]\nchannels = 3\nsize = 8\nn_scales = 2\nr_steps = 1\nt_steps = 1\ncond_steps = 1\nhidden = 8\ncond_hidden = 8\ndequant_steps = 1\n\
         [train]\nmax_iters = {iters}\nwarmup_iters = 20\nval_every = 20\ncheckpoint_every = 20\nbatch_size = 8\ninit_batch_size = 16\nema_rate = 0.9\n\
         [task]\ntask = colorize\nsynthetic_train = 48\nsynthetic_val = 8\nsynthetic_test = 4\n\
         [io]\nout_dir = {}\nresume = {}\n",
        out.display(),
        resume.map(|r| r.display().to_string()).unwrap_or_default()
    );
    let path = dir.join(format!("run{iters}.cfg"));
    fs::write(&path, cfg).unwrap();
    path
}

fn metric_lines(log: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(log)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect()
}

/// Trains once and shares the checkpoint between the command tests.
struct Fixture {
    dir: TempDir,
    ckpt: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let cfg = smoke_config(dir.path(), &out, 60, None);
    let o = caflow(&["train", p(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let data = dir.path().join("data");
    let o = caflow(&[
        "dataset",
        p(&data),
        "--size",
        "8",
        "--train",
        "4",
        "--val",
        "2",
        "--test",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    Fixture {
        ckpt: out.join("last.cafw"),
        data,
        dir,
    }
}

#[test]
fn train_writes_log_and_checkpoints_then_resumes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let cfg = smoke_config(dir.path(), &out, 60, None);
    let o = caflow(&["train", p(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "metrics.log",
        "last.cafw",
        "ckpt-000020.cafw",
        "ckpt-000060.cafw",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let rows = metric_lines(&out.join("metrics.log"));
    assert_eq!(
        rows.iter().map(|r| r[0]).collect::<Vec<_>>(),
        vec![0.0, 20.0, 40.0, 60.0]
    );
    assert!(
        rows[3][2] < rows[0][2],
        "validation bpd should fall: {rows:?}"
    );

    let cfg = smoke_config(dir.path(), &out, 80, Some(&out.join("last.cafw")));
    let o = caflow(&["train", p(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(text(&o).contains("resuming from iteration 60"));
    let rows = metric_lines(&out.join("metrics.log"));
    assert_eq!(rows.last().unwrap()[0], 80.0);
    assert_eq!(rows.len(), 5);
}

#[test]
fn config_errors_exit_2_with_line() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[model]\nchannels = 3\nwidth = 9\n").unwrap();
    let o = caflow(&["train", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let o = caflow(&["train", p(&dir.path().join("missing.cfg"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = caflow(&["sample"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!("[task]\ndata = {}\n", dir.path().join("nowhere").display()),
    )
    .unwrap();
    let o = caflow(&["train", p(&cfg)]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn sampling_likelihood_and_eval_agree() {
    let fx = fixture();
    let y = fx.data.join("test/00000.ppm");
    // Any 8×8 RGB image works as a condition.
    let out = fx.dir.path().join("samples");
    let o = caflow(&[
        "sample",
        p(&fx.ckpt),
        p(&y),
        "--num",
        "6",
        "--keep",
        "4",
        "--seed",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let side: Vec<Vec<f64>> = fs::read_to_string(out.join("likelihoods.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(side.len(), 4);
    assert!(
        side.windows(2).all(|w| w[0][2] >= w[1][2]),
        "sidecar not sorted: {side:?}"
    );
    assert!(out.join("grid.ppm").exists() && out.join("sample_003.ppm").exists());

    // The sidecar score of the best sample is reproduced by `likelihood`.
    let o = caflow(&[
        "likelihood",
        p(&fx.ckpt),
        p(&y),
        p(&out.join("sample_000.ppm")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let nats: f64 = text(&o)
        .lines()
        .next()
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(
        (nats - side[0][2]).abs() < 1e-3 * nats.abs().max(1.0),
        "{nats} vs {}",
        side[0][2]
    );

    let csv = fx.dir.path().join("eval.csv");
    let run = |csv: &Path| {
        caflow(&[
            "eval",
            p(&fx.ckpt),
            p(&fx.data),
            "--temperature",
            "0",
            "--best-of",
            "2",
            "--csv",
            p(csv),
        ])
    };
    let first = run(&csv);
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let table = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "image,target_bpd,sample_bpd,metric,value");
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[4].starts_with("mean,"));
    let csv2 = fx.dir.path().join("eval2.csv");
    let second = run(&csv2);
    assert_eq!(text(&first), text(&second));
    assert_eq!(table, fs::read_to_string(&csv2).unwrap());
}

#[test]
fn temperature_zero_sampling_is_deterministic() {
    let fx = fixture();
    let y = fx.data.join("val/00000.ppm");
    let mut outs = Vec::new();
    for (k, seed) in ["1", "2"].iter().enumerate() {
        let out = fx.dir.path().join(format!("s{k}"));
        let o = caflow(&[
            "sample",
            p(&fx.ckpt),
            p(&y),
            "--num",
            "1",
            "--temperature",
            "0",
            "--seed",
            seed,
            "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(fs::read(out.join("sample_000.ppm")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn mismatched_images_and_bad_flags() {
    let fx = fixture();
    let big = fx.dir.path().join("big");
    let o = caflow(&[
        "dataset",
        p(&big),
        "--size",
        "16",
        "--train",
        "1",
        "--val",
        "1",
        "--test",
        "1",
    ]);
    assert!(o.status.success());
    let y = fx.data.join("test/00000.ppm");
    let o = caflow(&[
        "likelihood",
        p(&fx.ckpt),
        p(&y),
        p(&big.join("test/00000.ppm")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let o = caflow(&["sample", p(&fx.ckpt), p(&y), "--num", "2", "--keep", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = caflow(&["dataset", p(&big), "--task", "denoise"]);
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_caflow"))
        .args(["dataset", p(&big)])
        .env("CAFLOW_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dataset_ingests_and_crops_external_images() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw");
    fs::create_dir(&raw).unwrap();
    // 12x10 RGB images crop to their central 8x8 and downsample to 4x4.
    for k in 0..6u8 {
        let mut bytes = b"P6\n12 10\n255\n".to_vec();
        bytes.extend((0..12 * 10 * 3).map(|i| (i as u8).wrapping_mul(k + 1)));
        fs::write(raw.join(format!("img{k}.ppm")), bytes).unwrap();
    }
    let root = dir.path().join("ds");
    let o = caflow(&[
        "dataset",
        p(&root),
        "--from",
        p(&raw),
        "--size",
        "4",
        "--val",
        "1",
        "--test",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(root.join("manifest.txt")).unwrap();
    assert!(manifest.contains("train = 3"), "{manifest}");
    let img = fs::read(root.join("test").join("00001.ppm")).unwrap();
    assert!(img.starts_with(b"P6\n4 4\n255\n"));

    // Grayscale sources cannot feed a 3-channel dataset.
    fs::write(
        raw.join("gray.ppm"),
        [b"P5\n12 10\n255\n".as_slice(), &[0; 120]].concat(),
    )
    .unwrap();
    let o = caflow(&[
        "dataset",
        p(&dir.path().join("ds2")),
        "--from",
        p(&raw),
        "--size",
        "4",
        "--val",
        "1",
        "--test",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
}
