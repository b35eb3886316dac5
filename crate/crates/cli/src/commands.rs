use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use caflow::caflow::CaflowModel;
use caflow::config::RunConfig;
use caflow::data::{
    ingest_images, psnr, read_dataset, read_split_dir, rmse, synthetic_dataset, write_dataset,
    Image, Manifest, PairedSet, Task,
};
use caflow::layers::InitMode;
use caflow::params::ParamStore;
use caflow::train::eval::{log_likelihoods, nats_to_bpd, sample_and_rank};
use caflow::train::{checkpoint, Record, TrainState};

use crate::error::{CliError, CliResult, Context, EXIT_CONFIG, EXIT_DATA, EXIT_OTHER};
use crate::Metric;

fn io_err(code: u8, path: &Path, e: std::io::Error) -> CliError {
    CliError::new(code, format!("{}: {e}", path.display()))
}

fn load_data(rc: &RunConfig) -> CliResult<[PairedSet; 3]> {
    let sets = match &rc.task.data {
        Some(root) => {
            let (manifest, sets) = read_dataset(root).code(EXIT_DATA, "reading dataset")?;
            if manifest.task != rc.task.task {
                return Err(CliError::new(
                    EXIT_DATA,
                    format!(
                        "dataset task {} differs from configured task {}",
                        manifest.task, rc.task.task
                    ),
                ));
            }
            sets
        }
        None => {
            let t = &rc.task;
            synthetic_dataset(
                t.task,
                [t.synthetic_train, t.synthetic_val, t.synthetic_test],
                rc.model.size,
                rc.model.channels,
                t.data_seed,
            )
            .code(EXIT_DATA, "generating synthetic data")?
        }
    };
    for set in &sets[..2] {
        if let Some(img) = set.targets.iter().find(|i| !fits(rc, i)) {
            return Err(shape_error(rc, img));
        }
    }
    Ok(sets)
}

fn fits(rc: &RunConfig, img: &Image) -> bool {
    (img.width, img.height, img.channels) == (rc.model.size, rc.model.size, rc.model.channels)
}

fn shape_error(rc: &RunConfig, img: &Image) -> CliError {
    CliError::new(
        EXIT_DATA,
        format!(
            "image is {}x{}x{}, model expects {}x{}x{}",
            img.width, img.height, img.channels, rc.model.size, rc.model.size, rc.model.channels
        ),
    )
}

pub fn train(path: &Path) -> CliResult<()> {
    let text = fs::read_to_string(path).map_err(|e| io_err(EXIT_CONFIG, path, e))?;
    let rc = RunConfig::parse(&text).code(EXIT_CONFIG, &path.display().to_string())?;
    let [train_set, val_set, _] = load_data(&rc)?;
    let (model, fresh) = CaflowModel::build::<f32>(&rc.model, rc.train.seed, InitMode::Standard)
        .ctx("building model")?;
    let mut state = match &rc.io.resume {
        Some(p) => {
            let (state, _) = checkpoint::load(p).ctx(&p.display().to_string())?;
            if !state.params.congruent(&fresh) {
                return Err(CliError::new(
                    EXIT_CONFIG,
                    format!("{} does not match the model configuration", p.display()),
                ));
            }
            println!("resuming from iteration {}", state.iteration);
            state
        }
        None => TrainState::new(fresh, rc.train.seed),
    };

    let out = &rc.io.out_dir;
    fs::create_dir_all(out).map_err(|e| io_err(EXIT_OTHER, out, e))?;
    let log_path = out.join("metrics.log");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| io_err(EXIT_OTHER, &log_path, e))?;
    if log.metadata().map(|m| m.len() == 0).unwrap_or(true) {
        writeln!(log, "{}", Record::HEADER).map_err(|e| io_err(EXIT_OTHER, &log_path, e))?;
    }
    let config_text = rc.serialize();
    let every = rc.train.checkpoint_every;
    println!("{}", Record::HEADER);
    let report = caflow::train::train(
        &model,
        &mut state,
        &rc.train,
        &train_set,
        &val_set,
        |st, rec| {
            writeln!(log, "{}", rec.line())?;
            println!("{}", rec.line());
            if every > 0 && st.iteration > 0 && st.iteration % every == 0 {
                checkpoint::save(
                    &out.join(format!("ckpt-{:06}.cafw", st.iteration)),
                    st,
                    &config_text,
                )?;
            }
            Ok(())
        },
    )
    .ctx("training")?;
    let last = out.join("last.cafw");
    checkpoint::save(&last, &state, &config_text).ctx("saving checkpoint")?;
    println!(
        "finished at iteration {} ({} skipped steps); checkpoint {}",
        state.iteration,
        report.skipped_steps,
        last.display()
    );
    Ok(())
}

struct Loaded {
    model: CaflowModel,
    /// EMA parameters.
    params: ParamStore<f32>,
    rc: RunConfig,
}

fn load_checkpoint(path: &Path) -> CliResult<Loaded> {
    let name = path.display().to_string();
    let (state, text) = checkpoint::load(path).ctx(&name)?;
    let rc = RunConfig::parse(&text).ctx(&name)?;
    let (model, fresh) =
        CaflowModel::build::<f32>(&rc.model, 0, InitMode::Standard).ctx("building model")?;
    if !state.ema.congruent(&fresh) {
        return Err(CliError::new(
            EXIT_OTHER,
            format!("{name}: parameters do not match the stored configuration"),
        ));
    }
    Ok(Loaded {
        model,
        params: state.ema,
        rc,
    })
}

fn read_image(rc: &RunConfig, path: &Path) -> CliResult<Image> {
    let img = Image::read(path).code(EXIT_DATA, &path.display().to_string())?;
    if !fits(rc, &img) {
        return Err(shape_error(rc, &img));
    }
    Ok(img)
}

pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub condition: PathBuf,
    pub temperature: f64,
    pub num: usize,
    pub keep: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub truth: Option<PathBuf>,
}

pub fn sample(a: &SampleArgs) -> CliResult<()> {
    if a.num == 0 || a.keep == 0 || a.keep > a.num {
        return Err(CliError::new(
            EXIT_CONFIG,
            format!("need 1 <= --keep ({}) <= --num ({})", a.keep, a.num),
        ));
    }
    if !(a.temperature >= 0.0) {
        return Err(CliError::new(
            EXIT_CONFIG,
            "--temperature must be non-negative",
        ));
    }
    let m = load_checkpoint(&a.checkpoint)?;
    let y = read_image(&m.rc, &a.condition)?;
    let truth = a
        .truth
        .as_deref()
        .map(|p| read_image(&m.rc, p))
        .transpose()?;
    let ranked = sample_and_rank(
        &m.model,
        &m.params,
        &y,
        a.num,
        a.keep,
        a.temperature,
        a.seed,
    )
    .ctx("sampling")?;

    fs::create_dir_all(&a.out).map_err(|e| io_err(EXIT_OTHER, &a.out, e))?;
    let dims = m.rc.model.dims();
    let mut sidecar = String::from("# rank draw log_likelihood_nats bpd\n");
    for (r, s) in ranked.iter().enumerate() {
        s.image
            .write(&a.out.join(format!("sample_{r:03}.ppm")))
            .ctx("writing sample")?;
        writeln!(
            sidecar,
            "{r} {} {:.6} {:.6}",
            s.draw,
            s.log_likelihood,
            nats_to_bpd(s.log_likelihood, dims)
        )
        .expect("write to string");
    }
    let sidecar_path = a.out.join("likelihoods.txt");
    fs::write(&sidecar_path, &sidecar).map_err(|e| io_err(EXIT_OTHER, &sidecar_path, e))?;
    let mut row = vec![y];
    row.extend(ranked.iter().map(|s| s.image.clone()));
    row.extend(truth);
    Image::grid(&[row], 1)
        .and_then(|g| g.write(&a.out.join("grid.ppm")))
        .ctx("writing grid")?;
    print!("{sidecar}");
    Ok(())
}

pub fn likelihood(ckpt: &Path, condition: &Path, target: &Path) -> CliResult<()> {
    let m = load_checkpoint(ckpt)?;
    let y = read_image(&m.rc, condition)?;
    let w = read_image(&m.rc, target)?;
    let ll =
        log_likelihoods(&m.model, &m.params, &w.to_tensor(), &y.to_tensor()).ctx("likelihood")?[0];
    println!("log_likelihood_nats {ll:.6}");
    println!("bpd {:.6}", nats_to_bpd(ll, m.rc.model.dims()));
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dir: PathBuf,
    pub metric: Metric,
    pub temperature: f64,
    pub best_of: usize,
    pub seed: u64,
    pub csv: PathBuf,
}

/// Column names of the evaluation CSV.
pub const EVAL_COLUMNS: &str = "image,target_bpd,sample_bpd,metric,value";

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    if a.best_of == 0 || !(a.temperature >= 0.0) {
        return Err(CliError::new(
            EXIT_CONFIG,
            "need --best-of >= 1 and --temperature >= 0",
        ));
    }
    let m = load_checkpoint(&a.checkpoint)?;
    let set = if a.dir.join("manifest.txt").exists() {
        let manifest = Manifest::parse(
            &fs::read_to_string(a.dir.join("manifest.txt"))
                .map_err(|e| io_err(EXIT_DATA, &a.dir, e))?,
        )
        .code(EXIT_DATA, "manifest")?;
        read_split_dir(&a.dir.join("test"), manifest.task)
    } else {
        read_split_dir(&a.dir, m.rc.task.task)
    }
    .code(EXIT_DATA, "reading test set")?;
    if set.is_empty() {
        return Err(CliError::new(
            EXIT_DATA,
            format!("{}: empty test set", a.dir.display()),
        ));
    }
    if let Some(img) = set.targets.iter().find(|i| !fits(&m.rc, i)) {
        return Err(shape_error(&m.rc, img));
    }

    let dims = m.rc.model.dims();
    let metric_name = match a.metric {
        Metric::Psnr => "psnr",
        Metric::Rmse => "rmse",
    };
    let mut csv = format!("{EVAL_COLUMNS}\n");
    println!(
        "{:>6} {:>11} {:>11} {:>9}",
        "image", "target_bpd", "sample_bpd", metric_name
    );
    let (mut sum_metric, mut sum_target, mut sum_sample) = (0.0, 0.0, 0.0);
    for (k, (y, w)) in set.conditions.iter().zip(&set.targets).enumerate() {
        let best = sample_and_rank(&m.model, &m.params, y, a.best_of, 1, a.temperature, a.seed)
            .ctx("sampling")?
            .remove(0);
        let target_ll = log_likelihoods(&m.model, &m.params, &w.to_tensor(), &y.to_tensor())
            .ctx("likelihood")?[0];
        let value = match a.metric {
            Metric::Psnr => psnr(&best.image, w),
            Metric::Rmse => rmse(&best.image, w),
        }
        .ctx("metric")?;
        let (tb, sb) = (
            nats_to_bpd(target_ll, dims),
            nats_to_bpd(best.log_likelihood, dims),
        );
        println!("{k:>6} {tb:>11.4} {sb:>11.4} {value:>9.3}");
        writeln!(csv, "{k},{tb:.6},{sb:.6},{metric_name},{value:.6}").expect("write to string");
        sum_metric += value;
        sum_target += tb;
        sum_sample += sb;
    }
    let n = set.len() as f64;
    let (mt, ms, mm) = (sum_target / n, sum_sample / n, sum_metric / n);
    println!("{:>6} {mt:>11.4} {ms:>11.4} {mm:>9.3}", "mean");
    writeln!(csv, "mean,{mt:.6},{ms:.6},{metric_name},{mm:.6}").expect("write to string");
    fs::write(&a.csv, csv).map_err(|e| io_err(EXIT_OTHER, &a.csv, e))?;
    Ok(())
}

pub fn dataset(
    out: &Path,
    task: &str,
    size: usize,
    channels: usize,
    counts: [usize; 3],
    seed: u64,
    from: Option<&Path>,
) -> CliResult<()> {
    let task: Task = task.parse().code(EXIT_CONFIG, "--task")?;
    let (manifest, sets) = match from {
        Some(dir) => ingest_images(task, dir, size, channels, counts[1], counts[2], seed)
            .code(EXIT_DATA, &format!("reading {}", dir.display()))?,
        None => {
            let sets = synthetic_dataset(task, counts, size, channels, seed)
                .code(EXIT_CONFIG, "generating dataset")?;
            (Manifest { task, seed, counts }, sets)
        }
    };
    write_dataset(out, &manifest, &sets).ctx("writing dataset")?;
    println!(
        "wrote {} {} pairs to {}",
        manifest.counts.iter().sum::<usize>(),
        task,
        out.display()
    );
    Ok(())
}
