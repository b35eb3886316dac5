use std::path::PathBuf;

use caflow::caflow::{DependencyMode, ModelConfig, WeightSharing};
use caflow::config::{IoConfig, RunConfig, TaskConfig};
use caflow::data::Task;
use caflow::layers::DequantKind;
use caflow::train::TrainConfig;
use caflow::Error;
use proptest::prelude::*;

fn model() -> impl Strategy<Value = ModelConfig> {
    (
        prop_oneof![Just(1usize), Just(3)],
        prop_oneof![Just(8usize), Just(16), Just(32)],
        1..=3usize,
        (1..12usize, 1..12usize, 1..12usize),
        (1..200usize, 1..200usize),
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        1..6usize,
    )
        .prop_map(
            |(
                channels,
                size,
                n_scales,
                (r, t, m),
                (hidden, cond_hidden),
                dual,
                shared,
                var,
                dq,
            )| ModelConfig {
                channels,
                size,
                n_scales,
                r_steps: r,
                t_steps: t,
                cond_steps: m,
                hidden,
                cond_hidden,
                dependency: if dual {
                    DependencyMode::DualGlow
                } else {
                    DependencyMode::Caflow
                },
                sharing: if shared {
                    WeightSharing::Shared
                } else {
                    WeightSharing::Off
                },
                dequant: if var {
                    DequantKind::Variational
                } else {
                    DequantKind::Uniform
                },
                dequant_steps: dq,
            },
        )
}

fn train() -> impl Strategy<Value = TrainConfig> {
    (
        (
            0.0..10.0f64,
            1e-6..1.0f64,
            0..5000u64,
            0.5..1.0f64,
            1..1000u64,
            any::<bool>(),
        ),
        (
            0.0..0.9999f64,
            1e-3..100.0f64,
            1..256usize,
            1..256usize,
            0..100_000u64,
            any::<u64>(),
        ),
        (
            0.0..2.0f64,
            1..50usize,
            1..1000u64,
            0..10u64,
            0..100u32,
            any::<bool>(),
        ),
    )
        .prop_map(|(a, b, c)| TrainConfig {
            lambda: a.0,
            target_lr: a.1,
            warmup_iters: a.2,
            step_gamma: a.3,
            decay_interval: a.4,
            plateau_drop: a.5,
            ema_rate: b.0,
            grad_clip_norm: b.1,
            batch_size: b.2,
            init_batch_size: b.3,
            max_iters: b.4,
            seed: b.5,
            eval_temperature: c.0,
            best_of: c.1,
            val_every: c.2,
            checkpoint_every: c.2 * c.3,
            max_bad_steps: c.4,
            augment: c.5,
        })
}

fn path() -> impl Strategy<Value = PathBuf> {
    "[a-z0-9_./-]{1,16}".prop_map(PathBuf::from)
}

fn run_config() -> impl Strategy<Value = RunConfig> {
    (
        model(),
        train(),
        prop_oneof![
            Just(Task::SuperResolution),
            Just(Task::Colorize),
            Just(Task::Inpaint)
        ],
        proptest::option::of(path()),
        (0..1000usize, 0..1000usize, 0..1000usize, any::<u64>()),
        path(),
        proptest::option::of(path()),
    )
        .prop_map(
            |(model, train, task, data, counts, out_dir, resume)| RunConfig {
                model,
                train,
                task: TaskConfig {
                    task,
                    data,
                    synthetic_train: counts.0,
                    synthetic_val: counts.1,
                    synthetic_test: counts.2,
                    data_seed: counts.3,
                },
                io: IoConfig { out_dir, resume },
            },
        )
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(c in run_config()) {
        let text = c.serialize();
        prop_assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn any_single_line_edit_is_located(c in run_config(), line in 0usize..60) {
        // Replacing a key with an unknown one is reported on exactly that line.
        let text = c.serialize();
        let lines: Vec<&str> = text.lines().collect();
        let k = line % lines.len();
        prop_assume!(lines[k].contains('='));
        let mut edited: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        edited[k] = "no_such_key = 1".into();
        let err = RunConfig::parse(&edited.join("\n")).unwrap_err();
        prop_assert!(matches!(err, Error::Config { line, .. } if line == k + 1), "{}", err);
    }
}

#[test]
fn comments_blank_lines_and_whitespace_are_ignored() {
    let c =
        RunConfig::parse("\n# a comment\n  [train]  \n  lambda   =  0.25\n\n# trailing\n").unwrap();
    assert_eq!(c.train.lambda, 0.25);
}

#[test]
fn bad_values_report_their_line() {
    for (text, line) in [
        ("[model]\nchannels = three\n", 2),
        ("[train]\naugment = yes\n", 2),
        ("[model]\ndependency = glow\n", 2),
        ("[train]\nlambda = inf\n", 2),
        ("[task]\n\ntask = denoise\n", 3),
    ] {
        let e = RunConfig::parse(text).unwrap_err();
        assert!(
            matches!(e, Error::Config { line: l, .. } if l == line),
            "{text:?}: {e}"
        );
    }
}

#[test]
fn cross_field_constraints_are_checked() {
    assert!(RunConfig::parse("[model]\nsize = 12\nn_scales = 3\n").is_err());
    assert!(RunConfig::parse("[train]\nbatch_size = 0\n").is_err());
}
