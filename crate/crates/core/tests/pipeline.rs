use std::fs;
use std::path::{Path, PathBuf};

use sfag_core::backtest::StrategyConfig;
use sfag_core::commands::{execute, reproduce, CliError, Command, Report, Results};
use sfag_core::io::{ingest_csv, GenerateConfig, RunConfig, SimulateConfig};
use sfag_core::models::load_checkpoint;
use sfag_core::stylized_facts::StylizedFactReport;
use sfag_core::trainer::{Objective, TrainConfig, TrainLogRecord};

fn tiny_train() -> TrainConfig {
    TrainConfig {
        iterations: 6,
        n_critic: 2,
        batch: 4,
        latent_dim: 8,
        seq_len: 128,
        gen_hidden: vec![16],
        critic_hidden: vec![16],
        checkpoint_every: 3,
        seed: 5,
        ..Default::default()
    }
}

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
    real: PathBuf,
}

fn simulated(n: usize) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cmd = Command::Simulate {
        seed: 42,
        config: SimulateConfig {
            n,
            ..Default::default()
        },
    };
    execute(&cmd, &root.join("sim")).unwrap();
    Run {
        real: root.join("sim/returns.csv"),
        root,
        _dir: dir,
    }
}

fn train_and_generate(run: &Run, cfg: TrainConfig, n_paths: usize) -> Vec<PathBuf> {
    execute(
        &Command::Train {
            input: run.real.clone(),
            config: cfg,
        },
        &run.root.join("train"),
    )
    .unwrap();
    let rep = execute(
        &Command::Generate {
            checkpoint: run.root.join("train/generator.sfag"),
            seed: 9,
            config: GenerateConfig {
                n_paths,
                windows: 6,
                seq_len: None,
            },
        },
        &run.root.join("gen"),
    )
    .unwrap();
    rep.outputs.iter().map(|f| run.root.join("gen").join(f)).collect()
}

#[test]
fn end_to_end_outputs_validate() {
    let run = simulated(3000);
    let paths = train_and_generate(&run, tiny_train(), 3);
    let train_dir = run.root.join("train");

    // training log: one JSON record per iteration, in order
    let log = fs::read_to_string(train_dir.join("train_log.jsonl")).unwrap();
    let records: Vec<TrainLogRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 6);
    assert!(records.iter().enumerate().all(|(i, r)| r.iteration == i));
    assert!(records.iter().all(|r| r.wall_clock_ms.is_none()));

    let gen = load_checkpoint(&train_dir.join("generator.sfag")).unwrap();
    assert_eq!(gen.arch.seq_len, 128);
    assert!(train_dir.join("checkpoints/generator_iter000003.sfag").exists());
    assert!(train_dir.join("checkpoints/critic_iter000006.sfag").exists());

    let train_rep = Report::load(&train_dir.join("train.json")).unwrap();
    match &train_rep.results {
        Results::Train { targets, final_record, .. } => {
            assert!(targets.is_some());
            assert_eq!(final_record.as_ref().unwrap().iteration, 5);
        }
        other => panic!("{other:?}"),
    }

    for p in &paths {
        assert_eq!(ingest_csv(p).unwrap().returns().len(), 768);
    }

    let eval = execute(
        &Command::Evaluate {
            real: run.real.clone(),
            synth: paths.clone(),
        },
        &run.root.join("eval"),
    )
    .unwrap();
    match &eval.results {
        Results::Evaluate { runs, mean, .. } => {
            assert_eq!(runs.len(), 3);
            assert!(mean.gpd_gap.is_finite() && mean.cfvc_gap >= 0.0);
        }
        other => panic!("{other:?}"),
    }

    let bt = execute(
        &Command::Backtest {
            series: paths.clone(),
            config: StrategyConfig::default(),
        },
        &run.root.join("bt"),
    )
    .unwrap();
    match &bt.results {
        Results::Backtest {
            paths: rows,
            ann_return_cross_std,
            ..
        } => {
            assert_eq!(rows.len(), 3);
            assert!(rows.iter().all(|r| r.result.n_days == 768 - 60));
            assert!(ann_return_cross_std.unwrap() >= 0.0);
        }
        other => panic!("{other:?}"),
    }

    let report = execute(
        &Command::Report {
            reports: vec![run.root.join("eval/evaluate.json"), run.root.join("bt/backtest.json")],
            real: Some(run.real.clone()),
            synth: paths,
        },
        &run.root.join("report"),
    )
    .unwrap();
    assert_eq!(report.outputs.len(), 6);
    for f in &report.outputs {
        let mut rdr = csv::Reader::from_path(run.root.join("report").join(f)).unwrap();
        let width = rdr.headers().unwrap().len();
        let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
        assert!(!rows.is_empty(), "{f} is empty");
        assert!(rows.iter().all(|r| r.len() == width));
    }
    match report.results {
        Results::Report { merged, .. } => assert_eq!(merged, vec![eval, bt]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn generated_csv_round_trips_through_ingest() {
    let run = simulated(2000);
    let paths = train_and_generate(&run, tiny_train(), 2);
    let gen = load_checkpoint(&run.root.join("train/generator.sfag")).unwrap();
    let rep = Report::load(&run.root.join("gen/generate.json")).unwrap();
    let Command::Generate { seed, .. } = rep.command else {
        panic!("wrong command")
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    for p in &paths {
        let direct = sfag_core::models::generate_path(&gen, 6, seed, &mut rng).unwrap();
        assert_eq!(ingest_csv(p).unwrap().returns().values(), direct.values());
    }
}

#[test]
fn generate_is_deterministic_per_seed() {
    let run = simulated(2000);
    let first = train_and_generate(&run, tiny_train(), 2);
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
    let again = execute(
        &Command::Generate {
            checkpoint: run.root.join("train/generator.sfag"),
            seed: 9,
            config: GenerateConfig {
                n_paths: 2,
                windows: 6,
                seq_len: None,
            },
        },
        &run.root.join("gen2"),
    )
    .unwrap();
    for (f, b) in again.outputs.iter().zip(&bytes) {
        assert_eq!(&fs::read(run.root.join("gen2").join(f)).unwrap(), b);
    }
    assert_ne!(bytes[0], bytes[1], "paths within one call differ");
}

#[test]
fn evaluate_real_against_real_is_all_zero() {
    let run = simulated(3000);
    let rep = execute(
        &Command::Evaluate {
            real: run.real.clone(),
            synth: vec![run.real.clone(), run.real.clone()],
        },
        &run.root.join("eval"),
    )
    .unwrap();
    match rep.results {
        Results::Evaluate { mean, runs, .. } => {
            assert_eq!(mean, StylizedFactReport::default());
            assert!(runs.iter().all(|r| r.gaps == StylizedFactReport::default()));
        }
        other => panic!("{other:?}"),
    }
}

fn reproduce_ok(report: &Path, scratch: &Path) {
    let r = reproduce(report, scratch).unwrap_or_else(|e| panic!("{}: {e}", report.display()));
    assert!(!r.compared.is_empty());
}

#[test]
fn every_report_reproduces_bit_identically() {
    let run = simulated(2000);
    let paths = train_and_generate(&run, tiny_train(), 2);
    execute(
        &Command::Backtest {
            series: paths.clone(),
            config: StrategyConfig::default(),
        },
        &run.root.join("bt"),
    )
    .unwrap();
    execute(
        &Command::Report {
            reports: vec![run.root.join("bt/backtest.json")],
            real: Some(run.real.clone()),
            synth: paths,
        },
        &run.root.join("report"),
    )
    .unwrap();
    for (i, rel) in ["sim/simulate.json", "train/train.json", "gen/generate.json", "bt/backtest.json", "report/report.json"]
        .iter()
        .enumerate()
    {
        reproduce_ok(&run.root.join(rel), &run.root.join(format!("again{i}")));
    }
}

#[test]
fn tampered_output_is_a_mismatch() {
    let run = simulated(2000);
    let sim = run.root.join("sim");
    let mut body = fs::read_to_string(sim.join("returns.csv")).unwrap();
    body.push_str("9999,0.5\n");
    fs::write(sim.join("returns.csv"), body).unwrap();
    let err = reproduce(&sim.join("simulate.json"), &run.root.join("again")).unwrap_err();
    assert_eq!(err.exit_code(), 10);
    assert!(matches!(err, CliError::Mismatch(ref files) if files == &["returns.csv".to_string()]));
}

#[test]
fn seq_len_mismatch_and_short_data() {
    let run = simulated(2000);
    train_and_generate(&run, tiny_train(), 1);
    let err = execute(
        &Command::Generate {
            checkpoint: run.root.join("train/generator.sfag"),
            seed: 0,
            config: GenerateConfig {
                seq_len: Some(256),
                ..Default::default()
            },
        },
        &run.root.join("gen_bad"),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 7);

    let short = simulated(100);
    let err = execute(
        &Command::Train {
            input: short.real.clone(),
            config: tiny_train(),
        },
        &short.root.join("train"),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 7, "{err}");
}

#[test]
fn nan_abort_has_its_own_code() {
    let run = simulated(2000);
    let cfg = TrainConfig {
        lr: 1e300,
        ..tiny_train()
    };
    let err = execute(
        &Command::Train {
            input: run.real.clone(),
            config: cfg,
        },
        &run.root.join("train"),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 9, "{err}");
}

#[test]
fn config_file_drives_commands() {
    let cfg = RunConfig::from_toml_str(
        r#"
seed = 77
[train]
objective = "wgan-gp"
iterations = 3
[strategy]
lookback = 20
cost_bps = 0.0
"#,
        "inline",
    )
    .unwrap();
    assert_eq!(cfg.train.seed, 77);
    assert_eq!(cfg.train.objective, Objective::WganGp);
    assert_eq!(cfg.strategy.lookback, 20);
    assert!(RunConfig::from_toml_str("[train]\nbogus = 1\n", "inline").is_err());
}
