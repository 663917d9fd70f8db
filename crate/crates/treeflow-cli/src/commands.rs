//! One function per subcommand. Each run writes a self-contained directory:
//! config.json, checkpoint.json, metrics.csv, report.json; eval adds
//! predictions.csv and, in ensemble mode, ensemble.json.

use std::fs;
use std::path::{Path, PathBuf};

use treeflow::data::{domain_shift_split, gen_hidden_xor, train_test_split, NoiseKind};
use treeflow::inference::{bma_predict, evaluate, sample_trees, select_map_tree};
use treeflow::oracle::{enumerate_trees, exact_posterior, sampler_divergence};
use treeflow::reward::count_trees_by_depth;
use treeflow::training::train;
use treeflow::{
    seeded_rng, Dataset, Ensemble, LeafParamMode, PolicyModel, RewardParams, SplitSpec,
};

use num_bigint::BigUint;

use crate::config::{load_with_hash, DatasetSpec, NoiseSpec, RunConfig};
use crate::dataio::{load_csv, write_csv};
use crate::errors::{data, runtime, usage, CliError, CliResult};
use crate::formats::{
    oracle_top_k, read_checkpoint, sci_trunc4, tree_to_json, write_json, write_metrics_csv,
    CheckpointFile, EnsembleEntry, EvalJson, OracleReport, TrainReport, CHECKPOINT_VERSION,
};

impl NoiseSpec {
    fn kind(self) -> NoiseKind {
        match self {
            NoiseSpec::Binary => NoiseKind::Binary,
            NoiseSpec::Real => NoiseKind::Real,
        }
    }
}

pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub test_ood: Option<Dataset>,
}

/// Build the dataset and split it for one seed. The same seed drives both
/// the shuffle and the training run, so a seed list reproduces the
/// experiment matrix.
pub fn prepare(config: &RunConfig, seed: u64) -> CliResult<Prepared> {
    let full = match &config.dataset {
        DatasetSpec::Xor { n, num_noise, noise, seed: gen_seed } => {
            gen_hidden_xor(*n, *num_noise, noise.kind(), *gen_seed).map_err(data)?
        }
        DatasetSpec::Csv { path, label_column, categorical_columns } => {
            // With a shift configured the threshold is in raw units, so
            // scaling waits until the partition exists.
            let scale = config.shift.is_none();
            load_csv(Path::new(path), label_column, categorical_columns, scale)?
        }
    };
    match &config.shift {
        Some(shift) => {
            let feature = full
                .feature_names()
                .iter()
                .position(|n| *n == shift.feature)
                .ok_or_else(|| data(format!("shift feature '{}' not in dataset", shift.feature)))?;
            let (train, test, ood) = domain_shift_split(
                &full,
                feature,
                shift.threshold,
                shift.id_test_fraction,
                shift.train_below,
                seed,
            )
            .map_err(data)?;
            Ok(Prepared { train, test, test_ood: Some(ood) })
        }
        None => {
            let spec = SplitSpec { seed, train_fraction: config.train_fraction, shift: None };
            let (train, test) = train_test_split(&full, &spec).map_err(data)?;
            Ok(Prepared { train, test, test_ood: None })
        }
    }
}

struct TrainedRun {
    prepared: Prepared,
    model: PolicyModel,
    params: RewardParams,
    final_loss: f64,
    buffer_max: f64,
}

fn train_one(config: &RunConfig, hash: &str, seed: u64, run_dir: &Path) -> CliResult<TrainedRun> {
    let prepared = prepare(config, seed)?;
    let pcfg = config.policy_config(prepared.train.num_features())?;
    let params = config.reward_params(&prepared.train)?;
    let tcfg = config.train_config(seed);
    let mut model = PolicyModel::new(pcfg, &mut seeded_rng(seed));
    let metrics = train(&mut model, &prepared.train, &params, &tcfg).map_err(runtime)?;

    fs::create_dir_all(run_dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", run_dir.display())))?;
    write_json(&run_dir.join("config.json"), config)?;
    let checkpoint = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config_hash: hash.to_string(),
        seed,
        num_features: prepared.train.num_features(),
        num_thresholds: config.num_thresholds,
        d_max: config.d_max,
        hidden_layers: config.hidden_layers,
        hidden_units: config.hidden_units,
        num_classes: prepared.train.num_classes(),
        alpha: params.alpha.clone(),
        beta: params.beta,
        temperature: params.temperature,
        params: model.flatten_params(),
    };
    write_json(&run_dir.join("checkpoint.json"), &checkpoint)?;
    write_metrics_csv(&run_dir.join("metrics.csv"), hash, &metrics)?;
    let last = metrics.last().expect("at least one step");
    Ok(TrainedRun {
        prepared,
        model,
        params,
        final_loss: last.mean_loss,
        buffer_max: last.buffer_max,
    })
}

pub fn cmd_train(
    config_path: &Path,
    out: Option<&Path>,
    seeds: Option<Vec<u64>>,
) -> CliResult<()> {
    let (config, hash) = load_with_hash(config_path)?;
    let seeds = seeds.unwrap_or_else(|| config.seeds.clone());
    if seeds.is_empty() {
        return Err(usage("need at least one seed"));
    }
    let out_root = config.resolve_out(out);
    for &seed in &seeds {
        let run_dir = out_root.join(format!("run-{seed}"));
        let run = train_one(&config, &hash, seed, &run_dir)?;
        let report = TrainReport {
            config_hash: hash.clone(),
            seed,
            steps: config.steps,
            final_mean_loss: run.final_loss,
            final_log_z: run.model.log_z,
            buffer_max_log_reward: run.buffer_max,
            train_rows: run.prepared.train.num_rows(),
            test_rows: run.prepared.test.num_rows(),
        };
        write_json(&run_dir.join("report.json"), &report)?;
        println!(
            "run-{seed}: {} steps, final loss {:.6}, log_z {:.4} -> {}",
            config.steps,
            run.final_loss,
            run.model.log_z,
            run_dir.display()
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Single,
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestSet {
    Id,
    Ood,
}

pub struct EvalArgs {
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    pub mode: EvalMode,
    pub samples: usize,
    pub seed: Option<u64>,
    pub leaf_params: LeafParamMode,
    pub test_set: TestSet,
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let (config, hash) = load_with_hash(&args.config)?;
    let ck = read_checkpoint(&args.checkpoint)?;
    if ck.config_hash != hash {
        return Err(data(format!(
            "checkpoint hash {} does not match config hash {hash}",
            ck.config_hash
        )));
    }
    if args.samples == 0 {
        return Err(usage("need at least one sample"));
    }
    let seed = args.seed.unwrap_or(ck.seed);
    let prepared = prepare(&config, seed)?;
    if ck.num_features != prepared.train.num_features()
        || ck.num_classes != prepared.train.num_classes()
    {
        return Err(data("checkpoint shape does not match the dataset"));
    }
    let model = ck.restore_model()?;
    let params =
        RewardParams::new(ck.alpha.clone(), ck.beta, ck.temperature).map_err(data)?;
    let test = match args.test_set {
        TestSet::Id => &prepared.test,
        TestSet::Ood => prepared
            .test_ood
            .as_ref()
            .ok_or_else(|| usage("config has no shift, so there is no ood test set"))?,
    };

    let mut rng = seeded_rng(seed);
    let trees =
        sample_trees(&model, &prepared.train, args.samples, &mut rng).map_err(runtime)?;
    let ensemble = match args.mode {
        EvalMode::Single => {
            let map = select_map_tree(&trees, &prepared.train, &params).map_err(runtime)?;
            Ensemble::from_scored_trees(
                vec![(map, 0.0)],
                &prepared.train,
                &params.alpha,
                args.leaf_params,
                &mut rng,
            )
            .map_err(runtime)?
        }
        EvalMode::Ensemble => {
            Ensemble::build(&trees, &prepared.train, &params, args.leaf_params, &mut rng)
                .map_err(runtime)?
        }
    };
    let report = evaluate(&ensemble, test).map_err(data)?;

    let out_dir = match &args.out {
        Some(dir) => dir.clone(),
        None => args
            .checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(match args.mode {
                EvalMode::Single => "eval-single",
                EvalMode::Ensemble => "eval-ensemble",
            }),
    };
    fs::create_dir_all(&out_dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let eval_json = EvalJson {
        config_hash: hash.clone(),
        seed,
        mode: match args.mode {
            EvalMode::Single => "single".to_string(),
            EvalMode::Ensemble => "ensemble".to_string(),
        },
        test_set: match args.test_set {
            TestSet::Id => "id".to_string(),
            TestSet::Ood => "ood".to_string(),
        },
        samples: args.samples,
        accuracy: report.accuracy,
        f1: report.f1,
        model_size: report.model_size,
    };
    write_json(&out_dir.join("report.json"), &eval_json)?;
    write_predictions_csv(&out_dir.join("predictions.csv"), &ensemble, test)?;
    if args.mode == EvalMode::Ensemble {
        let entries: Vec<EnsembleEntry> = ensemble
            .members()
            .iter()
            .map(|m| EnsembleEntry {
                tree: tree_to_json(&m.tree, config.num_thresholds),
                log_posterior: m.log_posterior,
                alpha: ck.alpha.clone(),
            })
            .collect();
        write_json(&out_dir.join("ensemble.json"), &entries)?;
    }
    println!(
        "eval {} on {} rows: accuracy {:.4}, f1 {:.4}, size {:.1} -> {}",
        eval_json.mode,
        test.num_rows(),
        report.accuracy,
        report.f1,
        report.model_size,
        out_dir.display()
    );
    Ok(())
}

fn write_predictions_csv(path: &Path, ensemble: &Ensemble, test: &Dataset) -> CliResult<()> {
    let mut out = String::from("row_id,predicted_class");
    for c in 0..test.num_classes() {
        out.push_str(&format!(",p_{c}"));
    }
    out.push('\n');
    for i in 0..test.num_rows() {
        let (pred, probs) = bma_predict(ensemble, test.row(i));
        out.push_str(&format!("{i},{pred}"));
        for p in probs {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| runtime(format!("write {}: {e}", path.display())))
}

pub fn cmd_count_space(num_features: usize, depth: usize) -> CliResult<()> {
    let per_depth = count_trees_by_depth(num_features, depth).map_err(usage)?;
    println!("search space: p={num_features} features, depth up to {depth}");
    println!("{:<6} {:<24} {:<24} scientific", "depth", "trees_at_depth", "trees_up_to_depth");
    let mut cumulative = BigUint::from(0u32);
    for (i, count) in per_depth.iter().enumerate() {
        cumulative += count;
        println!(
            "{:<6} {:<24} {:<24} {}",
            i + 1,
            count.to_string(),
            cumulative.to_string(),
            sci_trunc4(&cumulative)
        );
    }
    Ok(())
}

pub struct OracleArgs {
    pub config: PathBuf,
    pub cap: usize,
    pub samples: usize,
    pub tv_threshold: f64,
    pub log_z_threshold: f64,
    pub out: Option<PathBuf>,
}

pub fn cmd_oracle_check(args: &OracleArgs) -> CliResult<()> {
    let (config, hash) = load_with_hash(&args.config)?;
    let seed = config.seeds[0];
    let out_root = config.resolve_out(args.out.as_deref());
    let run_dir = out_root.join(format!("run-{seed}"));
    let run = train_one(&config, &hash, seed, &run_dir)?;

    let trees = enumerate_trees(&run.prepared.train, config.d_max, config.num_thresholds, args.cap)
        .map_err(runtime)?;
    let exact = exact_posterior(&trees, &run.prepared.train, &run.params).map_err(runtime)?;
    let mut rng = seeded_rng(seed);
    let (tv, gap) = sampler_divergence(&run.model, &run.prepared.train, &exact, args.samples, &mut rng)
        .map_err(runtime)?;

    let passed = tv <= args.tv_threshold && gap <= args.log_z_threshold;
    let report = OracleReport {
        config_hash: hash,
        seed,
        num_trees: exact.trees.len(),
        log_partition: exact.log_partition,
        log_z: run.model.log_z,
        tv_distance: tv,
        log_z_gap: gap,
        tv_threshold: args.tv_threshold,
        log_z_threshold: args.log_z_threshold,
        passed,
        top_k: oracle_top_k(&exact, config.num_thresholds, 5),
    };
    write_json(&run_dir.join("report.json"), &report)?;
    println!(
        "oracle: {} trees, tv {:.4} (<= {}), log_z gap {:.4} (<= {}) -> {}",
        report.num_trees,
        tv,
        args.tv_threshold,
        gap,
        args.log_z_threshold,
        run_dir.display()
    );
    if passed {
        Ok(())
    } else {
        Err(CliError::Threshold(format!(
            "tv {tv:.4} vs {} or log_z gap {gap:.4} vs {}",
            args.tv_threshold, args.log_z_threshold
        )))
    }
}

pub fn cmd_xor(
    n: usize,
    num_noise: usize,
    noise: NoiseSpec,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let dataset = gen_hidden_xor(n, num_noise, noise.kind(), seed).map_err(usage)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    write_csv(&dataset, out)?;
    println!(
        "wrote {} rows x {} features -> {}",
        dataset.num_rows(),
        dataset.num_features(),
        out.display()
    );
    Ok(())
}
