use std::fs;
use std::path::{Path, PathBuf};

use bandsel::dataio::{
    augment, build_samples, load_cube, load_labels, load_lidar, pearson_band_lidar, save_cube, save_labels, save_lidar, split,
    write_correlation_csv, DType, HsiCube, LabelMap, LidarRaster, SamplePair, SplitSpec,
};
use bandsel::evaluation::{evaluate_fusion, metrics_table, write_metrics_csv, ClassifierConfig, MetricsReport};
use bandsel::model::{init_params, load_checkpoint, save_checkpoint, ModelConfig};
use bandsel::selection::{rank_bands, read_band_list, read_ranking_scores, reduce_cube, select_top_k, write_band_list, write_ranking_csv, BandRanking, Strategy, Aggregation};
use bandsel::synthetic::{generate, SynthSpec};
use bandsel::training::{train as fit, TrainConfig};
use serde_json::json;

use crate::failure::Failure;
use crate::manifest::RunManifest;
use crate::{Cli, CorrelateArgs, EvalArgs, SelectArgs, SynthArgs, TrainArgs};

pub const CUBE: &str = "cube.toml";
pub const LIDAR: &str = "lidar.toml";
pub const LABELS: &str = "labels.toml";
pub const SPLIT: &str = "split.toml";
pub const TRUTH: &str = "truth.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

struct Dataset {
    cube: HsiCube,
    lidar: LidarRaster,
    labels: LabelMap,
    train: Vec<(usize, usize)>,
    test: Vec<(usize, usize)>,
}

impl Dataset {
    fn load(dir: &Path) -> Result<Self, Failure> {
        let cube = load_cube(dir.join(CUBE))?;
        let lidar = load_lidar(dir.join(LIDAR))?;
        let labels = load_labels(dir.join(LABELS))?;
        if (cube.width, cube.height) != (lidar.width, lidar.height) || (cube.width, cube.height) != (labels.width, labels.height) {
            return Err(Failure::usage(format!(
                "cube {}x{}, lidar {}x{} and labels {}x{} are not co-registered",
                cube.width, cube.height, lidar.width, lidar.height, labels.width, labels.height
            )));
        }
        let spec = SplitSpec::from_toml(&read_text(&dir.join(SPLIT))?)?;
        let (train, test) = split(&labels, &spec)?;
        Ok(Self { cube, lidar, labels, train, test })
    }

    fn train_samples(&self, patch_size: usize) -> Result<Vec<SamplePair>, Failure> {
        Ok(build_samples(&self.cube, &self.lidar, &self.labels, &self.train, patch_size)?)
    }

    fn inputs(dir: &Path) -> Vec<PathBuf> {
        [CUBE, LIDAR, LABELS, SPLIT].iter().map(|f| dir.join(f)).collect()
    }
}

pub fn synth(cli: &Cli, args: &SynthArgs) -> Result<(), Failure> {
    let mut m = RunManifest::begin("synth", &cli.out, cli.seed, cli.threads, vec![args.spec.clone()])?;
    let result = run_synth(cli, args, &mut m);
    m.finish(result)
}

fn run_synth(cli: &Cli, args: &SynthArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let mut spec = SynthSpec::from_toml(&read_text(&args.spec)?)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    m.set_config(&spec)?;
    let scene = generate(&spec)?;
    let out = &cli.out;
    save_cube(&scene.cube, out.join(CUBE), DType::F64)?;
    save_lidar(&scene.lidar, out.join(LIDAR), DType::F64)?;
    save_labels(&scene.labels, out.join(LABELS))?;
    scene.truth.write(out.join(TRUTH))?;
    let split_spec = SplitSpec::global(args.train_per_class, spec.seed);
    write_text(&out.join(SPLIT), &split_spec.to_toml())?;
    write_text(&out.join("spec.toml"), &spec.to_toml())?;
    for f in [CUBE, LIDAR, LABELS, TRUTH, SPLIT, "spec.toml"] {
        m.output(out.join(f));
    }
    Ok(())
}

pub fn correlate(cli: &Cli, args: &CorrelateArgs) -> Result<(), Failure> {
    let inputs = vec![args.cube.clone(), args.lidar.clone()];
    let mut m = RunManifest::begin("correlate", &cli.out, cli.seed, cli.threads, inputs)?;
    let result = run_correlate(cli, args, &mut m);
    m.finish(result)
}

fn run_correlate(cli: &Cli, args: &CorrelateArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let cube = load_cube(&args.cube)?;
    let lidar = load_lidar(&args.lidar)?;
    for ch in 0..lidar.channels {
        let r = pearson_band_lidar(&cube, &lidar, ch)?;
        let path = cli.out.join(format!("correlation_ch{ch}.csv"));
        write_correlation_csv(&path, &r)?;
        m.output(path);
    }
    Ok(())
}

/// Model config from an optional file, with data dimensions filled in where
/// the file leaves them out and flags applied last.
fn model_config(args: &TrainArgs, data: &Dataset, seed: Option<u64>) -> Result<ModelConfig, Failure> {
    let mut table = match &args.model {
        Some(p) => read_text(p)?
            .parse::<toml::Table>()
            .map_err(|e| Failure::usage(format!("bad model config {}: {e}", p.display())))?,
        None => toml::Table::new(),
    };
    let dims = [
        ("bands", data.cube.bands),
        ("lidar_channels", data.lidar.channels),
        ("num_classes", data.labels.num_classes()),
        ("patch_size", 9),
    ];
    for (key, value) in dims {
        table.entry(key).or_insert(toml::Value::Integer(value as i64));
    }
    if let Some(p) = args.patch_size {
        table.insert("patch_size".into(), toml::Value::Integer(p as i64));
    }
    if let Some(a) = &args.arch {
        table.insert("arch".into(), toml::Value::String(a.clone()));
    }
    if let Some(s) = seed {
        table.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    let cfg = ModelConfig::from_toml(&table.to_string())?;
    let expect = (data.cube.bands, data.lidar.channels, data.labels.num_classes());
    if (cfg.bands, cfg.lidar_channels, cfg.num_classes) != expect {
        return Err(Failure::usage(format!(
            "model expects {} bands, {} lidar channels, {} classes; data has {expect:?}",
            cfg.bands, cfg.lidar_channels, cfg.num_classes
        )));
    }
    Ok(cfg)
}

fn train_config(cli: &Cli, args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::from_toml(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.patience {
        cfg.early_stop_patience = v;
    }
    if args.augment {
        cfg.augment = true;
    }
    if args.no_augment {
        cfg.augment = false;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.threads = cli.threads;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(cli: &Cli, args: &TrainArgs) -> Result<(), Failure> {
    let mut inputs = Dataset::inputs(&args.data);
    inputs.extend(args.model.iter().chain(&args.config).cloned());
    let mut m = RunManifest::begin("train", &cli.out, cli.seed, cli.threads, inputs)?;
    let result = run_train(cli, args, &mut m);
    m.finish(result)
}

fn run_train(cli: &Cli, args: &TrainArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let data = Dataset::load(&args.data)?;
    let model_cfg = model_config(args, &data, cli.seed)?;
    let train_cfg = train_config(cli, args)?;
    m.set_config(json!({ "model": &model_cfg, "train": &train_cfg }))?;
    let samples = data.train_samples(model_cfg.patch_size)?;
    let (params, log) = fit(init_params(&model_cfg)?, &samples, &train_cfg)?;
    let ckpt = cli.out.join(CHECKPOINT_DIR);
    save_checkpoint(&params, &ckpt)?;
    let log_path = cli.out.join("runlog.csv");
    log.write_csv(&log_path)?;
    m.output(ckpt);
    m.output(log_path);
    let best = log.best_epoch.saturating_sub(1);
    m.summary = json!({
        "labeled_train_pixels": samples.len(),
        "train_samples": log.train_samples,
        "val_samples": log.val_samples,
        "epochs": log.epochs(),
        "best_epoch": log.best_epoch,
        "best_val_loss": log.val_loss.get(best),
        "best_val_oa": log.val_oa.get(best),
        "adam_steps": log.adam_steps,
    });
    Ok(())
}

pub fn select(cli: &Cli, args: &SelectArgs) -> Result<(), Failure> {
    let mut inputs = vec![args.checkpoint.clone()];
    inputs.extend(Dataset::inputs(&args.data));
    let mut m = RunManifest::begin("select", &cli.out, cli.seed, cli.threads, inputs)?;
    let result = run_select(cli, args, &mut m);
    m.finish(result)
}

fn run_select(cli: &Cli, args: &SelectArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let strategy: Strategy = args.strategy.parse()?;
    let params = load_checkpoint(&args.checkpoint)?;
    if args.k == 0 || args.k > params.config().bands {
        return Err(Failure::usage(format!("k must lie in 1..={}, got {}", params.config().bands, args.k)));
    }
    m.set_config(json!({ "strategy": strategy, "k": args.k, "augment": args.augment, "model": params.config() }))?;
    let data = Dataset::load(&args.data)?;
    let mut samples = data.train_samples(params.config().patch_size)?;
    if args.augment {
        samples = samples.iter().flat_map(augment).collect();
    }
    let ranking = rank_bands(&params, &samples, strategy)?;
    let top = select_top_k(&ranking, args.k)?;
    let ranking_path = cli.out.join("ranking.csv");
    let bands_path = cli.out.join("bands.txt");
    write_ranking_csv(&ranking, &ranking_path)?;
    write_band_list(&top, &bands_path)?;
    m.output(ranking_path);
    m.output(bands_path);
    m.summary = json!({ "samples": samples.len(), "selected": top });
    Ok(())
}

pub fn eval(cli: &Cli, args: &EvalArgs) -> Result<(), Failure> {
    let mut inputs = Dataset::inputs(&args.data);
    inputs.extend(args.bands.iter().chain(&args.ranking).chain(&args.classifier).cloned());
    let mut m = RunManifest::begin("eval", &cli.out, cli.seed, cli.threads, inputs)?;
    let result = run_eval(cli, args, &mut m);
    m.finish(result)
}

/// `(label, band indices)` for every report the invocation asks for.
fn band_sets(args: &EvalArgs, bands: usize) -> Result<Vec<(String, Vec<usize>)>, Failure> {
    if let Some(p) = &args.bands {
        let list = read_band_list(p)?;
        return Ok(vec![(format!("{} bands", list.len()), list)]);
    }
    if let Some(p) = &args.ranking {
        let scores = read_ranking_scores(p)?;
        if scores.len() != bands {
            return Err(Failure::usage(format!("ranking has {} bands, cube has {bands}", scores.len())));
        }
        let ranking = BandRanking::from_scores(scores, Strategy::Cross, Aggregation::Global);
        let counts = args.counts.clone().unwrap_or_default();
        return counts
            .into_iter()
            .map(|k| {
                let mut top = select_top_k(&ranking, k)?;
                top.sort_unstable();
                Ok((format!("{k} bands"), top))
            })
            .collect();
    }
    if args.all_bands {
        return Ok(vec![(format!("all {bands} bands"), (0..bands).collect())]);
    }
    Err(Failure::usage("one of --bands, --ranking or --all-bands is required"))
}

fn run_eval(cli: &Cli, args: &EvalArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let mut cfg = match &args.classifier {
        Some(p) => toml::from_str::<ClassifierConfig>(&read_text(p)?)
            .map_err(|e| Failure::usage(format!("bad classifier config {}: {e}", p.display())))?,
        None => ClassifierConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let data = Dataset::load(&args.data)?;
    let sets = band_sets(args, data.cube.bands)?;
    if sets.is_empty() {
        return Err(Failure::usage("no band counts given"));
    }
    m.set_config(json!({ "classifier": &cfg, "band_sets": &sets }))?;
    let mut rows: Vec<(String, MetricsReport)> = Vec::with_capacity(sets.len());
    for (label, bands) in sets {
        let reduced = reduce_cube(&data.cube, &bands)?;
        let report = evaluate_fusion(&reduced, &data.lidar, &data.labels, &data.train, &data.test, &cfg)?;
        rows.push((label, report));
    }
    let csv = cli.out.join("metrics.csv");
    let table = cli.out.join("metrics.txt");
    write_metrics_csv(&rows, &csv)?;
    let text = metrics_table(&rows);
    write_text(&table, &text)?;
    print!("{text}");
    m.output(csv);
    m.output(table);
    m.summary = serde_json::to_value(&rows).map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(())
}
