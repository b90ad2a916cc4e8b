//! Experiment driver behind the command line: training runs, evaluation of
//! saved runs, sweeps, cost tables and run comparison.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint};
use crate::config::{self, apply_overrides};
use crate::data::{make_splits, GroupSampler, SynthDataset, TrainData};
use crate::error::{Error, Result};
use crate::metrics::CostReport;
use crate::model::{MimoSegNet, SingleSegNet};
use crate::reference::{cps_iteration, supervised_iteration};
use crate::tensor::Scalar;
use crate::trainer::{compute_step, evaluate, EvalReport, Mode, Precision, StepStats, TrainConfig, Trainer};

pub const OUT_ROOT_VAR: &str = "USCS_OUT_ROOT";
pub const THREADS_VAR: &str = "USCS_THREADS";

/// Output root: `$USCS_OUT_ROOT`, else `runs`.
pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Concurrent sweep runs: `$USCS_THREADS`, else 1.
pub fn thread_count() -> usize {
    std::env::var(THREADS_VAR)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or(1)
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V> {
    Ok(serde_json::from_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub model: u64,
    pub sampler: u64,
}

/// Paths relative to the run directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub config: String,
    pub metrics: String,
    pub evals: String,
    pub eval: String,
    pub checkpoints: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: BTreeMap<String, String>,
    pub version: String,
    pub seeds: Seeds,
    pub outputs: RunOutputs,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub final_miou: f64,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(run_dir: &Path) -> Result<Self> {
        read_json(&run_dir.join(Self::FILE))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let text: String = self.config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        config::from_text(&text)
    }
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub lr: f64,
    pub sup1: f64,
    pub sup2: f64,
    pub uscs1: f64,
    pub uscs2: f64,
    pub total: f64,
    pub mean_w: Option<f64>,
    pub non_overlap: Option<f64>,
    pub applied: bool,
    pub wall_ms: f64,
}

impl MetricsRow {
    fn new(s: &StepStats, wall_ms: f64) -> Self {
        MetricsRow {
            iter: s.iter,
            lr: s.lr,
            sup1: s.losses.sup1,
            sup2: s.losses.sup2,
            uscs1: s.losses.uscs1,
            uscs2: s.losses.uscs2,
            total: s.losses.total,
            mean_w: s.mean_w,
            non_overlap: s.non_overlap,
            applied: s.applied,
            wall_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iter: usize,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub non_overlap: f64,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_evals(path: &Path) -> Result<Vec<EvalRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Last row of `evals.csv` for a finished run. A run counts as finished once
/// `manifest.json` exists, which is written last.
pub fn final_eval(run_dir: &Path) -> Result<EvalRow> {
    let manifest = run_dir.join("manifest.json");
    if !manifest.is_file() {
        return Err(Error::io(&manifest, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let path = run_dir.join("evals.csv");
    read_evals(&path)?
        .pop()
        .ok_or_else(|| Error::io(&path, std::io::Error::new(std::io::ErrorKind::InvalidData, "no rows")))
}

fn run_typed<T: Scalar>(cfg: &TrainConfig, dir: &Path, log: &mut dyn FnMut(&str)) -> Result<(EvalReport, Vec<String>)> {
    let mut trainer = Trainer::<T>::new(cfg.clone())?;
    let mut metrics = csv::Writer::from_path(dir.join("metrics.csv"))?;
    let mut evals = csv::Writer::from_path(dir.join("evals.csv"))?;
    let ckpt_dir = dir.join("checkpoints");
    let mut checkpoints = Vec::new();
    let report_every = (cfg.max_iters / 10).max(1);
    while !trainer.done() {
        let start = Instant::now();
        let stats = trainer.step()?;
        metrics.serialize(MetricsRow::new(&stats, start.elapsed().as_secs_f64() * 1e3))?;
        let done = trainer.iter();
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < cfg.max_iters {
            let e = trainer.evaluate()?;
            evals.serialize(EvalRow {
                iter: done,
                miou: e.miou,
                pixel_accuracy: e.pixel_accuracy,
                non_overlap: e.non_overlap,
            })?;
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.max_iters {
            let stem = format!("iter_{done:06}");
            save_checkpoint(trainer.model.params(), &ckpt_dir, &stem)?;
            checkpoints.push(format!("checkpoints/{stem}.json"));
        }
        if done % report_every == 0 {
            log(&format!("iter {done}/{} total {:.4}", cfg.max_iters, stats.losses.total));
        }
    }
    metrics.flush().map_err(|e| Error::io(dir.join("metrics.csv"), e))?;
    let report = trainer.evaluate()?;
    evals.serialize(EvalRow {
        iter: cfg.max_iters,
        miou: report.miou,
        pixel_accuracy: report.pixel_accuracy,
        non_overlap: report.non_overlap,
    })?;
    evals.flush().map_err(|e| Error::io(dir.join("evals.csv"), e))?;
    save_checkpoint(trainer.model.params(), &ckpt_dir, "final")?;
    checkpoints.push("checkpoints/final.json".to_string());
    Ok((report, checkpoints))
}

/// Trains `cfg` into `dir`: `config.txt`, `metrics.csv`, `evals.csv`,
/// checkpoints, `eval.json` and `manifest.json`.
pub fn train_run(cfg: &TrainConfig, dir: &Path, log: &mut dyn FnMut(&str)) -> Result<RunManifest> {
    cfg.validate()?;
    create_dir(dir)?;
    config::save(cfg, &dir.join("config.txt"))?;
    let started = unix_ms();
    let (report, checkpoints) = match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, dir, log)?,
        Precision::F64 => run_typed::<f64>(cfg, dir, log)?,
    };
    write_json(&dir.join("eval.json"), &report)?;
    let manifest = RunManifest {
        config: config::to_pairs(cfg).into_iter().collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: Seeds {
            data: cfg.data_seed,
            split: cfg.split_seed,
            model: cfg.model_seed,
            sampler: cfg.sampler_seed,
        },
        outputs: RunOutputs {
            config: "config.txt".into(),
            metrics: "metrics.csv".into(),
            evals: "evals.csv".into(),
            eval: "eval.json".into(),
            checkpoints,
        },
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        final_miou: report.miou,
    };
    write_json(&dir.join(RunManifest::FILE), &manifest)?;
    Ok(manifest)
}

/// `train` verb. The run directory defaults to `<out root>/<config stem>`.
pub fn cmd_train(config_path: &Path, out: Option<PathBuf>) -> Result<PathBuf> {
    let cfg = config::load(config_path)?;
    let dir = out.unwrap_or_else(|| {
        out_root().join(config_path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned()))
    });
    let m = train_run(&cfg, &dir, &mut |line| eprintln!("{line}"))?;
    println!("{}: mIoU {:.4}", dir.display(), m.final_miou);
    Ok(dir)
}

fn eval_typed<T: Scalar>(cfg: &TrainConfig, checkpoint: &Path) -> Result<EvalReport> {
    let mut model = MimoSegNet::<T>::new(cfg.model_config(), cfg.model_seed)?;
    model.params_mut().assign(&load_checkpoint::<T>(checkpoint)?)?;
    let spec = cfg.scene_spec();
    let val = SynthDataset::generate(&spec, cfg.data_seed, cfg.num_scenes, cfg.val_scenes)?;
    let ids: Vec<usize> = (0..val.len).collect();
    evaluate(&model, &val, &ids, cfg.eval_batch)
}

/// `eval` verb: re-evaluates a run's final (or a given) checkpoint on the
/// validation scenes and writes `eval_recomputed.json`.
pub fn cmd_eval(run_dir: &Path, checkpoint: Option<PathBuf>) -> Result<EvalReport> {
    let cfg = config::load(&run_dir.join("config.txt"))?;
    let ckpt = checkpoint.unwrap_or_else(|| run_dir.join("checkpoints").join("final.json"));
    let report = match cfg.precision {
        Precision::F32 => eval_typed::<f32>(&cfg, &ckpt)?,
        Precision::F64 => eval_typed::<f64>(&cfg, &ckpt)?,
    };
    write_json(&run_dir.join("eval_recomputed.json"), &report)?;
    println!("mIoU {:.4} non-overlap {:.4}", report.miou, report.non_overlap);
    Ok(report)
}

/// One sweep arm: a label and the overrides it applies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arm {
    pub label: String,
    pub overrides: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepSpec {
    pub name: String,
    pub seeds: usize,
    pub arms: Vec<Arm>,
}

/// Overrides for one value of a single-key sweep. `gamma = 0` means an
/// all-ones weight mask.
pub fn arm_for(key: &str, value: &str) -> Arm {
    let overrides = match (key, value.parse::<f64>()) {
        ("gamma", Ok(0.0)) => "uncertainty = false".to_string(),
        ("gamma", Ok(_)) => format!("gamma = {value}\nuncertainty = true"),
        _ => format!("{key} = {value}"),
    };
    Arm {
        label: format!("{key}={value}"),
        overrides,
    }
}

impl SweepSpec {
    /// Parses `name = …`, `seeds = …`, and either `key = …` with
    /// `values = a,b,…` or any number of `arm.<label> = k=v; k=v` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut seeds = 1;
        let (mut key, mut values) = (None, None);
        let mut arms = Vec::new();
        let mut bad = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let Some((k, v)) = line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) else {
                bad.push(line.to_string());
                continue;
            };
            match k {
                "name" => name = Some(v.to_string()),
                "seeds" => match v.parse() {
                    Ok(n) if n >= 1 => seeds = n,
                    _ => bad.push("seeds".into()),
                },
                "key" => key = Some(v.to_string()),
                "values" => values = Some(v.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>()),
                _ => match k.strip_prefix("arm.") {
                    Some(label) => arms.push(Arm {
                        label: label.to_string(),
                        overrides: v.split(';').map(|s| s.trim().to_string() + "\n").collect(),
                    }),
                    None => bad.push(format!("{k} (unknown key)")),
                },
            }
        }
        match (key, values) {
            (Some(k), Some(vs)) => arms.extend(vs.iter().map(|v| arm_for(&k, v))),
            (None, None) => {}
            _ => bad.push("key/values (both required)".into()),
        }
        if arms.is_empty() {
            bad.push("arms (none given)".into());
        }
        if !bad.is_empty() {
            return Err(Error::InvalidConfig(bad));
        }
        Ok(SweepSpec {
            name: name.unwrap_or_else(|| "sweep".into()),
            seeds,
            arms,
        })
    }
}

/// Config of arm `arm` at seed index `seed`: split, model and sampler seeds
/// are offset by `seed`; the dataset is shared.
pub fn arm_config(base: &TrainConfig, arm: &Arm, seed: usize) -> Result<TrainConfig> {
    let (mut cfg, _) = apply_overrides(base, &arm.overrides)?;
    cfg.split_seed = base.split_seed + seed as u64;
    cfg.model_seed = base.model_seed + seed as u64;
    cfg.sampler_seed = base.sampler_seed + seed as u64;
    cfg.validate()?;
    Ok(cfg)
}

/// Aggregated row of a sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub arm: String,
    pub runs: usize,
    pub miou_mean: f64,
    pub miou_sd: f64,
    pub non_overlap_mean: f64,
    pub non_overlap_sd: f64,
    pub complete: bool,
}

/// Sample mean and standard deviation (`n − 1`; zero for one value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Builds the sweep table from the final rows of each run's `evals.csv`.
pub fn summarize_sweep(spec: &SweepSpec, dir: &Path) -> Vec<SummaryRow> {
    spec.arms
        .iter()
        .map(|arm| {
            let evals: Vec<EvalRow> = (0..spec.seeds)
                .filter_map(|s| final_eval(&dir.join(&arm.label).join(format!("seed{s}"))).ok())
                .collect();
            let miou: Vec<f64> = evals.iter().map(|e| e.miou).collect();
            let non_overlap: Vec<f64> = evals.iter().map(|e| e.non_overlap).collect();
            let (miou_mean, miou_sd) = mean_sd(&miou);
            let (non_overlap_mean, non_overlap_sd) = mean_sd(&non_overlap);
            SummaryRow {
                arm: arm.label.clone(),
                runs: evals.len(),
                miou_mean,
                miou_sd,
                non_overlap_mean,
                non_overlap_sd,
                complete: evals.len() == spec.seeds,
            }
        })
        .collect()
}

/// Runs every `(arm, seed)` under `dir` (up to [`thread_count`] at once),
/// then writes `summary.csv`. Failed runs leave their arm marked incomplete.
pub fn run_sweep(base: &TrainConfig, spec: &SweepSpec, dir: &Path) -> Result<Vec<SummaryRow>> {
    let jobs: Vec<(TrainConfig, PathBuf)> = spec
        .arms
        .iter()
        .flat_map(|arm| (0..spec.seeds).map(move |s| (arm, s)))
        .map(|(arm, s)| Ok((arm_config(base, arm, s)?, dir.join(&arm.label).join(format!("seed{s}")))))
        .collect::<Result<_>>()?;
    let next = std::sync::atomic::AtomicUsize::new(0);
    let failures = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..thread_count().min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some((cfg, run_dir)) = jobs.get(i) else { break };
                if let Err(e) = train_run(cfg, run_dir, &mut |_| {}) {
                    failures.lock().expect("poisoned").push(format!("{}: {e}", run_dir.display()));
                } else {
                    eprintln!("finished {}", run_dir.display());
                }
            });
        }
    });
    let rows = summarize_sweep(spec, dir);
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(dir.join("summary.csv"), e))?;
    for f in failures.into_inner().expect("poisoned") {
        eprintln!("run failed: {f}");
    }
    Ok(rows)
}

/// `ablate` verb. Errors when any run fails, after writing the partial table.
pub fn cmd_ablate(base_path: &Path, sweep_path: &Path, out: Option<PathBuf>) -> Result<PathBuf> {
    let base = config::load(base_path)?;
    let spec = SweepSpec::parse(&fs::read_to_string(sweep_path).map_err(|e| Error::io(sweep_path, e))?)?;
    let dir = out.unwrap_or_else(|| out_root().join(&spec.name));
    create_dir(&dir)?;
    let rows = run_sweep(&base, &spec, &dir)?;
    for r in &rows {
        println!(
            "{:<24} mIoU {:.4} ± {:.4}  non-overlap {:.4} ± {:.4}{}",
            r.arm,
            r.miou_mean,
            r.miou_sd,
            r.non_overlap_mean,
            r.non_overlap_sd,
            if r.complete { "" } else { "  (incomplete)" }
        );
    }
    if rows.iter().all(|r| r.complete) {
        Ok(dir)
    } else {
        Err(Error::InvalidArgument(format!("{}: incomplete sweep", dir.display())))
    }
}

/// Forward passes of one seeded iteration of the supervised single net, the
/// two-model reference and the MIMO method, read from instrumentation.
pub fn measured_passes(cfg: &TrainConfig) -> Result<[usize; 3]> {
    let probe = TrainConfig {
        num_scenes: 8,
        labeled_ratio: 0.5,
        batch_size: 1,
        mode: Mode::Uscs,
        ..cfg.clone()
    };
    let spec = probe.scene_spec();
    let ds = SynthDataset::generate(&spec, probe.data_seed, 0, probe.num_scenes)?;
    let data = TrainData::new(&ds, &make_splits(probe.num_scenes, probe.labeled_ratio, probe.split_seed)?);
    let mut sampler = GroupSampler::new(probe.sampler_config(), &data, probe.sampler_seed)?;
    let groups = sampler.next_groups::<f32>(&data, true)?;
    let u = groups.unlabeled.as_ref().expect("requested");

    let single = SingleSegNet::<f32>::new(probe.model_config(), 0)?;
    let before = single.counters().snapshot();
    supervised_iteration(&single, &groups.labeled1)?;
    let sup = single.counters().snapshot().since(before).forward_passes;

    let (a, b) = (SingleSegNet::<f32>::new(probe.model_config(), 1)?, SingleSegNet::<f32>::new(probe.model_config(), 2)?);
    cps_iteration(&a, &b, &groups.labeled1, u)?;
    let cps = a.counters().snapshot().forward_passes + b.counters().snapshot().forward_passes;

    let mimo = MimoSegNet::<f32>::new(probe.model_config(), 0)?;
    let before = mimo.counters().snapshot();
    compute_step(&mimo, &groups, &probe, 0, "")?;
    let uscs = mimo.counters().snapshot().since(before).forward_passes;
    Ok([sup, cps, uscs])
}

/// `cost` verb: writes `cost.csv` and `cost.json` under `out`.
pub fn cmd_cost(config_path: &Path, out: Option<PathBuf>) -> Result<CostReport> {
    let cfg = config::load(config_path)?;
    let report = CostReport::build(&cfg.model_config(), measured_passes(&cfg)?);
    let dir = out.unwrap_or_else(|| out_root().join("cost"));
    create_dir(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("cost.csv"))?;
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(dir.join("cost.csv"), e))?;
    write_json(&dir.join("cost.json"), &report)?;
    println!("{:<8} {:>12} {:>16} {:>6} {:>18}", "method", "params", "MACs/forward", "passes", "MACs/iteration");
    for r in &report.rows {
        println!(
            "{:<8} {:>12} {:>16} {:>6} {:>18}",
            r.method, r.params, r.macs_per_forward, r.forward_passes, r.macs_per_iteration
        );
    }
    Ok(report)
}

/// Comparison row recomputed from a run directory's raw files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub mode: String,
    pub lambda: String,
    pub gamma: String,
    pub uncertainty: String,
    pub miou: f64,
    pub non_overlap: f64,
    pub final_total_loss: f64,
    pub skipped_steps: usize,
}

pub fn report_row(run_dir: &Path) -> Result<ReportRow> {
    let cfg = config::load(&run_dir.join("config.txt"))?;
    let eval = final_eval(run_dir)?;
    let metrics = read_metrics(&run_dir.join("metrics.csv"))?;
    Ok(ReportRow {
        run: run_dir.display().to_string(),
        mode: cfg.mode.to_string(),
        lambda: cfg.lambda.to_string(),
        gamma: cfg.gamma.to_string(),
        uncertainty: cfg.uncertainty.to_string(),
        miou: eval.miou,
        non_overlap: eval.non_overlap,
        final_total_loss: metrics.last().map_or(f64::NAN, |m| m.total),
        skipped_steps: metrics.iter().filter(|m| !m.applied).count(),
    })
}

/// `report` verb: one row per run directory, printed and written as CSV.
pub fn cmd_report(run_dirs: &[PathBuf], out: Option<PathBuf>) -> Result<Vec<ReportRow>> {
    let rows: Vec<ReportRow> = run_dirs.iter().map(|d| report_row(d)).collect::<Result<_>>()?;
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(&path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let baseline = rows.first().map(|r| r.miou);
    for r in &rows {
        println!(
            "{:<40} {:<10} mIoU {:.4} ({:+.2} pts)  non-overlap {:.4}",
            r.run,
            r.mode,
            r.miou,
            100.0 * (r.miou - baseline.unwrap_or(r.miou)),
            r.non_overlap
        );
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_zero_arm_disables_weighting() {
        let base = TrainConfig::default();
        let zero = arm_config(&base, &arm_for("gamma", "0"), 0).unwrap();
        assert!(!zero.uncertainty);
        let half = arm_config(&base, &arm_for("gamma", "0.9"), 2).unwrap();
        assert!(half.uncertainty);
        assert_eq!(half.gamma, 0.9);
        assert_eq!(half.model_seed, base.model_seed + 2);
        assert_eq!(half.data_seed, base.data_seed);
    }

    #[test]
    fn sweep_spec_forms() {
        let s = SweepSpec::parse("name = g\nseeds = 3\nkey = gamma\nvalues = 0.1,0.3,0.5,0.7,0.9\n").unwrap();
        assert_eq!((s.arms.len(), s.seeds), (5, 3));
        let f = SweepSpec::parse("arm.summing = fusion = summing\narm.g3 = fusion = gridmix; grid_size = 3\n").unwrap();
        assert_eq!(f.arms[1].overrides, "fusion = gridmix\ngrid_size = 3\n");
        assert!(SweepSpec::parse("seeds = 0\n").is_err());
    }

    #[test]
    fn mean_sd_small_cases() {
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
