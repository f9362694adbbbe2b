use super::config::{BaselineKind, Resolved, RunConfig};
use super::container::{load_dataset, save_dataset, Checkpoint, FORMAT_VERSION};
use crate::diffcore::Rng;
use crate::error::{Error, Result};
use crate::eval::{
    diag_heatmap, evaluate, rank_report, write_comparison_csv, write_heatmap_csv, write_metrics_csv,
    write_rank_report_csv, ComparisonRow, MetricSet,
};
use crate::models::{init_model, Model, ModelKind, Phase};
use crate::pde::ProblemSpec;
use crate::sampling::{sample_collocation_with, CollocationSet, GridRole, ParamGrid, PointCounts};
use crate::reference::{reference_field, Grid};
use crate::train::{
    epochs_to_threshold, phase1_train, phase2_train, train_baseline, History, ProbeOutcome, TrainConfig,
};
use serde::Serialize;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Settings shared by every command after flags, environment and config
/// file have been merged.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: RunConfig,
    pub grids: Resolved,
    pub seed: u64,
    pub out: PathBuf,
    pub epochs: Option<usize>,
    pub jobs: usize,
}

impl Context {
    pub fn new(cfg: RunConfig, seed: u64, out: PathBuf, epochs: Option<usize>, jobs: usize) -> Result<Self> {
        let grids = cfg.resolve()?;
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        Ok(Self {
            cfg,
            grids,
            seed,
            out,
            epochs,
            jobs,
        })
    }

    fn train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.cfg.train
        }
    }

    fn spec(&self, mu: &[f64]) -> Result<ProblemSpec> {
        ProblemSpec::preset(&self.cfg.preset, mu)
    }

    pub fn dataset_path(&self, mu: &[f64]) -> PathBuf {
        self.out.join("data").join(format!("{}_{}.hlrp", self.cfg.preset, label(mu)))
    }

    pub fn phase1_path(&self) -> PathBuf {
        self.out.join("phase1").join("checkpoint.hlrp")
    }

    fn dataset(&self, mu: &[f64]) -> Result<CollocationSet> {
        let set = load_dataset(&self.dataset_path(mu))?;
        if set.spec != self.spec(mu)? {
            return Err(Error::Compatibility(format!(
                "dataset for {mu:?} was generated for a different problem; rerun gen-data"
            )));
        }
        Ok(set)
    }

    fn datasets(&self, grid: &ParamGrid) -> Result<Vec<CollocationSet>> {
        grid.iter().map(|mu| self.dataset(mu)).collect()
    }

    fn phase1_checkpoint(&self) -> Result<Checkpoint> {
        let ck = Checkpoint::load(&self.phase1_path())?;
        if ck.model.kind != ModelKind::HyperLrPinn || ck.model.phase != Phase::One {
            return Err(Error::Compatibility("phase-1 checkpoint holds a different model".into()));
        }
        if ck.preset != self.cfg.preset {
            return Err(Error::Compatibility(format!(
                "phase-1 checkpoint was trained on '{}', config names '{}'",
                ck.preset, self.cfg.preset
            )));
        }
        Ok(ck)
    }
}

/// File-name form of a coefficient vector, e.g. `30` or `1_0.5_2`.
pub fn label(mu: &[f64]) -> String {
    mu.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("_")
}

/// Runs `f` over `items` on up to `jobs` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every item processed"))
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_history(path: &Path, h: &History) -> Result<()> {
    h.write_csv(create(path)?)
}

fn summarize(what: &str, rows: &[(Vec<f64>, String, MetricSet)]) -> String {
    let worst = rows
        .iter()
        .max_by(|a, b| a.2.rel_err.total_cmp(&b.2.rel_err))
        .map(|(mu, _, m)| format!(", worst rel_err {:.4} at {mu:?}", m.rel_err))
        .unwrap_or_default();
    let n = rows.len().max(1) as f64;
    let abs = rows.iter().map(|r| r.2.abs_err).sum::<f64>() / n;
    let rel = rows.iter().map(|r| r.2.rel_err).sum::<f64>() / n;
    format!("{what}: {} run(s), mean abs_err {abs:.4}, mean rel_err {rel:.4}{worst}", rows.len())
}

#[derive(Serialize)]
struct ManifestEntry {
    mu: Vec<f64>,
    file: String,
    seed: u64,
    counts: PointCounts,
}

#[derive(Serialize)]
struct Manifest {
    format_version: u32,
    preset: String,
    seed: u64,
    datasets: Vec<ManifestEntry>,
}

/// One dataset per coefficient vector of the phase-1 and phase-2 grids,
/// plus `data/manifest.json`.
pub fn gen_data(ctx: &Context) -> Result<String> {
    let mut mus: Vec<Vec<f64>> = ctx.grids.phase1.values.clone();
    for mu in &ctx.grids.phase2.values {
        if !mus.contains(mu) {
            mus.push(mu.clone());
        }
    }
    let counts = ctx.grids.counts;
    let entries = par_map(&mus, ctx.jobs, |mu| {
        let spec = ctx.spec(mu)?;
        let field = reference_field(&spec, &Grid::standard(&spec))?;
        let set = sample_collocation_with(&spec, ctx.seed, counts, &field)?;
        let path = ctx.dataset_path(mu);
        save_dataset(&set, &path)?;
        Ok(ManifestEntry {
            mu: mu.clone(),
            file: path.file_name().expect("file name").to_string_lossy().into_owned(),
            seed: ctx.seed,
            counts: set.counts(),
        })
    })?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        preset: ctx.cfg.preset.clone(),
        seed: ctx.seed,
        datasets: entries,
    };
    let path = ctx.out.join("data").join("manifest.json");
    serde_json::to_writer_pretty(create(&path)?, &manifest)?;
    Ok(format!(
        "gen-data {}: {} dataset(s) in {}",
        ctx.cfg.preset,
        manifest.datasets.len(),
        path.parent().expect("data dir").display()
    ))
}

/// Phase 1 over the phase-1 grid: `phase1/{checkpoint.hlrp, history.csv, metrics.csv}`.
pub fn phase1(ctx: &Context) -> Result<String> {
    let tasks = ctx.datasets(&ctx.grids.phase1)?;
    let mut cfg = ctx.train();
    cfg.phase1_epochs = ctx.epochs.unwrap_or(cfg.phase1_epochs);
    let mut rng = Rng::new(ctx.seed);
    let mut model = init_model(ModelKind::HyperLrPinn, ctx.grids.hyper, &mut rng)?;
    let history = phase1_train(&mut model, &tasks, &cfg)?;
    let rows = tasks
        .iter()
        .map(|t| Ok((t.spec.mu(), "hyper-lr-pinn-phase1".to_string(), evaluate(&model, t)?)))
        .collect::<Result<Vec<_>>>()?;
    let dir = ctx.out.join("phase1");
    Checkpoint {
        preset: ctx.cfg.preset.clone(),
        model,
        epoch: history.rows.last().map_or(0, |r| r.epoch + 1),
        rng,
        mu_target: None,
    }
    .save(&dir.join("checkpoint.hlrp"))?;
    write_history(&dir.join("history.csv"), &history)?;
    write_metrics_csv(create(&dir.join("metrics.csv"))?, &rows)?;
    Ok(summarize(&format!("phase1 {} ({} epochs)", ctx.cfg.preset, cfg.phase1_epochs), &rows))
}

fn adapt(ctx: &Context, base: &Model, set: &CollocationSet, epochs: usize) -> Result<(Checkpoint, History)> {
    let mu = set.spec.mu();
    let mut model = base.phase2_convert(&mu)?;
    let cfg = TrainConfig {
        phase2_epochs: epochs,
        ..ctx.train()
    };
    let history = phase2_train(&mut model, set, &cfg)?;
    let ck = Checkpoint {
        preset: ctx.cfg.preset.clone(),
        model,
        epoch: epochs,
        rng: Rng::new(ctx.seed),
        mu_target: Some(mu),
    };
    Ok((ck, history))
}

/// Phase 2 for every target: `phase2/<mu>/{checkpoint.hlrp, history.csv}`
/// and `phase2/metrics.csv`.
pub fn phase2(ctx: &Context) -> Result<String> {
    let base = ctx.phase1_checkpoint()?.model;
    let epochs = ctx.epochs.unwrap_or(ctx.cfg.train.phase2_epochs);
    let rows = par_map(&ctx.grids.phase2.values, ctx.jobs, |mu| {
        let set = ctx.dataset(mu)?;
        let (ck, history) = adapt(ctx, &base, &set, epochs)?;
        let dir = ctx.out.join("phase2").join(label(mu));
        ck.save(&dir.join("checkpoint.hlrp"))?;
        write_history(&dir.join("history.csv"), &history)?;
        Ok((mu.clone(), "hyper-lr-pinn".to_string(), evaluate(&ck.model, &set)?))
    })?;
    write_metrics_csv(create(&ctx.out.join("phase2").join("metrics.csv"))?, &rows)?;
    Ok(summarize(&format!("phase2 {} ({epochs} epochs)", ctx.cfg.preset), &rows))
}

struct BaselineRun {
    kind: BaselineKind,
    seed: u64,
    /// Metrics per target, in grid order.
    results: Vec<(Vec<f64>, MetricSet)>,
}

fn fresh(ctx: &Context, kind: ModelKind, seed: u64) -> Result<(Model, Rng)> {
    let mut rng = Rng::new(seed);
    let arch = ctx.cfg.arch_for(kind, ctx.grids.family.mu_dim());
    let model = init_model(kind, arch, &mut rng)?;
    Ok((model, rng))
}

/// Trains one baseline kind with one seed. Vanilla and naive models train
/// per target; PINN-P trains once on the phase-1 grid and is evaluated at
/// every target. Checkpoints go under `dir` when given.
fn run_baseline(ctx: &Context, kind: BaselineKind, seed: u64, epochs: usize, dir: Option<&Path>) -> Result<BaselineRun> {
    let mk = kind.model_kind();
    let cfg = TrainConfig {
        baseline_epochs: epochs,
        seed,
        ..ctx.cfg.train
    };
    let save = |model: Model, rng: Rng, mu_target: Option<Vec<f64>>, h: &History, sub: &Path| -> Result<()> {
        if let Some(dir) = dir {
            let d = dir.join(sub);
            Checkpoint {
                preset: ctx.cfg.preset.clone(),
                model,
                epoch: epochs,
                rng,
                mu_target,
            }
            .save(&d.join("checkpoint.hlrp"))?;
            write_history(&d.join("history.csv"), h)?;
        }
        Ok(())
    };
    let results = if mk == ModelKind::PinnP {
        let tasks = ctx.datasets(&ctx.grids.phase1)?;
        let (mut model, rng) = fresh(ctx, mk, seed)?;
        let h = train_baseline(&mut model, &tasks, &cfg)?;
        let res = ctx
            .grids
            .phase2
            .iter()
            .map(|mu| Ok((mu.to_vec(), evaluate(&model, &ctx.dataset(mu)?)?)))
            .collect::<Result<Vec<_>>>()?;
        save(model, rng, None, &h, Path::new(""))?;
        res
    } else {
        par_map(&ctx.grids.phase2.values, ctx.jobs, |mu| {
            let set = ctx.dataset(mu)?;
            let (mut model, rng) = fresh(ctx, mk, seed)?;
            let h = train_baseline(&mut model, std::slice::from_ref(&set), &cfg)?;
            let m = evaluate(&model, &set)?;
            save(model, rng, Some(mu.clone()), &h, Path::new(&label(mu)))?;
            Ok((mu.clone(), m))
        })?
    };
    Ok(BaselineRun { kind, seed, results })
}

/// Baselines named in the config: `baseline/<kind>/...` and
/// `baseline/<kind>/metrics.csv`.
pub fn baseline(ctx: &Context) -> Result<String> {
    let epochs = ctx.epochs.unwrap_or(ctx.cfg.train.baseline_epochs);
    let mut lines = Vec::new();
    for &kind in &ctx.cfg.baseline.kinds {
        let dir = ctx.out.join("baseline").join(kind.label());
        let run = run_baseline(ctx, kind, ctx.seed, epochs, Some(&dir))?;
        let rows: Vec<_> = run
            .results
            .into_iter()
            .map(|(mu, m)| (mu, kind.label().to_string(), m))
            .collect();
        write_metrics_csv(create(&dir.join("metrics.csv"))?, &rows)?;
        lines.push(summarize(&format!("baseline {} {} ({epochs} epochs)", kind.label(), ctx.cfg.preset), &rows));
    }
    Ok(lines.join("\n"))
}

/// Metrics of a checkpoint on datasets, plus rank report and per-layer
/// coefficient heatmaps for low-rank models: `eval/{metrics,ranks}.csv`,
/// `eval/heatmap_l<l>.csv`.
pub fn eval(out: &Path, checkpoint: &Path, datasets: &[PathBuf]) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let sets = datasets.iter().map(|p| load_dataset(p)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(sets.len());
    for set in &sets {
        let mu = set.spec.mu();
        if set.spec.preset_name() != ck.preset {
            return Err(Error::Compatibility(format!(
                "checkpoint was trained on '{}', dataset is '{}'",
                ck.preset,
                set.spec.preset_name()
            )));
        }
        let want = ck.model.mu_dim();
        if want != 0 && want != mu.len() {
            return Err(Error::Compatibility(format!("model takes {want} coefficient(s), dataset has {}", mu.len())));
        }
        if let Some(target) = &ck.mu_target {
            if *target != mu {
                return Err(Error::Compatibility(format!(
                    "model was fitted at {target:?}, dataset is at {mu:?}"
                )));
            }
        }
        rows.push((mu, ck.model.kind.name().to_string(), evaluate(&ck.model, set)?));
    }
    let dir = out.join("eval");
    write_metrics_csv(create(&dir.join("metrics.csv"))?, &rows)?;
    if ck.model.kind.is_low_rank() && !sets.is_empty() {
        let mut seen = Vec::new();
        for (mu, _, _) in &rows {
            if !seen.contains(mu) {
                seen.push(mu.clone());
            }
        }
        let grid = ParamGrid::new(GridRole::Phase2Targets, seen)?;
        write_reports(&dir, &ck.model, &grid)?;
    }
    Ok(summarize(&format!("eval {}", checkpoint.display()), &rows))
}

fn write_reports(dir: &Path, model: &Model, grid: &ParamGrid) -> Result<()> {
    write_rank_report_csv(create(&dir.join("ranks.csv"))?, &rank_report(model, grid)?)?;
    for l in 0..model.arch.hidden {
        let heat = diag_heatmap(model, grid, l)?;
        write_heatmap_csv(create(&dir.join(format!("heatmap_l{}.csv", l + 1)))?, grid, &heat)?;
    }
    Ok(())
}

/// Phase 2 plus every configured baseline over the target grid, with
/// baselines repeated over `sweep.runs` seeds: `sweep/table.csv` and the
/// per-run `sweep/metrics.csv`.
pub fn sweep(ctx: &Context) -> Result<String> {
    let base = ctx.phase1_checkpoint()?.model;
    let p2_epochs = ctx.epochs.unwrap_or(ctx.cfg.train.phase2_epochs);
    let bl_epochs = ctx.epochs.unwrap_or(ctx.cfg.train.baseline_epochs);
    let hyper = par_map(&ctx.grids.phase2.values, ctx.jobs, |mu| {
        let set = ctx.dataset(mu)?;
        let (ck, _) = adapt(ctx, &base, &set, p2_epochs)?;
        evaluate(&ck.model, &set)
    })?;
    let mut runs = Vec::new();
    for &kind in &ctx.cfg.baseline.kinds {
        for k in 0..ctx.cfg.sweep.runs as u64 {
            runs.push(run_baseline(ctx, kind, ctx.seed + k, bl_epochs, None)?);
        }
    }
    let mut table = Vec::new();
    let mut detail = Vec::new();
    for (i, mu) in ctx.grids.phase2.iter().enumerate() {
        table.push(ComparisonRow {
            mu: mu.to_vec(),
            method: "hyper-lr-pinn".into(),
            abs_err: vec![hyper[i].abs_err],
            rel_err: vec![hyper[i].rel_err],
        });
        detail.push((mu.to_vec(), "hyper-lr-pinn".to_string(), hyper[i]));
        for &kind in &ctx.cfg.baseline.kinds {
            let mine: Vec<&BaselineRun> = runs.iter().filter(|r| r.kind == kind).collect();
            table.push(ComparisonRow {
                mu: mu.to_vec(),
                method: kind.label().into(),
                abs_err: mine.iter().map(|r| r.results[i].1.abs_err).collect(),
                rel_err: mine.iter().map(|r| r.results[i].1.rel_err).collect(),
            });
            for r in mine {
                detail.push((mu.to_vec(), format!("{}#{}", kind.label(), r.seed), r.results[i].1));
            }
        }
    }
    let dir = ctx.out.join("sweep");
    write_comparison_csv(create(&dir.join("table.csv"))?, &table)?;
    write_metrics_csv(create(&dir.join("metrics.csv"))?, &detail)?;
    Ok(summarize(&format!("sweep {}", ctx.cfg.preset), &detail))
}

/// Epochs until the mean absolute test error drops below the threshold, for
/// the adapted model and a fresh vanilla PINN: `probe/probe.csv` with
/// columns `mu, hyper_epochs, hyper_reached, vanilla_epochs, vanilla_reached`
/// (an unreached target reports the whole budget).
pub fn epochs_probe(ctx: &Context, threshold: Option<f64>) -> Result<String> {
    let base = ctx.phase1_checkpoint()?.model;
    let threshold = threshold.unwrap_or(ctx.cfg.probe.threshold);
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Config("probe threshold must be non-negative".into()));
    }
    let budget = ctx.epochs.unwrap_or(ctx.cfg.probe.budget);
    let cfg = ctx.train();
    let rows = par_map(&ctx.grids.phase2.values, ctx.jobs, |mu| {
        let set = ctx.dataset(mu)?;
        let mut hyper = base.phase2_convert(mu)?;
        let h = epochs_to_threshold(&mut hyper, &set, &cfg, budget, threshold)?;
        let (mut vanilla, _) = fresh(ctx, ModelKind::VanillaPinn, ctx.seed)?;
        let v = epochs_to_threshold(&mut vanilla, &set, &cfg, budget, threshold)?;
        Ok((mu.clone(), h, v))
    })?;
    let path = ctx.out.join("probe").join("probe.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["mu", "hyper_epochs", "hyper_reached", "vanilla_epochs", "vanilla_reached"])?;
    let cell = |o: ProbeOutcome| match o {
        ProbeOutcome::Reached(k) => (k.to_string(), "true".to_string()),
        ProbeOutcome::Exhausted(k) => (k.to_string(), "false".to_string()),
    };
    let mut faster = 0;
    for (mu, h, v) in &rows {
        let (he, hr) = cell(*h);
        let (ve, vr) = cell(*v);
        w.write_record([label(mu), he, hr, ve, vr])?;
        let count = |o: ProbeOutcome| o.epochs().unwrap_or(usize::MAX);
        if count(*v) >= count(*h) {
            faster += 1;
        }
    }
    w.flush()?;
    Ok(format!(
        "epochs-probe {}: threshold {threshold}, budget {budget}; hyper at least as fast on {faster}/{} target(s)",
        ctx.cfg.preset,
        rows.len()
    ))
}

/// Rank report and coefficient heatmaps of the phase-1 model over the
/// target grid: `ranks/ranks.csv`, `ranks/heatmap_l<l>.csv`.
pub fn rank_report_cmd(ctx: &Context) -> Result<String> {
    let model = ctx.phase1_checkpoint()?.model;
    let dir = ctx.out.join("ranks");
    write_reports(&dir, &model, &ctx.grids.phase2)?;
    let rows = rank_report(&model, &ctx.grids.phase2)?;
    let max = rows.iter().map(|r| r.phase2_trainable).max().unwrap_or(0);
    Ok(format!(
        "rank-report {}: {} target(s), at most {max} phase-2 trainable parameters",
        ctx.cfg.preset,
        rows.len()
    ))
}
