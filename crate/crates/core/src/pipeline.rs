//! End-to-end stages shared by the command line and the test suites:
//! surrogate data generation, windowing, splitting, flat and hierarchical
//! training, and evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batch::{WindowBatch, WindowOrigin};
use crate::config::RunConfig;
use crate::dataio::{load_matrix, Scaler, make_windows_strided, read_labels, split_indices, SplitSpec};
use crate::error::{FddError, Result};
use crate::hierarchy::{level2_subset, train_level1, train_level2, HierarchicalModel, LabelMap};
use crate::metrics::{confusion, EvalReport};
use crate::model::{train_standardized, TrainedModel};
use crate::plant::{default_scenarios, derive_seed, simulate_scenario, PlantConfig, Scenario};
use crate::prbs::{default_amplitude, design_band, plan_from_band, PrbsPlan};
use crate::tensor::Tensor2;
use crate::tune::{tune, TuneResult};

/// How surrogate records are generated and cut into windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub runs_per_class: usize,
    /// Normal samples simulated before the fault onset and then discarded.
    pub warmup: usize,
    /// Samples kept after onset.
    pub length: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            runs_per_class: 4,
            warmup: 100,
            length: 400,
            horizon: 60,
            stride: 5,
        }
    }
}

/// Excitation design inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrbsSpec {
    /// Loop whose set-point is excited.
    pub target: String,
    pub tau_ol: f64,
    pub tau_cl: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Amplitude as a fraction of the set-point range.
    #[serde(default = "default_fraction")]
    pub amplitude_fraction: f64,
    #[serde(default = "default_burst")]
    pub burst_len: usize,
    #[serde(default = "default_interval")]
    pub burst_interval: usize,
}

fn default_safety() -> f64 {
    crate::prbs::DEFAULT_SAFETY_FACTOR
}
fn default_fraction() -> f64 {
    0.02
}
fn default_burst() -> usize {
    crate::prbs::DEFAULT_BURST
}
fn default_interval() -> usize {
    crate::prbs::DEFAULT_INTERVAL
}

impl PrbsSpec {
    pub fn surrogate() -> Self {
        Self {
            target: "sp2".into(),
            tau_ol: 6.0,
            tau_cl: 3.0,
            safety: default_safety(),
            amplitude_fraction: default_fraction(),
            burst_len: default_burst(),
            burst_interval: default_interval(),
        }
    }

    pub fn plan(&self, plant: &PlantConfig) -> Result<PrbsPlan> {
        let lp = &plant.loops[plant.loop_index(&self.target)?];
        let nyquist = std::f64::consts::PI / plant.sample_time;
        let band = design_band(self.tau_ol, self.tau_cl, self.safety, nyquist)?;
        let amplitude = default_amplitude(lp.setpoint_range) * self.amplitude_fraction / 0.02;
        let mut plan = plan_from_band(&band, plant.sample_time, amplitude)?;
        plan.target = self.target.clone();
        plan.burst_len = self.burst_len;
        plan.burst_interval = self.burst_interval;
        Ok(plan)
    }
}

/// Windows of every scenario; `excited` is aligned window for window with
/// `plain` when present.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioWindows {
    pub plain: WindowBatch,
    pub excited: Option<WindowBatch>,
    pub class_names: Vec<String>,
}

/// Simulates `runs_per_class` records per scenario and windows the post-onset
/// part. Run `r` of class `c` uses source id `c·runs + r` and a seed derived
/// from `(seed, c, r)`; the excited record reuses that seed.
pub fn generate_windows(
    plant: &PlantConfig,
    scenarios: &[Scenario],
    prbs: Option<&PrbsPlan>,
    spec: &DataSpec,
    seed: u64,
) -> Result<ScenarioWindows> {
    if spec.length < spec.horizon {
        return Err(FddError::InsufficientData {
            len: spec.length,
            horizon: spec.horizon,
        });
    }
    let features = plant.record_width();
    let mut plain = WindowBatch::empty(spec.horizon, features);
    let mut excited = prbs.map(|_| WindowBatch::empty(spec.horizon, features));
    for sc in scenarios {
        for r in 0..spec.runs_per_class {
            let mut p = plant.clone();
            p.seed = derive_seed(seed, sc.class as u64, r as u64);
            let fault = sc.fault.map(|mut f| {
                f.onset = spec.warmup;
                f
            });
            let source = (sc.class * spec.runs_per_class + r) as u32;
            let total = spec.warmup + spec.length;
            let cut = |plan: Option<&PrbsPlan>| -> Result<WindowBatch> {
                let rec = simulate_scenario(&p, fault.as_ref(), sc.class, plan, total)?;
                let rows: Vec<Vec<f64>> = (spec.warmup..total).map(|i| rec.data.row(i).to_vec()).collect();
                let series = Tensor2::from_rows(&rows)?;
                let labels = vec![sc.class; spec.length];
                make_windows_strided(&series, &labels, spec.horizon, spec.stride, source)
            };
            plain.append(&cut(None)?)?;
            if let (Some(e), Some(plan)) = (excited.as_mut(), prbs) {
                e.append(&cut(Some(plan))?)?;
            }
        }
    }
    Ok(ScenarioWindows {
        plain,
        excited,
        class_names: scenarios.iter().map(|s| s.name.clone()).collect(),
    })
}

/// Train/validation/test batches sharing one index split, for the plain and
/// (when present) excited windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitWindows {
    pub train: WindowBatch,
    pub val: WindowBatch,
    pub test: WindowBatch,
    pub excited: Option<(WindowBatch, WindowBatch, WindowBatch)>,
}

pub fn split_windows(w: &ScenarioWindows, spec: &SplitSpec, seed: u64) -> Result<SplitWindows> {
    let idx = split_indices(&w.plain, spec, seed)?;
    let cut = |b: &WindowBatch| (b.subset(&idx.train), b.subset(&idx.validation), b.subset(&idx.test));
    let (train, val, test) = cut(&w.plain);
    Ok(SplitWindows {
        train,
        val,
        test,
        excited: w.excited.as_ref().map(cut),
    })
}

/// Which model `train` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Flat,
    Level1,
    Level2,
}

impl std::str::FromStr for Mode {
    type Err = FddError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Self::Flat),
            "level1" => Ok(Self::Level1),
            "level2" => Ok(Self::Level2),
            _ => Err(FddError::Input(format!("unknown mode {s:?}"))),
        }
    }
}

/// Files written by [`simulate_to_dir`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub records: Vec<String>,
    pub plan: Option<PrbsPlan>,
}

/// Simulates every default scenario `runs_per_class` times and writes
/// `dCC_rRR.dat` records with `.labels` and `.json` sidecars, excited twins
/// `dCC_rRR_prbs.dat` when the config has a `[prbs]` section, `classes.txt`
/// and `prbs_plan.toml`.
pub fn simulate_to_dir(cfg: &RunConfig, dir: &Path) -> Result<SimulateSummary> {
    std::fs::create_dir_all(dir)?;
    let plant = cfg.plant();
    let scenarios = default_scenarios();
    let plan = cfg.prbs.as_ref().map(|p| p.plan(&plant)).transpose()?;
    let total = cfg.data.warmup + cfg.data.length;
    let mut records = Vec::new();
    for sc in &scenarios {
        for r in 0..cfg.data.runs_per_class {
            let mut p = plant.clone();
            p.seed = derive_seed(cfg.seed, sc.class as u64, r as u64);
            let fault = sc.fault.map(|mut f| {
                f.onset = cfg.data.warmup;
                f
            });
            let stem = format!("d{:02}_r{:02}", sc.class, r);
            simulate_scenario(&p, fault.as_ref(), sc.class, None, total)?.export(dir, &stem)?;
            records.push(stem.clone());
            if let Some(plan) = &plan {
                let stem = format!("{stem}_prbs");
                simulate_scenario(&p, fault.as_ref(), sc.class, Some(plan), total)?.export(dir, &stem)?;
                records.push(stem);
            }
        }
    }
    let names: Vec<String> = scenarios.iter().map(|s| s.name.clone()).collect();
    std::fs::write(dir.join("classes.txt"), names.join("\n") + "\n")?;
    if let Some(plan) = &plan {
        std::fs::write(dir.join("prbs_plan.toml"), plan.to_text())?;
    }
    Ok(SimulateSummary { records, plan })
}

/// Windows read from a directory of records, split and ready to train on.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub splits: SplitWindows,
    pub class_names: Vec<String>,
    /// Files that were stored transposed and got fixed up.
    pub transposed: Vec<String>,
    pub files: Vec<String>,
}

struct RecordFile {
    stem: String,
    path: PathBuf,
    labels: Vec<usize>,
    test: bool,
}

/// `dNN.dat` → class NN, `dNN_te.dat` → normal before `test_onset`, NN after.
fn labels_from_name(stem: &str, rows: usize, test_onset: usize) -> Option<(Vec<usize>, bool)> {
    let rest = stem.strip_prefix('d')?;
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    let class: usize = digits.parse().ok()?;
    let test = rest[digits.len()..].starts_with("_te");
    let labels = (0..rows)
        .map(|i| if test && i < test_onset { 0 } else { class })
        .collect();
    Some((labels, test))
}

/// Contiguous runs of one label, as `(start, end)` row ranges.
fn label_runs(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            runs.push((start, i));
            start = i;
        }
    }
    runs
}

/// Windows of each single-label run of a record; runs shorter than the
/// horizon yield nothing.
fn window_record(data: &Tensor2, labels: &[usize], horizon: usize, stride: usize, source: u32) -> Result<WindowBatch> {
    let mut out = WindowBatch::empty(horizon, data.cols());
    for (a, b) in label_runs(labels) {
        if b - a < horizon {
            continue;
        }
        let rows: Vec<Vec<f64>> = (a..b).map(|i| data.row(i).to_vec()).collect();
        let w = make_windows_strided(&Tensor2::from_rows(&rows)?, &labels[a..b], horizon, stride, source)?;
        // Origins refer to the record, not the run.
        let origins: Vec<WindowOrigin> = w
            .origins()
            .iter()
            .map(|o| WindowOrigin { source, start: o.start + a })
            .collect();
        out.append(&WindowBatch::new(horizon, data.cols(), w.data().to_vec(), w.labels().to_vec(), origins)?)?;
    }
    Ok(out)
}

/// Reads every `*.dat` in `dir`. Labels come from a `.labels` sidecar or the
/// `dNN[_te].dat` naming convention; classes at or above `data.classes` are
/// skipped. Windows never cross a label change. `*_prbs.dat` files are the
/// excited twins of the record with the same stem. When `_te` files exist
/// they form the test set and the rest is split into train and validation.
pub fn ingest_dir(cfg: &RunConfig, dir: &Path) -> Result<Ingested> {
    let d = &cfg.data;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dat"))
        .collect();
    paths.sort();
    let mut plain = Vec::new();
    let mut excited_paths = std::collections::BTreeMap::new();
    for path in paths {
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        if let Some(base) = stem.strip_suffix("_prbs") {
            excited_paths.insert(base.to_string(), path);
            continue;
        }
        plain.push((stem, path));
    }
    if plain.is_empty() {
        return Err(FddError::Input(format!("no .dat records in {}", dir.display())));
    }

    let mut transposed = Vec::new();
    let mut records = Vec::new();
    let mut matrices = Vec::new();
    for (stem, path) in plain {
        let m = load_matrix(&path, Some(d.features))?;
        if m.data.cols() != d.features {
            return Err(FddError::Input(format!(
                "{} has {} columns, expected {}",
                path.display(),
                m.data.cols(),
                d.features
            )));
        }
        if m.transposed {
            transposed.push(stem.clone());
        }
        let sidecar = path.with_extension("labels");
        let (labels, test) = if sidecar.exists() {
            (read_labels(&sidecar)?, stem.contains("_te"))
        } else {
            labels_from_name(&stem, m.data.rows(), d.test_onset)
                .ok_or_else(|| FddError::Input(format!("no labels for {}", path.display())))?
        };
        if labels.len() != m.data.rows() {
            return Err(FddError::Input(format!("{} labels for {} rows in {}", labels.len(), m.data.rows(), path.display())));
        }
        if labels.iter().any(|&l| l >= d.classes) {
            continue;
        }
        records.push(RecordFile { stem, path, labels, test });
        matrices.push(m.data);
    }

    let have_excited = !excited_paths.is_empty();
    let mut pool = WindowBatch::empty(d.horizon, d.features);
    let mut pool_x = WindowBatch::empty(d.horizon, d.features);
    let mut test = WindowBatch::empty(d.horizon, d.features);
    let mut test_x = WindowBatch::empty(d.horizon, d.features);
    for (source, (rec, data)) in records.iter().zip(&matrices).enumerate() {
        let w = window_record(data, &rec.labels, d.horizon, d.stride, source as u32)?;
        let wx = if have_excited {
            let p = excited_paths
                .get(&rec.stem)
                .ok_or_else(|| FddError::Input(format!("{} has no excited twin", rec.path.display())))?;
            let m = load_matrix(p, Some(d.features))?.data;
            if m.shape() != data.shape() {
                return Err(FddError::Input(format!("{} does not match its plain record", p.display())));
            }
            Some(window_record(&m, &rec.labels, d.horizon, d.stride, source as u32)?)
        } else {
            None
        };
        let (dst, dst_x) = if rec.test { (&mut test, &mut test_x) } else { (&mut pool, &mut pool_x) };
        dst.append(&w)?;
        if let Some(wx) = wx {
            dst_x.append(&wx)?;
        }
    }

    let spec = cfg.split.spec();
    let splits = if test.is_empty() {
        let idx = split_indices(&pool, &spec, cfg.seed)?;
        let cut = |b: &WindowBatch| (b.subset(&idx.train), b.subset(&idx.validation), b.subset(&idx.test));
        let (train, val, te) = cut(&pool);
        SplitWindows {
            train,
            val,
            test: te,
            excited: have_excited.then(|| cut(&pool_x)),
        }
    } else {
        let fit = spec.train + spec.validation;
        let pool_spec = SplitSpec {
            train: spec.train / fit,
            validation: spec.validation / fit,
            test: 0.0,
            contiguous: spec.contiguous,
        };
        let idx = split_indices(&pool, &pool_spec, cfg.seed)?;
        let cut = |b: &WindowBatch| (b.subset(&idx.train), b.subset(&idx.validation));
        let (train, val) = cut(&pool);
        SplitWindows {
            train,
            val,
            test,
            excited: have_excited.then(|| {
                let (a, b) = cut(&pool_x);
                (a, b, test_x)
            }),
        }
    };

    let names_path = dir.join("classes.txt");
    let class_names = if names_path.exists() {
        let names: Vec<String> = std::fs::read_to_string(&names_path)?.lines().map(str::to_string).collect();
        if names.len() < d.classes {
            return Err(FddError::Input("classes.txt lists fewer names than classes".into()));
        }
        names[..d.classes].to_vec()
    } else {
        (0..d.classes).map(|c| c.to_string()).collect()
    };
    Ok(Ingested {
        splits,
        class_names,
        transposed,
        files: records.iter().map(|r| r.stem.clone()).collect(),
    })
}

const ARCHIVES: [&str; 3] = ["train", "val", "test"];

/// Writes `train.win`, `val.win`, `test.win` (and `_prbs` twins) plus
/// `classes.txt`.
pub fn write_archives(dir: &Path, splits: &SplitWindows, class_names: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let write = |name: &str, b: &WindowBatch| -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{name}.win")))?);
        b.write_to(f)
    };
    for (name, b) in ARCHIVES.iter().zip([&splits.train, &splits.val, &splits.test]) {
        write(name, b)?;
    }
    if let Some((a, b, c)) = &splits.excited {
        for (name, b) in ARCHIVES.iter().zip([a, b, c]) {
            write(&format!("{name}_prbs"), b)?;
        }
    }
    std::fs::write(dir.join("classes.txt"), class_names.join("\n") + "\n")?;
    Ok(())
}

pub fn read_archives(dir: &Path) -> Result<(SplitWindows, Vec<String>)> {
    let read = |name: &str| -> Result<WindowBatch> {
        let path = dir.join(format!("{name}.win"));
        let f = std::fs::File::open(&path)
            .map_err(|e| FddError::Input(format!("cannot open {}: {e}", path.display())))?;
        WindowBatch::read_from(std::io::BufReader::new(f))
    };
    let excited = if dir.join("train_prbs.win").exists() {
        Some((read("train_prbs")?, read("val_prbs")?, read("test_prbs")?))
    } else {
        None
    };
    let splits = SplitWindows {
        train: read("train")?,
        val: read("val")?,
        test: read("test")?,
        excited,
    };
    let names = std::fs::read_to_string(dir.join("classes.txt"))?
        .lines()
        .map(str::to_string)
        .collect();
    Ok((splits, names))
}

impl SplitWindows {
    /// The excited splits, or an input error when none were ingested.
    pub fn excited(&self) -> Result<&(WindowBatch, WindowBatch, WindowBatch)> {
        self.excited
            .as_ref()
            .ok_or_else(|| FddError::Input("no excited (PRBS) windows available".into()))
    }
}

pub fn label_map(cfg: &RunConfig) -> Result<LabelMap> {
    LabelMap::new(cfg.data.classes, cfg.hierarchy.normal, &cfg.hierarchy.incipient)
}

/// Trains one model. `prbs` selects excited windows for level 2.
pub fn train_mode(cfg: &RunConfig, splits: &SplitWindows, mode: Mode, prbs: bool) -> Result<TrainedModel> {
    let (h, f) = (splits.train.horizon(), splits.train.features());
    let map = label_map(cfg)?;
    match mode {
        Mode::Flat => {
            let c = cfg.model.model_config(cfg.data.classes, f, h, cfg.seed)?;
            train_standardized(&splits.train, &splits.val, &c)
        }
        Mode::Level1 => {
            let c = cfg.model.model_config(map.level1_classes(), f, h, cfg.seed)?;
            train_level1(&splits.train, &splits.val, &map, &c)
        }
        Mode::Level2 => {
            let c = cfg.level2_section().model_config(map.level2_classes().len(), f, h, cfg.seed)?;
            if prbs {
                let (t, v, _) = splits.excited()?;
                train_level2(t, v, &map, &c)
            } else {
                train_level2(&splits.train, &splits.val, &map, &c)
            }
        }
    }
}

/// Training and validation windows a mode trains on, standardized with a
/// scaler fit on the training part, and the mode's class count.
pub fn mode_sets(cfg: &RunConfig, splits: &SplitWindows, mode: Mode, prbs: bool) -> Result<(WindowBatch, WindowBatch, usize)> {
    let map = label_map(cfg)?;
    let (mut t, mut v, classes) = match mode {
        Mode::Flat => (splits.train.clone(), splits.val.clone(), cfg.data.classes),
        Mode::Level1 => {
            let (mut t, mut v) = (splits.train.clone(), splits.val.clone());
            t.relabel(|l| map.to_level1(l));
            v.relabel(|l| map.to_level1(l));
            (t, v, map.level1_classes())
        }
        Mode::Level2 => {
            let (t, v) = if prbs {
                let (t, v, _) = splits.excited()?;
                (t, v)
            } else {
                (&splits.train, &splits.val)
            };
            (level2_subset(t, &map), level2_subset(v, &map), map.level2_classes().len())
        }
    };
    if t.is_empty() {
        return Err(FddError::EmptySplit("training"));
    }
    let s = Scaler::fit_rows(t.data().chunks(t.features()), t.features())?;
    t = s.apply_batch(&t)?;
    v = s.apply_batch(&v)?;
    Ok((t, v, classes))
}

/// Successive-halving search for one mode, starting from the mode's model
/// section.
pub fn tune_mode(cfg: &RunConfig, splits: &SplitWindows, mode: Mode, prbs: bool) -> Result<TuneResult> {
    let (t, v, classes) = mode_sets(cfg, splits, mode, prbs)?;
    let section = if mode == Mode::Level2 { cfg.level2_section() } else { &cfg.model };
    let base = section.model_config(classes, t.features(), t.horizon(), cfg.seed)?;
    tune(&t, &v, &base, &cfg.tune.space, cfg.tune.budget, cfg.tune.initial_epochs, cfg.seed)
}

/// Flat-model report on the test split.
pub fn evaluate_flat(cfg: &RunConfig, model: &TrainedModel, test: &WindowBatch, names: &[String], dataset_id: &str) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(FddError::EmptySplit("test"));
    }
    let pred = model.predict_raw(test)?;
    let cm = confusion(test.labels(), &pred, cfg.data.classes)?;
    EvalReport::build(cm, names.to_vec(), cfg.hierarchy.normal, None, "flat", dataset_id, test.horizon())
}

/// Combined report; level 2 reads the excited test windows when `prbs`.
pub fn evaluate_hierarchical(
    cfg: &RunConfig,
    level1: TrainedModel,
    level2: TrainedModel,
    splits: &SplitWindows,
    prbs: bool,
    names: &[String],
    dataset_id: &str,
) -> Result<EvalReport> {
    let h = HierarchicalModel::new(level1, level2, label_map(cfg)?)?;
    let excited = if prbs { Some(&splits.excited()?.2) } else { None };
    let mut r = h.combined_metrics(&splits.test, excited, names.to_vec(), dataset_id)?;
    r.model_id = format!("hierarchical (prbs {})", if prbs { "on" } else { "off" });
    Ok(r)
}

/// Mean per-class recall over `classes` (classes without support skipped).
pub fn mean_recall(truth: &[usize], pred: &[usize], classes: &[usize]) -> f64 {
    let rates: Vec<f64> = classes
        .iter()
        .filter_map(|&c| {
            let idx: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
            (!idx.is_empty()).then(|| idx.iter().filter(|&&i| pred[i] == c).count() as f64 / idx.len() as f64)
        })
        .collect();
    rates.iter().sum::<f64>() / rates.len().max(1) as f64
}

/// Accuracies of one seed of the hierarchical-benefit experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitRow {
    pub seed: u64,
    pub flat_incipient: f64,
    pub flat_non_incipient: f64,
    pub hier_non_incipient: f64,
    pub level2_incipient_off: f64,
    pub level2_incipient_on: f64,
}

/// Trains flat, level-1 and both level-2 variants on surrogate data for one
/// seed and measures per-class accuracy averages on the test split.
pub fn benefit_run(cfg: &RunConfig, seed: u64) -> Result<BenefitRow> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let plant = cfg.plant();
    let spec = cfg
        .prbs
        .as_ref()
        .ok_or_else(|| FddError::Config("the benefit experiment needs a [prbs] section".into()))?;
    let plan = spec.plan(&plant)?;
    let scenarios = default_scenarios();
    let w = generate_windows(&plant, &scenarios, Some(&plan), &cfg.data.spec(), seed)?;
    let s = split_windows(&w, &cfg.split.spec(), seed)?;
    let map = label_map(&cfg)?;
    let incipient = map.incipient().to_vec();
    let faults: Vec<usize> = (0..cfg.data.classes)
        .filter(|&c| c != map.normal() && !incipient.contains(&c))
        .collect();

    let flat = train_mode(&cfg, &s, Mode::Flat, false)?;
    let pf = flat.predict_raw(&s.test)?;
    let l1 = train_mode(&cfg, &s, Mode::Level1, false)?;
    let l2_off = train_mode(&cfg, &s, Mode::Level2, false)?;
    let l2_on = train_mode(&cfg, &s, Mode::Level2, true)?;
    let h = HierarchicalModel::new(l1, l2_off.clone(), map.clone())?;
    let ph: Vec<usize> = h.route(&s.test, None)?.iter().map(|r| r.label).collect();

    let t2 = level2_subset(&s.test, &map);
    let e2 = level2_subset(&s.excited()?.2, &map);
    let inc2: Vec<usize> = (1..map.level2_classes().len()).collect();
    Ok(BenefitRow {
        seed,
        flat_incipient: mean_recall(s.test.labels(), &pf, &incipient),
        flat_non_incipient: mean_recall(s.test.labels(), &pf, &faults),
        hier_non_incipient: mean_recall(s.test.labels(), &ph, &faults),
        level2_incipient_off: mean_recall(t2.labels(), &l2_off.predict_raw(&t2)?, &inc2),
        level2_incipient_on: mean_recall(e2.labels(), &l2_on.predict_raw(&e2)?, &inc2),
    })
}

/// Per-seed rows and their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitReport {
    pub rows: Vec<BenefitRow>,
    pub mean: BenefitRow,
}

pub fn hierarchical_benefit(cfg: &RunConfig, seeds: &[u64]) -> Result<BenefitReport> {
    let rows: Vec<BenefitRow> = seeds.iter().map(|&s| benefit_run(cfg, s)).collect::<Result<_>>()?;
    let n = rows.len().max(1) as f64;
    let avg = |f: fn(&BenefitRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean = BenefitRow {
        seed: 0,
        flat_incipient: avg(|r| r.flat_incipient),
        flat_non_incipient: avg(|r| r.flat_non_incipient),
        hier_non_incipient: avg(|r| r.hier_non_incipient),
        level2_incipient_off: avg(|r| r.level2_incipient_off),
        level2_incipient_on: avg(|r| r.level2_incipient_on),
    };
    Ok(BenefitReport { rows, mean })
}
