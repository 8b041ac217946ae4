//! Evaluation protocols: per-group models under mixed k-fold or
//! leave-one-person-out splits, and rendering of the resulting reports.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    fit_norm_stats, split_leave_one_out, split_mixed_kfold, NormStats, PreparedSlice,
    SliceWindows,
};
use crate::error::{Error, Result};
use crate::ingest::{
    extract_usable_spans, parse_ground_truth_xml, parse_sensor_csv, AnnotatedWalk, CsvOptions,
    SensorSequence, UsableSpan, WalkerGroup, DEFAULT_TIMESTAMP_COLUMN,
};
use crate::labeling::{build_square_wave, transition_indices};
use crate::metrics::{aggregate, MetricsConfig, SegmentEval, StepErrorReport};
use crate::neural::{
    predict_positions, Checkpoint, CheckpointMeta, LstmModel, TrainConfig, Trainer,
};
use crate::par::Execution;
use crate::postprocess::{binarize, signal_accuracy, PostprocessConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    /// Pool every participant's data and run k-fold cross-validation over
    /// fixed-length blocks of the usable spans.
    Mixed { k: usize },
    /// Hold out one participant (or each in turn). With `validation`, every
    /// remaining participant also takes a turn as the validation person.
    LeaveOneOut {
        #[serde(default)]
        test_participant: Option<String>,
        #[serde(default)]
        validation: bool,
    },
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol::Mixed { k: 10 }
    }
}

/// Overrides of the base training config for one model-selection candidate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridPoint {
    pub label: String,
    pub hidden_sizes: Option<(usize, usize)>,
    pub training_steps: Option<u64>,
    pub timesteps: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub learning_rate: Option<f64>,
}

impl GridPoint {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        if let Some(h) = self.hidden_sizes {
            c.hidden_sizes = h;
        }
        if let Some(s) = self.training_steps {
            c.training_steps = s;
        }
        if let Some(t) = self.timesteps {
            c.timesteps = t;
        }
        if let Some(d) = self.dropout_rate {
            c.dropout_rate = d;
        }
        if let Some(lr) = self.learning_rate {
            c.learning_rate = lr;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data_root: PathBuf,
    pub group: WalkerGroup,
    pub protocol: Protocol,
    pub train: TrainConfig,
    pub postprocess: PostprocessConfig,
    pub metrics: MetricsConfig,
    /// Seed for fold assignment.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub timestamp_column: String,
    /// Length of the evaluation blocks used by the mixed protocol.
    pub block_seconds: f64,
    /// Model-selection candidates for leave-one-out with validation.
    pub grid: Vec<GridPoint>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_root: PathBuf::from("data"),
            group: WalkerGroup::Sighted,
            protocol: Protocol::default(),
            train: TrainConfig::default(),
            postprocess: PostprocessConfig::default(),
            metrics: MetricsConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            timestamp_column: DEFAULT_TIMESTAMP_COLUMN.to_string(),
            block_seconds: 10.0,
            grid: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.postprocess.validate()?;
        if !(self.block_seconds > 0.0) {
            return Err(Error::InvalidConfig("block_seconds must be positive".into()));
        }
        if let Protocol::Mixed { k } = self.protocol {
            if k < 2 {
                return Err(Error::InvalidConfig(format!("k-fold needs k >= 2, got {k}")));
            }
        }
        Ok(())
    }

    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            timestamp_column: self.timestamp_column.clone(),
        }
    }
}

/// The usable, labeled spans of one walker group.
#[derive(Debug, Clone)]
pub struct GroupDataset {
    pub group: WalkerGroup,
    pub slices: Vec<PreparedSlice>,
    pub sample_period: f64,
}

impl GroupDataset {
    /// Label spans and keep the ones long enough for one window.
    pub fn from_spans(group: WalkerGroup, spans: &[UsableSpan], timesteps: usize) -> Result<Self> {
        let mut periods: Vec<f64> = spans.iter().map(|s| s.sample_period).collect();
        periods.sort_by(f64::total_cmp);
        let mut slices = Vec::new();
        for span in spans {
            if span.samples.len() < timesteps {
                log::info!(
                    "span {} has {} samples, fewer than {timesteps}; skipped",
                    crate::dataset::span_id(span),
                    span.samples.len()
                );
                continue;
            }
            let times = span.times();
            let sig = build_square_wave(&span.steps, &times);
            slices.push(PreparedSlice {
                id: crate::dataset::span_id(span),
                participant_id: span.participant_id.clone(),
                inputs: crate::dataset::span_inputs(span),
                labels: sig.values.iter().map(|&v| f64::from(v)).collect(),
                scored_steps: span.scored_steps(),
                times,
            });
        }
        if slices.is_empty() {
            return Err(Error::NoUsableData(format!("group {group}")));
        }
        Ok(GroupDataset {
            group,
            slices,
            sample_period: periods[periods.len() / 2],
        })
    }

    pub fn participants(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.slices.iter().map(|s| s.participant_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.slices.iter().map(|s| s.times.len()).sum()
    }
}

/// Every `<stem>.xml` under `root` with its sibling `<stem>.csv`, sorted.
pub fn walk_files(root: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut xmls: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    xmls.sort();
    Ok(xmls
        .into_iter()
        .map(|x| {
            let csv = x.with_extension("csv");
            (x, csv)
        })
        .collect())
}

fn read_walk(xml_path: &Path) -> Result<AnnotatedWalk> {
    let text = std::fs::read_to_string(xml_path).map_err(|e| Error::io(xml_path, e))?;
    parse_ground_truth_xml(&text).map_err(|e| e.in_file(xml_path))
}

fn read_sensors(csv_path: &Path, walk: &AnnotatedWalk, opts: &CsvOptions) -> Result<SensorSequence> {
    let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    parse_sensor_csv(
        std::io::BufReader::new(file),
        &walk.participant_id,
        &walk.path_id,
        opts,
    )
    .map_err(|e| e.in_file(csv_path))
}

/// Per-walk result of [`audit_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkAudit {
    pub file: String,
    pub participant_id: String,
    pub path_id: String,
    pub group: WalkerGroup,
    pub samples: usize,
    pub sample_period: f64,
    pub annotated_steps: usize,
    pub usable_spans: usize,
    pub usable_seconds: f64,
    pub scored_steps: usize,
}

/// Parse every walk under `root` (all groups) and summarize its usable
/// spans. The first malformed file aborts the audit; the returned error
/// names the file.
pub fn audit_dataset(root: &Path, opts: &CsvOptions) -> Result<Vec<WalkAudit>> {
    let mut out = Vec::new();
    for (xml_path, csv_path) in walk_files(root)? {
        let walk = read_walk(&xml_path)?;
        let seq = read_sensors(&csv_path, &walk, opts)?;
        let spans = match extract_usable_spans(&walk, &seq) {
            Ok(s) => s,
            Err(Error::NoUsableData(_)) => Vec::new(),
            Err(e) => return Err(e.in_file(&xml_path)),
        };
        out.push(WalkAudit {
            file: xml_path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            participant_id: walk.participant_id.clone(),
            path_id: walk.path_id.clone(),
            group: walk.walker_group,
            samples: seq.len(),
            sample_period: seq.sample_period,
            annotated_steps: walk.total_steps(),
            usable_spans: spans.len(),
            usable_seconds: spans.iter().map(UsableSpan::duration).sum(),
            scored_steps: spans.iter().map(|s| s.scored_steps().len()).sum(),
        });
    }
    if out.is_empty() {
        return Err(Error::NoUsableData(format!("no annotated walks under {}", root.display())));
    }
    Ok(out)
}

/// Parse every walk under `root` that belongs to `group`. Annotations of
/// other groups are skipped before their sensor files are opened.
pub fn load_group_spans(root: &Path, group: WalkerGroup, opts: &CsvOptions) -> Result<Vec<UsableSpan>> {
    let mut spans = Vec::new();
    for (xml_path, csv_path) in walk_files(root)? {
        let walk = read_walk(&xml_path)?;
        if walk.walker_group != group {
            continue;
        }
        let seq = read_sensors(&csv_path, &walk, opts)?;
        match extract_usable_spans(&walk, &seq) {
            Ok(s) => spans.extend(s),
            Err(Error::NoUsableData(w)) => log::warn!("walk {w} has no usable data"),
            Err(e) => return Err(e),
        }
    }
    if spans.is_empty() {
        return Err(Error::NoUsableData(format!("group {group} under {}", root.display())));
    }
    Ok(spans)
}

pub fn load_group(cfg: &ExperimentConfig) -> Result<GroupDataset> {
    let spans = load_group_spans(&cfg.data_root, cfg.group, &cfg.csv_options())?;
    GroupDataset::from_spans(cfg.group, &spans, cfg.train.timesteps)
}

/// A contiguous stretch `[start, end)` of one slice that is scored as a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalUnit {
    pub slice: usize,
    pub start: usize,
    pub end: usize,
}

fn whole_slices(data: &GroupDataset, which: &[usize]) -> Vec<EvalUnit> {
    which
        .iter()
        .map(|&s| EvalUnit {
            slice: s,
            start: 0,
            end: data.slices[s].times.len(),
        })
        .collect()
}

/// Cut every slice into blocks of `block_len` samples; a remainder shorter
/// than half a block joins the previous block.
pub fn make_blocks(data: &GroupDataset, block_len: usize) -> Vec<EvalUnit> {
    let block_len = block_len.max(2);
    let mut units = Vec::new();
    for (s, slice) in data.slices.iter().enumerate() {
        let len = slice.times.len();
        let mut start = 0;
        while start < len {
            let mut end = (start + block_len).min(len);
            if len - end < block_len / 2 {
                end = len;
            }
            units.push(EvalUnit { slice: s, start, end });
            start = end;
        }
    }
    units
}

/// Training windows whose last sample lies in one of `units`.
fn window_refs(data: &GroupDataset, units: &[EvalUnit], timesteps: usize) -> Vec<(usize, usize)> {
    let mut refs = Vec::new();
    for u in units {
        debug_assert!(data.slices[u.slice].times.len() >= timesteps);
        for e in u.start.max(timesteps - 1)..u.end {
            refs.push((u.slice, e));
        }
    }
    refs
}

fn normalized(slices: &[PreparedSlice], stats: &NormStats) -> Vec<PreparedSlice> {
    slices
        .iter()
        .map(|s| {
            let mut n = s.clone();
            stats.apply_rows(&mut n.inputs);
            n
        })
        .collect()
}

/// A trained model together with the input standardization it expects.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: LstmModel,
    pub norm: NormStats,
    pub timesteps: usize,
    pub loss_trace: Vec<f64>,
    pub train_windows: usize,
}

impl TrainedModel {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            adam: None,
            meta: CheckpointMeta {
                seed: cfg.seed,
                timesteps: self.timesteps,
                norm: Some(self.norm),
                config: Some(cfg.clone()),
            },
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let norm = ck
            .meta
            .norm
            .ok_or_else(|| Error::CorruptCheckpoint("checkpoint carries no input statistics".into()))?;
        if ck.meta.timesteps == 0 {
            return Err(Error::CorruptCheckpoint("checkpoint carries no window length".into()));
        }
        Ok(TrainedModel {
            model: ck.model,
            norm,
            timesteps: ck.meta.timesteps,
            loss_trace: Vec::new(),
            train_windows: 0,
        })
    }
}

/// Fit standardization on the windows ending inside `units`, then train.
pub fn train_on_units(data: &GroupDataset, units: &[EvalUnit], cfg: &TrainConfig) -> Result<TrainedModel> {
    let t = cfg.timesteps;
    let refs = window_refs(data, units, t);
    if refs.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let raw = SliceWindows {
        slices: &data.slices,
        refs: refs.clone(),
        timesteps: t,
    };
    let norm = fit_norm_stats(
        raw.refs
            .iter()
            .map(|&(s, e)| data.slices[s].inputs.slice(ndarray::s![e + 1 - t..=e, ..])),
    )?;
    let slices = normalized(&data.slices, &norm);
    let src = SliceWindows {
        slices: &slices,
        refs,
        timesteps: t,
    };
    let mut trainer = Trainer::new(cfg.new_model()?, cfg.clone())?;
    trainer.run(&src)?;
    Ok(TrainedModel {
        model: trainer.model,
        norm,
        timesteps: t,
        loss_trace: trainer.loss_trace,
        train_windows: src.refs.len(),
    })
}

/// Score `units` with a trained model.
pub fn evaluate_units(
    trained: &TrainedModel,
    data: &GroupDataset,
    units: &[EvalUnit],
    post: &PostprocessConfig,
    metrics: &MetricsConfig,
    exec: Execution,
) -> Result<StepErrorReport> {
    let mut evals = Vec::with_capacity(units.len());
    let mut accuracies = Vec::with_capacity(units.len());
    for u in units {
        let slice = &data.slices[u.slice];
        let mut inputs = slice.inputs.clone();
        trained.norm.apply_rows(&mut inputs);
        let raw = predict_positions(&trained.model, inputs.view(), trained.timesteps, u.start..u.end, exec)?;
        let bits = binarize(&raw, post);
        let truth_bits: Vec<u8> = slice.labels[u.start..u.end].iter().map(|&v| v as u8).collect();
        accuracies.push((signal_accuracy(&bits, &truth_bits)?, bits.len()));
        let times = &slice.times[u.start..u.end];
        let predicted: Vec<f64> = transition_indices(&bits).into_iter().map(|i| times[i]).collect();
        let (lo, hi) = (times[0], times[times.len() - 1]);
        let truth: Vec<f64> = slice
            .scored_steps
            .iter()
            .copied()
            .filter(|&t| t > lo && t <= hi)
            .collect();
        evals.push(SegmentEval::new(
            format!("{}[{}..{}]", slice.id, u.start, u.end),
            truth,
            predicted,
            (lo, hi),
        )?);
    }
    aggregate(&evals, &accuracies, metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RatePair {
    pub undercount: f64,
    pub overcount: f64,
}

impl RatePair {
    pub fn combined(&self) -> f64 {
        self.undercount + self.overcount
    }
}

/// Fold-averaged rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanRates {
    pub folds: usize,
    pub metric1: RatePair,
    pub metric2: RatePair,
    pub metric3: RatePair,
    pub signal_accuracy: f64,
}

impl MeanRates {
    pub fn of<'a>(reports: impl IntoIterator<Item = &'a StepErrorReport>) -> Option<Self> {
        let reports: Vec<&StepErrorReport> = reports.into_iter().collect();
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let pair = |m: usize| RatePair {
            undercount: reports.iter().map(|r| r.metric(m).undercount_rate).sum::<f64>() / n,
            overcount: reports.iter().map(|r| r.metric(m).overcount_rate).sum::<f64>() / n,
        };
        Some(MeanRates {
            folds: reports.len(),
            metric1: pair(1),
            metric2: pair(2),
            metric3: pair(3),
            signal_accuracy: reports.iter().map(|r| r.signal_accuracy).sum::<f64>() / n,
        })
    }

    pub fn metric(&self, m: usize) -> RatePair {
        match m {
            1 => self.metric1,
            2 => self.metric2,
            _ => self.metric3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_participant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_participant: Option<String>,
    pub train_windows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<StepErrorReport>,
    #[serde(default)]
    pub test: Option<StepErrorReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// (candidate label, mean validation metric-3 under + over)
    pub candidates: Vec<(String, f64)>,
    pub chosen: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub group: WalkerGroup,
    pub protocol: String,
    pub folds: Vec<FoldReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_valid: Option<MeanRates>,
    #[serde(default)]
    pub mean_test: Option<MeanRates>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
}

impl ExperimentReport {
    fn new(group: WalkerGroup, protocol: String, folds: Vec<FoldReport>) -> Self {
        let valid: Vec<&StepErrorReport> = folds.iter().filter_map(|f| f.valid.as_ref()).collect();
        let mean_valid = MeanRates::of(valid);
        let mean_test = MeanRates::of(folds.iter().filter_map(|f| f.test.as_ref()));
        ExperimentReport {
            group,
            protocol,
            folds,
            mean_valid,
            mean_test,
            selection: None,
        }
    }

    pub fn has_validation(&self) -> bool {
        self.folds.iter().any(|f| f.valid.is_some())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn fold_seed(cfg: &TrainConfig, fold: usize) -> TrainConfig {
    TrainConfig {
        seed: crate::rng::derive(cfg.seed, &[fold as u64]),
        ..cfg.clone()
    }
}

/// Mixed k-fold cross-validation over evaluation blocks.
pub fn run_mixed(data: &GroupDataset, k: usize, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let block_len = (cfg.block_seconds / data.sample_period).round() as usize;
    let blocks = make_blocks(data, block_len);
    let plans = split_mixed_kfold(blocks.len(), k, cfg.seed)?;
    let mut folds = Vec::with_capacity(plans.len());
    for (i, plan) in plans.iter().enumerate() {
        let train_units: Vec<EvalUnit> = plan.train.iter().map(|&b| blocks[b]).collect();
        let test_units: Vec<EvalUnit> = plan.test.iter().map(|&b| blocks[b]).collect();
        let tcfg = fold_seed(&cfg.train, i);
        let outcome = train_on_units(data, &train_units, &tcfg).and_then(|m| {
            let r = evaluate_units(&m, data, &test_units, &cfg.postprocess, &cfg.metrics, tcfg.execution)?;
            Ok((m, r))
        });
        folds.push(fold_from(plan.name.clone(), outcome, None, None));
    }
    Ok(ExperimentReport::new(data.group, format!("mixed-{k}-fold"), folds))
}

fn fold_from(
    name: String,
    outcome: Result<(TrainedModel, StepErrorReport)>,
    valid: Option<StepErrorReport>,
    participants: Option<(Option<String>, String)>,
) -> FoldReport {
    let (validation_participant, test_participant) = match participants {
        Some((v, t)) => (v, Some(t)),
        None => (None, None),
    };
    match outcome {
        Ok((m, r)) => {
            log::info!(
                "{name}: metric3 under {:.2}% over {:.2}%",
                100.0 * r.metric3.undercount_rate,
                100.0 * r.metric3.overcount_rate
            );
            FoldReport {
                name,
                validation_participant,
                test_participant,
                train_windows: m.train_windows,
                valid,
                test: Some(r),
                error: None,
                loss_trace: m.loss_trace,
            }
        }
        Err(e) => {
            log::error!("{name} failed: {e}");
            FoldReport {
                name,
                validation_participant,
                test_participant,
                train_windows: 0,
                valid: None,
                test: None,
                error: Some(e.to_string()),
                loss_trace: Vec::new(),
            }
        }
    }
}

/// Leave-one-person-out. Each fold trains on every participant other than
/// the test (and validation) participant and scores whole slices.
pub fn run_leave_one_out(
    data: &GroupDataset,
    test_participant: Option<&str>,
    validation: bool,
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
) -> Result<ExperimentReport> {
    let people = data.participants();
    if people.len() < 2 {
        return Err(Error::SingleParticipant);
    }
    if validation && people.len() < 3 {
        return Err(Error::TooFewParticipants {
            needed: 3,
            got: people.len(),
        });
    }
    let tests: Vec<String> = match test_participant {
        Some(p) if people.iter().any(|q| q == p) => vec![p.to_string()],
        Some(p) => return Err(Error::UnknownParticipant(p.to_string())),
        None => people.clone(),
    };
    let owners: Vec<&str> = data.slices.iter().map(|s| s.participant_id.as_str()).collect();
    let mut folds = Vec::new();
    for held in &tests {
        let rotations: Vec<Option<&String>> = if validation {
            people.iter().filter(|p| *p != held).map(Some).collect()
        } else {
            vec![None]
        };
        for v in rotations {
            let plan = split_leave_one_out(&owners, held, v.map(String::as_str))?;
            plan.validate()?;
            let idx = folds.len();
            let name = if tests.len() == 1 && validation {
                format!("cv{}", idx)
            } else {
                plan.name.clone()
            };
            let train_units = whole_slices(data, &plan.train);
            let test_units = whole_slices(data, &plan.test);
            let val_units = plan.validation.as_ref().map(|v| whole_slices(data, v));
            let tcfg = fold_seed(train_cfg, idx);
            let mut valid_report = None;
            let outcome = train_on_units(data, &train_units, &tcfg).and_then(|m| {
                if let Some(vu) = &val_units {
                    valid_report = Some(evaluate_units(&m, data, vu, &cfg.postprocess, &cfg.metrics, tcfg.execution)?);
                }
                let r = evaluate_units(&m, data, &test_units, &cfg.postprocess, &cfg.metrics, tcfg.execution)?;
                Ok((m, r))
            });
            folds.push(fold_from(name, outcome, valid_report, Some((v.cloned(), held.clone()))));
        }
    }
    let label = if validation {
        "leave-one-out+validation"
    } else {
        "leave-one-out"
    };
    Ok(ExperimentReport::new(data.group, label.to_string(), folds))
}

/// Run every grid candidate under leave-one-out with validation and keep the
/// one with the lowest mean validation metric-3 combined error.
pub fn select_model(
    data: &GroupDataset,
    test_participant: Option<&str>,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let mut best: Option<(f64, ExperimentReport)> = None;
    let mut candidates = Vec::new();
    for (i, point) in cfg.grid.iter().enumerate() {
        let label = if point.label.is_empty() {
            format!("candidate{i}")
        } else {
            point.label.clone()
        };
        let tcfg = point.apply(&cfg.train);
        tcfg.validate()?;
        let report = run_leave_one_out(data, test_participant, true, cfg, &tcfg)?;
        let score = report
            .mean_valid
            .map_or(f64::INFINITY, |m| m.metric3.combined());
        log::info!("candidate {label}: validation metric3 combined {score:.4}");
        candidates.push((label, score));
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, report));
        }
    }
    let (_, mut report) = best.ok_or_else(|| Error::InvalidConfig("empty model grid".into()))?;
    let chosen = candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|c| c.0.clone())
        .unwrap_or_default();
    report.selection = Some(Selection { candidates, chosen });
    Ok(report)
}

/// Run the configured protocol on the configured group.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data = load_group(cfg)?;
    run_on(&data, cfg)
}

pub fn run_on(data: &GroupDataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match &cfg.protocol {
        Protocol::Mixed { k } => run_mixed(data, *k, cfg),
        Protocol::LeaveOneOut {
            test_participant,
            validation,
        } => {
            if *validation && !cfg.grid.is_empty() {
                select_model(data, test_participant.as_deref(), cfg)
            } else {
                run_leave_one_out(data, test_participant.as_deref(), *validation, cfg, &cfg.train)
            }
        }
    }
}

/// Train one model on all usable data of the group.
pub fn train_full(data: &GroupDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    let all: Vec<usize> = (0..data.slices.len()).collect();
    train_on_units(data, &whole_slices(data, &all), cfg)
}

/// Score a trained model on every usable slice of the group.
pub fn evaluate_full(trained: &TrainedModel, data: &GroupDataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if data.slices.iter().any(|s| s.times.len() < trained.timesteps) {
        return Err(Error::SliceTooShort {
            len: data.slices.iter().map(|s| s.times.len()).min().unwrap_or(0),
            timesteps: trained.timesteps,
        });
    }
    let all: Vec<usize> = (0..data.slices.len()).collect();
    let r = evaluate_units(
        trained,
        data,
        &whole_slices(data, &all),
        &cfg.postprocess,
        &cfg.metrics,
        cfg.train.execution,
    )?;
    let fold = FoldReport {
        name: "eval".into(),
        validation_participant: None,
        test_participant: None,
        train_windows: trained.train_windows,
        valid: None,
        test: Some(r),
        error: None,
        loss_trace: Vec::new(),
    };
    Ok(ExperimentReport::new(data.group, "evaluation".into(), vec![fold]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
    PlotData,
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Text table with metric rows and one column per fold (valid/test pairs
/// when validation is present), plus the fold mean.
pub fn render_table(report: &ExperimentReport) -> String {
    let with_valid = report.has_validation();
    let mut header = vec!["error(%)".to_string(), String::new()];
    let mut sub = vec![String::new(), String::new()];
    for f in &report.folds {
        if with_valid {
            header.extend([f.name.clone(), String::new()]);
            sub.extend(["valid".to_string(), "test".to_string()]);
        } else {
            header.push(f.name.clone());
            sub.push(String::new());
        }
    }
    if with_valid {
        header.extend(["mean".to_string(), String::new()]);
        sub.extend(["valid".to_string(), "test".to_string()]);
    } else {
        header.push("mean".to_string());
        sub.push(String::new());
    }
    let cell = |r: Option<&StepErrorReport>, m: usize, under: bool| {
        r.map_or("-".to_string(), |r| {
            let rates = r.metric(m);
            pct(if under { rates.undercount_rate } else { rates.overcount_rate })
        })
    };
    let mean_cell = |mr: Option<MeanRates>, m: usize, under: bool| {
        mr.map_or("-".to_string(), |mr| {
            let p = mr.metric(m);
            pct(if under { p.undercount } else { p.overcount })
        })
    };
    let mut rows = vec![header];
    if with_valid {
        rows.push(sub);
    }
    for m in 1..=3 {
        for under in [true, false] {
            let mut row = vec![
                if under { format!("metric{m}") } else { String::new() },
                if under { "undercount" } else { "overcount" }.to_string(),
            ];
            for f in &report.folds {
                if with_valid {
                    row.push(cell(f.valid.as_ref(), m, under));
                }
                row.push(cell(f.test.as_ref(), m, under));
            }
            if with_valid {
                row.push(mean_cell(report.mean_valid, m, under));
            }
            row.push(mean_cell(report.mean_test, m, under));
            rows.push(row);
        }
    }
    let mut acc = vec!["accuracy".to_string(), String::new()];
    for f in &report.folds {
        if with_valid {
            acc.push(f.valid.as_ref().map_or("-".into(), |r| pct(r.signal_accuracy)));
        }
        acc.push(f.test.as_ref().map_or("-".into(), |r| pct(r.signal_accuracy)));
    }
    if with_valid {
        acc.push(report.mean_valid.map_or("-".into(), |m| pct(m.signal_accuracy)));
    }
    acc.push(report.mean_test.map_or("-".into(), |m| pct(m.signal_accuracy)));
    rows.push(acc);

    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = format!("{} / {}\n", report.group, report.protocol);
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// `(fold, metric, split, undercount, overcount)` rows in percent.
pub fn render_metric_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("fold,metric,split,undercount,overcount\n");
    for f in &report.folds {
        for (split, r) in [("valid", f.valid.as_ref()), ("test", f.test.as_ref())] {
            let Some(r) = r else { continue };
            for m in 1..=3 {
                let rates = r.metric(m);
                out.push_str(&format!(
                    "{},{m},{split},{},{}\n",
                    f.name,
                    pct(rates.undercount_rate),
                    pct(rates.overcount_rate)
                ));
            }
        }
    }
    out
}

/// `(fold, step, loss)` rows, one per training step.
pub fn render_loss_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("fold,step,loss\n");
    for f in &report.folds {
        for (i, l) in f.loss_trace.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", f.name, i + 1, l));
        }
    }
    out
}

/// Render a report as named file contents.
pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Result<Vec<(String, String)>> {
    if report.folds.is_empty() {
        return Err(Error::EmptyReport);
    }
    Ok(match format {
        ReportFormat::Json => vec![("report.json".into(), report.to_json()?)],
        ReportFormat::Table => vec![("report.txt".into(), render_table(report))],
        ReportFormat::PlotData => vec![
            ("metrics.csv".into(), render_metric_csv(report)),
            ("loss.csv".into(), render_loss_csv(report)),
        ],
    })
}

/// Write every format into `dir`; returns the written paths.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for f in [ReportFormat::Json, ReportFormat::Table, ReportFormat::PlotData] {
        files.extend(render_report(report, f)?);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
    }
    Ok(paths)
}
