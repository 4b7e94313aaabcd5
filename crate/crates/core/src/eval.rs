//! Two-fold evaluation. Utility accuracy is read straight off the eval split;
//! privacy leakage is measured the adversarial way: `N` freshly built
//! attacker classifiers — disjoint from the training ensemble — are trained
//! to convergence on cached degraded frames, and the reported number is the
//! strongest attacker's eval metric.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    batch_from_indices, generate_dataset, DualLabeledDataset, LabelMode, Split, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::nets::{
    budget_batch_accuracy, ce_loss_and_grad, measure_utility_accuracy, BatchStream,
    BudgetClassifier, BudgetModelSpec, DegradationTransform, InitMode, ModelFamilySpec,
    BUDGET_FAMILIES,
};
use crate::nn::SgdMomentum;
use crate::objectives::{class_mean_ap, multilabel_sigmoid_grad};

/// Utility accuracy of `f_T . f_d` (or plain `f_T`) on one split.
pub fn eval_utility(
    fd: Option<&mut DegradationTransform>,
    ft: &mut crate::nets::UtilityClassifier,
    ds: &DualLabeledDataset,
    split: Split,
    batch_size: usize,
) -> f64 {
    let indices = ds.indices(split);
    match fd {
        Some(fd) => measure_utility_accuracy(fd, ft, ds, &indices, batch_size),
        None => {
            let mut correct = 0usize;
            for chunk in indices.chunks(batch_size.max(1)) {
                let batch = batch_from_indices(ds, chunk);
                let probs = ft.forward(&batch.x);
                for (i, &y) in batch.utility.iter().enumerate() {
                    if crate::objectives::argmax(probs.row(i)) == y {
                        correct += 1;
                    }
                }
            }
            correct as f64 / indices.len().max(1) as f64
        }
    }
}

/// Degraded frames materialized once so attackers can only ever see the
/// transform's outputs, never raw pixels.
pub struct DegradedCache {
    pub x_train: Array4<f64>,
    pub x_eval: Array4<f64>,
    pub identity_train: Vec<usize>,
    pub identity_eval: Vec<usize>,
    pub attributes_train: Option<Array2<u8>>,
    pub attributes_eval: Option<Array2<u8>>,
    pub t: usize,
    pub k_b: usize,
    pub channels: usize,
    pub mode: LabelMode,
}

impl DegradedCache {
    pub fn train_clips(&self) -> usize {
        self.identity_train.len()
    }

    pub fn eval_clips(&self) -> usize {
        self.identity_eval.len()
    }

    fn slice_clips(&self, split: Split, clip_ids: &[usize]) -> Array4<f64> {
        let src = match split {
            Split::Train => &self.x_train,
            Split::Eval => &self.x_eval,
        };
        let (_, c, h, w) = src.dim();
        let mut out = Array4::<f64>::zeros((clip_ids.len() * self.t, c, h, w));
        for (bi, &ci) in clip_ids.iter().enumerate() {
            for fi in 0..self.t {
                out.index_axis_mut(ndarray::Axis(0), bi * self.t + fi)
                    .assign(&src.index_axis(ndarray::Axis(0), ci * self.t + fi));
            }
        }
        out
    }
}

/// Run every clip of `ds` through `fd` (identity transform when `None`) and
/// cache the outputs by split.
pub fn materialize_degraded(
    fd: Option<&mut DegradationTransform>,
    ds: &DualLabeledDataset,
    batch_size: usize,
) -> DegradedCache {
    let spec = &ds.generator_spec;
    let mut parts: Vec<(Split, Array4<f64>, Vec<usize>, Option<Array2<u8>>)> = Vec::new();
    let mut fd = fd;
    for split in [Split::Train, Split::Eval] {
        let indices = ds.indices(split);
        let n = indices.len();
        let mut x = Array4::<f64>::zeros((n * spec.t, spec.c, spec.h, spec.w));
        let mut identity = Vec::with_capacity(n);
        let mut attrs: Option<Array2<u8>> = match spec.mode {
            LabelMode::Attributes => Some(Array2::zeros((n, spec.k_b))),
            LabelMode::Identity => None,
        };
        for (chunk_start, chunk) in indices.chunks(batch_size.max(1)).enumerate() {
            let batch = batch_from_indices(ds, chunk);
            let out = match fd.as_deref_mut() {
                Some(f) => f.forward(&batch.x),
                None => batch.x.clone(),
            };
            let base = chunk_start * batch_size.max(1);
            for (bi, _) in chunk.iter().enumerate() {
                for fi in 0..spec.t {
                    x.index_axis_mut(ndarray::Axis(0), (base + bi) * spec.t + fi)
                        .assign(&out.index_axis(ndarray::Axis(0), bi * spec.t + fi));
                }
                identity.push(batch.identity[bi]);
                if let (Some(dst), Some(src)) = (attrs.as_mut(), batch.attributes.as_ref()) {
                    for k in 0..spec.k_b {
                        dst[[base + bi, k]] = src[[bi, k]];
                    }
                }
            }
        }
        parts.push((split, x, identity, attrs));
    }
    let (_, x_eval, identity_eval, attributes_eval) = parts.pop().unwrap();
    let (_, x_train, identity_train, attributes_train) = parts.pop().unwrap();
    DegradedCache {
        x_train,
        x_eval,
        identity_train,
        identity_eval,
        attributes_train,
        attributes_eval,
        t: spec.t,
        k_b: spec.k_b,
        channels: spec.c,
        mode: spec.mode,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AttackerConfig {
    /// Attacker population size N.
    pub n: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Stop once this many consecutive evals improve by less than
    /// `plateau_delta`.
    pub plateau_evals: usize,
    pub plateau_delta: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Raw-frame accuracy bar for pretrained-probe initializations.
    pub pretrain_bar: f64,
    pub pretrain_max_steps: usize,
    pub seed: u64,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        AttackerConfig {
            n: 10,
            max_steps: 2000,
            eval_every: 20,
            plateau_evals: 5,
            plateau_delta: 0.002,
            batch_size: 16,
            lr: 1e-2,
            momentum: 0.9,
            pretrain_bar: 0.9,
            pretrain_max_steps: 2000,
            seed: 9000,
        }
    }
}

/// Default examination population: widths offset from the training grid so
/// the spec triples can never collide with `ModelFamilySpec::default_training`,
/// 8 pretrained probes and 2 scratch models.
pub fn default_examination(n: usize) -> ModelFamilySpec {
    // the training grid uses widths in {0.25, 0.5, 0.75, 1.0}; these never do
    let widths = [1.25, 1.5, 1.75, 2.25, 2.5, 2.75];
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        entries.push(BudgetModelSpec {
            family: BUDGET_FAMILIES[i % BUDGET_FAMILIES.len()].to_string(),
            width: widths[(i / BUDGET_FAMILIES.len()) % widths.len()],
            init: if i < (n * 4) / 5 {
                InitMode::PretrainedProbe
            } else {
                InitMode::FromScratch
            },
        });
    }
    ModelFamilySpec { entries }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackerReport {
    pub spec: BudgetModelSpec,
    pub steps: usize,
    pub pretrain_steps: usize,
    /// Eval metric once training stops: accuracy in identity mode,
    /// class-mean average precision in attribute mode.
    pub metric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExaminationReport {
    pub attackers: Vec<AttackerReport>,
    /// The privacy number: the strongest attacker's metric.
    pub a_b_n: f64,
    /// Chance level: `1 / K_B` in identity mode, the prevalence-constant
    /// predictor's C-MAP in attribute mode.
    pub chance: f64,
    pub metric_kind: MetricKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    ClassMeanAp,
}

fn attacker_metric(cache: &DegradedCache, fb: &mut BudgetClassifier, batch_size: usize) -> f64 {
    let n = cache.eval_clips();
    let ids: Vec<usize> = (0..n).collect();
    match cache.mode {
        LabelMode::Identity => {
            let mut correct = 0usize;
            for chunk in ids.chunks(batch_size) {
                let x = cache.slice_clips(Split::Eval, chunk);
                let probs = fb.forward(&x);
                for (bi, &ci) in chunk.iter().enumerate() {
                    if crate::objectives::argmax(probs.row(bi)) == cache.identity_eval[ci] {
                        correct += 1;
                    }
                }
            }
            correct as f64 / n.max(1) as f64
        }
        LabelMode::Attributes => {
            let labels = cache.attributes_eval.as_ref().expect("attribute labels");
            let mut scores = Array2::<f64>::zeros((n, cache.k_b));
            for chunk in ids.chunks(batch_size) {
                let x = cache.slice_clips(Split::Eval, chunk);
                let probs = fb.forward(&x);
                for (bi, &ci) in chunk.iter().enumerate() {
                    for k in 0..cache.k_b {
                        scores[[ci, k]] = probs[[bi, k]];
                    }
                }
            }
            match class_mean_ap(&scores, labels) {
                Ok((v, _)) => v,
                Err(_) => 0.0,
            }
        }
    }
}

/// C-MAP of the prevalence-constant predictor: every eval clip gets the
/// train-split attribute frequencies as its score vector.
pub fn attribute_chance_level(cache: &DegradedCache) -> Result<f64> {
    let train = cache
        .attributes_train
        .as_ref()
        .ok_or_else(|| Error::UndefinedMetric("attribute chance level needs attribute labels".into()))?;
    let eval = cache
        .attributes_eval
        .as_ref()
        .ok_or_else(|| Error::UndefinedMetric("attribute chance level needs attribute labels".into()))?;
    let n_train = train.nrows().max(1);
    let mut scores = Array2::<f64>::zeros((eval.nrows(), cache.k_b));
    for k in 0..cache.k_b {
        let prevalence =
            (0..train.nrows()).filter(|&i| train[[i, k]] != 0).count() as f64 / n_train as f64;
        for i in 0..eval.nrows() {
            scores[[i, k]] = prevalence;
        }
    }
    Ok(class_mean_ap(&scores, eval)?.0)
}

/// Pretrained-probe weights, memoized per (spec triple, generator spec, seed,
/// optimizer settings). Probe pretraining happens on raw frames of an
/// independent generator draw, never on `f_d` outputs, and is deterministic
/// given its key — so reusing the weights is bit-identical to retraining and
/// merely skips redundant work when many examinations share a population.
static PRETRAIN_CACHE: once_cell::sync::Lazy<
    std::sync::Mutex<std::collections::HashMap<String, (usize, Vec<Vec<f64>>)>>,
> = once_cell::sync::Lazy::new(Default::default);

fn pretrain_probe(
    fb: &mut BudgetClassifier,
    spec: &BudgetModelSpec,
    cfg: &AttackerConfig,
    generator_spec: &SyntheticSpec,
    seed: u64,
) -> Result<usize> {
    let key = format!(
        "{}|{}|{}|{}|{}|{}|{}|{}|{}",
        serde_json::to_string(spec)?,
        serde_json::to_string(generator_spec)?,
        seed,
        cfg.batch_size,
        cfg.lr,
        cfg.momentum,
        cfg.pretrain_bar,
        cfg.pretrain_max_steps,
        cfg.eval_every,
    );
    if let Some((steps, values)) = PRETRAIN_CACHE.lock().unwrap().get(&key) {
        for (p, v) in fb.params_mut().into_iter().zip(values) {
            p.value.as_slice_mut().unwrap().copy_from_slice(v);
        }
        return Ok(*steps);
    }

    // the backbone analog: fit the same architecture on raw frames of a
    // *different* draw of the generator, then fine-tune on the cache
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum);
    let mut pretrain_steps = 0usize;
    let mut pre_spec = generator_spec.clone();
    pre_spec.eval_samples = pre_spec.eval_samples.max(generator_spec.k_b);
    let pre_ds = generate_dataset(&pre_spec, seed ^ 0x9E37_79B9)?;
    let mut stream = BatchStream::new(pre_ds.train_indices(), cfg.batch_size, seed.wrapping_add(11));
    let mut window = std::collections::VecDeque::new();
    loop {
        let idx = stream.next_batch();
        let batch = batch_from_indices(&pre_ds, &idx);
        let probs = fb.forward(&batch.x);
        let acc = budget_batch_accuracy(&probs, &batch.identity, batch.attributes.as_ref(), fb.mode);
        window.push_back(acc);
        if window.len() > cfg.eval_every {
            window.pop_front();
        }
        step_budget_batch(fb, &mut opt, &probs, &batch);
        pretrain_steps += 1;
        let mean = window.iter().sum::<f64>() / window.len() as f64;
        if (window.len() >= cfg.eval_every && mean >= cfg.pretrain_bar)
            || pretrain_steps >= cfg.pretrain_max_steps
        {
            break;
        }
    }
    let values: Vec<Vec<f64>> = fb
        .params()
        .iter()
        .map(|p| p.value.as_slice().unwrap().to_vec())
        .collect();
    PRETRAIN_CACHE
        .lock()
        .unwrap()
        .insert(key, (pretrain_steps, values));
    Ok(pretrain_steps)
}

fn train_one_attacker(
    cache: &DegradedCache,
    spec: &BudgetModelSpec,
    cfg: &AttackerConfig,
    generator_spec: &SyntheticSpec,
    seed: u64,
) -> Result<AttackerReport> {
    let mut fb = BudgetClassifier::build(spec, cache.channels, cache.k_b, cache.t, cache.mode, seed)?;
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum);
    let mut pretrain_steps = 0usize;

    if spec.init == InitMode::PretrainedProbe {
        pretrain_steps = pretrain_probe(&mut fb, spec, cfg, generator_spec, seed)?;
        opt.reset();
    }

    let n_train = cache.train_clips();
    let mut stream = BatchStream::new((0..n_train).collect(), cfg.batch_size, seed.wrapping_add(29));
    let mut best_train = cache_train_accuracy(cache, &mut fb, cfg.batch_size);
    let mut steps = 0usize;
    let mut stale_evals = 0usize;
    while steps < cfg.max_steps {
        for _ in 0..cfg.eval_every {
            let clip_ids = stream.next_batch();
            let x = cache.slice_clips(Split::Train, &clip_ids);
            let probs = fb.forward(&x);
            let identity: Vec<usize> = clip_ids.iter().map(|&c| cache.identity_train[c]).collect();
            let attrs = cache.attributes_train.as_ref().map(|a| {
                let mut out = Array2::<u8>::zeros((clip_ids.len(), cache.k_b));
                for (bi, &c) in clip_ids.iter().enumerate() {
                    for k in 0..cache.k_b {
                        out[[bi, k]] = a[[c, k]];
                    }
                }
                out
            });
            step_budget_labels(&mut fb, &mut opt, &probs, &identity, attrs.as_ref());
            steps += 1;
        }
        // early stop on a train-accuracy plateau, then score on the eval split
        let train_acc = cache_train_accuracy(cache, &mut fb, cfg.batch_size);
        if train_acc > best_train + cfg.plateau_delta {
            best_train = train_acc;
            stale_evals = 0;
        } else {
            best_train = best_train.max(train_acc);
            stale_evals += 1;
            if stale_evals >= cfg.plateau_evals {
                break;
            }
        }
    }
    Ok(AttackerReport {
        spec: spec.clone(),
        steps,
        pretrain_steps,
        metric: attacker_metric(cache, &mut fb, cfg.batch_size),
    })
}

/// Plain train-split accuracy on the cached degraded frames (identity argmax
/// or thresholded attribute accuracy), used only for the plateau stop.
fn cache_train_accuracy(cache: &DegradedCache, fb: &mut BudgetClassifier, batch_size: usize) -> f64 {
    let n = cache.train_clips();
    let ids: Vec<usize> = (0..n).collect();
    let mut weighted = 0.0;
    for chunk in ids.chunks(batch_size.max(1)) {
        let x = cache.slice_clips(Split::Train, chunk);
        let probs = fb.forward(&x);
        let identity: Vec<usize> = chunk.iter().map(|&c| cache.identity_train[c]).collect();
        let attrs = cache.attributes_train.as_ref().map(|a| {
            let mut out = Array2::<u8>::zeros((chunk.len(), cache.k_b));
            for (bi, &c) in chunk.iter().enumerate() {
                for k in 0..cache.k_b {
                    out[[bi, k]] = a[[c, k]];
                }
            }
            out
        });
        weighted += budget_batch_accuracy(&probs, &identity, attrs.as_ref(), fb.mode)
            * chunk.len() as f64;
    }
    weighted / n.max(1) as f64
}

fn step_budget_batch(
    fb: &mut BudgetClassifier,
    opt: &mut SgdMomentum,
    probs: &Array2<f64>,
    batch: &crate::data::Batch,
) {
    step_budget_labels(fb, opt, probs, &batch.identity, batch.attributes.as_ref());
}

fn step_budget_labels(
    fb: &mut BudgetClassifier,
    opt: &mut SgdMomentum,
    probs: &Array2<f64>,
    identity: &[usize],
    attributes: Option<&Array2<u8>>,
) {
    match fb.mode {
        LabelMode::Identity => {
            let (_, grad, _) = ce_loss_and_grad(probs, identity);
            fb.backward(&grad);
        }
        LabelMode::Attributes => {
            let labels = attributes.expect("attribute labels");
            let logits = fb.last_clip_logits().clone();
            let n = logits.nrows();
            let mut grad = Array2::<f64>::zeros(logits.raw_dim());
            for i in 0..n {
                let row: Vec<u8> = labels.row(i).to_vec();
                let g = multilabel_sigmoid_grad(logits.row(i), &row);
                for (k, &gv) in g.iter().enumerate() {
                    grad[[i, k]] = gv / n as f64;
                }
            }
            fb.backward_logits(&grad);
        }
    }
    opt.step(fb.params_mut());
}

/// Train `cfg.n` fresh attackers on the cache and report the strongest one.
/// The examination population must share no spec triple with the training
/// ensemble; overlap is a protocol violation, not a warning.
pub fn run_attacker_examination(
    cache: &DegradedCache,
    examination: &ModelFamilySpec,
    training_ensemble: &ModelFamilySpec,
    cfg: &AttackerConfig,
    generator_spec: &SyntheticSpec,
) -> Result<ExaminationReport> {
    if examination.entries.len() != cfg.n {
        return Err(Error::validation(
            "n",
            format!(
                "examination spec holds {} entries but n = {}",
                examination.entries.len(),
                cfg.n
            ),
        ));
    }
    if training_ensemble.overlaps(examination) {
        return Err(Error::ProtocolViolation(
            "examination population shares a spec triple with the training ensemble".into(),
        ));
    }
    let attackers: Result<Vec<AttackerReport>> = examination
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            train_one_attacker(cache, spec, cfg, generator_spec, cfg.seed.wrapping_add(i as u64))
        })
        .collect();
    let attackers = attackers?;
    let a_b_n = attackers
        .iter()
        .map(|a| a.metric)
        .fold(f64::NEG_INFINITY, f64::max);
    let (chance, metric_kind) = match cache.mode {
        LabelMode::Identity => (1.0 / cache.k_b as f64, MetricKind::Accuracy),
        LabelMode::Attributes => (attribute_chance_level(cache)?, MetricKind::ClassMeanAp),
    };
    Ok(ExaminationReport {
        attackers,
        a_b_n,
        chance,
        metric_kind,
    })
}

// ---------------------------------------------------------------------------
// Trade-off records
// ---------------------------------------------------------------------------

/// One point on the utility/privacy trade-off plane.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TradeoffRecord {
    pub method: String,
    /// Downsampling ratio, for the empirical baseline.
    pub s: Option<u32>,
    /// Ensemble size, for adversarial runs.
    pub m: Option<u32>,
    /// Whether ensemble restarting was active, for adversarial runs.
    pub restarting: Option<bool>,
    pub seed: u64,
    pub a_t: f64,
    pub privacy_metric: f64,
    pub metric_kind: MetricKind,
    pub chance_level: f64,
}

impl TradeoffRecord {
    /// Identity of a sweep configuration, used to resume interrupted sweeps.
    pub fn config_key(&self) -> (String, Option<u32>, Option<u32>, Option<bool>, u64) {
        (
            self.method.clone(),
            self.s,
            self.m,
            self.restarting,
            self.seed,
        )
    }
}

/// Append records to a JSONL file (one record per line), creating it if
/// missing.
pub fn append_records_jsonl(path: &Path, records: &[TradeoffRecord]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        writeln!(f)?;
    }
    Ok(())
}

/// Load all records from a JSONL file; a missing file is an empty sweep.
pub fn load_records_jsonl(path: &Path) -> Result<Vec<TradeoffRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}

/// Write the whole sweep as a CSV table.
pub fn write_records_csv(path: &Path, records: &[TradeoffRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "method,s,M,restarting,seed,A_T,privacy_metric,metric_kind,chance_level")?;
    for r in records {
        let opt_u32 = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
        let kind = match r.metric_kind {
            MetricKind::Accuracy => "accuracy",
            MetricKind::ClassMeanAp => "class_mean_ap",
        };
        writeln!(
            f,
            "{},{},{},{},{},{:.6},{:.6},{},{:.6}",
            r.method,
            opt_u32(r.s),
            opt_u32(r.m),
            r.restarting.map(|b| b.to_string()).unwrap_or_default(),
            r.seed,
            r.a_t,
            r.privacy_metric,
            kind,
            r.chance_level,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examination_disjointness_is_enforced() {
        let training = ModelFamilySpec::default_training(4);
        let exam = default_examination(10);
        assert!(!training.overlaps(&exam));
        // force a collision
        let mut bad = exam.clone();
        bad.entries[0] = training.entries[0].clone();
        assert!(training.overlaps(&bad));
    }

    #[test]
    fn default_examination_mixes_inits() {
        let exam = default_examination(10);
        let pre = exam
            .entries
            .iter()
            .filter(|e| e.init == InitMode::PretrainedProbe)
            .count();
        assert_eq!(pre, 8);
        assert_eq!(exam.entries.len() - pre, 2);
        assert!(ModelFamilySpec::new(exam.entries).is_ok());
    }

    #[test]
    fn tradeoff_records_roundtrip_jsonl_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let jsonl = dir.path().join("sweep.jsonl");
        let recs = vec![
            TradeoffRecord {
                method: "downsample".into(),
                s: Some(4),
                m: None,
                restarting: None,
                seed: 7,
                a_t: 0.91,
                privacy_metric: 0.52,
                metric_kind: MetricKind::Accuracy,
                chance_level: 1.0 / 13.0,
            },
            TradeoffRecord {
                method: "adversarial".into(),
                s: None,
                m: Some(4),
                restarting: Some(true),
                seed: 7,
                a_t: 0.9,
                privacy_metric: 0.11,
                metric_kind: MetricKind::Accuracy,
                chance_level: 1.0 / 13.0,
            },
        ];
        append_records_jsonl(&jsonl, &recs[..1]).unwrap();
        append_records_jsonl(&jsonl, &recs[1..]).unwrap();
        let loaded = load_records_jsonl(&jsonl).unwrap();
        assert_eq!(loaded, recs);

        let csv = dir.path().join("sweep.csv");
        write_records_csv(&csv, &loaded).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,s,M,restarting,seed,A_T,privacy_metric,metric_kind,chance_level"
        );
        assert_eq!(lines.count(), 2);
        assert!(text.contains("downsample,4,,,7,"));
        assert!(text.contains("adversarial,,4,true,7,"));
    }

    #[test]
    fn chance_level_matches_identity_count() {
        let spec = SyntheticSpec {
            train_samples: 26,
            eval_samples: 13,
            ..SyntheticSpec::default()
        };
        let ds = generate_dataset(&spec, 3).unwrap();
        let cache = materialize_degraded(None, &ds, 8);
        assert_eq!(cache.mode, LabelMode::Identity);
        assert_eq!(cache.k_b, 13);
        assert_eq!(cache.train_clips(), 26);
        assert_eq!(cache.eval_clips(), 13);
    }

    #[test]
    fn a_b_n_is_monotone_in_population_size() {
        // the first n attackers of a larger examination are bit-identical to
        // the smaller examination's population, so the max can only grow
        let spec = SyntheticSpec {
            k_t: 3,
            k_b: 4,
            h: 8,
            w: 8,
            t: 2,
            train_samples: 24,
            eval_samples: 8,
            ..SyntheticSpec::default()
        };
        let ds = generate_dataset(&spec, 9).unwrap();
        let cache = materialize_degraded(None, &ds, 8);
        let training = ModelFamilySpec::default_training(2);
        let full = default_examination(4);
        let mut reports = Vec::new();
        for n in [2usize, 4] {
            let cfg = AttackerConfig {
                n,
                max_steps: 40,
                pretrain_max_steps: 40,
                ..AttackerConfig::default()
            };
            let exam = ModelFamilySpec {
                entries: full.entries[..n].to_vec(),
            };
            reports.push(
                run_attacker_examination(&cache, &exam, &training, &cfg, &spec).unwrap(),
            );
        }
        assert_eq!(reports[0].attackers[0].metric, reports[1].attackers[0].metric);
        assert!(reports[1].a_b_n >= reports[0].a_b_n);
    }

    #[test]
    fn attribute_chance_is_prevalence_cmap() {
        let spec = SyntheticSpec {
            train_samples: 40,
            eval_samples: 20,
            ..SyntheticSpec::default_attributes()
        };
        let ds = generate_dataset(&spec, 5).unwrap();
        let cache = materialize_degraded(None, &ds, 8);
        let chance = attribute_chance_level(&cache).unwrap();
        assert!(chance > 0.0 && chance < 1.0, "chance {chance}");
    }
}
