//! The adversarial training loop: alternating updates of the degradation
//! transform against the utility classifier and a budget-model ensemble, with
//! utility/budget rebalancing inner loops and periodic ensemble restarting.

use std::collections::VecDeque;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{batch_from_indices, Batch, DualLabeledDataset, LabelMode};
use crate::error::{Error, Result};
use crate::nets::{
    budget_batch_accuracy, ce_loss_and_grad, measure_utility_accuracy, strengthen_budget_model,
    BatchStream, BudgetClassifier, DegradationTransform, DegradeConfig, ModelFamilySpec,
    UtilityClassifier, UtilityConfig, WarmStartConfig, WarmStartReport,
};
use crate::nn::SgdMomentum;
use crate::objectives::{
    attribute_neg_entropy, attribute_neg_entropy_grad, ensemble_budget_cost, l1_reconstruction,
    l1_reconstruction_grad, neg_entropy, neg_entropy_grad, LossValue,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainingConfig {
    pub mode: LabelMode,
    /// Weight of the adversarial (budget suppression) term.
    pub gamma: f64,
    /// Weight of the pixel-space reconstruction anchor.
    pub alpha: f64,
    /// Utility validation accuracy the rebalance loop restores.
    pub threshold_1: f64,
    /// Budget train accuracy the strengthening loops restore.
    pub threshold_2: f64,
    /// Restart the whole ensemble every this many outer iterations.
    pub restart_period: usize,
    /// Ensemble size M.
    pub m: usize,
    /// Outer adversarial iterations to run.
    pub iterations: usize,
    /// Step cap for any rebalance/strengthen inner loop.
    pub inner_loop_fuse: usize,
    /// Cadence of validation checks and history records.
    pub eval_every: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn identity_default() -> Self {
        TrainingConfig {
            mode: LabelMode::Identity,
            gamma: 2.0,
            alpha: 1.0,
            threshold_1: 0.90,
            threshold_2: 0.95,
            restart_period: 100,
            m: 4,
            iterations: 300,
            inner_loop_fuse: 500,
            eval_every: 20,
            batch_size: 16,
            lr: 1e-2,
            momentum: 0.9,
            seed: 0,
        }
    }

    pub fn attributes_default() -> Self {
        TrainingConfig {
            mode: LabelMode::Attributes,
            gamma: 0.5,
            alpha: 0.0,
            threshold_1: 0.70,
            ..TrainingConfig::identity_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::validation("m", "ensemble must hold >= 1 model"));
        }
        if self.restart_period < 1 {
            return Err(Error::validation("restart_period", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch_size", "must be >= 1"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::validation("gamma", "must be finite and >= 0"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::validation("alpha", "must be finite and >= 0"));
        }
        for (name, v) in [("threshold_1", self.threshold_1), ("threshold_2", self.threshold_2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation {
                    field: if name == "threshold_1" { "threshold_1" } else { "threshold_2" },
                    reason: "must lie in [0, 1]".into(),
                });
            }
        }
        Ok(())
    }
}

/// Mean adversarial confidence cost of one budget model on clip predictions,
/// with its gradient w.r.t. those predictions.
pub fn budget_cost_and_grad(probs: &Array2<f64>, mode: LabelMode) -> (f64, Array2<f64>) {
    let n = probs.nrows();
    let mut total = 0.0;
    let mut grad = Array2::<f64>::zeros(probs.raw_dim());
    for i in 0..n {
        let row = probs.row(i);
        let (v, g) = match mode {
            LabelMode::Identity => (neg_entropy(row), neg_entropy_grad(row)),
            LabelMode::Attributes => (attribute_neg_entropy(row), attribute_neg_entropy_grad(row)),
        };
        total += v / n as f64;
        for (k, &gv) in g.iter().enumerate() {
            grad[[i, k]] = gv / n as f64;
        }
    }
    (total, grad)
}

/// One history line, emitted every `eval_every` iterations and on notable
/// events.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub loss_total: f64,
    pub loss_target: f64,
    pub loss_budget: f64,
    pub loss_recon: f64,
    pub winning_model: usize,
    pub utility_val_accuracy: f64,
    pub budget_window_accuracy: Vec<f64>,
    pub events: Vec<String>,
}

/// Live state of one adversarial run over one dataset.
pub struct TrainState {
    pub cfg: TrainingConfig,
    pub fd: DegradationTransform,
    pub ft: UtilityClassifier,
    pub ensemble: Vec<BudgetClassifier>,
    pub ensemble_spec: ModelFamilySpec,
    pub warm_start: WarmStartReport,
    pub iteration: usize,
    pub history: Vec<HistoryRecord>,
    opt_d: SgdMomentum,
    opt_t: SgdMomentum,
    opt_b: Vec<SgdMomentum>,
    stream: BatchStream,
    fit_idx: Vec<usize>,
    val_idx: Vec<usize>,
    budget_windows: Vec<VecDeque<f64>>,
    pending_events: Vec<String>,
    restart_counter: u64,
}

/// Split train indices into a fitting part and a 10% validation carve
/// (every 10th index) used only for the threshold_1 check.
pub fn carve_validation(train: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for (i, &idx) in train.iter().enumerate() {
        if i % 10 == 9 {
            val.push(idx);
        } else {
            fit.push(idx);
        }
    }
    if val.is_empty() {
        val.push(fit.pop().expect("non-empty train split"));
    }
    (fit, val)
}

impl TrainState {
    /// Warm-start all models on `ds` and assemble the run state.
    pub fn new(
        ds: &DualLabeledDataset,
        cfg: TrainingConfig,
        ensemble_spec: Option<ModelFamilySpec>,
    ) -> Result<Self> {
        cfg.validate()?;
        let ensemble_spec = ensemble_spec.unwrap_or_else(|| ModelFamilySpec::default_training(cfg.m));
        if ensemble_spec.entries.len() != cfg.m {
            return Err(Error::validation(
                "m",
                format!(
                    "ensemble spec holds {} entries but m = {}",
                    ensemble_spec.entries.len(),
                    cfg.m
                ),
            ));
        }
        let wcfg = WarmStartConfig {
            utility_bar: cfg.threshold_1.min(0.85),
            budget_bar: cfg.threshold_2,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            momentum: cfg.momentum,
            eval_every: cfg.eval_every,
            stage_fuse: cfg.inner_loop_fuse * 4,
            ..WarmStartConfig::default()
        };
        let (fd, ft, ensemble, warm_start) = crate::nets::warm_start_pipeline(
            ds,
            &DegradeConfig::default(),
            &UtilityConfig::default(),
            &ensemble_spec,
            &wcfg,
            cfg.seed,
        )?;
        let (fit_idx, val_idx) = carve_validation(&ds.train_indices());
        let stream = BatchStream::new(fit_idx.clone(), cfg.batch_size, cfg.seed.wrapping_add(3));
        let m = cfg.m;
        Ok(TrainState {
            opt_d: SgdMomentum::new(cfg.lr, cfg.momentum),
            opt_t: SgdMomentum::new(cfg.lr, cfg.momentum),
            opt_b: (0..m).map(|_| SgdMomentum::new(cfg.lr, cfg.momentum)).collect(),
            budget_windows: (0..m).map(|_| VecDeque::new()).collect(),
            cfg,
            fd,
            ft,
            ensemble,
            ensemble_spec,
            warm_start,
            iteration: 0,
            history: Vec::new(),
            stream,
            fit_idx,
            val_idx,
            pending_events: Vec::new(),
            restart_counter: 0,
        })
    }

    /// One update of `f_d` against the frozen utility model and ensemble.
    /// Returns the decomposed loss. Fails on non-finite loss.
    pub fn main_step(&mut self, ds: &DualLabeledDataset) -> Result<LossValue> {
        let idx = self.stream.next_batch();
        let batch = batch_from_indices(ds, &idx);
        let loss = self.main_step_batch(&batch)?;
        self.iteration += 1;
        Ok(loss)
    }

    fn main_step_batch(&mut self, batch: &Batch) -> Result<LossValue> {
        let degraded = self.fd.forward(&batch.x);

        // utility branch
        let probs_t = self.ft.forward(&degraded);
        let (l_t, g_probs_t, _) = ce_loss_and_grad(&probs_t, &batch.utility);
        let dx_t = self.ft.backward(&g_probs_t);

        // adversarial branch: most confident ensemble member wins
        let mut costs = Vec::with_capacity(self.ensemble.len());
        let mut grads = Vec::with_capacity(self.ensemble.len());
        for (mi, fb) in self.ensemble.iter_mut().enumerate() {
            let probs_b = fb.forward(&degraded);
            let acc =
                budget_batch_accuracy(&probs_b, &batch.identity, batch.attributes.as_ref(), fb.mode);
            let win = &mut self.budget_windows[mi];
            win.push_back(acc);
            if win.len() > self.cfg.eval_every {
                win.pop_front();
            }
            let (c, g) = budget_cost_and_grad(&probs_b, self.cfg.mode);
            costs.push(c);
            grads.push(g);
        }
        let (l_b, winner) = ensemble_budget_cost(&costs)?;
        let dx_b = self.ensemble[winner].backward(&grads[winner]);

        // reconstruction anchor
        let l_r = l1_reconstruction(degraded.view().into_dyn(), batch.x.view().into_dyn())?;
        let g_r = l1_reconstruction_grad(degraded.view().into_dyn(), batch.x.view().into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();

        let total = &dx_t + &(self.cfg.gamma * &dx_b) + &(self.cfg.alpha * &g_r);
        self.fd.backward(&total);

        let mut loss = LossValue {
            value: l_t + self.cfg.gamma * l_b + self.cfg.alpha * l_r,
            components: Default::default(),
        };
        loss.components.insert("target", l_t);
        loss.components.insert("budget", l_b);
        loss.components.insert("recon", l_r);
        loss.components.insert("winner", winner as f64);
        if !loss.is_finite() {
            // frozen models must not keep the poisoned state
            for p in self.ft.params_mut() {
                p.zero_grad();
            }
            for fb in &mut self.ensemble {
                for p in fb.params_mut() {
                    p.zero_grad();
                }
            }
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration as u64,
                components: format!("{:?}", loss.components),
            });
        }

        // only f_d moves in the main step; the other branches merely carried
        // gradient through, so their parameter grads are discarded
        self.opt_d.step(self.fd.params_mut());
        for p in self.ft.params_mut() {
            p.zero_grad();
        }
        for fb in &mut self.ensemble {
            for p in fb.params_mut() {
                p.zero_grad();
            }
        }
        Ok(loss)
    }

    /// Number of ensemble restarts performed so far.
    pub fn restart_count(&self) -> usize {
        self.restart_counter as usize
    }

    /// Rebuild a run state from a checkpoint without re-running the warm
    /// start: models are constructed at template initialization and then
    /// overwritten with the stored parameters.
    pub fn restore(
        ds: &DualLabeledDataset,
        cfg: TrainingConfig,
        ensemble_spec: ModelFamilySpec,
        checkpoint: &[u8],
    ) -> Result<Self> {
        cfg.validate()?;
        let spec = &ds.generator_spec;
        let fd = DegradationTransform::build(&DegradeConfig::default(), spec.c, cfg.seed);
        let ft = UtilityClassifier::build(
            &UtilityConfig::default(),
            spec.c,
            spec.k_t,
            spec.t,
            cfg.seed,
        );
        let ensemble: Result<Vec<BudgetClassifier>> = ensemble_spec
            .entries
            .iter()
            .enumerate()
            .map(|(i, b)| {
                BudgetClassifier::build(
                    b,
                    spec.c,
                    spec.k_b,
                    spec.t,
                    spec.mode,
                    cfg.seed.wrapping_add(1000 + i as u64),
                )
            })
            .collect();
        let (fit_idx, val_idx) = carve_validation(&ds.train_indices());
        let stream = BatchStream::new(fit_idx.clone(), cfg.batch_size, cfg.seed.wrapping_add(3));
        let m = cfg.m;
        let mut state = TrainState {
            opt_d: SgdMomentum::new(cfg.lr, cfg.momentum),
            opt_t: SgdMomentum::new(cfg.lr, cfg.momentum),
            opt_b: (0..m).map(|_| SgdMomentum::new(cfg.lr, cfg.momentum)).collect(),
            budget_windows: (0..m).map(|_| VecDeque::new()).collect(),
            cfg,
            fd,
            ft,
            ensemble: ensemble?,
            ensemble_spec,
            warm_start: WarmStartReport {
                stage1_steps: 0,
                stage1_recon: f64::NAN,
                stage2_steps: 0,
                stage2_accuracy: f64::NAN,
                stage3_steps: vec![],
                stage3_accuracy: vec![],
                fuse_trips: vec![],
            },
            iteration: 0,
            history: Vec::new(),
            stream,
            fit_idx,
            val_idx,
            pending_events: Vec::new(),
            restart_counter: 0,
        };
        restore_checkpoint(&mut state, checkpoint)?;
        Ok(state)
    }

    /// Restore validation utility accuracy above `threshold_1` by jointly
    /// training `(f_d, f_T)`. Stops early when the accuracy plateaus (no
    /// improvement > 0.002 over 5 consecutive checks) so an unreachable
    /// threshold does not burn the whole fuse. Returns steps spent.
    pub fn rebalance_utility(&mut self, ds: &DualLabeledDataset) -> usize {
        let mut steps = 0;
        let mut best = 0.0f64;
        let mut stale = 0usize;
        loop {
            let acc = measure_utility_accuracy(
                &mut self.fd,
                &mut self.ft,
                ds,
                &self.val_idx,
                self.cfg.batch_size,
            );
            if acc > self.cfg.threshold_1 {
                break;
            }
            if steps >= self.cfg.inner_loop_fuse {
                self.pending_events.push(format!(
                    "utility rebalance fuse at {} steps (val accuracy {:.3})",
                    steps, acc
                ));
                break;
            }
            if steps > 0 {
                if acc > best + 0.002 {
                    best = acc;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= 5 {
                        self.pending_events.push(format!(
                            "utility rebalance plateau at {} steps (val accuracy {:.3})",
                            steps, acc
                        ));
                        break;
                    }
                }
            } else {
                best = acc;
            }
            for _ in 0..self.cfg.eval_every {
                let idx = self.stream.next_batch();
                let batch = batch_from_indices(ds, &idx);
                let degraded = self.fd.forward(&batch.x);
                let probs = self.ft.forward(&degraded);
                let (_, grad, _) = ce_loss_and_grad(&probs, &batch.utility);
                let dx = self.ft.backward(&grad);
                self.fd.backward(&dx);
                self.opt_t.step(self.ft.params_mut());
                self.opt_d.step(self.fd.params_mut());
                steps += 1;
            }
        }
        if steps > 0 {
            self.pending_events
                .push(format!("utility rebalance: {steps} steps"));
        }
        steps
    }

    /// Re-strengthen every ensemble member whose windowed train accuracy has
    /// fallen to or below `threshold_2`. Returns total steps spent.
    pub fn rebalance_budget(&mut self, ds: &DualLabeledDataset) -> usize {
        let mut total = 0;
        for mi in 0..self.ensemble.len() {
            let win = &self.budget_windows[mi];
            let full = win.len() >= self.cfg.eval_every;
            let mean = if win.is_empty() {
                0.0
            } else {
                win.iter().sum::<f64>() / win.len() as f64
            };
            if full && mean > self.cfg.threshold_2 {
                continue;
            }
            let mut stream = BatchStream::new(
                self.fit_idx.clone(),
                self.cfg.batch_size,
                self.cfg
                    .seed
                    .wrapping_add(0x5E00 + mi as u64)
                    .wrapping_add(self.iteration as u64),
            );
            let (steps, acc) = strengthen_budget_model(
                &mut self.ensemble[mi],
                &mut self.opt_b[mi],
                &mut self.fd,
                ds,
                &mut stream,
                self.cfg.threshold_2,
                self.cfg.inner_loop_fuse,
                self.cfg.eval_every,
                Some(5),
            );
            if acc <= self.cfg.threshold_2 {
                self.pending_events.push(format!(
                    "budget strengthen fuse: model {mi} at {steps} steps (accuracy {acc:.3})"
                ));
            }
            self.budget_windows[mi].clear();
            self.budget_windows[mi].push_back(acc);
            total += steps;
        }
        if total > 0 {
            self.pending_events
                .push(format!("budget strengthen: {total} steps"));
        }
        total
    }

    /// Re-draw every ensemble member from its template initialization, clear
    /// optimizer state, and train the fresh models back above `threshold_2`.
    pub fn restart_ensemble(&mut self, ds: &DualLabeledDataset) -> usize {
        self.restart_counter += 1;
        for (mi, fb) in self.ensemble.iter_mut().enumerate() {
            let seed = self
                .cfg
                .seed
                .wrapping_add(0xFE57 * self.restart_counter)
                .wrapping_add(mi as u64);
            *fb = fb.restart(seed);
            self.opt_b[mi].reset();
            self.budget_windows[mi].clear();
        }
        self.pending_events
            .push(format!("ensemble restart #{}", self.restart_counter));
        self.rebalance_budget(ds)
    }

    pub fn validation_accuracy(&mut self, ds: &DualLabeledDataset) -> f64 {
        measure_utility_accuracy(&mut self.fd, &mut self.ft, ds, &self.val_idx, self.cfg.batch_size)
    }

    fn record(&mut self, loss: &LossValue, ds: &DualLabeledDataset) {
        let val = self.validation_accuracy(ds);
        let windows = self
            .budget_windows
            .iter()
            .map(|w| {
                if w.is_empty() {
                    0.0
                } else {
                    w.iter().sum::<f64>() / w.len() as f64
                }
            })
            .collect();
        self.history.push(HistoryRecord {
            iteration: self.iteration,
            loss_total: loss.value,
            loss_target: loss.components["target"],
            loss_budget: loss.components["budget"],
            loss_recon: loss.components["recon"],
            winning_model: loss.components["winner"] as usize,
            utility_val_accuracy: val,
            budget_window_accuracy: windows,
            events: std::mem::take(&mut self.pending_events),
        });
    }

    /// Run the full adversarial schedule for `cfg.iterations` outer steps.
    pub fn train(&mut self, ds: &DualLabeledDataset) -> Result<()> {
        let start = self.iteration;
        while self.iteration < start + self.cfg.iterations {
            let loss = self.main_step(ds)?;
            if self.iteration % self.cfg.restart_period == 0 {
                self.restart_ensemble(ds);
            } else if self.iteration % self.cfg.eval_every == 0 {
                self.rebalance_budget(ds);
            }
            if self.iteration % self.cfg.eval_every == 0 {
                self.rebalance_utility(ds);
                self.record(&loss, ds);
            }
        }
        Ok(())
    }

    /// Append history records to a JSONL file, one record per line.
    pub fn write_history(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for rec in &self.history {
            serde_json::to_writer(&mut f, rec)?;
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Two adversarial runs sharing one set of degradation parameters: each outer
/// iteration applies a main step on dataset A then dataset B through the same
/// `f_d`, with separate utility models and ensembles.
pub struct CrossDatasetState {
    pub a: TrainState,
    pub b: TrainState,
}

impl CrossDatasetState {
    pub fn new(
        ds_a: &DualLabeledDataset,
        ds_b: &DualLabeledDataset,
        cfg_a: TrainingConfig,
        cfg_b: TrainingConfig,
    ) -> Result<Self> {
        let a = TrainState::new(ds_a, cfg_a, None)?;
        let mut b = TrainState::new(ds_b, cfg_b, None)?;
        // share the warmed-up transform of run A; run B re-adapts around it
        b.fd = a.fd.clone();
        Ok(CrossDatasetState { a, b })
    }

    /// Alternate main steps over the two datasets, keeping `f_d` shared by
    /// copying the updated parameters across before each step.
    pub fn train(
        &mut self,
        ds_a: &DualLabeledDataset,
        ds_b: &DualLabeledDataset,
        iterations: usize,
    ) -> Result<()> {
        for _ in 0..iterations {
            self.a.main_step(ds_a)?;
            self.b.fd = self.a.fd.clone();
            self.b.main_step(ds_b)?;
            self.a.fd = self.b.fd.clone();

            let it = self.a.iteration;
            if it % self.a.cfg.restart_period == 0 {
                self.a.restart_ensemble(ds_a);
                self.b.fd = self.a.fd.clone();
                self.b.restart_ensemble(ds_b);
                self.a.fd = self.b.fd.clone();
            } else if it % self.a.cfg.eval_every == 0 {
                self.a.rebalance_budget(ds_a);
                self.b.fd = self.a.fd.clone();
                self.b.rebalance_budget(ds_b);
                self.a.fd = self.b.fd.clone();
            }
            if it % self.a.cfg.eval_every == 0 {
                self.a.rebalance_utility(ds_a);
                self.b.fd = self.a.fd.clone();
                self.b.rebalance_utility(ds_b);
                self.a.fd = self.b.fd.clone();
            }
        }
        Ok(())
    }

    /// The two runs must agree exactly on the shared parameters.
    pub fn shared_hash(&self) -> Result<[u8; 32]> {
        let ha = self.a.fd.hash();
        let hb = self.b.fd.hash();
        if ha != hb {
            return Err(Error::ProtocolViolation(
                "shared degradation parameters diverged between datasets".into(),
            ));
        }
        Ok(ha)
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"AVCK";
const CKPT_VERSION: u32 = 1;

/// Serialize the run state (config echo, iteration, all model parameters as
/// f32) to a byte buffer.
pub fn checkpoint_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&state.cfg)?;
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(state.iteration as u64).to_le_bytes());

    let mut params: Vec<&crate::nn::Param> = state.fd.params();
    params.extend(state.ft.params());
    for fb in &state.ensemble {
        params.extend(fb.params());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Restore parameters into an already-built state with matching architecture.
/// The stored config must match the state's config exactly.
pub fn restore_checkpoint(state: &mut TrainState, bytes: &[u8]) -> Result<()> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Parse {
                offset: *pos as u64,
                reason: "checkpoint truncated".into(),
            });
        }
        let out = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(out)
    };
    if take(&mut pos, 4)? != CKPT_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: "bad checkpoint magic".into(),
        });
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::Parse {
            offset: pos as u64,
            reason: format!("unsupported checkpoint version {version}"),
        });
    }
    let cfg_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let cfg: TrainingConfig = serde_json::from_slice(take(&mut pos, cfg_len)?)?;
    if cfg != state.cfg {
        return Err(Error::ProtocolViolation(
            "checkpoint config does not match the run config".into(),
        ));
    }
    let iteration = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let n_params = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;

    let mut params: Vec<&mut crate::nn::Param> = state.fd.params_mut();
    params.extend(state.ft.params_mut());
    for fb in &mut state.ensemble {
        params.extend(fb.params_mut());
    }
    if params.len() != n_params {
        return Err(Error::ProtocolViolation(format!(
            "checkpoint holds {} arrays, model holds {}",
            n_params,
            params.len()
        )));
    }
    for p in params {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| Error::Parse {
                offset: pos as u64,
                reason: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        if name != p.name {
            return Err(Error::ProtocolViolation(format!(
                "checkpoint array `{name}` does not match model parameter `{}`",
                p.name
            )));
        }
        let ndim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        if shape != p.value.shape() {
            return Err(Error::ProtocolViolation(format!(
                "shape mismatch for `{name}`: checkpoint {shape:?}, model {:?}",
                p.value.shape()
            )));
        }
        let count: usize = shape.iter().product();
        let raw = take(&mut pos, count * 4)?;
        for (i, v) in p.value.iter_mut().enumerate() {
            *v = f32::from_le_bytes(raw[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
        }
    }
    if pos != bytes.len() {
        return Err(Error::Parse {
            offset: pos as u64,
            reason: "trailing bytes after last parameter".into(),
        });
    }
    state.iteration = iteration;
    Ok(())
}
