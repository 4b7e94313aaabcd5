//! The model zoo: degradation transform `f_d`, utility classifier `f_T`,
//! budget classifier family `f_b` with width multipliers, plus build,
//! restart, and the three-stage warm-start pipeline.

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{batch_from_indices, DualLabeledDataset, LabelMode};
use crate::error::{Error, Result};
use crate::nn::{
    AvgPool2d, Conv2d, ConvStack, GlobalAvgPool, Layer, Linear, Param, Relu, SgdMomentum, Tanh,
};
use crate::objectives::{
    accuracy, l1_reconstruction, l1_reconstruction_grad, multilabel_sigmoid_grad, sigmoid,
    softmax_rows, softmax_rows_backward, target_loss, target_loss_grad,
};

/// Registered budget-model architecture families.
pub const BUDGET_FAMILIES: [&str; 4] = ["compact3", "slim4", "wide5", "patch2"];

/// Output clamp range of the degradation transform. Wider than `[0, 1]`:
/// degraded frames need not look like natural images, but downstream
/// classifiers still see bounded inputs.
pub const DEGRADE_CLAMP: (f64, f64) = (-1.0, 2.0);

fn seeded(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0xA076_1D64_78BD_642F))
}

/// SHA-256 over all parameter names and value bits; used to assert freeze
/// contracts and shared-parameter identity.
pub fn param_hash(params: &[&Param]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for p in params {
        hasher.update(p.name.as_bytes());
        for &v in p.value.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.finalize().into()
}

// ---------------------------------------------------------------------------
// Degradation transform
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DegradeConfig {
    pub hidden: usize,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig { hidden: 8 }
    }
}

/// Learnable frame-wise filtering: a residual 3-layer CNN whose output keeps
/// the input resolution, clamped to `DEGRADE_CLAMP`.
#[derive(Debug, Clone)]
pub struct DegradationTransform {
    stack: ConvStack,
    cache_pre: Option<Array4<f64>>,
}

impl DegradationTransform {
    pub fn build(cfg: &DegradeConfig, channels: usize, seed: u64) -> Self {
        let mut rng = seeded(seed, 0xD0);
        let hid = cfg.hidden;
        let mut last = Conv2d::new("fd.c3", hid, channels, 3, 1, 1, &mut rng);
        // start close to the identity map so reconstruction warm-up is short
        last.w.value.mapv_inplace(|v| v * 0.2);
        last.b.value.mapv_inplace(|v| v * 0.2);
        let stack = ConvStack {
            layers: vec![
                Layer::Conv(Conv2d::new("fd.c1", channels, hid, 3, 1, 1, &mut rng)),
                Layer::Tanh(Tanh::default()),
                Layer::Conv(Conv2d::new("fd.c2", hid, hid, 3, 1, 1, &mut rng)),
                Layer::Tanh(Tanh::default()),
                Layer::Conv(last),
            ],
        };
        DegradationTransform {
            stack,
            cache_pre: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let g = self.stack.forward(&x.mapv(|v| 2.0 * (v - 0.5)));
        let pre = x + &g;
        let out = pre.mapv(|v| v.clamp(DEGRADE_CLAMP.0, DEGRADE_CLAMP.1));
        self.cache_pre = Some(pre);
        out
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let pre = self.cache_pre.take().expect("backward before forward");
        let masked =
            gy * &pre.mapv(|v| if (DEGRADE_CLAMP.0..=DEGRADE_CLAMP.1).contains(&v) { 1.0 } else { 0.0 });
        let gx = self.stack.backward(&masked) * 2.0;
        gx + &masked
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.stack.params_mut()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.stack.params()
    }

    pub fn hash(&self) -> [u8; 32] {
        param_hash(&self.params())
    }
}

// ---------------------------------------------------------------------------
// Utility classifier
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UtilityConfig {
    pub base_channels: usize,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        UtilityConfig { base_channels: 12 }
    }
}

/// Clip classifier: per-frame conv encoder, temporal mean pooling over the T
/// frames, linear head to `K_T` logits.
#[derive(Debug, Clone)]
pub struct UtilityClassifier {
    encoder: ConvStack,
    gap: GlobalAvgPool,
    head: Linear,
    pub t: usize,
    pub k: usize,
    feat: usize,
    cache_probs: Option<Array2<f64>>,
}

impl UtilityClassifier {
    pub fn build(cfg: &UtilityConfig, channels: usize, k_t: usize, t: usize, seed: u64) -> Self {
        let mut rng = seeded(seed, 0x7A);
        let b = cfg.base_channels;
        let feat = b + b / 3;
        let encoder = ConvStack {
            layers: vec![
                Layer::Conv(Conv2d::new("ft.c1", channels, b, 3, 1, 1, &mut rng)),
                Layer::Relu(Relu::default()),
                Layer::Pool(AvgPool2d::new(2)),
                Layer::Conv(Conv2d::new("ft.c2", b, feat, 3, 1, 1, &mut rng)),
                Layer::Relu(Relu::default()),
                Layer::Pool(AvgPool2d::new(2)),
                Layer::Conv(Conv2d::new("ft.c3", feat, feat, 3, 1, 1, &mut rng)),
                Layer::Relu(Relu::default()),
            ],
        };
        let head = Linear::new("ft.head", feat, k_t, &mut rng);
        UtilityClassifier {
            encoder,
            gap: GlobalAvgPool::default(),
            head,
            t,
            k: k_t,
            feat,
            cache_probs: None,
        }
    }

    /// `[N*T, C, H, W] -> [N, K_T]` clip probability vectors. Pixels are
    /// centered and rescaled (`2 (x - 1/2)`) before the encoder.
    pub fn forward(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let xc = x.mapv(|v| 2.0 * (v - 0.5));
        let feats = self.gap.forward(&self.encoder.forward(&xc)); // [NT, F]
        let nt = feats.nrows();
        let n = nt / self.t;
        let mut clip = Array2::<f64>::zeros((n, self.feat));
        for ni in 0..n {
            for fi in 0..self.t {
                for d in 0..self.feat {
                    clip[[ni, d]] += feats[[ni * self.t + fi, d]] / self.t as f64;
                }
            }
        }
        let logits = self.head.forward(&clip);
        let probs = softmax_rows(&logits);
        self.cache_probs = Some(probs.clone());
        probs
    }

    pub fn backward(&mut self, dprobs: &Array2<f64>) -> Array4<f64> {
        let probs = self.cache_probs.take().expect("backward before forward");
        let dlogits = softmax_rows_backward(dprobs, &probs);
        let dclip = self.head.backward(&dlogits); // [N, F]
        let n = dclip.nrows();
        let mut dfeats = Array2::<f64>::zeros((n * self.t, self.feat));
        for ni in 0..n {
            for fi in 0..self.t {
                for d in 0..self.feat {
                    dfeats[[ni * self.t + fi, d]] = dclip[[ni, d]] / self.t as f64;
                }
            }
        }
        self.encoder.backward(&self.gap.backward(&dfeats)) * 2.0
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    pub fn hash(&self) -> [u8; 32] {
        param_hash(&self.params())
    }
}

// ---------------------------------------------------------------------------
// Budget classifiers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Initialize from a probe trained on raw frames of a separate dataset
    /// (the pretrained-backbone analog).
    PretrainedProbe,
    FromScratch,
}

/// One entry of the budget-model family: architecture template, capacity
/// multiplier, initialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetModelSpec {
    pub family: String,
    pub width: f64,
    pub init: InitMode,
}

impl BudgetModelSpec {
    /// Comparison key; widths are compared at millisecond granularity so the
    /// spec triples are hashable.
    pub fn key(&self) -> (String, u32, bool) {
        (
            self.family.clone(),
            (self.width * 1000.0).round() as u32,
            self.init == InitMode::PretrainedProbe,
        )
    }
}

impl PartialEq for BudgetModelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for BudgetModelSpec {}

/// A set of budget-model spec triples with uniqueness enforced.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ModelFamilySpec {
    pub entries: Vec<BudgetModelSpec>,
}

impl ModelFamilySpec {
    pub fn new(entries: Vec<BudgetModelSpec>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.key()) {
                return Err(Error::validation(
                    "entries",
                    format!("duplicate spec triple {:?}", e),
                ));
            }
        }
        Ok(ModelFamilySpec { entries })
    }

    pub fn overlaps(&self, other: &ModelFamilySpec) -> bool {
        let keys: std::collections::HashSet<_> = self.entries.iter().map(|e| e.key()).collect();
        other.entries.iter().any(|e| keys.contains(&e.key()))
    }

    /// Default training ensemble of size `m`: round-robin over families and
    /// multipliers; combinations repeat with distinct seeds once exhausted.
    pub fn default_training(m: usize) -> Self {
        let widths = [1.0, 0.5, 0.75, 0.25];
        let mut entries = Vec::with_capacity(m);
        for i in 0..m {
            entries.push(BudgetModelSpec {
                family: BUDGET_FAMILIES[i % BUDGET_FAMILIES.len()].to_string(),
                width: widths[(i / BUDGET_FAMILIES.len()) % widths.len()],
                init: InitMode::FromScratch,
            });
        }
        // uniqueness over (family, width, init) may be violated for large m;
        // the ensemble reuses combinations with distinct build seeds then
        ModelFamilySpec { entries }
    }
}

fn scaled(base: usize, width: f64) -> usize {
    ((base as f64 * width).round() as usize).max(1)
}

fn budget_stack(
    family: &str,
    width: f64,
    channels: usize,
    name: &str,
    rng: &mut impl Rng,
) -> Result<(ConvStack, usize)> {
    let stack = match family {
        "compact3" => {
            let c1 = scaled(8, width);
            let c2 = scaled(16, width);
            (
                ConvStack {
                    layers: vec![
                        Layer::Conv(Conv2d::new(&format!("{name}.c1"), channels, c1, 3, 1, 1, rng)),
                        Layer::Relu(Relu::default()),
                        Layer::Pool(AvgPool2d::new(2)),
                        Layer::Conv(Conv2d::new(&format!("{name}.c2"), c1, c2, 3, 1, 1, rng)),
                        Layer::Relu(Relu::default()),
                        Layer::Pool(AvgPool2d::new(2)),
                    ],
                },
                c2,
            )
        }
        "slim4" => {
            let c1 = scaled(6, width);
            let c2 = scaled(12, width);
            (
                ConvStack {
                    layers: vec![
                        Layer::Conv(Conv2d::new(&format!("{name}.c1"), channels, c1, 3, 1, 1, rng)),
                        Layer::Relu(Relu::default()),
                        Layer::Conv(Conv2d::new(&format!("{name}.c2"), c1, c1, 3, 1, 1, rng)),
                        Layer::Relu(Relu::default()),
                        Layer::Pool(AvgPool2d::new(2)),
                        Layer::Conv(Conv2d::new(&format!("{name}.c3"), c1, c2, 3, 1, 1, rng)),
                        Layer::Relu(Relu::default()),
                        Layer::Pool(AvgPool2d::new(2)),
                    ],
                },
                c2,
            )
        }
        "wide5" => {
            let c1 = scaled(8, width);
            let c2 = scaled(12, width);
            (
                ConvStack {
                    layers: vec![
                        Layer::Conv(Conv2d::new(&format!("{name}.c1"), channels, c1, 5, 2, 1, rng)),
                        Layer::Relu(Relu::default()),
                        Layer::Pool(AvgPool2d::new(2)),
                        Layer::Conv(Conv2d::new(&format!("{name}.c2"), c1, c2, 3, 1, 1, rng)),
                        Layer::Relu(Relu::default()),
                        Layer::Pool(AvgPool2d::new(2)),
                    ],
                },
                c2,
            )
        }
        "patch2" => {
            let c1 = scaled(16, width);
            (
                ConvStack {
                    layers: vec![
                        Layer::Conv(Conv2d::new(&format!("{name}.c1"), channels, c1, 3, 1, 2, rng)),
                        Layer::Relu(Relu::default()),
                        Layer::Conv(Conv2d::new(&format!("{name}.c2"), c1, c1, 3, 1, 1, rng)),
                        Layer::Relu(Relu::default()),
                        Layer::Pool(AvgPool2d::new(2)),
                    ],
                },
                c1,
            )
        }
        other => return Err(Error::UnknownTemplate(other.to_string())),
    };
    Ok(stack)
}

/// Per-frame budget classifier; frame-wise predictions are averaged over the
/// clip. Identity mode emits a `K_B`-way probability vector; attribute mode
/// emits `K_A` sigmoid outputs (clip logits are the frame mean).
#[derive(Debug, Clone)]
pub struct BudgetClassifier {
    pub spec: BudgetModelSpec,
    pub mode: LabelMode,
    pub t: usize,
    pub k: usize,
    stack: ConvStack,
    gap: GlobalAvgPool,
    head: Linear,
    cache_frame_probs: Option<Array2<f64>>,
    cache_clip_probs: Option<Array2<f64>>,
}

impl BudgetClassifier {
    pub fn build(
        spec: &BudgetModelSpec,
        channels: usize,
        k: usize,
        t: usize,
        mode: LabelMode,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seeded(seed, 0xB0);
        let name = format!("fb.{}_{}", spec.family, (spec.width * 100.0) as u32);
        let (stack, feat) = budget_stack(&spec.family, spec.width, channels, &name, &mut rng)?;
        let head = Linear::new(&format!("{name}.head"), feat, k, &mut rng);
        Ok(BudgetClassifier {
            spec: spec.clone(),
            mode,
            t,
            k,
            stack,
            gap: GlobalAvgPool::default(),
            head,
            cache_frame_probs: None,
            cache_clip_probs: None,
        })
    }

    /// Re-draw every parameter from the template's initialization
    /// distribution; architecture unchanged. The caller resets optimizer
    /// state.
    pub fn restart(&self, seed: u64) -> Self {
        let mut fresh = BudgetClassifier::build(&self.spec, self.in_channels(), self.k, self.t, self.mode, seed)
            .expect("registered template");
        fresh.spec = self.spec.clone();
        fresh
    }

    fn in_channels(&self) -> usize {
        match &self.stack.layers[0] {
            Layer::Conv(c) => c.w.value.shape()[1],
            _ => unreachable!("templates start with a conv"),
        }
    }

    /// `[N*T, C, H, W] -> [N, K]` clip predictions. Pixels are centered and
    /// rescaled (`2 (x - 1/2)`) before the stack.
    pub fn forward(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let xc = x.mapv(|v| 2.0 * (v - 0.5));
        let feats = self.gap.forward(&self.stack.forward(&xc));
        let logits = self.head.forward(&feats); // [NT, K]
        let nt = logits.nrows();
        let n = nt / self.t;
        let clip = match self.mode {
            LabelMode::Identity => {
                let pf = softmax_rows(&logits);
                let mut clip = Array2::<f64>::zeros((n, self.k));
                for ni in 0..n {
                    for fi in 0..self.t {
                        for kk in 0..self.k {
                            clip[[ni, kk]] += pf[[ni * self.t + fi, kk]] / self.t as f64;
                        }
                    }
                }
                self.cache_frame_probs = Some(pf);
                clip
            }
            LabelMode::Attributes => {
                // clip logits = frame mean, clip probs = sigmoid(clip logits)
                let mut clip_logits = Array2::<f64>::zeros((n, self.k));
                for ni in 0..n {
                    for fi in 0..self.t {
                        for kk in 0..self.k {
                            clip_logits[[ni, kk]] += logits[[ni * self.t + fi, kk]] / self.t as f64;
                        }
                    }
                }
                let clip = clip_logits.mapv(sigmoid);
                self.cache_frame_probs = Some(clip_logits);
                clip
            }
        };
        self.cache_clip_probs = Some(clip.clone());
        clip
    }

    /// Clip logits of the last forward (attribute mode only).
    pub fn last_clip_logits(&self) -> &Array2<f64> {
        assert_eq!(self.mode, LabelMode::Attributes);
        self.cache_frame_probs.as_ref().expect("forward first")
    }

    pub fn last_clip_probs(&self) -> &Array2<f64> {
        self.cache_clip_probs.as_ref().expect("forward first")
    }

    /// Backward from a gradient w.r.t. clip predictions (probabilities).
    pub fn backward(&mut self, dclip: &Array2<f64>) -> Array4<f64> {
        let n = dclip.nrows();
        let dlogits = match self.mode {
            LabelMode::Identity => {
                let pf = self.cache_frame_probs.take().expect("forward first");
                let mut dpf = Array2::<f64>::zeros(pf.raw_dim());
                for ni in 0..n {
                    for fi in 0..self.t {
                        for kk in 0..self.k {
                            dpf[[ni * self.t + fi, kk]] = dclip[[ni, kk]] / self.t as f64;
                        }
                    }
                }
                softmax_rows_backward(&dpf, &pf)
            }
            LabelMode::Attributes => {
                let clip_logits = self.cache_frame_probs.take().expect("forward first");
                let clip_probs = self.cache_clip_probs.take().expect("forward first");
                // through sigmoid, then spread evenly over frames
                let dz_clip = dclip * &clip_probs.mapv(|p| p * (1.0 - p));
                let _ = clip_logits;
                let mut dlogits = Array2::<f64>::zeros((n * self.t, self.k));
                for ni in 0..n {
                    for fi in 0..self.t {
                        for kk in 0..self.k {
                            dlogits[[ni * self.t + fi, kk]] = dz_clip[[ni, kk]] / self.t as f64;
                        }
                    }
                }
                dlogits
            }
        };
        self.cache_clip_probs = None;
        self.cache_frame_probs = None;
        let dfeats = self.head.backward(&dlogits);
        self.stack.backward(&self.gap.backward(&dfeats)) * 2.0
    }

    /// Backward from a gradient w.r.t. clip logits (attribute mode; the
    /// stable path for the sigmoid multi-label loss).
    pub fn backward_logits(&mut self, dclip_logits: &Array2<f64>) -> Array4<f64> {
        assert_eq!(self.mode, LabelMode::Attributes);
        let n = dclip_logits.nrows();
        let mut dlogits = Array2::<f64>::zeros((n * self.t, self.k));
        for ni in 0..n {
            for fi in 0..self.t {
                for kk in 0..self.k {
                    dlogits[[ni * self.t + fi, kk]] = dclip_logits[[ni, kk]] / self.t as f64;
                }
            }
        }
        self.cache_clip_probs = None;
        self.cache_frame_probs = None;
        let dfeats = self.head.backward(&dlogits);
        self.stack.backward(&self.gap.backward(&dfeats)) * 2.0
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.stack.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.stack.params();
        p.extend(self.head.params());
        p
    }

    pub fn hash(&self) -> [u8; 32] {
        param_hash(&self.params())
    }
}

// ---------------------------------------------------------------------------
// Warm start
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WarmStartConfig {
    pub recon_bar: f64,
    pub utility_bar: f64,
    pub budget_bar: f64,
    pub stage_fuse: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub eval_every: usize,
    /// Weight of the L1 reconstruction anchor kept on `f_d` during the joint
    /// utility stage.
    pub recon_anchor: f64,
    /// Proceed past a tripped stage fuse instead of failing.
    pub override_failures: bool,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        WarmStartConfig {
            recon_bar: 0.02,
            utility_bar: 0.85,
            budget_bar: 0.95,
            stage_fuse: 2000,
            batch_size: 16,
            lr: 1e-2,
            momentum: 0.9,
            eval_every: 20,
            recon_anchor: 1.0,
            override_failures: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarmStartReport {
    pub stage1_steps: usize,
    pub stage1_recon: f64,
    pub stage2_steps: usize,
    pub stage2_accuracy: f64,
    pub stage3_steps: Vec<usize>,
    pub stage3_accuracy: Vec<f64>,
    pub fuse_trips: Vec<String>,
}

/// Cycle over shuffled train-split indices, re-shuffling each epoch.
pub struct BatchStream {
    indices: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(indices: Vec<usize>, batch: usize, seed: u64) -> Self {
        let mut s = BatchStream {
            indices,
            pos: 0,
            batch,
            rng: seeded(seed, 0x57),
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        // Fisher-Yates over the index list
        for i in (1..self.indices.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            self.indices.swap(i, j);
        }
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.indices.len() {
            self.shuffle();
        }
        let out = self.indices[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

/// Mean cross-entropy of clip probabilities against class labels, with its
/// gradient. Any clamped log raises the returned flag.
pub fn ce_loss_and_grad(probs: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>, bool) {
    let n = probs.nrows();
    let mut total = 0.0;
    let mut grad = Array2::<f64>::zeros(probs.raw_dim());
    let mut clamped = false;
    for (i, &y) in labels.iter().enumerate() {
        let (l, c) = target_loss(probs.row(i), y);
        clamped |= c;
        total += l / n as f64;
        let g = target_loss_grad(probs.row(i), y);
        for (k, &gv) in g.iter().enumerate() {
            grad[[i, k]] = gv / n as f64;
        }
    }
    (total, grad, clamped)
}

/// Budget-training accuracy of one batch. Identity mode: clip argmax vs
/// label. Attribute mode: mean per-attribute binary accuracy at 0.5.
pub fn budget_batch_accuracy(
    probs: &Array2<f64>,
    identity: &[usize],
    attributes: Option<&Array2<u8>>,
    mode: LabelMode,
) -> f64 {
    match mode {
        LabelMode::Identity => accuracy(probs, identity),
        LabelMode::Attributes => {
            let labels = attributes.expect("attribute labels");
            let total = probs.len();
            let correct = probs
                .iter()
                .zip(labels.iter())
                .filter(|(&p, &y)| (p >= 0.5) == (y != 0))
                .count();
            correct as f64 / total as f64
        }
    }
}

/// Full-split budget accuracy of `f_b . f_d` over the given indices.
pub fn measure_budget_accuracy(
    fd: &mut DegradationTransform,
    fb: &mut BudgetClassifier,
    ds: &DualLabeledDataset,
    indices: &[usize],
    batch_size: usize,
) -> f64 {
    let mut weighted = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = batch_from_indices(ds, chunk);
        let degraded = fd.forward(&batch.x);
        let probs = fb.forward(&degraded);
        weighted += budget_batch_accuracy(&probs, &batch.identity, batch.attributes.as_ref(), fb.mode)
            * chunk.len() as f64;
    }
    weighted / indices.len().max(1) as f64
}

/// Train one budget model on degraded frames until its full-train accuracy
/// (swept every `measure_every` steps) clears `bar` or `fuse` steps elapse.
/// With `plateau_patience` set, also stop once that many consecutive sweeps
/// fail to improve by more than 0.002 — used by the rebalance loops, where
/// the bar becomes unreachable once the transform has destroyed the signal.
/// Returns (steps, accuracy).
pub fn strengthen_budget_model(
    fb: &mut BudgetClassifier,
    opt: &mut SgdMomentum,
    fd: &mut DegradationTransform,
    ds: &DualLabeledDataset,
    stream: &mut BatchStream,
    bar: f64,
    fuse: usize,
    measure_every: usize,
    plateau_patience: Option<usize>,
) -> (usize, f64) {
    let mut steps = 0;
    let train = ds.train_indices();
    let spec = &ds.generator_spec;
    let t = spec.t;

    // f_d is frozen while a budget model is strengthened: degrade the whole
    // train split once and fit against the cache.
    let mut cache = Array4::<f64>::zeros((train.len() * t, spec.c, spec.h, spec.w));
    let mut pos_of = std::collections::HashMap::with_capacity(train.len());
    for (chunk_i, chunk) in train.chunks(16).enumerate() {
        let batch = batch_from_indices(ds, chunk);
        let degraded = fd.forward(&batch.x);
        for (bi, &di) in chunk.iter().enumerate() {
            let pos = chunk_i * 16 + bi;
            pos_of.insert(di, pos);
            for fi in 0..t {
                cache
                    .index_axis_mut(ndarray::Axis(0), pos * t + fi)
                    .assign(&degraded.index_axis(ndarray::Axis(0), bi * t + fi));
            }
        }
    }
    let gather = |ids: &[usize]| -> Array4<f64> {
        let mut x = Array4::<f64>::zeros((ids.len() * t, spec.c, spec.h, spec.w));
        for (bi, di) in ids.iter().enumerate() {
            let pos = pos_of[di];
            for fi in 0..t {
                x.index_axis_mut(ndarray::Axis(0), bi * t + fi)
                    .assign(&cache.index_axis(ndarray::Axis(0), pos * t + fi));
            }
        }
        x
    };
    let sweep = |fb: &mut BudgetClassifier| -> f64 {
        let mut weighted = 0.0;
        for chunk in train.chunks(16) {
            let batch = batch_from_indices(ds, chunk);
            let probs = fb.forward(&gather(chunk));
            weighted +=
                budget_batch_accuracy(&probs, &batch.identity, batch.attributes.as_ref(), fb.mode)
                    * chunk.len() as f64;
        }
        weighted / train.len().max(1) as f64
    };

    let mut best = 0.0f64;
    let mut stale = 0usize;
    loop {
        let idx = stream.next_batch();
        let batch = batch_from_indices(ds, &idx);
        let degraded = gather(&idx);
        let probs = fb.forward(&degraded);
        match fb.mode {
            LabelMode::Identity => {
                let (_, grad, _) = ce_loss_and_grad(&probs, &batch.identity);
                fb.backward(&grad);
            }
            LabelMode::Attributes => {
                let labels = batch.attributes.as_ref().unwrap();
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
        steps += 1;
        if steps % measure_every.max(1) == 0 || steps >= fuse {
            let measured = sweep(fb);
            if measured >= bar || steps >= fuse {
                return (steps, measured);
            }
            if measured > best + 0.002 {
                best = measured;
                stale = 0;
            } else if let Some(patience) = plateau_patience {
                stale += 1;
                if stale >= patience {
                    return (steps, measured);
                }
            }
        }
    }
}

/// Evaluate utility accuracy of `f_T . f_d` over the given indices.
pub fn measure_utility_accuracy(
    fd: &mut DegradationTransform,
    ft: &mut UtilityClassifier,
    ds: &DualLabeledDataset,
    indices: &[usize],
    batch_size: usize,
) -> f64 {
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = batch_from_indices(ds, chunk);
        let degraded = fd.forward(&batch.x);
        let probs = ft.forward(&degraded);
        for (i, &y) in batch.utility.iter().enumerate() {
            if crate::objectives::argmax(probs.row(i)) == y {
                correct += 1;
            }
        }
    }
    correct as f64 / indices.len().max(1) as f64
}

/// The three-stage initialization: `f_d` as reconstruction, `(f_d, f_T)`
/// jointly on the utility task, then each budget model adapted to the output
/// of the trained `f_d`.
#[allow(clippy::too_many_arguments)]
pub fn warm_start_pipeline(
    ds: &DualLabeledDataset,
    dcfg: &DegradeConfig,
    ucfg: &UtilityConfig,
    ensemble_spec: &ModelFamilySpec,
    cfg: &WarmStartConfig,
    seed: u64,
) -> Result<(
    DegradationTransform,
    UtilityClassifier,
    Vec<BudgetClassifier>,
    WarmStartReport,
)> {
    let spec = &ds.generator_spec;
    let mut fd = DegradationTransform::build(dcfg, spec.c, seed);
    let mut ft = UtilityClassifier::build(ucfg, spec.c, spec.k_t, spec.t, seed);
    let mut report = WarmStartReport {
        stage1_steps: 0,
        stage1_recon: f64::NAN,
        stage2_steps: 0,
        stage2_accuracy: f64::NAN,
        stage3_steps: vec![],
        stage3_accuracy: vec![],
        fuse_trips: vec![],
    };

    let train_idx = ds.train_indices();
    let eval_idx = ds.eval_indices();
    let mut stream = BatchStream::new(train_idx.clone(), cfg.batch_size, seed);

    let eval_recon = |fd: &mut DegradationTransform| -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in eval_idx.chunks(cfg.batch_size.max(1)) {
            let batch = batch_from_indices(ds, chunk);
            let out = fd.forward(&batch.x);
            total += l1_reconstruction(out.view().into_dyn(), batch.x.view().into_dyn()).unwrap()
                * chunk.len() as f64;
            count += chunk.len();
        }
        total / count as f64
    };

    // Stage 1: f_d alone, mean-absolute reconstruction
    let mut opt_d = SgdMomentum::new(cfg.lr, cfg.momentum);
    loop {
        if report.stage1_steps % cfg.eval_every == 0 {
            report.stage1_recon = eval_recon(&mut fd);
            if report.stage1_recon < cfg.recon_bar {
                break;
            }
        }
        if report.stage1_steps >= cfg.stage_fuse {
            report.stage1_recon = eval_recon(&mut fd);
            if report.stage1_recon >= cfg.recon_bar {
                report.fuse_trips.push(format!(
                    "stage1 fuse at {} steps, recon {:.4}",
                    report.stage1_steps, report.stage1_recon
                ));
                if !cfg.override_failures {
                    return Err(Error::WarmStartFailure {
                        stage: "reconstruction",
                        metric: report.stage1_recon,
                        bar: cfg.recon_bar,
                    });
                }
            }
            break;
        }
        let idx = stream.next_batch();
        let batch = batch_from_indices(ds, &idx);
        let out = fd.forward(&batch.x);
        let grad = l1_reconstruction_grad(out.view().into_dyn(), batch.x.view().into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        fd.backward(&grad);
        opt_d.step(fd.params_mut());
        report.stage1_steps += 1;
    }

    // Stage 2: (f_d, f_T) jointly on the target loss
    let mut opt_t = SgdMomentum::new(cfg.lr, cfg.momentum);
    loop {
        if report.stage2_steps % cfg.eval_every == 0 {
            report.stage2_accuracy =
                measure_utility_accuracy(&mut fd, &mut ft, ds, &eval_idx, cfg.batch_size);
            if report.stage2_accuracy >= cfg.utility_bar {
                break;
            }
        }
        if report.stage2_steps >= cfg.stage_fuse {
            report.stage2_accuracy =
                measure_utility_accuracy(&mut fd, &mut ft, ds, &eval_idx, cfg.batch_size);
            if report.stage2_accuracy < cfg.utility_bar {
                report.fuse_trips.push(format!(
                    "stage2 fuse at {} steps, accuracy {:.4}",
                    report.stage2_steps, report.stage2_accuracy
                ));
                if !cfg.override_failures {
                    return Err(Error::WarmStartFailure {
                        stage: "utility",
                        metric: report.stage2_accuracy,
                        bar: cfg.utility_bar,
                    });
                }
            }
            break;
        }
        let idx = stream.next_batch();
        let batch = batch_from_indices(ds, &idx);
        let degraded = fd.forward(&batch.x);
        let probs = ft.forward(&degraded);
        let (_, grad, _) = ce_loss_and_grad(&probs, &batch.utility);
        let dx = ft.backward(&grad);
        // reconstruction anchor: without it the joint stage drives f_d to an
        // arbitrary encoding that f_T can read but budget models cannot learn
        let danchor = l1_reconstruction_grad(degraded.view().into_dyn(), batch.x.view().into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap()
            * cfg.recon_anchor;
        fd.backward(&(dx + danchor));
        opt_t.step(ft.params_mut());
        opt_d.step(fd.params_mut());
        report.stage2_steps += 1;
    }

    // Stage 3: budget models adapted to the current f_d output. f_d is
    // frozen here, so the members strengthen independently in parallel.
    use rayon::prelude::*;
    let outcomes: Vec<Result<(BudgetClassifier, usize, f64)>> = ensemble_spec
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, bspec)| {
            let mut fb = BudgetClassifier::build(
                bspec,
                spec.c,
                spec.k_b,
                spec.t,
                spec.mode,
                seed.wrapping_add(1000 + i as u64),
            )?;
            let mut fd_local = fd.clone();
            let mut opt_b = SgdMomentum::new(cfg.lr, cfg.momentum);
            let mut bstream =
                BatchStream::new(train_idx.clone(), cfg.batch_size, seed ^ (i as u64 + 77));
            let (steps, acc) = strengthen_budget_model(
                &mut fb,
                &mut opt_b,
                &mut fd_local,
                ds,
                &mut bstream,
                cfg.budget_bar,
                cfg.stage_fuse,
                cfg.eval_every,
                // the warm start must genuinely reach the bar; only the fuse
                // may cut it short
                None,
            );
            Ok((fb, steps, acc))
        })
        .collect();
    let mut ensemble = Vec::with_capacity(ensemble_spec.entries.len());
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let (fb, steps, acc) = outcome?;
        if acc < cfg.budget_bar {
            report
                .fuse_trips
                .push(format!("stage3 model {i} fuse at {steps} steps, accuracy {acc:.4}"));
            if !cfg.override_failures {
                return Err(Error::WarmStartFailure {
                    stage: "budget",
                    metric: acc,
                    bar: cfg.budget_bar,
                });
            }
        }
        report.stage3_steps.push(steps);
        report.stage3_accuracy.push(acc);
        ensemble.push(fb);
    }

    Ok((fd, ft, ensemble, report))
}
