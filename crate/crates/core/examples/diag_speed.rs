//! Scratch micro-benchmark of the per-step costs that dominate run time.

use std::time::Instant;

use anonyvid::data::{batch_from_indices, generate_dataset, SyntheticSpec};
use anonyvid::nets::{
    ce_loss_and_grad, BatchStream, BudgetClassifier, BudgetModelSpec, DegradationTransform,
    DegradeConfig, InitMode, UtilityClassifier, UtilityConfig,
};
use anonyvid::nn::SgdMomentum;

fn main() {
    let spec = SyntheticSpec::default();
    let ds = generate_dataset(&spec, 42).unwrap();
    let mut stream = BatchStream::new(ds.train_indices(), 16, 1);

    let bspec = BudgetModelSpec {
        family: "compact3".to_string(),
        width: 1.0,
        init: InitMode::FromScratch,
    };
    let mut fb = BudgetClassifier::build(&bspec, spec.c, spec.k_b, spec.t, spec.mode, 5).unwrap();
    let mut opt = SgdMomentum::new(1e-2, 0.9);
    let t0 = Instant::now();
    for _ in 0..50 {
        let idx = stream.next_batch();
        let batch = batch_from_indices(&ds, &idx);
        let probs = fb.forward(&batch.x);
        let (_, grad, _) = ce_loss_and_grad(&probs, &batch.identity);
        fb.backward(&grad);
        opt.step(fb.params_mut());
    }
    eprintln!("budget fwd+bwd+step: {:.1} ms", t0.elapsed().as_secs_f64() * 20.0);

    let t0 = Instant::now();
    for _ in 0..50 {
        let idx = stream.next_batch();
        let batch = batch_from_indices(&ds, &idx);
        let _ = fb.forward(&batch.x);
    }
    eprintln!("budget fwd only:     {:.1} ms", t0.elapsed().as_secs_f64() * 20.0);

    let mut fd = DegradationTransform::build(&DegradeConfig::default(), spec.c, 1);
    let t0 = Instant::now();
    for _ in 0..50 {
        let idx = stream.next_batch();
        let batch = batch_from_indices(&ds, &idx);
        let out = fd.forward(&batch.x);
        let g = out.mapv(|v| v * 1e-3);
        fd.backward(&g);
        opt.step(fd.params_mut());
    }
    eprintln!("degrade fwd+bwd+step: {:.1} ms", t0.elapsed().as_secs_f64() * 20.0);

    let mut ft = UtilityClassifier::build(&UtilityConfig::default(), spec.c, spec.k_t, spec.t, 1);
    let t0 = Instant::now();
    for _ in 0..50 {
        let idx = stream.next_batch();
        let batch = batch_from_indices(&ds, &idx);
        let probs = ft.forward(&batch.x);
        let (_, grad, _) = ce_loss_and_grad(&probs, &batch.utility);
        ft.backward(&grad);
        opt.step(ft.params_mut());
    }
    eprintln!("utility fwd+bwd+step: {:.1} ms", t0.elapsed().as_secs_f64() * 20.0);

    let t0 = Instant::now();
    let idx = stream.next_batch();
    let batch = batch_from_indices(&ds, &idx);
    eprintln!("batch gather:        {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0);
    let _ = batch;
}
