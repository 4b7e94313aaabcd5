//! Scratch diagnostic: per-family budget-model learnability on raw frames.

use anonyvid::data::{batch_from_indices, generate_dataset, Split, SyntheticSpec};
use anonyvid::nets::{
    budget_batch_accuracy, BatchStream, BudgetClassifier, BudgetModelSpec, InitMode,
    ModelFamilySpec, BUDGET_FAMILIES,
};
use anonyvid::nn::SgdMomentum;

fn main() {
    let spec = SyntheticSpec::default();
    let ds = generate_dataset(&spec, 42).unwrap();
    let mut specs = ModelFamilySpec::default_training(4).entries;
    for f in BUDGET_FAMILIES {
        specs.push(BudgetModelSpec {
            family: f.to_string(),
            width: 2.0,
            init: InitMode::FromScratch,
        });
    }
    for s in specs {
        let mut fb = BudgetClassifier::build(&s, spec.c, spec.k_b, spec.t, spec.mode, 5).unwrap();
        let n_params: usize = fb.params().iter().map(|p| p.len()).sum();
        let mut opt = SgdMomentum::new(1e-2, 0.9);
        let mut stream = BatchStream::new(ds.train_indices(), 16, 5);
        let mut last = 0.0;
        for step in 0..6000 {
            let idx = stream.next_batch();
            let batch = batch_from_indices(&ds, &idx);
            let probs = fb.forward(&batch.x);
            let (_, grad, _) =
                anonyvid::nets::ce_loss_and_grad(&probs, &batch.identity);
            fb.backward(&grad);
            opt.step(fb.params_mut());
            last = budget_batch_accuracy(&probs, &batch.identity, batch.attributes.as_ref(), spec.mode);
            if step % 750 == 749 {
                let ev = eval_acc(&mut fb, &ds, spec.mode);
                eprintln!(
                    "  {:>8} w={:.2} ({} params) step {:>4}: batch acc {:.3} eval {:.3}",
                    s.family, s.width, n_params, step, last, ev
                );
            }
        }
        let ev = eval_acc(&mut fb, &ds, spec.mode);
        eprintln!("{:>8} w={:.2}: final batch {:.3}, eval {:.3}", s.family, s.width, last, ev);
    }
}

fn eval_acc(
    fb: &mut BudgetClassifier,
    ds: &anonyvid::data::DualLabeledDataset,
    mode: anonyvid::data::LabelMode,
) -> f64 {
    let idx = ds.indices(Split::Eval);
    let mut correct = 0.0;
    let mut total = 0.0;
    for chunk in idx.chunks(16) {
        let batch = batch_from_indices(ds, chunk);
        let probs = fb.forward(&batch.x);
        correct +=
            budget_batch_accuracy(&probs, &batch.identity, batch.attributes.as_ref(), mode)
                * chunk.len() as f64;
        total += chunk.len() as f64;
    }
    correct / total
}
