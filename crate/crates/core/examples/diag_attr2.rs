//! Scratch diagnostic: raw-data accuracy trajectory of each training-ensemble
//! template on the attribute dataset (ceiling vs convergence-speed question).

use std::time::Instant;

use anonyvid::data::{batch_from_indices, generate_dataset, Split, SyntheticSpec};
use anonyvid::nets::{
    budget_batch_accuracy, BatchStream, BudgetClassifier, ModelFamilySpec,
};
use anonyvid::nn::SgdMomentum;
use anonyvid::objectives::multilabel_sigmoid_grad;
use ndarray::Array2;

fn main() {
    let t0 = Instant::now();
    let spec = SyntheticSpec::default_attributes();
    let ds = generate_dataset(&spec, 43).unwrap();

    let sweep = |fb: &mut BudgetClassifier, split: Split| -> f64 {
        let idx = ds.indices(split);
        let mut weighted = 0.0;
        for chunk in idx.chunks(16) {
            let batch = batch_from_indices(&ds, chunk);
            let probs = fb.forward(&batch.x);
            weighted += budget_batch_accuracy(
                &probs,
                &batch.identity,
                batch.attributes.as_ref(),
                fb.mode,
            ) * chunk.len() as f64;
        }
        weighted / idx.len().max(1) as f64
    };

    for ms in ModelFamilySpec::default_training(4).entries {
        let mut fb =
            BudgetClassifier::build(&ms, spec.c, spec.k_b, spec.t, spec.mode, 99).unwrap();
        let mut opt = SgdMomentum::new(1e-2, 0.9);
        let mut stream = BatchStream::new(ds.train_indices(), 16, 7);
        eprintln!("[{:>6.1}s] {} w={}", t0.elapsed().as_secs_f64(), ms.family, ms.width);
        for step in 0..6000usize {
            let idx = stream.next_batch();
            let batch = batch_from_indices(&ds, &idx);
            let _ = fb.forward(&batch.x);
            let logits = fb.last_clip_logits().clone();
            let n = logits.nrows();
            let mut grad = Array2::<f64>::zeros(logits.raw_dim());
            let labels = batch.attributes.as_ref().unwrap();
            for i in 0..n {
                let row: Vec<u8> = labels.row(i).to_vec();
                let g = multilabel_sigmoid_grad(logits.row(i), &row);
                for (k, &gv) in g.iter().enumerate() {
                    grad[[i, k]] = gv / n as f64;
                }
            }
            fb.backward_logits(&grad);
            opt.step(fb.params_mut());
            if step % 500 == 499 {
                eprintln!(
                    "[{:>6.1}s]   step {:>5}: train {:.3} eval {:.3}",
                    t0.elapsed().as_secs_f64(),
                    step + 1,
                    sweep(&mut fb, Split::Train),
                    sweep(&mut fb, Split::Eval),
                );
            }
        }
    }
}
