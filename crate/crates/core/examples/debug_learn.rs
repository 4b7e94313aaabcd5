//! Debug: (1) finite-difference check of the full utility-classifier + CE
//! composite; (2) loss curve of the probe on the default dataset.

use anonyvid::data::{batch_from_indices, generate_dataset, Split, SyntheticSpec};
use anonyvid::eval::eval_utility;
use anonyvid::nets::{ce_loss_and_grad, BatchStream, UtilityClassifier, UtilityConfig};
use anonyvid::nn::SgdMomentum;

fn loss_of(ft: &mut UtilityClassifier, x: &ndarray::Array4<f64>, labels: &[usize]) -> f64 {
    let probs = ft.forward(x);
    let (l, _, _) = ce_loss_and_grad(&probs, labels);
    l
}

fn main() {
    // --- composite gradient check on a tiny geometry ---
    let mut ft = UtilityClassifier::build(&UtilityConfig::default(), 3, 5, 2, 99);
    let x = ndarray::Array4::from_shape_fn((6, 3, 12, 12), |(a, b, c, d)| {
        (((a * 131 + b * 31 + c * 17 + d * 7) % 23) as f64 / 23.0) - 0.3
    });
    let labels = vec![0usize, 3, 2];
    let probs = ft.forward(&x);
    let (_, grad, _) = ce_loss_and_grad(&probs, &labels);
    ft.backward(&grad);
    let analytic: Vec<(String, Vec<f64>, Vec<usize>)> = ft
        .params()
        .iter()
        .map(|p| {
            let picks: Vec<usize> = (0..4).map(|i| (i * 37) % p.len()).collect();
            (
                p.name.clone(),
                picks.iter().map(|&i| p.grad.as_slice().unwrap()[i]).collect(),
                picks,
            )
        })
        .collect();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, grads, picks) in &analytic {
        for (&g, &i) in grads.iter().zip(picks) {
            let orig = {
                let mut v = 0.0;
                for p in ft.params_mut() {
                    if &p.name == name {
                        v = p.value.as_slice().unwrap()[i];
                        p.value.as_slice_mut().unwrap()[i] = v + eps;
                    }
                }
                v
            };
            let lp = loss_of(&mut ft, &x, &labels);
            for p in ft.params_mut() {
                if &p.name == name {
                    p.value.as_slice_mut().unwrap()[i] = orig - eps;
                }
            }
            let lm = loss_of(&mut ft, &x, &labels);
            for p in ft.params_mut() {
                if &p.name == name {
                    p.value.as_slice_mut().unwrap()[i] = orig;
                }
            }
            let fd = (lp - lm) / (2.0 * eps);
            let rel = (g - fd).abs() / fd.abs().max(g.abs()).max(1e-8);
            worst = worst.max(rel);
            if rel > 1e-4 {
                eprintln!("GRAD MISMATCH {name}[{i}]: analytic {g:.6e} fd {fd:.6e} rel {rel:.2e}");
            }
        }
    }
    eprintln!("composite gradient check worst rel err: {worst:.2e}");

    // --- probe loss curve ---
    let spec = SyntheticSpec::default();
    let ds = generate_dataset(&spec, 42).unwrap();
    let mut ft =
        UtilityClassifier::build(&UtilityConfig::default(), spec.c, spec.k_t, spec.t, 7);
    let lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    eprintln!("lr = {lr}");
    let mut opt = SgdMomentum::new(lr, 0.9);
    let mut stream = BatchStream::new(ds.train_indices(), 16, 7);
    for step in 0..800 {
        let idx = stream.next_batch();
        let batch = batch_from_indices(&ds, &idx);
        let probs = ft.forward(&batch.x);
        let (l, grad, _) = ce_loss_and_grad(&probs, &batch.utility);
        let acc = anonyvid::objectives::accuracy(&probs, &batch.utility);
        ft.backward(&grad);
        opt.step(ft.params_mut());
        if step % 40 == 0 {
            let ev = eval_utility(None, &mut ft, &ds, Split::Eval, 16);
            eprintln!("step {step:>4}: batch CE {l:.4} batch acc {acc:.3} eval acc {ev:.3}");
        }
    }
}
