//! Scratch pilot: checks raw separability, the adversarial run, attacker
//! examinations, and the downsampling baseline end to end, printing timings.

use std::time::Instant;

use anonyvid::data::{downsample_clip, generate_dataset, map_dataset, Split, SyntheticSpec};
use anonyvid::eval::{
    default_examination, eval_utility, materialize_degraded, run_attacker_examination,
    AttackerConfig,
};
use anonyvid::nets::{ModelFamilySpec, UtilityClassifier, UtilityConfig};
use anonyvid::trainer::{TrainState, TrainingConfig};

fn train_plain_utility(ds: &anonyvid::data::DualLabeledDataset, seed: u64) -> UtilityClassifier {
    use anonyvid::data::batch_from_indices;
    use anonyvid::nets::{ce_loss_and_grad, BatchStream};
    use anonyvid::nn::SgdMomentum;
    let spec = &ds.generator_spec;
    let mut ft = UtilityClassifier::build(&UtilityConfig::default(), spec.c, spec.k_t, spec.t, seed);
    let mut opt = SgdMomentum::new(1e-2, 0.9);
    let mut stream = BatchStream::new(ds.train_indices(), 16, seed);
    let mut best = 0.0f64;
    for step in 0..1500 {
        let idx = stream.next_batch();
        let batch = batch_from_indices(ds, &idx);
        let probs = ft.forward(&batch.x);
        let (_, grad, _) = ce_loss_and_grad(&probs, &batch.utility);
        ft.backward(&grad);
        opt.step(ft.params_mut());
        if step % 50 == 49 {
            let acc = eval_utility(None, &mut ft, ds, Split::Eval, 16);
            best = best.max(acc);
            if acc >= 0.97 {
                break;
            }
        }
    }
    ft
}

fn main() {
    let t0 = Instant::now();
    let spec = SyntheticSpec::default();
    let ds = generate_dataset(&spec, 42).unwrap();
    eprintln!("[{:>6.1}s] dataset generated", t0.elapsed().as_secs_f64());

    // raw separability probes
    let mut ft_raw = train_plain_utility(&ds, 7);
    let raw_at = eval_utility(None, &mut ft_raw, &ds, Split::Eval, 16);
    eprintln!("[{:>6.1}s] raw utility probe A_T = {raw_at:.3}", t0.elapsed().as_secs_f64());

    let raw_cache = materialize_degraded(None, &ds, 16);
    let exam1 = ModelFamilySpec {
        entries: default_examination(2).entries,
    };
    let acfg = AttackerConfig {
        n: 2,
        ..AttackerConfig::default()
    };
    let rep = run_attacker_examination(
        &raw_cache,
        &exam1,
        &ModelFamilySpec::default_training(4),
        &acfg,
        &spec,
    )
    .unwrap();
    eprintln!(
        "[{:>6.1}s] raw privacy probe A_b = {:.3} (chance {:.3})",
        t0.elapsed().as_secs_f64(),
        rep.a_b_n,
        rep.chance
    );

    // adversarial run
    let cfg = TrainingConfig {
        seed: 1,
        ..TrainingConfig::identity_default()
    };
    let mut state = TrainState::new(&ds, cfg, None).unwrap();
    eprintln!(
        "[{:>6.1}s] warm start done: recon {:.4} ({} steps), utility {:.3} ({} steps), budget {:?}",
        t0.elapsed().as_secs_f64(),
        state.warm_start.stage1_recon,
        state.warm_start.stage1_steps,
        state.warm_start.stage2_accuracy,
        state.warm_start.stage2_steps,
        state.warm_start.stage3_accuracy,
    );
    state.train(&ds).unwrap();
    eprintln!("[{:>6.1}s] adversarial training done", t0.elapsed().as_secs_f64());
    for rec in state.history.iter().rev().take(3) {
        eprintln!(
            "  it {:>4}: L={:.3} (T {:.3} B {:.3} R {:.3}) valA_T={:.3} budget {:?} {:?}",
            rec.iteration,
            rec.loss_total,
            rec.loss_target,
            rec.loss_budget,
            rec.loss_recon,
            rec.utility_val_accuracy,
            rec.budget_window_accuracy,
            rec.events
        );
    }
    let adv_at = eval_utility(Some(&mut state.fd), &mut state.ft, &ds, Split::Eval, 16);
    eprintln!("[{:>6.1}s] adversarial A_T = {adv_at:.3}", t0.elapsed().as_secs_f64());

    let cache = materialize_degraded(Some(&mut state.fd), &ds, 16);
    let exam = default_examination(10);
    let acfg = AttackerConfig::default();
    let rep = run_attacker_examination(&cache, &exam, &state.ensemble_spec, &acfg, &spec).unwrap();
    eprintln!(
        "[{:>6.1}s] adversarial A_b^N = {:.3} (chance {:.3})",
        t0.elapsed().as_secs_f64(),
        rep.a_b_n,
        rep.chance
    );
    for a in &rep.attackers {
        eprintln!(
            "   attacker {:>8} w={:.2} {:?}: metric {:.3} ({} steps, {} pre)",
            a.spec.family, a.spec.width, a.spec.init, a.metric, a.steps, a.pretrain_steps
        );
    }

    // downsampling baseline
    for s in [2u32, 4, 8] {
        let dds = map_dataset(&ds, |c| downsample_clip(c, s as usize)).unwrap();
        let mut ft = train_plain_utility(&dds, 31 + s as u64);
        let at = eval_utility(None, &mut ft, &dds, Split::Eval, 16);
        let cache = materialize_degraded(None, &dds, 16);
        let exam = ModelFamilySpec {
            entries: default_examination(3).entries,
        };
        let acfg = AttackerConfig {
            n: 3,
            ..AttackerConfig::default()
        };
        let rep =
            run_attacker_examination(&cache, &exam, &ModelFamilySpec::default_training(4), &acfg, &spec)
                .unwrap();
        eprintln!(
            "[{:>6.1}s] downsample s={s}: A_T = {at:.3}, A_b = {:.3}",
            t0.elapsed().as_secs_f64(),
            rep.a_b_n
        );
    }
}
