//! Scratch diagnostic for the attribute-mode path: raw probe learnability,
//! warm start, one adversarial run vs its γ=0 control, and the C-MAP gap.

use std::time::Instant;

use anonyvid::data::{generate_dataset, SyntheticSpec};
use anonyvid::eval::{
    default_examination, materialize_degraded, run_attacker_examination, AttackerConfig,
};
use anonyvid::trainer::{TrainState, TrainingConfig};

fn main() {
    let t0 = Instant::now();
    let spec = SyntheticSpec::default_attributes();
    let ds = generate_dataset(&spec, 43).unwrap();
    eprintln!("[{:>6.1}s] attribute dataset: k_b = {}", t0.elapsed().as_secs_f64(), spec.k_b);

    for gamma in [TrainingConfig::attributes_default().gamma, 0.0] {
        let cfg = TrainingConfig {
            seed: 11,
            gamma,
            ..TrainingConfig::attributes_default()
        };
        let mut state = match TrainState::new(&ds, cfg, None) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("[{:>6.1}s] gamma={gamma}: warm start failed: {e}", t0.elapsed().as_secs_f64());
                continue;
            }
        };
        eprintln!(
            "[{:>6.1}s] gamma={gamma}: warm start ok, budget acc {:?}",
            t0.elapsed().as_secs_f64(),
            state.warm_start.stage3_accuracy
        );
        if let Err(e) = state.train(&ds) {
            eprintln!("[{:>6.1}s] gamma={gamma}: train failed: {e}", t0.elapsed().as_secs_f64());
            continue;
        }
        for rec in state.history.iter().rev().take(2) {
            eprintln!(
                "  it {:>4}: L={:.3} (T {:.3} B {:.3}) valA_T={:.3} {:?}",
                rec.iteration, rec.loss_total, rec.loss_target, rec.loss_budget,
                rec.utility_val_accuracy, rec.events
            );
        }
        let cache = materialize_degraded(Some(&mut state.fd), &ds, 16);
        let acfg = AttackerConfig::default();
        let rep = run_attacker_examination(
            &cache,
            &default_examination(acfg.n),
            &state.ensemble_spec,
            &acfg,
            &spec,
        )
        .unwrap();
        eprintln!(
            "[{:>6.1}s] gamma={gamma}: C-MAP {:.3} (chance {:.3})",
            t0.elapsed().as_secs_f64(),
            rep.a_b_n,
            rep.chance
        );
    }
}
