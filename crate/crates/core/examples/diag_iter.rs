//! Scratch diagnostic: how many outer iterations the default identity run
//! needs. One warm start, then examinations after 150 and 300 iterations.

use std::time::Instant;

use anonyvid::data::{generate_dataset, Split, SyntheticSpec};
use anonyvid::eval::{
    default_examination, eval_utility, materialize_degraded, run_attacker_examination,
    AttackerConfig,
};
use anonyvid::trainer::{TrainState, TrainingConfig};

fn main() {
    let t0 = Instant::now();
    let spec = SyntheticSpec::default();
    let ds = generate_dataset(&spec, 42).unwrap();
    let cfg = TrainingConfig {
        seed: 11,
        iterations: 150,
        ..TrainingConfig::identity_default()
    };
    let mut state = TrainState::new(&ds, cfg, None).unwrap();
    eprintln!("[{:>6.1}s] warm start done", t0.elapsed().as_secs_f64());

    for leg in 0..2 {
        state.train(&ds).unwrap();
        let it = state.iteration;
        let a_t = eval_utility(Some(&mut state.fd), &mut state.ft, &ds, Split::Eval, 16);
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
            "[{:>6.1}s] leg {leg} (it {it}): A_T = {a_t:.3}, A_b^N = {:.3} (chance {:.3})",
            t0.elapsed().as_secs_f64(),
            rep.a_b_n,
            rep.chance
        );
    }
}
