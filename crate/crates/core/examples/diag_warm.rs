//! Scratch diagnostic: warm-start stage behavior with failure override, plus
//! how far the degradation transform drifts from reconstruction by stage 2.

use anonyvid::data::{batch_from_indices, generate_dataset, SyntheticSpec};
use anonyvid::nets::{
    warm_start_pipeline, DegradeConfig, ModelFamilySpec, UtilityConfig, WarmStartConfig,
};
use anonyvid::objectives::l1_reconstruction;

fn main() {
    let spec = SyntheticSpec::default();
    let ds = generate_dataset(&spec, 42).unwrap();
    let wcfg = WarmStartConfig {
        utility_bar: 0.85,
        budget_bar: 0.95,
        stage_fuse: 2000,
        override_failures: true,
        ..WarmStartConfig::default()
    };
    let ensemble = ModelFamilySpec::default_training(4);
    let t0 = std::time::Instant::now();
    let (mut fd, _ft, _fbs, report) = warm_start_pipeline(
        &ds,
        &DegradeConfig::default(),
        &UtilityConfig::default(),
        &ensemble,
        &wcfg,
        1,
    )
    .unwrap();
    eprintln!("[{:.1}s] report:", t0.elapsed().as_secs_f64());
    eprintln!(
        "  stage1: {} steps, recon {:.4}",
        report.stage1_steps, report.stage1_recon
    );
    eprintln!(
        "  stage2: {} steps, utility {:.4}",
        report.stage2_steps, report.stage2_accuracy
    );
    eprintln!(
        "  stage3: steps {:?}, acc {:?}",
        report.stage3_steps, report.stage3_accuracy
    );
    eprintln!("  fuse trips: {:?}", report.fuse_trips);

    // post-warm-start reconstruction error of f_d
    let idx = ds.eval_indices();
    let mut total = 0.0;
    for chunk in idx.chunks(16) {
        let batch = batch_from_indices(&ds, chunk);
        let out = fd.forward(&batch.x);
        total += l1_reconstruction(out.view().into_dyn(), batch.x.view().into_dyn()).unwrap()
            * chunk.len() as f64;
    }
    eprintln!("  post recon L1/px: {:.4}", total / idx.len() as f64);
}
