//! The preference loss on a diptych pair versus a background-varied pair,
//! and where each pair's gradient difference lives.
//!
//!     cargo run --release --example dpo_cancellation

use di3po::denoiser::{Denoiser, DenoiserConfig};
use di3po::diffusion::{LatentImage, NoiseSchedule};
use di3po::dpo::{background_cancellation_diagnostic, dpo_grad, dpo_loss, DpoConfig};
use di3po::experiments::{gen_synthetic_pair, PairKind, SyntheticTask, TaskConfig};
use di3po::seed;
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = SyntheticTask::new(TaskConfig::default())?;
    let schedule = NoiseSchedule::toy_default();
    let cfg = DenoiserConfig::small(16, 16, 8, schedule.num_timesteps, task.num_glyphs());
    let mut model = Denoiser::init(cfg, 1);
    let mut rng = seed::rng_from(1, &[]);
    for v in model.params_mut() {
        *v += rng.random_range(-0.2..0.2);
    }
    let reference = Denoiser::init(cfg, 2);
    let dpo = DpoConfig::new(5.0, reference.clone());

    // At the reference the loss is ln 2 whatever the pair.
    let pair = gen_synthetic_pair(&task, 7, 1, PairKind::Diptych)?;
    let eps = LatentImage::gaussian(16, 16, &mut rng);
    let at_ref = dpo_loss(&reference, &DpoConfig::new(5.0, reference.clone()), &pair, 40, &eps, &schedule)?;
    println!("loss at model = reference: {at_ref:.15} (ln 2 = {:.15})", std::f64::consts::LN_2);

    println!("{:<18} {:>8} {:>8} {:>12} {:>12} {:>12}", "pair", "t", "loss", "far bg", "bg frac", "target frac");
    for kind in [PairKind::Diptych, PairKind::BackgroundVaried] {
        for t in [10, 40, 80] {
            let pair = gen_synthetic_pair(&task, 7, 1, kind)?;
            let g = dpo_grad(&model, &dpo, &pair, t, &eps, &schedule)?;
            let d = background_cancellation_diagnostic(&model, &dpo, &pair, t, &eps, &schedule, 3)?;
            println!(
                "{:<18} {:>8} {:>8.4} {:>12.3e} {:>12.4} {:>12.4}",
                format!("{kind:?}"),
                t,
                g.loss,
                d.far_bg_residual,
                d.bg_fraction,
                d.target_fraction
            );
        }
    }
    Ok(())
}
