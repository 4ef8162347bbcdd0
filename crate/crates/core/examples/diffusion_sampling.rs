//! Pretrain a small conditional denoiser on the glyph task, then draw
//! samples with and without classifier-free guidance.
//!
//!     cargo run --release --example diffusion_sampling -- [pretrain_steps]

use di3po::diffusion::{ancestral_sample, forward_noise, Condition, LatentImage, NoiseSchedule, SamplerConfig};
use di3po::experiments::{evaluate_target_accuracy, pretrain_base, DenoiserGenerator, PretrainConfig, SyntheticTask, TaskConfig};
use di3po::seed;

fn show(img: &LatentImage) {
    let ramp = [' ', '.', ':', '+', '#'];
    for y in 0..img.height {
        let row: String = (0..img.width)
            .map(|x| ramp[(((img.get(x, y) + 1.0) / 2.0 * 4.0).round().clamp(0.0, 4.0)) as usize])
            .collect();
        println!("  |{row}|");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1500);
    let task = SyntheticTask::new(TaskConfig::default())?;
    let schedule = NoiseSchedule::toy_default();

    println!("alpha_bar at t = 1, 50, 100: {:.4} {:.4} {:.2e}", schedule.alpha_bar(1), schedule.alpha_bar(50), schedule.alpha_bar(100));
    let x0 = task.render(3, 0, true)?;
    let eps = LatentImage::gaussian(16, 16, &mut seed::rng_from(1, &[]));
    println!("clean glyph 0, then noised to t = 30:");
    show(&x0);
    show(&forward_noise(&x0, 30, &eps, &schedule)?.x_t);

    let model = pretrain_base(&task, &schedule, &PretrainConfig { steps, ..PretrainConfig::default() })?;
    for guidance in [1.0, 7.5] {
        let sampler = SamplerConfig { num_inference_steps: 50, guidance_scale: guidance };
        let img = ancestral_sample(&model, Condition::token(0), &sampler, &schedule, 11)?;
        println!("sample for glyph 0, guidance {guidance}:");
        show(&img);
        let g = DenoiserGenerator { model: &model, sampler, schedule: &schedule };
        let acc = evaluate_target_accuracy(&g, &task, 200, 5, 1)?;
        println!("  target accuracy over 200 samples: {:.3} +- {:.3}", acc.overall, acc.half_width);
    }
    Ok(())
}
