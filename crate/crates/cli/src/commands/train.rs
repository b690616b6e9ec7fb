use std::path::Path;

use radarsr_core::bev::io::read;
use radarsr_core::score_model::{write_checkpoint, DenoiserModel};
use radarsr_core::training::{train_from, TrainSample};

use crate::common::{create_dir, read_manifest, require_dir, write_file, Context};
use crate::error::CliError;

pub const CHECKPOINT: &str = "model.srdm";

pub fn train(ctx: &Context, input: &Path, out: &Path) -> Result<(), CliError> {
    require_dir(input, "input")?;
    let entries = read_manifest(input)?;
    let sched = ctx.cfg.schedule.build()?;
    let cfg = &ctx.cfg.train;
    let samples = ctx.par_map(&entries, |_, e| {
        let radar = read(&input.join("radar").join(format!("{}.pgm", e.name)))?;
        let lidar = read(&input.join("lidar").join(format!("{}.pgm", e.name)))?;
        TrainSample::new(radar.pixels, lidar.pixels)
    })?;
    let model = DenoiserModel::new(cfg.arch.clone(), cfg.seed)?;
    // Run the loop before creating the output directory so that a
    // diverged run leaves nothing behind.
    let result = train_from(model, &samples, &sched, cfg, |_| {})?;
    create_dir(out)?;
    write_checkpoint(&out.join(CHECKPOINT), &result.model)?;
    write_file(&out.join("loss.csv"), result.trace.to_csv())?;
    write_file(&out.join("train.toml"), cfg.to_toml())?;
    write_file(&out.join("schedule.toml"), ctx.cfg.schedule.to_toml())?;
    let window = (cfg.iterations / 10).max(1);
    if let Some((first, last)) = result.trace.smoothed_endpoints(window) {
        println!(
            "trained {} iteration(s) on {} pair(s); smoothed loss {first:.5} -> {last:.5}",
            cfg.iterations,
            samples.len()
        );
    }
    Ok(())
}
