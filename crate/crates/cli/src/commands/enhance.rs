use std::fs;
use std::path::Path;

use radarsr_core::bev::io::{read, write_all};
use radarsr_core::bev::back_project_with;
use radarsr_core::pointcloud::io::write_text;
use radarsr_core::score_model::{read_checkpoint, DenoiserModel, OracleModel, ScoreModel};
use radarsr_core::sde::{enhance as run_enhance, EnhanceOptions, ScheduleConfig};
use radarsr_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{create_dir, manifest_to_csv, read_manifest, require_dir, require_file, write_file, Context, MANIFEST};
use crate::error::CliError;

/// Fails when a `schedule.toml` written by `train` sits next to the
/// checkpoint and disagrees with the active schedule.
fn check_schedule(checkpoint: &Path, active: &ScheduleConfig) -> Result<(), CliError> {
    let path = checkpoint.with_file_name("schedule.toml");
    if !path.is_file() {
        return Ok(());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::from(e).at(&path))?;
    let trained = ScheduleConfig::from_toml(&text).map_err(|e| e.at(&path))?;
    if &trained != active {
        return Err(Error::CheckpointMismatch(format!(
            "{} was trained with a different noise schedule ({})",
            checkpoint.display(),
            path.display()
        ))
        .into());
    }
    Ok(())
}

pub fn enhance(ctx: &Context, input: &Path, checkpoint: Option<&Path>, out: &Path) -> Result<(), CliError> {
    require_dir(input, "input")?;
    let entries = read_manifest(input)?;
    let sched = ctx.cfg.schedule.build()?;
    let model: Option<DenoiserModel> = match checkpoint {
        Some(path) => {
            require_file(path, "checkpoint")?;
            check_schedule(path, &ctx.cfg.schedule)?;
            Some(read_checkpoint(path)?.with_schedule(&sched))
        }
        None => None,
    };
    let opts = EnhanceOptions {
        stochastic: ctx.cfg.enhance.stochastic,
    };
    create_dir(out)?;
    ctx.par_map(&entries, |k, e| {
        let radar = read(&input.join("radar").join(format!("{}.pgm", e.name)))?;
        let oracle;
        let score: &(dyn ScoreModel + Sync) = match &model {
            Some(m) => m,
            None => {
                let lidar = read(&input.join("lidar").join(format!("{}.pgm", e.name)))?;
                oracle = OracleModel::new(lidar.pixels, sched.clone());
                &oracle
            }
        };
        // One independent stream per frame keeps results identical for
        // any --jobs value.
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
        rng.set_stream(k as u64);
        let img = run_enhance(&radar, score, &sched, &mut rng, opts)?;
        write_all(&out.join(&e.name), &img)?;
        let cloud = back_project_with(&img, ctx.cfg.enhance.emit_threshold);
        write_text(&out.join(format!("{}.xyz", e.name)), &cloud)
    })?;
    write_file(&out.join(MANIFEST), manifest_to_csv(&entries))?;
    let source = if model.is_some() { "model" } else { "oracle" };
    println!("enhanced {} frame(s) with the {source} score", entries.len());
    Ok(())
}
