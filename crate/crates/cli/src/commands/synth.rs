use std::path::Path;

use radarsr_core::pointcloud::io::{write_poses, write_text};
use radarsr_core::synth::{generate_trajectory, SceneSpec};

use crate::common::{create_dir, write_file, Context};
use crate::error::CliError;

/// Writes `out/seq_NNNN/{lidar,radar}/NNNNNN.xyz`, `poses.txt`,
/// `layout.toml` and `spec.toml` for every sequence.
pub fn synth(ctx: &Context, out: &Path) -> Result<(), CliError> {
    let cfg = &ctx.cfg.synth;
    let seqs: Vec<usize> = (0..cfg.sequences).collect();
    create_dir(out)?;
    ctx.par_map(&seqs, |_, &k| {
        let spec = SceneSpec {
            seed: cfg.scene.seed.wrapping_add(k as u64),
            ..cfg.scene.clone()
        };
        let traj = generate_trajectory(&spec, cfg.frames, cfg.step)?;
        let dir = out.join(format!("seq_{k:04}"));
        let (lidar_dir, radar_dir) = (dir.join("lidar"), dir.join("radar"));
        create_dir(&lidar_dir)?;
        create_dir(&radar_dir)?;
        for (i, f) in traj.frames.iter().enumerate() {
            write_text(&lidar_dir.join(format!("{i:06}.xyz")), &f.lidar)?;
            write_text(&radar_dir.join(format!("{i:06}.xyz")), &f.radar)?;
        }
        let poses: Vec<_> = traj.frames.iter().map(|f| f.pose).collect();
        write_poses(&dir.join("poses.txt"), &poses)?;
        write_file(&dir.join("layout.toml"), traj.layout.to_toml())?;
        write_file(&dir.join("spec.toml"), spec.to_toml())
    })?;
    println!("wrote {} sequence(s) of {} frame(s) to {}", cfg.sequences, cfg.frames, out.display());
    Ok(())
}
