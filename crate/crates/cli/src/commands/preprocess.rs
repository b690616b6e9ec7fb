use std::fs;
use std::path::{Path, PathBuf};

use radarsr_core::bev::io::write_all;
use radarsr_core::pipeline::preprocess_frame;
use radarsr_core::pointcloud::io::{read, read_poses, write_poses, write_text};
use radarsr_core::pointcloud::{PointCloud, RigidTransform};
use radarsr_core::{Error, Result};

use crate::common::{create_dir, list_clouds, manifest_to_csv, require_dir, write_file, Context, Entry, MANIFEST};
use crate::error::{invalid, CliError};

struct Sequence {
    name: String,
    poses: Vec<RigidTransform>,
    lidar: Vec<PathBuf>,
    radar: Vec<PathBuf>,
}

/// `input` itself when it holds `poses.txt`, otherwise every subdirectory
/// that does, in name order.
fn discover(input: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    if input.join("poses.txt").is_file() {
        let name = input.file_name().and_then(|n| n.to_str()).unwrap_or("seq").to_string();
        return Ok(vec![(name, input.to_path_buf())]);
    }
    let mut seqs = Vec::new();
    for entry in fs::read_dir(input).map_err(|e| Error::from(e).at(input))? {
        let path = entry.map_err(|e| Error::from(e).at(input))?.path();
        if path.join("poses.txt").is_file() {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            seqs.push((name, path));
        }
    }
    seqs.sort();
    if seqs.is_empty() {
        return Err(invalid(format!("{}: no sequence with a poses.txt found", input.display())));
    }
    Ok(seqs)
}

fn load_sequence(name: String, dir: &Path) -> Result<Sequence, CliError> {
    let poses = read_poses(&dir.join("poses.txt"))?;
    let (ld, rd) = (dir.join("lidar"), dir.join("radar"));
    require_dir(&ld, "LiDAR directory")?;
    require_dir(&rd, "radar directory")?;
    let lidar = list_clouds(&ld)?;
    let radar = list_clouds(&rd)?;
    if lidar.len() != poses.len() || radar.len() != poses.len() {
        return Err(invalid(format!(
            "{}: {} poses but {} LiDAR and {} radar frames",
            dir.display(),
            poses.len(),
            lidar.len(),
            radar.len()
        )));
    }
    if poses.is_empty() {
        return Err(invalid(format!("{}: sequence has no frames", dir.display())));
    }
    Ok(Sequence { name, poses, lidar, radar })
}

pub fn preprocess(ctx: &Context, input: &Path, out: &Path) -> Result<(), CliError> {
    require_dir(input, "input")?;
    let seqs = discover(input)?
        .into_iter()
        .map(|(name, dir)| load_sequence(name, &dir))
        .collect::<Result<Vec<_>, _>>()?;

    let (lidar_out, radar_out, pose_out) = (out.join("lidar"), out.join("radar"), out.join("poses"));
    for d in [&lidar_out, &radar_out, &pose_out] {
        create_dir(d)?;
    }
    let (cfg, grid) = (&ctx.cfg.preprocess, &ctx.cfg.grid);
    let mut manifest = Vec::new();
    for seq in &seqs {
        let read_all = |files: &[PathBuf]| -> Result<Vec<PointCloud>> { ctx.par_map(files, |_, p| read(p)) };
        let lidar = read_all(&seq.lidar)?;
        let radar = read_all(&seq.radar)?;
        let frames: Vec<usize> = (0..seq.poses.len()).collect();
        let names = ctx.par_map(&frames, |_, &i| {
            let name = format!("{}_{i:06}", seq.name);
            let f = preprocess_frame(&lidar, &radar, &seq.poses, i, cfg, grid).map_err(|e| e.at(&seq.lidar[i]))?;
            write_all(&lidar_out.join(&name), &f.lidar)?;
            write_all(&radar_out.join(&name), &f.radar)?;
            write_text(&lidar_out.join(format!("{name}.xyz")), &f.lidar_cloud)?;
            write_text(&radar_out.join(format!("{name}.xyz")), &f.radar_cloud)?;
            Ok(name)
        })?;
        manifest.extend(names.into_iter().enumerate().map(|(frame, name)| Entry {
            name,
            sequence: seq.name.clone(),
            frame,
        }));
        write_poses(&pose_out.join(format!("{}.txt", seq.name)), &seq.poses)?;
    }
    write_file(&out.join(MANIFEST), manifest_to_csv(&manifest))?;
    println!("preprocessed {} frame(s) from {} sequence(s)", manifest.len(), seqs.len());
    Ok(())
}
