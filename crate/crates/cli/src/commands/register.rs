use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use radarsr_core::pointcloud::io::{read, read_poses};
use radarsr_core::registration::{
    initial_guesses, register_pairs, registration_recall, select_pairs, summary_table, summary_to_csv, RegistrationResult,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{create_dir, read_manifest, require_dir, require_file, write_file, Context, Entry};
use crate::error::{invalid, CliError};

/// Registers every selected frame pair of every sequence using the LiDAR,
/// raw radar and (optionally) enhanced clouds, with shared initial guesses.
pub fn register(ctx: &Context, input: &Path, enhanced: Option<&Path>, out: &Path) -> Result<(), CliError> {
    require_dir(input, "input")?;
    if let Some(dir) = enhanced {
        require_dir(dir, "enhanced directory")?;
    }
    let entries = read_manifest(input)?;
    let mut sequences: BTreeMap<String, Vec<Entry>> = BTreeMap::new();
    for e in entries {
        sequences.entry(e.sequence.clone()).or_default().push(e);
    }
    let mut methods: Vec<(&str, PathBuf)> = vec![("lidar", input.join("lidar")), ("radar", input.join("radar"))];
    if let Some(dir) = enhanced {
        methods.push(("enhanced", dir.to_path_buf()));
    }
    let mut plans = Vec::new();
    for (seq_idx, (name, frames)) in sequences.iter().enumerate() {
        let pose_path = input.join("poses").join(format!("{name}.txt"));
        require_file(&pose_path, "pose file")?;
        let all = read_poses(&pose_path)?;
        let poses = frames
            .iter()
            .map(|f| all.get(f.frame).copied())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| invalid(format!("{}: fewer poses than frames", pose_path.display())))?;
        let pairs = select_pairs(&poses, &ctx.cfg.register.pairs);
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
        rng.set_stream(seq_idx as u64);
        let r = &ctx.cfg.register;
        let inits = initial_guesses(&poses, &pairs, r.init_trans_std, r.init_yaw_std_deg, &mut rng);
        plans.push((name.clone(), frames.clone(), poses, pairs, inits));
    }

    let mut results: Vec<(String, Vec<(String, RegistrationResult)>)> =
        methods.iter().map(|(m, _)| (m.to_string(), Vec::new())).collect();
    for (seq, frames, poses, pairs, inits) in &plans {
        for (k, (_, dir)) in methods.iter().enumerate() {
            let clouds = ctx.par_map(frames, |_, f| read(&dir.join(format!("{}.xyz", f.name))))?;
            let idx: Vec<usize> = (0..pairs.len()).collect();
            let per_pair = ctx.par_map(&idx, |_, &p| {
                register_pairs(&clouds, poses, &pairs[p..=p], &inits[p..=p], &ctx.cfg.register.icp, &ctx.cfg.register.thresholds)
            })?;
            results[k].1.extend(per_pair.into_iter().flatten().map(|r| (seq.clone(), r)));
        }
    }

    create_dir(out)?;
    let mut pair_csv = String::from("sequence,source,target,distance_m\n");
    for (seq, _, poses, pairs, _) in &plans {
        for &(i, j) in pairs {
            let d = (poses[i].translation - poses[j].translation).norm();
            let _ = writeln!(pair_csv, "{seq},{j},{i},{d}");
        }
    }
    write_file(&out.join("pairs.csv"), pair_csv)?;
    let mut summary = Vec::new();
    for (method, rows) in &results {
        let mut csv = String::from("sequence,source,target,rte_m,rre_deg,success\n");
        for (seq, r) in rows {
            let _ = writeln!(csv, "{seq},{},{},{},{},{}", r.source, r.target, r.rte, r.rre, u8::from(r.success));
        }
        write_file(&out.join(format!("results_{method}.csv")), csv)?;
        let list: Vec<_> = rows.iter().map(|(_, r)| r.clone()).collect();
        if !list.is_empty() {
            summary.push((method.clone(), registration_recall(&list)?));
        }
    }
    write_file(&out.join("summary.csv"), summary_to_csv(&summary))?;
    let table = summary_table(&summary);
    write_file(&out.join("summary.txt"), &table)?;
    if summary.is_empty() {
        println!("no frame pairs satisfy the distance bounds");
    } else {
        print!("{table}");
    }
    Ok(())
}
