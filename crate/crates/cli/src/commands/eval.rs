use std::path::Path;

use radarsr_core::metrics::{to_csv, to_table, MetricReport};
use radarsr_core::pointcloud::io::read;

use crate::common::{create_dir, read_manifest, require_dir, write_file, Context};
use crate::error::CliError;

/// Compares `<input>/radar/<name>.xyz` and `<enhanced>/<name>.xyz` with
/// `<input>/lidar/<name>.xyz` for every frame.
pub fn eval(ctx: &Context, input: &Path, enhanced: Option<&Path>, out: &Path) -> Result<(), CliError> {
    require_dir(input, "input")?;
    if let Some(dir) = enhanced {
        require_dir(dir, "enhanced directory")?;
    }
    let entries = read_manifest(input)?;
    let mut methods = vec![("radar".to_string(), input.join("radar"))];
    if let Some(dir) = enhanced {
        methods.push(("enhanced".to_string(), dir.to_path_buf()));
    }
    let dims = &ctx.cfg.eval.dims;
    let per_frame = ctx.par_map(&entries, |_, e| {
        let lidar_path = input.join("lidar").join(format!("{}.xyz", e.name));
        let lidar = read(&lidar_path)?;
        let mut rows = Vec::new();
        for (method, dir) in &methods {
            let path = dir.join(format!("{}.xyz", e.name));
            let cand = read(&path)?;
            for &d in dims {
                let r = MetricReport::compute(&lidar, &cand, d).map_err(|err| {
                    let blame = if lidar.is_empty() { &lidar_path } else { &path };
                    err.at(blame)
                })?;
                rows.push((method.clone(), format!("{}/{method}", e.name), r));
            }
        }
        Ok(rows)
    })?;
    let rows: Vec<_> = per_frame.into_iter().flatten().collect();

    let mut summary = Vec::new();
    for (method, _) in &methods {
        for &d in dims {
            let reports: Vec<_> = rows.iter().filter(|(m, _, r)| m == method && r.dims == d).map(|(_, _, r)| *r).collect();
            if let Some(mean) = MetricReport::mean(&reports) {
                summary.push((method.clone(), mean));
            }
        }
    }
    let detail: Vec<_> = rows.into_iter().map(|(_, name, r)| (name, r)).collect();
    create_dir(out)?;
    write_file(&out.join("metrics.csv"), to_csv(&detail))?;
    write_file(&out.join("summary.csv"), to_csv(&summary))?;
    let table = to_table(&summary);
    write_file(&out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}
