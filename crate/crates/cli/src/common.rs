use std::fs;
use std::path::{Path, PathBuf};

use radarsr_core::pipeline::PipelineConfig;
use radarsr_core::{Error, Result};
use rayon::prelude::*;

use crate::error::{invalid, CliError};

pub struct Context {
    pub cfg: PipelineConfig,
    pool: rayon::ThreadPool,
}

impl Context {
    pub fn load(config: Option<&Path>, seed: Option<u64>, jobs: usize) -> Result<Self, CliError> {
        if jobs == 0 {
            return Err(invalid("--jobs must be at least 1"));
        }
        let mut cfg = match config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                PipelineConfig::from_toml(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.propagate_seed();
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| invalid(format!("thread pool: {e}")))?;
        Ok(Self { cfg, pool })
    }

    /// Maps `f` over `items` on the worker pool, keeping input order.
    pub fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(usize, &T) -> Result<R> + Sync) -> Result<Vec<R>> {
        self.pool
            .install(|| items.par_iter().enumerate().map(|(k, t)| f(k, t)).collect())
    }
}

pub fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} is not a directory", path.display())))
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} does not exist", path.display())))
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::from(e).at(path))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::from(e).at(path))
}

/// Point-cloud files (`.xyz`, `.txt`, `.pcb`) in `dir`, sorted by name.
pub fn list_clouds(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::from(e).at(dir))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::from(e).at(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str());
        if path.is_file() && matches!(ext, Some("xyz" | "txt" | "pcb")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// One preprocessed frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub sequence: String,
    pub frame: usize,
}

pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "name,sequence,frame";

pub fn manifest_to_csv(entries: &[Entry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        s.push_str(&format!("{},{},{}\n", e.name, e.sequence, e.frame));
    }
    s
}

pub fn read_manifest(dir: &Path) -> Result<Vec<Entry>, CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(invalid(format!("{}: missing header", path.display())));
    }
    let mut entries = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || invalid(format!("{}: malformed line {}", path.display(), n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad());
        }
        entries.push(Entry {
            name: f[0].to_string(),
            sequence: f[1].to_string(),
            frame: f[2].parse().map_err(|_| bad())?,
        });
    }
    if entries.is_empty() {
        return Err(invalid(format!("{} lists no frames", path.display())));
    }
    Ok(entries)
}
