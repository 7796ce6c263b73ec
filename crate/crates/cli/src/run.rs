use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;

pub const BUILD_ID: &str = concat!("mdiff ", env!("CARGO_PKG_VERSION"));

/// A fresh output directory `out_dir/<command>-<timestamp>[-n]`.
pub struct RunDir {
    path: PathBuf,
    command: &'static str,
    inputs: Map<String, Value>,
    extra: Map<String, Value>,
}

impl RunDir {
    pub fn create(cfg: &RunConfig, command: &'static str) -> anyhow::Result<Self> {
        let parent = PathBuf::from(cfg.raw("out_dir"));
        fs::create_dir_all(&parent).with_context(|| format!("cannot create {}", parent.display()))?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let base = format!("{command}-{stamp}");
        for n in 0u32.. {
            let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
            let path = parent.join(name);
            match fs::create_dir(&path) {
                Ok(()) => {
                    return Ok(Self {
                        path,
                        command,
                        inputs: Map::new(),
                        extra: Map::new(),
                    })
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e).with_context(|| format!("cannot create {}", path.display())),
            }
        }
        unreachable!("run directory suffixes exhausted")
    }

    pub fn join(&self, rel: &str) -> PathBuf {
        self.path.join(rel)
    }

    /// Records an input file with its CRC32 in the manifest.
    pub fn add_input(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.insert(
            role.to_string(),
            json!({
                "path": path.display().to_string(),
                "crc32": format!("{:08x}", crc32fast::hash(&bytes)),
            }),
        );
        Ok(())
    }

    /// Adds a top-level manifest field.
    pub fn note(&mut self, key: &str, value: Value) {
        self.extra.insert(key.to_string(), value);
    }

    pub fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let path = self.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    /// Writes `run.json` with the resolved config, seed, build id and
    /// inputs, then prints the run directory on stdout.
    pub fn finish(&self, cfg: &RunConfig, seed: Option<u64>) -> anyhow::Result<()> {
        let mut manifest = json!({
            "command": self.command,
            "build": BUILD_ID,
            "seed": seed,
            "config": cfg.values(),
            "inputs": self.inputs,
        });
        manifest.as_object_mut().expect("object").extend(self.extra.clone());
        self.write("run.json", serde_json::to_string_pretty(&manifest)? + "\n")?;
        println!("{}", self.path.display());
        Ok(())
    }
}

/// Accepts either a file or a directory holding `default_name`.
pub fn locate(path: &Path, default_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    }
}
