use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use polyglot_probe::io::{FileDigest, Manifest};
use serde::Serialize;

use crate::config::{echo, Resolved};

/// Bookkeeping for one subcommand run: where outputs go and which files
/// the manifest must cover.
pub struct Run {
    out: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
}

impl Run {
    /// Records an input file's digest under the path as given.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = FileDigest::of(path.display().to_string(), path)
            .with_context(|| format!("reading input {}", path.display()))?;
        self.inputs.push(digest);
        Ok(())
    }

    /// Registers an output name and returns its full path.
    pub fn output(&mut self, name: impl Into<String>) -> PathBuf {
        let name = name.into();
        let path = self.out.join(&name);
        self.outputs.push(name);
        path
    }
}

/// Runs `body` inside a pool of `threads` workers (0 = one per core) and
/// writes the manifest afterwards, also when `body` fails.
pub fn execute<T, F>(subcommand: &str, resolved: &Resolved<T>, out: &Path, threads: usize, body: F) -> Result<()>
where
    T: Serialize,
    F: FnOnce(&mut Run) -> Result<()> + Send,
{
    for o in &resolved.overrides {
        tracing::warn!("override {o}");
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building thread pool")?;
    let mut run = Run {
        out: out.to_path_buf(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    let result = pool.install(|| body(&mut run));
    let outputs: Vec<String> = match &result {
        Ok(()) => run.outputs,
        Err(_) => run.outputs.into_iter().filter(|n| out.join(n).is_file()).collect(),
    };
    let manifest = Manifest {
        tool: "polyglot-probe".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: subcommand.into(),
        config: echo(&resolved.settings)?,
        overrides: resolved.overrides.clone(),
        inputs: run.inputs,
        outputs: Vec::new(),
        error: result.as_ref().err().map(|e| format!("{e:#}")),
    };
    let path = manifest.write(out, &outputs)?;
    match &result {
        Ok(()) => tracing::info!("{subcommand}: wrote {} outputs and {}", outputs.len(), path.display()),
        Err(_) => tracing::error!("{subcommand} failed; manifest at {}", path.display()),
    }
    result
}
