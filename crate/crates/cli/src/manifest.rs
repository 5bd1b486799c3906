use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nepgpt::checksum::checksum;
use nepgpt::error::Error;
use nepgpt::trainer::RunConfig;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// What a stage was asked to do, recorded before it starts.
#[derive(Debug, Clone)]
pub struct RunManifest {
    subcommand: String,
    settings: Vec<(String, String)>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            settings: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
        }
    }

    pub fn setting(mut self, key: &str, value: impl ToString) -> Self {
        self.settings.push((key.to_string(), value.to_string()));
        self
    }

    /// Every key of a run config.
    pub fn config(mut self, cfg: &RunConfig) -> Self {
        for line in cfg.to_text().lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                self = self.setting(k, v);
            }
        }
        self
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    pub fn output(mut self, p: &Path) -> Self {
        self.outputs.push(p.to_path_buf());
        self
    }

    /// FNV-1a over the resolved settings, one `key = value` line each.
    pub fn config_hash(&self) -> u64 {
        let mut text = String::new();
        for (k, v) in &self.settings {
            let _ = writeln!(text, "{k} = {v}");
        }
        checksum(text.as_bytes())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "subcommand = {}", self.subcommand);
        let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
        match self.seed {
            Some(seed) => {
                let _ = writeln!(s, "seed = {seed}");
            }
            None => s.push_str("seed = -\n"),
        }
        let _ = writeln!(s, "config_hash = {:016x}", self.config_hash());
        for p in &self.inputs {
            let _ = writeln!(s, "input = {}", p.display());
        }
        for p in &self.outputs {
            let _ = writeln!(s, "output = {}", p.display());
        }
        for (k, v) in &self.settings {
            let _ = writeln!(s, "config.{k} = {v}");
        }
        s
    }

    fn write_to(&self, path: &Path) -> anyhow::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        fs::write(path, self.render())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(())
    }

    /// `<file>.manifest.txt` next to a single output file.
    pub fn write_beside(&self, output: &Path) -> anyhow::Result<()> {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".");
        name.push(MANIFEST_NAME);
        self.write_to(&output.with_file_name(name))
    }

    /// `manifest.txt` inside an output directory.
    pub fn write_into(&self, dir: &Path) -> anyhow::Result<()> {
        self.write_to(&dir.join(MANIFEST_NAME))
    }
}
