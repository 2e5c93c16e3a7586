use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;

pub const SCHEMA: &str = "fpplab/1";

/// Writes artifacts for one run into its output directory. JSON reports
/// are wrapped in an envelope carrying the schema, command, seed and
/// config hash; CSV files carry the same as a leading `#` line.
pub struct Emitter {
    pub dir: PathBuf,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    schema: &'static str,
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    result: &'a T,
}

impl Emitter {
    pub fn new(dir: PathBuf, command: &str, config_hash: String, seed: u64) -> Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, command: command.to_string(), config_hash, seed })
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, result: &T) -> Result<PathBuf> {
        let env = Envelope {
            schema: SCHEMA,
            command: &self.command,
            config_hash: &self.config_hash,
            seed: self.seed,
            result,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn header(&self) -> String {
        format!("# schema={SCHEMA} command={} config_hash={} seed={}\n", self.command, self.config_hash, self.seed)
    }

    /// `body` is a complete CSV text, header row included.
    pub fn csv_text(&self, name: &str, body: &str) -> Result<PathBuf> {
        self.write(name, &(self.header() + body))
    }

    pub fn csv(&self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut body = columns.join(",");
        body.push('\n');
        for row in rows {
            body.push_str(&row.join(","));
            body.push('\n');
        }
        self.csv_text(name, &body)
    }

    /// Raw text, for files whose format belongs to another module.
    pub fn raw(&self, name: &str, text: &str) -> Result<PathBuf> {
        self.write(name, text)
    }
}
