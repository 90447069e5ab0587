use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Fully resolved settings of one invocation, written into every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub n: Option<usize>,
    pub n_range: Option<(usize, usize)>,
    pub samples: Option<usize>,
    pub seed: u64,
    pub eps: f64,
    pub max_iter: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub exact: bool,
    /// Verb-specific settings, e.g. the scheme list or the tester kind.
    pub options: serde_json::Map<String, Value>,
}

impl RunConfig {
    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.options.insert(key.to_string(), serde_json::to_value(value).expect("serializable option"));
        self
    }
}

/// A tabular artifact: metadata lines, a header and rows of cells.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

/// Writes the artifact to `--out` or stdout, embedding the config. The
/// table is only built for CSV output.
pub fn emit(cfg: &RunConfig, body: Value, table: impl FnOnce() -> Table) -> anyhow::Result<()> {
    let text = match cfg.format {
        Format::Json => serde_json::to_string_pretty(&json!({ "config": cfg, "result": body }))? + "\n",
        Format::Csv => render_csv(cfg, &table())?,
    };
    match &cfg.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn render_csv(cfg: &RunConfig, t: &Table) -> anyhow::Result<String> {
    let mut s = format!("# config: {}\n", serde_json::to_string(cfg)?);
    for note in &t.notes {
        s.push_str(&format!("# {note}\n"));
    }
    s.push_str(&t.header.join(","));
    s.push('\n');
    for row in &t.rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn fixed4(x: f64) -> String {
    format!("{x:.4}")
}
