use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// JSON-lines sink that echoes each record to standard output and appends it
/// to a file.
pub struct MetricsStream {
    file: BufWriter<File>,
    echo: bool,
}

impl MetricsStream {
    pub fn append(path: &Path, echo: bool) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self {
            file: BufWriter::new(file),
            echo,
        })
    }

    pub fn emit<S: Serialize>(&mut self, record: &S) -> Result<()> {
        let line = serde_json::to_string(record)?;
        if self.echo {
            println!("{line}");
        }
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn print_json<S: Serialize>(value: &S) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}
