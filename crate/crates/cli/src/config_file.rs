//! Flat `key = value` config files. Keys are long flag names without the
//! leading dashes; `#` starts a comment.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn parse(text: &str, source: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value", source.display(), n + 1);
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("{}:{}: invalid key '{key}'", source.display(), n + 1);
        }
        pairs.push((key, value.trim().to_owned()));
    }
    Ok(pairs)
}

/// Finds `--config PATH` (or `--config=PATH`) after the subcommand, strips it,
/// and splices the file's settings in as flags directly after the subcommand
/// name so that explicit flags, which come later, take precedence.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            let value = it.next().context("--config needs a path")?;
            path = Some(value);
        } else if let Some(v) = s.strip_prefix("--config=") {
            path = Some(OsString::from(v));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut injected = Vec::new();
    for (key, value) in parse(&text, path)? {
        injected.push(OsString::from(format!("--{key}")));
        if !matches!(value.as_str(), "" | "true") {
            injected.push(OsString::from(value));
        }
    }
    // Insert after the first positional (the subcommand name).
    let at = rest
        .iter()
        .enumerate()
        .skip(1)
        .scan(false, |skip_next, (i, a)| {
            let s = a.to_string_lossy();
            let here = if *skip_next {
                *skip_next = false;
                None
            } else if s == "--threads" {
                *skip_next = true;
                None
            } else if s.starts_with('-') {
                None
            } else {
                Some(i)
            };
            Some(here)
        })
        .flatten()
        .next()
        .map_or(rest.len(), |i| i + 1);
    rest.splice(at..at, injected);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_comments_and_underscores() {
        let p = parse("# run\nneg_k = 3\n\nlr=0.01 # tuned\n", Path::new("c")).unwrap();
        assert_eq!(
            p,
            vec![("neg-k".into(), "3".into()), ("lr".into(), "0.01".into())]
        );
        assert!(parse("oops\n", Path::new("c")).is_err());
    }

    #[test]
    fn file_values_precede_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "lr = 0.5\nepochs=3\n").unwrap();
        let out = expand(os(&[
            "grcl",
            "--threads",
            "2",
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--lr",
            "0.1",
        ]))
        .unwrap();
        let got: Vec<String> = out
            .iter()
            .map(|s| s.to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            got,
            vec![
                "grcl",
                "--threads",
                "2",
                "train",
                "--lr",
                "0.5",
                "--epochs",
                "3",
                "--lr",
                "0.1"
            ]
        );
    }
}
