//! `--config FILE` support: `key = value` lines become `--key=value`
//! arguments placed right after the subcommand, so anything given on the
//! command line later wins.

use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn expand_args(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let mut argv = argv;
    let path = match argv[pos].strip_prefix("--config=") {
        Some(p) => {
            let p = p.to_string();
            argv.remove(pos);
            p
        }
        None => {
            if pos + 1 >= argv.len() {
                bail!("--config needs a file");
            }
            argv.remove(pos);
            argv.remove(pos)
        }
    };
    let extra = read_config(Path::new(&path))?;
    // argv[1] is the subcommand unless --config came first.
    let sub = argv
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map(|i| i + 2)
        .unwrap_or(argv.len());
    argv.splice(sub..sub, extra);
    Ok(argv)
}

fn read_config(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("config: file not found: {}", path.display()))?;
    let mut args = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        match value {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            _ => args.push(format!("--{key}={value}")),
        }
    }
    Ok(args)
}
