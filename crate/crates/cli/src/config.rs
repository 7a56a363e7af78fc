//! `key = value` run configuration files, merged into the command line so
//! explicit flags override file values.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::CommandFactory;

use crate::Cli;

/// Parses `key = value` lines; `#` starts a comment line. Keys are the long
/// flag names, with `_` accepted for `-`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            bail!("line {}: duplicate key {key}", i + 1);
        }
    }
    Ok(out)
}

fn long_names(cmd: &clap::Command) -> Vec<String> {
    cmd.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect()
}

/// Finds `--config PATH` and the subcommand position in raw arguments.
fn scan(args: &[OsString]) -> (Option<OsString>, Option<usize>) {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" || a == "--threads" {
            if a == "--config" {
                config = args.get(i + 1).cloned();
            }
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.into());
        } else if !a.starts_with('-') && sub.is_none() {
            sub = Some(i);
        }
        i += 1;
    }
    (config, sub)
}

/// Returns the argument vector with config-file entries spliced in right
/// after the subcommand name.
pub fn merge_config_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let (config, sub) = scan(&args);
    let (Some(path), Some(sub)) = (config, sub) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .with_context(|| format!("reading config {}", Path::new(&path).display()))?;
    let entries = parse_config(&text)?;

    let root = Cli::command();
    let global = long_names(&root);
    let name = args[sub].to_string_lossy().to_string();
    let Some(cmd) = root.find_subcommand(&name) else {
        return Ok(args);
    };
    let own = long_names(cmd);
    let known: Vec<String> = root.get_subcommands().flat_map(long_names).chain(global.iter().cloned()).collect();

    let mut injected = Vec::new();
    for (k, v) in &entries {
        if k == "config" {
            bail!("config files cannot name another config file");
        }
        if !known.contains(k) {
            bail!("unknown config key {k:?}");
        }
        if own.contains(k) || global.contains(k) {
            injected.push(OsString::from(format!("--{k}={v}")));
        } else {
            log::debug!("config key {k} does not apply to {name}");
        }
    }
    let mut out = args[..=sub].to_vec();
    out.extend(injected);
    out.extend(args[sub + 1..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let c = parse_config("# run\nlr_max = 0.001\n\n epochs=3 \n").unwrap();
        assert_eq!(c["lr-max"], "0.001");
        assert_eq!(c["epochs"], "3");
        assert!(parse_config("epochs 3").is_err());
        assert!(parse_config("a=1\na=2").is_err());
    }
}
