//! `--config FILE`: `key = value` lines that stand in for flags.
//!
//! Keys are flag names without the leading dashes (`_` and `-` are the same).
//! A flag given on the command line wins over the file. `true` turns a switch
//! on, `false` leaves it off. Blank lines and `#` comments are ignored.

use std::fs;
use std::path::Path;

use crate::CliError;

pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().trim_start_matches('-').replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v);
        out.push((key, v.to_owned()));
    }
    Ok(out)
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_owned());
        }
    }
    None
}

fn given(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    let prefix = format!("{flag}=");
    args.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

/// Appends flags from the config file named by `--config`, if any.
pub fn expand(mut args: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(&path)).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
    for (key, value) in parse(&text)? {
        if given(&args, &key) {
            continue;
        }
        match value.as_str() {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            _ => {
                args.push(format!("--{key}"));
                args.push(value);
            }
        }
    }
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn parses_pairs_and_comments() {
        let kv = parse("# c\norder = 3\n\nalpha=0.5\nmetrics = \"PPL_50,Mem 5\"\n--lowercase = true\n").unwrap();
        assert_eq!(
            kv,
            vec![
                ("order".into(), "3".into()),
                ("alpha".into(), "0.5".into()),
                ("metrics".into(), "PPL_50,Mem 5".into()),
                ("lowercase".into(), "true".into()),
            ]
        );
        assert!(parse("order 3").is_err());
    }

    #[test]
    fn command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        fs::write(&p, "order = 3\nalpha = 0.5\nexposure_multiplier = 2\nlenient = true\nlowercase = false\n").unwrap();
        let args = argv(&format!("contamkit train --config {} --order 4", p.display()));
        let out = expand(args.clone()).unwrap();
        assert_eq!(&out[..args.len()], &args[..]);
        assert_eq!(
            &out[args.len()..],
            &argv("--alpha 0.5 --exposure-multiplier 2 --lenient")[..]
        );
    }

    #[test]
    fn no_config_is_identity() {
        let args = argv("contamkit auc --scores s.jsonl --out o");
        assert_eq!(expand(args.clone()).unwrap(), args);
    }
}
