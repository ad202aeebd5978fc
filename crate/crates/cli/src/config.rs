//! `key = value` configuration with defaults, file values and flag overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// A configurable key with its default and a one-line description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

/// Keys shared by every subcommand.
pub const COMMON: &[Key] = &[
    key("seed", "0", "root seed of all random substreams"),
    key("out", "", "output directory (default ntk-out/<command>)"),
    key("jobs", "1", "worker threads for independent cells"),
    key("plot_data", "false", "also write (x, y) pairs for log-log plots"),
];

/// A fully resolved parameter set for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    command: &'static str,
    keys: Vec<Key>,
    values: BTreeMap<&'static str, String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`, got `{raw}`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Params {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(
        command: &'static str,
        specific: &[Key],
        file: Option<&Path>,
        flags: &[(&str, Option<String>)],
    ) -> Result<Self, CliError> {
        let keys: Vec<Key> = specific.iter().chain(COMMON).copied().collect();
        let mut values: BTreeMap<&'static str, String> =
            keys.iter().map(|k| (k.name, k.default.to_string())).collect();
        let lookup = |name: &str| -> Result<&'static str, CliError> {
            keys.iter()
                .find(|k| k.name == name)
                .map(|k| k.name)
                .ok_or_else(|| CliError::Usage(format!("unknown key `{name}` for `{command}`")))
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config(&text)? {
                if k == "command" {
                    if v != command {
                        return Err(CliError::Usage(format!("config is for `{v}`, not `{command}`")));
                    }
                    continue;
                }
                values.insert(lookup(&k)?, v);
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(lookup(k)?, v.clone());
            }
        }
        if values["out"].is_empty() {
            values.insert("out", format!("ntk-out/{command}"));
        }
        Ok(Params { command, keys, values })
    }

    pub fn str(&self, name: &str) -> &str {
        self.values.get(name).map(String::as_str).unwrap_or_else(|| panic!("key `{name}` not declared"))
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError> {
        let raw = self.str(name);
        raw.parse().map_err(|_| CliError::Usage(format!("invalid value `{raw}` for `{name}`")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>, CliError> {
        let raw = self.str(name);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| s.trim().parse().map_err(|_| CliError::Usage(format!("invalid entry `{s}` in `{name}`"))))
            .collect()
    }

    /// `None` for an empty value.
    pub fn optional<T: FromStr>(&self, name: &str) -> Result<Option<T>, CliError> {
        if self.str(name).is_empty() {
            Ok(None)
        } else {
            self.get(name).map(Some)
        }
    }

    pub fn flag(&self, name: &str) -> Result<bool, CliError> {
        self.get(name)
    }

    /// The resolved configuration in the file format it was read from.
    pub fn render(&self) -> String {
        let mut s = format!("# resolved configuration of `ntk-spectra {}`\ncommand = {}\n", self.command, self.command);
        for k in &self.keys {
            let _ = writeln!(s, "{} = {}", k.name, self.values[k.name]);
        }
        s
    }

    /// Key reference for `--help` output.
    pub fn describe(keys: &[Key]) -> String {
        let mut s = String::from("Config keys (file `key = value`, overridden by flags):\n");
        for k in keys.iter().chain(COMMON) {
            let _ = writeln!(s, "  {:<12} {} [default: {}]", k.name, k.help, k.default);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: &[Key] = &[key("n", "10", "sample size"), key("d", "3,4", "dimensions")];

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "# comment\nn = 20\nd = 5 # inline\n").unwrap();
        let p = Params::resolve("edr", KEYS, Some(&path), &[("n", Some("30".into())), ("d", None)]).unwrap();
        assert_eq!(p.get::<usize>("n").unwrap(), 30);
        assert_eq!(p.list::<usize>("d").unwrap(), vec![5]);
        assert_eq!(p.str("out"), "ntk-out/edr");
    }

    #[test]
    fn rendered_config_round_trips() {
        let p = Params::resolve("edr", KEYS, None, &[("n", Some("7".into()))]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.txt");
        std::fs::write(&path, p.render()).unwrap();
        assert_eq!(Params::resolve("edr", KEYS, Some(&path), &[]).unwrap(), p);
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "bogus = 1\n").unwrap();
        assert!(matches!(Params::resolve("edr", KEYS, Some(&path), &[]), Err(CliError::Usage(_))));
        std::fs::write(&path, "no equals sign\n").unwrap();
        assert!(matches!(Params::resolve("edr", KEYS, Some(&path), &[]), Err(CliError::Usage(_))));
        std::fs::write(&path, "command = flow\n").unwrap();
        assert!(matches!(Params::resolve("edr", KEYS, Some(&path), &[]), Err(CliError::Usage(_))));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let p = Params::resolve("edr", KEYS, None, &[("n", Some("ten".into()))]).unwrap();
        assert!(matches!(p.get::<usize>("n"), Err(CliError::Usage(_))));
    }
}
