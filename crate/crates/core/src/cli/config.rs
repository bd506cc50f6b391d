use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Flat `key = value` settings; `#` starts a comment line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{origin}:{}: expected `key = value`",
                    i + 1
                )));
            };
            let key = k.trim().replace('_', "-");
            if key.is_empty() {
                return Err(Error::Config(format!("{origin}:{}: empty key", i + 1)));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!(
                    "{origin}:{}: duplicate key {key}",
                    i + 1
                )));
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    /// Rejects keys the command does not understand.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }

    /// Flag value if given, else the file's value, else `default`.
    pub fn pick<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick_opt(key, flag)?.unwrap_or(default))
    }

    pub fn pick_opt<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| Error::Config(format!("config key {key}: {e}")))
            })
            .transpose()
    }
}

/// Resolved settings in a stable order, written as a loadable config file.
#[derive(Clone, Debug, Default)]
pub struct Echo(Vec<(String, String)>);

impl Echo {
    pub fn push(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let c = ConfigFile::parse("# run\nlearning_rate = 0.01\nepochs=3\n", "t").unwrap();
        assert_eq!(c.pick("learning-rate", None, 1e-5).unwrap(), 0.01);
        assert_eq!(c.pick("epochs", Some(7usize), 20).unwrap(), 7);
        assert_eq!(c.pick("patience", None, 5usize).unwrap(), 5);
    }

    #[test]
    fn rejects_malformed_lines_and_unknown_keys() {
        assert!(ConfigFile::parse("epochs 3", "t").is_err());
        assert!(ConfigFile::parse("a=1\na=2", "t").is_err());
        let c = ConfigFile::parse("colour = red", "t").unwrap();
        assert!(c.check_keys(&["epochs"]).is_err());
        assert!(ConfigFile::parse("epochs = x", "t")
            .unwrap()
            .pick::<usize>("epochs", None, 1)
            .is_err());
    }

    #[test]
    fn echo_parses_back() {
        let mut e = Echo::default();
        e.push("seed", 3).push("thresholds", "30,50");
        let c = ConfigFile::parse(&e.render(), "echo").unwrap();
        assert_eq!(c.pick("seed", None, 0u64).unwrap(), 3);
    }
}
