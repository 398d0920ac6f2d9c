//! Config-file merging and the resolved-config echo.
//!
//! Every subcommand accepts `--config file` holding flat `key=value` lines
//! whose keys are the long flag names. Flags override file entries, file
//! entries override defaults, and whatever won is echoed verbatim into the
//! run directory as `config.kv`, so a run can be reproduced from its output
//! alone.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use agglearn::kv;
use agglearn::{Error, Result};

pub struct Resolver {
    command: String,
    file: BTreeMap<String, String>,
    echo: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(command: &str, config_path: Option<&Path>) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = config_path {
            let text = fs::read_to_string(path)?;
            for (key, value) in kv::parse_kv(&text)? {
                if file.insert(key.clone(), value).is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "config file sets `{key}` twice"
                    )));
                }
            }
        }
        Ok(Resolver {
            command: command.to_string(),
            file,
            echo: Vec::new(),
        })
    }

    fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            Error::InvalidArgument(format!("cannot parse `{raw}` as a value for `{key}`"))
        })
    }

    /// Resolves a key with a default: flag beats file beats default.
    pub fn value<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T> {
        let resolved = match (flag, self.file.remove(key)) {
            (Some(v), _) => v,
            (None, Some(raw)) => Self::parse(key, &raw)?,
            (None, None) => default,
        };
        self.echo.push((key.to_string(), resolved.to_string()));
        Ok(resolved)
    }

    /// Resolves a key that has no default and may stay unset.
    pub fn optional<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>> {
        let resolved = match (flag, self.file.remove(key)) {
            (Some(v), _) => Some(v),
            (None, Some(raw)) => Some(Self::parse(key, &raw)?),
            (None, None) => None,
        };
        if let Some(v) = &resolved {
            self.echo.push((key.to_string(), v.to_string()));
        }
        Ok(resolved)
    }

    /// Path-typed variant of `optional`; PathBuf has no Display, so paths
    /// are echoed through their lossy display form.
    pub fn optional_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let resolved = match (flag, self.file.remove(key)) {
            (Some(v), _) => Some(v),
            (None, Some(raw)) => Some(PathBuf::from(raw)),
            (None, None) => None,
        };
        if let Some(v) = &resolved {
            self.echo.push((key.to_string(), v.display().to_string()));
        }
        Ok(resolved)
    }

    /// Resolves a path key that must end up set one way or the other.
    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.optional_path(key, flag)?.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "missing `{key}`: pass --{key} or set it in the config file"
            ))
        })
    }

    /// Resolves a presence flag. The command line can only turn it on; the
    /// config file can set either value.
    pub fn flag(&mut self, key: &str, set: bool, default: bool) -> Result<bool> {
        let resolved = if set {
            true
        } else {
            match self.file.remove(key) {
                Some(raw) => Self::parse(key, &raw)?,
                None => default,
            }
        };
        self.echo.push((key.to_string(), resolved.to_string()));
        Ok(resolved)
    }

    /// Records a derived value (not a user key) into the echo.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.echo.push((key.to_string(), value.to_string()));
    }

    /// Rejects config-file keys nothing consumed and writes the echo as
    /// `config.kv` in the output directory.
    pub fn write_echo(self, out_dir: &Path) -> Result<()> {
        if let Some(key) = self.file.keys().next() {
            return Err(Error::InvalidArgument(format!(
                "config file key `{key}` is not recognized by this command"
            )));
        }
        let mut pairs = vec![("command".to_string(), self.command)];
        pairs.extend(self.echo);
        let mut bytes = Vec::new();
        kv::write_kv(&mut bytes, &pairs)?;
        fs::write(out_dir.join("config.kv"), bytes)?;
        Ok(())
    }
}

/// Parses a comma-separated list, keeping each raw token alongside its
/// parsed value so outputs can print the token verbatim.
pub fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<(String, T)>> {
    let mut out = Vec::new();
    for token in raw.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let value = token.parse().map_err(|_| {
            Error::InvalidArgument(format!("cannot parse `{token}` in the {what} list"))
        })?;
        out.push((token.to_string(), value));
    }
    Ok(out)
}

/// Creates the output directory (and parents) and hands back its path.
pub fn ensure_out_dir(path: &PathBuf) -> Result<PathBuf> {
    fs::create_dir_all(path)?;
    Ok(path.clone())
}
