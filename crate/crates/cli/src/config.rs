//! `config.txt`: the resolved settings of a run plus the argument vector
//! needed to repeat it.

use std::path::Path;

use sosiq_core::{Error, Result};

pub const ARGV_SECTION: &str = "[argv]";

pub struct RunConfig {
    entries: Vec<(String, String)>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        RunConfig {
            entries: vec![
                ("version".into(), env!("CARGO_PKG_VERSION").into()),
                ("command".into(), command.into()),
            ],
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    /// `key = value` lines, then the argument vector one per line.
    /// `--jobs` is dropped: it changes speed, never results.
    pub fn render(&self, argv: &[String]) -> String {
        let mut s = String::from("# sosiq run configuration\n");
        for (k, v) in &self.entries {
            s += &format!("{k} = {v}\n");
        }
        s += ARGV_SECTION;
        s += "\n";
        let mut skip = false;
        for a in argv.iter().skip(1) {
            if skip {
                skip = false;
                continue;
            }
            if a == "--jobs" {
                skip = true;
                continue;
            }
            if a.starts_with("--jobs=") {
                continue;
            }
            s += a;
            s += "\n";
        }
        s
    }

    pub fn write(&self, path: &Path, argv: &[String]) -> Result<()> {
        std::fs::write(path, self.render(argv)).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Arguments (without the program name) recorded in a config file.
pub fn read_argv(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut lines = text.lines().skip_while(|l| l.trim() != ARGV_SECTION);
    if lines.next().is_none() {
        return Err(Error::Data(format!("{}: no {ARGV_SECTION} section", path.display())));
    }
    let argv: Vec<String> = lines.map(str::to_string).collect();
    if argv.is_empty() {
        return Err(Error::Data(format!("{}: empty {ARGV_SECTION} section", path.display())));
    }
    if argv[0] == "replay" {
        return Err(Error::Data(format!("{}: refusing to replay a replay", path.display())));
    }
    Ok(argv)
}
