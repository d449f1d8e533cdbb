use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hawkes_latency::data::{
    atomic_write, filter_session, read_long, read_plain, Dedup, SessionWindow, TimestampFormat,
};
use hawkes_latency::EventSeries;

use crate::usage;

/// Files named on the command line, with directories replaced by their
/// `.txt` (plain) or `.csv` (long) entries in name order.
pub fn expand_inputs(inputs: &[PathBuf], format: TimestampFormat) -> Result<Vec<PathBuf>> {
    let ext = match format {
        TimestampFormat::Plain => "txt",
        TimestampFormat::Long => "csv",
    };
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("listing {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.is_file()
                        && p.extension().is_some_and(|e| e == ext)
                        && !p
                            .file_name()
                            .is_some_and(|n| n.to_string_lossy().starts_with('.'))
                })
                .collect();
            entries.sort();
            out.extend(entries);
        } else if input.is_file() {
            out.push(input.clone());
        } else {
            return Err(usage(format!("input {} does not exist", input.display())));
        }
    }
    if out.is_empty() {
        return Err(usage("no input files"));
    }
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// One input file: its series (one for plain files, one per id for long
/// files), their ids and the number of jittered timestamps.
pub struct Loaded {
    pub ids: Vec<String>,
    pub series: Vec<EventSeries>,
    pub jittered: usize,
}

pub fn load(
    path: &Path,
    format: TimestampFormat,
    dedup: Dedup,
    session: Option<&SessionWindow>,
) -> Result<Loaded> {
    let (ids, series, jittered) = match format {
        TimestampFormat::Plain => {
            let r = read_plain(path, dedup)?;
            (vec![stem(path)], vec![r.data], r.jittered)
        }
        TimestampFormat::Long => {
            let r = read_long(path, dedup)?;
            (r.data.ids, r.data.series, r.jittered)
        }
    };
    let series = match session {
        Some(w) => series.iter().map(|s| filter_session(s, w, true)).collect(),
        None => series,
    };
    Ok(Loaded {
        ids,
        series,
        jittered,
    })
}

/// Parameter name usable as a CSV column: `alpha[0,1]` becomes `alpha_0_1`.
pub fn csv_name(name: &str) -> String {
    name.replace(['[', ','], "_").replace(']', "")
}

/// Keeps a CSV field on one column.
pub fn csv_field(text: &str) -> String {
    text.replace([',', '\n', '\r'], ";")
}

/// Output files collected in memory and written together at the end.
pub struct Output {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Output {
    pub fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn write(self) -> Result<()> {
        std::fs::create_dir_all(&self.dir)
            .with_context(|| format!("creating {}", self.dir.display()))?;
        for (name, contents) in &self.files {
            let path = self.dir.join(name);
            atomic_write(&path, contents.as_bytes())
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

pub fn parse_with_usage<T>(text: &str) -> Result<T>
where
    T: std::str::FromStr<Err = hawkes_latency::HawkesError>,
{
    text.parse::<T>().map_err(|e| usage(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_names() {
        assert_eq!(csv_name("alpha[0,1]"), "alpha_0_1");
        assert_eq!(csv_name("lambda0[3]"), "lambda0_3");
        assert_eq!(csv_field("a,b\nc"), "a;b;c");
    }
}
