use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{DataError, NormStats, Result};
use crate::codec::read_gvc_file;

pub const MANIFEST_FILE: &str = "manifest.tsv";
const HEADER: &str = "# cvip-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(DataError::Manifest(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

/// Tab-separated `<path> <label> <split>` lines under `#` header lines that
/// carry the class count and normalisation statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub num_classes: usize,
    pub stats: NormStats,
    pub entries: Vec<ManifestEntry>,
}

fn floats<const N: usize>(key: &str, rest: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = rest
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| DataError::Manifest(format!("bad number `{t}` in `{key}`"))))
        .collect::<Result<_>>()?;
    v.try_into()
        .map_err(|_| DataError::Manifest(format!("`{key}` needs {N} values")))
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let s = &self.stats;
        writeln!(out, "{HEADER}").unwrap();
        writeln!(out, "# classes {}", self.num_classes).unwrap();
        writeln!(out, "# mv_scale {}", list(&s.mv_scale)).unwrap();
        writeln!(out, "# residual_mean {}", list(&s.residual_mean)).unwrap();
        writeln!(out, "# residual_std {}", list(&s.residual_std)).unwrap();
        writeln!(out, "# rgb_mean {}", list(&s.rgb_mean)).unwrap();
        writeln!(out, "# rgb_std {}", list(&s.rgb_std)).unwrap();
        for e in &self.entries {
            writeln!(out, "{}\t{}\t{}", e.path.display(), e.label, e.split).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut stats = NormStats::default();
        let mut num_classes = None;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                let (key, values) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                match key {
                    "classes" => {
                        num_classes = Some(values.trim().parse().map_err(|_| {
                            DataError::Manifest(format!("bad class count `{values}`"))
                        })?)
                    }
                    "mv_scale" => stats.mv_scale = floats(key, values)?,
                    "residual_mean" => stats.residual_mean = floats(key, values)?,
                    "residual_std" => stats.residual_std = floats(key, values)?,
                    "rgb_mean" => stats.rgb_mean = floats(key, values)?,
                    "rgb_std" => stats.rgb_std = floats(key, values)?,
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, label, split] = fields[..] else {
                return Err(DataError::Manifest(format!("line {}: expected 3 tab-separated fields", n + 1)));
            };
            let label = label
                .parse()
                .map_err(|_| DataError::Manifest(format!("line {}: bad label `{label}`", n + 1)))?;
            entries.push(ManifestEntry {
                path: PathBuf::from(path),
                label,
                split: split.parse()?,
            });
        }
        let num_classes = num_classes.unwrap_or_else(|| entries.iter().map(|e| e.label + 1).max().unwrap_or(0));
        if let Some(e) = entries.iter().find(|e| e.label >= num_classes) {
            return Err(DataError::Manifest(format!(
                "label {} of {} exceeds {num_classes} classes",
                e.label,
                e.path.display()
            )));
        }
        stats.validate()?;
        Ok(Self { num_classes, stats, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Reads `path`, or `path/manifest.tsv` when `path` is a directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        Self::parse(&std::fs::read_to_string(file)?)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, root: &Path, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            root.join(&entry.path)
        }
    }

    /// Every entry must exist, decode, and carry a matching label.
    pub fn validate(&self, root: &Path) -> Result<()> {
        for e in &self.entries {
            let video = read_gvc_file(self.resolve(root, e))?;
            if let Some(l) = video.label {
                if l as usize != e.label {
                    return Err(DataError::Manifest(format!(
                        "{} is labelled {l} in its container but {} in the manifest",
                        e.path.display(),
                        e.label
                    )));
                }
            }
        }
        Ok(())
    }
}
