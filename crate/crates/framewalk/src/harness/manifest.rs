//! Dataset manifests: tab-separated `category<TAB>lq<TAB>hq` lines with `#`
//! comments, paths resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::degrade::CategoryLabel;
use crate::error::{Error, Result};
use crate::image::io::read_image;
use crate::trainer::TrainPair;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub category: CategoryLabel,
    pub lq_path: PathBuf,
    pub hq_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lq_abs(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.lq_path)
    }

    pub fn hq_abs(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.hq_path)
    }

    /// Load every pair's images into memory.
    pub fn load_pairs(&self) -> Result<Vec<TrainPair>> {
        self.entries
            .iter()
            .map(|e| {
                Ok(TrainPair {
                    category: e.category,
                    lq: read_image(self.lq_abs(e))?,
                    hq: read_image(self.hq_abs(e))?,
                })
            })
            .collect()
    }

    /// Categories present, in canonical order.
    pub fn categories(&self) -> Vec<CategoryLabel> {
        let mut cats: Vec<CategoryLabel> = CategoryLabel::all()
            .filter(|c| self.entries.iter().any(|e| e.category == *c))
            .collect();
        cats.sort_by_key(|c| c.index());
        cats
    }
}

/// Parse and validate a manifest file. Malformed lines are reported with
/// their line number; categories must be known and both paths must exist.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let category = CategoryLabel::parse(fields[0])
            .map_err(|_| Error::Parse { line: line_no, msg: format!("unknown category `{}`", fields[0]) })?;
        let entry = ManifestEntry {
            category,
            lq_path: PathBuf::from(fields[1]),
            hq_path: PathBuf::from(fields[2]),
        };
        for p in [base_dir.join(&entry.lq_path), base_dir.join(&entry.hq_path)] {
            if !p.exists() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("file not found: {}", p.display()),
                });
            }
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        eprintln!("warning: manifest {} is empty", path.display());
    }
    Ok(Manifest { entries, base_dir })
}

/// Serialize a manifest (paths as given, tab-separated).
pub fn manifest_to_tsv(manifest: &Manifest) -> String {
    let mut out = String::from("# category\tlq\thq\n");
    for e in &manifest.entries {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            e.category.name(),
            e.lq_path.display(),
            e.hq_path.display()
        ));
    }
    out
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest_to_tsv(manifest)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Converter for externally paired directories: files with identical names
/// under `lq_dir` and `hq_dir` become entries of one category. This is the
/// only adapter provided for real benchmark data.
pub fn from_paired_dirs(lq_dir: &Path, hq_dir: &Path, category: CategoryLabel) -> Result<Manifest> {
    let mut names: Vec<String> = fs::read_dir(lq_dir)
        .map_err(|e| Error::io(lq_dir.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().to_str().map(String::from))
        .collect();
    names.sort();
    let entries: Vec<ManifestEntry> = names
        .into_iter()
        .filter(|n| hq_dir.join(n).exists())
        .map(|n| ManifestEntry {
            category,
            lq_path: lq_dir.join(&n),
            hq_path: hq_dir.join(&n),
        })
        .collect();
    Ok(Manifest { entries, base_dir: PathBuf::from(".") })
}
