use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::audio_io::SceneClass;
use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path as written in the manifest.
    pub path: String,
    pub class: SceneClass,
    /// Recording location; clips sharing one never straddle folds.
    pub location: String,
}

/// Labelled clip list. Relative clip paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

/// Picks tab if the first record contains one, comma otherwise.
pub(crate) fn detect_delimiter(text: &str) -> char {
    let first = text
        .lines()
        .map(str::trim_end)
        .find(|l| !l.is_empty() && !l.starts_with('#'));
    match first {
        Some(l) if l.contains('\t') => '\t',
        _ => ',',
    }
}

/// Non-empty, non-comment lines with their 1-based numbers.
pub(crate) fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches(['\r', '\n'])))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.path.as_str()) {
                return Err(Error::Config(format!("duplicate clip path {}", e.path)));
            }
            if e.location.is_empty() {
                return Err(Error::Config(format!(
                    "clip {} has an empty location id",
                    e.path
                )));
            }
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    /// Parses `path, class, location` records (tab- or comma-separated).
    pub fn parse(text: &str, source: &Path, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let delim = detect_delimiter(text);
        let err = |line, message: String| Error::Manifest {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (line, record) in records(text) {
            let fields: Vec<&str> = record.split(delim).map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(
                    line,
                    format!(
                        "expected 3 {:?}-separated fields, found {}",
                        delim,
                        fields.len()
                    ),
                ));
            }
            let class = SceneClass::from_name(fields[1])
                .ok_or_else(|| err(line, format!("unknown scene class {:?}", fields[1])))?;
            if fields[0].is_empty() || fields[2].is_empty() {
                return Err(err(line, "empty clip path or location id".into()));
            }
            if !seen.insert(fields[0].to_string()) {
                return Err(err(line, format!("duplicate clip path {}", fields[0])));
            }
            entries.push(ManifestEntry {
                path: fields[0].to_string(),
                class,
                location: fields[2].to_string(),
            });
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn index_of(&self, path: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.path == path)
    }

    /// Subset by entry indices, keeping the base directory.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    /// Tab-separated text accepted by [`Manifest::parse`].
    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.path, e.class.name(), e.location))
            .collect()
    }
}

/// Reads a manifest; relative clip paths are taken relative to its directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fsutil::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::parse(&text, path, base)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, manifest.to_tsv().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Manifest> {
        Manifest::parse(text, Path::new("m.txt"), "/data")
    }

    #[test]
    fn empty_file() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n# comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn dcase_style_tab_records() {
        let text = "audio/a.wav\toffice\tloc1\naudio/b.wav\tcafe/restaurant\tloc2\n";
        let m = parse(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(
            m.entries()[0].class,
            SceneClass::from_name("office").unwrap()
        );
        assert_eq!(m.entries()[0].class.id(), 10);
        assert_eq!(
            m.resolve(&m.entries()[1]),
            PathBuf::from("/data/audio/b.wav")
        );
    }

    #[test]
    fn comma_records_and_round_trip() {
        let m = parse("a.wav,bus,l1\r\nb.wav, park ,l2\n").unwrap();
        assert_eq!(m.entries()[1].class.name(), "park");
        assert_eq!(parse(&m.to_tsv()).unwrap(), m);
    }

    #[test]
    fn errors_quote_line_numbers() {
        let err = parse("a.wav\tbus\tl\n\nb.wav\tspaceship\tl\n").unwrap_err();
        assert!(err.to_string().contains("m.txt:3"), "{err}");
        assert!(err.to_string().contains("spaceship"));
        let err = parse("a.wav\tbus\tl\na.wav\tcar\tl\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        // delimiter is fixed per file
        assert!(parse("a.wav\tbus\tl\nb.wav,car,l\n").is_err());
    }
}
