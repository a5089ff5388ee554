//! Disk footprint of a pipeline run directory, grouped by artifact class.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::container::Container;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ArtifactClass {
    Datasets,
    Srl,
    Teacher,
    Student,
    Other,
}

impl ArtifactClass {
    pub const ALL: [ArtifactClass; 5] = [Self::Datasets, Self::Srl, Self::Teacher, Self::Student, Self::Other];

    pub fn name(self) -> &'static str {
        match self {
            Self::Datasets => "datasets",
            Self::Srl => "srl",
            Self::Teacher => "teacher",
            Self::Student => "student",
            Self::Other => "other",
        }
    }

    /// Footprint reported for the original system at 224×224 resolution, in MB.
    pub fn reference_mb(self) -> Option<f64> {
        match self {
            Self::Datasets => Some(554.6),
            Self::Srl => Some(4.8),
            Self::Teacher => Some(0.143),
            Self::Student => Some(1.1),
            Self::Other => None,
        }
    }

    /// Classifies by container kind, falling back to `Other` for anything
    /// that is not a container (CSV metrics, manifests).
    pub fn of_file(path: &Path) -> Self {
        let Ok(c) = Container::load(path) else {
            return Self::Other;
        };
        match c.kind.as_str() {
            "distill-dataset" => Self::Datasets,
            "srl-model" | "srl-dataset" => Self::Srl,
            "teacher" | "agent" => Self::Teacher,
            "student" => Self::Student,
            _ => Self::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    /// Bytes per class, in `ArtifactClass::ALL` order.
    pub bytes: Vec<(ArtifactClass, u64)>,
}

impl MemoryReport {
    pub fn bytes_of(&self, class: ArtifactClass) -> u64 {
        self.bytes.iter().find(|(c, _)| *c == class).map_or(0, |(_, b)| *b)
    }

    pub fn total(&self) -> u64 {
        self.bytes.iter().map(|(_, b)| b).sum()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let rows: Vec<Vec<String>> = self
            .bytes
            .iter()
            .map(|(c, b)| {
                vec![
                    c.name().to_string(),
                    b.to_string(),
                    format!("{:.3}", *b as f64 / 1e6),
                    c.reference_mb().map_or(String::new(), |r| r.to_string()),
                ]
            })
            .collect();
        super::csv_bytes(&["class", "bytes", "mb", "reference_mb"], &rows)
    }
}

impl fmt::Display for MemoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>14} {:>12}", "class", "MB", "reference MB")?;
        for (c, b) in &self.bytes {
            let reference = c.reference_mb().map_or("-".to_string(), |r| format!("{r}"));
            writeln!(f, "{:<10} {:>14.3} {:>12}", c.name(), *b as f64 / 1e6, reference)?;
        }
        write!(f, "{:<10} {:>14.3}", "total", self.total() as f64 / 1e6)
    }
}

pub fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn memory_report(dir: &Path) -> Result<MemoryReport> {
    let mut bytes: Vec<(ArtifactClass, u64)> = ArtifactClass::ALL.iter().map(|&c| (c, 0)).collect();
    for path in files_under(dir)? {
        let len = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        let class = ArtifactClass::of_file(&path);
        if let Some(slot) = bytes.iter_mut().find(|(c, _)| *c == class) {
            slot.1 += len;
        }
    }
    Ok(MemoryReport { bytes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_by_container_kind() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Container::new("student");
        c.push_f64("w", vec![3], vec![1.0, 2.0, 3.0]);
        c.save(&dir.path().join("a.bin")).unwrap();
        Container::new("distill-dataset").save(&dir.path().join("sub/b.bin")).unwrap();
        fs::write(dir.path().join("m.csv"), "x\n1\n").unwrap();
        let r = memory_report(dir.path()).unwrap();
        assert!(r.bytes_of(ArtifactClass::Student) > 24);
        assert!(r.bytes_of(ArtifactClass::Datasets) > 0);
        assert_eq!(r.bytes_of(ArtifactClass::Other), 4);
        assert_eq!(r.bytes_of(ArtifactClass::Teacher), 0);
        assert_eq!(r.total(), files_under(dir.path()).unwrap().iter().map(|p| fs::metadata(p).unwrap().len()).sum::<u64>());
    }
}
