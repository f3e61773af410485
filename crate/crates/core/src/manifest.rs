//! Video manifests.
//!
//! A manifest is a CSV file with a header row and the columns
//! `video_id,frames_dir,mos,mos_min,mos_max,split`. Relative `frames_dir`
//! values resolve against the manifest's own directory, and a video's frames
//! are the lexicographically sorted image files inside that directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::is_frame_file;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoManifestEntry {
    pub video_id: String,
    /// Extracted frames in chronological order.
    pub frame_paths: Vec<PathBuf>,
    pub mos: f64,
    pub mos_min: f64,
    pub mos_max: f64,
    pub split: Split,
}

impl VideoManifestEntry {
    pub fn mos_norm(&self) -> f64 {
        (self.mos - self.mos_min) / (self.mos_max - self.mos_min)
    }
}

/// One rejected manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestViolation {
    /// Zero-based row index among data rows.
    pub row: usize,
    pub video_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestReport {
    pub violations: Vec<ManifestViolation>,
}

impl fmt::Display for ManifestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  row {} ({}): {}", v.row, v.video_id, v.reason)?;
        }
        Ok(())
    }
}

/// A manifest whose every row satisfies the entry invariants.
#[derive(Debug, Clone)]
pub struct Manifest {
    entries: Vec<VideoManifestEntry>,
}

impl Manifest {
    pub fn entries(&self) -> &[VideoManifestEntry] {
        &self.entries
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoManifestEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Checks every entry invariant and returns the manifest, or a report
/// listing each violating row.
pub fn validate_manifest(entries: Vec<VideoManifestEntry>) -> Result<Manifest> {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for (row, e) in entries.iter().enumerate() {
        let mut flag = |reason: String| {
            violations.push(ManifestViolation {
                row,
                video_id: e.video_id.clone(),
                reason,
            })
        };
        if e.video_id.is_empty() {
            flag("empty video_id".into());
        }
        if !seen.insert(e.video_id.as_str()) {
            flag("duplicate id".into());
        }
        if e.frame_paths.is_empty() {
            flag("no frames".into());
        }
        for p in &e.frame_paths {
            if !p.is_file() {
                flag(format!("missing frame file {}", p.display()));
            }
        }
        if !(e.mos_min < e.mos_max) {
            flag(format!("degenerate mos range [{}, {}]", e.mos_min, e.mos_max));
        } else if !(e.mos >= e.mos_min && e.mos <= e.mos_max) {
            flag(format!(
                "mos out of range: {} not in [{}, {}]",
                e.mos, e.mos_min, e.mos_max
            ));
        }
    }
    if violations.is_empty() {
        Ok(Manifest { entries })
    } else {
        Err(Error::Manifest(ManifestReport { violations }))
    }
}

const COLUMNS: [&str; 6] = ["video_id", "frames_dir", "mos", "mos_min", "mos_max", "split"];

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    video_id: String,
    frames_dir: String,
    mos: f64,
    mos_min: f64,
    mos_max: f64,
    split: Split,
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if let Some(c) = COLUMNS.iter().find(|c| !header.iter().any(|h| h == **c)) {
        return Err(Error::Format(format!("manifest header lacks column {c:?}")));
    }

    let mut entries = Vec::new();
    for (row, record) in reader.deserialize::<ManifestRow>().enumerate() {
        let r = record.map_err(|e| Error::Format(format!("manifest row {row}: {e}")))?;
        entries.push(VideoManifestEntry {
            frame_paths: list_frames(&base.join(&r.frames_dir))?,
            video_id: r.video_id,
            mos: r.mos,
            mos_min: r.mos_min,
            mos_max: r.mos_max,
            split: r.split,
        });
    }
    validate_manifest(entries)
}

/// Sorted image files in `dir`. A missing directory yields no frames so that
/// validation can report it against the row.
fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let Ok(read) = fs::read_dir(dir) else {
        return Ok(Vec::new());
    };
    let mut frames = Vec::new();
    for entry in read {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_frame_file(&path) {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

/// Renders `(video_id, frames_dir, mos, mos_min, mos_max, split)` rows as manifest CSV.
pub fn render_manifest(rows: &[(String, String, f64, f64, f64, Split)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (video_id, frames_dir, mos, mos_min, mos_max, split) in rows {
        w.serialize(ManifestRow {
            video_id: video_id.clone(),
            frames_dir: frames_dir.clone(),
            mos: *mos,
            mos_min: *mos_min,
            mos_max: *mos_max,
            split: *split,
        })
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(dir: &Path, id: &str, mos: f64) -> VideoManifestEntry {
        let frames: Vec<PathBuf> = (0..5).map(|i| dir.join(format!("{id}_{i}.png"))).collect();
        for f in &frames {
            fs::write(f, b"x").unwrap();
        }
        VideoManifestEntry {
            video_id: id.into(),
            frame_paths: frames,
            mos,
            mos_min: 1.0,
            mos_max: 5.0,
            split: Split::Test,
        }
    }

    #[test]
    fn single_valid_entry() {
        let dir = tempfile::tempdir().unwrap();
        let m = validate_manifest(vec![entry(dir.path(), "a", 3.2)]).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m.entries()[0].mos_norm() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = validate_manifest(vec![entry(dir.path(), "a", 3.0), entry(dir.path(), "a", 2.0)])
            .unwrap_err();
        let Error::Manifest(report) = err else { panic!() };
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].row, 1);
        assert!(report.violations[0].reason.contains("duplicate id"));
    }

    #[test]
    fn mos_out_of_range_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = validate_manifest(vec![entry(dir.path(), "a", 6.0)]).unwrap_err();
        let Error::Manifest(report) = err else { panic!() };
        assert!(report.violations[0].reason.contains("mos out of range"));
    }

    #[test]
    fn missing_frame_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = entry(dir.path(), "a", 3.0);
        e.frame_paths.push(dir.path().join("nope.png"));
        let Error::Manifest(report) = validate_manifest(vec![e]).unwrap_err() else { panic!() };
        assert!(report.violations[0].reason.contains("missing frame file"));
    }

    #[test]
    fn verdict_is_order_independent() {
        let dir = tempfile::tempdir().unwrap();
        let a = entry(dir.path(), "a", 3.0);
        let b = entry(dir.path(), "b", 9.0);
        let c = entry(dir.path(), "c", 2.0);
        let fwd = validate_manifest(vec![a.clone(), b.clone(), c.clone()]).is_ok();
        let rev = validate_manifest(vec![c, b, a]).is_ok();
        assert_eq!(fwd, rev);
        assert!(!fwd);
    }

    #[test]
    fn loads_csv_with_sorted_frames() {
        let dir = tempfile::tempdir().unwrap();
        let frames = dir.path().join("v1");
        fs::create_dir(&frames).unwrap();
        for name in ["f2.png", "f0.png", "f1.png", "notes.txt"] {
            fs::write(frames.join(name), b"x").unwrap();
        }
        let csv = render_manifest(&[("v1".into(), "v1".into(), 60.0, 0.0, 100.0, Split::Train)]);
        let path = dir.path().join("manifest.csv");
        fs::write(&path, csv).unwrap();
        let m = load_manifest(&path).unwrap();
        let names: Vec<_> = m.entries()[0]
            .frame_paths
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["f0.png", "f1.png", "f2.png"]);
        assert_eq!(m.entries()[0].split, Split::Train);
    }

    #[test]
    fn missing_frames_dir_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        fs::write(
            &path,
            "video_id,frames_dir,mos,mos_min,mos_max,split\nv1,nowhere,3,1,5,test\n",
        )
        .unwrap();
        let Error::Manifest(report) = load_manifest(&path).unwrap_err() else { panic!() };
        assert!(report.violations[0].reason.contains("no frames"));
    }
}
