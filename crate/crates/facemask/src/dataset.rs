//! Dataset manifests: the ordered list of (image path, label, split) records
//! that drives every pipeline stage.
//!
//! The on-disk format is a CSV file with the fixed header `path,label,split`,
//! UTF-8, LF line endings. Record order is file order and is preserved by
//! every operation.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Binary class label. `Mask` is the positive class throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Mask,
    NoMask,
}

impl Label {
    /// One-hot encoding: `[1,0]` for `Mask`, `[0,1]` for `NoMask`.
    pub fn one_hot(self) -> [f32; 2] {
        match self {
            Label::Mask => [1.0, 0.0],
            Label::NoMask => [0.0, 1.0],
        }
    }

    /// Class index into probability vectors: `Mask` is 0.
    pub fn index(self) -> usize {
        match self {
            Label::Mask => 0,
            Label::NoMask => 1,
        }
    }

    pub fn from_index(index: usize) -> Label {
        if index == 0 {
            Label::Mask
        } else {
            Label::NoMask
        }
    }

    fn parse(token: &str) -> Option<Label> {
        match token {
            "mask" => Some(Label::Mask),
            "no_mask" => Some(Label::NoMask),
            _ => None,
        }
    }

    fn token(self) -> &'static str {
        match self {
            Label::Mask => "mask",
            Label::NoMask => "no_mask",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Which partition a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn parse(token: &str) -> Option<Split> {
        match token {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    fn token(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub label: Label,
    pub split: Split,
}

/// Ordered, duplicate-free list of manifest records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Builds a manifest from records, rejecting duplicate paths.
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for rec in &records {
            if !seen.insert(rec.path.as_str()) {
                return Err(Error::config(format!(
                    "duplicate image path {:?} in manifest",
                    rec.path
                )));
            }
        }
        Ok(DatasetManifest { records })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one split, in manifest order.
    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split_records(split).count()
    }
}

const HEADER: &str = "path,label,split";

/// Loads a manifest CSV. Record order equals file line order.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == HEADER => {}
        Some((_, header)) => {
            return Err(err(1, format!("expected header {HEADER:?}, got {header:?}")))
        }
        None => return Err(err(1, "empty manifest".into())),
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(err(
                line_no,
                format!("expected 3 columns, got {}", fields.len()),
            ));
        }
        let path_field = fields[0].to_owned();
        if path_field.is_empty() {
            return Err(err(line_no, "empty path".into()));
        }
        let label = Label::parse(fields[1])
            .ok_or_else(|| err(line_no, format!("unknown label {:?}", fields[1])))?;
        let split = Split::parse(fields[2])
            .ok_or_else(|| err(line_no, format!("unknown split {:?}", fields[2])))?;
        if !seen.insert(path_field.clone()) {
            return Err(err(line_no, format!("duplicate image path {path_field:?}")));
        }
        records.push(ManifestRecord {
            path: path_field,
            label,
            split,
        });
    }
    Ok(DatasetManifest { records })
}

/// Writes a manifest in the CSV format read by [`load_manifest`].
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(manifest.len() * 32 + HEADER.len() + 1);
    out.push_str(HEADER);
    out.push('\n');
    for rec in manifest.records() {
        out.push_str(&rec.path);
        out.push(',');
        out.push_str(rec.label.token());
        out.push(',');
        out.push_str(rec.split.token());
        out.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_two_records() {
        let (_d, path) = write_temp("path,label,split\na.ppm,mask,train\nb.ppm,no_mask,test\n");
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.records()[0].path, "a.ppm");
        assert_eq!(m.records()[0].label, Label::Mask);
        assert_eq!(m.records()[1].split, Split::Test);
    }

    #[test]
    fn bad_label_names_line() {
        let (_d, path) =
            write_temp("path,label,split\na.ppm,mask,train\nb.ppm,no_mask,test\nc.ppm,maskk,train\n");
        let err = load_manifest(&path).unwrap_err();
        match err {
            Error::Manifest { line, message, .. } => {
                assert_eq!(line, 4); // header + record line 3
                assert!(message.contains("maskk"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn wrong_column_count_reported() {
        let (_d, path) = write_temp("path,label,split\na.ppm,mask\n");
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("3 columns"), "{err}");
    }

    #[test]
    fn duplicate_path_rejected() {
        let (_d, path) = write_temp("path,label,split\na.ppm,mask,train\na.ppm,mask,test\n");
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_manifest("/nonexistent/manifest.csv"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn smfd_scale_counts() {
        // 1099 train + 470 test rows, mirroring the intended dataset split.
        let mut content = String::from("path,label,split\n");
        for i in 0..1099 {
            let label = if i % 2 == 0 { "mask" } else { "no_mask" };
            content.push_str(&format!("train_{i:04}.ppm,{label},train\n"));
        }
        for i in 0..470 {
            let label = if i % 2 == 0 { "mask" } else { "no_mask" };
            content.push_str(&format!("test_{i:04}.ppm,{label},test\n"));
        }
        let (_d, path) = write_temp(&content);
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.count(Split::Train), 1099);
        assert_eq!(m.count(Split::Test), 470);
        assert_eq!(m.len(), 1099 + 470);
    }

    #[test]
    fn two_loads_are_identical() {
        let (_d, path) = write_temp("path,label,split\na.ppm,mask,train\nb.ppm,no_mask,test\n");
        assert_eq!(load_manifest(&path).unwrap(), load_manifest(&path).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let m = DatasetManifest::new(vec![
            ManifestRecord {
                path: "x.ppm".into(),
                label: Label::NoMask,
                split: Split::Train,
            },
            ManifestRecord {
                path: "y.ppm".into(),
                label: Label::Mask,
                split: Split::Test,
            },
        ])
        .unwrap();
        save_manifest(&m, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
    }
}
