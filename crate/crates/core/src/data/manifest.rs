use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{read_volume, VolumeSample, AXIAL_CHANNELS, NUM_CHANNELS};
use crate::error::{Error, Result};
use crate::model::AXIAL_MODALITIES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split `{s}` (expected train, val or test)")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub label: u8,
    pub split: Split,
    /// One entry per channel in channel order; `None` for a missing contrast.
    /// Relative paths resolve against the manifest's directory.
    pub channels: Vec<Option<PathBuf>>,
}

/// Tab-separated dataset index: `id, label, split`, then one path (or `-`)
/// per channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate id `{}`", r.id)));
            }
            if r.channels.len() != NUM_CHANNELS {
                return Err(Error::Dataset(format!(
                    "record `{}` has {} channel entries (expected {NUM_CHANNELS})",
                    r.id,
                    r.channels.len()
                )));
            }
            if r.label > 1 {
                return Err(Error::Dataset(format!("record `{}` has non-binary label", r.id)));
            }
            if r.id.is_empty() || r.id.contains(['\t', '\n']) {
                return Err(Error::Dataset(format!("invalid id `{}`", r.id)));
            }
        }
        Ok(DatasetManifest {
            records,
            base_dir: base_dir.into(),
        })
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| Error::Dataset(format!("manifest line {}: {what}", n + 1));
            if fields.len() != 3 + NUM_CHANNELS {
                return Err(bad(&format!("expected {} fields, got {}", 3 + NUM_CHANNELS, fields.len())));
            }
            let label = match fields[1] {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(&format!("bad label `{other}`"))),
            };
            let split = fields[2].parse().map_err(|_| bad(&format!("bad split `{}`", fields[2])))?;
            let channels = fields[3..]
                .iter()
                .map(|&p| (p != "-").then(|| PathBuf::from(p)))
                .collect();
            records.push(ManifestRecord {
                id: fields[0].to_string(),
                label,
                split,
                channels,
            });
        }
        Self::new(records, base_dir)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn labels(&self, split: Split) -> Vec<u8> {
        self.split(split).map(|r| r.label).collect()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Fails if any referenced volume file is missing.
    pub fn check_files(&self) -> Result<()> {
        for r in &self.records {
            for p in r.channels.iter().flatten() {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Dataset(format!(
                        "record `{}` references missing file {}",
                        r.id,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loads and validates every sample of `split`. `sagittal_grid` shapes
    /// the zero volume used when the sagittal contrast is missing.
    pub fn load_split(&self, split: Split, sagittal_grid: [usize; 3]) -> Result<Vec<VolumeSample>> {
        self.split(split)
            .map(|r| self.load_record(r, sagittal_grid))
            .collect()
    }

    pub fn load_record(&self, r: &ManifestRecord, sagittal_grid: [usize; 3]) -> Result<VolumeSample> {
        let mut volumes = Vec::with_capacity(NUM_CHANNELS);
        for (i, p) in r.channels.iter().enumerate() {
            volumes.push(match p {
                Some(p) => {
                    let full = self.resolve(p);
                    if !full.is_file() {
                        return Err(Error::Dataset(format!(
                            "record `{}` references missing file {}",
                            r.id,
                            full.display()
                        )));
                    }
                    Some(read_volume(&full)?.1)
                }
                None if i < AXIAL_CHANNELS.len() && i < crate::model::REQUIRED_AXIAL => {
                    return Err(Error::Dataset(format!(
                        "record `{}` lacks required contrast {}",
                        r.id, AXIAL_CHANNELS[i]
                    )))
                }
                None => None,
            });
        }
        let sample = VolumeSample::from_channels(
            r.id.clone(),
            r.label,
            &volumes[..AXIAL_MODALITIES],
            &volumes[AXIAL_MODALITIES..],
            Some(sagittal_grid),
        )?;
        sample.validate()?;
        Ok(sample)
    }
}

impl fmt::Display for DatasetManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.records {
            write!(f, "{}\t{}\t{}", r.id, r.label, r.split)?;
            for c in &r.channels {
                match c {
                    Some(p) => write!(f, "\t{}", p.display())?,
                    None => f.write_str("\t-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
