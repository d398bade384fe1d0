use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{load_sample, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split tag {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
    pub size_ratio: f64,
}

/// Ordered dataset listing. Relative paths resolve against `root`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::Data(format!(
                    "manifest line {}: expected 5 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let size_ratio: f64 = fields[4].parse().map_err(|_| {
                Error::Data(format!("manifest line {}: bad size ratio {:?}", lineno + 1, fields[4]))
            })?;
            if !seen.insert(fields[0].to_string()) {
                return Err(Error::Data(format!("duplicate sample id {:?}", fields[0])));
            }
            entries.push(ManifestEntry {
                id: fields[0].to_string(),
                image: PathBuf::from(fields[1]),
                mask: PathBuf::from(fields[2]),
                split: fields[3].parse()?,
                size_ratio,
            });
        }
        Ok(Manifest {
            root: root.into(),
            entries,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.image.display(),
                e.mask.display(),
                e.split,
                e.size_ratio
            ));
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Load every sample of `split`, in manifest order.
    pub fn load(&self, split: Split) -> Result<Vec<Sample>> {
        self.split(split)
            .map(|e| load_sample(&e.id, self.resolve(&e.image), self.resolve(&e.mask)))
            .collect()
    }
}

/// Reassign split tags: a seeded shuffle puts `floor(fraction * n)` entries in
/// train and the rest in test. Entry order is preserved.
pub fn split_manifest(mut entries: Vec<ManifestEntry>, train_fraction: f64, seed: u64) -> Result<Vec<ManifestEntry>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let n = entries.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * n as f64).floor() as usize;
    for (rank, &i) in order.iter().enumerate() {
        entries[i].split = if rank < n_train { Split::Train } else { Split::Test };
    }
    Ok(entries)
}
