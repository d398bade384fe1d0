//! Run configuration: the model, train, data and eval sections of a flat
//! `section.key = value` file.

use std::fs;
use std::path::{Path, PathBuf};

use caranet::config::{self, parse_lines, Settings};
use caranet::data::{Split, SyntheticSpec};
use caranet::model::CaraNetConfig;
use caranet::size::SMALL_CUTOFF;
use caranet::train::TrainConfig;
use caranet::{Error, Result};

/// Inputs and analysis settings for `eval` and `analyze`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    pub reports: Vec<PathBuf>,
    pub intervals: usize,
    /// Explicit interval range; the observed ratio range when absent.
    pub range: Option<(f64, f64)>,
    pub cutoff: Option<f64>,
    pub watershed_window: usize,
    pub watershed_tol: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            checkpoint: None,
            split: Split::Test,
            reports: Vec::new(),
            intervals: 50,
            range: None,
            cutoff: None,
            watershed_window: 5,
            watershed_tol: 0.05,
        }
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl Settings for EvalConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "checkpoint" => self.checkpoint = opt_path(v),
            "split" => self.split = config::parse(key, v)?,
            "reports" => {
                self.reports = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
            }
            "intervals" => self.intervals = config::parse(key, v)?,
            "range" => self.range = if v.is_empty() { None } else { Some(config::parse_pair(key, v)?) },
            "cutoff" => self.cutoff = if v.is_empty() { None } else { Some(config::parse(key, v)?) },
            "watershed_window" => self.watershed_window = config::parse(key, v)?,
            "watershed_tol" => self.watershed_tol = config::parse(key, v)?,
            _ => return Err(config::unknown_key(key)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("checkpoint", show_path(&self.checkpoint)),
            ("split", self.split.to_string()),
            (
                "reports",
                self.reports.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
            ),
            ("intervals", self.intervals.to_string()),
            ("range", self.range.map(|(a, b)| format!("{a},{b}")).unwrap_or_default()),
            ("cutoff", self.cutoff.map(|c| c.to_string()).unwrap_or_default()),
            ("watershed_window", self.watershed_window.to_string()),
            ("watershed_tol", self.watershed_tol.to_string()),
        ]
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.intervals == 0 {
            return Err(Error::InvalidArgument("eval.intervals must be positive".into()));
        }
        if let Some(c) = self.cutoff {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::InvalidArgument(format!("eval.cutoff {c} not in (0, 1]")));
            }
        }
        if let Some((lo, hi)) = self.range {
            if !(hi > lo) {
                return Err(Error::InvalidArgument(format!("eval.range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    pub fn small_cutoff(&self) -> f64 {
        self.cutoff.unwrap_or(SMALL_CUTOFF)
    }
}

/// Dataset settings: the synthetic generator plus the manifest used by
/// `train` and `eval`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DataConfig {
    pub synthetic: SyntheticSpec,
    pub manifest: Option<PathBuf>,
}

impl Settings for DataConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "manifest" => self.manifest = opt_path(v),
            _ => self.synthetic.set(key, v)?,
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e = self.synthetic.entries();
        e.push(("manifest", show_path(&self.manifest)));
        e
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: CaraNetConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Apply one `section.key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::InvalidArgument(format!("key {key:?} has no section (model., train., data., eval.)")))?;
        let r = match section {
            "model" => self.model.set(field, value),
            "train" => self.train.set(field, value),
            "data" => self.data.set(field, value),
            "eval" => self.eval.set(field, value),
            _ => return Err(Error::InvalidArgument(format!("unknown section in key {key:?}"))),
        };
        r.map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{section}.{m}")),
            e => e,
        })
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_lines(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Every setting, one `section.key = value` line each.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sections: [(&str, Vec<(&'static str, String)>); 4] = [
            ("model", self.model.entries()),
            ("train", self.train.entries()),
            ("data", self.data.entries()),
            ("eval", self.eval.entries()),
        ];
        for (name, entries) in sections {
            s.push_str(&format!("# {name}\n"));
            for (k, v) in entries {
                s.push_str(&format!("{name}.{k} = {v}\n"));
            }
        }
        s
    }

    /// Make every path setting absolute so `resolved.cfg` works from any
    /// directory.
    pub fn absolutize(&mut self) -> Result<()> {
        let abs = |p: &mut PathBuf| -> Result<()> {
            *p = std::path::absolute(&*p).map_err(|e| Error::io(&*p, e))?;
            Ok(())
        };
        if let Some(p) = self.data.manifest.as_mut() {
            abs(p)?;
        }
        if let Some(p) = self.eval.checkpoint.as_mut() {
            abs(p)?;
        }
        for p in &mut self.eval.reports {
            abs(p)?;
        }
        Ok(())
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join("resolved.cfg");
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}
