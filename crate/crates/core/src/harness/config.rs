//! Flat `key = value` configuration files.
//!
//! One key per line; `#` starts a comment; blank lines are ignored. Every
//! key must be known to the command reading the file and may appear once.
//!
//! Experiment keys (`experiment` and `rates`):
//!
//! ```text
//! m = 25                 # rows of A
//! l = 5                  # columns of A
//! p = 4                  # columns of X and B
//! n = 10                 # tube length
//! trials = 20
//! iters = 2000
//! cells = QTRK:0.975, TRK, MQTRK:0.975
//! beta_tilde = 0.025, 0.05
//! beta_row_tilde = 0.2
//! law = normal(100,20)
//! seed = 1
//! output_dir = out       # relative to the config file
//! record_every = 1
//! ```
//!
//! Deblur keys:
//!
//! ```text
//! frames_dir = frames    # *.pgm in name order; or frames_t3b = video.t3b;
//!                        # or neither for a synthetic height x width x frames video
//! height = 32
//! width = 32
//! frames = 4
//! kernel_size = 5
//! kernel_sigma = 1.0
//! corruptions = 6
//! corrupted_rows = 3
//! law = abs_normal(3,2)
//! cells = QTRK:0.99, MQTRK:0.99
//! iters = 2000
//! init = observed        # or zeros
//! seed = 1
//! output_dir = out
//! record_every = 1
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corruption::MagnitudeLaw;
use crate::deblur::InitialGuess;
use crate::error::{Error, Result};
use crate::solvers::Variant;

/// A `(variant, q)` pair; TRK always carries `q = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub variant: Variant,
    pub q: f64,
}

impl Cell {
    /// File-name friendly label such as `QTRK_q0.975`.
    pub fn label(&self) -> String {
        format!("{}_q{}", self.variant, self.q)
    }
}

impl FromStr for Cell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, q) = match s.split_once(':') {
            Some((name, q)) => (name, Some(q)),
            None => (s, None),
        };
        let variant: Variant = name.parse()?;
        let q = match (variant, q) {
            (Variant::Trk, _) => 1.0,
            (_, Some(q)) => parse_num(q.trim(), "cells")?,
            (_, None) => return Err(Error::config(format!("cell '{s}' needs a quantile, e.g. {variant}:0.9"))),
        };
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::config(format!("cell '{s}': q must lie in (0, 1]")));
        }
        Ok(Cell { variant, q })
    }
}

/// Parsed key-value pairs, consumed key by key so leftovers can be rejected.
#[derive(Debug, Clone)]
pub struct KeyValues {
    map: BTreeMap<String, (usize, String)>,
    base_dir: PathBuf,
}

impl KeyValues {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", idx + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::config(format!("line {}: empty key", idx + 1)));
            }
            if map.insert(key.clone(), (idx + 1, v.trim().to_string())).is_some() {
                return Err(Error::config(format!("line {}: duplicate key '{key}'", idx + 1)));
            }
        }
        Ok(Self {
            map,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key).map(|(_, v)| v)
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            Some(v) => parse_num(&v, key),
            None => Ok(default),
        }
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self
            .take(key)
            .ok_or_else(|| Error::config(format!("missing required key '{key}'")))?;
        parse_num(&v, key)
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.take(key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_num(s, key))
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(Error::config(format!("key '{key}' has an empty list")));
        }
        Ok(Some(items))
    }

    pub fn take_cells(&mut self, key: &str) -> Result<Option<Vec<Cell>>> {
        let Some(v) = self.take(key) else {
            return Ok(None);
        };
        let cells = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Cell>>>()?;
        if cells.is_empty() {
            return Err(Error::config(format!("key '{key}' lists no cells")));
        }
        Ok(Some(cells))
    }

    pub fn take_law(&mut self, key: &str, default: MagnitudeLaw) -> Result<MagnitudeLaw> {
        self.take(key).map_or(Ok(default), |v| v.parse())
    }

    /// A path value, resolved against the config file's directory.
    pub fn take_path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(|v| self.base_dir.join(v))
    }

    /// Fails on any key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.map.into_iter().next() {
            Some((k, (line, _))) => Err(Error::config(format!("line {line}: unknown key '{k}'"))),
            None => Ok(()),
        }
    }
}

fn parse_num<T: FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(format!("key '{key}': cannot parse '{v}'")))
}

/// Settings of a multi-trial experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub m: usize,
    pub l: usize,
    pub p: usize,
    pub n: usize,
    pub trials: usize,
    pub iters: usize,
    pub cells: Vec<Cell>,
    pub beta_tilde: Vec<f64>,
    pub beta_row_tilde: Vec<f64>,
    pub law: MagnitudeLaw,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub record_every: usize,
}

pub const DEFAULT_TRIALS: usize = 20;
pub const DEFAULT_ITERS: usize = 2000;

impl ExperimentConfig {
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let cfg = Self {
            m: kv.take_or("m", 25)?,
            l: kv.take_or("l", 5)?,
            p: kv.take_or("p", 4)?,
            n: kv.take_or("n", 10)?,
            trials: kv.take_or("trials", DEFAULT_TRIALS)?,
            iters: kv.take_or("iters", DEFAULT_ITERS)?,
            cells: kv.take_cells("cells")?.unwrap_or_else(|| {
                vec![Cell {
                    variant: Variant::Trk,
                    q: 1.0,
                }]
            }),
            beta_tilde: kv.take_list("beta_tilde")?.unwrap_or_else(|| vec![0.0]),
            beta_row_tilde: kv.take_list("beta_row_tilde")?.unwrap_or_else(|| vec![0.0]),
            law: kv.take_law("law", MagnitudeLaw::Normal { mean: 100.0, std: 20.0 })?,
            seed: kv.take_or("seed", 0)?,
            output_dir: kv.take_path("output_dir").unwrap_or_else(|| kv.base_dir.join("out")),
            record_every: kv.take_or("record_every", 1)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(KeyValues::load(path)?)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        Self::from_kv(KeyValues::parse(text, base_dir)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("m", self.m), ("l", self.l), ("p", self.p), ("n", self.n)] {
            if v == 0 {
                return Err(Error::config(format!("{k} must be at least 1")));
            }
        }
        if self.trials == 0 || self.iters == 0 || self.record_every == 0 {
            return Err(Error::config("trials, iters and record_every must be at least 1"));
        }
        self.law.validate()?;
        let shape = crate::Shape3::new(self.m, self.p, self.n);
        for &bt in &self.beta_tilde {
            for &br in &self.beta_row_tilde {
                // a dry run catches non-integer counts before any trial starts
                crate::corruption::generate_plan(shape, bt, br, self.law, 0)?;
            }
        }
        Ok(())
    }

    /// `(β̃, β̃_row)` pairs in row-major order.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        self.beta_tilde
            .iter()
            .flat_map(|&bt| self.beta_row_tilde.iter().map(move |&br| (bt, br)))
            .collect()
    }
}

/// Settings of the deblurring command.
#[derive(Debug, Clone, PartialEq)]
pub struct DeblurConfig {
    pub frames_dir: Option<PathBuf>,
    pub frames_t3b: Option<PathBuf>,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub kernel_size: usize,
    pub kernel_sigma: f64,
    pub corruptions: usize,
    pub corrupted_rows: usize,
    pub law: MagnitudeLaw,
    pub cells: Vec<Cell>,
    pub iters: usize,
    pub init: InitialGuess,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub record_every: usize,
}

impl DeblurConfig {
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let init = match kv.take("init").as_deref() {
            None | Some("observed") => InitialGuess::Observed,
            Some("zeros") => InitialGuess::Zeros,
            Some(other) => return Err(Error::config(format!("init must be observed or zeros, got '{other}'"))),
        };
        let cfg = Self {
            frames_dir: kv.take_path("frames_dir"),
            frames_t3b: kv.take_path("frames_t3b"),
            height: kv.take_or("height", 32)?,
            width: kv.take_or("width", 32)?,
            frames: kv.take_or("frames", 4)?,
            kernel_size: kv.take_or("kernel_size", 5)?,
            kernel_sigma: kv.take_or("kernel_sigma", 1.0)?,
            corruptions: kv.take_or("corruptions", 6)?,
            corrupted_rows: kv.take_or("corrupted_rows", 3)?,
            law: kv.take_law("law", MagnitudeLaw::AbsNormal { mean: 3.0, std: 2.0 })?,
            cells: kv.take_cells("cells")?.unwrap_or_else(|| {
                vec![
                    Cell { variant: Variant::Qtrk, q: 0.99 },
                    Cell { variant: Variant::Mqtrk, q: 0.99 },
                ]
            }),
            iters: kv.take_or("iters", DEFAULT_ITERS)?,
            init,
            seed: kv.take_or("seed", 0)?,
            output_dir: kv.take_path("output_dir").unwrap_or_else(|| kv.base_dir.join("out")),
            record_every: kv.take_or("record_every", 1)?,
        };
        kv.finish()?;
        if cfg.frames_dir.is_some() && cfg.frames_t3b.is_some() {
            return Err(Error::config("give at most one of frames_dir and frames_t3b"));
        }
        if cfg.iters == 0 || cfg.record_every == 0 || cfg.kernel_size == 0 {
            return Err(Error::config("iters, record_every and kernel_size must be at least 1"));
        }
        if cfg.corruptions > 0 && cfg.corrupted_rows == 0 {
            return Err(Error::config("corruptions need at least one corrupted row"));
        }
        cfg.law.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(KeyValues::load(path)?)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        Self::from_kv(KeyValues::parse(text, base_dir)?)
    }
}
