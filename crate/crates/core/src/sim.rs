//! Size and power studies on synthetic multi-source data.
//!
//! Setting I is Gaussian with AR(1) covariance `0.6^|i-j|`, Setting II is its
//! componentwise exponential and Setting III is multivariate t₅ with the same
//! scale matrix. Variants `a`, `b`, `c` change location, scale, or both for
//! group Y. Each source block is observed independently with probability
//! `p_X` or `p_Y`; rows with every source missing are redrawn.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Group, MultiSourceDataset, SourceSchema};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numeric::chi2_sf;
use crate::permutation::StandardC;
use crate::pipeline::{prepare, TestOptions};
use crate::rng;
use crate::stats::{form_for, project, Method, RankSums};

const TAG_DATA: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    I,
    II,
    III,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Null,
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimMethod {
    #[serde(rename = "BRISE-c")]
    BriseC,
    #[serde(rename = "BRISE-v")]
    BriseV,
    /// BRISE-c standardized with moments of standard (unrestricted)
    /// permutation instead of pattern-wise permutation.
    #[serde(rename = "BRISE-c(sp)")]
    BriseCsp,
}

impl fmt::Display for SimMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimMethod::BriseC => "BRISE-c",
            SimMethod::BriseV => "BRISE-v",
            SimMethod::BriseCsp => "BRISE-c(sp)",
        })
    }
}

impl FromStr for SimMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "brise-c" => Ok(SimMethod::BriseC),
            "brise-v" => Ok(SimMethod::BriseV),
            "brise-c(sp)" | "brise-c-sp" => Ok(SimMethod::BriseCsp),
            _ => Err(Error::InvalidConfig(format!(
                "unknown simulation method `{s}`"
            ))),
        }
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(Setting::I),
            "II" | "2" => Ok(Setting::II),
            "III" | "3" => Ok(Setting::III),
            _ => Err(Error::InvalidConfig(format!("unknown setting `{s}`"))),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "null" | "0" => Ok(Variant::Null),
            "a" => Ok(Variant::A),
            "b" => Ok(Variant::B),
            "c" => Ok(Variant::C),
            _ => Err(Error::InvalidConfig(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub setting: Setting,
    pub variant: Variant,
    pub d: usize,
    pub sources: usize,
    pub m: usize,
    pub n: usize,
    pub p_x: f64,
    pub p_y: f64,
    pub k: usize,
    pub theta: f64,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<SimMethod>,
    pub n_thres: usize,
    pub p_thres: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            setting: Setting::I,
            variant: Variant::Null,
            d: 200,
            sources: 2,
            m: 100,
            n: 100,
            p_x: 0.5,
            p_y: 0.5,
            k: 10,
            theta: 0.05,
            reps: 100,
            seed: 0,
            methods: vec![SimMethod::BriseC, SimMethod::BriseV],
            n_thres: 2,
            p_thres: 0.1,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.p_x > 0.0 && self.p_x <= 1.0 && self.p_y > 0.0 && self.p_y <= 1.0) {
            return bad(format!(
                "observation probabilities must be in (0, 1], got {} and {}",
                self.p_x, self.p_y
            ));
        }
        if self.sources == 0 || self.d == 0 || !self.d.is_multiple_of(self.sources) {
            return bad(format!(
                "d = {} is not divisible into {} sources",
                self.d, self.sources
            ));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.m == 0 || self.n == 0 {
            return bad("both groups need at least one row".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        Ok(())
    }

    fn test_options(&self) -> TestOptions {
        TestOptions {
            k: self.k,
            n_thres: self.n_thres,
            p_thres: self.p_thres,
            exec: Exec::Sequential,
            ..TestOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Family {
    Gaussian,
    LogNormal,
    T5,
}

/// Distribution of one group: `family(shift + scale * AR(rho))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Law {
    family: Family,
    rho: f64,
    scale: f64,
    shift: Vec<f64>,
}

/// Fills `out` with a stationary AR(1) draw: unit variance, lag-j
/// correlation `rho^j`.
pub fn ar1_into<R: Rng + ?Sized>(rng: &mut R, rho: f64, out: &mut [f64]) {
    let innov = (1.0 - rho * rho).sqrt();
    let mut prev = 0.0;
    for (i, v) in out.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        prev = if i == 0 { z } else { rho * prev + innov * z };
        *v = prev;
    }
}

impl Law {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        ar1_into(rng, self.rho, out);
        let mut s = self.scale;
        if self.family == Family::T5 {
            let w: f64 = ChiSquared::new(5.0).expect("valid dof").sample(rng);
            s /= (w / 5.0).sqrt();
        }
        for (j, v) in out.iter_mut().enumerate() {
            *v = self.shift.get(j).copied().unwrap_or(0.0) + s * *v;
            if self.family == Family::LogNormal {
                *v = v.exp();
            }
        }
    }
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R, d: usize, length: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| length * x / norm).collect()
}

fn sparse_alternating(d: usize) -> Vec<f64> {
    let df = d as f64;
    let h = 2.0 * df.ln() / df.sqrt();
    (1..=d)
        .map(|j| {
            if j <= (0.05 * df).floor() as usize {
                if j % 2 == 0 {
                    h
                } else {
                    -h
                }
            } else {
                0.0
            }
        })
        .collect()
}

/// Laws of X and Y for one replicate. Random directions are drawn from `rng`.
pub fn design<R: Rng + ?Sized>(cfg: &SimulationConfig, rng: &mut R) -> (Law, Law) {
    let d = cfg.d;
    let df = d as f64;
    let (ln, sq) = (df.ln(), df.sqrt());
    let family = match cfg.setting {
        Setting::I => Family::Gaussian,
        Setting::II => Family::LogNormal,
        Setting::III => Family::T5,
    };
    let x = Law {
        family,
        rho: 0.6,
        scale: 1.0,
        shift: Vec::new(),
    };
    let mut y = x.clone();
    match (cfg.setting, cfg.variant) {
        (_, Variant::Null) => {}
        (Setting::I, Variant::A) => y.shift = unit_direction(rng, d, 0.4 * ln),
        (Setting::I, Variant::B) => y.scale = 1.0 + 0.12 * ln / sq,
        (Setting::I, Variant::C) => {
            y.shift = unit_direction(rng, d, 0.1 * ln);
            y.rho = 0.3;
        }
        (Setting::II, Variant::A) | (Setting::III, Variant::A) => y.shift = sparse_alternating(d),
        (Setting::II, Variant::B) => y.scale = 1.0 + 0.15 * ln / sq,
        (Setting::II, Variant::C) => {
            y.shift = vec![0.25 * ln / sq; d];
            // Covariance σΣ_X, so the standard deviation scales by √σ.
            y.scale = (1.0 + 0.1 * (50.0 / df).powf(0.25)).sqrt();
        }
        (Setting::III, Variant::B) => {
            y.rho = 0.3;
            y.scale = 0.75f64.sqrt();
        }
        (Setting::III, Variant::C) => {
            y.shift = vec![0.4 * ln / sq; d];
            y.rho = 0.8;
        }
    }
    (x, y)
}

/// Draws rows of one group with block-wise missingness; all-missing rows
/// are redrawn from scratch.
pub fn sample_group<R: Rng + ?Sized>(
    law: &Law,
    group: Group,
    count: usize,
    p_obs: f64,
    schema: &SourceSchema,
    rng: &mut R,
) -> Vec<(Group, Vec<Option<Vec<f64>>>)> {
    let mut buf = vec![0.0; schema.total_dim()];
    (0..count)
        .map(|_| loop {
            law.sample(rng, &mut buf);
            let mask: Vec<bool> = (0..schema.len()).map(|_| rng.random_bool(p_obs)).collect();
            if mask.iter().any(|&m| m) {
                let blocks = mask
                    .iter()
                    .enumerate()
                    .map(|(l, &obs)| obs.then(|| buf[schema.range(l)].to_vec()))
                    .collect();
                break (group, blocks);
            }
        })
        .collect()
}

/// Dataset of replicate `rep`.
pub fn generate(cfg: &SimulationConfig, rep: usize) -> Result<MultiSourceDataset> {
    cfg.validate()?;
    let mut rng = rng::stream(rng::derive_seed(cfg.seed, TAG_DATA), rep as u64);
    let schema = SourceSchema::uniform(cfg.sources, cfg.d / cfg.sources)?;
    let (x, y) = design(cfg, &mut rng);
    let mut rows = sample_group(&x, Group::X, cfg.m, cfg.p_x, &schema, &mut rng);
    rows.extend(sample_group(
        &y,
        Group::Y,
        cfg.n,
        cfg.p_y,
        &schema,
        &mut rng,
    ));
    MultiSourceDataset::from_blocks(schema, rows)
}

/// Statistic and p-value of one method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub rep: usize,
    pub method: SimMethod,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

pub fn run_replicate(cfg: &SimulationConfig, rep: usize) -> Result<Vec<Draw>> {
    let data = generate(cfg, rep)?;
    let opts = cfg.test_options();
    let prep = prepare(&data, &opts)?;
    let part = &prep.partition;
    let u = RankSums::new(&prep.ranks, part).evaluate(part.is_x());
    let needs_pattern_moments = cfg.methods.iter().any(|&m| m != SimMethod::BriseCsp);
    let nm = if needs_pattern_moments {
        Some(prep.null_moments()?)
    } else {
        None
    };
    cfg.methods
        .iter()
        .map(|&method| {
            let (statistic, df) = match method {
                SimMethod::BriseC | SimMethod::BriseV => {
                    let m = if method == SimMethod::BriseC {
                        Method::BriseC
                    } else {
                        Method::BriseV
                    };
                    let form = form_for(m, nm.as_ref().expect("moments computed"))?;
                    (form.eval(&project(m, &u)), form.df())
                }
                SimMethod::BriseCsp => {
                    let sc = StandardC::new(&prep.ranks, part)?;
                    (sc.statistic(part.is_x()), sc.form().df())
                }
            };
            let p_value = chi2_sf(statistic, df);
            Ok(Draw {
                rep,
                method,
                statistic,
                df,
                p_value,
            })
        })
        .collect()
}

/// Rejection rate of one method in one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub setting: Setting,
    pub variant: Variant,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub p_x: f64,
    pub p_y: f64,
    pub method: SimMethod,
    pub reps: usize,
    pub rejections: usize,
    pub rate: f64,
    /// Binomial standard error of `rate`.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub rates: Vec<RateRow>,
    pub draws: Vec<Draw>,
}

/// Runs every replicate (concurrently under `exec`) and tallies rejections
/// at level `theta`.
pub fn simulate(cfg: &SimulationConfig, exec: Exec) -> Result<SimulationReport> {
    cfg.validate()?;
    let per_rep = exec.map(cfg.reps, |r| run_replicate(cfg, r));
    let mut draws = Vec::with_capacity(cfg.reps * cfg.methods.len());
    for r in per_rep {
        draws.extend(r?);
    }
    let rates = cfg
        .methods
        .iter()
        .map(|&method| {
            let rejections = draws
                .iter()
                .filter(|d| d.method == method && d.p_value <= cfg.theta)
                .count();
            let rate = rejections as f64 / cfg.reps as f64;
            RateRow {
                setting: cfg.setting,
                variant: cfg.variant,
                d: cfg.d,
                m: cfg.m,
                n: cfg.n,
                p_x: cfg.p_x,
                p_y: cfg.p_y,
                method,
                reps: cfg.reps,
                rejections,
                rate,
                se: (rate * (1.0 - rate) / cfg.reps as f64).sqrt(),
            }
        })
        .collect();
    Ok(SimulationReport {
        config: cfg.clone(),
        rates,
        draws,
    })
}

pub fn empirical_size(cfg: &SimulationConfig, exec: Exec) -> Result<SimulationReport> {
    if cfg.variant != Variant::Null {
        return Err(Error::InvalidConfig(
            "empirical size needs the null variant".into(),
        ));
    }
    simulate(cfg, exec)
}

pub fn estimate_power(cfg: &SimulationConfig, exec: Exec) -> Result<SimulationReport> {
    if cfg.variant == Variant::Null {
        return Err(Error::InvalidConfig(
            "power needs an alternative variant (a, b or c)".into(),
        ));
    }
    simulate(cfg, exec)
}

/// Power with `p_X = p_Y = p` for each `p` in `grid`.
pub fn power_curve(cfg: &SimulationConfig, grid: &[f64], exec: Exec) -> Result<Vec<RateRow>> {
    let mut rows = Vec::new();
    for &p in grid {
        let c = SimulationConfig {
            p_x: p,
            p_y: p,
            ..cfg.clone()
        };
        rows.extend(estimate_power(&c, exec)?.rates);
    }
    Ok(rows)
}

/// Tidy CSV, one row per method and configuration.
pub fn write_rates_csv(rows: &[RateRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json(report: &SimulationReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, report)?;
    f.flush()?;
    Ok(())
}
