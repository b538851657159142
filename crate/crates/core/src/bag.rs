//! Feature bags, survival records and planted-signal cohort synthesis.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{bail, Error, Result};
use crate::linalg::Matrix;
use crate::rng::substream;

/// One slide: an `N × D` matrix of patch embeddings plus the level-0 pixel
/// coordinates of each patch's top-left corner.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    pub slide_id: String,
    pub features: Matrix<f32>,
    pub coords: Vec<[i32; 2]>,
}

impl FeatureBag {
    pub fn new(slide_id: impl Into<String>, features: Matrix<f32>, coords: Vec<[i32; 2]>) -> Result<Self> {
        let bag = Self { slide_id: slide_id.into(), features, coords };
        bag.validate()?;
        Ok(bag)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.features.shape();
        if n == 0 || d == 0 {
            bail!(Data, "bag {} has empty feature matrix {n}x{d}", self.slide_id);
        }
        if self.coords.len() != n {
            bail!(Data, "bag {} has {} coordinate rows for {n} patches", self.slide_id, self.coords.len());
        }
        if let Some(pos) = self.features.as_slice().iter().position(|x| !x.is_finite()) {
            bail!(Data, "bag {} has a non-finite feature at patch {}", self.slide_id, pos / d);
        }
        Ok(())
    }

    #[inline]
    pub fn n_patches(&self) -> usize {
        self.features.rows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Patch order sorted by (y, x); ties keep their original order.
    pub fn coord_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n_patches()).collect();
        idx.sort_by_key(|&i| (self.coords[i][1], self.coords[i][0]));
        idx
    }

    /// Copy of the bag with patches in raster (y, x) order.
    pub fn sorted_by_coords(&self) -> Self {
        let order = self.coord_order();
        Self {
            slide_id: self.slide_id.clone(),
            features: self.features.select_rows(&order),
            coords: order.iter().map(|&i| self.coords[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalRecord {
    pub patient_id: String,
    /// Follow-up time, months by convention.
    pub time: f64,
    /// `true` for an observed death, `false` for censoring.
    pub event: bool,
    /// Named covariates; `None` marks a missing cell.
    pub covariates: BTreeMap<String, Option<f64>>,
}

impl SurvivalRecord {
    pub fn new(patient_id: impl Into<String>, time: f64, event: bool) -> Self {
        Self { patient_id: patient_id.into(), time, event, covariates: BTreeMap::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time > 0.0) || !self.time.is_finite() {
            bail!(Data, "patient {} has non-positive or non-finite time {}", self.patient_id, self.time);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cohort {
    pub records: Vec<SurvivalRecord>,
    /// patient id → bag file path (relative paths are resolved by the caller).
    pub bag_paths: BTreeMap<String, String>,
}

impl Cohort {
    pub fn new(records: Vec<SurvivalRecord>, bag_paths: BTreeMap<String, String>) -> Result<Self> {
        let c = Self { records, bag_paths };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            r.validate()?;
            if seen.insert(r.patient_id.as_str(), i).is_some() {
                bail!(Data, "duplicate patient_id {}", r.patient_id);
            }
        }
        for key in self.bag_paths.keys() {
            if !seen.contains_key(key.as_str()) {
                bail!(Data, "bag path for unknown patient {key}");
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn index_of(&self, patient_id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.patient_id == patient_id)
    }

    /// Covariate column; errors if any record lacks a value.
    pub fn covariate(&self, name: &str) -> Result<Vec<f64>> {
        self.records
            .iter()
            .map(|r| {
                r.covariates
                    .get(name)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::Data(format!("patient {} has no value for {name}", r.patient_id)))
            })
            .collect()
    }
}

/// Baseline hazard per month of the synthetic time model.
pub const SYNTH_BASE_RATE: f64 = 0.01;
/// Log-hazard gain per unit of planted signal fraction.
pub const SYNTH_SIGNAL_GAIN: f64 = 8.0;
/// Mean shift of signal patches along the shifted dimensions.
pub const SYNTH_SHIFT: f64 = 1.5;
/// Number of leading feature dimensions carrying the shift.
pub const SYNTH_SHIFTED_DIMS: usize = 8;
/// Patch edge length in level-0 pixels, used for synthetic coordinates.
pub const SYNTH_PATCH_PX: i32 = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub n_patches: (usize, usize),
    pub dim: usize,
    pub signal_fraction: (f64, f64),
    pub censor_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 200,
            n_patches: (16, 64),
            dim: 512,
            signal_fraction: (0.0, 1.0),
            censor_rate: 0.3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCohort {
    pub cohort: Cohort,
    pub bags: Vec<FeatureBag>,
    /// Realized signal fraction per patient (ground truth, not a model input).
    pub signal: Vec<f64>,
    pub base_rate: f64,
    pub signal_gain: f64,
    /// Rate of the independent exponential censoring clock (0 = none).
    pub censoring_rate: f64,
}

fn censoring_rate_for(target: f64, lo: f64, hi: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    // P(censored) = E_s[rc / (rc + λ(s))], s ~ U(lo, hi); midpoint quadrature.
    let grid = 2000;
    let frac = |rc: f64| -> f64 {
        (0..grid)
            .map(|i| {
                let s = lo + (hi - lo) * (i as f64 + 0.5) / grid as f64;
                let lam = SYNTH_BASE_RATE * (SYNTH_SIGNAL_GAIN * s).exp();
                rc / (rc + lam)
            })
            .sum::<f64>()
            / grid as f64
    };
    let (mut a, mut b) = (-30.0f64, 30.0f64);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if frac(m.exp()) < target {
            a = m;
        } else {
            b = m;
        }
    }
    (0.5 * (a + b)).exp()
}

/// Planted-signal cohort: signal patches come from a shifted Gaussian and
/// survival times are exponential with rate `r0·exp(k·s)` in the realized
/// signal fraction `s`.
pub fn synth_cohort(cfg: &SynthConfig) -> Result<SynthCohort> {
    let (nlo, nhi) = cfg.n_patches;
    let (slo, shi) = cfg.signal_fraction;
    if cfg.n_patients < 10 {
        bail!(Data, "need at least 10 patients, got {}", cfg.n_patients);
    }
    if nlo == 0 || nlo > nhi {
        bail!(Data, "invalid patch-count range [{nlo}, {nhi}]");
    }
    if cfg.dim == 0 {
        bail!(Data, "feature dimension must be positive");
    }
    if !(0.0..=1.0).contains(&slo) || !(0.0..=1.0).contains(&shi) || slo > shi {
        bail!(Data, "invalid signal fraction range [{slo}, {shi}]");
    }
    if !(0.0..=1.0).contains(&cfg.censor_rate) {
        bail!(Data, "censor rate {} outside [0, 1]", cfg.censor_rate);
    }
    if cfg.censor_rate >= 1.0 {
        bail!(Degenerate, "censor rate 1 leaves no events");
    }
    let rc = censoring_rate_for(cfg.censor_rate, slo, shi);
    let shifted = SYNTH_SHIFTED_DIMS.min(cfg.dim);

    let mut records = Vec::with_capacity(cfg.n_patients);
    let mut bag_paths = BTreeMap::new();
    let mut bags = Vec::with_capacity(cfg.n_patients);
    let mut signal = Vec::with_capacity(cfg.n_patients);
    let width = (cfg.n_patients as f64).log10().floor() as usize + 1;

    for p in 0..cfg.n_patients {
        let mut rng = substream(cfg.seed, "cohort", p as u64);
        let id = format!("P{:0width$}", p + 1, width = width.max(4));
        let n = rng.random_range(nlo..=nhi);
        let target = slo + (shi - slo) * rng.random::<f64>();
        let n_signal = ((target * n as f64).round() as usize).min(n);
        let s = n_signal as f64 / n as f64;

        let mut is_signal: Vec<bool> = (0..n).map(|i| i < n_signal).collect();
        is_signal.shuffle(&mut rng);
        let mut data = Vec::with_capacity(n * cfg.dim);
        for &sig in &is_signal {
            for j in 0..cfg.dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                let mu = if sig && j < shifted { SYNTH_SHIFT } else { 0.0 };
                data.push((z + mu) as f32);
            }
        }
        let side = (n as f64).sqrt().ceil() as usize;
        let mut cells: Vec<usize> = (0..side * side).collect();
        cells.shuffle(&mut rng);
        let (ox, oy) = (rng.random_range(0..64) * SYNTH_PATCH_PX, rng.random_range(0..64) * SYNTH_PATCH_PX);
        let coords = cells[..n]
            .iter()
            .map(|&c| [ox + (c % side) as i32 * SYNTH_PATCH_PX, oy + (c / side) as i32 * SYNTH_PATCH_PX])
            .collect();

        let rate = SYNTH_BASE_RATE * (SYNTH_SIGNAL_GAIN * s).exp();
        let t_event: f64 = Exp::new(rate).map_err(|e| Error::Data(format!("{e}")))?.sample(&mut rng);
        let t_cens = if rc > 0.0 {
            Exp::new(rc).map_err(|e| Error::Data(format!("{e}")))?.sample(&mut rng)
        } else {
            f64::INFINITY
        };
        let event = t_event <= t_cens;
        let time = t_event.min(t_cens).max(1e-6);

        let age = 62.0 + 11.0 * rng.sample::<f64, _>(StandardNormal);
        let stage_u = 0.6 * s + 0.4 * rng.random::<f64>();
        let stage = (1.0 + (4.0 * stage_u).floor()).min(4.0);
        let mut rec = SurvivalRecord::new(id.clone(), time, event);
        rec.covariates.insert("age".into(), Some((age * 10.0).round() / 10.0));
        rec.covariates.insert("stage".into(), Some(stage));
        records.push(rec);
        bag_paths.insert(id.clone(), format!("bags/{id}.bag"));
        bags.push(FeatureBag::new(id, Matrix::from_vec(n, cfg.dim, data), coords)?);
        signal.push(s);
    }

    Ok(SynthCohort {
        cohort: Cohort::new(records, bag_paths)?,
        bags,
        signal,
        base_rate: SYNTH_BASE_RATE,
        signal_gain: SYNTH_SIGNAL_GAIN,
        censoring_rate: rc,
    })
}
