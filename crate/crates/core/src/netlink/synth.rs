#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSynthConfig {
    pub n_samples: usize,
    pub n_features: usize,
    /// Features driven by the latent prognostic factor.
    pub n_signal_features: usize,
    pub n_genes: usize,
    pub seed: u64,
}

impl Default for NetworkSynthConfig {
    fn default() -> Self {
        Self { n_samples: 200, n_features: 512, n_signal_features: 10, n_genes: 50, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkData {
    pub features: Matrix<f64>,
    pub feature_names: Vec<String>,
    pub risk: Vec<f64>,
    pub genes: Matrix<f64>,
    pub gene_names: Vec<String>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    /// Column of the planted hub gene.
    pub hub: usize,
}

/// Planted-hub cohort. A latent factor `z` drives the signal features, the
/// risk score, survival and the hub gene (rank correlation about 0.6 with each
/// signal feature). A decoy gene mixes weak `z` with a second prognostic
/// factor `w`; two more genes follow `w` alone; the rest are noise.
pub fn synth_network_data(cfg: &NetworkSynthConfig) -> Result<NetworkData> {
    if cfg.n_samples < 10 || cfg.n_signal_features == 0 || cfg.n_signal_features > cfg.n_features || cfg.n_genes < 4 {
        bail!(Data, "invalid network synthesis settings {cfg:?}");
    }
    let n = cfg.n_samples;
    let mut rng = substream(cfg.seed, "network", 0);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let z: Vec<f64> = (0..n).map(|_| normal()).collect();
    let w: Vec<f64> = (0..n).map(|_| normal()).collect();
    let features = Matrix::from_fn(n, cfg.n_features, |r, c| {
        if c < cfg.n_signal_features { z[r] + 0.7 * normal() } else { normal() }
    });
    let risk: Vec<f64> = z.iter().map(|v| v + 0.5 * normal()).collect();
    let raw = Matrix::from_fn(n, cfg.n_genes, |r, c| match c {
        0 => z[r] + normal(),
        1 => 0.45 * z[r] + w[r] + 0.6 * normal(),
        2 | 3 => w[r] + 0.5 * normal(),
        _ => normal(),
    });

    let mut rng = substream(cfg.seed, "network", 1);
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    for r in 0..n {
        let rate = 0.05 * (0.8 * z[r] + 0.8 * w[r]).exp();
        let t: f64 = Exp::new(rate).map_err(|e| crate::Error::Data(format!("{e}")))?.sample(&mut rng);
        let c: f64 = rng.random_range(0.0..60.0);
        times.push(t.min(c));
        events.push(t <= c);
    }

    let mut perm: Vec<usize> = (0..cfg.n_genes).collect();
    perm.shuffle(&mut rng);
    let genes = Matrix::from_fn(n, cfg.n_genes, |r, c| raw[(r, perm[c])]);
    let hub = perm.iter().position(|&g| g == 0).unwrap_or(0);
    Ok(NetworkData {
        features,
        feature_names: (0..cfg.n_features).map(|k| format!("channel_{k}")).collect(),
        risk,
        genes,
        gene_names: (0..cfg.n_genes).map(|k| format!("GENE{k:03}")).collect(),
        times,
        events,
        hub,
    })
}
