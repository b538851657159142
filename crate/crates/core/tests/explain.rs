use rand::seq::SliceRandom;
use tdam_core::autodiff::Tape;
use tdam_core::bag::FeatureBag;
use tdam_core::explain::{
    attention_heatmap, erf_map_bag, input_gradient_intensity, min_max_columns, ErfMap, ErfTarget, Relevance,
};
use tdam_core::model::{Ablation, ModelConfig, ModelParams};
use tdam_core::rng::substream;
use tdam_core::{Error, Matrix};

fn cfg(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        d_in: 6,
        d_model: 8,
        n_heads: 2,
        n_agents: 3,
        n_landmarks: 4,
        ssm_state_dim: 3,
        agent_bias_side: 3,
        ablation,
        ..ModelConfig::default()
    }
}

fn bag(n: usize, seed: u64) -> FeatureBag {
    use rand::Rng as _;
    let mut rng = substream(seed, "explain-bag", 0);
    let feats = Matrix::from_fn(n, 6, |_, _| rng.random_range(-1.0f32..1.0));
    let mut cells: Vec<usize> = (0..n * 2).collect();
    cells.shuffle(&mut rng);
    let coords = cells[..n].iter().map(|&c| [(c % 7) as i32 * 256, (c / 7) as i32 * 256]).collect();
    FeatureBag::new(format!("S{seed}"), feats, coords).unwrap()
}

fn params(c: &ModelConfig, seed: u64) -> ModelParams<f32> {
    ModelParams::init(c, &mut substream(seed, "explain-init", 0))
}

#[test]
fn min_max_examples() {
    let mut raw = vec![[0.2, 1.0, 0.5, 3.0], [0.8, 1.0, 0.3, 1.0]];
    min_max_columns(&mut raw);
    assert_eq!(raw[0], [0.0, 0.0, 1.0, 1.0]);
    assert_eq!(raw[1], [1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn heatmap_rows_follow_the_bag() {
    let c = cfg(Ablation::Full);
    let p = params(&c, 1);
    let b = bag(7, 2);
    let h = attention_heatmap(&b, &p, &c, Relevance::GradientWeighted).unwrap();
    assert_eq!(h.rows.len(), 7);
    for (row, xy) in h.rows.iter().zip(&b.coords) {
        assert_eq!([row.x, row.y], *xy);
        assert!(row.weights.iter().all(|w| (0.0..=1.0).contains(w)));
    }
    for bin in 0..4 {
        let col: Vec<f64> = h.rows.iter().map(|r| r.weights[bin]).collect();
        assert_eq!(col.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(col.iter().copied().fold(0.0, f64::max), 1.0);
    }
    assert_eq!(tdam_core::explain::HeatmapTable::HEADER.len(), 6);

    let shared = attention_heatmap(&b, &p, &c, Relevance::SharedAttention).unwrap();
    for r in &shared.rows {
        assert!(r.weights.iter().all(|&w| w == r.weights[0]));
    }
}

#[test]
fn heatmap_rejects_broken_params() {
    let c = cfg(Ablation::Full);
    let mut p = params(&c, 1);
    p.get_mut("clf.w")[(0, 0)] = f32::NAN;
    let err = attention_heatmap(&bag(4, 0), &p, &c, Relevance::GradientWeighted).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err:?}");
}

#[test]
fn affine_map_has_uniform_receptive_field() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Matrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64 * 0.1));
    let w = tape.constant(Matrix::from_vec(3, 2, vec![1.0, -2.0, 0.5, 0.25, -1.0, 3.0]));
    let y = tape.matmul(x, w);
    let v = input_gradient_intensity(&mut tape, x, y);
    let want = (1.0f64 - 2.0).abs() + (0.5f64 + 0.25).abs() + (-1.0f64 + 3.0).abs();
    assert!(v.iter().all(|&i| (i - want).abs() < 1e-15), "{v:?}");
}

#[test]
fn erf_is_positive_and_padding_is_zero() {
    for ab in [Ablation::Full, Ablation::NoAgent, Ablation::NoSrmamba] {
        let c = cfg(ab);
        let m = erf_map_bag(&bag(7, 3), &params(&c, 4), &c, ErfTarget::ClassToken).unwrap();
        assert_eq!(m.side, 3);
        assert!(m.values[..7].iter().sum::<f64>() > 0.0, "{ab:?}");
        assert_eq!(&m.values[7..], &[0.0, 0.0]);
    }
}

#[test]
fn class_token_field_vanishes_without_the_transformer() {
    // agent attention skips the class token and the scan sees it first, so
    // nothing downstream of the projection reaches it
    let c = cfg(Ablation::NoTransformer);
    let m = erf_map_bag(&bag(7, 3), &params(&c, 4), &c, ErfTarget::ClassToken).unwrap();
    assert!(m.values.iter().all(|&v| v == 0.0));
    let centre = erf_map_bag(&bag(7, 3), &params(&c, 4), &c, ErfTarget::CenterToken).unwrap();
    assert!(centre.values.iter().sum::<f64>() > 0.0);
}

fn differing_fraction(a: &ErfMap, b: &ErfMap) -> f64 {
    let (sa, sb) = (a.log_scaled(), b.log_scaled());
    sa.iter().zip(&sb).filter(|(x, y)| (*x - *y).abs() > 1e-6).count() as f64 / sa.len() as f64
}

#[test]
fn ablation_changes_the_receptive_field() {
    let b = bag(16, 5);
    let full = cfg(Ablation::Full);
    let p = params(&full, 6);
    for target in [ErfTarget::ClassToken, ErfTarget::CenterToken] {
        let a = erf_map_bag(&b, &p, &full, target).unwrap();
        let nt = erf_map_bag(&b, &p, &cfg(Ablation::NoTransformer), target).unwrap();
        assert!(differing_fraction(&a, &nt) >= 0.01, "{target:?}");
    }
}

#[test]
fn erf_ignores_patch_listing_order() {
    let c = cfg(Ablation::Full);
    let p = params(&c, 8);
    let b = bag(11, 9);
    let mut perm: Vec<usize> = (0..11).collect();
    perm.shuffle(&mut substream(1, "perm", 0));
    let shuffled = FeatureBag::new(
        "S9",
        b.features.select_rows(&perm),
        perm.iter().map(|&i| b.coords[i]).collect(),
    )
    .unwrap();
    let m1 = erf_map_bag(&b, &p, &c, ErfTarget::ClassToken).unwrap();
    let m2 = erf_map_bag(&shuffled, &p, &c, ErfTarget::ClassToken).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn erf_emission_formats() {
    let m = ErfMap { side: 2, values: vec![0.0, 1.0, 3.0, 0.0] };
    let pgm = m.to_pgm();
    assert!(pgm.starts_with("P2\n2 2\n255\n"));
    assert!(pgm.ends_with("255 0\n"));
    let text = m.to_text();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.split(' ').count() == 2));
}
