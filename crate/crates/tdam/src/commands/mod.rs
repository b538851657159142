//! Subcommand bodies.

pub mod stats;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand_distr::{Distribution, StandardNormal};
use serde_json::json;
use tdam_core::bag::{synth_cohort, Cohort, FeatureBag, SynthConfig};
use tdam_core::explain::{attention_heatmap, erf_map_bag, ErfTarget, HeatmapTable, Relevance};
use tdam_core::model::{predict_bag, Ablation, ModelConfig};
use tdam_core::netlink::{
    build_network, synth_network_data, CorrEdge, ElasticNetConfig, NetworkConfig, NetworkSynthConfig, NodeRef,
    CENTRALITY_HEADER,
};
use tdam_core::rng::substream;
use tdam_core::survival::{concordance_index, RiskOutput, N_BINS};
use tdam_core::trainer::{fold_plan, init_params, predict_risks, train_fold, CvReport, FoldResult, TrainConfig, TrainSet};
use tdam_core::Matrix;

use crate::bagio::{load_bag, save_bag};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::cli::{
    AblateArgs, Context, ErfArgs, EvalArgs, FormatArg, HeatmapArgs, NetlinkArgs, PredictArgs, RelevanceArg, SynthArgs,
    TargetArg, TrainArgs,
};
use crate::error::{CliError, Result};
use crate::manifest::{load_cohort_manifest, write_cohort_manifest};
use crate::output::{num, read_matrix, read_risks, OutDir};

/// `f(0..n)` on up to `jobs` threads, results in index order.
pub fn par_map<T: Send>(jobs: usize, n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                slots.lock().expect("worker panicked")[i] = Some(v);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|v| v.expect("every index ran")).collect()
}

/// Cohort records with their bags; bag paths resolve against the manifest's directory.
pub fn load_cohort_bags(manifest: &Path, jobs: usize) -> Result<(Cohort, Vec<FeatureBag>)> {
    let cohort = load_cohort_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new(""));
    let paths = cohort
        .records
        .iter()
        .map(|r| {
            cohort
                .bag_paths
                .get(&r.patient_id)
                .map(|p| base.join(p))
                .ok_or_else(|| CliError::data(format!("patient {} has no bag", r.patient_id)))
        })
        .collect::<Result<Vec<PathBuf>>>()?;
    let bags = par_map(jobs, paths.len(), |i| load_bag(&paths[i])).into_iter().collect::<Result<Vec<_>>>()?;
    let dim = bags.first().map_or(0, FeatureBag::dim);
    if let Some(b) = bags.iter().find(|b| b.dim() != dim) {
        return Err(CliError::data(format!("bag {} has dimension {}, expected {dim}", b.slide_id, b.dim())));
    }
    Ok((cohort, bags))
}

/// The configured model with `d_in` taken from the data unless set explicitly.
fn model_for(ctx: &Context, dim: usize) -> Result<ModelConfig> {
    let mut cfg = ctx.run.model.clone();
    if !ctx.run.d_in_set {
        cfg.d_in = dim;
    } else if cfg.d_in != dim {
        return Err(tdam_core::Error::Shape(format!("model.d_in is {} but bags have dimension {dim}", cfg.d_in)).into());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth(ctx: &Context, a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_patients: a.n,
        n_patches: (a.min_patches, a.max_patches),
        dim: a.dim,
        signal_fraction: (a.min_signal, a.max_signal),
        censor_rate: a.censor_rate,
        seed: ctx.seed,
    };
    let sc = synth_cohort(&cfg)?;
    let out = OutDir::create(&ctx.out, ctx.provenance())?;
    for bag in &sc.bags {
        save_bag(bag, &out.path(&sc.cohort.bag_paths[&bag.slide_id]), &out.provenance)?;
    }
    write_cohort_manifest(&sc.cohort, &out.path("cohort.csv"), &out.provenance)?;
    let signal: serde_json::Map<String, serde_json::Value> =
        sc.cohort.records.iter().zip(&sc.signal).map(|(r, s)| (r.patient_id.clone(), json!(s))).collect();
    out.json(
        "synth.json",
        json!({
            "n_patients": a.n,
            "n_patches": [a.min_patches, a.max_patches],
            "dim": a.dim,
            "signal_fraction": [a.min_signal, a.max_signal],
            "censor_rate": a.censor_rate,
            "base_rate": sc.base_rate,
            "signal_gain": sc.signal_gain,
            "censoring_clock_rate": sc.censoring_rate,
            "signal": signal,
        }),
    )
}

fn train_set(cohort: &Cohort, bags: &[FeatureBag]) -> TrainSet {
    TrainSet { features: bags.iter().map(|b| b.features.clone()).collect(), times: cohort.times(), events: cohort.events() }
}

/// All folds of a cross-validation, in fold order.
pub fn cross_validate_par(data: &TrainSet, mcfg: &ModelConfig, tcfg: &TrainConfig, jobs: usize) -> Result<Vec<FoldResult>> {
    let plan = fold_plan(&data.events, tcfg)?;
    par_map(jobs, plan.len(), |f| train_fold(data, &plan[f].0, &plan[f].1, mcfg, tcfg, f)).into_iter().map(|r| Ok(r?)).collect()
}

fn cv_json(report: &CvReport, results: &[FoldResult]) -> serde_json::Value {
    json!({
        "folds": results.iter().map(|r| json!({
            "fold": r.fold,
            "best_epoch": r.best_epoch,
            "cindex": r.best_cindex,
            "epochs_run": r.epochs_run,
        })).collect::<Vec<_>>(),
        "mean": report.mean,
        "std": report.std,
        "summary": report.summary(),
    })
}

pub fn train(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let (cohort, bags) = load_cohort_bags(&a.cohort, ctx.jobs)?;
    let mcfg = model_for(ctx, bags[0].dim())?;
    let data = train_set(&cohort, &bags);
    let tcfg = &ctx.run.train;
    let results = cross_validate_par(&data, &mcfg, tcfg, ctx.jobs)?;
    let report = CvReport::from_results(&results);
    let out = OutDir::create(&ctx.out, ctx.provenance())?;

    let plan = fold_plan(&data.events, tcfg)?;
    let mut oof = Vec::new();
    let mut history = Vec::new();
    for (r, (_, val)) in results.iter().zip(&plan) {
        let ck = Checkpoint {
            model: mcfg.clone(),
            params: r.best_params.clone(),
            fold: r.fold,
            best_epoch: r.best_epoch,
            best_cindex: r.best_cindex,
            bin_edges: r.bin_edges,
            provenance: out.provenance.clone(),
        };
        save_checkpoint(&ck, &out.path(&format!("fold{}.ckpt", r.fold)))?;
        for (&i, risk) in val.iter().zip(predict_risks(&data, val, &r.best_params, &mcfg)?) {
            oof.push((i, r.fold, risk));
        }
        for h in &r.history {
            history.push(vec![r.fold.to_string(), h.epoch.to_string(), num(h.train_loss), num(h.val_cindex)]);
        }
    }
    oof.sort_by_key(|&(i, _, _)| i);
    let oof_rows: Vec<Vec<String>> =
        oof.iter().map(|&(i, f, r)| vec![cohort.records[i].patient_id.clone(), f.to_string(), num(r)]).collect();
    out.csv("oof_risks.csv", &["patient_id", "fold", "risk"], &oof_rows)?;
    out.csv("history.csv", &["fold", "epoch", "train_loss", "val_cindex"], &history)?;
    out.json("cv_report.json", cv_json(&report, &results))?;
    let mut txt = String::new();
    for (f, e, c) in &report.folds {
        txt.push_str(&format!("fold {f}: C-index {c:.3} at epoch {e}\n"));
    }
    txt.push_str(&report.summary());
    txt.push('\n');
    out.text("cv_report.txt", &txt)?;
    println!("{}", report.summary());
    Ok(())
}

/// Checkpoint files named directly or found as `fold*.ckpt` inside directories.
fn expand_checkpoints(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    name.starts_with("fold") && name.ends_with(".ckpt")
                })
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(CliError::data(format!("no fold*.ckpt in {}", p.display())));
            }
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Risk-head outputs averaged over checkpoints, one per bag.
fn ensemble_outputs(bags: &[FeatureBag], ckpts: &[Checkpoint], jobs: usize) -> Result<Vec<RiskOutput>> {
    par_map(jobs, bags.len(), |i| {
        let mut acc = RiskOutput { logits: [0.0; N_BINS], hazards: [0.0; N_BINS], survival: [0.0; N_BINS], risk: 0.0 };
        for ck in ckpts {
            let logits = predict_bag(&bags[i], &ck.params, &ck.model)?;
            let o = RiskOutput::from_logits(&logits.map(f64::from));
            for k in 0..N_BINS {
                acc.logits[k] += o.logits[k] / ckpts.len() as f64;
                acc.hazards[k] += o.hazards[k] / ckpts.len() as f64;
                acc.survival[k] += o.survival[k] / ckpts.len() as f64;
            }
            acc.risk += o.risk / ckpts.len() as f64;
        }
        Ok(acc)
    })
    .into_iter()
    .collect()
}

fn risk_rows(ids: &[String], outs: &[RiskOutput]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["patient_id".to_string(), "risk".to_string()];
    header.extend((1..=N_BINS).map(|k| format!("hazard_{k}")));
    header.extend((1..=N_BINS).map(|k| format!("survival_{k}")));
    let rows = ids
        .iter()
        .zip(outs)
        .map(|(id, o)| {
            let mut r = vec![id.clone(), num(o.risk)];
            r.extend(o.hazards.iter().map(|&v| num(v)));
            r.extend(o.survival.iter().map(|&v| num(v)));
            r
        })
        .collect();
    (header, rows)
}

fn load_checkpoints(paths: &[PathBuf]) -> Result<(Vec<PathBuf>, Vec<Checkpoint>)> {
    let files = expand_checkpoints(paths)?;
    let ckpts = files.iter().map(|f| load_checkpoint(f)).collect::<Result<Vec<_>>>()?;
    Ok((files, ckpts))
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let (files, ckpts) = load_checkpoints(&a.ckpt)?;
    let (cohort, bags) = load_cohort_bags(&a.cohort, ctx.jobs)?;
    let outs = ensemble_outputs(&bags, &ckpts, ctx.jobs)?;
    let risks: Vec<f64> = outs.iter().map(|o| o.risk).collect();
    let cindex = concordance_index(&risks, &cohort.times(), &cohort.events())?;
    let out = OutDir::create(&ctx.out, ctx.provenance())?;
    let ids: Vec<String> = cohort.records.iter().map(|r| r.patient_id.clone()).collect();
    let (header, rows) = risk_rows(&ids, &outs);
    out.csv("risks.csv", &header, &rows)?;
    let names: Vec<String> =
        files.iter().map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()).collect();
    out.json(
        "eval.json",
        json!({
            "cindex": cindex,
            "n_patients": cohort.len(),
            "n_events": cohort.events().iter().filter(|&&e| e).count(),
            "checkpoints": names,
        }),
    )?;
    println!("C-index {cindex:.3} on {} patients", cohort.len());
    Ok(())
}

pub fn predict(ctx: &Context, a: &PredictArgs) -> Result<()> {
    let (_, ckpts) = load_checkpoints(&a.ckpt)?;
    let (ids, bags) = match &a.cohort {
        Some(c) => {
            let (cohort, bags) = load_cohort_bags(c, ctx.jobs)?;
            (cohort.records.iter().map(|r| r.patient_id.clone()).collect(), bags)
        }
        None => {
            let bags = a.bag.iter().map(|p| load_bag(p)).collect::<Result<Vec<_>>>()?;
            (bags.iter().map(|b| b.slide_id.clone()).collect::<Vec<_>>(), bags)
        }
    };
    let outs = ensemble_outputs(&bags, &ckpts, ctx.jobs)?;
    let out = OutDir::create(&ctx.out, ctx.provenance())?;
    let (header, rows) = risk_rows(&ids, &outs);
    out.csv("risks.csv", &header, &rows)
}

/// Heatmap values on the patch grid, one raster per bin.
fn heatmap_pgms(table: &HeatmapTable, patch_px: i32) -> Result<Vec<String>> {
    if patch_px <= 0 {
        return Err(CliError::Usage("--patch-px must be positive".into()));
    }
    let x0 = table.rows.iter().map(|r| r.x).min().unwrap_or(0);
    let y0 = table.rows.iter().map(|r| r.y).min().unwrap_or(0);
    let cell = |r: &tdam_core::explain::HeatmapRow| (((r.x - x0) / patch_px) as usize, ((r.y - y0) / patch_px) as usize);
    let w = table.rows.iter().map(|r| cell(r).0 + 1).max().unwrap_or(1);
    let h = table.rows.iter().map(|r| cell(r).1 + 1).max().unwrap_or(1);
    Ok((0..N_BINS)
        .map(|b| {
            let mut img = vec![0u32; w * h];
            for r in &table.rows {
                let (cx, cy) = cell(r);
                img[cy * w + cx] = (r.weights[b] * 255.0).round() as u32;
            }
            let mut s = format!("P2\n{w} {h}\n255\n");
            for row in img.chunks(w) {
                let line: Vec<String> = row.iter().map(u32::to_string).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
            s
        })
        .collect())
}

pub fn heatmap(ctx: &Context, a: &HeatmapArgs) -> Result<()> {
    let bag = load_bag(&a.bag)?;
    let ck = load_checkpoint(&a.ckpt)?;
    let mode = match a.relevance {
        RelevanceArg::Gradient => Relevance::GradientWeighted,
        RelevanceArg::Shared => Relevance::SharedAttention,
    };
    let table = attention_heatmap(&bag, &ck.params, &ck.model, mode)?;
    let out = OutDir::create(&ctx.out, ctx.provenance())?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![r.x.to_string(), r.y.to_string()];
            v.extend(r.weights.iter().map(|&w| num(w)));
            v
        })
        .collect();
    out.csv(&format!("heatmap_{}.csv", bag.slide_id), &HeatmapTable::HEADER, &rows)?;
    if a.pgm {
        for (b, img) in heatmap_pgms(&table, a.patch_px)?.iter().enumerate() {
            out.pgm(&format!("heatmap_{}_bin{b}.pgm", bag.slide_id), img)?;
        }
    }
    Ok(())
}

/// Seeded standard-normal bag laid out row-major on the smallest square grid.
fn grid_bag(n: usize, dim: usize, seed: u64) -> Result<FeatureBag> {
    let mut rng = substream(seed, "erf-grid", 0);
    let side = (1..).find(|s| s * s >= n).unwrap_or(1);
    let feats = Matrix::from_fn(n, dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z as f32
    });
    let coords = (0..n).map(|i| [(i % side) as i32 * 256, (i / side) as i32 * 256]).collect();
    Ok(FeatureBag::new("grid", feats, coords)?)
}

pub fn erf(ctx: &Context, a: &ErfArgs) -> Result<()> {
    let bag = a.bag.as_deref().map(load_bag).transpose()?;
    let (mut cfg, params) = match &a.ckpt {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            (ck.model, ck.params)
        }
        None => {
            let cfg = match &bag {
                Some(b) => model_for(ctx, b.dim())?,
                None => ctx.run.model.clone(),
            };
            let params = init_params(&cfg, ctx.seed, 0);
            (cfg, params)
        }
    };
    if let Some(name) = &a.ablation {
        cfg.ablation = Ablation::parse(name).ok_or_else(|| CliError::Usage(format!("unknown ablation {name:?}")))?;
    }
    if a.grid == 0 {
        return Err(CliError::Usage("--grid must be positive".into()));
    }
    let bag = match bag {
        Some(b) => b,
        None => grid_bag(a.grid, cfg.d_in, ctx.seed)?,
    };
    let target = match a.target {
        TargetArg::Class => ErfTarget::ClassToken,
        TargetArg::Center => ErfTarget::CenterToken,
    };
    let map = erf_map_bag(&bag, &params, &cfg, target)?;
    let out = OutDir::create(&ctx.out, ctx.provenance())?;
    let stem = format!("erf_{}", cfg.ablation.name());
    match a.format {
        FormatArg::Text => out.text(&format!("{stem}.txt"), &map.to_text()),
        FormatArg::Pgm => out.pgm(&format!("{stem}.pgm"), &map.to_pgm()),
    }
}

fn node_name(n: NodeRef, features: &[String], genes: &[String]) -> String {
    match n {
        NodeRef::Feature(i) => features[i].clone(),
        NodeRef::Gene(g) => genes[g].clone(),
        NodeRef::Risk => "risk".into(),
    }
}

/// Aligns the feature, gene, cohort and risk tables on patient id.
fn network_inputs(a: &NetlinkArgs) -> Result<(Matrix<f64>, Vec<String>, Vec<f64>, Matrix<f64>, Vec<String>, Vec<f64>, Vec<bool>)> {
    let need = |p: &Option<PathBuf>, flag: &str| p.clone().ok_or_else(|| CliError::Usage(format!("netlink needs --{flag}")));
    let (fid, fnames, fvals) = read_matrix(&need(&a.features, "features")?)?;
    let (gid, gnames, gvals) = read_matrix(&need(&a.genes, "genes")?)?;
    let cohort = load_cohort_manifest(&need(&a.cohort, "cohort")?)?;
    let risks = read_risks(&need(&a.risks, "risks")?)?;
    let gene_row: std::collections::HashMap<&str, usize> = gid.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let (mut f, mut g, mut r, mut t, mut e) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, id) in fid.iter().enumerate() {
        let missing = || CliError::data(format!("sample {id} is missing from an input table"));
        let gi = *gene_row.get(id.as_str()).ok_or_else(missing)?;
        let rec = cohort.index_of(id).map(|k| &cohort.records[k]).ok_or_else(missing)?;
        r.push(*risks.get(id).ok_or_else(missing)?);
        f.extend_from_slice(&fvals[i]);
        g.extend_from_slice(&gvals[gi]);
        t.push(rec.time);
        e.push(rec.event);
    }
    let n = fid.len();
    Ok((Matrix::from_vec(n, fnames.len(), f), fnames, r, Matrix::from_vec(n, gnames.len(), g), gnames, t, e))
}

pub fn netlink(ctx: &Context, a: &NetlinkArgs) -> Result<()> {
    let mut hub = None;
    let (features, fnames, risk, genes, gnames, times, events) = if a.synthetic {
        let d = synth_network_data(&NetworkSynthConfig {
            n_samples: a.n_samples,
            n_features: a.n_features,
            n_genes: a.n_genes,
            seed: ctx.seed,
            ..NetworkSynthConfig::default()
        })?;
        hub = Some(d.gene_names[d.hub].clone());
        (d.features, d.feature_names, d.risk, d.genes, d.gene_names, d.times, d.events)
    } else {
        network_inputs(a)?
    };
    let cfg = NetworkConfig {
        min_abs_rho: a.min_abs_rho,
        max_fdr: a.max_fdr,
        gene_p: a.gene_p,
        binary_adjacency: a.binary,
        enet: ElasticNetConfig { alpha: a.alpha, seed: ctx.seed, ..ElasticNetConfig::default() },
    };
    let res = build_network(&features, &fnames, &risk, &genes, &gnames, &times, &events, &cfg)?;
    let out = OutDir::create(&ctx.out, ctx.provenance())?;

    let edge_row = |e: &CorrEdge, kind: &str| {
        vec![node_name(e.a, &fnames, &gnames), node_name(e.b, &fnames, &gnames), kind.into(), num(e.rho), num(e.p), num(e.q)]
    };
    let mut edges: Vec<Vec<String>> = res.feature_risk_edges.iter().map(|e| edge_row(e, "feature-risk")).collect();
    edges.extend(res.feature_gene_edges.iter().map(|e| edge_row(e, "feature-gene")));
    out.csv("edges.csv", &["Source", "Target", "Type", "rho", "p", "q"], &edges)?;

    let rows: Vec<Vec<String>> = res
        .table
        .rows
        .iter()
        .map(|r| vec![r.term.clone(), r.group.label().into(), r.degree.to_string(), format!("{:.3}", r.centrality)])
        .collect();
    out.csv("centrality.csv", &CENTRALITY_HEADER, &rows)?;
    out.json(
        "netlink.json",
        json!({
            "core_features": res.core_features.iter().map(|&i| fnames[i].clone()).collect::<Vec<_>>(),
            "enet_lambda": res.enet_lambda,
            "prognostic_genes": res.prognostic_genes.iter().map(|&(g, hr)| json!({"gene": gnames[g], "hr": hr})).collect::<Vec<_>>(),
            "skipped_genes": res.skipped_genes.iter().map(|&g| gnames[g].clone()).collect::<Vec<_>>(),
            "centrality": res.table.rows.iter().map(|r| json!({"term": r.term, "score": r.centrality})).collect::<Vec<_>>(),
            "top": res.table.rows.first().map(|r| r.term.clone()),
            "planted_hub": hub,
        }),
    )?;
    if let Some(top) = res.table.rows.first() {
        println!("top node {} ({})", top.term, top.group.label());
    }
    Ok(())
}

pub fn ablate(ctx: &Context, a: &AblateArgs) -> Result<()> {
    let (cohort, bags) = load_cohort_bags(&a.cohort, ctx.jobs)?;
    let base = model_for(ctx, bags[0].dim())?;
    let data = train_set(&cohort, &bags);
    let mut rows = Vec::new();
    let mut txt = String::new();
    let folds = ctx.run.train.folds;
    for ab in Ablation::ALL {
        let cfg = ModelConfig { ablation: ab, ..base.clone() };
        let results = cross_validate_par(&data, &cfg, &ctx.run.train, ctx.jobs)?;
        let report = CvReport::from_results(&results);
        let mut row = vec![ab.name().to_string(), num(report.mean), num(report.std)];
        row.extend(report.folds.iter().map(|f| num(f.2)));
        rows.push(row);
        txt.push_str(&format!("{}: {}\n", ab.name(), report.summary()));
    }
    let mut header = vec!["Variant".to_string(), "Mean C-index".to_string(), "SD".to_string()];
    header.extend((0..folds).map(|f| format!("Fold {f}")));
    let out = OutDir::create(&ctx.out, ctx.provenance())?;
    out.csv("ablation.csv", &header, &rows)?;
    out.text("ablation.txt", &txt)?;
    print!("{txt}");
    Ok(())
}
