//! `stats` subcommands.

use serde_json::json;
use tdam_core::bag::SurvivalRecord;
use tdam_core::survival::concordance_index;
use tdam_core::survstats::{
    bootstrap_auc_compare, calibration_curve, coxph_fit, dca_curve, km_fit, logrank_test, median_stratify,
    multivariable_pipeline, nomogram_build, nomogram_score, rmst_compare, timeroc_auc, CoxFit, RiskGroup,
};
use tdam_core::{Error, Matrix};

use crate::cli::{Context, ModelInput, StatsCommand, StatsInput};
use crate::error::{CliError, Result};
use crate::manifest::load_cohort_manifest;
use crate::output::{num, read_risks, OutDir};

/// Cohort records joined with the optional risk table, in cohort order.
struct StatsData {
    records: Vec<SurvivalRecord>,
    risk: Option<Vec<f64>>,
}

impl StatsData {
    fn load(input: &StatsInput) -> Result<Self> {
        let cohort = load_cohort_manifest(&input.cohort)?;
        let Some(path) = &input.risks else {
            return Ok(Self { records: cohort.records, risk: None });
        };
        let risks = read_risks(path)?;
        if let Some(id) = risks.keys().find(|id| cohort.index_of(id).is_none()) {
            return Err(CliError::data(format!("risk table patient {id} is not in the cohort")));
        }
        let records: Vec<SurvivalRecord> =
            cohort.records.into_iter().filter(|r| risks.contains_key(&r.patient_id)).collect();
        if records.is_empty() {
            return Err(CliError::data("no patient has both follow-up and a risk score"));
        }
        let risk = records.iter().map(|r| risks[&r.patient_id]).collect();
        Ok(Self { records, risk: Some(risk) })
    }

    fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    fn risk(&self, cmd: &str) -> Result<&[f64]> {
        self.risk.as_deref().ok_or_else(|| CliError::Usage(format!("stats {cmd} needs --risks")))
    }

    fn value(&self, i: usize, name: &str) -> Result<Option<f64>> {
        if name == "risk" {
            return Ok(Some(self.risk("with a risk predictor")?[i]));
        }
        self.records[i]
            .covariates
            .get(name)
            .copied()
            .ok_or_else(|| CliError::Usage(format!("unknown covariate {name:?}")))
    }
}

/// Complete-case design: predictor names, row indices kept, and the matrix.
struct Design {
    names: Vec<String>,
    rows: Vec<usize>,
    x: Matrix<f64>,
}

impl Design {
    fn build(data: &StatsData, requested: &[String]) -> Result<Self> {
        let names: Vec<String> = if requested.is_empty() {
            let mut n: Vec<String> = data.risk.iter().map(|_| "risk".to_string()).collect();
            let mut covs: Vec<String> = data.records.iter().flat_map(|r| r.covariates.keys().cloned()).collect();
            covs.sort();
            covs.dedup();
            n.extend(covs);
            n
        } else {
            requested.to_vec()
        };
        if names.is_empty() {
            return Err(CliError::Usage("no predictors: give --risks or --covariates".into()));
        }
        let mut rows = Vec::new();
        let mut vals = Vec::new();
        'patients: for i in 0..data.records.len() {
            let mut row = Vec::with_capacity(names.len());
            for n in &names {
                match data.value(i, n)? {
                    Some(v) => row.push(v),
                    None => continue 'patients,
                }
            }
            rows.push(i);
            vals.extend(row);
        }
        if rows.is_empty() {
            return Err(CliError::data("no patient has every predictor"));
        }
        let x = Matrix::from_vec(rows.len(), names.len(), vals);
        Ok(Self { names, rows, x })
    }

    fn times(&self, data: &StatsData) -> Vec<f64> {
        self.rows.iter().map(|&i| data.records[i].time).collect()
    }

    fn events(&self, data: &StatsData) -> Vec<bool> {
        self.rows.iter().map(|&i| data.records[i].event).collect()
    }

    fn fit(&self, data: &StatsData) -> Result<CoxFit> {
        Ok(coxph_fit(&self.times(data), &self.events(data), &self.x)?)
    }

    fn dropped(&self, data: &StatsData) -> usize {
        data.records.len() - self.rows.len()
    }
}

fn out(ctx: &Context) -> Result<OutDir> {
    OutDir::create(&ctx.out, ctx.provenance())
}

pub fn run(ctx: &Context, cmd: StatsCommand) -> Result<()> {
    match cmd {
        StatsCommand::Km(input) => km(ctx, &input),
        StatsCommand::Logrank(input) => logrank(ctx, &input),
        StatsCommand::Cox(m) => cox(ctx, &m),
        StatsCommand::Timeroc { data, horizons } => timeroc(ctx, &data, &horizons),
        StatsCommand::Rmst { data, tau } => rmst(ctx, &data, &tau),
        StatsCommand::Boot { data, compare, compare_covariate, horizon, resamples } => {
            boot(ctx, &data, compare.as_deref(), compare_covariate.as_deref(), horizon, resamples)
        }
        StatsCommand::Calib { model, horizon, groups } => calib(ctx, &model, horizon, groups),
        StatsCommand::Dca { model, horizon, step } => dca(ctx, &model, horizon, step),
        StatsCommand::Nomogram { model, horizons } => nomogram(ctx, &model, &horizons),
    }
}

fn km(ctx: &Context, input: &StatsInput) -> Result<()> {
    let data = StatsData::load(input)?;
    let (times, events) = (data.times(), data.events());
    let groups: Vec<(&str, Vec<usize>)> = match &data.risk {
        Some(risk) => {
            let (_, g) = median_stratify(risk)?;
            [RiskGroup::Low, RiskGroup::High]
                .into_iter()
                .map(|want| (want.name(), (0..g.len()).filter(|&i| g[i] == want).collect()))
                .collect()
        }
        None => vec![("all", (0..times.len()).collect())],
    };
    let mut rows = Vec::new();
    for (name, idx) in groups {
        let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
        let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
        let c = km_fit(&t, &e)?;
        for k in 0..c.times.len() {
            rows.push(vec![
                name.to_string(),
                num(c.times[k]),
                c.at_risk[k].to_string(),
                c.events[k].to_string(),
                num(c.survival[k]),
                num(c.variance[k].sqrt()),
            ]);
        }
    }
    out(ctx)?.csv("km.csv", &["group", "time", "n_risk", "n_event", "survival", "std_err"], &rows)
}

fn groups_of(risk: &[f64]) -> Result<(f64, Vec<RiskGroup>)> {
    Ok(median_stratify(risk)?)
}

fn logrank(ctx: &Context, input: &StatsInput) -> Result<()> {
    let data = StatsData::load(input)?;
    let (median, g) = groups_of(data.risk("logrank")?)?;
    let idx: Vec<usize> = g.iter().map(|&x| (x == RiskGroup::High) as usize).collect();
    let lr = logrank_test(&data.times(), &data.events(), &idx)?;
    out(ctx)?.json(
        "logrank.json",
        json!({
            "median_risk": median,
            "groups": ["low", "high"],
            "n": [idx.iter().filter(|&&i| i == 0).count(), idx.iter().filter(|&&i| i == 1).count()],
            "observed": lr.observed,
            "expected": lr.expected,
            "chi2": lr.chi2,
            "df": lr.df,
            "p": lr.p,
        }),
    )
}

fn cox(ctx: &Context, m: &ModelInput) -> Result<()> {
    let data = StatsData::load(&m.data)?;
    let d = Design::build(&data, &m.covariates)?;
    let vars: Vec<(String, Vec<f64>)> = d.names.iter().enumerate().map(|(j, n)| (n.clone(), d.x.column(j))).collect();
    let res = multivariable_pipeline(&d.times(&data), &d.events(&data), &vars)?;
    let mut rows: Vec<Vec<String>> = res
        .univariable
        .iter()
        .map(|u| {
            vec![
                "univariable".into(),
                u.name.clone(),
                num(u.beta),
                num(u.hr),
                num(u.hr_lo),
                num(u.hr_hi),
                num(u.p),
                u.promoted.to_string(),
            ]
        })
        .collect();
    if let Some(j) = &res.joint {
        for (k, name) in res.promoted.iter().enumerate() {
            let (lo, hi) = j.hr_ci()[k];
            rows.push(vec![
                "multivariable".into(),
                name.clone(),
                num(j.beta[k]),
                num(j.hr()[k]),
                num(lo),
                num(hi),
                num(j.wald_p[k]),
                String::new(),
            ]);
        }
    }
    let o = out(ctx)?;
    o.csv("cox.csv", &["Model", "Variable", "beta", "HR", "HR lower 95%", "HR upper 95%", "p-value", "Promoted"], &rows)?;
    o.json(
        "cox.json",
        json!({
            "n": d.rows.len(),
            "dropped_incomplete": d.dropped(&data),
            "promoted": res.promoted,
            "joint": res.joint.as_ref().map(|j| json!({
                "loglik": j.loglik,
                "loglik_null": j.loglik_null,
                "iterations": j.iterations,
                "n_events": j.n_events,
            })),
        }),
    )
}

fn timeroc(ctx: &Context, input: &StatsInput, horizons: &[f64]) -> Result<()> {
    let data = StatsData::load(input)?;
    let risk = data.risk("timeroc")?;
    let (t, e) = (data.times(), data.events());
    let mut rows = Vec::new();
    for &h in horizons {
        let auc = match timeroc_auc(risk, &t, &e, h) {
            Ok(a) => a,
            Err(Error::Undefined(_)) => f64::NAN,
            Err(err) => return Err(err.into()),
        };
        rows.push(vec![num(h), num(auc)]);
    }
    out(ctx)?.csv("timeroc.csv", &["Horizon", "AUC"], &rows)
}

fn rmst(ctx: &Context, input: &StatsInput, taus: &[f64]) -> Result<()> {
    let data = StatsData::load(input)?;
    let (_, g) = groups_of(data.risk("rmst")?)?;
    let low: Vec<bool> = g.iter().map(|&x| x == RiskGroup::Low).collect();
    let (t, e) = (data.times(), data.events());
    let mut rows = Vec::new();
    for &tau in taus {
        // group 1 is the low-risk group, so the estimate is low minus high
        let c = rmst_compare(&t, &e, &low, tau)?;
        rows.push(vec![
            num(tau / 12.0),
            num(c.group1.value),
            num(c.group0.value),
            num(c.estimate),
            num(c.lci),
            num(c.uci),
            num(c.p),
        ]);
    }
    out(ctx)?.csv("rmst.csv", &["Year", "RMST low", "RMST high", "Estimation", "LCI", "UCI", "p-value"], &rows)
}

fn boot(
    ctx: &Context,
    input: &StatsInput,
    compare: Option<&std::path::Path>,
    covariate: Option<&str>,
    horizon: f64,
    resamples: usize,
) -> Result<()> {
    let data = StatsData::load(input)?;
    let a_all = data.risk("boot")?;
    let b_all: Vec<Option<f64>> = match (compare, covariate) {
        (Some(p), _) => {
            let other = read_risks(p)?;
            data.records
                .iter()
                .map(|r| {
                    other
                        .get(&r.patient_id)
                        .copied()
                        .map(Some)
                        .ok_or_else(|| CliError::data(format!("patient {} missing from {}", r.patient_id, p.display())))
                })
                .collect::<Result<_>>()?
        }
        (None, Some(name)) => (0..data.records.len()).map(|i| data.value(i, name)).collect::<Result<_>>()?,
        (None, None) => return Err(CliError::Usage("stats boot needs --compare or --compare-covariate".into())),
    };
    let keep: Vec<usize> = (0..b_all.len()).filter(|&i| b_all[i].is_some()).collect();
    let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let (t, e) = (pick(&data.times()), keep.iter().map(|&i| data.records[i].event).collect::<Vec<bool>>());
    let a = pick(a_all);
    let b: Vec<f64> = keep.iter().map(|&i| b_all[i].expect("kept")).collect();
    let res = bootstrap_auc_compare(&a, &b, &t, &e, horizon, resamples, ctx.seed)?;
    out(ctx)?.json(
        "boot.json",
        json!({
            "horizon": horizon,
            "resamples": resamples,
            "n": keep.len(),
            "auc_a": timeroc_auc(&a, &t, &e, horizon)?,
            "auc_b": timeroc_auc(&b, &t, &e, horizon)?,
            "delta": res.delta,
            "lci": res.lo,
            "uci": res.hi,
            "redrawn": res.redrawn,
        }),
    )
}

/// Predicted survival at `horizon` from a Cox fit on the design.
fn predicted_survival(d: &Design, fit: &CoxFit, horizon: f64) -> Vec<f64> {
    (0..d.x.rows()).map(|i| fit.survival(d.x.row(i), horizon)).collect()
}

fn calib(ctx: &Context, m: &ModelInput, horizon: f64, groups: usize) -> Result<()> {
    let data = StatsData::load(&m.data)?;
    let d = Design::build(&data, &m.covariates)?;
    let fit = d.fit(&data)?;
    let pred = predicted_survival(&d, &fit, horizon);
    let curve = calibration_curve(&pred, &d.times(&data), &d.events(&data), horizon, groups)?;
    let rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|p| vec![p.group.to_string(), p.n.to_string(), num(p.mean_predicted), num(p.observed), num(p.lo), num(p.hi)])
        .collect();
    out(ctx)?.csv("calib.csv", &["Group", "N", "Predicted", "Observed", "Lower", "Upper"], &rows)
}

fn dca(ctx: &Context, m: &ModelInput, horizon: f64, step: f64) -> Result<()> {
    if !(step > 0.0 && step < 1.0) {
        return Err(CliError::Usage("--step must lie in (0, 1)".into()));
    }
    let data = StatsData::load(&m.data)?;
    let d = Design::build(&data, &m.covariates)?;
    let fit = d.fit(&data)?;
    let pred: Vec<f64> = predicted_survival(&d, &fit, horizon).iter().map(|s| 1.0 - s).collect();
    let thresholds: Vec<f64> = (1..).map(|k| (k as f64 * step * 1e12).round() / 1e12).take_while(|&p| p < 1.0).collect();
    let curve = dca_curve(&pred, &d.times(&data), &d.events(&data), horizon, &thresholds)?;
    let rows: Vec<Vec<String>> =
        curve.iter().map(|r| vec![num(r.threshold), num(r.model), num(r.treat_all), num(r.treat_none)]).collect();
    out(ctx)?.csv("dca.csv", &["Threshold", "Model", "Treat all", "Treat none"], &rows)
}

fn nomogram(ctx: &Context, m: &ModelInput, horizons: &[f64]) -> Result<()> {
    let data = StatsData::load(&m.data)?;
    let d = Design::build(&data, &m.covariates)?;
    let fit = d.fit(&data)?;
    let ranges: Vec<(f64, f64)> = fit.x_min.iter().zip(&fit.x_max).map(|(&a, &b)| (a, b)).collect();
    let model = nomogram_build(&fit, &d.names, &ranges)?;
    let mut rows = Vec::new();
    let mut totals = Vec::new();
    for (k, &i) in d.rows.iter().enumerate() {
        let s = nomogram_score(&model, d.x.row(k), horizons)?;
        let mut row = vec![data.records[i].patient_id.clone()];
        row.extend(s.points.iter().map(|&p| num(p)));
        row.extend([num(s.total), num(s.lp)]);
        row.extend(s.survival.iter().map(|&p| num(p)));
        rows.push(row);
        totals.push(s.total);
    }
    let cindex = concordance_index(&totals, &d.times(&data), &d.events(&data))?;
    let mut header = vec!["patient_id".to_string()];
    header.extend(d.names.iter().map(|n| format!("Points {n}")));
    header.extend(["Total points".to_string(), "Linear predictor".to_string()]);
    header.extend(horizons.iter().map(|h| format!("Survival {}", num(*h))));
    let max_total = (model.variables.len() * 100) as f64;
    let grid: Vec<f64> = (0..=(max_total / 10.0) as usize).map(|k| k as f64 * 10.0).collect();
    let table = model.survival_table(&grid, horizons);
    let o = out(ctx)?;
    o.csv("nomogram_scores.csv", &header, &rows)?;
    o.json(
        "nomogram.json",
        json!({
            "scale": model.scale,
            "variables": model.variables.iter().map(|v| json!({
                "name": v.name,
                "beta": v.beta,
                "lo": v.lo,
                "hi": v.hi,
                "reference": v.reference,
                "points_lo": v.points(v.lo, model.scale),
                "points_hi": v.points(v.hi, model.scale),
            })).collect::<Vec<_>>(),
            "horizons": horizons,
            "total_points": grid.iter().zip(&table).map(|(t, s)| json!({"total": t, "survival": s})).collect::<Vec<_>>(),
            "cindex": cindex,
            "n": d.rows.len(),
            "dropped_incomplete": d.dropped(&data),
        }),
    )
}
