mod common;

use std::process::Command;

use common::{csv_rows, pipeline, s, tdam, tree_hash, TINY_CONFIG};

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        assert_eq!(tdam(&["synth", "--n", "20", "--dim", "3", "--max-patches", "20", "--seed", seed, "--out", s(&out)]), 0);
        tree_hash(&out)
    };
    let a = run("a", "7");
    assert_eq!(a, run("b", "7"));
    assert_ne!(a, run("c", "8"));
    let side = std::fs::read_to_string(dir.path().join("a/bags/P0001.bag.json")).unwrap();
    assert!(side.contains("\"seed\": 7"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_tdam")).args(["synth", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("Usage"), "{err}");
    let json: serde_json::Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
    assert_eq!(json["exit_code"], 2);

    let out = Command::new(env!("CARGO_BIN_EXE_tdam")).arg("nosuch").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let ok = Command::new(env!("CARGO_BIN_EXE_tdam")).arg("--help").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn data_errors_exit_3_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("c.csv");
    std::fs::write(&cohort, "patient_id,time,event\nA,0,1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tdam"))
        .args(["stats", "km", "--cohort", s(&cohort), "--out", s(&dir.path().join("o"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    let json: serde_json::Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
    assert_eq!(json["error"], "data");
}

#[test]
fn rmst_table_has_the_reporting_columns() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    assert_eq!(tdam(&["synth", "--n", "200", "--dim", "2", "--max-patches", "20", "--seed", "3", "--out", s(&syn)]), 0);
    // risk = minus follow-up rank is a stand-in marker; any risk table works
    let rows = csv_rows(&syn.join("cohort.csv"));
    let mut risks = String::from("patient_id,risk\n");
    for r in &rows[1..] {
        risks.push_str(&format!("{},{}\n", r[0], -r[1].parse::<f64>().unwrap()));
    }
    let rpath = dir.path().join("risks.csv");
    std::fs::write(&rpath, risks).unwrap();
    let out = dir.path().join("st");
    assert_eq!(tdam(&["stats", "rmst", "--tau", "60", "--cohort", s(&syn.join("cohort.csv")), "--risks", s(&rpath), "--out", s(&out)]), 0);
    let table = csv_rows(&out.join("rmst.csv"));
    assert_eq!(table[0], ["Year", "RMST low", "RMST high", "Estimation", "LCI", "UCI", "p-value"]);
    assert_eq!(table.len(), 2);
    assert_eq!(table[1][0], "5");
    let (low, high, est): (f64, f64, f64) = (table[1][1].parse().unwrap(), table[1][2].parse().unwrap(), table[1][3].parse().unwrap());
    assert!(low > high);
    assert!((est - (low - high)).abs() < 1e-12);
    assert!(std::fs::read_to_string(out.join("rmst.csv")).unwrap().starts_with("# tdam "));

    // without --risks the command cannot stratify
    assert_eq!(tdam(&["stats", "rmst", "--cohort", s(&syn.join("cohort.csv")), "--out", s(&out)]), 2);
}

#[test]
fn commands_do_not_touch_inputs_and_jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    assert_eq!(tdam(&["synth", "--n", "30", "--min-patches", "4", "--max-patches", "9", "--dim", "6", "--out", s(&syn)]), 0);
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let before = tree_hash(&syn);
    let cohort = syn.join("cohort.csv");
    let (a, b) = (dir.path().join("j1"), dir.path().join("j3"));
    assert_eq!(tdam(&["train", "--cohort", s(&cohort), "--config", s(&cfg), "--jobs", "1", "--out", s(&a)]), 0);
    assert_eq!(tdam(&["train", "--cohort", s(&cohort), "--config", s(&cfg), "--jobs", "3", "--out", s(&b)]), 0);
    assert_eq!(tree_hash(&a), tree_hash(&b));
    assert_eq!(tree_hash(&syn), before);

    let report = std::fs::read_to_string(a.join("cv_report.txt")).unwrap();
    let last = report.lines().last().unwrap();
    assert!(last.starts_with("mean C-index of ") && last.contains(" ± "), "{last}");
    for f in 0..5 {
        assert!(a.join(format!("fold{f}.ckpt")).exists());
    }
    assert_eq!(csv_rows(&a.join("oof_risks.csv")).len(), 31);

    // an explicit d_in that disagrees with the bags is rejected
    let code = tdam(&["train", "--cohort", s(&cohort), "--config", s(&cfg), "--set", "model.d_in=5", "--out", s(&a)]);
    assert_eq!(code, 3);
}

#[test]
fn predict_and_erf_outputs() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "5");
    let pr = dir.path().join("pr");
    let bag = dir.path().join("synth/bags/P0002.bag");
    assert_eq!(tdam(&["predict", "--bag", s(&bag), "--ckpt", s(&dir.path().join("train")), "--out", s(&pr)]), 0);
    let rows = csv_rows(&pr.join("risks.csv"));
    assert_eq!(rows[0].len(), 10);
    assert_eq!(rows[1][0], "P0002");
    let risk: f64 = rows[1][1].parse().unwrap();
    assert!(risk > -4.0 && risk < 0.0);

    let erf = dir.path().join("erf");
    let ck = dir.path().join("train/fold0.ckpt");
    assert_eq!(tdam(&["erf", "--ckpt", s(&ck), "--grid", "20", "--format", "pgm", "--out", s(&erf)]), 0);
    let pgm = std::fs::read_to_string(erf.join("erf_full.pgm")).unwrap();
    let mut lines = pgm.lines();
    assert_eq!(lines.next(), Some("P2"));
    assert!(lines.next().unwrap().starts_with("# tdam "));
    assert_eq!(lines.next(), Some("5 5"));
    assert_eq!(tdam(&["erf", "--ckpt", s(&ck), "--bag", s(&bag), "--ablation", "no_srmamba", "--out", s(&erf)]), 0);
    assert!(erf.join("erf_no_srmamba.txt").exists());
    assert_eq!(tdam(&["erf", "--ckpt", s(&ck), "--ablation", "bogus", "--out", s(&erf)]), 2);

    let hm = csv_rows(&dir.path().join("heatmap/heatmap_P0001.csv"));
    assert_eq!(hm[0], ["x", "y", "bin0", "bin1", "bin2", "bin3"]);
    assert!(dir.path().join("heatmap/heatmap_P0001_bin3.pgm").exists());
}

#[test]
fn clinical_stats_commands() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    assert_eq!(tdam(&["synth", "--n", "150", "--dim", "2", "--max-patches", "20", "--seed", "9", "--out", s(&syn)]), 0);
    let cohort = syn.join("cohort.csv");
    let signal: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(syn.join("synth.json")).unwrap()).unwrap();
    let mut risks = String::from("patient_id,risk\n");
    for (k, v) in signal["signal"].as_object().unwrap() {
        risks.push_str(&format!("{k},{v}\n"));
    }
    let rpath = dir.path().join("risks.csv");
    std::fs::write(&rpath, risks).unwrap();
    let out = dir.path().join("st");
    let run = |sub: &[&str]| tdam(&[&["stats"], sub, &["--cohort", s(&cohort), "--risks", s(&rpath), "--out", s(&out)][..]].concat());
    assert_eq!(run(&["calib", "--horizon", "12", "--groups", "4"]), 0);
    assert_eq!(run(&["dca", "--horizon", "12", "--step", "0.1"]), 0);
    assert_eq!(run(&["nomogram", "--horizons", "12,24"]), 0);
    assert_eq!(run(&["boot", "--compare-covariate", "age", "--horizon", "12", "--resamples", "50"]), 0);

    let dca = csv_rows(&out.join("dca.csv"));
    assert_eq!(dca[0], ["Threshold", "Model", "Treat all", "Treat none"]);
    assert_eq!(dca.len(), 10);
    assert_eq!(dca[3][0], "0.3");
    let calib = csv_rows(&out.join("calib.csv"));
    assert_eq!(calib.len(), 5);
    let nomo: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("nomogram.json")).unwrap()).unwrap();
    assert_eq!(nomo["variables"].as_array().unwrap().len(), 3);
    let top = nomo["variables"].as_array().unwrap().iter().map(|v| v["points_hi"].as_f64().unwrap().max(v["points_lo"].as_f64().unwrap())).fold(0.0, f64::max);
    assert!((top - 100.0).abs() < 1e-9);
    let boot: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("boot.json")).unwrap()).unwrap();
    assert!(boot["lci"].as_f64().unwrap() <= boot["delta"].as_f64().unwrap());
    assert_eq!(boot["provenance"]["seed"], 0);
}

#[test]
fn netlink_from_files_matches_synthetic_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nl");
    assert_eq!(tdam(&["netlink", "--synthetic", "--n-features", "64", "--n-genes", "20", "--seed", "4", "--out", s(&out)]), 0);
    let rows = csv_rows(&out.join("centrality.csv"));
    assert_eq!(rows[0], ["Term", "Group", "Degree", "Eigenvector Centrality"]);
    assert_eq!(rows[1][3], "1.000");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("netlink.json")).unwrap()).unwrap();
    assert_eq!(json["top"], json["planted_hub"]);

    // the same data through the file interface
    let d = tdam_core::netlink::synth_network_data(&tdam_core::netlink::NetworkSynthConfig {
        n_features: 64,
        n_genes: 20,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let ids: Vec<String> = (0..d.times.len()).map(|i| format!("S{i:03}")).collect();
    let table = |names: &[String], m: &tdam_core::Matrix<f64>| {
        let mut t = format!("sample,{}\n", names.join(","));
        for (i, id) in ids.iter().enumerate() {
            let vals: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
            t.push_str(&format!("{id},{}\n", vals.join(",")));
        }
        t
    };
    let f = dir.path().join("f.csv");
    let g = dir.path().join("g.csv");
    let c = dir.path().join("c.csv");
    let r = dir.path().join("r.csv");
    std::fs::write(&f, table(&d.feature_names, &d.features)).unwrap();
    std::fs::write(&g, table(&d.gene_names, &d.genes)).unwrap();
    let mut cohort = String::from("patient_id,time,event\n");
    let mut risk = String::from("patient_id,risk\n");
    for (i, id) in ids.iter().enumerate() {
        cohort.push_str(&format!("{id},{},{}\n", d.times[i], d.events[i] as u8));
        risk.push_str(&format!("{id},{}\n", d.risk[i]));
    }
    std::fs::write(&c, cohort).unwrap();
    std::fs::write(&r, risk).unwrap();
    let out2 = dir.path().join("nl2");
    let code = tdam(&["netlink", "--features", s(&f), "--genes", s(&g), "--cohort", s(&c), "--risks", s(&r), "--seed", "4", "--out", s(&out2)]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read(out.join("centrality.csv")).unwrap(), std::fs::read(out2.join("centrality.csv")).unwrap());
}
