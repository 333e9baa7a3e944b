mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use residue_burn::pipeline::{run_pipeline, RunOptions};
use residue_burn::raster::read_bundle;
use residue_burn::synthetic::threshold_label;

use common::*;

fn cli(fx: &Fixture, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_residue-burn"))
        .current_dir(&fx.dir)
        .arg("--config")
        .arg(fx.config_path())
        .args(args)
        .output()
        .expect("spawn residue-burn")
}

fn ok(fx: &Fixture, args: &[&str]) {
    let out = cli(fx, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn same_file(a: &Path, b: &Path) {
    assert!(fs::read(a).unwrap() == fs::read(b).unwrap(), "{} differs from {}", a.display(), b.display());
}

/// Same CSV layout and text cells; numeric cells within relative `tol`
/// plus a small absolute floor for values near zero.
fn same_numbers(a: &Path, b: &Path, tol: f64) {
    let (ta, tb) = (fs::read_to_string(a).unwrap(), fs::read_to_string(b).unwrap());
    let (la, lb): (Vec<&str>, Vec<&str>) = (ta.lines().collect(), tb.lines().collect());
    assert_eq!(la.len(), lb.len(), "{}", a.display());
    for (ra, rb) in la.iter().zip(&lb) {
        let (ca, cb): (Vec<&str>, Vec<&str>) = (ra.split(',').collect(), rb.split(',').collect());
        assert_eq!(ca.len(), cb.len(), "{ra} vs {rb}");
        for (x, y) in ca.iter().zip(&cb) {
            match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= tol * x.abs().max(y.abs()) + 1e-7, "{ra} vs {rb}"),
                _ => assert_eq!(x, y, "{ra} vs {rb}"),
            }
        }
    }
}

#[test]
fn exit_codes() {
    let fx = shared_fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = format!("paths.output=\"{}\"", tmp.path().join("o").display());

    let empty_sweep = cli(fx, &["--set", &out, "--set", "thresholds.bais2_sweep=[]", "pipeline"]);
    assert_eq!(empty_sweep.status.code(), Some(2), "{}", String::from_utf8_lossy(&empty_sweep.stderr));
    assert!(String::from_utf8_lossy(&empty_sweep.stderr).starts_with("error: "));

    let bad_set = cli(fx, &["--set", "thresholds.primary", "pipeline"]);
    assert_eq!(bad_set.status.code(), Some(2));

    let missing = cli(fx, &["--set", &out, "--set", "paths.survey=\"absent.csv\"", "pipeline"]);
    assert_eq!(missing.status.code(), Some(3), "{}", String::from_utf8_lossy(&missing.stderr));

    let no_jobs = cli(fx, &["--jobs", "0", "correlate", "--indicators", "x.csv", "--out", "y.csv"]);
    assert_eq!(no_jobs.status.code(), Some(2));
}

/// Every subcommand, chained by hand, reproduces the pipeline's files.
#[test]
fn subcommands_match_the_pipeline() {
    let fx = shared_fixture();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let reference = run_pipeline(&fx.config(&root.join("pipeline")), &RunOptions::default()).unwrap().output;

    // Indices per scene, then composites and masks.
    let indices = root.join("indices");
    let mut scenes: Vec<PathBuf> = fs::read_dir(fx.dir.join("scenes")).unwrap().map(|e| e.unwrap().path()).collect();
    scenes.sort();
    for scene in &scenes {
        let out = indices.join(scene.file_name().unwrap());
        ok(fx, &["indices", "--scene", s(scene), "--out", s(&out)]);
        let bands: Vec<String> = read_bundle(&out).unwrap().grid.band_names().map(String::from).collect();
        assert_eq!(bands, ["NBR", "BAI", "BAIS2"]);
    }
    let composites = root.join("composites");
    ok(fx, &["--jobs", "3", "composite", "--scenes", s(&indices), "--out", s(&composites)]);
    same_file(&composites.join("scenes.csv"), &reference.join("scenes.csv"));
    let masks = root.join("masks");
    ok(fx, &["mask", "--composites", s(&composites), "--out", s(&masks)]);
    for t in [0.85, 0.90, 0.95] {
        let dir = format!("burn_bais2_{}", threshold_label(t));
        for f in ["header.json", "burned.f32"] {
            same_file(&masks.join(&dir).join(f), &reference.join("masks").join(&dir).join(f));
        }
    }

    // Zones and zonal statistics.
    let zones = root.join("zones");
    ok(fx, &["zones", "--out", s(&zones)]);
    for f in ["village_boxes.csv", "village_boxes.wkt", "plot_boxes.csv", "plot_boxes.wkt", "zone_log.txt"] {
        same_file(&zones.join(f), &reference.join("zones").join(f));
    }
    for kind in ["village", "plot"] {
        let name = format!("{kind}_bais2_0.90.csv");
        let out = root.join(&name);
        ok(fx, &[
            "zonal",
            "--mask",
            s(&masks.join("burn_bais2_0.90")),
            "--zones",
            s(&zones.join(format!("{kind}_boxes.csv"))),
            "--out",
            s(&out),
        ]);
        same_file(&out, &reference.join("zonal").join(&name));
    }

    // Survey, regressions, correlations and figures.
    let survey = root.join("survey");
    ok(fx, &["survey", "--out", s(&survey)]);
    for f in ["cleaning_log.txt", "rejected_rows.csv", "village_burn_share.csv"] {
        same_file(&survey.join(f), &reference.join("survey").join(f));
    }
    same_file(&survey.join("table1_summary.csv"), &reference.join("tables/table1_summary.csv"));

    let indicators = reference.join("indicators.csv");
    let tables = root.join("tables");
    ok(fx, &["regress", "--indicators", s(&indicators), "--out", s(&tables)]);
    // The indicator file holds six significant digits, so the tables agree
    // to that precision rather than bytewise.
    for entry in fs::read_dir(&tables).unwrap() {
        let p = entry.unwrap().path();
        same_numbers(&p, &reference.join("tables").join(p.file_name().unwrap()), 1e-4);
    }
    assert_eq!(fs::read_dir(&tables).unwrap().count(), 7);

    let corr = root.join("corr.csv");
    ok(fx, &["correlate", "--indicators", s(&indicators), "--out", s(&corr)]);
    same_numbers(&corr, &reference.join("tables/table2_correlations.csv"), 1e-4);

    let figures = root.join("figures");
    ok(fx, &["plot", "--indicators", s(&indicators), "--out", s(&figures)]);
    let (a, b) = (read_tree(&figures), read_tree(&reference.join("figures")));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    assert_eq!(a.len(), 7);
    let slope = |svg: &[u8]| -> f64 {
        let text = String::from_utf8_lossy(svg);
        let at = text.find("slope=").expect("fitted line") + 6;
        text[at..].split_whitespace().next().unwrap().parse().unwrap()
    };
    let (sa, sb) = (slope(&a["scatter_0.90.svg"]), slope(&b["scatter_0.90.svg"]));
    assert!((sa - sb).abs() < 1e-4, "{sa} vs {sb}");
    assert!(a.values().all(|svg| svg.starts_with(b"<svg") && svg.ends_with(b"</svg>\n")));
}

#[test]
fn fixture_subcommand_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = |name: &str| {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_residue-burn"))
            .args(["fixture", "--seed", "7", "--out", s(&out)])
            .status()
            .unwrap();
        assert!(status.success());
        out
    };
    let (a, b) = (gen("a"), gen("b"));
    assert_eq!(tree_difference(&a, &b), None);
    assert!(a.join("ground_truth.json").exists());
}
