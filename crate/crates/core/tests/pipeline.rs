mod common;

use std::fs;
use std::path::Path;

use residue_burn::pipeline::{run_pipeline, Manifest, PipelineConfig, RunOptions, SceneStatus, MANIFEST_FILE};
use residue_burn::raster::{read_bundle, write_bundle, Band, RasterGrid, Scene};

use common::*;

fn options() -> RunOptions {
    RunOptions::default()
}

fn staging_of(output: &Path) -> std::path::PathBuf {
    output.with_file_name(format!(".{}.staging", output.file_name().unwrap().to_string_lossy()))
}

#[test]
fn refuses_to_overwrite_a_foreign_directory() {
    let fx = shared_fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("notes.txt"), "keep me").unwrap();
    let err = run_pipeline(&fx.config(&out), &options()).unwrap_err();
    assert!(err.is_validation(), "{err}");
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "keep me");
}

#[test]
fn failed_run_leaves_nothing_behind() {
    let fx = shared_fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = fx.config(&out);
    cfg.paths.survey = Some(tmp.path().join("missing.csv"));
    let err = run_pipeline(&cfg, &options()).unwrap_err();
    assert!(!err.is_validation(), "a missing input is a runtime failure: {err}");
    assert!(!out.exists());
    assert!(!staging_of(&out).exists());
}

#[test]
fn rerun_replaces_output_and_timing_is_opt_in() {
    let fx = shared_fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = fx.config(&out);
    let first = run_pipeline(&cfg, &options()).unwrap();
    assert!(first.manifest.get("timing.wall_seconds").is_none());
    let timed = RunOptions {
        record_timing: true,
        ..options()
    };
    let second = run_pipeline(&cfg, &timed).unwrap();
    assert!(second.manifest.get("timing.wall_seconds").is_some());
    let on_disk = Manifest::read(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(on_disk, second.manifest);
    assert!(!staging_of(&out).exists());

    // Same settings elsewhere: same digest, and the output path is not recorded.
    let other = fx.config(&tmp.path().join("elsewhere"));
    assert_eq!(cfg.digest(), other.digest());
    let used = fs::read_to_string(out.join("config_used.toml")).unwrap();
    assert!(!used.contains("output"), "{used}");
    assert!(!used.contains(&out.display().to_string()));
    let reparsed = PipelineConfig::from_toml(&used, &[]).unwrap();
    assert_eq!(reparsed.thresholds, cfg.thresholds);
}

#[cfg(unix)]
#[test]
fn cloudy_scene_does_not_change_data_outputs() {
    let fx = shared_fixture();
    let tmp = tempfile::tempdir().unwrap();
    let scenes_src = fx.dir.join("scenes");
    let mut names: Vec<_> = fs::read_dir(&scenes_src).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();

    let plain = tmp.path().join("scenes_plain");
    let cloudy = tmp.path().join("scenes_cloudy");
    for dir in [&plain, &cloudy] {
        fs::create_dir_all(dir).unwrap();
        for n in &names {
            std::os::unix::fs::symlink(scenes_src.join(n), dir.join(n)).unwrap();
        }
    }
    // An in-window scene with distorted reflectance and heavy cloud.
    let donor = read_bundle(&scenes_src.join("S2_20211013")).unwrap();
    let mut grid = RasterGrid::new(*donor.geometry()).unwrap();
    for b in donor.grid.bands() {
        let data = b.data.iter().map(|v| if *v == b.nodata { *v } else { v * 0.5 }).collect();
        grid.add_band(Band::new(b.name.clone(), b.nodata, b.native_pixel_size, data)).unwrap();
    }
    let date = chrono::NaiveDate::from_ymd_opt(2021, 10, 14).unwrap();
    write_bundle(&Scene::new(grid, date, 0.9).unwrap(), &cloudy.join("S2_20211014")).unwrap();

    let run = |scenes: &Path, out: &str| {
        let mut cfg = fx.config(&tmp.path().join(out));
        cfg.paths.scenes = Some(scenes.to_path_buf());
        run_pipeline(&cfg, &options()).unwrap()
    };
    let a = run(&plain, "out_plain");
    let b = run(&cloudy, "out_cloudy");

    let (ta, tb) = (read_tree(&a.output), read_tree(&b.output));
    let bookkeeping = ["scenes.csv", MANIFEST_FILE, "config_used.toml"];
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ta {
        if !bookkeeping.contains(&name.as_str()) {
            assert!(tb[name] == *bytes, "{name} changed");
        }
    }
    let scenes_b = String::from_utf8(tb["scenes.csv"].clone()).unwrap();
    let line = scenes_b.lines().find(|l| l.starts_with("S2_20211014,")).unwrap();
    assert!(line.ends_with(&format!(",{}", SceneStatus::CloudRejected.as_str())), "{line}");
    for (k, v) in a.manifest.entries() {
        let other = b.manifest.get(k).unwrap();
        let expected_change = k.starts_with("ingest.scenes_total") || k.starts_with("ingest.scenes_cloud") || k == "config.digest";
        assert_eq!(other != v, expected_change, "{k}: {v} vs {other}");
    }
}
