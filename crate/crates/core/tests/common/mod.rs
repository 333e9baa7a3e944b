//! Independent oracles and fixture plumbing shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use residue_burn::pipeline::{Manifest, PipelineConfig};
use residue_burn::synthetic::{generate_fixture, threshold_label, FixtureParams, GroundTruth};

/// Gauss-Jordan elimination with partial pivoting on an augmented copy.
pub fn solve_dense(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, s)| r.iter().chain(s).copied().collect()).collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .unwrap();
        aug.swap(col, piv);
        let d = aug[col][col];
        assert!(d.abs() > 1e-300, "singular system");
        for v in aug[col].iter_mut() {
            *v /= d;
        }
        for row in 0..n {
            if row != col {
                let f = aug[row][col];
                if f != 0.0 {
                    for k in 0..n + m {
                        aug[row][k] -= f * aug[col][k];
                    }
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn invert_dense(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let id: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    solve_dense(a, &id)
}

/// `XᵀX` for column-major `x`.
pub fn gram(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|a| x.iter().map(|b| a.iter().zip(b).map(|(p, q)| p * q).sum()).collect())
        .collect()
}

/// Least squares through the normal equations.
pub fn normal_equations(y: &[f64], x: &[Vec<f64>]) -> Vec<f64> {
    let xty: Vec<Vec<f64>> = x.iter().map(|c| vec![c.iter().zip(y).map(|(a, b)| a * b).sum()]).collect();
    solve_dense(&gram(x), &xty).into_iter().map(|r| r[0]).collect()
}

pub fn residuals(y: &[f64], x: &[Vec<f64>], beta: &[f64]) -> Vec<f64> {
    (0..y.len())
        .map(|i| y[i] - x.iter().zip(beta).map(|(c, b)| c[i] * b).sum::<f64>())
        .collect()
}

/// Cluster sandwich assembled from explicit per-cluster score outer products.
pub fn brute_sandwich(x: &[Vec<f64>], e: &[f64], clusters: &[String], small_sample: bool) -> Vec<Vec<f64>> {
    let k = x.len();
    let n = e.len();
    let mut by_cluster: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in clusters.iter().enumerate() {
        by_cluster.entry(c.as_str()).or_default().push(i);
    }
    let mut meat = vec![vec![0.0; k]; k];
    for rows in by_cluster.values() {
        let s: Vec<f64> = (0..k).map(|j| rows.iter().map(|&i| x[j][i] * e[i]).sum()).collect();
        for a in 0..k {
            for b in 0..k {
                meat[a][b] += s[a] * s[b];
            }
        }
    }
    let bread = invert_dense(&gram(x));
    let mul = |p: &[Vec<f64>], q: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| (0..k).map(|j| (0..k).map(|l| p[i][l] * q[l][j]).sum()).collect())
            .collect()
    };
    let mut v = mul(&mul(&bread, &meat), &bread);
    if small_sample {
        let g = by_cluster.len() as f64;
        let c = g / (g - 1.0) * (n as f64 - 1.0) / (n as f64 - k as f64);
        for row in v.iter_mut() {
            for x in row.iter_mut() {
                *x *= c;
            }
        }
    }
    v
}

/// Subtracts plain group means.
pub fn demean(v: &[f64], groups: &[String]) -> Vec<f64> {
    let mut sum: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (x, g) in v.iter().zip(groups) {
        let e = sum.entry(g.as_str()).or_insert((0.0, 0));
        e.0 += x;
        e.1 += 1;
    }
    v.iter()
        .zip(groups)
        .map(|(x, g)| {
            let (s, n) = sum[g.as_str()];
            x - s / n as f64
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Every file under `root`, keyed by relative path.
pub fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// First differing file between two trees, if any.
pub fn tree_difference(a: &Path, b: &Path) -> Option<String> {
    let (ta, tb) = (read_tree(a), read_tree(b));
    let names_a: Vec<&String> = ta.keys().collect();
    let names_b: Vec<&String> = tb.keys().collect();
    if names_a != names_b {
        return Some(format!("file lists differ: {} vs {} files", names_a.len(), names_b.len()));
    }
    ta.iter().find(|(k, v)| tb[*k] != **v).map(|(k, _)| format!("{k} differs"))
}

pub struct Fixture {
    pub dir: PathBuf,
    pub truth: GroundTruth,
}

impl Fixture {
    pub fn generate(dir: &Path) -> Fixture {
        let truth = generate_fixture(dir, &FixtureParams::default()).expect("fixture generation");
        Fixture {
            dir: dir.to_path_buf(),
            truth,
        }
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.join("config.toml")
    }

    pub fn config(&self, output: &Path) -> PipelineConfig {
        let set = format!("paths.output=\"{}\"", output.display());
        PipelineConfig::from_file(&self.config_path(), &[set]).expect("fixture config")
    }
}

/// Manifest entries that disagree with the fixture's ground truth.
pub fn manifest_mismatches(m: &Manifest, t: &GroundTruth) -> Vec<String> {
    let mut expected: Vec<(String, String)> = vec![
        ("ingest.scenes_total".into(), t.scenes_total.to_string()),
        ("ingest.scenes_cloud_rejected".into(), t.scenes_cloud_rejected.to_string()),
        ("ingest.scenes_outside_weeks".into(), t.scenes_outside_weeks.to_string()),
        ("ingest.scenes_used".into(), t.scenes_used.to_string()),
        (
            "composite.weeks".into(),
            t.weeks_with_scenes.iter().map(u32::to_string).collect::<Vec<_>>().join(","),
        ),
        ("masks.grid_cells".into(), t.grid_cells.to_string()),
        ("masks.water_cells".into(), t.water_cells.to_string()),
        ("masks.urban_cells".into(), t.urban_cells.to_string()),
        ("survey.rows_read".into(), t.survey_rows.to_string()),
        ("survey.rows_rejected".into(), t.survey_rows_rejected.to_string()),
        ("survey.area_outliers".into(), t.survey_area_outliers.to_string()),
        ("survey.villages".into(), t.villages.to_string()),
        ("survey.analysis_villages".into(), t.analysis_villages.to_string()),
        ("survey.analysis_records".into(), t.analysis_records.to_string()),
        ("zones.villages_without_coordinates".into(), t.villages_without_coordinates.to_string()),
        ("zones.villages_excluded_by_distance".into(), t.villages_excluded_by_distance.to_string()),
        ("zones.outlier_plots_dropped".into(), t.outlier_plots_dropped.to_string()),
        ("indicators.villages".into(), t.analysis_villages.to_string()),
        ("fire.points_read".into(), t.fire_points.to_string()),
        ("fire.kept".into(), t.fire_points_kept.to_string()),
        ("fire.dropped_urban".into(), t.fire_points_urban.to_string()),
    ];
    for (label, n) in &t.burned_cells {
        expected.push((format!("burn.burned_cells_{label}"), n.to_string()));
    }
    expected
        .into_iter()
        .filter_map(|(k, v)| {
            let got = m.get(&k);
            (got != Some(v.as_str())).then(|| format!("{k}: manifest {got:?}, ground truth {v}"))
        })
        .collect()
}

/// (coefficient, p-value) of the zero-tillage row of a ladder table, per column.
pub fn zero_tillage_row(csv_text: &str) -> Vec<(f64, f64)> {
    let line = csv_text
        .lines()
        .find(|l| l.starts_with("Zero tillage,"))
        .expect("zero tillage row");
    let cells: Vec<&str> = line.split(',').skip(1).collect();
    cells
        .chunks(3)
        .map(|c| (c[0].parse().expect("coefficient"), c[2].parse().expect("p-value")))
        .collect()
}

pub fn eq2_table_name(scheme: &str, t: f64) -> String {
    format!("tables/eq2_{scheme}_bais2_{}.csv", threshold_label(t))
}

/// One fixture per test binary, generated on first use under cargo's
/// integration-test scratch directory.
pub fn shared_fixture() -> &'static Fixture {
    static FIXTURE: std::sync::OnceLock<Fixture> = std::sync::OnceLock::new();
    FIXTURE.get_or_init(|| {
        let exe = std::env::current_exe().unwrap();
        let name = exe.file_stem().unwrap().to_string_lossy().into_owned();
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("fixture-{name}"));
        let _ = fs::remove_dir_all(&dir);
        Fixture::generate(&dir)
    })
}
