//! Reproducible synthetic study area with known ground truth.
//!
//! Sixty villages in twelve districts sit on a 10 m grid. Each village is a
//! 9 x 9 lattice of 60 m fields; every field is zero-tillage with the
//! village's adoption rate and burns with probability 0.40 (conventional)
//! or 0.05 (zero tillage). Burn scars get a BAIS2 severity in 0.84-0.97
//! that stays clear of the threshold sweep, so the burned-pixel count at
//! each threshold is known exactly.
//!
//! The fixture also contains a burn-like lake and urban block (removed only
//! by the water and urban masks), QA-flagged cloud patches, a cloudy scene and
//! an out-of-period scene that would mark every field as burned if they
//! were not filtered, and survey rows exercising every cleaning rule.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::burnmask::{write_fire_points, Confidence, FireDetection};
use crate::error::{Error, Result};
use crate::raster::write_bundle;
use crate::raster::{Band, GridGeometry, RasterGrid, Scene, DEFAULT_NODATA};
use crate::survey::{write_survey, SurveyPlotRecord, SURVEY_COLUMNS};
use crate::zones::{LocalProjection, Point};

const CELL: usize = 94;
const LATTICE: usize = 9;
const FIELD: usize = 6;
const PITCH: usize = 8;
const LATTICE_OFFSET: usize = 12;
const VILLAGES_X: usize = 10;
const VILLAGES_Y: usize = 6;
const VILLAGES_PER_DISTRICT: usize = 5;
pub const FIXTURE_EPSG: u32 = 32643;
pub const FIXTURE_ORIGIN: (f64, f64) = (500_000.0, 3_400_000.0);
pub const FIXTURE_REF_LONLAT: (f64, f64) = (75.5, 30.5);
pub const BURN_PROB_CONVENTIONAL: f64 = 0.40;
pub const BURN_PROB_ZERO_TILLAGE: f64 = 0.05;
/// Latitude offset (about 80 km) of planted coordinate outliers.
const OUTLIER_LAT_OFFSET: f64 = 0.72;
const THRESHOLDS: [f64; 3] = [0.85, 0.90, 0.95];
/// Severities closer than this to a threshold are redrawn.
const SEVERITY_GAP: f64 = 0.004;
const PIXEL_JITTER: f64 = 0.002;

// Pixel-rectangle features as (x0, y0, x1, y1), all on even pixels so they
// align with 20 m cells.
const LAKE: (usize, usize, usize, usize) = (460, 200, 476, 240);
const URBAN: (usize, usize, usize, usize) = (554, 300, 574, 340);
/// A strip with built-up fraction exactly 50, which is not urban.
const BUFRAC_50_STRIP: (usize, usize, usize, usize) = (554, 340, 574, 342);

const NO_COORD_VILLAGES: [usize; 3] = [7, 23, 41];
const FAR_VILLAGE: usize = 55;
const OUTLIER_PLOT_VILLAGES: [usize; 2] = [12, 36];
const AREA_OUTLIER_VILLAGE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureParams {
    pub seed: u64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams { seed: 20211015 }
    }
}

/// Counts the pipeline must reproduce on the fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenes_total: usize,
    pub scenes_cloud_rejected: usize,
    pub scenes_outside_weeks: usize,
    pub scenes_used: usize,
    pub weeks_with_scenes: Vec<u32>,
    pub grid_cells: usize,
    pub water_cells: usize,
    pub urban_cells: usize,
    /// Burned cells of the study-period composite, keyed by threshold label.
    pub burned_cells: BTreeMap<String, usize>,
    pub burned_fields: usize,
    pub zero_tillage_fields: usize,
    pub survey_rows: usize,
    pub survey_rows_rejected: usize,
    pub survey_area_outliers: usize,
    pub villages: usize,
    pub villages_without_coordinates: usize,
    pub villages_excluded_by_distance: usize,
    pub outlier_plots_dropped: usize,
    pub analysis_villages: usize,
    pub analysis_records: usize,
    pub fire_points: usize,
    pub fire_points_kept: usize,
    pub fire_points_urban: usize,
}

pub use crate::format::threshold_label;

#[derive(Debug, Clone)]
struct Field {
    x0: usize,
    y0: usize,
    zero_tillage: bool,
    burned: bool,
    severity: f64,
    /// Index of the first clear scene showing the scar.
    visible_from: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cover {
    Background,
    Field(usize),
    Water,
    Urban,
}

fn in_rect(x: usize, y: usize, r: (usize, usize, usize, usize)) -> bool {
    (r.0..r.2).contains(&x) && (r.1..r.3).contains(&y)
}

pub fn fixture_geometry() -> GridGeometry {
    GridGeometry::new(
        CELL * VILLAGES_X,
        CELL * VILLAGES_Y,
        FIXTURE_ORIGIN.0,
        FIXTURE_ORIGIN.1,
        10.0,
        FIXTURE_EPSG,
    )
    .expect("valid fixture geometry")
}

/// Projection whose reference point maps to the grid centre.
pub fn fixture_projection() -> LocalProjection {
    let g = fixture_geometry();
    let (x0, y0, x1, y1) = g.extent();
    LocalProjection::new(FIXTURE_REF_LONLAT.0, FIXTURE_REF_LONLAT.1).with_offset((x0 + x1) / 2.0, (y0 + y1) / 2.0)
}

fn village_id(v: usize) -> String {
    format!("V{:02}", v + 1)
}

fn district_id(v: usize) -> String {
    format!("D{:02}", v / VILLAGES_PER_DISTRICT + 1)
}

fn clear_dates() -> Vec<NaiveDate> {
    [(9, 1), (9, 15), (9, 29), (10, 13), (10, 27), (11, 10)]
        .iter()
        .map(|&(m, d)| NaiveDate::from_ymd_opt(2021, m, d).expect("valid date"))
        .collect()
}

fn draw_severity(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let s = rng.random_range(0.84..0.97);
        if THRESHOLDS.iter().all(|t| (s - t).abs() >= SEVERITY_GAP) {
            return s;
        }
    }
}

fn field_center(g: &GridGeometry, f: &Field) -> Point {
    Point::new(
        g.origin_x + (f.x0 as f64 + FIELD as f64 / 2.0) * g.pixel_size,
        g.origin_y - (f.y0 as f64 + FIELD as f64 / 2.0) * g.pixel_size,
    )
}

#[derive(Debug, Clone, Copy)]
enum SceneKind {
    Clear(usize),
    /// Scene that looks burned everywhere; must never reach the composites.
    Decoy,
}

/// Writes the fixture into `dir` (scenes, auxiliary masks, fire points,
/// survey, `config.toml`, `ground_truth.json`) and returns the ground truth.
pub fn generate_fixture(dir: &Path, params: &FixtureParams) -> Result<GroundTruth> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let g = fixture_geometry();
    let dates = clear_dates();
    let n_villages = VILLAGES_X * VILLAGES_Y;

    // Land cover.
    let mut fields = Vec::new();
    for v in 0..n_villages {
        let rate: f64 = rng.random_range(0.0..0.8);
        let (cx, cy) = ((v % VILLAGES_X) * CELL, (v / VILLAGES_X) * CELL);
        for b in 0..LATTICE {
            for a in 0..LATTICE {
                let zero_tillage = rng.random_bool(rate);
                let p = if zero_tillage { BURN_PROB_ZERO_TILLAGE } else { BURN_PROB_CONVENTIONAL };
                let burned = rng.random_bool(p);
                let severity = if burned { draw_severity(&mut rng) } else { 0.0 };
                let visible_from = rng.random_range(0..dates.len());
                fields.push(Field {
                    x0: cx + LATTICE_OFFSET + PITCH * a,
                    y0: cy + LATTICE_OFFSET + PITCH * b,
                    zero_tillage,
                    burned,
                    severity,
                    visible_from,
                });
            }
        }
    }
    let mut cover = vec![Cover::Background; g.len()];
    for (k, f) in fields.iter().enumerate() {
        for y in f.y0..f.y0 + FIELD {
            for x in f.x0..f.x0 + FIELD {
                cover[g.index(y, x)] = Cover::Field(k);
            }
        }
    }
    for y in 0..g.height {
        for x in 0..g.width {
            if in_rect(x, y, LAKE) {
                cover[g.index(y, x)] = Cover::Water;
            } else if in_rect(x, y, URBAN) {
                cover[g.index(y, x)] = Cover::Urban;
            }
        }
    }

    // Scenes.
    let scenes_dir = dir.join("scenes");
    fs::create_dir_all(&scenes_dir).map_err(|e| Error::io(&scenes_dir, e))?;
    for (k, date) in dates.iter().enumerate() {
        let scene = render_scene(&g, &cover, &fields, SceneKind::Clear(k), *date, 0.05 + 0.02 * k as f64, &mut rng)?;
        write_bundle(&scene, &scenes_dir.join(format!("S2_{}", date.format("%Y%m%d"))))?;
    }
    let cloudy_date = NaiveDate::from_ymd_opt(2021, 10, 20).expect("valid date");
    let cloudy = render_scene(&g, &cover, &fields, SceneKind::Decoy, cloudy_date, 0.35, &mut rng)?;
    write_bundle(&cloudy, &scenes_dir.join("S2_20211020"))?;
    let late_date = NaiveDate::from_ymd_opt(2021, 11, 29).expect("valid date");
    let late = render_scene(&g, &cover, &fields, SceneKind::Decoy, late_date, 0.05, &mut rng)?;
    write_bundle(&late, &scenes_dir.join("S2_20211129"))?;

    // Auxiliary rasters.
    let aux_date = dates[0];
    let water: Vec<f32> = cover.iter().map(|c| if *c == Cover::Water { 1.0 } else { 0.0 }).collect();
    let mut wg = RasterGrid::new(g)?;
    wg.add_band(Band::new("max_extent", DEFAULT_NODATA, 10.0, water))?;
    write_bundle(&Scene::new(wg, aux_date, 0.0)?, &dir.join("aux").join("water"))?;
    let mut bufrac = Vec::with_capacity(g.len());
    for y in 0..g.height {
        for x in 0..g.width {
            bufrac.push(if in_rect(x, y, URBAN) {
                80.0
            } else if in_rect(x, y, BUFRAC_50_STRIP) {
                50.0
            } else {
                rng.random_range(0.0f32..40.0).round()
            });
        }
    }
    let mut ug = RasterGrid::new(g)?;
    ug.add_band(Band::new("BUFRAC", DEFAULT_NODATA, 10.0, bufrac))?;
    write_bundle(&Scene::new(ug, aux_date, 0.0)?, &dir.join("aux").join("urban"))?;

    // Active-fire detections.
    let (fires, kept, urban_fires) = fire_detections(&g, &fields, &dates, &mut rng);
    write_fire_points(&dir.join("fires.csv"), &fires)?;

    // Survey.
    let proj = fixture_projection();
    let survey = survey_records(&g, &fields, &proj, &mut rng)?;
    let malformed_rows = 1;
    write_survey(&dir.join("survey.csv"), &survey.records)?;
    let mut text = fs::read_to_string(dir.join("survey.csv")).map_err(|e| Error::io(dir.join("survey.csv"), e))?;
    let mut bad = vec![String::new(); SURVEY_COLUMNS.len()];
    bad[0] = "V02-H99".into();
    bad[1] = village_id(1);
    bad[2] = district_id(1);
    bad[17] = "11".into();
    text.push_str(&bad.join(","));
    text.push('\n');
    fs::write(dir.join("survey.csv"), text).map_err(|e| Error::io(dir.join("survey.csv"), e))?;

    fs::write(dir.join("config.toml"), fixture_config()).map_err(|e| Error::io(dir.join("config.toml"), e))?;

    let burned_cells = THRESHOLDS
        .iter()
        .map(|&t| {
            let n = fields.iter().filter(|f| f.burned && f.severity > t).count() * FIELD * FIELD;
            (threshold_label(t), n)
        })
        .collect();
    let excluded = NO_COORD_VILLAGES.len() + 1;
    let truth = GroundTruth {
        scenes_total: dates.len() + 2,
        scenes_cloud_rejected: 1,
        scenes_outside_weeks: 1,
        scenes_used: dates.len(),
        weeks_with_scenes: vec![35, 37, 39, 41, 43, 45],
        grid_cells: g.len(),
        water_cells: cover.iter().filter(|c| **c == Cover::Water).count(),
        urban_cells: cover.iter().filter(|c| **c == Cover::Urban).count(),
        burned_cells,
        burned_fields: fields.iter().filter(|f| f.burned).count(),
        zero_tillage_fields: fields.iter().filter(|f| f.zero_tillage).count(),
        survey_rows: survey.records.len() + malformed_rows,
        survey_rows_rejected: malformed_rows,
        survey_area_outliers: 1,
        villages: n_villages,
        villages_without_coordinates: NO_COORD_VILLAGES.len(),
        villages_excluded_by_distance: 1,
        outlier_plots_dropped: OUTLIER_PLOT_VILLAGES.len() + 2,
        analysis_villages: n_villages - excluded,
        analysis_records: survey.analysis_records,
        fire_points: fires.len(),
        fire_points_kept: kept,
        fire_points_urban: urban_fires,
    };
    let mut json = serde_json::to_string_pretty(&truth).map_err(|e| Error::format("ground truth", e.to_string()))?;
    json.push('\n');
    fs::write(dir.join("ground_truth.json"), json).map_err(|e| Error::io(dir.join("ground_truth.json"), e))?;
    Ok(truth)
}

fn render_scene(
    g: &GridGeometry,
    cover: &[Cover],
    fields: &[Field],
    kind: SceneKind,
    date: NaiveDate,
    cloud_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Scene> {
    let coarse = GridGeometry::new(g.width / 2, g.height / 2, g.origin_x, g.origin_y, 2.0 * g.pixel_size, g.epsg)?;
    let burning = |c: Cover| -> Option<f64> {
        match (c, kind) {
            (Cover::Water | Cover::Urban, _) => Some(0.93),
            (_, SceneKind::Decoy) => Some(0.96),
            (Cover::Field(k), SceneKind::Clear(s)) => {
                let f = &fields[k];
                (f.burned && s >= f.visible_from).then_some(f.severity)
            }
            (Cover::Background, _) => None,
        }
    };
    let mut n = |lo: f32, hi: f32| rng.random_range(lo..hi);

    let mut swir = Vec::with_capacity(coarse.len());
    let mut swir2 = Vec::with_capacity(coarse.len());
    for r in 0..coarse.height {
        for c in 0..coarse.width {
            let cov = cover[g.index(2 * r, 2 * c)];
            let (s1, s2) = match (burning(cov), cov) {
                (Some(_), _) => (n(0.23, 0.25), n(0.27, 0.29)),
                (None, Cover::Field(_)) => (n(0.19, 0.21), n(0.12, 0.14)),
                _ => (n(0.23, 0.25), n(0.15, 0.17)),
            };
            swir.push(s1);
            swir2.push(s2);
        }
    }
    let clouds: Vec<(usize, usize, usize, usize)> = match kind {
        SceneKind::Clear(1) | SceneKind::Clear(3) => (0..6)
            .map(|_| {
                let (x, y) = (2 * rng.random_range(0..g.width / 2 - 20), 2 * rng.random_range(0..g.height / 2 - 20));
                (x, y, x + 36, y + 36)
            })
            .collect(),
        _ => Vec::new(),
    };
    let qa_flag: f32 = if matches!(kind, SceneKind::Clear(3)) { 2048.0 } else { 1024.0 };
    let mut n = |lo: f32, hi: f32| rng.random_range(lo..hi);
    let (mut red, mut nir, mut qa) = (Vec::with_capacity(g.len()), Vec::with_capacity(g.len()), Vec::with_capacity(g.len()));
    for y in 0..g.height {
        for x in 0..g.width {
            let i = g.index(y, x);
            let s2 = swir2[coarse.index(y / 2, x / 2)] as f64;
            let cloudy = clouds.iter().any(|r| in_rect(x, y, *r));
            let (rv, nv) = if cloudy {
                (n(0.45, 0.55), n(0.48, 0.58))
            } else {
                match (burning(cover[i]), cover[i]) {
                    (Some(sev), _) => {
                        let b = sev + n(-PIXEL_JITTER as f32, PIXEL_JITTER as f32) as f64;
                        ((s2 * (1.0 - b) / (1.0 + b)) as f32, n(0.11, 0.13))
                    }
                    (None, Cover::Field(_)) => (n(0.05, 0.07), n(0.32, 0.34)),
                    _ => (n(0.07, 0.09), n(0.27, 0.29)),
                }
            };
            red.push(rv);
            nir.push(nv);
            qa.push(if cloudy { qa_flag } else { 0.0 });
        }
    }
    let mut grid = RasterGrid::new(*g)?;
    grid.add_band(Band::new("RED", DEFAULT_NODATA, 10.0, red))?;
    grid.add_band(Band::new("NIR", DEFAULT_NODATA, 10.0, nir))?;
    grid.insert_coarse_band("SWIR", &coarse, &swir, DEFAULT_NODATA)?;
    grid.insert_coarse_band("SWIR2", &coarse, &swir2, DEFAULT_NODATA)?;
    grid.add_band(Band::new("QA60", DEFAULT_NODATA, 60.0, qa))?;
    Scene::new(grid, date, cloud_fraction)
}

fn fire_detections(
    g: &GridGeometry,
    fields: &[Field],
    dates: &[NaiveDate],
    rng: &mut ChaCha8Rng,
) -> (Vec<FireDetection>, usize, usize) {
    let mut out = Vec::new();
    let mut kept = 0;
    let mut push = |out: &mut Vec<FireDetection>, p: Point, c: Confidence, t: i32, d: NaiveDate, keep: bool| {
        kept += keep as usize;
        out.push(FireDetection {
            x: p.x,
            y: p.y,
            confidence: c,
            fire_type: t,
            date: d,
        });
    };
    for f in fields {
        let p = if f.burned { 0.6 } else { 0.02 };
        if !rng.random_bool(p) {
            continue;
        }
        let c = field_center(g, f);
        let at = Point::new(c.x + rng.random_range(-60.0..60.0), c.y + rng.random_range(-60.0..60.0));
        let u: f64 = rng.random();
        let confidence = if u < 0.80 {
            Confidence::High
        } else if u < 0.95 {
            Confidence::Nominal
        } else {
            Confidence::Low
        };
        let fire_type = if rng.random_bool(0.92) { 0 } else { 2 };
        let (col, row) = ((at.x - g.origin_x) / g.pixel_size, (g.origin_y - at.y) / g.pixel_size);
        let in_urban = in_rect(col.floor() as usize, row.floor() as usize, URBAN);
        let keep = confidence == Confidence::High && fire_type == 0 && !in_urban;
        push(&mut out, at, confidence, fire_type, dates[f.visible_from], keep);
    }
    let urban = 12;
    for _ in 0..urban {
        let x = g.origin_x + rng.random_range(URBAN.0 as f64..URBAN.2 as f64) * g.pixel_size;
        let y = g.origin_y - rng.random_range(URBAN.1 as f64..URBAN.3 as f64) * g.pixel_size;
        push(&mut out, Point::new(x, y), Confidence::High, 0, dates[4], false);
    }
    (out, kept, urban)
}

struct SurveyDraw {
    records: Vec<SurveyPlotRecord>,
    analysis_records: usize,
}

fn survey_records(g: &GridGeometry, fields: &[Field], proj: &LocalProjection, rng: &mut ChaCha8Rng) -> Result<SurveyDraw> {
    let hh = Poisson::new(4.9).expect("valid rate");
    let area = LogNormal::new(0.8f64.ln(), 0.9).expect("valid parameters");
    let distance = Exp::<f64>::new(1.0 / 1.7).expect("valid rate");
    let per_village = LATTICE * LATTICE;
    let mut records = Vec::new();
    let mut analysis_records = 0;
    for v in 0..fields.len() / per_village {
        let n = rng.random_range(17..=23);
        let mut picks: Vec<usize> = sample(rng, per_village, n).into_iter().collect();
        picks.sort_unstable();
        let far_plots_left = if OUTLIER_PLOT_VILLAGES.contains(&v) { 1 } else { 0 };
        for (k, &local) in picks.iter().enumerate() {
            let f = &fields[v * per_village + local];
            let mut r = SurveyPlotRecord::empty(&format!("{}-H{:02}", village_id(v), k + 1), &village_id(v), &district_id(v));
            let miss = |rng: &mut ChaCha8Rng, p: f64| rng.random_bool(p);
            let bin = |rng: &mut ChaCha8Rng, p: f64| -> Option<u8> {
                if rng.random_bool(0.02) {
                    None
                } else {
                    Some(rng.random_bool(p) as u8)
                }
            };
            r.hh_size = (!miss(rng, 0.01)).then(|| 1 + (hh.sample(rng) as u32).min(37));
            r.head_age = (!miss(rng, 0.01)).then(|| rng.random_range(20..=85) as f64);
            r.head_male = bin(rng, 0.91);
            r.head_secondary_edu = bin(rng, 0.42);
            r.hindu = bin(rng, 0.47);
            r.scheduled_caste = bin(rng, 0.42);
            r.tractor = bin(rng, 0.44);
            r.plot_area = (!miss(rng, 0.01)).then(|| (area.sample(rng) * 1000.0).round().max(31.0) / 1000.0);
            r.plot_distance = (!miss(rng, 0.01)).then(|| (distance.sample(rng) * 100.0).round() / 100.0);
            r.plot_owned = bin(rng, 0.94);
            r.esw = bin(rng, 0.10);
            r.fertilizer = bin(rng, 0.94);
            r.outside_labor = bin(rng, 0.80);
            r.tillage_code = (!miss(rng, 0.005)).then(|| {
                if f.zero_tillage {
                    4
                } else {
                    [1, 2, 3, 5][rng.random_range(0..4)]
                }
            });
            r.residue_code = (!miss(rng, 0.015)).then(|| {
                if f.burned {
                    [3, 4, 7][rng.random_range(0..3)]
                } else {
                    [1, 2, 5, 6, 8, 9, 10][rng.random_range(0..7)]
                }
            });
            if v == AREA_OUTLIER_VILLAGE && k == 0 {
                r.plot_area = Some(1355.4);
            }

            let c = field_center(g, f);
            let at = Point::new(c.x + rng.random_range(-20.0..20.0), c.y + rng.random_range(-20.0..20.0));
            let has_coords = if NO_COORD_VILLAGES.contains(&v) {
                false
            } else if v == FAR_VILLAGE {
                k < 2
            } else {
                k < 3 || rng.random_bool(0.75)
            };
            if has_coords {
                let (lon, mut lat) = proj.unproject(at);
                if (v == FAR_VILLAGE && k == 1) || (far_plots_left > 0 && k == 2) {
                    lat += OUTLIER_LAT_OFFSET;
                }
                r.lon = Some(lon);
                r.lat = Some(lat);
            }
            let excluded = NO_COORD_VILLAGES.contains(&v) || v == FAR_VILLAGE;
            let area_outlier = r.plot_area.is_some_and(|a| a > crate::survey::DEFAULT_MAX_PLOT_AREA);
            analysis_records += (!excluded && !area_outlier) as usize;
            records.push(r);
        }
    }
    Ok(SurveyDraw {
        records,
        analysis_records,
    })
}

fn fixture_config() -> String {
    let p = fixture_projection();
    format!(
        r#"# Synthetic study area.

[paths]
scenes = "scenes"
water = "aux/water"
urban = "aux/urban"
fire_points = "fires.csv"
survey = "survey.csv"
output = "out"

[projection]
ref_lon = {}
ref_lat = {}
false_easting = {}
false_northing = {}
"#,
        p.ref_lon, p.ref_lat, p.false_easting, p.false_northing
    )
}
