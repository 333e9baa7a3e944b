//! End-to-end runs and the stage functions they are assembled from.
//!
//! Every stage is a plain function over in-memory values so it can be
//! called on its own; [`run_pipeline`] chains them, writes the output tree
//! into a staging directory and moves it into place only on success.

pub mod config;
pub mod figures;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::burnmask::{
    filter_fire_points, fire_squares, max_composite, overlap_report, read_fire_points, threshold_burn, FireFilter,
    OverlapReport, ThresholdSpec,
};
use crate::econ::{correlation_csv, correlation_matrix, ladder_table_csv, regress_eq2, run_ladder, Ladder};
use crate::error::{Error, Result};
use crate::format::{fmt_opt, fmt_sig, threshold_label};
use crate::raster::{read_bundle, write_bundle, BinaryMask, RasterGrid, Scene, HEADER_FILE};
use crate::spectral::{
    apply_masks, build_urban_mask, build_water_mask, compute_index_kind, passes_cloud_filter, weekly_median_composite,
    IndexKind, IndexRaster, IsoWeek, WeeklyComposite,
};
use crate::survey::{
    clean, load_survey, plot_coordinates, summary_stats, summary_table_csv, village_burn_share, village_districts,
    CleaningLog, CleaningRules, SurveyLoad, SurveyPlotRecord, Variable,
};
use crate::zones::{
    plot_boxes, project_points, village_boxes, write_zones_csv, write_zones_wkt, zonal_counts, LocalProjection,
    PlotBoxes, PlotsByVillage, VillageBoxes, ZonalCounts, ZoneKind, ZonePolygon,
};

pub use config::PipelineConfig;
use config::{BandConfig, RegressionConfig, StudyConfig, ThresholdConfig, ZoneConfig};

/// Band name of stored burn masks.
pub const BURN_BAND: &str = "burned";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(name))
}

/// Runs `f` on a pool of `jobs` workers, or on the global pool for `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(0) => Err(Error::Validation("jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Insufficient(format!("cannot start {n} worker threads: {e}")))?
            .install(f),
    }
}

// ---------------------------------------------------------------- scenes

#[derive(Debug, Clone, PartialEq)]
pub struct NamedScene {
    pub name: String,
    pub scene: Scene,
}

/// Loads every bundle directly below `dir`, sorted by directory name.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<NamedScene>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.join(HEADER_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Validation(format!("no scene bundles in {}", dir.display())));
    }
    dirs.par_iter()
        .map(|p| {
            Ok(NamedScene {
                name: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                scene: read_bundle(p)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneStatus {
    Used,
    OutsideWeeks,
    CloudRejected,
}

impl SceneStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SceneStatus::Used => "used",
            SceneStatus::OutsideWeeks => "outside_weeks",
            SceneStatus::CloudRejected => "cloud_rejected",
        }
    }
}

/// Study-window check first, then the cloud-cover filter.
pub fn scene_status(scene: &Scene, study: &StudyConfig) -> SceneStatus {
    if !study.contains(IsoWeek::of(scene.date)) {
        SceneStatus::OutsideWeeks
    } else if !passes_cloud_filter(scene.cloud_fraction, study.max_cloud) {
        SceneStatus::CloudRejected
    } else {
        SceneStatus::Used
    }
}

pub fn scene_log_csv(scenes: &[NamedScene], status: &[SceneStatus]) -> String {
    let mut s = String::from("scene,date,iso_week,cloud_fraction,status\n");
    for (n, st) in scenes.iter().zip(status) {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            n.name,
            n.scene.date,
            IsoWeek::of(n.scene.date),
            fmt_sig(n.scene.cloud_fraction),
            st.as_str()
        ));
    }
    s
}

// ----------------------------------------------------------- masks/indices

#[derive(Debug, Clone, PartialEq)]
pub struct AuxMasks {
    pub water: BinaryMask,
    pub urban: BinaryMask,
}

pub fn load_aux_masks(cfg: &PipelineConfig) -> Result<AuxMasks> {
    let water = read_bundle(&cfg.required("water", &cfg.paths.water)?)?;
    let urban = read_bundle(&cfg.required("urban", &cfg.paths.urban)?)?;
    Ok(AuxMasks {
        water: build_water_mask(&water.grid, &cfg.bands.water)?,
        urban: build_urban_mask(&urban.grid, &cfg.bands.urban)?,
    })
}

/// Masks a reflectance scene and replaces its bands by NBR, BAI and BAIS2.
/// Without auxiliary masks only the QA flags are applied.
pub fn index_scene(scene: &Scene, aux: Option<&AuxMasks>, bands: &BandConfig) -> Result<Scene> {
    let g = *scene.geometry();
    let qa = scene.grid.band(&bands.qa)?;
    let masked = match aux {
        Some(a) => apply_masks(scene, qa, bands.qa_bits(), &a.water, &a.urban)?,
        None => {
            let clear = BinaryMask::filled(g, Some(false))?;
            apply_masks(scene, qa, bands.qa_bits(), &clear, &clear)?
        }
    };
    let names = bands.names();
    let mut grid = RasterGrid::new(g)?;
    for kind in IndexKind::ALL {
        grid.add_band(compute_index_kind(&masked.grid, &names, kind)?.to_band())?;
    }
    Scene::new(grid, scene.date, scene.cloud_fraction)
}

/// One median composite per study week that has at least one scene.
pub fn study_composites(index_scenes: &[Scene], study: &StudyConfig) -> Result<Vec<WeeklyComposite>> {
    let weeks: BTreeSet<IsoWeek> = index_scenes
        .iter()
        .map(|s| IsoWeek::of(s.date))
        .filter(|w| study.contains(*w))
        .collect();
    weeks.into_iter().map(|w| weekly_median_composite(index_scenes, w)).collect()
}

pub fn index_summary_csv(composites: &[WeeklyComposite]) -> Result<String> {
    let mut s = String::from("week,index,valid,min,max,mean,median\n");
    for c in composites {
        for kind in IndexKind::ALL {
            let sm = IndexRaster::from_grid(&c.grid, kind)?.summary();
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.week,
                kind,
                sm.valid,
                fmt_opt(sm.min),
                fmt_opt(sm.max),
                fmt_opt(sm.mean),
                fmt_opt(sm.median)
            ));
        }
    }
    Ok(s)
}

/// Study-period burn mask per sweep threshold: each weekly composite is
/// thresholded, then the weekly masks are OR-ed.
pub fn burn_masks(composites: &[WeeklyComposite], t: &ThresholdConfig) -> Result<Vec<(f64, BinaryMask)>> {
    if composites.is_empty() {
        return Err(Error::Insufficient("no weekly composite to threshold".into()));
    }
    let layers: Vec<(IndexRaster, IndexRaster)> = composites
        .iter()
        .map(|c| {
            Ok((
                IndexRaster::from_grid(&c.grid, IndexKind::Bais2)?,
                IndexRaster::from_grid(&c.grid, IndexKind::Nbr)?,
            ))
        })
        .collect::<Result<_>>()?;
    t.bais2_sweep
        .iter()
        .map(|&th| {
            let spec = ThresholdSpec::new(th, t.nbr)?;
            let weekly: Vec<BinaryMask> = layers
                .par_iter()
                .map(|(b, n)| threshold_burn(b, n, &spec))
                .collect::<Result<_>>()?;
            Ok((th, max_composite(&weekly)?))
        })
        .collect()
}

pub fn mask_dir_name(t: f64) -> String {
    format!("burn_bais2_{}", threshold_label(t))
}

pub fn write_mask(mask: &BinaryMask, date: NaiveDate, dir: &Path) -> Result<()> {
    write_bundle(&Scene::new(mask.to_grid(BURN_BAND)?, date, 0.0)?, dir)
}

pub fn read_mask(dir: &Path) -> Result<BinaryMask> {
    BinaryMask::from_grid(&read_bundle(dir)?.grid, BURN_BAND)
}

/// Date stamped on study-period products: the first day of the first week.
pub fn study_start(study: &StudyConfig) -> Result<NaiveDate> {
    IsoWeek {
        year: study.year,
        week: study.first_week,
    }
    .start()
    .ok_or_else(|| Error::Validation(format!("week {} does not exist in {}", study.first_week, study.year)))
}

// ------------------------------------------------------------------ survey

/// Survey records split into the area-cleaned set used for zone building
/// and the final analysis sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyStage {
    pub load: SurveyLoad,
    pub area_cleaned: Vec<SurveyPlotRecord>,
}

pub fn survey_stage(path: &Path, max_plot_area: f64) -> Result<SurveyStage> {
    let load = load_survey(path)?;
    let rules = CleaningRules {
        max_plot_area,
        excluded_villages: BTreeSet::new(),
    };
    let (area_cleaned, _) = clean(&load.records, &rules);
    Ok(SurveyStage { load, area_cleaned })
}

/// Final sample: area outliers and the given villages removed.
pub fn analysis_sample(
    load: &SurveyLoad,
    max_plot_area: f64,
    excluded: &BTreeSet<String>,
) -> (Vec<SurveyPlotRecord>, CleaningLog) {
    let rules = CleaningRules {
        max_plot_area,
        excluded_villages: excluded.clone(),
    };
    clean(&load.records, &rules)
}

pub fn rejected_rows_csv(load: &SurveyLoad) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::format("rejected rows", e.to_string());
    w.write_record(["row", "reason"]).map_err(wrap)?;
    for r in &load.rejected {
        w.write_record([r.row.to_string(), r.reason.clone()]).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("rejected rows", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn burn_share_csv(records: &[SurveyPlotRecord]) -> String {
    let districts = village_districts(records);
    let mut s = String::from("village_id,district_id,burned,observed,share\n");
    for (v, b) in village_burn_share(records) {
        s.push_str(&format!(
            "{v},{},{},{},{}\n",
            districts.get(&v).map(String::as_str).unwrap_or(""),
            b.burned,
            b.observed,
            fmt_opt(b.share())
        ));
    }
    s
}

// ------------------------------------------------------------------- zones

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSet {
    pub village: VillageBoxes,
    pub plot: PlotBoxes,
    /// Survey villages none of whose plots carry coordinates.
    pub without_coordinates: Vec<String>,
}

impl ZoneSet {
    /// Villages that get no analysis rectangle.
    pub fn excluded_villages(&self) -> BTreeSet<String> {
        self.village
            .excluded_villages
            .iter()
            .chain(&self.without_coordinates)
            .cloned()
            .collect()
    }

    pub fn village_box_side(&self) -> Option<f64> {
        self.village.boxes.first().map(ZonePolygon::width)
    }

    pub fn log_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("villages_with_coordinates={}\n", self.village.retained.len() + self.village.excluded_villages.len()));
        s.push_str(&format!("villages_without_coordinates={}\n", self.without_coordinates.join(";")));
        s.push_str(&format!("villages_excluded_by_distance={}\n", self.village.excluded_villages.join(";")));
        s.push_str(&format!("outlier_plots_dropped={}\n", self.village.dropped_plots));
        s.push_str(&format!("mean_plot_distance_m={}\n", fmt_sig(self.village.mean_distance)));
        s.push_str(&format!("village_box_side_m={}\n", fmt_opt(self.village_box_side())));
        s.push_str(&format!("plot_mean_base_area_m2={}\n", fmt_sig(self.plot.mean_base_area)));
        s.push_str(&format!("plot_boxes_enlarged={}\n", self.plot.enlarged.join(";")));
        s
    }
}

/// Village and plot rectangles from the survey's plot coordinates.
/// Plot rectangles use the plots that survived village outlier removal.
pub fn build_zones(records: &[SurveyPlotRecord], proj: &LocalProjection, zc: &ZoneConfig) -> Result<ZoneSet> {
    let coords = plot_coordinates(records);
    let mut plots = PlotsByVillage::new();
    for (v, pts) in &coords {
        plots.insert(v.clone(), project_points(pts, proj)?);
    }
    let without_coordinates = village_districts(records)
        .into_keys()
        .filter(|v| !coords.contains_key(v))
        .collect();
    let village = village_boxes(&plots, &zc.village_params())?;
    let plot = plot_boxes(&village.retained, &zc.plot_params())?;
    Ok(ZoneSet {
        village,
        plot,
        without_coordinates,
    })
}

pub fn write_zone_files(z: &ZoneSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_zones_csv(&dir.join("village_boxes.csv"), &z.village.boxes)?;
    write_zones_wkt(&dir.join("village_boxes.wkt"), &z.village.boxes)?;
    write_zones_csv(&dir.join("plot_boxes.csv"), &z.plot.boxes)?;
    write_zones_wkt(&dir.join("plot_boxes.wkt"), &z.plot.boxes)?;
    let path = dir.join("zone_log.txt");
    fs::write(&path, z.log_text()).map_err(|e| Error::io(&path, e))
}

/// Burned and valid counts per zone, in zone order.
pub fn zonal_table(mask: &BinaryMask, zones: &[ZonePolygon]) -> Result<Vec<ZonalCounts>> {
    zones.par_iter().map(|z| zonal_counts(mask, z)).collect()
}

pub fn zonal_csv(zones: &[ZonePolygon], counts: &[ZonalCounts]) -> String {
    let mut s = String::from("zone_id,kind,burned,valid,fraction\n");
    for (z, c) in zones.iter().zip(counts) {
        s.push_str(&format!("{},{},{},{},{}\n", z.zone_id, z.kind, c.burned, c.valid, fmt_opt(c.fraction())));
    }
    s
}

/// Zone id to burned fraction from a zonal CSV.
pub fn read_zonal_csv(path: &Path) -> Result<BTreeMap<String, Option<f64>>> {
    let wrap = |e: csv::Error| Error::format(path.display().to_string(), e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let header = r.headers().map_err(wrap)?.clone();
    let pos = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path.display().to_string(), format!("missing column `{name}`")))
    };
    let (id, frac) = (pos("zone_id")?, pos("fraction")?);
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(wrap)?;
        out.insert(rec.get(id).unwrap_or("").to_string(), parse_opt(rec.get(frac).unwrap_or(""), path)?);
    }
    Ok(out)
}

fn parse_opt(cell: &str, path: &Path) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::format(path.display().to_string(), format!("bad number `{cell}`")))
}

// -------------------------------------------------------------- indicators

pub fn indicator_name(kind: ZoneKind, t: f64) -> String {
    let scheme = match kind {
        ZoneKind::VillageBox => "village",
        ZoneKind::PlotBox => "plot",
        ZoneKind::FireSquare => "fire",
    };
    format!("{scheme}_bais2_{}", threshold_label(t))
}

/// Survey burn share plus remote burn fractions, one row per village.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorTable {
    pub villages: Vec<String>,
    /// Column name and one value per village.
    pub columns: Vec<(String, Vec<Option<f64>>)>,
}

pub const SURVEY_INDICATOR: &str = "survey";

impl IndicatorTable {
    /// Columns: survey share, then village rectangles at each threshold,
    /// then plot rectangles at each threshold.
    pub fn build(
        records: &[SurveyPlotRecord],
        village: &[(f64, BTreeMap<String, Option<f64>>)],
        plot: &[(f64, BTreeMap<String, Option<f64>>)],
    ) -> Self {
        let shares = village_burn_share(records);
        let villages: Vec<String> = shares.keys().cloned().collect();
        let mut columns = vec![(
            SURVEY_INDICATOR.to_string(),
            villages.iter().map(|v| shares[v].share()).collect(),
        )];
        for (kind, set) in [(ZoneKind::VillageBox, village), (ZoneKind::PlotBox, plot)] {
            for (t, fr) in set {
                let col = villages.iter().map(|v| fr.get(v).copied().flatten()).collect();
                columns.push((indicator_name(kind, *t), col));
            }
        }
        IndicatorTable { villages, columns }
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_slice())
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Remote indicator columns, everything except the survey share.
    pub fn remote_names(&self) -> Vec<String> {
        self.names().into_iter().filter(|n| n != SURVEY_INDICATOR).collect()
    }

    pub fn village_map(&self, name: &str) -> Option<BTreeMap<String, Option<f64>>> {
        let col = self.column(name)?;
        Some(self.villages.iter().cloned().zip(col.iter().copied()).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("village_id");
        for (n, _) in &self.columns {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (i, v) in self.villages.iter().enumerate() {
            s.push_str(v);
            for (_, c) in &self.columns {
                s.push(',');
                s.push_str(&fmt_opt(c[i]));
            }
            s.push('\n');
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let wrap = |e: csv::Error| Error::format(path.display().to_string(), e.to_string());
        let mut r = csv::Reader::from_path(path).map_err(wrap)?;
        let header = r.headers().map_err(wrap)?.clone();
        if header.get(0) != Some("village_id") || header.len() < 2 {
            return Err(Error::format(
                path.display().to_string(),
                "expected `village_id` followed by indicator columns",
            ));
        }
        let mut t = IndicatorTable {
            villages: Vec::new(),
            columns: header.iter().skip(1).map(|h| (h.to_string(), Vec::new())).collect(),
        };
        for rec in r.records() {
            let rec = rec.map_err(wrap)?;
            t.villages.push(rec.get(0).unwrap_or("").to_string());
            for (k, (_, col)) in t.columns.iter_mut().enumerate() {
                col.push(parse_opt(rec.get(k + 1).unwrap_or(""), path)?);
            }
        }
        Ok(t)
    }

    pub fn correlation_csv(&self) -> String {
        let cols: Vec<Vec<Option<f64>>> = self.columns.iter().map(|(_, c)| c.clone()).collect();
        correlation_csv(&self.names(), &correlation_matrix(&cols))
    }
}

// ------------------------------------------------------------- regressions

#[derive(Debug, Clone)]
pub struct Eq2Run {
    pub indicator: String,
    pub ladder: Ladder,
    /// Records dropped because their village has no value of the indicator.
    pub missing: usize,
}

#[derive(Debug, Clone)]
pub struct Regressions {
    pub eq1: Ladder,
    pub eq2: Vec<Eq2Run>,
}

/// Plot-level ladder on the survey burn indicator, and one village-level
/// ladder per remote indicator.
pub fn run_regressions(records: &[SurveyPlotRecord], table: &IndicatorTable, rc: &RegressionConfig) -> Result<Regressions> {
    let opts = rc.vcov();
    let eq1 = run_ladder(records, "burn", |r| r.value(Variable::Burn), rc.eq1_fe, &opts)?;
    let eq2 = table
        .remote_names()
        .par_iter()
        .map(|name| {
            let fractions = table.village_map(name).expect("column listed by remote_names");
            let (ladder, missing) = regress_eq2(records, &fractions, rc.eq2_fe, &opts)?;
            Ok(Eq2Run {
                indicator: name.clone(),
                ladder,
                missing,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Regressions { eq1, eq2 })
}

impl Regressions {
    /// File name and contents of every result grid.
    pub fn tables(&self) -> Vec<(String, String)> {
        let mut out = vec![("eq1.csv".to_string(), ladder_table_csv(&self.eq1))];
        for r in &self.eq2 {
            out.push((format!("eq2_{}.csv", r.indicator), ladder_table_csv(&r.ladder)));
        }
        out
    }
}

// ----------------------------------------------------------------- figures

/// Histogram per remote indicator and the village-versus-plot scatter at
/// `primary`, as (file name, SVG) pairs.
pub fn figure_files(table: &IndicatorTable, primary: f64) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for name in table.remote_names() {
        let values: Vec<f64> = table.column(&name).unwrap_or_default().iter().flatten().copied().collect();
        out.push((
            format!("hist_{name}.svg"),
            figures::histogram_svg(&format!("{name} (n = {})", values.len()), &values, 20),
        ));
    }
    let (vx, py) = (indicator_name(ZoneKind::VillageBox, primary), indicator_name(ZoneKind::PlotBox, primary));
    if let (Some(a), Some(b)) = (table.column(&vx), table.column(&py)) {
        let (x, y): (Vec<f64>, Vec<f64>) = a.iter().zip(b).filter_map(|(a, b)| a.zip(*b)).unzip();
        let (svg, _) = figures::scatter_svg(&format!("Village vs plot rectangles, BAIS2 > {}", threshold_label(primary)), &vx, &py, &x, &y);
        out.push((format!("scatter_{}.svg", threshold_label(primary)), svg));
    }
    out
}

// -------------------------------------------------------------- fire check

#[derive(Debug, Clone, PartialEq)]
pub struct FireValidation {
    pub points_read: usize,
    pub filter: FireFilter,
    pub overlaps: Vec<(f64, OverlapReport)>,
}

impl FireValidation {
    pub fn filter_text(&self) -> String {
        let f = &self.filter;
        format!(
            "points_read={}\nkept={}\ndropped_confidence={}\ndropped_type={}\ndropped_urban={}\ndropped_outside={}\n",
            self.points_read,
            f.kept.len(),
            f.dropped_confidence,
            f.dropped_type,
            f.dropped_urban,
            f.dropped_outside
        )
    }
}

pub fn validate_fires(
    path: &Path,
    proj: &LocalProjection,
    urban: &BinaryMask,
    masks: &[(f64, BinaryMask)],
) -> Result<FireValidation> {
    let points = read_fire_points(path, Some(proj))?;
    let filter = filter_fire_points(&points, urban);
    let squares = fire_squares(&filter.kept)?;
    let overlaps = masks.iter().map(|(t, m)| (*t, overlap_report(m, &squares))).collect();
    Ok(FireValidation {
        points_read: points.len(),
        filter,
        overlaps,
    })
}

// ---------------------------------------------------------------- manifest

/// Ordered `key=value` record of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_usize(&self, key: &str) -> Option<usize> {
        self.get(key)?.parse().ok()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("manifest", format!("line {} is not key=value", i + 1)))?;
            m.set(k, v);
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

// ----------------------------------------------------------------- staging

/// Output tree under construction next to its final location.
struct Staging {
    dir: PathBuf,
    target: PathBuf,
    files: usize,
}

impl Staging {
    fn new(target: &Path) -> Result<Self> {
        let name = target
            .file_name()
            .ok_or_else(|| Error::Validation(format!("output path {} has no final component", target.display())))?;
        if target.exists() {
            if !target.is_dir() {
                return Err(Error::Validation(format!("output {} exists and is not a directory", target.display())));
            }
            let empty = fs::read_dir(target).map_err(|e| Error::io(target, e))?.next().is_none();
            if !empty && !target.join(MANIFEST_FILE).is_file() {
                return Err(Error::Validation(format!(
                    "output {} is a non-empty directory without a {MANIFEST_FILE}; refusing to replace it",
                    target.display()
                )));
            }
        }
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let dir = parent.join(format!(".{}.staging", name.to_string_lossy()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Staging {
            dir,
            target: target.to_path_buf(),
            files: 0,
        })
    }

    /// Path of `rel` inside the staging tree, parent directories created.
    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        self.files += 1;
        Ok(())
    }

    fn commit(self) -> Result<()> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.dir, &self.target).map_err(|e| Error::io(&self.target, e))
    }

    fn discard(self) {
        if let Err(e) = fs::remove_dir_all(&self.dir) {
            log::warn!("could not remove staging directory {}: {e}", self.dir.display());
        }
    }
}

// -------------------------------------------------------------------- runs

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Adds wall-clock time to the manifest, which makes it run-dependent.
    pub record_timing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub output: PathBuf,
    pub manifest: Manifest,
}

/// Runs every stage and publishes the output tree. On failure nothing is
/// left behind and an existing output directory is untouched.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<PipelineRun> {
    cfg.validate()?;
    let output = cfg.required("output", &cfg.paths.output)?;
    with_jobs(opts.jobs, || {
        let mut staging = Staging::new(&output)?;
        match execute(cfg, opts, &mut staging) {
            Ok(manifest) => {
                staging.commit()?;
                Ok(PipelineRun { output, manifest })
            }
            Err(e) => {
                staging.discard();
                Err(e)
            }
        }
    })
}

/// The configuration as written to the output tree, output path removed.
pub fn config_used_toml(cfg: &PipelineConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.paths.output = None;
    c.to_toml()
}

fn execute(cfg: &PipelineConfig, opts: &RunOptions, out: &mut Staging) -> Result<Manifest> {
    let started = Instant::now();
    let mut m = Manifest::default();
    m.set("config.digest", cfg.digest());
    out.write("config_used.toml", config_used_toml(cfg)?)?;

    let scenes = stage("ingest", || load_scene_dir(&cfg.required("scenes", &cfg.paths.scenes)?))?;
    let status: Vec<SceneStatus> = scenes.iter().map(|s| scene_status(&s.scene, &cfg.study)).collect();
    let count = |st: SceneStatus| status.iter().filter(|s| **s == st).count();
    m.set("ingest.scenes_total", scenes.len());
    m.set("ingest.scenes_outside_weeks", count(SceneStatus::OutsideWeeks));
    m.set("ingest.scenes_cloud_rejected", count(SceneStatus::CloudRejected));
    m.set("ingest.scenes_used", count(SceneStatus::Used));
    out.write("scenes.csv", scene_log_csv(&scenes, &status))?;
    let used: Vec<&Scene> = scenes
        .iter()
        .zip(&status)
        .filter(|(_, s)| **s == SceneStatus::Used)
        .map(|(n, _)| &n.scene)
        .collect();
    if used.is_empty() {
        return Err(Error::Insufficient("no scene passes the study-week and cloud filters".into()).in_stage("ingest"));
    }

    let aux = stage("masks", || {
        let aux = load_aux_masks(cfg)?;
        let g = used[0].geometry();
        g.ensure_same(aux.water.geometry(), "water mask")?;
        g.ensure_same(aux.urban.geometry(), "urban mask")?;
        Ok(aux)
    })?;
    m.set("masks.grid_cells", aux.water.geometry().len());
    m.set("masks.water_cells", aux.water.count_true());
    m.set("masks.urban_cells", aux.urban.count_true());

    let index_scenes: Vec<Scene> = stage("indices", || {
        used.par_iter().map(|s| index_scene(s, Some(&aux), &cfg.bands)).collect()
    })?;
    drop(scenes);

    let composites = stage("composite", || study_composites(&index_scenes, &cfg.study))?;
    drop(index_scenes);
    let weeks: Vec<String> = composites.iter().map(|c| c.week.week.to_string()).collect();
    m.set("composite.weeks", weeks.join(","));
    m.set("composite.count", composites.len());
    out.write("index_summary.csv", stage("composite", || index_summary_csv(&composites))?)?;

    let masks = stage("burn", || {
        let masks = burn_masks(&composites, &cfg.thresholds)?;
        let date = study_start(&cfg.study)?;
        for (t, mask) in &masks {
            let dir = out.path(&format!("masks/{}/{HEADER_FILE}", mask_dir_name(*t)))?;
            write_mask(mask, date, dir.parent().expect("joined path has a parent"))?;
        }
        Ok(masks)
    })?;
    out.files += masks.len() * 2;
    drop(composites);
    for (t, mask) in &masks {
        m.set(format!("burn.burned_cells_{}", threshold_label(*t)), mask.count_true());
        m.set(format!("burn.valid_cells_{}", threshold_label(*t)), mask.count_valid());
    }

    let survey = stage("survey", || survey_stage(&cfg.required("survey", &cfg.paths.survey)?, cfg.survey.max_plot_area))?;
    let zones = stage("zones", || build_zones(&survey.area_cleaned, &cfg.projection, &cfg.zones))?;
    let excluded = zones.excluded_villages();
    let (records, log) = analysis_sample(&survey.load, cfg.survey.max_plot_area, &excluded);
    let villages_in_survey = village_districts(&survey.load.records).len();
    m.set("survey.rows_read", survey.load.rows_read);
    m.set("survey.rows_rejected", survey.load.rejected.len());
    m.set("survey.villages", villages_in_survey);
    m.set("survey.area_outliers", log.dropped_area_outlier);
    m.set("survey.excluded_village_rows", log.dropped_excluded_village);
    m.set("survey.analysis_records", records.len());
    m.set("survey.analysis_villages", village_districts(&records).len());
    out.write("survey/cleaning_log.txt", log.to_text())?;
    out.write("survey/rejected_rows.csv", stage("survey", || rejected_rows_csv(&survey.load))?)?;
    out.write("survey/village_burn_share.csv", burn_share_csv(&records))?;
    out.write("tables/table1_summary.csv", summary_table_csv(&summary_stats(&records)))?;

    m.set("zones.villages_without_coordinates", zones.without_coordinates.len());
    m.set("zones.villages_excluded_by_distance", zones.village.excluded_villages.len());
    m.set("zones.outlier_plots_dropped", zones.village.dropped_plots);
    m.set("zones.village_boxes", zones.village.boxes.len());
    m.set("zones.plot_boxes", zones.plot.boxes.len());
    m.set("zones.plot_boxes_enlarged", zones.plot.enlarged.len());
    m.set("zones.mean_plot_distance_m", fmt_sig(zones.village.mean_distance));
    m.set("zones.village_box_side_m", fmt_opt(zones.village_box_side()));
    stage("zones", || write_zone_files(&zones, &out.path("zones/zone_log.txt")?.with_file_name("")))?;
    out.files += 5;

    let mut village_fr = Vec::new();
    let mut plot_fr = Vec::new();
    for (t, mask) in &masks {
        for (kind, boxes, acc) in [
            (ZoneKind::VillageBox, &zones.village.boxes, &mut village_fr),
            (ZoneKind::PlotBox, &zones.plot.boxes, &mut plot_fr),
        ] {
            let counts = stage("zonal", || zonal_table(mask, boxes))?;
            out.write(&format!("zonal/{}.csv", indicator_name(kind, *t)), zonal_csv(boxes, &counts))?;
            let fr: BTreeMap<String, Option<f64>> =
                boxes.iter().zip(&counts).map(|(z, c)| (z.zone_id.clone(), c.fraction())).collect();
            acc.push((*t, fr));
        }
    }
    m.set("zonal.village_zones", zones.village.boxes.len());
    m.set("zonal.plot_zones", zones.plot.boxes.len());

    let table = IndicatorTable::build(&records, &village_fr, &plot_fr);
    m.set("indicators.villages", table.villages.len());
    m.set("indicators.columns", table.names().join(","));
    out.write("indicators.csv", table.to_csv())?;

    let regs = stage("regress", || run_regressions(&records, &table, &cfg.regression))?;
    for (name, text) in regs.tables() {
        out.write(&format!("tables/{name}"), text)?;
    }
    let n_obs = |l: &Ladder| l.fits.iter().map(|f| f.n_obs.to_string()).collect::<Vec<_>>().join(",");
    m.set("regress.eq1.fe", cfg.regression.eq1_fe);
    m.set("regress.eq1.n_obs", n_obs(&regs.eq1));
    m.set("regress.eq2.fe", cfg.regression.eq2_fe);
    for r in &regs.eq2 {
        m.set(format!("regress.eq2_{}.n_obs", r.indicator), n_obs(&r.ladder));
        m.set(format!("regress.eq2_{}.records_without_value", r.indicator), r.missing);
    }

    out.write("tables/table2_correlations.csv", table.correlation_csv())?;

    let figs = figure_files(&table, cfg.thresholds.primary);
    m.set("plot.figures", figs.len());
    for (name, svg) in figs {
        out.write(&format!("figures/{name}"), svg)?;
    }

    if let Some(p) = &cfg.paths.fire_points {
        let fv = stage("fire_validation", || validate_fires(&cfg.resolve(p), &cfg.projection, &aux.urban, &masks))?;
        m.set("fire.points_read", fv.points_read);
        m.set("fire.kept", fv.filter.kept.len());
        m.set("fire.dropped_confidence", fv.filter.dropped_confidence);
        m.set("fire.dropped_type", fv.filter.dropped_type);
        m.set("fire.dropped_urban", fv.filter.dropped_urban);
        m.set("fire.dropped_outside", fv.filter.dropped_outside);
        out.write("validation/fire_filter.txt", fv.filter_text())?;
        for (t, r) in &fv.overlaps {
            out.write(&format!("validation/overlap_{}.txt", threshold_label(*t)), r.to_text())?;
        }
    }

    m.set("outputs.files", out.files + 1);
    if opts.record_timing {
        m.set("timing.wall_seconds", format!("{:.3}", started.elapsed().as_secs_f64()));
    }
    out.write(MANIFEST_FILE, m.to_text())?;
    Ok(m)
}
