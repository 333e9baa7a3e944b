//! Analysis rectangles built from survey plot locations, and burned-area
//! fractions over them.
//!
//! Two zone schemes exist per village: an equal-area square around the
//! village centre sized from the average plot-to-centre distance, and the
//! padded bounding rectangle of the village's plots. Fire-detection
//! footprints reuse the same rectangle type.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{fmt_coord, fmt_sig};
use crate::raster::{BinaryMask, GridGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneKind {
    VillageBox,
    PlotBox,
    FireSquare,
}

impl ZoneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ZoneKind::VillageBox => "village_box",
            ZoneKind::PlotBox => "plot_box",
            ZoneKind::FireSquare => "fire_square",
        }
    }
}

impl fmt::Display for ZoneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ZoneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "village_box" => Ok(ZoneKind::VillageBox),
            "plot_box" => Ok(ZoneKind::PlotBox),
            "fire_square" => Ok(ZoneKind::FireSquare),
            other => Err(Error::format("zone kind", other)),
        }
    }
}

/// A point in the projected metric frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned analysis rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonePolygon {
    pub zone_id: String,
    pub kind: ZoneKind,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl ZonePolygon {
    pub fn new(zone_id: impl Into<String>, kind: ZoneKind, x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let zone = ZonePolygon {
            zone_id: zone_id.into(),
            kind,
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !(x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite())
            || x_min >= x_max
            || y_min >= y_max
        {
            return Err(Error::Validation(format!(
                "zone `{}` is degenerate: ({x_min}, {y_min})-({x_max}, {y_max})",
                zone.zone_id
            )));
        }
        Ok(zone)
    }

    pub fn centered(zone_id: impl Into<String>, kind: ZoneKind, center: Point, width: f64, height: f64) -> Result<Self> {
        Self::new(
            zone_id,
            kind,
            center.x - width / 2.0,
            center.y - height / 2.0,
            center.x + width / 2.0,
            center.y + height / 2.0,
        )
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    /// Half-open containment used for pixel centres: west and north edges
    /// are inside, east and south edges are outside.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x_min <= x && x < self.x_max && self.y_min < y && y <= self.y_max
    }

    pub fn contains_strictly(&self, p: &Point) -> bool {
        self.x_min < p.x && p.x < self.x_max && self.y_min < p.y && p.y < self.y_max
    }

    pub fn intersects_extent(&self, g: &GridGeometry) -> bool {
        let (x0, y0, x1, y1) = g.extent();
        self.x_min < x1 && self.x_max > x0 && self.y_min < y1 && self.y_max > y0
    }

    /// Closed five-vertex ring, counter-clockwise from the south-west corner.
    pub fn ring(&self) -> [(f64, f64); 5] {
        [
            (self.x_min, self.y_min),
            (self.x_max, self.y_min),
            (self.x_max, self.y_max),
            (self.x_min, self.y_max),
            (self.x_min, self.y_min),
        ]
    }
}

/// Local equirectangular projection around a reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalProjection {
    pub ref_lon: f64,
    pub ref_lat: f64,
    /// Meters per degree of longitude at the equator.
    pub meters_per_deg_lon: f64,
    pub meters_per_deg_lat: f64,
    /// Map coordinates assigned to the reference point.
    pub false_easting: f64,
    pub false_northing: f64,
    /// Largest accepted offset from the reference, in degrees.
    pub max_offset_deg: f64,
}

impl Default for LocalProjection {
    fn default() -> Self {
        LocalProjection {
            ref_lon: 0.0,
            ref_lat: 0.0,
            meters_per_deg_lon: 111_320.0,
            meters_per_deg_lat: 110_540.0,
            false_easting: 0.0,
            false_northing: 0.0,
            max_offset_deg: 3.0,
        }
    }
}

impl LocalProjection {
    pub fn new(ref_lon: f64, ref_lat: f64) -> Self {
        LocalProjection {
            ref_lon,
            ref_lat,
            ..Default::default()
        }
    }

    pub fn with_offset(mut self, false_easting: f64, false_northing: f64) -> Self {
        self.false_easting = false_easting;
        self.false_northing = false_northing;
        self
    }

    fn lon_scale(&self) -> f64 {
        self.ref_lat.to_radians().cos() * self.meters_per_deg_lon
    }

    pub fn project(&self, lon: f64, lat: f64) -> Result<Point> {
        let (dlon, dlat) = (lon - self.ref_lon, lat - self.ref_lat);
        if !(dlon.abs() <= self.max_offset_deg && dlat.abs() <= self.max_offset_deg) {
            return Err(Error::Validation(format!(
                "({lon}, {lat}) lies more than {} degrees from the projection reference",
                self.max_offset_deg
            )));
        }
        Ok(Point::new(
            self.false_easting + dlon * self.lon_scale(),
            self.false_northing + dlat * self.meters_per_deg_lat,
        ))
    }

    pub fn unproject(&self, p: Point) -> (f64, f64) {
        (
            self.ref_lon + (p.x - self.false_easting) / self.lon_scale(),
            self.ref_lat + (p.y - self.false_northing) / self.meters_per_deg_lat,
        )
    }
}

pub fn project_points(points: &[(f64, f64)], proj: &LocalProjection) -> Result<Vec<Point>> {
    points.iter().map(|&(lon, lat)| proj.project(lon, lat)).collect()
}

pub type PlotsByVillage = BTreeMap<String, Vec<Point>>;

fn mean_point(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point::new(sx / n, sy / n)
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VillageBoxParams {
    pub margin: f64,
    pub outlier_cutoff: f64,
}

impl Default for VillageBoxParams {
    fn default() -> Self {
        VillageBoxParams {
            margin: 0.20,
            outlier_cutoff: 10_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VillageBoxes {
    pub boxes: Vec<ZonePolygon>,
    pub centers: BTreeMap<String, Point>,
    /// Plots kept after outlier removal, per village.
    pub retained: PlotsByVillage,
    /// Mean retained plot-to-centre distance over all villages.
    pub mean_distance: f64,
    pub dropped_plots: usize,
    /// Villages whose every plot exceeded the outlier cutoff.
    pub excluded_villages: Vec<String>,
}

/// Equal-area village squares.
///
/// Plots farther than `outlier_cutoff` from the coordinate-wise median of
/// their village are dropped; centres are the means of the remaining
/// plots; every square has half-side `mean_distance * (1 + margin)`.
pub fn village_boxes(plots: &PlotsByVillage, params: &VillageBoxParams) -> Result<VillageBoxes> {
    if !(params.margin >= 0.0 && params.outlier_cutoff > 0.0) {
        return Err(Error::Validation("margin must be >= 0 and outlier cutoff > 0".into()));
    }
    let mut retained = PlotsByVillage::new();
    let mut centers = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut dropped = 0;
    for (village, points) in plots {
        if points.is_empty() {
            return Err(Error::Insufficient(format!("village `{village}` has no plot coordinates")));
        }
        let provisional = Point::new(
            median_of(points.iter().map(|p| p.x).collect()),
            median_of(points.iter().map(|p| p.y).collect()),
        );
        let kept: Vec<Point> = points
            .iter()
            .copied()
            .filter(|p| p.distance(&provisional) <= params.outlier_cutoff)
            .collect();
        dropped += points.len() - kept.len();
        if kept.is_empty() {
            excluded.push(village.clone());
            continue;
        }
        centers.insert(village.clone(), mean_point(&kept));
        retained.insert(village.clone(), kept);
    }
    if retained.is_empty() {
        return Err(Error::Insufficient("no village retained any plot".into()));
    }
    let (sum, count) = retained.iter().fold((0.0, 0usize), |(s, n), (v, pts)| {
        let c = centers[v];
        (s + pts.iter().map(|p| p.distance(&c)).sum::<f64>(), n + pts.len())
    });
    let mean_distance = sum / count as f64;
    let side = 2.0 * mean_distance * (1.0 + params.margin);
    if !(side > 0.0) {
        return Err(Error::Insufficient(
            "every retained plot sits on its village centre; box size is undefined".into(),
        ));
    }
    let boxes = centers
        .iter()
        .map(|(v, c)| ZonePolygon::centered(v.clone(), ZoneKind::VillageBox, *c, side, side))
        .collect::<Result<_>>()?;
    if !excluded.is_empty() || dropped > 0 {
        log::info!(
            "village boxes: dropped {dropped} outlier plots, excluded {} villages",
            excluded.len()
        );
    }
    Ok(VillageBoxes {
        boxes,
        centers,
        retained,
        mean_distance,
        dropped_plots: dropped,
        excluded_villages: excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotBoxParams {
    pub margin: f64,
    pub min_area: f64,
}

impl Default for PlotBoxParams {
    fn default() -> Self {
        PlotBoxParams {
            margin: 0.20,
            min_area: 150_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotBoxes {
    pub boxes: Vec<ZonePolygon>,
    pub mean_base_area: f64,
    /// Villages whose box was enlarged to the minimum area.
    pub enlarged: Vec<String>,
}

/// Width of the uniform buffer that grows a `w x h` rectangle by `extra` m².
fn buffer_for(w: f64, h: f64, extra: f64) -> f64 {
    // (w + 2b)(h + 2b) - wh = extra  =>  4b² + 2(w + h)b - extra = 0
    let s = w + h;
    (-s + (s * s + 4.0 * extra).sqrt()) / 4.0
}

/// Padded per-village bounding rectangles of plot locations.
///
/// Each base rectangle gains a uniform buffer adding `margin` times the
/// mean base area; rectangles still below `min_area` are scaled about their
/// centre to exactly `min_area`.
pub fn plot_boxes(plots: &PlotsByVillage, params: &PlotBoxParams) -> Result<PlotBoxes> {
    if !(params.margin >= 0.0 && params.min_area > 0.0) {
        return Err(Error::Validation("margin must be >= 0 and min_area > 0".into()));
    }
    let bases: Vec<(&String, f64, f64, f64, f64)> = plots
        .iter()
        .filter(|(_, pts)| !pts.is_empty())
        .map(|(v, pts)| {
            let x0 = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
            let x1 = pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
            let y0 = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            let y1 = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
            (v, x0, y0, x1, y1)
        })
        .collect();
    if bases.is_empty() {
        return Err(Error::Insufficient("no village has plot coordinates".into()));
    }
    let mean_base_area =
        bases.iter().map(|(_, x0, y0, x1, y1)| (x1 - x0) * (y1 - y0)).sum::<f64>() / bases.len() as f64;
    let extra = params.margin * mean_base_area;

    let mut boxes = Vec::with_capacity(bases.len());
    let mut enlarged = Vec::new();
    for (village, x0, y0, x1, y1) in bases {
        let (w, h) = (x1 - x0, y1 - y0);
        let center = Point::new((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let b = buffer_for(w, h, extra);
        let (mut pw, mut ph) = (w + 2.0 * b, h + 2.0 * b);
        if pw * ph == 0.0 {
            // Collinear plots with no padding: square at least twice the longest extent.
            let side = params.min_area.sqrt().max(2.0 * w.max(h));
            pw = side;
            ph = side;
        }
        if pw * ph < params.min_area {
            let s = (params.min_area / (pw * ph)).sqrt();
            pw *= s;
            ph *= s;
            enlarged.push(village.clone());
        }
        boxes.push(ZonePolygon::centered(village.clone(), ZoneKind::PlotBox, center, pw, ph)?);
    }
    Ok(PlotBoxes {
        boxes,
        mean_base_area,
        enlarged,
    })
}

/// Burned and valid cell counts inside a zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ZonalCounts {
    pub burned: usize,
    pub valid: usize,
}

impl ZonalCounts {
    pub fn fraction(&self) -> Option<f64> {
        (self.valid > 0).then(|| self.burned as f64 / self.valid as f64)
    }
}

/// Column range whose centres satisfy `lo <= centre < hi`, checked with the
/// same arithmetic as [`GridGeometry::pixel_center`].
fn col_range(g: &GridGeometry, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let approx_lo = ((lo - g.origin_x) / g.pixel_size - 0.5).floor() - 1.0;
    let approx_hi = ((hi - g.origin_x) / g.pixel_size - 0.5).ceil() + 1.0;
    let a = approx_lo.clamp(0.0, g.width as f64) as usize;
    let b = approx_hi.clamp(0.0, g.width as f64) as usize;
    let start = (a..b).find(|&c| g.center_x(c) >= lo).unwrap_or(b);
    let end = (start..b).rev().find(|&c| g.center_x(c) < hi).map_or(start, |c| c + 1);
    start..end
}

/// Row range whose centres satisfy `lo < centre <= hi`.
fn row_range(g: &GridGeometry, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let approx_lo = ((g.origin_y - hi) / g.pixel_size - 0.5).floor() - 1.0;
    let approx_hi = ((g.origin_y - lo) / g.pixel_size - 0.5).ceil() + 1.0;
    let a = approx_lo.clamp(0.0, g.height as f64) as usize;
    let b = approx_hi.clamp(0.0, g.height as f64) as usize;
    let start = (a..b).find(|&r| g.center_y(r) <= hi).unwrap_or(b);
    let end = (start..b).rev().find(|&r| g.center_y(r) > lo).map_or(start, |r| r + 1);
    start..end
}

/// Cells whose centres fall inside the zone, as row and column ranges.
pub fn zone_cells(g: &GridGeometry, zone: &ZonePolygon) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    (row_range(g, zone.y_min, zone.y_max), col_range(g, zone.x_min, zone.x_max))
}

pub fn zonal_counts(mask: &BinaryMask, zone: &ZonePolygon) -> Result<ZonalCounts> {
    let g = mask.geometry();
    if !zone.intersects_extent(g) {
        return Err(Error::Validation(format!(
            "zone `{}` does not intersect the raster extent",
            zone.zone_id
        )));
    }
    let (rows, cols) = zone_cells(g, zone);
    let mut counts = ZonalCounts::default();
    for r in rows {
        for c in cols.clone() {
            match mask.get(r, c) {
                Some(true) => {
                    counts.burned += 1;
                    counts.valid += 1;
                }
                Some(false) => counts.valid += 1,
                None => {}
            }
        }
    }
    Ok(counts)
}

/// Burned share of the valid cells centred in the zone; `None` when the
/// zone holds no valid cell.
pub fn zonal_fraction(mask: &BinaryMask, zone: &ZonePolygon) -> Result<Option<f64>> {
    Ok(zonal_counts(mask, zone)?.fraction())
}

const ZONE_HEADER: [&str; 7] = ["zone_id", "kind", "x_min", "y_min", "x_max", "y_max", "area_m2"];

pub fn write_zones_csv(path: &Path, zones: &[ZonePolygon]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let wrap = |e: csv::Error| Error::format(path.display().to_string(), e.to_string());
    w.write_record(ZONE_HEADER).map_err(wrap)?;
    for z in zones {
        w.write_record([
            z.zone_id.clone(),
            z.kind.to_string(),
            fmt_coord(z.x_min),
            fmt_coord(z.y_min),
            fmt_coord(z.x_max),
            fmt_coord(z.y_max),
            fmt_sig(z.area()),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_zones_csv(path: &Path) -> Result<Vec<ZonePolygon>> {
    let wrap = |e: csv::Error| Error::format(path.display().to_string(), e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let header = r.headers().map_err(wrap)?.clone();
    let pos = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path.display().to_string(), format!("missing column `{name}`")))
    };
    let idx = [pos("zone_id")?, pos("kind")?, pos("x_min")?, pos("y_min")?, pos("x_max")?, pos("y_max")?];
    let mut zones = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(wrap)?;
        let num = |k: usize| -> Result<f64> {
            rec.get(idx[k])
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::format(path.display().to_string(), format!("bad number on data row {}", line + 1)))
        };
        zones.push(ZonePolygon::new(
            rec.get(idx[0]).unwrap_or(""),
            rec.get(idx[1]).unwrap_or("").parse()?,
            num(2)?,
            num(3)?,
            num(4)?,
            num(5)?,
        )?);
    }
    Ok(zones)
}

/// One `POLYGON` per line in well-known text, ring closed.
pub fn write_zones_wkt(path: &Path, zones: &[ZonePolygon]) -> Result<()> {
    let mut out = Vec::new();
    for z in zones {
        let ring: Vec<String> = z
            .ring()
            .iter()
            .map(|(x, y)| format!("{} {}", fmt_coord(*x), fmt_coord(*y)))
            .collect();
        writeln!(out, "{};{};POLYGON (({}))", z.zone_id, z.kind, ring.join(", ")).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GridGeometry;
    use proptest::prelude::*;

    fn grid() -> GridGeometry {
        GridGeometry::new(40, 30, 1000.0, 2000.0, 10.0, 32643).unwrap()
    }

    /// Exhaustive scan of every pixel centre.
    fn brute_force(mask: &BinaryMask, zone: &ZonePolygon) -> ZonalCounts {
        let g = mask.geometry();
        let mut c = ZonalCounts::default();
        for r in 0..g.height {
            for col in 0..g.width {
                let (x, y) = g.pixel_center(r, col).unwrap();
                if zone.contains(x, y) {
                    match mask.get(r, col) {
                        Some(true) => {
                            c.burned += 1;
                            c.valid += 1
                        }
                        Some(false) => c.valid += 1,
                        None => {}
                    }
                }
            }
        }
        c
    }

    #[test]
    fn projection_basics() {
        let proj = LocalProjection::new(75.5, 30.5);
        assert_eq!(proj.project(75.5, 30.5).unwrap(), Point::new(0.0, 0.0));
        let p = proj.project(75.5, 30.51).unwrap();
        assert!((p.y - 1105.4).abs() < 1e-6, "{}", p.y);
        assert!(proj.project(80.0, 30.5).is_err());
    }

    #[test]
    fn projection_round_trip() {
        let proj = LocalProjection::new(75.5, 30.5).with_offset(500_000.0, 3_400_000.0);
        let mut s = 7u64;
        for _ in 0..1000 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            let lon = 75.5 + ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 5.8;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            let lat = 30.5 + ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 5.8;
            let p = proj.project(lon, lat).unwrap();
            let (lon2, lat2) = proj.unproject(p);
            let back = proj.project(lon2, lat2).unwrap();
            assert!(p.distance(&back) < 1.0);
            assert!((lon - lon2).abs() < 1e-9 && (lat - lat2).abs() < 1e-9);
        }
    }

    #[test]
    fn village_box_side_from_mean_distance() {
        // Four plots 1200 m from each centre along the axes.
        let mut plots = PlotsByVillage::new();
        for (k, cx) in [0.0, 10_000.0].into_iter().enumerate() {
            plots.insert(
                format!("v{k}"),
                vec![
                    Point::new(cx + 1200.0, 0.0),
                    Point::new(cx - 1200.0, 0.0),
                    Point::new(cx, 1200.0),
                    Point::new(cx, -1200.0),
                ],
            );
        }
        let vb = village_boxes(&plots, &VillageBoxParams::default()).unwrap();
        assert!((vb.mean_distance - 1200.0).abs() < 1e-9);
        for b in &vb.boxes {
            assert!((b.width() - 2880.0).abs() < 1e-9);
            assert!((b.area() - 8_294_400.0).abs() < 1e-3);
        }
        assert_eq!(vb.boxes[1].center(), Point::new(10_000.0, 0.0));
    }

    #[test]
    fn single_plot_village_is_centered_on_its_plot() {
        let mut plots = PlotsByVillage::new();
        plots.insert("a".into(), vec![Point::new(0.0, 0.0), Point::new(600.0, 0.0)]);
        plots.insert("b".into(), vec![Point::new(5000.0, 5000.0)]);
        let vb = village_boxes(&plots, &VillageBoxParams::default()).unwrap();
        assert_eq!(vb.boxes[1].center(), Point::new(5000.0, 5000.0));
        // d̄ = (300 + 300 + 0) / 3
        assert!((vb.boxes[1].width() - 2.0 * 200.0 * 1.2).abs() < 1e-9);
    }

    #[test]
    fn outlier_excluded_from_center_and_mean_distance() {
        let good = vec![
            Point::new(1000.0, 0.0),
            Point::new(-1000.0, 0.0),
            Point::new(0.0, 500.0),
            Point::new(0.0, -500.0),
        ];
        let mut with = good.clone();
        with.push(Point::new(80_000.0, 0.0));
        let mut plots = PlotsByVillage::new();
        plots.insert("v".into(), with);
        let vb = village_boxes(&plots, &VillageBoxParams::default()).unwrap();
        // By hand without the outlier: centre (0, 0); distances 1000, 1000, 500, 500.
        assert_eq!(vb.centers["v"], Point::new(0.0, 0.0));
        assert!((vb.mean_distance - 750.0).abs() < 1e-9);
        assert_eq!(vb.dropped_plots, 1);
        assert_eq!(vb.retained["v"], good);
    }

    #[test]
    fn village_with_all_plots_scattered_is_excluded() {
        let mut plots = PlotsByVillage::new();
        plots.insert("ok".into(), vec![Point::new(0.0, 0.0), Point::new(100.0, 0.0)]);
        plots.insert("far".into(), vec![Point::new(0.0, 0.0), Point::new(80_000.0, 0.0)]);
        let vb = village_boxes(&plots, &VillageBoxParams::default()).unwrap();
        assert_eq!(vb.excluded_villages, vec!["far".to_string()]);
        assert_eq!(vb.boxes.len(), 1);

        plots.insert("empty".into(), vec![]);
        assert!(village_boxes(&plots, &VillageBoxParams::default()).is_err());
    }

    #[test]
    fn single_point_plot_box_is_min_area_square() {
        let mut plots = PlotsByVillage::new();
        plots.insert("a".into(), vec![Point::new(10.0, 20.0)]);
        let pb = plot_boxes(&plots, &PlotBoxParams::default()).unwrap();
        let b = &pb.boxes[0];
        assert!((b.area() - 150_000.0).abs() < 1e-6);
        assert!((b.width() - b.height()).abs() < 1e-9);
        assert!(b.contains_strictly(&Point::new(10.0, 20.0)));
    }

    #[test]
    fn two_plot_base_rectangle_then_margin() {
        let mut plots = PlotsByVillage::new();
        plots.insert("a".into(), vec![Point::new(0.0, 0.0), Point::new(1000.0, 500.0)]);
        let pb = plot_boxes(&plots, &PlotBoxParams { margin: 0.20, min_area: 1.0 }).unwrap();
        assert_eq!(pb.mean_base_area, 500_000.0);
        let b = &pb.boxes[0];
        // Area grows by exactly 0.2 * 500 000 with an equal buffer on each side.
        assert!((b.area() - 600_000.0).abs() < 1e-6);
        let buf_x = (b.width() - 1000.0) / 2.0;
        let buf_y = (b.height() - 500.0) / 2.0;
        assert!((buf_x - buf_y).abs() < 1e-9);
        let no_margin = plot_boxes(&plots, &PlotBoxParams { margin: 0.0, min_area: 1.0 }).unwrap();
        assert_eq!((no_margin.boxes[0].width(), no_margin.boxes[0].height()), (1000.0, 500.0));
    }

    #[test]
    fn collinear_plots_still_get_a_box() {
        let mut plots = PlotsByVillage::new();
        plots.insert("a".into(), vec![Point::new(0.0, 0.0), Point::new(0.0, 900.0)]);
        let pb = plot_boxes(&plots, &PlotBoxParams::default()).unwrap();
        let b = &pb.boxes[0];
        assert!(b.area() >= 150_000.0);
        assert!(b.contains_strictly(&Point::new(0.0, 0.0)));
        assert!(b.contains_strictly(&Point::new(0.0, 900.0)));
    }

    #[test]
    fn zonal_fraction_ratio_and_nodata() {
        let g = GridGeometry::new(10, 10, 0.0, 100.0, 10.0, 32643).unwrap();
        let mut cells = vec![Some(false); 100];
        for c in cells.iter_mut().take(7) {
            *c = Some(true);
        }
        let mask = BinaryMask::new(g, cells).unwrap();
        let all = ZonePolygon::new("z", ZoneKind::PlotBox, 0.0, 0.0, 100.0, 100.0).unwrap();
        assert_eq!(zonal_fraction(&mask, &all).unwrap(), Some(0.07));

        let empty = BinaryMask::filled(g, None).unwrap();
        assert_eq!(zonal_fraction(&empty, &all).unwrap(), None);

        let away = ZonePolygon::new("far", ZoneKind::PlotBox, 500.0, 500.0, 600.0, 600.0).unwrap();
        assert!(zonal_fraction(&mask, &away).is_err());
    }

    #[test]
    fn abutting_zones_never_share_a_cell() {
        let g = grid();
        let mask = BinaryMask::filled(g, Some(true)).unwrap();
        // Split exactly on a pixel-centre line.
        let (x, _) = g.pixel_center(0, 17).unwrap();
        let left = ZonePolygon::new("l", ZoneKind::PlotBox, 1000.0, 1700.0, x, 2000.0).unwrap();
        let right = ZonePolygon::new("r", ZoneKind::PlotBox, x, 1700.0, 1400.0, 2000.0).unwrap();
        let whole = ZonePolygon::new("w", ZoneKind::PlotBox, 1000.0, 1700.0, 1400.0, 2000.0).unwrap();
        let (l, r, w) = (
            zonal_counts(&mask, &left).unwrap(),
            zonal_counts(&mask, &right).unwrap(),
            zonal_counts(&mask, &whole).unwrap(),
        );
        assert_eq!(l.valid + r.valid, w.valid);
        assert_eq!(w.valid, g.len());
    }

    #[test]
    fn zone_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let zones = vec![
            ZonePolygon::new("v1", ZoneKind::VillageBox, 500_000.125, 3_400_000.5, 502_880.125, 3_402_880.5).unwrap(),
            ZonePolygon::new("v2", ZoneKind::PlotBox, -1.5, -2.25, 3.0, 4.0).unwrap(),
        ];
        let p = dir.path().join("zones.csv");
        write_zones_csv(&p, &zones).unwrap();
        assert_eq!(read_zones_csv(&p).unwrap(), zones);
        let wkt = dir.path().join("zones.wkt");
        write_zones_wkt(&wkt, &zones).unwrap();
        let text = fs::read_to_string(wkt).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("v1;village_box;POLYGON ((500000.125 3400000.500, 502880.125 3400000.500"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn zonal_counts_match_brute_force(
            seed in any::<u64>(),
            x0 in 950.0f64..1400.0, w in 0.5f64..300.0,
            y0 in 1650.0f64..2000.0, h in 0.5f64..300.0,
            snap in any::<bool>(),
        ) {
            let g = grid();
            let mut s = seed | 1;
            let cells = (0..g.len()).map(|_| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                match s % 5 { 0 => None, 1 | 2 => Some(true), _ => Some(false) }
            }).collect();
            let mask = BinaryMask::new(g, cells).unwrap();
            // Snapping puts edges exactly on pixel-centre lines.
            let (x0, y0, w, h) = if snap {
                (x0.floor() + 5.0, y0.floor() + 5.0, w.ceil() * 10.0, h.ceil() * 10.0)
            } else { (x0, y0, w, h) };
            let zone = ZonePolygon::new("z", ZoneKind::PlotBox, x0, y0, x0 + w, y0 + h).unwrap();
            prop_assume!(zone.intersects_extent(&g));
            let fast = zonal_counts(&mask, &zone).unwrap();
            prop_assert_eq!(fast, brute_force(&mask, &zone));
        }

        #[test]
        fn plot_boxes_contain_their_plots(seed in any::<u64>(), villages in 1usize..8) {
            let mut s = seed | 1;
            let mut next = || { s ^= s << 13; s ^= s >> 7; s ^= s << 17; (s >> 11) as f64 / (1u64 << 53) as f64 };
            let mut plots = PlotsByVillage::new();
            for v in 0..villages {
                let n = 1 + (next() * 12.0) as usize;
                let spread = next() * 2000.0;
                let pts = (0..n).map(|_| Point::new(v as f64 * 5000.0 + next() * spread, next() * spread)).collect();
                plots.insert(format!("v{v}"), pts);
            }
            let pb = plot_boxes(&plots, &PlotBoxParams::default()).unwrap();
            for b in &pb.boxes {
                prop_assert!(b.area() >= 150_000.0 * (1.0 - 1e-12));
                for p in &plots[&b.zone_id] {
                    prop_assert!(b.contains_strictly(p));
                }
            }
        }
    }
}
