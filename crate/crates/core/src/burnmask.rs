//! Thresholded burn masks, their study-period composite, and checks of the
//! masks against active-fire detections.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{fmt_coord, fmt_sig};
use crate::raster::BinaryMask;
use crate::spectral::{IndexKind, IndexRaster};
use crate::zones::{zone_cells, LocalProjection, ZoneKind, ZonePolygon};

/// BAIS2 thresholds evaluated by default.
pub const DEFAULT_BAIS2_SWEEP: [f64; 3] = [0.85, 0.90, 0.95];
pub const DEFAULT_NBR_THRESHOLD: f64 = 0.20;
/// Side of a fire-detection footprint in meters.
pub const FIRE_SQUARE_SIDE: f64 = 375.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub bais2_threshold: f64,
    pub nbr_threshold: f64,
}

impl ThresholdSpec {
    pub fn new(bais2_threshold: f64, nbr_threshold: f64) -> Result<Self> {
        if !(bais2_threshold.is_finite() && nbr_threshold.is_finite()) {
            return Err(Error::Validation("thresholds must be finite".into()));
        }
        Ok(ThresholdSpec {
            bais2_threshold,
            nbr_threshold,
        })
    }
}

/// Burned where `BAIS2 > t_bais2` and `NBR < t_nbr`; nodata where either index is.
///
/// Comparisons happen at the `f32` precision the indices are stored in, so
/// an index value equal to the threshold literal never passes.
pub fn threshold_burn(bais2: &IndexRaster, nbr: &IndexRaster, spec: &ThresholdSpec) -> Result<BinaryMask> {
    if bais2.kind != IndexKind::Bais2 || nbr.kind != IndexKind::Nbr {
        return Err(Error::Validation(format!(
            "threshold_burn expects BAIS2 and NBR rasters, got {} and {}",
            bais2.kind, nbr.kind
        )));
    }
    bais2.geometry.ensure_same(&nbr.geometry, "BAIS2 vs NBR")?;
    let (tb, tn) = (spec.bais2_threshold as f32, spec.nbr_threshold as f32);
    let cells = (0..bais2.values.len())
        .into_par_iter()
        .map(|i| match (bais2.get(i), nbr.get(i)) {
            (Some(b), Some(n)) => Some(b > tb && n < tn),
            _ => None,
        })
        .collect();
    BinaryMask::new(bais2.geometry, cells)
}

/// Per-cell logical OR across masks, treating nodata as "no evidence".
pub fn max_composite(masks: &[BinaryMask]) -> Result<BinaryMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Insufficient("max composite of zero masks".into()))?;
    for m in &masks[1..] {
        first.geometry().ensure_same(m.geometry(), "max composite")?;
    }
    let cells = (0..first.cells().len())
        .into_par_iter()
        .map(|i| {
            masks.iter().fold(None, |acc, m| match (acc, m.cells()[i]) {
                (Some(true), _) | (_, Some(true)) => Some(true),
                (Some(false), _) | (_, Some(false)) => Some(false),
                _ => None,
            })
        })
        .collect();
    BinaryMask::new(*first.geometry(), cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Low,
    Nominal,
    High,
}

impl FromStr for Confidence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l" | "low" => Ok(Confidence::Low),
            "n" | "nominal" => Ok(Confidence::Nominal),
            "h" | "high" => Ok(Confidence::High),
            other => Err(Error::format("fire confidence", other)),
        }
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Confidence::Low => "l",
            Confidence::Nominal => "n",
            Confidence::High => "h",
        })
    }
}

/// An active-fire detection located at the centre of the sensor pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FireDetection {
    pub x: f64,
    pub y: f64,
    pub confidence: Confidence,
    pub fire_type: i32,
    pub date: NaiveDate,
}

/// Reads detections from a comma-delimited file with columns
/// `x,y,confidence,type,date` or `lon,lat,confidence,type,date`.
pub fn read_fire_points(path: &Path, projection: Option<&LocalProjection>) -> Result<Vec<FireDetection>> {
    let name = path.display().to_string();
    let wrap = |e: csv::Error| Error::format(name.clone(), e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let header = r.headers().map_err(wrap)?.clone();
    let col = |n: &str| header.iter().position(|h| h.trim() == n);
    let (xi, yi, geographic) = match (col("x"), col("y"), col("lon"), col("lat")) {
        (Some(x), Some(y), _, _) => (x, y, false),
        (_, _, Some(x), Some(y)) => (x, y, true),
        _ => return Err(Error::format(name, "needs x,y or lon,lat columns")),
    };
    let need = |n: &str| col(n).ok_or_else(|| Error::format(name.clone(), format!("missing column `{n}`")));
    let (ci, ti, di) = (need("confidence")?, need("type")?, need("date")?);
    if geographic && projection.is_none() {
        return Err(Error::Validation("lon/lat fire points need a projection".into()));
    }
    let mut points = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(wrap)?;
        let bad = |what: &str| Error::format(name.clone(), format!("data row {}: bad {what}", k + 1));
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let a: f64 = field(xi).parse().map_err(|_| bad("coordinate"))?;
        let b: f64 = field(yi).parse().map_err(|_| bad("coordinate"))?;
        let (x, y) = match projection.filter(|_| geographic) {
            Some(p) => {
                let pt = p.project(a, b)?;
                (pt.x, pt.y)
            }
            None => (a, b),
        };
        points.push(FireDetection {
            x,
            y,
            confidence: field(ci).parse()?,
            fire_type: field(ti).parse().map_err(|_| bad("type"))?,
            date: field(di).parse().map_err(|_| bad("date"))?,
        });
    }
    Ok(points)
}

pub fn write_fire_points(path: &Path, points: &[FireDetection]) -> Result<()> {
    let mut text = String::from("x,y,confidence,type,date\n");
    for p in points {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_coord(p.x),
            fmt_coord(p.y),
            p.confidence,
            p.fire_type,
            p.date
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FireFilter {
    pub kept: Vec<FireDetection>,
    pub dropped_confidence: usize,
    pub dropped_type: usize,
    pub dropped_urban: usize,
    /// Points outside the urban mask, or on a nodata cell of it.
    pub dropped_outside: usize,
}

/// Keeps high-confidence agricultural detections on rural cells.
pub fn filter_fire_points(points: &[FireDetection], urban_mask: &BinaryMask) -> FireFilter {
    let mut out = FireFilter::default();
    for p in points {
        if p.confidence != Confidence::High {
            out.dropped_confidence += 1;
        } else if p.fire_type != 0 {
            out.dropped_type += 1;
        } else {
            match urban_mask.at_point(p.x, p.y) {
                Ok(Some(false)) => out.kept.push(p.clone()),
                Ok(Some(true)) => out.dropped_urban += 1,
                Ok(None) | Err(_) => {
                    log::warn!("fire point ({}, {}) has no urban classification; dropped", p.x, p.y);
                    out.dropped_outside += 1;
                }
            }
        }
    }
    out
}

/// 375 m squares centred on each detection, in input order.
pub fn fire_squares(points: &[FireDetection]) -> Result<Vec<ZonePolygon>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            ZonePolygon::centered(
                format!("fire-{i}"),
                ZoneKind::FireSquare,
                crate::zones::Point::new(p.x, p.y),
                FIRE_SQUARE_SIDE,
                FIRE_SQUARE_SIDE,
            )
        })
        .collect()
}

/// Agreement between a burn mask and fire-detection footprints.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OverlapReport {
    pub squares: usize,
    pub squares_with_burn: usize,
    pub burned_pixels: usize,
    pub burned_pixels_in_squares: usize,
}

impl OverlapReport {
    /// Share of footprints holding at least one burned pixel (0 with no footprints).
    pub fn square_hit_rate(&self) -> f64 {
        ratio(self.squares_with_burn, self.squares)
    }

    /// Share of burned pixels covered by some footprint (0 with no burned pixels).
    pub fn burned_coverage(&self) -> f64 {
        ratio(self.burned_pixels_in_squares, self.burned_pixels)
    }

    pub fn to_text(&self) -> String {
        format!(
            "squares={}\nsquares_with_burn={}\nsquare_hit_rate={}\nburned_pixels={}\nburned_pixels_in_squares={}\nburned_coverage={}\n",
            self.squares,
            self.squares_with_burn,
            fmt_sig(self.square_hit_rate()),
            self.burned_pixels,
            self.burned_pixels_in_squares,
            fmt_sig(self.burned_coverage()),
        )
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn overlap_report(mask: &BinaryMask, squares: &[ZonePolygon]) -> OverlapReport {
    let g = mask.geometry();
    let mut covered = vec![false; g.len()];
    let mut report = OverlapReport {
        squares: squares.len(),
        ..Default::default()
    };
    for sq in squares {
        let (rows, cols) = zone_cells(g, sq);
        let mut hit = false;
        for r in rows {
            for c in cols.clone() {
                let i = g.index(r, c);
                covered[i] = true;
                hit |= mask.cells()[i] == Some(true);
            }
        }
        report.squares_with_burn += hit as usize;
    }
    for (cell, cov) in mask.cells().iter().zip(&covered) {
        if *cell == Some(true) {
            report.burned_pixels += 1;
            report.burned_pixels_in_squares += *cov as usize;
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLabel {
    CandidateBurned,
    CandidateUnburned,
}

/// A fine-resolution cell proposed for manual threshold review.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    pub row: usize,
    pub col: usize,
    pub x: f64,
    pub y: f64,
    pub label: SampleLabel,
    pub bais2: f32,
    pub nbr: f32,
}

/// Proposes calibration cells from a coarse burned-area product of the
/// same week: cells whose centre lies in a coarse burned cell are burn
/// candidates, cells in coarse unburned cells are unburned candidates. Up to
/// `per_class` cells of each label are drawn with a seeded generator and
/// returned in raster order.
pub fn sample_calibration_cells(
    bais2: &IndexRaster,
    nbr: &IndexRaster,
    coarse_burned: &BinaryMask,
    per_class: usize,
    seed: u64,
) -> Result<Vec<CalibrationSample>> {
    bais2.geometry.ensure_same(&nbr.geometry, "BAIS2 vs NBR")?;
    let g = bais2.geometry;
    let mut burned = Vec::new();
    let mut unburned = Vec::new();
    for r in 0..g.height {
        for c in 0..g.width {
            let i = g.index(r, c);
            if bais2.get(i).is_none() || nbr.get(i).is_none() {
                continue;
            }
            let (x, y) = g.center_unchecked(r, c);
            match coarse_burned.at_point(x, y) {
                Ok(Some(true)) => burned.push(i),
                Ok(Some(false)) => unburned.push(i),
                _ => {}
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (pool, label) in [(burned, SampleLabel::CandidateBurned), (unburned, SampleLabel::CandidateUnburned)] {
        let mut picked: Vec<usize> = if pool.len() <= per_class {
            pool
        } else {
            sample(&mut rng, pool.len(), per_class).into_iter().map(|k| pool[k]).collect()
        };
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| {
            let (row, col) = (i / g.width, i % g.width);
            let (x, y) = g.center_unchecked(row, col);
            CalibrationSample {
                row,
                col,
                x,
                y,
                label,
                bais2: bais2.values[i],
                nbr: nbr.values[i],
            }
        }));
    }
    Ok(out)
}

pub fn write_calibration_samples(path: &Path, samples: &[CalibrationSample]) -> Result<()> {
    let mut text = String::from("row,col,x,y,label,bais2,nbr\n");
    for s in samples {
        let label = match s.label {
            SampleLabel::CandidateBurned => "candidate_burned",
            SampleLabel::CandidateUnburned => "candidate_unburned",
        };
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.row,
            s.col,
            fmt_coord(s.x),
            fmt_coord(s.y),
            label,
            fmt_sig(s.bais2 as f64),
            fmt_sig(s.nbr as f64)
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
