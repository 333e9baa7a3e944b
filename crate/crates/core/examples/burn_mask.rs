//! Thresholds BAIS2 and NBR into weekly burn masks, combines them over the
//! season and checks the result against active-fire detections.
//!
//! ```text
//! cargo run --example burn_mask
//! ```

use chrono::NaiveDate;
use residue_burn::burnmask::{
    filter_fire_points, fire_squares, max_composite, overlap_report, threshold_burn, Confidence, FireDetection,
    ThresholdSpec, DEFAULT_BAIS2_SWEEP, DEFAULT_NBR_THRESHOLD,
};
use residue_burn::raster::{BinaryMask, GridGeometry};
use residue_burn::spectral::{IndexKind, IndexRaster};

fn index(g: GridGeometry, kind: IndexKind, f: impl Fn(usize, usize) -> f32) -> IndexRaster {
    let values = (0..g.height).flat_map(|r| (0..g.width).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
    IndexRaster {
        geometry: g,
        kind,
        nodata: residue_burn::raster::DEFAULT_NODATA,
        values,
    }
}

fn main() -> residue_burn::Result<()> {
    // 60 x 60 cells of 10 m; a burned field in the north-west quarter whose
    // scar is brighter in the second week.
    let g = GridGeometry::new(60, 60, 500_000.0, 3_400_000.0, 10.0, 32643)?;
    let field = |r: usize, c: usize| r < 30 && c < 30;
    let weeks = [0.88f32, 0.93];
    for t in DEFAULT_BAIS2_SWEEP {
        let spec = ThresholdSpec::new(t, DEFAULT_NBR_THRESHOLD)?;
        let weekly: Vec<BinaryMask> = weeks
            .iter()
            .map(|&bright| {
                let b = index(g, IndexKind::Bais2, |r, c| if field(r, c) { bright } else { 0.40 });
                let n = index(g, IndexKind::Nbr, |r, c| if field(r, c) { 0.05 } else { 0.45 });
                threshold_burn(&b, &n, &spec)
            })
            .collect::<residue_burn::Result<_>>()?;
        let season = max_composite(&weekly)?;
        println!("BAIS2 > {t:.2}: {} burned cells", season.count_true());
    }

    // Fire detections: two on the field, one low-confidence, one on a city cell.
    let spec = ThresholdSpec::new(0.90, DEFAULT_NBR_THRESHOLD)?;
    let b = index(g, IndexKind::Bais2, |r, c| if field(r, c) { 0.93 } else { 0.40 });
    let n = index(g, IndexKind::Nbr, |r, c| if field(r, c) { 0.05 } else { 0.45 });
    let mask = threshold_burn(&b, &n, &spec)?;
    let urban = BinaryMask::new(g, (0..g.len()).map(|i| Some(i % 60 >= 50 && i / 60 >= 50)).collect())?;
    let date = NaiveDate::from_ymd_opt(2021, 10, 20).unwrap();
    let point = |x: f64, y: f64, confidence| FireDetection {
        x: 500_000.0 + x,
        y: 3_400_000.0 - y,
        confidence,
        fire_type: 0,
        date,
    };
    let points = [
        point(100.0, 100.0, Confidence::High),
        point(250.0, 200.0, Confidence::High),
        point(400.0, 450.0, Confidence::Low),
        point(550.0, 550.0, Confidence::High),
    ];
    let filtered = filter_fire_points(&points, &urban);
    println!(
        "fire points: kept {}, low confidence {}, urban {}",
        filtered.kept.len(),
        filtered.dropped_confidence,
        filtered.dropped_urban
    );
    let report = overlap_report(&mask, &fire_squares(&filtered.kept)?);
    print!("{}", report.to_text());
    Ok(())
}
