//! Drops cloudy scenes and builds per-week median composites.
//!
//! ```text
//! cargo run --example weekly_composite
//! ```

use chrono::NaiveDate;
use residue_burn::raster::{Band, GridGeometry, RasterGrid, Scene, DEFAULT_NODATA};
use residue_burn::spectral::{filter_scenes, weekly_median_composite, IsoWeek};

fn scene(g: GridGeometry, date: (i32, u32, u32), cloud: f64, values: [f32; 4]) -> residue_burn::Result<Scene> {
    let mut grid = RasterGrid::new(g)?;
    grid.add_band(Band::new("NBR", DEFAULT_NODATA, g.pixel_size, values.to_vec()))?;
    Scene::new(grid, NaiveDate::from_ymd_opt(date.0, date.1, date.2).unwrap(), cloud)
}

fn main() -> residue_burn::Result<()> {
    let g = GridGeometry::new(2, 2, 0.0, 20.0, 10.0, 32643)?;
    let nd = DEFAULT_NODATA;
    let stack = vec![
        scene(g, (2021, 10, 11), 0.02, [0.10, 0.30, nd, 0.50])?,
        scene(g, (2021, 10, 13), 0.10, [0.20, 0.10, nd, 0.40])?,
        scene(g, (2021, 10, 15), 0.60, [0.90, 0.90, 0.90, 0.90])?,
        scene(g, (2021, 10, 16), 0.15, [0.40, nd, nd, 0.45])?,
        scene(g, (2021, 10, 20), 0.00, [0.05, 0.06, 0.07, 0.08])?,
    ];
    let clear = filter_scenes(stack, 0.20);
    println!("{} scenes pass the 20% cloud filter", clear.len());

    let mut weeks: Vec<IsoWeek> = clear.iter().map(|s| IsoWeek::of(s.date)).collect();
    weeks.dedup();
    for week in weeks {
        let c = weekly_median_composite(&clear, week)?;
        let band = c.grid.band("NBR")?;
        let cells: Vec<String> = (0..4).map(|i| band.value(i).map_or("--".into(), |v| format!("{v:.3}"))).collect();
        println!("{week} ({} scenes): {}", c.scene_count, cells.join(" "));
    }
    Ok(())
}
