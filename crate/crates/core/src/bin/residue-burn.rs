use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use residue_burn::pipeline::{
    analysis_sample, build_zones, burn_masks, config_used_toml, figure_files, index_scene, load_aux_masks,
    load_scene_dir, mask_dir_name, read_mask, run_pipeline, run_regressions, scene_log_csv, scene_status,
    study_composites, study_start, survey_stage, with_jobs, write_mask, write_zone_files, zonal_csv, zonal_table,
    IndicatorTable, PipelineConfig, RunOptions, SceneStatus,
};
use residue_burn::raster::{write_bundle, Scene};
use residue_burn::spectral::{IsoWeek, WeeklyComposite};
use residue_burn::survey::{summary_stats, summary_table_csv};
use residue_burn::synthetic::{generate_fixture, FixtureParams};
use residue_burn::zones::read_zones_csv;
use residue_burn::{Error, Result};

#[derive(Parser)]
#[command(name = "residue-burn", version, about = "Crop-residue burn indicators and zero-tillage regressions")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set study.max_cloud=0.3`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Mask one reflectance scene and compute NBR, BAI and BAIS2.
    Indices {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip water and urban masking even when configured.
        #[arg(long)]
        qa_only: bool,
    },
    /// Weekly median composites of index bundles within the study window.
    Composite {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold weekly composites and OR them into study-period burn masks.
    Mask {
        #[arg(long)]
        composites: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Village and plot rectangles from survey coordinates.
    Zones {
        #[arg(long)]
        survey: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Burned fraction of a mask inside each zone.
    Zonal {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        zones: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load and clean the survey; write the summary table.
    Survey {
        #[arg(long)]
        survey: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regression ladders on the survey and an indicator table.
    Regress {
        #[arg(long)]
        survey: Option<PathBuf>,
        #[arg(long)]
        indicators: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise correlations of an indicator table.
    Correlate {
        #[arg(long)]
        indicators: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histograms and the village-versus-plot scatter.
    Plot {
        #[arg(long)]
        indicators: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage, from scenes and survey to tables and figures.
    Pipeline {
        /// Record wall-clock time in the manifest.
        #[arg(long)]
        record_timing: bool,
    },
    /// Write the synthetic fixture and its ground truth.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = FixtureParams::default().seed)]
        seed: u64,
    },
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    match &c.config {
        Some(p) => PipelineConfig::from_file(p, &c.overrides),
        None => {
            let mut cfg = PipelineConfig::from_toml("", &c.overrides)?;
            cfg.base_dir = std::env::current_dir().map_err(|e| Error::Validation(e.to_string()))?;
            Ok(cfg)
        }
    }
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
    }
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn survey_path(cfg: &PipelineConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    match flag {
        Some(p) => Ok(p.clone()),
        None => cfg.required("survey", &cfg.paths.survey),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Indices { scene, out, qa_only } => {
            let s = residue_burn::raster::read_bundle(&scene)?;
            let aux = if qa_only || cfg.paths.water.is_none() { None } else { Some(load_aux_masks(&cfg)?) };
            write_bundle(&index_scene(&s, aux.as_ref(), &cfg.bands)?, &out)
        }
        Command::Composite { scenes, out } => {
            let stack = load_scene_dir(&scenes)?;
            let status: Vec<SceneStatus> = stack.iter().map(|s| scene_status(&s.scene, &cfg.study)).collect();
            let used: Vec<Scene> = stack
                .iter()
                .zip(&status)
                .filter(|(_, s)| **s == SceneStatus::Used)
                .map(|(n, _)| n.scene.clone())
                .collect();
            for c in study_composites(&used, &cfg.study)? {
                let date = c.week.start().expect("composited week exists");
                write_bundle(&Scene::new(c.grid, date, 0.0)?, &out.join(format!("week_{:02}", c.week.week)))?;
            }
            write(&out.join("scenes.csv"), scene_log_csv(&stack, &status))
        }
        Command::Mask { composites, out } => {
            let weekly: Vec<WeeklyComposite> = load_scene_dir(&composites)?
                .into_iter()
                .map(|n| WeeklyComposite {
                    week: IsoWeek::of(n.scene.date),
                    grid: n.scene.grid,
                    scene_count: 0,
                })
                .collect();
            let date = study_start(&cfg.study)?;
            for (t, mask) in burn_masks(&weekly, &cfg.thresholds)? {
                write_mask(&mask, date, &out.join(mask_dir_name(t)))?;
            }
            Ok(())
        }
        Command::Zones { survey, out } => {
            let s = survey_stage(&survey_path(&cfg, &survey)?, cfg.survey.max_plot_area)?;
            write_zone_files(&build_zones(&s.area_cleaned, &cfg.projection, &cfg.zones)?, &out)
        }
        Command::Zonal { mask, zones, out } => {
            let m = read_mask(&mask)?;
            let z = read_zones_csv(&zones)?;
            write(&out, zonal_csv(&z, &zonal_table(&m, &z)?))
        }
        Command::Survey { survey, out } => {
            let s = survey_stage(&survey_path(&cfg, &survey)?, cfg.survey.max_plot_area)?;
            let zones = build_zones(&s.area_cleaned, &cfg.projection, &cfg.zones)?;
            let (records, log) = analysis_sample(&s.load, cfg.survey.max_plot_area, &zones.excluded_villages());
            write(&out.join("cleaning_log.txt"), log.to_text())?;
            write(&out.join("rejected_rows.csv"), residue_burn::pipeline::rejected_rows_csv(&s.load)?)?;
            write(&out.join("village_burn_share.csv"), residue_burn::pipeline::burn_share_csv(&records))?;
            write(&out.join("table1_summary.csv"), summary_table_csv(&summary_stats(&records)))
        }
        Command::Regress { survey, indicators, out } => {
            let table = IndicatorTable::read(&indicators)?;
            let s = survey_stage(&survey_path(&cfg, &survey)?, cfg.survey.max_plot_area)?;
            let keep: BTreeSet<&String> = table.villages.iter().collect();
            let excluded = s
                .load
                .records
                .iter()
                .map(|r| &r.village_id)
                .filter(|v| !keep.contains(v))
                .cloned()
                .collect();
            let (records, _) = analysis_sample(&s.load, cfg.survey.max_plot_area, &excluded);
            let regs = run_regressions(&records, &table, &cfg.regression)?;
            for (name, text) in regs.tables() {
                write(&out.join(name), text)?;
            }
            Ok(())
        }
        Command::Correlate { indicators, out } => write(&out, IndicatorTable::read(&indicators)?.correlation_csv()),
        Command::Plot { indicators, out } => {
            let table = IndicatorTable::read(&indicators)?;
            if table.villages.is_empty() {
                return Err(Error::Validation("indicator table has no rows".into()));
            }
            for (name, svg) in figure_files(&table, cfg.thresholds.primary) {
                write(&out.join(name), svg)?;
            }
            Ok(())
        }
        Command::Pipeline { record_timing } => {
            let run = run_pipeline(
                &cfg,
                &RunOptions {
                    jobs: cli.common.jobs,
                    record_timing,
                },
            )?;
            println!("{}", run.output.display());
            log::debug!("configuration:\n{}", config_used_toml(&cfg)?);
            Ok(())
        }
        Command::Fixture { out, seed } => {
            let truth = generate_fixture(&out, &FixtureParams { seed })?;
            println!(
                "{}: {} scenes, {} survey rows, {} burned fields",
                out.display(),
                truth.scenes_total,
                truth.survey_rows,
                truth.burned_fields
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let jobs = cli.common.jobs;
    let pipeline = matches!(cli.command, Command::Pipeline { .. });
    // The pipeline sets up its own pool; other commands share one here.
    let result = if pipeline { run(cli) } else { with_jobs(jobs, || run(cli)) };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
