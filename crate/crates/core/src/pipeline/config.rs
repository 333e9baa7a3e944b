//! Pipeline configuration: a TOML file plus `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::burnmask::{DEFAULT_BAIS2_SWEEP, DEFAULT_NBR_THRESHOLD};
use crate::econ::{FeLevel, PValueDistribution, VcovOptions};
use crate::error::{Error, Result};
use crate::spectral::{BandNames, IsoWeek, QaBits};
use crate::zones::{LocalProjection, PlotBoxParams, VillageBoxParams};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory whose subdirectories are scene bundles.
    pub scenes: Option<PathBuf>,
    /// Single-band bundle holding the maximum water extent.
    pub water: Option<PathBuf>,
    /// Single-band bundle holding the built-up fraction.
    pub urban: Option<PathBuf>,
    pub fire_points: Option<PathBuf>,
    pub survey: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub year: i32,
    pub first_week: u32,
    pub last_week: u32,
    pub max_cloud: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            year: 2021,
            first_week: 35,
            last_week: 47,
            max_cloud: 0.20,
        }
    }
}

impl StudyConfig {
    pub fn weeks(&self) -> Vec<IsoWeek> {
        (self.first_week..=self.last_week)
            .map(|week| IsoWeek { year: self.year, week })
            .collect()
    }

    pub fn contains(&self, week: IsoWeek) -> bool {
        week.year == self.year && (self.first_week..=self.last_week).contains(&week.week)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub bais2_sweep: Vec<f64>,
    pub nbr: f64,
    /// Sweep member used for the headline regression, figures and overlap check.
    pub primary: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            bais2_sweep: DEFAULT_BAIS2_SWEEP.to_vec(),
            nbr: DEFAULT_NBR_THRESHOLD,
            primary: 0.90,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandConfig {
    pub red: String,
    pub nir: String,
    pub swir: String,
    pub swir2: String,
    pub qa: String,
    pub qa_cloud_bit: u8,
    pub qa_cirrus_bit: u8,
    pub water: String,
    pub urban: String,
}

impl Default for BandConfig {
    fn default() -> Self {
        let n = BandNames::default();
        let q = QaBits::default();
        BandConfig {
            red: n.red,
            nir: n.nir,
            swir: n.swir,
            swir2: n.swir2,
            qa: n.qa,
            qa_cloud_bit: q.cloud,
            qa_cirrus_bit: q.cirrus,
            water: "max_extent".into(),
            urban: "BUFRAC".into(),
        }
    }
}

impl BandConfig {
    pub fn names(&self) -> BandNames {
        BandNames {
            red: self.red.clone(),
            nir: self.nir.clone(),
            swir: self.swir.clone(),
            swir2: self.swir2.clone(),
            qa: self.qa.clone(),
        }
    }

    pub fn qa_bits(&self) -> QaBits {
        QaBits {
            cloud: self.qa_cloud_bit,
            cirrus: self.qa_cirrus_bit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoneConfig {
    pub village_margin: f64,
    pub plot_margin: f64,
    pub min_plot_area: f64,
    pub outlier_cutoff: f64,
}

impl Default for ZoneConfig {
    fn default() -> Self {
        let v = VillageBoxParams::default();
        let p = PlotBoxParams::default();
        ZoneConfig {
            village_margin: v.margin,
            plot_margin: p.margin,
            min_plot_area: p.min_area,
            outlier_cutoff: v.outlier_cutoff,
        }
    }
}

impl ZoneConfig {
    pub fn village_params(&self) -> VillageBoxParams {
        VillageBoxParams {
            margin: self.village_margin,
            outlier_cutoff: self.outlier_cutoff,
        }
    }

    pub fn plot_params(&self) -> PlotBoxParams {
        PlotBoxParams {
            margin: self.plot_margin,
            min_area: self.min_plot_area,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    pub max_plot_area: f64,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig {
            max_plot_area: crate::survey::DEFAULT_MAX_PLOT_AREA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub eq1_fe: FeLevel,
    pub eq2_fe: FeLevel,
    pub small_sample_correction: bool,
    pub p_values: PValueDistribution,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            eq1_fe: FeLevel::Village,
            eq2_fe: FeLevel::District,
            small_sample_correction: true,
            p_values: PValueDistribution::StudentT,
        }
    }
}

impl RegressionConfig {
    pub fn vcov(&self) -> VcovOptions {
        VcovOptions {
            small_sample: self.small_sample_correction,
            p_values: self.p_values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub study: StudyConfig,
    pub thresholds: ThresholdConfig,
    pub bands: BandConfig,
    pub zones: ZoneConfig,
    pub projection: LocalProjection,
    pub survey: SurveyConfig,
    pub regression: RegressionConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Parses TOML text, then applies `section.key=value` overrides. Override
    /// values are read as TOML scalars or arrays, falling back to strings.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::format("config", e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        let t = &self.thresholds;
        if t.bais2_sweep.is_empty() {
            return bad("threshold sweep is empty".into());
        }
        if t.bais2_sweep.iter().any(|v| !v.is_finite()) || !t.nbr.is_finite() {
            return bad("thresholds must be finite".into());
        }
        if t.bais2_sweep.windows(2).any(|w| w[0] >= w[1]) {
            return bad("threshold sweep must be strictly increasing".into());
        }
        if !t.bais2_sweep.contains(&t.primary) {
            return bad(format!("primary threshold {} is not in the sweep", t.primary));
        }
        let s = &self.study;
        if !(1..=53).contains(&s.first_week) || !(s.first_week..=53).contains(&s.last_week) {
            return bad(format!("study weeks {}..{} are not a valid range", s.first_week, s.last_week));
        }
        if !(0.0..=1.0).contains(&s.max_cloud) {
            return bad(format!("max_cloud {} outside [0, 1]", s.max_cloud));
        }
        let z = &self.zones;
        if !(z.village_margin >= 0.0 && z.plot_margin >= 0.0 && z.min_plot_area > 0.0 && z.outlier_cutoff > 0.0) {
            return bad("zone margins must be >= 0, min_plot_area and outlier_cutoff > 0".into());
        }
        if !(self.survey.max_plot_area > 0.0) {
            return bad("max_plot_area must be positive".into());
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolved required path, or a validation error naming the key.
    pub fn required(&self, key: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        p.as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Validation(format!("paths.{key} is not set")))
    }

    /// SHA-256 over every setting that can influence output content. The
    /// output location is excluded.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths.output = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("config", e.to_string()))
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("override `{spec}` is not key=value")))?;
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut t = table;
    for p in parents {
        t = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Validation(format!("override `{key}`: `{p}` is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}
