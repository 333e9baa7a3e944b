//! Household/plot survey ingest, cleaning and indicator coding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_sig;

/// Residue-management responses that count as burning.
pub const BURN_RESIDUE_CODES: [u8; 3] = [3, 4, 7];
/// Tillage response for zero-tillage equipment.
pub const ZERO_TILLAGE_CODE: u8 = 4;
pub const DEFAULT_MAX_PLOT_AREA: f64 = 1000.0;

/// Survey file columns, in file order.
pub const SURVEY_COLUMNS: [&str; 20] = [
    "household_id",
    "village_id",
    "district_id",
    "hh_size",
    "head_age",
    "head_male",
    "head_secondary_edu",
    "hindu",
    "scheduled_caste",
    "tractor",
    "plot_area",
    "plot_distance",
    "plot_owned",
    "esw",
    "fertilizer",
    "outside_labor",
    "tillage_code",
    "residue_code",
    "lon",
    "lat",
];

/// One household's main wheat plot. Every covariate may be missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyPlotRecord {
    pub household_id: String,
    pub village_id: String,
    pub district_id: String,
    pub hh_size: Option<u32>,
    pub head_age: Option<f64>,
    pub head_male: Option<u8>,
    pub head_secondary_edu: Option<u8>,
    pub hindu: Option<u8>,
    pub scheduled_caste: Option<u8>,
    pub tractor: Option<u8>,
    /// Hectares.
    pub plot_area: Option<f64>,
    /// Kilometres from the homestead.
    pub plot_distance: Option<f64>,
    pub plot_owned: Option<u8>,
    /// Early sowing of wheat.
    pub esw: Option<u8>,
    pub fertilizer: Option<u8>,
    pub outside_labor: Option<u8>,
    pub tillage_code: Option<u8>,
    pub residue_code: Option<u8>,
    pub lon: Option<f64>,
    pub lat: Option<f64>,
}

impl SurveyPlotRecord {
    /// A record with identifiers only and every covariate missing.
    pub fn empty(household_id: &str, village_id: &str, district_id: &str) -> Self {
        SurveyPlotRecord {
            household_id: household_id.into(),
            village_id: village_id.into(),
            district_id: district_id.into(),
            hh_size: None,
            head_age: None,
            head_male: None,
            head_secondary_edu: None,
            hindu: None,
            scheduled_caste: None,
            tractor: None,
            plot_area: None,
            plot_distance: None,
            plot_owned: None,
            esw: None,
            fertilizer: None,
            outside_labor: None,
            tillage_code: None,
            residue_code: None,
            lon: None,
            lat: None,
        }
    }

    pub fn coordinates(&self) -> Option<(f64, f64)> {
        self.lon.zip(self.lat)
    }

    /// Value of a survey variable as a number, `None` when missing.
    pub fn value(&self, v: Variable) -> Option<f64> {
        let b = |x: Option<u8>| x.map(f64::from);
        match v {
            Variable::HhSize => self.hh_size.map(f64::from),
            Variable::HeadAge => self.head_age,
            Variable::HeadMale => b(self.head_male),
            Variable::HeadSecondaryEdu => b(self.head_secondary_edu),
            Variable::Hindu => b(self.hindu),
            Variable::ScheduledCaste => b(self.scheduled_caste),
            Variable::Tractor => b(self.tractor),
            Variable::PlotArea => self.plot_area,
            Variable::PlotDistance => self.plot_distance,
            Variable::PlotOwned => b(self.plot_owned),
            Variable::ZeroTillage => b(derive_zero_tillage(self)),
            Variable::Burn => b(derive_burn(self)),
            Variable::Esw => b(self.esw),
            Variable::Fertilizer => b(self.fertilizer),
            Variable::OutsideLabor => b(self.outside_labor),
        }
    }
}

/// Survey variables used in tables and regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    HhSize,
    HeadAge,
    HeadMale,
    HeadSecondaryEdu,
    Hindu,
    ScheduledCaste,
    Tractor,
    PlotArea,
    PlotDistance,
    PlotOwned,
    ZeroTillage,
    Burn,
    Esw,
    Fertilizer,
    OutsideLabor,
}

impl Variable {
    /// Row order of the summary-statistics table.
    pub const SUMMARY_ORDER: [Variable; 15] = [
        Variable::HhSize,
        Variable::HeadAge,
        Variable::HeadMale,
        Variable::HeadSecondaryEdu,
        Variable::Hindu,
        Variable::ScheduledCaste,
        Variable::Tractor,
        Variable::PlotArea,
        Variable::PlotDistance,
        Variable::PlotOwned,
        Variable::ZeroTillage,
        Variable::Burn,
        Variable::Esw,
        Variable::Fertilizer,
        Variable::OutsideLabor,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Variable::HhSize => "hh_size",
            Variable::HeadAge => "head_age",
            Variable::HeadMale => "head_male",
            Variable::HeadSecondaryEdu => "head_secondary_edu",
            Variable::Hindu => "hindu",
            Variable::ScheduledCaste => "scheduled_caste",
            Variable::Tractor => "tractor",
            Variable::PlotArea => "plot_area",
            Variable::PlotDistance => "plot_distance",
            Variable::PlotOwned => "plot_owned",
            Variable::ZeroTillage => "zero_tillage",
            Variable::Burn => "burn",
            Variable::Esw => "esw",
            Variable::Fertilizer => "fertilizer",
            Variable::OutsideLabor => "outside_labor",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variable::HhSize => "HH size",
            Variable::HeadAge => "HH head age",
            Variable::HeadMale => "HH head male",
            Variable::HeadSecondaryEdu => "HH head secondary education",
            Variable::Hindu => "Hindu",
            Variable::ScheduledCaste => "Scheduled caste",
            Variable::Tractor => "Tractor",
            Variable::PlotArea => "Plot area",
            Variable::PlotDistance => "Plot distance",
            Variable::PlotOwned => "Plot owned",
            Variable::ZeroTillage => "Zero tillage",
            Variable::Burn => "Residue burning",
            Variable::Esw => "Plot with ESW",
            Variable::Fertilizer => "Fertilizer",
            Variable::OutsideLabor => "Outside labor",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Burned iff the residue code is 3, 4 or 7.
pub fn derive_burn(r: &SurveyPlotRecord) -> Option<u8> {
    r.residue_code.map(|c| BURN_RESIDUE_CODES.contains(&c) as u8)
}

pub fn derive_zero_tillage(r: &SurveyPlotRecord) -> Option<u8> {
    r.tillage_code.map(|c| (c == ZERO_TILLAGE_CODE) as u8)
}

/// A data row that failed to parse or validate.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    /// 1-based data row number, header excluded.
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyLoad {
    pub records: Vec<SurveyPlotRecord>,
    pub rejected: Vec<RejectedRow>,
    pub rows_read: usize,
}

/// Reads a survey file. Unknown or missing columns fail the whole file;
/// rows with unparseable or out-of-range cells are rejected individually.
pub fn load_survey(path: &Path) -> Result<SurveyLoad> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::format(name.clone(), e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if let Some(unknown) = header.iter().find(|h| !SURVEY_COLUMNS.contains(&h.as_str())) {
        return Err(Error::format(name, format!("unknown column `{unknown}`")));
    }
    let mut pos = [0usize; SURVEY_COLUMNS.len()];
    for (k, col) in SURVEY_COLUMNS.iter().enumerate() {
        let hits: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h == col).map(|(i, _)| i).collect();
        match hits.as_slice() {
            [i] => pos[k] = *i,
            [] => return Err(Error::format(name, format!("missing column `{col}`"))),
            _ => return Err(Error::format(name, format!("duplicate column `{col}`"))),
        }
    }
    let mut load = SurveyLoad {
        records: Vec::new(),
        rejected: Vec::new(),
        rows_read: 0,
    };
    for (k, rec) in r.records().enumerate() {
        load.rows_read += 1;
        let row = k + 1;
        let parsed = rec
            .map_err(|e| e.to_string())
            .and_then(|rec| parse_row(|c| rec.get(pos[c]).unwrap_or("").trim()));
        match parsed {
            Ok(record) => load.records.push(record),
            Err(reason) => {
                log::warn!("survey row {row} rejected: {reason}");
                load.rejected.push(RejectedRow { row, reason });
            }
        }
    }
    Ok(load)
}

fn parse_row<'a>(get: impl Fn(usize) -> &'a str) -> std::result::Result<SurveyPlotRecord, String> {
    let id = |k: usize| -> std::result::Result<String, String> {
        let v = get(k);
        if v.is_empty() {
            Err(format!("{} is empty", SURVEY_COLUMNS[k]))
        } else {
            Ok(v.to_string())
        }
    };
    let num = |k: usize| -> std::result::Result<Option<f64>, String> {
        let v = get(k);
        if v.is_empty() {
            return Ok(None);
        }
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Some(x)),
            _ => Err(format!("{} `{v}` is not a finite number", SURVEY_COLUMNS[k])),
        }
    };
    let code = |k: usize, lo: u8, hi: u8| -> std::result::Result<Option<u8>, String> {
        let v = get(k);
        if v.is_empty() {
            return Ok(None);
        }
        match v.parse::<u8>() {
            Ok(c) if (lo..=hi).contains(&c) => Ok(Some(c)),
            _ => Err(format!("{} `{v}` outside {lo}..={hi}", SURVEY_COLUMNS[k])),
        }
    };
    let binary = |k: usize| code(k, 0, 1);
    let hh_size = match get(3) {
        "" => None,
        v => match v.parse::<u32>() {
            Ok(n) if n >= 1 => Some(n),
            _ => return Err(format!("hh_size `{v}` is not a positive integer")),
        },
    };
    let head_age = num(4)?;
    if head_age.is_some_and(|a| a < 0.0) {
        return Err("head_age is negative".into());
    }
    let plot_area = num(10)?;
    if plot_area.is_some_and(|a| a <= 0.0) {
        return Err("plot_area must be positive".into());
    }
    let plot_distance = num(11)?;
    if plot_distance.is_some_and(|d| d < 0.0) {
        return Err("plot_distance is negative".into());
    }
    let (lon, lat) = (num(18)?, num(19)?);
    if lon.is_some() != lat.is_some() {
        return Err("lon and lat must be both present or both missing".into());
    }
    Ok(SurveyPlotRecord {
        household_id: id(0)?,
        village_id: id(1)?,
        district_id: id(2)?,
        hh_size,
        head_age,
        head_male: binary(5)?,
        head_secondary_edu: binary(6)?,
        hindu: binary(7)?,
        scheduled_caste: binary(8)?,
        tractor: binary(9)?,
        plot_area,
        plot_distance,
        plot_owned: binary(12)?,
        esw: binary(13)?,
        fertilizer: binary(14)?,
        outside_labor: binary(15)?,
        tillage_code: code(16, 1, 5)?,
        residue_code: code(17, 1, 10)?,
        lon,
        lat,
    })
}

pub fn write_survey(path: &Path, records: &[SurveyPlotRecord]) -> Result<()> {
    fn o<T: ToString>(v: Option<T>) -> String {
        v.map(|x| x.to_string()).unwrap_or_default()
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::format(path.display().to_string(), e.to_string());
    w.write_record(SURVEY_COLUMNS).map_err(io)?;
    for r in records {
        w.write_record([
            r.household_id.clone(),
            r.village_id.clone(),
            r.district_id.clone(),
            o(r.hh_size),
            o(r.head_age),
            o(r.head_male),
            o(r.head_secondary_edu),
            o(r.hindu),
            o(r.scheduled_caste),
            o(r.tractor),
            o(r.plot_area),
            o(r.plot_distance),
            o(r.plot_owned),
            o(r.esw),
            o(r.fertilizer),
            o(r.outside_labor),
            o(r.tillage_code),
            o(r.residue_code),
            o(r.lon),
            o(r.lat),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleaningRules {
    /// Plots strictly larger than this many hectares are dropped.
    pub max_plot_area: f64,
    pub excluded_villages: BTreeSet<String>,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            max_plot_area: DEFAULT_MAX_PLOT_AREA,
            excluded_villages: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CleaningLog {
    pub rows_in: usize,
    pub dropped_area_outlier: usize,
    pub dropped_excluded_village: usize,
    pub rows_out: usize,
}

impl CleaningLog {
    pub fn to_text(&self) -> String {
        format!(
            "rows_in {}\narea_outlier {}\nexcluded_village {}\nrows_out {}\n",
            self.rows_in, self.dropped_area_outlier, self.dropped_excluded_village, self.rows_out
        )
    }
}

/// Drops area outliers and excluded villages; retained records are untouched.
pub fn clean(records: &[SurveyPlotRecord], rules: &CleaningRules) -> (Vec<SurveyPlotRecord>, CleaningLog) {
    let mut log = CleaningLog {
        rows_in: records.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        if r.plot_area.is_some_and(|a| a > rules.max_plot_area) {
            log.dropped_area_outlier += 1;
        } else if rules.excluded_villages.contains(&r.village_id) {
            log.dropped_excluded_village += 1;
        } else {
            kept.push(r.clone());
        }
    }
    log.rows_out = kept.len();
    (kept, log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BurnShare {
    pub burned: usize,
    pub observed: usize,
}

impl BurnShare {
    pub fn share(&self) -> Option<f64> {
        (self.observed > 0).then(|| self.burned as f64 / self.observed as f64)
    }
}

/// Per-village burn counts over plots with a known burn status.
pub fn village_burn_share(records: &[SurveyPlotRecord]) -> BTreeMap<String, BurnShare> {
    let mut out: BTreeMap<String, BurnShare> = BTreeMap::new();
    for r in records {
        let e = out.entry(r.village_id.clone()).or_insert(BurnShare { burned: 0, observed: 0 });
        if let Some(b) = derive_burn(r) {
            e.observed += 1;
            e.burned += b as usize;
        }
    }
    out
}

/// Village to district, from the first record of each village.
pub fn village_districts(records: &[SurveyPlotRecord]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for r in records {
        out.entry(r.village_id.clone()).or_insert_with(|| r.district_id.clone());
    }
    out
}

/// Plot coordinates (lon, lat) grouped by village, in record order.
pub fn plot_coordinates(records: &[SurveyPlotRecord]) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        if let Some(c) = r.coordinates() {
            out.entry(r.village_id.clone()).or_default().push(c);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub variable: Variable,
    pub n: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Sample standard deviation; needs two observations.
    pub sd: Option<f64>,
}

pub fn summarize(variable: Variable, values: &[f64]) -> SummaryRow {
    let n = values.len();
    let mut row = SummaryRow {
        variable,
        n,
        mean: None,
        min: None,
        max: None,
        sd: None,
    };
    if n == 0 {
        return row;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    row.mean = Some(mean);
    row.min = values.iter().copied().reduce(f64::min);
    row.max = values.iter().copied().reduce(f64::max);
    if n >= 2 {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        row.sd = Some((ss / (n - 1) as f64).sqrt());
    }
    row
}

/// One row per variable in summary-table order, missing values excluded.
pub fn summary_stats(records: &[SurveyPlotRecord]) -> Vec<SummaryRow> {
    Variable::SUMMARY_ORDER
        .iter()
        .map(|&v| {
            let values: Vec<f64> = records.iter().filter_map(|r| r.value(v)).collect();
            summarize(v, &values)
        })
        .collect()
}

pub fn summary_table_csv(rows: &[SummaryRow]) -> String {
    let o = |x: Option<f64>| x.map(fmt_sig).unwrap_or_default();
    let mut s = String::from("variable,mean,min,max,sd,n\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variable.label(),
            o(r.mean),
            o(r.min),
            o(r.max),
            o(r.sd),
            r.n
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(v: &str, residue: Option<u8>, tillage: Option<u8>) -> SurveyPlotRecord {
        let mut r = SurveyPlotRecord::empty("h", v, "d");
        r.residue_code = residue;
        r.tillage_code = tillage;
        r
    }

    #[test]
    fn burn_and_tillage_coding() {
        let code = |c| derive_burn(&rec("v", Some(c), None));
        assert_eq!(code(3), Some(1));
        assert_eq!(code(4), Some(1));
        assert_eq!(code(7), Some(1));
        assert_eq!(code(6), Some(0));
        assert_eq!(code(10), Some(0));
        assert_eq!(derive_burn(&rec("v", None, None)), None);
        assert_eq!(derive_zero_tillage(&rec("v", None, Some(4))), Some(1));
        assert_eq!(derive_zero_tillage(&rec("v", None, Some(1))), Some(0));
        assert_eq!(derive_zero_tillage(&rec("v", None, None)), None);
    }

    #[test]
    fn village_shares() {
        let rs = vec![
            rec("a", Some(3), None),
            rec("a", Some(1), None),
            rec("a", Some(1), None),
            rec("a", Some(2), None),
            rec("b", Some(1), None),
            rec("c", Some(7), None),
            rec("c", None, None),
            rec("c", Some(5), None),
            rec("d", None, None),
        ];
        let s = village_burn_share(&rs);
        assert_eq!(s["a"].share(), Some(0.25));
        assert_eq!(s["b"].share(), Some(0.0));
        assert_eq!(s["c"].share(), Some(0.5));
        assert_eq!(s["d"].share(), None);
        let total: usize = s.values().map(|b| b.burned).sum();
        assert_eq!(total, rs.iter().filter(|r| derive_burn(r) == Some(1)).count());
    }

    #[test]
    fn cleaning_rules() {
        let mut big = rec("a", Some(1), None);
        big.plot_area = Some(1355.4);
        let mut ok = rec("a", Some(1), None);
        ok.plot_area = Some(48.48);
        let other = rec("x", Some(1), None);
        let rules = CleaningRules {
            excluded_villages: ["x".to_string()].into(),
            ..Default::default()
        };
        let (kept, log) = clean(&[big, ok.clone(), other], &rules);
        assert_eq!(kept, vec![ok.clone()]);
        assert_eq!((log.dropped_area_outlier, log.dropped_excluded_village, log.rows_out), (1, 1, 1));
        let (same, _) = clean(&[ok.clone()], &CleaningRules::default());
        assert_eq!(same, vec![ok]);
    }

    fn sample_file(extra: &str) -> String {
        let mut s = SURVEY_COLUMNS.join(",");
        s.push('\n');
        s.push_str("h1,v1,d1,6,45,1,,1,0,1,1.5,0.8,1,0,1,1,4,3,75.1,30.2\n");
        s.push_str(extra);
        s
    }

    #[test]
    fn load_survey_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, sample_file("h2,v1,d1,6,45,1,0,1,0,1,1.5,0.8,1,0,1,1,4,11,,\nh3,v1,d1,x,45,1,0,1,0,1,1.5,0.8,1,0,1,1,4,3,,\n")).unwrap();
        let load = load_survey(&p).unwrap();
        assert_eq!(load.rows_read, 3);
        assert_eq!(load.records.len(), 1);
        let r = &load.records[0];
        assert_eq!(r.head_secondary_edu, None);
        assert_eq!(r.hh_size, Some(6));
        assert_eq!(r.coordinates(), Some((75.1, 30.2)));
        assert_eq!(load.rejected.iter().map(|r| r.row).collect::<Vec<_>>(), vec![2, 3]);
        assert!(load.rejected[0].reason.contains("residue_code"));

        let back = dir.path().join("back.csv");
        write_survey(&back, &load.records).unwrap();
        assert_eq!(load_survey(&back).unwrap().records, load.records);
    }

    #[test]
    fn unknown_or_missing_column_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, sample_file("").replacen("esw", "bogus", 1)).unwrap();
        assert!(load_survey(&p).unwrap_err().is_validation());
        let text = sample_file("");
        let header = text.lines().next().unwrap().replace(",lat", "");
        fs::write(&p, format!("{header}\n")).unwrap();
        assert!(load_survey(&p).is_err());
    }

    #[test]
    fn summary_of_constant_column() {
        let r = summarize(Variable::HhSize, &[3.0; 5]);
        assert_eq!((r.mean, r.sd, r.min, r.max, r.n), (Some(3.0), Some(0.0), Some(3.0), Some(3.0), 5));
        assert_eq!(summarize(Variable::HhSize, &[]).mean, None);
        assert_eq!(summarize(Variable::HhSize, &[2.0]).sd, None);
        let rows = summary_stats(&[rec("a", Some(3), Some(4)), rec("a", Some(1), None)]);
        assert_eq!(rows.len(), 15);
        let zt = rows.iter().find(|r| r.variable == Variable::ZeroTillage).unwrap();
        assert_eq!((zt.n, zt.mean), (1, Some(1.0)));
        assert!(summary_table_csv(&rows).starts_with("variable,mean,min,max,sd,n\nHH size,,,,,0\n"));
    }

    proptest! {
        #[test]
        fn summary_matches_sum_of_squares_oracle(values in prop::collection::vec(-1e3f64..1e3, 2..60)) {
            let r = summarize(Variable::PlotArea, &values);
            let n = values.len() as f64;
            let s1: f64 = values.iter().sum();
            let s2: f64 = values.iter().map(|v| v * v).sum();
            let var = (s2 - s1 * s1 / n) / (n - 1.0);
            let scale = s2 / n + 1.0;
            prop_assert!((r.mean.unwrap() - s1 / n).abs() <= 1e-9 * (1.0 + (s1 / n).abs()));
            prop_assert!((r.sd.unwrap().powi(2) - var).abs() <= 1e-9 * scale);
        }
    }
}
