//! Samples, datasets, NDRE arithmetic, the synthetic drought generator and CSV
//! persistence.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::staging::StageThresholds;
use crate::util;
use crate::{Error, Result};

/// Stress regime, ordered from healthiest to most severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Healthy,
    Mild,
    Moderate,
    Severe,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Healthy, Stage::Mild, Stage::Moderate, Stage::Severe];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Stage> {
        Stage::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Healthy => "healthy",
            Stage::Mild => "mild",
            Stage::Moderate => "moderate",
            Stage::Severe => "severe",
        }
    }

    pub fn is_stressed(self) -> bool {
        matches!(self, Stage::Moderate | Stage::Severe)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Stage> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" => Ok(Stage::Healthy),
            "mild" => Ok(Stage::Mild),
            "moderate" => Ok(Stage::Moderate),
            "severe" => Ok(Stage::Severe),
            other => Err(Error::Format(format!("unknown stage '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdreSeries {
    pub patch_id: String,
    pub values: Vec<f64>,
    pub dates: Vec<u32>,
}

impl NdreSeries {
    pub fn new(patch_id: impl Into<String>, values: Vec<f64>, dates: Vec<u32>) -> Result<Self> {
        let s = NdreSeries {
            patch_id: patch_id.into(),
            values,
            dates,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.values.len() != self.dates.len() {
            return Err(Error::Format(format!(
                "patch {}: {} values for {} dates",
                self.patch_id,
                self.values.len(),
                self.dates.len()
            )));
        }
        check_dates(&self.dates)?;
        if let Some(v) = self.values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!(
                "patch {}: NDRE value {v} outside [-1, 1]",
                self.patch_id
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        util::mean(&self.values)
    }
}

fn check_dates(dates: &[u32]) -> Result<()> {
    if dates.first() != Some(&0) {
        return Err(Error::Format("dates must start at day 0".into()));
    }
    if dates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Format(format!(
            "dates must be strictly increasing, got {dates:?}"
        )));
    }
    Ok(())
}

/// Ground truth recorded by the synthetic generator. Never used in training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub stage: Stage,
    pub onset_day: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    series: Vec<NdreSeries>,
    truth: Option<Vec<Truth>>,
}

impl Dataset {
    pub fn new(series: Vec<NdreSeries>, truth: Option<Vec<Truth>>) -> Result<Self> {
        let first = series
            .first()
            .ok_or_else(|| Error::Format("dataset has no series".into()))?;
        let mut ids = HashSet::new();
        for s in &series {
            s.validate()?;
            if s.dates != first.dates {
                return Err(Error::Format(format!(
                    "patch {} has dates {:?}, expected {:?}",
                    s.patch_id, s.dates, first.dates
                )));
            }
            if !ids.insert(s.patch_id.as_str()) {
                return Err(Error::Format(format!("duplicate patch id {}", s.patch_id)));
            }
        }
        if let Some(t) = &truth {
            if t.len() != series.len() {
                return Err(Error::Format(format!(
                    "{} truth rows for {} series",
                    t.len(),
                    series.len()
                )));
            }
        }
        Ok(Dataset { series, truth })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn series(&self) -> &[NdreSeries] {
        &self.series
    }

    pub fn truth(&self) -> Option<&[Truth]> {
        self.truth.as_deref()
    }

    pub fn dates(&self) -> &[u32] {
        &self.series[0].dates
    }

    pub fn n_dates(&self) -> usize {
        self.dates().len()
    }

    pub fn patch_ids(&self) -> Vec<String> {
        self.series.iter().map(|s| s.patch_id.clone()).collect()
    }

    /// N×T matrix of raw values.
    pub fn matrix(&self) -> Array2<f64> {
        let t = self.n_dates();
        Array2::from_shape_fn((self.len(), t), |(i, j)| self.series[i].values[j])
    }

    pub fn mean_ndre(&self) -> Vec<f64> {
        self.series.iter().map(NdreSeries::mean).collect()
    }

    /// Rows `idx` in the given order, truth carried along.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let series = idx.iter().map(|&i| self.series[i].clone()).collect();
        let truth = self
            .truth
            .as_ref()
            .map(|t| idx.iter().map(|&i| t[i]).collect());
        Dataset::new(series, truth)
    }

    pub fn without_truth(&self) -> Dataset {
        Dataset {
            series: self.series.clone(),
            truth: None,
        }
    }
}

pub fn compute_ndre(nir: f64, red_edge: f64) -> Result<f64> {
    if !(nir >= 0.0 && red_edge >= 0.0 && nir + red_edge > 0.0) || !(nir + red_edge).is_finite() {
        return Err(Error::Domain(format!(
            "NDRE needs nir >= 0, red_edge >= 0 and a positive sum (nir={nir}, red_edge={red_edge})"
        )));
    }
    Ok((nir - red_edge) / (nir + red_edge))
}

/// Per-date band aggregates for one patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandRow {
    pub day: u32,
    pub nir: f64,
    pub red_edge: f64,
}

/// Builds a series from band means. Values are not normalized.
pub fn series_from_band_table(rows: &[BandRow], patch_id: &str) -> Result<NdreSeries> {
    let dates: Vec<u32> = rows.iter().map(|r| r.day).collect();
    check_dates(&dates)?;
    let values = rows
        .iter()
        .map(|r| compute_ndre(r.nir, r.red_edge))
        .collect::<Result<Vec<_>>>()?;
    NdreSeries::new(patch_id, values, dates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patches: usize,
    pub dates: Vec<u32>,
    /// Healthy, mild, moderate, severe.
    pub stage_mix: [f64; 4],
    pub noise_sd: f64,
    pub onset_day_range: (f64, f64),
    /// Pre-onset NDRE level per stage.
    pub start_level_range: [(f64, f64); 4],
    /// NDRE decline per day after onset, per stage.
    pub decline_rate_range: [(f64, f64); 4],
    /// Decline rates are clamped so the noise-free mean sits this far inside
    /// the stage band. Negative disables the clamp.
    pub band_margin: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patches: 2000,
            dates: vec![0, 15, 30, 45, 60],
            stage_mix: [0.64, 0.12, 0.12, 0.12],
            noise_sd: 0.02,
            onset_day_range: (12.0, 24.0),
            start_level_range: [(0.66, 0.71), (0.58, 0.63), (0.45, 0.50), (0.46, 0.51)],
            decline_rate_range: [
                (0.0, 0.0),
                (0.0015, 0.003),
                (0.0003, 0.0012),
                (0.012, 0.016),
            ],
            band_margin: 0.01,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Shifted-domain variant: earlier onsets, 1.5x noise, different seed.
    pub fn shifted(&self) -> SynthConfig {
        SynthConfig {
            onset_day_range: (self.onset_day_range.0 - 2.0, self.onset_day_range.1 - 2.0),
            noise_sd: self.noise_sd * 1.5,
            seed: util::derive_seed(self.seed, 0x51f7),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patches == 0 {
            return Err(Error::Config("n_patches must be at least 1".into()));
        }
        check_dates(&self.dates).map_err(|e| Error::Config(e.to_string()))?;
        if self.stage_mix.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config(
                "stage_mix proportions must be nonnegative".into(),
            ));
        }
        let total: f64 = self.stage_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "stage_mix sums to {total}, expected 1"
            )));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be >= 0".into()));
        }
        let ranges = std::iter::once(("onset_day_range", self.onset_day_range))
            .chain(
                self.start_level_range
                    .iter()
                    .map(|r| ("start_level_range", *r)),
            )
            .chain(
                self.decline_rate_range
                    .iter()
                    .map(|r| ("decline_rate_range", *r)),
            );
        for (name, (lo, hi)) in ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!(
                    "{name}: empty interval ({lo}, {hi})"
                )));
            }
        }
        if self.decline_rate_range.iter().any(|r| r.0 < 0.0) {
            return Err(Error::Config("decline rates must be >= 0".into()));
        }
        Ok(())
    }
}

/// Noise-free piecewise-linear trajectory: flat until `onset`, then linear decline.
pub fn trajectory(start: f64, onset: f64, rate: f64, dates: &[u32]) -> Vec<f64> {
    dates
        .iter()
        .map(|&d| start - rate * (d as f64 - onset).max(0.0))
        .collect()
}

/// NDRE band of a stage under the given thresholds, as [lo, hi].
fn stage_band(stage: Stage, t: &StageThresholds) -> (f64, f64) {
    let [t1, t2, t3] = t.cuts();
    match stage {
        Stage::Healthy => (t3, 1.0),
        Stage::Mild => (t2, t3),
        Stage::Moderate => (t1, t2),
        Stage::Severe => (-1.0, t1),
    }
}

/// Moves `rate` the least amount needed to put the trajectory mean inside
/// `[lo + margin, hi - margin]`.
fn fit_rate(
    start: f64,
    onset: f64,
    rate: f64,
    dates: &[u32],
    band: (f64, f64),
    margin: f64,
) -> f64 {
    let exposure = dates
        .iter()
        .map(|&d| (d as f64 - onset).max(0.0))
        .sum::<f64>()
        / dates.len() as f64;
    if exposure == 0.0 {
        return rate;
    }
    let (lo, hi) = (band.0 + margin, band.1 - margin);
    let mean = start - rate * exposure;
    if mean > hi {
        ((start - hi) / exposure).max(0.0)
    } else if mean < lo {
        ((start - lo) / exposure).max(0.0)
    } else {
        rate
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws a labeled drought corpus. Pure function of the config.
pub fn synthesize(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = util::rng(config.seed);
    let thresholds = StageThresholds::standard();
    let mut cumulative = [0.0; 4];
    let mut acc = 0.0;
    for (c, p) in cumulative.iter_mut().zip(config.stage_mix) {
        acc += p;
        *c = acc;
    }
    let mut series = Vec::with_capacity(config.n_patches);
    let mut truth = Vec::with_capacity(config.n_patches);
    let mut clipped = 0usize;
    let mut out_of_band = 0usize;
    for i in 0..config.n_patches {
        let u: f64 = rng.random();
        let si = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| config.stage_mix.iter().rposition(|&p| p > 0.0).unwrap());
        let stage = Stage::ALL[si];
        let start = uniform(&mut rng, config.start_level_range[si]);
        let onset = uniform(&mut rng, config.onset_day_range);
        let mut rate = uniform(&mut rng, config.decline_rate_range[si]);
        let band = stage_band(stage, &thresholds);
        if stage != Stage::Healthy && config.band_margin >= 0.0 {
            rate = fit_rate(start, onset, rate, &config.dates, band, config.band_margin);
        }
        let clean = if stage == Stage::Healthy {
            vec![start; config.dates.len()]
        } else {
            trajectory(start, onset, rate, &config.dates)
        };
        let m = util::mean(&clean);
        if m < band.0 || (m >= band.1 && stage != Stage::Healthy) {
            out_of_band += 1;
        }
        let values = clean
            .iter()
            .map(|v| {
                let z: f64 = rng.sample(StandardNormal);
                let x = v + config.noise_sd * z;
                if !(-1.0..=1.0).contains(&x) {
                    clipped += 1;
                }
                x.clamp(-1.0, 1.0)
            })
            .collect();
        series.push(NdreSeries {
            patch_id: format!("p{i:05}"),
            values,
            dates: config.dates.clone(),
        });
        truth.push(Truth {
            stage,
            onset_day: (stage != Stage::Healthy).then_some(onset),
        });
    }
    if clipped > 0 {
        log::warn!("synthesize: clipped {clipped} values to [-1, 1]");
    }
    if out_of_band > 0 {
        log::warn!(
            "synthesize: {out_of_band} patches have a noise-free mean outside their stage band"
        );
    }
    Dataset::new(series, Some(truth))
}

/// Renders the dataset CSV, truth columns included when present.
pub fn dataset_csv(dataset: &Dataset) -> Result<Vec<u8>> {
    let fmt = |e: csv::Error| Error::Format(format!("dataset csv: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["patch_id".to_string()];
    header.extend(dataset.dates().iter().map(|d| format!("day_{d}")));
    if dataset.truth.is_some() {
        header.push("truth_stage".into());
        header.push("truth_onset_day".into());
    }
    w.write_record(&header).map_err(fmt)?;
    for (i, s) in dataset.series.iter().enumerate() {
        let mut rec = vec![s.patch_id.clone()];
        rec.extend(s.values.iter().map(|v| v.to_string()));
        if let Some(t) = &dataset.truth {
            rec.push(t[i].stage.to_string());
            rec.push(t[i].onset_day.map(|d| d.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).map_err(fmt)?;
    }
    w.into_inner()
        .map_err(|e| Error::Format(format!("dataset csv: {}", e.error())))
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_csv(dataset)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Parses dataset CSV text; line numbers in errors are 1-based.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header = match records.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "no records".into(),
            })
        }
        Some(r) => r.map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?,
    };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.first() != Some(&"patch_id") {
        return Err(Error::Parse {
            line: 1,
            msg: "header must start with patch_id".into(),
        });
    }
    let has_truth = cols.len() >= 2 && cols[cols.len() - 2..] == ["truth_stage", "truth_onset_day"];
    let day_cols = &cols[1..cols.len() - if has_truth { 2 } else { 0 }];
    let dates = day_cols
        .iter()
        .map(|c| {
            c.strip_prefix("day_")
                .and_then(|d| d.parse::<u32>().ok())
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    msg: format!("malformed date column '{c}'"),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    if dates.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no date columns".into(),
        });
    }
    check_dates(&dates).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    let mut series = Vec::new();
    let mut truth = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let perr = |msg: String| Error::Parse { line, msg };
        if rec.len() != cols.len() {
            return Err(perr(format!(
                "expected {} fields, found {}",
                cols.len(),
                rec.len()
            )));
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(perr("empty patch_id".into()));
        }
        let mut values = Vec::with_capacity(dates.len());
        for (j, field) in rec.iter().skip(1).take(dates.len()).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| perr(format!("{}: not a number '{field}'", day_cols[j])))?;
            if !(-1.0..=1.0).contains(&v) {
                return Err(perr(format!(
                    "{}: NDRE value {v} outside [-1, 1]",
                    day_cols[j]
                )));
            }
            values.push(v);
        }
        if has_truth {
            let stage: Stage = rec[cols.len() - 2]
                .parse()
                .map_err(|e: Error| perr(e.to_string()))?;
            let onset = rec[cols.len() - 1].trim();
            let onset_day = if onset.is_empty() {
                None
            } else {
                Some(
                    onset
                        .parse::<f64>()
                        .map_err(|_| perr(format!("bad onset day '{onset}'")))?,
                )
            };
            truth.push(Truth { stage, onset_day });
        }
        series.push(NdreSeries {
            patch_id: id.to_string(),
            values,
            dates: dates.clone(),
        });
    }
    if series.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no records".into(),
        });
    }
    Dataset::new(series, has_truth.then_some(truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ndre_examples() {
        assert_eq!(compute_ndre(0.5, 0.5).unwrap(), 0.0);
        assert_eq!(compute_ndre(0.5, 0.0).unwrap(), 1.0);
        assert!((compute_ndre(0.5, 0.25).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let err = compute_ndre(0.0, 0.0).unwrap_err().to_string();
        assert!(err.contains("nir") && err.contains("red_edge"));
        assert!(compute_ndre(-0.1, 0.3).is_err());
    }

    proptest! {
        #[test]
        fn ndre_antisymmetric(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            prop_assume!(a + b > 1e-9);
            prop_assert_eq!(compute_ndre(a, b).unwrap(), -compute_ndre(b, a).unwrap());
        }

        #[test]
        fn ndre_scale_invariant(a in 0.0f64..10.0, b in 0.0f64..10.0, c in 1e-3f64..1e3) {
            prop_assume!(a + b > 1e-6);
            let d = compute_ndre(c * a, c * b).unwrap() - compute_ndre(a, b).unwrap();
            prop_assert!(d.abs() < 1e-12);
        }

        #[test]
        fn round_trip_any_values(vals in proptest::collection::vec(-1.0f64..=1.0, 12)) {
            let series = vals.chunks(4).enumerate()
                .map(|(i, v)| NdreSeries::new(format!("x{i}"), v.to_vec(), vec![0, 5, 9, 20]).unwrap())
                .collect();
            let d = Dataset::new(series, None).unwrap();
            let dir = std::env::temp_dir().join(format!("eigencl-rt-{}", std::process::id()));
            std::fs::create_dir_all(&dir).unwrap();
            let p = dir.join("prop.csv");
            save_dataset(&d, &p).unwrap();
            prop_assert_eq!(load_dataset(&p).unwrap(), d);
        }
    }

    #[test]
    fn band_table_series() {
        let rows: Vec<BandRow> = [0, 15, 30, 45, 60]
            .iter()
            .map(|&day| BandRow {
                day,
                nir: 0.5,
                red_edge: 0.25,
            })
            .collect();
        let s = series_from_band_table(&rows, "a").unwrap();
        assert!(s.values.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));

        let one = series_from_band_table(&rows[..1], "b").unwrap();
        assert_eq!(one.values.len(), 1);

        let bad: Vec<BandRow> = [0, 10, 10]
            .iter()
            .map(|&day| BandRow {
                day,
                nir: 0.5,
                red_edge: 0.25,
            })
            .collect();
        assert!(matches!(
            series_from_band_table(&bad, "c"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn severe_closed_form_trajectory() {
        let v = trajectory(0.55, 0.0, 0.01, &[0, 15, 30, 45, 60]);
        let want = [0.55, 0.40, 0.25, 0.10, -0.05];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn all_healthy_mix() {
        let cfg = SynthConfig {
            n_patches: 50,
            stage_mix: [1.0, 0.0, 0.0, 0.0],
            seed: 99,
            ..Default::default()
        };
        let d = synthesize(&cfg).unwrap();
        assert!(d
            .truth()
            .unwrap()
            .iter()
            .all(|t| t.stage == Stage::Healthy && t.onset_day.is_none()));
    }

    #[test]
    fn synth_deterministic_and_validated() {
        let cfg = SynthConfig {
            n_patches: 40,
            ..Default::default()
        };
        assert_eq!(synthesize(&cfg).unwrap(), synthesize(&cfg).unwrap());
        let bad = SynthConfig {
            stage_mix: [0.5, 0.2, 0.1, 0.1],
            ..cfg
        };
        assert!(matches!(synthesize(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn noise_free_means_land_in_band() {
        let cfg = SynthConfig {
            n_patches: 1000,
            noise_sd: 0.0,
            stage_mix: [0.25, 0.25, 0.25, 0.25],
            seed: 3,
            ..Default::default()
        };
        let d = synthesize(&cfg).unwrap();
        let t = StageThresholds::standard();
        for (s, tr) in d.series().iter().zip(d.truth().unwrap()) {
            assert_eq!(
                t.stage(s.mean()),
                tr.stage,
                "patch {} mean {}",
                s.patch_id,
                s.mean()
            );
        }
    }

    #[test]
    fn save_load_round_trip_with_truth() {
        let d = synthesize(&SynthConfig {
            n_patches: 3,
            ..Default::default()
        })
        .unwrap();
        let dir = std::env::temp_dir().join(format!("eigencl-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("three.csv");
        save_dataset(&d, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), d);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text
            .starts_with("patch_id,day_0,day_15,day_30,day_45,day_60,truth_stage,truth_onset_day"));
    }

    #[test]
    fn parse_errors_carry_line() {
        let e = parse_dataset("").unwrap_err();
        assert!(e.to_string().contains("no records"));
        let e = parse_dataset("patch_id,day_0,day_10\na,0.5,0.4\nb,0.5,1.5\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_dataset("patch_id,day_0,day_10\na,0.5\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse_dataset("id,day_0\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let d = parse_dataset("patch_id,day_0,day_10\na,0.5,0.4\n").unwrap();
        assert!(d.truth().is_none());
    }
}
