//! Report surfaces: per-dimension success and drop tables, difficulty
//! curves, pairwise analyses and heatmap rasters.

use crate::builder::DifficultyLevel;
use crate::harness::EpisodeRecord;
use crate::image::Image;
use crate::perturbation::Dimension;
use crate::stats::{self, Heatmap, PairwiseStats, StatsError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("model `{0}` has no unperturbed records")]
    MissingBaseline(String),
    #[error("record `{0}` has no difficulty level")]
    UnknownVariant(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// A percentage held as an integer number of tenths, so table arithmetic is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "f64", try_from = "f64")]
pub struct Tenths(pub i64);

impl Tenths {
    /// `100 * num / den` rounded half-to-even to one decimal.
    pub fn percent(num: u64, den: u64) -> Self {
        assert!(den > 0, "percentage of an empty group");
        let scaled = u128::from(num) * 1000;
        let d = u128::from(den);
        let (q, r) = (scaled / d, scaled % d);
        let up = match (2 * r).cmp(&d) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Equal => q % 2 == 1,
            std::cmp::Ordering::Less => false,
        };
        Self((q + u128::from(up)) as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl std::ops::Sub for Tenths {
    type Output = Tenths;
    fn sub(self, rhs: Tenths) -> Tenths {
        Tenths(self.0 - rhs.0)
    }
}

impl fmt::Display for Tenths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        f.pad(&format!("{sign}{}.{}", a / 10, a % 10))
    }
}

impl From<Tenths> for f64 {
    fn from(t: Tenths) -> f64 {
        t.as_f64()
    }
}

impl TryFrom<f64> for Tenths {
    type Error = String;
    fn try_from(v: f64) -> Result<Self, String> {
        let t = (v * 10.0).round();
        if v.is_finite() && ((t / 10.0) - v).abs() < 1e-9 {
            Ok(Tenths(t as i64))
        } else {
            Err(format!("{v} is not a one-decimal value"))
        }
    }
}

/// Successes over trials, with the exact fraction and its one-decimal display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub successes: u64,
    pub trials: u64,
    /// Full-precision percentage.
    pub percent: f64,
    pub display: Tenths,
}

impl RateCell {
    pub fn new(successes: u64, trials: u64) -> Self {
        Self {
            successes,
            trials,
            percent: 100.0 * successes as f64 / trials as f64,
            display: Tenths::percent(successes, trials),
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Tally(u64, u64);

impl Tally {
    fn add(&mut self, success: bool) {
        self.0 += u64::from(success);
        self.1 += 1;
    }

    fn cell(self) -> Option<RateCell> {
        (self.1 > 0).then(|| RateCell::new(self.0, self.1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub original: RateCell,
    pub rates: BTreeMap<Dimension, RateCell>,
    /// `original - rate` on the displayed values.
    pub drops: BTreeMap<Dimension, Tenths>,
    /// Pooled over every single-dimension record.
    pub total: Option<RateCell>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DimensionReport {
    pub models: Vec<ModelRow>,
}

/// The dimension a record perturbs, when it perturbs exactly one.
fn single_dimension(r: &EpisodeRecord) -> Option<Dimension> {
    let mut it = r.perturbation.active();
    match (it.next(), it.next()) {
        (Some(d), None) => Some(d),
        _ => None,
    }
}

/// Success rates per model and dimension. Records with several active
/// dimensions belong to no column and are ignored.
pub fn aggregate(records: &[EpisodeRecord]) -> Result<DimensionReport, ReportError> {
    let mut base: BTreeMap<&str, Tally> = BTreeMap::new();
    let mut dims: BTreeMap<&str, BTreeMap<Dimension, Tally>> = BTreeMap::new();
    let mut totals: BTreeMap<&str, Tally> = BTreeMap::new();
    for r in records {
        let model = r.model.as_str();
        dims.entry(model).or_default();
        if r.perturbation.count() == 0 {
            base.entry(model).or_default().add(r.success);
        } else if let Some(d) = single_dimension(r) {
            dims.get_mut(model)
                .expect("inserted")
                .entry(d)
                .or_default()
                .add(r.success);
            totals.entry(model).or_default().add(r.success);
        }
    }
    let mut models = Vec::with_capacity(dims.len());
    for (model, per_dim) in dims {
        let original = base
            .get(model)
            .and_then(|t| t.cell())
            .ok_or_else(|| ReportError::MissingBaseline(model.to_string()))?;
        let rates: BTreeMap<Dimension, RateCell> = per_dim
            .into_iter()
            .filter_map(|(d, t)| t.cell().map(|c| (d, c)))
            .collect();
        let drops = rates.iter().map(|(d, c)| (*d, original.display - c.display)).collect();
        models.push(ModelRow {
            model: model.to_string(),
            original,
            rates,
            drops,
            total: totals.get(model).and_then(|t| t.cell()),
        });
    }
    Ok(DimensionReport { models })
}

impl fmt::Display for DimensionReport {
    /// One rate row and one drop row per model, dimensions in table order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name_w = self
            .models
            .iter()
            .map(|m| m.model.chars().count())
            .max()
            .unwrap_or(0)
            .max(5);
        write!(f, "{:<name_w$} {:>10}", "Model", "Original")?;
        for d in Dimension::TABLE_ORDER {
            write!(f, " {:>10}", d.label())?;
        }
        writeln!(f, " {:>10}", "Total")?;
        let opt = |c: Option<Tenths>| c.map_or_else(|| "-".to_string(), |t| t.to_string());
        for m in &self.models {
            write!(f, "{:<name_w$} {:>10}", m.model, m.original.display)?;
            for d in Dimension::TABLE_ORDER {
                write!(f, " {:>10}", opt(m.rates.get(&d).map(|c| c.display)))?;
            }
            writeln!(f, " {:>10}", opt(m.total.map(|c| c.display)))?;
            write!(f, "{:<name_w$} {:>10}", "", "drop")?;
            for d in Dimension::TABLE_ORDER {
                write!(f, " {:>10}", opt(m.drops.get(&d).copied()))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Rates by difficulty level for one model and dimension. `dimension` is
/// `None` for records that do not perturb exactly one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCurve {
    pub model: String,
    pub dimension: Option<Dimension>,
    /// Index 0 is L1. Levels without trials are `None`.
    pub rates: [Option<RateCell>; 5],
}

pub fn level_curves(
    records: &[EpisodeRecord],
    strata: &BTreeMap<String, DifficultyLevel>,
) -> Result<Vec<LevelCurve>, ReportError> {
    let mut groups: BTreeMap<(&str, Option<Dimension>), [Tally; 5]> = BTreeMap::new();
    for r in records {
        let level = strata
            .get(&r.task_id)
            .ok_or_else(|| ReportError::UnknownVariant(r.task_id.clone()))?;
        groups.entry((r.model.as_str(), single_dimension(r))).or_default()[usize::from(level.get() - 1)].add(r.success);
    }
    Ok(groups
        .into_iter()
        .map(|((model, dimension), t)| LevelCurve {
            model: model.to_string(),
            dimension,
            rates: t.map(Tally::cell),
        })
        .collect())
}

/// Pairwise interaction analysis of one model's compositional runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAnalysis {
    pub model: String,
    pub pairs: Vec<PairwiseStats>,
    pub heatmap: Heatmap,
}

/// One analysis per model over every pair of `dims`.
pub fn analyze(records: &[EpisodeRecord], dims: &[Dimension]) -> Result<Vec<PairAnalysis>, ReportError> {
    let mut by_model: BTreeMap<&str, Vec<EpisodeRecord>> = BTreeMap::new();
    for r in records {
        by_model.entry(r.model.as_str()).or_default().push(r.clone());
    }
    by_model
        .into_iter()
        .map(|(model, recs)| {
            let tables = stats::pair_tables_from_records(&recs, dims)?;
            let pairs = tables
                .iter()
                .map(|(&(a, b), t)| stats::pairwise_stats(a, b, *t))
                .collect::<Result<Vec<_>, _>>()?;
            let heatmap = stats::pairwise_heatmap(&tables, dims)?;
            Ok(PairAnalysis {
                model: model.to_string(),
                pairs,
                heatmap,
            })
        })
        .collect()
}

/// `6.01e-03` style: two decimals, signed two-digit exponent.
pub fn format_sci(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.2e}");
    }
    let s = format!("{x:.2e}");
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
}

impl fmt::Display for PairAnalysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.model)?;
        writeln!(f, "{:<24} {:>10} {:>10} {:>12}", "Pair", "gap", "chi2", "p")?;
        for p in &self.pairs {
            let pair = format!("{} & {}", p.dim_i.label(), p.dim_j.label());
            let (chi, pv) = p.chi_square.map_or_else(
                || ("-".to_string(), "-".to_string()),
                |c| (format!("{:.2}", c.statistic), format_sci(c.p_value)),
            );
            writeln!(f, "{pair:<24} {:>10.4} {chi:>10} {pv:>12}", p.gap.delta)?;
        }
        Ok(())
    }
}

/// How matrix values map to colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorScale {
    /// White at 0 to deep blue at `max`.
    Sequential { max: f64 },
    /// Blue at `-limit`, white at 0, red at `+limit`.
    Diverging { limit: f64 },
}

const EMPTY_CELL: [u8; 3] = [220, 220, 220];
const GRID: [u8; 3] = [255, 255, 255];

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [0, 1, 2].map(|k| (f64::from(a[k]) + (f64::from(b[k]) - f64::from(a[k])) * t).round() as u8)
}

fn color(v: f64, scale: ColorScale) -> [u8; 3] {
    const WHITE: [u8; 3] = [255, 255, 255];
    const BLUE: [u8; 3] = [33, 72, 160];
    const RED: [u8; 3] = [178, 34, 34];
    match scale {
        ColorScale::Sequential { max } => lerp(WHITE, BLUE, if max > 0.0 { v / max } else { 0.0 }),
        ColorScale::Diverging { limit } => {
            let t = if limit > 0.0 { v / limit } else { 0.0 };
            if t < 0.0 {
                lerp(WHITE, BLUE, -t)
            } else {
                lerp(WHITE, RED, t)
            }
        }
    }
}

/// Square cells of `cell` pixels separated by one-pixel white lines.
pub fn raster_matrix(matrix: &[Vec<Option<f64>>], cell: u32, scale: ColorScale) -> Image {
    let n = matrix.len() as u32;
    let side = n * (cell + 1) + 1;
    let mut data = GRID.repeat((side * side) as usize);
    for (r, row) in matrix.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let rgb = v.map_or(EMPTY_CELL, |v| color(v, scale));
            let (x0, y0) = (c as u32 * (cell + 1) + 1, r as u32 * (cell + 1) + 1);
            for y in y0..y0 + cell {
                for x in x0..x0 + cell {
                    let i = ((y * side + x) * 3) as usize;
                    data[i..i + 3].copy_from_slice(&rgb);
                }
            }
        }
    }
    Image::new(side, side, data).expect("buffer sized for the image")
}

/// Plain-text matrix with dimension labels.
pub fn matrix_text(dims: &[Dimension], matrix: &[Vec<Option<f64>>]) -> String {
    let mut s = format!("{:<12}", "");
    for d in dims {
        let _ = write!(s, " {:>11}", d.label());
    }
    s.push('\n');
    for (d, row) in dims.iter().zip(matrix) {
        let _ = write!(s, "{:<12}", d.label());
        for v in row {
            match v {
                Some(v) => {
                    let _ = write!(s, " {v:>11.4}");
                }
                None => {
                    let _ = write!(s, " {:>11}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tenths_round_half_even() {
        assert_eq!(Tenths::percent(1, 1), Tenths(1000));
        assert_eq!(Tenths::percent(1, 3), Tenths(333));
        assert_eq!(Tenths::percent(2, 3), Tenths(667));
        // 0.25 % -> 2.5 tenths -> 2; 0.75 % -> 8.
        assert_eq!(Tenths::percent(1, 400), Tenths(2));
        assert_eq!(Tenths::percent(3, 400), Tenths(8));
        assert_eq!((Tenths(765) - Tenths(11)).to_string(), "75.4");
        assert_eq!(Tenths(-3).to_string(), "-0.3");
        assert_eq!(Tenths(5).to_string(), "0.5");
    }

    #[test]
    fn sci_format_has_two_digit_exponent() {
        assert_eq!(format_sci(6.01e-3), "6.01e-03");
        assert_eq!(format_sci(3.33e-7), "3.33e-07");
        assert_eq!(format_sci(0.5), "5.00e-01");
    }

    #[test]
    fn raster_layout() {
        let m = vec![vec![None, Some(0.5)], vec![Some(1.0), None]];
        let img = raster_matrix(&m, 4, ColorScale::Sequential { max: 1.0 });
        assert_eq!((img.width(), img.height()), (11, 11));
        assert_eq!(img.pixel(0, 0), GRID);
        assert_eq!(img.pixel(1, 1), EMPTY_CELL);
        assert_eq!(img.pixel(1, 6), [33, 72, 160]);
        assert_eq!(img.pixel(6, 1), [144, 164, 208]);
    }
}
