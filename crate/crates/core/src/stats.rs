//! Success-conditioned interaction statistics for pairs of perturbation dimensions.
//!
//! For two indicators `D_i`, `D_j` and success rates `s(a, b)` measured with
//! `D_i = a`, `D_j = b`, conditioning on success gives
//! `p(a, b | Y=1) = s(a, b) / T` with `T = sum s`. The compositionality gap is
//! the covariance `p(1,1|Y=1) - p(D_i=1|Y=1) p(D_j=1|Y=1)`.

use crate::harness::EpisodeRecord;
use crate::perturbation::Dimension;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("rate {name} = {value} is outside [0, 1]")]
    Rate { name: &'static str, value: f64 },
    #[error("n_trials must be at least 1")]
    ZeroTrials,
    #[error("all success rates are zero; conditioning on success is undefined")]
    DegenerateDenominator,
    #[error("contingency table has an empty row or column")]
    ZeroMarginal,
    #[error("missing pairs: {0:?}")]
    IncompletePairs(Vec<(Dimension, Dimension)>),
    #[error("no records for {dim_i}={} and {dim_j}={}", u8::from(cell.0), u8::from(cell.1))]
    EmptyCondition {
        dim_i: Dimension,
        dim_j: Dimension,
        cell: (bool, bool),
    },
}

/// Success rates of the four `(D_i, D_j)` conditions. `s10` has only `D_i` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSuccessTable {
    pub s00: f64,
    pub s01: f64,
    pub s10: f64,
    pub s11: f64,
    pub n_trials: u64,
}

impl PairSuccessTable {
    pub fn new(s00: f64, s01: f64, s10: f64, s11: f64, n_trials: u64) -> Result<Self, StatsError> {
        let t = Self {
            s00,
            s01,
            s10,
            s11,
            n_trials,
        };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<(), StatsError> {
        for (name, value) in [
            ("s00", self.s00),
            ("s01", self.s01),
            ("s10", self.s10),
            ("s11", self.s11),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(StatsError::Rate { name, value });
            }
        }
        if self.n_trials == 0 {
            return Err(StatsError::ZeroTrials);
        }
        Ok(())
    }

    /// Same table with the roles of `D_i` and `D_j` exchanged.
    pub fn transposed(&self) -> Self {
        Self {
            s01: self.s10,
            s10: self.s01,
            ..*self
        }
    }

    pub fn rate(&self, a: bool, b: bool) -> f64 {
        match (a, b) {
            (false, false) => self.s00,
            (false, true) => self.s01,
            (true, false) => self.s10,
            (true, true) => self.s11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompGapResult {
    /// `joint[a][b] = p(D_i=a, D_j=b | Y=1)`.
    pub joint: [[f64; 2]; 2],
    pub p_joint: f64,
    pub p_i: f64,
    pub p_j: f64,
    pub delta: f64,
}

/// Success-conditioned joint, marginals and gap of a pair table.
pub fn success_conditioned(table: &PairSuccessTable) -> Result<CompGapResult, StatsError> {
    table.check()?;
    let total = table.s00 + table.s01 + table.s10 + table.s11;
    if total <= 0.0 {
        return Err(StatsError::DegenerateDenominator);
    }
    let joint = [
        [table.s00 / total, table.s01 / total],
        [table.s10 / total, table.s11 / total],
    ];
    // Marginals are sums of joint cells so the decompositions hold bit-for-bit.
    let p_i = joint[1][0] + joint[1][1];
    let p_j = joint[0][1] + joint[1][1];
    let p_joint = joint[1][1];
    Ok(CompGapResult {
        joint,
        p_joint,
        p_i,
        p_j,
        delta: p_joint - p_i * p_j,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl Contingency {
    pub fn total(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }
}

/// Success counts implied by rates: `n_ab = round(s_ab * n_trials)`, ties to even.
pub fn contingency_from_rates(table: &PairSuccessTable) -> Result<Contingency, StatsError> {
    table.check()?;
    let n = table.n_trials as f64;
    let c = |s: f64| (s * n).round_ties_even() as u64;
    Ok(Contingency {
        n00: c(table.s00),
        n01: c(table.s01),
        n10: c(table.s10),
        n11: c(table.s11),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub p_value: f64,
    pub counts: Contingency,
}

/// Pearson chi-square independence test on a 2x2 table, no continuity correction.
pub fn chi_square(counts: Contingency) -> Result<ChiSquareResult, StatsError> {
    let o = [
        [counts.n00 as f64, counts.n01 as f64],
        [counts.n10 as f64, counts.n11 as f64],
    ];
    let rows = [o[0][0] + o[0][1], o[1][0] + o[1][1]];
    let cols = [o[0][0] + o[1][0], o[0][1] + o[1][1]];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return Err(StatsError::ZeroMarginal);
    }
    let n = rows[0] + rows[1];
    let mut statistic = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            let e = rows[r] * cols[c] / n;
            statistic += (o[r][c] - e).powi(2) / e;
        }
    }
    Ok(ChiSquareResult {
        statistic,
        p_value: chi2_sf_dof1(statistic),
        counts,
    })
}

/// `P(chi2_1 >= x) = Q(1/2, x/2)`.
pub fn chi2_sf_dof1(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(0.5, x / 2.0)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7, nine terms).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * std::f64::consts::TAU.ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const MAX_ITER: usize = 10_000;
const EPS: f64 = 1e-16;

/// Lower regularized incomplete gamma by its power series (good for `x < a + 1`).
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut sum = 1.0 / a;
    let mut term = sum;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Upper regularized incomplete gamma by its continued fraction (modified Lentz).
fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_fraction(a, x)
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_fraction(a, x)
    }
}

/// Interaction matrices over an ordered set of dimensions.
///
/// Upper cells (`row < col`) hold `p_i * p_j`; lower cells hold the observed
/// `p(1,1|Y=1)` of the mirrored pair; `gap` is their difference, stored
/// symmetrically. Diagonals are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub dims: Vec<Dimension>,
    pub product: Vec<Vec<Option<f64>>>,
    pub joint: Vec<Vec<Option<f64>>>,
    pub gap: Vec<Vec<Option<f64>>>,
}

impl Heatmap {
    /// Upper-triangle products and lower-triangle joints in one matrix, as plotted.
    pub fn combined(&self) -> Vec<Vec<Option<f64>>> {
        let n = self.dims.len();
        (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| match r.cmp(&c) {
                        std::cmp::Ordering::Less => self.product[r][c],
                        std::cmp::Ordering::Greater => self.joint[r][c],
                        std::cmp::Ordering::Equal => None,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Looks a pair up in either orientation, transposing when stored reversed.
pub fn lookup_pair(
    results: &BTreeMap<(Dimension, Dimension), PairSuccessTable>,
    a: Dimension,
    b: Dimension,
) -> Option<PairSuccessTable> {
    results
        .get(&(a, b))
        .copied()
        .or_else(|| results.get(&(b, a)).map(PairSuccessTable::transposed))
}

pub fn pairwise_heatmap(
    results: &BTreeMap<(Dimension, Dimension), PairSuccessTable>,
    dims: &[Dimension],
) -> Result<Heatmap, StatsError> {
    let n = dims.len();
    let missing: Vec<_> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (dims[i], dims[j])))
        .filter(|(a, b)| lookup_pair(results, *a, *b).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(StatsError::IncompletePairs(missing));
    }
    let mut product = vec![vec![None; n]; n];
    let mut joint = vec![vec![None; n]; n];
    let mut gap = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let t = lookup_pair(results, dims[i], dims[j]).expect("checked above");
            let r = success_conditioned(&t)?;
            product[i][j] = Some(r.p_i * r.p_j);
            joint[j][i] = Some(r.p_joint);
            let g = r.p_joint - r.p_i * r.p_j;
            gap[i][j] = Some(g);
            gap[j][i] = Some(g);
        }
    }
    Ok(Heatmap {
        dims: dims.to_vec(),
        product,
        joint,
        gap,
    })
}

/// Per-pair summary used by the analysis document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseStats {
    pub dim_i: Dimension,
    pub dim_j: Dimension,
    pub table: PairSuccessTable,
    pub gap: CompGapResult,
    pub chi_square: Option<ChiSquareResult>,
}

pub fn pairwise_stats(
    dim_i: Dimension,
    dim_j: Dimension,
    table: PairSuccessTable,
) -> Result<PairwiseStats, StatsError> {
    let gap = success_conditioned(&table)?;
    let chi = match chi_square(contingency_from_rates(&table)?) {
        Ok(c) => Some(c),
        Err(StatsError::ZeroMarginal) => None,
        Err(e) => return Err(e),
    };
    Ok(PairwiseStats {
        dim_i,
        dim_j,
        table,
        gap,
        chi_square: chi,
    })
}

/// Records belonging to the pair experiment `(dim_i, dim_j)`: nothing outside
/// the pair is active. Yields `(D_i, D_j, success)`.
fn pair_outcomes<'a>(
    records: &'a [EpisodeRecord],
    dim_i: Dimension,
    dim_j: Dimension,
) -> impl Iterator<Item = (bool, bool, bool)> + 'a {
    let pair_mask = (1u8 << dim_i.index()) | (1u8 << dim_j.index());
    records
        .iter()
        .filter(move |r| r.perturbation.mask() & !pair_mask == 0)
        .map(move |r| (r.perturbation.is_set(dim_i), r.perturbation.is_set(dim_j), r.success))
}

/// Measured rates of the four conditions. `n_trials` is the smallest cell size.
pub fn pair_table_from_records(
    records: &[EpisodeRecord],
    dim_i: Dimension,
    dim_j: Dimension,
) -> Result<PairSuccessTable, StatsError> {
    let mut trials = [[0u64; 2]; 2];
    let mut wins = [[0u64; 2]; 2];
    for (a, b, y) in pair_outcomes(records, dim_i, dim_j) {
        trials[usize::from(a)][usize::from(b)] += 1;
        wins[usize::from(a)][usize::from(b)] += u64::from(y);
    }
    let rate = |a: usize, b: usize| -> Result<f64, StatsError> {
        match trials[a][b] {
            0 => Err(StatsError::EmptyCondition {
                dim_i,
                dim_j,
                cell: (a == 1, b == 1),
            }),
            n => Ok(wins[a][b] as f64 / n as f64),
        }
    };
    let n = trials.iter().flatten().copied().min().unwrap_or(0);
    PairSuccessTable::new(rate(0, 0)?, rate(0, 1)?, rate(1, 0)?, rate(1, 1)?, n)
}

/// Tables for every unordered pair of `dims`.
pub fn pair_tables_from_records(
    records: &[EpisodeRecord],
    dims: &[Dimension],
) -> Result<BTreeMap<(Dimension, Dimension), PairSuccessTable>, StatsError> {
    let mut out = BTreeMap::new();
    for (k, &a) in dims.iter().enumerate() {
        for &b in &dims[k + 1..] {
            out.insert((a, b), pair_table_from_records(records, a, b)?);
        }
    }
    Ok(out)
}

/// Covariance of `(D_i, D_j)` over the successful trials of the pair experiment.
pub fn empirical_success_covariance(
    records: &[EpisodeRecord],
    dim_i: Dimension,
    dim_j: Dimension,
) -> Result<f64, StatsError> {
    let (mut n, mut si, mut sj, mut sij) = (0u64, 0u64, 0u64, 0u64);
    for (a, b, _) in pair_outcomes(records, dim_i, dim_j).filter(|o| o.2) {
        n += 1;
        si += u64::from(a);
        sj += u64::from(b);
        sij += u64::from(a && b);
    }
    if n == 0 {
        return Err(StatsError::DegenerateDenominator);
    }
    let n = n as f64;
    Ok(sij as f64 / n - (si as f64 / n) * (sj as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(s00: f64, s01: f64, s10: f64, s11: f64) -> PairSuccessTable {
        PairSuccessTable::new(s00, s01, s10, s11, 2000).unwrap()
    }

    #[test]
    fn independence_identity_has_zero_gap() {
        let r = success_conditioned(&table(0.9, 0.6, 0.6, 0.4)).unwrap();
        assert!(r.delta.abs() < 1e-15);
        let r = success_conditioned(&table(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!((r.p_i, r.p_j, r.p_joint, r.delta), (0.5, 0.5, 0.25, 0.0));
    }

    #[test]
    fn worked_layout_background_gap() {
        let r = success_conditioned(&table(0.971, 0.8575, 0.7175, 0.5700)).unwrap();
        let t: f64 = 3.116;
        let expected = (0.971 * 0.57 - 0.7175 * 0.8575) / (t * t);
        assert!((r.delta - expected).abs() < 1e-12);
        assert!((r.delta + 0.0064).abs() < 5e-5);
    }

    #[test]
    fn all_zero_table_is_degenerate() {
        assert_eq!(
            success_conditioned(&table(0.0, 0.0, 0.0, 0.0)),
            Err(StatsError::DegenerateDenominator)
        );
        assert!(PairSuccessTable::new(1.2, 0.0, 0.0, 0.0, 1).is_err());
        assert!(PairSuccessTable::new(0.2, 0.0, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn counts_from_rates() {
        let c = contingency_from_rates(&table(0.971, 0.0, 0.0, 0.57)).unwrap();
        assert_eq!((c.n00, c.n11, c.n01, c.n10), (1942, 1140, 0, 0));
        // 0.00025 * 2000 = 0.5 rounds to even.
        let c = contingency_from_rates(&table(0.00025, 0.00075, 0.0, 0.0)).unwrap();
        assert_eq!((c.n00, c.n01), (0, 2));
    }

    #[test]
    fn balanced_table_is_independent() {
        let r = chi_square(Contingency {
            n00: 500,
            n01: 500,
            n10: 500,
            n11: 500,
        })
        .unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(
            chi_square(Contingency {
                n00: 0,
                n01: 0,
                n10: 3,
                n11: 4
            }),
            Err(StatsError::ZeroMarginal)
        );
    }

    #[test]
    fn chi_square_matches_closed_form() {
        let c = Contingency {
            n00: 1800,
            n01: 1400,
            n10: 1400,
            n11: 928,
        };
        let (a, b, cc, d) = (1800.0, 1400.0, 1400.0, 928.0);
        let n = a + b + cc + d;
        let closed = n * (a * d - b * cc) * (a * d - b * cc) / ((a + b) * (cc + d) * (a + cc) * (b + d));
        let r = chi_square(c).unwrap();
        assert!((r.statistic - closed).abs() < 1e-9 * closed);
    }

    #[test]
    fn p_value_anchors() {
        assert!((chi2_sf_dof1(3.841) - 0.05).abs() < 1e-3);
        assert!((chi2_sf_dof1(7.55) / 6.01e-3 - 1.0).abs() < 0.05);
        assert!((gamma_p(2.5, 1.7) + gamma_q(2.5, 1.7) - 1.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn heatmap_shapes_and_missing_pairs() {
        let mut m = BTreeMap::new();
        m.insert((Dimension::Layout, Dimension::Camera), table(0.9, 0.6, 0.6, 0.4));
        let h = pairwise_heatmap(&m, &[Dimension::Camera, Dimension::Layout]).unwrap();
        assert!(h.product[0][1].is_some() && h.product[1][0].is_none());
        assert!(h.joint[1][0].is_some() && h.joint[0][1].is_none());
        assert!(h.gap[0][1].unwrap().abs() < 1e-15);
        assert!(h.combined()[0][0].is_none());
        match pairwise_heatmap(&m, &[Dimension::Camera, Dimension::Layout, Dimension::Noise]) {
            Err(StatsError::IncompletePairs(p)) => assert_eq!(p.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transposed_lookup_swaps_single_cells() {
        let mut m = BTreeMap::new();
        m.insert((Dimension::Layout, Dimension::Camera), table(0.9, 0.3, 0.7, 0.2));
        let t = lookup_pair(&m, Dimension::Camera, Dimension::Layout).unwrap();
        assert_eq!((t.s01, t.s10), (0.7, 0.3));
    }
}
