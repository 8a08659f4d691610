//! Approximate entropy, Poincaré pairs and parameter sweeps of the map.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chaos::{MapParams, MapState, Orbit};
use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::fmt_f64;
use crate::network::{self, Architecture, TrainConfig};
use crate::reservoir::{build_matrix, FillMethod, InitKind, ReservoirConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApEnConfig {
    /// Embedding dimension.
    pub m: usize,
    /// Absolute tolerance radius (max-norm).
    pub r: f64,
}

impl Default for ApEnConfig {
    fn default() -> Self {
        Self { m: 2, r: 0.025 }
    }
}

/// Embedding dimensions of the entropy grid.
pub const APEN_GRID_M: [usize; 3] = [1, 2, 3];
/// Tolerances of the entropy grid.
pub const APEN_GRID_R: [f64; 3] = [0.025, 0.05, 0.1];

/// Approximate entropy `Φᵐ(r) − Φᵐ⁺¹(r)`, self-matches included.
///
/// Both pattern lengths are counted in one pass over window pairs: a pair
/// matching over `m + 1` points also matches over the first `m`.
pub fn approximate_entropy(series: &[f64], config: ApEnConfig) -> Result<f64> {
    let ApEnConfig { m, r } = config;
    if m == 0 || !(r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ApEn needs m >= 1 and r > 0, got m={m}, r={r}"
        )));
    }
    let n = series.len();
    if n <= m + 1 {
        return Err(Error::InvalidArgument(format!(
            "ApEn with m={m} needs more than {} points, got {n}",
            m + 1
        )));
    }
    let windows_m = n - m + 1;
    let windows_m1 = n - m;
    let mut count_m = vec![0u32; windows_m];
    let mut count_m1 = vec![0u32; windows_m1];
    for i in 0..windows_m {
        // self-match
        count_m[i] += 1;
        if i < windows_m1 {
            count_m1[i] += 1;
        }
        for j in i + 1..windows_m {
            if (0..m).all(|k| (series[i + k] - series[j + k]).abs() <= r) {
                count_m[i] += 1;
                count_m[j] += 1;
                if j < windows_m1 && (series[i + m] - series[j + m]).abs() <= r {
                    count_m1[i] += 1;
                    count_m1[j] += 1;
                }
            }
        }
    }
    let phi = |counts: &[u32]| {
        let total = counts.len() as f64;
        counts
            .iter()
            .map(|&c| (f64::from(c) / total).ln())
            .sum::<f64>()
            / total
    };
    Ok(phi(&count_m) - phi(&count_m1))
}

/// `(xₙ, yₙ)` for `count` iterates after the transient, starting at (A, B).
pub fn poincare_pairs(params: &MapParams, count: usize) -> Result<Vec<MapState>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "need at least one Poincaré pair".into(),
        ));
    }
    let mut orbit = Orbit::settled(*params, params.a, params.b)?;
    (0..count).map(|_| orbit.advance()).collect()
}

pub fn write_poincare_csv<W: Write>(
    pairs: &[MapState],
    comment: Option<&str>,
    mut out: W,
) -> std::io::Result<()> {
    write_comment(&mut out, comment)?;
    writeln!(out, "n,x,y")?;
    for (i, s) in pairs.iter().enumerate() {
        writeln!(out, "{},{},{}", i + 1, fmt_f64(s.x), fmt_f64(s.y))?;
    }
    Ok(())
}

fn write_comment<W: Write>(out: &mut W, comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweptParam {
    A,
    B,
    A1,
    A2,
    A3,
    A4,
}

impl SweptParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::A => "A",
            Self::B => "B",
            Self::A1 => "a1",
            Self::A2 => "a2",
            Self::A3 => "a3",
            Self::A4 => "a4",
        }
    }

    pub fn set(self, params: &mut MapParams, value: f64) {
        match self {
            Self::A => params.a = value,
            Self::B => params.b = value,
            Self::A1 => params.a1 = value,
            Self::A2 => params.a2 = value,
            Self::A3 => params.a3 = value,
            Self::A4 => params.a4 = value,
        }
    }
}

impl std::str::FromStr for SweptParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Self::A),
            "B" | "b" => Ok(Self::B),
            "a1" => Ok(Self::A1),
            "a2" => Ok(Self::A2),
            "a3" => Ok(Self::A3),
            "a4" => Ok(Self::A4),
            _ => Err(Error::InvalidArgument(format!(
                "unknown map parameter {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub parameter: SweptParam,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Values for everything that is not swept.
    pub base: MapParams,
    /// Recorded iterates per swept value.
    pub samples: usize,
    pub method: FillMethod,
}

impl SweepConfig {
    /// An a1 sweep over `[lo, hi]` with the other parameters at the reference point.
    pub fn reference_a1(lo: f64, hi: f64, step: f64, method: FillMethod) -> Self {
        Self {
            parameter: SweptParam::A1,
            lo,
            hi,
            step,
            base: MapParams::reference(lo),
            samples: 200,
            method,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo <= self.hi)
            || !(self.step > 0.0)
            || !self.lo.is_finite()
            || !self.hi.is_finite()
        {
            return Err(Error::InvalidArgument(format!(
                "sweep needs lo <= hi and step > 0, got [{}, {}] step {}",
                self.lo, self.hi, self.step
            )));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument(
                "sweep needs at least one sample per value".into(),
            ));
        }
        Ok(())
    }

    /// Grid values `lo, lo + step, …` up to `hi` (inclusive, with a small
    /// tolerance for accumulated rounding).
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.lo + i as f64 * self.step).collect()
    }

    /// Map parameters at one grid value, with the method's flags applied.
    pub fn params_at(&self, value: f64) -> MapParams {
        let mut p = self.base;
        self.parameter.set(&mut p, value);
        self.method.apply(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationColumn {
    pub value: f64,
    /// `None` when the orbit overflowed.
    pub iterates: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bifurcation {
    pub parameter: SweptParam,
    pub columns: Vec<BifurcationColumn>,
}

impl Bifurcation {
    pub fn overflowed(&self) -> impl Iterator<Item = f64> + '_ {
        self.columns
            .iter()
            .filter(|c| c.iterates.is_none())
            .map(|c| c.value)
    }

    pub fn row_count(&self) -> usize {
        self.columns
            .iter()
            .filter_map(|c| c.iterates.as_ref())
            .map(Vec::len)
            .sum()
    }

    /// Long format: `param,iterate_index,y`. Overflowed values contribute no rows.
    pub fn write_csv<W: Write>(&self, comment: Option<&str>, mut out: W) -> std::io::Result<()> {
        write_comment(&mut out, comment)?;
        let overflowed: Vec<String> = self.overflowed().map(fmt_f64).collect();
        if !overflowed.is_empty() {
            writeln!(out, "# overflowed: {}", overflowed.join(" "))?;
        }
        writeln!(out, "{},iterate_index,y", self.parameter.name())?;
        for col in &self.columns {
            if let Some(values) = &col.iterates {
                for (i, y) in values.iter().enumerate() {
                    writeln!(out, "{},{},{}", fmt_f64(col.value), i + 1, fmt_f64(*y))?;
                }
            }
        }
        Ok(())
    }
}

/// For each grid value: run the transient from (A, B), record `samples` y-iterates.
/// Methods without a transient still skip the standard one here so the
/// diagram shows the attractor.
pub fn bifurcation_sweep(config: &SweepConfig) -> Result<Bifurcation> {
    config.validate()?;
    let columns = config
        .values()
        .into_iter()
        .map(|value| {
            let params = config
                .params_at(value)
                .with_preliminary(crate::chaos::PRELIMINARY_ITERATIONS);
            let iterates =
                crate::chaos::iterate_series(&params, params.a, params.b, config.samples).ok();
            BifurcationColumn { value, iterates }
        })
        .collect();
    Ok(Bifurcation {
        parameter: config.parameter,
        columns,
    })
}

/// The values that fill W₁ for `config`, in fill order, truncated to `len`.
pub fn filling_series(config: &ReservoirConfig, len: usize) -> Result<Vec<f64>> {
    match config.method.init_kind() {
        InitKind::Constant => {
            crate::chaos::iterate_series(&config.params, config.params.a, config.params.b, len)
        }
        InitKind::Sine => {
            // row-major over the matrix, enough rows to cover `len`
            let rows = len.div_ceil(crate::reservoir::INPUT_DIM).max(1);
            let cfg = ReservoirConfig {
                neurons: rows,
                ..config.clone()
            };
            let w = build_matrix(&cfg)?;
            Ok(w.as_slice()[..len.min(w.as_slice().len())].to_vec())
        }
    }
}

/// Average-rank Spearman correlation; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&ranks(a), &ranks(b))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyAccuracyRow {
    pub value: f64,
    /// `apen[i][j]` for `m = APEN_GRID_M[i]`, `r = APEN_GRID_R[j]`; NaN when the series overflowed.
    pub apen: [[f64; 3]; 3],
    /// Test accuracy; 0 when the reservoir could not be built.
    pub accuracy: f64,
    pub overflowed: bool,
}

impl EntropyAccuracyRow {
    pub fn apen_at(&self, m: usize, r: f64) -> Option<f64> {
        let i = APEN_GRID_M.iter().position(|&x| x == m)?;
        let j = APEN_GRID_R.iter().position(|&x| x == r)?;
        Some(self.apen[i][j])
    }
}

/// Inputs to the entropy/accuracy study beyond the sweep itself.
#[derive(Debug, Clone)]
pub struct EntropyStudy<'a> {
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub train_set: &'a LabeledDataset,
    pub test_set: &'a LabeledDataset,
    /// Length of the filling series used for ApEn.
    pub series_len: usize,
}

/// ApEn on the (m, r) grid and test accuracy at every sweep value.
pub fn entropy_accuracy_table(
    sweep: &SweepConfig,
    study: &EntropyStudy<'_>,
) -> Result<Vec<EntropyAccuracyRow>> {
    sweep.validate()?;
    let mut rows = Vec::new();
    for value in sweep.values() {
        let reservoir = ReservoirConfig::new(
            sweep.method,
            sweep.params_at(value),
            study.architecture.reservoir,
        );
        let series = filling_series(&reservoir, study.series_len);
        let (apen, overflowed) = match &series {
            Ok(s) => {
                let mut grid = [[0.0; 3]; 3];
                for (i, &m) in APEN_GRID_M.iter().enumerate() {
                    for (j, &r) in APEN_GRID_R.iter().enumerate() {
                        grid[i][j] = approximate_entropy(s, ApEnConfig { m, r })?;
                    }
                }
                (grid, false)
            }
            Err(Error::Overflow { .. }) => ([[f64::NAN; 3]; 3], true),
            Err(e) => return Err(Error::InvalidArgument(e.to_string())),
        };
        let accuracy = match network::train(
            study.train_set,
            &study.architecture,
            &reservoir,
            &study.train,
        ) {
            Ok(model) => network::evaluate(&model, study.test_set)?,
            Err(Error::Overflow { .. }) | Err(Error::Divergence { .. }) => 0.0,
            Err(e) => return Err(e),
        };
        rows.push(EntropyAccuracyRow {
            value,
            apen,
            accuracy,
            overflowed,
        });
    }
    Ok(rows)
}

/// Spearman correlation between ApEn(m, r) and accuracy over non-overflowed rows.
pub fn entropy_accuracy_correlation(rows: &[EntropyAccuracyRow], m: usize, r: f64) -> Option<f64> {
    let (apen, acc): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|row| !row.overflowed)
        .filter_map(|row| Some((row.apen_at(m, r)?, row.accuracy)))
        .unzip();
    spearman(&apen, &acc)
}

/// Wide format: the swept value, nine ApEn columns, accuracy.
pub fn write_entropy_accuracy_csv<W: Write>(
    rows: &[EntropyAccuracyRow],
    parameter: SweptParam,
    comment: Option<&str>,
    mut out: W,
) -> std::io::Result<()> {
    write_comment(&mut out, comment)?;
    let mut header = vec![parameter.name().to_string()];
    for m in APEN_GRID_M {
        for r in APEN_GRID_R {
            header.push(format!("apen_m{m}_r{r}"));
        }
    }
    header.push("accuracy".into());
    header.push("overflowed".into());
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let mut cells = vec![fmt_f64(row.value)];
        cells.extend(row.apen.iter().flatten().map(|v| fmt_f64(*v)));
        cells.push(fmt_f64(row.accuracy));
        cells.push(row.overflowed.to_string());
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight from the definition: build every window, count matches per
    /// window, average the logs.
    fn brute_force_apen(series: &[f64], m: usize, r: f64) -> f64 {
        fn phi(series: &[f64], m: usize, r: f64) -> f64 {
            let windows: Vec<&[f64]> = series.windows(m).collect();
            let total = windows.len() as f64;
            let mut sum = 0.0;
            for a in &windows {
                let mut c = 0usize;
                for b in &windows {
                    let dist = a
                        .iter()
                        .zip(b.iter())
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max);
                    if dist <= r {
                        c += 1;
                    }
                }
                sum += (c as f64 / total).ln();
            }
            sum / total
        }
        phi(series, m, r) - phi(series, m + 1, r)
    }

    #[test]
    fn constant_series_has_zero_entropy() {
        for n in [4, 10, 300] {
            let apen = approximate_entropy(&vec![0.7; n], ApEnConfig::default()).unwrap();
            assert_eq!(apen, 0.0);
        }
    }

    #[test]
    fn short_random_series_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let series: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 0.2).collect();
        for m in [1, 2, 3] {
            for r in [0.01, 0.025, 0.05] {
                let fast = approximate_entropy(&series, ApEnConfig { m, r }).unwrap();
                let slow = brute_force_apen(&series, m, r);
                assert!((fast - slow).abs() < 1e-9, "m={m} r={r}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn period_two_series_matches_brute_force() {
        let series: Vec<f64> = (0..60)
            .map(|i| if i % 2 == 0 { 0.5 } else { -0.5 })
            .collect();
        let fast = approximate_entropy(&series, ApEnConfig { m: 2, r: 0.1 }).unwrap();
        let slow = brute_force_apen(&series, 2, 0.1);
        assert!((fast - slow).abs() < 1e-12);
        assert!(fast.abs() < 0.05);
    }

    #[test]
    fn too_short_series_is_rejected() {
        assert!(approximate_entropy(&[1.0, 2.0, 3.0], ApEnConfig { m: 2, r: 0.1 }).is_err());
        assert!(approximate_entropy(&[1.0; 10], ApEnConfig { m: 2, r: 0.0 }).is_err());
    }

    #[test]
    fn swap_map_pairs_alternate() {
        let params = MapParams::new(0.2, 0.9, 0.0, 0.0, 0.0, 0.0);
        let pairs = poincare_pairs(&params, 4).unwrap();
        assert_eq!(pairs[0], MapState::new(0.9, 0.2));
        assert_eq!(pairs[1], MapState::new(0.2, 0.9));
        assert_eq!(pairs[2], pairs[0]);
        assert_eq!(poincare_pairs(&params, 4).unwrap(), pairs);
    }

    #[test]
    fn chaotic_point_has_rich_pair_cloud() {
        let params = MapParams::reference(0.7).with_preliminary(10_000);
        let pairs = poincare_pairs(&params, 1000).unwrap();
        let mut ys: Vec<u64> = pairs.iter().map(|p| p.y.to_bits()).collect();
        ys.sort_unstable();
        ys.dedup();
        assert!(ys.len() > 100, "{}", ys.len());
    }

    #[test]
    fn single_value_sweep() {
        let cfg = SweepConfig::reference_a1(0.7, 0.7, 0.1, FillMethod::Method6);
        let b = bifurcation_sweep(&cfg).unwrap();
        assert_eq!(b.columns.len(), 1);
        assert_eq!(b.row_count(), 200);
    }

    #[test]
    fn swap_sweep_records_two_values() {
        let cfg = SweepConfig {
            parameter: SweptParam::A4,
            lo: 0.0,
            hi: 0.0,
            step: 1.0,
            base: MapParams::new(0.3, -0.6, 0.0, 0.0, 0.0, 0.0),
            samples: 50,
            method: FillMethod::Method6,
        };
        let b = bifurcation_sweep(&cfg).unwrap();
        let mut distinct: Vec<u64> = b.columns[0]
            .iterates
            .as_ref()
            .unwrap()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn reference_sweep_has_narrow_and_broad_bands() {
        let cfg = SweepConfig::reference_a1(0.1, 1.5, 0.1, FillMethod::Method6);
        let b = bifurcation_sweep(&cfg).unwrap();
        assert_eq!(b.columns.len(), 15);
        let distinct: Vec<usize> = b
            .columns
            .iter()
            .map(|c| {
                let mut v: Vec<i64> = c
                    .iterates
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|y| (y * 1e6).round() as i64)
                    .collect();
                v.sort_unstable();
                v.dedup();
                v.len()
            })
            .collect();
        assert!(distinct.iter().any(|&d| d <= 16), "{distinct:?}");
        assert!(distinct.iter().any(|&d| d >= 150), "{distinct:?}");
    }

    #[test]
    fn overflowing_values_are_flagged_and_skipped() {
        let cfg = SweepConfig {
            parameter: SweptParam::A1,
            lo: 0.0,
            hi: 3.0,
            step: 1.0,
            base: MapParams::new(2.0, 2.0, 0.0, 1.0, 0.0, 0.0),
            samples: 10,
            method: FillMethod::Method6,
        };
        let b = bifurcation_sweep(&cfg).unwrap();
        let over: Vec<f64> = b.overflowed().collect();
        assert!(!over.is_empty());
        assert_eq!(b.row_count(), (4 - over.len()) * 10);
        let mut buf = Vec::new();
        b.write_csv(None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# overflowed:"));
        assert_eq!(
            text.lines().filter(|l| !l.starts_with('#')).count(),
            1 + b.row_count()
        );
    }

    #[test]
    fn sweep_grid_counts() {
        let cfg = SweepConfig::reference_a1(0.1, 1.5, 0.1, FillMethod::Method4);
        assert_eq!(cfg.values().len(), 15);
        let bad = SweepConfig { step: 0.0, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        // ties get average ranks
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((rho - 0.9486832980505138).abs() < 1e-12, "{rho}");
    }

    #[test]
    fn filling_series_matches_matrix_order() {
        let cfg = ReservoirConfig::new(FillMethod::Method4, MapParams::reference(0.7), 3);
        let s = filling_series(&cfg, 100).unwrap();
        let w = build_matrix(&cfg).unwrap();
        assert_eq!(&s[..], &w.row(0)[..100]);
        let sine = ReservoirConfig::new(
            FillMethod::Method1,
            MapParams::new(0.5, 1.0, 0.2, 0.2, 0.2, 0.2),
            2,
        );
        let s = filling_series(&sine, 900).unwrap();
        assert_eq!(s.len(), 900);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn apen_matches_brute_force(seed in any::<u64>(), n in 5usize..=200, mi in 0usize..3, ri in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let series: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 0.3).collect();
            let (m, r) = (APEN_GRID_M[mi], APEN_GRID_R[ri]);
            prop_assume!(n > m + 1);
            let fast = approximate_entropy(&series, ApEnConfig { m, r }).unwrap();
            prop_assert!((fast - brute_force_apen(&series, m, r)).abs() < 1e-9);
        }
    }
}
