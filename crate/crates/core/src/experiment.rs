//! Monte-Carlo estimation of the failure probability `delta_hat` over an
//! `(m, k, eps)` grid of flat 0/1 vectors, and the analyses run on the
//! persisted results: `nu_hat`, the ratio to the theoretical tradeoff, and the
//! `m eps^2 delta_hat` border table.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use num_bigint::BigUint;
use rayon::prelude::*;

use crate::bounds::min_terms;
use crate::error::{invalid, Error, Result};
use crate::projection::{BucketSign, FeatureHasher, SparseVector};
use crate::rng_hash::{derive_streams, mix_seed};

pub const DEFAULT_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
pub const DEFAULT_TRIALS: u64 = 1 << 16;
pub const MIN_TRIALS: u64 = 1 << 10;
/// Trials handled by one work unit inside a cell.
const BATCH: u64 = 1 << 10;

pub const RESULTS_HEADER: [&str; 6] = ["m", "k", "eps", "trials", "failures", "delta_hat"];
pub const RATIO_HEADER: [&str; 8] = [
    "m", "eps", "delta", "nu_hat", "left", "right", "ratio", "branch",
];
pub const RATIO_BRANCH_HEADER: [&str; 6] =
    ["m", "eps", "delta", "nu_hat", "ratio_left", "ratio_right"];
pub const BORDER_HEADER: [&str; 4] = ["m", "eps", "max_delta_hat", "product"];
pub const NU_HEADER: [&str; 5] = ["m", "eps", "delta", "k_star", "nu_hat"];

fn powers_of_two(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(e)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub m_values: Vec<u64>,
    pub k_values: Vec<u64>,
    pub eps_values: Vec<f64>,
    pub delta_values: Vec<f64>,
    pub trials_per_cell: u64,
    pub master_seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        let mut k_values: Vec<u64> = (1..=13).map(|e| 1u64 << e).collect();
        k_values.push(7);
        k_values.sort_unstable();
        GridSpec {
            m_values: (6..=12).map(|e| 1u64 << e).collect(),
            k_values,
            eps_values: powers_of_two(-10, -1),
            delta_values: powers_of_two(-20, 0),
            trials_per_cell: DEFAULT_TRIALS,
            master_seed: DEFAULT_SEED,
        }
    }
}

fn check_ascending<T: PartialOrd + std::fmt::Debug>(name: &str, values: &[T]) -> Result<()> {
    if values.is_empty() {
        return Err(invalid(format!("{name} grid is empty")));
    }
    if let Some(w) = values
        .windows(2)
        .find(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(invalid(format!(
            "{name} grid must be strictly ascending ({:?} then {:?})",
            w[0], w[1]
        )));
    }
    Ok(())
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        check_ascending("m", &self.m_values)?;
        check_ascending("k", &self.k_values)?;
        check_ascending("eps", &self.eps_values)?;
        check_ascending("delta", &self.delta_values)?;
        if self.m_values[0] == 0 || usize::try_from(*self.m_values.last().unwrap()).is_err() {
            return Err(invalid("m values must be positive and fit in usize"));
        }
        if self.k_values[0] == 0 {
            return Err(invalid("k values must be positive"));
        }
        if !(self.eps_values[0] > 0.0 && *self.eps_values.last().unwrap() < 1.0) {
            return Err(invalid("eps values must lie in (0, 1)"));
        }
        if !(self.delta_values[0] > 0.0 && *self.delta_values.last().unwrap() <= 1.0) {
            return Err(invalid("delta values must lie in (0, 1]"));
        }
        if self.trials_per_cell < MIN_TRIALS {
            return Err(invalid(format!(
                "trials per cell must be at least {MIN_TRIALS}, got {}",
                self.trials_per_cell
            )));
        }
        let k_max = *self.k_values.last().unwrap();
        if self.trials_per_cell.checked_mul(k_max).is_none() || k_max > 1 << 31 {
            return Err(invalid("trials * k overflows the key space"));
        }
        Ok(())
    }

    /// `# key=value` lines describing the grid, written above every results
    /// table.
    pub fn config_lines(&self) -> Vec<(String, String)> {
        let join_u = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
        let join_f = |v: &[f64]| {
            v.iter()
                .map(|&x| grid_value(x))
                .collect::<Vec<_>>()
                .join(";")
        };
        vec![
            ("master_seed".into(), format!("{:#018x}", self.master_seed)),
            ("trials_per_cell".into(), self.trials_per_cell.to_string()),
            ("m_values".into(), join_u(&self.m_values)),
            ("k_values".into(), join_u(&self.k_values)),
            ("eps_values".into(), join_f(&self.eps_values)),
            ("delta_values".into(), join_f(&self.delta_values)),
        ]
    }
}

/// Keys of trial `i` in a cell with sparsity `k`.
pub fn trial_support(k: u64, i: u64) -> Range<u64> {
    i * k..i * k + k
}

/// The 0/1 vectors of one cell; trial `i` is supported on
/// [`trial_support`]`(k, i)`.
pub fn generate_cell_vectors(
    spec: &GridSpec,
    k: u64,
) -> Result<impl Iterator<Item = SparseVector>> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    Ok((0..spec.trials_per_cell).map(move |i| SparseVector::ones(trial_support(k, i))))
}

pub fn cell_seed(master_seed: u64, m: u64, k: u64) -> u64 {
    mix_seed(master_seed, &[m, k])
}

pub fn cell_hasher(master_seed: u64, m: u64, k: u64) -> Result<FeatureHasher> {
    let m = usize::try_from(m).map_err(|_| invalid("m does not fit in usize"))?;
    FeatureHasher::from_stream(
        m,
        &mut derive_streams(cell_seed(master_seed, m as u64, k)).hashing,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridCellStat {
    pub m: u64,
    pub k: u64,
    pub eps: f64,
    pub trials: u64,
    pub failures: u64,
}

impl GridCellStat {
    pub fn delta_hat(&self) -> f64 {
        self.failures as f64 / self.trials as f64
    }
}

/// `||Ax||^2` for the 0/1 vector on `keys`, in integers.
fn block_norm_sq(
    hasher: &FeatureHasher,
    keys: Range<u64>,
    buf: &mut [i64],
    touched: &mut Vec<usize>,
) -> i64 {
    let mut total = 0i64;
    for key in keys {
        let b = hasher.bucket(key);
        let s = if hasher.negative(key) { -1 } else { 1 };
        let v = buf[b];
        if v == 0 {
            touched.push(b);
        }
        total += 2 * v * s + 1;
        buf[b] = v + s;
    }
    for &b in touched.iter() {
        buf[b] = 0;
    }
    touched.clear();
    total
}

/// Failure counts per entry of `eps_values` (ascending) over `trials`
/// disjoint blocks of `k` ones. Trial `i` fails at `eps` when
/// `| ||Ax||^2 - k | >= eps k`.
pub fn measure_cell(hasher: &FeatureHasher, k: u64, trials: u64, eps_values: &[f64]) -> Vec<u64> {
    let thresholds: Vec<f64> = eps_values.iter().map(|&e| e * k as f64).collect();
    let batches = trials.div_ceil(BATCH);
    // hist[c] counts trials failing exactly the first c thresholds.
    let hist = (0..batches)
        .into_par_iter()
        .map(|batch| {
            let mut hist = vec![0u64; thresholds.len() + 1];
            let mut buf = vec![0i64; hasher.buckets()];
            let mut touched = Vec::new();
            for i in batch * BATCH..((batch + 1) * BATCH).min(trials) {
                let t = block_norm_sq(hasher, trial_support(k, i), &mut buf, &mut touched);
                let dev = (t - k as i64).unsigned_abs() as f64;
                hist[thresholds.partition_point(|&th| th <= dev)] += 1;
            }
            hist
        })
        .reduce(
            || vec![0u64; thresholds.len() + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let mut failures = vec![0u64; thresholds.len()];
    let mut above = 0;
    for e in (0..thresholds.len()).rev() {
        above += hist[e + 1];
        failures[e] = above;
    }
    failures
}

/// All `eps` cells for one `(m, k)`.
pub fn run_cell(spec: &GridSpec, m: u64, k: u64) -> Result<Vec<GridCellStat>> {
    let hasher = cell_hasher(spec.master_seed, m, k)?;
    let failures = measure_cell(&hasher, k, spec.trials_per_cell, &spec.eps_values);
    Ok(spec
        .eps_values
        .iter()
        .zip(failures)
        .map(|(&eps, failures)| GridCellStat {
            m,
            k,
            eps,
            trials: spec.trials_per_cell,
            failures,
        })
        .collect())
}

/// Runs the grid one `m` at a time, handing each completed block of cells
/// (ordered by `k`, then `eps`) to `sink`.
pub fn run_grid_with(
    spec: &GridSpec,
    mut sink: impl FnMut(&[GridCellStat]) -> Result<()>,
) -> Result<()> {
    spec.validate()?;
    for &m in &spec.m_values {
        let block: Vec<Vec<GridCellStat>> = spec
            .k_values
            .par_iter()
            .map(|&k| run_cell(spec, m, k))
            .collect::<Result<_>>()?;
        sink(&block.concat())?;
    }
    Ok(())
}

pub fn run_grid(spec: &GridSpec) -> Result<Vec<GridCellStat>> {
    let mut cells = Vec::new();
    run_grid_with(spec, |block| {
        cells.extend_from_slice(block);
        Ok(())
    })?;
    Ok(cells)
}

/// Runs the grid and writes the results file as it goes; rows already
/// written stay on disk if a later write fails.
pub fn run_grid_to_csv(spec: &GridSpec, path: &Path) -> Result<Vec<GridCellStat>> {
    spec.validate()?;
    let mut writer = ResultsWriter::new(BufWriter::new(File::create(path)?), &spec.config_lines())?;
    let mut cells = Vec::new();
    run_grid_with(spec, |block| {
        writer.write_cells(block)?;
        cells.extend_from_slice(block);
        Ok(())
    })?;
    writer.finish()?;
    Ok(cells)
}

/// Decimal expansion of a finite float with no rounding; every binary float
/// has a terminating one.
pub fn exact_decimal(v: f64) -> String {
    assert!(v.is_finite(), "exact_decimal of non-finite value");
    if v == 0.0 {
        return "0".into();
    }
    let sign = if v < 0.0 { "-" } else { "" };
    let bits = v.abs().to_bits();
    let exp_field = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1 << 52) - 1);
    let (mut mant, mut exp) = if exp_field == 0 {
        (frac, -1074)
    } else {
        (frac | 1 << 52, exp_field - 1075)
    };
    while mant % 2 == 0 && exp < 0 {
        mant >>= 1;
        exp += 1;
    }
    if exp >= 0 {
        return format!("{sign}{}", BigUint::from(mant) << exp as usize);
    }
    let places = (-exp) as usize;
    let digits = (BigUint::from(mant) * BigUint::from(5u32).pow(places as u32)).to_string();
    let digits = format!("{digits:0>width$}", width = places + 1);
    let (int, frac) = digits.split_at(digits.len() - places);
    format!("{sign}{int}.{frac}")
}

/// Grid coordinates as text: powers of two exactly, anything else as the
/// shortest string that parses back to the same float.
pub fn grid_value(v: f64) -> String {
    let bits = v.abs().to_bits();
    if v != 0.0 && bits & ((1 << 52) - 1) == 0 && bits >> 52 != 0 {
        exact_decimal(v)
    } else {
        v.to_string()
    }
}

fn write_comments<W: Write>(out: &mut W, config: &[(String, String)]) -> io::Result<()> {
    for (key, value) in config {
        writeln!(out, "# {key}={value}")?;
    }
    Ok(())
}

/// Writer for the results table: config comments, header, then rows.
pub struct ResultsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> ResultsWriter<W> {
    pub fn new(mut out: W, config: &[(String, String)]) -> Result<Self> {
        write_comments(&mut out, config)?;
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(RESULTS_HEADER)?;
        inner.flush()?;
        Ok(ResultsWriter { inner })
    }

    /// Appends rows and flushes.
    pub fn write_cells(&mut self, cells: &[GridCellStat]) -> Result<()> {
        for c in cells {
            self.inner.write_record([
                c.m.to_string(),
                c.k.to_string(),
                grid_value(c.eps),
                c.trials.to_string(),
                c.failures.to_string(),
                c.delta_hat().to_string(),
            ])?;
        }
        self.inner.flush()?;
        Ok(())
    }

    pub fn finish(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(e.into_error()))
    }
}

/// A parsed results file.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultsFile {
    pub config: Vec<(String, String)>,
    pub cells: Vec<GridCellStat>,
}

fn csv_error(err: csv::Error) -> Error {
    match err.position() {
        Some(pos) => Error::Parse {
            line: pos.line(),
            message: err.to_string(),
        },
        None => Error::Csv(err),
    }
}

/// Parses a results table. Lines starting with `#` are config comments.
pub fn read_results<R: Read>(mut input: R) -> Result<ResultsFile> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let config = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.trim().split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.iter().ne(RESULTS_HEADER) {
        let line = header.position().map_or(1, |p| p.line());
        return Err(Error::Parse {
            line,
            message: format!(
                "expected header {}, found {:?}",
                RESULTS_HEADER.join(","),
                header
            ),
        });
    }
    let mut cells = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse { line, message };
        let int = |i: usize| -> Result<u64> {
            record[i].parse().map_err(|e| {
                bad(format!(
                    "column {}: {e} ({:?})",
                    RESULTS_HEADER[i], &record[i]
                ))
            })
        };
        let float = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|e| {
                bad(format!(
                    "column {}: {e} ({:?})",
                    RESULTS_HEADER[i], &record[i]
                ))
            })
        };
        let cell = GridCellStat {
            m: int(0)?,
            k: int(1)?,
            eps: float(2)?,
            trials: int(3)?,
            failures: int(4)?,
        };
        let delta_hat = float(5)?;
        if cell.m == 0 || cell.k == 0 || cell.trials == 0 {
            return Err(bad("m, k and trials must be positive".into()));
        }
        if !(cell.eps > 0.0 && cell.eps.is_finite()) {
            return Err(bad(format!("eps must be positive, got {}", cell.eps)));
        }
        if cell.failures > cell.trials {
            return Err(bad(format!(
                "failures {} exceed trials {}",
                cell.failures, cell.trials
            )));
        }
        if (delta_hat - cell.delta_hat()).abs() > 1e-9 {
            return Err(bad(format!(
                "delta_hat {delta_hat} does not match failures/trials = {}",
                cell.delta_hat()
            )));
        }
        cells.push(cell);
    }
    Ok(ResultsFile { config, cells })
}

pub fn read_results_path(path: &Path) -> Result<ResultsFile> {
    read_results(File::open(path)?)
}

/// Cells keyed by `(m, k, eps)`.
#[derive(Clone, Debug, Default)]
pub struct GridStats {
    cells: BTreeMap<(u64, u64, u64), GridCellStat>,
}

impl GridStats {
    /// Rejects a repeated `(m, k, eps)`.
    pub fn from_cells(cells: impl IntoIterator<Item = GridCellStat>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for c in cells {
            if map.insert((c.m, c.k, c.eps.to_bits()), c).is_some() {
                return Err(invalid(format!(
                    "duplicate cell m={}, k={}, eps={}",
                    c.m,
                    c.k,
                    grid_value(c.eps)
                )));
            }
        }
        Ok(GridStats { cells: map })
    }

    pub fn get(&self, m: u64, k: u64, eps: f64) -> Option<&GridCellStat> {
        self.cells.get(&(m, k, eps.to_bits()))
    }

    pub fn cells(&self) -> impl Iterator<Item = &GridCellStat> {
        self.cells.values()
    }

    pub fn m_values(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.cells.keys().map(|&(m, _, _)| m).collect();
        v.dedup();
        v
    }

    pub fn k_values(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.cells.keys().map(|&(_, k, _)| k).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn eps_values(&self) -> Vec<f64> {
        let mut v: Vec<u64> = self.cells.keys().map(|&(_, _, e)| e).collect();
        v.sort_unstable();
        v.dedup();
        v.into_iter().map(f64::from_bits).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NuEstimate {
    pub m: u64,
    pub eps: f64,
    pub delta: f64,
    /// Smallest grid `k` from which every larger grid `k` passes.
    pub k_star: Option<u64>,
    /// `1 / sqrt(k_star)`.
    pub nu_hat: Option<f64>,
}

impl NuEstimate {
    pub fn defined(&self) -> bool {
        self.nu_hat.is_some()
    }
}

/// `max { 1/sqrt(k) : delta_hat(m, k', eps) <= delta for every grid k' >= k }`,
/// where the grid is every `k` present in `stats`.
pub fn compute_nu_hat(stats: &GridStats, m: u64, eps: f64, delta: f64) -> Result<NuEstimate> {
    let ks = stats.k_values();
    let missing: Vec<(u64, u64)> = ks
        .iter()
        .filter(|&&k| stats.get(m, k, eps).is_none())
        .map(|&k| (m, k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    let mut k_star = None;
    for &k in ks.iter().rev() {
        if stats.get(m, k, eps).unwrap().delta_hat() > delta {
            break;
        }
        k_star = Some(k);
    }
    Ok(NuEstimate {
        m,
        eps,
        delta,
        k_star,
        nu_hat: k_star.map(|k| 1.0 / (k as f64).sqrt()),
    })
}

/// Estimates for every `(m, eps)` in `stats` and every `delta`.
pub fn nu_estimates(stats: &GridStats, deltas: &[f64]) -> Result<Vec<NuEstimate>> {
    let mut out = Vec::new();
    for m in stats.m_values() {
        for eps in stats.eps_values() {
            for &delta in deltas {
                out.push(compute_nu_hat(stats, m, eps, delta)?);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Left,
    Right,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Left => "left",
            Branch::Right => "right",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioRecord {
    pub m: u64,
    pub eps: f64,
    pub delta: f64,
    pub k_star: u64,
    pub nu_hat: f64,
    pub left: f64,
    pub right: f64,
    /// `nu_hat / (sqrt(eps) min(left, right))`.
    pub ratio: f64,
    pub ratio_left: f64,
    pub ratio_right: f64,
    pub branch: Branch,
}

/// `c lg(1/delta) / eps^2 <= m < 2 / (eps^2 delta)`, with `delta < 1`.
pub fn in_window(m: u64, eps: f64, delta: f64, c: f64) -> bool {
    let m = m as f64;
    let e2 = eps * eps;
    delta < 1.0 && c * (1.0 / delta).log2() / e2 <= m && m < 2.0 / (e2 * delta)
}

/// Ratios of `nu_hat` to the middle-regime bound for estimates inside the
/// window with constant `c`. Undefined estimates are skipped.
pub fn ratio_analysis(estimates: &[NuEstimate], c: f64) -> Vec<RatioRecord> {
    estimates
        .iter()
        .filter(|e| in_window(e.m, e.eps, e.delta, c))
        .filter_map(|e| {
            let (nu_hat, k_star) = (e.nu_hat?, e.k_star?);
            let (left, right) = min_terms(e.m as f64, e.eps, e.delta)?;
            let root = e.eps.sqrt();
            let branch = if left < right {
                Branch::Left
            } else {
                Branch::Right
            };
            Some(RatioRecord {
                m: e.m,
                eps: e.eps,
                delta: e.delta,
                k_star,
                nu_hat,
                left,
                right,
                ratio: nu_hat / (root * left.min(right)),
                ratio_left: nu_hat / (root * left),
                ratio_right: nu_hat / (root * right),
                branch,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BorderRow {
    pub m: u64,
    pub eps: f64,
    pub max_delta_hat: f64,
    pub argmax_k: u64,
    /// `m eps^2 max_delta_hat`.
    pub product: f64,
}

/// Per `(m, eps)`, the largest `delta_hat` over `k`.
pub fn border_analysis(stats: &GridStats) -> Vec<BorderRow> {
    let mut rows: BTreeMap<(u64, u64), BorderRow> = BTreeMap::new();
    for c in stats.cells() {
        let d = c.delta_hat();
        let row = rows.entry((c.m, c.eps.to_bits())).or_insert(BorderRow {
            m: c.m,
            eps: c.eps,
            max_delta_hat: d,
            argmax_k: c.k,
            product: 0.0,
        });
        if d > row.max_delta_hat {
            row.max_delta_hat = d;
            row.argmax_k = c.k;
        }
    }
    rows.into_values()
        .map(|mut r| {
            r.product = r.m as f64 * r.eps * r.eps * r.max_delta_hat;
            r
        })
        .collect()
}

fn table_writer<W: Write>(
    mut out: W,
    config: &[(String, String)],
    header: &[&str],
) -> Result<csv::Writer<W>> {
    write_comments(&mut out, config)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

fn close<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

pub fn write_ratio_csv<W: Write>(
    out: W,
    config: &[(String, String)],
    records: &[RatioRecord],
) -> Result<()> {
    let mut w = table_writer(out, config, &RATIO_HEADER)?;
    for r in records {
        w.write_record([
            r.m.to_string(),
            grid_value(r.eps),
            grid_value(r.delta),
            r.nu_hat.to_string(),
            r.left.to_string(),
            r.right.to_string(),
            r.ratio.to_string(),
            r.branch.as_str().to_string(),
        ])?;
    }
    close(w)
}

pub fn write_ratio_branches_csv<W: Write>(
    out: W,
    config: &[(String, String)],
    records: &[RatioRecord],
) -> Result<()> {
    let mut w = table_writer(out, config, &RATIO_BRANCH_HEADER)?;
    for r in records {
        w.write_record([
            r.m.to_string(),
            grid_value(r.eps),
            grid_value(r.delta),
            r.nu_hat.to_string(),
            r.ratio_left.to_string(),
            r.ratio_right.to_string(),
        ])?;
    }
    close(w)
}

pub fn write_border_csv<W: Write>(
    out: W,
    config: &[(String, String)],
    rows: &[BorderRow],
) -> Result<()> {
    let mut w = table_writer(out, config, &BORDER_HEADER)?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            grid_value(r.eps),
            r.max_delta_hat.to_string(),
            r.product.to_string(),
        ])?;
    }
    close(w)
}

/// Undefined estimates have empty `k_star` and `nu_hat` fields.
pub fn write_nu_csv<W: Write>(
    out: W,
    config: &[(String, String)],
    estimates: &[NuEstimate],
) -> Result<()> {
    let mut w = table_writer(out, config, &NU_HEADER)?;
    for e in estimates {
        w.write_record([
            e.m.to_string(),
            grid_value(e.eps),
            grid_value(e.delta),
            e.k_star.map_or(String::new(), |k| k.to_string()),
            e.nu_hat.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    close(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_delta, to_f64, DEFAULT_BUDGET};
    use crate::projection::projected_norm_sq;
    use proptest::prelude::*;

    fn small_spec() -> GridSpec {
        GridSpec {
            m_values: vec![16, 64],
            k_values: vec![1, 2, 7, 16],
            eps_values: vec![0.125, 0.25, 0.5],
            delta_values: vec![0.0625, 0.5, 1.0],
            trials_per_cell: MIN_TRIALS,
            master_seed: 7,
        }
    }

    fn cell(m: u64, k: u64, eps: f64, failures: u64) -> GridCellStat {
        GridCellStat {
            m,
            k,
            eps,
            trials: 1000,
            failures,
        }
    }

    #[test]
    fn default_spec_is_valid() {
        let spec = GridSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.k_values[..4], [2, 4, 7, 8]);
        assert_eq!(spec.eps_values.len(), 10);
        assert_eq!(spec.delta_values.len(), 21);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = small_spec();
        let mut s = base.clone();
        s.trials_per_cell = MIN_TRIALS - 1;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.k_values = vec![4, 2];
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.eps_values.clear();
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.delta_values.push(2.0);
        assert!(s.validate().is_err());
        let mut s = base;
        s.m_values = vec![0, 4];
        assert!(s.validate().is_err());
    }

    #[test]
    fn trial_supports() {
        assert_eq!(trial_support(1, 0), 0..1);
        assert_eq!(trial_support(4, 3), 12..16);
        let spec = small_spec();
        let v: Vec<SparseVector> = generate_cell_vectors(&spec, 4).unwrap().take(3).collect();
        assert_eq!(v[2].entries(), &[(8, 1.0), (9, 1.0), (10, 1.0), (11, 1.0)]);
        assert!((v[0].l2() - 2.0 * v[0].linf()).abs() < 1e-15);
        assert!(generate_cell_vectors(&spec, 0).is_err());
    }

    proptest! {
        #[test]
        fn supports_are_disjoint(k in 1u64..100, i in 0u64..1000, j in 0u64..1000) {
            prop_assume!(i != j);
            let (a, b) = (trial_support(k, i), trial_support(k, j));
            prop_assert!(a.end <= b.start || b.end <= a.start);
        }
    }

    #[test]
    fn fast_path_matches_projection() {
        let eps = [0.0625, 0.25, 0.5];
        for (m, k) in [(16u64, 7u64), (64, 16), (12, 5)] {
            let hasher = cell_hasher(3, m, k).unwrap();
            let trials = 300;
            let fast = measure_cell(&hasher, k, trials, &eps);
            let mut slow = [0u64; 3];
            for i in 0..trials {
                let x = SparseVector::ones(trial_support(k, i));
                let dev = (projected_norm_sq(&hasher, &x).unwrap() - k as f64).abs();
                for (e, s) in eps.iter().zip(slow.iter_mut()) {
                    if dev >= e * k as f64 {
                        *s += 1;
                    }
                }
            }
            assert_eq!(fast, slow, "m={m} k={k}");
        }
    }

    #[test]
    fn failures_nest_in_eps() {
        for c in run_grid(&small_spec()).unwrap().chunks(3) {
            assert!(c[0].failures >= c[1].failures && c[1].failures >= c[2].failures);
        }
    }

    #[test]
    fn k_one_never_fails() {
        let cells = run_grid(&small_spec()).unwrap();
        assert!(cells.iter().filter(|c| c.k == 1).all(|c| c.failures == 0));
    }

    #[test]
    fn grid_is_deterministic_and_seed_dependent() {
        let spec = small_spec();
        let a = run_grid(&spec).unwrap();
        assert_eq!(a.len(), 2 * 4 * 3);
        assert_eq!(a, run_grid(&spec).unwrap());
        let mut other = spec;
        other.master_seed = 8;
        assert_ne!(a, run_grid(&other).unwrap());
    }

    fn binomial_close(hat: f64, p: f64, trials: u64) -> bool {
        (hat - p).abs() <= 4.0 * (p * (1.0 - p) / trials as f64).sqrt() + 1.0 / trials as f64
    }

    #[test]
    fn monte_carlo_matches_exact_delta() {
        for (m, k, trials) in [
            (4096u64, 2u64, 1u64 << 10),
            (16, 2, 1 << 12),
            (8, 3, 1 << 12),
        ] {
            let exact = to_f64(&exact_delta(m as usize, k as usize, 0.5, DEFAULT_BUDGET).unwrap());
            let hasher = cell_hasher(11, m, k).unwrap();
            let hat = measure_cell(&hasher, k, trials, &[0.5])[0] as f64 / trials as f64;
            assert!(
                binomial_close(hat, exact, trials),
                "m={m} k={k}: {hat} vs {exact}"
            );
        }
    }

    #[test]
    fn exact_decimal_strings() {
        assert_eq!(exact_decimal(0.5), "0.5");
        assert_eq!(exact_decimal(2f64.powi(-10)), "0.0009765625");
        assert_eq!(exact_decimal(1.0), "1");
        assert_eq!(exact_decimal(4096.0), "4096");
        assert_eq!(exact_decimal(-0.75), "-0.75");
        assert_eq!(exact_decimal(0.0), "0");
        assert_eq!(
            exact_decimal(0.1),
            "0.1000000000000000055511151231257827021181583404541015625"
        );
    }

    #[test]
    fn grid_values_round_trip() {
        assert_eq!(grid_value(2f64.powi(-20)), "0.00000095367431640625");
        assert_eq!(grid_value(0.1), "0.1");
        assert_eq!(grid_value(0.75), "0.75");
        for v in [2f64.powi(-30), 0.3, 1e-7, 6.0] {
            assert_eq!(grid_value(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn csv_round_trip() {
        let spec = small_spec();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let cells = run_grid_to_csv(&spec, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# master_seed=0x0000000000000007\n"));
        assert!(text.contains("\nm,k,eps,trials,failures,delta_hat\n"));
        let parsed = read_results_path(&path).unwrap();
        assert_eq!(parsed.cells, cells);
        assert_eq!(parsed.config, spec.config_lines());
    }

    #[test]
    fn corrupt_row_names_its_line() {
        let text =
            "# seed=1\nm,k,eps,trials,failures,delta_hat\n16,2,0.5,10,1,0.1\n16,4,0.5,10,x,0.1\n";
        match read_results(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "m,k,eps,trials,failures,delta_hat\n16,2,0.5,10,11,1.1\n";
        assert!(matches!(
            read_results(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "m,k,eps,trials,failures\n16,2,0.5,10,1\n";
        assert!(matches!(
            read_results(text.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let text = "m,k,eps,trials,failures,delta_hat\n16,2,0.5,10,1\n";
        assert!(matches!(
            read_results(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn nu_hat_examples() {
        let ks = [2u64, 4, 8, 16, 32, 64, 128, 256];
        let zeros = GridStats::from_cells(ks.iter().map(|&k| cell(64, k, 0.25, 0))).unwrap();
        let est = compute_nu_hat(&zeros, 64, 0.25, 0.01).unwrap();
        assert_eq!(est.nu_hat, Some(1.0 / 2f64.sqrt()));

        let all_bad = GridStats::from_cells(ks.iter().map(|&k| cell(64, k, 0.25, 500))).unwrap();
        assert!(!compute_nu_hat(&all_bad, 64, 0.25, 0.1).unwrap().defined());

        // Passes for k >= 64 only, with a passing k below a failing one.
        let fails = |k: u64| if k >= 64 || k == 2 { 0 } else { 300 };
        let stats = GridStats::from_cells(ks.iter().map(|&k| cell(64, k, 0.25, fails(k)))).unwrap();
        let est = compute_nu_hat(&stats, 64, 0.25, 0.1).unwrap();
        assert_eq!(est.k_star, Some(64));
        assert_eq!(est.nu_hat, Some(0.125));
    }

    #[test]
    fn nu_hat_tie_counts_as_pass() {
        let stats = GridStats::from_cells([cell(8, 1, 0.5, 100), cell(8, 4, 0.5, 100)]).unwrap();
        assert_eq!(compute_nu_hat(&stats, 8, 0.5, 0.1).unwrap().k_star, Some(1));
    }

    #[test]
    fn nu_hat_reports_missing_cells() {
        let stats =
            GridStats::from_cells([cell(8, 2, 0.5, 0), cell(8, 4, 0.5, 0), cell(16, 2, 0.5, 0)])
                .unwrap();
        match compute_nu_hat(&stats, 16, 0.5, 0.1) {
            Err(Error::MissingCells(cells)) => assert_eq!(cells, vec![(16, 4)]),
            other => panic!("expected missing cells, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_cells_rejected() {
        assert!(GridStats::from_cells([cell(8, 2, 0.5, 0), cell(8, 2, 0.5, 1)]).is_err());
    }

    proptest! {
        #[test]
        fn nu_hat_monotone_in_delta(
            fails in proptest::collection::vec(0u64..=1000, 6),
            d1 in 0.0f64..1.0,
            d2 in 0.0f64..1.0,
        ) {
            let stats = GridStats::from_cells(
                fails.iter().enumerate().map(|(i, &f)| cell(32, 1 << i, 0.5, f)),
            ).unwrap();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let a = compute_nu_hat(&stats, 32, 0.5, lo).unwrap().nu_hat.unwrap_or(0.0);
            let b = compute_nu_hat(&stats, 32, 0.5, hi).unwrap().nu_hat.unwrap_or(0.0);
            prop_assert!(b >= a);
        }
    }

    fn estimate(m: u64, eps: f64, delta: f64, k: u64) -> NuEstimate {
        NuEstimate {
            m,
            eps,
            delta,
            k_star: Some(k),
            nu_hat: Some(1.0 / (k as f64).sqrt()),
        }
    }

    #[test]
    fn window_bounds() {
        // eps = 1/4, delta = 1/16: window is [256, 512).
        assert!(!in_window(128, 0.25, 0.0625, 4.0));
        assert!(in_window(256, 0.25, 0.0625, 4.0));
        assert!(!in_window(512, 0.25, 0.0625, 4.0));
        assert!(!in_window(1 << 20, 0.25, 1.0, 4.0));
    }

    #[test]
    fn ratio_records() {
        let inside = estimate(16384, 0.0625, 2f64.powi(-8), 16);
        let outside = estimate(64, 0.0625, 2f64.powi(-8), 16);
        let undefined = NuEstimate {
            k_star: None,
            nu_hat: None,
            ..inside
        };
        let recs = ratio_analysis(&[inside, outside, undefined], 4.0);
        assert_eq!(recs.len(), 1);
        let r = recs[0];
        // lg(1/delta) = 8: left = lg(128)/8, right = sqrt(lg(8)/8).
        assert!((r.left - 7.0 / 8.0).abs() < 1e-12);
        assert!((r.right - (3.0f64 / 8.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.branch, Branch::Right);
        assert!((r.ratio - 0.25 / (0.25 * (3.0f64 / 8.0).sqrt())).abs() < 1e-12);
        assert!((r.ratio_left - 0.25 / (0.25 * 0.875)).abs() < 1e-12);

        // lg(1/delta) = 8: left = lg(8)/8, right = sqrt(lg(4)/8).
        let r = ratio_analysis(&[estimate(128, 0.5, 2f64.powi(-8), 4)], 4.0)[0];
        assert!((r.left - 0.375).abs() < 1e-12 && (r.right - 0.5).abs() < 1e-12);
        assert_eq!(r.branch, Branch::Left);
        assert!(r.ratio > 0.0);
    }

    #[test]
    fn border_rows() {
        let stats = GridStats::from_cells([
            cell(64, 2, 0.25, 0),
            cell(64, 4, 0.25, 0),
            cell(64, 2, 0.5, 0),
            cell(64, 4, 0.5, 125),
            cell(128, 2, 0.5, 0),
            cell(128, 4, 0.5, 0),
        ])
        .unwrap();
        let rows = border_analysis(&stats);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].product, 0.0);
        // delta_hat = 2 / (m eps^2) = 1/8 at m = 64, eps = 1/2.
        assert_eq!((rows[1].m, rows[1].eps, rows[1].argmax_k), (64, 0.5, 4));
        assert_eq!(rows[1].product, 2.0);
        assert_eq!(rows[2].product, 0.0);
    }

    #[test]
    fn analysis_tables_have_headers() {
        let config = vec![("master_seed".to_string(), "0x1".to_string())];
        let mut buf = Vec::new();
        write_ratio_csv(
            &mut buf,
            &config,
            &ratio_analysis(&[estimate(16384, 0.0625, 2f64.powi(-8), 16)], 4.0),
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# master_seed=0x1"));
        assert_eq!(lines.next(), Some(RATIO_HEADER.join(",").as_str()));
        assert!(lines
            .next()
            .unwrap()
            .starts_with("16384,0.0625,0.00390625,0.25,0.875,"));

        let mut buf = Vec::new();
        write_nu_csv(
            &mut buf,
            &[],
            &[NuEstimate {
                k_star: None,
                nu_hat: None,
                ..estimate(8, 0.5, 0.5, 1)
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "m,eps,delta,k_star,nu_hat\n8,0.5,0.5,,\n"
        );
    }
}
