//! Test-set construction and per-period accuracy reporting.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::period::{Dynasty, Period};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("period {period} needs {needed} images, only {available} available")]
    InsufficientImages {
        period: Period,
        needed: usize,
        available: usize,
    },
    #[error("image {0:?} could not be read")]
    ImageUnreadable(String),
    #[error("dataset line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("image_ref {0:?} appears more than once")]
    DuplicateImageRef(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DatasetEntry {
    pub image_ref: String,
    pub period: Period,
}

/// Labelled image list, one `image_ref<TAB>period` per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<DatasetEntry>,
}

/// One count per period in chronological order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeriodCounts(pub [usize; Period::COUNT]);

impl PeriodCounts {
    pub fn get(&self, p: Period) -> usize {
        self.0[p.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

impl DatasetManifest {
    pub fn new(entries: Vec<DatasetEntry>) -> Result<Self, EvalError> {
        let mut seen = HashSet::new();
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.image_ref.as_str())) {
            return Err(EvalError::DuplicateImageRef(dup.image_ref.clone()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts(&self) -> PeriodCounts {
        let mut c = PeriodCounts::default();
        for e in &self.entries {
            c.0[e.period.index()] += 1;
        }
        c
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| EvalError::Parse { line: i + 1, reason };
            let (image_ref, period) = line
                .split_once('\t')
                .ok_or_else(|| err("expected image_ref<TAB>period".into()))?;
            if image_ref.is_empty() {
                return Err(err("empty image_ref".into()));
            }
            let period = period.trim().parse::<Period>().map_err(|e| err(e.to_string()))?;
            entries.push(DatasetEntry {
                image_ref: image_ref.to_string(),
                period,
            });
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}", e.image_ref, e.period);
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::parse(&fs::read_to_string(path).map_err(|e| EvalError::Io(e.to_string()))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        fs::write(path, self.to_text()).map_err(|e| EvalError::Io(e.to_string()))
    }
}

/// Splits `total` as evenly as possible; the remainder goes to the
/// chronologically earliest periods.
pub fn quotas(total: usize) -> PeriodCounts {
    let base = total / Period::COUNT;
    let extra = total % Period::COUNT;
    let mut q = [base; Period::COUNT];
    q.iter_mut().take(extra).for_each(|v| *v += 1);
    PeriodCounts(q)
}

/// Draws a near-uniform test set without replacement, deterministic per seed.
/// Entries come out grouped by period, preserving manifest order within each.
pub fn build_testset(manifest: &DatasetManifest, total_count: usize, seed: u64) -> Result<DatasetManifest, EvalError> {
    let quota = quotas(total_count);
    let mut by_period: BTreeMap<Period, Vec<&DatasetEntry>> = BTreeMap::new();
    for e in manifest.entries() {
        by_period.entry(e.period).or_default().push(e);
    }
    for p in Period::ALL {
        let available = by_period.get(&p).map_or(0, Vec::len);
        if available < quota.get(p) {
            return Err(EvalError::InsufficientImages {
                period: p,
                needed: quota.get(p),
                available,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(total_count);
    for p in Period::ALL {
        let pool = by_period.get(&p).map(Vec::as_slice).unwrap_or(&[]);
        let mut picked = sample(&mut rng, pool.len(), quota.get(p)).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| pool[i].clone()));
    }
    DatasetManifest::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Dated(Period),
    OtherStuffs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    /// Percentage truncated to hundredths, e.g. 9583 for 23/24.
    pub fn accuracy_hundredths(&self) -> Option<usize> {
        (self.total > 0).then(|| self.correct * 10_000 / self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccuracyReport {
    pub per_period: BTreeMap<Period, Tally>,
    pub overall: Tally,
    /// Size of the full collected dataset per period, for the "Number" row.
    pub dataset_counts: PeriodCounts,
}

impl AccuracyReport {
    /// Builds a report from per-period tallies; periods with no images are
    /// left out and the overall tally is their sum.
    pub fn from_tallies(tallies: impl IntoIterator<Item = (Period, Tally)>, dataset_counts: PeriodCounts) -> Self {
        let per_period: BTreeMap<Period, Tally> = tallies.into_iter().filter(|(_, t)| t.total > 0).collect();
        let overall = per_period.values().fold(Tally::default(), |acc, t| Tally {
            correct: acc.correct + t.correct,
            total: acc.total + t.total,
        });
        Self {
            per_period,
            overall,
            dataset_counts,
        }
    }
}

/// Runs `predict` over every test image on up to `width` threads. Counting
/// is independent of completion order; on failure the error for the
/// earliest failing entry is returned.
pub fn evaluate<F>(predict: F, testset: &DatasetManifest, width: usize) -> Result<AccuracyReport, EvalError>
where
    F: Fn(&DatasetEntry) -> Result<Prediction, EvalError> + Sync,
{
    let entries = testset.entries();
    let results: Mutex<Vec<Option<Result<Prediction, EvalError>>>> = Mutex::new(vec![None; entries.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..width.clamp(1, entries.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= entries.len() {
                    break;
                }
                let r = predict(&entries[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let mut tallies: BTreeMap<Period, Tally> = BTreeMap::new();
    for (entry, result) in entries.iter().zip(results.into_inner().unwrap()) {
        let prediction = result.expect("every entry is visited")?;
        let t = tallies.entry(entry.period).or_default();
        t.total += 1;
        if prediction == Prediction::Dated(entry.period) {
            t.correct += 1;
        }
    }
    Ok(AccuracyReport::from_tallies(tallies, testset.counts()))
}

const CELL: usize = 8;
const LABEL: usize = 8;

fn dataset_tenths(count: usize, total: usize) -> usize {
    if total == 0 {
        0
    } else {
        (count * 2000 + total) / (2 * total)
    }
}

fn fmt_tenths(t: usize) -> String {
    format!("{}.{}%", t / 10, t % 10)
}

fn fmt_hundredths(h: Option<usize>) -> String {
    match h {
        Some(h) => format!("{}.{:02}%", h / 100, h % 100),
        None => "-".into(),
    }
}

fn groups<F: Fn(Period) -> String>(cell: F) -> Vec<String> {
    Dynasty::ALL
        .iter()
        .map(|&d| {
            Period::ALL
                .iter()
                .filter(|p| p.dynasty() == d)
                .map(|&p| format!("{:>CELL$}", cell(p)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Fixed-width table: dynasty-grouped period columns, a "Number" row with
/// each period's share of the dataset (one decimal, rounded) and an
/// "Accuracy" row (two decimals, truncated).
pub fn render_table(report: &AccuracyReport) -> String {
    let dataset_total = report.dataset_counts.total();
    let phase_row = groups(|p| p.phase().as_str().to_string());
    let widths: Vec<usize> = phase_row.iter().map(String::len).collect();
    let dynasty_row: Vec<String> = Dynasty::ALL
        .iter()
        .zip(&widths)
        .map(|(d, &w)| format!("{:<w$}", d.title()))
        .collect();
    let number_row = groups(|p| fmt_tenths(dataset_tenths(report.dataset_counts.get(p), dataset_total)));
    let accuracy_row = groups(|p| fmt_hundredths(report.per_period.get(&p).and_then(Tally::accuracy_hundredths)));
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();

    let line = |label: &str, total: &str, cells: &[String]| {
        format!("{label:<LABEL$} | {total:>CELL$} | {}", cells.join(" | ")).trim_end().to_string()
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", line("Period", "Total", &dynasty_row));
    let _ = writeln!(out, "{}", line("", "", &phase_row));
    let _ = writeln!(
        out,
        "{}-+-{}-+-{}",
        "-".repeat(LABEL),
        "-".repeat(CELL),
        rule.join("-+-")
    );
    let _ = writeln!(out, "{}", line("Number", &dataset_total.to_string(), &number_row));
    let _ = writeln!(
        out,
        "{}",
        line("Accuracy", &fmt_hundredths(report.overall.accuracy_hundredths()), &accuracy_row)
    );
    out
}

/// Numeric cells recovered from a rendered table, at printed precision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTable {
    pub dataset_total: usize,
    pub number_tenths: [usize; Period::COUNT],
    pub overall_hundredths: Option<usize>,
    pub accuracy_hundredths: [Option<usize>; Period::COUNT],
}

fn parse_fixed(cell: &str, decimals: usize) -> Result<Option<usize>, String> {
    if cell == "-" {
        return Ok(None);
    }
    let body = cell.strip_suffix('%').ok_or_else(|| format!("cell {cell:?} lacks %"))?;
    let (int, frac) = body.split_once('.').ok_or_else(|| format!("cell {cell:?} lacks decimals"))?;
    if frac.len() != decimals {
        return Err(format!("cell {cell:?} should have {decimals} decimals"));
    }
    let v = format!("{int}{frac}")
        .parse::<usize>()
        .map_err(|_| format!("cell {cell:?} is not numeric"))?;
    Ok(Some(v))
}

pub fn parse_table(text: &str) -> Result<ParsedTable, String> {
    let row = |label: &str| -> Result<(String, Vec<String>), String> {
        let line = text
            .lines()
            .find(|l| l.split('|').next().map(str::trim) == Some(label))
            .ok_or_else(|| format!("no {label} row"))?;
        let mut parts = line.split('|').skip(1);
        let total = parts.next().ok_or("missing total column")?.trim().to_string();
        let cells: Vec<String> = parts.flat_map(|g| g.split_whitespace().map(String::from).collect::<Vec<_>>()).collect();
        if cells.len() != Period::COUNT {
            return Err(format!("{label} row has {} period cells", cells.len()));
        }
        Ok((total, cells))
    };
    let (total, number_cells) = row("Number")?;
    let (overall, acc_cells) = row("Accuracy")?;
    let mut number_tenths = [0; Period::COUNT];
    let mut accuracy_hundredths = [None; Period::COUNT];
    for i in 0..Period::COUNT {
        number_tenths[i] = parse_fixed(&number_cells[i], 1)?.ok_or("number cell missing")?;
        accuracy_hundredths[i] = parse_fixed(&acc_cells[i], 2)?;
    }
    Ok(ParsedTable {
        dataset_total: total.parse().map_err(|_| format!("bad total {total:?}"))?,
        number_tenths,
        overall_hundredths: parse_fixed(&overall, 2)?,
        accuracy_hundredths,
    })
}

/// Machine-readable `key=value` form of a report.
pub fn render_kv(report: &AccuracyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "overall.correct={}", report.overall.correct);
    let _ = writeln!(out, "overall.total={}", report.overall.total);
    let _ = writeln!(out, "overall.accuracy={}", report.overall.accuracy());
    for (p, t) in &report.per_period {
        let _ = writeln!(out, "{p}.correct={}", t.correct);
        let _ = writeln!(out, "{p}.total={}", t.total);
        let _ = writeln!(out, "{p}.accuracy={}", t.accuracy());
    }
    for p in Period::ALL {
        let _ = writeln!(out, "dataset.{p}={}", report.dataset_counts.get(p));
    }
    out
}
