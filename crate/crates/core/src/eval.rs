//! Changed-class metrics, per-class ground truth derivation, dataset
//! aggregation and latency measurement.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decode::ChangeMask;
use crate::error::{Error, Result};
use crate::tensorio::DenseArray;

/// Integer semantic label map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<i32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {height}x{width} grid",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: i32) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn from_array(arr: &DenseArray) -> Result<Self> {
        let [h, w] = arr.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "label map must be 2-D, got {:?}",
                arr.shape()
            )));
        };
        let labels = match arr.data() {
            crate::tensorio::ArrayData::I32(v) => v.clone(),
            crate::tensorio::ArrayData::U8(v) => v.iter().map(|&x| x as i32).collect(),
            crate::tensorio::ArrayData::F32(_) => {
                return Err(Error::UnsupportedDtype(
                    "label maps must be int32 or uint8".into(),
                ))
            }
        };
        Self::new(*h, *w, labels)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.labels
    }
}

/// Class-`c` change ground truth: changed pixels where either date shows `c`.
pub fn derive_class_gt(
    sem_a: &LabelMap,
    sem_b: &LabelMap,
    change: &ChangeMask,
    class_id: i32,
) -> Result<ChangeMask> {
    if sem_a.dims() != change.dims() || sem_b.dims() != change.dims() {
        return Err(Error::ShapeMismatch(format!(
            "semantic maps {:?}/{:?} vs change map {:?}",
            sem_a.dims(),
            sem_b.dims(),
            change.dims()
        )));
    }
    let values: Vec<u8> = change
        .as_slice()
        .iter()
        .zip(sem_a.as_slice().iter().zip(sem_b.as_slice()))
        .map(|(&c, (&a, &b))| u8::from(c != 0 && (a == class_id || b == class_id)))
        .collect();
    let (h, w) = change.dims();
    ChangeMask::from_values(h, w, &values)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

pub fn confusion(pred: &ChangeMask, gt: &ChangeMask) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Changed-class metrics in percent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub iou_c: f64,
    pub f1_c: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall, IoU and F1 of the positive class; `0/0` counts as 0.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let iou = ratio(c.tp, c.tp + c.fp + c.fn_);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    Metrics {
        precision: 100.0 * p,
        recall: 100.0 * r,
        iou_c: 100.0 * iou,
        f1_c: 100.0 * f1,
    }
}

/// Unweighted mean of per-class metrics.
pub fn class_average(per_class: &[Metrics]) -> Metrics {
    if per_class.is_empty() {
        return Metrics::default();
    }
    let n = per_class.len() as f64;
    let sum = |f: fn(&Metrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    Metrics {
        precision: sum(|m| m.precision),
        recall: sum(|m| m.recall),
        iou_c: sum(|m| m.iou_c),
        f1_c: sum(|m| m.f1_c),
    }
}

/// How per-pair results combine within one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum confusion counts over pairs, compute metrics once.
    #[default]
    Micro,
    /// Mean of per-pair metrics.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub pairs: usize,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub measured_runs: usize,
    pub warmup_runs: usize,
    pub mean_latency_s: f64,
    pub median_latency_s: f64,
    pub min_latency_s: f64,
    pub max_latency_s: f64,
    pub throughput_pairs_per_min: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_memory_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: Aggregation,
    pub pair_count: usize,
    pub classes: Vec<ClassReport>,
    pub class_average: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingStats>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

/// Fold per-pair `(class, counts)` results into a report. Pairs are counted
/// per distinct `pair_id`.
pub fn aggregate<'a, I>(results: I, mode: Aggregation) -> Result<EvalReport>
where
    I: IntoIterator<Item = (&'a str, &'a str, ConfusionCounts)>,
{
    let mut per_class: BTreeMap<&str, Vec<ConfusionCounts>> = BTreeMap::new();
    let mut pair_ids = std::collections::BTreeSet::new();
    for (pair_id, class, counts) in results {
        pair_ids.insert(pair_id);
        per_class.entry(class).or_default().push(counts);
    }
    if per_class.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes: Vec<ClassReport> = per_class
        .into_iter()
        .map(|(class, list)| {
            let counts: ConfusionCounts = list.iter().copied().sum();
            let m = match mode {
                Aggregation::Micro => metrics(&counts),
                Aggregation::Macro => {
                    class_average(&list.iter().map(metrics).collect::<Vec<_>>())
                }
            };
            ClassReport {
                class: class.to_string(),
                pairs: list.len(),
                counts,
                metrics: m,
            }
        })
        .collect();
    let avg = class_average(&classes.iter().map(|c| c.metrics).collect::<Vec<_>>());
    Ok(EvalReport {
        aggregation: mode,
        pair_count: pair_ids.len(),
        classes,
        class_average: avg,
        timing: None,
        meta: BTreeMap::new(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,pairs,tp,fp,fn,tn,precision,recall,iou_c,f1_c\n");
        for c in &self.classes {
            let m = &c.metrics;
            let k = &c.counts;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4}",
                c.class, c.pairs, k.tp, k.fp, k.fn_, k.tn, m.precision, m.recall, m.iou_c, m.f1_c
            );
        }
        let m = &self.class_average;
        let _ = writeln!(
            out,
            "class_avg,{},,,,,{:.4},{:.4},{:.4},{:.4}",
            self.pair_count, m.precision, m.recall, m.iou_c, m.f1_c
        );
        out
    }

    /// Plain-text table: Prec. / Rec. / IoU_C / F1_C per class.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>6} {:>8} {:>8} {:>8} {:>8}\n",
            "class", "pairs", "Prec.", "Rec.", "IoU_C", "F1_C"
        );
        let row = |out: &mut String, name: &str, pairs: usize, m: &Metrics| {
            let _ = writeln!(
                out,
                "{:<16} {:>6} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                name, pairs, m.precision, m.recall, m.iou_c, m.f1_c
            );
        };
        for c in &self.classes {
            row(&mut out, &c.class, c.pairs, &c.metrics);
        }
        if self.classes.len() > 1 {
            row(&mut out, "Class Avg.", self.pair_count, &self.class_average);
        }
        if let Some(t) = &self.timing {
            let _ = writeln!(
                out,
                "latency {:.4} s/pair (median {:.4}), {:.2} pairs/min over {} runs",
                t.mean_latency_s, t.median_latency_s, t.throughput_pairs_per_min, t.measured_runs
            );
        }
        out
    }
}

pub fn throughput_per_minute(mean_latency_s: f64) -> f64 {
    if mean_latency_s > 0.0 {
        60.0 / mean_latency_s
    } else {
        0.0
    }
}

/// Wall-clock seconds taken by `f`, with its result.
pub fn time_pair<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

impl TimingStats {
    /// Summary of measured latencies; warm-up runs must already be excluded.
    pub fn from_latencies(latencies: &[f64], warmup_runs: usize) -> Option<Self> {
        if latencies.is_empty() {
            return None;
        }
        let mut sorted = latencies.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let mean = sorted.iter().sum::<f64>() / n as f64;
        Some(Self {
            measured_runs: n,
            warmup_runs,
            mean_latency_s: mean,
            median_latency_s: median,
            min_latency_s: sorted[0],
            max_latency_s: sorted[n - 1],
            throughput_pairs_per_min: throughput_per_minute(mean),
            peak_memory_bytes: peak_memory_bytes(),
        })
    }
}

/// Run `f` `runs` times, discard the first (warm-up) latency and summarize
/// the rest. Returns `None` when fewer than two runs are requested.
pub fn measure_with_warmup<E>(
    runs: usize,
    mut f: impl FnMut() -> std::result::Result<(), E>,
) -> std::result::Result<Option<TimingStats>, E> {
    let mut latencies = Vec::with_capacity(runs);
    for _ in 0..runs {
        let (r, t) = time_pair(&mut f);
        r?;
        latencies.push(t);
    }
    if latencies.len() < 2 {
        return Ok(None);
    }
    Ok(TimingStats::from_latencies(&latencies[1..], 1))
}

/// Peak resident set size of this process, where the platform exposes it.
pub fn peak_memory_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
