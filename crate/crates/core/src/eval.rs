//! Classification metrics, the probability of superiority and stage timing.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use crate::data::{csv_io, format_float, FeatureDataset};
use crate::error::{Error, Result};
use crate::model::{PriorHyperparameters, TrainedClassifier};
use crate::nu_select::{select_nu_with, NuSearchConfig, NuSelection};
use crate::predict::{classify, Scorer};
use crate::vb::{fit, VbConfig};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    if a == 0 {
        return Err(Error::invalid("no labels to compare"));
    }
    Ok(())
}

/// Fraction of positions where `pred` equals `truth`.
pub fn accuracy(pred: &[u32], truth: &[u32]) -> Result<f64> {
    check_lengths(truth.len(), pred.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Counts indexed `[truth][pred]` over a fixed list of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub classes: Vec<u32>,
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion(pred: &[u32], truth: &[u32], classes: &[u32]) -> Result<Confusion> {
    check_lengths(truth.len(), pred.len())?;
    let index = |label: u32| {
        classes
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| Error::invalid(format!("label {label} is not one of the classes")))
    };
    let mut counts = vec![vec![0; classes.len()]; classes.len()];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[index(t)?][index(p)?] += 1;
    }
    Ok(Confusion {
        classes: classes.to_vec(),
        counts,
    })
}

/// Per-class precision and recall. A class with an empty denominator gets
/// 0 and its flag set.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionRecall {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// No predictions of this class.
    pub precision_undefined: Vec<bool>,
    /// No true rows of this class.
    pub recall_undefined: Vec<bool>,
}

impl PrecisionRecall {
    pub fn macro_precision(&self) -> f64 {
        mean(&self.precision)
    }

    pub fn macro_recall(&self) -> f64 {
        mean(&self.recall)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// True rows per class.
    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let hits: u64 = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        hits as f64 / self.total() as f64
    }

    pub fn precision_recall(&self) -> PrecisionRecall {
        let c = self.classes.len();
        let mut out = PrecisionRecall {
            precision: Vec::with_capacity(c),
            recall: Vec::with_capacity(c),
            precision_undefined: Vec::with_capacity(c),
            recall_undefined: Vec::with_capacity(c),
        };
        for k in 0..c {
            let tp = self.counts[k][k];
            let predicted: u64 = self.counts.iter().map(|row| row[k]).sum();
            let actual: u64 = self.counts[k].iter().sum();
            let (p, pu) = ratio(tp, predicted);
            let (r, ru) = ratio(tp, actual);
            out.precision.push(p);
            out.precision_undefined.push(pu);
            out.recall.push(r);
            out.recall_undefined.push(ru);
        }
        out
    }

    /// Rows are true classes, columns predicted classes.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["truth".to_string()];
        header.extend(self.classes.iter().map(|c| format!("pred_{c}")));
        w.write_record(&header).map_err(csv_io)?;
        for (c, row) in self.classes.iter().zip(&self.counts) {
            let mut rec = vec![c.to_string()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Precision and recall for labels in 1..=`num_classes`.
pub fn precision_recall(pred: &[u32], truth: &[u32], num_classes: u32) -> Result<PrecisionRecall> {
    if num_classes == 0 {
        return Err(Error::invalid("at least one class is needed"));
    }
    let classes: Vec<u32> = (1..=num_classes).collect();
    Ok(confusion(pred, truth, &classes)?.precision_recall())
}

/// Fraction of participants for whom `a` strictly beats `b`.
pub fn probability_of_superiority(acc_a: &[f64], acc_b: &[f64]) -> Result<f64> {
    check_lengths(acc_a.len(), acc_b.len())?;
    let wins = acc_a.iter().zip(acc_b).filter(|(a, b)| a > b).count();
    Ok(wins as f64 / acc_a.len() as f64)
}

/// Wall-clock cost of the three stages of one train/test run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub tune_s: f64,
    pub train_s: f64,
    pub predict_us_per_record: f64,
    /// Worker threads available while the stages ran.
    pub threads: usize,
}

/// Prediction is timed over at least this many records, cycling through
/// the test rows as needed.
pub const MIN_TIMED_RECORDS: usize = 10_000;

/// Outcome of [`time_stages`].
#[derive(Debug, Clone)]
pub struct StagedRun {
    pub timing: Timing,
    pub selection: Option<NuSelection>,
    pub model: TrainedClassifier,
    /// One label per test row, in row order.
    pub predictions: Vec<u32>,
}

/// Tunes ν (when `tuning` is given), trains, then classifies `test`
/// single-threaded with a reusable scorer.
pub fn time_stages(
    train: &FeatureDataset,
    test: &FeatureDataset,
    prior: &PriorHyperparameters,
    vb: &VbConfig,
    tuning: Option<&NuSearchConfig>,
) -> Result<StagedRun> {
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let start = Instant::now();
    let selection = tuning
        .map(|cfg| select_nu_with(train, prior, cfg, vb))
        .transpose()?;
    let tune_s = if selection.is_some() {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    let prior = match &selection {
        Some(s) => prior.with_nu(s.nu),
        None => prior.clone(),
    };

    let start = Instant::now();
    let model = fit(train, &prior, vb)?;
    let train_s = start.elapsed().as_secs_f64();

    let mut scorer = Scorer::new(&model);
    let mut predictions = Vec::with_capacity(test.len());
    let start = Instant::now();
    for i in 0..test.len() {
        predictions.push(scorer.classify(test.row(i))?);
    }
    let mut timed = test.len();
    while timed < MIN_TIMED_RECORDS {
        let label = scorer.classify(test.row(timed % test.len()))?;
        std::hint::black_box(label);
        timed += 1;
    }
    let predict_us_per_record = start.elapsed().as_secs_f64() * 1e6 / timed as f64;

    Ok(StagedRun {
        timing: Timing {
            tune_s,
            train_s,
            predict_us_per_record,
            threads: rayon::current_num_threads(),
        },
        selection,
        model,
        predictions,
    })
}

/// First point on the segment `from → to` where the predicted class
/// differs from the one at `from`, located to within `tol` in the segment
/// parameter. `None` when the label never changes on a 1000-step scan.
pub fn decision_boundary_along(
    tc: &TrainedClassifier,
    from: &[f64],
    to: &[f64],
    tol: f64,
) -> Result<Option<Vec<f64>>> {
    const SCAN: usize = 1000;
    let at = |t: f64| -> Vec<f64> { from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect() };
    let start = classify(from, tc)?;
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..=SCAN {
        let t = i as f64 / SCAN as f64;
        if classify(&at(t), tc)? != start {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    let Some(mut hi) = hi else {
        return Ok(None);
    };
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if classify(&at(mid), tc)? == start {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(at(0.5 * (lo + hi))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub precision_undefined: Vec<bool>,
    pub confusion: Confusion,
    pub timing: Option<Timing>,
}

impl MetricsReport {
    pub fn new(pred: &[u32], truth: &[u32], classes: &[u32], timing: Option<Timing>) -> Result<Self> {
        let confusion = confusion(pred, truth, classes)?;
        let pr = confusion.precision_recall();
        Ok(MetricsReport {
            accuracy: confusion.accuracy(),
            per_class_precision: pr.precision,
            per_class_recall: pr.recall,
            precision_undefined: pr.precision_undefined,
            confusion,
            timing,
        })
    }

    pub fn macro_precision(&self) -> f64 {
        mean(&self.per_class_precision)
    }

    pub fn macro_recall(&self) -> f64 {
        mean(&self.per_class_recall)
    }

    /// One row: accuracy, macro precision and recall, then timings when
    /// present.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["accuracy", "macro_precision", "macro_recall"];
        let mut row = vec![
            format_float(self.accuracy),
            format_float(self.macro_precision()),
            format_float(self.macro_recall()),
        ];
        if let Some(t) = &self.timing {
            header.extend(["tune_s", "train_s", "predict_us_per_record", "threads"]);
            row.extend([
                format_float(t.tune_s),
                format_float(t.train_s),
                format_float(t.predict_us_per_record),
                t.threads.to_string(),
            ]);
        }
        w.write_record(&header).map_err(csv_io)?;
        w.write_record(&row).map_err(csv_io)?;
        w.flush()?;
        Ok(())
    }

    /// Columns class, precision, recall, support, precision_undefined.
    pub fn write_per_class_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["class", "precision", "recall", "support", "precision_undefined"])
            .map_err(csv_io)?;
        let support = self.confusion.support();
        for (i, c) in self.confusion.classes.iter().enumerate() {
            w.write_record([
                c.to_string(),
                format_float(self.per_class_precision[i]),
                format_float(self.per_class_recall[i]),
                support[i].to_string(),
                self.precision_undefined[i].to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy        {:>8.4}", self.accuracy)?;
        writeln!(f, "macro precision {:>8.4}", self.macro_precision())?;
        writeln!(f, "macro recall    {:>8.4}", self.macro_recall())?;
        if let Some(t) = &self.timing {
            writeln!(f, "tuning          {:>8.3} s", t.tune_s)?;
            writeln!(f, "training        {:>8.3} s", t.train_s)?;
            writeln!(
                f,
                "prediction      {:>8.3} us/record ({} threads)",
                t.predict_us_per_record, t.threads
            )?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "{:>6} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "support"
        )?;
        let support = self.confusion.support();
        for (i, c) in self.confusion.classes.iter().enumerate() {
            let flag = if self.precision_undefined[i] { "*" } else { " " };
            writeln!(
                f,
                "{c:>6} {:>8.4}{flag} {:>9.4} {:>8}",
                self.per_class_precision[i], self.per_class_recall[i], support[i]
            )?;
        }
        if self.precision_undefined.iter().any(|&u| u) {
            writeln!(f, "* no predictions of this class")?;
        }
        Ok(())
    }
}
