use std::path::PathBuf;

use clap::Args;

use scalemix::data::{format_float, load_csv, split_by_trials, subsample};
use scalemix::eval::{probability_of_superiority, time_stages, MetricsReport, Timing};
use scalemix::model::build_default_prior;
use scalemix::nu_select::NuSearchConfig;
use scalemix::{Error, FeatureDataset};

use super::{create_file, ensure_dir, CmdResult, Failure, ModelArgs, Outcome, EXIT_DATA};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Feature CSV with trial and participant columns.
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, default_value = "evaluation")]
    pub out_dir: PathBuf,

    /// Training trials per combination (default: a third of each
    /// participant's trials, rounded down).
    #[arg(long)]
    pub trials_train: Option<usize>,

    /// Stratified fraction of each training split actually used.
    #[arg(long, default_value_t = 1.0)]
    pub subsample: f64,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Also train every split with this fixed ν and report the probability
    /// that the main setting beats it per participant.
    #[arg(long)]
    pub compare_nu: Option<f64>,
}

struct ComboRow {
    participant: u32,
    index: usize,
    train_trials: String,
    test_trials: String,
    nu: f64,
    report: MetricsReport,
    compare_accuracy: Option<f64>,
    timing: Timing,
}

struct ParticipantRow {
    participant: u32,
    combinations: usize,
    accuracy: f64,
    precision: f64,
    recall: f64,
    compare_accuracy: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn join(ids: impl IntoIterator<Item = u32>) -> String {
    ids.into_iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Distinct subsample stream for each (participant, combination).
fn combo_seed(seed: u64, participant: u32, index: usize) -> u64 {
    seed ^ (((participant as u64) << 32) | index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn csv_fail(e: csv::Error) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: e.to_string(),
    }
}

fn evaluate_participant(
    a: &EvaluateArgs,
    seed: u64,
    participant: u32,
    d: &FeatureDataset,
    tuning: Option<&NuSearchConfig>,
    rows: &mut Vec<ComboRow>,
    pooled: &mut (Vec<u32>, Vec<u32>),
) -> Result<bool, Failure> {
    let trials = d.trial_ids().len();
    let s = a.trials_train.unwrap_or(trials / 3);
    if s == 0 || s >= trials {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!(
                "participant {participant}: {trials} trials cannot be split with {s} training trials"
            ),
        });
    }
    let classes = d.class_ids();
    let vb = a.model.vb(seed);
    let mut converged = true;
    for (index, split) in split_by_trials(d, s)?.into_iter().enumerate() {
        let train = if a.subsample < 1.0 {
            subsample(&split.train, a.subsample, combo_seed(seed, participant, index))?
        } else {
            split.train
        };
        let missing: Vec<u32> = classes
            .iter()
            .copied()
            .filter(|c| !train.labels().contains(c))
            .collect();
        if !missing.is_empty() {
            return Err(Failure {
                code: EXIT_DATA,
                message: format!(
                    "participant {participant}: training trials {} hold no rows of class {}",
                    join(split.plan.train_trials.iter().copied()),
                    join(missing)
                ),
            });
        }
        let prior = build_default_prior(&train, a.model.nu, a.model.k_init, a.model.alpha0)?;
        let run = time_stages(&train, &split.test, &prior, &vb, tuning)?;
        converged &= run.model.converged();
        let compare_accuracy = match a.compare_nu {
            Some(nu) => {
                let other = time_stages(&train, &split.test, &prior.with_nu(nu), &vb, None)?;
                converged &= other.model.converged();
                let report = MetricsReport::new(&other.predictions, split.test.labels(), &classes, None)?;
                Some(report.accuracy)
            }
            None => None,
        };
        let report = MetricsReport::new(&run.predictions, split.test.labels(), &classes, None)?;
        pooled.0.extend(&run.predictions);
        pooled.1.extend(split.test.labels());
        rows.push(ComboRow {
            participant,
            index,
            train_trials: join(split.plan.train_trials.iter().copied()),
            test_trials: join(split.plan.test_trials.iter().copied()),
            nu: run.selection.as_ref().map_or(a.model.nu, |s| s.nu),
            report,
            compare_accuracy,
            timing: run.timing,
        });
    }
    Ok(converged)
}

pub fn run(a: &EvaluateArgs, seed: u64) -> CmdResult {
    let data = load_csv(&a.data, None)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let tuning = if a.model.select_nu {
        Some(a.model.search(seed)?)
    } else {
        None
    };
    ensure_dir(&a.out_dir)?;

    let mut rows = Vec::new();
    let mut pooled = (Vec::new(), Vec::new());
    let mut converged = true;
    for p in data.participant_ids() {
        let d = data.filter(|i| data.participants()[i] == p);
        converged &= evaluate_participant(a, seed, p, &d, tuning.as_ref(), &mut rows, &mut pooled)?;
    }

    let participants: Vec<ParticipantRow> = data
        .participant_ids()
        .into_iter()
        .map(|p| {
            let mine: Vec<&ComboRow> = rows.iter().filter(|r| r.participant == p).collect();
            ParticipantRow {
                participant: p,
                combinations: mine.len(),
                accuracy: mean(mine.iter().map(|r| r.report.accuracy)),
                precision: mean(mine.iter().map(|r| r.report.macro_precision())),
                recall: mean(mine.iter().map(|r| r.report.macro_recall())),
                compare_accuracy: a
                    .compare_nu
                    .map(|_| mean(mine.iter().filter_map(|r| r.compare_accuracy))),
            }
        })
        .collect();
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();

    let mut w = csv::Writer::from_writer(create_file(&a.out_dir.join("combinations.csv"))?);
    w.write_record([
        "participant",
        "combination",
        "train_trials",
        "test_trials",
        "nu",
        "accuracy",
        "macro_precision",
        "macro_recall",
        "compare_accuracy",
    ])
    .map_err(csv_fail)?;
    for r in &rows {
        w.write_record([
            r.participant.to_string(),
            (r.index + 1).to_string(),
            r.train_trials.clone(),
            r.test_trials.clone(),
            format_float(r.nu),
            format_float(r.report.accuracy),
            format_float(r.report.macro_precision()),
            format_float(r.report.macro_recall()),
            opt(r.compare_accuracy),
        ])
        .map_err(csv_fail)?;
    }
    w.flush().map_err(|e| Failure::io(&a.out_dir, e))?;

    let mut w = csv::Writer::from_writer(create_file(&a.out_dir.join("timing.csv"))?);
    w.write_record([
        "participant",
        "combination",
        "tune_s",
        "train_s",
        "predict_us_per_record",
        "threads",
    ])
    .map_err(csv_fail)?;
    for r in &rows {
        w.write_record([
            r.participant.to_string(),
            (r.index + 1).to_string(),
            format_float(r.timing.tune_s),
            format_float(r.timing.train_s),
            format_float(r.timing.predict_us_per_record),
            r.timing.threads.to_string(),
        ])
        .map_err(csv_fail)?;
    }
    w.flush().map_err(|e| Failure::io(&a.out_dir, e))?;

    let mut w = csv::Writer::from_writer(create_file(&a.out_dir.join("participants.csv"))?);
    w.write_record([
        "participant",
        "combinations",
        "accuracy",
        "macro_precision",
        "macro_recall",
        "compare_accuracy",
    ])
    .map_err(csv_fail)?;
    for p in &participants {
        w.write_record([
            p.participant.to_string(),
            p.combinations.to_string(),
            format_float(p.accuracy),
            format_float(p.precision),
            format_float(p.recall),
            opt(p.compare_accuracy),
        ])
        .map_err(csv_fail)?;
    }
    w.flush().map_err(|e| Failure::io(&a.out_dir, e))?;

    let pooled_report = MetricsReport::new(&pooled.0, &pooled.1, &data.class_ids(), None)?;
    pooled_report.write_per_class_csv(create_file(&a.out_dir.join("per_class.csv"))?)?;
    pooled_report
        .confusion
        .write_csv(create_file(&a.out_dir.join("confusion.csv"))?)?;

    let ps = match a.compare_nu {
        Some(_) => {
            let main: Vec<f64> = participants.iter().map(|p| p.accuracy).collect();
            let other: Vec<f64> = participants.iter().filter_map(|p| p.compare_accuracy).collect();
            Some(probability_of_superiority(&main, &other)?)
        }
        None => None,
    };
    let accuracy = mean(participants.iter().map(|p| p.accuracy));
    let precision = mean(participants.iter().map(|p| p.precision));
    let recall = mean(participants.iter().map(|p| p.recall));
    let compare = a
        .compare_nu
        .map(|_| mean(participants.iter().filter_map(|p| p.compare_accuracy)));
    let mut w = csv::Writer::from_writer(create_file(&a.out_dir.join("summary.csv"))?);
    w.write_record([
        "participants",
        "combinations",
        "accuracy",
        "macro_precision",
        "macro_recall",
        "compare_nu",
        "compare_accuracy",
        "probability_of_superiority",
    ])
    .map_err(csv_fail)?;
    w.write_record([
        participants.len().to_string(),
        rows.len().to_string(),
        format_float(accuracy),
        format_float(precision),
        format_float(recall),
        opt(a.compare_nu),
        opt(compare),
        opt(ps),
    ])
    .map_err(csv_fail)?;
    w.flush().map_err(|e| Failure::io(&a.out_dir, e))?;

    println!(
        "{:>11} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>11}",
        "participant", "combos", "accuracy", "precision", "recall", "tune s", "train s", "predict us"
    );
    for p in &participants {
        let mine: Vec<&ComboRow> = rows.iter().filter(|r| r.participant == p.participant).collect();
        println!(
            "{:>11} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.3} {:>9.3} {:>11.3}",
            p.participant,
            p.combinations,
            p.accuracy,
            p.precision,
            p.recall,
            mean(mine.iter().map(|r| r.timing.tune_s)),
            mean(mine.iter().map(|r| r.timing.train_s)),
            mean(mine.iter().map(|r| r.timing.predict_us_per_record)),
        );
    }
    println!(
        "{:>11} {:>6} {:>9.4} {:>9.4} {:>9.4}",
        "mean",
        rows.len(),
        accuracy,
        precision,
        recall
    );
    if let (Some(nu), Some(c), Some(ps)) = (a.compare_nu, compare, ps) {
        println!(
            "fixed nu {} accuracy {c:.4}; probability of superiority {ps:.3}",
            format_float(nu)
        );
    }
    Ok(if converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}
