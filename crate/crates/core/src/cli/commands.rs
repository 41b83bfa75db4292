use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};

use scalemix::data::{format_float, load_csv, subsample, write_csv, FeatureDataset};
use scalemix::features::{
    butterworth2_lowpass_with, first_order_lowpass, load_signal_csv, mav_window, rectify,
    samples_as_features, FilterMode, SignalBlock,
};
use scalemix::model::build_default_prior;
use scalemix::nu_select::select_nu_with;
use scalemix::predict::predict_batch;
use scalemix::vb::{fit_with_log, NuMode, TrainingEvent};
use scalemix::TrainedClassifier;

use super::{create_file, CmdResult, Failure, ModelArgs, Outcome};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature CSV (f1..fD,label,trial,participant).
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, default_value = "model.json")]
    pub model_out: PathBuf,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Stratified fraction of rows to train on.
    #[arg(long, default_value_t = 1.0)]
    pub subsample: f64,

    /// Experimental: fit each component's ν by maximizing the bound.
    #[arg(long)]
    pub ml_nu: bool,

    /// With --select-nu, write the per-fold ν/J table here.
    #[arg(long, value_name = "PATH")]
    pub nu_table: Option<PathBuf>,
}

fn log_event(e: &TrainingEvent) {
    eprintln!(
        "class {} iter {} elbo {:.10e} components {}",
        e.class_id, e.iteration, e.elbo, e.components
    );
}

pub fn train(a: &TrainArgs, seed: u64) -> CmdResult {
    let mut data = load_csv(&a.data, None)?;
    if a.subsample < 1.0 {
        data = subsample(&data, a.subsample, seed)?;
    }
    let mut prior = build_default_prior(&data, a.model.nu, a.model.k_init, a.model.alpha0)?;
    let mut vb = a.model.vb(seed);
    if a.ml_nu {
        vb.nu_mode = NuMode::MaxLikelihood;
    }
    if a.model.select_nu {
        let cfg = a.model.search(seed)?;
        let sel = select_nu_with(&data, &prior, &cfg, &a.model.vb(seed))?;
        println!("selected nu {}", format_float(sel.nu));
        if let Some(path) = &a.nu_table {
            sel.write_csv(create_file(path)?)?;
        }
        prior = prior.with_nu(sel.nu);
    }
    let tc = fit_with_log(&data, &prior, &vb, &log_event)?;
    tc.save(&a.model_out)?;
    for cm in tc.classes() {
        let nus: Vec<String> = cm.components.iter().map(|c| format_float(c.nu)).collect();
        println!(
            "class {}: {} components (nu {}), {} iterations",
            cm.class_id,
            cm.components.len(),
            nus.join(" "),
            cm.elbo_trace.len()
        );
    }
    Ok(if tc.converged() {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// Feature CSV to classify.
    #[arg(long)]
    pub data: PathBuf,

    /// Output CSV (standard output when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_predictions<W: Write>(data: &FeatureDataset, tc: &TrainedClassifier, out: W) -> Result<(), Failure> {
    let posts = predict_batch(data.features(), tc)?;
    let ids = tc.class_ids();
    let mut w = csv::Writer::from_writer(out);
    let mut header = scalemix::data::csv_header(data.dim());
    header.push("pred_label".into());
    header.extend(ids.iter().map(|c| format!("log_posterior_{c}")));
    let io = |e: csv::Error| Failure {
        code: super::EXIT_DATA,
        message: e.to_string(),
    };
    w.write_record(&header).map_err(io)?;
    for (i, p) in posts.iter().enumerate() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| format_float(*v)).collect();
        rec.push(data.labels()[i].to_string());
        rec.push(data.trials()[i].to_string());
        rec.push(data.participants()[i].to_string());
        rec.push(ids[p.argmax].to_string());
        rec.extend(p.log_probs.iter().map(|v| format_float(*v)));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Failure {
        code: super::EXIT_DATA,
        message: e.to_string(),
    })?;
    if !posts.is_empty() {
        let hits = posts
            .iter()
            .zip(data.labels())
            .filter(|(p, &l)| ids[p.argmax] == l)
            .count();
        eprintln!(
            "accuracy against the label column: {:.4}",
            hits as f64 / posts.len() as f64
        );
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> CmdResult {
    let tc = TrainedClassifier::load(&a.model)?;
    let data = load_csv(&a.data, Some(tc.dim()))?;
    match &a.out {
        Some(path) => write_predictions(&data, &tc, create_file(path)?)?,
        None => write_predictions(&data, &tc, std::io::stdout().lock())?,
    }
    Ok(Outcome::Done)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureMethod {
    /// Rectify, low-pass, one row per sample.
    Smooth,
    /// Mean absolute value over sliding windows.
    Mav,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterKind {
    Butterworth,
    FirstOrder,
    None,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Raw-signal CSV (t,ch1..chD,label,trial[,participant]).
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    /// Sampling rate in Hz; inferred from the time column when omitted.
    #[arg(long)]
    pub fs: Option<f64>,

    #[arg(long, value_enum, default_value_t = FeatureMethod::Smooth)]
    pub method: FeatureMethod,

    /// Low-pass applied after rectification. Defaults to butterworth for
    /// smooth and none for mav.
    #[arg(long, value_enum)]
    pub filter: Option<FilterKind>,

    /// Low-pass cut-off in Hz.
    #[arg(long, default_value_t = 2.0)]
    pub fc: f64,

    /// Filter forward and backward instead of causally.
    #[arg(long)]
    pub zero_phase: bool,

    #[arg(long, default_value_t = 400.0)]
    pub window_ms: f64,

    #[arg(long, default_value_t = 100.0)]
    pub step_ms: f64,
}

fn block_features(a: &FeaturesArgs, block: &SignalBlock) -> scalemix::Result<FeatureDataset> {
    let mode = if a.zero_phase {
        FilterMode::ZeroPhase
    } else {
        FilterMode::Causal
    };
    let default = match a.method {
        FeatureMethod::Smooth => FilterKind::Butterworth,
        FeatureMethod::Mav => FilterKind::None,
    };
    let filtered = match a.filter.unwrap_or(default) {
        FilterKind::Butterworth => butterworth2_lowpass_with(&rectify(block), a.fc, mode)?,
        FilterKind::FirstOrder => first_order_lowpass(&rectify(block), a.fc, mode)?,
        FilterKind::None => rectify(block),
    };
    match a.method {
        FeatureMethod::Smooth => samples_as_features(&filtered),
        FeatureMethod::Mav => mav_window(&filtered, a.window_ms, a.step_ms),
    }
}

pub fn features(a: &FeaturesArgs) -> CmdResult {
    let blocks = load_signal_csv(&a.data, a.fs)?;
    let mut out: Option<FeatureDataset> = None;
    for block in &blocks {
        let part = block_features(a, block)?;
        match &mut out {
            None => out = Some(part),
            Some(acc) => {
                for i in 0..part.len() {
                    acc.push(
                        part.row(i),
                        part.labels()[i],
                        part.trials()[i],
                        part.participants()[i],
                    )?;
                }
            }
        }
    }
    let out = out.ok_or_else(|| Failure {
        code: super::EXIT_DATA,
        message: format!("{}: no signal rows", a.data.display()),
    })?;
    write_csv(&out, create_file(&a.out)?)?;
    eprintln!("{} feature rows from {} blocks", out.len(), blocks.len());
    Ok(Outcome::Done)
}
