use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use scalemix::data::{
    format_float, generate_simulation_with, save_csv, FeatureDataset, SimulationConfig, SIM_GRID_RANGE,
};
use scalemix::eval::{accuracy, decision_boundary_along};
use scalemix::model::build_default_prior;
use scalemix::nu_select::select_nu_with;
use scalemix::predict::predict_batch;
use scalemix::vb::{fit, NuMode};
use scalemix::{PriorHyperparameters, TrainedClassifier, VbConfig};

use super::{create_file, ensure_dir, CmdResult, Failure, ModelArgs, Outcome};

/// ν standing in for the Gaussian mixture.
const GAUSSIAN_NU: f64 = 1e6;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "simulation")]
    pub out_dir: PathBuf,

    /// Spacing of the evaluation grid over [0, 8]².
    #[arg(long, default_value_t = 0.05)]
    pub grid_step: f64,

    /// Leave out the uniform outliers added to class 1.
    #[arg(long)]
    pub no_outliers: bool,

    /// Also render each boundary grid as an SVG heatmap.
    #[arg(long)]
    pub svg: bool,

    #[command(flatten)]
    pub model: ModelArgs,
}

struct Fitted {
    name: &'static str,
    model: TrainedClassifier,
}

fn write_grid(
    path: &std::path::Path,
    grid: &FeatureDataset,
    tc: &TrainedClassifier,
) -> Result<Vec<[f64; 2]>, Failure> {
    let posts = predict_batch(grid.features(), tc)?;
    let ids = tc.class_ids();
    let mut w = csv::Writer::from_writer(create_file(path)?);
    let io = |e: csv::Error| Failure {
        code: super::EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    };
    w.write_record(["x1", "x2", "posterior_c1", "posterior_c2", "argmax"])
        .map_err(io)?;
    let mut probs = Vec::with_capacity(posts.len());
    for (i, p) in posts.iter().enumerate() {
        let pr = p.probs();
        let x = grid.row(i);
        w.write_record([
            format_float(x[0]),
            format_float(x[1]),
            format_float(pr[0]),
            format_float(pr[1]),
            ids[p.argmax].to_string(),
        ])
        .map_err(io)?;
        probs.push([pr[0], pr[1]]);
    }
    w.flush().map_err(|e| Failure::io(path, e))?;
    Ok(probs)
}

/// Plain-rectangle heatmap: red for class 1, blue for class 2, x2 upward.
fn write_svg(
    path: &std::path::Path,
    grid: &FeatureDataset,
    probs: &[[f64; 2]],
    step: f64,
) -> Result<(), Failure> {
    const SCALE: f64 = 60.0;
    let (lo, hi) = SIM_GRID_RANGE;
    let side = (hi - lo + step) * SCALE;
    let mut w = create_file(path)?;
    let mut body = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{side:.0}\" height=\"{side:.0}\" viewBox=\"0 0 {side} {side}\" shape-rendering=\"crispEdges\">\n"
    );
    let cell = step * SCALE;
    for (i, p) in probs.iter().enumerate() {
        let x = grid.row(i);
        let px = (x[0] - lo) * SCALE;
        let py = (hi - x[1]) * SCALE;
        let red = (255.0 * p[0]).round() as u8;
        let blue = (255.0 * p[1]).round() as u8;
        body.push_str(&format!(
            "<rect x=\"{px:.2}\" y=\"{py:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"rgb({red},64,{blue})\"/>\n"
        ));
    }
    body.push_str("</svg>\n");
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Failure::io(path, e))
}

/// Where the predicted class flips along x2 = x1, as the x1 coordinate.
fn diagonal_boundary(tc: &TrainedClassifier) -> Result<Option<f64>, Failure> {
    let (lo, hi) = SIM_GRID_RANGE;
    Ok(decision_boundary_along(tc, &[lo, lo], &[hi, hi], 1e-6)?.map(|p| p[0]))
}

fn shared_prior(
    train: &FeatureDataset,
    a: &SimulateArgs,
    vb: &VbConfig,
    seed: u64,
) -> Result<PriorHyperparameters, Failure> {
    let prior = build_default_prior(train, a.model.nu, a.model.k_init, a.model.alpha0)?;
    if !a.model.select_nu {
        return Ok(prior);
    }
    let sel = select_nu_with(train, &prior, &a.model.search(seed)?, vb)?;
    eprintln!("selected nu {}", format_float(sel.nu));
    Ok(prior.with_nu(sel.nu))
}

pub fn run(a: &SimulateArgs, seed: u64) -> CmdResult {
    let base = SimulationConfig {
        seed,
        grid_step: a.grid_step,
        ..SimulationConfig::default()
    };
    let cfg = SimulationConfig {
        outlier_fraction: if a.no_outliers { 0.0 } else { base.outlier_fraction },
        ..base.clone()
    };
    let (train, grid) = generate_simulation_with(&cfg)?;
    ensure_dir(&a.out_dir)?;
    save_csv(&train, &a.out_dir.join("train.csv"))?;
    save_csv(&grid, &a.out_dir.join("test_grid.csv"))?;

    let vb = a.model.vb(seed);
    let shared = shared_prior(&train, a, &vb, seed)?;
    let ml_vb = VbConfig {
        nu_mode: NuMode::MaxLikelihood,
        ..vb.clone()
    };
    let fitted = [
        Fitted {
            name: "ml_nu",
            model: fit(&train, &shared.with_nu(a.model.nu), &ml_vb)?,
        },
        Fitted {
            name: "shared_nu",
            model: fit(&train, &shared, &vb)?,
        },
        Fitted {
            name: "gaussian",
            model: fit(&train, &shared.with_nu(GAUSSIAN_NU), &vb)?,
        },
    ];

    // Reference boundary from the same draw without outliers.
    let (clean_train, _) = generate_simulation_with(&SimulationConfig {
        outlier_fraction: 0.0,
        ..base
    })?;
    let clean = fit(&clean_train, &shared, &vb)?;
    let clean_boundary = diagonal_boundary(&clean)?;

    let mut summary = csv::Writer::from_writer(create_file(&a.out_dir.join("summary.csv"))?);
    let io = |e: csv::Error| Failure {
        code: super::EXIT_DATA,
        message: e.to_string(),
    };
    summary
        .write_record([
            "config",
            "nu_class1",
            "nu_class2",
            "grid_accuracy",
            "diagonal_boundary",
            "shift_from_clean",
        ])
        .map_err(io)?;
    let nus = |tc: &TrainedClassifier| -> Vec<String> {
        tc.classes()
            .iter()
            .map(|c| {
                let v: Vec<String> = c.components.iter().map(|p| format_float(p.nu)).collect();
                v.join(" ")
            })
            .collect()
    };
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();

    let mut converged = clean.converged();
    println!(
        "{:<10} {:>14} {:>14} {:>9} {:>9}",
        "config", "nu class 1", "nu class 2", "accuracy", "boundary"
    );
    for f in &fitted {
        converged &= f.model.converged();
        let probs = write_grid(
            &a.out_dir.join(format!("boundary_{}.csv", f.name)),
            &grid,
            &f.model,
        )?;
        if a.svg {
            write_svg(
                &a.out_dir.join(format!("boundary_{}.svg", f.name)),
                &grid,
                &probs,
                a.grid_step,
            )?;
        }
        let ids = f.model.class_ids();
        let pred: Vec<u32> = probs
            .iter()
            .map(|p| if p[1] > p[0] { ids[1] } else { ids[0] })
            .collect();
        let acc = accuracy(&pred, grid.labels())?;
        let boundary = diagonal_boundary(&f.model)?;
        let shift = boundary.zip(clean_boundary).map(|(b, c)| b - c);
        let nu = nus(&f.model);
        summary
            .write_record([
                f.name.to_string(),
                nu[0].clone(),
                nu[1].clone(),
                format_float(acc),
                opt(boundary),
                opt(shift),
            ])
            .map_err(io)?;
        println!(
            "{:<10} {:>14} {:>14} {:>9.4} {:>9}",
            f.name,
            nu[0],
            nu[1],
            acc,
            boundary
                .map(|b| format!("{b:.3}"))
                .unwrap_or_else(|| "none".into())
        );
    }
    let nu = nus(&clean);
    summary
        .write_record([
            "clean_reference".to_string(),
            nu[0].clone(),
            nu[1].clone(),
            String::new(),
            opt(clean_boundary),
            "0".into(),
        ])
        .map_err(io)?;
    summary.flush().map_err(|e| Failure::io(&a.out_dir, e))?;
    println!(
        "{:<10} {:>14} {:>14} {:>9} {:>9}",
        "clean",
        nu[0],
        nu[1],
        "",
        clean_boundary
            .map(|b| format!("{b:.3}"))
            .unwrap_or_else(|| "none".into())
    );
    Ok(if converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}
