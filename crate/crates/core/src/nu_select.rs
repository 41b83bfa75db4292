//! Choice of the shared degrees of freedom ν by minimizing the held-out
//! conditional entropy of the labels over L cross-validation folds.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{csv_io, format_float, FeatureDataset};
use crate::error::{Error, Result};
use crate::model::{PriorHyperparameters, TrainedClassifier};
use crate::predict::ClassPredictive;
use crate::vb::{fit, VbConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct NuSearchConfig {
    pub folds: usize,
    /// ν used while fitting the fold models.
    pub nu_pre: f64,
    /// Candidate values, strictly increasing.
    pub grid: Vec<f64>,
    pub seed: u64,
}

impl Default for NuSearchConfig {
    fn default() -> Self {
        NuSearchConfig {
            folds: 5,
            nu_pre: 200.0,
            grid: log_grid(1e-3, 200.0, 40),
            seed: 0,
        }
    }
}

impl NuSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid("at least two folds are needed"));
        }
        if !(self.nu_pre > 0.0) || !self.nu_pre.is_finite() {
            return Err(Error::invalid("nu_pre must be positive and finite"));
        }
        if self.grid.is_empty() {
            return Err(Error::invalid("the nu grid is empty"));
        }
        if self.grid.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("nu grid values must be positive and finite"));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("the nu grid must be strictly increasing"));
        }
        Ok(())
    }
}

/// `n` points evenly spaced in ln between `lo` and `hi`, both included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let step = (b - a) / (n - 1) as f64;
            (0..n)
                .map(|i| match i {
                    0 => lo,
                    i if i == n - 1 => hi,
                    i => (a + step * i as f64).exp(),
                })
                .collect()
        }
    }
}

/// J(ν) over the grid for one held-out fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldTable {
    pub fold: usize,
    pub nus: Vec<f64>,
    pub entropies: Vec<f64>,
    /// Minimizer of J on this fold; ties go to the smaller ν.
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuSelection {
    /// Smallest of the per-fold minimizers.
    pub nu: f64,
    pub folds: Vec<FoldTable>,
}

impl NuSelection {
    /// CSV with columns fold, nu, J (folds numbered from 1).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["fold", "nu", "J"]).map_err(csv_io)?;
        for t in &self.folds {
            for (nu, j) in t.nus.iter().zip(&t.entropies) {
                w.write_record([(t.fold + 1).to_string(), format_float(*nu), format_float(*j)])
                    .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Fold index of every row. Each class is shuffled on its own and dealt
/// round-robin, continuing the count from the previous class, so every
/// fold holds ⌊n_c/L⌋ or ⌈n_c/L⌉ rows of class c.
pub fn stratified_folds(data: &FeatureDataset, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid("at least two folds are needed"));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let order = data.canonical_order();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; data.len()];
    let mut next = 0;
    for class in data.class_ids() {
        let mut rows: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| data.labels()[i] == class)
            .collect();
        if rows.len() < folds {
            return Err(Error::invalid(format!(
                "class {class} has {} rows, fewer than the {folds} folds",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        for i in rows {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// −ln p(c | x) from class log-scores, accurate when the true class
/// dominates by hundreds of nats.
fn neg_log_posterior(scores: &[f64], own: usize) -> f64 {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores[own] == top {
        let rest: f64 = scores
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != own)
            .map(|(_, s)| (s - top).exp())
            .sum();
        rest.ln_1p()
    } else {
        crate::numerics::log_sum_exp(scores) - scores[own]
    }
}

/// Mean −ln p(c_n | x_n) over `validation` with every component's ν set
/// to `nu` and all other posterior quantities left as fitted.
pub fn conditional_entropy(
    nu: f64,
    fold_model: &TrainedClassifier,
    validation: &FeatureDataset,
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::invalid("validation fold is empty"));
    }
    if validation.dim() != fold_model.dim() {
        return Err(Error::DimensionMismatch {
            expected: fold_model.dim(),
            found: validation.dim(),
        });
    }
    let predictive = fold_model
        .classes()
        .iter()
        .map(|c| ClassPredictive::new(c, Some(nu)))
        .collect::<Result<Vec<_>>>()?;
    let ids = fold_model.class_ids();
    let own = validation
        .labels()
        .iter()
        .map(|l| {
            ids.binary_search(l)
                .map_err(|_| Error::invalid(format!("class {l} is missing from the fold model")))
        })
        .collect::<Result<Vec<_>>>()?;
    let log_prior = fold_model.class_log_prior();
    let mut scratch = vec![0.0; validation.dim()];
    let mut scores = vec![0.0; predictive.len()];
    let mut total = 0.0;
    for (n, &c) in own.iter().enumerate() {
        let x = validation.row(n);
        for ((s, p), lp) in scores.iter_mut().zip(&predictive).zip(log_prior) {
            *s = p.log_density(x, &mut scratch) + lp;
        }
        total += neg_log_posterior(&scores, c);
    }
    let j = total / validation.len() as f64;
    if !j.is_finite() {
        return Err(Error::NonFinite(format!("conditional entropy at nu = {nu}")));
    }
    Ok(j)
}

/// Grid index minimizing J; ties keep the earlier (smaller) ν.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Cross-validated ν with the default training configuration seeded from
/// `cfg.seed`.
pub fn select_nu(
    data: &FeatureDataset,
    prior: &PriorHyperparameters,
    cfg: &NuSearchConfig,
) -> Result<NuSelection> {
    let vb = VbConfig {
        seed: cfg.seed,
        ..VbConfig::default()
    };
    select_nu_with(data, prior, cfg, &vb)
}

pub fn select_nu_with(
    data: &FeatureDataset,
    prior: &PriorHyperparameters,
    cfg: &NuSearchConfig,
    vb: &VbConfig,
) -> Result<NuSelection> {
    cfg.validate()?;
    let assignment = stratified_folds(data, cfg.folds, cfg.seed)?;
    let fold_prior = prior.with_nu(cfg.nu_pre);
    let tables: Vec<Result<FoldTable>> = (0..cfg.folds)
        .into_par_iter()
        .map(|fold| {
            let train = data.filter(|i| assignment[i] != fold);
            let held_out = data.filter(|i| assignment[i] == fold);
            let model = fit(&train, &fold_prior, vb)?;
            let entropies = cfg
                .grid
                .par_iter()
                .map(|&nu| conditional_entropy(nu, &model, &held_out))
                .collect::<Result<Vec<_>>>()?;
            let best = cfg.grid[argmin(&entropies)];
            Ok(FoldTable {
                fold,
                nus: cfg.grid.clone(),
                entropies,
                best,
            })
        })
        .collect();
    let folds = tables.into_iter().collect::<Result<Vec<_>>>()?;
    let nu = folds.iter().map(|t| t.best).fold(f64::INFINITY, f64::min);
    Ok(NuSelection { nu, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_default_prior, ClassModel, ComponentPosterior};
    use crate::numerics::PsdMatrix;
    use crate::predict::sample;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn comp(m: Vec<f64>, w: PsdMatrix, nu: f64) -> ComponentPosterior {
        ComponentPosterior {
            alpha: 1.0,
            beta: 1.0,
            m,
            w,
            eta: 5.0,
            nu,
        }
    }

    fn classifier(classes: Vec<ClassModel>) -> TrainedClassifier {
        let dim = classes[0].dim();
        let c = classes.len();
        let prior = PriorHyperparameters {
            alpha0: 1.0,
            beta0: 1.0,
            m0: vec![0.0; dim],
            w0: PsdMatrix::identity(dim),
            eta0: dim as f64 + 1.0,
            nu_fixed: 5.0,
            k_init: 1,
        };
        TrainedClassifier::new(classes, vec![-(c as f64).ln(); c], prior).unwrap()
    }

    fn scalar_model(id: u32, m: f64, w: f64) -> ClassModel {
        ClassModel::new(id, vec![comp(vec![m], PsdMatrix::diagonal(&[w]), 3.0)]).unwrap()
    }

    fn dataset(rows: &[(f64, u32)]) -> FeatureDataset {
        let mut d = FeatureDataset::empty(1);
        for &(x, c) in rows {
            d.push(&[x], c, 1, 1).unwrap();
        }
        d
    }

    #[test]
    fn default_grid() {
        let cfg = NuSearchConfig::default();
        assert_eq!(cfg.grid.len(), 40);
        assert_eq!(cfg.grid[0], 1e-3);
        assert_eq!(cfg.grid[39], 200.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            NuSearchConfig {
                folds: 1,
                ..Default::default()
            },
            NuSearchConfig {
                grid: vec![],
                ..Default::default()
            },
            NuSearchConfig {
                grid: vec![1.0, 1.0],
                ..Default::default()
            },
            NuSearchConfig {
                grid: vec![-1.0],
                ..Default::default()
            },
            NuSearchConfig {
                nu_pre: 0.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn separated_classes_give_zero_entropy() {
        let tc = classifier(vec![scalar_model(1, -1e4, 1.0), scalar_model(2, 1e4, 1.0)]);
        let val = dataset(&[(-1e4, 1), (1e4, 2)]);
        assert!(conditional_entropy(1e6, &tc, &val).unwrap() < 1e-300);
    }

    #[test]
    fn identical_classes_give_log_c() {
        let tc = classifier(vec![
            scalar_model(1, 0.0, 1.0),
            scalar_model(2, 0.0, 1.0),
            scalar_model(5, 0.0, 1.0),
        ]);
        let val = dataset(&[(0.3, 1), (-2.0, 2), (7.0, 5)]);
        for nu in [0.01, 1.0, 300.0] {
            assert!((conditional_entropy(nu, &tc, &val).unwrap() - 3f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn entropy_matches_direct_evaluation() {
        let tc = classifier(vec![scalar_model(1, 0.0, 2.0), scalar_model(2, 1.5, 0.5)]);
        let val = dataset(&[(0.1, 1), (1.0, 2), (2.5, 1)]);
        let nu: f64 = 0.7;
        let lg = |v: f64| crate::numerics::log_gamma(v).unwrap();
        // ⟨Σ⟩ = W / (η − D − 1) = W / 3.
        let dens = |x: f64, m: f64, w: f64| {
            let s2 = w / 3.0;
            (lg(0.5 * (nu + 1.0))
                - lg(0.5 * nu)
                - 0.5 * (std::f64::consts::PI * nu * s2).ln()
                - 0.5 * (nu + 1.0) * (1.0 + (x - m).powi(2) / (s2 * nu)).ln())
            .exp()
        };
        let mut want = 0.0;
        for (x, c) in [(0.1, 0), (1.0, 1), (2.5, 0)] {
            let p = [dens(x, 0.0, 2.0), dens(x, 1.5, 0.5)];
            want -= (p[c] / (p[0] + p[1])).ln();
        }
        want /= 3.0;
        assert!((conditional_entropy(nu, &tc, &val).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn entropy_rejects_empty_or_unknown() {
        let tc = classifier(vec![scalar_model(1, 0.0, 1.0), scalar_model(2, 1.0, 1.0)]);
        assert!(conditional_entropy(1.0, &tc, &FeatureDataset::empty(1)).is_err());
        assert!(conditional_entropy(1.0, &tc, &dataset(&[(0.0, 3)])).is_err());
    }

    fn student_data(nu: f64, n: usize, seed: u64, gap: f64) -> FeatureDataset {
        let mut out = FeatureDataset::empty(2);
        for (id, center) in [(1u32, [0.0, 0.0]), (2, [gap, gap])] {
            let cm = ClassModel::new(
                id,
                vec![ComponentPosterior {
                    alpha: 1.0,
                    beta: 1.0,
                    m: center.to_vec(),
                    w: PsdMatrix::identity(2).scaled(2.0),
                    eta: 5.0,
                    nu,
                }],
            )
            .unwrap();
            let xs = sample(&cm, n / 2, seed + u64::from(id)).unwrap();
            for x in xs.rows() {
                out.push(x, id, 1, 1).unwrap();
            }
        }
        out
    }

    #[test]
    fn heavy_tailed_data_picks_small_nu() {
        let data = student_data(2.0, 400, 3, 3.0);
        let prior = build_default_prior(&data, 200.0, 1, 0.001).unwrap();
        let sel = select_nu(&data, &prior, &NuSearchConfig::default()).unwrap();
        assert!(sel.nu <= 10.0, "nu = {}", sel.nu);
    }

    #[test]
    fn gaussian_data_picks_large_nu() {
        let data = student_data(1e6, 400, 4, 6.0);
        let prior = build_default_prior(&data, 200.0, 1, 0.001).unwrap();
        let sel = select_nu(&data, &prior, &NuSearchConfig::default()).unwrap();
        assert!(sel.nu >= 10.0, "nu = {}", sel.nu);
    }

    #[test]
    fn single_point_grid() {
        let data = student_data(3.0, 60, 1, 3.0);
        let prior = build_default_prior(&data, 200.0, 1, 0.001).unwrap();
        let cfg = NuSearchConfig {
            grid: vec![0.37],
            ..Default::default()
        };
        let sel = select_nu(&data, &prior, &cfg).unwrap();
        assert_eq!(sel.nu, 0.37);
        assert_eq!(sel.folds.len(), 5);
    }

    #[test]
    fn selection_is_deterministic_and_tabulated() {
        let data = student_data(1.0, 100, 8, 3.0);
        let prior = build_default_prior(&data, 200.0, 2, 0.001).unwrap();
        let cfg = NuSearchConfig {
            grid: log_grid(0.01, 100.0, 9),
            seed: 4,
            ..Default::default()
        };
        let a = select_nu(&data, &prior, &cfg).unwrap();
        assert_eq!(a, select_nu(&data, &prior, &cfg).unwrap());
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 5 * 9);
        assert!(text.starts_with("fold,nu,J\n1,0.01,"));
    }

    #[test]
    fn too_few_rows_per_class() {
        let data = dataset(&[(0.0, 1), (1.0, 1), (2.0, 1), (5.0, 2), (6.0, 2)]);
        assert!(stratified_folds(&data, 3, 0).is_err());
        assert!(stratified_folds(&data, 2, 0).is_ok());
    }

    #[test]
    fn ties_keep_the_smaller_value() {
        assert_eq!(argmin(&[0.5, 0.2, 0.2, 0.3]), 1);
        assert_eq!(argmin(&[0.0, 0.0]), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn folds_are_stratified(sizes in proptest::collection::vec(5usize..40, 1..5), folds in 2usize..6, seed in 0u64..1000) {
            let mut rows = Vec::new();
            for (c, &n) in sizes.iter().enumerate() {
                for i in 0..n {
                    rows.push((i as f64 + 0.01 * c as f64, c as u32 + 1));
                }
            }
            let data = dataset(&rows);
            let assignment = stratified_folds(&data, folds, seed).unwrap();
            for (c, &n) in sizes.iter().enumerate() {
                for f in 0..folds {
                    let count = (0..data.len())
                        .filter(|&i| data.labels()[i] == c as u32 + 1 && assignment[i] == f)
                        .count();
                    let share = n as f64 / folds as f64;
                    prop_assert!((count as f64 - share).abs() < 1.0);
                }
            }
        }

        #[test]
        fn entropy_is_finite_and_nonnegative(nu in 1e-3f64..1e4, x in -1e3f64..1e3) {
            let tc = classifier(vec![scalar_model(1, 0.0, 2.0), scalar_model(2, 1.5, 0.5)]);
            let j = conditional_entropy(nu, &tc, &dataset(&[(x, 1), (-x, 2)])).unwrap();
            prop_assert!(j.is_finite() && j >= 0.0);
        }

        #[test]
        fn selection_is_a_grid_member(seed in 0u64..50, n in 4usize..9) {
            let data = student_data(2.0, 40, seed, 2.0);
            let prior = build_default_prior(&data, 200.0, 1, 0.001).unwrap();
            let cfg = NuSearchConfig { grid: log_grid(0.05, 50.0, n), seed, folds: 4, ..Default::default() };
            let sel = select_nu(&data, &prior, &cfg).unwrap();
            prop_assert!(cfg.grid.contains(&sel.nu));
        }
    }
}
