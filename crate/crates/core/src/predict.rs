//! Plug-in Student-t predictive densities, class posteriors, hard
//! classification and ancestral sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::data::FeatureMatrix;
use crate::density::{student_log_kernel, student_log_normalizer};
use crate::error::{Error, Result};
use crate::model::{ClassModel, TrainedClassifier};
use crate::numerics::{cholesky, CholeskyFactor};

/// Normalized class log-probabilities for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPosterior {
    pub log_probs: Vec<f64>,
    /// Index into `log_probs`; ties go to the lowest index.
    pub argmax: usize,
}

impl ClassPosterior {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|v| v.exp()).collect()
    }
}

/// Student-t with the posterior expectations ⟨π⟩, ⟨μ⟩, ⟨Σ⟩ plugged in.
#[derive(Debug, Clone)]
pub(crate) struct ComponentPredictive {
    log_weight: f64,
    log_norm: f64,
    nu: f64,
    mean: Vec<f64>,
    chol: CholeskyFactor,
}

#[derive(Debug, Clone)]
pub(crate) struct ClassPredictive {
    dim: usize,
    components: Vec<ComponentPredictive>,
}

impl ClassPredictive {
    /// `nu` replaces every component's degrees of freedom when given.
    pub(crate) fn new(cm: &ClassModel, nu: Option<f64>) -> Result<Self> {
        if cm.components.is_empty() {
            return Err(Error::invalid(format!("class {} has no components", cm.class_id)));
        }
        let dim = cm.dim();
        let d = dim as f64;
        let components = cm
            .components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let dof = c.eta - d - 1.0;
                if !(dof > 0.0) {
                    return Err(Error::Component {
                        component: k,
                        message: format!(
                            "class {}: eta = {} must exceed D + 1 = {} for a finite mean covariance",
                            cm.class_id,
                            c.eta,
                            d + 1.0
                        ),
                    });
                }
                let sigma = c.w.scaled(1.0 / dof);
                let chol = cholesky(&sigma).map_err(|e| Error::Component {
                    component: k,
                    message: format!("class {}: {e}", cm.class_id),
                })?;
                let nu = nu.unwrap_or(c.nu);
                Ok(ComponentPredictive {
                    log_weight: (c.alpha / cm.alpha_hat).ln(),
                    log_norm: student_log_normalizer(nu, dim, chol.log_det())?,
                    nu,
                    mean: c.m.clone(),
                    chol,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassPredictive { dim, components })
    }

    /// ln p_c(x); `scratch` must hold at least D entries.
    pub(crate) fn log_density(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let diff = &mut scratch[..self.dim];
        let mut best = f64::NEG_INFINITY;
        let mut terms = [0.0f64; 16];
        let many = self.components.len() > terms.len();
        let mut spill = if many {
            vec![0.0; self.components.len()]
        } else {
            Vec::new()
        };
        for (k, c) in self.components.iter().enumerate() {
            for ((o, a), b) in diff.iter_mut().zip(x).zip(&c.mean) {
                *o = a - b;
            }
            let delta = c.chol.inverse_quad_form_in_place(diff);
            let t = c.log_weight + student_log_kernel(c.log_norm, c.nu, self.dim, delta);
            if many {
                spill[k] = t;
            } else {
                terms[k] = t;
            }
            if t > best {
                best = t;
            }
        }
        if !best.is_finite() {
            return best;
        }
        let ts = if many {
            &spill[..]
        } else {
            &terms[..self.components.len()]
        };
        best + ts.iter().map(|t| (t - best).exp()).sum::<f64>().ln()
    }
}

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input vector".into()));
    }
    Ok(())
}

/// ln p_c(x) = logsumexp_k [ln⟨π_k⟩ + ln St(x | m_k, W_k/(η_k − D − 1), ν_k)].
pub fn class_log_predictive(x: &[f64], cm: &ClassModel) -> Result<f64> {
    let p = ClassPredictive::new(cm, None)?;
    check_dim(p.dim, x)?;
    let mut scratch = vec![0.0; p.dim];
    Ok(p.log_density(x, &mut scratch))
}

fn posterior_from_predictive(
    predictive: &[ClassPredictive],
    class_log_prior: &[f64],
    x: &[f64],
    scratch: &mut [f64],
) -> Result<ClassPosterior> {
    let mut log_probs: Vec<f64> = predictive
        .iter()
        .zip(class_log_prior)
        .map(|(p, lp)| p.log_density(x, scratch) + lp)
        .collect();
    let norm = crate::numerics::log_sum_exp(&log_probs);
    if !norm.is_finite() {
        return Err(Error::NonFinite("class evidence".into()));
    }
    let mut argmax = 0;
    for i in 1..log_probs.len() {
        if log_probs[i] > log_probs[argmax] {
            argmax = i;
        }
    }
    log_probs.iter_mut().for_each(|v| *v -= norm);
    Ok(ClassPosterior { log_probs, argmax })
}

/// p(c | x) over the classifier's classes (ascending class id).
pub fn class_posterior(x: &[f64], tc: &TrainedClassifier) -> Result<ClassPosterior> {
    check_dim(tc.dim(), x)?;
    let mut scratch = vec![0.0; tc.dim()];
    posterior_from_predictive(tc.predictive(), tc.class_log_prior(), x, &mut scratch)
}

/// Class id with the largest posterior; ties go to the lowest id.
pub fn classify(x: &[f64], tc: &TrainedClassifier) -> Result<u32> {
    let post = class_posterior(x, tc)?;
    Ok(tc.classes()[post.argmax].class_id)
}

/// Posteriors for every row, in row order.
pub fn predict_batch(rows: &FeatureMatrix, tc: &TrainedClassifier) -> Result<Vec<ClassPosterior>> {
    if rows.dim() != tc.dim() {
        return Err(Error::DimensionMismatch {
            expected: tc.dim(),
            found: rows.dim(),
        });
    }
    let results: Vec<Result<ClassPosterior>> = (0..rows.len())
        .into_par_iter()
        .with_min_len(256)
        .map_init(
            || vec![0.0; tc.dim()],
            |scratch, i| {
                let x = rows.row(i);
                check_dim(tc.dim(), x)?;
                posterior_from_predictive(tc.predictive(), tc.class_log_prior(), x, scratch)
            },
        )
        .collect();
    results.into_iter().collect()
}

/// Reusable single-thread scorer that avoids per-call allocation.
pub struct Scorer<'a> {
    tc: &'a TrainedClassifier,
    scratch: Vec<f64>,
    log_probs: Vec<f64>,
}

impl<'a> Scorer<'a> {
    pub fn new(tc: &'a TrainedClassifier) -> Self {
        Scorer {
            tc,
            scratch: vec![0.0; tc.dim()],
            log_probs: vec![0.0; tc.num_classes()],
        }
    }

    /// Class id of the maximum-posterior class.
    pub fn classify(&mut self, x: &[f64]) -> Result<u32> {
        check_dim(self.tc.dim(), x)?;
        let mut best = 0;
        for (i, (p, lp)) in self
            .tc
            .predictive()
            .iter()
            .zip(self.tc.class_log_prior())
            .enumerate()
        {
            self.log_probs[i] = p.log_density(x, &mut self.scratch) + lp;
            if self.log_probs[i] > self.log_probs[best] {
                best = i;
            }
        }
        if !self.log_probs[best].is_finite() {
            return Err(Error::NonFinite("class evidence".into()));
        }
        Ok(self.tc.classes()[best].class_id)
    }
}

/// Ancestral draws: k ~ Cat(⟨π⟩), u ~ IG(ν/2, ν/2), x ~ N(⟨μ⟩_k, u⟨Σ⟩_k).
/// Returns the rows and the component index behind each row.
pub fn sample_with_components(
    cm: &ClassModel,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(FeatureMatrix, Vec<usize>)> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let pred = ClassPredictive::new(cm, None)?;
    let dim = pred.dim;
    let weights: Vec<f64> = cm.components.iter().map(|c| c.alpha / cm.alpha_hat).collect();
    let gammas = pred
        .components
        .iter()
        .map(|c| {
            Gamma::new(0.5 * c.nu, 2.0 / c.nu).map_err(|_| Error::Domain {
                function: "sample (gamma shape)",
                value: c.nu,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = FeatureMatrix::with_dim(dim);
    let mut which = Vec::with_capacity(n);
    let mut z = vec![0.0; dim];
    let mut x = vec![0.0; dim];
    for _ in 0..n {
        let pick: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = weights.len() - 1;
        for (j, w) in weights.iter().enumerate() {
            acc += w;
            if pick < acc {
                k = j;
                break;
            }
        }
        let c = &pred.components[k];
        // Inverse-gamma scale as the reciprocal of a Gamma(ν/2, rate ν/2) draw.
        let precision: f64 = gammas[k].sample(rng);
        let scale = (1.0 / precision).sqrt();
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for (i, xi) in x.iter_mut().enumerate() {
            let lz: f64 = (0..=i).map(|j| c.chol.get(i, j) * z[j]).sum();
            *xi = c.mean[i] + scale * lz;
        }
        out.push(&x)?;
        which.push(k);
    }
    Ok((out, which))
}

/// `n` ancestral draws from a class model, reproducible per seed.
pub fn sample(cm: &ClassModel, n: usize, seed: u64) -> Result<FeatureMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_with_components(cm, n, &mut rng)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{log_marginal_density, StudentParams};
    use crate::model::{ComponentPosterior, PriorHyperparameters};
    use crate::numerics::PsdMatrix;
    use proptest::prelude::{prop_assert, proptest};

    fn comp(alpha: f64, m: Vec<f64>, w: PsdMatrix, eta: f64, nu: f64) -> ComponentPosterior {
        ComponentPosterior {
            alpha,
            beta: 1.0,
            m,
            w,
            eta,
            nu,
        }
    }

    fn prior(dim: usize) -> PriorHyperparameters {
        PriorHyperparameters {
            alpha0: 1.0,
            beta0: 1.0,
            m0: vec![0.0; dim],
            w0: PsdMatrix::identity(dim),
            eta0: dim as f64 + 1.0,
            nu_fixed: 5.0,
            k_init: 1,
        }
    }

    fn two_classes(a: ClassModel, b: ClassModel) -> TrainedClassifier {
        let dim = a.dim();
        TrainedClassifier::new(vec![a, b], vec![-(2f64.ln()); 2], prior(dim)).unwrap()
    }

    fn mirrored() -> TrainedClassifier {
        let w = PsdMatrix::new(2, vec![3.0, 0.5, 0.5, 3.0]).unwrap();
        let a = ClassModel::new(1, vec![comp(4.0, vec![1.0, 0.0], w.clone(), 6.0, 2.0)]).unwrap();
        let b = ClassModel::new(2, vec![comp(4.0, vec![0.0, 1.0], w, 6.0, 2.0)]).unwrap();
        two_classes(a, b)
    }

    #[test]
    fn center_value_is_the_student_density() {
        let w = PsdMatrix::new(2, vec![4.0, 1.0, 1.0, 2.0]).unwrap();
        let cm = ClassModel::new(1, vec![comp(3.0, vec![0.5, -1.0], w.clone(), 7.0, 1.5)]).unwrap();
        let want = log_marginal_density(
            &[0.5, -1.0],
            &StudentParams::new(vec![0.5, -1.0], w.scaled(0.25), 1.5).unwrap(),
        )
        .unwrap();
        assert!((class_log_predictive(&[0.5, -1.0], &cm).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn zero_weight_component_is_ignored() {
        let first = comp(2.0, vec![0.0], PsdMatrix::diagonal(&[3.0]), 5.0, 4.0);
        let second = comp(0.0, vec![9.0], PsdMatrix::diagonal(&[0.1]), 5.0, 0.3);
        let mixed = ClassModel::new(1, vec![first.clone(), second]).unwrap();
        let alone = ClassModel::new(1, vec![first]).unwrap();
        for x in [-4.0, 0.0, 8.9, 9.0] {
            assert_eq!(
                class_log_predictive(&[x], &mixed).unwrap(),
                class_log_predictive(&[x], &alone).unwrap()
            );
        }
    }

    #[test]
    fn two_component_mixture_matches_reference() {
        let cm = ClassModel::new(
            1,
            vec![
                comp(2.0, vec![0.0], PsdMatrix::diagonal(&[2.0]), 4.0, 3.0),
                comp(5.0, vec![1.2], PsdMatrix::diagonal(&[0.7]), 6.0, 0.5),
            ],
        )
        .unwrap();
        // 50-digit direct sum of the weighted component densities.
        for (x, want) in [
            (0.4, -1.667_634_255_465_155_8),
            (2.0, -2.177_437_322_708_712),
            (-30.0, -7.760_579_186_021_509_5),
        ] {
            let got = class_log_predictive(&[x], &cm).unwrap();
            assert!((got - want).abs() < 1e-13, "x = {x}: {got}");
        }
    }

    #[test]
    fn small_eta_names_the_component() {
        let cm = ClassModel::new(
            3,
            vec![
                comp(1.0, vec![0.0, 0.0], PsdMatrix::identity(2), 5.0, 2.0),
                comp(1.0, vec![0.0, 0.0], PsdMatrix::identity(2), 3.0, 2.0),
            ],
        )
        .unwrap();
        match class_log_predictive(&[0.0, 0.0], &cm) {
            Err(Error::Component { component: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identical_classes_split_evenly() {
        let w = PsdMatrix::identity(2);
        let a = ClassModel::new(1, vec![comp(4.0, vec![1.0, 0.0], w.clone(), 6.0, 2.0)]).unwrap();
        let b = ClassModel::new(2, a.components.clone()).unwrap();
        let tc = two_classes(a, b);
        let p = class_posterior(&[3.0, -7.0], &tc).unwrap();
        assert!((p.log_probs[0] - 0.5f64.ln()).abs() < 1e-15);
        assert!((p.log_probs[1] - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(p.argmax, 0);
    }

    #[test]
    fn tie_goes_to_lowest_class_id() {
        let tc = mirrored();
        assert_eq!(classify(&[0.5, 0.5], &tc).unwrap(), 1);
        assert_eq!(classify(&[-3.0, -3.0], &tc).unwrap(), 1);
        assert_eq!(classify(&[0.0, 1.0], &tc).unwrap(), 2);
        assert_eq!(Scorer::new(&tc).classify(&[0.5, 0.5]).unwrap(), 1);
    }

    #[test]
    fn shifting_the_class_prior_changes_nothing() {
        let tc = mirrored();
        let shifted = tc.with_class_log_prior(vec![5.0, 5.0]).unwrap();
        for x in [[0.2, 0.9], [4.0, -2.0], [0.5, 0.5]] {
            assert_eq!(classify(&x, &tc).unwrap(), classify(&x, &shifted).unwrap());
            let (p, q) = (
                class_posterior(&x, &tc).unwrap(),
                class_posterior(&x, &shifted).unwrap(),
            );
            for (a, b) in p.log_probs.iter().zip(&q.log_probs) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let tc = mirrored();
        assert!(matches!(
            class_posterior(&[1.0], &tc),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
        let rows = FeatureMatrix::from_rows(3, &[[0.0; 3]]).unwrap();
        assert!(predict_batch(&rows, &tc).is_err());
    }

    #[test]
    fn batch_matches_single_calls() {
        let tc = mirrored();
        let pts: Vec<[f64; 2]> = (0..1000)
            .map(|i| [(i % 37) as f64 * 0.3 - 4.0, (i % 23) as f64 * 0.4 - 3.0])
            .collect();
        let rows = FeatureMatrix::from_rows(2, &pts).unwrap();
        let batch = predict_batch(&rows, &tc).unwrap();
        let mut scorer = Scorer::new(&tc);
        for (p, x) in batch.iter().zip(&pts) {
            assert_eq!(*p, class_posterior(x, &tc).unwrap());
            assert_eq!(tc.classes()[p.argmax].class_id, scorer.classify(x).unwrap());
        }
    }

    #[test]
    fn gaussian_limit_sample_mean() {
        let w = PsdMatrix::new(2, vec![4.0, 1.0, 1.0, 2.0]).unwrap();
        let cm = ClassModel::new(1, vec![comp(1.0, vec![2.0, -3.0], w, 4.0, 1e6)]).unwrap();
        let n = 20_000;
        let xs = sample(&cm, n, 5).unwrap();
        for (d, (&mu, var)) in [2.0, -3.0].iter().zip([4.0, 2.0]).enumerate() {
            let mean = xs.rows().map(|r| r[d]).sum::<f64>() / n as f64;
            assert!(
                (mean - mu).abs() < 4.0 * f64::sqrt(var / n as f64),
                "dim {d}: {mean}"
            );
        }
    }

    #[test]
    fn student_sample_covariance() {
        let w = PsdMatrix::new(2, vec![2.0, 0.6, 0.6, 1.0]).unwrap();
        let cm = ClassModel::new(1, vec![comp(1.0, vec![0.0, 0.0], w.clone(), 5.0, 3.0)]).unwrap();
        let n = 100_000;
        let xs = sample(&cm, n, 17).unwrap();
        let mean: Vec<f64> = (0..2)
            .map(|d| xs.rows().map(|r| r[d]).sum::<f64>() / n as f64)
            .collect();
        // ⟨Σ⟩ = W / 2, and a ν = 3 Student-t has covariance 3⟨Σ⟩.
        for (i, j) in [(0, 0), (1, 1), (0, 1)] {
            let cov = xs
                .rows()
                .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                .sum::<f64>()
                / (n - 1) as f64;
            let want = 3.0 * w.get(i, j) / 2.0;
            assert!((cov / want - 1.0).abs() < 0.1, "({i},{j}): {cov} vs {want}");
        }
    }

    #[test]
    fn mixture_draw_frequencies() {
        let w = PsdMatrix::identity(1);
        let cm = ClassModel::new(
            1,
            vec![
                comp(0.6, vec![0.0], w.clone(), 4.0, 2.0),
                comp(1.4, vec![5.0], w, 4.0, 2.0),
            ],
        )
        .unwrap();
        let n = 50_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, which) = sample_with_components(&cm, n, &mut rng).unwrap();
        let freq = which.iter().filter(|&&k| k == 0).count() as f64 / n as f64;
        assert!(
            (freq - 0.3).abs() < 3.0 * f64::sqrt(0.3 * 0.7 / n as f64),
            "{freq}"
        );
    }

    #[test]
    fn sampling_is_reproducible() {
        let cm = ClassModel::new(
            1,
            vec![comp(1.0, vec![1.0, 1.0], PsdMatrix::identity(2), 4.0, 0.4)],
        )
        .unwrap();
        assert_eq!(sample(&cm, 50, 9).unwrap(), sample(&cm, 50, 9).unwrap());
        assert_ne!(sample(&cm, 50, 9).unwrap(), sample(&cm, 50, 10).unwrap());
        assert!(sample(&cm, 0, 9).is_err());
    }

    proptest! {
        #[test]
        fn posteriors_normalize(x in -1e3f64..1e3, y in -1e3f64..1e3) {
            let p = class_posterior(&[x, y], &mirrored()).unwrap();
            let s: f64 = p.probs().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.log_probs[p.argmax] >= p.log_probs[1 - p.argmax]);
        }

        #[test]
        fn uniform_rescaling_keeps_the_argmax(x in -50f64..50.0, y in -50f64..50.0, shift in -300f64..300.0) {
            let tc = mirrored();
            let lp: Vec<f64> = tc.class_log_prior().iter().map(|v| v + shift).collect();
            let moved = tc.with_class_log_prior(lp).unwrap();
            prop_assert!(classify(&[x, y], &tc).unwrap() == classify(&[x, y], &moved).unwrap());
        }
    }
}
