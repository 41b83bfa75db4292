//! Prior and posterior parameter records, the data-driven default prior and
//! JSON persistence of trained classifiers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::numerics::{cholesky, PsdMatrix};
use crate::predict::ClassPredictive;

pub const FORMAT_NAME: &str = "scalemix-model";
pub const FORMAT_VERSION: u32 = 1;

/// Conjugate prior shared by every component of every class, plus the
/// fixed degrees of freedom and the initial component count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorHyperparameters {
    pub alpha0: f64,
    pub beta0: f64,
    pub m0: Vec<f64>,
    pub w0: PsdMatrix,
    pub eta0: f64,
    pub nu_fixed: f64,
    pub k_init: usize,
}

impl PriorHyperparameters {
    pub fn dim(&self) -> usize {
        self.m0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("prior mean is empty"));
        }
        if self.w0.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.w0.dim(),
            });
        }
        for (name, v) in [
            ("alpha0", self.alpha0),
            ("beta0", self.beta0),
            ("nu_fixed", self.nu_fixed),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.eta0 > d as f64 - 1.0) || !self.eta0.is_finite() {
            return Err(Error::invalid(format!(
                "eta0 must exceed D - 1 = {}, got {}",
                d - 1,
                self.eta0
            )));
        }
        if self.k_init == 0 {
            return Err(Error::invalid("k_init must be at least 1"));
        }
        if self.m0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prior mean".into()));
        }
        cholesky(&self.w0)?;
        Ok(())
    }

    /// Copy with a different fixed degrees of freedom.
    pub fn with_nu(&self, nu: f64) -> Self {
        PriorHyperparameters {
            nu_fixed: nu,
            ..self.clone()
        }
    }

    /// The posterior a component holds when it has seen no data.
    pub fn as_posterior(&self) -> ComponentPosterior {
        ComponentPosterior {
            alpha: self.alpha0,
            beta: self.beta0,
            m: self.m0.clone(),
            w: self.w0.clone(),
            eta: self.eta0,
            nu: self.nu_fixed,
        }
    }
}

/// Prior centred on the pooled training data: β₀ = 1, η₀ = D + 1, m₀ the
/// sample mean and W₀ the unbiased sample covariance.
///
/// Rows are summed in a canonical order so the result does not depend on
/// the order of the dataset. A singular covariance gets 1e-8·trace/D added
/// to its diagonal (1e-8 when the trace is zero).
pub fn build_default_prior(
    data: &FeatureDataset,
    nu_fixed: f64,
    k_init: usize,
    alpha0: f64,
) -> Result<PriorHyperparameters> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = data.dim();
    let order = data.canonical_order();
    let n = order.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in &order {
        for (m, x) in mean.iter_mut().zip(data.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = PsdMatrix::symmetrized(d, vec![0.0; d * d]);
    let mut diff = vec![0.0; d];
    for &i in &order {
        for ((o, x), m) in diff.iter_mut().zip(data.row(i)).zip(&mean) {
            *o = x - m;
        }
        cov.add_outer(&diff, 1.0);
    }
    let denom = if order.len() > 1 { n - 1.0 } else { 1.0 };
    let mut w0 = cov.scaled(1.0 / denom);
    if !well_conditioned(&w0) {
        let trace = w0.trace();
        let jitter = if trace > 0.0 {
            1e-8 * trace / d as f64
        } else {
            1e-8
        };
        w0.add_diagonal(jitter);
        if !well_conditioned(&w0) {
            // Zero-variance features alongside large ones: lift each zero
            // diagonal entry to the same jitter.
            for j in 0..d {
                if w0.get(j, j) <= jitter {
                    let mut e = w0.as_slice().to_vec();
                    e[j * d + j] += jitter;
                    w0 = PsdMatrix::symmetrized(d, e);
                }
            }
            cholesky(&w0)?;
        }
    }
    let prior = PriorHyperparameters {
        alpha0,
        beta0: 1.0,
        m0: mean,
        w0,
        eta0: d as f64 + 1.0,
        nu_fixed,
        k_init,
    };
    prior.validate()?;
    Ok(prior)
}

/// Factorizes with every squared pivot above 1e-12 of the largest diagonal entry.
fn well_conditioned(m: &PsdMatrix) -> bool {
    let scale = (0..m.dim()).fold(0.0_f64, |a, i| a.max(m.get(i, i)));
    match cholesky(m) {
        Ok(f) => (0..m.dim()).all(|i| f.get(i, i).powi(2) > 1e-12 * scale),
        Err(_) => false,
    }
}

/// Variational posterior of one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPosterior {
    pub alpha: f64,
    pub beta: f64,
    pub m: Vec<f64>,
    pub w: PsdMatrix,
    pub eta: f64,
    pub nu: f64,
}

/// Surviving components of one class plus training bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub class_id: u32,
    pub components: Vec<ComponentPosterior>,
    pub alpha_hat: f64,
    pub elbo_trace: Vec<f64>,
    pub n_pruned: usize,
    pub converged: bool,
}

impl ClassModel {
    pub fn new(class_id: u32, components: Vec<ComponentPosterior>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid(format!("class {class_id} has no components")));
        }
        let alpha_hat = components.iter().map(|c| c.alpha).sum();
        Ok(ClassModel {
            class_id,
            components,
            alpha_hat,
            elbo_trace: Vec::new(),
            n_pruned: 0,
            converged: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].m.len()
    }
}

/// Per-component sufficient statistics of one M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStatistics {
    /// Effective counts Σₙ rₙₖ.
    pub n: Vec<f64>,
    /// Scale-weighted counts Σₙ rₙₖ⟨u⁻¹⟩ₙₖ.
    pub omega: Vec<f64>,
    pub xbar: Vec<Vec<f64>>,
    pub scatter: Vec<PsdMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassPriorPolicy {
    #[default]
    Uniform,
    Empirical,
}

impl ClassPriorPolicy {
    /// ln p(c) for each class given its training row count.
    pub fn log_prior(self, counts: &[usize]) -> Vec<f64> {
        match self {
            ClassPriorPolicy::Uniform => {
                let v = -(counts.len() as f64).ln();
                vec![v; counts.len()]
            }
            ClassPriorPolicy::Empirical => {
                let total: usize = counts.iter().sum();
                let lt = (total as f64).ln();
                counts.iter().map(|&c| (c as f64).ln() - lt).collect()
            }
        }
    }
}

/// All class models, the class prior and a prediction cache.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    classes: Vec<ClassModel>,
    class_log_prior: Vec<f64>,
    dim: usize,
    prior: PriorHyperparameters,
    predictive: Vec<ClassPredictive>,
}

impl TrainedClassifier {
    /// Classes are stored in ascending class id order.
    pub fn new(
        mut classes: Vec<ClassModel>,
        class_log_prior: Vec<f64>,
        prior: PriorHyperparameters,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("a classifier needs at least one class"));
        }
        if class_log_prior.len() != classes.len() {
            return Err(Error::DimensionMismatch {
                expected: classes.len(),
                found: class_log_prior.len(),
            });
        }
        let mut paired: Vec<(ClassModel, f64)> = classes.drain(..).zip(class_log_prior).collect();
        paired.sort_by_key(|(c, _)| c.class_id);
        if paired.windows(2).any(|w| w[0].0.class_id == w[1].0.class_id) {
            return Err(Error::invalid("duplicate class id"));
        }
        let (classes, class_log_prior): (Vec<_>, Vec<_>) = paired.into_iter().unzip();
        let dim = prior.dim();
        for c in &classes {
            if c.components.is_empty() {
                return Err(Error::invalid(format!("class {} has no components", c.class_id)));
            }
            for comp in &c.components {
                if comp.m.len() != dim || comp.w.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: comp.m.len(),
                    });
                }
            }
        }
        if class_log_prior.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("class log prior".into()));
        }
        let predictive = classes
            .iter()
            .map(|c| ClassPredictive::new(c, None))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainedClassifier {
            classes,
            class_log_prior,
            dim,
            prior,
            predictive,
        })
    }

    pub fn classes(&self) -> &[ClassModel] {
        &self.classes
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.class_id).collect()
    }

    pub fn class_log_prior(&self) -> &[f64] {
        &self.class_log_prior
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prior(&self) -> &PriorHyperparameters {
        &self.prior
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub(crate) fn predictive(&self) -> &[ClassPredictive] {
        &self.predictive
    }

    pub fn converged(&self) -> bool {
        self.classes.iter().all(|c| c.converged)
    }

    /// Same posteriors with every component's ν replaced.
    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        let mut classes = self.classes.clone();
        for c in &mut classes {
            for comp in &mut c.components {
                comp.nu = nu;
            }
        }
        TrainedClassifier::new(classes, self.class_log_prior.clone(), self.prior.with_nu(nu))
    }

    /// Same posteriors with the class prior shifted by a constant.
    pub fn with_class_log_prior(&self, class_log_prior: Vec<f64>) -> Result<Self> {
        TrainedClassifier::new(self.classes.clone(), class_log_prior, self.prior.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format: FORMAT_NAME.to_string(),
            format_version: FORMAT_VERSION,
            dim: self.dim,
            prior: self.prior.clone(),
            class_log_prior: self.class_log_prior.clone(),
            classes: self.classes.clone(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if doc.format != FORMAT_NAME {
            return Err(Error::Model(format!("unknown format {:?}", doc.format)));
        }
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format version {}",
                doc.format_version
            )));
        }
        if doc.dim != doc.prior.dim() {
            return Err(Error::Model(format!(
                "dim {} disagrees with prior mean length {}",
                doc.dim,
                doc.prior.dim()
            )));
        }
        for c in &doc.classes {
            for comp in &c.components {
                if comp.w.as_slice().len() != doc.dim * doc.dim {
                    return Err(Error::Model(format!(
                        "class {}: W has {} entries, expected {}",
                        c.class_id,
                        comp.w.as_slice().len(),
                        doc.dim * doc.dim
                    )));
                }
                PsdMatrix::new(doc.dim, comp.w.as_slice().to_vec())
                    .map_err(|e| Error::Model(format!("class {}: {e}", c.class_id)))?;
            }
            let sum: f64 = c.components.iter().map(|k| k.alpha).sum();
            if (sum - c.alpha_hat).abs() > 1e-10 * sum.abs().max(1.0) {
                return Err(Error::Model(format!(
                    "class {}: alpha_hat {} is not the sum of component alphas {sum}",
                    c.class_id, c.alpha_hat
                )));
            }
        }
        TrainedClassifier::new(doc.classes, doc.class_log_prior, doc.prior)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk layout. Floats are written in shortest round-trip form, so a
/// save/load cycle reproduces every parameter bit for bit.
#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    format_version: u32,
    dim: usize,
    prior: PriorHyperparameters,
    class_log_prior: Vec<f64>,
    classes: Vec<ClassModel>,
}
