//! Variational Bayesian learning of one scale-mixture model per class.
//!
//! Each iteration runs an E-step over the latent assignments and scales,
//! an M-step over the Dirichlet and Gaussian–inverse-Wishart posteriors,
//! records the evidence lower bound, then drops components whose effective
//! count has collapsed.

use std::f64::consts::{LN_2, PI};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::data::{FeatureDataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::{
    ClassModel, ClassPriorPolicy, ComponentPosterior, LatentStatistics, PriorHyperparameters,
    TrainedClassifier,
};
use crate::numerics::{
    cholesky, cholesky_with_jitter, digamma_unchecked, log_gamma_unchecked, log_sum_exp,
    multivariate_digamma, multivariate_log_gamma, CholeskyFactor, PsdMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    /// Dirichlet(1) responsibilities per row, then one M-step.
    #[default]
    RandomResponsibility,
    /// Hard assignment to the nearest of K randomly picked rows.
    KMeansLike,
}

/// How the degrees of freedom are treated during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NuMode {
    /// Every component uses the prior's fixed ν.
    #[default]
    Fixed,
    /// Experimental: each component's ν maximizes the bound after every
    /// M-step (1-D search on ln ν over [1e-3, 1e4]).
    MaxLikelihood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbConfig {
    pub max_iters: usize,
    pub elbo_rel_tol: f64,
    pub prune_threshold: f64,
    pub seed: u64,
    pub init_strategy: InitStrategy,
    pub nu_mode: NuMode,
    pub class_prior: ClassPriorPolicy,
}

impl Default for VbConfig {
    fn default() -> Self {
        VbConfig {
            max_iters: 500,
            elbo_rel_tol: 1e-6,
            prune_threshold: 1e-3,
            seed: 0,
            init_strategy: InitStrategy::default(),
            nu_mode: NuMode::default(),
            class_prior: ClassPriorPolicy::default(),
        }
    }
}

impl VbConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.elbo_rel_tol > 0.0) || !(self.prune_threshold > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        Ok(())
    }
}

/// q(z, u) for every row: assignment probabilities r and the inverse-gamma
/// shape a and rate b of each row's scale under each component.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    k: usize,
    pub r: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// ln Σₖ ρₙₖ per row, the normalizer of the E-step.
    pub log_evidence: Vec<f64>,
}

impl Responsibilities {
    pub fn from_parts(k: usize, r: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if k == 0 || !r.len().is_multiple_of(k) || a.len() != r.len() || b.len() != r.len() {
            return Err(Error::invalid("responsibility matrices have inconsistent shapes"));
        }
        if a.iter().chain(&b).any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("inverse-gamma parameters must be positive"));
        }
        let n = r.len() / k;
        Ok(Responsibilities {
            k,
            r,
            a,
            b,
            log_evidence: vec![f64::NAN; n],
        })
    }

    pub fn rows(&self) -> usize {
        self.r.len() / self.k.max(1)
    }

    pub fn components(&self) -> usize {
        self.k
    }

    pub fn r(&self, n: usize, k: usize) -> f64 {
        self.r[n * self.k + k]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.r[n * self.k..(n + 1) * self.k]
    }

    /// Σₙ rₙₖ per component.
    pub fn effective_counts(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.k];
        for row in self.r.chunks_exact(self.k) {
            for (c, v) in counts.iter_mut().zip(row) {
                *c += v;
            }
        }
        counts
    }
}

/// Per-point expectations under one component's posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectations {
    /// ⟨ln |Σ|⟩
    pub log_sigma_tilde: f64,
    /// ⟨(x − μ)ᵀ Σ⁻¹ (x − μ)⟩
    pub delta_sq_expect: f64,
    /// ⟨ln π⟩
    pub log_pi_tilde: f64,
}

/// Quantities of one component that do not depend on the data point.
struct ComponentTerms {
    w_chol: CholeskyFactor,
    log_det_w: f64,
    log_sigma_tilde: f64,
    log_pi_tilde: f64,
    /// ln Γ((ν+D)/2) − ln Γ(ν/2) − (D/2) ln(πν)
    student_const: f64,
}

fn component_terms(c: &ComponentPosterior, alpha_hat: f64, dim: usize) -> Result<ComponentTerms> {
    let d = dim as f64;
    if !(c.eta + 1.0 - d > 0.0) {
        return Err(Error::Domain {
            function: "digamma ((eta + 1 - D) / 2)",
            value: 0.5 * (c.eta + 1.0 - d),
        });
    }
    for (function, value) in [
        ("component alpha", c.alpha),
        ("component beta", c.beta),
        ("component nu", c.nu),
    ] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::Domain { function, value });
        }
    }
    if c.m.len() != dim || c.w.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: c.m.len(),
        });
    }
    let (w_chol, _) = cholesky_with_jitter(&c.w)?;
    let log_det_w = w_chol.log_det();
    let log_sigma_tilde = -multivariate_digamma(0.5 * c.eta, dim) - d * LN_2 + log_det_w;
    let log_pi_tilde = digamma_unchecked(c.alpha) - digamma_unchecked(alpha_hat);
    let student_const =
        log_gamma_unchecked(0.5 * (c.nu + d)) - log_gamma_unchecked(0.5 * c.nu) - 0.5 * d * (PI * c.nu).ln();
    Ok(ComponentTerms {
        w_chol,
        log_det_w,
        log_sigma_tilde,
        log_pi_tilde,
        student_const,
    })
}

fn delta_sq_expect(c: &ComponentPosterior, t: &ComponentTerms, x: &[f64], diff: &mut [f64]) -> f64 {
    for ((o, a), b) in diff.iter_mut().zip(x).zip(&c.m) {
        *o = a - b;
    }
    x.len() as f64 / c.beta + c.eta * t.w_chol.inverse_quad_form_in_place(diff)
}

/// ⟨ln |Σ|⟩, ⟨Δ²⟩ at `x` and ⟨ln π⟩ for one component; `alpha_hat` is the
/// sum of the class's Dirichlet parameters.
pub fn expectations(c: &ComponentPosterior, alpha_hat: f64, x: &[f64]) -> Result<Expectations> {
    let dim = c.m.len();
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: x.len(),
        });
    }
    let t = component_terms(c, alpha_hat, dim)?;
    let mut diff = vec![0.0; dim];
    Ok(Expectations {
        log_sigma_tilde: t.log_sigma_tilde,
        delta_sq_expect: delta_sq_expect(c, &t, x, &mut diff),
        log_pi_tilde: t.log_pi_tilde,
    })
}

fn alpha_hat(components: &[ComponentPosterior]) -> f64 {
    components.iter().map(|c| c.alpha).sum()
}

/// Updates q(z, u) for every row given the current component posteriors.
pub fn e_step(data: &FeatureMatrix, components: &[ComponentPosterior]) -> Result<Responsibilities> {
    if components.is_empty() {
        return Err(Error::invalid("E-step needs at least one component"));
    }
    let dim = data.dim();
    let k = components.len();
    let ah = alpha_hat(components);
    let terms = components
        .iter()
        .enumerate()
        .map(|(j, c)| {
            component_terms(c, ah, dim).map_err(|e| Error::Component {
                component: j,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len();
    let mut r = vec![0.0; n * k];
    let mut a = vec![0.0; n * k];
    let mut b = vec![0.0; n * k];
    let mut log_evidence = vec![0.0; n];
    r.par_chunks_mut(k)
        .zip(a.par_chunks_mut(k))
        .zip(b.par_chunks_mut(k))
        .zip(log_evidence.par_iter_mut())
        .enumerate()
        .with_min_len(64)
        .for_each_init(
            || vec![0.0; dim],
            |diff, (i, (((r_row, a_row), b_row), ev))| {
                let x = data.row(i);
                for j in 0..k {
                    let c = &components[j];
                    let t = &terms[j];
                    let delta = delta_sq_expect(c, t, x, diff);
                    let half = 0.5 * (c.nu + dim as f64);
                    r_row[j] = t.student_const + t.log_pi_tilde
                        - 0.5 * t.log_sigma_tilde
                        - half * (delta / c.nu).ln_1p();
                    a_row[j] = half;
                    b_row[j] = 0.5 * (delta + c.nu);
                }
                let norm = log_sum_exp(r_row);
                *ev = norm;
                if norm.is_finite() {
                    r_row.iter_mut().for_each(|v| *v = (*v - norm).exp());
                }
            },
        );
    if let Some(row) = log_evidence.iter().position(|v| !v.is_finite()) {
        return Err(Error::DegenerateRow { row });
    }
    Ok(Responsibilities {
        k,
        r,
        a,
        b,
        log_evidence,
    })
}

/// Sufficient statistics of one component, summed in row order.
fn component_statistics(
    data: &FeatureMatrix,
    resp: &Responsibilities,
    k: usize,
) -> (f64, f64, Vec<f64>, PsdMatrix) {
    let dim = data.dim();
    let mut n_eff = 0.0;
    let mut omega = 0.0;
    let mut xbar = vec![0.0; dim];
    for i in 0..resp.rows() {
        let idx = i * resp.k + k;
        let r = resp.r[idx];
        let w = r * resp.a[idx] / resp.b[idx];
        n_eff += r;
        omega += w;
        for (s, x) in xbar.iter_mut().zip(data.row(i)) {
            *s += w * x;
        }
    }
    let mut scatter = PsdMatrix::symmetrized(dim, vec![0.0; dim * dim]);
    if omega > 0.0 {
        xbar.iter_mut().for_each(|v| *v /= omega);
        let mut diff = vec![0.0; dim];
        for i in 0..resp.rows() {
            let idx = i * resp.k + k;
            let w = resp.r[idx] * resp.a[idx] / resp.b[idx];
            if w == 0.0 {
                continue;
            }
            for ((o, x), m) in diff.iter_mut().zip(data.row(i)).zip(&xbar) {
                *o = x - m;
            }
            scatter.add_outer(&diff, w);
        }
        scatter = PsdMatrix::symmetrized(dim, scatter.scaled(1.0 / omega).as_slice().to_vec());
    }
    (n_eff, omega, xbar, scatter)
}

fn m_step_with_nu(
    data: &FeatureMatrix,
    resp: &Responsibilities,
    prior: &PriorHyperparameters,
    nus: &[f64],
) -> Result<(Vec<ComponentPosterior>, LatentStatistics)> {
    if resp.rows() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: resp.rows(),
        });
    }
    if data.dim() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            found: data.dim(),
        });
    }
    let per: Vec<(f64, f64, Vec<f64>, PsdMatrix)> = (0..resp.k)
        .into_par_iter()
        .map(|k| component_statistics(data, resp, k))
        .collect();
    let mut posts = Vec::with_capacity(resp.k);
    let mut stats = LatentStatistics {
        n: Vec::with_capacity(resp.k),
        omega: Vec::with_capacity(resp.k),
        xbar: Vec::with_capacity(resp.k),
        scatter: Vec::with_capacity(resp.k),
    };
    for (k, (n_eff, omega, xbar, scatter)) in per.into_iter().enumerate() {
        let post = if omega > 0.0 {
            let beta = prior.beta0 + omega;
            let m: Vec<f64> = xbar
                .iter()
                .zip(&prior.m0)
                .map(|(x, m0)| (omega * x + prior.beta0 * m0) / beta)
                .collect();
            let mut w = prior.w0.clone();
            w.add_scaled(&scatter, omega);
            let shift: Vec<f64> = xbar.iter().zip(&prior.m0).map(|(x, m0)| x - m0).collect();
            w.add_outer(&shift, prior.beta0 * omega / beta);
            let w = PsdMatrix::symmetrized(w.dim(), w.as_slice().to_vec());
            ComponentPosterior {
                alpha: prior.alpha0 + n_eff,
                beta,
                m,
                w,
                eta: prior.eta0 + n_eff,
                nu: nus[k],
            }
        } else {
            ComponentPosterior {
                alpha: prior.alpha0 + n_eff,
                nu: nus[k],
                ..prior.as_posterior()
            }
        };
        if post.m.iter().chain(post.w.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::Component {
                component: k,
                message: "non-finite posterior after M-step".into(),
            });
        }
        posts.push(post);
        stats.n.push(n_eff);
        stats.omega.push(omega);
        stats.xbar.push(xbar);
        stats.scatter.push(scatter);
    }
    Ok((posts, stats))
}

/// Dirichlet and Gaussian–inverse-Wishart updates from the responsibilities.
/// Every component receives the prior's fixed ν.
pub fn m_step(
    data: &FeatureMatrix,
    resp: &Responsibilities,
    prior: &PriorHyperparameters,
) -> Result<(Vec<ComponentPosterior>, LatentStatistics)> {
    m_step_with_nu(data, resp, prior, &vec![prior.nu_fixed; resp.k])
}

/// ⟨ln u⟩ under IG(a, b).
#[inline]
fn expect_log_scale(a: f64, b: f64) -> f64 {
    b.ln() - digamma_unchecked(a)
}

/// Entropy of IG(a, b).
#[inline]
fn inverse_gamma_entropy(a: f64, b: f64) -> f64 {
    a + b.ln() + log_gamma_unchecked(a) - (1.0 + a) * digamma_unchecked(a)
}

fn finite(term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("ELBO term {term}")))
    }
}

/// ⟨ln N(μ | m₀, Σ/β₀) + ln IW(Σ | W₀, η₀)⟩ under one component's q.
fn expected_log_niw(
    beta0: f64,
    m0: &[f64],
    w0: &PsdMatrix,
    log_det_w0: f64,
    eta0: f64,
    c: &ComponentPosterior,
    t: &ComponentTerms,
) -> Result<f64> {
    let d = c.m.len() as f64;
    let mut diff: Vec<f64> = c.m.iter().zip(m0).map(|(a, b)| a - b).collect();
    let quad = d / c.beta + c.eta * t.w_chol.inverse_quad_form_in_place(&mut diff);
    let w_inv = t.w_chol.inverse();
    let tr: f64 = w0
        .as_slice()
        .iter()
        .zip(w_inv.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    let gauss =
        -0.5 * d * (2.0 * PI).ln() + 0.5 * d * beta0.ln() - 0.5 * t.log_sigma_tilde - 0.5 * beta0 * quad;
    let iw = 0.5 * eta0 * log_det_w0
        - 0.5 * eta0 * d * LN_2
        - multivariate_log_gamma(0.5 * eta0, c.m.len())?
        - 0.5 * (eta0 + d + 1.0) * t.log_sigma_tilde
        - 0.5 * c.eta * tr;
    Ok(gauss + iw)
}

fn log_dirichlet_norm(alphas: &[f64]) -> f64 {
    let total: f64 = alphas.iter().sum();
    log_gamma_unchecked(total) - alphas.iter().map(|&a| log_gamma_unchecked(a)).sum::<f64>()
}

/// Evidence lower bound of one class:
/// ⟨ln p(X | Z, U, μ, Σ)⟩ + ⟨ln p(Z, U | π)⟩ + ⟨ln p(π, μ, Σ)⟩
/// − ⟨ln q(Z, U)⟩ − ⟨ln q(π, μ, Σ)⟩.
pub fn elbo(
    data: &FeatureMatrix,
    resp: &Responsibilities,
    posteriors: &[ComponentPosterior],
    prior: &PriorHyperparameters,
) -> Result<f64> {
    let k = posteriors.len();
    if resp.k != k || resp.rows() != data.len() {
        return Err(Error::invalid(
            "responsibilities do not match data and posteriors",
        ));
    }
    let dim = data.dim();
    let d = dim as f64;
    let ah = alpha_hat(posteriors);
    let terms = posteriors
        .iter()
        .map(|c| component_terms(c, ah, dim))
        .collect::<Result<Vec<_>>>()?;

    // Per-row contributions of the likelihood, the latent prior and the
    // latent entropy, summed afterwards in row order.
    let rows: Vec<[f64; 3]> = (0..data.len())
        .into_par_iter()
        .with_min_len(64)
        .map_init(
            || vec![0.0; dim],
            |diff, i| {
                let x = data.row(i);
                let mut out = [0.0; 3];
                for j in 0..k {
                    let idx = i * k + j;
                    let r = resp.r[idx];
                    if r == 0.0 {
                        continue;
                    }
                    let (a, b) = (resp.a[idx], resp.b[idx]);
                    let c = &posteriors[j];
                    let t = &terms[j];
                    let inv_u = a / b;
                    let log_u = expect_log_scale(a, b);
                    let delta = delta_sq_expect(c, t, x, diff);
                    out[0] += r
                        * (-0.5 * d * (2.0 * PI).ln()
                            - 0.5 * d * log_u
                            - 0.5 * t.log_sigma_tilde
                            - 0.5 * inv_u * delta);
                    let half_nu = 0.5 * c.nu;
                    out[1] += r
                        * (t.log_pi_tilde + half_nu * half_nu.ln()
                            - log_gamma_unchecked(half_nu)
                            - (half_nu + 1.0) * log_u
                            - half_nu * inv_u);
                    out[2] += r * (r.ln() - inverse_gamma_entropy(a, b));
                }
                out
            },
        )
        .collect();
    let mut likelihood = 0.0;
    let mut latent_prior = 0.0;
    let mut latent_q = 0.0;
    for r in &rows {
        likelihood += r[0];
        latent_prior += r[1];
        latent_q += r[2];
    }

    let prior_alphas = vec![prior.alpha0; k];
    let alphas: Vec<f64> = posteriors.iter().map(|c| c.alpha).collect();
    let mut param_prior = log_dirichlet_norm(&prior_alphas);
    let mut param_q = log_dirichlet_norm(&alphas);
    let log_det_w0 = cholesky(&prior.w0)?.log_det();
    for (c, t) in posteriors.iter().zip(&terms) {
        param_prior += (prior.alpha0 - 1.0) * t.log_pi_tilde;
        param_q += (c.alpha - 1.0) * t.log_pi_tilde;
        param_prior += expected_log_niw(prior.beta0, &prior.m0, &prior.w0, log_det_w0, prior.eta0, c, t)?;
        param_q += expected_log_niw(c.beta, &c.m, &c.w, t.log_det_w, c.eta, c, t)?;
    }

    Ok(finite("likelihood", likelihood)?
        + finite("latent prior", latent_prior)?
        + finite("parameter prior", param_prior)?
        - finite("latent entropy", latent_q)?
        - finite("parameter entropy", param_q)?)
}

/// Drops components whose effective count is below `threshold` and
/// renormalizes every row over the survivors.
pub fn prune(
    posteriors: Vec<ComponentPosterior>,
    resp: Responsibilities,
    threshold: f64,
) -> Result<(Vec<ComponentPosterior>, Responsibilities)> {
    let counts = resp.effective_counts();
    let keep: Vec<usize> = (0..resp.k).filter(|&j| counts[j] >= threshold).collect();
    if keep.is_empty() {
        return Err(Error::LastComponent);
    }
    if keep.len() == resp.k {
        return Ok((posteriors, resp));
    }
    let kk = keep.len();
    let n = resp.rows();
    let mut r = Vec::with_capacity(n * kk);
    let mut a = Vec::with_capacity(n * kk);
    let mut b = Vec::with_capacity(n * kk);
    for i in 0..n {
        let start = r.len();
        for &j in &keep {
            let idx = i * resp.k + j;
            r.push(resp.r[idx]);
            a.push(resp.a[idx]);
            b.push(resp.b[idx]);
        }
        let s: f64 = r[start..].iter().sum();
        if s > 0.0 {
            r[start..].iter_mut().for_each(|v| *v /= s);
        } else {
            r[start..].iter_mut().for_each(|v| *v = 1.0 / kk as f64);
        }
    }
    let posts = keep.iter().map(|&j| posteriors[j].clone()).collect();
    Ok((
        posts,
        Responsibilities {
            k: kk,
            r,
            a,
            b,
            log_evidence: resp.log_evidence,
        },
    ))
}

/// Maximizes Σₙ rₙ[(ν/2) ln(ν/2) − ln Γ(ν/2) − (ν/2)(⟨ln u⟩ + ⟨u⁻¹⟩)] over ν.
fn optimal_nu(resp: &Responsibilities, k: usize, current: f64) -> f64 {
    const LO: f64 = 1e-3;
    const HI: f64 = 1e4;
    let mut n_eff = 0.0;
    let mut s = 0.0;
    for i in 0..resp.rows() {
        let idx = i * resp.k + k;
        let r = resp.r[idx];
        if r == 0.0 {
            continue;
        }
        let (a, b) = (resp.a[idx], resp.b[idx]);
        n_eff += r;
        s += r * (expect_log_scale(a, b) + a / b);
    }
    if !(n_eff > 0.0) {
        return current;
    }
    let target = s / n_eff;
    // Stationarity: ln(ν/2) + 1 − ψ(ν/2) = target, left side decreasing in ν.
    let slope = |nu: f64| (0.5 * nu).ln() + 1.0 - digamma_unchecked(0.5 * nu) - target;
    if slope(HI) >= 0.0 {
        return HI;
    }
    if slope(LO) <= 0.0 {
        return LO;
    }
    let (mut lo, mut hi) = (LO.ln(), HI.ln());
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if slope(mid.exp()) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingEvent {
    pub class_id: u32,
    pub iteration: usize,
    pub elbo: f64,
    pub components: usize,
}

/// Seed for one class's initialization, derived from the run seed.
pub fn class_seed(seed: u64, class_id: u32) -> u64 {
    seed ^ (u64::from(class_id).wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn initial_responsibilities(
    data: &FeatureMatrix,
    k: usize,
    prior: &PriorHyperparameters,
    strategy: InitStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<Responsibilities> {
    let n = data.len();
    let mut r = vec![0.0; n * k];
    match strategy {
        InitStrategy::RandomResponsibility => {
            for row in r.chunks_exact_mut(k) {
                for v in row.iter_mut() {
                    *v = rng.sample::<f64, _>(Exp1);
                }
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row.iter_mut().for_each(|v| *v /= s);
                } else {
                    row.iter_mut().for_each(|v| *v = 1.0 / k as f64);
                }
            }
        }
        InitStrategy::KMeansLike => {
            let centers: Vec<usize> = if k <= n {
                index::sample(rng, n, k).into_vec()
            } else {
                (0..k).map(|_| rng.random_range(0..n)).collect()
            };
            for i in 0..n {
                let x = data.row(i);
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (j, &c) in centers.iter().enumerate() {
                    let dist: f64 = x.iter().zip(data.row(c)).map(|(a, b)| (a - b).powi(2)).sum();
                    if dist < best_d {
                        best_d = dist;
                        best = j;
                    }
                }
                r[i * k + best] = 1.0;
            }
        }
    }
    // ⟨u⁻¹⟩ = 1 for the first M-step.
    let shape = 0.5 * (prior.nu_fixed + data.dim() as f64);
    Responsibilities::from_parts(k, r, vec![shape; n * k], vec![shape; n * k])
}

/// Trains one class model on that class's rows.
pub fn fit_class(
    rows: &FeatureMatrix,
    class_id: u32,
    prior: &PriorHyperparameters,
    config: &VbConfig,
    sink: &(dyn Fn(&TrainingEvent) + Sync),
) -> Result<ClassModel> {
    if rows.is_empty() {
        return Err(Error::EmptyClass(class_id));
    }
    if rows.dim() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            found: rows.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(class_seed(config.seed, class_id));
    let init = initial_responsibilities(rows, prior.k_init, prior, config.init_strategy, &mut rng)?;
    let mut nus = vec![prior.nu_fixed; prior.k_init];
    let (mut posts, _) = m_step_with_nu(rows, &init, prior, &nus)?;
    let mut trace = Vec::new();
    let mut n_pruned = 0;
    let mut converged = false;
    for iteration in 1..=config.max_iters {
        let resp = e_step(rows, &posts)?;
        let (mut next, _) = m_step_with_nu(rows, &resp, prior, &nus)?;
        if config.nu_mode == NuMode::MaxLikelihood {
            for (j, c) in next.iter_mut().enumerate() {
                nus[j] = optimal_nu(&resp, j, nus[j]);
                c.nu = nus[j];
            }
        }
        let bound = elbo(rows, &resp, &next, prior)?;
        sink(&TrainingEvent {
            class_id,
            iteration,
            elbo: bound,
            components: next.len(),
        });
        let settled = trace
            .last()
            .is_some_and(|prev: &f64| ((bound - prev) / bound).abs() < config.elbo_rel_tol);
        trace.push(bound);

        let before = next.len();
        let kept: Vec<usize> = {
            let counts = resp.effective_counts();
            (0..before)
                .filter(|&j| counts[j] >= config.prune_threshold)
                .collect()
        };
        let (survivors, resp) = prune(next, resp, config.prune_threshold)?;
        if survivors.len() < before {
            n_pruned += before - survivors.len();
            nus = kept.iter().map(|&j| nus[j]).collect();
            let (refit, _) = m_step_with_nu(rows, &resp, prior, &nus)?;
            posts = refit;
            continue;
        }
        posts = survivors;
        if settled {
            converged = true;
            break;
        }
    }
    let mut model = ClassModel::new(class_id, posts)?;
    model.elbo_trace = trace;
    model.n_pruned = n_pruned;
    model.converged = converged;
    Ok(model)
}

/// Trains every class in `class_ids` (each must have rows in `data`).
pub fn fit_classes(
    data: &FeatureDataset,
    class_ids: &[u32],
    prior: &PriorHyperparameters,
    config: &VbConfig,
    sink: &(dyn Fn(&TrainingEvent) + Sync),
) -> Result<TrainedClassifier> {
    config.validate()?;
    prior.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            found: data.dim(),
        });
    }
    let per_class: Vec<FeatureMatrix> = class_ids.iter().map(|&c| data.class_rows(c)).collect();
    let results: Vec<Result<ClassModel>> = class_ids
        .par_iter()
        .zip(per_class.par_iter())
        .map(|(&c, rows)| fit_class(rows, c, prior, config, sink))
        .collect();
    let models = results.into_iter().collect::<Result<Vec<_>>>()?;
    let counts: Vec<usize> = per_class.iter().map(FeatureMatrix::len).collect();
    let log_prior = config.class_prior.log_prior(&counts);
    TrainedClassifier::new(models, log_prior, prior.clone())
}

/// Trains one model per class present in `data`.
pub fn fit(
    data: &FeatureDataset,
    prior: &PriorHyperparameters,
    config: &VbConfig,
) -> Result<TrainedClassifier> {
    fit_with_log(data, prior, config, &|_| {})
}

pub fn fit_with_log(
    data: &FeatureDataset,
    prior: &PriorHyperparameters,
    config: &VbConfig,
    sink: &(dyn Fn(&TrainingEvent) + Sync),
) -> Result<TrainedClassifier> {
    fit_classes(data, &data.class_ids(), prior, config, sink)
}
