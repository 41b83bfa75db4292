//! Marginal density of a Gaussian scale mixture with inverse-gamma mixing,
//! i.e. the multivariate Student-t, in closed form and by quadrature over
//! the latent scale.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{cholesky, log_gamma, CholeskyFactor, PsdMatrix};

/// Location, scale matrix and degrees of freedom of one Student-t.
#[derive(Debug, Clone)]
pub struct StudentParams {
    pub mu: Vec<f64>,
    pub sigma: PsdMatrix,
    pub nu: f64,
}

impl StudentParams {
    pub fn new(mu: Vec<f64>, sigma: PsdMatrix, nu: f64) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::DimensionMismatch {
                expected: sigma.dim(),
                found: mu.len(),
            });
        }
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::Domain {
                function: "StudentParams::new (nu)",
                value: nu,
            });
        }
        cholesky(&sigma)?;
        Ok(StudentParams { mu, sigma, nu })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// ln Γ((ν+D)/2) − ln Γ(ν/2) − (D/2) ln(πν) − ½ ln|Σ|
pub(crate) fn student_log_normalizer(nu: f64, dim: usize, log_det_sigma: f64) -> Result<f64> {
    let d = dim as f64;
    Ok(log_gamma(0.5 * (nu + d))? - log_gamma(0.5 * nu)? - 0.5 * d * (PI * nu).ln() - 0.5 * log_det_sigma)
}

/// Log density given the normalizer and the squared Mahalanobis distance.
#[inline]
pub(crate) fn student_log_kernel(log_norm: f64, nu: f64, dim: usize, delta_sq: f64) -> f64 {
    log_norm - 0.5 * (nu + dim as f64) * (delta_sq / nu).ln_1p()
}

fn checked_delta(x: &[f64], p: &StudentParams) -> Result<(CholeskyFactor, f64)> {
    if x.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: x.len(),
        });
    }
    let f = cholesky(&p.sigma)?;
    let delta = crate::numerics::mahalanobis_sq(x, &p.mu, &f)?;
    Ok((f, delta))
}

/// ln of the Student-t density at `x`, with (1 + Δ²/ν)^{−(ν+D)/2} kernel.
pub fn log_marginal_density(x: &[f64], p: &StudentParams) -> Result<f64> {
    let (f, delta) = checked_delta(x, p)?;
    let norm = student_log_normalizer(p.nu, p.dim(), f.log_det())?;
    Ok(student_log_kernel(norm, p.nu, p.dim(), delta))
}

// ---------------------------------------------------------------------------
// Quadrature oracle

const QUAD_REL_TOL: f64 = 1e-10;
const QUAD_MAX_INTERVALS: usize = 4000;

#[allow(clippy::excessive_precision)]
const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights at KRONROD_NODES[1], [3], [5], [7].
#[allow(clippy::excessive_precision)]
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// (Kronrod estimate, |Kronrod − Gauss|) on [lo, hi].
fn gauss_kronrod(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = fc * KRONROD_WEIGHTS[7];
    let mut gauss = fc * GAUSS_WEIGHTS[3];
    for j in 0..7 {
        let dx = half * KRONROD_NODES[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += KRONROD_WEIGHTS[j] * pair;
        if j % 2 == 1 {
            gauss += GAUSS_WEIGHTS[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Globally adaptive G7/K15 integration of a nonnegative integrand.
fn integrate_adaptive(f: impl Fn(f64) -> f64, breakpoints: &[f64]) -> Result<f64> {
    let mut pieces: Vec<(f64, f64, f64, f64)> = breakpoints
        .windows(2)
        .map(|w| {
            let (v, e) = gauss_kronrod(&f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    loop {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::Quadrature("non-finite integrand".into()));
        }
        if err <= QUAD_REL_TOL * total.abs() {
            return Ok(total);
        }
        if pieces.len() >= QUAD_MAX_INTERVALS {
            return Err(Error::Quadrature(format!(
                "error estimate {err:e} above target after {} intervals",
                pieces.len()
            )));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .3.total_cmp(&b.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        for (a, b) in [(lo, mid), (mid, hi)] {
            let (v, e) = gauss_kronrod(&f, a, b);
            pieces.push((a, b, v, e));
        }
    }
}

/// Density at `x` by integrating N(x | μ, uΣ)·IG(u | ν/2, ν/2) over u.
///
/// With u = eᵗ the log integrand is c − ((ν+D)/2)·t − ((Δ²+ν)/2)·e^{−t},
/// peaked at t* = ln((Δ²+ν)/(ν+D)). The integral is taken relative to the
/// peak value and over a window outside of which the integrand is below
/// e^{−60} of the peak.
pub fn quadrature_marginal_density(x: &[f64], p: &StudentParams) -> Result<f64> {
    let (f, delta) = checked_delta(x, p)?;
    let d = p.dim() as f64;
    let nu = p.nu;
    let rate = 0.5 * (nu + d);
    let pull = 0.5 * (delta + nu);
    let log_c =
        -0.5 * d * (2.0 * PI).ln() - 0.5 * f.log_det() + 0.5 * nu * (0.5 * nu).ln() - log_gamma(0.5 * nu)?;
    let log_integrand = |t: f64| log_c - rate * t - pull * (-t).exp();
    let t_peak = (pull / rate).ln();
    let log_peak = log_integrand(t_peak);
    let rel = |t: f64| (log_integrand(t) - log_peak).exp();

    // Right tail falls like e^{−rate·s}; the left like e^{−rate·(eˢ − 1 − s)}.
    let right = 60.0 / rate + 1.0;
    let left = (1.0 + 60.0 / rate).ln() + 1.0;
    let width = (1.0 / rate).sqrt();
    let mut breaks = vec![t_peak - left];
    for k in [-4.0, -1.0, 1.0, 4.0] {
        let b = t_peak + k * width;
        if b > t_peak - left && b < t_peak + right {
            breaks.push(b);
        }
    }
    breaks.push(t_peak + right);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let scaled = integrate_adaptive(rel, &breaks)?;
    Ok(scaled * log_peak.exp())
}
