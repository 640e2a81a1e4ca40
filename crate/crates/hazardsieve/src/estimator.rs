//! Maximization of the kernel-weighted sieve log-likelihood, data-driven
//! bandwidth selection by K-fold cross-validation, the sandwich variance of
//! the regression coefficients, and the small inference helpers (Wald
//! tests, BIC, Cauchy combination).

use crate::data::Dataset;
use crate::kernel::Kernel;
use crate::likelihood::{LikelihoodError, LikelihoodTerms, QuadratureRule, SieveParams, Term};
use crate::linalg;
use crate::optimize::{maximize, MaxOptions};
use crate::spline::SplineBasis;
use crate::transform::BoxCox;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("no event term carries kernel weight at bandwidth {h}")]
    NoWeightedEvents { h: f64 },
    #[error("cannot build default initialization: dataset has no events")]
    NoEvents,
    #[error("cannot build default initialization: total follow-up time is zero")]
    ZeroFollowup,
    #[error("information matrix is numerically singular (rcond {rcond:.3e})")]
    SingularInformation { rcond: f64 },
    #[error("cross-validation failed: every bandwidth produced an infinite loss")]
    CvAllInfinite,
    #[error("cross-validation needs 2 <= folds <= n, got folds={folds}, n={n}")]
    BadFolds { folds: usize, n: usize },
    #[error("cross-validation grid is empty or contains a nonpositive bandwidth")]
    BadGrid,
    #[error("standard error is zero for coefficient {0}")]
    ZeroStandardError(usize),
    #[error("p-values must lie strictly inside (0, 1), got {0}")]
    BadPValue(f64),
    #[error("subject '{0}' has no measurements; carried-forward imputation needs at least one")]
    SubjectWithoutMeasurements(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Bandwidth policy: a fixed value, or K-fold CV over a grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    CrossValidated {
        grid: Vec<f64>,
        folds: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Default,
    Params(SieveParams),
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub transform: BoxCox,
    pub bandwidth: Bandwidth,
    pub basis: SplineBasis,
    pub quad: QuadratureRule,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub init: Init,
}

impl FitConfig {
    pub fn new(s: f64, bandwidth: Bandwidth, basis: SplineBasis) -> Self {
        FitConfig {
            transform: BoxCox::new(s),
            bandwidth,
            basis,
            quad: QuadratureRule::default(),
            max_iter: 500,
            grad_tol: 1e-7,
            init: Init::Default,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Sandwich covariance of `beta_hat`, already scaled by `1/(n h)`.
    pub covariance: Array2<f64>,
    pub se: Vec<f64>,
    pub h_used: f64,
    /// True when some evaluation point sat on the transform's barrier
    /// extension at the fitted parameters.
    pub barrier_touched: bool,
    /// Variance terms dropped because the at-risk kernel moment vanished.
    pub dropped_info_terms: usize,
}

impl FitResult {
    pub fn params(&self) -> SieveParams {
        SieveParams {
            beta: self.beta_hat.clone(),
            gamma: self.gamma_hat.clone(),
        }
    }

    /// The fitted baseline `alpha(t) = gamma' B(t)` sampled at `points`
    /// uniform times over the basis boundary interval.
    pub fn baseline_curve(&self, basis: &SplineBasis, points: usize) -> Vec<(f64, f64)> {
        let (a, b) = basis.boundary();
        (0..points)
            .map(|i| {
                let t = a + (b - a) * i as f64 / (points - 1).max(1) as f64;
                let alpha = basis
                    .eval(t)
                    .iter()
                    .zip(&self.gamma_hat)
                    .map(|(bv, g)| bv * g)
                    .sum();
                (t, alpha)
            })
            .collect()
    }
}

/// Cross-validation summary; `chosen_h` attains the minimal mean loss with
/// ties broken toward the larger bandwidth.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CvReport {
    pub grid: Vec<f64>,
    pub mean_loss: Vec<f64>,
    pub chosen_h: f64,
    pub fold_count: usize,
}

/// Zero regression coefficients plus a flat baseline at the crude hazard
/// rate `events / total follow-up`, mapped through the forward transform.
pub fn default_init(
    data: &Dataset,
    basis: &SplineBasis,
    tr: &BoxCox,
) -> Result<SieveParams, EstimatorError> {
    let events = data.events();
    if events == 0 {
        return Err(EstimatorError::NoEvents);
    }
    let total: f64 = data.subjects().iter().map(|s| s.x).sum();
    if total <= 0.0 {
        return Err(EstimatorError::ZeroFollowup);
    }
    let rate = events as f64 / total;
    Ok(SieveParams {
        beta: vec![0.0; data.p()],
        gamma: basis.coefficients_for_constant(tr.forward(rate)),
    })
}

/// Default CV grid: 8 geometric points spanning `[0.5 n^-0.5, 4 n^-0.4]`,
/// covering both fixed-rate choices and the normality-optimal regime.
pub fn default_cv_grid(n: usize) -> Vec<f64> {
    let n = n as f64;
    let lo = 0.5 * n.powf(-0.5);
    let hi = 4.0 * n.powf(-0.4);
    let count = 8;
    (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect()
}

fn resolve_init(data: &Dataset, config: &FitConfig) -> Result<SieveParams, EstimatorError> {
    match &config.init {
        Init::Params(p) => Ok(p.clone()),
        Init::Default => default_init(data, &config.basis, &config.transform),
    }
}

/// Shared ascent driver. For transforms with a barrier (`s > 0`) a short
/// continuation stage first maximizes against a softened barrier
/// (floor 1e-3) and warm-starts the real problem from there; the steep
/// extension otherwise traps line searches in a sliver near the wall.
pub(crate) fn ascend(
    terms: &LikelihoodTerms,
    init: &SieveParams,
    tr: &BoxCox,
    p: usize,
    max_iter: usize,
    grad_tol: f64,
) -> crate::optimize::MaxOutcome {
    let objective = |transform: BoxCox| {
        move |flat: &[f64]| {
            let params = SieveParams::from_flat(flat, p);
            terms
                .value_and_grad(&params, &transform)
                .expect("dimensions checked at init")
        }
    };
    let start = if tr.index() > 0.0 {
        let soft = BoxCox::with_floor(tr.index(), 1e-3);
        let warm = maximize(
            objective(soft),
            init.to_flat(),
            &MaxOptions {
                max_iter: 200,
                grad_tol: 1e-4,
                ..Default::default()
            },
        );
        warm.x
    } else {
        init.to_flat()
    };
    maximize(
        objective(*tr),
        start,
        &MaxOptions {
            max_iter,
            grad_tol,
            ..Default::default()
        },
    )
}

/// Maximize the weighted log-likelihood at a fixed bandwidth, without
/// variance estimation. Used by CV and as the first stage of [`fit`].
fn solve_at(
    data: &Dataset,
    config: &FitConfig,
    h: f64,
) -> Result<(SieveParams, LikelihoodTerms, crate::optimize::MaxOutcome), EstimatorError> {
    let terms = LikelihoodTerms::build(data, h, &config.basis, &config.quad)?;
    if terms.weighted_event_count() == 0 && terms.cumulative_node_count() > 0 {
        return Err(EstimatorError::NoWeightedEvents { h });
    }
    let init = resolve_init(data, config)?;
    // surface dimension mismatches before entering the optimizer
    terms.value(&init, &config.transform)?;
    let outcome = ascend(
        &terms,
        &init,
        &config.transform,
        data.p(),
        config.max_iter,
        config.grad_tol,
    );
    let params = SieveParams::from_flat(&outcome.x, data.p());
    Ok((params, terms, outcome))
}

/// Fit the model: resolve the bandwidth (running CV when asked), maximize
/// the weighted log-likelihood by quasi-Newton ascent, and attach the
/// sandwich variance.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitResult, EstimatorError> {
    let h = match &config.bandwidth {
        Bandwidth::Fixed(h) => *h,
        Bandwidth::CrossValidated { grid, folds, seed } => {
            cv_bandwidth(data, config, grid, *folds, *seed)?.chosen_h
        }
    };
    let (params, terms, outcome) = solve_at(data, config, h)?;
    let tr = &config.transform;
    let barrier_touched = terms.touches_barrier(&params, tr);

    let p = data.p();
    let (covariance, se, dropped) = if p == 0 || terms.weighted_event_count() == 0 {
        (Array2::zeros((p, p)), vec![0.0; p], 0)
    } else {
        let parts = sandwich_at(data, &terms, &params, tr)?;
        (parts.covariance, parts.se, parts.dropped_terms)
    };

    Ok(FitResult {
        beta_hat: params.beta,
        gamma_hat: params.gamma,
        loglik: outcome.value,
        converged: outcome.converged,
        iterations: outcome.iterations,
        grad_norm: outcome.grad_norm,
        covariance,
        se,
        h_used: h,
        barrier_touched,
        dropped_info_terms: dropped,
    })
}

/// Select the bandwidth minimizing the K-fold cross-validated negative
/// kernel-weighted log-likelihood (the held-out fold is evaluated at the
/// candidate bandwidth itself). Cells whose training fold has no weighted
/// event are recorded as infinite.
pub fn cv_bandwidth(
    data: &Dataset,
    config: &FitConfig,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvReport, EstimatorError> {
    let n = data.n();
    if folds < 2 || folds > n {
        return Err(EstimatorError::BadFolds { folds, n });
    }
    if grid.is_empty() || grid.iter().any(|&h| h.is_nan() || h <= 0.0) {
        return Err(EstimatorError::BadGrid);
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (pos, &subject) in order.iter().enumerate() {
            f[subject] = pos % folds;
        }
        f
    };

    let cells: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|hi| (0..folds).map(move |f| (hi, f)))
        .collect();
    let losses: Vec<((usize, usize), f64)> = cells
        .par_iter()
        .map(|&(hi, f)| {
            let h = grid[hi];
            let train_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let test_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let loss = cv_cell_loss(data, config, h, &train_idx, &test_idx);
            ((hi, f), loss)
        })
        .collect();

    let mut mean_loss = vec![0.0f64; grid.len()];
    for &((hi, _), loss) in &losses {
        mean_loss[hi] += loss / folds as f64;
    }

    let mut chosen_h = f64::NAN;
    let mut best = f64::INFINITY;
    for (&h, &loss) in grid.iter().zip(&mean_loss) {
        if loss < best || (loss == best && loss.is_finite() && h > chosen_h) {
            best = loss;
            chosen_h = h;
        }
    }
    if !best.is_finite() {
        return Err(EstimatorError::CvAllInfinite);
    }
    Ok(CvReport {
        grid: grid.to_vec(),
        mean_loss,
        chosen_h,
        fold_count: folds,
    })
}

fn cv_cell_loss(
    data: &Dataset,
    config: &FitConfig,
    h: f64,
    train_idx: &[usize],
    test_idx: &[usize],
) -> f64 {
    let Ok(train) = data.restricted_to(train_idx) else {
        return f64::INFINITY;
    };
    let Ok(test) = data.restricted_to(test_idx) else {
        return f64::INFINITY;
    };
    let local = FitConfig {
        bandwidth: Bandwidth::Fixed(h),
        ..config.clone()
    };
    match solve_at(&train, &local, h) {
        Ok((params, _, _)) => {
            match LikelihoodTerms::build(&test, h, &config.basis, &config.quad)
                .and_then(|t| t.value(&params, &config.transform))
            {
                Ok(value) if value.is_finite() => -value,
                _ => f64::INFINITY,
            }
        }
        Err(_) => f64::INFINITY,
    }
}

#[derive(Debug)]
pub(crate) struct SandwichParts {
    pub covariance: Array2<f64>,
    pub se: Vec<f64>,
    pub dropped_terms: usize,
}

/// Measurement entries sorted by time, for the kernel-weighted at-risk
/// moments `S^(k)(t)`.
struct MeasIndex {
    r: Vec<f64>,
    x: Vec<f64>,
    beta_z: Vec<f64>,
    z: Vec<Vec<f64>>,
}

impl MeasIndex {
    fn build(data: &Dataset, beta: &[f64]) -> Self {
        let mut rows: Vec<(f64, f64, f64, Vec<f64>)> = Vec::new();
        for subject in data.subjects() {
            for m in &subject.measurements {
                let bz = m.z.iter().zip(beta).map(|(z, b)| z * b).sum();
                rows.push((m.time, subject.x, bz, m.z.clone()));
            }
        }
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        MeasIndex {
            r: rows.iter().map(|r| r.0).collect(),
            x: rows.iter().map(|r| r.1).collect(),
            beta_z: rows.iter().map(|r| r.2).collect(),
            z: rows.into_iter().map(|r| r.3).collect(),
        }
    }

    /// `(S0, S1, S2)` at time `t`: kernel-weighted at-risk moments of the
    /// measured covariates with the `H''`-style weight `H'(eta)^2 / H(eta)`,
    /// where `eta = baseline(t) + beta'z`. The common `1/n` factor cancels
    /// in every ratio we use, so it is omitted.
    fn moments(
        &self,
        t: f64,
        baseline: f64,
        tr: &BoxCox,
        h: f64,
        p: usize,
        with_s2: bool,
    ) -> (f64, Array1<f64>, Option<Array2<f64>>) {
        let kernel = Kernel::Epanechnikov;
        let lo = self.r.partition_point(|&r| r <= t - h);
        let hi = self.r.partition_point(|&r| r <= t);
        let mut s0 = 0.0;
        let mut s1 = Array1::<f64>::zeros(p);
        let mut s2 = with_s2.then(|| Array2::<f64>::zeros((p, p)));
        for e in lo..hi {
            if self.x[e] < t {
                continue;
            }
            let w = kernel.weight(t - self.r[e], h);
            if w == 0.0 {
                continue;
            }
            let (_, h2) = tr.ratios(baseline + self.beta_z[e]);
            let c = w * h2;
            s0 += c;
            let z = &self.z[e];
            for (k, &zk) in z.iter().enumerate() {
                s1[k] += c * zk;
            }
            if let Some(s2) = s2.as_mut() {
                for (j, &zj) in z.iter().enumerate() {
                    for (k, &zk) in z.iter().enumerate() {
                        s2[(j, k)] += c * zj * zk;
                    }
                }
            }
        }
        (s0, s1, s2)
    }
}

fn baseline_of(term: &Term, gamma: &[f64]) -> f64 {
    term.basis_row.iter().zip(gamma).map(|(b, g)| b * g).sum()
}

fn predictor_of(term: &Term, params: &SieveParams) -> f64 {
    let bz: f64 = term.z.iter().zip(&params.beta).map(|(z, b)| z * b).sum();
    baseline_of(term, &params.gamma) + bz
}

const RCOND_FLOOR: f64 = 1e-12;

/// The plug-in sandwich covariance of the regression coefficients at the
/// fitted parameters, `Xi^-1 Omega Xi^-1 / (n h)`.
pub(crate) fn sandwich_at(
    data: &Dataset,
    terms: &LikelihoodTerms,
    params: &SieveParams,
    tr: &BoxCox,
) -> Result<SandwichParts, EstimatorError> {
    let p = data.p();
    let n = data.n() as f64;
    let h = terms.bandwidth();
    let index = MeasIndex::build(data, &params.beta);

    let mut information = Array2::<f64>::zeros((p, p));
    let mut scores: Vec<Array1<f64>> = vec![Array1::zeros(p); data.n()];
    let mut dropped = 0usize;

    // Event terms come grouped by subject, all sharing t = x_i; compute the
    // at-risk moments once per event subject.
    let mut i = 0;
    let events = terms.event_terms();
    while i < events.len() {
        let subject = events[i].subject;
        let mut j = i;
        while j < events.len() && events[j].subject == subject {
            j += 1;
        }
        let t = events[i].t;
        let baseline = baseline_of(&events[i], &params.gamma);
        let (s0, s1, s2) = index.moments(t, baseline, tr, h, p, true);
        if s0 == 0.0 {
            dropped += j - i;
            i = j;
            continue;
        }
        let zbar = &s1 / s0;
        let s2 = s2.expect("requested");

        let mut scalar = 0.0;
        for term in &events[i..j] {
            let (h1, _) = tr.ratios(predictor_of(term, params));
            scalar += term.weight * h1 * h1;
            // event part of the subject score
            let coef = term.weight * h1;
            for k in 0..p {
                scores[subject][k] += coef * (zbar[k] - term.z[k]);
            }
        }
        for a in 0..p {
            for b in 0..p {
                information[(a, b)] += scalar * (s2[(a, b)] / s0 - zbar[a] * zbar[b]);
            }
        }
        i = j;
    }
    information.mapv_inplace(|v| v / n);

    // Cumulative part of the scores, over the same quadrature nodes the
    // likelihood uses.
    for term in terms.node_terms() {
        let baseline = baseline_of(term, &params.gamma);
        let (s0, s1, _) = index.moments(term.t, baseline, tr, h, p, false);
        if s0 == 0.0 {
            dropped += 1;
            continue;
        }
        let bz: f64 = term.z.iter().zip(&params.beta).map(|(z, b)| z * b).sum();
        let hd = tr.deriv(baseline + bz);
        let coef = term.weight * hd;
        for k in 0..p {
            scores[term.subject][k] -= coef * (s1[k] / s0 - term.z[k]);
        }
    }

    let mut outer = Array2::<f64>::zeros((p, p));
    for psi in &scores {
        for a in 0..p {
            for b in 0..p {
                outer[(a, b)] += psi[a] * psi[b];
            }
        }
    }
    outer.mapv_inplace(|v| v * h / n);

    let factor =
        linalg::cholesky(&information).ok_or(EstimatorError::SingularInformation { rcond: 0.0 })?;
    let rcond = linalg::reciprocal_condition(&information, &factor);
    if rcond < RCOND_FLOOR {
        return Err(EstimatorError::SingularInformation { rcond });
    }
    let half = linalg::chol_solve_matrix(&factor, &outer); // Xi^-1 Omega
    let mut covariance = linalg::chol_solve_matrix(&factor, &half.t().to_owned());
    covariance.mapv_inplace(|v| v / (n * h));
    linalg::symmetrize(&mut covariance);
    let se = (0..p).map(|k| covariance[(k, k)].max(0.0).sqrt()).collect();

    Ok(SandwichParts {
        covariance,
        se,
        dropped_terms: dropped,
    })
}

/// Recompute the sandwich covariance and standard errors for a fitted model.
pub fn sandwich_variance(
    data: &Dataset,
    fit: &FitResult,
    basis: &SplineBasis,
    tr: &BoxCox,
    quad: &QuadratureRule,
) -> Result<(Array2<f64>, Vec<f64>), EstimatorError> {
    let terms = LikelihoodTerms::build(data, fit.h_used, basis, quad)?;
    let parts = sandwich_at(data, &terms, &fit.params(), tr)?;
    Ok((parts.covariance, parts.se))
}

/// One coefficient's Wald summary at the 95% level.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct WaldRow {
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

pub fn wald(fit: &FitResult) -> Result<Vec<WaldRow>, EstimatorError> {
    fit.beta_hat
        .iter()
        .zip(&fit.se)
        .enumerate()
        .map(|(k, (&b, &se))| {
            if se == 0.0 {
                return Err(EstimatorError::ZeroStandardError(k));
            }
            let z = b / se;
            // 2 (1 - Phi(|z|)) = erfc(|z| / sqrt(2))
            let p_value = statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2);
            Ok(WaldRow {
                estimate: b,
                se,
                z,
                p_value,
                ci_lower: b - 1.96 * se,
                ci_upper: b + 1.96 * se,
            })
        })
        .collect()
}

/// `-2 n loglik + (p + q) log n`, counting every sieve coefficient as a
/// parameter; `loglik` is the per-subject mean the fit reports.
pub fn bic(fit: &FitResult, data: &Dataset) -> f64 {
    let n = data.n() as f64;
    let k = (fit.beta_hat.len() + fit.gamma_hat.len()) as f64;
    -2.0 * n * fit.loglik + k * n.ln()
}

/// Cauchy combination of p-values: `T = mean tan((0.5 - p) pi)` and the
/// combined p-value `0.5 - atan(T) / pi`.
pub fn cauchy_combine(pvals: &[f64]) -> Result<f64, EstimatorError> {
    if pvals.is_empty() {
        return Err(EstimatorError::BadPValue(f64::NAN));
    }
    let mut total = 0.0;
    for &p in pvals {
        if p.is_nan() || p <= 0.0 || p >= 1.0 {
            return Err(EstimatorError::BadPValue(p));
        }
        total += ((0.5 - p) * std::f64::consts::PI).tan();
    }
    let t = total / pvals.len() as f64;
    Ok(0.5 - t.atan() / std::f64::consts::PI)
}
