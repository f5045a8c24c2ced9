//! NB2 negative binomial regression with explicit fixed-effect dummies.
//!
//! Mean μ = exp(offset + x'β + dummies), variance μ + αμ². The log-likelihood
//! is maximised by damped Newton steps over (β, dummies, log α), starting
//! from a Poisson fit. Groups whose outcomes are all zero are dropped first,
//! since their dummies diverge. When α runs to the zero boundary the fit
//! falls back to the Poisson limit and says so.
//!
//! For integer y the gamma-function terms reduce to finite sums,
//! lnΓ(y+r) − lnΓ(r) = Σ_{j<y} ln(r+j), so no special functions are needed
//! beyond ln y!.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::dataset::PanelDataset;
use crate::demean::dense_ids;
use crate::error::{invalid, EstimationError, Result};
use crate::linalg::collinear_columns;
use crate::report::{Convergence, EstimateReport};
use crate::spec::{Estimator, ModelSpec, VcovKind};
use crate::vcov::{count_clusters, symmetrize};

const MAX_ITER: usize = 200;
/// log α below this is treated as the Poisson boundary.
const LOG_ALPHA_FLOOR: f64 = -18.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NegBinFit {
    pub report: EstimateReport,
    /// Dummy coefficients, named `set[label]`. The first set carries every
    /// level; later sets omit their first level.
    pub effects: Vec<(String, f64)>,
    pub dispersion: f64,
}

pub fn fit_negbin(spec: &ModelSpec, data: &PanelDataset) -> Result<EstimateReport> {
    Ok(fit_negbin_full(spec, data)?.report)
}

struct Problem {
    y: Vec<f64>,
    offset: Vec<f64>,
    /// Per-row nonzero design entries (parameter index, value).
    rows: Vec<Vec<(usize, f64)>>,
    ln_y_fact: Vec<f64>,
    n_params: usize,
}

struct Eval {
    loglik: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl Problem {
    fn mu(&self, theta: &[f64], i: usize) -> f64 {
        let eta = self.offset[i] + self.rows[i].iter().map(|&(j, v)| theta[j] * v).sum::<f64>();
        eta.exp()
    }

    fn loglik(&self, theta: &[f64], log_alpha: Option<f64>) -> f64 {
        (0..self.y.len())
            .map(|i| {
                let mu = self.mu(theta, i);
                obs_loglik(self.y[i], mu, log_alpha) - self.ln_y_fact[i]
            })
            .sum()
    }

    /// Log-likelihood, gradient and Hessian. With `log_alpha` set, the last
    /// parameter is log α.
    fn evaluate(&self, theta: &[f64], log_alpha: Option<f64>) -> Eval {
        let p = self.n_params + usize::from(log_alpha.is_some());
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut loglik = 0.0;
        for i in 0..self.y.len() {
            let y = self.y[i];
            let mu = self.mu(theta, i);
            let entries = &self.rows[i];
            loglik += obs_loglik(y, mu, log_alpha) - self.ln_y_fact[i];
            let (a, h) = match log_alpha {
                None => (y - mu, mu),
                Some(la) => {
                    let alpha = la.exp();
                    let den = 1.0 + alpha * mu;
                    ((y - mu) / den, mu * (1.0 + alpha * y) / (den * den))
                }
            };
            for &(j, v) in entries {
                grad[j] += a * v;
                for &(k, w) in entries {
                    hess[(j, k)] -= h * v * w;
                }
            }
            if let Some(la) = log_alpha {
                let e = p - 1;
                let r = (-la).exp();
                let (s1, s2) = digamma_sums(y, r);
                let rm = r + mu;
                let d1 = s1 - (mu / r).ln_1p() + (mu - y) / rm;
                let d2 = -s2 + mu / (r * rm) - (mu - y) / (rm * rm);
                grad[e] += -r * d1;
                hess[(e, e)] += r * r * d2 + r * d1;
                let cross = -r * (y - mu) * mu / (rm * rm);
                for &(j, v) in entries {
                    hess[(j, e)] += cross * v;
                    hess[(e, j)] += cross * v;
                }
            }
        }
        Eval { loglik, grad, hess }
    }

    /// Per-observation score vectors, for the clustered sandwich.
    fn scores(&self, theta: &[f64], log_alpha: Option<f64>) -> DMatrix<f64> {
        let p = self.n_params + usize::from(log_alpha.is_some());
        let mut s = DMatrix::zeros(self.y.len(), p);
        for i in 0..self.y.len() {
            let y = self.y[i];
            let mu = self.mu(theta, i);
            let a = match log_alpha {
                None => y - mu,
                Some(la) => (y - mu) / (1.0 + la.exp() * mu),
            };
            for &(j, v) in &self.rows[i] {
                s[(i, j)] += a * v;
            }
            if let Some(la) = log_alpha {
                let r = (-la).exp();
                let (s1, _) = digamma_sums(y, r);
                let d1 = s1 - (mu / r).ln_1p() + (mu - y) / (r + mu);
                s[(i, p - 1)] = -r * d1;
            }
        }
        s
    }
}

/// Σ_{j<y} 1/(r+j) and Σ_{j<y} 1/(r+j)².
fn digamma_sums(y: f64, r: f64) -> (f64, f64) {
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for j in 0..(y as u64) {
        let d = r + j as f64;
        s1 += 1.0 / d;
        s2 += 1.0 / (d * d);
    }
    (s1, s2)
}

/// Log-likelihood contribution without the ln y! term.
fn obs_loglik(y: f64, mu: f64, log_alpha: Option<f64>) -> f64 {
    match log_alpha {
        None => y * mu.ln() - mu,
        Some(la) => {
            let r = (-la).exp();
            let mut lg = 0.0;
            for j in 0..(y as u64) {
                lg += (r + j as f64).ln();
            }
            let log1p_ratio = (mu / r).ln_1p();
            // r ln(r/(r+μ)) + y ln(μ/(r+μ))
            lg - r * log1p_ratio + y * (mu.ln() - r.ln() - log1p_ratio)
        }
    }
}

struct NewtonOutcome {
    params: Vec<f64>,
    eval: Eval,
    iterations: usize,
    trace: Vec<f64>,
    hit_floor: bool,
}

/// Damped Newton ascent. With `with_alpha`, the last parameter is log α and
/// the loop stops early if it crosses the Poisson floor.
fn newton(problem: &Problem, start: Vec<f64>, with_alpha: bool) -> Result<NewtonOutcome> {
    let split = |p: &[f64]| -> (Vec<f64>, Option<f64>) {
        if with_alpha {
            (p[..p.len() - 1].to_vec(), Some(p[p.len() - 1]))
        } else {
            (p.to_vec(), None)
        }
    };
    let mut params = start;
    let mut trace = Vec::new();
    for it in 1..=MAX_ITER {
        let (theta, la) = split(&params);
        let eval = problem.evaluate(&theta, la);
        trace.push(eval.loglik);
        let neg_h = -&eval.hess;
        let step = solve_damped(&neg_h, &eval.grad)?;
        let decrement = eval.grad.dot(&step);
        if decrement.abs() < 1e-10 {
            return Ok(NewtonOutcome { params, eval, iterations: it, trace, hit_floor: false });
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + t * s).collect();
            let (ct, cla) = split(&cand);
            let ll = problem.loglik(&ct, cla);
            if ll.is_finite() && ll >= eval.loglik - 1e-10 * eval.loglik.abs().max(1.0) {
                params = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(EstimationError::LikelihoodNoConvergence { iterations: it, trace });
        }
        if with_alpha && params[params.len() - 1] < LOG_ALPHA_FLOOR {
            let (theta, la) = split(&params);
            let eval = problem.evaluate(&theta, la);
            return Ok(NewtonOutcome { params, eval, iterations: it, trace, hit_floor: true });
        }
    }
    Err(EstimationError::LikelihoodNoConvergence { iterations: MAX_ITER, trace })
}

/// Solves A x = b for symmetric A, adding a growing ridge if A is not
/// positive definite (far from the optimum).
fn solve_damped(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).fold(1e-12, f64::max);
    let mut ridge = 0.0;
    for _ in 0..30 {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(c) = m.cholesky() {
            return Ok(c.solve(b));
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
    }
    Err(EstimationError::InvalidInput("Hessian could not be regularised".into()))
}

pub fn fit_negbin_full(spec: &ModelSpec, data: &PanelDataset) -> Result<NegBinFit> {
    spec.validate()?;
    if spec.estimator != Estimator::NegBin {
        return invalid("fit_negbin requires the negbin estimator");
    }
    if spec.fe.is_empty() {
        return invalid("negbin needs at least one dummy set (e.g. unit and period)");
    }
    let mut sample = spec.sample(data)?;
    let offset_name = spec.offset.as_deref().unwrap_or_default();
    let original_rows = sample.len();

    // Drop groups with all-zero outcomes until none remain.
    loop {
        let y = sample.column(&spec.outcome)?;
        let mut keep = vec![true; sample.len()];
        for set in &spec.fe {
            let ids = set.group_ids(&sample)?;
            let g = ids.iter().max().map_or(0, |m| m + 1);
            let mut total = vec![0.0; g];
            ids.iter().zip(y.iter()).for_each(|(&id, &v)| total[id] += v);
            ids.iter().enumerate().for_each(|(i, &id)| keep[i] &= total[id] > 0.0);
        }
        if keep.iter().all(|k| *k) {
            break;
        }
        sample = sample.select(&keep)?;
    }
    if sample.is_empty() {
        return Err(EstimationError::InsufficientData("every group has all-zero outcomes".into()));
    }
    let dropped = original_rows - sample.len();

    let y = sample.column(&spec.outcome)?.to_vec();
    if let Some(i) = y.iter().position(|v| !(*v >= 0.0 && v.fract() == 0.0)) {
        return invalid(format!("count outcome must be a nonnegative integer; row {i} has {}", y[i]));
    }
    let offset = sample.column(offset_name)?.to_vec();
    if offset.iter().any(|v| !v.is_finite()) {
        return invalid("offset must be finite");
    }
    let slopes: Vec<Vec<f64>> = spec.regressors.iter().map(|t| sample.term(t)).collect::<Result<_>>()?;
    let names = spec.regressor_names();
    let k = slopes.len();

    // Dummy layout after the slopes.
    let mut rows: Vec<Vec<(usize, f64)>> =
        (0..y.len()).map(|i| (0..k).map(|j| (j, slopes[j][i])).collect()).collect();
    let mut effect_names = Vec::new();
    let mut next = k;
    let mut first_set_ids = Vec::new();
    for (s, set) in spec.fe.iter().enumerate() {
        let labels = if set.keys().len() == 1 {
            sample.key(&set.keys()[0])?
        } else {
            let cols: Vec<Vec<String>> = set.keys().iter().map(|k| sample.key(k)).collect::<Result<_>>()?;
            (0..y.len()).map(|i| cols.iter().map(|c| c[i].as_str()).collect::<Vec<_>>().join("^")).collect()
        };
        let ids = dense_ids(labels.iter().map(String::as_str));
        let g = ids.iter().max().map_or(0, |m| m + 1);
        let mut level_names = vec![String::new(); g];
        for (i, &id) in ids.iter().enumerate() {
            level_names[id] = labels[i].clone();
        }
        let skip = usize::from(s > 0);
        for name in level_names.iter().skip(skip) {
            effect_names.push(format!("{set}[{name}]"));
        }
        for (i, &id) in ids.iter().enumerate() {
            if id >= skip {
                rows[i].push((next + id - skip, 1.0));
            }
        }
        if s == 0 {
            first_set_ids = ids;
        }
        next += g - skip;
    }
    let n_params = next;
    if y.len() <= n_params {
        return Err(EstimationError::InsufficientData(format!("{} rows for {n_params} parameters", y.len())));
    }
    // Slopes must vary within the dummy structure.
    if k > 0 {
        let bad = collinear_columns(&slopes, &names, &[]);
        if !bad.is_empty() {
            return Err(EstimationError::RankDeficient(bad));
        }
    }

    let ln_y_fact = y.iter().map(|&v| ln_gamma(v + 1.0)).collect();
    let problem = Problem { y, offset, rows, ln_y_fact, n_params };

    // Poisson start: first-set levels at log(Σy / Σ exp(offset)).
    let g0 = first_set_ids.iter().max().map_or(0, |m| m + 1);
    let (mut sy, mut se) = (vec![0.0; g0], vec![0.0; g0]);
    for (i, &id) in first_set_ids.iter().enumerate() {
        sy[id] += problem.y[i];
        se[id] += problem.offset[i].exp();
    }
    let mut start = vec![0.0; n_params];
    for g in 0..g0 {
        start[k + g] = (sy[g] / se[g]).ln();
    }
    let poisson = newton(&problem, start, false)?;

    // Moment start for α from Poisson residuals.
    let theta0 = poisson.params.clone();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..problem.y.len() {
        let mu = problem.mu(&theta0, i);
        num += (problem.y[i] - mu).powi(2) - problem.y[i];
        den += mu * mu;
    }
    let alpha0 = (num / den).max(1e-3);
    let mut start_nb = theta0.clone();
    start_nb.push(alpha0.ln());
    let nb = newton(&problem, start_nb, true)?;

    let (final_params, eval, with_alpha, iterations, trace, poisson_limit) = if nb.hit_floor {
        (poisson.params, poisson.eval, false, poisson.iterations + nb.iterations, nb.trace, true)
    } else {
        (nb.params, nb.eval, true, poisson.iterations + nb.iterations, nb.trace, false)
    };
    let p = eval.grad.len();
    let names_all: Vec<String> = (0..p).map(|j| format!("param {j}")).collect();
    let info_inv = crate::linalg::invert_spd(&(-&eval.hess), &names_all)?;
    let theta: Vec<f64> = final_params[..n_params].to_vec();
    let log_alpha = if with_alpha { Some(final_params[n_params]) } else { None };

    let (full_vcov, n_clusters) = match spec.vcov {
        VcovKind::Model => (info_inv.clone(), None),
        VcovKind::Cluster => {
            let labels = sample.key(&spec.cluster)?;
            let g = count_clusters(&labels);
            if g < 2 {
                return invalid("clustered covariance needs at least 2 clusters");
            }
            let (meat, g) = crate::vcov::cluster_meat(&problem.scores(&theta, log_alpha), &labels);
            let c = g as f64 / (g as f64 - 1.0);
            (symmetrize(&info_inv * meat * &info_inv * c), Some(g))
        }
        VcovKind::Hc1 => {
            let s = problem.scores(&theta, log_alpha);
            let meat = s.transpose() * &s;
            (symmetrize(&info_inv * meat * &info_inv), None)
        }
    };
    let vcov = full_vcov.view((0, 0), (k, k)).into_owned();
    let mut report = EstimateReport::new(names, theta[..k].to_vec(), vcov, problem.y.len());
    report.n_clusters = n_clusters;
    report.dropped = dropped;
    let dispersion = log_alpha.map_or(0.0, f64::exp);
    let dispersion_se = log_alpha.map(|la| la.exp() * full_vcov[(n_params, n_params)].max(0.0).sqrt());
    report.convergence = Some(Convergence {
        iterations,
        converged: true,
        log_likelihood: Some(eval.loglik),
        dispersion: Some(dispersion),
        dispersion_se,
        poisson_limit,
        trace,
    });
    let effects = effect_names.into_iter().zip(theta[k..].iter().copied()).collect();
    Ok(NegBinFit { report, effects, dispersion })
}
