//! Convex losses over marginal vectors and the two proximal estimation
//! algorithms that optimize them over the marginal polytope, producing a
//! graphical model.

use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array1, Array2};

use crate::clique_vector::CliqueVector;
use crate::domain::Clique;
use crate::error::{Error, Result};
use crate::factor::{Factor, Space};
use crate::junction_tree::JunctionTree;
use crate::model::GraphicalModel;

/// A noisy linear measurement of one clique marginal:
/// answer = query * marginal + Laplace(noise_scale) noise per entry.
#[derive(Debug, Clone)]
pub struct LinearMeasurement {
    pub clique: Clique,
    pub query: Array2<f64>,
    pub answer: Array1<f64>,
    pub noise_scale: f64,
}

impl LinearMeasurement {
    pub fn new(
        clique: Clique,
        query: Array2<f64>,
        answer: Array1<f64>,
        noise_scale: f64,
    ) -> Result<LinearMeasurement> {
        if query.nrows() != answer.len() {
            return Err(Error::InvalidArgument(format!(
                "query has {} rows but answer has {} entries",
                query.nrows(),
                answer.len()
            )));
        }
        if noise_scale <= 0.0 {
            return Err(Error::InvalidArgument(
                "noise scale must be positive".into(),
            ));
        }
        Ok(LinearMeasurement {
            clique,
            query,
            answer,
            noise_scale,
        })
    }

    fn check_width(&self, clique_size: usize) -> Result<()> {
        if self.query.ncols() != clique_size {
            return Err(Error::InvalidArgument(format!(
                "query over {} has {} columns but the clique has {} cells",
                self.clique,
                self.query.ncols(),
                clique_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
}

type CustomLoss = dyn Fn(&CliqueVector) -> Result<(f64, CliqueVector)> + Send + Sync;

/// A convex loss over the marginal vector. Either a built-in L1/L2 loss over
/// linear measurements, or a caller-supplied (value, gradient) evaluator.
pub enum LossSpec {
    Linear {
        kind: LossKind,
        measurements: Vec<LinearMeasurement>,
    },
    Custom(Box<CustomLoss>),
}

impl LossSpec {
    pub fn l1(measurements: Vec<LinearMeasurement>) -> LossSpec {
        LossSpec::Linear {
            kind: LossKind::L1,
            measurements,
        }
    }

    pub fn l2(measurements: Vec<LinearMeasurement>) -> LossSpec {
        LossSpec::Linear {
            kind: LossKind::L2,
            measurements,
        }
    }

    pub fn custom(f: Box<CustomLoss>) -> LossSpec {
        LossSpec::Custom(f)
    }

    pub fn measurements(&self) -> &[LinearMeasurement] {
        match self {
            LossSpec::Linear { measurements, .. } => measurements,
            LossSpec::Custom(_) => &[],
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(
            self,
            LossSpec::Linear {
                kind: LossKind::L2,
                ..
            }
        )
    }

    /// Loss value at `mu` without the gradient; cheaper than
    /// [`LossSpec::value_and_gradient`] because the transpose products and
    /// clique lifting are skipped.
    pub fn value(&self, mu: &CliqueVector) -> Result<f64> {
        match self {
            LossSpec::Custom(f) => f(mu).map(|(v, _)| v),
            LossSpec::Linear { kind, measurements } => {
                let domain = mu.domain().clone();
                let mut value = 0.0;
                for m in measurements {
                    m.check_width(domain.clique_size(&m.clique))?;
                    let mu_sub = mu.project(&m.clique)?;
                    let mu_vec = Array1::from_vec(mu_sub.flat());
                    let diff = m.query.dot(&mu_vec) - &m.answer;
                    value += match kind {
                        LossKind::L2 => 0.5 * diff.iter().map(|d| d * d).sum::<f64>(),
                        LossKind::L1 => diff.iter().map(|d| d.abs()).sum::<f64>(),
                    };
                }
                Ok(value)
            }
        }
    }

    /// Loss value and gradient at `mu`. The gradient has the same clique
    /// keying as `mu`; gradients on measurement sub-cliques are lifted into
    /// the covering clique by broadcast-expansion (the transpose of
    /// projection).
    pub fn value_and_gradient(&self, mu: &CliqueVector) -> Result<(f64, CliqueVector)> {
        match self {
            LossSpec::Custom(f) => f(mu),
            LossSpec::Linear { kind, measurements } => {
                let domain = mu.domain().clone();
                let cliques: Vec<Clique> = mu.cliques().cloned().collect();
                let mut grad = CliqueVector::zeros(domain.clone(), &cliques, Space::Linear);
                let mut value = 0.0;
                for m in measurements {
                    let cover = mu
                        .covering_clique(&m.clique)
                        .ok_or_else(|| {
                            Error::Clique(format!(
                                "measurement clique {} not covered by any model clique",
                                m.clique
                            ))
                        })?
                        .clone();
                    m.check_width(domain.clique_size(&m.clique))?;
                    let mu_sub = mu.get(&cover).unwrap().project(&m.clique)?;
                    let mu_vec = Array1::from_vec(mu_sub.flat());
                    let diff = m.query.dot(&mu_vec) - &m.answer;
                    let g_vec = match kind {
                        LossKind::L2 => {
                            value += 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
                            m.query.t().dot(&diff)
                        }
                        LossKind::L1 => {
                            value += diff.iter().map(|d| d.abs()).sum::<f64>();
                            // subgradient 0 at exact fits (signum(0) is 1)
                            let sign = diff.mapv(|d| if d == 0.0 { 0.0 } else { d.signum() });
                            m.query.t().dot(&sign)
                        }
                    };
                    let g_sub = Factor::new(
                        domain.clone(),
                        m.clique.clone(),
                        g_vec.to_vec(),
                        Space::Linear,
                    )?;
                    let lifted = g_sub.expand(&cover)?;
                    grad.get_mut(&cover).unwrap().add_scaled(&lifted, 1.0)?;
                }
                Ok((value, grad))
            }
        }
    }
}

/// Divides each measurement's query and answer by its noise scale so that
/// all output measurements have unit noise scale. With the L2 loss this is
/// the inverse-variance (heteroskedastic maximum-likelihood) weighting.
pub fn rescale_measurements(measurements: &[LinearMeasurement]) -> Vec<LinearMeasurement> {
    measurements
        .iter()
        .map(|m| LinearMeasurement {
            clique: m.clique.clone(),
            query: &m.query / m.noise_scale,
            answer: &m.answer / m.noise_scale,
            noise_scale: 1.0,
        })
        .collect()
}

/// Jacobi eigendecomposition of a symmetric matrix; returns (eigenvalues,
/// eigenvectors as columns). Used for small pseudo-inverse solves.
fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = Array1::from_iter((0..n).map(|i| m[[i, i]]));
    (eig, v)
}

/// Inverse-variance-weighted estimate of the dataset total from measurements
/// whose query row space contains the all-ones vector. Returns the estimate
/// and its variance, with per-entry noise variance 2 * noise_scale^2.
pub fn estimate_total(measurements: &[LinearMeasurement]) -> Result<(f64, f64)> {
    let mut weight_sum = 0.0;
    let mut weighted = 0.0;
    for m in measurements {
        // minimum-norm w with query^T w = 1 (if consistent):
        // w = pinv(Q Q^T) Q 1
        let q = &m.query;
        let gram = q.dot(&q.t());
        let rhs = q.dot(&Array1::from_elem(q.ncols(), 1.0));
        let (eig, vecs) = symmetric_eigen(&gram);
        let max_eig = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if max_eig == 0.0 {
            continue;
        }
        let tol = max_eig * 1e-12 * gram.nrows() as f64;
        let mut w = Array1::zeros(gram.nrows());
        for i in 0..eig.len() {
            if eig[i].abs() > tol {
                let col = vecs.column(i);
                let coef = col.dot(&rhs) / eig[i];
                w = w + coef * &col.to_owned();
            }
        }
        // eligibility: 1 must actually be reproduced by the row space
        let recon = q.t().dot(&w);
        if recon.iter().any(|r| (r - 1.0).abs() > 1e-8) {
            continue;
        }
        let m_c = w.dot(&m.answer);
        let var = 2.0 * m.noise_scale * m.noise_scale * w.dot(&w);
        weighted += m_c / var;
        weight_sum += 1.0 / var;
    }
    if weight_sum == 0.0 {
        return Err(Error::TotalUnidentifiable);
    }
    Ok((weighted / weight_sum, 1.0 / weight_sum))
}

/// Largest eigenvalue of Q^T Q over the measurement blocks, by power
/// iteration to 1e-6 relative tolerance. The Lipschitz constant of the L2
/// gradient.
pub fn lipschitz_constant(measurements: &[LinearMeasurement]) -> Result<f64> {
    if measurements.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot compute a Lipschitz constant for an empty measurement list".into(),
        ));
    }
    let mut best: f64 = 0.0;
    for m in measurements {
        let n = m.query.ncols();
        // deterministic non-degenerate start
        let mut v = Array1::from_iter((0..n).map(|i| 1.0 + ((i * 2654435761) % 97) as f64 / 97.0));
        let norm = v.dot(&v).sqrt();
        v /= norm;
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let w = m.query.t().dot(&m.query.dot(&v));
            let new_lambda = v.dot(&w);
            let wn = w.dot(&w).sqrt();
            if wn == 0.0 {
                lambda = 0.0;
                break;
            }
            v = w / wn;
            if (new_lambda - lambda).abs() <= 1e-6 * new_lambda.abs().max(1e-12) {
                lambda = new_lambda;
                break;
            }
            lambda = new_lambda;
        }
        best = best.max(lambda);
    }
    Ok(best)
}

/// Step-size schedule for the proximal (mirror-descent) algorithm.
#[derive(Debug, Clone, Copy)]
pub enum StepRule {
    Constant(f64),
    /// eta_t = eta0 / sqrt(t); eta0 defaults to 1/||grad(uniform)||_inf.
    DecreasingSqrt { eta0: Option<f64> },
    /// Decreasing schedule with backtracking: halve eta (up to 20 times)
    /// until the loss decreases. Keeps the loss trace non-increasing.
    LineSearch { eta0: Option<f64> },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::LineSearch { eta0: None }
    }
}

/// Per-run optimization record.
#[derive(Debug, Clone)]
pub struct EstimationReport {
    pub iterations: usize,
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    pub step_sizes: Vec<f64>,
    pub seconds_per_iteration: Vec<f64>,
    pub theta_max_abs: f64,
    /// Averaged marginal iterate from the accelerated algorithm; its
    /// marginals may differ from the returned model's oracle marginals.
    pub averaged_marginals: Option<CliqueVector>,
}

const EARLY_STOP_WINDOW: usize = 20;
const EARLY_STOP_REL: f64 = 1e-9;

fn should_stop(trace: &[f64]) -> bool {
    if trace.len() <= EARLY_STOP_WINDOW {
        return false;
    }
    let now = trace[trace.len() - 1];
    let then = trace[trace.len() - 1 - EARLY_STOP_WINDOW];
    (then - now).abs() <= EARLY_STOP_REL * then.abs()
}

fn check_finite(value: f64, grad: &CliqueVector, iteration: usize) -> Result<()> {
    if !value.is_finite() || !grad.is_finite() {
        return Err(Error::NumericFailure {
            iteration,
            message: "non-finite loss or gradient".into(),
        });
    }
    Ok(())
}

/// Proximal estimation: entropic mirror descent over the marginal polytope.
/// Every iterate is an exact oracle output and therefore a valid marginal
/// vector. Converges at O(1/sqrt(t)) for any convex loss.
pub fn mirror_descent(
    tree: &Arc<JunctionTree>,
    spec: &LossSpec,
    total: f64,
    steps: usize,
    step_rule: StepRule,
) -> Result<(GraphicalModel, EstimationReport)> {
    if steps < 1 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let domain = tree.domain().clone();
    let mut theta = CliqueVector::zeros(domain.clone(), tree.maximal_cliques(), Space::Log);
    let (mu, _) = tree.marginal_oracle(&theta, total)?;

    let mut trace = Vec::with_capacity(steps);
    let mut step_sizes = Vec::with_capacity(steps);
    let mut timings = Vec::with_capacity(steps);
    let mut eta0 = match step_rule {
        StepRule::Constant(eta) => eta,
        StepRule::DecreasingSqrt { eta0 } | StepRule::LineSearch { eta0 } => {
            eta0.unwrap_or(f64::NAN)
        }
    };

    let mut loss;
    let mut grad;
    let (l0, g0) = spec.value_and_gradient(&mu)?;
    check_finite(l0, &g0, 0)?;
    if eta0.is_nan() {
        let g_inf = g0.max_abs();
        eta0 = if g_inf > 0.0 { 1.0 / g_inf } else { 1.0 };
    }
    loss = l0;
    grad = g0;

    for t in 1..=steps {
        let started = Instant::now();
        trace.push(loss);
        let eta_t = match step_rule {
            StepRule::Constant(eta) => eta,
            _ => eta0 / (t as f64).sqrt(),
        };
        match step_rule {
            StepRule::LineSearch { .. } => {
                let mut eta = eta_t;
                let mut accepted = false;
                for _ in 0..20 {
                    let mut cand = theta.clone();
                    cand.add_scaled(&grad, -eta)?;
                    let (mu_c, _) = tree.marginal_oracle(&cand, total)?;
                    let (l_c, g_c) = spec.value_and_gradient(&mu_c)?;
                    check_finite(l_c, &g_c, t)?;
                    if l_c <= loss {
                        theta = cand;
                        loss = l_c;
                        grad = g_c;
                        accepted = true;
                        break;
                    }
                    eta *= 0.5;
                }
                step_sizes.push(if accepted { eta } else { 0.0 });
            }
            _ => {
                theta.add_scaled(&grad, -eta_t)?;
                let (mu_n, _) = tree.marginal_oracle(&theta, total)?;
                let (l_n, g_n) = spec.value_and_gradient(&mu_n)?;
                check_finite(l_n, &g_n, t)?;
                loss = l_n;
                grad = g_n;
                step_sizes.push(eta_t);
            }
        }
        timings.push(started.elapsed().as_secs_f64());
        if should_stop(&trace) {
            break;
        }
    }

    let model = GraphicalModel::from_parameters(tree.clone(), theta, total)?;
    let report = EstimationReport {
        iterations: trace.len(),
        final_loss: loss,
        loss_trace: trace,
        step_sizes,
        seconds_per_iteration: timings,
        theta_max_abs: model.theta().max_abs(),
        averaged_marginals: None,
    };
    Ok((model, report))
}

/// Accelerated proximal estimation (Nesterov dual averaging over the
/// marginal polytope); O(1/t^2) for losses with Lipschitz gradients.
///
/// `lipschitz` must upper-bound the Lipschitz constant of the gradient; for
/// the L2 loss it defaults to the largest eigenvalue of Q^T Q. The returned
/// model carries the oracle parameters whose marginals scored the lowest
/// loss; the report's trace follows the averaged marginal iterate (the
/// sequence with the O(1/t^2) guarantee), which it also documents.
pub fn accelerated_estimate(
    tree: &Arc<JunctionTree>,
    spec: &LossSpec,
    total: f64,
    steps: usize,
    lipschitz: Option<f64>,
) -> Result<(GraphicalModel, EstimationReport)> {
    if steps < 1 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    if let LossSpec::Linear {
        kind: LossKind::L1, ..
    } = spec
    {
        return Err(Error::InvalidArgument(
            "the accelerated algorithm requires a Lipschitz gradient; \
             use mirror_descent for the L1 loss"
                .into(),
        ));
    }
    let k = match lipschitz {
        Some(k) => k,
        None => lipschitz_constant(spec.measurements())?,
    };
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(
            "Lipschitz constant must be positive".into(),
        ));
    }

    let domain = tree.domain().clone();
    let cliques = tree.maximal_cliques();
    let mut gbar = CliqueVector::zeros(domain.clone(), cliques, Space::Linear);
    let zero_theta = CliqueVector::zeros(domain.clone(), cliques, Space::Log);
    let (nu0, _) = tree.marginal_oracle(&zero_theta, total)?;
    let mut mu = nu0.clone();
    let mut nu = nu0;
    let mut theta = zero_theta;

    let mut trace = Vec::with_capacity(steps);
    let mut timings = Vec::with_capacity(steps);
    let mut best_theta = theta.clone();
    let mut best_nu_loss = f64::INFINITY;
    for t in 1..=steps {
        let started = Instant::now();
        let c = 2.0 / (t as f64 + 1.0);
        let omega = mu.interpolate(&nu, c)?;
        let (l_omega, g) = spec.value_and_gradient(&omega)?;
        check_finite(l_omega, &g, t)?;
        gbar = gbar.interpolate(&g, c)?;
        theta = {
            let mut th = gbar.clone();
            th.scale(-(t as f64) * (t as f64 + 1.0) / (4.0 * k));
            th.with_space(Space::Log)
        };
        let (nu_n, _) = tree.marginal_oracle(&theta, total)?;
        nu = nu_n;
        // the returned model must itself be an oracle output, so track the
        // parameters whose exact marginals fit best
        let l_nu = spec.value(&nu)?;
        if l_nu < best_nu_loss {
            best_nu_loss = l_nu;
            best_theta = theta.clone();
        }
        mu = mu.interpolate(&nu, c)?;
        let l_mu = spec.value(&mu)?;
        trace.push(l_mu);
        timings.push(started.elapsed().as_secs_f64());
        if should_stop(&trace) {
            break;
        }
    }

    let final_loss = *trace.last().unwrap();
    let model = GraphicalModel::from_parameters(tree.clone(), best_theta, total)?;
    let report = EstimationReport {
        iterations: trace.len(),
        final_loss,
        loss_trace: trace,
        step_sizes: Vec::new(),
        seconds_per_iteration: timings,
        theta_max_abs: model.theta().max_abs(),
        averaged_marginals: Some(mu),
    };
    Ok((model, report))
}
