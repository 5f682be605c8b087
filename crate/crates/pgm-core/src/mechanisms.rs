//! Privacy primitives (sensitivity, Laplace and exponential mechanisms),
//! the MWEM-style select–measure–estimate loop, and workload evaluation.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::clique_vector::CliqueVector;
use crate::data::Dataset;
use crate::domain::Clique;
use crate::error::{Error, Result};
use crate::estimation::{
    accelerated_estimate, mirror_descent, rescale_measurements, LinearMeasurement, LossSpec,
    StepRule,
};
use crate::factor::Factor;
use crate::inference::model_marginal;
use crate::junction_tree::JunctionTree;
use crate::model::GraphicalModel;

/// A set of linear queries to answer well: one matrix per clique.
#[derive(Debug, Clone)]
pub struct Workload {
    entries: Vec<(Clique, Array2<f64>)>,
}

impl Workload {
    pub fn new(entries: Vec<(Clique, Array2<f64>)>) -> Result<Workload> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("workload is empty".into()));
        }
        Ok(Workload { entries })
    }

    pub fn entries(&self) -> &[(Clique, Array2<f64>)] {
        &self.entries
    }

    pub fn cliques(&self) -> impl Iterator<Item = &Clique> {
        self.entries.iter().map(|(c, _)| c)
    }
}

/// One debit against the privacy budget. Shares are exact fractions of the
/// configured budget so that accounting never drifts in floating point.
#[derive(Debug, Clone)]
pub struct BudgetEntry {
    pub mechanism: String,
    pub clique: Option<Clique>,
    /// Fraction of the total budget, as numerator/denominator.
    pub share: (u64, u64),
    pub epsilon: f64,
    /// False for noiseless (test-mode) outputs, which carry no guarantee.
    pub private: bool,
}

/// Sequential-composition ledger: consumed budget is tracked as an exact
/// rational fraction of the configured total.
#[derive(Debug, Clone)]
pub struct PrivacyAccountant {
    budget: f64,
    consumed_num: u128,
    consumed_den: u128,
    entries: Vec<BudgetEntry>,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

impl PrivacyAccountant {
    pub fn new(budget: f64) -> Result<PrivacyAccountant> {
        if !(budget > 0.0) {
            return Err(Error::InvalidArgument("budget must be positive".into()));
        }
        Ok(PrivacyAccountant {
            budget,
            consumed_num: 0,
            consumed_den: 1,
            entries: Vec::new(),
        })
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Epsilon corresponding to a budget share.
    pub fn epsilon_of(&self, share: (u64, u64)) -> f64 {
        self.budget * share.0 as f64 / share.1 as f64
    }

    /// Debits a budget share; errors if the consumed fraction would exceed 1.
    pub fn charge(
        &mut self,
        share: (u64, u64),
        mechanism: &str,
        clique: Option<Clique>,
        private: bool,
    ) -> Result<f64> {
        let (num, den) = share;
        if den == 0 || num == 0 {
            return Err(Error::InvalidArgument("budget share must be positive".into()));
        }
        // consumed + num/den, exactly
        let n = self.consumed_num * den as u128 + num as u128 * self.consumed_den;
        let d = self.consumed_den * den as u128;
        let g = gcd(n, d);
        let (n, d) = (n / g, d / g);
        if private && n > d {
            return Err(Error::BudgetExceeded {
                requested: self.epsilon_of(share),
                remaining: self.budget * (1.0 - self.consumed_num as f64 / self.consumed_den as f64),
            });
        }
        if private {
            self.consumed_num = n;
            self.consumed_den = d;
        }
        let epsilon = self.epsilon_of(share);
        self.entries.push(BudgetEntry {
            mechanism: mechanism.to_string(),
            clique,
            share,
            epsilon,
            private,
        });
        Ok(epsilon)
    }

    /// Exact consumed fraction of the budget.
    pub fn consumed_fraction(&self) -> (u64, u64) {
        (self.consumed_num as u64, self.consumed_den as u64)
    }

    pub fn consumed_epsilon(&self) -> f64 {
        self.budget * self.consumed_num as f64 / self.consumed_den as f64
    }

    pub fn entries(&self) -> &[BudgetEntry] {
        &self.entries
    }

    /// True when every recorded output carries the privacy guarantee.
    pub fn all_private(&self) -> bool {
        self.entries.iter().all(|e| e.private)
    }
}

/// L1 sensitivity of q applied to a normalized marginal of an m-record
/// dataset: (2/m) times the largest column L1 norm.
pub fn sensitivity(q: &Array2<f64>, m: usize) -> Result<f64> {
    if q.nrows() == 0 || q.ncols() == 0 {
        return Err(Error::InvalidArgument("empty query matrix".into()));
    }
    if m < 1 {
        return Err(Error::InvalidArgument("record count must be >= 1".into()));
    }
    let max_col = q
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    Ok(2.0 * max_col / m as f64)
}

fn laplace(b: f64, rng: &mut ChaCha12Rng) -> f64 {
    // inverse CDF; u in (-1/2, 1/2), argument of ln guarded away from 0
    let u: f64 = rng.gen::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

/// Measures q applied to the normalized clique marginal under the Laplace
/// mechanism, debiting `share` of the accountant's budget.
///
/// `data_marginal` is a count-scale marginal of an m-record dataset; the
/// answer is on the normalized (sums-to-1) scale. With `noiseless` the exact
/// answer is returned at nominal unit noise scale and the accountant records
/// the output as non-private.
pub fn laplace_measure(
    data_marginal: &Factor,
    q: &Array2<f64>,
    share: (u64, u64),
    m: usize,
    noiseless: bool,
    accountant: &mut PrivacyAccountant,
    rng: &mut ChaCha12Rng,
) -> Result<LinearMeasurement> {
    let counts = data_marginal.flat();
    if q.ncols() != counts.len() {
        return Err(Error::InvalidArgument(format!(
            "query has {} columns, marginal over {} has {} cells",
            q.ncols(),
            data_marginal.clique(),
            counts.len()
        )));
    }
    let epsilon = accountant.charge(
        share,
        "laplace",
        Some(data_marginal.clique().clone()),
        !noiseless,
    )?;
    let p = Array1::from_iter(counts.iter().map(|&c| c / m as f64));
    let exact = q.dot(&p);
    if noiseless {
        return LinearMeasurement::new(data_marginal.clique().clone(), q.clone(), exact, 1.0);
    }
    let b = sensitivity(q, m)? / epsilon;
    let noisy = exact.mapv(|v| v + laplace(b, rng));
    LinearMeasurement::new(data_marginal.clique().clone(), q.clone(), noisy, b)
}

/// Exponential mechanism: returns index i with probability proportional to
/// exp(epsilon * score_i / (2 * score_sensitivity)), computed stably.
pub fn exponential_select(
    scores: &[f64],
    epsilon: f64,
    score_sensitivity: f64,
    rng: &mut ChaCha12Rng,
) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores to select from".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    if !(epsilon > 0.0) || !(score_sensitivity > 0.0) {
        return Err(Error::InvalidArgument(
            "epsilon and score sensitivity must be positive".into(),
        ));
    }
    let scale = epsilon / (2.0 * score_sensitivity);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|&s| ((s - max) * scale).exp()).collect();
    let sum: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * sum;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return Ok(i);
        }
    }
    Ok(scores.len() - 1)
}

/// Average normalized L1 error of the model's workload answers:
/// (1/|C|) sum_C ||W_C mu_C - W_C mu_hat_C||_1 / (2 ||W_C mu_C||_1).
/// `true_marginals` and the model must share a scale (both counts or both
/// normalized).
pub fn workload_error(
    true_marginals: &CliqueVector,
    model: &GraphicalModel,
    workload: &Workload,
) -> Result<f64> {
    let mut total = 0.0;
    for (clique, w) in workload.entries() {
        let mu = true_marginals.project(clique)?;
        let mu_hat = model_marginal(model, clique)?;
        let mu_v = Array1::from(mu.flat());
        let hat_v = Array1::from(mu_hat.flat());
        if w.ncols() != mu_v.len() {
            return Err(Error::InvalidArgument(format!(
                "workload matrix over {clique} has {} columns, clique has {} cells",
                w.ncols(),
                mu_v.len()
            )));
        }
        let truth = w.dot(&mu_v);
        let denom: f64 = 2.0 * truth.iter().map(|v| v.abs()).sum::<f64>();
        if denom == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate workload: ||W mu||_1 = 0 over {clique}"
            )));
        }
        let diff = &truth - &w.dot(&hat_v);
        total += diff.iter().map(|v| v.abs()).sum::<f64>() / denom;
    }
    Ok(total / workload.entries().len() as f64)
}

/// Identity-query workload over every triple of adjacent attributes,
/// as used by the scalability benchmark.
pub fn adjacent_triples_workload(d: usize, cardinality: usize) -> Result<(Vec<Clique>, Workload)> {
    if d < 3 {
        return Err(Error::InvalidArgument(
            "adjacent triples need at least 3 attributes".into(),
        ));
    }
    let size = cardinality
        .saturating_mul(cardinality)
        .saturating_mul(cardinality);
    // each entry carries a dense size x size identity
    if size.saturating_mul(size) > (1 << 26) {
        return Err(Error::Feasibility(format!(
            "adjacent-triple identity queries of {size} x {size} exceed the \
             dense construction limit"
        )));
    }
    let mut cliques = Vec::with_capacity(d - 2);
    let mut entries = Vec::with_capacity(d - 2);
    for i in 0..d - 2 {
        let c = Clique::new(vec![i, i + 1, i + 2])?;
        cliques.push(c.clone());
        entries.push((c, Array2::eye(size)));
    }
    Ok((cliques, Workload::new(entries)?))
}

/// Configuration for the MWEM-style loop.
#[derive(Debug, Clone)]
pub struct MwemConfig {
    /// Estimation iterations per round.
    pub iterations: usize,
    /// Use the accelerated estimator (requires the smooth L2 loss).
    pub accelerated: bool,
    /// Skip noise entirely; outputs are marked non-private.
    pub noiseless: bool,
    /// Reject junction trees above this many parameters.
    pub parameter_cap: Option<usize>,
}

impl Default for MwemConfig {
    fn default() -> Self {
        MwemConfig {
            iterations: 250,
            accelerated: true,
            noiseless: false,
            parameter_cap: Some(100_000_000),
        }
    }
}

/// Select–measure–estimate: each round spends epsilon/T, half on picking the
/// worst-answered workload query via the exponential mechanism and half on a
/// Laplace measurement of the owning clique's full marginal; the model is
/// then re-estimated from every measurement taken so far.
pub fn mwem_pgm(
    data: &Dataset,
    workload: &Workload,
    epsilon: f64,
    rounds: usize,
    config: &MwemConfig,
    seed: u64,
) -> Result<(GraphicalModel, PrivacyAccountant)> {
    if rounds < 1 {
        return Err(Error::InvalidArgument("rounds must be >= 1".into()));
    }
    let m = data.len();
    if m == 0 {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let domain = data.domain().clone();
    let mut accountant = PrivacyAccountant::new(epsilon)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // row index -> owning sub-workload, for mapping a selected query back to
    // its clique
    let row_owner: Vec<usize> = workload
        .entries()
        .iter()
        .enumerate()
        .flat_map(|(k, (_, w))| std::iter::repeat(k).take(w.nrows()))
        .collect();

    let mut measurements: Vec<LinearMeasurement> = Vec::new();
    let mut measured: Vec<Clique> = Vec::new();
    let mut tree = Arc::new(JunctionTree::build(domain.clone(), &[])?);
    let mut model = GraphicalModel::uniform(tree.clone(), m as f64)?;

    let round_share = |phase_rounds: u64| -> (u64, u64) { (1, 2 * phase_rounds) };
    let share = round_share(rounds as u64);

    for _round in 0..rounds {
        // count-scale absolute error of every workload query under the
        // current model
        let mut scores = Vec::with_capacity(row_owner.len());
        for (clique, w) in workload.entries() {
            let mu = data.marginal(clique)?;
            let mu_hat = model_marginal(&model, clique)?;
            let diff = Array1::from(mu.flat()) - Array1::from(mu_hat.flat());
            let err = w.dot(&diff);
            scores.extend(err.iter().map(|v| v.abs()));
        }
        let select_eps = accountant.charge(share, "exponential", None, !config.noiseless)?;
        let row = if config.noiseless {
            scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        } else {
            // replace-one neighbors move each count-scale answer by at most 2
            exponential_select(&scores, select_eps, 2.0, &mut rng)?
        };
        let clique = workload.entries()[row_owner[row]].0.clone();

        let identity = Array2::eye(domain.clique_size(&clique));
        let measurement = laplace_measure(
            &data.marginal(&clique)?,
            &identity,
            share,
            m,
            config.noiseless,
            &mut accountant,
            &mut rng,
        )?;
        measurements.push(measurement);

        if !measured.contains(&clique) {
            measured.push(clique);
            tree = Arc::new(JunctionTree::build(domain.clone(), &measured)?);
            if let Some(cap) = config.parameter_cap {
                tree.model_size().check_cap(cap)?;
            }
        }

        // re-estimate over all measurements so far, on the normalized scale
        let scaled = rescale_measurements(&measurements);
        let spec = LossSpec::l2(scaled);
        let fitted = if config.accelerated {
            accelerated_estimate(&tree, &spec, 1.0, config.iterations, None)?.0
        } else {
            mirror_descent(&tree, &spec, 1.0, config.iterations, StepRule::default())?.0
        };
        // rescale from the normalized fit to count scale
        model = GraphicalModel::from_parameters(tree.clone(), fitted.theta().clone(), m as f64)?;
    }

    Ok((model, accountant))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::factor::Space;
    use crate::inference::{build_block, QueryBlock};

    fn cl(attrs: &[usize]) -> Clique {
        Clique::new(attrs.to_vec()).unwrap()
    }

    #[test]
    fn sensitivity_formulas() {
        let eye = Array2::<f64>::eye(5);
        assert!((sensitivity(&eye, 100).unwrap() - 0.02).abs() < 1e-15);
        let ones = Array2::<f64>::ones((1, 7));
        assert!((sensitivity(&ones, 1).unwrap() - 2.0).abs() < 1e-15);
        let prefix = build_block(&QueryBlock::Prefix, 4).unwrap();
        assert!((sensitivity(&prefix, 1).unwrap() - 8.0).abs() < 1e-15);
        assert!(sensitivity(&Array2::<f64>::zeros((0, 3)), 1).is_err());
    }

    #[test]
    fn accountant_exact_fractions() {
        let mut acc = PrivacyAccountant::new(1.0).unwrap();
        for _ in 0..10 {
            acc.charge((1, 10), "laplace", None, true).unwrap();
        }
        assert_eq!(acc.consumed_fraction(), (1, 1));
        assert!((acc.consumed_epsilon() - 1.0).abs() < 1e-15);
        assert!(acc.charge((1, 10), "laplace", None, true).is_err());
        // non-private entries never consume budget
        acc.charge((1, 10), "laplace", None, false).unwrap();
        assert!(!acc.all_private());
    }

    #[test]
    fn noiseless_measure_is_exact() {
        let d = Domain::new(vec![("a".into(), 3)]).unwrap();
        let f = Factor::new(d, cl(&[0]), vec![2.0, 5.0, 3.0], Space::Linear).unwrap();
        let q = Array2::eye(3);
        let mut acc = PrivacyAccountant::new(1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let meas =
            laplace_measure(&f, &q, (1, 1), 10, true, &mut acc, &mut rng).unwrap();
        assert_eq!(meas.answer.to_vec(), vec![0.2, 0.5, 0.3]);
        assert!(!acc.all_private());
        assert_eq!(acc.consumed_fraction(), (0, 1));
    }

    #[test]
    fn laplace_noise_statistics() {
        // 1e5 noise draws via one wide measurement
        let d = Domain::new(vec![("a".into(), 1)]).unwrap();
        let f = Factor::new(d, cl(&[0]), vec![4.0], Space::Linear).unwrap();
        let n = 100_000;
        let q = Array2::<f64>::ones((n, 1));
        let mut acc = PrivacyAccountant::new(2.0e5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let meas = laplace_measure(&f, &q, (1, 1), 4, false, &mut acc, &mut rng).unwrap();
        let b = meas.noise_scale;
        assert!(b > 0.0);
        let noise: Vec<f64> = meas.answer.iter().map(|y| y - 1.0).collect();
        let mean = noise.iter().sum::<f64>() / n as f64;
        let var = noise.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 * (2.0 * b * b / n as f64).sqrt(), "mean {mean}");
        assert!((var - 2.0 * b * b).abs() < 0.05 * 2.0 * b * b, "var {var}");
    }

    #[test]
    fn exponential_select_limits() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        // overwhelming epsilon picks the argmax
        let scores = [0.0, 1.0, 0.3];
        let mut hits = 0;
        for _ in 0..1000 {
            if exponential_select(&scores, 1e6, 1.0, &mut rng).unwrap() == 1 {
                hits += 1;
            }
        }
        assert!(hits >= 999);
        assert!(exponential_select(&[], 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn exponential_select_odds() {
        // two scores (0, s): odds exp(eps*s/(2*sens)) : 1
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let s = 1.2;
        let eps = 2.0;
        let sens = 1.0;
        let n = 100_000;
        let mut second = 0usize;
        for _ in 0..n {
            if exponential_select(&[0.0, s], eps, sens, &mut rng).unwrap() == 1 {
                second += 1;
            }
        }
        let expect = (eps * s / (2.0 * sens)).exp();
        let p = expect / (1.0 + expect);
        let freq = second as f64 / n as f64;
        assert!((freq - p).abs() < 0.05 * p, "freq {freq}, expect {p}");
    }

    #[test]
    fn workload_error_cases() {
        let d = Domain::new(vec![("a".into(), 2), ("b".into(), 2)]).unwrap();
        let tree = Arc::new(JunctionTree::build(d.clone(), &[cl(&[0, 1])]).unwrap());
        let model = GraphicalModel::uniform(tree, 1.0).unwrap();
        // TVD special case: mu = (1,0), model uniform (0.5, 0.5)
        let mut truth = CliqueVector::new(d.clone());
        truth
            .insert(Factor::new(d.clone(), cl(&[0]), vec![1.0, 0.0], Space::Linear).unwrap())
            .unwrap();
        let w = Workload::new(vec![(cl(&[0]), Array2::eye(2))]).unwrap();
        let err = workload_error(&truth, &model, &w).unwrap();
        assert!((err - 0.5).abs() < 1e-12);

        // perfect model: zero error
        let mut exact = CliqueVector::new(d.clone());
        exact
            .insert(
                Factor::new(d, cl(&[0]), vec![0.5, 0.5], Space::Linear).unwrap(),
            )
            .unwrap();
        assert!(workload_error(&exact, &model, &w).unwrap() < 1e-12);
    }

    #[test]
    fn adjacent_triples_shapes() {
        assert!(adjacent_triples_workload(2, 4).is_err());
        let (c3, _) = adjacent_triples_workload(3, 2).unwrap();
        assert_eq!(c3, vec![cl(&[0, 1, 2])]);
        let (c5, _) = adjacent_triples_workload(5, 2).unwrap();
        assert_eq!(c5, vec![cl(&[0, 1, 2]), cl(&[1, 2, 3]), cl(&[2, 3, 4])]);
        // parameter count at d=100, cardinality 10
        let (c100, _) = adjacent_triples_workload(100, 10).unwrap();
        let d = Domain::new((0..100).map(|i| (format!("x{i}"), 10)).collect()).unwrap();
        let tree = JunctionTree::build(d, &c100).unwrap();
        assert_eq!(tree.model_size().total_parameters, 98 * 1000);
    }

    #[test]
    fn mwem_single_round_exact_recovery() {
        // T = 1, single-clique workload, noiseless: the model reproduces the
        // measured marginal exactly
        let d = Domain::new(vec![("a".into(), 2), ("b".into(), 2)]).unwrap();
        let records = vec![vec![0, 0], vec![0, 0], vec![0, 1], vec![1, 1]];
        let data = Dataset::new(d.clone(), records).unwrap();
        let w = Workload::new(vec![(cl(&[0, 1]), Array2::eye(4))]).unwrap();
        let config = MwemConfig {
            iterations: 2000,
            accelerated: true,
            noiseless: true,
            parameter_cap: None,
        };
        let (model, acc) = mwem_pgm(&data, &w, 1.0, 1, &config, 5).unwrap();
        let got = model_marginal(&model, &cl(&[0, 1])).unwrap();
        let want = data.marginal(&cl(&[0, 1])).unwrap();
        for (g, t) in got.flat().iter().zip(want.flat()) {
            assert!((g - t).abs() < 1e-4, "got {g}, want {t}");
        }
        assert!(!acc.all_private());
        assert_eq!(acc.entries().len(), 2);
    }
}
