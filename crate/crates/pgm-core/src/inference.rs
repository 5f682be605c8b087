//! Answering new queries against an estimated model without materializing
//! the full table: marginals via variable elimination, Kronecker-factored
//! linear queries via elimination over an augmented model, and synthetic
//! record sampling.

use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data::Dataset;
use crate::domain::{Clique, Domain};
use crate::error::{Error, Result};
use crate::factor::{Factor, Space};
use crate::model::GraphicalModel;

/// Named per-attribute building blocks for factored query matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryBlock {
    /// Identity: keep the variable in the answer.
    Identity,
    /// All-ones row: marginalize the variable out.
    Ones,
    /// Indicator row for one category: inject evidence.
    Evidence(usize),
    /// Indicator row for a category set (disjunction).
    EvidenceSet(Vec<usize>),
    /// Lower-triangular ones: transform into a CDF.
    Prefix,
    /// 0/1 bucketing matrix from a category-to-bucket map: compress the domain.
    Bucket { map: Vec<usize>, buckets: usize },
    /// Single row [1, 2, ..., n]: reduce to the (unnormalized) mean.
    /// Categories are 1-indexed values.
    Mean,
    /// Rows a^b for b = 1..k: reduce to the first k (unnormalized) moments.
    Moments(usize),
    /// Explicit dense matrix, row-major.
    Dense(Vec<Vec<f64>>),
}

/// Materializes a named block for an attribute of cardinality `n`.
pub fn build_block(block: &QueryBlock, n: usize) -> Result<Array2<f64>> {
    // guard the dense allocation before it happens: every variant below
    // builds at most rows x n entries
    let rows = match block {
        QueryBlock::Identity | QueryBlock::Prefix => n,
        QueryBlock::Bucket { buckets, .. } => *buckets,
        QueryBlock::Moments(k) => *k,
        QueryBlock::Dense(rows) => rows.len(),
        _ => 1,
    };
    const MAX_BLOCK_CELLS: usize = 1 << 26;
    if rows.saturating_mul(n) > MAX_BLOCK_CELLS {
        return Err(Error::Feasibility(format!(
            "query block of {rows} x {n} exceeds the dense construction limit"
        )));
    }
    match block {
        QueryBlock::Identity => Ok(Array2::eye(n)),
        QueryBlock::Ones => Ok(Array2::ones((1, n))),
        QueryBlock::Evidence(j) => {
            if *j >= n {
                return Err(Error::InvalidArgument(format!(
                    "evidence index {j} out of range for cardinality {n}"
                )));
            }
            let mut q = Array2::zeros((1, n));
            q[[0, *j]] = 1.0;
            Ok(q)
        }
        QueryBlock::EvidenceSet(set) => {
            let mut q = Array2::zeros((1, n));
            for &j in set {
                if j >= n {
                    return Err(Error::InvalidArgument(format!(
                        "evidence index {j} out of range for cardinality {n}"
                    )));
                }
                q[[0, j]] = 1.0;
            }
            Ok(q)
        }
        QueryBlock::Prefix => {
            let mut q = Array2::zeros((n, n));
            for b in 0..n {
                for a in 0..=b {
                    q[[b, a]] = 1.0;
                }
            }
            Ok(q)
        }
        QueryBlock::Bucket { map, buckets } => {
            if map.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "bucket map has {} entries for cardinality {n}",
                    map.len()
                )));
            }
            let mut q = Array2::zeros((*buckets, n));
            for (a, &b) in map.iter().enumerate() {
                if b >= *buckets {
                    return Err(Error::InvalidArgument(format!(
                        "bucket index {b} out of range for {buckets} buckets"
                    )));
                }
                q[[b, a]] = 1.0;
            }
            Ok(q)
        }
        QueryBlock::Mean => Ok(Array2::from_shape_fn((1, n), |(_, a)| (a + 1) as f64)),
        QueryBlock::Moments(k) => {
            if *k < 1 {
                return Err(Error::InvalidArgument("moment order must be >= 1".into()));
            }
            Ok(Array2::from_shape_fn((*k, n), |(b, a)| {
                ((a + 1) as f64).powi(b as i32 + 1)
            }))
        }
        QueryBlock::Dense(rows) => {
            if rows.is_empty() || rows.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidArgument(format!(
                    "dense block rows must all have {n} entries"
                )));
            }
            let r = rows.len();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Array2::from_shape_vec((r, n), flat)
                .map_err(|e| Error::InvalidArgument(e.to_string()))
        }
    }
}

/// A Kronecker-factored query: one factor matrix per domain attribute.
/// The implicit full matrix Q_1 x ... x Q_d is never materialized.
#[derive(Debug, Clone)]
pub struct FactoredQuery {
    factors: Vec<Array2<f64>>,
}

impl FactoredQuery {
    pub fn new(domain: &Domain, factors: Vec<Array2<f64>>) -> Result<FactoredQuery> {
        if factors.len() != domain.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} factor matrices, got {}",
                domain.len(),
                factors.len()
            )));
        }
        for (i, f) in factors.iter().enumerate() {
            if f.ncols() != domain.cardinality(i) {
                return Err(Error::InvalidArgument(format!(
                    "factor for attribute {} has {} columns, cardinality is {}",
                    domain.name(i),
                    f.ncols(),
                    domain.cardinality(i)
                )));
            }
        }
        Ok(FactoredQuery { factors })
    }

    /// Builds from named blocks; attributes absent from `blocks` default to
    /// the all-ones row (marginalize out).
    pub fn from_blocks(domain: &Domain, blocks: &[(usize, QueryBlock)]) -> Result<FactoredQuery> {
        let mut factors: Vec<Array2<f64>> = (0..domain.len())
            .map(|i| Array2::ones((1, domain.cardinality(i))))
            .collect();
        for (attr, block) in blocks {
            if *attr >= domain.len() {
                return Err(Error::InvalidArgument(format!(
                    "attribute index {attr} out of range"
                )));
            }
            factors[*attr] = build_block(block, domain.cardinality(*attr))?;
        }
        Ok(FactoredQuery { factors })
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }
}

/// Answer to a factored query, with singleton axes squeezed.
#[derive(Debug, Clone)]
pub struct QueryAnswer {
    pub values: ArrayD<f64>,
    /// Attribute indices of the retained (non-singleton) answer axes.
    pub axes: Vec<usize>,
}

fn constrained_min_fill(n_vars: usize, eliminate: &BTreeSet<usize>, cliques: &[Vec<usize>]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_vars];
    for c in cliques {
        for (i, &x) in c.iter().enumerate() {
            for &y in &c[i + 1..] {
                adj[x].insert(y);
                adj[y].insert(x);
            }
        }
    }
    let mut remaining: BTreeSet<usize> = eliminate.clone();
    let mut order = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let mut best = usize::MAX;
        let mut best_fill = usize::MAX;
        for &v in &remaining {
            let nbrs: Vec<usize> = adj[v].iter().copied().collect();
            let mut fill = 0;
            for (a, &x) in nbrs.iter().enumerate() {
                for &y in &nbrs[a + 1..] {
                    if !adj[x].contains(&y) {
                        fill += 1;
                    }
                }
            }
            if fill < best_fill {
                best_fill = fill;
                best = v;
            }
        }
        let v = best;
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for (a, &x) in nbrs.iter().enumerate() {
            for &y in &nbrs[a + 1..] {
                adj[x].insert(y);
                adj[y].insert(x);
            }
        }
        for &x in &nbrs {
            adj[x].remove(&v);
        }
        adj[v].clear();
        remaining.remove(&v);
        order.push(v);
    }
    order
}

/// Sum-product variable elimination over linear-space factors (values may be
/// negative). Eliminates `eliminate` in min-fill order; `cell_cap` bounds the
/// size of any intermediate factor.
fn variable_eliminate(
    mut factors: Vec<Factor>,
    eliminate: &BTreeSet<usize>,
    cell_cap: Option<usize>,
) -> Result<Factor> {
    assert!(!factors.is_empty());
    let domain = factors[0].domain().clone();
    let cliques: Vec<Vec<usize>> = factors
        .iter()
        .map(|f| f.clique().attrs().to_vec())
        .collect();
    let order = constrained_min_fill(domain.len(), eliminate, &cliques);
    for v in order {
        let (involved, rest): (Vec<Factor>, Vec<Factor>) = factors
            .into_iter()
            .partition(|f| f.clique().contains(v));
        factors = rest;
        if involved.is_empty() {
            continue;
        }
        let union = involved
            .iter()
            .skip(1)
            .fold(involved[0].clique().clone(), |acc, f| acc.union(f.clique()));
        if let Some(cap) = cell_cap {
            let size = domain.clique_size(&union);
            if size > cap {
                return Err(Error::Feasibility(format!(
                    "eliminating variable {v} materializes an intermediate over {union} \
                     with {size} cells (cap {cap})"
                )));
            }
        }
        let mut product = involved[0].clone();
        for f in &involved[1..] {
            product = product.product(f)?;
        }
        let mut keep = product.clique().attrs().to_vec();
        keep.retain(|&a| a != v);
        let summed = product.project(&Clique::new(keep)?)?;
        factors.push(summed);
    }
    let mut result = factors[0].clone();
    for f in &factors[1..] {
        result = result.product(f)?;
    }
    Ok(result)
}

/// Linear-space potentials exp(theta_C - shift_C) plus the total shift,
/// keeping exponentiation safe for large parameters.
fn shifted_potentials(model: &GraphicalModel, domain: &Arc<Domain>) -> (Vec<Factor>, f64) {
    let mut shift = 0.0;
    let mut potentials = Vec::new();
    for (clique, theta) in model.theta().iter() {
        let m = theta.flat().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = if m.is_finite() { m } else { 0.0 };
        shift += m;
        let values: Vec<f64> = theta.flat().iter().map(|v| (v - m).exp()).collect();
        potentials.push(
            Factor::new(domain.clone(), clique.clone(), values, Space::Linear)
                .expect("theta shapes are valid"),
        );
    }
    (potentials, shift)
}

/// Marginal of the model on any attribute subset, scaled to the model total.
///
/// Subsets of a junction-tree clique come straight from the cached marginals;
/// anything else runs variable elimination.
pub fn model_marginal(model: &GraphicalModel, target: &Clique) -> Result<Factor> {
    model_marginal_capped(model, target, None)
}

pub fn model_marginal_capped(
    model: &GraphicalModel,
    target: &Clique,
    cell_cap: Option<usize>,
) -> Result<Factor> {
    if let Some(cover) = model.marginals().covering_clique(target) {
        return model.marginals().get(&cover.clone()).unwrap().project(target);
    }
    let domain = model.tree().domain().clone();
    let (potentials, shift) = shifted_potentials(model, &domain);
    let eliminate: BTreeSet<usize> = (0..domain.len())
        .filter(|a| !target.contains(*a))
        .collect();
    let raw = variable_eliminate(potentials, &eliminate, cell_cap)?;
    let scale = (shift - model.log_partition()).exp() * model.total();
    let mut out = raw.expand(target)?; // raw clique may miss isolated target attrs
    out.scale(scale);
    // expansion over attrs absent from every potential replicates; correct by
    // the uniform weight of those attrs
    let missing: Vec<usize> = target
        .attrs()
        .iter()
        .copied()
        .filter(|a| !raw.clique().contains(*a))
        .collect();
    if !missing.is_empty() {
        let correction: f64 = missing
            .iter()
            .map(|&a| domain.cardinality(a) as f64)
            .product();
        out.scale(1.0 / correction);
    }
    Ok(out)
}

/// Answers a factored query (Q_1 x ... x Q_d) p * total by eliminating all
/// original variables from the model augmented with per-attribute query
/// factors. Blocks with a single row never enlarge intermediates.
pub fn answer_factored_query(model: &GraphicalModel, query: &FactoredQuery) -> Result<QueryAnswer> {
    answer_factored_query_capped(model, query, None)
}

pub fn answer_factored_query_capped(
    model: &GraphicalModel,
    query: &FactoredQuery,
    cell_cap: Option<usize>,
) -> Result<QueryAnswer> {
    let base = model.tree().domain();
    let d = base.len();
    if query.factors().len() != d {
        return Err(Error::InvalidArgument(format!(
            "query has {} factors for a {d}-attribute domain",
            query.factors().len()
        )));
    }
    // augmented domain: original attributes then one answer variable per
    // attribute whose block has more than one row
    let mut attrs: Vec<(String, usize)> = base
        .attributes()
        .map(|(n, c)| (n.to_string(), c))
        .collect();
    let mut z_attr: Vec<Option<usize>> = vec![None; d];
    for (i, q) in query.factors().iter().enumerate() {
        if q.ncols() != base.cardinality(i) {
            return Err(Error::InvalidArgument(format!(
                "factor for attribute {} has {} columns, cardinality is {}",
                base.name(i),
                q.ncols(),
                base.cardinality(i)
            )));
        }
        if q.nrows() > 1 {
            z_attr[i] = Some(attrs.len());
            attrs.push((format!("__answer_{i}"), q.nrows()));
        }
    }
    let aug = Domain::new(attrs)?;

    let aug_model_potentials: Vec<Factor> = {
        let (pots, _) = shifted_potentials(model, &aug);
        pots
    };
    // recompute shift (shifted_potentials was built against aug, same values)
    let shift: f64 = model
        .theta()
        .factors()
        .map(|f| {
            let m = f.flat().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m.is_finite() {
                m
            } else {
                0.0
            }
        })
        .sum();

    let mut factors = aug_model_potentials;
    for (i, q) in query.factors().iter().enumerate() {
        match z_attr[i] {
            None => {
                let values: Vec<f64> = q.row(0).to_vec();
                factors.push(Factor::new(
                    aug.clone(),
                    Clique::new(vec![i])?,
                    values,
                    Space::Linear,
                )?);
            }
            Some(z) => {
                // canonical axis order is (x_i, z); entries Q(z_val, x_val)
                let n = q.ncols();
                let r = q.nrows();
                let mut values = vec![0.0; n * r];
                for x in 0..n {
                    for zv in 0..r {
                        values[x * r + zv] = q[[zv, x]];
                    }
                }
                factors.push(Factor::new(
                    aug.clone(),
                    Clique::new(vec![i, z])?,
                    values,
                    Space::Linear,
                )?);
            }
        }
    }

    let eliminate: BTreeSet<usize> = (0..d).collect();
    let raw = variable_eliminate(factors, &eliminate, cell_cap)?;
    // result over all z variables, in attribute order
    let z_vars: Vec<usize> = z_attr.iter().filter_map(|z| *z).collect();
    let full = raw.expand(&Clique::new(z_vars.clone())?)?;
    let scale = (shift - model.log_partition()).exp() * model.total();
    let mut values = full.values().clone();
    values.mapv_inplace(|v| v * scale);
    let axes: Vec<usize> = z_attr
        .iter()
        .enumerate()
        .filter_map(|(i, z)| z.map(|_| i))
        .collect();
    let shape: Vec<usize> = z_vars.iter().map(|&z| aug.cardinality(z)).collect();
    let values = values
        .into_shape(IxDyn(&shape))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(QueryAnswer { values, axes })
}

/// Draws `count` i.i.d. records by forward sampling along the junction tree.
/// Deterministic for a fixed seed.
pub fn sample_synthetic(model: &GraphicalModel, count: usize, seed: u64) -> Result<Dataset> {
    let tree = model.tree();
    let domain = tree.domain().clone();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // BFS schedule recovered from the tree edges, rooted at clique 0
    let k = tree.maximal_cliques().len();
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, j, _) in tree.edges() {
        nbrs[*i].push(*j);
        nbrs[*j].push(*i);
    }
    for l in &mut nbrs {
        l.sort_unstable();
    }
    let mut schedule: Vec<(usize, Option<usize>)> = Vec::with_capacity(k);
    let mut seen = vec![false; k];
    let mut queue = std::collections::VecDeque::from([(0usize, None)]);
    seen[0] = true;
    while let Some((c, p)) = queue.pop_front() {
        schedule.push((c, p));
        for &nb in &nbrs[c] {
            if !seen[nb] {
                seen[nb] = true;
                queue.push_back((nb, Some(c)));
            }
        }
    }

    let sample_weighted = |weights: &[f64], rng: &mut ChaCha12Rng| -> usize {
        let sum: f64 = weights.iter().map(|w| w.max(0.0)).sum();
        if sum <= 0.0 {
            return 0;
        }
        let mut u = rng.gen::<f64>() * sum;
        for (i, w) in weights.iter().enumerate() {
            u -= w.max(0.0);
            if u <= 0.0 {
                return i;
            }
        }
        weights.len() - 1
    };

    let mut records: Vec<Vec<usize>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut assignment: Vec<Option<usize>> = vec![None; domain.len()];
        for &(c, p) in &schedule {
            let clique = &tree.maximal_cliques()[c];
            let marginal = model.marginals().get(clique).unwrap();
            let known: Vec<usize> = match p {
                None => Vec::new(),
                Some(_) => clique
                    .attrs()
                    .iter()
                    .copied()
                    .filter(|&a| assignment[a].is_some())
                    .collect(),
            };
            // slice the clique marginal at the already-assigned coordinates
            let mut view = marginal.values().view();
            let mut offset = 0;
            let mut new_attrs = Vec::new();
            for (pos, &a) in clique.attrs().iter().enumerate() {
                if known.contains(&a) {
                    view.index_axis_inplace(
                        ndarray::Axis(pos - offset),
                        assignment[a].unwrap(),
                    );
                    offset += 1;
                } else {
                    new_attrs.push(a);
                }
            }
            if new_attrs.is_empty() {
                continue;
            }
            let weights: Vec<f64> = view.iter().copied().collect();
            let cell = sample_weighted(&weights, &mut rng);
            // unravel the flat cell into the new attributes' coordinates
            let shape: Vec<usize> = new_attrs.iter().map(|&a| domain.cardinality(a)).collect();
            let mut rem = cell;
            let mut coords = vec![0usize; shape.len()];
            for i in (0..shape.len()).rev() {
                coords[i] = rem % shape[i];
                rem /= shape[i];
            }
            for (a, v) in new_attrs.iter().zip(coords) {
                assignment[*a] = Some(v);
            }
        }
        records.push(assignment.into_iter().map(|a| a.unwrap_or(0)).collect());
    }
    Dataset::new(domain, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clique_vector::CliqueVector;
    use crate::junction_tree::JunctionTree;

    fn cl(attrs: &[usize]) -> Clique {
        Clique::new(attrs.to_vec()).unwrap()
    }

    fn chain_model(cards: &[usize], seed: u64) -> GraphicalModel {
        let d = Domain::new(
            cards
                .iter()
                .enumerate()
                .map(|(i, &c)| (format!("x{i}"), c))
                .collect(),
        )
        .unwrap();
        let cliques: Vec<Clique> = (0..cards.len() - 1)
            .map(|i| cl(&[i, i + 1]))
            .collect();
        let tree = Arc::new(JunctionTree::build(d.clone(), &cliques).unwrap());
        let mut theta = CliqueVector::new(d.clone());
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64 / (1u64 << 31) as f64) * 2.0 - 1.0
        };
        for c in tree.maximal_cliques() {
            let vals: Vec<f64> = (0..d.clique_size(c)).map(|_| next()).collect();
            theta
                .insert(Factor::new(d.clone(), c.clone(), vals, Space::Log).unwrap())
                .unwrap();
        }
        GraphicalModel::from_parameters(tree, theta, 1.0).unwrap()
    }

    /// Brute-force model distribution, test oracle only.
    fn enumerate(model: &GraphicalModel) -> Vec<f64> {
        let domain = model.tree().domain();
        let shape: Vec<usize> = (0..domain.len()).map(|i| domain.cardinality(i)).collect();
        let n: usize = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        for flat in 0..n {
            let mut idx = vec![0usize; shape.len()];
            let mut rem = flat;
            for i in (0..shape.len()).rev() {
                idx[i] = rem % shape[i];
                rem /= shape[i];
            }
            let mut lp = 0.0;
            for (clique, factor) in model.theta().iter() {
                let mut off = 0usize;
                for &a in clique.attrs() {
                    off = off * domain.cardinality(a) + idx[a];
                }
                lp += factor.flat()[off];
            }
            out.push((lp - model.log_partition()).exp() * model.total());
        }
        out
    }

    #[test]
    fn marginal_of_maximal_clique_is_cached() {
        let model = chain_model(&[2, 3, 2], 7);
        let c = model.tree().maximal_cliques()[0].clone();
        let m = model_marginal(&model, &c).unwrap();
        let cached = model.marginals().get(&c).unwrap();
        assert_eq!(m.flat(), cached.flat());
    }

    #[test]
    fn empty_marginal_is_total() {
        let model = chain_model(&[2, 2, 2], 3);
        let m = model_marginal(&model, &Clique::empty()).unwrap();
        assert_eq!(m.flat().len(), 1);
        assert!((m.flat()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unmeasured_pair_matches_enumeration() {
        let model = chain_model(&[2, 2, 2], 11);
        let probs = enumerate(&model);
        let m = model_marginal(&model, &cl(&[0, 2])).unwrap();
        let flat = m.flat();
        for a in 0..2 {
            for c in 0..2 {
                let mut e = 0.0;
                for b in 0..2 {
                    e += probs[a * 4 + b * 2 + c];
                }
                assert!((flat[a * 2 + c] - e).abs() < 1e-10);
            }
        }
        // result is a valid marginal
        assert!(flat.iter().all(|&v| v >= -1e-12));
        assert!((m.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blocks_match_table() {
        let p = build_block(&QueryBlock::Prefix, 3).unwrap();
        assert_eq!(
            p.into_raw_vec(),
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]
        );
        let e = build_block(&QueryBlock::Evidence(1), 4).unwrap();
        assert_eq!(e.into_raw_vec(), vec![0.0, 1.0, 0.0, 0.0]);
        let m = build_block(&QueryBlock::Mean, 3).unwrap();
        assert_eq!(m.into_raw_vec(), vec![1.0, 2.0, 3.0]);
        let mk = build_block(&QueryBlock::Moments(2), 3).unwrap();
        assert_eq!(mk.into_raw_vec(), vec![1.0, 2.0, 3.0, 1.0, 4.0, 9.0]);
        assert!(build_block(&QueryBlock::Evidence(5), 3).is_err());
    }

    #[test]
    fn all_ones_query_returns_total() {
        let model = chain_model(&[2, 3, 2], 5);
        let q = FactoredQuery::from_blocks(model.tree().domain(), &[]).unwrap();
        let ans = answer_factored_query(&model, &q).unwrap();
        assert_eq!(ans.values.len(), 1);
        assert!((ans.values.iter().next().unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identity_blocks_reduce_to_marginal() {
        let model = chain_model(&[2, 3, 2], 13);
        let q = FactoredQuery::from_blocks(
            model.tree().domain(),
            &[(0, QueryBlock::Identity), (2, QueryBlock::Identity)],
        )
        .unwrap();
        let ans = answer_factored_query(&model, &q).unwrap();
        let m = model_marginal(&model, &cl(&[0, 2])).unwrap();
        for (a, b) in ans.values.iter().zip(m.flat()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(ans.axes, vec![0, 2]);
    }

    #[test]
    fn random_signed_blocks_match_dense_kronecker() {
        let model = chain_model(&[2, 2, 2], 17);
        let probs = enumerate(&model);
        let q1 = Array2::from_shape_vec((2, 2), vec![0.5, -1.2, 0.3, 0.8]).unwrap();
        let q2 = Array2::from_shape_vec((1, 2), vec![-0.4, 1.1]).unwrap();
        let q3 = Array2::from_shape_vec((2, 2), vec![1.0, 0.2, -0.7, 0.9]).unwrap();
        let q =
            FactoredQuery::new(model.tree().domain(), vec![q1.clone(), q2.clone(), q3.clone()])
                .unwrap();
        let ans = answer_factored_query(&model, &q).unwrap();
        // dense oracle
        for z1 in 0..2 {
            for z3 in 0..2 {
                let mut expect = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        for c in 0..2 {
                            expect += q1[[z1, a]] * q2[[0, b]] * q3[[z3, c]]
                                * probs[a * 4 + b * 2 + c];
                        }
                    }
                }
                let got = ans.values[[z1, z3]];
                assert!((got - expect).abs() < 1e-10, "z=({z1},{z3})");
            }
        }
    }

    #[test]
    fn cdf_block_inverts_by_differencing() {
        let model = chain_model(&[4, 2], 23);
        let q = FactoredQuery::from_blocks(model.tree().domain(), &[(0, QueryBlock::Prefix)])
            .unwrap();
        let cdf = answer_factored_query(&model, &q).unwrap();
        let m = model_marginal(&model, &cl(&[0])).unwrap();
        let flat = m.flat();
        let mut prev = 0.0;
        for (i, c) in cdf.values.iter().enumerate() {
            assert!((c - prev - flat[i]).abs() < 1e-10);
            prev = *c;
        }
    }

    #[test]
    fn sampling_determinism_and_point_mass() {
        let d = Domain::new(vec![("a".into(), 2), ("b".into(), 2)]).unwrap();
        let tree = Arc::new(JunctionTree::build(d.clone(), &[cl(&[0, 1])]).unwrap());
        let mut theta = CliqueVector::new(d.clone());
        // strong point mass at cell (1, 0)
        theta
            .insert(
                Factor::new(d.clone(), cl(&[0, 1]), vec![-60.0, -60.0, 0.0, -60.0], Space::Log)
                    .unwrap(),
            )
            .unwrap();
        let model = GraphicalModel::from_parameters(tree, theta, 1.0).unwrap();
        let ds1 = sample_synthetic(&model, 50, 42).unwrap();
        let ds2 = sample_synthetic(&model, 50, 42).unwrap();
        assert_eq!(ds1.records(), ds2.records());
        for r in ds1.records() {
            assert_eq!(r, &vec![1, 0]);
        }
    }

    #[test]
    fn sampling_uniform_frequencies() {
        let d = Domain::new(vec![("a".into(), 4)]).unwrap();
        let tree = Arc::new(JunctionTree::build(d.clone(), &[cl(&[0])]).unwrap());
        let model = GraphicalModel::uniform(tree, 1.0).unwrap();
        let n = 100_000;
        let ds = sample_synthetic(&model, n, 7).unwrap();
        let mut counts = [0usize; 4];
        for r in ds.records() {
            counts[r[0]] += 1;
        }
        let p = 0.25;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - p).abs() < 4.0 * se, "freq {freq}");
        }
    }
}
