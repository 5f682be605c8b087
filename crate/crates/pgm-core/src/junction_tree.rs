//! Junction-tree construction (min-fill triangulation + maximum spanning
//! tree) and the marginal oracle: exact clique marginals and log-partition
//! via two-pass belief propagation in log space.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::clique_vector::CliqueVector;
use crate::domain::{Clique, Domain};
use crate::error::{Error, Result};
use crate::factor::Factor;

#[derive(Debug, Clone)]
pub struct JunctionTree {
    domain: Arc<Domain>,
    maximal_cliques: Vec<Clique>,
    /// (i, j, separator) with i < j indices into `maximal_cliques`
    edges: Vec<(usize, usize, Clique)>,
    elimination_order: Vec<usize>,
    /// BFS order from clique 0; (clique index, parent index or usize::MAX)
    schedule: Vec<(usize, usize)>,
}

/// Size accounting for a clique set; the feasibility guard for estimation.
#[derive(Debug, Clone)]
pub struct ModelSize {
    pub clique_sizes: Vec<(Clique, usize)>,
    pub total_parameters: usize,
    pub estimated_peak_bytes: usize,
    /// Treewidth proxy: largest clique attribute count.
    pub max_clique_len: usize,
}

impl ModelSize {
    pub fn for_cliques(domain: &Domain, cliques: &[Clique]) -> ModelSize {
        let clique_sizes: Vec<(Clique, usize)> = cliques
            .iter()
            .map(|c| (c.clone(), domain.clique_size(c)))
            .collect();
        let total_parameters = clique_sizes
            .iter()
            .fold(0usize, |acc, (_, s)| acc.saturating_add(*s));
        ModelSize {
            max_clique_len: cliques.iter().map(|c| c.len()).max().unwrap_or(0),
            // theta + marginals + one message set, 8 bytes each
            estimated_peak_bytes: total_parameters.saturating_mul(24),
            clique_sizes,
            total_parameters,
        }
    }

    pub fn check_cap(&self, cap: usize) -> Result<()> {
        if self.total_parameters > cap {
            let worst = self
                .clique_sizes
                .iter()
                .max_by_key(|(_, s)| *s)
                .map(|(c, s)| format!("largest clique {c} has {s} cells"))
                .unwrap_or_default();
            return Err(Error::Feasibility(format!(
                "{} parameters exceed the cap of {cap}; {worst}",
                self.total_parameters
            )));
        }
        Ok(())
    }
}

/// Greedy min-fill elimination order over an undirected graph given as an
/// adjacency list; ties broken by vertex index. Returns the order and the
/// elimination cliques ({v} union neighbors at elimination time).
pub(crate) fn min_fill_order(
    n: usize,
    mut adj: Vec<BTreeSet<usize>>,
) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut remaining: BTreeSet<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    let mut cliques = Vec::with_capacity(n);
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
        let mut clique = nbrs.clone();
        clique.push(v);
        clique.sort_unstable();
        cliques.push(clique);
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
    (order, cliques)
}

impl JunctionTree {
    /// Builds a junction tree whose maximal cliques cover every input clique.
    ///
    /// Attributes not mentioned by any input clique become singleton cliques,
    /// so the tree always spans the whole domain. Deterministic given the
    /// same inputs.
    pub fn build(domain: Arc<Domain>, cliques: &[Clique]) -> Result<JunctionTree> {
        let n = domain.len();
        for c in cliques {
            if let Some(&a) = c.attrs().iter().find(|&&a| a >= n) {
                return Err(Error::Clique(format!(
                    "clique attribute index {a} outside domain of {n} attributes"
                )));
            }
        }
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for c in cliques {
            let attrs = c.attrs();
            for (i, &x) in attrs.iter().enumerate() {
                for &y in &attrs[i + 1..] {
                    adj[x].insert(y);
                    adj[y].insert(x);
                }
            }
        }
        let (order, elim_cliques) = min_fill_order(n, adj);

        // keep only maximal elimination cliques, first-occurrence order
        let candidates: Vec<Clique> = elim_cliques
            .into_iter()
            .map(Clique::from_indices)
            .collect();
        let mut maximal: Vec<Clique> = Vec::new();
        for c in &candidates {
            if !candidates
                .iter()
                .any(|o| c != o && c.is_subset_of(o) && !(o.is_subset_of(c)))
                && !maximal.contains(c)
            {
                maximal.push(c.clone());
            }
        }

        // maximum-weight spanning tree over the clique graph (Kruskal),
        // separator cardinality as weight, deterministic tie-breaking
        let k = maximal.len();
        // weight = attribute count of the separator; ties by (i, j)
        let mut weighted: Vec<(usize, usize, usize)> = (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .map(|(i, j)| (maximal[i].intersection(&maximal[j]).len(), i, j))
            .collect();
        weighted.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut parent: Vec<usize> = (0..k).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut edges: Vec<(usize, usize, Clique)> = Vec::new();
        for (_, i, j) in weighted {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri] = rj;
                edges.push((i, j, maximal[i].intersection(&maximal[j])));
            }
        }
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        // fixed message schedule: BFS from clique 0
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, j, _) in &edges {
            nbrs[*i].push(*j);
            nbrs[*j].push(*i);
        }
        for l in &mut nbrs {
            l.sort_unstable();
        }
        let mut schedule = Vec::with_capacity(k);
        let mut seen = vec![false; k];
        if k > 0 {
            let mut queue = std::collections::VecDeque::from([(0usize, usize::MAX)]);
            seen[0] = true;
            while let Some((c, p)) = queue.pop_front() {
                schedule.push((c, p));
                for &nb in &nbrs[c] {
                    if !seen[nb] {
                        seen[nb] = true;
                        queue.push_back((nb, c));
                    }
                }
            }
        }
        debug_assert!(seen.iter().all(|&s| s));

        Ok(JunctionTree {
            domain,
            maximal_cliques: maximal,
            edges,
            elimination_order: order,
            schedule,
        })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn maximal_cliques(&self) -> &[Clique] {
        &self.maximal_cliques
    }

    pub fn edges(&self) -> &[(usize, usize, Clique)] {
        &self.edges
    }

    pub fn elimination_order(&self) -> &[usize] {
        &self.elimination_order
    }

    pub fn model_size(&self) -> ModelSize {
        ModelSize::for_cliques(&self.domain, &self.maximal_cliques)
    }

    /// First maximal clique containing `sub`, if any.
    pub fn covering_clique(&self, sub: &Clique) -> Option<&Clique> {
        self.maximal_cliques.iter().find(|c| sub.is_subset_of(c))
    }

    fn separator(&self, a: usize, b: usize) -> &Clique {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        &self
            .edges
            .iter()
            .find(|(x, y, _)| *x == i && *y == j)
            .expect("edge exists")
            .2
    }

    /// Exact clique marginals of the graphical model exp(sum theta_C) and
    /// the log-partition, via collect/distribute belief propagation.
    ///
    /// `theta` must be keyed exactly by the maximal cliques, in log space.
    /// Returned marginals each sum to `total`.
    pub fn marginal_oracle(
        &self,
        theta: &CliqueVector,
        total: f64,
    ) -> Result<(CliqueVector, f64)> {
        let k = self.maximal_cliques.len();
        if theta.len() != k
            || !self
                .maximal_cliques
                .iter()
                .all(|c| theta.get(c).is_some())
        {
            return Err(Error::ParameterMismatch(
                "theta clique set does not match the junction tree's maximal cliques".into(),
            ));
        }
        // messages[(from, to)] over the separator, log space
        let mut messages: HashMap<(usize, usize), Factor> = HashMap::new();
        let compute_message = |from: usize,
                               to: usize,
                               messages: &HashMap<(usize, usize), Factor>|
         -> Result<Factor> {
            let clique = &self.maximal_cliques[from];
            let mut belief = theta.get(clique).unwrap().clone();
            for (i, j, _) in &self.edges {
                let other = match (*i == from, *j == from) {
                    (true, _) => *j,
                    (_, true) => *i,
                    _ => continue,
                };
                if other == to {
                    continue;
                }
                if let Some(m) = messages.get(&(other, from)) {
                    belief = belief.product(m)?;
                }
            }
            belief.logsumexp_project(self.separator(from, to))
        };

        // collect: leaves toward the root (reverse BFS order)
        for &(c, p) in self.schedule.iter().rev() {
            if p != usize::MAX {
                let m = compute_message(c, p, &messages)?;
                messages.insert((c, p), m);
            }
        }
        // distribute: root toward the leaves
        for &(c, p) in self.schedule.iter() {
            if p != usize::MAX {
                let m = compute_message(p, c, &messages)?;
                messages.insert((p, c), m);
            }
        }

        let mut mu = CliqueVector::new(self.domain.clone());
        let mut log_z = 0.0;
        for (idx, clique) in self.maximal_cliques.iter().enumerate() {
            let mut belief = theta.get(clique).unwrap().clone();
            for (i, j, _) in &self.edges {
                let other = match (*i == idx, *j == idx) {
                    (true, _) => *j,
                    (_, true) => *i,
                    _ => continue,
                };
                belief = belief.product(&messages[&(other, idx)])?;
            }
            let (marginal, lz) = belief.log_normalize(total)?;
            if idx == 0 {
                log_z = lz;
            }
            mu.insert(marginal)?;
        }
        Ok((mu, log_z))
    }
}

/// Shannon entropy of the unique junction-tree distribution with the given
/// clique marginals: sum of clique entropies minus separator entropies.
///
/// `mu` must be normalized to total 1 and consistent on separators.
pub fn tree_entropy(mu: &CliqueVector, tree: &JunctionTree) -> Result<f64> {
    let mut h = 0.0;
    for clique in tree.maximal_cliques() {
        let f = mu.get(clique).ok_or_else(|| {
            Error::ParameterMismatch(format!("marginal for clique {clique} missing"))
        })?;
        let s = f.sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Inconsistency(format!(
                "marginal over {clique} sums to {s}, expected 1"
            )));
        }
        h += f.entropy();
    }
    for (i, j, sep) in tree.edges() {
        let a = mu
            .get(&tree.maximal_cliques()[*i])
            .unwrap()
            .project(sep)?;
        let b = mu
            .get(&tree.maximal_cliques()[*j])
            .unwrap()
            .project(sep)?;
        for (x, y) in a.flat().iter().zip(b.flat()) {
            if (x - y).abs() > 1e-7 {
                return Err(Error::Inconsistency(format!(
                    "separator {sep} projections disagree: {x} vs {y}"
                )));
            }
        }
        h -= a.entropy();
    }
    Ok(h)
}
