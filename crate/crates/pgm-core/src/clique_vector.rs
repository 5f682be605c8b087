//! Collections of factors keyed by clique; houses both parameter vectors
//! and marginal vectors.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::domain::{Clique, Domain};
use crate::error::{Error, Result};
use crate::factor::{Factor, Space};

#[derive(Debug, Clone)]
pub struct CliqueVector {
    domain: Arc<Domain>,
    entries: BTreeMap<Clique, Factor>,
}

impl CliqueVector {
    pub fn new(domain: Arc<Domain>) -> CliqueVector {
        CliqueVector {
            domain,
            entries: BTreeMap::new(),
        }
    }

    /// Zero vector over the given clique set.
    pub fn zeros(domain: Arc<Domain>, cliques: &[Clique], space: Space) -> CliqueVector {
        let entries = cliques
            .iter()
            .map(|c| (c.clone(), Factor::zeros(domain.clone(), c.clone(), space)))
            .collect();
        CliqueVector { domain, entries }
    }

    pub fn insert(&mut self, factor: Factor) -> Result<()> {
        if factor.domain() != &self.domain {
            return Err(Error::DomainMismatch(
                "factor domain differs from clique-vector domain".into(),
            ));
        }
        self.entries.insert(factor.clique().clone(), factor);
        Ok(())
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn get(&self, clique: &Clique) -> Option<&Factor> {
        self.entries.get(clique)
    }

    pub fn get_mut(&mut self, clique: &Clique) -> Option<&mut Factor> {
        self.entries.get_mut(clique)
    }

    pub fn cliques(&self) -> impl Iterator<Item = &Clique> {
        self.entries.keys()
    }

    pub fn factors(&self) -> impl Iterator<Item = &Factor> {
        self.entries.values()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Clique, &Factor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// First clique in the vector containing `sub`, if any.
    pub fn covering_clique(&self, sub: &Clique) -> Option<&Clique> {
        self.entries.keys().find(|c| sub.is_subset_of(c))
    }

    /// Marginal on `sub`, projected out of the first covering clique.
    pub fn project(&self, sub: &Clique) -> Result<Factor> {
        let cover = self.covering_clique(sub).ok_or_else(|| {
            Error::Clique(format!("no clique in the vector covers {sub}"))
        })?;
        self.entries[&cover.clone()].project(sub)
    }

    /// In-place `self += scale * other` over matching cliques; clique sets
    /// must be identical.
    pub fn add_scaled(&mut self, other: &CliqueVector, scale: f64) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::ParameterMismatch(
                "clique sets differ in add_scaled".into(),
            ));
        }
        for (clique, factor) in &mut self.entries {
            let o = other
                .entries
                .get(clique)
                .ok_or_else(|| Error::ParameterMismatch(format!("missing clique {clique}")))?;
            factor.add_scaled(o, scale)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, scale: f64) {
        for factor in self.entries.values_mut() {
            factor.scale(scale);
        }
    }

    /// Convex-style combination `(1 - c) * self + c * other`, elementwise.
    pub fn interpolate(&self, other: &CliqueVector, c: f64) -> Result<CliqueVector> {
        let mut out = self.clone();
        out.scale(1.0 - c);
        out.add_scaled(other, c)?;
        Ok(out)
    }

    /// Re-tags every factor's space without touching values.
    pub fn with_space(mut self, space: Space) -> CliqueVector {
        let entries = std::mem::take(&mut self.entries);
        self.entries = entries
            .into_iter()
            .map(|(c, f)| (c, f.with_space(space)))
            .collect();
        self
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .fold(0.0f64, |m, f| m.max(f.max_abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|f| f.is_finite())
    }

    /// Checks that every factor sums to `total` within relative tolerance.
    pub fn check_totals(&self, total: f64, rel_tol: f64) -> Result<()> {
        for (clique, factor) in &self.entries {
            let s = factor.sum();
            if (s - total).abs() > rel_tol * total.abs().max(1.0) {
                return Err(Error::Inconsistency(format!(
                    "factor over {clique} sums to {s}, expected {total}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_projection() {
        let d = Domain::new(vec![("A".into(), 2), ("B".into(), 2)]).unwrap();
        let ab = Clique::new(vec![0, 1]).unwrap();
        let mut v = CliqueVector::zeros(d.clone(), &[ab.clone()], Space::Linear);
        let f = Factor::new(d.clone(), ab.clone(), vec![0.1, 0.2, 0.3, 0.4], Space::Linear)
            .unwrap();
        let mut w = CliqueVector::new(d.clone());
        w.insert(f).unwrap();
        v.add_scaled(&w, 2.0).unwrap();
        assert_eq!(v.get(&ab).unwrap().flat(), vec![0.2, 0.4, 0.6, 0.8]);

        let a = Clique::new(vec![0]).unwrap();
        let pa = v.project(&a).unwrap();
        assert!((pa.flat()[0] - 0.6).abs() < 1e-12);
        assert!((pa.flat()[1] - 1.4).abs() < 1e-12);
    }
}
