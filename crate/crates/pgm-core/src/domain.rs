//! Discrete attribute domains and cliques (attribute subsets).

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// An ordered collection of named discrete attributes with their cardinalities.
///
/// The full product domain is never materialized; its size is only ever
/// reported in log space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    attrs: Vec<(String, usize)>,
    index: HashMap<String, usize>,
}

impl Domain {
    pub fn new(attrs: Vec<(String, usize)>) -> Result<Arc<Domain>> {
        let mut index = HashMap::new();
        for (i, (name, card)) in attrs.iter().enumerate() {
            if *card == 0 {
                return Err(Error::InvalidArgument(format!(
                    "attribute {name:?} has cardinality 0"
                )));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate attribute name {name:?}"
                )));
            }
        }
        Ok(Arc::new(Domain { attrs, index }))
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.attrs[i].0
    }

    pub fn cardinality(&self, i: usize) -> usize {
        self.attrs[i].1
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attribute {name:?}")))
    }

    pub fn attributes(&self) -> impl Iterator<Item = (&str, usize)> {
        self.attrs.iter().map(|(n, c)| (n.as_str(), *c))
    }

    /// log10 of the full domain size; the size itself may not fit in a machine word.
    pub fn log10_size(&self) -> f64 {
        self.attrs.iter().map(|(_, c)| (*c as f64).log10()).sum()
    }

    /// Shape of a table over the given clique, in canonical attribute order.
    pub fn shape(&self, clique: &Clique) -> Vec<usize> {
        clique.attrs().iter().map(|&i| self.cardinality(i)).collect()
    }

    /// Number of cells in a table over the given clique (may saturate).
    pub fn clique_size(&self, clique: &Clique) -> usize {
        clique
            .attrs()
            .iter()
            .fold(1usize, |acc, &i| acc.saturating_mul(self.cardinality(i)))
    }

    pub fn clique_of_all(&self) -> Clique {
        Clique::from_indices((0..self.len()).collect())
    }
}

/// A subset of domain attributes in canonical (domain) order.
///
/// Two cliques over the same attribute set always compare equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Clique {
    attrs: Vec<usize>,
}

impl Clique {
    /// Builds a clique from attribute indices; sorts and rejects duplicates.
    pub fn new(mut attrs: Vec<usize>) -> Result<Clique> {
        attrs.sort_unstable();
        if attrs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Clique("duplicate attribute in clique".into()));
        }
        Ok(Clique { attrs })
    }

    /// Like `new` but assumes the input is already sorted and unique.
    pub(crate) fn from_indices(attrs: Vec<usize>) -> Clique {
        debug_assert!(attrs.windows(2).all(|w| w[0] < w[1]));
        Clique { attrs }
    }

    pub fn from_names(domain: &Domain, names: &[&str]) -> Result<Clique> {
        let attrs = names
            .iter()
            .map(|n| domain.index_of(n))
            .collect::<Result<Vec<_>>>()?;
        Clique::new(attrs)
    }

    pub fn empty() -> Clique {
        Clique { attrs: vec![] }
    }

    pub fn attrs(&self) -> &[usize] {
        &self.attrs
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn contains(&self, attr: usize) -> bool {
        self.attrs.binary_search(&attr).is_ok()
    }

    pub fn is_subset_of(&self, other: &Clique) -> bool {
        self.attrs.iter().all(|a| other.contains(*a))
    }

    pub fn union(&self, other: &Clique) -> Clique {
        let mut attrs = Vec::with_capacity(self.attrs.len() + other.attrs.len());
        let (mut i, mut j) = (0, 0);
        while i < self.attrs.len() && j < other.attrs.len() {
            match self.attrs[i].cmp(&other.attrs[j]) {
                std::cmp::Ordering::Less => {
                    attrs.push(self.attrs[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    attrs.push(other.attrs[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    attrs.push(self.attrs[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        attrs.extend_from_slice(&self.attrs[i..]);
        attrs.extend_from_slice(&other.attrs[j..]);
        Clique { attrs }
    }

    pub fn intersection(&self, other: &Clique) -> Clique {
        let attrs = self
            .attrs
            .iter()
            .copied()
            .filter(|a| other.contains(*a))
            .collect();
        Clique { attrs }
    }

    pub fn names<'d>(&self, domain: &'d Domain) -> Vec<&'d str> {
        self.attrs.iter().map(|&i| domain.name(i)).collect()
    }
}

impl fmt::Display for Clique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, a) in self.attrs.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_rejects_duplicates_and_zero_cardinality() {
        assert!(Domain::new(vec![("a".into(), 2), ("a".into(), 3)]).is_err());
        assert!(Domain::new(vec![("a".into(), 0)]).is_err());
    }

    #[test]
    fn clique_canonical_order() {
        let a = Clique::new(vec![2, 0, 1]).unwrap();
        let b = Clique::new(vec![0, 1, 2]).unwrap();
        assert_eq!(a, b);
        assert!(Clique::new(vec![1, 1]).is_err());
    }

    #[test]
    fn set_operations() {
        let a = Clique::new(vec![0, 2]).unwrap();
        let b = Clique::new(vec![1, 2]).unwrap();
        assert_eq!(a.union(&b), Clique::new(vec![0, 1, 2]).unwrap());
        assert_eq!(a.intersection(&b), Clique::new(vec![2]).unwrap());
        assert!(a.intersection(&b).is_subset_of(&a));
    }

    #[test]
    fn log_size_never_overflows() {
        let attrs = (0..1000).map(|i| (format!("a{i}"), 10usize)).collect();
        let d = Domain::new(attrs).unwrap();
        assert!((d.log10_size() - 1000.0).abs() < 1e-9);
    }
}
