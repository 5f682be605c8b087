//! Integer-coded tabular data and its empirical marginals.

use std::sync::Arc;

use crate::domain::{Clique, Domain};
use crate::error::{Error, Result};
use crate::factor::{Factor, Space};

/// A table of records, one integer code per attribute, all within the domain
/// cardinalities.
#[derive(Debug, Clone)]
pub struct Dataset {
    domain: Arc<Domain>,
    records: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(domain: Arc<Domain>, records: Vec<Vec<usize>>) -> Result<Dataset> {
        for (row, record) in records.iter().enumerate() {
            if record.len() != domain.len() {
                return Err(Error::InvalidArgument(format!(
                    "record {row} has {} values, domain has {} attributes",
                    record.len(),
                    domain.len()
                )));
            }
            for (a, &v) in record.iter().enumerate() {
                if v >= domain.cardinality(a) {
                    return Err(Error::InvalidArgument(format!(
                        "record {row}: value {v} out of range for attribute {} \
                         (cardinality {})",
                        domain.name(a),
                        domain.cardinality(a)
                    )));
                }
            }
        }
        Ok(Dataset { domain, records })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn records(&self) -> &[Vec<usize>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Empirical count marginal on `clique` (cells sum to the record count).
    pub fn marginal(&self, clique: &Clique) -> Result<Factor> {
        let shape = self.domain.shape(clique);
        let size: usize = shape.iter().product();
        let mut counts = vec![0.0; size];
        for record in &self.records {
            let mut off = 0usize;
            for (&a, &card) in clique.attrs().iter().zip(&shape) {
                off = off * card + record[a];
            }
            counts[off] += 1.0;
        }
        Factor::new(self.domain.clone(), clique.clone(), counts, Space::Linear)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginal_counts() {
        let d = Domain::new(vec![("a".into(), 2), ("b".into(), 3)]).unwrap();
        let ds = Dataset::new(
            d.clone(),
            vec![vec![0, 1], vec![0, 1], vec![1, 2], vec![0, 0]],
        )
        .unwrap();
        let ab = Clique::new(vec![0, 1]).unwrap();
        let m = ds.marginal(&ab).unwrap();
        assert_eq!(m.flat(), vec![1.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let b = Clique::new(vec![1]).unwrap();
        assert_eq!(ds.marginal(&b).unwrap().flat(), vec![1.0, 2.0, 1.0]);
        assert_eq!(ds.marginal(&Clique::empty()).unwrap().flat(), vec![4.0]);
    }

    #[test]
    fn rejects_out_of_range() {
        let d = Domain::new(vec![("a".into(), 2)]).unwrap();
        assert!(Dataset::new(d, vec![vec![2]]).is_err());
    }
}
