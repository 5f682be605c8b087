//! The estimated distribution: a junction tree, log-space parameters, a
//! total, and the cached clique marginals.

use std::sync::Arc;

use crate::clique_vector::CliqueVector;
use crate::error::Result;
use crate::junction_tree::JunctionTree;

#[derive(Debug, Clone)]
pub struct GraphicalModel {
    tree: Arc<JunctionTree>,
    theta: CliqueVector,
    total: f64,
    marginals: CliqueVector,
    log_z: f64,
}

impl GraphicalModel {
    /// Builds a model from parameters, computing and caching the marginals.
    pub fn from_parameters(
        tree: Arc<JunctionTree>,
        theta: CliqueVector,
        total: f64,
    ) -> Result<GraphicalModel> {
        let (marginals, log_z) = tree.marginal_oracle(&theta, total)?;
        Ok(GraphicalModel {
            tree,
            theta,
            total,
            marginals,
            log_z,
        })
    }

    /// Uniform model (all parameters zero).
    pub fn uniform(tree: Arc<JunctionTree>, total: f64) -> Result<GraphicalModel> {
        let theta = CliqueVector::zeros(
            tree.domain().clone(),
            tree.maximal_cliques(),
            crate::factor::Space::Log,
        );
        GraphicalModel::from_parameters(tree, theta, total)
    }

    pub fn tree(&self) -> &Arc<JunctionTree> {
        &self.tree
    }

    pub fn theta(&self) -> &CliqueVector {
        &self.theta
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn marginals(&self) -> &CliqueVector {
        &self.marginals
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }
}
