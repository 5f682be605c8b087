//! Dense factor tensors over attribute subsets.
//!
//! Axis order inside a factor is always the domain's global attribute order;
//! binary operations align axes by attribute, never by position.

use std::sync::Arc;

use ndarray::{ArrayD, Axis, IxDyn, Zip};

use crate::domain::{Clique, Domain};
use crate::error::{Error, Result};

/// Tag distinguishing linear-space tables (marginals, VE intermediates)
/// from log-space tables (parameters, messages).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Linear,
    Log,
}

/// A dense real-valued tensor over a subset of domain attributes.
#[derive(Debug, Clone)]
pub struct Factor {
    domain: Arc<Domain>,
    clique: Clique,
    values: ArrayD<f64>,
    space: Space,
}

/// Numerically stable log(sum(exp(v))) over a slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

impl Factor {
    pub fn new(
        domain: Arc<Domain>,
        clique: Clique,
        values: Vec<f64>,
        space: Space,
    ) -> Result<Factor> {
        let shape = domain.shape(&clique);
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "factor over {clique} needs {expected} values, got {}",
                values.len()
            )));
        }
        let values = ArrayD::from_shape_vec(IxDyn(&shape), values)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Factor {
            domain,
            clique,
            values,
            space,
        })
    }

    pub(crate) fn from_array(
        domain: Arc<Domain>,
        clique: Clique,
        values: ArrayD<f64>,
        space: Space,
    ) -> Factor {
        debug_assert_eq!(values.shape(), domain.shape(&clique).as_slice());
        Factor {
            domain,
            clique,
            values,
            space,
        }
    }

    /// A factor filled with a constant value.
    pub fn constant(domain: Arc<Domain>, clique: Clique, value: f64, space: Space) -> Factor {
        let shape = domain.shape(&clique);
        Factor {
            domain,
            clique,
            values: ArrayD::from_elem(IxDyn(&shape), value),
            space,
        }
    }

    pub fn zeros(domain: Arc<Domain>, clique: Clique, space: Space) -> Factor {
        Factor::constant(domain, clique, 0.0, space)
    }

    /// Uniform linear-space factor summing to `total`.
    pub fn uniform(domain: Arc<Domain>, clique: Clique, total: f64) -> Factor {
        let size = domain.clique_size(&clique);
        Factor::constant(domain, clique, total / size as f64, Space::Linear)
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn clique(&self) -> &Clique {
        &self.clique
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn values(&self) -> &ArrayD<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut ArrayD<f64> {
        &mut self.values
    }

    /// Flat row-major dump in the canonical axis order.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    fn check_same_domain(&self, other: &Factor) -> Result<()> {
        if !Arc::ptr_eq(&self.domain, &other.domain) && self.domain != other.domain {
            return Err(Error::DomainMismatch(
                "factors built over different domains".into(),
            ));
        }
        Ok(())
    }

    /// Broadcast view of this factor's values over the union clique's shape.
    fn broadcast_values(&self, union: &Clique) -> ArrayD<f64> {
        let target_shape: Vec<usize> = union
            .attrs()
            .iter()
            .map(|&a| {
                if self.clique.contains(a) {
                    self.domain.cardinality(a)
                } else {
                    1
                }
            })
            .collect();
        // our arrays are always standard layout, so reshape cannot fail
        self.values
            .clone()
            .into_shape(IxDyn(&target_shape))
            .expect("factor arrays are standard layout")
    }

    /// Pointwise product (linear space) or sum (log space) over the union clique.
    pub fn product(&self, other: &Factor) -> Result<Factor> {
        self.check_same_domain(other)?;
        if self.space != other.space {
            return Err(Error::DomainMismatch(
                "cannot combine linear-space and log-space factors".into(),
            ));
        }
        let union = self.clique.union(&other.clique);
        let ushape = self.domain.shape(&union);
        let a = self.broadcast_values(&union);
        let b = other.broadcast_values(&union);
        let av = a.broadcast(IxDyn(&ushape)).expect("broadcast to union");
        let bv = b.broadcast(IxDyn(&ushape)).expect("broadcast to union");
        let mut out = ArrayD::zeros(IxDyn(&ushape));
        match self.space {
            Space::Linear => Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| {
                *o = x * y;
            }),
            Space::Log => Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| {
                *o = x + y;
            }),
        }
        Ok(Factor::from_array(
            self.domain.clone(),
            union,
            out,
            self.space,
        ))
    }

    /// Axis positions (within this factor) of attributes not in `target`.
    fn eliminated_axes(&self, target: &Clique) -> Result<Vec<usize>> {
        if !target.is_subset_of(&self.clique) {
            return Err(Error::Clique(format!(
                "projection target {target} is not a subset of factor clique {}",
                self.clique
            )));
        }
        Ok(self
            .clique
            .attrs()
            .iter()
            .enumerate()
            .filter(|(_, a)| !target.contains(**a))
            .map(|(pos, _)| pos)
            .collect())
    }

    /// Marginalizes a linear-space factor onto `target` by summation.
    pub fn project(&self, target: &Clique) -> Result<Factor> {
        if self.space != Space::Linear {
            return Err(Error::InvalidArgument(
                "project requires a linear-space factor; use logsumexp_project".into(),
            ));
        }
        let axes = self.eliminated_axes(target)?;
        let mut values = self.values.clone();
        for &ax in axes.iter().rev() {
            values = values.sum_axis(Axis(ax));
        }
        Ok(Factor::from_array(
            self.domain.clone(),
            target.clone(),
            values,
            Space::Linear,
        ))
    }

    /// Log-space marginalization onto `target` via per-cell logsumexp.
    pub fn logsumexp_project(&self, target: &Clique) -> Result<Factor> {
        if self.space != Space::Log {
            return Err(Error::InvalidArgument(
                "logsumexp_project requires a log-space factor".into(),
            ));
        }
        let axes = self.eliminated_axes(target)?;
        if axes.is_empty() {
            return Ok(self.clone());
        }
        // max over eliminated axes, kept for stability
        let mut maxes = self.values.clone();
        for &ax in axes.iter().rev() {
            maxes = maxes.map_axis(Axis(ax), |lane| {
                lane.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            });
        }
        let kept_shape: Vec<usize> = maxes.shape().to_vec();
        // broadcastable shape: original rank with 1s on eliminated axes
        let mut bshape: Vec<usize> = self.values.shape().to_vec();
        for &ax in &axes {
            bshape[ax] = 1;
        }
        let maxes_b = maxes
            .clone()
            .into_shape(IxDyn(&bshape))
            .expect("standard layout");
        let maxes_v = maxes_b
            .broadcast(self.values.raw_dim())
            .expect("broadcast maxes");
        let mut shifted = ArrayD::zeros(self.values.raw_dim());
        Zip::from(&mut shifted)
            .and(&self.values)
            .and(&maxes_v)
            .for_each(|o, &v, &m| {
                *o = if m == f64::NEG_INFINITY {
                    0.0
                } else {
                    (v - m).exp()
                }
            });
        for &ax in axes.iter().rev() {
            shifted = shifted.sum_axis(Axis(ax));
        }
        let mut out = ArrayD::zeros(IxDyn(&kept_shape));
        Zip::from(&mut out)
            .and(&shifted)
            .and(&maxes)
            .for_each(|o, &s, &m| {
                *o = if m == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    m + s.ln()
                }
            });
        Ok(Factor::from_array(
            self.domain.clone(),
            target.clone(),
            out,
            Space::Log,
        ))
    }

    /// Broadcast-expansion to a superset clique (the transpose action of
    /// projection; each entry is replicated along the new axes).
    pub fn expand(&self, target: &Clique) -> Result<Factor> {
        if !self.clique.is_subset_of(target) {
            return Err(Error::Clique(format!(
                "expansion target {target} is not a superset of factor clique {}",
                self.clique
            )));
        }
        let tshape = self.domain.shape(target);
        let b = self.broadcast_values(target);
        let out = b
            .broadcast(IxDyn(&tshape))
            .expect("broadcast to superset")
            .to_owned();
        Ok(Factor::from_array(
            self.domain.clone(),
            target.clone(),
            out,
            self.space,
        ))
    }

    /// Normalizes a log-space factor into a linear-space factor summing to
    /// `total`, returning the log-normalizer logsumexp(values) as well.
    pub fn log_normalize(&self, total: f64) -> Result<(Factor, f64)> {
        if self.space != Space::Log {
            return Err(Error::InvalidArgument(
                "log_normalize requires a log-space factor".into(),
            ));
        }
        let flat: Vec<f64> = self.values.iter().copied().collect();
        let log_z = logsumexp(&flat);
        if log_z == f64::NEG_INFINITY {
            return Err(Error::DegenerateFactor(
                "all log-space entries are -inf".into(),
            ));
        }
        let values = self.values.mapv(|v| (v - log_z).exp() * total);
        Ok((
            Factor::from_array(
                self.domain.clone(),
                self.clique.clone(),
                values,
                Space::Linear,
            ),
            log_z,
        ))
    }

    /// Shannon entropy of a linear-space factor normalized to sum 1,
    /// with the 0 ln 0 = 0 convention.
    pub fn entropy(&self) -> f64 {
        self.values
            .iter()
            .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
            .sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Factor {
        Factor {
            domain: self.domain.clone(),
            clique: self.clique.clone(),
            values: self.values.mapv(f),
            space: self.space,
        }
    }

    pub fn with_space(mut self, space: Space) -> Factor {
        self.space = space;
        self
    }

    /// In-place elementwise `self += scale * other`; cliques must match.
    pub fn add_scaled(&mut self, other: &Factor, scale: f64) -> Result<()> {
        if self.clique != other.clique {
            return Err(Error::Clique(format!(
                "clique mismatch: {} vs {}",
                self.clique, other.clique
            )));
        }
        Zip::from(&mut self.values)
            .and(&other.values)
            .for_each(|a, &b| *a += scale * b);
        Ok(())
    }

    pub fn scale(&mut self, scale: f64) {
        self.values.mapv_inplace(|v| v * scale);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc_domain() -> Arc<Domain> {
        Domain::new(vec![("A".into(), 2), ("B".into(), 3), ("C".into(), 2)]).unwrap()
    }

    #[test]
    fn outer_product() {
        let d = Domain::new(vec![("A".into(), 2), ("B".into(), 2)]).unwrap();
        let f = Factor::new(
            d.clone(),
            Clique::new(vec![0]).unwrap(),
            vec![1.0, 2.0],
            Space::Linear,
        )
        .unwrap();
        let g = Factor::new(
            d.clone(),
            Clique::new(vec![1]).unwrap(),
            vec![3.0, 4.0],
            Space::Linear,
        )
        .unwrap();
        let p = f.product(&g).unwrap();
        assert_eq!(p.flat(), vec![3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn product_with_scalar_identity() {
        let d = abc_domain();
        let f = Factor::new(
            d.clone(),
            Clique::new(vec![0, 1]).unwrap(),
            (0..6).map(|v| v as f64).collect(),
            Space::Linear,
        )
        .unwrap();
        let one = Factor::constant(d.clone(), Clique::empty(), 1.0, Space::Linear);
        let p = f.product(&one).unwrap();
        assert_eq!(p.flat(), f.flat());
        assert_eq!(p.clique(), f.clique());
    }

    #[test]
    fn product_matches_triple_loop() {
        // f over {A,B} (2x3), g over {B,C} (3x2), shared B
        let d = abc_domain();
        let fv: Vec<f64> = vec![0.3, 1.1, -0.4, 2.0, 0.9, 0.5];
        let gv: Vec<f64> = vec![1.5, -0.2, 0.7, 0.1, 2.2, 0.4];
        let f = Factor::new(
            d.clone(),
            Clique::new(vec![0, 1]).unwrap(),
            fv.clone(),
            Space::Linear,
        )
        .unwrap();
        let g = Factor::new(
            d.clone(),
            Clique::new(vec![1, 2]).unwrap(),
            gv.clone(),
            Space::Linear,
        )
        .unwrap();
        let p = f.product(&g).unwrap();
        let flat = p.flat();
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..2 {
                    let expect = fv[a * 3 + b] * gv[b * 2 + c];
                    let got = flat[a * 6 + b * 2 + c];
                    assert!((expect - got).abs() < 1e-15, "({a},{b},{c})");
                }
            }
        }
    }

    #[test]
    fn projection_uniform_and_identity() {
        let d = Domain::new(vec![("A".into(), 2), ("B".into(), 2)]).unwrap();
        let f = Factor::new(
            d.clone(),
            Clique::new(vec![0, 1]).unwrap(),
            vec![0.25; 4],
            Space::Linear,
        )
        .unwrap();
        let pa = f.project(&Clique::new(vec![0]).unwrap()).unwrap();
        assert_eq!(pa.flat(), vec![0.5, 0.5]);
        let same = f.project(f.clique()).unwrap();
        assert_eq!(same.flat(), f.flat());
    }

    #[test]
    fn projection_matches_explicit_summation() {
        let d = Domain::new(vec![("A".into(), 3), ("B".into(), 4), ("C".into(), 2)]).unwrap();
        let vals: Vec<f64> = (0..24).map(|i| ((i * 7 + 3) % 11) as f64 * 0.13).collect();
        let f = Factor::new(
            d.clone(),
            Clique::new(vec![0, 1, 2]).unwrap(),
            vals.clone(),
            Space::Linear,
        )
        .unwrap();
        let p = f.project(&Clique::new(vec![0, 2]).unwrap()).unwrap();
        let flat = p.flat();
        for a in 0..3 {
            for c in 0..2 {
                let mut s = 0.0;
                for b in 0..4 {
                    s += vals[a * 8 + b * 2 + c];
                }
                assert!((s - flat[a * 2 + c]).abs() < 1e-12);
            }
        }
        assert!((p.sum() - f.sum()).abs() < 1e-12);
    }

    #[test]
    fn log_normalize_cases() {
        let d = Domain::new(vec![("A".into(), 4)]).unwrap();
        let c = Clique::new(vec![0]).unwrap();
        let f = Factor::new(d.clone(), c.clone(), vec![0.0; 4], Space::Log).unwrap();
        let (lin, log_z) = f.log_normalize(1.0).unwrap();
        assert!((log_z - 4.0f64.ln()).abs() < 1e-12);
        for v in lin.flat() {
            assert!((v - 0.25).abs() < 1e-12);
        }

        let f = Factor::new(
            d.clone(),
            c.clone(),
            vec![1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln(), 4.0f64.ln()],
            Space::Log,
        )
        .unwrap();
        let (lin, log_z) = f.log_normalize(1.0).unwrap();
        assert!((log_z - 10.0f64.ln()).abs() < 1e-12);
        let expect = [0.1, 0.2, 0.3, 0.4];
        for (v, e) in lin.flat().iter().zip(expect) {
            assert!((v - e).abs() < 1e-12);
        }

        // shift invariance
        let shifted = f.map(|v| v + 1000.0);
        let (lin2, log_z2) = shifted.log_normalize(1.0).unwrap();
        for (a, b) in lin.flat().iter().zip(lin2.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((log_z2 - log_z - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn log_normalize_degenerate() {
        let d = Domain::new(vec![("A".into(), 2)]).unwrap();
        let f = Factor::new(
            d,
            Clique::new(vec![0]).unwrap(),
            vec![f64::NEG_INFINITY; 2],
            Space::Log,
        )
        .unwrap();
        assert!(f.log_normalize(1.0).is_err());
    }

    #[test]
    fn disjoint_project_product_identity() {
        // project(product(f,g), f.clique) == f * sum(g) for disjoint cliques
        let d = abc_domain();
        let f = Factor::new(
            d.clone(),
            Clique::new(vec![0]).unwrap(),
            vec![0.4, 0.6],
            Space::Linear,
        )
        .unwrap();
        let g = Factor::new(
            d.clone(),
            Clique::new(vec![1]).unwrap(),
            vec![1.0, 2.0, 3.0],
            Space::Linear,
        )
        .unwrap();
        let p = f.product(&g).unwrap().project(f.clique()).unwrap();
        for (v, e) in p.flat().iter().zip(f.flat()) {
            assert!((v - e * 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logsumexp_project_matches_linear() {
        let d = abc_domain();
        let vals: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = Factor::new(
            d.clone(),
            Clique::new(vec![0, 1]).unwrap(),
            vals.clone(),
            Space::Log,
        )
        .unwrap();
        let lse = f.logsumexp_project(&Clique::new(vec![1]).unwrap()).unwrap();
        let lin = Factor::new(
            d,
            Clique::new(vec![0, 1]).unwrap(),
            vals.iter().map(|v| v.exp()).collect(),
            Space::Linear,
        )
        .unwrap()
        .project(&Clique::new(vec![1]).unwrap())
        .unwrap();
        for (a, b) in lse.flat().iter().zip(lin.flat()) {
            assert!((a.exp() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn expand_is_projection_transpose() {
        let d = abc_domain();
        let f = Factor::new(
            d.clone(),
            Clique::new(vec![1]).unwrap(),
            vec![1.0, 2.0, 3.0],
            Space::Linear,
        )
        .unwrap();
        let e = f.expand(&Clique::new(vec![0, 1]).unwrap()).unwrap();
        assert_eq!(e.flat(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }
}
