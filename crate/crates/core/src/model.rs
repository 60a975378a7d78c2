//! Polynomial value-function models `v(y) = Σ θ_k φ_k(y / l)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisSet, MultiIndex};
use crate::error::{Error, Result};
use crate::evaltree::EvalTree;

/// Basis, scaling length and evaluation tree shared by every model over them.
#[derive(Debug)]
pub struct ModelLayout {
    basis: BasisSet,
    scale: f64,
    tree: EvalTree,
    basis_nodes: Vec<usize>,
}

impl ModelLayout {
    /// Builds the layout. The basis must not contain constants or linear
    /// monomials, so that `v(0) = 0` and `∇v(0) = 0` for every model.
    pub fn new(basis: BasisSet, scale: f64) -> Result<Arc<ModelLayout>> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        if let Some(low) = basis.iter().find(|a| a.degree() <= 1) {
            return Err(Error::InvalidArgument(format!(
                "basis element {low} has degree <= 1"
            )));
        }
        let tree = EvalTree::build(&basis.downward_closure())?;
        let basis_nodes = basis
            .iter()
            .map(|a| tree.locate(a).expect("closure contains the basis"))
            .collect();
        Ok(Arc::new(ModelLayout {
            basis,
            scale,
            tree,
            basis_nodes,
        }))
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Tree over the downward closure of the basis.
    pub fn tree(&self) -> &EvalTree {
        &self.tree
    }

    /// Fills `values` (length `tree().len()`) with all monomials at `y`.
    pub fn evaluate_features(&self, y: &[f64], values: &mut [f64]) {
        self.tree.evaluate_into(y, self.scale, values);
    }

    /// `out[k] += weight · ∇φ_k(y) · direction` for every basis element, given
    /// the monomial table from [`evaluate_features`](Self::evaluate_features).
    ///
    /// Only coordinates in the support of each multi-index are touched, so a
    /// direction that vanishes there contributes an exact zero.
    pub fn accumulate_feature_gradients(
        &self,
        values: &[f64],
        direction: &[f64],
        weight: f64,
        out: &mut [f64],
    ) {
        for (k, &node) in self.basis_nodes.iter().enumerate() {
            out[k] += weight * self.tree.gradient_dot(node, values, self.scale, direction);
        }
    }

    pub fn model(self: &Arc<Self>, theta: Vec<f64>) -> Result<PolynomialModel> {
        PolynomialModel::new(Arc::clone(self), theta)
    }

    pub fn zero_model(self: &Arc<Self>) -> PolynomialModel {
        PolynomialModel::new(Arc::clone(self), vec![0.0; self.len()]).expect("length matches")
    }
}

/// Value, gradient and optional Hessian of a model at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

/// Scratch buffer for allocation-free model evaluation.
#[derive(Clone, Debug, Default)]
pub struct EvalScratch {
    values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PolynomialModel {
    layout: Arc<ModelLayout>,
    theta: Vec<f64>,
    support: Vec<usize>,
    subtree: EvalTree,
    /// `(node in subtree, θ_k)` for every support element.
    terms: Vec<(usize, f64)>,
}

impl PolynomialModel {
    pub fn new(layout: Arc<ModelLayout>, theta: Vec<f64>) -> Result<PolynomialModel> {
        if theta.len() != layout.len() {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} entries, basis has {}",
                theta.len(),
                layout.len()
            )));
        }
        let support: Vec<usize> = (0..theta.len()).filter(|&k| theta[k] != 0.0).collect();
        let nodes: Vec<usize> = support.iter().map(|&k| layout.basis_nodes[k]).collect();
        let subtree = layout.tree.support_subtree(&nodes);
        let terms = support
            .iter()
            .map(|&k| {
                let node = subtree
                    .locate(&layout.basis.indices()[k])
                    .expect("subtree contains its support");
                debug_assert!(subtree.is_complete(node));
                (node, theta[k])
            })
            .collect();
        Ok(PolynomialModel {
            layout,
            theta,
            support,
            subtree,
            terms,
        })
    }

    pub fn layout(&self) -> &Arc<ModelLayout> {
        &self.layout
    }

    pub fn basis(&self) -> &BasisSet {
        &self.layout.basis
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn scale(&self) -> f64 {
        self.layout.scale
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Basis positions with nonzero coefficient.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Tree restricted to the support and its derivative lookups.
    pub fn subtree(&self) -> &EvalTree {
        &self.subtree
    }

    pub fn coefficient(&self, alpha: &MultiIndex) -> Option<f64> {
        self.layout.basis.position(alpha).map(|k| self.theta[k])
    }

    /// Evaluates `v`, writes `∇v` into `grad` and, when given, `∇²v` into the
    /// column-major `d×d` buffer `hess`. Returns `v`.
    pub fn eval_into(
        &self,
        y: &[f64],
        scratch: &mut EvalScratch,
        grad: &mut [f64],
        hess: Option<&mut [f64]>,
    ) -> f64 {
        let scale = self.layout.scale;
        scratch.values.resize(self.subtree.len(), 0.0);
        let values = &mut scratch.values;
        self.subtree.evaluate_into(y, scale, values);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut v = 0.0;
        for &(node, c) in &self.terms {
            v += c * values[node];
            self.subtree.add_gradient(node, values, scale, c, grad);
        }
        if let Some(h) = hess {
            h.iter_mut().for_each(|x| *x = 0.0);
            for &(node, c) in &self.terms {
                self.subtree.add_hessian(node, values, scale, c, h);
            }
        }
        v
    }

    /// `(v, ∇v, ∇²v)` at `y`; the Hessian only when requested.
    pub fn eval(&self, y: &[f64], with_hessian: bool) -> ModelEval {
        let d = self.dim();
        let mut scratch = EvalScratch::default();
        let mut grad = DVector::zeros(d);
        let mut hess = with_hessian.then(|| DMatrix::zeros(d, d));
        let value = self.eval_into(
            y,
            &mut scratch,
            grad.as_mut_slice(),
            hess.as_mut().map(|h| h.as_mut_slice()),
        );
        ModelEval {
            value,
            gradient: grad,
            hessian: hess,
        }
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.eval(y, false).value
    }
}
