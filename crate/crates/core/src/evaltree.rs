//! Breadth-first spanning tree over a multi-index set.
//!
//! Every non-root node `α` has a parent `α̃` with `α = α̃ + e_j`, so all
//! monomial values at a point follow from one multiplication per node in BFS
//! order: `c(α) = (y_j / l) · c(α̃)`. First and second derivatives are read off
//! the same table through the lookups `α − e_i` and `α − e_i − e_j`, which are
//! resolved once at construction and stored as flat link arrays.

use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisSet, MultiIndex};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct GradLink {
    coord: u32,
    factor: f64,
    node: u32,
}

#[derive(Clone, Copy, Debug)]
struct HessLink {
    i: u32,
    j: u32,
    factor: f64,
    node: u32,
}

/// Rooted spanning tree over `set ∪ {0}`.
#[derive(Clone, Debug)]
pub struct EvalTree {
    dim: usize,
    /// Nodes in BFS order; `nodes[0]` is the root.
    nodes: Vec<MultiIndex>,
    /// `(parent position, coordinate j)` for every non-root node.
    parent: Vec<Option<(usize, usize)>>,
    locator: HashMap<MultiIndex, usize>,
    grad_offsets: Vec<usize>,
    grad_links: Vec<GradLink>,
    hess_offsets: Vec<usize>,
    hess_links: Vec<HessLink>,
    /// False when some derivative lookup of the node is absent from the tree.
    complete: Vec<bool>,
}

/// Monomial values `c(α) = φ_α(y / l)` for every node of a tree.
#[derive(Clone, Debug)]
pub struct EvalResult<'t> {
    tree: &'t EvalTree,
    pub values: Vec<f64>,
    pub point: Vec<f64>,
    pub scale: f64,
    /// Multiplications performed by the tree recurrence.
    pub multiplications: usize,
}

impl EvalTree {
    /// Builds the BFS tree. Neighbours are visited in coordinate order, which
    /// makes the parent choice deterministic. The root is added if absent.
    pub fn build(set: &BasisSet) -> Result<EvalTree> {
        let dim = set.dim();
        let root = MultiIndex::zeros(dim);
        let mut members: HashSet<&MultiIndex> = set.iter().collect();
        members.insert(&root);

        let mut nodes = vec![root.clone()];
        let mut parent = vec![None];
        let mut locator = HashMap::with_capacity(members.len());
        locator.insert(root.clone(), 0usize);
        let mut queue = VecDeque::from([0usize]);
        while let Some(pos) = queue.pop_front() {
            for j in 0..dim {
                let child = nodes[pos].plus_unit(j);
                if members.contains(&child) && !locator.contains_key(&child) {
                    let child_pos = nodes.len();
                    locator.insert(child.clone(), child_pos);
                    nodes.push(child);
                    parent.push(Some((pos, j)));
                    queue.push_back(child_pos);
                }
            }
        }
        if nodes.len() != members.len() {
            let offender = set
                .iter()
                .find(|a| !locator.contains_key(*a))
                .expect("unvisited member exists")
                .clone();
            return Err(Error::Disconnected { index: offender });
        }
        Ok(Self::with_links(dim, nodes, parent, locator))
    }

    fn with_links(
        dim: usize,
        nodes: Vec<MultiIndex>,
        parent: Vec<Option<(usize, usize)>>,
        locator: HashMap<MultiIndex, usize>,
    ) -> EvalTree {
        let mut grad_offsets = Vec::with_capacity(nodes.len() + 1);
        let mut hess_offsets = Vec::with_capacity(nodes.len() + 1);
        let mut grad_links = Vec::new();
        let mut hess_links = Vec::new();
        let mut complete = Vec::with_capacity(nodes.len());
        for alpha in &nodes {
            grad_offsets.push(grad_links.len());
            hess_offsets.push(hess_links.len());
            let mut ok = true;
            let supp: Vec<usize> = alpha.support().collect();
            for &i in &supp {
                let ai = alpha.exponents()[i];
                match alpha.minus_unit(i).and_then(|b| locator.get(&b)) {
                    Some(&node) => grad_links.push(GradLink {
                        coord: i as u32,
                        factor: ai as f64,
                        node: node as u32,
                    }),
                    None => ok = false,
                }
            }
            for (a, &i) in supp.iter().enumerate() {
                for &j in &supp[a..] {
                    let ai = alpha.exponents()[i];
                    let aj = alpha.exponents()[j];
                    let factor = if i == j {
                        (ai * (ai - 1)) as f64
                    } else {
                        (ai * aj) as f64
                    };
                    if factor == 0.0 {
                        continue;
                    }
                    let target = alpha.minus_unit(i).and_then(|b| b.minus_unit(j));
                    match target.and_then(|t| locator.get(&t).copied()) {
                        Some(node) => hess_links.push(HessLink {
                            i: i as u32,
                            j: j as u32,
                            factor,
                            node: node as u32,
                        }),
                        None => ok = false,
                    }
                }
            }
            complete.push(ok);
        }
        grad_offsets.push(grad_links.len());
        hess_offsets.push(hess_links.len());
        EvalTree {
            dim,
            nodes,
            parent,
            locator,
            grad_offsets,
            grad_links,
            hess_offsets,
            hess_links,
            complete,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in BFS visitation order.
    pub fn nodes(&self) -> &[MultiIndex] {
        &self.nodes
    }

    pub fn parent(&self, pos: usize) -> Option<(usize, usize)> {
        self.parent[pos]
    }

    pub fn locate(&self, alpha: &MultiIndex) -> Option<usize> {
        self.locator.get(alpha).copied()
    }

    /// Whether every derivative lookup of the node resolves inside this tree.
    pub fn is_complete(&self, pos: usize) -> bool {
        self.complete[pos]
    }

    /// Evaluates `φ_α(y / l)` for every node.
    pub fn evaluate_all(&self, y: &[f64], scale: f64) -> EvalResult<'_> {
        let mut values = vec![0.0; self.nodes.len()];
        let multiplications = self.evaluate_into(y, scale, &mut values);
        EvalResult {
            tree: self,
            values,
            point: y.to_vec(),
            scale,
            multiplications,
        }
    }

    /// Allocation-free variant of [`evaluate_all`](Self::evaluate_all).
    /// Returns the number of multiplications performed.
    pub fn evaluate_into(&self, y: &[f64], scale: f64, values: &mut [f64]) -> usize {
        debug_assert_eq!(y.len(), self.dim);
        debug_assert_eq!(values.len(), self.nodes.len());
        let inv = 1.0 / scale;
        values[0] = 1.0;
        let mut mults = 0;
        for pos in 1..self.nodes.len() {
            let (p, j) = self.parent[pos].expect("non-root node has a parent");
            values[pos] = (y[j] * inv) * values[p];
            mults += 1;
        }
        mults
    }

    /// Accumulates `weight · ∇φ_node` into `grad` from a value table.
    #[inline]
    pub(crate) fn add_gradient(&self, node: usize, values: &[f64], scale: f64, weight: f64, grad: &mut [f64]) {
        let w = weight / scale;
        for link in &self.grad_links[self.grad_offsets[node]..self.grad_offsets[node + 1]] {
            grad[link.coord as usize] += w * link.factor * values[link.node as usize];
        }
    }

    /// `∇φ_node · direction` from a value table.
    #[inline]
    pub(crate) fn gradient_dot(&self, node: usize, values: &[f64], scale: f64, direction: &[f64]) -> f64 {
        let mut s = 0.0;
        for link in &self.grad_links[self.grad_offsets[node]..self.grad_offsets[node + 1]] {
            s += link.factor * values[link.node as usize] * direction[link.coord as usize];
        }
        s / scale
    }

    /// Accumulates `weight · ∇²φ_node` into a column-major `d×d` buffer.
    #[inline]
    pub(crate) fn add_hessian(&self, node: usize, values: &[f64], scale: f64, weight: f64, hess: &mut [f64]) {
        let w = weight / (scale * scale);
        let d = self.dim;
        for link in &self.hess_links[self.hess_offsets[node]..self.hess_offsets[node + 1]] {
            let (i, j) = (link.i as usize, link.j as usize);
            let val = w * link.factor * values[link.node as usize];
            hess[i + j * d] += val;
            if i != j {
                hess[j + i * d] += val;
            }
        }
    }

    /// Minimal sub-tree containing the root, the given nodes, their ancestors
    /// and every node their derivative rules look up (with ancestors).
    pub fn support_subtree(&self, support: &[usize]) -> EvalTree {
        let mut keep = vec![false; self.nodes.len()];
        keep[0] = true;
        let mark_with_ancestors = |mut pos: usize, keep: &mut Vec<bool>| {
            while !keep[pos] {
                keep[pos] = true;
                match self.parent[pos] {
                    Some((p, _)) => pos = p,
                    None => break,
                }
            }
        };
        for &pos in support {
            mark_with_ancestors(pos, &mut keep);
            for link in &self.grad_links[self.grad_offsets[pos]..self.grad_offsets[pos + 1]] {
                mark_with_ancestors(link.node as usize, &mut keep);
            }
            for link in &self.hess_links[self.hess_offsets[pos]..self.hess_offsets[pos + 1]] {
                mark_with_ancestors(link.node as usize, &mut keep);
            }
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        let mut parent = Vec::new();
        let mut locator = HashMap::new();
        for (pos, &k) in keep.iter().enumerate() {
            if !k {
                continue;
            }
            remap[pos] = nodes.len();
            locator.insert(self.nodes[pos].clone(), nodes.len());
            nodes.push(self.nodes[pos].clone());
            parent.push(self.parent[pos].map(|(p, j)| (remap[p], j)));
        }
        Self::with_links(self.dim, nodes, parent, locator)
    }
}

impl<'t> EvalResult<'t> {
    pub fn tree(&self) -> &'t EvalTree {
        self.tree
    }

    pub fn value_of(&self, alpha: &MultiIndex) -> Result<f64> {
        self.tree
            .locate(alpha)
            .map(|p| self.values[p])
            .ok_or_else(|| Error::Disconnected { index: alpha.clone() })
    }

    /// `∇φ_α(y)` with the `1/l` chain-rule factor of the normalized argument.
    pub fn gradient_of(&self, alpha: &MultiIndex) -> Result<DVector<f64>> {
        let d = self.tree.dim;
        let mut g = DVector::zeros(d);
        for i in alpha.support() {
            let prev = alpha.minus_unit(i).expect("i in support");
            let c = self.value_of(&prev)?;
            g[i] = alpha.exponents()[i] as f64 * c / self.scale;
        }
        Ok(g)
    }

    /// `∇²φ_α(y)` with the `1/l²` chain-rule factor.
    pub fn hessian_of(&self, alpha: &MultiIndex) -> Result<DMatrix<f64>> {
        let d = self.tree.dim;
        let e = alpha.exponents();
        let mut h = DMatrix::zeros(d, d);
        let l2 = self.scale * self.scale;
        let supp: Vec<usize> = alpha.support().collect();
        for (a, &i) in supp.iter().enumerate() {
            for &j in &supp[a..] {
                let factor = if i == j {
                    (e[i] * (e[i] - 1)) as f64
                } else {
                    (e[i] * e[j]) as f64
                };
                if factor == 0.0 {
                    continue;
                }
                let target = alpha
                    .minus_unit(i)
                    .and_then(|b| b.minus_unit(j))
                    .expect("factor is nonzero");
                let val = factor * self.value_of(&target)? / l2;
                h[(i, j)] = val;
                h[(j, i)] = val;
            }
        }
        Ok(h)
    }
}
