//! Monomial multi-index sets.
//!
//! A [`BasisSet`] is an ordered, duplicate-free list of exponent tuples. All
//! constructors emit graded lexicographic order (total degree first, then
//! ascending lexicographic), so the degree-`n` prefix of a degree-`n+1` set
//! is exactly the degree-`n` set.
//!
//! The number of total-degree indices is `binomial(n + d, d)`. Some literature
//! states a different closed form for this count; the enumeration here follows
//! the set definition and the tests check it against brute force.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent tuple `(α_1, …, α_d)` of the monomial `∏ y_j^{α_j}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zeros(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn unit(dim: usize, j: usize) -> Self {
        let mut e = vec![0; dim];
        e[j] = 1;
        MultiIndex(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    /// Total degree `|α|`.
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Coordinates with a positive exponent.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0)
            .map(|(i, _)| i)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    /// `α − e_j`, or `None` when `α_j = 0`.
    pub fn minus_unit(&self, j: usize) -> Option<MultiIndex> {
        if self.0[j] == 0 {
            return None;
        }
        let mut e = self.0.clone();
        e[j] -= 1;
        Some(MultiIndex(e))
    }

    pub fn plus_unit(&self, j: usize) -> MultiIndex {
        let mut e = self.0.clone();
        e[j] += 1;
        MultiIndex(e)
    }

    /// `∏ (α_j + 1)`, saturating.
    pub fn cross_product(&self) -> u64 {
        self.0
            .iter()
            .fold(1u64, |acc, &a| acc.saturating_mul(a as u64 + 1))
    }

    /// Graded lexicographic comparison.
    pub fn grlex_cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Family a basis set was generated from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "degree", rename_all = "snake_case")]
pub enum BasisKind {
    TotalDegree(u32),
    HyperbolicCross(u32),
    Custom,
}

impl BasisKind {
    fn tag(&self) -> &'static str {
        match self {
            BasisKind::TotalDegree(_) => "total_degree",
            BasisKind::HyperbolicCross(_) => "hyperbolic_cross",
            BasisKind::Custom => "custom",
        }
    }

    pub fn degree(&self) -> Option<u32> {
        match *self {
            BasisKind::TotalDegree(n) | BasisKind::HyperbolicCross(n) => Some(n),
            BasisKind::Custom => None,
        }
    }

    /// Membership test for the generating family (always true for `Custom`).
    pub fn admits(&self, alpha: &MultiIndex) -> bool {
        match *self {
            BasisKind::TotalDegree(n) => alpha.degree() <= n,
            BasisKind::HyperbolicCross(n) => alpha.cross_product() <= n as u64 + 1,
            BasisKind::Custom => true,
        }
    }
}

/// Ordered, duplicate-free collection of multi-indices of a common dimension.
///
/// Subsets produced by [`strip_low_order`] and [`reduce_basis`] keep the kind
/// of the set they came from; membership bounds of that family still hold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSet {
    dim: usize,
    kind: BasisKind,
    indices: Vec<MultiIndex>,
}

impl BasisSet {
    /// Builds a custom set. Indices are sorted into graded order; duplicates
    /// and dimension mismatches are rejected.
    pub fn custom(dim: usize, mut indices: Vec<MultiIndex>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if let Some(bad) = indices.iter().find(|a| a.dim() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "index {bad} has dimension {}, expected {dim}",
                bad.dim()
            )));
        }
        indices.sort_by(|a, b| a.grlex_cmp(b));
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate multi-index".into()));
        }
        Ok(BasisSet {
            dim,
            kind: BasisKind::Custom,
            indices,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiIndex> {
        self.indices.iter()
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.indices
            .binary_search_by(|probe| probe.grlex_cmp(alpha))
            .ok()
    }

    pub fn contains(&self, alpha: &MultiIndex) -> bool {
        self.position(alpha).is_some()
    }

    /// Keeps the indices for which `keep` is true, preserving order and kind.
    pub fn filtered(&self, mut keep: impl FnMut(&MultiIndex) -> bool) -> BasisSet {
        BasisSet {
            dim: self.dim,
            kind: self.kind,
            indices: self.indices.iter().filter(|a| keep(a)).cloned().collect(),
        }
    }

    /// Smallest superset closed under `α ↦ α − e_j`.
    pub fn downward_closure(&self) -> BasisSet {
        let mut seen: HashSet<MultiIndex> = HashSet::new();
        let mut stack: Vec<MultiIndex> = self.indices.clone();
        seen.insert(MultiIndex::zeros(self.dim));
        while let Some(a) = stack.pop() {
            if !seen.insert(a.clone()) {
                continue;
            }
            for j in 0..self.dim {
                if let Some(p) = a.minus_unit(j) {
                    if !seen.contains(&p) {
                        stack.push(p);
                    }
                }
            }
        }
        let mut indices: Vec<MultiIndex> = seen.into_iter().collect();
        indices.sort_by(|a, b| a.grlex_cmp(b));
        BasisSet {
            dim: self.dim,
            kind: self.kind,
            indices,
        }
    }

    /// Plain-text listing: header `"d n kind"`, then one index per line.
    /// For custom sets `n` is the maximal degree present.
    pub fn to_listing(&self) -> String {
        let n = self
            .kind
            .degree()
            .unwrap_or_else(|| self.indices.iter().map(|a| a.degree()).max().unwrap_or(0));
        let mut out = format!("{} {} {}\n", self.dim, n, self.kind.tag());
        for a in &self.indices {
            let line: Vec<String> = a.exponents().iter().map(|e| e.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_listing(text: &str) -> Result<BasisSet> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty basis listing".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!("bad basis header {header:?}")));
        }
        let dim: usize = parts[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad dimension {:?}", parts[0])))?;
        let n: u32 = parts[1]
            .parse()
            .map_err(|_| Error::Format(format!("bad degree {:?}", parts[1])))?;
        let kind = match parts[2] {
            "total_degree" => BasisKind::TotalDegree(n),
            "hyperbolic_cross" => BasisKind::HyperbolicCross(n),
            "custom" => BasisKind::Custom,
            other => return Err(Error::Format(format!("unknown basis kind {other:?}"))),
        };
        let mut indices = Vec::new();
        for line in lines {
            let exps: std::result::Result<Vec<u32>, _> =
                line.split_whitespace().map(str::parse).collect();
            let exps = exps.map_err(|_| Error::Format(format!("bad index line {line:?}")))?;
            let alpha = MultiIndex::new(exps);
            if alpha.dim() != dim {
                return Err(Error::Format(format!("index {alpha} has wrong dimension")));
            }
            if !kind.admits(&alpha) {
                return Err(Error::Format(format!("index {alpha} not admitted by {}", parts[2])));
            }
            indices.push(alpha);
        }
        let mut set = BasisSet::custom(dim, indices).map_err(|e| Error::Format(e.to_string()))?;
        set.kind = kind;
        Ok(set)
    }
}

impl<'a> IntoIterator for &'a BasisSet {
    type Item = &'a MultiIndex;
    type IntoIter = std::slice::Iter<'a, MultiIndex>;
    fn into_iter(self) -> Self::IntoIter {
        self.indices.iter()
    }
}

/// `binomial(n + d, d)` with overflow detection.
pub fn total_degree_cardinality(dim: usize, degree: u32) -> Option<usize> {
    let mut c: u128 = 1;
    for k in 1..=dim as u128 {
        c = c.checked_mul(degree as u128 + k)? / k;
    }
    usize::try_from(c).ok()
}

/// All `α ∈ ℕ^d` with `|α| ≤ n`, graded lexicographic order.
pub fn total_degree_indices(dim: usize, degree: u32) -> Result<BasisSet> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let card = total_degree_cardinality(dim, degree).ok_or(Error::SizeOverflow { dim, degree })?;
    let mut indices = Vec::new();
    indices
        .try_reserve_exact(card)
        .map_err(|_| Error::SizeOverflow { dim, degree })?;
    let mut buf = vec![0u32; dim];
    for k in 0..=degree {
        compositions(&mut buf, 0, k, &mut indices);
    }
    debug_assert_eq!(indices.len(), card);
    Ok(BasisSet {
        dim,
        kind: BasisKind::TotalDegree(degree),
        indices,
    })
}

// Compositions of `remaining` into buf[pos..], ascending lexicographic.
fn compositions(buf: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == buf.len() {
        buf[pos] = remaining;
        out.push(MultiIndex(buf.to_vec()));
        return;
    }
    for a in 0..=remaining {
        buf[pos] = a;
        compositions(buf, pos + 1, remaining - a, out);
    }
    buf[pos] = 0;
}

/// All `α` with `∏ (α_j + 1) ≤ n + 1`, graded lexicographic order.
///
/// Generated by depth-first recursion over coordinates with a remaining
/// product budget, so the cost is proportional to the output size even in
/// high dimension.
pub fn hyperbolic_cross_indices(dim: usize, degree: u32) -> Result<BasisSet> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let budget = degree as u64 + 1;
    let mut indices = Vec::new();
    let mut buf = vec![0u32; dim];
    cross_dfs(&mut buf, 0, budget, &mut indices);
    indices.sort_by(|a, b| a.grlex_cmp(b));
    Ok(BasisSet {
        dim,
        kind: BasisKind::HyperbolicCross(degree),
        indices,
    })
}

fn cross_dfs(buf: &mut [u32], pos: usize, budget: u64, out: &mut Vec<MultiIndex>) {
    if pos == buf.len() {
        out.push(MultiIndex(buf.to_vec()));
        return;
    }
    let mut a = 0u32;
    while (a as u64 + 1) <= budget {
        buf[pos] = a;
        cross_dfs(buf, pos + 1, budget / (a as u64 + 1), out);
        a += 1;
    }
    buf[pos] = 0;
}

/// Removes every index of degree ≤ 1, so that `v(0) = 0` and `∇v(0) = 0`.
pub fn strip_low_order(set: &BasisSet) -> BasisSet {
    set.filtered(|a| a.degree() > 1)
}

/// True iff every row of `b` indexed by the support of `alpha` is zero, which
/// is equivalent to `Bᵀ∇φ_α ≡ 0`.
pub fn is_b_orthogonal(alpha: &MultiIndex, b: &DMatrix<f64>) -> Result<bool> {
    if b.nrows() != alpha.dim() {
        return Err(Error::DimensionMismatch(format!(
            "control matrix has {} rows, multi-index has dimension {}",
            b.nrows(),
            alpha.dim()
        )));
    }
    Ok(alpha
        .support()
        .all(|i| b.row(i).iter().all(|&x| x == 0.0)))
}

/// Drops the B-orthogonal indices; they cannot influence the feedback.
pub fn reduce_basis(set: &BasisSet, b: &DMatrix<f64>) -> Result<BasisSet> {
    if b.nrows() != set.dim() {
        return Err(Error::DimensionMismatch(format!(
            "control matrix has {} rows, basis has dimension {}",
            b.nrows(),
            set.dim()
        )));
    }
    let zero_rows: Vec<bool> = (0..b.nrows())
        .map(|i| b.row(i).iter().all(|&x| x == 0.0))
        .collect();
    Ok(set.filtered(|a| !a.support().all(|i| zero_rows[i])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(e: &[u32]) -> MultiIndex {
        MultiIndex::new(e.to_vec())
    }

    fn brute_force(dim: usize, max_exp: u32, keep: impl Fn(&[u32]) -> bool) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut e = vec![0u32; dim];
        loop {
            if keep(&e) {
                out.push(MultiIndex::new(e.clone()));
            }
            let mut j = 0;
            loop {
                if j == dim {
                    return out;
                }
                e[j] += 1;
                if e[j] <= max_exp {
                    break;
                }
                e[j] = 0;
                j += 1;
            }
        }
    }

    #[test]
    fn lambda_one_in_two_dims() {
        let set = total_degree_indices(2, 1).unwrap();
        assert_eq!(set.indices(), &[mi(&[0, 0]), mi(&[0, 1]), mi(&[1, 0])]);
    }

    #[test]
    fn one_dimensional_total_degree() {
        let set = total_degree_indices(1, 3).unwrap();
        assert_eq!(
            set.indices(),
            &[mi(&[0]), mi(&[1]), mi(&[2]), mi(&[3])]
        );
    }

    #[test]
    fn cardinality_matches_enumeration() {
        let set = total_degree_indices(3, 2).unwrap();
        let brute = brute_force(3, 2, |e| e.iter().sum::<u32>() <= 2);
        assert_eq!(set.len(), 10);
        assert_eq!(brute.len(), 10);
        for d in 1..=5 {
            for n in 0..=6 {
                let set = total_degree_indices(d, n).unwrap();
                let brute = brute_force(d, n, |e| e.iter().sum::<u32>() <= n);
                assert_eq!(set.len(), brute.len(), "d={d} n={n}");
                assert_eq!(Some(set.len()), total_degree_cardinality(d, n));
                let got: HashSet<_> = set.iter().cloned().collect();
                assert!(brute.iter().all(|a| got.contains(a)));
            }
        }
    }

    #[test]
    fn nesting_is_prefix() {
        for d in 1..=4 {
            for n in 0..5 {
                let small = total_degree_indices(d, n).unwrap();
                let big = total_degree_indices(d, n + 1).unwrap();
                assert_eq!(&big.indices()[..small.len()], small.indices());
            }
        }
    }

    #[test]
    fn size_overflow_is_reported() {
        assert!(matches!(
            total_degree_indices(200, 200),
            Err(Error::SizeOverflow { .. })
        ));
    }

    #[test]
    fn hyperbolic_cross_small() {
        let set = hyperbolic_cross_indices(2, 3).unwrap();
        let expected: HashSet<_> = [
            [0, 0],
            [1, 0],
            [0, 1],
            [2, 0],
            [0, 2],
            [1, 1],
            [3, 0],
            [0, 3],
        ]
        .iter()
        .map(|e| mi(e))
        .collect();
        let brute: HashSet<_> = brute_force(2, 3, |e| e.iter().map(|&a| a + 1).product::<u32>() <= 4)
            .into_iter()
            .collect();
        let got: HashSet<_> = set.iter().cloned().collect();
        assert_eq!(got, expected);
        assert_eq!(got, brute);
        assert_eq!(set.len(), 8);
    }

    #[test]
    fn hyperbolic_cross_one_dim_is_total_degree() {
        for k in 0..6 {
            assert_eq!(
                hyperbolic_cross_indices(1, k).unwrap().indices(),
                total_degree_indices(1, k).unwrap().indices()
            );
        }
    }

    #[test]
    fn hyperbolic_cross_matches_enumeration() {
        for d in 1..=4 {
            for n in 0..=6 {
                let set = hyperbolic_cross_indices(d, n).unwrap();
                let brute = brute_force(d, n, |e| {
                    e.iter().map(|&a| a as u64 + 1).product::<u64>() <= n as u64 + 1
                });
                assert_eq!(set.len(), brute.len(), "d={d} n={n}");
                assert!(set.indices().windows(2).all(|w| w[0].grlex_cmp(&w[1]).is_lt()));
            }
        }
    }

    #[test]
    fn strip_examples() {
        let set = BasisSet::custom(2, vec![mi(&[0, 0]), mi(&[1, 0]), mi(&[0, 1]), mi(&[2, 0])]).unwrap();
        assert_eq!(strip_low_order(&set).indices(), &[mi(&[2, 0])]);

        let stripped = strip_low_order(&total_degree_indices(2, 2).unwrap());
        let got: HashSet<_> = stripped.iter().cloned().collect();
        let want: HashSet<_> = [mi(&[2, 0]), mi(&[1, 1]), mi(&[0, 2])].into_iter().collect();
        assert_eq!(got, want);

        let empty = BasisSet::custom(3, vec![]).unwrap();
        assert!(strip_low_order(&empty).is_empty());
    }

    #[test]
    fn b_orthogonality_lc_column() {
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!(is_b_orthogonal(&mi(&[2, 0, 1]), &b).unwrap());
        assert!(!is_b_orthogonal(&mi(&[0, 1, 0]), &b).unwrap());
        assert!(is_b_orthogonal(&mi(&[0, 0, 0]), &b).unwrap());
        assert!(is_b_orthogonal(&mi(&[0, 0]), &b).is_err());
    }

    #[test]
    fn reduce_examples() {
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let x = strip_low_order(&total_degree_indices(3, 2).unwrap());
        let reduced = reduce_basis(&x, &b).unwrap();
        assert!(reduced.iter().all(|a| a.exponents()[1] > 0));
        assert_eq!(reduced.len(), 3);

        let full_rank = DMatrix::from_element(3, 2, 1.0);
        assert_eq!(reduce_basis(&x, &full_rank).unwrap(), x);

        let zero = DMatrix::zeros(3, 1);
        assert!(reduce_basis(&x, &zero).unwrap().is_empty());
    }

    #[test]
    fn listing_round_trip() {
        let set = reduce_basis(
            &strip_low_order(&hyperbolic_cross_indices(4, 5).unwrap()),
            &DMatrix::from_fn(4, 2, |i, j| if i == j + 2 { 1.0 } else { 0.0 }),
        )
        .unwrap();
        let text = set.to_listing();
        assert!(text.starts_with("4 5 hyperbolic_cross\n"));
        assert_eq!(BasisSet::from_listing(&text).unwrap(), set);
        assert!(BasisSet::from_listing("2 1 total_degree\n3 0\n").is_err());
    }

    #[test]
    fn downward_closure_contains_predecessors() {
        let set = BasisSet::custom(2, vec![mi(&[2, 1])]).unwrap();
        let closed = set.downward_closure();
        let want: HashSet<_> = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [2, 1]]
            .iter()
            .map(|e| mi(e))
            .collect();
        let got: HashSet<_> = closed.iter().cloned().collect();
        assert_eq!(got, want);
    }
}
