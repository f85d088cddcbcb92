//! Exact symmetric-tensor algebra in 3 spatial dimensions.
//!
//! A rank-k fully symmetric tensor is stored sparsely on canonical
//! (non-decreasing) index tuples; lookups with unsorted tuples resolve to the
//! canonical entry. `sym_delta` builds the fully symmetrized product of
//! Kronecker deltas, the only isotropic structure this hierarchy needs.

use crate::scalar::{multiset_perms, Scalar, ScalarMode};
use std::collections::BTreeMap;
use thiserror::Error;

pub const DIM: u8 = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("symmetrized delta needs at least one delta factor")]
    InvalidRank,
    #[error("index tuple has length {got}, tensor rank is {want}")]
    Shape { got: usize, want: usize },
    #[error("contraction arguments consume {want} slots, tensor has rank {got}")]
    SlotOverflow { got: usize, want: usize },
    #[error("contraction arguments must have rank 1 or 2")]
    BadArgRank,
    #[error("index value out of range 1..=3")]
    IndexRange,
}

/// Canonical multiset of spatial indices (sorted, values in 1..=3).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(Vec<u8>);

impl MultiIndex {
    pub fn new(mut idx: Vec<u8>) -> Result<Self, TensorError> {
        if idx.iter().any(|&i| !(1..=DIM).contains(&i)) {
            return Err(TensorError::IndexRange);
        }
        idx.sort_unstable();
        Ok(MultiIndex(idx))
    }

    pub fn from_slice(idx: &[u8]) -> Result<Self, TensorError> {
        Self::new(idx.to_vec())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

/// Fully symmetric rank-k tensor over 3 dimensions with sparse canonical
/// storage. Rank 0 is a bare scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor<T> {
    rank: usize,
    comps: BTreeMap<MultiIndex, T>,
}

impl<T: Scalar> SymTensor<T> {
    pub fn zero(rank: usize) -> Self {
        SymTensor {
            rank,
            comps: BTreeMap::new(),
        }
    }

    pub fn scalar(value: T) -> Self {
        let mut t = Self::zero(0);
        t.set(&[], value).unwrap();
        t
    }

    pub fn vector(v: [T; 3]) -> Self {
        let mut t = Self::zero(1);
        for (i, x) in v.into_iter().enumerate() {
            t.set(&[i as u8 + 1], x).unwrap();
        }
        t
    }

    /// Symmetric matrix from its upper triangle (11, 12, 13, 22, 23, 33).
    pub fn matrix(upper: [T; 6]) -> Self {
        let mut t = Self::zero(2);
        let keys: [[u8; 2]; 6] = [[1, 1], [1, 2], [1, 3], [2, 2], [2, 3], [3, 3]];
        for (k, x) in keys.iter().zip(upper) {
            t.set(k, x).unwrap();
        }
        t
    }

    pub fn diag(d: [T; 3]) -> Self {
        let [a, b, c] = d;
        Self::matrix([a, T::zero(), T::zero(), b, T::zero(), c])
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn mode(&self) -> ScalarMode {
        T::MODE
    }

    /// Component lookup; the tuple is canonicalized, so any index order works.
    pub fn get(&self, idx: &[u8]) -> T {
        let key = MultiIndex::from_slice(idx).expect("bad index");
        assert_eq!(key.len(), self.rank, "rank mismatch in lookup");
        self.comps.get(&key).cloned().unwrap_or_else(T::zero)
    }

    pub fn set(&mut self, idx: &[u8], value: T) -> Result<(), TensorError> {
        let key = MultiIndex::from_slice(idx)?;
        if key.len() != self.rank {
            return Err(TensorError::Shape {
                got: key.len(),
                want: self.rank,
            });
        }
        if value.is_zero() {
            self.comps.remove(&key);
        } else {
            self.comps.insert(key, value);
        }
        Ok(())
    }

    pub fn add_at(&mut self, idx: &[u8], value: T) -> Result<(), TensorError> {
        let cur = self.get(idx);
        self.set(idx, cur + value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &T)> {
        self.comps.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.comps.values().all(|v| v.is_zero())
    }

    pub fn scale(&self, c: &T) -> Self {
        let mut out = Self::zero(self.rank);
        for (k, v) in &self.comps {
            out.comps.insert(k.clone(), v.clone() * c.clone());
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.rank, other.rank, "rank mismatch in add");
        let mut out = self.clone();
        for (k, v) in &other.comps {
            let cur = out.comps.get(k).cloned().unwrap_or_else(T::zero);
            let s = cur + v.clone();
            if s.is_zero() {
                out.comps.remove(k);
            } else {
                out.comps.insert(k.clone(), s);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .values()
            .map(|v| v.abs().to_f64_lossy())
            .fold(0.0, f64::max)
    }

    /// Iterate all canonical index tuples of a given rank.
    pub fn canonical_indices(rank: usize) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(rank);
        fn rec(rank: usize, start: u8, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
            if cur.len() == rank {
                out.push(cur.clone());
                return;
            }
            for v in start..=DIM {
                cur.push(v);
                rec(rank, v, cur, out);
                cur.pop();
            }
        }
        rec(rank, 1, &mut cur, &mut out);
        out
    }
}

/// Fully symmetrized product of `n` Kronecker deltas (rank 2n), built by the
/// recursion over the first slot's pairing partner. Exact for any scalar type.
pub fn sym_delta<T: Scalar>(n: usize) -> Result<SymTensor<T>, TensorError> {
    if n == 0 {
        return Err(TensorError::InvalidRank);
    }
    Ok(sym_delta_unchecked(n))
}

fn sym_delta_unchecked<T: Scalar>(n: usize) -> SymTensor<T> {
    if n == 0 {
        return SymTensor::scalar(T::one());
    }
    let prev = sym_delta_unchecked::<T>(n - 1);
    let rank = 2 * n;
    let mut out = SymTensor::zero(rank);
    let norm = T::from_int(2 * n as i64 - 1);
    for key in SymTensor::<T>::canonical_indices(rank) {
        let mut acc = T::zero();
        for j in 1..rank {
            if key[0] == key[j] {
                let mut rest = Vec::with_capacity(rank - 2);
                for (m, &v) in key.iter().enumerate() {
                    if m != 0 && m != j {
                        rest.push(v);
                    }
                }
                acc = acc + prev.get(&rest);
            }
        }
        if !acc.is_zero() {
            out.set(&key, acc / norm.clone()).unwrap();
        }
    }
    out
}

/// (1/rank!) sum over all permutations of a raw component table; the result
/// is the symmetric part. Idempotent on already-symmetric input.
pub fn symmetrize<T: Scalar>(
    raw: &[(Vec<u8>, T)],
    rank: usize,
) -> Result<SymTensor<T>, TensorError> {
    let mut sums: BTreeMap<MultiIndex, T> = BTreeMap::new();
    for (idx, v) in raw {
        if idx.len() != rank {
            return Err(TensorError::Shape {
                got: idx.len(),
                want: rank,
            });
        }
        let key = MultiIndex::from_slice(idx)?;
        let cur = sums.remove(&key).unwrap_or_else(T::zero);
        sums.insert(key, cur + v.clone());
    }
    let mut out = SymTensor::zero(rank);
    for (key, total) in sums {
        // All permutations of the multiset receive the same symmetrized
        // value: (sum over raw entries in the orbit) / (orbit size).
        let orbit = T::from_u64(multiset_perms(key.as_slice())).unwrap();
        let v = total / orbit;
        if !v.is_zero() {
            out.comps.insert(key, v);
        }
    }
    Ok(out)
}

/// Contract a fully symmetric tensor with rank-1 and rank-2 symmetric
/// arguments. Each vector consumes one slot, each matrix two; the argument
/// order is immaterial because of full symmetry.
pub fn contract<T: Scalar>(
    t: &SymTensor<T>,
    args: &[&SymTensor<T>],
) -> Result<SymTensor<T>, TensorError> {
    let consumed: usize = args
        .iter()
        .map(|a| match a.rank() {
            1 => Ok(1),
            2 => Ok(2),
            _ => Err(TensorError::BadArgRank),
        })
        .sum::<Result<usize, _>>()?;
    if consumed > t.rank() {
        return Err(TensorError::SlotOverflow {
            got: t.rank(),
            want: consumed,
        });
    }
    let mut cur = t.clone();
    for a in args {
        cur = match a.rank() {
            1 => contract_vector(&cur, a),
            2 => contract_matrix(&cur, a),
            _ => unreachable!(),
        };
    }
    Ok(cur)
}

fn contract_vector<T: Scalar>(t: &SymTensor<T>, v: &SymTensor<T>) -> SymTensor<T> {
    let rank = t.rank() - 1;
    let mut out = SymTensor::zero(rank);
    for key in SymTensor::<T>::canonical_indices(rank) {
        let mut acc = T::zero();
        for a in 1..=DIM {
            let va = v.get(&[a]);
            if va.is_zero() {
                continue;
            }
            let mut full = key.clone();
            full.push(a);
            acc = acc + t.get(&full) * va;
        }
        if !acc.is_zero() {
            out.set(&key, acc).unwrap();
        }
    }
    out
}

fn contract_matrix<T: Scalar>(t: &SymTensor<T>, m: &SymTensor<T>) -> SymTensor<T> {
    let rank = t.rank() - 2;
    let mut out = SymTensor::zero(rank);
    for key in SymTensor::<T>::canonical_indices(rank) {
        let mut acc = T::zero();
        for a in 1..=DIM {
            for b in 1..=DIM {
                let mab = m.get(&[a, b]);
                if mab.is_zero() {
                    continue;
                }
                let mut full = key.clone();
                full.push(a);
                full.push(b);
                acc = acc + t.get(&full) * mab;
            }
        }
        if !acc.is_zero() {
            out.set(&key, acc).unwrap();
        }
    }
    out
}

/// Outer product of two symmetric tensors, re-symmetrized over all slots.
pub fn outer<T: Scalar>(a: &SymTensor<T>, b: &SymTensor<T>) -> SymTensor<T> {
    let rank = a.rank() + b.rank();
    let ka = a.rank();
    let mut out = SymTensor::zero(rank);
    // Average A[K_P] B[K_{P^c}] over all position subsets P of size rank(A).
    let subsets = position_subsets(rank, ka);
    let norm = T::from_u64(crate::scalar::binomial(rank, ka)).unwrap();
    for key in SymTensor::<T>::canonical_indices(rank) {
        let mut acc = T::zero();
        for subset in &subsets {
            let mut ia = Vec::with_capacity(ka);
            let mut ib = Vec::with_capacity(rank - ka);
            for (pos, &v) in key.iter().enumerate() {
                if subset.contains(&pos) {
                    ia.push(v);
                } else {
                    ib.push(v);
                }
            }
            let fa = a.get(&ia);
            if fa.is_zero() {
                continue;
            }
            acc = acc + fa * b.get(&ib);
        }
        if !acc.is_zero() {
            out.set(&key, acc / norm.clone()).unwrap();
        }
    }
    out
}

fn position_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, k, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(n, k, 0, &mut cur, &mut out);
    out
}
