//! Small dense tensors over 3 dimensions, used for evaluated series values
//! and residual assembly. Unlike `SymTensor` these carry no symmetry
//! constraint, which the closure fluxes need: only part of their index
//! structure is symmetric.

use crate::scalar::Scalar;
use crate::symtensor::{SymTensor, DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T> {
    rank: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn zero(rank: usize) -> Self {
        DenseTensor {
            rank,
            data: vec![T::zero(); 3usize.pow(rank as u32)],
        }
    }

    pub fn scalar(v: T) -> Self {
        DenseTensor {
            rank: 0,
            data: vec![v],
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn offset(&self, idx: &[u8]) -> usize {
        debug_assert_eq!(idx.len(), self.rank);
        let mut off = 0usize;
        for &i in idx {
            debug_assert!((1..=DIM).contains(&i));
            off = off * 3 + (i as usize - 1);
        }
        off
    }

    pub fn get(&self, idx: &[u8]) -> T {
        self.data[self.offset(idx)].clone()
    }

    pub fn set(&mut self, idx: &[u8], v: T) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    pub fn add_at(&mut self, idx: &[u8], v: T) {
        let off = self.offset(idx);
        self.data[off] = self.data[off].clone() + v;
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.rank, other.rank);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = a.clone() + b.clone();
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.rank, other.rank);
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.clone() - b.clone())
            .collect();
        DenseTensor {
            rank: self.rank,
            data,
        }
    }

    pub fn scale(&self, c: &T) -> Self {
        DenseTensor {
            rank: self.rank,
            data: self.data.iter().map(|v| v.clone() * c.clone()).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.abs().to_f64_lossy())
            .fold(0.0, f64::max)
    }

    pub fn indices(&self) -> Vec<Vec<u8>> {
        let mut out = Vec::with_capacity(self.data.len());
        let mut cur = vec![1u8; self.rank];
        loop {
            out.push(cur.clone());
            let mut pos = self.rank;
            loop {
                if pos == 0 {
                    return out;
                }
                pos -= 1;
                if cur[pos] < DIM {
                    cur[pos] += 1;
                    for v in cur.iter_mut().skip(pos + 1) {
                        *v = 1;
                    }
                    break;
                }
            }
        }
    }

    /// Row-major component list in lexicographic index order
    /// (1,1,..),(1,..,2),...
    pub fn components(&self) -> &[T] {
        &self.data
    }

    pub fn from_fn(rank: usize, mut f: impl FnMut(&[u8]) -> T) -> Self {
        let mut out = Self::zero(rank);
        for idx in out.indices() {
            let v = f(&idx);
            out.set(&idx, v);
        }
        out
    }

    /// Outer product a ⊗ b with a's indices first.
    pub fn outer(&self, other: &Self) -> Self {
        let rank = self.rank + other.rank;
        let mut out = Self::zero(rank);
        for ia in self.indices() {
            let va = self.get(&ia);
            if va.is_zero() {
                continue;
            }
            for ib in other.indices() {
                let mut idx = ia.clone();
                idx.extend_from_slice(&ib);
                out.set(&idx, va.clone() * other.get(&ib));
            }
        }
        out
    }

    /// Contract one slot of self against a rank-1 tensor.
    pub fn contract_slot_vector(&self, slot: usize, v: &DenseTensor<T>) -> Self {
        assert_eq!(v.rank(), 1);
        assert!(slot < self.rank);
        let mut out = Self::zero(self.rank - 1);
        for idx in self.indices() {
            let val = self.get(&idx);
            if val.is_zero() {
                continue;
            }
            let a = idx[slot];
            let mut rest = idx.clone();
            rest.remove(slot);
            out.add_at(&rest, val * v.get(&[a]));
        }
        out
    }

    /// Contract one slot against a symmetric rank-2 tensor, keeping the slot
    /// position: T'^{..i..} = sum_j T^{..j..} m^{ji}.
    pub fn contract_slot_matrix(&self, slot: usize, m: &SymTensor<T>) -> Self {
        assert_eq!(m.rank(), 2);
        assert!(slot < self.rank);
        let mut out = Self::zero(self.rank);
        for idx in self.indices() {
            let val = self.get(&idx);
            if val.is_zero() {
                continue;
            }
            let j = idx[slot];
            for i in 1..=DIM {
                let w = m.get(&[j, i]);
                if w.is_zero() {
                    continue;
                }
                let mut tgt = idx.clone();
                tgt[slot] = i;
                out.add_at(&tgt, val.clone() * w);
            }
        }
        out
    }

    /// Reorder slots; `perm[j]` is the output position of input slot j.
    pub fn permute(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.rank);
        DenseTensor::from_fn(self.rank, |out_idx| {
            let mut in_idx = vec![0u8; self.rank];
            for (j, &pos) in perm.iter().enumerate() {
                in_idx[j] = out_idx[pos];
            }
            self.get(&in_idx)
        })
    }

    /// Kronecker delta as a rank-2 dense tensor.
    pub fn identity2() -> Self {
        DenseTensor::from_fn(2, |i| if i[0] == i[1] { T::one() } else { T::zero() })
    }

    /// Antisymmetric part over two slots: (T - T.swap(s1,s2)) / 2.
    pub fn antisym(&self, s1: usize, s2: usize) -> Self {
        let half = T::from_ratio(1, 2);
        DenseTensor::from_fn(self.rank, |idx| {
            let mut sw = idx.to_vec();
            sw.swap(s1, s2);
            (self.get(idx) - self.get(&sw)) * half.clone()
        })
    }

    pub fn from_sym(s: &SymTensor<T>) -> Self {
        DenseTensor::from_fn(s.rank(), |idx| s.get(idx))
    }

    /// Convert to a symmetric tensor; fails when the components are not
    /// actually symmetric.
    pub fn to_sym(&self) -> Option<SymTensor<T>> {
        let mut out = SymTensor::zero(self.rank);
        for idx in self.indices() {
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            let v = self.get(&idx);
            if sorted == idx {
                out.set(&idx, v).ok()?;
            } else if v != self.get(&sorted) {
                return None;
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outer_and_contract() {
        let a = DenseTensor::from_fn(1, |i| (i[0] as f64) * 2.0);
        let b = DenseTensor::from_fn(1, |i| i[0] as f64);
        let o = a.outer(&b);
        assert_eq!(o.get(&[2, 3]), 12.0);
        let c = o.contract_slot_vector(1, &b);
        // sum_j (2i * j) * j = 2i * 14
        assert_eq!(c.get(&[1]), 28.0);
    }

    #[test]
    fn antisym_part() {
        let t = DenseTensor::from_fn(2, |i| (i[0] as f64) - 3.0 * (i[1] as f64));
        let a = t.antisym(0, 1);
        assert_eq!(a.get(&[1, 2]), ((1.0 - 6.0) - (2.0 - 3.0)) / 2.0);
        assert_eq!(a.get(&[1, 1]), 0.0);
        assert_eq!(a.get(&[2, 1]), -a.get(&[1, 2]));
    }

    #[test]
    fn slot_matrix_and_permute() {
        let t = DenseTensor::from_fn(2, |i| (i[0] * 10 + i[1]) as f64);
        let m = crate::symtensor::SymTensor::diag([1.0, 2.0, 3.0]);
        let c = t.contract_slot_matrix(1, &m);
        assert_eq!(c.get(&[2, 3]), 23.0 * 3.0);
        let p = t.permute(&[1, 0]);
        assert_eq!(p.get(&[1, 2]), t.get(&[2, 1]));
        // rank 3: move input order (a,k,i) to output order (k,i,a)
        let t3 = DenseTensor::from_fn(3, |i| {
            (i[0] as f64) + 10.0 * (i[1] as f64) + 100.0 * (i[2] as f64)
        });
        let p3 = t3.permute(&[2, 0, 1]);
        assert_eq!(p3.get(&[2, 3, 1]), t3.get(&[1, 2, 3]));
    }

    #[test]
    fn sym_round_trip() {
        let s = crate::symtensor::sym_delta::<f64>(2).unwrap();
        let d = DenseTensor::from_sym(&s);
        assert_eq!(d.get(&[1, 2, 2, 1]), d.get(&[1, 1, 2, 2]));
        let back = d.to_sym().unwrap();
        assert_eq!(back, s);
    }
}
