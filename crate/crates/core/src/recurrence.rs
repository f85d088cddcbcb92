//! The theta_{p,q,r,s}(lambda) coefficient family of the mu-expansion of the
//! deviation potential, with its defining recurrences and normalizations.
//!
//! Keys with p >= 2 reduce to the p in {0,1} layer; the table stores only
//! reduced keys. Closure propagates four directional fill rules from the
//! seeds and the normalization zeros to a fixpoint, reporting conflicting
//! and undetermined entries instead of resolving them silently.

use crate::ring::LambdaScalar;
use crate::scalar::Scalar;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ThetaError {
    #[error("theta key violates the r+p parity constraint")]
    Parity,
    #[error("nonzero value at a normalized key (s = 0 layers or the scalar chain)")]
    Normalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ThetaKey {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub s: usize,
}

impl ThetaKey {
    pub fn new(p: usize, q: usize, r: usize, s: usize) -> Result<Self, ThetaError> {
        if !(p + r).is_multiple_of(2) {
            return Err(ThetaError::Parity);
        }
        Ok(ThetaKey { p, q, r, s })
    }

    fn order(&self) -> usize {
        self.p + self.q + self.r
    }
}

/// Reduce p to the canonical 0/1 layer: even p folds into (q, s) by p/2,
/// odd p by (p-1)/2. Identity on p in {0,1}.
pub fn reduce_p(k: ThetaKey) -> ThetaKey {
    if k.p <= 1 {
        return k;
    }
    let half = k.p / 2;
    if k.p.is_multiple_of(2) {
        ThetaKey {
            p: 0,
            q: k.q + half,
            r: k.r,
            s: k.s + half,
        }
    } else {
        ThetaKey {
            p: 1,
            q: k.q + half,
            r: k.r,
            s: k.s + half,
        }
    }
}

/// Is the key pinned to zero by the normalizations? (Both s = 0 layers and
/// the pure-scalar chain theta_{0,0,0,s}.)
pub fn is_normalized_zero(k: &ThetaKey) -> bool {
    let k = reduce_p(*k);
    k.s == 0 || (k.p == 0 && k.q == 0 && k.r == 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaTable<T> {
    max_order: usize,
    s_max: usize,
    entries: BTreeMap<ThetaKey, LambdaScalar<T>>,
}

impl<T: Scalar> ThetaTable<T> {
    /// Empty (fully undetermined) table.
    pub fn empty(max_order: usize) -> Self {
        ThetaTable {
            max_order,
            s_max: max_order,
            entries: BTreeMap::new(),
        }
    }

    /// The canonical fully-determined table: every in-bound entry zero.
    pub fn zero(max_order: usize) -> Self {
        let mut t = Self::empty(max_order);
        for key in t.key_space() {
            t.entries.insert(key, LambdaScalar::zero());
        }
        t
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn s_max(&self) -> usize {
        self.s_max
    }

    /// All reduced keys within the order and s bounds.
    pub fn key_space(&self) -> Vec<ThetaKey> {
        let mut out = Vec::new();
        for p in 0..=1usize {
            for q in 0..=self.max_order.saturating_sub(p) {
                for r in 0..=self.max_order.saturating_sub(p + q) {
                    if (p + r) % 2 != 0 {
                        continue;
                    }
                    for s in 0..=self.s_max {
                        out.push(ThetaKey { p, q, r, s });
                    }
                }
            }
        }
        out
    }

    fn in_bounds(&self, k: &ThetaKey) -> bool {
        k.p <= 1 && k.order() <= self.max_order && k.s <= self.s_max
    }

    pub fn get(&self, k: ThetaKey) -> Option<LambdaScalar<T>> {
        let rk = reduce_p(k);
        if is_normalized_zero(&rk) && self.in_bounds(&rk) && !self.entries.contains_key(&rk) {
            return Some(LambdaScalar::zero());
        }
        self.entries.get(&rk).cloned()
    }

    pub fn insert(&mut self, k: ThetaKey, v: LambdaScalar<T>) -> Result<(), ThetaError> {
        if !(k.p + k.r).is_multiple_of(2) {
            return Err(ThetaError::Parity);
        }
        let rk = reduce_p(k);
        if is_normalized_zero(&rk) && !v.is_zero() {
            return Err(ThetaError::Normalization);
        }
        self.entries.insert(rk, v);
        Ok(())
    }

    /// Insert bypassing the normalization guard. Exists so verification
    /// tests can inject deliberate violations.
    pub fn insert_raw(&mut self, k: ThetaKey, v: LambdaScalar<T>) {
        self.entries.insert(reduce_p(k), v);
    }

    pub fn determined_keys(&self) -> impl Iterator<Item = &ThetaKey> {
        self.entries.keys()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ThetaKey, &LambdaScalar<T>)> {
        self.entries.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|v| v.is_zero())
    }
}

/// One fill-step of the q-raising relation: solve
///   0 = (2Q+R+c) theta_{p,Q,R,s+1} + 2 lam theta_{p,Q+1,R,s+1} + 2R (cross)
/// for the (Q+1) entry, with c = 1 for p = 0 and c = 2 for p = 1 and the
/// cross term absent when R = 0.
pub fn beta4_solve_q<T: Scalar>(
    p: usize,
    big_q: usize,
    big_r: usize,
    same: &LambdaScalar<T>,
    cross: Option<&LambdaScalar<T>>,
) -> LambdaScalar<T> {
    let c = if p == 0 { 1 } else { 2 };
    let lead = T::from_int((2 * big_q + big_r + c) as i64);
    let mut num = same.scale(&lead);
    if big_r > 0 {
        let cr = cross.expect("cross term required for R > 0");
        num = num.add(&cr.scale(&T::from_int(2 * big_r as i64)));
    }
    // divide by -2 lambda, exact in the Laurent ring
    num.mul(&LambdaScalar::lambda_pow(T::from_ratio(-1, 2), -1))
}

#[derive(Debug, Clone)]
pub struct ThetaConflict {
    pub key: ThetaKey,
    pub rule: &'static str,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct ClosureOutcome<T> {
    pub table: ThetaTable<T>,
    pub conflicts: Vec<ThetaConflict>,
    pub undetermined: Vec<ThetaKey>,
}

impl<T> ClosureOutcome<T> {
    pub fn is_consistent(&self) -> bool {
        self.conflicts.is_empty()
    }
}

/// Close a partial table under the four directional fill rules:
/// the two lambda-differentiation rules raising r, and the two linear
/// relations solved for the q+1 entry. Normalization zeros count as known.
pub fn close_table<T: Scalar>(seeds: &ThetaTable<T>, max_order: usize) -> ClosureOutcome<T> {
    let mut table = ThetaTable::<T>::empty(max_order);
    let mut conflicts = Vec::new();

    // normalizations first
    for key in table.key_space() {
        if is_normalized_zero(&key) {
            table.entries.insert(key, LambdaScalar::zero());
        }
    }
    // then seeds
    for (k, v) in seeds.entries() {
        if !table.in_bounds(k) {
            continue;
        }
        if let Some(existing) = table.entries.get(k) {
            if existing != v {
                conflicts.push(ThetaConflict {
                    key: *k,
                    rule: "seed",
                    note: "seed contradicts a normalization zero".into(),
                });
                continue;
            }
        }
        table.entries.insert(*k, v.clone());
    }

    let keys = table.key_space();
    let settle = |table: &mut ThetaTable<T>,
                  conflicts: &mut Vec<ThetaConflict>,
                  key: ThetaKey,
                  rule: &'static str,
                  value: LambdaScalar<T>|
     -> bool {
        match table.entries.get(&key) {
            Some(existing) if *existing == value => false,
            Some(_) => {
                if !conflicts.iter().any(|c| c.key == key && c.rule == rule) {
                    conflicts.push(ThetaConflict {
                        key,
                        rule,
                        note: "propagated value disagrees with existing entry".into(),
                    });
                }
                false
            }
            None => {
                table.entries.insert(key, value);
                true
            }
        }
    };

    loop {
        let mut changed = false;
        for &k in &keys {
            // r-raising by lambda-differentiation, p = 0 targets:
            // theta_{0,q,r+1,s+1} = d/dlam theta_{1,q,r,s}
            if k.p == 0 && k.r >= 1 && k.s >= 1 {
                let src = ThetaKey {
                    p: 1,
                    q: k.q,
                    r: k.r - 1,
                    s: k.s - 1,
                };
                if let Some(v) = table.get(src) {
                    changed |= settle(&mut table, &mut conflicts, k, "r-step (p=0)", v.d_lambda());
                }
            }
            // theta_{1,q,r+1,s+1} = d/dlam theta_{0,q+1,r,s+1}
            if k.p == 1 && k.r >= 1 && k.s >= 1 {
                let src = ThetaKey {
                    p: 0,
                    q: k.q + 1,
                    r: k.r - 1,
                    s: k.s,
                };
                if table.in_bounds(&src) {
                    if let Some(v) = table.get(src) {
                        changed |=
                            settle(&mut table, &mut conflicts, k, "r-step (p=1)", v.d_lambda());
                    }
                }
            }
            // q-raising solves, targets (p, Q+1, R, s+1)
            if k.q >= 1 && k.s >= 1 {
                let big_q = k.q - 1;
                let same = ThetaKey {
                    p: k.p,
                    q: big_q,
                    r: k.r,
                    s: k.s,
                };
                let cross = if k.p == 0 {
                    ThetaKey {
                        p: 1,
                        q: k.q,
                        r: k.r.wrapping_sub(1),
                        s: k.s - 1,
                    }
                } else {
                    ThetaKey {
                        p: 0,
                        q: k.q + 1,
                        r: k.r.wrapping_sub(1),
                        s: k.s,
                    }
                };
                let same_v = table.get(same);
                let cross_v = if k.r == 0 {
                    Some(LambdaScalar::zero())
                } else if table.in_bounds(&cross) {
                    table.get(cross)
                } else {
                    None
                };
                if let (Some(sv), Some(cv)) = (same_v, cross_v) {
                    let rule = if k.p == 0 {
                        "q-step (p=0)"
                    } else {
                        "q-step (p=1)"
                    };
                    let v = beta4_solve_q(k.p, big_q, k.r, &sv, Some(&cv));
                    changed |= settle(&mut table, &mut conflicts, k, rule, v);
                }
            }
        }
        if !changed {
            break;
        }
    }

    let undetermined = keys
        .iter()
        .filter(|k| !table.entries.contains_key(k))
        .copied()
        .collect();

    ClosureOutcome {
        table,
        conflicts,
        undetermined,
    }
}

#[derive(Debug, Clone)]
pub struct ThetaViolation {
    pub relation: &'static str,
    pub key: ThetaKey,
}

/// Exhaustively check every relation instance whose operands are all
/// determined and in bounds: the two index-shift relations, the three-term
/// linear relation (materialized for general p via `reduce_p` up to p = 5),
/// the reduction consistency and the three normalizations.
pub fn verify_table<T: Scalar>(table: &ThetaTable<T>, max_order: usize) -> Vec<ThetaViolation> {
    let mut out = Vec::new();
    let p_max = 5usize;

    let lookup = |k: ThetaKey| -> Option<LambdaScalar<T>> {
        let rk = reduce_p(k);
        if rk.order() > table.max_order() || rk.s > table.s_max() {
            return None;
        }
        table.get(rk)
    };

    // normalizations
    for (k, v) in table.entries() {
        if is_normalized_zero(k) && !v.is_zero() {
            let relation = if k.p == 1 {
                "normalization: s=0 layer (p=1)"
            } else if k.q == 0 && k.r == 0 {
                "normalization: scalar chain"
            } else {
                "normalization: s=0 layer (p=0)"
            };
            out.push(ThetaViolation { relation, key: *k });
        }
    }

    for p in 0..=p_max {
        for q in 0..=max_order {
            for r in 0..=max_order {
                if (p + r) % 2 != 0 || p + q + r > max_order + p_max {
                    continue;
                }
                for s in 0..=max_order {
                    // shift relation in q/s: theta_{p,q+1,r,s+1} = theta_{p+2,q,r,s}
                    let lhs = ThetaKey {
                        p,
                        q: q + 1,
                        r,
                        s: s + 1,
                    };
                    let rhs = ThetaKey { p: p + 2, q, r, s };
                    if let (Some(a), Some(b)) = (lookup(lhs), lookup(rhs)) {
                        if a != b {
                            out.push(ThetaViolation {
                                relation: "q/s shift",
                                key: lhs,
                            });
                        }
                    }
                    // shift relation in r: theta_{p,q,r+1,s+1} = d/dlam theta_{p+1,q,r,s}
                    let lhs = ThetaKey {
                        p,
                        q,
                        r: r + 1,
                        s: s + 1,
                    };
                    let rhs = ThetaKey { p: p + 1, q, r, s };
                    if (p + r + 1) % 2 == 0 {
                        if let (Some(a), Some(b)) = (lookup(lhs), lookup(rhs)) {
                            if a != b.d_lambda() {
                                out.push(ThetaViolation {
                                    relation: "r shift",
                                    key: lhs,
                                });
                            }
                        }
                    }
                    // linear relation:
                    // (p+2q+r+1) theta_{p,q,r,s+1} + 2 lam theta_{p,q+1,r,s+1}
                    //   + 2r theta_{p+1,q+1,r-1,s} = 0
                    let t0 = ThetaKey { p, q, r, s: s + 1 };
                    let t1 = ThetaKey {
                        p,
                        q: q + 1,
                        r,
                        s: s + 1,
                    };
                    let t2 = if r > 0 {
                        Some(ThetaKey {
                            p: p + 1,
                            q: q + 1,
                            r: r - 1,
                            s,
                        })
                    } else {
                        None
                    };
                    let v0 = lookup(t0);
                    let v1 = lookup(t1);
                    let v2 = match t2 {
                        Some(k) => lookup(k),
                        None => Some(LambdaScalar::zero()),
                    };
                    if let (Some(v0), Some(v1), Some(v2)) = (v0, v1, v2) {
                        let lead = T::from_int((p + 2 * q + r + 1) as i64);
                        let mut acc = v0.scale(&lead);
                        acc = acc.add(&v1.mul(&LambdaScalar::lambda_pow(T::from_int(2), 1)));
                        acc = acc.add(&v2.scale(&T::from_int(2 * r as i64)));
                        if !acc.is_zero() {
                            out.push(ThetaViolation {
                                relation: "linear q relation",
                                key: t0,
                            });
                        }
                    }
                    // reduction consistency
                    let k = ThetaKey { p, q, r, s };
                    if let (Some(a), Some(b)) = (lookup(k), lookup(reduce_p(k))) {
                        if a != b {
                            out.push(ThetaViolation {
                                relation: "p reduction",
                                key: k,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}
