//! Graded truncated expansions of scalar potentials in the multiplier
//! variables (mu, mu_i, mu_ij, lambda, lambda_i).
//!
//! A term is coeff(lambda, psi) * mu^s * Structure contracted with p copies
//! of mu_i, q copies of mu_ij and r copies of lambda_i, leaving `free` open
//! slots. The structure is either the fully symmetrized delta product (the
//! only isotropic fully-symmetric structure) or an explicit sparse tensor
//! that is symmetric within each variable group but not across groups, which
//! the mixed invariant blocks (mu_{bc} lam^b lam^c and friends) require.
//!
//! Deviation order of a term is p + q + r; truncation at `max_order` is hard
//! and derivatives never resurrect dropped orders, so builders over-truncate
//! by the number of derivatives applied later.

use crate::dense::DenseTensor;
use crate::ring::{LambdaScalar, PsiRealization, RingError};
use crate::scalar::{multiset_perms, Scalar};
use crate::symtensor::{contract, SymTensor};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SeriesError {
    #[error("delta-structured term needs an even total slot count (p+r parity)")]
    Parity,
    #[error("free rank mismatch: series has {have}, term has {got}")]
    FreeRank { have: usize, got: usize },
    #[error("operation needs at least one free index")]
    NoFreeIndex,
    #[error("evaluation hit a lambda pole")]
    Pole,
    #[error("structure layout does not match the term counts")]
    Layout,
    #[error("series truncated at {have}, verification to order {order} needs {need}")]
    Headroom {
        have: usize,
        order: usize,
        need: usize,
    },
}

impl From<RingError> for SeriesError {
    fn from(e: RingError) -> Self {
        match e {
            RingError::Pole => SeriesError::Pole,
            RingError::PsiProduct => SeriesError::Layout,
        }
    }
}

/// Differentiation variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Mu,
    MuVec,
    MuMat,
    Lam,
    LamVec,
}

/// Evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers<T> {
    pub mu: T,
    pub mu_vec: SymTensor<T>,
    pub mu_mat: SymTensor<T>,
    pub lam: T,
    pub lam_vec: SymTensor<T>,
}

impl<T: Scalar> Multipliers<T> {
    pub fn new(
        mu: T,
        mu_vec: SymTensor<T>,
        mu_mat: SymTensor<T>,
        lam: T,
        lam_vec: SymTensor<T>,
    ) -> Self {
        assert_eq!(mu_vec.rank(), 1);
        assert_eq!(mu_mat.rank(), 2);
        assert_eq!(lam_vec.rank(), 1);
        Multipliers {
            mu,
            mu_vec,
            mu_mat,
            lam,
            lam_vec,
        }
    }

    pub fn equilibrium(mu: T, lam: T) -> Self {
        Self::new(
            mu,
            SymTensor::zero(1),
            SymTensor::zero(2),
            lam,
            SymTensor::zero(1),
        )
    }

    pub fn is_equilibrium(&self) -> bool {
        self.mu_vec.is_zero() && self.mu_mat.is_zero() && self.lam_vec.is_zero()
    }

    /// The fixed sample point used by the profile and oracle comparisons.
    pub fn sample_point() -> Self {
        Self::new(
            T::one(),
            SymTensor::zero(1),
            SymTensor::diag([T::one(), T::zero(), T::zero()]),
            T::from_int(2),
            SymTensor::vector([T::one(), T::zero(), T::zero()]),
        )
    }
}

/// Slot reference inside a structure core, used when assembling cores from
/// delta pairings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Free(usize),
    Mu(usize),
    /// First and second slot of mat pair i.
    MatA(usize),
    MatB(usize),
    Lam(usize),
}

/// Canonical key of a core entry: free tuple as-is, mu and lam groups
/// sorted, mat pairs sorted within and across pairs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CoreKey {
    pub free: Vec<u8>,
    pub mu: Vec<u8>,
    pub mat: Vec<(u8, u8)>,
    pub lam: Vec<u8>,
}

impl CoreKey {
    fn canonical(mut self) -> Self {
        self.mu.sort_unstable();
        for p in &mut self.mat {
            if p.0 > p.1 {
                *p = (p.1, p.0);
            }
        }
        self.mat.sort_unstable();
        self.lam.sort_unstable();
        self
    }

    /// Number of distinct full index tuples in the within-group symmetry
    /// orbit of this canonical key.
    fn orbit_size(&self) -> u64 {
        let mut n = multiset_perms(&self.mu) * multiset_perms(&self.lam);
        // distinct arrangements of the pair list: permutations of the pair
        // multiset times an independent swap for each off-diagonal pair
        let mut fact: u64 = 1;
        for k in 2..=self.mat.len() as u64 {
            fact *= k;
        }
        let mut i = 0;
        while i < self.mat.len() {
            let mut j = i;
            while j < self.mat.len() && self.mat[j] == self.mat[i] {
                j += 1;
            }
            for k in 2..=(j - i) as u64 {
                fact /= k;
            }
            i = j;
        }
        for p in &self.mat {
            if p.0 != p.1 {
                fact *= 2;
            }
        }
        n *= fact;
        n
    }
}

/// Sparse structure tensor, symmetric within each variable group. Entries
/// hold the value of the group-symmetrized tensor at the canonical key.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreTensor<T> {
    pub free: usize,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    entries: BTreeMap<CoreKey, T>,
}

impl<T: Scalar> CoreTensor<T> {
    pub fn empty(free: usize, p: usize, q: usize, r: usize) -> Self {
        CoreTensor {
            free,
            p,
            q,
            r,
            entries: BTreeMap::new(),
        }
    }

    /// Build from one perfect matching of all slots into Kronecker pairs.
    pub fn from_pairings(
        free: usize,
        p: usize,
        q: usize,
        r: usize,
        pairs: &[(Slot, Slot)],
    ) -> Self {
        let total = free + p + 2 * q + r;
        assert_eq!(pairs.len() * 2, total, "pairings must cover every slot");
        let mut raw: BTreeMap<CoreKey, T> = BTreeMap::new();
        let npairs = pairs.len();
        let mut assign = vec![1u8; npairs];
        loop {
            let mut key = CoreKey {
                free: vec![0; free],
                mu: vec![0; p],
                mat: vec![(0, 0); q],
                lam: vec![0; r],
            };
            for (pi, &(a, b)) in pairs.iter().enumerate() {
                for slot in [a, b] {
                    let v = assign[pi];
                    match slot {
                        Slot::Free(i) => key.free[i] = v,
                        Slot::Mu(i) => key.mu[i] = v,
                        Slot::MatA(i) => key.mat[i].0 = v,
                        Slot::MatB(i) => key.mat[i].1 = v,
                        Slot::Lam(i) => key.lam[i] = v,
                    }
                }
            }
            let canon = key.canonical();
            let cur = raw.remove(&canon).unwrap_or_else(T::zero);
            raw.insert(canon, cur + T::one());
            // next assignment
            let mut pos = npairs;
            let mut done = true;
            while pos > 0 {
                pos -= 1;
                if assign[pos] < 3 {
                    assign[pos] += 1;
                    for v in assign.iter_mut().skip(pos + 1) {
                        *v = 1;
                    }
                    done = false;
                    break;
                }
            }
            if done {
                break;
            }
        }
        // group-symmetrize: divide accumulated orbit sums by the orbit size
        let mut entries = BTreeMap::new();
        for (key, total) in raw {
            let orbit = T::from_u64(key.orbit_size()).unwrap();
            let v = total / orbit;
            if !v.is_zero() {
                entries.insert(key, v);
            }
        }
        CoreTensor {
            free,
            p,
            q,
            r,
            entries,
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(
            (self.free, self.p, self.q, self.r),
            (other.free, other.p, other.q, other.r)
        );
        for (k, v) in &other.entries {
            let cur = self.entries.remove(k).unwrap_or_else(T::zero);
            let s = cur + v.clone();
            if s.is_zero() {
                self.entries.remove(k);
            } else {
                self.entries.insert(k.clone(), s);
            }
        }
    }

    pub fn scale(&self, c: &T) -> Self {
        let mut out = self.clone();
        out.entries = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), v.clone() * c.clone()))
            .collect();
        out
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|v| v.is_zero())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&CoreKey, &T)> {
        self.entries.iter()
    }

    pub fn insert_canonical(&mut self, key: CoreKey, v: T) {
        if !v.is_zero() {
            self.entries.insert(key.canonical(), v);
        }
    }

    fn open_mu_slot(&self) -> Self {
        let mut out = CoreTensor::empty(self.free + 1, self.p - 1, self.q, self.r);
        for (key, v) in &self.entries {
            let mut seen = Vec::new();
            for (i, &x) in key.mu.iter().enumerate() {
                if seen.contains(&x) {
                    continue;
                }
                seen.push(x);
                let mut free = key.free.clone();
                free.push(x);
                let mut mu = key.mu.clone();
                mu.remove(i);
                out.entries.insert(
                    CoreKey {
                        free,
                        mu,
                        mat: key.mat.clone(),
                        lam: key.lam.clone(),
                    },
                    v.clone(),
                );
            }
        }
        out
    }

    fn open_lam_slot(&self) -> Self {
        let mut out = CoreTensor::empty(self.free + 1, self.p, self.q, self.r - 1);
        for (key, v) in &self.entries {
            let mut seen = Vec::new();
            for (i, &x) in key.lam.iter().enumerate() {
                if seen.contains(&x) {
                    continue;
                }
                seen.push(x);
                let mut free = key.free.clone();
                free.push(x);
                let mut lam = key.lam.clone();
                lam.remove(i);
                out.entries.insert(
                    CoreKey {
                        free,
                        mu: key.mu.clone(),
                        mat: key.mat.clone(),
                        lam,
                    },
                    v.clone(),
                );
            }
        }
        out
    }

    fn open_mat_pair(&self) -> Self {
        let mut out = CoreTensor::empty(self.free + 2, self.p, self.q - 1, self.r);
        for (key, v) in &self.entries {
            let mut seen = Vec::new();
            for (i, &pair) in key.mat.iter().enumerate() {
                if seen.contains(&pair) {
                    continue;
                }
                seen.push(pair);
                let mut mat = key.mat.clone();
                mat.remove(i);
                let orders: &[(u8, u8)] = if pair.0 == pair.1 {
                    &[pair]
                } else {
                    &[pair, (pair.1, pair.0)]
                };
                for &(a, b) in orders {
                    let mut free = key.free.clone();
                    free.push(a);
                    free.push(b);
                    out.entries.insert(
                        CoreKey {
                            free,
                            mu: key.mu.clone(),
                            mat: mat.clone(),
                            lam: key.lam.clone(),
                        },
                        v.clone(),
                    );
                }
            }
        }
        out
    }

    /// Contract the given free slot with an extra mu_i factor: the slot joins
    /// the mu group (which re-symmetrizes it into the group).
    fn free_slot_into_mu(&self, slot: usize) -> Self {
        let mut out = CoreTensor::empty(self.free - 1, self.p + 1, self.q, self.r);
        for (key, v) in &self.entries {
            let mut free = key.free.clone();
            let x = free.remove(slot);
            let mut mu = key.mu.clone();
            mu.push(x);
            mu.sort_unstable();
            let before = multiset_perms(&key.mu);
            let after = multiset_perms(&mu);
            let w = v.clone() * T::from_u64(before).unwrap() / T::from_u64(after).unwrap();
            let tgt = CoreKey {
                free,
                mu,
                mat: key.mat.clone(),
                lam: key.lam.clone(),
            };
            let cur = out.entries.remove(&tgt).unwrap_or_else(T::zero);
            let s = cur + w;
            if !s.is_zero() {
                out.entries.insert(tgt, s);
            }
        }
        out
    }

    fn evaluate(&self, at: &Multipliers<T>) -> DenseTensor<T> {
        let mut out = DenseTensor::zero(self.free);
        for (key, v) in &self.entries {
            let mut val = v.clone() * T::from_u64(key.orbit_size()).unwrap();
            for &i in &key.mu {
                val = val * at.mu_vec.get(&[i]);
            }
            for &(a, b) in &key.mat {
                val = val * at.mu_mat.get(&[a, b]);
            }
            for &i in &key.lam {
                val = val * at.lam_vec.get(&[i]);
            }
            if !val.is_zero() {
                out.add_at(&key.free, val);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Structure<T> {
    /// Fully symmetrized delta product over all slots (free ones included).
    Delta,
    Explicit(CoreTensor<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTerm<T> {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub s: usize,
    pub free: usize,
    pub coeff: LambdaScalar<T>,
    pub structure: Structure<T>,
}

impl<T: Scalar> SeriesTerm<T> {
    pub fn delta(
        p: usize,
        q: usize,
        r: usize,
        s: usize,
        free: usize,
        coeff: LambdaScalar<T>,
    ) -> Result<Self, SeriesError> {
        if !(p + r + free).is_multiple_of(2) {
            return Err(SeriesError::Parity);
        }
        Ok(SeriesTerm {
            p,
            q,
            r,
            s,
            free,
            coeff,
            structure: Structure::Delta,
        })
    }

    pub fn explicit(s: usize, coeff: LambdaScalar<T>, core: CoreTensor<T>) -> Self {
        SeriesTerm {
            p: core.p,
            q: core.q,
            r: core.r,
            s,
            free: core.free,
            coeff,
            structure: Structure::Explicit(core),
        }
    }

    pub fn order(&self) -> usize {
        self.p + self.q + self.r
    }

    fn signature_matches(&self, other: &Self) -> bool {
        self.p == other.p
            && self.q == other.q
            && self.r == other.r
            && self.s == other.s
            && self.free == other.free
            && self.structure == other.structure
    }
}

/// mu-degree measurement result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuDegree {
    /// Empty series.
    NegInfinity,
    Finite(usize),
    /// Some coefficient carries a psi symbol.
    Transcendental,
}

impl MuDegree {
    pub fn at_most(self, bound: usize) -> bool {
        match self {
            MuDegree::NegInfinity => true,
            MuDegree::Finite(d) => d <= bound,
            MuDegree::Transcendental => false,
        }
    }
}

/// Cache of symmetrized delta tensors by half-rank.
#[derive(Debug, Default)]
pub struct DeltaCache<T> {
    map: BTreeMap<usize, SymTensor<T>>,
}

impl<T: Scalar> DeltaCache<T> {
    pub fn new() -> Self {
        DeltaCache {
            map: BTreeMap::new(),
        }
    }

    fn get(&mut self, n: usize) -> &SymTensor<T> {
        self.map
            .entry(n)
            .or_insert_with(|| crate::symtensor::sym_delta(n).expect("n >= 1"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries<T> {
    max_order: usize,
    free_rank: usize,
    terms: Vec<SeriesTerm<T>>,
}

impl<T: Scalar> MomentSeries<T> {
    pub fn new(max_order: usize, free_rank: usize) -> Self {
        MomentSeries {
            max_order,
            free_rank,
            terms: Vec::new(),
        }
    }

    /// Single delta-structured scalar term. The factorial conventions of the
    /// expansion live inside `coeff`; evaluation is literally
    /// coeff * mu^s * delta^(..) * (variable factors).
    pub fn make_delta_term(
        p: usize,
        q: usize,
        r: usize,
        s: usize,
        coeff: LambdaScalar<T>,
        max_order: usize,
    ) -> Result<Self, SeriesError> {
        let term = SeriesTerm::delta(p, q, r, s, 0, coeff)?;
        let mut out = Self::new(max_order, 0);
        out.push(term)?;
        Ok(out)
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn free_rank(&self) -> usize {
        self.free_rank
    }

    pub fn terms(&self) -> &[SeriesTerm<T>] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn push(&mut self, term: SeriesTerm<T>) -> Result<(), SeriesError> {
        if term.free != self.free_rank {
            return Err(SeriesError::FreeRank {
                have: self.free_rank,
                got: term.free,
            });
        }
        if let Structure::Explicit(core) = &term.structure {
            if (core.free, core.p, core.q, core.r) != (term.free, term.p, term.q, term.r) {
                return Err(SeriesError::Layout);
            }
        }
        if term.order() > self.max_order || term.coeff.is_zero() {
            return Ok(());
        }
        let zero_structure = match &term.structure {
            Structure::Delta => false,
            Structure::Explicit(c) => c.is_zero(),
        };
        if zero_structure {
            return Ok(());
        }
        if let Some(existing) = self.terms.iter_mut().find(|t| t.signature_matches(&term)) {
            existing.coeff = existing.coeff.add(&term.coeff);
            if existing.coeff.is_zero() {
                self.terms.retain(|t| !t.coeff.is_zero());
            }
            return Ok(());
        }
        self.terms.push(term);
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, SeriesError> {
        if other.free_rank != self.free_rank {
            return Err(SeriesError::FreeRank {
                have: self.free_rank,
                got: other.free_rank,
            });
        }
        let mut out = Self::new(self.max_order.min(other.max_order), self.free_rank);
        for t in self.terms.iter().chain(other.terms.iter()) {
            out.push(t.clone())?;
        }
        Ok(out)
    }

    pub fn scale(&self, c: &T) -> Self {
        let mut out = Self::new(self.max_order, self.free_rank);
        for t in &self.terms {
            let mut t2 = t.clone();
            t2.coeff = t2.coeff.scale(c);
            out.push(t2).unwrap();
        }
        out
    }

    /// Multiply by the scalar multiplier mu (raises s, keeps the deviation
    /// order).
    pub fn mul_mu(&self) -> Self {
        let mut out = Self::new(self.max_order, self.free_rank);
        for t in &self.terms {
            let mut t2 = t.clone();
            t2.s += 1;
            out.push(t2).unwrap();
        }
        out
    }

    /// Contract the first free slot with a mu_i factor (used to assemble
    /// mu_i * H^i blocks). Raises the deviation order by one.
    pub fn contract_free_with_mu(&self) -> Result<Self, SeriesError> {
        if self.free_rank == 0 {
            return Err(SeriesError::NoFreeIndex);
        }
        let mut out = Self::new(self.max_order, self.free_rank - 1);
        for t in &self.terms {
            let term = match &t.structure {
                Structure::Delta => SeriesTerm {
                    p: t.p + 1,
                    q: t.q,
                    r: t.r,
                    s: t.s,
                    free: t.free - 1,
                    coeff: t.coeff.clone(),
                    structure: Structure::Delta,
                },
                Structure::Explicit(core) => {
                    SeriesTerm::explicit(t.s, t.coeff.clone(), core.free_slot_into_mu(0))
                }
            };
            out.push(term)?;
        }
        Ok(out)
    }

    pub fn differentiate(&self, var: Var) -> Self {
        let free_rank = match var {
            Var::Mu | Var::Lam => self.free_rank,
            Var::MuVec | Var::LamVec => self.free_rank + 1,
            Var::MuMat => self.free_rank + 2,
        };
        let mut out = Self::new(self.max_order, free_rank);
        for t in &self.terms {
            match var {
                Var::Mu => {
                    if t.s > 0 {
                        let mut t2 = t.clone();
                        t2.s -= 1;
                        t2.coeff = t2.coeff.scale(&T::from_int(t.s as i64));
                        out.push(t2).unwrap();
                    }
                    let dc = t.coeff.d_mu();
                    if !dc.is_zero() {
                        let mut t2 = t.clone();
                        t2.coeff = dc;
                        out.push(t2).unwrap();
                    }
                }
                Var::Lam => {
                    let dc = t.coeff.d_lambda();
                    if !dc.is_zero() {
                        let mut t2 = t.clone();
                        t2.coeff = dc;
                        out.push(t2).unwrap();
                    }
                }
                Var::MuVec => {
                    if t.p == 0 {
                        continue;
                    }
                    let coeff = t.coeff.scale(&T::from_int(t.p as i64));
                    let term = match &t.structure {
                        Structure::Delta => SeriesTerm {
                            p: t.p - 1,
                            q: t.q,
                            r: t.r,
                            s: t.s,
                            free: t.free + 1,
                            coeff,
                            structure: Structure::Delta,
                        },
                        Structure::Explicit(core) => {
                            SeriesTerm::explicit(t.s, coeff, core.open_mu_slot())
                        }
                    };
                    out.push(term).unwrap();
                }
                Var::LamVec => {
                    if t.r == 0 {
                        continue;
                    }
                    let coeff = t.coeff.scale(&T::from_int(t.r as i64));
                    let term = match &t.structure {
                        Structure::Delta => SeriesTerm {
                            p: t.p,
                            q: t.q,
                            r: t.r - 1,
                            s: t.s,
                            free: t.free + 1,
                            coeff,
                            structure: Structure::Delta,
                        },
                        Structure::Explicit(core) => {
                            SeriesTerm::explicit(t.s, coeff, core.open_lam_slot())
                        }
                    };
                    out.push(term).unwrap();
                }
                Var::MuMat => {
                    if t.q == 0 {
                        continue;
                    }
                    let coeff = t.coeff.scale(&T::from_int(t.q as i64));
                    let term = match &t.structure {
                        Structure::Delta => SeriesTerm {
                            p: t.p,
                            q: t.q - 1,
                            r: t.r,
                            s: t.s,
                            free: t.free + 2,
                            coeff,
                            structure: Structure::Delta,
                        },
                        Structure::Explicit(core) => {
                            SeriesTerm::explicit(t.s, coeff, core.open_mat_pair())
                        }
                    };
                    out.push(term).unwrap();
                }
            }
        }
        out
    }

    /// Homogeneous part of deviation order n.
    pub fn grade(&self, n: usize) -> Self {
        let mut out = Self::new(self.max_order, self.free_rank);
        for t in &self.terms {
            if t.order() == n {
                out.push(t.clone()).unwrap();
            }
        }
        out
    }

    /// All grade parts up to and including max_order, indexed by grade.
    pub fn grade_split(&self) -> Vec<Self> {
        (0..=self.max_order).map(|n| self.grade(n)).collect()
    }

    pub fn mu_degree(&self) -> MuDegree {
        if self.terms.iter().any(|t| t.coeff.has_psi()) {
            return MuDegree::Transcendental;
        }
        self.terms
            .iter()
            .map(|t| t.s)
            .max()
            .map_or(MuDegree::NegInfinity, MuDegree::Finite)
    }

    pub fn evaluate(
        &self,
        at: &Multipliers<T>,
        real: &dyn PsiRealization<T>,
    ) -> Result<DenseTensor<T>, SeriesError> {
        let mut cache = DeltaCache::new();
        self.evaluate_cached(at, real, &mut cache)
    }

    pub fn evaluate_cached(
        &self,
        at: &Multipliers<T>,
        real: &dyn PsiRealization<T>,
        cache: &mut DeltaCache<T>,
    ) -> Result<DenseTensor<T>, SeriesError> {
        let mut out = DenseTensor::zero(self.free_rank);
        for t in &self.terms {
            let mut scalar = t.coeff.eval(&at.mu, &at.lam, real)?;
            for _ in 0..t.s {
                scalar = scalar * at.mu.clone();
            }
            if scalar.is_zero() {
                continue;
            }
            let structural = match &t.structure {
                Structure::Delta => {
                    let total = t.free + t.p + 2 * t.q + t.r;
                    if total == 0 {
                        DenseTensor::scalar(T::one())
                    } else {
                        let delta = cache.get(total / 2).clone();
                        let mut args: Vec<&SymTensor<T>> = Vec::new();
                        for _ in 0..t.p {
                            args.push(&at.mu_vec);
                        }
                        for _ in 0..t.q {
                            args.push(&at.mu_mat);
                        }
                        for _ in 0..t.r {
                            args.push(&at.lam_vec);
                        }
                        let contracted = contract(&delta, &args).expect("slot budget");
                        DenseTensor::from_sym(&contracted)
                    }
                }
                Structure::Explicit(core) => core.evaluate(at),
            };
            out.add_assign(&structural.scale(&scalar));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{ExpFamily, PolyFamily};
    use num_rational::BigRational;

    type Q = BigRational;
    type LS = LambdaScalar<Q>;

    fn q(n: i64, d: i64) -> Q {
        Q::from_ratio(n, d)
    }

    fn qv(a: i64, b: i64, c: i64) -> SymTensor<Q> {
        SymTensor::vector([q(a, 1), q(b, 1), q(c, 1)])
    }

    #[test]
    fn delta_term_trace() {
        let s = MomentSeries::make_delta_term(0, 1, 0, 0, LS::one(), 4).unwrap();
        let at = Multipliers::new(
            q(0, 1),
            SymTensor::zero(1),
            SymTensor::diag([q(1, 1), q(2, 1), q(3, 1)]),
            q(1, 1),
            SymTensor::zero(1),
        );
        let v = s.evaluate(&at, &PolyFamily).unwrap();
        assert_eq!(v.get(&[]), q(6, 1));
    }

    #[test]
    fn delta_term_parity_error() {
        assert_eq!(
            MomentSeries::<Q>::make_delta_term(1, 0, 0, 0, LS::one(), 4).unwrap_err(),
            SeriesError::Parity
        );
    }

    #[test]
    fn constant_term_is_psi0() {
        let s = MomentSeries::make_delta_term(0, 0, 0, 0, LS::psi(0), 4).unwrap();
        let at = Multipliers::equilibrium(q(1, 2), q(3, 2));
        let v = s.evaluate(&at, &PolyFamily).unwrap();
        // poly family: psi_0 = mu^2/2 * lam
        assert_eq!(v.get(&[]), q(1, 8) * q(3, 2) * q(1, 2).pow(0));
    }

    #[test]
    fn lambda_pair_contraction() {
        // coeff 1, r = 2: delta^{(j1 j2)} lam lam = lam.lam
        let s = MomentSeries::make_delta_term(0, 0, 2, 0, LS::one(), 4).unwrap();
        let at = Multipliers::new(
            q(0, 1),
            SymTensor::zero(1),
            SymTensor::zero(2),
            q(1, 1),
            qv(1, 2, 3),
        );
        let v = s.evaluate(&at, &PolyFamily).unwrap();
        assert_eq!(v.get(&[]), q(14, 1));
    }

    #[test]
    fn mu_pair_with_half_convention() {
        // (1/2!) delta^{(i1 i2)} mu mu at mu_vec = (1,1,0) -> 1
        let s = MomentSeries::make_delta_term(2, 0, 0, 0, LS::constant(q(1, 2)), 4).unwrap();
        let at = Multipliers::new(
            q(0, 1),
            qv(1, 1, 0),
            SymTensor::zero(2),
            q(1, 1),
            SymTensor::zero(1),
        );
        let v = s.evaluate(&at, &PolyFamily).unwrap();
        assert_eq!(v.get(&[]), q(1, 1));
    }

    #[test]
    fn empty_series_evaluates_to_zero() {
        let s = MomentSeries::<Q>::new(3, 0);
        let at = Multipliers::equilibrium(q(1, 1), q(1, 1));
        assert_eq!(s.evaluate(&at, &PolyFamily).unwrap().get(&[]), q(0, 1));
        assert_eq!(s.mu_degree(), MuDegree::NegInfinity);
    }

    #[test]
    fn differentiate_trace_term() {
        // d/dmu_ij of c * tr(mu_mat) = c * delta^{ij}
        let s = MomentSeries::make_delta_term(0, 1, 0, 0, LS::constant(q(7, 3)), 4).unwrap();
        let d = s.differentiate(Var::MuMat);
        assert_eq!(d.free_rank(), 2);
        let at = Multipliers::equilibrium(q(0, 1), q(1, 1));
        let v = d.evaluate(&at, &PolyFamily).unwrap();
        assert_eq!(v.get(&[1, 1]), q(7, 3));
        assert_eq!(v.get(&[1, 2]), q(0, 1));
    }

    #[test]
    fn differentiate_constant_is_empty() {
        let s = MomentSeries::make_delta_term(0, 0, 0, 0, LS::one(), 4).unwrap();
        assert!(s.differentiate(Var::MuVec).is_zero());
    }

    #[test]
    fn mixed_partials_commute_termwise() {
        // build a series with several structures and check d_mu_k d_mu_ij = d_mu_ij d_mu_k
        let mut s = MomentSeries::<Q>::new(6, 0);
        s.push(SeriesTerm::delta(2, 1, 2, 1, 0, LS::monomial(q(3, 2), -1, None)).unwrap())
            .unwrap();
        s.push(SeriesTerm::delta(1, 2, 1, 0, 0, LS::psi(1)).unwrap())
            .unwrap();
        let core = CoreTensor::from_pairings(
            0,
            1,
            1,
            3,
            &[
                (Slot::Mu(0), Slot::Lam(0)),
                (Slot::MatA(0), Slot::Lam(1)),
                (Slot::MatB(0), Slot::Lam(2)),
            ],
        );
        s.push(SeriesTerm::explicit(2, LS::lambda_pow(q(1, 1), 1), core))
            .unwrap();

        let ab = s.differentiate(Var::MuVec).differentiate(Var::MuMat);
        let ba = s.differentiate(Var::MuMat).differentiate(Var::MuVec);
        // same content up to free-slot ordering: (k,i,j) vs (i,j,k)
        let at = Multipliers::new(
            q(1, 3),
            qv(1, -1, 2),
            SymTensor::matrix([q(1, 2), q(1, 5), q(0, 1), q(-1, 3), q(2, 7), q(1, 1)]),
            q(5, 4),
            qv(-1, 1, 1),
        );
        let va = ab.evaluate(&at, &PolyFamily).unwrap();
        let vb = ba.evaluate(&at, &PolyFamily).unwrap();
        for idx in va.indices() {
            let rolled = [idx[1], idx[2], idx[0]];
            assert_eq!(va.get(&idx), vb.get(&rolled), "idx {idx:?}");
        }
    }

    #[test]
    fn scalar_derivatives_commute() {
        let mut s = MomentSeries::<Q>::new(4, 0);
        s.push(
            SeriesTerm::delta(
                0,
                1,
                0,
                2,
                0,
                LS::monomial(q(1, 1), -2, Some(crate::ring::PsiSymbol { n: 1, k: 0 })),
            )
            .unwrap(),
        )
        .unwrap();
        let ab = s.differentiate(Var::Mu).differentiate(Var::Lam);
        let ba = s.differentiate(Var::Lam).differentiate(Var::Mu);
        assert_eq!(ab, ba);
    }

    #[test]
    fn grade_partition_and_linearity() {
        let mut s = MomentSeries::<Q>::new(5, 0);
        s.push(SeriesTerm::delta(0, 1, 0, 0, 0, LS::one()).unwrap())
            .unwrap();
        s.push(SeriesTerm::delta(2, 1, 0, 1, 0, LS::constant(q(2, 1))).unwrap())
            .unwrap();
        s.push(SeriesTerm::delta(0, 0, 2, 0, 0, LS::constant(q(-1, 2))).unwrap())
            .unwrap();
        assert_eq!(s.grade(1).terms().len(), 1);
        assert!(s.grade(4).is_zero());
        // partition: sum of grades re-assembles the series
        let mut sum = MomentSeries::<Q>::new(5, 0);
        for g in s.grade_split() {
            sum = sum.add(&g).unwrap();
        }
        let diff = sum.add(&s.scale(&q(-1, 1))).unwrap();
        assert!(diff.is_zero());
    }

    #[test]
    fn mu_degree_reporting() {
        let mut s = MomentSeries::<Q>::new(5, 0);
        s.push(SeriesTerm::delta(0, 1, 0, 0, 0, LS::one()).unwrap())
            .unwrap();
        s.push(SeriesTerm::delta(0, 1, 0, 2, 0, LS::one()).unwrap())
            .unwrap();
        assert_eq!(s.mu_degree(), MuDegree::Finite(2));
        s.push(SeriesTerm::delta(0, 0, 2, 0, 0, LS::psi(0)).unwrap())
            .unwrap();
        assert_eq!(s.mu_degree(), MuDegree::Transcendental);
    }

    #[test]
    fn truncation_is_hard() {
        let mut s = MomentSeries::<Q>::new(2, 0);
        // order 3 term is silently dropped
        s.push(SeriesTerm::delta(2, 1, 0, 0, 0, LS::one()).unwrap())
            .unwrap();
        assert!(s.is_zero());
    }

    #[test]
    fn explicit_core_mu_lam_contraction() {
        // core for mu_i lam^i: value = mu_vec . lam_vec
        let core = CoreTensor::<Q>::from_pairings(0, 1, 0, 1, &[(Slot::Mu(0), Slot::Lam(0))]);
        let mut s = MomentSeries::new(4, 0);
        s.push(SeriesTerm::explicit(0, LS::one(), core)).unwrap();
        let at = Multipliers::new(
            q(0, 1),
            qv(1, 2, 3),
            SymTensor::zero(2),
            q(1, 1),
            qv(4, 5, 6),
        );
        assert_eq!(s.evaluate(&at, &PolyFamily).unwrap().get(&[]), q(32, 1));
    }

    #[test]
    fn explicit_core_mat_lam_lam() {
        // mu_{bc} lam^b lam^c
        let core = CoreTensor::<Q>::from_pairings(
            0,
            0,
            1,
            2,
            &[(Slot::MatA(0), Slot::Lam(0)), (Slot::MatB(0), Slot::Lam(1))],
        );
        let mut s = MomentSeries::new(4, 0);
        s.push(SeriesTerm::explicit(0, LS::one(), core)).unwrap();
        let m = SymTensor::matrix([q(1, 1), q(2, 1), q(0, 1), q(3, 1), q(-1, 1), q(2, 1)]);
        let at = Multipliers::new(q(0, 1), SymTensor::zero(1), m, q(1, 1), qv(1, 2, 3));
        // 1*1 + 2*(2*2) + 2*0 + 3*4 + 2*(-6) + 2*9 = 1+8+12-12+18 = 27
        assert_eq!(s.evaluate(&at, &PolyFamily).unwrap().get(&[]), q(27, 1));
    }

    #[test]
    fn explicit_mat_derivative_is_symmetric_pair() {
        // d/dmu_ij (mu_{bc} lam^b lam^c) = lam^i lam^j
        let core = CoreTensor::<Q>::from_pairings(
            0,
            0,
            1,
            2,
            &[(Slot::MatA(0), Slot::Lam(0)), (Slot::MatB(0), Slot::Lam(1))],
        );
        let mut s = MomentSeries::new(4, 0);
        s.push(SeriesTerm::explicit(0, LS::one(), core)).unwrap();
        let d = s.differentiate(Var::MuMat);
        let at = Multipliers::new(
            q(0, 1),
            SymTensor::zero(1),
            SymTensor::zero(2),
            q(1, 1),
            qv(1, 2, 3),
        );
        let v = d.evaluate(&at, &PolyFamily).unwrap();
        for a in 1..=3u8 {
            for b in 1..=3u8 {
                assert_eq!(v.get(&[a, b]), q(a as i64 * b as i64, 1), "{a},{b}");
            }
        }
    }

    #[test]
    fn contract_free_with_mu_matches_direct_core() {
        // lam^k core contracted with mu gives mu . lam
        let core = CoreTensor::<Q>::from_pairings(1, 0, 0, 1, &[(Slot::Free(0), Slot::Lam(0))]);
        let mut s = MomentSeries::new(4, 1);
        s.push(SeriesTerm::explicit(0, LS::one(), core)).unwrap();
        let c = s.contract_free_with_mu().unwrap();
        let at = Multipliers::new(
            q(0, 1),
            qv(2, -1, 5),
            SymTensor::zero(2),
            q(1, 1),
            qv(1, 2, 3),
        );
        assert_eq!(c.evaluate(&at, &PolyFamily).unwrap().get(&[]), q(15, 1));
    }

    #[test]
    fn finite_difference_oracle_all_variables() {
        // evaluate-then-differentiate matches central differences at random
        // nondegenerate points
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);

        let mut s = MomentSeries::<f64>::new(6, 0);
        s.push(
            SeriesTerm::delta(
                2,
                1,
                2,
                1,
                0,
                LambdaScalar::monomial(0.75, -1, Some(crate::ring::PsiSymbol { n: 1, k: 0 })),
            )
            .unwrap(),
        )
        .unwrap();
        s.push(SeriesTerm::delta(0, 2, 0, 2, 0, LambdaScalar::lambda_pow(1.5, 2)).unwrap())
            .unwrap();
        let core = CoreTensor::from_pairings(
            0,
            1,
            1,
            3,
            &[
                (Slot::Mu(0), Slot::Lam(0)),
                (Slot::MatA(0), Slot::Lam(1)),
                (Slot::MatB(0), Slot::Lam(2)),
            ],
        );
        s.push(SeriesTerm::explicit(1, LambdaScalar::constant(-0.4), core))
            .unwrap();

        let real = ExpFamily;
        let h = 1e-5;
        for _ in 0..20 {
            let lam = 1.0 + rng.gen_range(0.0..1.0);
            let mut sample = || -> f64 { rng.gen_range(-0.5..0.5) };
            let at = Multipliers::new(
                sample(),
                SymTensor::vector([sample(), sample(), sample()]),
                SymTensor::matrix([sample(), sample(), sample(), sample(), sample(), sample()]),
                lam,
                SymTensor::vector([sample(), sample(), sample()]),
            );
            let base = |at: &Multipliers<f64>| s.evaluate(at, &real).unwrap().get(&[]);

            // d/dmu
            let dmu = s
                .differentiate(Var::Mu)
                .evaluate(&at, &real)
                .unwrap()
                .get(&[]);
            let mut ap = at.clone();
            ap.mu += h;
            let mut am = at.clone();
            am.mu -= h;
            let fd = (base(&ap) - base(&am)) / (2.0 * h);
            assert!(
                (dmu - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "mu: {dmu} vs {fd}"
            );

            // d/dlambda
            let dlam = s
                .differentiate(Var::Lam)
                .evaluate(&at, &real)
                .unwrap()
                .get(&[]);
            let mut ap = at.clone();
            ap.lam += h;
            let mut am = at.clone();
            am.lam -= h;
            let fd = (base(&ap) - base(&am)) / (2.0 * h);
            assert!(
                (dlam - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "lam: {dlam} vs {fd}"
            );

            // d/dmu_i
            let dvec = s.differentiate(Var::MuVec).evaluate(&at, &real).unwrap();
            for i in 1..=3u8 {
                let mut ap = at.clone();
                ap.mu_vec.add_at(&[i], h).unwrap();
                let mut am = at.clone();
                am.mu_vec.add_at(&[i], -h).unwrap();
                let fd = (base(&ap) - base(&am)) / (2.0 * h);
                assert!(
                    (dvec.get(&[i]) - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "mu_vec {i}"
                );
            }

            // d/dlam_i
            let dlv = s.differentiate(Var::LamVec).evaluate(&at, &real).unwrap();
            for i in 1..=3u8 {
                let mut ap = at.clone();
                ap.lam_vec.add_at(&[i], h).unwrap();
                let mut am = at.clone();
                am.lam_vec.add_at(&[i], -h).unwrap();
                let fd = (base(&ap) - base(&am)) / (2.0 * h);
                assert!(
                    (dlv.get(&[i]) - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "lam_vec {i}"
                );
            }

            // d/dmu_ij: perturbing an off-diagonal component moves both
            // symmetric entries, so the finite difference sees 2*D^{ij}
            let dmat = s.differentiate(Var::MuMat).evaluate(&at, &real).unwrap();
            for (i, j) in [(1u8, 1u8), (1, 2), (2, 3), (3, 3)] {
                let mut ap = at.clone();
                ap.mu_mat.add_at(&[i, j], h).unwrap();
                let mut am = at.clone();
                am.mu_mat.add_at(&[i, j], -h).unwrap();
                let fd = (base(&ap) - base(&am)) / (2.0 * h);
                let expect = if i == j {
                    dmat.get(&[i, j])
                } else {
                    2.0 * dmat.get(&[i, j])
                };
                assert!(
                    (expect - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "mu_mat {i}{j}"
                );
            }
        }
    }
}
