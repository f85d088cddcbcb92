//! Builders for the explicit potentials of the closure hierarchy: the
//! particular solution `H1`, the matrix potential `H*0`, the vector
//! potential (free index k) and the assembled deviation `Delta H`, together
//! with residual verification of every condition family they must satisfy.

use crate::recurrence::{ThetaKey, ThetaTable};
use crate::ring::LambdaScalar;
use crate::scalar::{double_factorial_odd, factorial, Scalar};
use crate::series::{CoreTensor, MomentSeries, SeriesError, SeriesTerm, Slot, Var};

/// Monomial c * G0^a * G1^b * G2^d in the three scalar invariants
/// G0 = lam.lam, G1 = G0 tr(mu) - mu.lam.lam, G2 = the quadratic combination.
#[derive(Debug, Clone, PartialEq)]
pub struct FMonomial<T> {
    pub g0: u32,
    pub g1: u32,
    pub g2: u32,
    pub coeff: T,
}

/// Polynomial in (G0, G1, G2): the concrete realization of the arbitrary
/// scalar function multiplying lam^k in the vector potential. Polynomial
/// form is what the series builders need; values and partial derivatives
/// are available for the closed-form flux evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FPoly<T> {
    pub terms: Vec<FMonomial<T>>,
}

impl<T: Scalar> FPoly<T> {
    pub fn zero() -> Self {
        FPoly { terms: Vec::new() }
    }

    pub fn constant(c: T) -> Self {
        FPoly {
            terms: vec![FMonomial {
                g0: 0,
                g1: 0,
                g2: 0,
                coeff: c,
            }],
        }
    }

    pub fn g1() -> Self {
        FPoly {
            terms: vec![FMonomial {
                g0: 0,
                g1: 1,
                g2: 0,
                coeff: T::one(),
            }],
        }
    }

    pub fn g1_squared() -> Self {
        FPoly {
            terms: vec![FMonomial {
                g0: 0,
                g1: 2,
                g2: 0,
                coeff: T::one(),
            }],
        }
    }

    pub fn g2() -> Self {
        FPoly {
            terms: vec![FMonomial {
                g0: 0,
                g1: 0,
                g2: 1,
                coeff: T::one(),
            }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|m| m.coeff.is_zero())
    }

    pub fn value(&self, g0: &T, g1: &T, g2: &T) -> T {
        let mut acc = T::zero();
        for m in &self.terms {
            let mut v = m.coeff.clone();
            for _ in 0..m.g0 {
                v = v * g0.clone();
            }
            for _ in 0..m.g1 {
                v = v * g1.clone();
            }
            for _ in 0..m.g2 {
                v = v * g2.clone();
            }
            acc = acc + v;
        }
        acc
    }

    /// Partial derivative with respect to argument `arg` (0, 1 or 2).
    pub fn partial(&self, arg: usize) -> Self {
        let mut terms = Vec::new();
        for m in &self.terms {
            let e = match arg {
                0 => m.g0,
                1 => m.g1,
                _ => m.g2,
            };
            if e == 0 {
                continue;
            }
            let mut d = m.clone();
            d.coeff = d.coeff * T::from_int(e as i64);
            match arg {
                0 => d.g0 -= 1,
                1 => d.g1 -= 1,
                _ => d.g2 -= 1,
            }
            terms.push(d);
        }
        FPoly { terms }
    }
}

/// Free data of the general deviation solution: a verified theta table, the
/// beta_r constants (r >= 1; the r = 0 constant is forced to zero and has no
/// slot here), the even-r expansion constants of the matrix potential, the
/// arbitrary function F and the unconstrained tail series.
#[derive(Debug, Clone)]
pub struct SolutionParams<T> {
    pub theta: ThetaTable<T>,
    /// beta[i] is the constant of index r = i + 1.
    pub beta: Vec<T>,
    /// psi_const[i] is the constant of even index r = 2 i.
    pub psi_const: Vec<T>,
    pub f: FPoly<T>,
    /// Arbitrary series in (mu_ab, lambda, lambda_c); unconstrained by the
    /// conditions because the conditions only see mu- and mu_k-derivatives.
    pub tth0: MomentSeries<T>,
}

impl<T: Scalar> SolutionParams<T> {
    pub fn zero(max_order: usize) -> Self {
        SolutionParams {
            theta: ThetaTable::zero(max_order),
            beta: Vec::new(),
            psi_const: Vec::new(),
            f: FPoly::zero(),
            tth0: MomentSeries::new(max_order, 0),
        }
    }

    fn beta_at(&self, r: usize) -> T {
        assert!(r >= 1);
        self.beta.get(r - 1).cloned().unwrap_or_else(T::zero)
    }

    fn max_beta_r(&self) -> usize {
        self.beta.len()
    }
}

/// The particular solution: for every p, q >= 0 and even p + r with
/// p + q + r within the truncation, the coefficient is
///   (1/p!q!r!) [(p+2q+r+1)!!/(p+2q+r+1)]
///     d^{p+r}/dlam^r dmu^p [ (-1/(2 lam))^(q+(p+r)/2) psi_((p+r)/2) ]
/// times the fully symmetrized delta structure contracted with the
/// deviation variables. The mu-derivatives act as psi index shifts.
pub fn build_h1<T: Scalar>(max_order: usize) -> MomentSeries<T> {
    let mut out = MomentSeries::new(max_order, 0);
    for p in 0..=max_order {
        for q in 0..=max_order - p {
            for r in 0..=max_order - p - q {
                if (p + r) % 2 != 0 {
                    continue;
                }
                let m = (p + r) / 2;
                let pow = q + m;
                // (-1/2)^pow lam^(-pow) psi_m
                let mut base_coeff = T::one();
                for _ in 0..pow {
                    base_coeff = base_coeff * T::from_ratio(-1, 2);
                }
                let mut coeff = LambdaScalar::monomial(
                    base_coeff,
                    -(pow as i32),
                    Some(crate::ring::PsiSymbol { n: m as i32, k: 0 }),
                );
                for _ in 0..p {
                    coeff = coeff.d_mu();
                }
                for _ in 0..r {
                    coeff = coeff.d_lambda();
                }
                let n_total = (p + 2 * q + r + 1) as i64;
                let dfac: T = double_factorial_odd::<T>(n_total) / T::from_int(n_total);
                let fact: T = factorial::<T>(p) * factorial::<T>(q) * factorial::<T>(r);
                coeff = coeff.scale(&(dfac / fact));
                out.push(SeriesTerm::delta(p, q, r, 0, 0, coeff).unwrap())
                    .unwrap();
            }
        }
    }
    out
}

/// Assembler for structure cores built from Kronecker pairings of invariant
/// factors.
struct CoreBuilder {
    free: usize,
    p: usize,
    q: usize,
    r: usize,
    pairs: Vec<(Slot, Slot)>,
}

impl CoreBuilder {
    fn new(free: usize) -> Self {
        CoreBuilder {
            free,
            p: 0,
            q: 0,
            r: 0,
            pairs: Vec::new(),
        }
    }

    fn lam(&mut self) -> Slot {
        let s = Slot::Lam(self.r);
        self.r += 1;
        s
    }

    fn mu(&mut self) -> Slot {
        let s = Slot::Mu(self.p);
        self.p += 1;
        s
    }

    fn mat(&mut self) -> (Slot, Slot) {
        let i = self.q;
        self.q += 1;
        (Slot::MatA(i), Slot::MatB(i))
    }

    /// lam.lam
    fn g0(&mut self) {
        let a = self.lam();
        let b = self.lam();
        self.pairs.push((a, b));
    }

    /// tr(mu_mat)
    fn tr_mu(&mut self) {
        let (a, b) = self.mat();
        self.pairs.push((a, b));
    }

    /// mu_{bc} lam^b lam^c
    fn mu_ll(&mut self) {
        let (a, b) = self.mat();
        let l1 = self.lam();
        let l2 = self.lam();
        self.pairs.push((a, l1));
        self.pairs.push((b, l2));
    }

    /// mu_{bc} mu^{bc}
    fn mu_mu(&mut self) {
        let (a1, b1) = self.mat();
        let (a2, b2) = self.mat();
        self.pairs.push((a1, a2));
        self.pairs.push((b1, b2));
    }

    /// mu_{bd} mu_{dc} lam^b lam^c
    fn mu_mu_ll(&mut self) {
        let (a1, b1) = self.mat();
        let (a2, b2) = self.mat();
        let l1 = self.lam();
        let l2 = self.lam();
        self.pairs.push((a1, l1));
        self.pairs.push((b1, a2));
        self.pairs.push((b2, l2));
    }

    /// mu_vec . lam_vec
    fn mu_dot_lam(&mut self) {
        let m = self.mu();
        let l = self.lam();
        self.pairs.push((m, l));
    }

    /// lam^(free slot f)
    fn lam_free(&mut self, f: usize) {
        let l = self.lam();
        self.pairs.push((Slot::Free(f), l));
    }

    /// mu^{f d} lam_d on free slot f
    fn mu_free_lam(&mut self, f: usize) {
        let (a, b) = self.mat();
        let l = self.lam();
        self.pairs.push((Slot::Free(f), a));
        self.pairs.push((b, l));
    }

    fn order(&self) -> usize {
        self.p + self.q + self.r
    }

    fn build<T: Scalar>(self) -> CoreTensor<T> {
        CoreTensor::from_pairings(self.free, self.p, self.q, self.r, &self.pairs)
    }
}

/// The matrix potential: the even-lambda expansion with the psi constants,
/// minus the pure-trace beta tail, plus the mu_ik lam^i lam^k beta tail
/// (both tails start at r = 1; the r = 0 constant is excluded).
pub fn build_hstar0<T: Scalar>(params: &SolutionParams<T>, max_order: usize) -> MomentSeries<T> {
    let mut out = MomentSeries::new(max_order, 0);
    for (i, c) in params.psi_const.iter().enumerate() {
        let r = 2 * i;
        if r + 2 > max_order || c.is_zero() {
            continue;
        }
        let coeff = LambdaScalar::constant(c.clone() / factorial::<T>(r + 2));
        out.push(SeriesTerm::delta(0, 0, r + 2, 0, 0, coeff).unwrap())
            .unwrap();
    }
    for r in 1..=params.max_beta_r() {
        let beta = params.beta_at(r);
        if beta.is_zero() {
            continue;
        }
        let w = T::from_int((2 * r + 3) as i64) / factorial::<T>(r);
        // -2 lam (2r+3)/r! beta_r (lam.lam)^(r+1): fully symmetric
        if 2 * r + 2 <= max_order {
            let coeff = LambdaScalar::lambda_pow(T::from_int(-2) * w.clone() * beta.clone(), 1);
            out.push(SeriesTerm::delta(0, 0, 2 * r + 2, 0, 0, coeff).unwrap())
                .unwrap();
        }
        // (2r+3)/r! beta_r (lam.lam)^r mu_{ik} lam^i lam^k
        if 2 * r + 3 <= max_order {
            let mut b = CoreBuilder::new(0);
            b.mu_ll();
            for _ in 0..r {
                b.g0();
            }
            let coeff = LambdaScalar::constant(w * beta);
            out.push(SeriesTerm::explicit(0, coeff, b.build())).unwrap();
        }
    }
    out
}

/// Atoms for the expansion of F-monomials into pairing cores.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Atom {
    G0,
    TrMu,
    MuLL,
    MuMu,
    MuMuLL,
}

impl Atom {
    fn order(self) -> usize {
        match self {
            Atom::G0 => 2,
            Atom::TrMu => 1,
            Atom::MuLL => 3,
            Atom::MuMu => 2,
            Atom::MuMuLL => 4,
        }
    }

    fn apply(self, b: &mut CoreBuilder) {
        match self {
            Atom::G0 => b.g0(),
            Atom::TrMu => b.tr_mu(),
            Atom::MuLL => b.mu_ll(),
            Atom::MuMu => b.mu_mu(),
            Atom::MuMuLL => b.mu_mu_ll(),
        }
    }
}

fn mul_expansions<T: Scalar>(a: Vec<(Vec<Atom>, T)>, b: &[(Vec<Atom>, T)]) -> Vec<(Vec<Atom>, T)> {
    let mut out = Vec::new();
    for (atoms_a, ca) in &a {
        for (atoms_b, cb) in b {
            let mut atoms = atoms_a.clone();
            atoms.extend_from_slice(atoms_b);
            out.push((atoms, ca.clone() * cb.clone()));
        }
    }
    out
}

fn g1_expansion<T: Scalar>() -> Vec<(Vec<Atom>, T)> {
    vec![
        (vec![Atom::G0, Atom::TrMu], T::one()),
        (vec![Atom::MuLL], -T::one()),
    ]
}

fn g2_expansion<T: Scalar>() -> Vec<(Vec<Atom>, T)> {
    vec![
        (vec![Atom::G0, Atom::MuMu], T::one()),
        (vec![Atom::MuMuLL], T::from_int(-2)),
        (vec![Atom::TrMu, Atom::MuLL], T::from_int(2)),
        (vec![Atom::G0, Atom::TrMu, Atom::TrMu], -T::one()),
    ]
}

/// Expand lam^k * F(G0, G1, G2) into pairing-core terms and push them.
fn push_lam_f_terms<T: Scalar>(
    out: &mut MomentSeries<T>,
    f: &FPoly<T>,
    max_order: usize,
) -> Result<(), SeriesError> {
    for m in &f.terms {
        let mut expansion: Vec<(Vec<Atom>, T)> = vec![(Vec::new(), m.coeff.clone())];
        for _ in 0..m.g0 {
            expansion = mul_expansions(expansion, &[(vec![Atom::G0], T::one())]);
        }
        for _ in 0..m.g1 {
            expansion = mul_expansions(expansion, &g1_expansion());
        }
        for _ in 0..m.g2 {
            expansion = mul_expansions(expansion, &g2_expansion());
        }
        for (atoms, c) in expansion {
            let order: usize = 1 + atoms.iter().map(|a| a.order()).sum::<usize>();
            if order > max_order || c.is_zero() {
                continue;
            }
            let mut b = CoreBuilder::new(1);
            b.lam_free(0);
            for a in &atoms {
                a.apply(&mut b);
            }
            out.push(SeriesTerm::explicit(
                0,
                LambdaScalar::constant(c),
                b.build(),
            ))?;
        }
    }
    Ok(())
}

/// The vector potential (one free index). Assembles the arbitrary-function
/// head, the beta_1 block, the psi-constant block, the lambda_k-derivative
/// block and the three r >= 2 beta tails.
pub fn build_tthk<T: Scalar>(params: &SolutionParams<T>, max_order: usize) -> MomentSeries<T> {
    let mut out = MomentSeries::new(max_order, 1);

    // lam^k F(G0, G1, G2)
    push_lam_f_terms(&mut out, &params.f, max_order).unwrap();

    // -(5/4) beta_1 { 4 (mu ll) mu^{kd} lam_d
    //                 + lam^k [ (mu.mu) G0 + 2 mu mu ll ] }
    let b1 = params.beta_at(1);
    if !b1.is_zero() {
        let c54 = T::from_ratio(-5, 4) * b1;
        if 5 <= max_order {
            let mut b = CoreBuilder::new(1);
            b.mu_free_lam(0);
            b.mu_ll();
            out.push(SeriesTerm::explicit(
                0,
                LambdaScalar::constant(c54.clone() * T::from_int(4)),
                b.build(),
            ))
            .unwrap();

            let mut b = CoreBuilder::new(1);
            b.lam_free(0);
            b.mu_mu();
            b.g0();
            out.push(SeriesTerm::explicit(
                0,
                LambdaScalar::constant(c54.clone()),
                b.build(),
            ))
            .unwrap();

            let mut b = CoreBuilder::new(1);
            b.lam_free(0);
            b.mu_mu_ll();
            out.push(SeriesTerm::explicit(
                0,
                LambdaScalar::constant(c54 * T::from_int(2)),
                b.build(),
            ))
            .unwrap();
        }
    }

    // psi-constant block: for even r,
    //   (1/(r+1)!) [ lam delta^{(k j_1..j_{r+1})}
    //                - (1/2)(r+3)/(r+2) delta^{(k i j j_1..j_{r+1})} mu_{ij} ]
    //   psi_c(r) lam_{j_1}..lam_{j_{r+1}}
    for (i, c) in params.psi_const.iter().enumerate() {
        let r = 2 * i;
        if c.is_zero() {
            continue;
        }
        let inv_fact = T::one() / factorial::<T>(r + 1);
        if r < max_order {
            let coeff = LambdaScalar::lambda_pow(c.clone() * inv_fact.clone(), 1);
            out.push(SeriesTerm::delta(0, 0, r + 1, 0, 1, coeff).unwrap())
                .unwrap();
        }
        if r + 2 <= max_order {
            let w = T::from_ratio(-1, 2) * T::from_ratio(r as i64 + 3, r as i64 + 2);
            let coeff = LambdaScalar::constant(c.clone() * inv_fact * w);
            out.push(SeriesTerm::delta(0, 1, r + 1, 0, 1, coeff).unwrap())
                .unwrap();
        }
    }

    // d/dlam_k [ sum_{r>=1} (2r+3)/r! beta_r (lam.lam)^r
    //            ( lam mu_ll - lam^2 lam.lam ) ]
    let mut inner = MomentSeries::<T>::new(max_order + 1, 0);
    for r in 1..=params.max_beta_r() {
        let beta = params.beta_at(r);
        if beta.is_zero() {
            continue;
        }
        let w = T::from_int((2 * r + 3) as i64) / factorial::<T>(r);
        if 2 * r + 3 <= max_order + 1 {
            let mut b = CoreBuilder::new(0);
            b.mu_ll();
            for _ in 0..r {
                b.g0();
            }
            let coeff = LambdaScalar::lambda_pow(w.clone() * beta.clone(), 1);
            inner
                .push(SeriesTerm::explicit(0, coeff, b.build()))
                .unwrap();
        }
        if 2 * r + 2 <= max_order + 1 {
            let coeff = LambdaScalar::lambda_pow(-(w * beta), 2);
            inner
                .push(SeriesTerm::delta(0, 0, 2 * r + 2, 0, 0, coeff).unwrap())
                .unwrap();
        }
    }
    let dblock = inner.differentiate(Var::LamVec);
    for t in dblock.terms() {
        out.push(t.clone()).unwrap();
    }

    // the three r >= 2 tails
    for r in 2..=params.max_beta_r() {
        let beta = params.beta_at(r);
        if beta.is_zero() {
            continue;
        }
        let w = T::from_int((2 * r + 3) as i64) / factorial::<T>(r);

        // - mu^{kd} lam_d (mu ll) (lam.lam)^{r-1}
        {
            let mut b = CoreBuilder::new(1);
            b.mu_free_lam(0);
            b.mu_ll();
            for _ in 0..r - 1 {
                b.g0();
            }
            if b.order() <= max_order {
                out.push(SeriesTerm::explicit(
                    0,
                    LambdaScalar::constant(-(w.clone() * beta.clone())),
                    b.build(),
                ))
                .unwrap();
            }
        }

        // -(1/4)(2r-3) lam^k (mu ll)^2 (lam.lam)^{r-2}
        {
            let mut b = CoreBuilder::new(1);
            b.lam_free(0);
            b.mu_ll();
            b.mu_ll();
            for _ in 0..r - 2 {
                b.g0();
            }
            if b.order() <= max_order {
                let c = T::from_ratio(-1, 4)
                    * T::from_int((2 * r - 3) as i64)
                    * w.clone()
                    * beta.clone();
                out.push(SeriesTerm::explicit(
                    0,
                    LambdaScalar::constant(c),
                    b.build(),
                ))
                .unwrap();
            }
        }

        // - lam^k (mu mu ll) (lam.lam)^{r-1}
        {
            let mut b = CoreBuilder::new(1);
            b.lam_free(0);
            b.mu_mu_ll();
            for _ in 0..r - 1 {
                b.g0();
            }
            if b.order() <= max_order {
                out.push(SeriesTerm::explicit(
                    0,
                    LambdaScalar::constant(-(w * beta)),
                    b.build(),
                ))
                .unwrap();
            }
        }
    }

    out
}

/// The assembled deviation potential: theta sum, mu times the matrix
/// potential, the integration block from the second mu_i antiderivative,
/// the quadratic mu_i mu_j beta block, mu_i times the vector potential, and
/// the unconstrained tail.
pub fn build_delta_h<T: Scalar>(params: &SolutionParams<T>, max_order: usize) -> MomentSeries<T> {
    let mut out = MomentSeries::new(max_order, 0);

    // theta sum: (1/p!q!r!(s+1)!) theta_{p,q,r,s} mu^{s+1} delta^(..) vars
    for p in 0..=max_order {
        for q in 0..=max_order - p {
            for r in 0..=max_order - p - q {
                if (p + r) % 2 != 0 {
                    continue;
                }
                for s in 0..=max_order {
                    let Some(theta) = params.theta.get(ThetaKey { p, q, r, s }) else {
                        continue;
                    };
                    if theta.is_zero() {
                        continue;
                    }
                    let fact: T = factorial::<T>(p)
                        * factorial::<T>(q)
                        * factorial::<T>(r)
                        * factorial::<T>(s + 1);
                    let coeff = theta.scale(&(T::one() / fact));
                    out.push(SeriesTerm::delta(p, q, r, s + 1, 0, coeff).unwrap())
                        .unwrap();
                }
            }
        }
    }

    // mu * H*0
    let hstar = build_hstar0(params, max_order);
    for t in hstar.mul_mu().terms() {
        out.push(t.clone()).unwrap();
    }

    // (1/(p+2)!q!r!) theta_{p,q+1,r,0} delta^(..) with p+2 mu_i factors;
    // identically zero for any table satisfying the normalizations, kept for
    // tables that do not.
    for p in 0..=max_order {
        for q in 0..=max_order - p {
            for r in 0..=max_order - p - q {
                if (p + r) % 2 != 0 {
                    continue;
                }
                let Some(theta) = params.theta.get(ThetaKey {
                    p,
                    q: q + 1,
                    r,
                    s: 0,
                }) else {
                    continue;
                };
                if theta.is_zero() {
                    continue;
                }
                let fact: T = factorial::<T>(p + 2) * factorial::<T>(q) * factorial::<T>(r);
                let coeff = theta.scale(&(T::one() / fact));
                out.push(SeriesTerm::delta(p + 2, q, r, 0, 0, coeff).unwrap())
                    .unwrap();
            }
        }
    }

    // (1/2) mu_i mu_j sum_{r>=1} (2r+3)/r! (lam.lam)^r beta_r lam^i lam^j
    for r in 1..=params.max_beta_r() {
        let beta = params.beta_at(r);
        if beta.is_zero() || 2 + 2 + 2 * r > 2 * max_order {
            continue;
        }
        let mut b = CoreBuilder::new(0);
        b.mu_dot_lam();
        b.mu_dot_lam();
        for _ in 0..r {
            b.g0();
        }
        if b.order() <= max_order {
            let c =
                T::from_ratio(1, 2) * T::from_int((2 * r + 3) as i64) / factorial::<T>(r) * beta;
            out.push(SeriesTerm::explicit(
                0,
                LambdaScalar::constant(c),
                b.build(),
            ))
            .unwrap();
        }
    }

    // mu_i * (vector potential)^i
    let tthk = build_tthk(params, max_order);
    for t in tthk.contract_free_with_mu().unwrap().terms() {
        out.push(t.clone()).unwrap();
    }

    // unconstrained tail
    for t in params.tth0.terms() {
        out.push(t.clone()).unwrap();
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{PolyFamily, PsiSymbol};
    use crate::series::Multipliers;
    use crate::symtensor::SymTensor;
    use num_rational::BigRational;

    type Q = BigRational;
    type LS = LambdaScalar<Q>;

    fn q(n: i64, d: i64) -> Q {
        Q::from_ratio(n, d)
    }

    #[test]
    fn h1_grade_zero_is_psi0() {
        let h1 = build_h1::<Q>(4);
        let g0 = h1.grade(0);
        assert_eq!(g0.terms().len(), 1);
        let t = &g0.terms()[0];
        assert_eq!(t.coeff, LS::psi(0));
        assert_eq!((t.p, t.q, t.r, t.s), (0, 0, 0, 0));
    }

    #[test]
    fn h1_trace_term_coefficient() {
        // (p,q,r) = (0,1,0): -(1/(2 lam)) psi_0 with the trace structure
        let h1 = build_h1::<Q>(4);
        let t = h1
            .terms()
            .iter()
            .find(|t| (t.p, t.q, t.r) == (0, 1, 0))
            .unwrap();
        let expect = LS::monomial(q(-1, 2), -1, Some(PsiSymbol { n: 0, k: 0 }));
        assert_eq!(t.coeff, expect);
    }

    #[test]
    fn h1_mixed_term_coefficient() {
        // (p,q,r) = (1,0,1): psi_0/(2 lam^2) - psi_0^(1)/(2 lam)
        let h1 = build_h1::<Q>(4);
        let t = h1
            .terms()
            .iter()
            .find(|t| (t.p, t.q, t.r) == (1, 0, 1))
            .unwrap();
        let mut expect = LS::monomial(q(1, 2), -2, Some(PsiSymbol { n: 0, k: 0 }));
        expect = expect.add(&LS::monomial(q(-1, 2), -1, Some(PsiSymbol { n: 0, k: 1 })));
        assert_eq!(t.coeff, expect);
    }

    #[test]
    fn h1_grade_three_signatures() {
        // enumeration oracle: grade 3 holds exactly the (p,q,r) with
        // p+q+r = 3 and p+r even
        let h1 = build_h1::<Q>(4);
        let mut expect = Vec::new();
        for p in 0..=3usize {
            for qd in 0..=3 - p {
                let r = 3 - p - qd;
                if (p + r) % 2 == 0 {
                    expect.push((p, qd, r));
                }
            }
        }
        let mut got: Vec<_> = h1
            .grade(3)
            .terms()
            .iter()
            .map(|t| (t.p, t.q, t.r))
            .collect();
        got.sort();
        expect.sort();
        assert_eq!(got, expect);
    }

    #[test]
    fn hstar0_zero_params() {
        let params = SolutionParams::<Q>::zero(4);
        assert!(build_hstar0(&params, 4).is_zero());
        assert!(build_tthk(&params, 4).is_zero());
        assert!(build_delta_h(&params, 4).is_zero());
    }

    #[test]
    fn hstar0_vanishes_at_equilibrium_matrix_state() {
        let mut params = SolutionParams::<Q>::zero(6);
        params.beta = vec![q(1, 1), q(-2, 3)];
        params.psi_const = vec![q(2, 1), q(1, 5)];
        let h = build_hstar0(&params, 6);
        // mu_mat = 0, lam_vec = 0 kills every term for any parameter choice
        let at = Multipliers::equilibrium(q(1, 1), q(3, 2));
        let v = h.evaluate(&at, &PolyFamily).unwrap();
        assert_eq!(v.get(&[]), q(0, 1));
    }

    #[test]
    fn hstar0_single_psi_term() {
        let mut params = SolutionParams::<Q>::zero(4);
        params.psi_const = vec![q(2, 1)];
        let h = build_hstar0(&params, 4);
        let at = Multipliers::new(
            q(0, 1),
            SymTensor::zero(1),
            SymTensor::zero(2),
            q(1, 1),
            SymTensor::vector([q(1, 1), q(0, 1), q(0, 1)]),
        );
        // (2/2!) delta^{(j1 j2)} lam lam = 1
        assert_eq!(h.evaluate(&at, &PolyFamily).unwrap().get(&[]), q(1, 1));
    }

    #[test]
    fn tthk_f_equals_g1_head() {
        // F = G1, betas and psi constants zero:
        // result = lam^k (G0 tr mu - mu_ll)
        let mut params = SolutionParams::<Q>::zero(6);
        params.f = FPoly::g1();
        let h = build_tthk(&params, 6);
        let at = Multipliers::new(
            q(0, 1),
            SymTensor::zero(1),
            SymTensor::matrix([q(1, 1), q(2, 1), q(0, 1), q(-1, 1), q(1, 1), q(3, 1)]),
            q(2, 1),
            SymTensor::vector([q(1, 1), q(-1, 1), q(2, 1)]),
        );
        let v = h.evaluate(&at, &PolyFamily).unwrap();
        let g0 = q(1 + 1 + 4, 1);
        let tr = q(3, 1);
        // mu_ll = sum mu_{bc} lam^b lam^c
        let mut mull = q(0, 1);
        for b in 1..=3u8 {
            for c in 1..=3u8 {
                mull += at.mu_mat.get(&[b, c]) * at.lam_vec.get(&[b]) * at.lam_vec.get(&[c]);
            }
        }
        let f = g0.clone() * tr - mull;
        for k in 1..=3u8 {
            assert_eq!(v.get(&[k]), at.lam_vec.get(&[k]) * f.clone(), "k={k}");
        }
    }

    #[test]
    fn delta_h_equilibrium_value_is_zero() {
        let mut params = SolutionParams::<Q>::zero(6);
        params.beta = vec![q(1, 1), q(1, 2)];
        params.psi_const = vec![q(3, 1), q(-1, 1)];
        params.f = FPoly::g1();
        let dh = build_delta_h(&params, 6);
        let at = Multipliers::equilibrium(q(2, 3), q(7, 4));
        assert_eq!(dh.evaluate(&at, &PolyFamily).unwrap().get(&[]), q(0, 1));
    }

    #[test]
    fn delta_h_mu_derivative_reproduces_matrix_potential() {
        // d(Delta H)/dmu collapses to H*0 plus the theta sum (zero for a
        // normalized table): the mu_i-carrying blocks and the tail are
        // mu-independent and drop out
        let mut params = SolutionParams::<Q>::zero(6);
        params.beta = vec![q(2, 3), q(-1, 2)];
        params.psi_const = vec![q(1, 1), q(3, 7)];
        params.f = FPoly::g1();
        let dh = build_delta_h(&params, 6);
        let h0 = build_hstar0(&params, 6);
        let d = dh.differentiate(Var::Mu);
        for seed in 0..4u64 {
            let at = crate::verify::sample_points::<Q>(1, 60 + seed, false)
                .pop()
                .unwrap();
            let a = d.evaluate(&at, &PolyFamily).unwrap();
            let b = h0.evaluate(&at, &PolyFamily).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn delta_h_mu_degree_bound() {
        let mut params = SolutionParams::<Q>::zero(5);
        params.beta = vec![q(2, 1)];
        params.psi_const = vec![q(1, 1), q(1, 3)];
        params.f = FPoly::g1();
        let dh = build_delta_h(&params, 5);
        for n in 1..=5usize {
            let deg = dh.grade(n).mu_degree();
            assert!(deg.at_most(n.saturating_sub(1)), "grade {n}: {deg:?}");
        }
    }
}
