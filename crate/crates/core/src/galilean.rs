//! The 14-component Galilean boost machinery: the block-triangular velocity
//! matrix, its group properties, the state and multiplier transformation
//! laws, and the boost-invariance residual for potentials.
//!
//! The 14 components pack the symmetric rank-2 block into its upper
//! triangle; matrix entries absorb the double counting of off-diagonal
//! components so the matrix law and the tensor law agree bit for bit.

use crate::dense::DenseTensor;
use crate::ring::PsiRealization;
use crate::scalar::Scalar;
use crate::series::{MomentSeries, Multipliers, SeriesError};
use crate::symtensor::SymTensor;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GalileanError {
    #[error("velocity undefined for a vacuum state (mass density component is zero)")]
    VacuumState,
}

/// Component ordering: [F, F_1..F_3, F_11, F_12, F_13, F_22, F_23, F_33,
/// G, G_1..G_3].
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector14<T> {
    pub f: T,
    pub f_i: [T; 3],
    /// Upper triangle (11, 12, 13, 22, 23, 33).
    pub f_ij: [T; 6],
    pub g: T,
    pub g_i: [T; 3],
}

pub const PAIR_INDEX: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

impl<T: Scalar> StateVector14<T> {
    pub fn zero() -> Self {
        StateVector14 {
            f: T::zero(),
            f_i: [T::zero(), T::zero(), T::zero()],
            f_ij: std::array::from_fn(|_| T::zero()),
            g: T::zero(),
            g_i: [T::zero(), T::zero(), T::zero()],
        }
    }

    pub fn from_components(c: [T; 14]) -> Self {
        let mut it = c.into_iter();
        let mut next = || it.next().unwrap();
        StateVector14 {
            f: next(),
            f_i: [next(), next(), next()],
            f_ij: [next(), next(), next(), next(), next(), next()],
            g: next(),
            g_i: [next(), next(), next()],
        }
    }

    pub fn components(&self) -> [T; 14] {
        let mut out: Vec<T> = Vec::with_capacity(14);
        out.push(self.f.clone());
        out.extend(self.f_i.iter().cloned());
        out.extend(self.f_ij.iter().cloned());
        out.push(self.g.clone());
        out.extend(self.g_i.iter().cloned());
        out.try_into().ok().unwrap()
    }

    fn f_mat(&self) -> [[T; 3]; 3] {
        let mut m: [[T; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| T::zero()));
        for (n, &(a, b)) in PAIR_INDEX.iter().enumerate() {
            m[a][b] = self.f_ij[n].clone();
            m[b][a] = self.f_ij[n].clone();
        }
        m
    }

    /// v^i = F^i / F; undefined for F = 0.
    pub fn velocity(&self) -> Result<Velocity<T>, GalileanError> {
        if self.f.is_zero() {
            return Err(GalileanError::VacuumState);
        }
        Ok(Velocity(std::array::from_fn(|i| {
            self.f_i[i].clone() / self.f.clone()
        })))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Velocity<T>(pub [T; 3]);

impl<T: Scalar> Velocity<T> {
    pub fn zero() -> Self {
        Velocity([T::zero(), T::zero(), T::zero()])
    }

    pub fn neg(&self) -> Self {
        Velocity(std::array::from_fn(|i| -self.0[i].clone()))
    }

    pub fn add(&self, other: &Self) -> Self {
        Velocity(std::array::from_fn(|i| {
            self.0[i].clone() + other.0[i].clone()
        }))
    }

    pub fn norm2(&self) -> T {
        self.0
            .iter()
            .fold(T::zero(), |acc, v| acc + v.clone() * v.clone())
    }
}

/// Apply the block-triangular boost to an unpacked state.
fn boost_state<T: Scalar>(v: &Velocity<T>, s: &StateVector14<T>) -> StateVector14<T> {
    let vv = v.norm2();
    let fm = s.f_mat();
    let v_dot_f: T = (0..3).fold(T::zero(), |acc, i| acc + v.0[i].clone() * s.f_i[i].clone());
    let fv: [T; 3] = std::array::from_fn(|i| {
        (0..3).fold(T::zero(), |acc, b| acc + fm[i][b].clone() * v.0[b].clone())
    });

    let f = s.f.clone();
    let f_i: [T; 3] = std::array::from_fn(|i| v.0[i].clone() * s.f.clone() + s.f_i[i].clone());
    let f_ij: [T; 6] = std::array::from_fn(|n| {
        let (a, b) = PAIR_INDEX[n];
        v.0[a].clone() * v.0[b].clone() * s.f.clone()
            + v.0[a].clone() * s.f_i[b].clone()
            + v.0[b].clone() * s.f_i[a].clone()
            + fm[a][b].clone()
    });
    let g = vv.clone() * s.f.clone() + T::from_int(2) * v_dot_f.clone() + s.g.clone();
    let g_i: [T; 3] = std::array::from_fn(|i| {
        vv.clone() * v.0[i].clone() * s.f.clone()
            + vv.clone() * s.f_i[i].clone()
            + T::from_int(2) * v.0[i].clone() * v_dot_f.clone()
            + T::from_int(2) * fv[i].clone()
            + v.0[i].clone() * s.g.clone()
            + s.g_i[i].clone()
    });
    StateVector14 {
        f,
        f_i,
        f_ij,
        g,
        g_i,
    }
}

/// 14x14 boost matrix in the packed component basis, exact in the scalar
/// type. X(0) is the identity; the block structure is lower triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct XMatrix<T> {
    m: Vec<Vec<T>>,
}

impl<T: Scalar> XMatrix<T> {
    pub fn entry(&self, row: usize, col: usize) -> &T {
        &self.m[row][col]
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn apply(&self, s: &StateVector14<T>) -> StateVector14<T> {
        let c = s.components();
        let mut out = [(); 14].map(|_| T::zero());
        for (i, row) in self.m.iter().enumerate() {
            let mut acc = T::zero();
            for (j, x) in row.iter().enumerate() {
                if !x.is_zero() && !c[j].is_zero() {
                    acc = acc + x.clone() * c[j].clone();
                }
            }
            out[i] = acc;
        }
        StateVector14::from_components(out)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut m = vec![vec![T::zero(); 14]; 14];
        for i in 0..14 {
            for k in 0..14 {
                if self.m[i][k].is_zero() {
                    continue;
                }
                for j in 0..14 {
                    if other.m[k][j].is_zero() {
                        continue;
                    }
                    m[i][j] = m[i][j].clone() + self.m[i][k].clone() * other.m[k][j].clone();
                }
            }
        }
        XMatrix { m }
    }

    pub fn identity() -> Self {
        let mut m = vec![vec![T::zero(); 14]; 14];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = T::one();
        }
        XMatrix { m }
    }

    pub fn is_identity(&self) -> bool {
        self.m.iter().enumerate().all(|(i, row)| {
            row.iter()
                .enumerate()
                .all(|(j, x)| if i == j { *x == T::one() } else { x.is_zero() })
        })
    }
}

/// Build the boost matrix by pushing basis states through the tensor law;
/// packing double counts are absorbed into the columns, which is what makes
/// off-diagonal matrix-block columns carry a factor 2 in the rows that
/// contract them.
pub fn build_x<T: Scalar>(v: &Velocity<T>) -> XMatrix<T> {
    let mut m = vec![vec![T::zero(); 14]; 14];
    for col in 0..14 {
        let mut basis = [(); 14].map(|_| T::zero());
        basis[col] = T::one();
        let out = boost_state(v, &StateVector14::from_components(basis)).components();
        for (row, val) in out.into_iter().enumerate() {
            m[row][col] = val;
        }
    }
    XMatrix { m }
}

/// Transform a state and its flux triple to the frame moving with -v_tau:
/// the density block maps through the matrix, the flux block picks up the
/// convective shift.
pub fn transform_state<T: Scalar>(
    s: &StateVector14<T>,
    flux: &[StateVector14<T>; 3],
    v_tau: &Velocity<T>,
) -> (StateVector14<T>, [StateVector14<T>; 3]) {
    let x = build_x(v_tau);
    let s_abs = x.apply(s);
    let flux_abs: [StateVector14<T>; 3] = std::array::from_fn(|k| {
        let mut f = x.apply(&flux[k]);
        let shift = s_abs.components();
        let mut comps = f.components();
        for (i, c) in comps.iter_mut().enumerate() {
            *c = c.clone() + v_tau.0[k].clone() * shift[i].clone();
        }
        f = StateVector14::from_components(comps);
        f
    });
    (s_abs, flux_abs)
}

/// Explicit multiplier transformation (relative frame in, absolute frame
/// out): the five closed formulas.
pub fn transform_multipliers<T: Scalar>(m: &Multipliers<T>, v_tau: &Velocity<T>) -> Multipliers<T> {
    let vv = v_tau.norm2();
    let two = T::from_int(2);
    let muv = |i: usize| m.mu_vec.get(&[i as u8 + 1]);
    let lamv = |i: usize| m.lam_vec.get(&[i as u8 + 1]);
    let mumat = |i: usize, j: usize| m.mu_mat.get(&[i as u8 + 1, j as u8 + 1]);

    let mut mu_a = m.mu.clone();
    for i in 0..3 {
        mu_a = mu_a - muv(i) * v_tau.0[i].clone();
        for j in 0..3 {
            mu_a = mu_a + mumat(i, j) * v_tau.0[i].clone() * v_tau.0[j].clone();
        }
        mu_a = mu_a - lamv(i) * v_tau.0[i].clone() * vv.clone();
    }
    mu_a = mu_a + m.lam.clone() * vv.clone();

    let mut mu_vec = SymTensor::zero(1);
    for h in 0..3 {
        let mut v = muv(h);
        for i in 0..3 {
            v = v - two.clone() * mumat(i, h) * v_tau.0[i].clone();
            v = v + lamv(i)
                * (vv.clone() * if i == h { T::one() } else { T::zero() }
                    + two.clone() * v_tau.0[i].clone() * v_tau.0[h].clone());
        }
        v = v - two.clone() * m.lam.clone() * v_tau.0[h].clone();
        mu_vec.set(&[h as u8 + 1], v).unwrap();
    }

    let mut mu_mat = SymTensor::zero(2);
    for h in 0..3 {
        for k in h..3 {
            let v = mumat(h, k) - lamv(h) * v_tau.0[k].clone() - lamv(k) * v_tau.0[h].clone();
            mu_mat.set(&[h as u8 + 1, k as u8 + 1], v).unwrap();
        }
    }

    let mut lam_a = m.lam.clone();
    for i in 0..3 {
        lam_a = lam_a - lamv(i) * v_tau.0[i].clone();
    }

    Multipliers::new(mu_a, mu_vec, mu_mat, lam_a, m.lam_vec.clone())
}

/// Multiplier transformation through the matrix route: the multiplier
/// covector contracts the boost of the opposite velocity in the unpacked
/// tensor pairing.
pub fn transform_multipliers_matrix<T: Scalar>(
    m: &Multipliers<T>,
    v_tau: &Velocity<T>,
) -> Multipliers<T> {
    let xneg = v_tau.neg();
    // pairing <mu, S> = mu F + mu_i F^i + mu_ij F^ij (full 9 sum)
    //                 + lam G + lam_i G^i
    let pair = |s: &StateVector14<T>| -> T {
        let mut acc = m.mu.clone() * s.f.clone() + m.lam.clone() * s.g.clone();
        for i in 0..3 {
            acc = acc + m.mu_vec.get(&[i as u8 + 1]) * s.f_i[i].clone();
            acc = acc + m.lam_vec.get(&[i as u8 + 1]) * s.g_i[i].clone();
        }
        let fm = s.f_mat();
        for i in 0..3 {
            for j in 0..3 {
                acc = acc + m.mu_mat.get(&[i as u8 + 1, j as u8 + 1]) * fm[i][j].clone();
            }
        }
        acc
    };
    // basis states: unit mass, unit momentum components, unit symmetric
    // matrix components (both orders at once for off-diagonals handled by
    // the packing), unit energy, unit energy flux
    let comp = |basis: StateVector14<T>| -> T { pair(&boost_state(&xneg, &basis)) };

    let out_mu;
    let mut out_muv = SymTensor::zero(1);
    let mut out_mat = SymTensor::zero(2);
    let out_lam;
    let mut out_lamv = SymTensor::zero(1);

    {
        let mut b = StateVector14::zero();
        b.f = T::one();
        out_mu = comp(b);
    }
    for i in 0..3 {
        let mut b = StateVector14::zero();
        b.f_i[i] = T::one();
        out_muv.set(&[i as u8 + 1], comp(b)).unwrap();
    }
    for (n, &(a, bq)) in PAIR_INDEX.iter().enumerate() {
        let mut b = StateVector14::zero();
        b.f_ij[n] = T::one();
        let val = comp(b);
        // the unpacked unit matrix state has both symmetric entries set, and
        // the pairing sums all nine components, so off-diagonal basis states
        // return twice the multiplier component
        let val = if a == bq { val } else { val / T::from_int(2) };
        out_mat.set(&[a as u8 + 1, bq as u8 + 1], val).unwrap();
    }
    {
        let mut b = StateVector14::zero();
        b.g = T::one();
        out_lam = comp(b);
    }
    for i in 0..3 {
        let mut b = StateVector14::zero();
        b.g_i[i] = T::one();
        out_lamv.set(&[i as u8 + 1], comp(b)).unwrap();
    }
    Multipliers::new(out_mu, out_muv, out_mat, out_lam, out_lamv)
}

/// Boost-invariance residuals of a potential at one point; thin wrapper over
/// the graded residual assembly.
pub fn galilean_residual<T: Scalar>(
    h: &MomentSeries<T>,
    order: usize,
    at: &Multipliers<T>,
    real: &dyn PsiRealization<T>,
) -> Result<(DenseTensor<T>, DenseTensor<T>), SeriesError> {
    crate::verify::galilean_residual_at(h, order, at, real)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use num_traits::Zero;
    use rand::Rng;
    use rand::SeedableRng;

    type Q = BigRational;

    fn q(n: i64, d: i64) -> Q {
        Q::from_ratio(n, d)
    }

    fn qvel(a: i64, b: i64, c: i64) -> Velocity<Q> {
        Velocity([q(a, 1), q(b, 1), q(c, 1)])
    }

    fn rand_vel(rng: &mut impl Rng) -> Velocity<Q> {
        Velocity(std::array::from_fn(|_| {
            q(rng.gen_range(-12..=12), rng.gen_range(1..=6))
        }))
    }

    fn rand_state(rng: &mut impl Rng) -> StateVector14<Q> {
        let mut c = [(); 14].map(|_| Q::zero());
        for x in c.iter_mut() {
            *x = q(rng.gen_range(-9..=9), rng.gen_range(1..=4));
        }
        StateVector14::from_components(c)
    }

    fn rand_multipliers(rng: &mut impl Rng) -> Multipliers<Q> {
        let mut s = || q(rng.gen_range(-9..=9), rng.gen_range(1..=5));
        Multipliers::new(
            s(),
            SymTensor::vector([s(), s(), s()]),
            SymTensor::matrix([s(), s(), s(), s(), s(), s()]),
            s(),
            SymTensor::vector([s(), s(), s()]),
        )
    }

    #[test]
    fn x_at_zero_velocity_is_identity() {
        assert!(build_x(&Velocity::<Q>::zero()).is_identity());
    }

    #[test]
    fn x_entries_match_block_formulas() {
        // v = (1,0,0): G row F column carries v^2, G_1 row F_1 column
        // carries v^2 + 2 v^1 v_1 = 3
        let x = build_x(&qvel(1, 0, 0));
        assert_eq!(*x.entry(10, 0), q(1, 1));
        assert_eq!(*x.entry(11, 1), q(3, 1));

        // v = (1,2,0): F_11 row F column = v1 v1 = 1, F_12 row F column = 2
        let x = build_x(&qvel(1, 2, 0));
        assert_eq!(*x.entry(4, 0), q(1, 1));
        assert_eq!(*x.entry(5, 0), q(2, 1));
    }

    #[test]
    fn inverse_by_opposite_velocity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let v = rand_vel(&mut rng);
            let prod = build_x(&v.neg()).mul(&build_x(&v));
            assert!(prod.is_identity(), "v = {v:?}");
        }
    }

    #[test]
    fn composition_law() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let u = rand_vel(&mut rng);
            let w = rand_vel(&mut rng);
            let lhs = build_x(&u).mul(&build_x(&w));
            let rhs = build_x(&u.add(&w));
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn state_round_trip_and_composition() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        let s = rand_state(&mut rng);
        let flux: [StateVector14<Q>; 3] = std::array::from_fn(|_| rand_state(&mut rng));
        let v = rand_vel(&mut rng);

        let (s1, f1) = transform_state(&s, &flux, &v);
        let (s2, f2) = transform_state(&s1, &f1, &v.neg());
        assert_eq!(s2, s);
        assert_eq!(f2, flux);

        let u = rand_vel(&mut rng);
        let w = rand_vel(&mut rng);
        let (sa, fa) = transform_state(&s, &flux, &u);
        let (sab, fab) = transform_state(&sa, &fa, &w);
        let (sc, fc) = transform_state(&s, &flux, &u.add(&w));
        assert_eq!(sab, sc);
        assert_eq!(fab, fc);
    }

    #[test]
    fn zero_velocity_transform_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(45);
        let m = rand_multipliers(&mut rng);
        let out = transform_multipliers(&m, &Velocity::zero());
        assert_eq!(out, m);
    }

    #[test]
    fn explicit_formulas_match_matrix_route() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(46);
        for _ in 0..20 {
            let m = rand_multipliers(&mut rng);
            let v = rand_vel(&mut rng);
            let a = transform_multipliers(&m, &v);
            let b = transform_multipliers_matrix(&m, &v);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn multiplier_transform_examples() {
        // off-diagonal matrix multiplier picks up -(lam_1 v_2 + lam_2 v_1)
        let m = Multipliers::new(
            q(0, 1),
            SymTensor::zero(1),
            SymTensor::zero(2),
            q(1, 1),
            SymTensor::vector([q(0, 1), q(1, 1), q(0, 1)]),
        );
        let out = transform_multipliers(&m, &qvel(1, 0, 0));
        assert_eq!(out.mu_mat.get(&[1, 2]), q(-1, 1));
        // lam_vec never changes
        assert_eq!(out.lam_vec, m.lam_vec);
    }

    #[test]
    fn derivative_of_transform_matches_closed_forms() {
        // finite-difference d/dv at v = 0 against the closed forms
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(47);
        let mut s = || rng.gen_range(-0.9..0.9);
        let m = Multipliers::<f64>::new(
            s(),
            SymTensor::vector([s(), s(), s()]),
            SymTensor::matrix([s(), s(), s(), s(), s(), s()]),
            1.0 + s().abs(),
            SymTensor::vector([s(), s(), s()]),
        );
        let h = 1e-5;
        for i in 0..3usize {
            let mut vp = Velocity::<f64>::zero();
            vp.0[i] = h;
            let mut vm = Velocity::<f64>::zero();
            vm.0[i] = -h;
            let p = transform_multipliers(&m, &vp);
            let n = transform_multipliers(&m, &vm);

            let fd_mu = (p.mu - n.mu) / (2.0 * h);
            let exact = -m.mu_vec.get(&[i as u8 + 1]);
            assert!((fd_mu - exact).abs() < 1e-6);

            for hh in 0..3usize {
                let fd =
                    (p.mu_vec.get(&[hh as u8 + 1]) - n.mu_vec.get(&[hh as u8 + 1])) / (2.0 * h);
                let mut exact = -2.0 * m.mu_mat.get(&[i as u8 + 1, hh as u8 + 1]);
                if i == hh {
                    exact -= 2.0 * m.lam;
                }
                assert!((fd - exact).abs() < 1e-6, "mu_vec {hh} wrt v{i}");
            }

            for a in 0..3usize {
                for b in a..3usize {
                    let fd = (p.mu_mat.get(&[a as u8 + 1, b as u8 + 1])
                        - n.mu_mat.get(&[a as u8 + 1, b as u8 + 1]))
                        / (2.0 * h);
                    let mut exact = 0.0;
                    if b == i {
                        exact -= m.lam_vec.get(&[a as u8 + 1]);
                    }
                    if a == i {
                        exact -= m.lam_vec.get(&[b as u8 + 1]);
                    }
                    assert!((fd - exact).abs() < 1e-6, "mu_mat {a}{b} wrt v{i}");
                }
            }

            let fd_lam = (p.lam - n.lam) / (2.0 * h);
            assert!((fd_lam + m.lam_vec.get(&[i as u8 + 1])).abs() < 1e-6);

            for hh in 0..3usize {
                let fd =
                    (p.lam_vec.get(&[hh as u8 + 1]) - n.lam_vec.get(&[hh as u8 + 1])) / (2.0 * h);
                assert!(fd.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn velocity_extraction_guards_vacuum() {
        let s = StateVector14::<Q>::zero();
        assert_eq!(s.velocity().unwrap_err(), GalileanError::VacuumState);
        let mut s = StateVector14::<Q>::zero();
        s.f = q(2, 1);
        s.f_i = [q(1, 1), q(0, 1), q(3, 1)];
        let v = s.velocity().unwrap();
        assert_eq!(v.0[0], q(1, 2));
        assert_eq!(v.0[2], q(3, 2));
    }
}
