//! Extraction of the closure fluxes from a generating potential, the
//! closed-form non-symmetric flux remainders (an independent route used as
//! an oracle against the series route), the order-by-order antisymmetry
//! profile, the obstruction forcing the excluded expansion constant to
//! zero, and the thermodynamic integration-constant check.

use crate::dense::DenseTensor;
use crate::ring::PsiRealization;
use crate::scalar::{factorial, Scalar};
use crate::series::{DeltaCache, MomentSeries, Multipliers, SeriesError, Var};
use crate::solutions::SolutionParams;
use thiserror::Error;

/// Graded flux tensors and potentials extracted from a generating function.
#[derive(Debug, Clone)]
pub struct ClosureTensors<T> {
    /// Per deviation order: the rank-3 flux, symmetric in its last two
    /// indices by construction.
    pub f_kij: Vec<DenseTensor<T>>,
    /// Per deviation order: the rank-2 flux.
    pub g_ki: Vec<DenseTensor<T>>,
    pub h_prime: T,
    pub h_prime_k: DenseTensor<T>,
    /// Cross-check of the symmetry-block relation between the two
    /// potentials (structurally zero for any series).
    pub mixed_partial_residual: f64,
}

impl<T: Scalar> ClosureTensors<T> {
    /// Antisymmetric parts over the first index pair, per order.
    pub fn antisym_parts(&self) -> Vec<(DenseTensor<T>, DenseTensor<T>)> {
        self.f_kij
            .iter()
            .zip(self.g_ki.iter())
            .map(|(f, g)| (f.antisym(0, 1), g.antisym(0, 1)))
            .collect()
    }
}

/// F^kij = d2 H / dmu_k dmu_ij and G^ki = d2 H / dmu_k dlam_i, evaluated
/// grade by grade, together with the two potentials h' and h'^k.
pub fn flux_tensors<T: Scalar>(
    h: &MomentSeries<T>,
    order: usize,
    at: &Multipliers<T>,
    real: &dyn PsiRealization<T>,
) -> Result<ClosureTensors<T>, SeriesError> {
    if h.max_order() < order + 2 {
        return Err(SeriesError::Headroom {
            have: h.max_order(),
            order,
            need: order + 2,
        });
    }
    let mut cache = DeltaCache::new();
    let h_k = h.differentiate(Var::MuVec);
    let f_series = h_k.differentiate(Var::MuMat);
    let g_series = h_k.differentiate(Var::LamVec);
    let mut f_kij = Vec::with_capacity(order + 1);
    let mut g_ki = Vec::with_capacity(order + 1);
    for n in 0..=order {
        f_kij.push(f_series.grade(n).evaluate_cached(at, real, &mut cache)?);
        g_ki.push(g_series.grade(n).evaluate_cached(at, real, &mut cache)?);
    }
    let h_mu = h.differentiate(Var::Mu);
    let h_prime = h_mu.evaluate_cached(at, real, &mut cache)?.get(&[]);
    let h_prime_k = h_k.evaluate_cached(at, real, &mut cache)?;
    let a = h_mu
        .differentiate(Var::MuVec)
        .evaluate_cached(at, real, &mut cache)?;
    let b = h_k
        .differentiate(Var::Mu)
        .evaluate_cached(at, real, &mut cache)?;
    let mixed_partial_residual = a.sub(&b).max_abs();
    Ok(ClosureTensors {
        f_kij,
        g_ki,
        h_prime,
        h_prime_k,
        mixed_partial_residual,
    })
}

/// Per-order max-norm of the antisymmetric first-index-pair parts of both
/// flux tensors.
pub fn antisym_profile<T: Scalar>(t: &ClosureTensors<T>) -> Vec<(f64, f64)> {
    t.antisym_parts()
        .iter()
        .map(|(f, g)| (f.max_abs(), g.max_abs()))
        .collect()
}

struct PointData<T> {
    lam: T,
    l: [T; 3],
    mv: [T; 3],
    g0: T,
    a: T,
    tr: T,
    mm: T,
    ml: [T; 3],
    mml: [T; 3],
    g1: T,
    g2: T,
    m: [[T; 3]; 3],
}

fn point_data<T: Scalar>(at: &Multipliers<T>) -> PointData<T> {
    let l: [T; 3] = std::array::from_fn(|i| at.lam_vec.get(&[i as u8 + 1]));
    let mv: [T; 3] = std::array::from_fn(|i| at.mu_vec.get(&[i as u8 + 1]));
    let m: [[T; 3]; 3] = std::array::from_fn(|i| {
        std::array::from_fn(|j| at.mu_mat.get(&[i as u8 + 1, j as u8 + 1]))
    });
    let dot = |a: &[T; 3], b: &[T; 3]| -> T {
        a.iter()
            .zip(b.iter())
            .fold(T::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
    };
    let g0 = dot(&l, &l);
    let ml: [T; 3] = std::array::from_fn(|i| dot(&m[i], &l));
    let mml: [T; 3] = std::array::from_fn(|i| dot(&m[i], &ml));
    let a = dot(&l, &ml);
    let tr = m[0][0].clone() + m[1][1].clone() + m[2][2].clone();
    let mut mm = T::zero();
    for row in &m {
        for x in row {
            mm = mm + x.clone() * x.clone();
        }
    }
    let mumull = dot(&ml, &ml);
    let g1 = g0.clone() * tr.clone() - a.clone();
    let g2 = g0.clone() * mm.clone() - T::from_int(2) * mumull
        + T::from_int(2) * tr.clone() * a.clone()
        - g0.clone() * tr.clone() * tr.clone();
    PointData {
        lam: at.lam.clone(),
        l,
        mv,
        g0,
        a,
        tr,
        mm,
        ml,
        mml,
        g1,
        g2,
        m,
    }
}

fn pow<T: Scalar>(x: &T, n: usize) -> T {
    let mut acc = T::one();
    for _ in 0..n {
        acc = acc * x.clone();
    }
    acc
}

/// Closed-form evaluation of the non-symmetric flux remainders, graded by
/// deviation order. This route never touches the series engine: everything
/// is direct tensor arithmetic at the point, so it serves as an independent
/// oracle for `flux_tensors` applied to the assembled deviation potential.
pub fn delta_flux<T: Scalar>(
    params: &SolutionParams<T>,
    order: usize,
    at: &Multipliers<T>,
) -> (Vec<DenseTensor<T>>, Vec<DenseTensor<T>>) {
    let d = point_data(at);
    let mut f_out: Vec<DenseTensor<T>> = (0..=order).map(|_| DenseTensor::zero(3)).collect();
    let mut g_out: Vec<DenseTensor<T>> = (0..=order).map(|_| DenseTensor::zero(2)).collect();
    let two = T::from_int(2);

    let add_f = |buckets: &mut Vec<DenseTensor<T>>, o: usize, t: DenseTensor<T>| {
        if o <= order {
            buckets[o].add_assign(&t);
        }
    };

    // dG1/dmu_ij and dG2/dmu_ij as rank-2 tensors, dG1/dlam_i, dG2/dlam_i
    let dg1_dm = DenseTensor::from_fn(2, |idx| {
        let (i, j) = (idx[0] as usize - 1, idx[1] as usize - 1);
        let delta = if i == j { T::one() } else { T::zero() };
        d.g0.clone() * delta - d.l[i].clone() * d.l[j].clone()
    });
    let dg2_dm = DenseTensor::from_fn(2, |idx| {
        let (i, j) = (idx[0] as usize - 1, idx[1] as usize - 1);
        let delta = if i == j { T::one() } else { T::zero() };
        two.clone() * d.g0.clone() * d.m[i][j].clone()
            - two.clone() * (d.l[i].clone() * d.ml[j].clone() + d.l[j].clone() * d.ml[i].clone())
            + two.clone() * delta.clone() * d.a.clone()
            + two.clone() * d.tr.clone() * d.l[i].clone() * d.l[j].clone()
            - two.clone() * d.g0.clone() * d.tr.clone() * delta
    });
    let dg1_dl = DenseTensor::from_fn(1, |idx| {
        let i = idx[0] as usize - 1;
        two.clone() * d.l[i].clone() * d.tr.clone() - two.clone() * d.ml[i].clone()
    });
    let dg2_dl = DenseTensor::from_fn(1, |idx| {
        let i = idx[0] as usize - 1;
        two.clone() * d.l[i].clone() * d.mm.clone() - T::from_int(4) * d.mml[i].clone()
            + T::from_int(4) * d.tr.clone() * d.ml[i].clone()
            - two.clone() * d.tr.clone() * d.tr.clone() * d.l[i].clone()
    });
    let lam_k = DenseTensor::from_fn(1, |idx| d.l[idx[0] as usize - 1].clone());
    let mv_i = DenseTensor::from_fn(1, |idx| d.mv[idx[0] as usize - 1].clone());
    let ml_i = DenseTensor::from_fn(1, |idx| d.ml[idx[0] as usize - 1].clone());
    let mml_i = DenseTensor::from_fn(1, |idx| d.mml[idx[0] as usize - 1].clone());

    // lam^k dF/dmu_ij, graded through the monomials of the partials
    for (arg, dg, extra) in [(1usize, &dg1_dm, 2usize), (2, &dg2_dm, 3)] {
        for m in &params.f.partial(arg).terms {
            let o = 2 * m.g0 as usize + 3 * m.g1 as usize + 4 * m.g2 as usize + 1 + extra;
            if o > order {
                continue;
            }
            let v = m.coeff.clone()
                * pow(&d.g0, m.g0 as usize)
                * pow(&d.g1, m.g1 as usize)
                * pow(&d.g2, m.g2 as usize);
            add_f(&mut f_out, o, lam_k.outer(dg).scale(&v));
        }
    }

    // delta^{k(i} lam^{j)} building block
    let sym_dl = DenseTensor::from_fn(3, |idx| {
        let (k, i, j) = (idx[0], idx[1], idx[2]);
        let mut v = T::zero();
        if k == i {
            v = v + d.l[j as usize - 1].clone();
        }
        if k == j {
            v = v + d.l[i as usize - 1].clone();
        }
        v / two.clone()
    });

    let beta = |r: usize| -> T { params.beta.get(r - 1).cloned().unwrap_or_else(T::zero) };
    let n_beta = params.beta.len();

    // beta_1 block of the rank-3 remainder (order 4)
    let b1 = beta(1);
    if !b1.is_zero() && 4 <= order {
        let c = T::from_ratio(-5, 4) * b1.clone();
        let t_a = sym_dl.scale(&(T::from_int(4) * d.a.clone()));
        let t_b = DenseTensor::from_fn(3, |idx| {
            let (k, i, j) = (
                idx[0] as usize - 1,
                idx[1] as usize - 1,
                idx[2] as usize - 1,
            );
            d.l[k].clone()
                * (two.clone() * d.m[i][j].clone() * d.g0.clone()
                    - two.clone()
                        * (d.l[i].clone() * d.ml[j].clone() + d.l[j].clone() * d.ml[i].clone()))
        });
        let mut t = t_a;
        t.add_assign(&t_b);
        add_f(&mut f_out, 4, t.scale(&c));
    }

    for r in 1..=n_beta {
        let br = beta(r);
        if br.is_zero() {
            continue;
        }
        let w = T::from_int((2 * r + 3) as i64) / factorial::<T>(r);
        // + 2 (2r+3)/r! beta_r G0^r lam delta^{k(i} lam^{j)}
        let o = 2 * r + 1;
        if o <= order {
            let c = two.clone() * w.clone() * br.clone() * pow(&d.g0, r) * d.lam.clone();
            add_f(&mut f_out, o, sym_dl.scale(&c));
        }
        if r >= 2 {
            // - delta^{k(i} lam^{j)} (mu ll) (2r+3)/r! beta_r G0^{r-1}
            let o = 2 * r + 2;
            if o <= order {
                let c = -(w.clone() * br.clone() * pow(&d.g0, r - 1) * d.a.clone());
                add_f(&mut f_out, o, sym_dl.scale(&c));
            }
        }

        // rank-2 remainder pieces
        // (2r+3)/r! G0^r beta_r lam^k mu^i
        let o = 2 * r + 2;
        if o <= order {
            let c = w.clone() * br.clone() * pow(&d.g0, r);
            g_out[o].add_assign(&lam_k.outer(&mv_i).scale(&c));
        }
        if r >= 2 {
            let o = 2 * r + 2;
            if o <= order {
                // -2 lam^i (M lam)^k (mu ll) (2r+3)(r-1)/r! G0^{r-2}
                let c = -(two.clone()
                    * w.clone()
                    * T::from_int((r - 1) as i64)
                    * br.clone()
                    * pow(&d.g0, r - 2)
                    * d.a.clone());
                g_out[o].add_assign(&ml_i.outer(&lam_k).scale(&c));
                // - lam^k (M lam)^i (mu ll) (2r-3)(2r+3)/r! G0^{r-2}
                let c = -(T::from_int((2 * r - 3) as i64)
                    * w.clone()
                    * br.clone()
                    * pow(&d.g0, r - 2)
                    * d.a.clone());
                g_out[o].add_assign(&lam_k.outer(&ml_i).scale(&c));
                // -2 lam^k (M M lam)^i (2r+3)/r! G0^{r-1}
                let c = -(two.clone() * w.clone() * br.clone() * pow(&d.g0, r - 1));
                g_out[o].add_assign(&lam_k.outer(&mml_i).scale(&c));
            }
        }
    }

    // lam^k dF/dlam_i through the monomials of the partials
    for (arg, dg, extra) in [(1usize, &dg1_dl, 2usize), (2, &dg2_dl, 3)] {
        for m in &params.f.partial(arg).terms {
            let o = 2 * m.g0 as usize + 3 * m.g1 as usize + 4 * m.g2 as usize + 1 + extra;
            if o > order {
                continue;
            }
            let v = m.coeff.clone()
                * pow(&d.g0, m.g0 as usize)
                * pow(&d.g1, m.g1 as usize)
                * pow(&d.g2, m.g2 as usize);
            g_out[o].add_assign(&lam_k.outer(dg).scale(&v));
        }
    }

    // -5 beta_1 lam^k (M M lam)^i (order 4)
    if !b1.is_zero() && 4 <= order {
        let c = T::from_int(-5) * b1;
        g_out[4].add_assign(&lam_k.outer(&mml_i).scale(&c));
    }

    (f_out, g_out)
}

/// Candidate for the quadratic part of the residual vector potential: eight
/// polynomials in G0 with a bounded degree, and the excluded constant.
#[derive(Debug, Clone)]
pub struct Beta0Ansatz<T> {
    pub degree: usize,
    pub beta0: T,
    /// Coefficient lists of f_1..f_8 in ascending powers of G0; empty means
    /// the zero polynomial.
    pub f: [Vec<T>; 8],
}

impl<T: Scalar> Beta0Ansatz<T> {
    pub fn homogeneous(degree: usize, beta0: T) -> Self {
        Beta0Ansatz {
            degree,
            beta0,
            f: std::array::from_fn(|_| Vec::new()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Beta0Report {
    pub solvable: bool,
    pub f1_forced_zero: bool,
    pub f2_forced_zero: bool,
    pub free_parameters: usize,
    pub candidate_residual_zero: bool,
    pub candidate_skew_holds: bool,
}

/// Reduced row echelon form of an augmented system; returns pivot columns.
fn rref<T: Scalar>(m: &mut [Vec<T>]) -> Vec<usize> {
    let rows = m.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = m[0].len() - 1;
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        let Some(pr) = (row..rows).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(row, pr);
        let inv = T::one() / m[row][col].clone();
        for x in m[row].iter_mut() {
            *x = x.clone() * inv.clone();
        }
        for r in 0..rows {
            if r != row && !m[r][col].is_zero() {
                let factor = m[r][col].clone();
                for c in 0..=cols {
                    let sub = factor.clone() * m[row][c].clone();
                    m[r][c] = m[r][c].clone() - sub;
                }
            }
        }
        pivots.push(col);
        row += 1;
        if row == rows {
            break;
        }
    }
    pivots
}

/// Assemble and solve the coefficient-matching constraints of the
/// first-order-in-matrix balance on the quadratic ansatz. The system is
/// solvable exactly when the excluded constant vanishes; in the solvable
/// case the first two polynomials are forced to zero and the seventh is
/// pinned by the skew relation.
pub fn check_beta0<T: Scalar>(a: &Beta0Ansatz<T>) -> Beta0Report {
    let dd = a.degree + 1; // coefficients per polynomial
    let nvar = 8 * dd;
    let var = |i: usize, d: usize| i * dd + d; // f_{i+1} coefficient of G0^d
    let mut rows: Vec<Vec<T>> = Vec::new();
    let push_row = |terms: &[(usize, usize, i64)], rhs: T, rows: &mut Vec<Vec<T>>| {
        let mut row = vec![T::zero(); nvar + 1];
        let mut any = false;
        for &(i, d, c) in terms {
            if d < dd {
                row[var(i, d)] = row[var(i, d)].clone() + T::from_int(c);
                any = true;
            }
        }
        row[nvar] = rhs.clone();
        if any || !rhs.is_zero() {
            rows.push(row);
        }
    };

    let three_beta0 = T::from_int(3) * a.beta0.clone();
    let twelve_beta0 = T::from_int(12) * a.beta0.clone();
    for e in 0..=a.degree + 1 {
        // f1 = 0 and f2 = 0
        push_row(&[(0, e, 1)], T::zero(), &mut rows);
        push_row(&[(1, e, 1)], T::zero(), &mut rows);
        // f3 G0 + 3 beta0 = 0
        let rhs = if e == 0 {
            -three_beta0.clone()
        } else {
            T::zero()
        };
        if e == 0 {
            push_row(&[], rhs, &mut rows);
        } else {
            push_row(&[(2, e - 1, 1)], rhs, &mut rows);
        }
        // 2 f1 + 4 f2 + 4 f3 G0 + 12 beta0 = 0
        let rhs = if e == 0 {
            -twelve_beta0.clone()
        } else {
            T::zero()
        };
        if e == 0 {
            push_row(&[(0, 0, 2), (1, 0, 4)], rhs, &mut rows);
        } else {
            push_row(&[(0, e, 2), (1, e, 4), (2, e - 1, 4)], rhs, &mut rows);
        }
        // f2 + 4 f4 + 2 f6 G0 = 0
        if e == 0 {
            push_row(&[(1, 0, 1), (3, 0, 4)], T::zero(), &mut rows);
        } else {
            push_row(&[(1, e, 1), (3, e, 4), (5, e - 1, 2)], T::zero(), &mut rows);
        }
        // f3 + 4 f5 G0 + 2 f6 + 2 f8 = 0
        if e == 0 {
            push_row(&[(2, 0, 1), (5, 0, 2), (7, 0, 2)], T::zero(), &mut rows);
        } else {
            push_row(
                &[(2, e, 1), (4, e - 1, 4), (5, e, 2), (7, e, 2)],
                T::zero(),
                &mut rows,
            );
        }
        // skew relation: 4 f7 - 2 f2 - 2 f3 G0 + 2 f8 G0 = 0
        if e == 0 {
            push_row(&[(6, 0, 4), (1, 0, -2)], T::zero(), &mut rows);
        } else {
            push_row(
                &[(6, e, 4), (1, e, -2), (2, e - 1, -2), (7, e - 1, 2)],
                T::zero(),
                &mut rows,
            );
        }
    }

    let pivots = rref(&mut rows);
    let solvable = rows
        .iter()
        .all(|r| !(r[..nvar].iter().all(|x| x.is_zero()) && !r[nvar].is_zero()));
    let free_parameters = nvar - pivots.len();

    // an unknown is forced when it is a pivot whose row has no free-column
    // support; forced-to-zero additionally needs a zero right-hand side
    let forced_zero = |i: usize| -> bool {
        if !solvable {
            return false;
        }
        (0..dd).all(|d| {
            let col = var(i, d);
            let Some(pi) = pivots.iter().position(|&c| c == col) else {
                return false;
            };
            // in reduced form a pivot row carries only free-column entries
            // besides the pivot; forced means those vanish too
            let row = &rows[pi];
            (0..nvar).all(|c| c == col || row[c].is_zero()) && row[nvar].is_zero()
        })
    };
    let f1_forced_zero = forced_zero(0);
    let f2_forced_zero = forced_zero(1);

    // candidate checks: plug the given polynomials into every identity
    let coeff = |i: usize, d: usize| -> T { a.f[i].get(d).cloned().unwrap_or_else(T::zero) };
    let mut residual_zero = true;
    let mut skew_holds = true;
    for e in 0..=a.degree + 2 {
        let shift = |i: usize| if e == 0 { T::zero() } else { coeff(i, e - 1) };
        let checks = [
            coeff(0, e),
            coeff(1, e),
            shift(2)
                + if e == 0 {
                    three_beta0.clone()
                } else {
                    T::zero()
                },
            T::from_int(2) * coeff(0, e)
                + T::from_int(4) * coeff(1, e)
                + T::from_int(4) * shift(2)
                + if e == 0 {
                    twelve_beta0.clone()
                } else {
                    T::zero()
                },
            coeff(1, e) + T::from_int(4) * coeff(3, e) + T::from_int(2) * shift(5),
            coeff(2, e)
                + T::from_int(4) * shift(4)
                + T::from_int(2) * coeff(5, e)
                + T::from_int(2) * coeff(7, e),
        ];
        if checks.iter().any(|x| !x.is_zero()) {
            residual_zero = false;
        }
        let skew =
            T::from_int(4) * coeff(6, e) - T::from_int(2) * coeff(1, e) - T::from_int(2) * shift(2)
                + T::from_int(2) * shift(7);
        if !skew.is_zero() {
            skew_holds = false;
            residual_zero = false;
        }
    }

    Beta0Report {
        solvable,
        f1_forced_zero,
        f2_forced_zero,
        free_parameters,
        candidate_residual_zero: residual_zero,
        candidate_skew_holds: skew_holds,
    }
}

#[derive(Debug, Error)]
pub enum ThermoError {
    #[error("grids must be strictly increasing with at least 4 samples each")]
    Grid,
    #[error("table values must be finite and match the grid shape")]
    Shape,
    #[error("csv parse failure: {0}")]
    Csv(String),
}

/// Sampled thermodynamic functions on a (rho, T) grid; units are the source
/// model's and opaque here.
#[derive(Debug, Clone)]
pub struct ThermoTable {
    pub rho: Vec<f64>,
    pub temp: Vec<f64>,
    /// Indexed [rho][temp].
    pub p: Vec<Vec<f64>>,
    pub eps: Vec<Vec<f64>>,
    pub h2: Vec<Vec<f64>>,
    pub beta2: Vec<Vec<f64>>,
    pub beta3: Vec<Vec<f64>>,
}

impl ThermoTable {
    pub fn validate(&self) -> Result<(), ThermoError> {
        let nr = self.rho.len();
        let nt = self.temp.len();
        if nr < 4 || nt < 4 {
            return Err(ThermoError::Grid);
        }
        if !self.rho.windows(2).all(|w| w[0] < w[1]) || !self.temp.windows(2).all(|w| w[0] < w[1]) {
            return Err(ThermoError::Grid);
        }
        for field in [&self.p, &self.eps, &self.h2, &self.beta2, &self.beta3] {
            if field.len() != nr || field.iter().any(|row| row.len() != nt) {
                return Err(ThermoError::Shape);
            }
            if field.iter().flatten().any(|v| !v.is_finite()) {
                return Err(ThermoError::Shape);
            }
        }
        Ok(())
    }

    /// CSV with header rho,T,p,eps,h2,beta2,beta3; one grid node per row,
    /// rho-major order.
    pub fn from_csv(text: &str) -> Result<Self, ThermoError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| ThermoError::Csv("empty file".into()))?;
        let expect = "rho,T,p,eps,h2,beta2,beta3";
        if header.trim() != expect {
            return Err(ThermoError::Csv(format!("expected header '{expect}'")));
        }
        let mut rows: Vec<[f64; 7]> = Vec::new();
        for (ln, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ThermoError::Csv(format!("line {}: {e}", ln + 2)))?;
            if vals.len() != 7 {
                return Err(ThermoError::Csv(format!("line {}: want 7 fields", ln + 2)));
            }
            rows.push(vals.try_into().unwrap());
        }
        let mut rho: Vec<f64> = Vec::new();
        let mut temp: Vec<f64> = Vec::new();
        for r in &rows {
            if rho.last() != Some(&r[0]) && !rho.contains(&r[0]) {
                rho.push(r[0]);
            }
            if !temp.contains(&r[1]) {
                temp.push(r[1]);
            }
        }
        let nr = rho.len();
        let nt = temp.len();
        if rows.len() != nr * nt {
            return Err(ThermoError::Csv("incomplete grid".into()));
        }
        let make = || vec![vec![0.0; nt]; nr];
        let (mut p, mut eps, mut h2, mut b2, mut b3) = (make(), make(), make(), make(), make());
        for r in &rows {
            let i = rho.iter().position(|x| x == &r[0]).unwrap();
            let j = temp.iter().position(|x| x == &r[1]).unwrap();
            p[i][j] = r[2];
            eps[i][j] = r[3];
            h2[i][j] = r[4];
            b2[i][j] = r[5];
            b3[i][j] = r[6];
        }
        let t = ThermoTable {
            rho,
            temp,
            p,
            eps,
            h2,
            beta2: b2,
            beta3: b3,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rho,T,p,eps,h2,beta2,beta3\n");
        for (i, r) in self.rho.iter().enumerate() {
            for (j, t) in self.temp.iter().enumerate() {
                out.push_str(&format!(
                    "{r},{t},{},{},{},{},{}\n",
                    self.p[i][j], self.eps[i][j], self.h2[i][j], self.beta2[i][j], self.beta3[i][j]
                ));
            }
        }
        out
    }

    fn f_combo(&self, i: usize, j: usize) -> f64 {
        self.beta2[i][j]
            - (5.0 / 6.0) * self.beta3[i][j]
            - (4.0 * self.h2[i][j] + (10.0 / 3.0) * self.p[i][j] * self.temp[j])
                * (self.eps[i][j] + self.p[i][j] / self.rho[i])
    }
}

#[derive(Debug, Clone)]
pub struct ThermoReport {
    pub constant: f64,
    pub rho_independent: bool,
    pub tf_constant: bool,
    pub ode_satisfied: bool,
    /// The integration constant vanishes, which is equivalent to first-order
    /// symmetry of the third-moment flux.
    pub first_order_symmetry: bool,
    pub max_rho_derivative: f64,
    pub max_tf_deviation: f64,
    pub max_ode_residual: f64,
}

/// Truncation allowance for the grid-spacing-squared tolerance terms.
const FD_ALLOWANCE: f64 = 8.0;

fn fd_rows(grid: &[f64], values: impl Fn(usize) -> f64) -> Vec<f64> {
    // central differences inside, second-order one-sided at the edges
    let n = grid.len();
    let edge = |i0: usize, i1: usize, i2: usize| -> f64 {
        let h1 = grid[i1] - grid[i0];
        let h2 = grid[i2] - grid[i1];
        let (f0, f1, f2) = (values(i0), values(i1), values(i2));
        -f0 * (2.0 * h1 + h2) / (h1 * (h1 + h2)) + f1 * (h1 + h2) / (h1 * h2)
            - f2 * h1 / (h2 * (h1 + h2))
    };
    (0..n)
        .map(|i| {
            if i == 0 {
                edge(0, 1, 2)
            } else if i == n - 1 {
                // signed spacings make the same stencil valid at this edge
                edge(n - 1, n - 2, n - 3)
            } else {
                (values(i + 1) - values(i - 1)) / (grid[i + 1] - grid[i - 1])
            }
        })
        .collect()
}

/// Finite-difference check of the two differential constraints on the
/// combination f = beta2 - (5/6) beta3 - (4 h2 + (10/3) p T)(eps + p/rho):
/// rho-independence and T f = constant. Tolerances pick up a grid-spacing
/// squared term, the truncation order of the central differences.
pub fn verify_integration_constant(t: &ThermoTable, tol: f64) -> Result<ThermoReport, ThermoError> {
    t.validate()?;
    let nr = t.rho.len();
    let nt = t.temp.len();
    let f: Vec<Vec<f64>> = (0..nr)
        .map(|i| (0..nt).map(|j| t.f_combo(i, j)).collect())
        .collect();

    let h_rho = t.rho.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let h_t = t.temp.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let f_scale = f.iter().flatten().map(|x| x.abs()).fold(1.0, f64::max);

    let mut max_rho_derivative = 0.0f64;
    for j in 0..nt {
        for d in fd_rows(&t.rho, |i| f[i][j]) {
            max_rho_derivative = max_rho_derivative.max(d.abs());
        }
    }
    let rho_independent = max_rho_derivative <= (tol + FD_ALLOWANCE * h_rho * h_rho) * f_scale;

    let tf: Vec<Vec<f64>> = (0..nr)
        .map(|i| (0..nt).map(|j| t.temp[j] * f[i][j]).collect())
        .collect();
    let mean: f64 = tf.iter().flatten().sum::<f64>() / (nr * nt) as f64;
    let max_tf_deviation = tf
        .iter()
        .flatten()
        .map(|c| (c - mean).abs())
        .fold(0.0, f64::max);
    let c_scale = tf
        .iter()
        .flatten()
        .map(|x| x.abs())
        .fold(1.0, f64::max)
        .max(f_scale);
    let tf_constant = max_tf_deviation <= (tol + FD_ALLOWANCE * h_t * h_t) * c_scale;

    let mut max_ode_residual = 0.0f64;
    for i in 0..nr {
        let dfdt = fd_rows(&t.temp, |j| f[i][j]);
        for j in 0..nt {
            let res = dfdt[j] + f[i][j] / t.temp[j];
            max_ode_residual = max_ode_residual.max(res.abs());
        }
    }
    let ode_satisfied = max_ode_residual <= (tol + FD_ALLOWANCE * h_t * h_t) * f_scale;

    let first_order_symmetry =
        rho_independent && tf_constant && mean.abs() <= (tol + FD_ALLOWANCE * h_t * h_t) * c_scale;

    Ok(ThermoReport {
        constant: mean,
        rho_independent,
        tf_constant,
        ode_satisfied,
        first_order_symmetry,
        max_rho_derivative,
        max_tf_deviation,
        max_ode_residual,
    })
}
