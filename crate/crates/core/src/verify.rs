//! Residual verification of the condition families satisfied by the
//! potentials. Residuals are assembled grade by grade from evaluations of
//! the relevant derivative series, so a series carrying two orders of
//! truncation headroom verifies exactly up to the requested order: in
//! rational mode a valid potential produces literal zeros, in float mode
//! rounding noise.

use crate::dense::DenseTensor;
use crate::recurrence::{ThetaKey, ThetaTable};
use crate::ring::{LambdaScalar, PsiRealization};
use crate::scalar::{factorial, Scalar};
use crate::series::{DeltaCache, MomentSeries, Multipliers, SeriesError, SeriesTerm, Var};
use crate::symtensor::SymTensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    /// Verify residual grades 0..=order.
    pub order: usize,
    /// Number of random points.
    pub points: usize,
    /// Pass threshold on the relative residual.
    pub tol: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub max_abs_residual: f64,
    #[serde(rename = "max_residual")]
    pub max_rel_residual: f64,
    /// Every sampled residual component was exactly zero in the scalar
    /// arithmetic (meaningful in rational mode).
    pub exact_zero: bool,
    pub worst_point: Option<String>,
    pub pass: bool,
}

/// Which condition family to check against the series.
pub enum ConditionSet<'a, T> {
    /// The integrability pair and the velocity balance on a scalar
    /// potential (the full generating function or the deviation alone).
    Core,
    /// The five constraints on the matrix potential; the theta table feeds
    /// the inhomogeneous parts.
    Hstar0 { theta: &'a ThetaTable<T> },
    /// The coupled constraints on (matrix potential, vector potential) plus
    /// the derived third-order conditions on the deviation series itself.
    Vector {
        hstar0: &'a MomentSeries<T>,
        tthk: &'a MomentSeries<T>,
    },
    /// The two boost-invariance equations on a scalar potential.
    Galilean,
}

/// Deterministic sample points: lambda in [1,2], mu in [-1,1], deviation
/// components in [-0.1, 0.1], all exact small rationals so the same points
/// work in both scalar modes.
pub fn sample_points<T: Scalar>(
    count: usize,
    seed: u64,
    zero_lam_vec: bool,
) -> Vec<Multipliers<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let lam = T::from_ratio(16 + rng.gen_range(0..=16), 16);
        let mu = T::from_ratio(rng.gen_range(-8..=8), 8);
        let mut dev = || T::from_ratio(rng.gen_range(-16..=16), 160);
        let mu_vec = SymTensor::vector([dev(), dev(), dev()]);
        let mu_mat = SymTensor::matrix([dev(), dev(), dev(), dev(), dev(), dev()]);
        let lam_vec = if zero_lam_vec {
            let _ = (dev(), dev(), dev());
            SymTensor::zero(1)
        } else {
            SymTensor::vector([dev(), dev(), dev()])
        };
        out.push(Multipliers::new(mu, mu_vec, mu_mat, lam, lam_vec));
    }
    out
}

struct Accum {
    name: String,
    max_abs: f64,
    max_rel: f64,
    exact: bool,
    worst: Option<String>,
}

impl Accum {
    fn new(name: &str) -> Self {
        Accum {
            name: name.to_string(),
            max_abs: 0.0,
            max_rel: 0.0,
            exact: true,
            worst: None,
        }
    }

    fn add<T: Scalar>(&mut self, residual: &DenseTensor<T>, scale: f64, desc: &str) {
        if !residual.is_zero() {
            self.exact = false;
        }
        let abs = residual.max_abs();
        let rel = abs / scale.max(1.0);
        if abs > self.max_abs {
            self.max_abs = abs;
        }
        if rel >= self.max_rel {
            self.max_rel = rel;
            self.worst = Some(desc.to_string());
        }
    }

    fn report(self, tol: f64) -> ConditionReport {
        ConditionReport {
            condition: self.name,
            max_abs_residual: self.max_abs,
            max_rel_residual: self.max_rel,
            exact_zero: self.exact,
            pass: self.max_rel <= tol,
            worst_point: self.worst,
        }
    }
}

/// Grade-split series with zero-padding for out-of-range grades.
struct Graded<T> {
    free: usize,
    grades: Vec<MomentSeries<T>>,
}

impl<T: Scalar> Graded<T> {
    fn new(s: MomentSeries<T>) -> Self {
        Graded {
            free: s.free_rank(),
            grades: s.grade_split(),
        }
    }

    fn ev(
        &self,
        n: i64,
        at: &Multipliers<T>,
        real: &dyn PsiRealization<T>,
        cache: &mut DeltaCache<T>,
    ) -> Result<DenseTensor<T>, SeriesError> {
        if n < 0 || n as usize >= self.grades.len() {
            return Ok(DenseTensor::zero(self.free));
        }
        self.grades[n as usize].evaluate_cached(at, real, cache)
    }
}

fn scale_of<T: Scalar>(pieces: &[&DenseTensor<T>]) -> f64 {
    pieces.iter().map(|p| p.max_abs()).fold(0.0, f64::max)
}

fn dense_vec<T: Scalar>(v: &SymTensor<T>) -> DenseTensor<T> {
    DenseTensor::from_sym(v)
}

/// Verify a condition family on `series` (truncated with two orders of
/// headroom beyond `cfg.order`).
pub fn verify_potential<T: Scalar>(
    series: &MomentSeries<T>,
    conditions: ConditionSet<'_, T>,
    cfg: &VerifyConfig,
    real: &dyn PsiRealization<T>,
) -> Result<Vec<ConditionReport>, SeriesError> {
    if series.max_order() < cfg.order + 2 {
        return Err(SeriesError::Headroom {
            have: series.max_order(),
            order: cfg.order,
            need: cfg.order + 2,
        });
    }
    match conditions {
        ConditionSet::Core => check_core(series, cfg, real),
        ConditionSet::Hstar0 { theta } => check_hstar0(series, theta, cfg, real),
        ConditionSet::Vector { hstar0, tthk } => check_vector(series, hstar0, tthk, cfg, real),
        ConditionSet::Galilean => check_galilean(series, cfg, real),
    }
}

fn check_core<T: Scalar>(
    s: &MomentSeries<T>,
    cfg: &VerifyConfig,
    real: &dyn PsiRealization<T>,
) -> Result<Vec<ConditionReport>, SeriesError> {
    let h_mu = s.differentiate(Var::Mu);
    let d_mu_mat = Graded::new(h_mu.differentiate(Var::MuMat)); // (i,j) and (k,j)
    let d_muv_muv = Graded::new(s.differentiate(Var::MuVec).differentiate(Var::MuVec));
    let d_mu_lamv = Graded::new(h_mu.differentiate(Var::LamVec));
    let d_lam_muv = Graded::new(s.differentiate(Var::Lam).differentiate(Var::MuVec));
    let d_mu_muv = Graded::new(h_mu.differentiate(Var::MuVec));
    let d_muv_mat = Graded::new(s.differentiate(Var::MuVec).differentiate(Var::MuMat)); // (k,i,j)
    let h_mu_g = Graded::new(h_mu);

    let mut acc_mat = Accum::new("core.mat_integrability");
    let mut acc_lam = Accum::new("core.lam_integrability");
    let mut acc_bal = Accum::new("core.velocity_balance");
    let mut cache = DeltaCache::new();

    for (pi, at) in sample_points::<T>(cfg.points, cfg.rng_seed, false)
        .iter()
        .enumerate()
    {
        let muv = dense_vec(&at.mu_vec);
        let lamv = dense_vec(&at.lam_vec);
        let two = T::from_int(2);
        let two_lam = two.clone() * at.lam.clone();
        for n in 0..=cfg.order {
            let desc = format!("point {pi} grade {n}");
            let a = d_mu_mat.ev(n as i64, at, real, &mut cache)?;
            let b = d_muv_muv.ev(n as i64, at, real, &mut cache)?;
            acc_mat.add(&a.sub(&b), scale_of(&[&a, &b]), &desc);

            let a = d_mu_lamv.ev(n as i64, at, real, &mut cache)?;
            let b = d_lam_muv.ev(n as i64, at, real, &mut cache)?;
            acc_lam.add(&a.sub(&b), scale_of(&[&a, &b]), &desc);

            let t1 = d_mu_muv.ev(n as i64 - 1, at, real, &mut cache)?.outer(&muv);
            let t2 = d_mu_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_matrix(1, &at.mu_mat)
                .scale(&two);
            let t3 = d_mu_mat.ev(n as i64, at, real, &mut cache)?.scale(&two_lam);
            let t4 = d_muv_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_vector(2, &lamv)
                .scale(&two);
            let t5 = d_mu_lamv
                .ev(n as i64 - 1, at, real, &mut cache)?
                .outer(&lamv);
            let hp = h_mu_g.ev(n as i64, at, real, &mut cache)?;
            let t6 = DenseTensor::identity2().scale(&hp.get(&[]));
            let mut r = t1.clone();
            for t in [&t2, &t3, &t4, &t5, &t6] {
                r.add_assign(t);
            }
            acc_bal.add(&r, scale_of(&[&t1, &t2, &t3, &t4, &t5, &t6]), &desc);
        }
    }
    Ok(vec![
        acc_mat.report(cfg.tol),
        acc_lam.report(cfg.tol),
        acc_bal.report(cfg.tol),
    ])
}

/// Theta-sourced series appearing in the matrix-potential conditions.
fn theta_rhs_17<T: Scalar>(theta: &ThetaTable<T>, max_order: usize) -> MomentSeries<T> {
    let mut out = MomentSeries::new(max_order, 2);
    for q in 0..=max_order {
        for r in (0..=max_order.saturating_sub(q)).step_by(2) {
            let Some(v) = theta.get(ThetaKey {
                p: 1,
                q,
                r: r + 1,
                s: 0,
            }) else {
                continue;
            };
            if v.is_zero() {
                continue;
            }
            let c = v.scale(&(T::one() / (factorial::<T>(q) * factorial::<T>(r))));
            out.push(SeriesTerm::delta(0, q, r, 0, 2, c).unwrap())
                .unwrap();
        }
    }
    out
}

fn theta_bracket_cd2<T: Scalar>(theta: &ThetaTable<T>, max_order: usize) -> MomentSeries<T> {
    let mut out = MomentSeries::new(max_order, 3);
    for q in 0..=max_order {
        for r in (1..=max_order.saturating_sub(q)).step_by(2) {
            let a = theta.get(ThetaKey { p: 1, q, r, s: 0 });
            let b = theta.get(ThetaKey {
                p: 1,
                q: q + 1,
                r,
                s: 0,
            });
            let (Some(a), Some(b)) = (a, b) else { continue };
            let mut v = a.scale(&T::from_int((2 * q + r + 2) as i64));
            v = v.add(&b.mul(&LambdaScalar::lambda_pow(T::from_int(2), 1)));
            if v.is_zero() {
                continue;
            }
            let c = v.scale(&(T::one() / (factorial::<T>(q) * factorial::<T>(r))));
            out.push(SeriesTerm::delta(0, q, r, 0, 3, c).unwrap())
                .unwrap();
        }
    }
    out
}

fn check_hstar0<T: Scalar>(
    s: &MomentSeries<T>,
    theta: &ThetaTable<T>,
    cfg: &VerifyConfig,
    real: &dyn PsiRealization<T>,
) -> Result<Vec<ConditionReport>, SeriesError> {
    let s_mat = s.differentiate(Var::MuMat);
    let g_s = Graded::new(s.clone());
    let g_mat = Graded::new(s_mat.clone());
    let g_mat_lam = Graded::new(s_mat.differentiate(Var::Lam));
    let g_mat_mat = Graded::new(s_mat.differentiate(Var::MuMat)); // (i,j,k,a)
    let g_mat_lamv = Graded::new(s_mat.differentiate(Var::LamVec)); // (i,j,k)
    let g_lamv_lam = Graded::new(s.differentiate(Var::LamVec).differentiate(Var::Lam));
    let g_lam = Graded::new(s.differentiate(Var::Lam));
    let g_t17 = Graded::new(theta_rhs_17(theta, s.max_order()));
    let g_tcd2 = Graded::new(theta_bracket_cd2(theta, s.max_order()));

    let mut acc_173 = Accum::new("hstar0.lam_mat_decoupling");
    let mut acc_bl1 = Accum::new("hstar0.zero_lamvec_balance");
    let mut acc_cd2 = Accum::new("hstar0.double_mat_balance");
    let mut acc_da11 = Accum::new("hstar0.lam_derivative_balance");
    let mut acc_ea1 = Accum::new("hstar0.skew_integrability");
    let mut cache = DeltaCache::new();

    let points = sample_points::<T>(cfg.points, cfg.rng_seed, false);
    let points_lv0 = sample_points::<T>(cfg.points, cfg.rng_seed.wrapping_add(1), true);

    for (pi, at) in points.iter().enumerate() {
        let lamv = dense_vec(&at.lam_vec);
        let two = T::from_int(2);
        let two_lam = two.clone() * at.lam.clone();
        for n in 0..=cfg.order {
            let desc = format!("point {pi} grade {n}");

            // d2 S / dlam dmu_ij = theta series
            let a = g_mat_lam.ev(n as i64, at, real, &mut cache)?;
            let b = g_t17.ev(n as i64, at, real, &mut cache)?;
            acc_173.add(&a.sub(&b), scale_of(&[&a, &b]), &desc);

            // theta bracket + 2 lam_j d2 S / dmu_ij dmu_ka
            let w = g_mat_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_vector(1, &lamv)
                .scale(&two)
                .permute(&[2, 1, 0]); // (i,k,a) -> (a,k,i)
            let tb = g_tcd2.ev(n as i64, at, real, &mut cache)?;
            let mut r = w.clone();
            r.add_assign(&tb);
            acc_cd2.add(&r, scale_of(&[&w, &tb]), &desc);

            // lam-derivative balance
            let p1 = g_mat_lam
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_matrix(1, &at.mu_mat)
                .scale(&two);
            let p2 = g_mat_lam
                .ev(n as i64, at, real, &mut cache)?
                .scale(&two_lam);
            let p3 = g_mat.ev(n as i64, at, real, &mut cache)?.scale(&two);
            let p4 = g_lamv_lam
                .ev(n as i64 - 1, at, real, &mut cache)?
                .outer(&lamv);
            let p5 =
                DenseTensor::identity2().scale(&g_lam.ev(n as i64, at, real, &mut cache)?.get(&[]));
            let p6 = g_mat_lamv
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_vector(1, &lamv)
                .permute(&[1, 0])
                .scale(&two);
            let mut r = p1.clone();
            for t in [&p2, &p3, &p4, &p5, &p6] {
                r.add_assign(t);
            }
            acc_da11.add(&r, scale_of(&[&p1, &p2, &p3, &p4, &p5, &p6]), &desc);

            // skew integrability, indices (k, i, a), antisymmetrized in (i,a)
            let w1 = g_mat_mat
                .ev(n as i64 - 2, at, real, &mut cache)?
                .contract_slot_vector(1, &lamv) // (a,k,j)
                .contract_slot_matrix(2, &at.mu_mat) // j -> i
                .scale(&two)
                .permute(&[2, 0, 1]); // (a,k,i) -> (k,i,a)
            let w2 = g_mat_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_vector(3, &lamv)
                .scale(&two_lam); // (k,i,a)
            let z = g_mat_lamv
                .ev(n as i64 - 2, at, real, &mut cache)?
                .contract_slot_vector(1, &lamv); // (a,k)
            let w3 = lamv.outer(&z).permute(&[1, 2, 0]); // (i,a,k) -> (k,i,a)
            let z2 = g_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_vector(1, &lamv); // (a)
            let w4 = DenseTensor::identity2().outer(&z2); // (k,i,a)
            let mut r = w1.clone();
            for t in [&w2, &w3, &w4] {
                r.add_assign(t);
            }
            let r = r.antisym(1, 2);
            acc_ea1.add(&r, scale_of(&[&w1, &w2, &w3, &w4]), &desc);
        }
    }

    // zero-lam_vec balance on its own point set
    for (pi, at) in points_lv0.iter().enumerate() {
        let two = T::from_int(2);
        let two_lam = two.clone() * at.lam.clone();
        for n in 0..=cfg.order {
            let desc = format!("lamvec0 point {pi} grade {n}");
            let e1 = g_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_matrix(1, &at.mu_mat)
                .scale(&two);
            let e2 = g_mat.ev(n as i64, at, real, &mut cache)?.scale(&two_lam);
            let e3 =
                DenseTensor::identity2().scale(&g_s.ev(n as i64, at, real, &mut cache)?.get(&[]));
            let mut r = e1.clone();
            r.add_assign(&e2);
            r.add_assign(&e3);
            acc_bl1.add(&r, scale_of(&[&e1, &e2, &e3]), &desc);
        }
    }

    Ok(vec![
        acc_173.report(cfg.tol),
        acc_bl1.report(cfg.tol),
        acc_cd2.report(cfg.tol),
        acc_da11.report(cfg.tol),
        acc_ea1.report(cfg.tol),
    ])
}

fn check_vector<T: Scalar>(
    s: &MomentSeries<T>,
    hstar0: &MomentSeries<T>,
    tthk: &MomentSeries<T>,
    cfg: &VerifyConfig,
    real: &dyn PsiRealization<T>,
) -> Result<Vec<ConditionReport>, SeriesError> {
    // coupled pair conditions
    let g_h0 = Graded::new(hstar0.clone());
    let g_h0_lamv = Graded::new(hstar0.differentiate(Var::LamVec));
    let g_h0_mat = Graded::new(hstar0.differentiate(Var::MuMat));
    let g_tt_lam = Graded::new(tthk.differentiate(Var::Lam));
    let g_tt_mat = Graded::new(tthk.differentiate(Var::MuMat)); // (k,i,j)

    // derived third-order conditions on the deviation series
    let sm = s.differentiate(Var::Mu);
    let g_sm = Graded::new(sm.clone());
    let g_sm_muv = Graded::new(sm.differentiate(Var::MuVec));
    let g_sm_mat = Graded::new(sm.differentiate(Var::MuMat));
    let g_sm_muv_muv = Graded::new(sm.differentiate(Var::MuVec).differentiate(Var::MuVec));
    let g_sm_muv_mat = Graded::new(sm.differentiate(Var::MuVec).differentiate(Var::MuMat));
    let g_sm_muv_lamv = Graded::new(sm.differentiate(Var::MuVec).differentiate(Var::LamVec));
    let g_sm_mat_mat = Graded::new(sm.differentiate(Var::MuMat).differentiate(Var::MuMat));
    let g_sm_muv_lamv_t = Graded::new(sm.differentiate(Var::MuVec).differentiate(Var::LamVec)); // (j,i)
    let g_sm_mat_lam = Graded::new(sm.differentiate(Var::MuMat).differentiate(Var::Lam));
    let sml = sm.differentiate(Var::Lam);
    let g_sml_muv = Graded::new(sml.differentiate(Var::MuVec));
    let g_sml_mat = Graded::new(sml.differentiate(Var::MuMat));
    let g_sml_lamv = Graded::new(sml.differentiate(Var::LamVec));
    let g_sml = Graded::new(sml);
    let g_sm_lamv_mat = Graded::new(sm.differentiate(Var::LamVec).differentiate(Var::MuMat)); // (k,i,j)

    let mut acc_dd2 = Accum::new("vector.lam_compatibility");
    let mut acc_dl1 = Accum::new("vector.mat_balance");
    let mut acc_m1 = Accum::new("deltah.mixed_third");
    let mut acc_m2 = Accum::new("deltah.zero_lamvec_balance");
    let mut acc_m3 = Accum::new("deltah.third_mu_balance");
    let mut acc_m4 = Accum::new("deltah.third_lam_balance");
    let mut cache = DeltaCache::new();

    let points = sample_points::<T>(cfg.points, cfg.rng_seed, false);
    let points_lv0 = sample_points::<T>(cfg.points, cfg.rng_seed.wrapping_add(1), true);

    for (pi, at) in points.iter().enumerate() {
        let muv = dense_vec(&at.mu_vec);
        let lamv = dense_vec(&at.lam_vec);
        let two = T::from_int(2);
        let two_lam = two.clone() * at.lam.clone();
        for n in 0..=cfg.order {
            let desc = format!("point {pi} grade {n}");

            // d H*0 / dlam_i = d ttH^i / dlam
            let a = g_h0_lamv.ev(n as i64, at, real, &mut cache)?;
            let b = g_tt_lam.ev(n as i64, at, real, &mut cache)?;
            acc_dd2.add(&a.sub(&b), scale_of(&[&a, &b]), &desc);

            // 2 mu_ji dH*0/dmu_kj + 2 lam dH*0/dmu_ki + lam_i dH*0/dlam_k
            //   + delta H*0 + 2 lam_j d ttH^k / dmu_ij
            let p1 = g_h0_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_matrix(1, &at.mu_mat)
                .scale(&two);
            let p2 = g_h0_mat.ev(n as i64, at, real, &mut cache)?.scale(&two_lam);
            let p3 = g_h0_lamv
                .ev(n as i64 - 1, at, real, &mut cache)?
                .outer(&lamv);
            let p4 =
                DenseTensor::identity2().scale(&g_h0.ev(n as i64, at, real, &mut cache)?.get(&[]));
            let p5 = g_tt_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_vector(2, &lamv)
                .scale(&two);
            let mut r = p1.clone();
            for t in [&p2, &p3, &p4, &p5] {
                r.add_assign(t);
            }
            acc_dl1.add(&r, scale_of(&[&p1, &p2, &p3, &p4, &p5]), &desc);

            // mixed third derivative: d^3 S/dmu_j dlam_i dmu = d^3 S/dlam dmu_ij dmu
            let lhs = g_sm_muv_lamv_t
                .ev(n as i64, at, real, &mut cache)?
                .permute(&[1, 0]); // (j,i) -> (i,j)
            let rhs = g_sm_mat_lam.ev(n as i64, at, real, &mut cache)?;
            acc_m1.add(&lhs.sub(&rhs), scale_of(&[&lhs, &rhs]), &desc);

            // third-order mu balance, indices (a,k,i)
            let t1 = g_sm_muv_muv
                .ev(n as i64 - 1, at, real, &mut cache)?
                .outer(&muv)
                .permute(&[1, 0, 2]); // (k,a,i) -> (a,k,i)
            let b1 = g_sm_muv.ev(n as i64, at, real, &mut cache)?;
            let t2 = DenseTensor::from_fn(3, |idx| {
                let (a, k, i) = (idx[0], idx[1], idx[2]);
                let mut v = T::zero();
                if a == i {
                    v = v + b1.get(&[k]);
                }
                if k == i {
                    v = v + b1.get(&[a]);
                }
                v
            });
            let t3 = g_sm_muv_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_matrix(2, &at.mu_mat)
                .scale(&two); // (a,k,i)
            let t4 = g_sm_muv_mat
                .ev(n as i64, at, real, &mut cache)?
                .scale(&two_lam);
            let t5 = g_sm_muv_lamv
                .ev(n as i64 - 1, at, real, &mut cache)?
                .outer(&lamv);
            let t6 = g_sm_mat_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_vector(1, &lamv)
                .scale(&two)
                .permute(&[2, 1, 0]); // (i,k,a) -> (a,k,i)
            let mut r = t1.clone();
            for t in [&t2, &t3, &t4, &t5, &t6] {
                r.add_assign(t);
            }
            acc_m3.add(&r, scale_of(&[&t1, &t2, &t3, &t4, &t5, &t6]), &desc);

            // third-order lam balance, indices (k,i)
            let u1 = g_sml_muv
                .ev(n as i64 - 1, at, real, &mut cache)?
                .outer(&muv);
            let u2 = g_sml_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_matrix(1, &at.mu_mat)
                .scale(&two);
            let u3 = g_sml_mat
                .ev(n as i64, at, real, &mut cache)?
                .scale(&two_lam);
            let u4 = g_sm_mat.ev(n as i64, at, real, &mut cache)?.scale(&two);
            let u5 = g_sml_lamv
                .ev(n as i64 - 1, at, real, &mut cache)?
                .outer(&lamv);
            let u6 =
                DenseTensor::identity2().scale(&g_sml.ev(n as i64, at, real, &mut cache)?.get(&[]));
            let u7 = g_sm_lamv_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_vector(2, &lamv)
                .scale(&two); // (k,i)
            let mut r = u1.clone();
            for t in [&u2, &u3, &u4, &u5, &u6, &u7] {
                r.add_assign(t);
            }
            acc_m4.add(&r, scale_of(&[&u1, &u2, &u3, &u4, &u5, &u6, &u7]), &desc);
        }
    }

    for (pi, at) in points_lv0.iter().enumerate() {
        let muv = dense_vec(&at.mu_vec);
        let two = T::from_int(2);
        let two_lam = two.clone() * at.lam.clone();
        for n in 0..=cfg.order {
            let desc = format!("lamvec0 point {pi} grade {n}");
            let e1 = g_sm_muv.ev(n as i64 - 1, at, real, &mut cache)?.outer(&muv);
            let e2 = g_sm_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_matrix(1, &at.mu_mat)
                .scale(&two);
            let e3 = g_sm_mat.ev(n as i64, at, real, &mut cache)?.scale(&two_lam);
            let e4 =
                DenseTensor::identity2().scale(&g_sm.ev(n as i64, at, real, &mut cache)?.get(&[]));
            let mut r = e1.clone();
            for t in [&e2, &e3, &e4] {
                r.add_assign(t);
            }
            acc_m2.add(&r, scale_of(&[&e1, &e2, &e3, &e4]), &desc);
        }
    }

    Ok(vec![
        acc_dd2.report(cfg.tol),
        acc_dl1.report(cfg.tol),
        acc_m1.report(cfg.tol),
        acc_m2.report(cfg.tol),
        acc_m3.report(cfg.tol),
        acc_m4.report(cfg.tol),
    ])
}

/// The two boost-invariance residual tensors at one point, assembled over
/// grades 0..=order.
pub fn galilean_residual_at<T: Scalar>(
    s: &MomentSeries<T>,
    order: usize,
    at: &Multipliers<T>,
    real: &dyn PsiRealization<T>,
) -> Result<(DenseTensor<T>, DenseTensor<T>), SeriesError> {
    if s.max_order() < order + 2 {
        return Err(SeriesError::Headroom {
            have: s.max_order(),
            order,
            need: order + 2,
        });
    }
    let hp = s.differentiate(Var::Mu);
    let hpk = s.differentiate(Var::MuVec);
    let g_hp = Graded::new(hp.clone());
    let g_hp_mu = Graded::new(hp.differentiate(Var::Mu));
    let g_hp_muv = Graded::new(hp.differentiate(Var::MuVec));
    let g_hp_mat = Graded::new(hp.differentiate(Var::MuMat));
    let g_hp_lam = Graded::new(hp.differentiate(Var::Lam));
    let g_hpk_mu = Graded::new(hpk.differentiate(Var::Mu));
    let g_hpk_muv = Graded::new(hpk.differentiate(Var::MuVec));
    let g_hpk_mat = Graded::new(hpk.differentiate(Var::MuMat));
    let g_hpk_lam = Graded::new(hpk.differentiate(Var::Lam));

    let mut cache = DeltaCache::new();
    let muv = dense_vec(&at.mu_vec);
    let lamv = dense_vec(&at.lam_vec);
    let two = T::from_int(2);
    let two_lam = two.clone() * at.lam.clone();
    let mut r_scalar = DenseTensor::zero(1);
    let mut r_vector = DenseTensor::zero(2);
    for n in 0..=order {
        let a = muv.scale(&g_hp_mu.ev(n as i64 - 1, at, real, &mut cache)?.get(&[]));
        let b1 = g_hp_muv
            .ev(n as i64 - 1, at, real, &mut cache)?
            .contract_slot_matrix(0, &at.mu_mat)
            .scale(&two);
        let b2 = g_hp_muv.ev(n as i64, at, real, &mut cache)?.scale(&two_lam);
        let c = g_hp_mat
            .ev(n as i64 - 1, at, real, &mut cache)?
            .contract_slot_vector(0, &lamv)
            .scale(&two);
        let d = lamv.scale(&g_hp_lam.ev(n as i64 - 1, at, real, &mut cache)?.get(&[]));
        for t in [&a, &b1, &b2, &c, &d] {
            r_scalar.add_assign(t);
        }

        let a = g_hpk_mu.ev(n as i64 - 1, at, real, &mut cache)?.outer(&muv);
        let b1 = g_hpk_muv
            .ev(n as i64 - 1, at, real, &mut cache)?
            .contract_slot_matrix(1, &at.mu_mat)
            .scale(&two);
        let b2 = g_hpk_muv
            .ev(n as i64, at, real, &mut cache)?
            .scale(&two_lam);
        let c = g_hpk_mat
            .ev(n as i64 - 1, at, real, &mut cache)?
            .contract_slot_vector(1, &lamv)
            .scale(&two);
        let d = g_hpk_lam
            .ev(n as i64 - 1, at, real, &mut cache)?
            .outer(&lamv);
        let e = DenseTensor::identity2().scale(&g_hp.ev(n as i64, at, real, &mut cache)?.get(&[]));
        for t in [&a, &b1, &b2, &c, &d, &e] {
            r_vector.add_assign(t);
        }
    }
    Ok((r_scalar, r_vector))
}

fn check_galilean<T: Scalar>(
    s: &MomentSeries<T>,
    cfg: &VerifyConfig,
    real: &dyn PsiRealization<T>,
) -> Result<Vec<ConditionReport>, SeriesError> {
    let hp = s.differentiate(Var::Mu);
    let hpk = s.differentiate(Var::MuVec);

    let g_hp = Graded::new(hp.clone());
    let g_hp_mu = Graded::new(hp.differentiate(Var::Mu));
    let g_hp_muv = Graded::new(hp.differentiate(Var::MuVec));
    let g_hp_mat = Graded::new(hp.differentiate(Var::MuMat));
    let g_hp_lam = Graded::new(hp.differentiate(Var::Lam));
    let g_hpk_mu = Graded::new(hpk.differentiate(Var::Mu));
    let g_hpk_muv = Graded::new(hpk.differentiate(Var::MuVec)); // (k,h)
    let g_hpk_mat = Graded::new(hpk.differentiate(Var::MuMat)); // (k,h,i)
    let g_hpk_lam = Graded::new(hpk.differentiate(Var::Lam));

    let mut acc_s = Accum::new("galilean.scalar_potential");
    let mut acc_v = Accum::new("galilean.vector_potential");
    let mut cache = DeltaCache::new();

    for (pi, at) in sample_points::<T>(cfg.points, cfg.rng_seed, false)
        .iter()
        .enumerate()
    {
        let muv = dense_vec(&at.mu_vec);
        let lamv = dense_vec(&at.lam_vec);
        let two = T::from_int(2);
        let two_lam = two.clone() * at.lam.clone();
        for n in 0..=cfg.order {
            let desc = format!("point {pi} grade {n}");

            // scalar potential equation (free index i)
            let a = muv.scale(&g_hp_mu.ev(n as i64 - 1, at, real, &mut cache)?.get(&[]));
            let b1 = g_hp_muv
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_matrix(0, &at.mu_mat)
                .scale(&two);
            let b2 = g_hp_muv.ev(n as i64, at, real, &mut cache)?.scale(&two_lam);
            let c = g_hp_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_vector(0, &lamv)
                .scale(&two);
            let d = lamv.scale(&g_hp_lam.ev(n as i64 - 1, at, real, &mut cache)?.get(&[]));
            let mut r = a.clone();
            for t in [&b1, &b2, &c, &d] {
                r.add_assign(t);
            }
            acc_s.add(&r, scale_of(&[&a, &b1, &b2, &c, &d]), &desc);

            // vector potential equation (free indices k,i)
            let a = g_hpk_mu.ev(n as i64 - 1, at, real, &mut cache)?.outer(&muv);
            let b1 = g_hpk_muv
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_matrix(1, &at.mu_mat)
                .scale(&two);
            let b2 = g_hpk_muv
                .ev(n as i64, at, real, &mut cache)?
                .scale(&two_lam);
            let c = g_hpk_mat
                .ev(n as i64 - 1, at, real, &mut cache)?
                .contract_slot_vector(1, &lamv)
                .scale(&two);
            let d = g_hpk_lam
                .ev(n as i64 - 1, at, real, &mut cache)?
                .outer(&lamv);
            let e =
                DenseTensor::identity2().scale(&g_hp.ev(n as i64, at, real, &mut cache)?.get(&[]));
            let mut r = a.clone();
            for t in [&b1, &b2, &c, &d, &e] {
                r.add_assign(t);
            }
            acc_v.add(&r, scale_of(&[&a, &b1, &b2, &c, &d, &e]), &desc);
        }
    }
    Ok(vec![acc_s.report(cfg.tol), acc_v.report(cfg.tol)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{ExpExpFamily, ExpFamily, PolyFamily};
    use crate::solutions::{
        build_delta_h, build_h1, build_hstar0, build_tthk, FPoly, SolutionParams,
    };
    use num_rational::BigRational;

    type Q = BigRational;

    fn q(n: i64, d: i64) -> Q {
        Q::from_ratio(n, d)
    }

    fn all_pass(reports: &[ConditionReport]) {
        for r in reports {
            assert!(
                r.pass,
                "{} failed: rel {} abs {} at {:?}",
                r.condition, r.max_rel_residual, r.max_abs_residual, r.worst_point
            );
        }
    }

    fn all_exact(reports: &[ConditionReport]) {
        for r in reports {
            assert!(
                r.exact_zero,
                "{} not exactly zero: {}",
                r.condition, r.max_abs_residual
            );
        }
    }

    #[test]
    fn h1_satisfies_core_exactly_in_rational_mode() {
        let h1 = build_h1::<Q>(6);
        let cfg = VerifyConfig {
            order: 4,
            points: 6,
            tol: 1e-12,
            rng_seed: 11,
        };
        let reports = verify_potential(&h1, ConditionSet::Core, &cfg, &PolyFamily).unwrap();
        all_pass(&reports);
        all_exact(&reports);
    }

    #[test]
    fn h1_satisfies_core_in_float_mode() {
        let h1 = build_h1::<f64>(7);
        let cfg = VerifyConfig {
            order: 5,
            points: 20,
            tol: 1e-9,
            rng_seed: 3,
        };
        let reports = verify_potential(&h1, ConditionSet::Core, &cfg, &ExpFamily).unwrap();
        all_pass(&reports);
        let reports =
            verify_potential(&h1, ConditionSet::Core, &cfg, &ExpExpFamily { c: 0.6 }).unwrap();
        all_pass(&reports);
    }

    #[test]
    fn headroom_is_enforced() {
        let h1 = build_h1::<f64>(4);
        let cfg = VerifyConfig {
            order: 4,
            points: 2,
            tol: 1e-9,
            rng_seed: 0,
        };
        assert!(matches!(
            verify_potential(&h1, ConditionSet::Core, &cfg, &ExpFamily),
            Err(SeriesError::Headroom { .. })
        ));
    }

    #[test]
    fn wrong_series_fails_core() {
        // H = mu_i mu^i: the matrix integrability residual is 2 delta^{ij}
        use crate::ring::LambdaScalar;
        let mut s = MomentSeries::<Q>::new(6, 0);
        s.push(SeriesTerm::delta(2, 0, 0, 0, 0, LambdaScalar::constant(q(2, 1))).unwrap())
            .unwrap();
        let cfg = VerifyConfig {
            order: 2,
            points: 4,
            tol: 1e-9,
            rng_seed: 5,
        };
        let reports = verify_potential(&s, ConditionSet::Core, &cfg, &PolyFamily).unwrap();
        assert!(reports.iter().any(|r| !r.pass && r.max_rel_residual >= 0.1));
    }

    #[test]
    fn hstar0_conditions_hold_for_random_params() {
        for seed in 0..10u64 {
            let mut params = SolutionParams::<Q>::zero(6);
            params.beta = vec![q(seed as i64 + 1, 2), q(-1, 3)];
            params.psi_const = vec![q(2, 1), q(seed as i64 - 2, 5)];
            let h0 = build_hstar0(&params, 6);
            let cfg = VerifyConfig {
                order: 4,
                points: 5,
                tol: 1e-12,
                rng_seed: seed,
            };
            let reports = verify_potential(
                &h0,
                ConditionSet::Hstar0 {
                    theta: &params.theta,
                },
                &cfg,
                &PolyFamily,
            )
            .unwrap();
            all_pass(&reports);
            all_exact(&reports);
        }
    }

    #[test]
    fn vector_conditions_hold_for_random_params() {
        for seed in 0..3u64 {
            let mut params = SolutionParams::<Q>::zero(7);
            params.beta = vec![q(1, 2), q(seed as i64 + 1, 3)];
            params.psi_const = vec![q(-1, 1), q(1, 4)];
            params.f = match seed {
                0 => FPoly::g1(),
                1 => FPoly::g2(),
                _ => FPoly::g1_squared(),
            };
            let h0 = build_hstar0(&params, 7);
            let tt = build_tthk(&params, 7);
            let dh = build_delta_h(&params, 7);
            let cfg = VerifyConfig {
                order: 5,
                points: 4,
                tol: 1e-12,
                rng_seed: seed + 40,
            };
            let reports = verify_potential(
                &dh,
                ConditionSet::Vector {
                    hstar0: &h0,
                    tthk: &tt,
                },
                &cfg,
                &PolyFamily,
            )
            .unwrap();
            all_pass(&reports);
            all_exact(&reports);
        }
    }

    #[test]
    fn delta_h_satisfies_core_conditions() {
        let mut params = SolutionParams::<Q>::zero(7);
        params.beta = vec![q(1, 1), q(2, 5)];
        params.psi_const = vec![q(1, 1), q(-2, 3)];
        params.f = FPoly::g1();
        let dh = build_delta_h(&params, 7);
        let cfg = VerifyConfig {
            order: 5,
            points: 5,
            tol: 1e-12,
            rng_seed: 77,
        };
        let reports = verify_potential(&dh, ConditionSet::Core, &cfg, &PolyFamily).unwrap();
        all_pass(&reports);
        all_exact(&reports);
    }

    #[test]
    fn full_potential_is_galilean_invariant() {
        let mut params = SolutionParams::<Q>::zero(6);
        params.beta = vec![q(1, 3)];
        params.psi_const = vec![q(1, 1)];
        params.f = FPoly::g1();
        let h = build_h1::<Q>(6).add(&build_delta_h(&params, 6)).unwrap();
        let cfg = VerifyConfig {
            order: 4,
            points: 5,
            tol: 1e-12,
            rng_seed: 13,
        };
        let reports = verify_potential(&h, ConditionSet::Galilean, &cfg, &PolyFamily).unwrap();
        all_pass(&reports);
        all_exact(&reports);
    }

    #[test]
    fn beta0_injection_breaks_vector_balance() {
        // forcing the excluded r = 0 constant into the matrix potential
        // makes the coupled balance fail at generic points
        use crate::ring::LambdaScalar;
        use crate::series::{CoreTensor, Slot};
        let mut params = SolutionParams::<Q>::zero(6);
        params.beta = vec![q(1, 2)];
        let mut h0 = build_hstar0(&params, 6);
        // inject the r = 0 pieces: -2 lam * 3 * beta0 (lam.lam) + 3 beta0 mu_ll
        let beta0 = q(1, 1);
        h0.push(
            SeriesTerm::delta(
                0,
                0,
                2,
                0,
                0,
                LambdaScalar::lambda_pow(q(-6, 1) * beta0.clone(), 1),
            )
            .unwrap(),
        )
        .unwrap();
        let core = CoreTensor::from_pairings(
            0,
            0,
            1,
            2,
            &[(Slot::MatA(0), Slot::Lam(0)), (Slot::MatB(0), Slot::Lam(1))],
        );
        h0.push(SeriesTerm::explicit(
            0,
            LambdaScalar::constant(q(3, 1) * beta0),
            core,
        ))
        .unwrap();
        let tt = build_tthk(&params, 6);
        let dh = build_delta_h(&params, 6);
        let cfg = VerifyConfig {
            order: 4,
            points: 5,
            tol: 1e-9,
            rng_seed: 29,
        };
        let reports = verify_potential(
            &dh,
            ConditionSet::Vector {
                hstar0: &h0,
                tthk: &tt,
            },
            &cfg,
            &PolyFamily,
        )
        .unwrap();
        assert!(
            reports
                .iter()
                .any(|r| r.condition == "vector.mat_balance" && !r.pass),
            "{reports:?}"
        );
    }
}
