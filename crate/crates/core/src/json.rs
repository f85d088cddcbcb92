//! Serialization for every external interface: tensors, ring elements,
//! series, theta tables, boost matrices, states, evaluation points, solution
//! parameters and closure-tensor exports. Numeric values travel as decimal
//! num/den strings so exact rationals never overflow a binary float.

use crate::closure::ClosureTensors;
use crate::dense::DenseTensor;
use crate::galilean::{StateVector14, XMatrix};
use crate::recurrence::{ThetaKey, ThetaTable};
use crate::ring::{LambdaScalar, PsiSymbol};
use crate::scalar::Scalar;
use crate::series::{CoreKey, CoreTensor, MomentSeries, Multipliers, SeriesTerm, Structure};
use crate::solutions::{FMonomial, FPoly, SolutionParams};
use crate::symtensor::SymTensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad numeric literal: {0}")]
    Number(String),
    #[error("inconsistent payload: {0}")]
    Payload(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn num<T: Scalar>(s: &str) -> Result<T, CodecError> {
    T::parse_str(s).ok_or_else(|| CodecError::Number(s.to_string()))
}

fn render<T: Scalar>(x: &T) -> (String, String) {
    x.to_num_den()
}

// ---- tensors -------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct ComponentDto {
    pub idx: Vec<u8>,
    pub num: String,
    pub den: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SymTensorDto {
    pub rank: usize,
    pub mode: String,
    pub components: Vec<ComponentDto>,
}

pub fn sym_tensor_to_dto<T: Scalar>(t: &SymTensor<T>) -> SymTensorDto {
    SymTensorDto {
        rank: t.rank(),
        mode: T::MODE.as_str().to_string(),
        components: t
            .iter()
            .map(|(k, v)| {
                let (num, den) = render(v);
                ComponentDto {
                    idx: k.as_slice().to_vec(),
                    num,
                    den,
                }
            })
            .collect(),
    }
}

pub fn sym_tensor_from_dto<T: Scalar>(d: &SymTensorDto) -> Result<SymTensor<T>, CodecError> {
    let mut t = SymTensor::zero(d.rank);
    for c in &d.components {
        t.set(&c.idx, num::<T>(&c.num)? / num::<T>(&c.den)?)
            .map_err(|e| CodecError::Payload(e.to_string()))?;
    }
    Ok(t)
}

// ---- ring ----------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct PsiDto {
    pub n: i32,
    pub k: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MonomialDto {
    pub lam_exp: i32,
    pub psi: Option<PsiDto>,
    pub num: String,
    pub den: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LambdaScalarDto {
    pub monomials: Vec<MonomialDto>,
}

pub fn lambda_scalar_to_dto<T: Scalar>(x: &LambdaScalar<T>) -> LambdaScalarDto {
    LambdaScalarDto {
        monomials: x
            .iter()
            .map(|(e, p, c)| {
                let (num, den) = render(c);
                MonomialDto {
                    lam_exp: e,
                    psi: p.map(|ps| PsiDto { n: ps.n, k: ps.k }),
                    num,
                    den,
                }
            })
            .collect(),
    }
}

pub fn lambda_scalar_from_dto<T: Scalar>(
    d: &LambdaScalarDto,
) -> Result<LambdaScalar<T>, CodecError> {
    let mut out = LambdaScalar::zero();
    for m in &d.monomials {
        out.add_monomial(
            m.lam_exp,
            m.psi.as_ref().map(|p| PsiSymbol { n: p.n, k: p.k }),
            num::<T>(&m.num)? / num::<T>(&m.den)?,
        );
    }
    Ok(out)
}

// ---- series ----------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StructureDto {
    Tag(String),
    Explicit(SymTensorDto),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeriesTermDto {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub s: usize,
    pub free: usize,
    pub coeff: LambdaScalarDto,
    pub structure: StructureDto,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeriesDto {
    pub max_order: usize,
    pub free_rank: usize,
    pub terms: Vec<SeriesTermDto>,
}

pub fn series_to_dto<T: Scalar>(s: &MomentSeries<T>) -> SeriesDto {
    SeriesDto {
        max_order: s.max_order(),
        free_rank: s.free_rank(),
        terms: s
            .terms()
            .iter()
            .map(|t| {
                let structure = match &t.structure {
                    Structure::Delta => StructureDto::Tag("delta".to_string()),
                    Structure::Explicit(core) => {
                        let rank = core.free + core.p + 2 * core.q + core.r;
                        let components = core
                            .entries()
                            .map(|(k, v)| {
                                let mut idx = k.free.clone();
                                idx.extend_from_slice(&k.mu);
                                for &(a, b) in &k.mat {
                                    idx.push(a);
                                    idx.push(b);
                                }
                                idx.extend_from_slice(&k.lam);
                                let (num, den) = render(v);
                                ComponentDto { idx, num, den }
                            })
                            .collect();
                        StructureDto::Explicit(SymTensorDto {
                            rank,
                            mode: T::MODE.as_str().to_string(),
                            components,
                        })
                    }
                };
                SeriesTermDto {
                    p: t.p,
                    q: t.q,
                    r: t.r,
                    s: t.s,
                    free: t.free,
                    coeff: lambda_scalar_to_dto(&t.coeff),
                    structure,
                }
            })
            .collect(),
    }
}

pub fn series_from_dto<T: Scalar>(d: &SeriesDto) -> Result<MomentSeries<T>, CodecError> {
    let mut out = MomentSeries::new(d.max_order, d.free_rank);
    for t in &d.terms {
        let coeff = lambda_scalar_from_dto(&t.coeff)?;
        let term = match &t.structure {
            StructureDto::Tag(tag) if tag == "delta" => {
                SeriesTerm::delta(t.p, t.q, t.r, t.s, t.free, coeff)
                    .map_err(|e| CodecError::Payload(e.to_string()))?
            }
            StructureDto::Tag(tag) => {
                return Err(CodecError::Payload(format!(
                    "unknown structure tag '{tag}'"
                )))
            }
            StructureDto::Explicit(td) => {
                let mut core = CoreTensor::empty(t.free, t.p, t.q, t.r);
                for c in &td.components {
                    if c.idx.len() != t.free + t.p + 2 * t.q + t.r {
                        return Err(CodecError::Payload("core index length".into()));
                    }
                    let mut pos = 0usize;
                    let take = |idx: &[u8], pos: &mut usize, n: usize| -> Vec<u8> {
                        let v = idx[*pos..*pos + n].to_vec();
                        *pos += n;
                        v
                    };
                    let free = take(&c.idx, &mut pos, t.free);
                    let mu = take(&c.idx, &mut pos, t.p);
                    let mat_flat = take(&c.idx, &mut pos, 2 * t.q);
                    let lam = take(&c.idx, &mut pos, t.r);
                    let mat = mat_flat.chunks(2).map(|w| (w[0], w[1])).collect();
                    core.insert_canonical(
                        CoreKey { free, mu, mat, lam },
                        num::<T>(&c.num)? / num::<T>(&c.den)?,
                    );
                }
                SeriesTerm::explicit(t.s, coeff, core)
            }
        };
        out.push(term)
            .map_err(|e| CodecError::Payload(e.to_string()))?;
    }
    Ok(out)
}

// ---- theta table -----------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct ThetaEntryDto {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub s: usize,
    pub value: LambdaScalarDto,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ThetaTableDto {
    pub max_order: usize,
    pub entries: Vec<ThetaEntryDto>,
}

pub fn theta_table_to_dto<T: Scalar>(t: &ThetaTable<T>) -> ThetaTableDto {
    ThetaTableDto {
        max_order: t.max_order(),
        entries: t
            .entries()
            .map(|(k, v)| ThetaEntryDto {
                p: k.p,
                q: k.q,
                r: k.r,
                s: k.s,
                value: lambda_scalar_to_dto(v),
            })
            .collect(),
    }
}

pub fn theta_table_from_dto<T: Scalar>(d: &ThetaTableDto) -> Result<ThetaTable<T>, CodecError> {
    let mut t = ThetaTable::empty(d.max_order);
    for e in &d.entries {
        let key =
            ThetaKey::new(e.p, e.q, e.r, e.s).map_err(|er| CodecError::Payload(er.to_string()))?;
        t.insert(key, lambda_scalar_from_dto(&e.value)?)
            .map_err(|er| CodecError::Payload(er.to_string()))?;
    }
    Ok(t)
}

// ---- boost machinery --------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct XMatrixDto {
    pub entries: Vec<Vec<String>>,
}

pub fn xmatrix_to_dto<T: Scalar>(x: &XMatrix<T>) -> XMatrixDto {
    XMatrixDto {
        entries: x
            .rows()
            .iter()
            .map(|row| {
                row.iter()
                    .map(|v| {
                        let (n, d) = render(v);
                        if d == "1" {
                            n
                        } else {
                            format!("{n}/{d}")
                        }
                    })
                    .collect()
            })
            .collect(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateDto {
    pub components: Vec<String>,
}

pub fn state_to_dto<T: Scalar>(s: &StateVector14<T>) -> StateDto {
    StateDto {
        components: s
            .components()
            .iter()
            .map(|v| {
                let (n, d) = render(v);
                if d == "1" {
                    n
                } else {
                    format!("{n}/{d}")
                }
            })
            .collect(),
    }
}

pub fn state_from_dto<T: Scalar>(d: &StateDto) -> Result<StateVector14<T>, CodecError> {
    if d.components.len() != 14 {
        return Err(CodecError::Payload("state needs 14 components".into()));
    }
    let mut c: Vec<T> = Vec::with_capacity(14);
    for s in &d.components {
        c.push(num(s)?);
    }
    Ok(StateVector14::from_components(c.try_into().ok().unwrap()))
}

// ---- evaluation points -------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct MultipliersDto {
    pub mu: String,
    pub mu_vec: [String; 3],
    /// Upper triangle (11, 12, 13, 22, 23, 33).
    pub mu_mat: [String; 6],
    pub lam: String,
    pub lam_vec: [String; 3],
}

pub fn multipliers_to_dto<T: Scalar>(m: &Multipliers<T>) -> MultipliersDto {
    let fmt = |x: &T| {
        let (n, d) = render(x);
        if d == "1" {
            n
        } else {
            format!("{n}/{d}")
        }
    };
    let keys: [[u8; 2]; 6] = [[1, 1], [1, 2], [1, 3], [2, 2], [2, 3], [3, 3]];
    MultipliersDto {
        mu: fmt(&m.mu),
        mu_vec: std::array::from_fn(|i| fmt(&m.mu_vec.get(&[i as u8 + 1]))),
        mu_mat: std::array::from_fn(|i| fmt(&m.mu_mat.get(&keys[i]))),
        lam: fmt(&m.lam),
        lam_vec: std::array::from_fn(|i| fmt(&m.lam_vec.get(&[i as u8 + 1]))),
    }
}

pub fn multipliers_from_dto<T: Scalar>(d: &MultipliersDto) -> Result<Multipliers<T>, CodecError> {
    let v3 = |a: &[String; 3]| -> Result<SymTensor<T>, CodecError> {
        Ok(SymTensor::vector([num(&a[0])?, num(&a[1])?, num(&a[2])?]))
    };
    let m6 = |a: &[String; 6]| -> Result<SymTensor<T>, CodecError> {
        Ok(SymTensor::matrix([
            num(&a[0])?,
            num(&a[1])?,
            num(&a[2])?,
            num(&a[3])?,
            num(&a[4])?,
            num(&a[5])?,
        ]))
    };
    Ok(Multipliers::new(
        num(&d.mu)?,
        v3(&d.mu_vec)?,
        m6(&d.mu_mat)?,
        num(&d.lam)?,
        v3(&d.lam_vec)?,
    ))
}

// ---- solution parameter files -------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct FMonomialDto {
    pub g0: u32,
    pub g1: u32,
    pub g2: u32,
    pub coeff: String,
}

/// On-disk description of the deviation's free data, consumed by the batch
/// front end. All numbers accept `a` or `a/b` literals.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ParamsFileDto {
    /// beta constants for r = 1, 2, ... in order.
    #[serde(default)]
    pub beta: Vec<String>,
    /// psi expansion constants for even r = 0, 2, ... in order.
    #[serde(default)]
    pub psi_const: Vec<String>,
    #[serde(default)]
    pub f: Vec<FMonomialDto>,
    /// The excluded constant; only the obstruction check consumes it.
    #[serde(default)]
    pub beta0: Option<String>,
    #[serde(default)]
    pub theta_seeds: Option<ThetaTableDto>,
    #[serde(default)]
    pub tth0: Option<SeriesDto>,
    #[serde(default)]
    pub eval_point: Option<MultipliersDto>,
}

pub struct LoadedParams<T> {
    pub params: SolutionParams<T>,
    pub beta0: T,
    pub eval_point: Option<Multipliers<T>>,
    pub theta_seeds: ThetaTable<T>,
}

pub fn load_params<T: Scalar>(
    dto: &ParamsFileDto,
    max_order: usize,
) -> Result<LoadedParams<T>, CodecError> {
    let beta = dto
        .beta
        .iter()
        .map(|s| num::<T>(s))
        .collect::<Result<Vec<_>, _>>()?;
    let psi_const = dto
        .psi_const
        .iter()
        .map(|s| num::<T>(s))
        .collect::<Result<Vec<_>, _>>()?;
    let f = FPoly {
        terms: dto
            .f
            .iter()
            .map(|m| {
                Ok(FMonomial {
                    g0: m.g0,
                    g1: m.g1,
                    g2: m.g2,
                    coeff: num::<T>(&m.coeff)?,
                })
            })
            .collect::<Result<Vec<_>, CodecError>>()?,
    };
    let theta_seeds = match &dto.theta_seeds {
        Some(t) => theta_table_from_dto(t)?,
        None => ThetaTable::empty(max_order),
    };
    let outcome = crate::recurrence::close_table(&theta_seeds, max_order);
    if !outcome.is_consistent() {
        return Err(CodecError::Payload(format!(
            "theta seeds are over-determined: {} conflicting entries",
            outcome.conflicts.len()
        )));
    }
    let tth0 = match &dto.tth0 {
        Some(s) => series_from_dto(s)?,
        None => MomentSeries::new(max_order, 0),
    };
    let beta0 = match &dto.beta0 {
        Some(s) => num::<T>(s)?,
        None => T::zero(),
    };
    let eval_point = dto
        .eval_point
        .as_ref()
        .map(multipliers_from_dto)
        .transpose()?;
    Ok(LoadedParams {
        params: SolutionParams {
            theta: outcome.table,
            beta,
            psi_const,
            f,
            tth0,
        },
        beta0,
        eval_point,
        theta_seeds,
    })
}

// ---- closure tensor export ------------------------------------------------------

/// Dense per-order flux export; component arrays are in lexicographic index
/// order (1,1,1), (1,1,2), ..., (3,3,3) for the rank-3 flux and (1,1),
/// (1,2), ..., (3,3) for the rank-2 flux.
#[derive(Debug, Serialize, Deserialize)]
pub struct ClosureOrderDto {
    pub order: usize,
    pub f_kij: Vec<String>,
    pub g_ki: Vec<String>,
    pub antisym_f: f64,
    pub antisym_g: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClosureDto {
    pub mode: String,
    pub h_prime: String,
    pub h_prime_k: Vec<String>,
    pub orders: Vec<ClosureOrderDto>,
}

fn dense_strings<T: Scalar>(t: &DenseTensor<T>) -> Vec<String> {
    t.components()
        .iter()
        .map(|v| {
            let (n, d) = render(v);
            if d == "1" {
                n
            } else {
                format!("{n}/{d}")
            }
        })
        .collect()
}

pub fn closure_to_dto<T: Scalar>(t: &ClosureTensors<T>) -> ClosureDto {
    let profile = crate::closure::antisym_profile(t);
    ClosureDto {
        mode: T::MODE.as_str().to_string(),
        h_prime: {
            let (n, d) = render(&t.h_prime);
            if d == "1" {
                n
            } else {
                format!("{n}/{d}")
            }
        },
        h_prime_k: dense_strings(&t.h_prime_k),
        orders: t
            .f_kij
            .iter()
            .zip(t.g_ki.iter())
            .zip(profile.iter())
            .enumerate()
            .map(|(order, ((f, g), &(af, ag)))| ClosureOrderDto {
                order,
                f_kij: dense_strings(f),
                g_ki: dense_strings(g),
                antisym_f: af,
                antisym_g: ag,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::PolyFamily;
    use crate::solutions::build_hstar0;
    use num_rational::BigRational;
    use num_traits::Zero;

    type Q = BigRational;

    fn q(n: i64, d: i64) -> Q {
        Q::from_ratio(n, d)
    }

    #[test]
    fn sym_tensor_json_round_trip() {
        let t = crate::symtensor::sym_delta::<Q>(2).unwrap();
        let dto = sym_tensor_to_dto(&t);
        assert_eq!(dto.mode, "rational");
        let text = serde_json::to_string(&dto).unwrap();
        let dto2: SymTensorDto = serde_json::from_str(&text).unwrap();
        let t2 = sym_tensor_from_dto::<Q>(&dto2).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn series_json_round_trip_with_explicit_core() {
        let mut params = crate::solutions::SolutionParams::<Q>::zero(6);
        params.beta = vec![q(1, 2)];
        params.psi_const = vec![q(3, 1)];
        let s = build_hstar0(&params, 6);
        let text = serde_json::to_string(&series_to_dto(&s)).unwrap();
        let dto: SeriesDto = serde_json::from_str(&text).unwrap();
        let s2 = series_from_dto::<Q>(&dto).unwrap();
        // semantic equality through evaluation
        let at = crate::series::Multipliers::sample_point();
        let a = s.evaluate(&at, &PolyFamily).unwrap();
        let b = s2.evaluate(&at, &PolyFamily).unwrap();
        assert_eq!(a, b);
        assert_eq!(s.terms().len(), s2.terms().len());
    }

    #[test]
    fn deviation_series_round_trip() {
        // the assembled deviation exercises every term kind: delta terms,
        // explicit cores, mu powers and Laurent coefficients
        let mut params = crate::solutions::SolutionParams::<Q>::zero(6);
        params.beta = vec![q(1, 1), q(-1, 3)];
        params.psi_const = vec![q(2, 1), q(1, 5)];
        params.f = crate::solutions::FPoly::g1();
        let s = crate::solutions::build_delta_h(&params, 6);
        let text = serde_json::to_string(&series_to_dto(&s)).unwrap();
        let s2 = series_from_dto::<Q>(&serde_json::from_str(&text).unwrap()).unwrap();
        let pts = crate::verify::sample_points::<Q>(3, 31, false);
        for at in &pts {
            assert_eq!(
                s.evaluate(at, &PolyFamily).unwrap(),
                s2.evaluate(at, &PolyFamily).unwrap()
            );
        }
        // derivative structure survives the round trip too
        let d1 = s.differentiate(crate::series::Var::MuMat);
        let d2 = s2.differentiate(crate::series::Var::MuMat);
        for at in &pts {
            assert_eq!(
                d1.evaluate(at, &PolyFamily).unwrap(),
                d2.evaluate(at, &PolyFamily).unwrap()
            );
        }
    }

    #[test]
    fn theta_table_round_trip_and_guard() {
        let t = crate::recurrence::ThetaTable::<Q>::zero(3);
        let dto = theta_table_to_dto(&t);
        let t2 = theta_table_from_dto::<Q>(&dto).unwrap();
        assert_eq!(t.max_order(), t2.max_order());

        // nonzero value at a normalized key is rejected on load
        let bad = ThetaTableDto {
            max_order: 3,
            entries: vec![ThetaEntryDto {
                p: 0,
                q: 1,
                r: 2,
                s: 0,
                value: lambda_scalar_to_dto(&LambdaScalar::<Q>::one()),
            }],
        };
        assert!(theta_table_from_dto::<Q>(&bad).is_err());
    }

    #[test]
    fn params_file_minimal() {
        let text = r#"{"beta": ["1"], "f": [{"g0":0,"g1":1,"g2":0,"coeff":"1"}]}"#;
        let dto: ParamsFileDto = serde_json::from_str(text).unwrap();
        let loaded = load_params::<Q>(&dto, 5).unwrap();
        assert_eq!(loaded.params.beta, vec![q(1, 1)]);
        assert_eq!(loaded.params.f.terms.len(), 1);
        assert!(loaded.params.theta.is_zero());
        assert!(loaded.beta0.is_zero());
    }

    #[test]
    fn multipliers_round_trip() {
        let m = crate::series::Multipliers::<Q>::sample_point();
        let dto = multipliers_to_dto(&m);
        let m2 = multipliers_from_dto::<Q>(&dto).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn xmatrix_dto_entries() {
        let x = crate::galilean::build_x(&crate::galilean::Velocity([q(1, 2), q(0, 1), q(0, 1)]));
        let dto = xmatrix_to_dto(&x);
        assert_eq!(dto.entries.len(), 14);
        assert_eq!(dto.entries[10][0], "1/4"); // v^2 entry
    }
}
