//! Batch front end: generate coefficient and closure tables, run the
//! verification suite, emit reports. Exit codes: 0 success, 1 verification
//! failure, 2 malformed input.

use clap::{Parser, Subcommand, ValueEnum};
use momcl_core::closure::{
    antisym_profile, check_beta0, delta_flux, flux_tensors, verify_integration_constant,
    Beta0Ansatz, ThermoTable,
};
use momcl_core::galilean::{
    build_x, transform_multipliers, transform_multipliers_matrix, Velocity,
};
use momcl_core::json::{
    closure_to_dto, load_params, multipliers_from_dto, series_to_dto, theta_table_to_dto,
    xmatrix_to_dto, ParamsFileDto,
};
use momcl_core::recurrence::{close_table, verify_table};
use momcl_core::ring::{ExpFamily, PolyFamily, PsiRealization};
use momcl_core::scalar::Scalar;
use momcl_core::series::Multipliers;
use momcl_core::solutions::{build_delta_h, build_h1, build_hstar0, build_tthk};
use momcl_core::verify::{verify_potential, ConditionReport, ConditionSet, VerifyConfig};
use num_rational::BigRational;
use rand::Rng;
use rand::SeedableRng;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "momcl", about = "14-moment closure engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Rational,
    Float,
}

#[derive(Subcommand)]
enum Command {
    /// Build the potentials and write the theta table and closure tensors.
    Generate {
        #[arg(long, default_value_t = 4)]
        order: i64,
        #[arg(long)]
        params: PathBuf,
        /// Theta-table JSON overriding the params file's seeds.
        #[arg(long)]
        seed_table: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "rational")]
        mode: Mode,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// Run the full verification suite and write a report.
    Verify {
        #[arg(long, default_value_t = 4)]
        order: i64,
        #[arg(long)]
        params: PathBuf,
        /// Theta-table JSON overriding the params file's seeds.
        #[arg(long)]
        seed_table: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 25)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        #[arg(long, value_enum, default_value = "rational")]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-order antisymmetry profile of the closure fluxes (CSV).
    Profile {
        #[arg(long, default_value_t = 4)]
        order: i64,
        #[arg(long)]
        params: PathBuf,
        /// Theta-table JSON overriding the params file's seeds.
        #[arg(long)]
        seed_table: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "rational")]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the 14x14 boost matrix for a velocity.
    Xmat {
        /// Comma-separated components, rationals allowed: "1/2,0,-3".
        #[arg(long)]
        velocity: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the thermodynamic integration-constant combination on a table.
    Appendix2 {
        #[arg(long)]
        thermo: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Failed,
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<momcl_core::json::CodecError> for CliError {
    fn from(e: momcl_core::json::CodecError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failed) => ExitCode::from(1),
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            order,
            params,
            seed_table,
            mode,
            out,
            rng_seed,
        } => {
            let order = check_order(order)?;
            let dto = read_params_with_seeds(&params, seed_table.as_deref())?;
            match mode {
                Mode::Rational => generate::<BigRational>(order, &dto, &out, rng_seed, &PolyFamily),
                Mode::Float => generate::<f64>(order, &dto, &out, rng_seed, &ExpFamily),
            }
        }
        Command::Verify {
            order,
            params,
            seed_table,
            tol,
            points,
            rng_seed,
            mode,
            out,
        } => {
            let order = check_order(order)?;
            if tol <= 0.0 || points == 0 {
                return Err(CliError::Input("tol must be positive, points >= 1".into()));
            }
            let dto = read_params_with_seeds(&params, seed_table.as_deref())?;
            let reports = match mode {
                Mode::Rational => {
                    verify_suite::<BigRational>(order, &dto, tol, points, rng_seed, &PolyFamily)?
                }
                Mode::Float => verify_suite::<f64>(order, &dto, tol, points, rng_seed, &ExpFamily)?,
            };
            let text = serde_json::to_string_pretty(&reports).unwrap();
            match &out {
                Some(p) => std::fs::write(p, &text)?,
                None => emit(&text, true),
            }
            for r in &reports {
                let status = if r.pass { "pass" } else { "FAIL" };
                eprintln!(
                    "{status}  {}  (max rel {:.3e})",
                    r.condition, r.max_rel_residual
                );
            }
            if reports.iter().all(|r| r.pass) {
                Ok(())
            } else {
                Err(CliError::Failed)
            }
        }
        Command::Profile {
            order,
            params,
            seed_table,
            mode,
            out,
        } => {
            let order = check_order(order)?;
            let dto = read_params_with_seeds(&params, seed_table.as_deref())?;
            let csv = match mode {
                Mode::Rational => profile::<BigRational>(order, &dto, &PolyFamily)?,
                Mode::Float => profile::<f64>(order, &dto, &ExpFamily)?,
            };
            match &out {
                Some(p) => std::fs::write(p, &csv)?,
                None => emit(&csv, false),
            }
            Ok(())
        }
        Command::Xmat { velocity, out } => {
            let comps: Vec<BigRational> = velocity
                .split(',')
                .map(|s| {
                    BigRational::parse_str(s)
                        .ok_or_else(|| CliError::Input(format!("bad velocity component '{s}'")))
                })
                .collect::<Result<_, _>>()?;
            if comps.len() != 3 {
                return Err(CliError::Input("velocity needs three components".into()));
            }
            let v = Velocity([comps[0].clone(), comps[1].clone(), comps[2].clone()]);
            let dto = xmatrix_to_dto(&build_x(&v));
            let text = serde_json::to_string_pretty(&dto).unwrap();
            match &out {
                Some(p) => std::fs::write(p, &text)?,
                None => emit(&text, true),
            }
            Ok(())
        }
        Command::Appendix2 { thermo, tol, out } => {
            if tol <= 0.0 {
                return Err(CliError::Input("tol must be positive".into()));
            }
            let text = std::fs::read_to_string(&thermo)?;
            let table = ThermoTable::from_csv(&text).map_err(|e| CliError::Input(e.to_string()))?;
            let report = verify_integration_constant(&table, tol)
                .map_err(|e| CliError::Input(e.to_string()))?;
            let value = serde_json::json!({
                "constant": report.constant,
                "rho_independent": report.rho_independent,
                "tf_constant": report.tf_constant,
                "ode_satisfied": report.ode_satisfied,
                "first_order_symmetry": report.first_order_symmetry,
                "max_rho_derivative": report.max_rho_derivative,
                "max_tf_deviation": report.max_tf_deviation,
                "max_ode_residual": report.max_ode_residual,
            });
            let text = serde_json::to_string_pretty(&value).unwrap();
            match &out {
                Some(p) => std::fs::write(p, &text)?,
                None => emit(&text, true),
            }
            if report.rho_independent && report.tf_constant && report.ode_satisfied {
                Ok(())
            } else {
                Err(CliError::Failed)
            }
        }
    }
}

/// Write to stdout, tolerating a closed pipe.
fn emit(text: &str, newline: bool) {
    use std::io::Write;
    let mut out = std::io::stdout();
    let _ = out.write_all(text.as_bytes());
    if newline {
        let _ = out.write_all(b"\n");
    }
}

fn check_order(order: i64) -> Result<usize, CliError> {
    if !(0..=10).contains(&order) {
        return Err(CliError::Input("order must be in 0..=10".into()));
    }
    Ok(order as usize)
}

fn read_params(path: &Path) -> Result<ParamsFileDto, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_params_with_seeds(
    params: &Path,
    seed_table: Option<&Path>,
) -> Result<ParamsFileDto, CliError> {
    let mut dto = read_params(params)?;
    if let Some(path) = seed_table {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        dto.theta_seeds = Some(serde_json::from_str(&text)?);
    }
    Ok(dto)
}

fn eval_point_or_default<T: Scalar>(dto: &ParamsFileDto) -> Result<Multipliers<T>, CliError> {
    match &dto.eval_point {
        Some(p) => Ok(multipliers_from_dto(p)?),
        None => Ok(Multipliers::sample_point()),
    }
}

fn generate<T: Scalar>(
    order: usize,
    dto: &ParamsFileDto,
    out: &Path,
    _rng_seed: u64,
    real: &dyn PsiRealization<T>,
) -> Result<(), CliError> {
    let build_order = order + 2;
    let loaded = load_params::<T>(dto, build_order)?;
    let at = eval_point_or_default::<T>(dto)?;
    let dh = build_delta_h(&loaded.params, build_order);
    let h = build_h1::<T>(build_order)
        .add(&dh)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let tensors = flux_tensors(&h, order, &at, real).map_err(|e| CliError::Input(e.to_string()))?;
    std::fs::create_dir_all(out)?;
    let theta_text =
        serde_json::to_string_pretty(&theta_table_to_dto(&loaded.params.theta)).unwrap();
    std::fs::write(out.join("theta.json"), theta_text)?;
    let closure_text = serde_json::to_string_pretty(&closure_to_dto(&tensors)).unwrap();
    std::fs::write(out.join("closure.json"), closure_text)?;
    let series_text = serde_json::to_string_pretty(&series_to_dto(&dh)).unwrap();
    std::fs::write(out.join("deviation.json"), series_text)?;
    Ok(())
}

fn profile<T: Scalar>(
    order: usize,
    dto: &ParamsFileDto,
    real: &dyn PsiRealization<T>,
) -> Result<String, CliError> {
    let build_order = order + 2;
    let loaded = load_params::<T>(dto, build_order)?;
    let at = eval_point_or_default::<T>(dto)?;
    let h = build_h1::<T>(build_order)
        .add(&build_delta_h(&loaded.params, build_order))
        .map_err(|e| CliError::Input(e.to_string()))?;
    let tensors = flux_tensors(&h, order, &at, real).map_err(|e| CliError::Input(e.to_string()))?;
    let mut csv = String::from("order,antisym_F,antisym_G\n");
    for (n, (af, ag)) in antisym_profile(&tensors).iter().enumerate() {
        csv.push_str(&format!("{n},{af:e},{ag:e}\n"));
    }
    Ok(csv)
}

fn report(condition: &str, max_rel: f64, pass: bool, note: Option<String>) -> ConditionReport {
    ConditionReport {
        condition: condition.to_string(),
        max_abs_residual: max_rel,
        max_rel_residual: max_rel,
        exact_zero: max_rel == 0.0,
        worst_point: note,
        pass,
    }
}

fn verify_suite<T: Scalar>(
    order: usize,
    dto: &ParamsFileDto,
    tol: f64,
    points: usize,
    rng_seed: u64,
    real: &dyn PsiRealization<T>,
) -> Result<Vec<ConditionReport>, CliError> {
    let build_order = order + 2;
    let loaded = load_params::<T>(dto, build_order)?;
    let params = &loaded.params;
    let mut out: Vec<ConditionReport> = Vec::new();

    // coefficient recurrences: closure of the seeds plus exhaustive checks
    let closure = close_table(&loaded.theta_seeds, build_order);
    let violations = verify_table(&closure.table, build_order);
    out.push(report(
        "theta_recurrence",
        violations.len() as f64,
        closure.is_consistent() && violations.is_empty(),
        violations
            .first()
            .map(|v| format!("{} at {:?}", v.relation, v.key)),
    ));

    let cfg = VerifyConfig {
        order,
        points,
        tol,
        rng_seed,
    };
    let h1 = build_h1::<T>(build_order);
    let wrap = |r: Result<Vec<ConditionReport>, momcl_core::series::SeriesError>| {
        r.map_err(|e| CliError::Input(e.to_string()))
    };

    let named =
        |out: &mut Vec<ConditionReport>, prefix: &str, mut reports: Vec<ConditionReport>| {
            for r in reports.iter_mut() {
                r.condition = format!("{prefix}.{}", r.condition);
            }
            out.extend(reports);
        };

    named(
        &mut out,
        "h1",
        wrap(verify_potential(&h1, ConditionSet::Core, &cfg, real))?,
    );

    let dh = build_delta_h(params, build_order);
    named(
        &mut out,
        "deviation",
        wrap(verify_potential(&dh, ConditionSet::Core, &cfg, real))?,
    );

    let h0 = build_hstar0(params, build_order);
    named(
        &mut out,
        "matrix",
        wrap(verify_potential(
            &h0,
            ConditionSet::Hstar0 {
                theta: &params.theta,
            },
            &cfg,
            real,
        ))?,
    );

    let tt = build_tthk(params, build_order);
    named(
        &mut out,
        "pair",
        wrap(verify_potential(
            &dh,
            ConditionSet::Vector {
                hstar0: &h0,
                tthk: &tt,
            },
            &cfg,
            real,
        ))?,
    );

    let h = h1.add(&dh).map_err(|e| CliError::Input(e.to_string()))?;
    named(
        &mut out,
        "full",
        wrap(verify_potential(&h, ConditionSet::Galilean, &cfg, real))?,
    );

    // boost matrix group properties, exact in the scalar type
    {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed ^ 0x9e37_79b9);
        let mut max_dev = 0.0f64;
        let mut routes_dev = 0.0f64;
        for _ in 0..20 {
            let mut comp = || T::from_ratio(rng.gen_range(-12..=12), rng.gen_range(1..=6));
            let v = Velocity([comp(), comp(), comp()]);
            let u = Velocity([comp(), comp(), comp()]);
            let inv = build_x(&v.neg()).mul(&build_x(&v));
            for i in 0..14 {
                for j in 0..14 {
                    let want = if i == j { T::one() } else { T::zero() };
                    let dev = (inv.entry(i, j).clone() - want).abs().to_f64_lossy();
                    max_dev = max_dev.max(dev);
                }
            }
            let lhs = build_x(&u).mul(&build_x(&v));
            let rhs = build_x(&u.add(&v));
            for i in 0..14 {
                for j in 0..14 {
                    let dev = (lhs.entry(i, j).clone() - rhs.entry(i, j).clone())
                        .abs()
                        .to_f64_lossy();
                    max_dev = max_dev.max(dev);
                }
            }
            // explicit multiplier law vs matrix route
            let mut s = || T::from_ratio(rng.gen_range(-9..=9), rng.gen_range(1..=5));
            let m = Multipliers::new(
                s(),
                momcl_core::symtensor::SymTensor::vector([s(), s(), s()]),
                momcl_core::symtensor::SymTensor::matrix([s(), s(), s(), s(), s(), s()]),
                s(),
                momcl_core::symtensor::SymTensor::vector([s(), s(), s()]),
            );
            let a = transform_multipliers(&m, &v);
            let b = transform_multipliers_matrix(&m, &v);
            let dev = [
                (a.mu.clone() - b.mu.clone()).abs().to_f64_lossy(),
                a.mu_vec.add(&b.mu_vec.scale(&-T::one())).max_abs(),
                a.mu_mat.add(&b.mu_mat.scale(&-T::one())).max_abs(),
                (a.lam.clone() - b.lam.clone()).abs().to_f64_lossy(),
                a.lam_vec.add(&b.lam_vec.scale(&-T::one())).max_abs(),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            routes_dev = routes_dev.max(dev);
        }
        out.push(report(
            "galilean.matrix_group",
            max_dev,
            max_dev <= tol,
            None,
        ));
        out.push(report(
            "galilean.multiplier_routes",
            routes_dev,
            routes_dev <= tol,
            None,
        ));
    }

    // velocity derivative of the multiplier transform vs closed forms
    {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed ^ 0x51f1_5eed);
        let h = 1e-5;
        let mut max_dev = 0.0f64;
        for _ in 0..10 {
            let mut s = || rng.gen_range(-0.9..0.9f64);
            let m = Multipliers::<f64>::new(
                s(),
                momcl_core::symtensor::SymTensor::vector([s(), s(), s()]),
                momcl_core::symtensor::SymTensor::matrix([s(), s(), s(), s(), s(), s()]),
                1.0 + s().abs(),
                momcl_core::symtensor::SymTensor::vector([s(), s(), s()]),
            );
            for i in 0..3usize {
                let mut vp = Velocity::<f64>::zero();
                vp.0[i] = h;
                let mut vm = Velocity::<f64>::zero();
                vm.0[i] = -h;
                let p = transform_multipliers(&m, &vp);
                let n = transform_multipliers(&m, &vm);
                let fd_mu = (p.mu - n.mu) / (2.0 * h);
                max_dev = max_dev.max((fd_mu + m.mu_vec.get(&[i as u8 + 1])).abs());
                let fd_lam = (p.lam - n.lam) / (2.0 * h);
                max_dev = max_dev.max((fd_lam + m.lam_vec.get(&[i as u8 + 1])).abs());
                for hh in 0..3usize {
                    let fd = (p.lam_vec.get(&[hh as u8 + 1]) - n.lam_vec.get(&[hh as u8 + 1]))
                        / (2.0 * h);
                    max_dev = max_dev.max(fd.abs());
                }
            }
        }
        out.push(report(
            "galilean.transform_derivatives",
            max_dev,
            max_dev <= 1e-6,
            None,
        ));
    }

    // low-order flux symmetry and the closed-form remainder route
    {
        let at = eval_point_or_default::<T>(dto)?;
        let check_order = order.min(3);
        let tensors = flux_tensors(&dh, check_order, &at, real)
            .map_err(|e| CliError::Input(e.to_string()))?;
        let parts = tensors.antisym_parts();
        let low = parts
            .iter()
            .take(3)
            .map(|(f, g)| f.max_abs().max(g.max_abs()))
            .fold(0.0, f64::max);
        out.push(report("closure.low_order_symmetry", low, low <= tol, None));

        let (df, dg) = delta_flux(params, check_order, &at);
        let mut dev = 0.0f64;
        for n in 0..=check_order {
            dev = dev.max(parts[n].0.sub(&df[n].antisym(0, 1)).max_abs());
            dev = dev.max(parts[n].1.sub(&dg[n].antisym(0, 1)).max_abs());
        }
        out.push(report("closure.remainder_routes", dev, dev <= tol, None));
    }

    // the obstruction pinning the excluded constant to zero
    {
        let mut ok = true;
        let mut note = None;
        for degree in 0..=4usize {
            let r = check_beta0(&Beta0Ansatz::homogeneous(degree, loaded.beta0.clone()));
            let expect = r.solvable && r.f1_forced_zero && r.f2_forced_zero;
            if !expect {
                ok = false;
                note = Some(format!(
                    "degree {degree}: solvable={} (nonzero excluded constant obstructs the ansatz)",
                    r.solvable
                ));
                break;
            }
        }
        let dev = if loaded.beta0.is_zero() { 0.0 } else { 1.0 };
        out.push(report("beta0_obstruction", dev, ok, note));
    }

    Ok(out)
}
