//! Least-squares identification of mass, damping and thruster
//! coefficients from recorded trajectories.
//!
//! The equations of motion are linear in every entry of `M`, of each
//! `D_i` and in the thrust coefficients once `nu_dot`, `nu`, `eta` and the
//! commands are known, Coriolis included. The free coefficients are
//! therefore found by a single linear solve.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydro::{self, VehicleParams};
use crate::simgen::RawRow;

/// Condition number (on column-normalized data) above which the
/// regression is declared rank deficient.
pub const MAX_CONDITION: f64 = 1e10;

/// One identifiable scalar. Symmetric matrix entries are a single
/// coefficient with `i <= j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coefficient {
    Mass { i: usize, j: usize },
    Damping { axis: usize, i: usize, j: usize },
    Thrust { thruster: usize },
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Coefficient::Mass { i, j } => write!(f, "M_{i}_{j}"),
            Coefficient::Damping { axis, i, j } => write!(f, "D{}_{i}_{j}", axis + 1),
            Coefficient::Thrust { thruster } => write!(f, "k{}", thruster + 1),
        }
    }
}

impl Coefficient {
    pub fn get(&self, p: &VehicleParams) -> f64 {
        match *self {
            Coefficient::Mass { i, j } => p.mass[(i, j)],
            Coefficient::Damping { axis, i, j } => p.damping[axis][(i, j)],
            Coefficient::Thrust { thruster } => p.thruster_coeffs[thruster],
        }
    }

    pub fn set(&self, p: &mut VehicleParams, v: f64) {
        match *self {
            Coefficient::Mass { i, j } => {
                p.mass[(i, j)] = v;
                p.mass[(j, i)] = v;
            }
            Coefficient::Damping { axis, i, j } => {
                p.damping[axis][(i, j)] = v;
                p.damping[axis][(j, i)] = v;
            }
            Coefficient::Thrust { thruster } => p.thruster_coeffs[thruster] = v,
        }
    }

    /// Regression column entry: the contribution of a unit coefficient to
    /// `M nu_dot + C(nu) nu + d(nu) - tau`.
    fn basis(&self, p: &VehicleParams, row: &RawRow) -> Vector6<f64> {
        let unit = |i: usize, j: usize| {
            let mut e = Matrix6::zeros();
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            e
        };
        match *self {
            Coefficient::Mass { i, j } => {
                let e = unit(i, j);
                e * row.nu_dot + hydro::coriolis(&e, &row.nu) * row.nu
            }
            Coefficient::Damping { axis, i, j } => unit(i, j) * row.nu * row.nu[axis].abs(),
            Coefficient::Thrust { thruster } => {
                let n = row.command[thruster];
                -p.allocation.column(thruster) * (n.abs() * n)
            }
        }
    }
}

/// Which coefficient groups are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentMask {
    pub mass: bool,
    pub damping: bool,
    pub thrusters: bool,
}

impl Default for IdentMask {
    /// Mass and damping free, thrust coefficients fixed. With all three
    /// free the equations are homogeneous and the scale is unidentifiable.
    fn default() -> Self {
        IdentMask {
            mass: true,
            damping: true,
            thrusters: false,
        }
    }
}

/// Coefficients selected by `mask` that are nonzero in `params` and only
/// touch free DOFs (clamped DOFs carry no information).
pub fn free_coefficients(params: &VehicleParams, mask: IdentMask) -> Vec<Coefficient> {
    let dofs = params.free_indices();
    let mut out = Vec::new();
    let pairs: Vec<(usize, usize)> = dofs
        .iter()
        .flat_map(|&i| dofs.iter().filter(move |&&j| j >= i).map(move |&j| (i, j)))
        .collect();
    if mask.mass {
        for &(i, j) in &pairs {
            if params.mass[(i, j)] != 0.0 {
                out.push(Coefficient::Mass { i, j });
            }
        }
    }
    if mask.damping {
        for &axis in &dofs {
            for &(i, j) in &pairs {
                if params.damping[axis][(i, j)] != 0.0 {
                    out.push(Coefficient::Damping { axis, i, j });
                }
            }
        }
    }
    if mask.thrusters {
        out.extend((0..params.n_thrusters()).map(|thruster| Coefficient::Thrust { thruster }));
    }
    out
}

#[derive(Debug, Clone)]
pub struct IdentProblem<'a> {
    pub rows: &'a [RawRow],
    /// Supplies the fixed coefficients, restoring terms and allocation.
    pub base: VehicleParams,
    pub free: Vec<Coefficient>,
    /// Ridge weight on the column-normalized coefficients.
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct IdentResult {
    pub params: VehicleParams,
    pub estimates: Vec<(Coefficient, f64)>,
    /// Root mean square equation residual over free-DOF equations, N or N m.
    pub rms_residual: f64,
    pub condition: f64,
    pub equations: usize,
}

/// Residual `M nu_dot + C(nu) nu + d(nu) + g(eta) - tau` of one row.
pub fn equation_residual(params: &VehicleParams, row: &RawRow) -> Vector6<f64> {
    let mut tau = Vector6::zeros();
    for (j, (&k, &n)) in params.thruster_coeffs.iter().zip(&row.command).enumerate() {
        tau += params.allocation.column(j) * hydro::thrust(k, n);
    }
    params.mass * row.nu_dot
        + hydro::coriolis(&params.mass, &row.nu) * row.nu
        + hydro::damping_force(&params.damping, &row.nu)
        + hydro::restoring_force(params, &row.eta)
        - tau
}

/// RMS of the free-DOF equation residuals of `params` on `rows`.
pub fn rms_residual(params: &VehicleParams, rows: &[RawRow]) -> f64 {
    let dofs = params.free_indices();
    let mut sum = 0.0;
    for row in rows {
        let r = equation_residual(params, row);
        sum += dofs.iter().map(|&d| r[d] * r[d]).sum::<f64>();
    }
    (sum / (rows.len() * dofs.len()).max(1) as f64).sqrt()
}

pub fn identify(problem: &IdentProblem<'_>) -> Result<IdentResult> {
    let p = problem.free.len();
    let dofs = problem.base.free_indices();
    let m = problem.base.n_thrusters();
    if p == 0 {
        return Err(Error::Config(
            "identification needs at least one free coefficient".into(),
        ));
    }
    if !(problem.lambda >= 0.0) {
        return Err(Error::Config(format!(
            "ridge weight {} must be >= 0",
            problem.lambda
        )));
    }
    if let Some(row) = problem.rows.iter().find(|r| r.command.len() != m) {
        return Err(Error::ShapeMismatch {
            expected: format!("{m} thruster commands"),
            got: format!("{} at t = {}", row.command.len(), row.t),
        });
    }
    let n_eq = problem.rows.len() * dofs.len();
    if n_eq < p {
        return Err(Error::DegenerateData(format!(
            "{n_eq} equations for {p} free coefficients"
        )));
    }
    let mut fixed = problem.base.clone();
    for c in &problem.free {
        c.set(&mut fixed, 0.0);
    }
    let mut x = DMatrix::<f64>::zeros(n_eq, p);
    let mut y = DVector::<f64>::zeros(n_eq);
    for (r, row) in problem.rows.iter().enumerate() {
        let r0 = equation_residual(&fixed, row);
        let cols: Vec<Vector6<f64>> = problem
            .free
            .iter()
            .map(|c| c.basis(&problem.base, row))
            .collect();
        for (e, &d) in dofs.iter().enumerate() {
            let eq = r * dofs.len() + e;
            y[eq] = -r0[d];
            for (c, col) in cols.iter().enumerate() {
                x[(eq, c)] = col[d];
            }
        }
    }
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("identification data"));
    }
    let scale: Vec<f64> = (0..p).map(|c| x.column(c).norm()).collect();
    if scale.contains(&0.0) {
        return Err(Error::RankDeficient {
            condition: f64::INFINITY,
        });
    }
    for (c, &s) in scale.iter().enumerate() {
        x.column_mut(c).scale_mut(1.0 / s);
    }
    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    let condition = smax / smin;
    if !(condition <= MAX_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    let u = svd.u.as_ref().expect("u computed");
    let vt = svd.v_t.as_ref().expect("v_t computed");
    let uty = u.transpose() * &y;
    let shrunk = DVector::from_iterator(
        p,
        sv.iter()
            .zip(uty.iter())
            .map(|(&s, &b)| s * b / (s * s + problem.lambda)),
    );
    let z = vt.transpose() * shrunk;

    let mut params = problem.base.clone();
    let mut estimates = Vec::with_capacity(p);
    for (c, coeff) in problem.free.iter().enumerate() {
        let v = z[c] / scale[c];
        coeff.set(&mut params, v);
        estimates.push((*coeff, v));
    }
    let rms = rms_residual(&params, problem.rows);
    Ok(IdentResult {
        params,
        estimates,
        rms_residual: rms,
        condition,
        equations: n_eq,
    })
}

impl IdentResult {
    /// Delimited report: coefficient, true value (if known), estimate,
    /// relative error, followed by the RMS residual and condition number.
    pub fn write_report(&self, truth: Option<&VehicleParams>, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::format("identification report", e.to_string());
        w.write_record(["coefficient", "true", "estimate", "relative_error"])
            .map_err(err)?;
        for (c, est) in &self.estimates {
            let (t, rel) = match truth {
                Some(p) => {
                    let t = c.get(p);
                    (t.to_string(), ((est - t) / t).abs().to_string())
                }
                None => (String::new(), String::new()),
            };
            w.write_record([c.to_string(), t, est.to_string(), rel])
                .map_err(err)?;
        }
        w.write_record(["rms_residual", "", &self.rms_residual.to_string(), ""])
            .map_err(err)?;
        w.write_record(["condition", "", &self.condition.to_string(), ""])
            .map_err(err)?;
        w.flush()?;
        Ok(())
    }

    /// Largest relative error against known parameters.
    pub fn max_relative_error(&self, truth: &VehicleParams) -> f64 {
        self.estimates
            .iter()
            .map(|(c, est)| ((est - c.get(truth)) / c.get(truth)).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydro::VehicleState;
    use crate::simgen::{
        add_noise, generate_trajectory, ExcitationConfig, ExcitationPlan, NoiseSigmas, SimConfig,
    };

    fn rows(params: &VehicleParams, duration: f64, seed: u64) -> Vec<RawRow> {
        let exc = ExcitationConfig {
            segment_length: 500.0,
            ..ExcitationConfig::default()
        };
        let plan = ExcitationPlan::draw(exc, duration, params.n_thrusters(), seed).unwrap();
        let cfg = SimConfig {
            duration,
            ..SimConfig::default()
        };
        generate_trajectory(params, &plan, &cfg, VehicleState::zero(), 0)
            .unwrap()
            .rows
    }

    fn problem<'a>(rows: &'a [RawRow], truth: &VehicleParams, mask: IdentMask) -> IdentProblem<'a> {
        let mut base = truth.clone();
        // start from a wrong guess so the fixed part cannot leak the answer
        let free = free_coefficients(truth, mask);
        for c in &free {
            c.set(&mut base, c.get(truth) * 1.7);
        }
        IdentProblem {
            rows,
            base,
            free,
            lambda: 0.0,
        }
    }

    #[test]
    fn mass_and_damping_are_recovered() {
        let truth = VehicleParams::nominal();
        let data = rows(&truth, 2000.0, 1);
        let result = identify(&problem(&data, &truth, IdentMask::default())).unwrap();
        assert!(result.estimates.len() >= 10);
        assert!(
            result.max_relative_error(&truth) < 1e-3,
            "{}",
            result.max_relative_error(&truth)
        );
        assert!(result.rms_residual < 1e-8);
    }

    #[test]
    fn damping_and_thrusters_are_recovered() {
        let truth = VehicleParams::nominal();
        let data = rows(&truth, 2000.0, 2);
        let mask = IdentMask {
            mass: false,
            damping: true,
            thrusters: true,
        };
        let result = identify(&problem(&data, &truth, mask)).unwrap();
        assert!(result
            .estimates
            .iter()
            .any(|(c, _)| matches!(c, Coefficient::Thrust { .. })));
        assert!(result.max_relative_error(&truth) < 1e-3);
    }

    #[test]
    fn zero_velocity_data_is_rank_deficient() {
        let truth = VehicleParams::nominal();
        let data: Vec<RawRow> = (0..100)
            .map(|t| RawRow {
                t: t as f64,
                nu_dot: Vector6::zeros(),
                nu: Vector6::zeros(),
                eta: Vector6::zeros(),
                command: vec![0.0; 3],
            })
            .collect();
        let err = identify(&problem(&data, &truth, IdentMask::default())).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn fully_free_problem_is_rank_deficient() {
        let truth = VehicleParams::nominal();
        let data = rows(&truth, 1000.0, 3);
        let mask = IdentMask {
            mass: true,
            damping: true,
            thrusters: true,
        };
        let err = identify(&problem(&data, &truth, mask)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }), "{err}");
    }

    #[test]
    fn duplicating_rows_leaves_estimates_unchanged() {
        let truth = VehicleParams::nominal();
        let clean = rows(&truth, 1000.0, 4);
        let noisy = add_noise(
            &crate::simgen::RawTrajectory {
                label: 0,
                rows: clean,
            },
            &NoiseSigmas::default(),
            5,
        )
        .unwrap()
        .rows;
        let doubled: Vec<RawRow> = noisy.iter().chain(&noisy).cloned().collect();
        let a = identify(&problem(&noisy, &truth, IdentMask::default())).unwrap();
        let b = identify(&problem(&doubled, &truth, IdentMask::default())).unwrap();
        for ((_, x), (_, y)) in a.estimates.iter().zip(&b.estimates) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn fit_residual_never_exceeds_truth_residual() {
        let truth = VehicleParams::nominal();
        let clean = rows(&truth, 1000.0, 6);
        let noisy = add_noise(
            &crate::simgen::RawTrajectory {
                label: 0,
                rows: clean,
            },
            &NoiseSigmas::default(),
            7,
        )
        .unwrap()
        .rows;
        let result = identify(&problem(&noisy, &truth, IdentMask::default())).unwrap();
        assert!(result.rms_residual <= rms_residual(&truth, &noisy) + 1e-12);
    }

    #[test]
    fn error_shrinks_with_more_noisy_data() {
        let truth = VehicleParams::nominal();
        let traj = crate::simgen::RawTrajectory {
            label: 0,
            rows: rows(&truth, 8000.0, 8),
        };
        let sigmas = NoiseSigmas {
            nu_dot: [0.005; 6],
            nu: [0.0; 6],
            eta: [0.0; 6],
        };
        let mask = IdentMask {
            mass: false,
            damping: true,
            thrusters: false,
        };
        let draws: Vec<Vec<RawRow>> = (0..10)
            .map(|seed| add_noise(&traj, &sigmas, seed).unwrap().rows)
            .collect();
        // mean squared coefficient error over noise draws
        let errs: Vec<f64> = [500, 2000, 8000]
            .iter()
            .map(|&n| {
                let mut total = 0.0;
                for noisy in &draws {
                    let r = identify(&problem(&noisy[..n], &truth, mask)).unwrap();
                    total += r
                        .estimates
                        .iter()
                        .map(|(c, e)| (e - c.get(&truth)).powi(2))
                        .sum::<f64>();
                }
                total / draws.len() as f64
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn ridge_shrinks_towards_zero() {
        let truth = VehicleParams::nominal();
        let data = rows(&truth, 1000.0, 10);
        let mut prob = problem(&data, &truth, IdentMask::default());
        let plain = identify(&prob).unwrap();
        prob.lambda = 1e3;
        let ridge = identify(&prob).unwrap();
        let norm = |r: &IdentResult| r.estimates.iter().map(|(_, v)| v * v).sum::<f64>();
        assert!(norm(&ridge) < norm(&plain));
        assert!(ridge.rms_residual >= plain.rms_residual);
    }

    #[test]
    fn report_lists_every_coefficient() {
        let truth = VehicleParams::nominal();
        let data = rows(&truth, 1000.0, 11);
        let result = identify(&problem(&data, &truth, IdentMask::default())).unwrap();
        let mut out = Vec::new();
        result.write_report(Some(&truth), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), result.estimates.len() + 3);
        assert!(text.starts_with("coefficient,true,estimate,relative_error\nM_0_0,85,"));
        assert!(text.contains("\ncondition,,"));
    }

    #[test]
    fn clamped_dofs_are_excluded() {
        let truth = VehicleParams::nominal();
        for c in free_coefficients(
            &truth,
            IdentMask {
                mass: true,
                damping: true,
                thrusters: true,
            },
        ) {
            match c {
                Coefficient::Mass { i, j } | Coefficient::Damping { i, j, .. } => {
                    assert!(truth.free_dofs[i] && truth.free_dofs[j]);
                }
                Coefficient::Thrust { .. } => {}
            }
        }
    }
}
