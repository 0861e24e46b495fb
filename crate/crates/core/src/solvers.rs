//! Reference solvers for `min ½‖x − z‖² + ν‖Dx‖₁ + ι_C(x)`: dual
//! (inertial) forward-backward and (strongly convex) Chambolle–Pock.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::TraceTable;
use crate::linops::LinearOperator;
use crate::prox::{hardtanh, project_box, BoxConstraint};
use crate::tensor::{FeatureMap, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Dfb,
    Difb,
    Cp,
    Sccp,
    Ah,
}

/// Step parameters of one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub tau: f64,
    /// Dual inertia (D(i)FB).
    pub rho: f64,
    /// Primal proximal weight; `+∞` in the dual forward-backward regimes.
    pub mu: f64,
    /// Primal extrapolation (CP family).
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSchedule {
    pub regime: Regime,
    /// Inertia parameter `a` of the accelerated dual scheme.
    pub a: f64,
    pub steps: Vec<Step>,
}

fn check_norm(norm_d: f64) -> Result<()> {
    if !(norm_d > 0.0 && norm_d.is_finite()) {
        return Err(Error::Parameter(format!(
            "operator norm {norm_d} must be > 0"
        )));
    }
    Ok(())
}

/// `t_k = (k + a − 1)/a`.
pub fn inertia_t(k: usize, a: f64) -> f64 {
    (k as f64 + a - 1.0) / a
}

/// `ρ_k = (t_k − 1)/t_{k+1}`, with `k` counted from 1.
pub fn inertia_rho(k: usize, a: f64) -> f64 {
    (inertia_t(k, a) - 1.0) / inertia_t(k + 1, a)
}

/// Dual forward-backward steps: plain `τ = 1.99/‖D‖²`, or accelerated
/// `τ = 0.99/‖D‖²` with inertia `ρ_k = (t_k − 1)/t_{k+1}` for `k = 1…K`.
pub fn difb_schedule(
    a: f64,
    norm_d: f64,
    accelerated: bool,
    iterations: usize,
) -> Result<SolverSchedule> {
    check_norm(norm_d)?;
    if accelerated && !(a > 2.0) {
        return Err(Error::Parameter(format!(
            "inertia parameter a = {a} must be > 2"
        )));
    }
    let n2 = norm_d * norm_d;
    let steps = (1..=iterations)
        .map(|k| Step {
            tau: if accelerated { 0.99 / n2 } else { 1.99 / n2 },
            rho: if accelerated { inertia_rho(k, a) } else { 0.0 },
            mu: f64::INFINITY,
            alpha: 0.0,
        })
        .collect();
    Ok(SolverSchedule {
        regime: if accelerated {
            Regime::Difb
        } else {
            Regime::Dfb
        },
        a,
        steps,
    })
}

/// Chambolle–Pock steps. Plain: constant `μ`, `τ = 0.99/(μ‖D‖²)`, `α = 1`.
/// Accelerated: `τ₀ = 0.99/(μ₀‖D‖²)`, `α_k = (1 + 2μ_k)^{-1/2}`,
/// `μ_{k+1} = α_k μ_k`, `τ_{k+1} = τ_k/α_k`.
pub fn sccp_schedule(
    mu0: f64,
    norm_d: f64,
    accelerated: bool,
    iterations: usize,
) -> Result<SolverSchedule> {
    check_norm(norm_d)?;
    if !(mu0 > 0.0 && mu0.is_finite()) {
        return Err(Error::Parameter(format!("mu0 {mu0} must be > 0")));
    }
    let mut mu = mu0;
    let mut tau = 0.99 / (mu0 * norm_d * norm_d);
    let mut steps = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let alpha = if accelerated {
            1.0 / (1.0 + 2.0 * mu).sqrt()
        } else {
            1.0
        };
        steps.push(Step {
            tau,
            rho: 0.0,
            mu,
            alpha,
        });
        if accelerated {
            mu *= alpha;
            tau /= alpha;
        }
    }
    Ok(SolverSchedule {
        regime: if accelerated {
            Regime::Sccp
        } else {
            Regime::Cp
        },
        a: 0.0,
        steps,
    })
}

/// Arrow–Hurwicz steps: constant `(τ, μ)`, no extrapolation.
pub fn ah_schedule(tau: f64, mu: f64, iterations: usize) -> SolverSchedule {
    SolverSchedule {
        regime: Regime::Ah,
        a: 0.0,
        steps: vec![
            Step {
                tau,
                rho: 0.0,
                mu,
                alpha: 0.0,
            };
            iterations
        ],
    }
}

/// `½‖x − z‖² + ν‖Dx‖₁` when `x ∈ C` (1e-12 slack), `+∞` otherwise.
pub fn objective(
    x: &Image,
    z: &Image,
    d: &dyn LinearOperator,
    nu: f64,
    c: &BoxConstraint,
) -> Result<f64> {
    x.ensure_same_shape(z, "objective")?;
    if !x.data().iter().all(|&v| c.contains(v, 1e-12)) {
        return Ok(f64::INFINITY);
    }
    let data = 0.5 * x.sub(z).norm_sq();
    let reg = if nu == 0.0 {
        0.0
    } else {
        nu * d.apply(x)?.l1()
    };
    Ok(data + reg)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub objective: Vec<f64>,
    pub primal_change: Vec<f64>,
    pub dual_change: Vec<f64>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.objective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective.is_empty()
    }

    pub fn table(&self) -> TraceTable {
        let mut t = TraceTable::new(&["iter", "F", "primal_change", "dual_change"]);
        for i in 0..self.len() {
            t.push_row(vec![
                (i + 1).into(),
                self.objective[i].into(),
                self.primal_change[i].into(),
                self.dual_change[i].into(),
            ]);
        }
        t
    }
}

/// Primal-dual pair maintained by the iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalDualState {
    pub x: Image,
    pub u: FeatureMap,
    pub x_prev: Image,
    pub u_prev: FeatureMap,
    pub k: usize,
}

impl PrimalDualState {
    pub fn new(x: Image, u: FeatureMap) -> Self {
        PrimalDualState {
            x_prev: x.clone(),
            u_prev: u.clone(),
            x,
            u,
            k: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub x: Image,
    pub u: FeatureMap,
    pub trace: SolverTrace,
}

fn relative_change(new: &Image, old: &Image) -> f64 {
    new.sub(old).norm() / new.norm().max(1.0)
}

fn check_schedule(s: &SolverSchedule, allowed: &[Regime], iterations: usize) -> Result<()> {
    if !allowed.contains(&s.regime) {
        return Err(Error::Precondition(format!(
            "regime {:?} not handled by this solver",
            s.regime
        )));
    }
    if s.steps.len() < iterations {
        return Err(Error::Parameter(format!(
            "schedule has {} steps, {iterations} requested",
            s.steps.len()
        )));
    }
    Ok(())
}

fn check_adjoint(d: &dyn LinearOperator) -> Result<()> {
    if d.exact_adjoint() {
        Ok(())
    } else {
        Err(Error::Precondition(
            "convergence guarantees need the exact adjoint of D".into(),
        ))
    }
}

/// Dual (inertial) forward-backward from `u₀ = v₀ = 0`; returns
/// `x̂ = P_C(z − D*u_K)`. Stops early once the relative primal change drops
/// below `tol`.
pub fn difb_solve(
    z: &Image,
    d: &dyn LinearOperator,
    nu: f64,
    c: &BoxConstraint,
    schedule: &SolverSchedule,
    iterations: usize,
    tol: f64,
) -> Result<Solution> {
    check_schedule(schedule, &[Regime::Dfb, Regime::Difb], iterations)?;
    check_adjoint(d)?;
    let (fj, fh, fw) = d.output_dims(z.dims())?;
    let mut u = FeatureMap::zeros(fj, fh, fw);
    let mut v = u.clone();
    let mut x = project_box(z, c);
    let mut trace = SolverTrace::default();
    for step in &schedule.steps[..iterations] {
        let xv = project_box(&z.sub(&d.adjoint(&v)?), c);
        let mut pre = d.apply(&xv)?;
        pre.scale(step.tau);
        pre.axpy(1.0, &v);
        let u_next = hardtanh(&pre, nu);
        let mut v_next = u_next.scaled(1.0 + step.rho);
        v_next.axpy(-step.rho, &u);
        let x_next = project_box(&z.sub(&d.adjoint(&u_next)?), c);

        let change = relative_change(&x_next, &x);
        trace.primal_change.push(change);
        trace.dual_change.push(u_next.sub(&u).norm());
        trace.objective.push(objective(&x_next, z, d, nu, c)?);
        u = u_next;
        v = v_next;
        x = x_next;
        if change < tol {
            break;
        }
    }
    Ok(Solution { x, u, trace })
}

/// Chambolle–Pock family (`cp`, `sccp`, or `ah` schedules) from
/// `x₀ = P_C(z)`, `u₀ = 0`: primal step then extrapolated dual step.
pub fn sccp_solve(
    z: &Image,
    d: &dyn LinearOperator,
    nu: f64,
    c: &BoxConstraint,
    schedule: &SolverSchedule,
    iterations: usize,
    tol: f64,
) -> Result<Solution> {
    check_schedule(
        schedule,
        &[Regime::Cp, Regime::Sccp, Regime::Ah],
        iterations,
    )?;
    check_adjoint(d)?;
    let (fj, fh, fw) = d.output_dims(z.dims())?;
    let mut u = FeatureMap::zeros(fj, fh, fw);
    let mut x = project_box(z, c);
    let mut trace = SolverTrace::default();
    for step in &schedule.steps[..iterations] {
        let x_next = primal_step(&x, &u, z, d, step.mu, c)?;
        let mut bar = x_next.scaled(1.0 + step.alpha);
        bar.axpy(-step.alpha, &x);
        let mut pre = d.apply(&bar)?;
        pre.scale(step.tau);
        pre.axpy(1.0, &u);
        let u_next = hardtanh(&pre, nu);

        let change = relative_change(&x_next, &x);
        trace.primal_change.push(change);
        trace.dual_change.push(u_next.sub(&u).norm());
        trace.objective.push(objective(&x_next, z, d, nu, c)?);
        x = x_next;
        u = u_next;
        if change < tol {
            break;
        }
    }
    Ok(Solution { x, u, trace })
}

/// `P_C(μ/(1+μ)(z − D*u) + x/(1+μ))`; `μ = ∞` gives `P_C(z − D*u)`.
fn primal_step(
    x: &Image,
    u: &FeatureMap,
    z: &Image,
    d: &dyn LinearOperator,
    mu: f64,
    c: &BoxConstraint,
) -> Result<Image> {
    let r = z.sub(&d.adjoint(u)?);
    if mu.is_infinite() {
        return Ok(project_box(&r, c));
    }
    let (wr, wx) = (mu / (1.0 + mu), 1.0 / (1.0 + mu));
    Ok(r.zip_map(x, |a, b| c.clamp(wr * a + wx * b)))
}

/// One joint Arrow–Hurwicz step: dual update, then primal update using the
/// new dual.
#[allow(clippy::too_many_arguments)]
pub fn ah_joint_step(
    state: &PrimalDualState,
    tau: f64,
    mu: f64,
    z: &Image,
    d: &dyn LinearOperator,
    nu: f64,
    c: &BoxConstraint,
) -> Result<PrimalDualState> {
    if !(mu > 0.0) {
        return Err(Error::Parameter(format!("mu {mu} must be > 0")));
    }
    let mut pre = d.apply(&state.x)?;
    pre.scale(tau);
    pre.axpy(1.0, &state.u);
    let u = hardtanh(&pre, nu);
    let x = primal_step(&state.x, &u, z, d, mu, c)?;
    Ok(PrimalDualState {
        x_prev: state.x.clone(),
        u_prev: state.u.clone(),
        x,
        u,
        k: state.k + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{spectral_norm, ConvStack, FiniteDifference, PowerConfig};
    use crate::tensor::Tensor;

    fn two_pixel() -> (Image, FiniteDifference, f64, BoxConstraint) {
        (
            Tensor::from_vec(1, 1, 2, vec![1.0, 0.0]).unwrap(),
            FiniteDifference::horizontal(),
            0.25,
            BoxConstraint::default(),
        )
    }

    fn norm_of(d: &dyn LinearOperator, dims: (usize, usize, usize)) -> f64 {
        spectral_norm(d, dims, &PowerConfig::default().with_tol(1e-12, 10_000))
            .unwrap()
            .norm
    }

    #[test]
    fn objective_cases() {
        let (z, d, nu, c) = two_pixel();
        let x = Tensor::from_vec(1, 1, 2, vec![0.75, 0.25]).unwrap();
        assert!((objective(&x, &z, &d, nu, &c).unwrap() - 0.1875).abs() < 1e-15);
        let expect = nu * d.apply(&z).unwrap().l1();
        assert_eq!(objective(&z, &z, &d, nu, &c).unwrap(), expect);
        let out = Tensor::from_vec(1, 1, 2, vec![1.5, 0.0]).unwrap();
        assert_eq!(objective(&out, &z, &d, nu, &c).unwrap(), f64::INFINITY);
    }

    #[test]
    fn difb_schedule_values() {
        let s = difb_schedule(3.0, 1.0, true, 3).unwrap();
        assert_eq!(s.steps[0].rho, 0.0);
        assert!((s.steps[1].rho - 0.2).abs() < 1e-15);
        let p = difb_schedule(3.0, 2.0, false, 4).unwrap();
        assert!(p.steps.iter().all(|s| s.tau == 0.4975 && s.rho == 0.0));
        assert!(difb_schedule(2.0, 1.0, true, 3).is_err());
        assert!(difb_schedule(3.0, 0.0, false, 3).is_err());
    }

    #[test]
    fn sccp_schedule_values() {
        let s = sccp_schedule(0.5, 1.0, true, 50).unwrap();
        assert!((s.steps[0].alpha - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((s.steps[1].mu - 0.35355).abs() < 1e-5);
        assert!((s.steps[1].tau - s.steps[0].tau * std::f64::consts::SQRT_2).abs() < 1e-12);
        for w in s.steps.windows(2) {
            assert!(w[1].mu < w[0].mu && w[1].tau > w[0].tau);
        }
        assert!(s.steps.iter().all(|st| st.tau * st.mu <= 0.99 + 1e-12));
        let p = sccp_schedule(1.0, 1.0, false, 2).unwrap();
        assert_eq!(p.steps[0].tau, 0.99);
        assert_eq!(p.steps[1].alpha, 1.0);
    }

    #[test]
    fn two_pixel_oracle() {
        let (z, d, nu, c) = two_pixel();
        let n = norm_of(&d, (1, 1, 2));
        let expect = Tensor::from_vec(1, 1, 2, vec![0.75, 0.25]).unwrap();
        let a = difb_solve(
            &z,
            &d,
            nu,
            &c,
            &difb_schedule(3.0, n, false, 2000).unwrap(),
            2000,
            0.0,
        )
        .unwrap();
        assert!(a.x.max_abs_diff(&expect) <= 1e-6);
        let b = sccp_solve(
            &z,
            &d,
            nu,
            &c,
            &sccp_schedule(1.0, n, false, 2000).unwrap(),
            2000,
            0.0,
        )
        .unwrap();
        assert!(b.x.max_abs_diff(&expect) <= 1e-6);
        assert!(a.x.max_abs_diff(&b.x) <= 1e-5);
        // the accelerated schedule only reaches the O(1/K) primal rate
        let errs: Vec<f64> = [500, 2000]
            .iter()
            .map(|&k| {
                let s = sccp_schedule(1.0, n, true, k).unwrap();
                sccp_solve(&z, &d, nu, &c, &s, k, 0.0)
                    .unwrap()
                    .x
                    .max_abs_diff(&expect)
            })
            .collect();
        assert!(errs[1] < errs[0] / 3.0 && errs[1] < 1e-3, "{errs:?}");
        let ah = sccp_solve(
            &z,
            &d,
            nu,
            &c,
            &ah_schedule(0.99 / (0.05 * n * n), 0.05, 20_000),
            20_000,
            0.0,
        )
        .unwrap();
        assert!(ah.x.max_abs_diff(&expect) <= 1e-4, "{:?}", ah.x);
    }

    #[test]
    fn zero_regularization_and_zero_operator() {
        let z = Tensor::from_vec(1, 2, 2, vec![-0.2, 0.4, 1.3, 0.9]).unwrap();
        let c = BoxConstraint::default();
        let pz = project_box(&z, &c);
        let d = ConvStack::random(3, 1, 1);
        let s = difb_solve(
            &z,
            &d,
            0.0,
            &c,
            &difb_schedule(3.0, 1.0, false, 50).unwrap(),
            50,
            1e-10,
        )
        .unwrap();
        assert_eq!(s.x, pz);
        assert_eq!(s.trace.len(), 1);
        let s = sccp_solve(
            &z,
            &d,
            0.0,
            &c,
            &sccp_schedule(1.0, 1.0, true, 50).unwrap(),
            50,
            1e-10,
        )
        .unwrap();
        assert_eq!(s.x, pz);
        let zero = ConvStack::zeros(2, 1);
        let s = difb_solve(
            &z,
            &zero,
            0.3,
            &c,
            &difb_schedule(3.0, 1.0, false, 10).unwrap(),
            10,
            0.0,
        )
        .unwrap();
        assert_eq!(s.x, pz);
    }

    #[test]
    fn untied_operator_rejected() {
        use crate::linops::{AdjointPolicy, ConvAnalysis};
        let d = ConvStack::random(2, 1, 0);
        let pol = AdjointPolicy::Untied(ConvStack::random(1, 2, 1));
        let op = ConvAnalysis::new(&d, &pol).unwrap();
        let z = Tensor::zeros(1, 4, 4);
        let s = difb_schedule(3.0, 1.0, false, 5).unwrap();
        let err = difb_solve(&z, &op, 0.1, &BoxConstraint::default(), &s, 5, 0.0);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn ah_step_hand_trace() {
        let z = Tensor::filled(1, 2, 2, 0.2);
        let st = PrimalDualState::new(z.clone(), Tensor::zeros(1, 2, 2));
        let d = ConvStack::delta(1.0);
        let c = BoxConstraint::default();
        let next = ah_joint_step(&st, 1.0, f64::INFINITY, &z, &d, 10.0, &c).unwrap();
        assert!(next.u.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(next.x.data().iter().all(|&v| v == 0.0));

        // ν = 0: dual pinned at zero, primal is a weighted average
        let x = Tensor::filled(1, 2, 2, 0.8);
        let st = PrimalDualState::new(x.clone(), Tensor::zeros(1, 2, 2));
        let next = ah_joint_step(&st, 1.0, 1.0, &z, &d, 0.0, &c).unwrap();
        assert!(next.u.data().iter().all(|&v| v == 0.0));
        assert!(next.x.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        // μ → 0 freezes the primal variable
        let next = ah_joint_step(&st, 1.0, 1e-12, &z, &d, 0.0, &c).unwrap();
        assert!(next.x.max_abs_diff(&x) < 1e-11);
    }

    #[test]
    fn dfb_descends_and_reaches_fixed_point() {
        use crate::rng;
        use rand::Rng;
        let mut r = rng::rng(5);
        let z = Tensor::from_vec(1, 8, 8, (0..64).map(|_| r.random::<f64>()).collect()).unwrap();
        let d = ConvStack::random(4, 1, 7);
        let c = BoxConstraint::default();
        let n = norm_of(&d, (1, 8, 8));
        let sched = difb_schedule(3.0, n, false, 3000).unwrap();
        let tol = 1e-10;
        let s = difb_solve(&z, &d, 0.05, &c, &sched, 3000, tol).unwrap();
        let fstar = s.trace.objective.last().copied().unwrap();
        for w in s.trace.objective[10..].windows(2) {
            assert!(w[1] - fstar <= w[0] - fstar + 1e-12);
        }
        if s.trace.len() < 3000 {
            let st = PrimalDualState::new(s.x.clone(), s.u.clone());
            let next =
                ah_joint_step(&st, sched.steps[0].tau, f64::INFINITY, &z, &d, 0.05, &c).unwrap();
            assert!(next.x.sub(&s.x).norm() / s.x.norm().max(1.0) < 10.0 * tol);
        }
    }
}
