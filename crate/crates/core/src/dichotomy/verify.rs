use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fredholm::{fredholm_diagnostics, FredholmReport};
use super::gamma::GammaEstimate;
use super::project::{summarize, ProjectorMatrix};
use super::whole_line::{WholeLineProblem, WholeLineSolver};
use crate::error::{Error, Result};
use crate::evolution::batch_trajectory;
use crate::green::fit_exponential_bound;
use crate::linalg::inf_norm;
use crate::spectrum::is_asymptotically_hyperbolic;
use crate::system::DelaySystem;

/// Nodal sizes up to which the full nodal basis is propagated.
pub const FULL_BASIS_LIMIT: usize = 2048;
/// Condition number of the restricted forward operator beyond which the
/// backward bound is not trusted.
pub const DEGENERACY_LIMIT: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOptions {
    pub s_list: Vec<f64>,
    pub horizon: f64,
    /// Random probes used when the nodal dimension exceeds [`FULL_BASIS_LIMIT`].
    pub probes: usize,
    /// History cells.
    pub m: usize,
    /// Whole-line collocation step.
    pub step: f64,
    /// Whole-line half-width; grown to the size the base times require.
    pub half_width: f64,
    pub seed: u64,
    /// Also run the Fredholm diagnostics on a coarse copy of the domain.
    pub fredholm: bool,
}

impl VerifyOptions {
    pub fn for_system(sys: &DelaySystem) -> Self {
        let r = sys.max_delay().max(1.0);
        Self {
            s_list: vec![0.0],
            horizon: 20.0 * r,
            probes: 256,
            m: (64.0 * r).round() as usize,
            step: 1.0 / 64.0,
            half_width: 50.0,
            seed: 42,
            fredholm: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecaySample {
    pub ts: f64,
    pub norm: f64,
}

/// `norm(t - s) ≤ D e^{-λ (t - s)}` fitted after the first `r_N` of transient.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub d: f64,
    pub lambda: f64,
    pub samples: Vec<DecaySample>,
}

impl DecayFit {
    fn fit(samples: Vec<DecaySample>, skip: f64) -> Option<Self> {
        let pts: Vec<(f64, f64)> = samples
            .iter()
            .filter(|p| p.ts >= skip - 1e-12)
            .map(|p| (p.ts, p.norm))
            .collect();
        let (_, lambda) = fit_exponential_bound(&pts).ok()?;
        let d = samples
            .iter()
            .map(|p| p.norm * (lambda * p.ts).exp())
            .fold(0.0, f64::max);
        Some(Self { d, lambda, samples })
    }

    pub fn envelope(&self, ts: f64) -> f64 {
        self.d * (-self.lambda * ts).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CommutationSample {
    pub t: f64,
    /// `‖P(t)T(t,s) - T(t,s)P(s)‖`.
    pub residual: f64,
    /// Residual over `‖T(t,s)‖`.
    pub relative: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BaseTimeReport {
    pub s: f64,
    pub projector: ProjectorMatrix,
    /// Rows of the nodal `P(s)`, present when the full basis is used.
    pub p_matrix: Option<Vec<Vec<f64>>>,
    /// `max ‖P(s)φ‖ / ‖φ‖` over the probes.
    pub p_norm: f64,
    pub p_bound_ok: bool,
    /// Decay of `‖T(t,s)P(s)‖`, absent when `P(s)` vanishes.
    pub forward: Option<DecayFit>,
    /// Decay of `‖T̄(s,t)Q(t)‖`, absent when `Q(s)` vanishes.
    pub backward: Option<DecayFit>,
    pub commutation: Vec<CommutationSample>,
    pub max_commutation: f64,
    /// Largest condition number of `T(t,s)` restricted to the range of `Q(s)`.
    pub q_condition: f64,
    /// `max ‖T(t,s)P(s)φ‖ / (2γ₀² e^{-λ_theory (t-s)} ‖φ‖)`.
    pub theory_ratio: f64,
    pub leakage_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Dichotomy,
    Violated,
}

#[derive(Clone, Debug, Serialize)]
pub struct DichotomyReport {
    pub s_list: Vec<f64>,
    pub problem: WholeLineProblem,
    pub m: usize,
    pub horizon: f64,
    pub full_basis: bool,
    pub probes: usize,
    pub spectral_gaps: (f64, f64),
    pub gamma0: GammaEstimate,
    pub base_times: Vec<BaseTimeReport>,
    pub fredholm: Option<FredholmReport>,
    pub verdict: Verdict,
    pub warnings: Vec<String>,
}

/// Sup-norm size of a probe image: the induced matrix norm for the full
/// basis, the largest column for unit `±1` probes.
fn probe_norm(x: &DMatrix<f64>, full: bool) -> f64 {
    if full {
        inf_norm(x)
    } else {
        x.column_iter().map(|c| c.amax()).fold(0.0, f64::max)
    }
}

fn snap(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

struct Context<'a> {
    solver: &'a WholeLineSolver,
    sys: &'a DelaySystem,
    m: usize,
    full: bool,
    gamma: &'a GammaEstimate,
    horizon: f64,
}

impl Context<'_> {
    /// Projector at `t` acting on stacked columns.
    fn projector(&self, t: f64, d: usize) -> Result<Projector> {
        if self.full {
            let (p, leak) = self.solver.apply_projector(t, &DMatrix::identity(d, d))?;
            Ok(Projector {
                matrix: Some(p),
                t,
                leak: leak.max() / leak.limit,
            })
        } else {
            Ok(Projector {
                matrix: None,
                t,
                leak: 0.0,
            })
        }
    }

    fn apply(&self, p: &mut Projector, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &p.matrix {
            Some(m) => Ok(m * x),
            None => {
                let (px, leak) = self.solver.apply_projector(p.t, x)?;
                p.leak = p.leak.max(leak.max() / leak.limit);
                Ok(px)
            }
        }
    }

    fn base_time(&self, s: f64, phi: &DMatrix<f64>) -> Result<BaseTimeReport> {
        let full = self.full;
        let d = phi.nrows();
        let p_cols = phi.ncols();
        let r = self.sys.max_delay();
        let step = self.solver.grid().step;
        let intervals = (self.horizon / r.max(2.0)).ceil().max(1.0) as usize;
        let delta = snap(self.horizon / intervals as f64, step).max(step);

        let mut p0 = self.projector(s, d)?;
        let mut leakage_ratio = p0.leak;
        let m0 = self.apply(&mut p0, phi)?;
        let projector = if full {
            summarize(s, self.m, m0.clone())
        } else {
            let pp = self.apply(&mut p0, &m0)?;
            let mut pm = summarize(s, self.m, DMatrix::zeros(1, 1));
            pm.idempotence = probe_norm(&(pp - &m0), false);
            pm.trace = f64::NAN;
            pm.norm = probe_norm(&m0, false);
            pm.rank_p = 0;
            pm.rank_q = 0;
            pm
        };
        leakage_ratio = leakage_ratio.max(p0.leak);
        let p_norm = probe_norm(&m0, full);

        let q0 = phi - &m0;
        let svd = q0.clone().svd(true, false);
        let u_all = svd.u.as_ref().expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        let cut = if full { 0.5 } else { 1e-3 * smax };
        let q_cols: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > cut && smax > 0.0)
            .collect();
        let k = q_cols.len();
        let u = DMatrix::from_fn(d, k, |i, j| u_all[(i, q_cols[j])]);

        let mut fwd = vec![DecaySample { ts: 0.0, norm: p_norm }];
        let mut bwd = vec![DecaySample {
            ts: 0.0,
            norm: probe_norm(&q0, full),
        }];
        let mut commutation = Vec::new();
        let mut q_condition = 1.0f64;
        let two_gamma_sq = 2.0 * self.gamma.gamma0 * self.gamma.gamma0;
        let mut theory_ratio = p_norm / two_gamma_sq;

        // Columns: projected chain | T Φ | T P(s) Φ | T U.
        let mut state = DMatrix::zeros(d, 3 * p_cols + k);
        state.columns_mut(0, p_cols).copy_from(&m0);
        state.columns_mut(p_cols, p_cols).copy_from(phi);
        state.columns_mut(2 * p_cols, p_cols).copy_from(&m0);
        state.columns_mut(3 * p_cols, k).copy_from(&u);
        let mut log_w = 0.0f64;
        let sub = 8usize;
        for step_k in 0..intervals {
            let t0 = s + step_k as f64 * delta;
            let t1 = t0 + delta;
            let traj = batch_trajectory(self.sys, t0, &state, t1)?;
            for j in 1..=sub {
                let tau = t0 + delta * j as f64 / sub as f64;
                let seg = traj.segment_matrix(tau, self.m)?;
                let norm = probe_norm(&seg.columns(0, p_cols).into_owned(), full);
                let ts = tau - s;
                fwd.push(DecaySample { ts, norm });
                let bound = two_gamma_sq * (-self.gamma.lambda_theory * ts).exp();
                theory_ratio = theory_ratio.max(norm / bound);
            }
            let end = traj.segment_matrix(t1, self.m)?;
            let mut p1 = self.projector(t1, d)?;
            let projected = self.apply(&mut p1, &end.columns(0, p_cols).into_owned())?;
            let t_phi = end.columns(p_cols, p_cols).into_owned();
            let t_p = end.columns(2 * p_cols, p_cols).into_owned();
            let p_t_phi = self.apply(&mut p1, &t_phi)?;
            let residual = probe_norm(&(p_t_phi - &t_p), full);
            let size = probe_norm(&t_phi, full);
            commutation.push(CommutationSample {
                t: t1,
                residual,
                relative: if size > 0.0 { residual / size } else { 0.0 },
            });
            let w = end.columns(3 * p_cols, k).into_owned();
            if k > 0 {
                let q1 = phi - self.apply(&mut p1, phi)?;
                let wsvd = w.clone().svd(true, true);
                let smax = wsvd.singular_values.max();
                let smin = wsvd.singular_values.min();
                let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
                if cond.is_nan() || cond > DEGENERACY_LIMIT {
                    return Err(Error::FSpaceDegeneracy { cond });
                }
                q_condition = q_condition.max(cond);
                let pinv = wsvd
                    .pseudo_inverse(0.0)
                    .map_err(|_| Error::FSpaceDegeneracy { cond })?;
                let back = &u * pinv * q1 * (-log_w).exp();
                bwd.push(DecaySample {
                    ts: t1 - s,
                    norm: probe_norm(&back, full),
                });
            }
            leakage_ratio = leakage_ratio.max(p1.leak);

            let scale_n = if size > 0.0 { 1.0 / size } else { 1.0 };
            let wn = w.amax();
            let scale_w = if wn > 0.0 { 1.0 / wn } else { 1.0 };
            log_w -= scale_w.ln();
            state.columns_mut(0, p_cols).copy_from(&projected);
            state.columns_mut(p_cols, p_cols).copy_from(&(t_phi * scale_n));
            state.columns_mut(2 * p_cols, p_cols).copy_from(&(t_p * scale_n));
            state.columns_mut(3 * p_cols, k).copy_from(&(w * scale_w));
        }

        let floor = 1e-8 * probe_norm(phi, full);
        let forward = if p_norm > floor {
            DecayFit::fit(fwd, r)
        } else {
            None
        };
        let backward = if k > 0 { DecayFit::fit(bwd, r) } else { None };
        let max_commutation = commutation.iter().map(|c| c.relative).fold(0.0, f64::max);
        Ok(BaseTimeReport {
            s,
            p_matrix: full.then(|| projector.p.row_iter().map(|r| r.iter().copied().collect()).collect()),
            projector,
            p_norm,
            p_bound_ok: p_norm <= self.gamma.gamma0,
            forward,
            backward,
            commutation,
            max_commutation,
            q_condition,
            theory_ratio,
            leakage_ratio,
        })
    }
}

struct Projector {
    matrix: Option<DMatrix<f64>>,
    t: f64,
    leak: f64,
}

/// Build `P(s)` for each base time and check the dichotomy bounds over
/// `[s, s + horizon]`.
pub fn verify_dichotomy(sys: &DelaySystem, opts: &VerifyOptions) -> Result<DichotomyReport> {
    let gaps = is_asymptotically_hyperbolic(sys)?;
    let r = sys.max_delay();
    if opts.horizon.is_nan() || opts.horizon <= 0.0 {
        return Err(Error::invalid("horizon", "must be positive"));
    }
    let mut warnings = Vec::new();
    if opts.horizon < 10.0 * r {
        warnings.push(format!(
            "horizon {} is below 10·r_N = {}",
            opts.horizon,
            10.0 * r
        ));
    }
    let step = opts.step;
    let s_list: Vec<f64> = opts.s_list.iter().map(|&s| snap(s, step)).collect();
    let reach = s_list
        .iter()
        .map(|&s| s.abs().max((s + opts.horizon).abs()))
        .fold(0.0, f64::max);
    let problem = WholeLineProblem::sized(sys, reach, step, opts.half_width)?;
    if problem.half_width > opts.half_width + step {
        warnings.push(format!(
            "whole-line half-width grown from {} to {}",
            opts.half_width, problem.half_width
        ));
    }
    let solver = WholeLineSolver::new(sys, &problem)?;
    warnings.extend(solver.warnings.iter().cloned());
    let gamma = solver.gamma0();
    if gamma.low_confidence {
        warnings.push("‖Λ⁻¹‖ estimate did not converge; γ₀ is low-confidence".into());
    }
    let m = if r == 0.0 { 0 } else { opts.m.max(1) };
    let n = sys.dim();
    let d = (m + 1) * n;
    let full = m.max(1) * n <= FULL_BASIS_LIMIT;
    let ctx = Context {
        solver: &solver,
        sys,
        m,
        full,
        gamma: &gamma,
        horizon: opts.horizon,
    };
    let mut base_times = Vec::new();
    for (i, &s) in s_list.iter().enumerate() {
        let phi = if full {
            DMatrix::identity(d, d)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
            DMatrix::from_fn(d, opts.probes.max(1), |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        };
        base_times.push(ctx.base_time(s, &phi)?);
    }
    let decays = |f: &Option<DecayFit>| f.as_ref().is_none_or(|f| f.lambda > 0.0);
    let ok = base_times
        .iter()
        .all(|b| decays(&b.forward) && decays(&b.backward) && (b.forward.is_some() || b.backward.is_some()));
    let fredholm = if opts.fredholm {
        Some(fredholm_diagnostics(sys, &problem.coarse(), opts.seed)?)
    } else {
        None
    };
    Ok(DichotomyReport {
        s_list,
        problem,
        m,
        horizon: opts.horizon,
        full_basis: full,
        probes: if full { d } else { opts.probes.max(1) },
        spectral_gaps: gaps,
        gamma0: gamma,
        base_times,
        fredholm,
        verdict: if ok { Verdict::Dichotomy } else { Verdict::Violated },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{AutonomousSystem, Mat};

    fn opts(sys: &DelaySystem, m: usize) -> VerifyOptions {
        VerifyOptions {
            m,
            half_width: 30.0,
            fredholm: false,
            ..VerifyOptions::for_system(sys)
        }
    }

    #[test]
    fn stable_scalar() {
        let sys = DelaySystem::autonomous(&AutonomousSystem::scalar(&[0.0], &[-1.0]).unwrap());
        let rep = verify_dichotomy(&sys, &opts(&sys, 64)).unwrap();
        let b = &rep.base_times[0];
        assert!((b.projector.p[(0, 0)] - 1.0).abs() < 1e-3);
        let f = b.forward.as_ref().unwrap();
        assert!((f.lambda - 1.0).abs() < 0.1, "{}", f.lambda);
        assert!(b.backward.is_none());
        assert_eq!(rep.verdict, Verdict::Dichotomy);
        assert!(b.theory_ratio <= 1.0);
    }

    #[test]
    fn saddle() {
        let a0 = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        let sys = DelaySystem::autonomous(&AutonomousSystem::new(vec![0.0, 1.0], vec![a0, Mat::zeros(2, 2)]).unwrap());
        let rep = verify_dichotomy(&sys, &opts(&sys, 16)).unwrap();
        let b = &rep.base_times[0];
        let f = b.forward.as_ref().unwrap();
        let g = b.backward.as_ref().unwrap();
        assert!((f.lambda - 1.0).abs() < 0.1, "forward {}", f.lambda);
        assert!((g.lambda - 1.0).abs() < 0.1, "backward {}", g.lambda);
        assert!(b.max_commutation < 1e-2, "{}", b.max_commutation);
        assert!(b.projector.idempotence < 1e-3);
        assert!(b.p_bound_ok);
        assert_eq!(rep.verdict, Verdict::Dichotomy);
    }

    #[test]
    fn refuses_non_hyperbolic() {
        let sys = DelaySystem::autonomous(
            &AutonomousSystem::scalar(&[0.0, 1.0], &[0.0, -std::f64::consts::FRAC_PI_2]).unwrap(),
        );
        assert!(verify_dichotomy(&sys, &opts(&sys, 16)).is_err());
    }
}
