//! The optimality operator: matrix-free application of 𝒜, the constant part
//! b, the Nash residual, and Krylov solvers in the control inner product.
//!
//! The stacked gradient map v ↦ (∂J_1/∂v_1, …, ∂J_N/∂v_N) is affine,
//! 𝒜v − b. Applying 𝒜 needs one homogeneous forward solve and one backward
//! solve per player (a single shared one when all players track the same
//! weights); b needs one free forward solve and one backward solve per
//! player. In the common-target case 𝒜 is self-adjoint and coercive in the
//! 𝒰 inner product, so conjugate gradients apply; the general case uses
//! restarted GMRES with the same inner product.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::adjoint;
use crate::heat;
use crate::objectives;
use crate::problem::{ControlBundle, ProblemSpec};

/// Operator flavor, set from the verified common-target flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorMode {
    /// ρ_i = ρ, η_i = η for all players: 𝒜 is self-adjoint and coercive.
    Symmetric,
    /// Distinct tracking weights: 𝒜 is generally nonsymmetric.
    General,
}

impl OperatorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            OperatorMode::Symmetric => "symmetric",
            OperatorMode::General => "general",
        }
    }
}

#[derive(Debug, Error)]
pub enum GameError {
    #[error(
        "solver did not converge: {iterations} iterations, relative residual {residual:.3e}"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("{0}")]
    ModeMismatch(String),
    #[error("{0}")]
    InvalidArgument(String),
}

/// Stopping contract and seeding for the Krylov solvers.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Relative residual tolerance.
    pub rtol: f64,
    /// Iteration cap; defaults to 10 × control dimension.
    pub max_iter: Option<usize>,
    /// GMRES restart length.
    pub restart: usize,
    /// Seed for probe vectors, recorded in the report.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            rtol: 1e-10,
            max_iter: None,
            restart: 50,
            seed: 42,
        }
    }
}

/// Solve outcome: the equilibrium, residuals and diagnostics. The control
/// bundle itself serializes separately (one CSV per player).
#[derive(Debug, Clone, Serialize)]
pub struct NashReport {
    pub mode: String,
    pub iterations: usize,
    /// ‖𝒜u − b‖/‖b‖ recomputed from fresh forward and adjoint solves
    /// (absolute norm when b = 0).
    pub residual: f64,
    #[serde(rename = "J_values")]
    pub j_values: Vec<f64>,
    pub ellipticity_probe: f64,
    pub seed: u64,
    pub converged: bool,
    pub timings: Timings,
    #[serde(skip)]
    pub u: ControlBundle,
    /// Internal per-iteration relative residuals.
    #[serde(skip)]
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub solve_s: f64,
    pub total_s: f64,
}

/// Matrix-free handle on 𝒜 and b for a fixed problem.
pub struct GameOperator<'a> {
    spec: &'a ProblemSpec,
    mode: OperatorMode,
    forward_solves: AtomicUsize,
    adjoint_solves: AtomicUsize,
    applications: AtomicUsize,
}

impl<'a> GameOperator<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Self {
        // The flag was set by the loader; re-assert elementwise before
        // allowing the symmetric solver.
        let mode = if spec.common_target && spec.verify_common_target() {
            OperatorMode::Symmetric
        } else {
            OperatorMode::General
        };
        GameOperator {
            spec,
            mode,
            forward_solves: AtomicUsize::new(0),
            adjoint_solves: AtomicUsize::new(0),
            applications: AtomicUsize::new(0),
        }
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    pub fn mode(&self) -> OperatorMode {
        self.mode
    }

    /// (forward solves, adjoint solves, operator applications) so far.
    pub fn counters(&self) -> (usize, usize, usize) {
        (
            self.forward_solves.load(Ordering::Relaxed),
            self.adjoint_solves.load(Ordering::Relaxed),
            self.applications.load(Ordering::Relaxed),
        )
    }

    /// 𝒜v: one homogeneous forward solve, then one backward solve per player
    /// (shared across players in symmetric mode).
    pub fn apply(&self, v: &ControlBundle) -> ControlBundle {
        self.applications.fetch_add(1, Ordering::Relaxed);
        self.forward_solves.fetch_add(1, Ordering::Relaxed);
        let y_tilde = heat::solve_state_homogeneous(self.spec, v);

        let mut out = self.spec.zero_bundle();
        match self.mode {
            OperatorMode::Symmetric => {
                self.adjoint_solves.fetch_add(1, Ordering::Relaxed);
                let shared = adjoint::solve_adjoint_homogeneous(self.spec, 0, &y_tilde);
                for i in 0..self.spec.player_count() {
                    out.slabs[i] = adjoint::riesz_trace(self.spec, i, &shared.p);
                }
            }
            OperatorMode::General => {
                let traces: Vec<_> = (0..self.spec.player_count())
                    .into_par_iter()
                    .map(|i| {
                        self.adjoint_solves.fetch_add(1, Ordering::Relaxed);
                        let adj = adjoint::solve_adjoint_homogeneous(self.spec, i, &y_tilde);
                        adjoint::riesz_trace(self.spec, i, &adj.p)
                    })
                    .collect();
                out.slabs = traces;
            }
        }
        for (i, player) in self.spec.players.iter().enumerate() {
            let slab = &mut out.slabs[i];
            let vi = &v.slabs[i];
            for s in 0..slab.steps {
                for k in 0..slab.nodes {
                    *slab.at_mut(s, k) += player.alpha * vi.at(s, k);
                }
            }
        }
        out
    }

    /// b: the constant part of the affine gradient map, b_i = −p̄_i on ω_i.
    pub fn rhs(&self) -> ControlBundle {
        self.forward_solves.fetch_add(1, Ordering::Relaxed);
        let y_bar = heat::solve_state_free(self.spec);
        let slabs: Vec<_> = (0..self.spec.player_count())
            .into_par_iter()
            .map(|i| {
                self.adjoint_solves.fetch_add(1, Ordering::Relaxed);
                let adj = adjoint::solve_adjoint(self.spec, i, &y_bar);
                let mut slab = adjoint::riesz_trace(self.spec, i, &adj.p);
                for x in slab.values_mut() {
                    *x = -*x;
                }
                slab
            })
            .collect();
        ControlBundle { slabs }
    }

    /// Stacked Riesz gradients (∂J_i/∂v_i)_i at v, assembled through the
    /// full-data path: equals 𝒜v − b to roundoff.
    pub fn gradient_stack(&self, v: &ControlBundle) -> ControlBundle {
        self.forward_solves.fetch_add(1, Ordering::Relaxed);
        let y = heat::solve_state(self.spec, v);
        let slabs: Vec<_> = (0..self.spec.player_count())
            .into_par_iter()
            .map(|i| {
                self.adjoint_solves.fetch_add(1, Ordering::Relaxed);
                let adj = adjoint::solve_adjoint(self.spec, i, &y);
                let mut slab = adjoint::riesz_trace(self.spec, i, &adj.p);
                let alpha = self.spec.players[i].alpha;
                let vi = &v.slabs[i];
                for s in 0..slab.steps {
                    for k in 0..slab.nodes {
                        *slab.at_mut(s, k) += alpha * vi.at(s, k);
                    }
                }
                slab
            })
            .collect();
        ControlBundle { slabs }
    }

    /// ‖𝒜v − b‖ in the 𝒰 norm, recomputed from fresh solves. Zero (to
    /// tolerance) characterizes the Nash equilibrium.
    pub fn nash_residual(&self, v: &ControlBundle) -> f64 {
        let g = self.gradient_stack(v);
        self.spec.norm_u(&g)
    }

    /// Minimum observed Rayleigh quotient (𝒜v, v)/⟨v, v⟩ over seeded random
    /// probes: a statistical lower-bound witness for the ellipticity
    /// constant, not a certified eigenvalue. Probes include one bundle
    /// supported on each single player plus `samples` full bundles. In
    /// symmetric mode the coercivity bound (𝒜v, v) ≥ min_i α_i ‖v‖² is
    /// asserted on every probe.
    pub fn ellipticity_probe(&self, samples: usize, seed: u64) -> f64 {
        assert!(samples >= 1, "at least one probe sample required");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha_min = self
            .spec
            .players
            .iter()
            .map(|p| p.alpha)
            .fold(f64::INFINITY, f64::min);

        let mut probes = Vec::with_capacity(self.spec.player_count() + samples);
        for i in 0..self.spec.player_count() {
            probes.push(self.spec.random_unit_direction(i, &mut rng));
        }
        for _ in 0..samples {
            probes.push(self.spec.random_unit_bundle(&mut rng));
        }

        let mut min_quotient = f64::INFINITY;
        for v in &probes {
            let av = self.apply(v);
            let quotient = self.spec.inner_product(&av, v) / self.spec.inner_product(v, v);
            if self.mode == OperatorMode::Symmetric {
                assert!(
                    quotient >= alpha_min - 1e-10,
                    "coercivity bound violated: quotient {quotient} < min alpha {alpha_min}"
                );
            }
            min_quotient = min_quotient.min(quotient);
        }
        min_quotient
    }

    /// Max |(𝒜v, w) − (v, 𝒜w)| / (‖v‖‖w‖) over seeded random pairs.
    pub fn symmetry_defect_probe(&self, pairs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let v = self.spec.random_bundle(&mut rng);
            let w = self.spec.random_bundle(&mut rng);
            let avw = self.spec.inner_product(&self.apply(&v), &w);
            let vaw = self.spec.inner_product(&v, &self.apply(&w));
            let scale = (self.spec.norm_u(&v) * self.spec.norm_u(&w)).max(1e-300);
            worst = worst.max((avw - vaw).abs() / scale);
        }
        worst
    }

    fn iteration_cap(&self, opts: &SolveOptions) -> usize {
        opts.max_iter.unwrap_or(10 * self.spec.control_dim())
    }

    /// Conjugate gradients on 𝒜u = b from the zero start. Symmetric mode
    /// only.
    pub fn solve_cg(&self, opts: &SolveOptions) -> Result<NashReport, GameError> {
        self.solve_cg_from(&self.spec.zero_bundle(), opts)
    }

    /// Conjugate gradients from an arbitrary starting bundle.
    pub fn solve_cg_from(
        &self,
        x0: &ControlBundle,
        opts: &SolveOptions,
    ) -> Result<NashReport, GameError> {
        if self.mode != OperatorMode::Symmetric {
            return Err(GameError::ModeMismatch(
                "conjugate gradients requires the common-target (symmetric) case".into(),
            ));
        }
        let started = Instant::now();
        let b = self.rhs();
        let norm_b = self.spec.norm_u(&b);
        if norm_b == 0.0 {
            return Ok(self.report_for(self.spec.zero_bundle(), 0, Vec::new(), 0.0, opts, started));
        }

        let cap = self.iteration_cap(opts);
        let mut x = x0.clone();
        let mut r = b.clone();
        let x0_is_zero = x0.slabs.iter().all(|s| s.values().iter().all(|&v| v == 0.0));
        if !x0_is_zero {
            let ax = self.apply(&x);
            r.add_scaled(&ax, -1.0);
        }
        let mut rr = self.spec.inner_product(&r, &r);
        let mut history = vec![rr.sqrt() / norm_b];
        if rr.sqrt() <= opts.rtol * norm_b {
            let solve_s = started.elapsed().as_secs_f64();
            let _ = solve_s;
            return Ok(self.report_for(x, 0, history, rr.sqrt() / norm_b, opts, started));
        }
        let mut p = r.clone();
        for iter in 1..=cap {
            let q = self.apply(&p);
            let pq = self.spec.inner_product(&p, &q);
            let step = rr / pq;
            x.add_scaled(&p, step);
            r.add_scaled(&q, -step);
            let rr_new = self.spec.inner_product(&r, &r);
            let rel = rr_new.sqrt() / norm_b;
            history.push(rel);
            if rel <= opts.rtol {
                return Ok(self.report_for(x, iter, history, rel, opts, started));
            }
            let beta = rr_new / rr;
            rr = rr_new;
            p = r.linear_combination(1.0, &p, beta);
        }
        Err(GameError::NonConvergence {
            iterations: cap,
            residual: *history.last().unwrap(),
            history,
        })
    }

    /// Restarted GMRES on 𝒜u = b in the 𝒰 inner product. Works in either
    /// mode; non-convergence (expected when ellipticity fails for small α)
    /// is surfaced as an error carrying the residual history.
    pub fn solve_gmres(&self, opts: &SolveOptions) -> Result<NashReport, GameError> {
        let started = Instant::now();
        let b = self.rhs();
        let norm_b = self.spec.norm_u(&b);
        if norm_b == 0.0 {
            return Ok(self.report_for(self.spec.zero_bundle(), 0, Vec::new(), 0.0, opts, started));
        }
        let cap = self.iteration_cap(opts);
        let m = opts.restart.max(1);
        let mut x = self.spec.zero_bundle();
        let mut history = Vec::new();
        let mut total = 0usize;

        loop {
            let ax = self.apply(&x);
            let mut r = b.clone();
            r.add_scaled(&ax, -1.0);
            let beta = self.spec.norm_u(&r);
            let rel = beta / norm_b;
            if rel <= opts.rtol {
                return Ok(self.report_for(x, total, history, rel, opts, started));
            }
            if total >= cap {
                return Err(GameError::NonConvergence {
                    iterations: total,
                    residual: rel,
                    history,
                });
            }

            // Arnoldi with modified Gram-Schmidt in the U inner product.
            r.scale(1.0 / beta);
            let mut basis = vec![r];
            let mut h = vec![vec![0.0; m + 1]; m]; // h[col][row]
            let mut cs = vec![0.0; m];
            let mut sn = vec![0.0; m];
            let mut g = vec![0.0; m + 1];
            g[0] = beta;
            let mut cols = 0usize;

            for k in 0..m {
                if total >= cap {
                    break;
                }
                total += 1;
                let mut w = self.apply(&basis[k]);
                for j in 0..=k {
                    let hjk = self.spec.inner_product(&basis[j], &w);
                    h[k][j] = hjk;
                    w.add_scaled(&basis[j], -hjk);
                }
                let hsub = self.spec.norm_u(&w);
                h[k][k + 1] = hsub;

                for j in 0..k {
                    let t = cs[j] * h[k][j] + sn[j] * h[k][j + 1];
                    h[k][j + 1] = -sn[j] * h[k][j] + cs[j] * h[k][j + 1];
                    h[k][j] = t;
                }
                let denom = (h[k][k] * h[k][k] + h[k][k + 1] * h[k][k + 1]).sqrt();
                if denom == 0.0 {
                    cols = k;
                    break;
                }
                cs[k] = h[k][k] / denom;
                sn[k] = h[k][k + 1] / denom;
                h[k][k] = denom;
                h[k][k + 1] = 0.0;
                g[k + 1] = -sn[k] * g[k];
                g[k] = cs[k] * g[k];
                cols = k + 1;

                let estimate = g[k + 1].abs() / norm_b;
                history.push(estimate);
                if hsub <= 1e-300 {
                    break; // happy breakdown: Krylov space is invariant
                }
                w.scale(1.0 / hsub);
                basis.push(w);
                if estimate <= opts.rtol {
                    break;
                }
            }

            // Back-substitute the least-squares system and update x.
            let mut y = vec![0.0; cols];
            for row in (0..cols).rev() {
                let mut s = g[row];
                for col in (row + 1)..cols {
                    s -= h[col][row] * y[col];
                }
                y[row] = s / h[row][row];
            }
            for (j, &yj) in y.iter().enumerate() {
                x.add_scaled(&basis[j], yj);
            }
        }
    }

    fn report_for(
        &self,
        u: ControlBundle,
        iterations: usize,
        history: Vec<f64>,
        _internal_rel: f64,
        opts: &SolveOptions,
        started: Instant,
    ) -> NashReport {
        let solve_s = started.elapsed().as_secs_f64();
        let b = self.rhs();
        let norm_b = self.spec.norm_u(&b);
        let fresh = self.nash_residual(&u);
        let residual = if norm_b > 0.0 { fresh / norm_b } else { fresh };
        let j_values = (0..self.spec.player_count())
            .map(|i| objectives::eval_ji(self.spec, i, &u))
            .collect();
        let ellipticity = self.ellipticity_probe(8, opts.seed);
        NashReport {
            mode: self.mode.as_str().to_string(),
            iterations,
            residual,
            j_values,
            ellipticity_probe: ellipticity,
            seed: opts.seed,
            converged: true,
            timings: Timings {
                solve_s,
                total_s: started.elapsed().as_secs_f64(),
            },
            u,
            residual_history: history,
        }
    }
}
