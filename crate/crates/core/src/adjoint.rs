//! Exact discrete adjoint solves and the Riesz gradient of the per-player
//! cost.
//!
//! The backward sweep is the transpose of the discrete forward map, not a
//! discretization of the continuous adjoint equation. Because the forward
//! step matrix is self-adjoint in the trapezoid-weighted spatial inner
//! product, its weighted transpose is the matrix itself, so the sweep reuses
//! [`crate::heat::step`] with homogeneous boundary data and nodal sources:
//!
//!   A p_nt = η∘(y_nt − y_T) + Δt ρ∘(y_nt − y_d(t_nt))
//!   A p_n  = p_{n+1}        + Δt ρ∘(y_n  − y_d(t_n)),   n = nt-1 .. 1
//!
//! The level-0 row is one extra homogeneous solve, A p_0 = p_1; it never
//! enters gradients (controls live on steps 1..nt, where the time quadrature
//! of the tracking term lives).
//!
//! The gradient of J_i in the control space is assembled from the adjoint
//! trace on ω_i. Control nodes are interior nodes of the domain, so the
//! duality pairing carries the full-domain weight h per node while the
//! control inner product carries the trapezoid weight of ω_i (h/2 at the two
//! interval endpoints). The ratio of the two is applied when lifting the
//! trace, which makes the finite-difference gradient identity exact instead
//! of first-order accurate.

use crate::heat::{self, StateSolution};
use crate::problem::{ControlBundle, ControlSlab, ProblemSpec, SpaceTimeField};

/// Adjoint trajectory for one player.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub p: SpaceTimeField,
    pub player: usize,
}

/// Sources for the backward sweep: the state the adjoint reacts to and
/// optional targets (None means zero targets, the homogeneous case).
fn backward_sweep(
    spec: &ProblemSpec,
    i: usize,
    y: &SpaceTimeField,
    with_targets: bool,
) -> AdjointSolution {
    let grid = &spec.grid;
    let player = &spec.players[i];
    let nt = grid.nt;
    let nx = grid.nx;

    let tracking_source = |n: usize| -> Vec<f64> {
        (0..=nx)
            .map(|j| {
                let target = if with_targets {
                    player.target_yd.at(n, j)
                } else {
                    0.0
                };
                player.rho[j] * (y.at(n, j) - target)
            })
            .collect()
    };

    let mut p = SpaceTimeField::zeros(grid);

    // Terminal seed η∘(y(T) − y_T) enters the first backward solve as the
    // carried value; the transposed scheme smears it through one step.
    let seed: Vec<f64> = (0..=nx)
        .map(|j| {
            let target = if with_targets { player.target_yt[j] } else { 0.0 };
            player.eta[j] * (y.at(nt, j) - target)
        })
        .collect();

    let mut carry = seed;
    for n in (1..=nt).rev() {
        let source = tracking_source(n);
        let level = heat::step(&carry, &source, 0.0, 0.0, grid);
        p.set_level(n, &level);
        carry = level;
    }
    let zeros = vec![0.0; nx + 1];
    let level0 = heat::step(&carry, &zeros, 0.0, 0.0, grid);
    p.set_level(0, &level0);

    AdjointSolution { p, player: i }
}

/// Adjoint p_i(v) for the full state y = y(v), with targets.
pub fn solve_adjoint(spec: &ProblemSpec, i: usize, y: &StateSolution) -> AdjointSolution {
    backward_sweep(spec, i, &y.y, true)
}

/// Adjoint driven by a homogeneous state with zero targets.
pub fn solve_adjoint_homogeneous(
    spec: &ProblemSpec,
    i: usize,
    y_tilde: &StateSolution,
) -> AdjointSolution {
    backward_sweep(spec, i, &y_tilde.y, false)
}

/// Adjoint of the free state (computes the free state internally).
pub fn solve_adjoint_free(spec: &ProblemSpec, i: usize) -> AdjointSolution {
    let y_bar = heat::solve_state_free(spec);
    backward_sweep(spec, i, &y_bar.y, true)
}

/// Riesz-weighted trace of a space-time field on ω_i × steps: restriction to
/// the control nodes at levels 1..nt, scaled so the result represents the
/// corresponding linear functional in the 𝒰_i inner product.
pub fn riesz_trace(spec: &ProblemSpec, i: usize, field: &SpaceTimeField) -> ControlSlab {
    let lift = &spec.control_space().lift[i];
    let mut slab = spec.restrict_to_omega(field, i);
    for s in 0..slab.steps {
        for k in 0..slab.nodes {
            *slab.at_mut(s, k) *= lift[k];
        }
    }
    slab
}

/// Control-to-observation transpose check: for random pairs (v, w), the
/// control-space pairing of the lifted adjoint trace against w must equal the
/// weighted state pairing of the two homogeneous solutions. Returns the max
/// defect normalized by ‖v‖‖w‖.
pub fn adjoint_identity_defect(spec: &ProblemSpec, pairs: usize, seed: u64) -> f64 {
    use rand::SeedableRng;
    let grid = &spec.grid;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let v = spec.random_bundle(&mut rng);
        let w = spec.random_bundle(&mut rng);
        let yv = heat::solve_state_homogeneous(spec, &v);

        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for i in 0..spec.player_count() {
            let adj = solve_adjoint_homogeneous(spec, i, &yv);
            let trace = riesz_trace(spec, i, &adj.p);
            lhs += spec.inner_product_player(i, &trace, &w.slabs[i]);

            let mut only_i = spec.zero_bundle();
            only_i.slabs[i] = w.slabs[i].clone();
            let ywi = heat::solve_state_homogeneous(spec, &only_i);
            let player = &spec.players[i];
            for n in 1..=grid.nt {
                for j in 0..=grid.nx {
                    rhs += grid.dt()
                        * grid.space_weight(j)
                        * player.rho[j]
                        * yv.y.at(n, j)
                        * ywi.y.at(n, j);
                }
            }
            for j in 0..=grid.nx {
                rhs += grid.space_weight(j)
                    * player.eta[j]
                    * yv.y.at(grid.nt, j)
                    * ywi.y.at(grid.nt, j);
            }
        }
        let scale = spec.norm_u(&v) * spec.norm_u(&w);
        worst = worst.max((lhs - rhs).abs() / scale.max(1e-300));
    }
    worst
}

/// Riesz representative of ∂J_i/∂v_i at v: α_i v_i plus the weighted adjoint
/// trace on ω_i. One forward and one backward solve.
pub fn riesz_gradient(spec: &ProblemSpec, i: usize, v: &ControlBundle) -> ControlSlab {
    let y = heat::solve_state(spec, v);
    let adj = solve_adjoint(spec, i, &y);
    let mut g = riesz_trace(spec, i, &adj.p);
    let alpha = spec.players[i].alpha;
    let vi = &v.slabs[i];
    for s in 0..g.steps {
        for k in 0..g.nodes {
            *g.at_mut(s, k) += alpha * vi.at(s, k);
        }
    }
    g
}
