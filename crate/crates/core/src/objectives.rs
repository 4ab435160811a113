//! Cost functionals and the equivalence certifications.
//!
//! All quadratures agree with the rest of the crate: rectangle rule in time
//! over levels 1..nt (t_0 carries data, not decisions) and the trapezoid rule
//! in space over the full domain. The expanded cooperative functionals are
//! the versions obtained by expanding the quadratic form (𝒜v, v) − 2(b, v),
//! halving, and completing squares; the published displays of these
//! functionals are also available as `*_literal` variants, which differ by
//! v-dependent terms and are kept as negative controls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint;
use crate::game::{GameError, GameOperator, OperatorMode, SolveOptions};
use crate::heat;
use crate::problem::{ControlBundle, ProblemSpec, SpaceTimeField};

/// Σ_{n=1..nt} Δt Σ_j W_j weight_j a(n,j) b(n,j).
fn tracking_pairing(
    spec: &ProblemSpec,
    weight: &[f64],
    a: impl Fn(usize, usize) -> f64,
    b: impl Fn(usize, usize) -> f64,
) -> f64 {
    let grid = &spec.grid;
    let dt = grid.dt();
    let mut sum = 0.0;
    for n in 1..=grid.nt {
        for j in 0..=grid.nx {
            sum += dt * grid.space_weight(j) * weight[j] * a(n, j) * b(n, j);
        }
    }
    sum
}

/// Σ_j W_j weight_j a(j) b(j) at the terminal level.
fn terminal_pairing(
    spec: &ProblemSpec,
    weight: &[f64],
    a: impl Fn(usize) -> f64,
    b: impl Fn(usize) -> f64,
) -> f64 {
    let grid = &spec.grid;
    let mut sum = 0.0;
    for j in 0..=grid.nx {
        sum += grid.space_weight(j) * weight[j] * a(j) * b(j);
    }
    sum
}

/// J_i(v): control cost plus tracking and terminal misfit. One forward solve.
pub fn eval_ji(spec: &ProblemSpec, i: usize, v: &ControlBundle) -> f64 {
    let y = heat::solve_state(spec, v);
    eval_ji_for_state(spec, i, v, &y.y)
}

/// J_i evaluated against an externally supplied state trajectory.
pub fn eval_ji_for_state(
    spec: &ProblemSpec,
    i: usize,
    v: &ControlBundle,
    y: &SpaceTimeField,
) -> f64 {
    let player = &spec.players[i];
    let nt = spec.grid.nt;
    let control = 0.5 * player.alpha * spec.inner_product_player(i, &v.slabs[i], &v.slabs[i]);
    let tracking = 0.5
        * tracking_pairing(
            spec,
            &player.rho,
            |n, j| y.at(n, j) - player.target_yd.at(n, j),
            |n, j| y.at(n, j) - player.target_yd.at(n, j),
        );
    let terminal = 0.5
        * terminal_pairing(
            spec,
            &player.eta,
            |j| y.at(nt, j) - player.target_yt[j],
            |j| y.at(nt, j) - player.target_yt[j],
        );
    control + tracking + terminal
}

fn require_symmetric(spec: &ProblemSpec, what: &str) -> Result<(), GameError> {
    if !spec.verify_common_target() {
        return Err(GameError::ModeMismatch(format!(
            "{what} requires the common-target (symmetric) case"
        )));
    }
    Ok(())
}

/// The quadratic form J̃(v) = (𝒜v, v) − 2(b, v); its unique minimizer is the
/// Nash equilibrium. Symmetric mode only.
pub fn eval_jtilde(op: &GameOperator, v: &ControlBundle) -> Result<f64, GameError> {
    if op.mode() != OperatorMode::Symmetric {
        return Err(GameError::ModeMismatch(
            "J~ requires the common-target (symmetric) case".into(),
        ));
    }
    let spec = op.spec();
    let av = op.apply(v);
    let b = op.rhs();
    Ok(spec.inner_product(&av, v) - 2.0 * spec.inner_product(&b, v))
}

/// Superposition states y(0,…,v_i,…,0) = ỹ_i + ȳ for every player.
fn superposition_states(
    spec: &ProblemSpec,
    v: &ControlBundle,
    needed: &[bool],
) -> Vec<Option<SpaceTimeField>> {
    needed
        .par_iter()
        .enumerate()
        .map(|(i, &want)| {
            if !want {
                return None;
            }
            let mut only_i = spec.zero_bundle();
            only_i.slabs[i] = v.slabs[i].clone();
            Some(heat::solve_state_homogeneous(spec, &only_i).y)
        })
        .collect()
}

/// The single-objective cooperative functional whose minimizer is the Nash
/// equilibrium: diagonal misfit terms per superposition state plus centered
/// cross terms. N homogeneous forward solves plus one free solve.
pub fn eval_j_coop(spec: &ProblemSpec, v: &ControlBundle) -> Result<f64, GameError> {
    require_symmetric(spec, "the cooperative functional")?;
    let n_players = spec.player_count();
    let rho = &spec.players[0].rho;
    let eta = &spec.players[0].eta;
    let nt = spec.grid.nt;

    let y_bar = heat::solve_state_free(spec).y;
    let tildes = superposition_states(spec, v, &vec![true; n_players]);

    let mut total = 0.0;
    for (i, player) in spec.players.iter().enumerate() {
        let y_tilde = tildes[i].as_ref().unwrap();
        total += 0.5 * player.alpha * spec.inner_product_player(i, &v.slabs[i], &v.slabs[i]);
        total += 0.5
            * tracking_pairing(
                spec,
                rho,
                |n, j| y_tilde.at(n, j) + y_bar.at(n, j) - player.target_yd.at(n, j),
                |n, j| y_tilde.at(n, j) + y_bar.at(n, j) - player.target_yd.at(n, j),
            );
        total += 0.5
            * terminal_pairing(
                spec,
                eta,
                |j| y_tilde.at(nt, j) + y_bar.at(nt, j) - player.target_yt[j],
                |j| y_tilde.at(nt, j) + y_bar.at(nt, j) - player.target_yt[j],
            );
    }
    for i in 0..n_players {
        for k in (i + 1)..n_players {
            let yi = tildes[i].as_ref().unwrap();
            let yk = tildes[k].as_ref().unwrap();
            total += tracking_pairing(spec, rho, |n, j| yi.at(n, j), |n, j| yk.at(n, j));
            total += terminal_pairing(spec, eta, |j| yi.at(nt, j), |j| yk.at(nt, j));
        }
    }
    Ok(total)
}

/// The published display of the cooperative functional, kept for comparison:
/// cross terms carry a factor 2 and pair the raw superposition states rather
/// than their control-driven parts. Not constant-distance from J̃/2.
pub fn eval_j_coop_literal(spec: &ProblemSpec, v: &ControlBundle) -> Result<f64, GameError> {
    require_symmetric(spec, "the cooperative functional")?;
    let n_players = spec.player_count();
    let rho = &spec.players[0].rho;
    let eta = &spec.players[0].eta;
    let nt = spec.grid.nt;

    let y_bar = heat::solve_state_free(spec).y;
    let tildes = superposition_states(spec, v, &vec![true; n_players]);
    let y_full = |i: usize, n: usize, j: usize| {
        tildes[i].as_ref().unwrap().at(n, j) + y_bar.at(n, j)
    };

    let mut total = 0.0;
    for (i, player) in spec.players.iter().enumerate() {
        total += 0.5 * player.alpha * spec.inner_product_player(i, &v.slabs[i], &v.slabs[i]);
        total += 0.5
            * tracking_pairing(
                spec,
                rho,
                |n, j| y_full(i, n, j) - player.target_yd.at(n, j),
                |n, j| y_full(i, n, j) - player.target_yd.at(n, j),
            );
        total += 0.5
            * terminal_pairing(
                spec,
                eta,
                |j| y_full(i, nt, j) - player.target_yt[j],
                |j| y_full(i, nt, j) - player.target_yt[j],
            );
    }
    for i in 0..n_players {
        for k in (i + 1)..n_players {
            total += 2.0
                * tracking_pairing(spec, rho, |n, j| y_full(i, n, j), |n, j| y_full(k, n, j));
            total += 2.0 * terminal_pairing(spec, eta, |j| y_full(i, nt, j), |j| y_full(k, nt, j));
        }
    }
    Ok(total)
}

/// The (j, p)-indexed single-objective functional: full-state misfit against
/// player j's tracking target and player p's terminal target, plus the
/// correction terms produced by re-centering the linear part.
pub fn eval_jjp(
    spec: &ProblemSpec,
    j: usize,
    p: usize,
    v: &ControlBundle,
) -> Result<f64, GameError> {
    require_symmetric(spec, "the indexed cooperative functional")?;
    let n_players = spec.player_count();
    if j >= n_players || p >= n_players {
        return Err(GameError::InvalidArgument(format!(
            "player indices ({j}, {p}) out of range for {n_players} players"
        )));
    }
    let rho = &spec.players[0].rho;
    let eta = &spec.players[0].eta;
    let nt = spec.grid.nt;

    let y = heat::solve_state(spec, v).y;
    let needed: Vec<bool> = (0..n_players).map(|i| i != j || i != p).collect();
    let tildes = superposition_states(spec, v, &needed);

    let mut total = 0.0;
    for (i, player) in spec.players.iter().enumerate() {
        total += 0.5 * player.alpha * spec.inner_product_player(i, &v.slabs[i], &v.slabs[i]);
    }
    let yd_j = &spec.players[j].target_yd;
    let yt_p = &spec.players[p].target_yt;
    total += 0.5
        * tracking_pairing(
            spec,
            rho,
            |n, jj| y.at(n, jj) - yd_j.at(n, jj),
            |n, jj| y.at(n, jj) - yd_j.at(n, jj),
        );
    total += 0.5
        * terminal_pairing(
            spec,
            eta,
            |jj| y.at(nt, jj) - yt_p[jj],
            |jj| y.at(nt, jj) - yt_p[jj],
        );
    for i in 0..n_players {
        if i != j {
            let y_tilde = tildes[i].as_ref().unwrap();
            let yd_i = &spec.players[i].target_yd;
            total += tracking_pairing(
                spec,
                rho,
                |n, jj| yd_j.at(n, jj) - yd_i.at(n, jj),
                |n, jj| y_tilde.at(n, jj),
            );
        }
        if i != p {
            let y_tilde = tildes[i].as_ref().unwrap();
            let yt_i = &spec.players[i].target_yt;
            total += terminal_pairing(
                spec,
                eta,
                |jj| yt_p[jj] - yt_i[jj],
                |jj| y_tilde.at(nt, jj),
            );
        }
    }
    Ok(total)
}

/// The published display of the indexed functional: correction terms carry a
/// factor 2 and pair against player j's control-driven state for every i.
pub fn eval_jjp_literal(
    spec: &ProblemSpec,
    j: usize,
    p: usize,
    v: &ControlBundle,
) -> Result<f64, GameError> {
    require_symmetric(spec, "the indexed cooperative functional")?;
    let n_players = spec.player_count();
    if j >= n_players || p >= n_players {
        return Err(GameError::InvalidArgument(format!(
            "player indices ({j}, {p}) out of range for {n_players} players"
        )));
    }
    let rho = &spec.players[0].rho;
    let eta = &spec.players[0].eta;
    let nt = spec.grid.nt;

    let y = heat::solve_state(spec, v).y;
    let mut needed = vec![false; n_players];
    needed[j] = true;
    let tildes = superposition_states(spec, v, &needed);
    let y_tilde_j = tildes[j].as_ref().unwrap();

    let mut total = 0.0;
    for (i, player) in spec.players.iter().enumerate() {
        total += 0.5 * player.alpha * spec.inner_product_player(i, &v.slabs[i], &v.slabs[i]);
    }
    let yd_j = &spec.players[j].target_yd;
    let yt_p = &spec.players[p].target_yt;
    total += 0.5
        * tracking_pairing(
            spec,
            rho,
            |n, jj| y.at(n, jj) - yd_j.at(n, jj),
            |n, jj| y.at(n, jj) - yd_j.at(n, jj),
        );
    total += 0.5
        * terminal_pairing(
            spec,
            eta,
            |jj| y.at(nt, jj) - yt_p[jj],
            |jj| y.at(nt, jj) - yt_p[jj],
        );
    for i in 0..n_players {
        if i != j {
            let yd_i = &spec.players[i].target_yd;
            total += 2.0
                * tracking_pairing(
                    spec,
                    rho,
                    |n, jj| yd_j.at(n, jj) - yd_i.at(n, jj),
                    |n, jj| y_tilde_j.at(n, jj),
                );
        }
        if i != p {
            let yt_i = &spec.players[i].target_yt;
            total += 2.0
                * terminal_pairing(
                    spec,
                    eta,
                    |jj| yt_p[jj] - yt_i[jj],
                    |jj| y_tilde_j.at(nt, jj),
                );
        }
    }
    Ok(total)
}

/// Which cooperative functional a certification targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Coop,
    Jp { j: usize, p: usize },
}

impl Family {
    pub fn label(&self) -> String {
        match self {
            Family::Coop => "coop".to_string(),
            Family::Jp { j, p } => format!("jp({},{})", j + 1, p + 1),
        }
    }
}

/// Outcome of one equivalence certification.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub family: String,
    pub literal: bool,
    pub probes: usize,
    pub seed: u64,
    /// Mean of J_family(v) − J̃(v)/2 over the probe set.
    pub constant_mean: f64,
    /// Max deviation of the difference from its mean.
    pub constant_max_dev: f64,
    pub constant_variance: f64,
    /// Max relative FD error of ⟨𝒜v − b, d⟩ against the family functional.
    pub grad_fd_max_rel_err: f64,
    /// ‖u_independent − u_nash‖/‖u_nash‖ (absolute when the equilibrium is
    /// zero); None for literal variants, which are not minimized.
    pub argmin_rel_distance: Option<f64>,
}

fn family_eval(
    spec: &ProblemSpec,
    family: Family,
    literal: bool,
    v: &ControlBundle,
) -> Result<f64, GameError> {
    match (family, literal) {
        (Family::Coop, false) => eval_j_coop(spec, v),
        (Family::Coop, true) => eval_j_coop_literal(spec, v),
        (Family::Jp { j, p }, false) => eval_jjp(spec, j, p, v),
        (Family::Jp { j, p }, true) => eval_jjp_literal(spec, j, p, v),
    }
}

/// Certify that minimizing the chosen single-objective functional reproduces
/// the Nash equilibrium: (a) J_family − J̃/2 is constant over random probes,
/// (b) an independent CG run from a random start lands on the same point.
pub fn certify_equivalence(
    op: &GameOperator,
    family: Family,
    probes: usize,
    seed: u64,
    literal: bool,
) -> Result<EquivalenceReport, GameError> {
    if probes < 10 {
        return Err(GameError::InvalidArgument(
            "equivalence certification needs at least 10 probes".into(),
        ));
    }
    let spec = op.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut deviations = Vec::with_capacity(probes);
    for _ in 0..probes {
        let v = spec.random_unit_bundle(&mut rng);
        let fam = family_eval(spec, family, literal, &v)?;
        let jt = eval_jtilde(op, &v)?;
        deviations.push(fam - 0.5 * jt);
    }
    let mean = deviations.iter().sum::<f64>() / probes as f64;
    let max_dev = deviations
        .iter()
        .map(|d| (d - mean).abs())
        .fold(0.0, f64::max);
    let variance = deviations.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / probes as f64;

    // The functional's own gradient must be the affine map: central FD of the
    // family functional against <Av - b, d>.
    let b = op.rhs();
    let mut grad_err: f64 = 0.0;
    let eps = 1e-5;
    for _ in 0..3 {
        let v = spec.random_unit_bundle(&mut rng);
        let grad = op.apply(&v).linear_combination(1.0, &b, -1.0);
        for _ in 0..2 {
            let d = spec.random_unit_bundle(&mut rng);
            let plus = v.linear_combination(1.0, &d, eps);
            let minus = v.linear_combination(1.0, &d, -eps);
            let fd = (family_eval(spec, family, literal, &plus)?
                - family_eval(spec, family, literal, &minus)?)
                / (2.0 * eps);
            let dot = spec.inner_product(&grad, &d);
            let denom = dot.abs().max(1e-300);
            grad_err = grad_err.max((fd - dot).abs() / denom);
        }
    }

    let argmin_rel_distance = if literal {
        None
    } else {
        let opts = SolveOptions {
            seed,
            ..Default::default()
        };
        let nash = op.solve_cg(&opts)?;
        let start = spec.random_unit_bundle(&mut rng);
        let independent = op.solve_cg_from(&start, &opts)?;
        let mut diff = independent.u.clone();
        diff.add_scaled(&nash.u, -1.0);
        let norm_nash = spec.norm_u(&nash.u);
        let dist = spec.norm_u(&diff);
        Some(if norm_nash > 0.0 { dist / norm_nash } else { dist })
    };

    Ok(EquivalenceReport {
        family: family.label(),
        literal,
        probes,
        seed,
        constant_mean: mean,
        constant_max_dev: max_dev,
        constant_variance: variance,
        grad_fd_max_rel_err: grad_err,
        argmin_rel_distance,
    })
}

/// Max relative error of the central finite difference of J_i against the
/// Riesz gradient over seeded random unit directions supported on player i.
pub fn fd_gradient_check(
    spec: &ProblemSpec,
    i: usize,
    v: &ControlBundle,
    directions: usize,
    eps: f64,
    seed: u64,
) -> f64 {
    assert!(eps > 0.0, "step size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = adjoint::riesz_gradient(spec, i, v);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let d = spec.random_unit_direction(i, &mut rng);
        let plus = v.linear_combination(1.0, &d, eps);
        let minus = v.linear_combination(1.0, &d, -eps);
        let fd = (eval_ji(spec, i, &plus) - eval_ji(spec, i, &minus)) / (2.0 * eps);
        let dot = spec.inner_product_player(i, &g, &d.slabs[i]);
        let denom = dot.abs().max(1e-300);
        worst = worst.max((fd - dot).abs() / denom);
    }
    worst
}

/// Smallest observed J_i(u + εd) − J_i(u) over random unilateral deviations.
/// Nonnegative (to roundoff) exactly at a Nash equilibrium.
pub fn unilateral_check(op: &GameOperator, u: &ControlBundle, trials: usize, seed: u64) -> f64 {
    let spec = op.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base: Vec<Option<f64>> = vec![None; spec.player_count()];
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let i = rng.gen_range(0..spec.player_count());
        let d = spec.random_unit_direction(i, &mut rng);
        let ji_u = *base[i].get_or_insert_with(|| eval_ji(spec, i, u));
        for eps in [1e-3, 1e-2] {
            let moved = u.linear_combination(1.0, &d, eps);
            let improvement = eval_ji(spec, i, &moved) - ji_u;
            worst = worst.min(improvement);
        }
    }
    worst
}
