//! Forward-in-time solver for the state equation and its homogeneous and
//! free variants.
//!
//! Implicit Euler in time (θ = 1), second-order centered Laplacian in space.
//! Each step solves (I − Δt·Δ_h) y_new = y_prev + Δt·forcing for the unknowns
//! j = 1..nx, with the Dirichlet value at j = 0 eliminated into the right-hand
//! side and a ghost-node Neumann row at j = nx:
//!
//!   (2 y_{nx-1} − 2 y_{nx})/h² + 2 g2/h
//!
//! which keeps the row pattern tridiagonal and the operator self-adjoint in
//! the trapezoid-weighted inner product. Forcing is evaluated at the new time
//! level so the transposed scheme is an exact discrete adjoint.

use std::path::Path;

use crate::problem::{ControlBundle, GridSpec, ProblemSpec, SpaceTimeField};

/// Solved state trajectory plus scheme metadata.
#[derive(Debug, Clone)]
pub struct StateSolution {
    pub y: SpaceTimeField,
    pub steps: usize,
    /// Time-scheme parameter; always 1 (implicit Euler).
    pub theta: f64,
}

/// Solve a tridiagonal system by the Thomas algorithm.
///
/// `sub[i]` multiplies x[i-1] (sub[0] unused), `sup[i]` multiplies x[i+1]
/// (sup[n-1] unused). The implicit-Euler matrix is strictly diagonally
/// dominant, so no pivoting is needed.
pub fn tridiag_solve(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    assert!(n > 0);
    assert_eq!(sub.len(), n);
    assert_eq!(diag.len(), n);
    assert_eq!(sup.len(), n);

    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - sub[i] * c[i - 1];
        if i < n - 1 {
            c[i] = sup[i] / den;
        }
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// One implicit-Euler step. `y_prev` and `forcing` have length nx+1; returns
/// the new spatial field with the Dirichlet row set to g1.
pub fn step(y_prev: &[f64], forcing: &[f64], g1: f64, g2: f64, grid: &GridSpec) -> Vec<f64> {
    let nx = grid.nx;
    assert_eq!(y_prev.len(), nx + 1, "field length must be nx+1");
    assert_eq!(forcing.len(), nx + 1, "field length must be nx+1");
    let h = grid.h();
    let dt = grid.dt();
    let r = dt / (h * h);

    // Unknowns j = 1..nx mapped to i = j-1.
    let n = nx;
    let mut sub = vec![-r; n];
    let mut sup = vec![-r; n];
    let diag = vec![1.0 + 2.0 * r; n];
    sub[0] = 0.0;
    sup[n - 1] = 0.0;
    sub[n - 1] = -2.0 * r; // ghost-node Neumann row

    let mut rhs = vec![0.0; n];
    for i in 0..n {
        rhs[i] = y_prev[i + 1] + dt * forcing[i + 1];
    }
    rhs[0] += r * g1;
    rhs[n - 1] += 2.0 * dt / h * g2;

    let interior = tridiag_solve(&sub, &diag, &sup, &rhs);
    let mut next = vec![0.0; nx + 1];
    next[0] = g1;
    next[1..].copy_from_slice(&interior);
    next
}

enum DataMode {
    /// f, y0, g1, g2 from the spec.
    Full,
    /// All data zero (the control-driven part).
    Homogeneous,
}

fn sweep(spec: &ProblemSpec, v: Option<&ControlBundle>, mode: DataMode) -> StateSolution {
    let grid = &spec.grid;
    let mut y = SpaceTimeField::zeros(grid);
    let mut forcing = vec![0.0; grid.nx + 1];

    if let DataMode::Full = mode {
        y.set_level(0, &spec.y0);
    }

    for n in 1..=grid.nt {
        for f in forcing.iter_mut() {
            *f = 0.0;
        }
        let (g1, g2) = match mode {
            DataMode::Full => {
                for j in 0..=grid.nx {
                    forcing[j] = spec.forcing.at(n, j);
                }
                (spec.g1[n], spec.g2[n])
            }
            DataMode::Homogeneous => (0.0, 0.0),
        };
        if let Some(bundle) = v {
            for (slab, player) in bundle.slabs.iter().zip(&spec.players) {
                let row = slab.step_row(n - 1);
                for (k, j) in player.omega.nodes().enumerate() {
                    forcing[j] += row[k];
                }
            }
        }
        let next = step(y.level(n - 1), &forcing, g1, g2, grid);
        y.set_level(n, &next);
    }

    StateSolution {
        y,
        steps: grid.nt,
        theta: 1.0,
    }
}

/// State y(v) driven by the full data and the controls.
pub fn solve_state(spec: &ProblemSpec, v: &ControlBundle) -> StateSolution {
    sweep(spec, Some(v), DataMode::Full)
}

/// Homogeneous state: controls only, zero f, y0, g1, g2. Linear in v.
pub fn solve_state_homogeneous(spec: &ProblemSpec, v: &ControlBundle) -> StateSolution {
    sweep(spec, Some(v), DataMode::Homogeneous)
}

/// Free state: full data, zero controls.
pub fn solve_state_free(spec: &ProblemSpec) -> StateSolution {
    sweep(spec, None, DataMode::Full)
}

/// Dump a space-time field as CSV: a `#` metadata line, a header row, then
/// one row per time level with full double precision.
pub fn write_state_csv(
    path: impl AsRef<Path>,
    grid: &GridSpec,
    field: &SpaceTimeField,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = String::new();
    out.push_str(&format!(
        "# L={} T={} nx={} nt={}\n",
        grid.length, grid.horizon, grid.nx, grid.nt
    ));
    out.push('t');
    for j in 0..=grid.nx {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for n in 0..=grid.nt {
        out.push_str(&format!("{:.16e}", grid.time(n)));
        for j in 0..=grid.nx {
            out.push_str(&format!(",{:.16e}", field.at(n, j)));
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())
}

/// Read back a field written by [`write_state_csv`].
pub fn read_state_csv(path: impl AsRef<Path>) -> std::io::Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with('t') || line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|s| s.parse().expect("malformed CSV number"))
            .collect();
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{two_player_spec, zero_spec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense Gaussian elimination, used as an independent oracle for the
    /// tridiagonal step.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            for row in (col + 1)..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = b[row];
            for k in (row + 1)..n {
                s -= a[row][k] * x[k];
            }
            x[row] = s / a[row][row];
        }
        x
    }

    #[test]
    fn tridiag_identity() {
        let d = vec![1.0; 5];
        let z = vec![0.0; 5];
        let rhs = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let x = tridiag_solve(&z, &d, &z, &rhs);
        for (xi, ri) in x.iter().zip(&rhs) {
            assert!((xi - ri).abs() < 1e-15);
        }
    }

    #[test]
    fn tridiag_matches_dense() {
        let sub = vec![0.0, -1.0, -2.0, -0.5];
        let diag = vec![3.0, 4.0, 5.0, 3.5];
        let sup = vec![-1.5, -0.7, -1.0, 0.0];
        let rhs = vec![1.0, -2.0, 0.5, 3.0];
        let x = tridiag_solve(&sub, &diag, &sup, &rhs);
        let mut dense = vec![vec![0.0; 4]; 4];
        for i in 0..4 {
            dense[i][i] = diag[i];
            if i > 0 {
                dense[i][i - 1] = sub[i];
            }
            if i < 3 {
                dense[i][i + 1] = sup[i];
            }
        }
        let expected = dense_solve(dense, rhs);
        for (a, b) in x.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn step_zero_stays_zero() {
        let grid = GridSpec::new(1.0, 1.0, 8, 4).unwrap();
        let zeros = vec![0.0; 9];
        let next = step(&zeros, &zeros, 0.0, 0.0, &grid);
        assert!(next.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn step_constant_steady_state() {
        // y_prev = 1 with matching Dirichlet value and zero flux stays 1.
        let grid = GridSpec::new(1.0, 1.0, 8, 4).unwrap();
        let ones = vec![1.0; 9];
        let zeros = vec![0.0; 9];
        let next = step(&ones, &zeros, 1.0, 0.0, &grid);
        for (j, &x) in next.iter().enumerate() {
            assert!((x - 1.0).abs() < 1e-14, "node {j}: {x}");
        }
    }

    #[test]
    fn step_delta_forcing_matches_dense_oracle() {
        // nx=4, one unit step, unit forcing at node 2: compare the 4x4
        // tridiagonal solve against dense Gaussian elimination.
        let grid = GridSpec::new(1.0, 2.0, 4, 2).unwrap();
        let h = grid.h();
        let dt = grid.dt();
        let r = dt / (h * h);
        let mut forcing = vec![0.0; 5];
        forcing[2] = 1.0;
        let zeros = vec![0.0; 5];
        let next = step(&zeros, &forcing, 0.0, 0.0, &grid);

        let mut a = vec![vec![0.0; 4]; 4];
        for i in 0..4 {
            a[i][i] = 1.0 + 2.0 * r;
            if i > 0 {
                a[i][i - 1] = -r;
            }
            if i < 3 {
                a[i][i + 1] = -r;
            }
        }
        a[3][2] = -2.0 * r;
        let rhs = vec![0.0, dt, 0.0, 0.0];
        let expected = dense_solve(a, rhs);
        assert_eq!(next[0], 0.0);
        for i in 0..4 {
            assert!(
                (next[i + 1] - expected[i]).abs() < 1e-14,
                "node {}: {} vs {}",
                i + 1,
                next[i + 1],
                expected[i]
            );
        }
    }

    #[test]
    fn all_zero_problem_gives_zero_state() {
        let spec = zero_spec();
        let v = spec.zero_bundle();
        let sol = solve_state(&spec, &v);
        assert!(sol.y.values().iter().all(|&x| x == 0.0));
        let free = solve_state_free(&spec);
        assert!(free.y.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_control_equals_free_state() {
        let spec = two_player_spec(16, 8);
        let v = spec.zero_bundle();
        let with_zero = solve_state(&spec, &v);
        let free = solve_state_free(&spec);
        assert_eq!(with_zero.y, free.y, "bitwise equal by construction");
    }

    #[test]
    fn state_decomposes_into_homogeneous_plus_free() {
        let spec = two_player_spec(16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = spec.random_bundle(&mut rng);
        let full = solve_state(&spec, &v);
        let tilde = solve_state_homogeneous(&spec, &v);
        let free = solve_state_free(&spec);
        let mut recomposed = tilde.y.clone();
        recomposed.add_scaled(&free.y, 1.0);
        let scale = full
            .y
            .values()
            .iter()
            .fold(0.0_f64, |m, &x| m.max(x.abs()));
        assert!(
            full.y.max_abs_diff(&recomposed) <= 1e-12 * scale.max(1.0),
            "y(v) = y_tilde(v) + y_bar"
        );
    }

    #[test]
    fn homogeneous_solver_is_linear() {
        let spec = two_player_spec(12, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = spec.random_bundle(&mut rng);
        let mut scaled = v.clone();
        scaled.scale(-2.5);
        let base = solve_state_homogeneous(&spec, &v);
        let double = solve_state_homogeneous(&spec, &scaled);
        let mut expected = base.y.clone();
        for n in 0..=spec.grid.nt {
            for j in 0..=spec.grid.nx {
                *expected.at_mut(n, j) *= -2.5;
            }
        }
        assert!(double.y.max_abs_diff(&expected) < 1e-12);

        // Zero control gives the zero field.
        let zero = solve_state_homogeneous(&spec, &spec.zero_bundle());
        assert!(zero.y.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn superposition_over_players() {
        let spec = two_player_spec(16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = spec.random_bundle(&mut rng);
        let total = solve_state_homogeneous(&spec, &v);
        let mut sum = SpaceTimeField::zeros(&spec.grid);
        for i in 0..spec.player_count() {
            let mut only_i = spec.zero_bundle();
            only_i.slabs[i] = v.slabs[i].clone();
            let part = solve_state_homogeneous(&spec, &only_i);
            sum.add_scaled(&part.y, 1.0);
        }
        assert!(total.y.max_abs_diff(&sum) < 1e-13, "superposition");
    }

    #[test]
    fn constant_free_state_is_steady() {
        // y0 = c, g1 = c, g2 = 0, f = 0 stays constant.
        let spec = crate::test_support::parse(
            r#"{
            "grid": {"L": 2.0, "T": 1.0, "nx": 8, "nt": 4},
            "data": {
                "f":  {"kind": "constant", "params": [0.0]},
                "y0": {"kind": "constant", "params": [3.5]},
                "g1": {"kind": "constant", "params": [3.5]},
                "g2": {"kind": "constant", "params": [0.0]}
            },
            "players": [
                {"alpha": 1.0, "omega": [0.5, 1.0],
                 "rho": {"kind": "constant", "params": [0.0]},
                 "eta": {"kind": "constant", "params": [0.0]},
                 "yd":  {"kind": "constant", "params": [0.0]},
                 "yT":  {"kind": "constant", "params": [0.0]}}
            ]
        }"#,
        );
        let free = solve_state_free(&spec);
        for n in 0..=spec.grid.nt {
            for j in 0..=spec.grid.nx {
                assert!((free.y.at(n, j) - 3.5).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn max_norm_nonincreasing_with_zero_data() {
        // Discrete maximum principle for implicit Euler.
        let spec = two_player_spec(20, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut doctored = spec.clone();
        use rand::Rng;
        doctored.y0 = (0..=spec.grid.nx)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        doctored.y0[0] = 0.0; // match the homogeneous Dirichlet datum
        doctored.g1 = vec![0.0; spec.grid.nt + 1];
        doctored.g2 = vec![0.0; spec.grid.nt + 1];
        doctored.forcing = SpaceTimeField::zeros(&spec.grid);
        let sol = solve_state_free(&doctored);
        let mut prev = f64::INFINITY;
        for n in 0..=spec.grid.nt {
            let level_max = sol
                .y
                .level(n)
                .iter()
                .fold(0.0_f64, |m, &x| m.max(x.abs()));
            assert!(level_max <= prev + 1e-14, "level {n}: {level_max} > {prev}");
            prev = level_max;
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let spec = two_player_spec(12, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let v = spec.random_bundle(&mut rng);
        let a = solve_state(&spec, &v);
        let b = solve_state(&spec, &v);
        assert_eq!(a.y, b.y, "bit-identical outputs");
    }

    #[test]
    fn manufactured_solution_first_order_in_time() {
        // y = e^{-t} sin(pi x / (2L)) satisfies the scheme's boundary data
        // with g1 = 0, g2 = 0 and forcing f = (c^2 - 1) y, c = pi/(2L).
        let l = 1.0;
        let c = std::f64::consts::PI / (2.0 * l);
        let exact = |t: f64, x: f64| (-t).exp() * (c * x).sin();
        let nx = 200;

        let error_for = |nt: usize| -> f64 {
            let grid = GridSpec::new(l, 1.0, nx, nt).unwrap();
            let forcing =
                SpaceTimeField::from_fn(&grid, |t, x| (c * c - 1.0) * exact(t, x));
            let y0: Vec<f64> = (0..=nx).map(|j| exact(0.0, grid.node(j))).collect();
            let spec = ProblemSpec::assemble(
                grid.clone(),
                vec![crate::problem::PlayerSpec {
                    alpha: 1.0,
                    omega: crate::problem::OmegaSpan {
                        a: grid.node(1),
                        b: grid.node(2),
                        first_node: 1,
                        last_node: 2,
                    },
                    rho: vec![0.0; nx + 1],
                    eta: vec![0.0; nx + 1],
                    target_yd: SpaceTimeField::zeros(&grid),
                    target_yt: vec![0.0; nx + 1],
                }],
                forcing,
                y0,
                vec![0.0; nt + 1],
                vec![0.0; nt + 1],
            )
            .unwrap();
            let sol = solve_state_free(&spec);
            // L2(Q) error with rectangle rule in time, trapezoid in space.
            let mut err2 = 0.0;
            for n in 1..=nt {
                for j in 0..=nx {
                    let d = sol.y.at(n, j) - exact(grid.time(n), grid.node(j));
                    err2 += grid.dt() * grid.space_weight(j) * d * d;
                }
            }
            err2.sqrt()
        };

        let coarse = error_for(8);
        let fine = error_for(16);
        let ratio = coarse / fine;
        assert!(
            (1.6..=2.4).contains(&ratio),
            "first-order ratio out of range: {ratio} (coarse {coarse}, fine {fine})"
        );
    }

    #[test]
    fn free_state_close_to_refined_grid() {
        // Doubling nx and nt changes the terminal state by < 5e-2 relative.
        let coarse_spec = two_player_spec(48, 48);
        let fine_spec = two_player_spec(96, 96);
        let coarse = solve_state_free(&coarse_spec);
        let fine = solve_state_free(&fine_spec);
        let nt_c = coarse_spec.grid.nt;
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..=coarse_spec.grid.nx {
            let a = coarse.y.at(nt_c, j);
            let b = fine.y.at(fine_spec.grid.nt, 2 * j);
            num += (a - b) * (a - b);
            den += b * b;
        }
        assert!(num.sqrt() / den.sqrt() < 5e-2, "refinement gap too large");
    }

    #[test]
    fn csv_roundtrip() {
        let spec = two_player_spec(8, 4);
        let free = solve_state_free(&spec);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.csv");
        write_state_csv(&path, &spec.grid, &free.y).unwrap();
        let rows = read_state_csv(&path).unwrap();
        assert_eq!(rows.len(), spec.grid.nt + 1);
        for (n, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), spec.grid.nx + 1);
            for (j, &x) in row.iter().enumerate() {
                assert_eq!(x, free.y.at(n, j), "17 significant digits round-trip");
            }
        }
    }
}
