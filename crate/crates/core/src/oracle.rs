//! Dense brute-force ground truth at small scale: explicit assembly of the
//! optimality operator, direct solve, symmetry and eigenvalue checks.
//!
//! Self-adjointness of 𝒜 holds in the weighted control inner product, so the
//! checks here act on W·A (W the diagonal weight matrix), not on A itself.

use rayon::prelude::*;
use thiserror::Error;

use crate::game::GameOperator;
use crate::problem::{ControlBundle, ProblemSpec};

/// Assembly refuses above this control dimension by default.
pub const DEFAULT_DIMENSION_CAP: usize = 2000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("control dimension {dim} exceeds the dense-assembly cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("matrix is singular to working tolerance (pivot {pivot:.3e} at column {column})")]
    Singular { pivot: f64, column: usize },
}

/// Bijection between flat indices and (player, step, node) triples,
/// player-major then step-major.
#[derive(Debug, Clone)]
pub struct IndexMap {
    offsets: Vec<usize>,
    nodes_per_player: Vec<usize>,
    pub dim: usize,
}

impl IndexMap {
    fn new(spec: &ProblemSpec) -> Self {
        let steps = spec.grid.nt;
        let mut offsets = Vec::with_capacity(spec.player_count());
        let mut nodes_per_player = Vec::with_capacity(spec.player_count());
        let mut offset = 0;
        for player in &spec.players {
            offsets.push(offset);
            let m = player.omega.node_count();
            nodes_per_player.push(m);
            offset += m * steps;
        }
        IndexMap {
            offsets,
            nodes_per_player,
            dim: offset,
        }
    }

    pub fn flat(&self, player: usize, step: usize, node: usize) -> usize {
        self.offsets[player] + step * self.nodes_per_player[player] + node
    }

    pub fn unflatten(&self, flat: usize) -> (usize, usize, usize) {
        let player = (0..self.offsets.len())
            .rev()
            .find(|&i| flat >= self.offsets[i])
            .expect("flat index in range");
        let local = flat - self.offsets[player];
        let m = self.nodes_per_player[player];
        (player, local / m, local % m)
    }

    pub fn to_bundle(&self, spec: &ProblemSpec, x: &[f64]) -> ControlBundle {
        assert_eq!(x.len(), self.dim);
        let mut bundle = spec.zero_bundle();
        for (flat, &value) in x.iter().enumerate() {
            let (i, s, k) = self.unflatten(flat);
            *bundle.slabs[i].at_mut(s, k) = value;
        }
        bundle
    }

    pub fn to_vec(&self, bundle: &ControlBundle) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (i, slab) in bundle.slabs.iter().enumerate() {
            for s in 0..slab.steps {
                for k in 0..slab.nodes {
                    x[self.flat(i, s, k)] = slab.at(s, k);
                }
            }
        }
        x
    }
}

/// Explicit matrix form of the optimality operator at oracle scale.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub dim: usize,
    /// Row-major dim × dim matrix of 𝒜 in the canonical nodal basis.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Diagonal 𝒰 inner-product weights Δt·w_k per flat index.
    pub weights: Vec<f64>,
    pub index_map: IndexMap,
}

/// Column-by-column assembly: column k is 𝒜 e_k. Deterministic; takes
/// exactly `dim` operator applications.
pub fn assemble_dense(op: &GameOperator, cap: usize) -> Result<DenseOperator, OracleError> {
    let spec = op.spec();
    let index_map = IndexMap::new(spec);
    let dim = index_map.dim;
    if dim > cap {
        return Err(OracleError::DimensionCap { dim, cap });
    }

    let columns: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|k| {
            let mut e = vec![0.0; dim];
            e[k] = 1.0;
            let bundle = index_map.to_bundle(spec, &e);
            index_map.to_vec(&op.apply(&bundle))
        })
        .collect();

    let mut a = vec![0.0; dim * dim];
    for (k, col) in columns.iter().enumerate() {
        for (l, &value) in col.iter().enumerate() {
            a[l * dim + k] = value;
        }
    }

    let b = index_map.to_vec(&op.rhs());

    let dt = spec.grid.dt();
    let mut weights = vec![0.0; dim];
    for (i, w) in spec.control_space().weights.iter().enumerate() {
        for s in 0..spec.grid.nt {
            for (k, &wk) in w.iter().enumerate() {
                weights[index_map.flat(i, s, k)] = dt * wk;
            }
        }
    }

    Ok(DenseOperator {
        dim,
        a,
        b,
        weights,
        index_map,
    })
}

impl DenseOperator {
    /// Dense matrix-vector product A·x.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for l in 0..self.dim {
            let row = &self.a[l * self.dim..(l + 1) * self.dim];
            y[l] = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum();
        }
        y
    }
}

/// LU solve of A u = b with partial pivoting; the solution is mapped back
/// through the index map. A near-zero pivot signals loss of ellipticity.
pub fn direct_solve(d: &DenseOperator, spec: &ProblemSpec) -> Result<ControlBundle, OracleError> {
    let x = lu_solve(&d.a, &d.b, d.dim)?;
    Ok(d.index_map.to_bundle(spec, &x))
}

fn lu_solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>, OracleError> {
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = lu.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let tol = 1e-14 * scale.max(1e-300);

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&p, &q| {
                lu[p * n + col]
                    .abs()
                    .partial_cmp(&lu[q * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if lu[pivot_row * n + col].abs() <= tol {
            return Err(OracleError::Singular {
                pivot: lu[pivot_row * n + col],
                column: col,
            });
        }
        if pivot_row != col {
            for k in 0..n {
                lu.swap(col * n + k, pivot_row * n + k);
            }
            perm.swap(col, pivot_row);
        }
        let pivot = lu[col * n + col];
        for row in (col + 1)..n {
            let factor = lu[row * n + col] / pivot;
            lu[row * n + col] = factor;
            for k in (col + 1)..n {
                lu[row * n + k] -= factor * lu[col * n + k];
            }
        }
    }

    // Forward substitution on the permuted right-hand side, then back.
    let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    for row in 1..n {
        let mut s = x[row];
        for col in 0..row {
            s -= lu[row * n + col] * x[col];
        }
        x[row] = s;
    }
    for row in (0..n).rev() {
        let mut s = x[row];
        for col in (row + 1)..n {
            s -= lu[row * n + col] * x[col];
        }
        x[row] = s / lu[row * n + row];
    }
    Ok(x)
}

/// max |(WA)_{kl} − (WA)_{lk}| / max |WA|: zero for a discretely self-adjoint
/// operator.
pub fn symmetry_defect(d: &DenseOperator) -> f64 {
    let n = d.dim;
    let mut max_entry = 0.0_f64;
    let mut max_defect = 0.0_f64;
    for k in 0..n {
        for l in 0..n {
            let wkl = d.weights[k] * d.a[k * n + l];
            let wlk = d.weights[l] * d.a[l * n + k];
            max_entry = max_entry.max(wkl.abs());
            max_defect = max_defect.max((wkl - wlk).abs());
        }
    }
    if max_entry == 0.0 {
        0.0
    } else {
        max_defect / max_entry
    }
}

/// Smallest eigenvalue of the W-symmetrized operator ½(WA + (WA)ᵀ)
/// generalized against W, i.e. of W^{-1/2} · ½(WA + AᵀW) · W^{-1/2}.
/// Positive values certify discrete ellipticity.
pub fn min_eigen_sym(d: &DenseOperator) -> f64 {
    let n = d.dim;
    let mut sym = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            let s = 0.5 * (d.weights[k] * d.a[k * n + l] + d.weights[l] * d.a[l * n + k]);
            sym[k * n + l] = s / (d.weights[k].sqrt() * d.weights[l].sqrt());
        }
    }
    let eigenvalues = jacobi_eigenvalues(&mut sym, n);
    eigenvalues.into_iter().fold(f64::INFINITY, f64::min)
}

/// Cyclic Jacobi sweeps on a symmetric matrix (destroys the input); returns
/// eigenvalues. Plenty at oracle scale.
fn jacobi_eigenvalues(a: &mut [f64], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a[0]];
    }
    let fro: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-15 * fro.max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += 2.0 * a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|k| a[k * n + k]).collect()
}

/// Dump the dense matrix and right-hand side as CSV for inspection.
pub fn write_dense_csv(
    dir: impl AsRef<std::path::Path>,
    d: &DenseOperator,
) -> std::io::Result<()> {
    use std::io::Write;
    let dir = dir.as_ref();
    let mut a_out = String::new();
    for l in 0..d.dim {
        let row: Vec<String> = (0..d.dim)
            .map(|k| format!("{:.16e}", d.a[l * d.dim + k]))
            .collect();
        a_out.push_str(&row.join(","));
        a_out.push('\n');
    }
    std::fs::File::create(dir.join("A.csv"))?.write_all(a_out.as_bytes())?;
    let b_out: Vec<String> = d.b.iter().map(|x| format!("{x:.16e}")).collect();
    std::fs::File::create(dir.join("b.csv"))?.write_all((b_out.join("\n") + "\n").as_bytes())?;
    Ok(())
}
