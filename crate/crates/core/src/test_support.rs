//! Shared fixtures for unit tests.

use std::path::Path;

use crate::problem::ProblemSpec;

pub(crate) fn parse(text: &str) -> ProblemSpec {
    ProblemSpec::from_json_str(text, Path::new("."), Path::new("test.json"))
        .expect("fixture config is valid")
}

/// Node-aligned interval [first, first+span] as decimal endpoints for a unit
/// domain with nx cells.
fn omega(nx: usize, first: usize, span: usize) -> String {
    let a = first as f64 / nx as f64;
    let b = (first + span) as f64 / nx as f64;
    format!("[{a:.17e}, {b:.17e}]")
}

/// Disjoint intervals in the left and right halves, scaled with nx.
fn omega_pair(nx: usize) -> (String, String) {
    let span = (nx / 8).max(1);
    let left = omega(nx, nx / 4, span);
    let right_first = (5 * nx) / 8;
    let right = omega(nx, right_first, span.min(nx - 1 - right_first));
    (left, right)
}

/// Two players on disjoint node-aligned intervals, shared rho/eta (symmetric
/// mode), distinct targets, nonzero free dynamics.
pub(crate) fn two_player_spec(nx: usize, nt: usize) -> ProblemSpec {
    let (om1, om2) = omega_pair(nx);
    parse(&format!(
        r#"{{
        "grid": {{"L": 1.0, "T": 1.0, "nx": {nx}, "nt": {nt}}},
        "data": {{
            "f":  {{"kind": "constant", "params": [0.0]}},
            "y0": {{"kind": "gaussian", "params": [0.3, 0.1, 1.0]}},
            "g1": {{"kind": "constant", "params": [0.0]}},
            "g2": {{"kind": "constant", "params": [0.0]}}
        }},
        "players": [
            {{"alpha": 1.0, "omega": {om1},
             "rho": {{"kind": "constant", "params": [1.0]}},
             "eta": {{"kind": "constant", "params": [1.0]}},
             "yd":  {{"kind": "sine", "params": [1.0, 0.5]}},
             "yT":  {{"kind": "constant", "params": [0.0]}}}},
            {{"alpha": 1.5, "omega": {om2},
             "rho": {{"kind": "constant", "params": [1.0]}},
             "eta": {{"kind": "constant", "params": [1.0]}},
             "yd":  {{"kind": "constant", "params": [0.2]}},
             "yT":  {{"kind": "gaussian", "params": [0.7, 0.15, 0.5]}}}}
        ]
    }}"#
    ))
}

/// Same layout but with distinct rho indicator masks: general (nonsymmetric)
/// mode.
pub(crate) fn general_mode_spec(nx: usize, nt: usize, alpha: f64) -> ProblemSpec {
    let (om1, om2) = omega_pair(nx);
    parse(&format!(
        r#"{{
        "grid": {{"L": 1.0, "T": 1.0, "nx": {nx}, "nt": {nt}}},
        "data": {{
            "f":  {{"kind": "constant", "params": [0.0]}},
            "y0": {{"kind": "gaussian", "params": [0.3, 0.1, 1.0]}},
            "g1": {{"kind": "constant", "params": [0.0]}},
            "g2": {{"kind": "constant", "params": [0.0]}}
        }},
        "players": [
            {{"alpha": {alpha}, "omega": {om1},
             "rho": {{"kind": "indicator", "params": [0.0, 0.5]}},
             "eta": {{"kind": "constant", "params": [1.0]}},
             "yd":  {{"kind": "sine", "params": [1.0, 0.5]}},
             "yT":  {{"kind": "constant", "params": [0.0]}}}},
            {{"alpha": {alpha}, "omega": {om2},
             "rho": {{"kind": "indicator", "params": [0.5, 1.0]}},
             "eta": {{"kind": "constant", "params": [0.5]}},
             "yd":  {{"kind": "constant", "params": [0.2]}},
             "yT":  {{"kind": "gaussian", "params": [0.7, 0.15, 0.5]}}}}
        ]
    }}"#
    ))
}

/// One player, zero weights and data: every functional collapses to the
/// control term.
pub(crate) fn diagonal_spec(nx: usize, nt: usize, alpha: f64) -> ProblemSpec {
    let om = omega(nx, nx / 4, (nx / 4).max(1));
    parse(&format!(
        r#"{{
        "grid": {{"L": 1.0, "T": 1.0, "nx": {nx}, "nt": {nt}}},
        "data": {{
            "f":  {{"kind": "constant", "params": [0.0]}},
            "y0": {{"kind": "constant", "params": [0.0]}},
            "g1": {{"kind": "constant", "params": [0.0]}},
            "g2": {{"kind": "constant", "params": [0.0]}}
        }},
        "players": [
            {{"alpha": {alpha}, "omega": {om},
             "rho": {{"kind": "constant", "params": [0.0]}},
             "eta": {{"kind": "constant", "params": [0.0]}},
             "yd":  {{"kind": "constant", "params": [0.0]}},
             "yT":  {{"kind": "constant", "params": [0.0]}}}}
        ]
    }}"#
    ))
}

/// Two players, zero rho/eta: the optimality operator is block-diagonal
/// scaling by alpha.
pub(crate) fn diagonal_two_player_spec(nx: usize, nt: usize, a1: f64, a2: f64) -> ProblemSpec {
    let (om1, om2) = omega_pair(nx);
    parse(&format!(
        r#"{{
        "grid": {{"L": 1.0, "T": 1.0, "nx": {nx}, "nt": {nt}}},
        "data": {{
            "f":  {{"kind": "constant", "params": [0.0]}},
            "y0": {{"kind": "gaussian", "params": [0.3, 0.1, 1.0]}},
            "g1": {{"kind": "constant", "params": [0.0]}},
            "g2": {{"kind": "constant", "params": [0.0]}}
        }},
        "players": [
            {{"alpha": {a1}, "omega": {om1},
             "rho": {{"kind": "constant", "params": [0.0]}},
             "eta": {{"kind": "constant", "params": [0.0]}},
             "yd":  {{"kind": "constant", "params": [0.0]}},
             "yT":  {{"kind": "constant", "params": [0.0]}}}},
            {{"alpha": {a2}, "omega": {om2},
             "rho": {{"kind": "constant", "params": [0.0]}},
             "eta": {{"kind": "constant", "params": [0.0]}},
             "yd":  {{"kind": "constant", "params": [0.0]}},
             "yT":  {{"kind": "constant", "params": [0.0]}}}}
        ]
    }}"#
    ))
}

/// All-zero single-player problem: smallest legal grid, everything vanishes.
pub(crate) fn zero_spec() -> ProblemSpec {
    diagonal_spec(4, 2, 1.0)
}
