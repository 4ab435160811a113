//! Discrete problem description: grid, fields, players, control space and
//! config ingestion.
//!
//! The spatial domain is (0, L) with nodes x_j = j·h, j = 0..nx, and the time
//! interval (0, T) with levels t_n = n·Δt, n = 0..nt. The left node carries a
//! Dirichlet datum g1, the right node a Neumann datum g2. Each player owns a
//! node-aligned closed interval ω_i strictly inside the domain; controls are
//! piecewise constant in time on (t_{n-1}, t_n] and live on the nodes of ω_i.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use thiserror::Error;

/// Errors from config loading and validation. Every variant names the
/// offending file or key.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            message: message.into(),
        }
    }
}

/// Uniform space-time grid over (0, L) × (0, T).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub length: f64,
    pub horizon: f64,
    pub nx: usize,
    pub nt: usize,
}

impl GridSpec {
    pub fn new(length: f64, horizon: f64, nx: usize, nt: usize) -> Result<Self, ConfigError> {
        if !(length > 0.0) {
            return Err(ConfigError::invalid("grid.L", "must be > 0"));
        }
        if !(horizon > 0.0) {
            return Err(ConfigError::invalid("grid.T", "must be > 0"));
        }
        if nx < 4 {
            return Err(ConfigError::invalid("grid.nx", "must be >= 4"));
        }
        if nt < 2 {
            return Err(ConfigError::invalid("grid.nt", "must be >= 2"));
        }
        Ok(GridSpec {
            length,
            horizon,
            nx,
            nt,
        })
    }

    /// Spatial step h = L/nx.
    pub fn h(&self) -> f64 {
        self.length / self.nx as f64
    }

    /// Time step Δt = T/nt.
    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    /// Node coordinate x_j.
    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.h()
    }

    /// Time level t_n.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Trapezoid weight of node j for quadrature over the full domain:
    /// h/2 at the two boundary nodes, h elsewhere.
    pub fn space_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.nx {
            0.5 * self.h()
        } else {
            self.h()
        }
    }
}

/// Scalar field sampled on the space-time grid: entry (n, j) holds the value
/// at (t_n, x_j). Storage is level-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub nt: usize,
    pub nx: usize,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: &GridSpec) -> Self {
        SpaceTimeField {
            nt: grid.nt,
            nx: grid.nx,
            values: vec![0.0; (grid.nt + 1) * (grid.nx + 1)],
        }
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut field = Self::zeros(grid);
        for n in 0..=grid.nt {
            for j in 0..=grid.nx {
                *field.at_mut(n, j) = f(grid.time(n), grid.node(j));
            }
        }
        field
    }

    pub fn at(&self, n: usize, j: usize) -> f64 {
        self.values[n * (self.nx + 1) + j]
    }

    pub fn at_mut(&mut self, n: usize, j: usize) -> &mut f64 {
        &mut self.values[n * (self.nx + 1) + j]
    }

    /// Spatial slice at level n.
    pub fn level(&self, n: usize) -> &[f64] {
        let w = self.nx + 1;
        &self.values[n * w..(n + 1) * w]
    }

    pub fn set_level(&mut self, n: usize, row: &[f64]) {
        let w = self.nx + 1;
        self.values[n * w..(n + 1) * w].copy_from_slice(row);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn add_scaled(&mut self, other: &SpaceTimeField, c: f64) {
        assert_eq!(self.values.len(), other.values.len(), "field shape mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn max_abs_diff(&self, other: &SpaceTimeField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One player's control region and cost data.
#[derive(Debug, Clone)]
pub struct PlayerSpec {
    /// Control-cost weight α_i > 0.
    pub alpha: f64,
    /// Node span [first_node, last_node] of ω_i = [a_i, b_i].
    pub omega: OmegaSpan,
    /// Nonnegative spatial tracking weight ρ_i, sampled on the nodes.
    pub rho: Vec<f64>,
    /// Nonnegative spatial terminal weight η_i.
    pub eta: Vec<f64>,
    /// Space-time tracking target y_{i,d}.
    pub target_yd: SpaceTimeField,
    /// Spatial terminal target y_{i,T}.
    pub target_yt: Vec<f64>,
}

/// Grid-aligned control interval.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSpan {
    pub a: f64,
    pub b: f64,
    pub first_node: usize,
    pub last_node: usize,
}

impl OmegaSpan {
    /// Number of nodes in the span.
    pub fn node_count(&self) -> usize {
        self.last_node - self.first_node + 1
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> {
        self.first_node..=self.last_node
    }
}

/// Per-player control slab: row s (0-based) holds the values applied during
/// step s+1, i.e. on the interval (t_s, t_{s+1}], one column per node of ω_i.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSlab {
    pub steps: usize,
    pub nodes: usize,
    values: Vec<f64>,
}

impl ControlSlab {
    pub fn zeros(steps: usize, nodes: usize) -> Self {
        ControlSlab {
            steps,
            nodes,
            values: vec![0.0; steps * nodes],
        }
    }

    pub fn at(&self, step: usize, k: usize) -> f64 {
        self.values[step * self.nodes + k]
    }

    pub fn at_mut(&mut self, step: usize, k: usize) -> &mut f64 {
        &mut self.values[step * self.nodes + k]
    }

    /// Values applied during step s+1.
    pub fn step_row(&self, step: usize) -> &[f64] {
        &self.values[step * self.nodes..(step + 1) * self.nodes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Element of the discrete control space 𝒰 = 𝒰_1 × … × 𝒰_N.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBundle {
    pub slabs: Vec<ControlSlab>,
}

impl ControlBundle {
    pub fn player_count(&self) -> usize {
        self.slabs.len()
    }

    pub fn add_scaled(&mut self, other: &ControlBundle, c: f64) {
        assert_eq!(self.slabs.len(), other.slabs.len(), "bundle shape mismatch");
        for (a, b) in self.slabs.iter_mut().zip(&other.slabs) {
            assert_eq!(a.values.len(), b.values.len(), "bundle shape mismatch");
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += c * y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for slab in &mut self.slabs {
            for x in &mut slab.values {
                *x *= c;
            }
        }
    }

    /// a*self + b*other, leaving self untouched.
    pub fn linear_combination(&self, a: f64, other: &ControlBundle, b: f64) -> ControlBundle {
        let mut out = self.clone();
        out.scale(a);
        out.add_scaled(other, b);
        out
    }
}

/// Quadrature data for the weighted inner product on 𝒰 and the Riesz lift
/// from nodal adjoint traces into the control space.
#[derive(Debug, Clone)]
pub struct ControlSpace {
    pub dt: f64,
    /// Per player: trapezoid weights w_k restricted to ω_i (h/2 at the two
    /// interval endpoints, h inside).
    pub weights: Vec<Vec<f64>>,
    /// Per player: ratio of the full-domain node weight to w_k. Multiplying a
    /// nodal field trace by this factor yields the Riesz representative of the
    /// corresponding linear functional in 𝒰_i.
    pub lift: Vec<Vec<f64>>,
    /// Total control dimension Σ_i m_i · nt.
    pub dim: usize,
}

impl ControlSpace {
    fn build(grid: &GridSpec, players: &[PlayerSpec]) -> Self {
        let h = grid.h();
        let mut weights = Vec::with_capacity(players.len());
        let mut lift = Vec::with_capacity(players.len());
        let mut dim = 0;
        for player in players {
            let m = player.omega.node_count();
            let mut w = vec![h; m];
            w[0] = 0.5 * h;
            w[m - 1] = 0.5 * h;
            if m == 1 {
                w[0] = 0.5 * h;
            }
            let l: Vec<f64> = player
                .omega
                .nodes()
                .zip(&w)
                .map(|(j, wk)| grid.space_weight(j) / wk)
                .collect();
            weights.push(w);
            lift.push(l);
            dim += m * grid.nt;
        }
        ControlSpace {
            dt: grid.dt(),
            weights,
            lift,
            dim,
        }
    }
}

/// Full game description: grid, data, players, and derived structures.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: GridSpec,
    pub players: Vec<PlayerSpec>,
    /// Space-time forcing f.
    pub forcing: SpaceTimeField,
    /// Initial field y_0, length nx+1.
    pub y0: Vec<f64>,
    /// Dirichlet datum at the left node, length nt+1.
    pub g1: Vec<f64>,
    /// Neumann datum at the right node, length nt+1.
    pub g2: Vec<f64>,
    /// True when all ρ_i agree elementwise and all η_i agree elementwise.
    pub common_target: bool,
    control_space: ControlSpace,
}

impl ProblemSpec {
    /// Assemble and validate a spec from already-sampled parts.
    pub fn assemble(
        grid: GridSpec,
        players: Vec<PlayerSpec>,
        forcing: SpaceTimeField,
        y0: Vec<f64>,
        g1: Vec<f64>,
        g2: Vec<f64>,
    ) -> Result<Self, ConfigError> {
        if players.is_empty() {
            return Err(ConfigError::invalid("players", "at least one player required"));
        }
        if y0.len() != grid.nx + 1 {
            return Err(ConfigError::invalid("data.y0", "length must be nx+1"));
        }
        if g1.len() != grid.nt + 1 || g2.len() != grid.nt + 1 {
            return Err(ConfigError::invalid("data.g1/g2", "length must be nt+1"));
        }
        if forcing.nt != grid.nt || forcing.nx != grid.nx {
            return Err(ConfigError::invalid("data.f", "shape must be (nt+1) x (nx+1)"));
        }
        for (i, player) in players.iter().enumerate() {
            let key = |field: &str| format!("players[{i}].{field}");
            if !(player.alpha > 0.0) {
                return Err(ConfigError::invalid(key("alpha"), "must be > 0"));
            }
            if player.rho.len() != grid.nx + 1 || player.eta.len() != grid.nx + 1 {
                return Err(ConfigError::invalid(key("rho/eta"), "length must be nx+1"));
            }
            if player.rho.iter().any(|&r| r < 0.0) {
                return Err(ConfigError::invalid(key("rho"), "must be nonnegative"));
            }
            if player.eta.iter().any(|&e| e < 0.0) {
                return Err(ConfigError::invalid(key("eta"), "must be nonnegative"));
            }
            if player.target_yt.len() != grid.nx + 1 {
                return Err(ConfigError::invalid(key("yT"), "length must be nx+1"));
            }
            if player.target_yd.nt != grid.nt || player.target_yd.nx != grid.nx {
                return Err(ConfigError::invalid(key("yd"), "shape must be (nt+1) x (nx+1)"));
            }
            if player.omega.first_node == 0 || player.omega.last_node >= grid.nx {
                return Err(ConfigError::invalid(
                    key("omega"),
                    "must lie strictly inside the domain (0, L)",
                ));
            }
        }
        // Pairwise node disjointness of the control regions.
        for i in 0..players.len() {
            for j in (i + 1)..players.len() {
                let a = &players[i].omega;
                let b = &players[j].omega;
                if a.first_node <= b.last_node && b.first_node <= a.last_node {
                    return Err(ConfigError::invalid(
                        format!("players[{j}].omega"),
                        format!("overlapping control regions with players[{i}].omega"),
                    ));
                }
            }
        }
        let common_target = detect_common_target(&players);
        let control_space = ControlSpace::build(&grid, &players);
        Ok(ProblemSpec {
            grid,
            players,
            forcing,
            y0,
            g1,
            g2,
            common_target,
            control_space,
        })
    }

    /// Load and validate a config file (JSON schema documented in the README).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text, path.parent().unwrap_or(Path::new(".")), path)
    }

    /// Parse a config document; `base` resolves relative tabulated paths.
    pub fn from_json_str(text: &str, base: &Path, origin: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.display().to_string(),
            message: e.to_string(),
        })?;
        let grid = GridSpec::new(raw.grid.l, raw.grid.t, raw.grid.nx, raw.grid.nt)?;

        let forcing = raw.data.f.sample_space_time(&grid, base, "data.f")?;
        let y0 = raw.data.y0.sample_spatial(&grid, base, "data.y0")?;
        let g1 = raw.data.g1.sample_time(&grid, base, "data.g1")?;
        let g2 = raw.data.g2.sample_time(&grid, base, "data.g2")?;

        let mut players = Vec::with_capacity(raw.players.len());
        for (i, p) in raw.players.iter().enumerate() {
            let key = |field: &str| format!("players[{i}].{field}");
            let omega = align_omega(&grid, p.omega, &key("omega"))?;
            players.push(PlayerSpec {
                alpha: p.alpha,
                omega,
                rho: p.rho.sample_spatial(&grid, base, &key("rho"))?,
                eta: p.eta.sample_spatial(&grid, base, &key("eta"))?,
                target_yd: p.yd.sample_space_time(&grid, base, &key("yd"))?,
                target_yt: p.yt.sample_spatial(&grid, base, &key("yT"))?,
            });
        }
        Self::assemble(grid, players, forcing, y0, g1, g2)
    }

    pub fn player_count(&self) -> usize {
        self.players.len()
    }

    /// Elementwise re-check that all ρ_i and all η_i agree. The game module
    /// re-asserts this before selecting the symmetric solver.
    pub fn verify_common_target(&self) -> bool {
        detect_common_target(&self.players)
    }

    pub fn control_space(&self) -> &ControlSpace {
        &self.control_space
    }

    /// Control dimension Σ_i m_i · nt.
    pub fn control_dim(&self) -> usize {
        self.control_space.dim
    }

    pub fn zero_bundle(&self) -> ControlBundle {
        ControlBundle {
            slabs: self
                .players
                .iter()
                .map(|p| ControlSlab::zeros(self.grid.nt, p.omega.node_count()))
                .collect(),
        }
    }

    /// Bundle with iid standard-normal entries.
    pub fn random_bundle(&self, rng: &mut impl Rng) -> ControlBundle {
        let mut bundle = self.zero_bundle();
        for slab in &mut bundle.slabs {
            for x in slab.values_mut() {
                *x = rng.sample(StandardNormal);
            }
        }
        bundle
    }

    /// Random bundle scaled to unit 𝒰-norm.
    pub fn random_unit_bundle(&self, rng: &mut impl Rng) -> ControlBundle {
        let mut bundle = self.random_bundle(rng);
        let norm = self.norm_u(&bundle);
        bundle.scale(1.0 / norm);
        bundle
    }

    /// Random bundle supported on a single player, unit 𝒰-norm.
    pub fn random_unit_direction(&self, player: usize, rng: &mut impl Rng) -> ControlBundle {
        let mut bundle = self.zero_bundle();
        for x in bundle.slabs[player].values_mut() {
            *x = rng.sample(StandardNormal);
        }
        let norm = self.norm_u(&bundle);
        bundle.scale(1.0 / norm);
        bundle
    }

    fn check_bundle_shape(&self, v: &ControlBundle) {
        assert_eq!(v.slabs.len(), self.players.len(), "bundle shape mismatch");
        for (slab, player) in v.slabs.iter().zip(&self.players) {
            assert_eq!(slab.steps, self.grid.nt, "bundle shape mismatch");
            assert_eq!(slab.nodes, player.omega.node_count(), "bundle shape mismatch");
        }
    }

    /// Weighted inner product on 𝒰:
    /// ⟨u, v⟩ = Σ_i Σ_{n=1..nt} Δt Σ_k w_k u_{i,n,k} v_{i,n,k}.
    pub fn inner_product(&self, u: &ControlBundle, v: &ControlBundle) -> f64 {
        self.check_bundle_shape(u);
        self.check_bundle_shape(v);
        let dt = self.control_space.dt;
        let mut total = 0.0;
        for ((us, vs), w) in u.slabs.iter().zip(&v.slabs).zip(&self.control_space.weights) {
            let mut slab_sum = 0.0;
            for s in 0..us.steps {
                let ur = us.step_row(s);
                let vr = vs.step_row(s);
                for k in 0..us.nodes {
                    slab_sum += w[k] * ur[k] * vr[k];
                }
            }
            total += dt * slab_sum;
        }
        total
    }

    /// Inner product restricted to one player's component.
    pub fn inner_product_player(&self, i: usize, u: &ControlSlab, v: &ControlSlab) -> f64 {
        let w = &self.control_space.weights[i];
        let dt = self.control_space.dt;
        let mut sum = 0.0;
        for s in 0..u.steps {
            let ur = u.step_row(s);
            let vr = v.step_row(s);
            for k in 0..u.nodes {
                sum += w[k] * ur[k] * vr[k];
            }
        }
        dt * sum
    }

    pub fn norm_u(&self, v: &ControlBundle) -> f64 {
        self.inner_product(v, v).sqrt()
    }

    /// Nodal values of a field on ω_i at levels n = 1..nt.
    pub fn restrict_to_omega(&self, field: &SpaceTimeField, i: usize) -> ControlSlab {
        let omega = &self.players[i].omega;
        let mut slab = ControlSlab::zeros(self.grid.nt, omega.node_count());
        for s in 0..self.grid.nt {
            for (k, j) in omega.nodes().enumerate() {
                *slab.at_mut(s, k) = field.at(s + 1, j);
            }
        }
        slab
    }

    /// Embed a slab into an otherwise-zero space-time field (level 0 stays 0).
    pub fn extend_by_zero(&self, slab: &ControlSlab, i: usize) -> SpaceTimeField {
        let omega = &self.players[i].omega;
        assert_eq!(slab.steps, self.grid.nt, "slab shape mismatch");
        assert_eq!(slab.nodes, omega.node_count(), "slab shape mismatch");
        let mut field = SpaceTimeField::zeros(&self.grid);
        for s in 0..self.grid.nt {
            for (k, j) in omega.nodes().enumerate() {
                *field.at_mut(s + 1, j) = slab.at(s, k);
            }
        }
        field
    }
}

fn detect_common_target(players: &[PlayerSpec]) -> bool {
    let first = &players[0];
    players
        .iter()
        .all(|p| p.rho == first.rho && p.eta == first.eta)
}

fn align_omega(grid: &GridSpec, omega: [f64; 2], key: &str) -> Result<OmegaSpan, ConfigError> {
    let [a, b] = omega;
    if !(a < b) {
        return Err(ConfigError::invalid(key, "interval endpoints must satisfy a < b"));
    }
    let h = grid.h();
    let to_node = |x: f64| -> Result<usize, ConfigError> {
        let idx = x / h;
        let rounded = idx.round();
        if (idx - rounded).abs() > 1e-9 {
            return Err(ConfigError::invalid(
                key,
                format!("endpoint {x} does not lie on a grid node"),
            ));
        }
        Ok(rounded as usize)
    };
    let first_node = to_node(a)?;
    let last_node = to_node(b)?;
    if first_node == 0 || last_node >= grid.nx {
        return Err(ConfigError::invalid(
            key,
            "must lie strictly inside the domain (0, L)",
        ));
    }
    Ok(OmegaSpan {
        a,
        b,
        first_node,
        last_node,
    })
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    grid: RawGrid,
    data: RawData,
    players: Vec<RawPlayer>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(rename = "L")]
    l: f64,
    #[serde(rename = "T")]
    t: f64,
    nx: usize,
    nt: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    f: PresetConfig,
    y0: PresetConfig,
    g1: PresetConfig,
    g2: PresetConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlayer {
    alpha: f64,
    omega: [f64; 2],
    rho: PresetConfig,
    eta: PresetConfig,
    yd: PresetConfig,
    #[serde(rename = "yT")]
    yt: PresetConfig,
}

/// Analytic preset or tabulated array, as written in config files.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetConfig {
    pub kind: String,
    #[serde(default)]
    pub params: Option<Vec<f64>>,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl PresetConfig {
    pub fn constant(c: f64) -> Self {
        PresetConfig {
            kind: "constant".into(),
            params: Some(vec![c]),
            path: None,
        }
    }

    fn params(&self, key: &str, arity: usize) -> Result<&[f64], ConfigError> {
        let params = self
            .params
            .as_deref()
            .ok_or_else(|| ConfigError::invalid(key, "missing params"))?;
        if params.len() != arity {
            return Err(ConfigError::invalid(
                key,
                format!("preset '{}' expects {arity} params, got {}", self.kind, params.len()),
            ));
        }
        Ok(params)
    }

    /// Evaluate an analytic preset at coordinate s on an axis of length `axis_len`.
    fn eval(&self, s: f64, axis_len: f64, key: &str) -> Result<f64, ConfigError> {
        match self.kind.as_str() {
            "constant" => Ok(self.params(key, 1)?[0]),
            "sine" => {
                let p = self.params(key, 2)?;
                Ok(p[1] * (p[0] * std::f64::consts::PI * s / axis_len).sin())
            }
            "gaussian" => {
                let p = self.params(key, 3)?;
                if !(p[1] > 0.0) {
                    return Err(ConfigError::invalid(key, "gaussian width must be > 0"));
                }
                let z = (s - p[0]) / p[1];
                Ok(p[2] * (-z * z).exp())
            }
            "indicator" => {
                let p = self.params(key, 2)?;
                let tol = 1e-12 * (1.0 + p[0].abs() + p[1].abs());
                Ok(if s >= p[0] - tol && s <= p[1] + tol {
                    1.0
                } else {
                    0.0
                })
            }
            other => Err(ConfigError::invalid(
                key,
                format!("unknown preset kind '{other}'"),
            )),
        }
    }

    fn load_tabulated(&self, base: &Path, key: &str) -> Result<Tabulated, ConfigError> {
        let rel = self
            .path
            .as_ref()
            .ok_or_else(|| ConfigError::invalid(key, "tabulated preset requires a path"))?;
        let path = if rel.is_absolute() {
            rel.clone()
        } else {
            base.join(rel)
        };
        let text = fs::read_to_string(&path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str::<Tabulated>(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Sample on the spatial axis: nx+1 nodal values over [0, L].
    pub fn sample_spatial(&self, grid: &GridSpec, base: &Path, key: &str) -> Result<Vec<f64>, ConfigError> {
        if self.kind == "tabulated" {
            return match self.load_tabulated(base, key)? {
                Tabulated::OneD(v) if v.len() == grid.nx + 1 => Ok(v),
                _ => Err(ConfigError::invalid(
                    key,
                    format!("tabulated array shape mismatch: expected 1-D of length {}", grid.nx + 1),
                )),
            };
        }
        (0..=grid.nx)
            .map(|j| self.eval(grid.node(j), grid.length, key))
            .collect()
    }

    /// Sample on the time axis: nt+1 values over [0, T].
    pub fn sample_time(&self, grid: &GridSpec, base: &Path, key: &str) -> Result<Vec<f64>, ConfigError> {
        if self.kind == "tabulated" {
            return match self.load_tabulated(base, key)? {
                Tabulated::OneD(v) if v.len() == grid.nt + 1 => Ok(v),
                _ => Err(ConfigError::invalid(
                    key,
                    format!("tabulated array shape mismatch: expected 1-D of length {}", grid.nt + 1),
                )),
            };
        }
        (0..=grid.nt)
            .map(|n| self.eval(grid.time(n), grid.horizon, key))
            .collect()
    }

    /// Sample a space-time field. Analytic presets are spatial profiles held
    /// constant in time; tabulated data must be a (nt+1) × (nx+1) array.
    pub fn sample_space_time(
        &self,
        grid: &GridSpec,
        base: &Path,
        key: &str,
    ) -> Result<SpaceTimeField, ConfigError> {
        if self.kind == "tabulated" {
            let rows = match self.load_tabulated(base, key)? {
                Tabulated::TwoD(rows) => rows,
                Tabulated::OneD(_) => {
                    return Err(ConfigError::invalid(
                        key,
                        format!(
                            "tabulated array shape mismatch: expected ({}) x ({}) rows",
                            grid.nt + 1,
                            grid.nx + 1
                        ),
                    ))
                }
            };
            if rows.len() != grid.nt + 1 || rows.iter().any(|r| r.len() != grid.nx + 1) {
                return Err(ConfigError::invalid(
                    key,
                    format!(
                        "tabulated array shape mismatch: expected ({}) x ({})",
                        grid.nt + 1,
                        grid.nx + 1
                    ),
                ));
            }
            let mut field = SpaceTimeField::zeros(grid);
            for (n, row) in rows.iter().enumerate() {
                field.set_level(n, row);
            }
            return Ok(field);
        }
        let profile = self.sample_spatial(grid, base, key)?;
        let mut field = SpaceTimeField::zeros(grid);
        for n in 0..=grid.nt {
            field.set_level(n, &profile);
        }
        Ok(field)
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Tabulated {
    OneD(Vec<f64>),
    TwoD(Vec<Vec<f64>>),
}

/// Write a control slab as CSV: header row, then one row per time step with
/// full double precision.
pub fn write_control_csv(
    path: impl AsRef<Path>,
    spec: &ProblemSpec,
    i: usize,
    slab: &ControlSlab,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = String::new();
    out.push('t');
    for j in spec.players[i].omega.nodes() {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for s in 0..slab.steps {
        out.push_str(&format!("{:.16e}", spec.grid.time(s + 1)));
        for k in 0..slab.nodes {
            out.push_str(&format!(",{:.16e}", slab.at(s, k)));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn minimal_config() -> String {
        r#"{
            "grid": {"L": 1.0, "T": 1.0, "nx": 4, "nt": 2},
            "data": {
                "f":  {"kind": "constant", "params": [0.0]},
                "y0": {"kind": "constant", "params": [0.0]},
                "g1": {"kind": "constant", "params": [0.0]},
                "g2": {"kind": "constant", "params": [0.0]}
            },
            "players": [
                {"alpha": 1.0, "omega": [0.25, 0.5],
                 "rho": {"kind": "constant", "params": [0.0]},
                 "eta": {"kind": "constant", "params": [0.0]},
                 "yd":  {"kind": "constant", "params": [0.0]},
                 "yT":  {"kind": "constant", "params": [0.0]}}
            ]
        }"#
        .to_string()
    }

    use crate::test_support::two_player_spec;

    fn parse(text: &str) -> Result<ProblemSpec, ConfigError> {
        ProblemSpec::from_json_str(text, Path::new("."), Path::new("test.json"))
    }

    #[test]
    fn minimal_config_is_valid() {
        let spec = parse(&minimal_config()).unwrap();
        assert_eq!(spec.player_count(), 1);
        assert!(spec.common_target);
        assert_eq!(spec.control_dim(), 2 * 2);
    }

    #[test]
    fn overlapping_regions_rejected() {
        let text = r#"{
            "grid": {"L": 1.0, "T": 1.0, "nx": 10, "nt": 2},
            "data": {
                "f":  {"kind": "constant", "params": [0.0]},
                "y0": {"kind": "constant", "params": [0.0]},
                "g1": {"kind": "constant", "params": [0.0]},
                "g2": {"kind": "constant", "params": [0.0]}
            },
            "players": [
                {"alpha": 1.0, "omega": [0.2, 0.4],
                 "rho": {"kind": "constant", "params": [0.0]},
                 "eta": {"kind": "constant", "params": [0.0]},
                 "yd":  {"kind": "constant", "params": [0.0]},
                 "yT":  {"kind": "constant", "params": [0.0]}},
                {"alpha": 1.0, "omega": [0.3, 0.5],
                 "rho": {"kind": "constant", "params": [0.0]},
                 "eta": {"kind": "constant", "params": [0.0]},
                 "yd":  {"kind": "constant", "params": [0.0]},
                 "yT":  {"kind": "constant", "params": [0.0]}}
            ]
        }"#;
        let err = parse(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("overlapping control regions"), "{msg}");
        assert!(msg.contains("players[1].omega"), "{msg}");
    }

    #[test]
    fn off_grid_omega_rejected() {
        let mut text = minimal_config();
        text = text.replace("[0.25, 0.5]", "[0.3, 0.5]");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("does not lie on a grid node"), "{err}");
    }

    #[test]
    fn negative_alpha_rejected() {
        let text = minimal_config().replace("\"alpha\": 1.0", "\"alpha\": -2.0");
        let err = parse(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("players[0].alpha"), "{msg}");
    }

    #[test]
    fn boundary_touching_omega_rejected() {
        let text = minimal_config().replace("[0.25, 0.5]", "[0.0, 0.5]");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("strictly inside"), "{err}");
    }

    #[test]
    fn malformed_json_is_parse_error() {
        let err = parse("{not json").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }

    #[test]
    fn preset_examples() {
        let grid = GridSpec::new(1.0, 1.0, 10, 2).unwrap();
        let base = Path::new(".");

        let zeros = PresetConfig::constant(0.0)
            .sample_spatial(&grid, base, "f")
            .unwrap();
        assert!(zeros.iter().all(|&x| x == 0.0));

        let ind = PresetConfig {
            kind: "indicator".into(),
            params: Some(vec![0.4, 0.6]),
            path: None,
        }
        .sample_spatial(&grid, base, "rho")
        .unwrap();
        for (j, &v) in ind.iter().enumerate() {
            let expected = if (4..=6).contains(&j) { 1.0 } else { 0.0 };
            assert_eq!(v, expected, "node {j}");
        }

        let sine = PresetConfig {
            kind: "sine".into(),
            params: Some(vec![1.0, 2.0]),
            path: None,
        }
        .sample_spatial(&grid, base, "yd")
        .unwrap();
        assert!((sine[5] - 2.0).abs() < 1e-15, "sin at midpoint: {}", sine[5]);
    }

    #[test]
    fn unknown_preset_and_wrong_arity() {
        let grid = GridSpec::new(1.0, 1.0, 10, 2).unwrap();
        let base = Path::new(".");
        let err = PresetConfig {
            kind: "wavelet".into(),
            params: Some(vec![]),
            path: None,
        }
        .sample_spatial(&grid, base, "data.f")
        .unwrap_err();
        assert!(err.to_string().contains("unknown preset"), "{err}");

        let err = PresetConfig {
            kind: "sine".into(),
            params: Some(vec![1.0]),
            path: None,
        }
        .sample_spatial(&grid, base, "data.f")
        .unwrap_err();
        assert!(err.to_string().contains("expects 2 params"), "{err}");
    }

    #[test]
    fn preset_sampling_is_deterministic() {
        let grid = GridSpec::new(1.0, 1.0, 32, 8).unwrap();
        let preset = PresetConfig {
            kind: "gaussian".into(),
            params: Some(vec![0.3, 0.1, 1.0]),
            path: None,
        };
        let a = preset.sample_spatial(&grid, Path::new("."), "x").unwrap();
        let b = preset.sample_spatial(&grid, Path::new("."), "x").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inner_product_hand_value() {
        // L=1, nx=10, omega=[0.2,0.4] -> nodes 2,3,4 with weights h/2, h, h/2.
        // Sum of weights = 0.2; times T = 1 for all-ones controls.
        let text = r#"{
            "grid": {"L": 1.0, "T": 1.0, "nx": 10, "nt": 5},
            "data": {
                "f":  {"kind": "constant", "params": [0.0]},
                "y0": {"kind": "constant", "params": [0.0]},
                "g1": {"kind": "constant", "params": [0.0]},
                "g2": {"kind": "constant", "params": [0.0]}
            },
            "players": [
                {"alpha": 1.0, "omega": [0.2, 0.4],
                 "rho": {"kind": "constant", "params": [0.0]},
                 "eta": {"kind": "constant", "params": [0.0]},
                 "yd":  {"kind": "constant", "params": [0.0]},
                 "yT":  {"kind": "constant", "params": [0.0]}}
            ]
        }"#;
        let spec = parse(text).unwrap();
        let mut ones = spec.zero_bundle();
        for x in ones.slabs[0].values_mut() {
            *x = 1.0;
        }
        let ip = spec.inner_product(&ones, &ones);
        assert!((ip - 0.2).abs() < 1e-14, "got {ip}");
    }

    #[test]
    fn inner_product_symmetric_and_positive() {
        let spec = two_player_spec(16, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let u = spec.random_bundle(&mut rng);
            let v = spec.random_bundle(&mut rng);
            let uv = spec.inner_product(&u, &v);
            let vu = spec.inner_product(&v, &u);
            assert_eq!(uv, vu, "exact symmetry");
            assert!(spec.inner_product(&u, &u) > 0.0);
        }
        let zero = spec.zero_bundle();
        let v = spec.random_bundle(&mut rng);
        assert_eq!(spec.inner_product(&zero, &v), 0.0);
    }

    #[test]
    fn restrict_extend_roundtrip() {
        let spec = two_player_spec(16, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..spec.player_count() {
            let bundle = spec.random_bundle(&mut rng);
            let slab = &bundle.slabs[i];
            let field = spec.extend_by_zero(slab, i);
            // Support property: zero off omega and at level 0.
            for j in 0..=spec.grid.nx {
                assert_eq!(field.at(0, j), 0.0);
            }
            let omega = &spec.players[i].omega;
            for n in 1..=spec.grid.nt {
                for j in 0..=spec.grid.nx {
                    if j < omega.first_node || j > omega.last_node {
                        assert_eq!(field.at(n, j), 0.0);
                    }
                }
            }
            let back = spec.restrict_to_omega(&field, i);
            assert_eq!(&back, slab, "restrict . extend = identity");
        }
    }

    #[test]
    fn restrict_zero_field_is_zero_slab() {
        let spec = two_player_spec(16, 6);
        let field = SpaceTimeField::zeros(&spec.grid);
        let slab = spec.restrict_to_omega(&field, 0);
        assert!(slab.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn common_target_detection() {
        let spec = two_player_spec(16, 6);
        assert!(spec.common_target, "identical rho/eta presets");

        let text = r#"{
            "grid": {"L": 1.0, "T": 1.0, "nx": 10, "nt": 2},
            "data": {
                "f":  {"kind": "constant", "params": [0.0]},
                "y0": {"kind": "constant", "params": [0.0]},
                "g1": {"kind": "constant", "params": [0.0]},
                "g2": {"kind": "constant", "params": [0.0]}
            },
            "players": [
                {"alpha": 1.0, "omega": [0.2, 0.4],
                 "rho": {"kind": "indicator", "params": [0.0, 0.5]},
                 "eta": {"kind": "constant", "params": [0.0]},
                 "yd":  {"kind": "constant", "params": [0.0]},
                 "yT":  {"kind": "constant", "params": [0.0]}},
                {"alpha": 1.0, "omega": [0.6, 0.8],
                 "rho": {"kind": "indicator", "params": [0.5, 1.0]},
                 "eta": {"kind": "constant", "params": [0.0]},
                 "yd":  {"kind": "constant", "params": [0.0]},
                 "yT":  {"kind": "constant", "params": [0.0]}}
            ]
        }"#;
        let spec = parse(text).unwrap();
        assert!(!spec.common_target, "distinct rho masks");
    }
}
