//! Run configuration: a single JSON document. Missing keys take the
//! defaults of the reference experiments; unknown keys are rejected.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{prepare_packet, EvolveParams, StateVector};
use crate::error::{Error, Result};
use crate::gauge::{build_nonabelian, compute_hopping, phase_only_hopping, FieldKind, HoppingMatrix, QuadratureSpec};
use crate::lattice::{build_dimer, build_ring, build_square, Lattice, LatticeKind, Vec2};
use crate::optics::{BeamField, ExponentConvention, LgMode};

const MODULE: &str = "cli_io";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryConfig {
    Ring {
        #[serde(default = "default_ring_sites")]
        sites: usize,
    },
    Square {
        #[serde(default = "default_square_side")]
        side: usize,
    },
    Dimer,
}

fn default_ring_sites() -> usize {
    100
}

fn default_square_side() -> usize {
    40
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig::Ring { sites: default_ring_sites() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    #[serde(default)]
    pub p: u32,
    pub l: i32,
    #[serde(default = "one")]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    #[serde(default = "default_modes")]
    pub modes: Vec<ModeConfig>,
    /// Defaults to `side·a/2` for squares, the ring radius for rings and
    /// `a` for the dimer.
    #[serde(default)]
    pub waist: Option<f64>,
    /// Beam axis offset from the square's geometric centre.
    #[serde(default)]
    pub center_offset: [f64; 2],
    #[serde(default)]
    pub exponent_convention: ExponentConvention,
}

fn default_modes() -> Vec<ModeConfig> {
    vec![ModeConfig { p: 0, l: 1, re: 1.0, im: 0.0 }]
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            modes: default_modes(),
            waist: None,
            center_offset: [0.0, 0.0],
            exponent_convention: ExponentConvention::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum HoppingConfig {
    #[default]
    PhaseOnly,
    Integral {
        /// Wannier width; defaults to `a/4`.
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default = "default_window")]
        window: f64,
    },
}

fn default_points() -> usize {
    QuadratureSpec::default().points
}

fn default_window() -> f64 {
    QuadratureSpec::default().window
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    /// Start site index; defaults to 0 on rings and to `cell` on squares.
    #[serde(default)]
    pub site: Option<usize>,
    /// `[row, col]` start on a square; defaults to `[side/4, side/2]`.
    #[serde(default)]
    pub cell: Option<[usize; 2]>,
    /// Defaults to 3 on rings, 1 on squares, 0 on the dimer.
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default)]
    pub spin_weights: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Defaults to 600 on rings, 4000 on squares, 50 on the dimer.
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub lambda: f64,
}

fn default_dt() -> f64 {
    0.05
}

fn default_stride() -> usize {
    20
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            dt: default_dt(),
            t_end: None,
            record_stride: default_stride(),
            lambda: 0.0,
        }
    }
}

/// Interference thresholds; unset values follow the probe rules in
/// [`crate::commands`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default)]
    pub eps_destructive: Option<f64>,
    #[serde(default)]
    pub theta_constructive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
}

fn default_lambdas() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 5.0]
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { lambdas: default_lambdas() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_oracle_times")]
    pub times: Vec<f64>,
}

fn default_oracle_times() -> Vec<f64> {
    vec![10.0, 100.0]
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { times: default_oracle_times() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub images: bool,
    /// Write every n-th recorded snapshot to the trajectory CSVs (the last
    /// one is always written).
    #[serde(default = "default_csv_every")]
    pub csv_every: usize,
}

fn default_csv_every() -> usize {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            images: false,
            csv_every: default_csv_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default = "one")]
    pub lattice_constant: f64,
    #[serde(default)]
    pub beam: BeamConfig,
    #[serde(default = "default_field")]
    pub field: FieldKind,
    #[serde(default)]
    pub hopping: HoppingConfig,
    #[serde(default = "default_hop_scale")]
    pub hop_scale: f64,
    #[serde(default)]
    pub packet: PacketConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

fn default_field() -> FieldKind {
    FieldKind::U1
}

fn default_hop_scale() -> f64 {
    0.05
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

/// Everything a run needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub lattice: Lattice,
    pub hopping: HoppingMatrix,
    pub start_site: usize,
    pub psi0: StateVector,
    pub params: EvolveParams,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::invalid(MODULE, "config", e.to_string()))?;
        cfg.resolve()
    }

    pub fn lattice_kind(&self) -> LatticeKind {
        let a = self.lattice_constant;
        match self.geometry {
            GeometryConfig::Ring { sites } => LatticeKind::Ring { sites, a },
            GeometryConfig::Square { side } => LatticeKind::Square { side, a },
            GeometryConfig::Dimer => LatticeKind::Dimer { a },
        }
    }

    /// Fill geometry-dependent defaults and validate every parameter.
    pub fn resolve(mut self) -> Result<Self> {
        let a = self.lattice_constant;
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::invalid(MODULE, "lattice_constant", format!("must be finite and > 0, got {a}")));
        }
        if !(self.hop_scale.is_finite() && self.hop_scale > 0.0) {
            return Err(Error::invalid(MODULE, "hop_scale", format!("must be finite and > 0, got {}", self.hop_scale)));
        }
        if self.beam.modes.is_empty() {
            return Err(Error::invalid(MODULE, "beam.modes", "at least one mode is required"));
        }
        if self.beam.center_offset != [0.0, 0.0] && !matches!(self.geometry, GeometryConfig::Square { .. }) {
            return Err(Error::invalid(MODULE, "beam.center_offset", "an offset beam is only supported on square lattices"));
        }
        let windings: Vec<i32> = self.beam.modes.iter().map(|m| m.l).collect();
        let common = windings.iter().all(|&l| l == windings[0]).then_some(windings[0]);
        match (self.field, common) {
            (_, None) if self.hopping == HoppingConfig::PhaseOnly => {
                return Err(Error::invalid(MODULE, "beam.modes", "phase-only hopping needs all modes to share one winding l"));
            }
            (FieldKind::Zero, Some(l)) if l != 0 => {
                return Err(Error::invalid(MODULE, "field", format!("field `zero` needs an l = 0 beam, got l = {l}")));
            }
            (FieldKind::Zero, None) => {
                return Err(Error::invalid(MODULE, "field", "field `zero` needs an l = 0 beam"));
            }
            _ => {}
        }
        let default_waist = match self.geometry {
            GeometryConfig::Ring { sites } => sites as f64 * a / (2.0 * std::f64::consts::PI),
            GeometryConfig::Square { side } => side as f64 * a / 2.0,
            GeometryConfig::Dimer => a,
        };
        let waist = *self.beam.waist.get_or_insert(default_waist);
        if !(waist.is_finite() && waist > 0.0) {
            return Err(Error::invalid(MODULE, "beam.waist", format!("must be finite and > 0, got {waist}")));
        }
        if let HoppingConfig::Integral { sigma, points, window } = &mut self.hopping {
            let s = *sigma.get_or_insert(a / 4.0);
            if !(s.is_finite() && s > 0.0 && s < a / 2.0) {
                return Err(Error::invalid(MODULE, "hopping.sigma", format!("must lie in (0, a/2), got {s}")));
            }
            QuadratureSpec::new(*points, *window)?;
        }
        match self.geometry {
            GeometryConfig::Ring { sites } => {
                if self.packet.cell.is_some() {
                    return Err(Error::invalid(MODULE, "packet.cell", "`cell` is only meaningful on square lattices"));
                }
                self.packet.site.get_or_insert(0);
                if sites < 4 || sites % 2 == 1 {
                    build_ring(sites, a)?;
                }
            }
            GeometryConfig::Square { side } => match (self.packet.site, self.packet.cell) {
                (Some(s), Some([r, c])) if s != r * side + c => {
                    return Err(Error::invalid(MODULE, "packet", format!("`site` {s} and `cell` [{r}, {c}] disagree")));
                }
                (Some(_), Some(_)) => {}
                (Some(s), None) => {
                    if s >= side * side {
                        return Err(Error::invalid(MODULE, "packet.site", format!("site {s} out of range")));
                    }
                    self.packet.cell = Some([s / side, s % side]);
                }
                (None, cell) => {
                    let [r, c] = cell.unwrap_or([side / 4, side / 2]);
                    if r >= side || c >= side {
                        return Err(Error::invalid(MODULE, "packet.cell", format!("cell [{r}, {c}] outside a {side}x{side} lattice")));
                    }
                    self.packet.cell = Some([r, c]);
                    self.packet.site = Some(r * side + c);
                }
            },
            GeometryConfig::Dimer => {
                self.packet.site.get_or_insert(0);
            }
        }
        let width = *self.packet.width.get_or_insert(match self.geometry {
            GeometryConfig::Ring { .. } => 3.0,
            GeometryConfig::Square { .. } => 1.0,
            GeometryConfig::Dimer => 0.0,
        });
        if !(width.is_finite() && width >= 0.0) {
            return Err(Error::invalid(MODULE, "packet.width", format!("must be finite and >= 0, got {width}")));
        }
        let t_end = *self.evolve.t_end.get_or_insert(match self.geometry {
            GeometryConfig::Ring { .. } => 600.0,
            GeometryConfig::Square { .. } => 4000.0,
            GeometryConfig::Dimer => 50.0,
        });
        EvolveParams {
            dt: self.evolve.dt,
            t_end,
            lambda: self.evolve.lambda,
            record_stride: self.evolve.record_stride,
        }
        .validate()?;
        if let (Some(e), Some(t)) = (self.probe.eps_destructive, self.probe.theta_constructive) {
            if !(e > 0.0 && e < t) {
                return Err(Error::invalid(MODULE, "probe", "need 0 < eps_destructive < theta_constructive"));
            }
        }
        if self.outputs.csv_every == 0 {
            return Err(Error::invalid(MODULE, "outputs.csv_every", "must be >= 1"));
        }
        if self.oracle.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::invalid(MODULE, "oracle.times", "times must be finite and >= 0"));
        }
        Ok(self)
    }

    pub fn params(&self) -> EvolveParams {
        EvolveParams {
            dt: self.evolve.dt,
            t_end: self.evolve.t_end.unwrap_or(0.0),
            lambda: self.evolve.lambda,
            record_stride: self.evolve.record_stride,
        }
    }

    pub fn build_lattice(&self) -> Result<Lattice> {
        let a = self.lattice_constant;
        match self.geometry {
            GeometryConfig::Ring { sites } => build_ring(sites, a),
            GeometryConfig::Square { side } => build_square(side, a, Vec2::new(self.beam.center_offset[0], self.beam.center_offset[1])),
            GeometryConfig::Dimer => build_dimer(a),
        }
    }

    pub fn build_beam(&self, lattice: &Lattice) -> Result<BeamField> {
        let waist = self.beam.waist.ok_or_else(|| Error::invalid(MODULE, "beam.waist", "config not resolved"))?;
        let terms = self
            .beam
            .modes
            .iter()
            .map(|m| Ok((LgMode::new(m.p, m.l, waist)?, Complex64::new(m.re, m.im))))
            .collect::<Result<Vec<_>>>()?;
        BeamField::new(terms, lattice.beam_center(), self.beam.exponent_convention)
    }

    /// Scalar hopping from the beam, before any SU(2) embedding.
    pub fn build_abelian_hopping(&self, lattice: &Lattice) -> Result<HoppingMatrix> {
        match self.hopping {
            HoppingConfig::PhaseOnly => phase_only_hopping(lattice, self.beam.modes[0].l, self.hop_scale),
            HoppingConfig::Integral { sigma, points, window } => {
                let beam = self.build_beam(lattice)?;
                let sigma = sigma.unwrap_or(self.lattice_constant / 4.0);
                compute_hopping(lattice, &beam, sigma, &QuadratureSpec::new(points, window)?, self.hop_scale)
            }
        }
    }

    pub fn build_hopping(&self, lattice: &Lattice) -> Result<HoppingMatrix> {
        let h1 = self.build_abelian_hopping(lattice)?;
        match self.field {
            FieldKind::Su2 => build_nonabelian(&h1),
            _ => Ok(h1),
        }
    }

    pub fn setup(&self) -> Result<Setup> {
        let lattice = self.build_lattice()?;
        let hopping = self.build_hopping(&lattice)?;
        let start_site = self.packet.site.unwrap_or(0);
        let psi0 = prepare_packet(&lattice, start_site, self.packet.width.unwrap_or(0.0), hopping.spin_dim(), self.packet.spin_weights)?;
        Ok(Setup {
            lattice,
            hopping,
            start_site,
            psi0,
            params: self.params(),
        })
    }
}
