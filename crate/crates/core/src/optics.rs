//! Laguerre–Gauss beam amplitudes in the lattice plane.
//!
//! A mode with radial index `p`, winding `l` and waist `r_w` has the
//! transverse profile
//!
//! ```text
//! f_pl(r) = (-1)^p sqrt(2 p! / (π (p+|l|)!)) ξ^(|l|+2) L_p^|l|(ξ²) exp(-ξ²),   ξ = √2 r / r_w
//! ```
//!
//! and the in-plane field is `f_pl(r) e^{i l φ}`. The propagation factor
//! `e^{i(ωt - kz)}` is constant over the lattice plane and is dropped.
//! The radial power `|l|+2` is the default; [`ExponentConvention::Standard`]
//! switches to the textbook `|l|`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Vec2;

/// Power of ξ in the radial profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentConvention {
    /// `ξ^(|l|+2)`
    #[default]
    Extended,
    /// `ξ^|l|`
    Standard,
}

impl ExponentConvention {
    fn power(self, l: i32) -> i32 {
        match self {
            ExponentConvention::Extended => l.abs() + 2,
            ExponentConvention::Standard => l.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LgMode {
    pub p: u32,
    pub l: i32,
    /// Beam waist in lattice-constant units.
    pub waist: f64,
}

impl LgMode {
    pub fn new(p: u32, l: i32, waist: f64) -> Result<Self> {
        if !(waist.is_finite() && waist > 0.0) {
            return Err(Error::invalid("lg_optics", "waist", format!("must be finite and > 0, got {waist}")));
        }
        Ok(LgMode { p, l, waist })
    }
}

/// Coherent superposition of LG modes sharing one beam axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamField {
    terms: Vec<(LgMode, Complex64)>,
    center: Vec2,
    convention: ExponentConvention,
}

impl BeamField {
    pub fn new(terms: Vec<(LgMode, Complex64)>, center: Vec2, convention: ExponentConvention) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("lg_optics", "terms", "a beam needs at least one mode"));
        }
        if let Some((_, c)) = terms.iter().find(|(_, c)| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::invalid("lg_optics", "terms", format!("non-finite coefficient {c}")));
        }
        if let Some((m, _)) = terms.iter().find(|(m, _)| !(m.waist.is_finite() && m.waist > 0.0)) {
            return Err(Error::invalid("lg_optics", "waist", format!("must be finite and > 0, got {}", m.waist)));
        }
        Ok(BeamField {
            terms,
            center,
            convention,
        })
    }

    /// Single mode with unit coefficient.
    pub fn single(mode: LgMode, center: Vec2) -> Self {
        BeamField {
            terms: vec![(mode, Complex64::new(1.0, 0.0))],
            center,
            convention: ExponentConvention::Extended,
        }
    }

    pub fn with_convention(mut self, convention: ExponentConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn terms(&self) -> &[(LgMode, Complex64)] {
        &self.terms
    }

    pub fn center(&self) -> Vec2 {
        self.center
    }

    pub fn convention(&self) -> ExponentConvention {
        self.convention
    }

    /// Winding of the beam when every term shares the same `l`.
    pub fn common_winding(&self) -> Option<i32> {
        let l = self.terms[0].0.l;
        self.terms.iter().all(|(m, _)| m.l == l).then_some(l)
    }

    /// Complex field at `point`.
    pub fn amplitude(&self, point: Vec2) -> Complex64 {
        beam_amplitude(self, point)
    }
}

/// Generalized Laguerre polynomial `L_p^alpha(x)` by upward recurrence.
pub fn laguerre(p: u32, alpha: u32, x: f64) -> f64 {
    let a = alpha as f64;
    let mut prev = 1.0;
    if p == 0 {
        return prev;
    }
    let mut cur = 1.0 + a - x;
    for k in 1..p {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + a - x) * cur - (k + a) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `sqrt(2 p! / (π (p+|l|)!))`, evaluated as a product to stay finite for
/// large indices.
fn normalization(p: u32, l_abs: u32) -> f64 {
    let ratio: f64 = (p + 1..=p + l_abs).map(|k| 1.0 / k as f64).product();
    (2.0 * ratio / std::f64::consts::PI).sqrt()
}

/// Real radial profile `f_pl(r)`. Negative values are meaningful.
pub fn lg_radial_amplitude(mode: &LgMode, r: f64, convention: ExponentConvention) -> f64 {
    let xi = std::f64::consts::SQRT_2 * r / mode.waist;
    let xi2 = xi * xi;
    let sign = if mode.p.is_multiple_of(2) { 1.0 } else { -1.0 };
    let l_abs = mode.l.unsigned_abs();
    sign * normalization(mode.p, l_abs)
        * xi.powi(convention.power(mode.l))
        * laguerre(mode.p, l_abs, xi2)
        * (-xi2).exp()
}

/// `Σ c · f_pl(|x - center|) · e^{i l φ}` over the beam's terms.
pub fn beam_amplitude(beam: &BeamField, point: Vec2) -> Complex64 {
    let d = point - beam.center;
    let r = d.norm();
    let phi = d.y.atan2(d.x);
    beam.terms
        .iter()
        .map(|(mode, coeff)| {
            let radial = lg_radial_amplitude(mode, r, beam.convention);
            if radial == 0.0 {
                // at the axis an l != 0 mode vanishes whatever the phase
                return Complex64::new(0.0, 0.0);
            }
            coeff * Complex64::from_polar(radial, mode.l as f64 * phi)
        })
        .fold(Complex64::new(0.0, 0.0), |acc, z| acc + z)
}
