//! Plasma coefficients: analytic profiles, sampling at current sites and the
//! bounds required by the well-posedness and decay hypotheses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form scalar field on the box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `base + slope . x`
    Ramp { base: f64, slope: [f64; 3] },
    /// `offset + amplitude * exp(-|x - center|^2 / width^2)`
    Gaussian { offset: f64, amplitude: f64, center: [f64; 3], width: f64 },
    Product { factors: Vec<Profile> },
}

impl Profile {
    pub fn constant(value: f64) -> Profile {
        Profile::Constant { value }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Ramp { base, slope } => base + slope[0] * x[0] + slope[1] * x[1] + slope[2] * x[2],
            Profile::Gaussian { offset, amplitude, center, width } => {
                let r2: f64 = (0..3).map(|k| (x[k] - center[k]).powi(2)).sum();
                offset + amplitude * (-r2 / (width * width)).exp()
            }
            Profile::Product { factors } => factors.iter().map(|f| f.eval(x)).product(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSpec {
    pub omega_p: Profile,
    pub nu: Profile,
    /// +1 for ions, -1 for electrons.
    pub charge_sign: f64,
    /// |q|/m, so that the cyclotron frequency is `charge_sign * gyro * |B_ext|`.
    #[serde(default = "one")]
    pub gyro: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub species: Vec<SpeciesSpec>,
    pub b_ext: [Profile; 3],
}

impl MediumSpec {
    /// Spatially uniform medium with the given per-species `(omega_p, nu, omega_c)`
    /// and field direction `b` (unit magnetic field, so `gyro = |omega_c|`).
    pub fn uniform(species: &[(f64, f64, f64)], b: [f64; 3]) -> MediumSpec {
        MediumSpec {
            species: species
                .iter()
                .map(|&(wp, nu, wc)| SpeciesSpec {
                    omega_p: Profile::constant(wp),
                    nu: Profile::constant(nu),
                    charge_sign: if wc < 0.0 { -1.0 } else { 1.0 },
                    gyro: wc.abs(),
                })
                .collect(),
            b_ext: [Profile::constant(b[0]), Profile::constant(b[1]), Profile::constant(b[2])],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesField {
    pub omega_p: Vec<f64>,
    pub nu: Vec<f64>,
    /// Signed cyclotron frequency.
    pub omega_c: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NegativeNu,
    NonPositiveOmegaP,
    NonFinite,
    /// Allowed by the well-posedness hypothesis but not by the decay hypothesis.
    ZeroNu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub site: usize,
    pub species: usize,
    pub kind: ViolationKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub nu_star: f64,
    pub omega_c_star: f64,
    pub omega_p_star: f64,
    pub nu_lower: f64,
    pub omega_p_lower: f64,
    pub hyp1_ok: bool,
    pub hyp2_ok: bool,
    pub violations: Vec<Violation>,
}

/// A single sample of the medium, as consumed by the pointwise tensor algebra.
#[derive(Clone, Debug, PartialEq)]
pub struct MediumPoint {
    /// `(omega_p, nu, omega_c)` per species.
    pub species: Vec<(f64, f64, f64)>,
    pub b: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct MediumFields {
    pub positions: Vec<[f64; 3]>,
    pub species: Vec<SpeciesField>,
    pub b: Vec<[f64; 3]>,
    pub bounds: BoundsReport,
}

impl MediumFields {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn point(&self, site: usize) -> MediumPoint {
        MediumPoint {
            species: self
                .species
                .iter()
                .map(|s| (s.omega_p[site], s.nu[site], s.omega_c[site]))
                .collect(),
            b: self.b[site],
        }
    }
}

pub fn sample_medium_at(spec: &MediumSpec, positions: &[[f64; 3]]) -> Result<MediumFields> {
    if positions.is_empty() {
        return Err(Error::ShapeMismatch("medium sampled on an empty grid".into()));
    }
    let needs_b = spec.species.iter().any(|s| s.gyro != 0.0);
    let mut b = Vec::with_capacity(positions.len());
    let mut bmag = Vec::with_capacity(positions.len());
    for (site, &x) in positions.iter().enumerate() {
        let v = [spec.b_ext[0].eval(x), spec.b_ext[1].eval(x), spec.b_ext[2].eval(x)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n == 0.0 || !n.is_finite() {
            if needs_b {
                return Err(Error::ZeroExternalField { site });
            }
            b.push([0.0, 0.0, 1.0]);
            bmag.push(0.0);
        } else {
            b.push([v[0] / n, v[1] / n, v[2] / n]);
            bmag.push(n);
        }
    }
    let species = spec
        .species
        .iter()
        .map(|s| SpeciesField {
            omega_p: positions.iter().map(|&x| s.omega_p.eval(x)).collect(),
            nu: positions.iter().map(|&x| s.nu.eval(x)).collect(),
            omega_c: bmag.iter().map(|m| s.charge_sign * s.gyro * m).collect(),
        })
        .collect();
    let mut m = MediumFields {
        positions: positions.to_vec(),
        species,
        b,
        bounds: empty_bounds(),
    };
    m.bounds = validate_hypotheses(&m);
    Ok(m)
}

fn empty_bounds() -> BoundsReport {
    BoundsReport {
        nu_star: 0.0,
        omega_c_star: 0.0,
        omega_p_star: 0.0,
        nu_lower: 0.0,
        omega_p_lower: 0.0,
        hyp1_ok: false,
        hyp2_ok: false,
        violations: Vec::new(),
    }
}

pub fn validate_hypotheses(m: &MediumFields) -> BoundsReport {
    let mut r = BoundsReport {
        nu_star: f64::NEG_INFINITY,
        omega_c_star: 0.0,
        omega_p_star: f64::NEG_INFINITY,
        nu_lower: f64::INFINITY,
        omega_p_lower: f64::INFINITY,
        hyp1_ok: true,
        hyp2_ok: true,
        violations: Vec::new(),
    };
    for site in 0..m.len() {
        for (s, f) in m.species.iter().enumerate() {
            let (wp, nu, wc) = (f.omega_p[site], f.nu[site], f.omega_c[site]);
            r.nu_star = r.nu_star.max(nu);
            r.nu_lower = r.nu_lower.min(nu);
            r.omega_p_star = r.omega_p_star.max(wp);
            r.omega_p_lower = r.omega_p_lower.min(wp);
            r.omega_c_star = r.omega_c_star.max(wc.abs());
            let kind = if !(wp.is_finite() && nu.is_finite() && wc.is_finite()) {
                Some(ViolationKind::NonFinite)
            } else if nu < 0.0 {
                Some(ViolationKind::NegativeNu)
            } else if wp <= 0.0 {
                Some(ViolationKind::NonPositiveOmegaP)
            } else if nu == 0.0 {
                Some(ViolationKind::ZeroNu)
            } else {
                None
            };
            if let Some(kind) = kind {
                if kind != ViolationKind::ZeroNu {
                    r.hyp1_ok = false;
                }
                r.hyp2_ok = false;
                r.violations.push(Violation { site, species: s, kind });
            }
        }
    }
    if m.species.is_empty() {
        r.nu_star = 0.0;
        r.omega_p_star = 0.0;
        r.nu_lower = 0.0;
        r.omega_p_lower = 0.0;
        r.hyp2_ok = false;
    }
    r.hyp2_ok &= r.hyp1_ok && r.nu_lower > 0.0 && r.omega_p_lower > 0.0;
    r
}
