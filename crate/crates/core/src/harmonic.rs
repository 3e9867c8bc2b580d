//! Time-harmonic boundary forcing, the discrete harmonic regime and the
//! convergence of forced runs toward it.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{fit_decay, DecayFit, DecayModel};
use crate::error::{Error, Result};
use crate::fdtd::{energy_parts, march, HarmonicForcing, Model, State, Stepper};
use crate::implicit::{shifted_solve, SolveReport};
use crate::medium::Profile;
use crate::mesh::{BoundaryTags, FaceKind, Mesh};

/// Tangential data on one boundary face: `amplitude * envelope(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceData {
    pub axis: usize,
    pub side: usize,
    /// Complex tangential vector (the normal component is ignored).
    pub amplitude: [Complex64; 3],
    #[serde(default)]
    pub envelope: Option<Profile>,
}

/// Boundary values `g . s` for every Silver-Muller entry of the mesh.
pub fn boundary_values(mesh: &Mesh, faces: &[FaceData]) -> Result<Vec<Complex64>> {
    for f in faces {
        if f.axis > 2 || f.side > 1 {
            return Err(Error::Validation(format!("face axis {} side {}", f.axis, f.side)));
        }
        if mesh.bc.get(f.axis, f.side) != FaceKind::SilverMuller || (mesh.is_slab() && f.axis != 0) {
            return Err(Error::UnsupportedFace(BoundaryTags::face_name(f.axis, f.side)));
        }
    }
    Ok(mesh
        .sm
        .iter()
        .map(|entry| {
            faces
                .iter()
                .filter(|f| f.axis == entry.axis && f.side == entry.side)
                .map(|f| {
                    let env = f.envelope.as_ref().map(|p| p.eval(entry.pos)).unwrap_or(1.0);
                    f.amplitude[entry.s_axis] * (entry.s_sign * env)
                })
                .sum()
        })
        .collect())
}

/// A lifting `(g3, g4)` of boundary data: edge and face fields whose
/// discrete trace `E_t + c s B` equals the data on every boundary entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Lifting {
    pub e: Vec<Complex64>,
    pub b: Vec<Complex64>,
}

impl Lifting {
    pub fn as_state(&self, model: &Model) -> State<Complex64> {
        let mut u = State::zeros(model);
        u.e = self.e.clone();
        u.b = self.b.clone();
        u
    }
}

/// Discrete tangential trace `E_t + c s_sign B(face)` per boundary entry.
pub fn trace<T: crate::linalg::Scalar>(mesh: &Mesh, e: &[T], b: &[T]) -> Vec<T> {
    let c = mesh.consts.c;
    mesh.sm.iter().map(|s| e[s.edge] + b[s.face] * (c * s.s_sign)).collect()
}

fn key(axis: usize, p: [f64; 3], h: [f64; 3]) -> (usize, [i64; 3]) {
    let mut k = [0i64; 3];
    for a in 0..3 {
        k[a] = (2.0 * p[a] / h[a]).round() as i64;
    }
    (axis, k)
}

/// Share `theta` of the data goes to `g3` on the boundary edge, tapering
/// linearly to zero two cells inward; the paired interior face carries
/// the remainder in `g4`.
pub fn lift_boundary_data(mesh: &Mesh, g: &[Complex64], theta: f64) -> Result<Lifting> {
    if g.len() != mesh.sm.len() {
        return Err(Error::ShapeMismatch(format!("{} boundary values for {} entries", g.len(), mesh.sm.len())));
    }
    let h = mesh.h();
    let index: HashMap<(usize, [i64; 3]), usize> =
        (0..mesh.n_edges).map(|e| (key(mesh.edge_axis[e], mesh.edge_pos[e], h), e)).collect();
    let mut e = vec![Complex64::new(0.0, 0.0); mesh.n_edges];
    for (entry, gv) in mesh.sm.iter().zip(g) {
        let inward = if entry.side == 0 { 1.0 } else { -1.0 };
        for (step, w) in [(0.0, 1.0), (1.0, 0.5)] {
            let mut p = mesh.edge_pos[entry.edge];
            p[entry.axis] += inward * step * h[entry.axis];
            if let Some(&k) = index.get(&key(mesh.edge_axis[entry.edge], p, h)) {
                if mesh.edge_free[k] {
                    e[k] += *gv * (theta * w);
                }
            }
        }
    }
    // Faces paired with two entries near corners couple the rows, so the
    // remainder is placed by row projections until the trace matches.
    let mut b = vec![Complex64::new(0.0, 0.0); mesh.n_faces];
    let c = mesh.consts.c;
    let scale = g.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let wt = theta.max(0.05);
    for _ in 0..20_000 {
        let mut worst = 0.0f64;
        for (entry, gv) in mesh.sm.iter().zip(g) {
            let cs = c * entry.s_sign;
            let r = *gv - e[entry.edge] - b[entry.face] * cs;
            worst = worst.max(r.norm());
            let d = r / (wt + cs * cs);
            e[entry.edge] += d * wt;
            b[entry.face] += d * cs;
        }
        if worst <= 1e-15 * scale {
            break;
        }
    }
    Ok(Lifting { e, b })
}

#[derive(Clone, Debug)]
pub struct HarmonicSolution {
    pub omega: f64,
    pub g_hat: Vec<Complex64>,
    pub u_hat: State<Complex64>,
    pub report: SolveReport,
    /// `|(-i omega + A_h) U_hat - G(g_hat)|_X / |G(g_hat)|_X`.
    pub residual: f64,
}

impl HarmonicSolution {
    /// `Re[U_hat e^{-i omega t}]`.
    pub fn at(&self, t: f64) -> State<f64> {
        let ph = Complex64::from_polar(1.0, -self.omega * t);
        let mut u = self.u_hat.map(|z| (z * ph).re);
        u.t = t;
        u
    }

    pub fn forcing(&self) -> HarmonicForcing {
        HarmonicForcing { omega: self.omega, g_hat: self.g_hat.clone() }
    }
}

/// Boundary source state `(0, G(g), 0)`.
pub fn source_state(model: &Model, g: &[Complex64]) -> State<Complex64> {
    let mut s = State::zeros(model);
    s.e = model.boundary_source(g);
    s
}

/// Discrete harmonic regime: `U_hat = U* + L` where `L` is a lifting
/// (the default one when `lifting` is `None`) and
/// `(-i omega + A_h) U* = G(g_hat) - (-i omega + A_h) L`.
pub fn harmonic_solution(model: &Model, omega: f64, g_hat: &[Complex64], lifting: Option<&Lifting>) -> Result<HarmonicSolution> {
    if model.medium.species.iter().any(|s| s.nu.iter().any(|&v| !(v > 0.0))) {
        return Err(Error::Validation("the harmonic regime needs a collision frequency nu > 0 at every sample".into()));
    }
    let mesh = &model.mesh;
    let own;
    let lift = match lifting {
        Some(l) => l,
        None => {
            own = lift_boundary_data(mesh, g_hat, 0.5)?;
            &own
        }
    };
    let sigma = Complex64::new(0.0, -omega);
    let l = lift.as_state(model);
    let src = source_state(model, g_hat);
    let rhs = src.axpy(Complex64::new(-1.0, 0.0), &model.apply_a(&l).axpy(sigma, &l));
    let (u_star, report) = if model.norm_x(&rhs) == 0.0 {
        (State::zeros(model), SolveReport::default())
    } else {
        shifted_solve(model, omega, &rhs, None)?
    };
    let mut u_hat = u_star.axpy(Complex64::new(1.0, 0.0), &l);
    model.apply_pec(&mut u_hat);
    let r = model.apply_a(&u_hat).axpy(sigma, &u_hat).axpy(Complex64::new(-1.0, 0.0), &src);
    let sn = model.norm_x(&src);
    let residual = if sn == 0.0 { model.norm_x(&r) } else { model.norm_x(&r) / sn };
    Ok(HarmonicSolution { omega, g_hat: g_hat.to_vec(), u_hat, report, residual })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    pub err_x: f64,
    /// `(J per species, E, B)` error norms.
    pub components: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceRun {
    pub samples: Vec<ErrorSample>,
    pub fit: Option<DecayFit>,
    /// `|U_hat|_X`.
    pub reference_norm: f64,
    pub initial_mismatch: f64,
}

impl ConvergenceRun {
    pub fn series(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.t, s.err_x)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let nc = self.samples.first().map(|s| s.components.len()).unwrap_or(0);
        let mut header = vec!["t".to_string(), "err_X".to_string()];
        for k in 0..nc.saturating_sub(2) {
            header.push(format!("err_J{}", k + 1));
        }
        header.push("err_E".into());
        header.push("err_B".into());
        wr.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![format!("{:e}", s.t), format!("{:e}", s.err_x)];
            row.extend(s.components.iter().map(|x| format!("{x:e}")));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Largest trace mismatch `|tau(U0 - Re U_hat)|` over the boundary entries.
pub fn compatibility_mismatch(model: &Model, sol: &HarmonicSolution, u0: &State<f64>) -> f64 {
    let r = sol.at(u0.t);
    let de: Vec<f64> = u0.e.iter().zip(&r.e).map(|(a, b)| a - b).collect();
    let db: Vec<f64> = u0.b.iter().zip(&r.b).map(|(a, b)| a - b).collect();
    trace(&model.mesh, &de, &db).iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Run the forced problem from `u0` for `n_steps` and record the distance
/// to the harmonic regime every `cadence` steps, then fit its decay.
pub fn convergence_test(
    stepper: &Stepper,
    sol: &HarmonicSolution,
    mut u0: State<f64>,
    n_steps: usize,
    cadence: usize,
    fit: Option<(DecayModel, Option<(f64, f64)>)>,
) -> Result<ConvergenceRun> {
    let model = stepper.model;
    let mismatch = compatibility_mismatch(model, sol, &u0);
    let scale = sol.g_hat.iter().fold(1.0f64, |m, g| m.max(g.norm()));
    if !(mismatch <= 1e-6 * scale) {
        return Err(Error::IncompatibleInitialData { mismatch });
    }
    let forcing = sol.forcing();
    let mut samples = Vec::new();
    let mut observe = |u: &State<f64>| {
        let d = u.axpy(-1.0, &sol.at(u.t));
        let (js, ee, eb) = energy_parts(model, &d);
        let mut components: Vec<f64> = js.iter().map(|x| (2.0 * x).sqrt()).collect();
        components.push((2.0 * ee).sqrt());
        components.push((2.0 * eb).sqrt());
        samples.push(ErrorSample { t: u.t, err_x: model.norm_x(&d), components });
    };
    march(stepper, &mut u0, &forcing, n_steps, cadence, &mut observe)?;
    let fit = match fit {
        Some((m, w)) => {
            let series: Vec<(f64, f64)> = samples.iter().map(|s| (s.t, s.err_x)).collect();
            Some(fit_decay(&series, m, w)?)
        }
        None => None,
    };
    Ok(ConvergenceRun { samples, fit, reference_norm: model.norm_x(&sol.u_hat), initial_mismatch: mismatch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{sample_medium_at, MediumSpec};
    use crate::mesh::Constants;

    fn box_model() -> Model {
        let bc = BoundaryTags::all(FaceKind::Pec).with(0, 1, FaceKind::SilverMuller).with(1, 0, FaceKind::SilverMuller);
        let mesh = Mesh::box3([1.0, 1.0, 0.5], [4, 4, 2], bc, Constants::default());
        let med = sample_medium_at(&MediumSpec::uniform(&[(1.0, 0.8, 1.2)], [0.0, 0.6, 0.8]), &mesh.site_pos).unwrap();
        Model::new(mesh, med).unwrap()
    }

    fn data(m: &Model) -> Vec<Complex64> {
        let faces = [
            FaceData { axis: 0, side: 1, amplitude: [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.5), Complex64::new(-0.3, 0.0)], envelope: None },
            FaceData {
                axis: 1,
                side: 0,
                amplitude: [Complex64::new(0.2, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 1.0)],
                envelope: Some(Profile::Gaussian { offset: 0.0, amplitude: 1.0, center: [0.5, 0.0, 0.25], width: 0.3 }),
            },
        ];
        boundary_values(&m.mesh, &faces).unwrap()
    }

    #[test]
    fn data_on_pec_face_is_rejected() {
        let m = box_model();
        let f = FaceData { axis: 2, side: 0, amplitude: [Complex64::new(1.0, 0.0); 3], envelope: None };
        assert!(matches!(boundary_values(&m.mesh, &[f]), Err(Error::UnsupportedFace(_))));
    }

    #[test]
    fn zero_data_lifts_to_zero() {
        let m = box_model();
        let l = lift_boundary_data(&m.mesh, &vec![Complex64::new(0.0, 0.0); m.mesh.sm.len()], 0.5).unwrap();
        assert!(l.e.iter().chain(&l.b).all(|z| z.norm() == 0.0));
    }

    #[test]
    fn lifting_trace_matches_data() {
        let m = box_model();
        let g = data(&m);
        for theta in [0.0, 0.3, 1.0] {
            let l = lift_boundary_data(&m.mesh, &g, theta).unwrap();
            let tr = trace(&m.mesh, &l.e, &l.b);
            let err = tr.iter().zip(&g).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{err:e}");
        }
    }

    #[test]
    fn lifting_choice_does_not_matter() {
        let m = box_model();
        let g = data(&m);
        let a = harmonic_solution(&m, 1.3, &g, Some(&lift_boundary_data(&m.mesh, &g, 0.0).unwrap())).unwrap();
        let b = harmonic_solution(&m, 1.3, &g, Some(&lift_boundary_data(&m.mesh, &g, 1.0).unwrap())).unwrap();
        let d = m.norm_x(&a.u_hat.axpy(Complex64::new(-1.0, 0.0), &b.u_hat));
        assert!(d < 1e-8 * m.norm_x(&a.u_hat));
        assert!(a.residual < 1e-8);
    }

    #[test]
    fn phase_rotation() {
        let m = box_model();
        let g = data(&m);
        let rot = Complex64::from_polar(1.0, 0.7);
        let gr: Vec<Complex64> = g.iter().map(|z| z * rot).collect();
        let a = harmonic_solution(&m, 0.9, &g, None).unwrap();
        let b = harmonic_solution(&m, 0.9, &gr, None).unwrap();
        let d = m.norm_x(&a.u_hat.map(|z| z * rot).axpy(Complex64::new(-1.0, 0.0), &b.u_hat));
        assert!(d < 1e-10 * m.norm_x(&b.u_hat));
    }

    #[test]
    fn zero_data_gives_zero_regime() {
        let m = box_model();
        let s = harmonic_solution(&m, 2.0, &vec![Complex64::new(0.0, 0.0); m.mesh.sm.len()], None).unwrap();
        assert_eq!(m.norm_x(&s.u_hat), 0.0);
    }

    #[test]
    fn incompatible_start_is_rejected() {
        let m = box_model();
        let g = data(&m);
        let s = harmonic_solution(&m, 1.0, &g, None).unwrap();
        let st = Stepper::new(&m, 0.5 * m.mesh.cfl_max_dt()).unwrap();
        let r = convergence_test(&st, &s, State::zeros(&m), 10, 1, None);
        assert!(matches!(r, Err(Error::IncompatibleInitialData { .. })));
    }

    #[test]
    fn harmonic_start_stays_close() {
        let m = box_model();
        let g = data(&m);
        let s = harmonic_solution(&m, 1.0, &g, None).unwrap();
        let dt = 0.5 * m.mesh.cfl_max_dt();
        let st = Stepper::new(&m, dt).unwrap();
        let period = 2.0 * std::f64::consts::PI;
        let n = (3.0 * period / dt).ceil() as usize;
        let run = convergence_test(&st, &s, s.at(0.0), n, 10, None).unwrap();
        let worst = run.samples.iter().map(|x| x.err_x).fold(0.0, f64::max);
        assert!(worst < 10.0 * dt * dt * run.reference_norm, "{worst:e}");
    }

    #[test]
    fn error_follows_homogeneous_flow() {
        let m = box_model();
        let g = data(&m);
        let s = harmonic_solution(&m, 1.0, &g, None).unwrap();
        let dt = 0.5 * m.mesh.cfl_max_dt();
        let st = Stepper::new(&m, dt).unwrap();
        let mut p = State::zeros(&m);
        for (k, x) in p.j[0].iter_mut().enumerate() {
            *x = ((k % 7) as f64 - 3.0) * 0.1;
        }
        let mut forced = s.at(0.0).axpy(1.0, &p);
        let mut free = p.clone();
        for _ in 0..200 {
            st.step(&mut forced, &s.forcing()).unwrap();
            st.step(&mut free, &crate::fdtd::NoForcing).unwrap();
        }
        let mut harmonic = s.at(0.0);
        for _ in 0..200 {
            st.step(&mut harmonic, &s.forcing()).unwrap();
        }
        let d = forced.axpy(-1.0, &harmonic).axpy(-1.0, &free);
        assert!(m.norm_x(&d) < 1e-10 * m.norm_x(&free));
    }
}
