//! State vectors, the semi-discrete generator `A_h` and the explicit
//! leapfrog / Crank-Nicolson time stepper.
//!
//! Semi-discrete system: `U' + A_h U = G(g)`, with
//! - `(A_h U)_s = M_s J_s - eps0 w_s^2 R E`
//! - `(A_h U)_E = (1/eps0) K* sum_s J_s - c^2 C* B + kappa E`
//! - `(A_h U)_B = C E`
//!
//! and `G(g)` nonzero only on Silver-Muller edges (`kappa g`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Csr, Scalar};
use crate::medium::MediumFields;
use crate::mesh::Mesh;
use crate::stix::{self, RMatrix3};

/// `U = (J_1, .., J_S, E, B)` on the staggered grid, optionally with charge
/// densities per species at interior nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State<T = f64> {
    pub t: f64,
    /// Per species, `3 * n_sites` values, site-major.
    pub j: Vec<Vec<T>>,
    pub e: Vec<T>,
    pub b: Vec<T>,
    pub rho: Option<Vec<Vec<T>>>,
    /// Rounding carries of the compensated E, B and charge updates.
    #[serde(skip)]
    pub carry: Option<Carry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Carry {
    pub e: Vec<f64>,
    pub b: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
}

/// Kahan update `x += d` with running carry `c`.
#[inline]
fn kahan(x: &mut f64, c: &mut f64, d: f64) {
    let y = d - *c;
    let t = *x + y;
    *c = (t - *x) - y;
    *x = t;
}

fn kahan_axpy(a: f64, d: &[f64], x: &mut [f64], c: &mut [f64]) {
    for ((xi, ci), di) in x.iter_mut().zip(c.iter_mut()).zip(d) {
        kahan(xi, ci, a * di);
    }
}

impl<T: Scalar> State<T> {
    pub fn zeros(model: &Model) -> Self {
        State {
            t: 0.0,
            j: vec![vec![T::zero(); 3 * model.mesh.n_sites]; model.n_species()],
            e: vec![T::zero(); model.mesh.n_edges],
            b: vec![T::zero(); model.mesh.n_faces],
            rho: None,
            carry: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.j.iter().flatten().chain(&self.e).chain(&self.b).all(|x| x.is_finite())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> State<U> {
        State {
            t: self.t,
            j: self.j.iter().map(|v| v.iter().map(|x| f(*x)).collect()).collect(),
            e: self.e.iter().map(|x| f(*x)).collect(),
            b: self.b.iter().map(|x| f(*x)).collect(),
            rho: self.rho.as_ref().map(|r| r.iter().map(|v| v.iter().map(|x| f(*x)).collect()).collect()),
            carry: None,
        }
    }

    /// `self + a * other` on the field families (charge densities included when both track them).
    pub fn axpy(&self, a: T, other: &State<T>) -> State<T> {
        let mut out = self.clone();
        for (u, v) in out.j.iter_mut().zip(&other.j) {
            linalg::axpy(a, v, u);
        }
        linalg::axpy(a, &other.e, &mut out.e);
        linalg::axpy(a, &other.b, &mut out.b);
        if let (Some(r), Some(o)) = (out.rho.as_mut(), other.rho.as_ref()) {
            for (u, v) in r.iter_mut().zip(o) {
                linalg::axpy(a, v, u);
            }
        }
        out
    }

    pub fn check_shape(&self, model: &Model) -> Result<()> {
        let m = &model.mesh;
        if self.j.len() != model.n_species()
            || self.j.iter().any(|v| v.len() != 3 * m.n_sites)
            || self.e.len() != m.n_edges
            || self.b.len() != m.n_faces
        {
            return Err(Error::ShapeMismatch(format!(
                "state has {} species, E {}, B {}; grid expects {}, {}, {}",
                self.j.len(),
                self.e.len(),
                self.b.len(),
                model.n_species(),
                m.n_edges,
                m.n_faces
            )));
        }
        Ok(())
    }
}

/// Mesh and medium bound together with the per-site matrices `M_s`.
#[derive(Clone, Debug)]
pub struct Model {
    pub mesh: Mesh,
    pub medium: MediumFields,
    /// `M_s` per species per site.
    pub m: Vec<Vec<RMatrix3>>,
    /// `eps0 omega_ps^2` per species per site.
    pub coupling: Vec<Vec<f64>>,
    free: Vec<usize>,
}

impl Model {
    pub fn new(mesh: Mesh, medium: MediumFields) -> Result<Model> {
        if medium.len() != mesh.n_sites {
            return Err(Error::ShapeMismatch(format!(
                "medium has {} samples, mesh has {} current sites",
                medium.len(),
                mesh.n_sites
            )));
        }
        let m = medium
            .species
            .iter()
            .map(|s| (0..mesh.n_sites).map(|i| stix::assemble_m(s.nu[i], s.omega_c[i], medium.b[i])).collect())
            .collect();
        let eps0 = mesh.consts.eps0;
        let coupling = medium
            .species
            .iter()
            .map(|s| s.omega_p.iter().map(|w| eps0 * w * w).collect())
            .collect();
        let free = mesh.free_edges();
        Ok(Model { mesh, medium, m, coupling, free })
    }

    pub fn n_species(&self) -> usize {
        self.medium.n_species()
    }

    pub fn eps0(&self) -> f64 {
        self.mesh.consts.eps0
    }

    pub fn c(&self) -> f64 {
        self.mesh.consts.c
    }

    pub fn free_edges(&self) -> &[usize] {
        &self.free
    }

    /// Dimension of the flat unknown vector (free edges only).
    pub fn dim(&self) -> usize {
        self.n_species() * 3 * self.mesh.n_sites + self.free.len() + self.mesh.n_faces
    }

    /// X-norm weights on the flat layout `[J_1.., E(free), B]`.
    pub fn flat_weights(&self) -> Vec<f64> {
        let mesh = &self.mesh;
        let eps0 = self.eps0();
        let c2 = self.c() * self.c();
        let mut w = Vec::with_capacity(self.dim());
        for cpl in &self.coupling {
            for r in 0..3 * mesh.n_sites {
                w.push(mesh.site_w[r / 3] / cpl[r / 3]);
            }
        }
        w.extend(self.free.iter().map(|&e| eps0 * mesh.edge_w[e]));
        w.extend(mesh.face_w.iter().map(|fw| c2 * eps0 * fw));
        w
    }

    pub fn to_flat<T: Scalar>(&self, u: &State<T>) -> Vec<T> {
        let mut v = Vec::with_capacity(self.dim());
        for j in &u.j {
            v.extend_from_slice(j);
        }
        v.extend(self.free.iter().map(|&e| u.e[e]));
        v.extend_from_slice(&u.b);
        v
    }

    pub fn from_flat<T: Scalar>(&self, v: &[T]) -> State<T> {
        let mut u = State::zeros(self);
        let nj = 3 * self.mesh.n_sites;
        for (s, j) in u.j.iter_mut().enumerate() {
            j.copy_from_slice(&v[s * nj..(s + 1) * nj]);
        }
        let off = self.n_species() * nj;
        for (k, &e) in self.free.iter().enumerate() {
            u.e[e] = v[off + k];
        }
        let off = off + self.free.len();
        u.b.copy_from_slice(&v[off..off + self.mesh.n_faces]);
        u
    }

    pub fn inner<T: Scalar>(&self, u: &State<T>, v: &State<T>) -> T {
        let mesh = &self.mesh;
        let mut acc = T::zero();
        for (s, (ju, jv)) in u.j.iter().zip(&v.j).enumerate() {
            for r in 0..ju.len() {
                acc += ju[r].conj() * jv[r] * (mesh.site_w[r / 3] / self.coupling[s][r / 3]);
            }
        }
        let eps0 = self.eps0();
        for e in 0..mesh.n_edges {
            acc += u.e[e].conj() * v.e[e] * (eps0 * mesh.edge_w[e]);
        }
        let c2e = self.c() * self.c() * eps0;
        for f in 0..mesh.n_faces {
            acc += u.b[f].conj() * v.b[f] * (c2e * mesh.face_w[f]);
        }
        acc
    }

    pub fn norm_x<T: Scalar>(&self, u: &State<T>) -> f64 {
        self.inner(u, u).re().max(0.0).sqrt()
    }

    /// Zero the constrained (tangential PEC) edge values.
    pub fn apply_pec<T: Scalar>(&self, u: &mut State<T>) {
        for (e, free) in self.mesh.edge_free.iter().enumerate() {
            if !free {
                u.e[e] = T::zero();
            }
        }
    }

    /// Matrix-free `A_h U` (homogeneous boundary closure).
    pub fn apply_a<T: Scalar>(&self, u: &State<T>) -> State<T> {
        let mesh = &self.mesh;
        let re = mesh.recon.apply(&u.e);
        let mut out = State::zeros(self);
        let mut jsum = vec![T::zero(); 3 * mesh.n_sites];
        for s in 0..self.n_species() {
            let js = &u.j[s];
            let o = &mut out.j[s];
            for i in 0..mesh.n_sites {
                let v = [js[3 * i], js[3 * i + 1], js[3 * i + 2]];
                let mv = self.m[s][i].apply(&v);
                let k = self.coupling[s][i];
                for c in 0..3 {
                    o[3 * i + c] = mv[c] - re[3 * i + c] * k;
                    jsum[3 * i + c] += v[c];
                }
            }
        }
        let eps0 = self.eps0();
        let c2 = self.c() * self.c();
        let kj = mesh.feedback.apply(&jsum);
        let cb = mesh.curl_star.apply(&u.b);
        for e in 0..mesh.n_edges {
            out.e[e] = if mesh.edge_free[e] {
                kj[e] * (1.0 / eps0) - cb[e] * c2 + u.e[e] * mesh.kappa[e]
            } else {
                T::zero()
            };
        }
        out.b = mesh.curl.apply(&u.e);
        out
    }

    /// Boundary source `G(g)`: edge values `kappa g` on Silver-Muller edges.
    pub fn boundary_source<T: Scalar>(&self, g: &[T]) -> Vec<T> {
        let mut f = vec![T::zero(); self.mesh.n_edges];
        for (entry, gv) in self.mesh.sm.iter().zip(g) {
            f[entry.edge] += *gv * entry.kappa;
        }
        f
    }

    /// Sparse `A_h` on the flat layout.
    pub fn assemble_a(&self) -> Csr {
        let mesh = &self.mesh;
        let ns = self.n_species();
        let nj = 3 * mesh.n_sites;
        let e_off = ns * nj;
        let b_off = e_off + self.free.len();
        let mut dof = vec![usize::MAX; mesh.n_edges];
        for (k, &e) in self.free.iter().enumerate() {
            dof[e] = e_off + k;
        }
        let mut t = Vec::new();
        for s in 0..ns {
            for i in 0..mesh.n_sites {
                for a in 0..3 {
                    for b in 0..3 {
                        t.push((s * nj + 3 * i + a, s * nj + 3 * i + b, self.m[s][i].m[a][b]));
                    }
                }
            }
            for r in 0..nj {
                for (e, v) in mesh.recon.row(r) {
                    t.push((s * nj + r, dof[e], -self.coupling[s][r / 3] * v));
                }
            }
        }
        let eps0 = self.eps0();
        let c2 = self.c() * self.c();
        for &e in &self.free {
            let row = dof[e];
            for (r, v) in mesh.feedback.row(e) {
                for s in 0..ns {
                    t.push((row, s * nj + r, v / eps0));
                }
            }
            for (f, v) in mesh.curl_star.row(e) {
                t.push((row, b_off + f, -c2 * v));
            }
            if mesh.kappa[e] != 0.0 {
                t.push((row, row, mesh.kappa[e]));
            }
        }
        for f in 0..mesh.n_faces {
            for (e, v) in mesh.curl.row(f) {
                if dof[e] != usize::MAX {
                    t.push((b_off + f, dof[e], v));
                }
            }
        }
        Csr::from_triplets(self.dim(), self.dim(), &t)
    }
}

/// Energy components `(J per species, E, B)`, each `1/2 |.|^2` in the X weights.
pub fn energy_parts<T: Scalar>(model: &Model, u: &State<T>) -> (Vec<f64>, f64, f64) {
    let mesh = &model.mesh;
    let js = u
        .j
        .iter()
        .enumerate()
        .map(|(s, j)| {
            0.5 * j
                .iter()
                .enumerate()
                .map(|(r, x)| x.abs2() * mesh.site_w[r / 3] / model.coupling[s][r / 3])
                .sum::<f64>()
        })
        .collect();
    let ee = 0.5 * model.eps0() * linalg::wnorm2(&mesh.edge_w, &u.e);
    let eb = 0.5 * model.eps0() * model.c() * model.c() * linalg::wnorm2(&mesh.face_w, &u.b);
    (js, ee, eb)
}

/// Time-dependent Silver-Muller data, one value per boundary entry.
pub trait BoundaryForcing: Sync {
    fn values(&self, t: f64) -> Vec<f64>;
}

#[derive(Clone, Debug, Default)]
pub struct NoForcing;

impl BoundaryForcing for NoForcing {
    fn values(&self, _t: f64) -> Vec<f64> {
        Vec::new()
    }
}

/// `g(t) = Re[g_hat e^{-i omega t}]`.
#[derive(Clone, Debug)]
pub struct HarmonicForcing {
    pub omega: f64,
    pub g_hat: Vec<num_complex::Complex64>,
}

impl BoundaryForcing for HarmonicForcing {
    fn values(&self, t: f64) -> Vec<f64> {
        let ph = num_complex::Complex64::from_polar(1.0, -self.omega * t);
        self.g_hat.iter().map(|g| (g * ph).re).collect()
    }
}

/// Gaussian-modulated carrier `g(t) = amp * exp(-((t-t0)/width)^2) sin(omega t)`.
#[derive(Clone, Debug)]
pub struct PulseForcing {
    pub amplitude: Vec<f64>,
    pub omega: f64,
    pub t0: f64,
    pub width: f64,
}

impl BoundaryForcing for PulseForcing {
    fn values(&self, t: f64) -> Vec<f64> {
        let env = (-((t - self.t0) / self.width).powi(2)).exp() * (self.omega * t).sin();
        self.amplitude.iter().map(|a| a * env).collect()
    }
}

impl<F: Fn(f64) -> Vec<f64> + Sync> BoundaryForcing for F {
    fn values(&self, t: f64) -> Vec<f64> {
        self(t)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// `(1/eps0) sum_s |sqrt(nu) Jbar / omega_p|^2` at the half step.
    pub dissipation_vol: f64,
    /// `eps0 c sum A (Ebar_t^2 - Ebar_t g)` at the half step.
    pub dissipation_bdry: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Leapfrog for `(E, B)` with a Crank-Nicolson current update. The state is
/// kept synchronized (all families at integer steps); `B` is advanced in two
/// half kicks around the implicit `E`/`J` update.
pub struct Stepper<'a> {
    pub model: &'a Model,
    pub dt: f64,
    /// `(I + dt/2 M_s)^{-1}` per species per site.
    s_inv: Vec<Vec<RMatrix3>>,
    lmat: Csr,
    blocks: Vec<Vec<usize>>,
    block_inv: Vec<Vec<f64>>,
    parallel: bool,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a Model, dt: f64) -> Result<Stepper<'a>> {
        let dt_max = model.mesh.cfl_max_dt();
        if !(dt > 0.0) || dt > dt_max * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, dt_max });
        }
        let mesh = &model.mesh;
        let half = 0.5 * dt;
        let mut s_inv = Vec::new();
        for s in 0..model.n_species() {
            let sp = &model.medium.species[s];
            let v: Result<Vec<RMatrix3>> = (0..mesh.n_sites)
                .map(|i| stix::inv_resolvent_m(half, sp.nu[i], sp.omega_c[i], model.medium.b[i]))
                .collect();
            s_inv.push(v?);
        }
        // L = (1 + dt kappa/2) I + dt^2/4 K* D R, D = sum_s eps0 w_s^2 S_s / eps0
        let mut dt_ = Vec::new();
        for i in 0..mesh.n_sites {
            let mut d = RMatrix3::zero();
            for s in 0..model.n_species() {
                d = d + s_inv[s][i].scale(model.coupling[s][i] / model.eps0());
            }
            for a in 0..3 {
                for b in 0..3 {
                    dt_.push((3 * i + a, 3 * i + b, d.m[a][b]));
                }
            }
        }
        let dmat = Csr::from_triplets(3 * mesh.n_sites, 3 * mesh.n_sites, &dt_);
        let kdr = mesh.feedback.matmul(&dmat).matmul(&mesh.recon);
        let mut lt: Vec<(usize, usize, f64)> = kdr.triplets().into_iter().map(|(i, j, v)| (i, j, 0.25 * dt * dt * v)).collect();
        for e in 0..mesh.n_edges {
            lt.push((e, e, 1.0 + half * mesh.kappa[e]));
        }
        let lmat = Csr::from_triplets(mesh.n_edges, mesh.n_edges, &lt);
        let blocks: Vec<Vec<usize>> = if mesh.is_slab() {
            (0..mesh.n_sites).map(|i| vec![3 * i, 3 * i + 1, 3 * i + 2]).collect()
        } else {
            (0..mesh.n_edges).map(|e| vec![e]).collect()
        };
        let block_inv = blocks.iter().map(|b| invert_block(&lmat, b)).collect();
        Ok(Stepper { model, dt, s_inv, lmat, blocks, block_inv, parallel: mesh.n_edges > 20_000 })
    }

    fn solve_e(&self, rhs: &[f64], x: &mut [f64]) -> Result<(usize, f64)> {
        let n = rhs.len();
        let scale = linalg::max_abs(rhs).max(f64::MIN_POSITIVE);
        x.copy_from_slice(rhs);
        let mut r = vec![0.0; n];
        let mut prev = f64::INFINITY;
        for it in 0..100 {
            self.lmat.matvec(x, &mut r);
            for (ri, bi) in r.iter_mut().zip(rhs) {
                *ri = bi - *ri;
            }
            let res = linalg::max_abs(&r) / scale;
            if res <= 1e-15 {
                return Ok((it, res));
            }
            if res >= prev * 0.9 && it > 3 {
                break;
            }
            prev = res;
            for (blk, inv) in self.blocks.iter().zip(&self.block_inv) {
                let k = blk.len();
                for a in 0..k {
                    let mut s = 0.0;
                    for b in 0..k {
                        s += inv[a * k + b] * r[blk[b]];
                    }
                    x[blk[a]] += s;
                }
            }
        }
        let w = &self.model.mesh.edge_w;
        let st = linalg::gmres(
            |u, o| self.lmat.matvec(u, o),
            |u, o| o.copy_from_slice(u),
            rhs,
            w,
            x,
            1e-14,
            10 * n,
            200,
        )?;
        Ok((st.iterations, st.residual))
    }

    /// One step of size `dt` with boundary data sampled at the half step.
    pub fn step(&self, u: &mut State<f64>, forcing: &dyn BoundaryForcing) -> Result<StepInfo> {
        let model = self.model;
        let mesh = &model.mesh;
        let half = 0.5 * self.dt;
        let dt = self.dt;
        let eps0 = model.eps0();
        let c2 = model.c() * model.c();
        let ns = model.n_species();

        let mut carry = u.carry.take().unwrap_or_default();
        if carry.e.len() != u.e.len() || carry.b.len() != u.b.len() {
            carry.e = vec![0.0; u.e.len()];
            carry.b = vec![0.0; u.b.len()];
        }
        let ce = mesh.curl.apply(&u.e);
        kahan_axpy(-half, &ce, &mut u.b, &mut carry.b);

        let g = forcing.values(u.t + half);
        let f = if g.is_empty() { vec![0.0; mesh.n_edges] } else { model.boundary_source(&g) };
        let cb = mesh.curl_star.apply(&u.b);
        let mut sj = vec![0.0; 3 * mesh.n_sites];
        for s in 0..ns {
            let js = &u.j[s];
            let sv = &self.s_inv[s];
            let acc = |i: usize| sv[i].mul_vec(&[js[3 * i], js[3 * i + 1], js[3 * i + 2]]);
            if self.parallel {
                let parts: Vec<[f64; 3]> = (0..mesh.n_sites).into_par_iter().map(acc).collect();
                for (i, p) in parts.iter().enumerate() {
                    for c in 0..3 {
                        sj[3 * i + c] += p[c];
                    }
                }
            } else {
                for i in 0..mesh.n_sites {
                    let p = acc(i);
                    for c in 0..3 {
                        sj[3 * i + c] += p[c];
                    }
                }
            }
        }
        let ksj = mesh.feedback.apply(&sj);
        let mut rhs = vec![0.0; mesh.n_edges];
        for e in 0..mesh.n_edges {
            if mesh.edge_free[e] {
                rhs[e] = u.e[e] + half * (c2 * cb[e] - ksj[e] / eps0 + f[e]);
            }
        }
        let mut ebar = vec![0.0; mesh.n_edges];
        let (iterations, residual) = self.solve_e(&rhs, &mut ebar)?;
        let rebar = mesh.recon.apply(&ebar);

        let mut jbar_sum = vec![0.0; 3 * mesh.n_sites];
        let mut dissipation_vol = 0.0;
        let mut jbars = Vec::with_capacity(ns);
        for s in 0..ns {
            let sp = &model.medium.species[s];
            let mut jbar = vec![0.0; 3 * mesh.n_sites];
            for i in 0..mesh.n_sites {
                let k = half * model.coupling[s][i];
                let v = [
                    u.j[s][3 * i] + k * rebar[3 * i],
                    u.j[s][3 * i + 1] + k * rebar[3 * i + 1],
                    u.j[s][3 * i + 2] + k * rebar[3 * i + 2],
                ];
                let jb = self.s_inv[s][i].mul_vec(&v);
                let mut n2 = 0.0;
                for c in 0..3 {
                    jbar[3 * i + c] = jb[c];
                    jbar_sum[3 * i + c] += jb[c];
                    u.j[s][3 * i + c] = 2.0 * jb[c] - u.j[s][3 * i + c];
                    n2 += jb[c] * jb[c];
                }
                dissipation_vol += mesh.site_w[i] * sp.nu[i] * n2 / (sp.omega_p[i] * sp.omega_p[i]);
            }
            jbars.push(jbar);
        }
        dissipation_vol /= eps0;
        let kj = mesh.feedback.apply(&jbar_sum);
        for e in 0..mesh.n_edges {
            if mesh.edge_free[e] {
                kahan(&mut u.e[e], &mut carry.e[e], dt * (c2 * cb[e] - kj[e] / eps0 - mesh.kappa[e] * ebar[e] + f[e]));
            }
        }
        let mut dissipation_bdry = 0.0;
        for (k, entry) in mesh.sm.iter().enumerate() {
            let et = ebar[entry.edge];
            let gv = g.get(k).copied().unwrap_or(0.0);
            dissipation_bdry += eps0 * model.c() * entry.area * (et * et - et * gv);
        }
        if let Some(rho) = u.rho.as_mut() {
            if carry.rho.len() != rho.len() || carry.rho.iter().zip(rho.iter()).any(|(c, r)| c.len() != r.len()) {
                carry.rho = rho.iter().map(|r| vec![0.0; r.len()]).collect();
            }
            for (s, r) in rho.iter_mut().enumerate() {
                let kjs = mesh.feedback.apply(&jbars[s]);
                let d = mesh.div_e.apply(&kjs);
                kahan_axpy(-dt, &d, r, &mut carry.rho[s]);
            }
        }
        let ce = mesh.curl.apply(&u.e);
        kahan_axpy(-half, &ce, &mut u.b, &mut carry.b);
        u.carry = Some(carry);
        u.t += dt;
        Ok(StepInfo { dissipation_vol, dissipation_bdry, iterations, residual })
    }

    /// Modified energy that the scheme never increases when `g = 0`:
    /// the synchronized energy minus `(c^2 eps0 dt^2 / 8) |C E|^2`.
    pub fn energy(&self, u: &State<f64>) -> f64 {
        let model = self.model;
        let (js, ee, eb) = energy_parts(model, u);
        let ce = model.mesh.curl.apply(&u.e);
        let corr = model.c() * model.c() * model.eps0() * self.dt * self.dt / 8.0
            * linalg::wnorm2(&model.mesh.face_w, &ce);
        js.iter().sum::<f64>() + ee + eb - corr
    }
}

fn invert_block(l: &Csr, blk: &[usize]) -> Vec<f64> {
    let k = blk.len();
    let mut a = vec![0.0; k * k];
    for (p, &i) in blk.iter().enumerate() {
        for (q, &j) in blk.iter().enumerate() {
            a[p * k + q] = l.get(i, j);
        }
    }
    match k {
        1 => vec![1.0 / a[0]],
        3 => {
            let m = RMatrix3 { m: [[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]] };
            let det = m.det();
            let mut inv = vec![0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                    let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                    inv[i * 3 + j] = (m.m[r0][c0] * m.m[r1][c1] - m.m[r0][c1] * m.m[r1][c0]) / det;
                }
            }
            inv
        }
        _ => unreachable!("block size {k}"),
    }
}

/// Advance `n_steps` steps, recording the energy ledger every step and a full
/// diagnostics row every `cadence` steps (and at both ends). `observe` sees
/// the state at every row.
pub fn march(
    stepper: &Stepper,
    u: &mut State<f64>,
    forcing: &dyn BoundaryForcing,
    n_steps: usize,
    cadence: usize,
    observe: &mut dyn FnMut(&State<f64>),
) -> Result<crate::diagnostics::RunTrace> {
    use crate::diagnostics::{constraint_residuals, energy, RunTrace, StepRecord, TraceRow};
    u.check_shape(stepper.model)?;
    let model = stepper.model;
    let cadence = cadence.max(1);
    let mut trace = RunTrace {
        dt: stepper.dt,
        initial_energy: energy(model, u, &[]).total,
        initial_energy_discrete: stepper.energy(u),
        steps: Vec::with_capacity(n_steps),
        rows: Vec::new(),
    };
    let row = |u: &State<f64>, last: Option<(&StepRecord, f64)>| -> TraceRow {
        let g = forcing.values(u.t);
        let rep = energy(model, u, &g);
        let (dv, db, res_bal, it, res) = match last {
            Some((s, rb)) => (s.dissipation_vol, s.dissipation_bdry, rb, s.iterations, s.residual),
            None => (rep.dissipation_vol, rep.boundary_flux, 0.0, 0, 0.0),
        };
        TraceRow {
            t: u.t,
            norm_x: (2.0 * rep.total).sqrt(),
            energy: rep,
            energy_discrete: stepper.energy(u),
            dissipation_vol: dv,
            dissipation_bdry: db,
            residual_balance: res_bal,
            constraints: constraint_residuals(model, u),
            solver_iters: it,
            solver_residual: res,
        }
    };
    trace.rows.push(row(u, None));
    observe(u);
    let mut prev = trace.initial_energy;
    for n in 1..=n_steps {
        let info = stepper.step(u, forcing)?;
        let e_sync = crate::diagnostics::energy(model, u, &[]).total;
        let rec = StepRecord {
            t: u.t,
            energy: e_sync,
            energy_discrete: stepper.energy(u),
            dissipation_vol: info.dissipation_vol,
            dissipation_bdry: info.dissipation_bdry,
            iterations: info.iterations,
            residual: info.residual,
        };
        let rb = (e_sync - prev) / stepper.dt + info.dissipation_vol + info.dissipation_bdry;
        prev = e_sync;
        if !e_sync.is_finite() {
            return Err(Error::NonFiniteState { step: n });
        }
        trace.steps.push(rec);
        if n % cadence == 0 || n == n_steps {
            trace.rows.push(row(u, Some((&rec, rb))));
            observe(u);
        }
    }
    Ok(trace)
}

/// Initial charge densities consistent with Gauss's law: the whole
/// `eps0 div E` is assigned to the first species.
pub fn init_rho(model: &Model, u: &mut State<f64>) {
    let d = model.mesh.div_e.apply(&u.e);
    let n = d.len();
    let mut rho = vec![vec![0.0; n]; model.n_species()];
    if let Some(r0) = rho.first_mut() {
        for (r, v) in r0.iter_mut().zip(&d) {
            *r = model.eps0() * v;
        }
    }
    u.rho = Some(rho);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{sample_medium_at, MediumSpec};
    use crate::mesh::{BoundaryTags, Constants, FaceKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(mesh: Mesh, species: &[(f64, f64, f64)], b: [f64; 3]) -> Model {
        let med = sample_medium_at(&MediumSpec::uniform(species, b), &mesh.site_pos).unwrap();
        Model::new(mesh, med).unwrap()
    }

    fn random_state(m: &Model, rng: &mut ChaCha8Rng) -> State<f64> {
        let mut u = State::zeros(m);
        u.j.iter_mut().flatten().chain(&mut u.e).chain(&mut u.b).for_each(|x| *x = rng.gen_range(-1.0..1.0));
        m.apply_pec(&mut u);
        u
    }

    #[test]
    fn zero_state_is_equilibrium() {
        let mesh = Mesh::box3([1.0; 3], [3; 3], BoundaryTags::all(FaceKind::Pec), Constants::default());
        let m = model(mesh, &[(1.0, 1.0, -2.0), (0.5, 1.0, 1.0)], [0.0, 0.6, 0.8]);
        let st = Stepper::new(&m, 0.9 * m.mesh.cfl_max_dt()).unwrap();
        let mut u = State::zeros(&m);
        for _ in 0..5 {
            st.step(&mut u, &NoForcing).unwrap();
        }
        assert!(u.e.iter().chain(&u.b).chain(u.j.iter().flatten()).all(|x| *x == 0.0));
    }

    #[test]
    fn cfl_is_enforced() {
        let mesh = Mesh::slab(1.0, 10, FaceKind::Pec, FaceKind::Pec, Constants::default());
        let m = model(mesh, &[(1.0, 1.0, 0.0)], [0.0, 0.0, 1.0]);
        assert!(matches!(Stepper::new(&m, 0.11), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn assembled_matches_matrix_free() {
        for bc in [BoundaryTags::all(FaceKind::Pec), BoundaryTags::all(FaceKind::Pec).with(2, 0, FaceKind::SilverMuller)] {
            let mesh = Mesh::box3([1.0, 0.8, 1.1], [3, 2, 3], bc, Constants { eps0: 2.0, c: 1.5 });
            let m = model(mesh, &[(1.3, 0.7, -2.0), (0.4, 0.2, 0.5)], [0.36, 0.48, 0.8]);
            let a = m.assemble_a();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let u = random_state(&m, &mut rng);
            let lhs = a.apply(&m.to_flat(&u));
            let rhs = m.to_flat(&m.apply_a(&u));
            let err = lhs.iter().zip(&rhs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn generator_is_monotone() {
        let bc = BoundaryTags::all(FaceKind::Pec).with(0, 1, FaceKind::SilverMuller);
        let mesh = Mesh::box3([1.0; 3], [3; 3], bc, Constants::default());
        let m = model(mesh, &[(1.0, 0.3, 2.0), (0.5, 0.1, -1.0)], [0.0, 0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let u = random_state(&m, &mut rng);
            assert!(m.inner(&m.apply_a(&u), &u) >= -1e-12);
        }
    }
}
