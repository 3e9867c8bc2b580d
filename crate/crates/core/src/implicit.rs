//! Resolvent solves `(I + lambda A_h) U = F` and shifted solves
//! `(-i omega I + A_h) U = F`, reduced to one edge system for `E`.
//!
//! For a shift `sigma` the current and magnetic unknowns are eliminated:
//! `J_s = (sigma + M_s)^{-1} (F_s + eps0 w_s^2 R E)`, `B = (F_B - C E) / sigma`,
//! leaving
//! `[(sigma + kappa) + (c^2/sigma) C* C + K* D_sigma R] E = G + (c^2/sigma) C* F_B`
//! with `D_sigma = sum_s w_s^2 (sigma + M_s)^{-1}` and
//! `G = F_E - (1/eps0) K* sum_s (sigma + M_s)^{-1} F_s`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fdtd::{Model, State};
use crate::linalg::{self, Scalar, SolveStats, SparseLu};
use crate::stix::{self, Matrix3};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveReport {
    /// Krylov iterations on the edge system.
    pub iterations: usize,
    /// Relative residual of the edge system (edge-weighted norm).
    pub reduced_residual: f64,
    /// `|(sigma + A_h) U - F|_X / |F|_X` of the reconstructed state.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Krylov {
    Cg,
    Gmres,
}

/// The eliminated edge system for one shift.
pub struct ShiftedSystem<'a, T: Scalar> {
    pub model: &'a Model,
    pub sigma: T,
    /// `(sigma + M_s)^{-1}` per species per site.
    inv: Vec<Vec<Matrix3<T>>>,
    /// `D_sigma` per site.
    d: Vec<Matrix3<T>>,
    blocks: Vec<Vec<usize>>,
    block_inv: Vec<Vec<T>>,
}

fn cast<T: Scalar>(m: &stix::CMatrix3) -> Matrix3<T> {
    let mut a = Matrix3::<T>::zero();
    for i in 0..3 {
        for j in 0..3 {
            a.m[i][j] = T::from_c64(m.m[i][j]);
        }
    }
    a
}

impl<'a, T: Scalar> ShiftedSystem<'a, T> {
    pub fn new(model: &'a Model, sigma: T) -> Result<Self> {
        let mesh = &model.mesh;
        let sc = sigma.to_c64();
        if sc.norm() == 0.0 {
            return Err(Error::SingularShift { det: 0.0 });
        }
        let mut inv = Vec::with_capacity(model.n_species());
        for sp in &model.medium.species {
            let mut v = Vec::with_capacity(mesh.n_sites);
            for i in 0..mesh.n_sites {
                let frame = stix::stix_frame(model.medium.b[i])?;
                let (x, det) = stix::inv_affine(sc, 1.0, sp.nu[i], sp.omega_c[i], &frame);
                if det.norm() <= stix::SINGULAR_DET {
                    return Err(Error::SingularShift { det: det.norm() });
                }
                v.push(cast::<T>(&x));
            }
            inv.push(v);
        }
        let d = (0..mesh.n_sites)
            .map(|i| {
                let mut acc = Matrix3::<T>::zero();
                for (s, sp) in model.medium.species.iter().enumerate() {
                    acc = acc + inv[s][i].scale(T::from_f64(sp.omega_p[i] * sp.omega_p[i]));
                }
                acc
            })
            .collect();
        let mut sys = ShiftedSystem { model, sigma, inv, d, blocks: Vec::new(), block_inv: Vec::new() };
        sys.build_preconditioner();
        Ok(sys)
    }

    fn entry(&self, a: usize, b: usize, cc: &linalg::Csr) -> T {
        let mesh = &self.model.mesh;
        if !mesh.edge_free[a] {
            return T::from_f64(if a == b { 1.0 } else { 0.0 });
        }
        let c2 = self.model.c() * self.model.c();
        let mut v = T::zero();
        if a == b {
            v += self.sigma + T::from_f64(mesh.kappa[a]);
        }
        v += T::from_f64(c2 * cc.get(a, b)) / self.sigma;
        for (r, k) in mesh.feedback.row(a) {
            let (i, ca) = (r / 3, r % 3);
            for cb in 0..3 {
                let rv = mesh.recon.get(3 * i + cb, b);
                if rv != 0.0 {
                    v += self.d[i].m[ca][cb] * (k * rv);
                }
            }
        }
        v
    }

    fn build_preconditioner(&mut self) {
        let mesh = &self.model.mesh;
        let cc = mesh.curl_star.matmul(&mesh.curl);
        self.blocks = if mesh.is_slab() {
            (0..mesh.n_sites).map(|i| vec![3 * i, 3 * i + 1, 3 * i + 2]).collect()
        } else {
            (0..mesh.n_edges).map(|e| vec![e]).collect()
        };
        self.block_inv = self
            .blocks
            .iter()
            .map(|blk| {
                if blk.len() == 1 {
                    let a = self.entry(blk[0], blk[0], &cc);
                    vec![T::from_f64(1.0) / a]
                } else {
                    let mut m = Matrix3::<T>::zero();
                    for p in 0..3 {
                        for q in 0..3 {
                            m.m[p][q] = self.entry(blk[p], blk[q], &cc);
                        }
                    }
                    invert3(&m).m.iter().flatten().copied().collect()
                }
            })
            .collect();
    }

    fn precondition(&self, r: &[T], z: &mut [T]) {
        for (blk, inv) in self.blocks.iter().zip(&self.block_inv) {
            let k = blk.len();
            for a in 0..k {
                let mut s = T::zero();
                for b in 0..k {
                    s += inv[a * k + b] * r[blk[b]];
                }
                z[blk[a]] = s;
            }
        }
    }

    /// `sigma E + (c^2/sigma) C* C E + K* D R E + kappa E`; identity on constrained edges.
    pub fn apply(&self, x: &[T], out: &mut [T]) {
        let mesh = &self.model.mesh;
        let c2 = self.model.c() * self.model.c();
        let cc = mesh.curl_star.apply(&mesh.curl.apply(x));
        let rx = mesh.recon.apply(x);
        let mut drx = vec![T::zero(); rx.len()];
        for (i, d) in self.d.iter().enumerate() {
            let v = d.mul_vec(&[rx[3 * i], rx[3 * i + 1], rx[3 * i + 2]]);
            drx[3 * i..3 * i + 3].copy_from_slice(&v);
        }
        let kd = mesh.feedback.apply(&drx);
        let c2s = T::from_f64(c2) / self.sigma;
        for e in 0..mesh.n_edges {
            out[e] = if mesh.edge_free[e] {
                (self.sigma + T::from_f64(mesh.kappa[e])) * x[e] + c2s * cc[e] + kd[e]
            } else {
                x[e]
            };
        }
    }

    /// `B_sigma E = sigma E + K* D R E`, the part of the edge operator the
    /// discrete divergence does not annihilate.
    pub fn apply_b(&self, x: &[T]) -> Vec<T> {
        let mesh = &self.model.mesh;
        let rx = mesh.recon.apply(x);
        let mut drx = vec![T::zero(); rx.len()];
        for (i, d) in self.d.iter().enumerate() {
            let v = d.mul_vec(&[rx[3 * i], rx[3 * i + 1], rx[3 * i + 2]]);
            drx[3 * i..3 * i + 3].copy_from_slice(&v);
        }
        let kd = mesh.feedback.apply(&drx);
        (0..mesh.n_edges).map(|e| if mesh.edge_free[e] { self.sigma * x[e] + kd[e] } else { T::zero() }).collect()
    }

    /// `G = F_E - (1/eps0) K* sum_s (sigma + M_s)^{-1} F_s` on free edges.
    pub fn reduced_source(&self, f: &State<T>) -> Vec<T> {
        let mesh = &self.model.mesh;
        let mut acc = vec![T::zero(); 3 * mesh.n_sites];
        for (s, fs) in f.j.iter().enumerate() {
            for i in 0..mesh.n_sites {
                let v = self.inv[s][i].mul_vec(&[fs[3 * i], fs[3 * i + 1], fs[3 * i + 2]]);
                for c in 0..3 {
                    acc[3 * i + c] += v[c];
                }
            }
        }
        let k = mesh.feedback.apply(&acc);
        let ie = 1.0 / self.model.eps0();
        (0..mesh.n_edges).map(|e| if mesh.edge_free[e] { f.e[e] - k[e] * ie } else { T::zero() }).collect()
    }

    /// Right-hand side of the edge system.
    pub fn rhs(&self, f: &State<T>) -> Vec<T> {
        let mesh = &self.model.mesh;
        let mut g = self.reduced_source(f);
        let cf = mesh.curl_star.apply(&f.b);
        let c2s = T::from_f64(self.model.c() * self.model.c()) / self.sigma;
        for e in 0..mesh.n_edges {
            if mesh.edge_free[e] {
                g[e] += c2s * cf[e];
            }
        }
        g
    }

    /// Recover the full state from the edge unknowns.
    pub fn reconstruct(&self, e: &[T], f: &State<T>) -> State<T> {
        let model = self.model;
        let mesh = &model.mesh;
        let mut u = State::zeros(model);
        u.t = f.t;
        u.e = e.to_vec();
        model.apply_pec(&mut u);
        let re = mesh.recon.apply(&u.e);
        for s in 0..model.n_species() {
            for i in 0..mesh.n_sites {
                let k = model.coupling[s][i];
                let v = [
                    f.j[s][3 * i] + re[3 * i] * k,
                    f.j[s][3 * i + 1] + re[3 * i + 1] * k,
                    f.j[s][3 * i + 2] + re[3 * i + 2] * k,
                ];
                let w = self.inv[s][i].mul_vec(&v);
                u.j[s][3 * i..3 * i + 3].copy_from_slice(&w);
            }
        }
        let ce = mesh.curl.apply(&u.e);
        let is = T::from_f64(1.0) / self.sigma;
        u.b = f.b.iter().zip(&ce).map(|(fb, c)| (*fb - *c) * is).collect();
        u
    }

    /// `|(sigma + A_h) U - F|_X / |F|_X`, with constrained `E` entries of `F` ignored.
    pub fn residual(&self, u: &State<T>, f: &State<T>) -> f64 {
        let model = self.model;
        let mut fp = f.clone();
        model.apply_pec(&mut fp);
        let au = model.apply_a(u);
        let r = au.axpy(self.sigma, u).axpy(T::from_f64(-1.0), &fp);
        let fnorm = model.norm_x(&fp);
        if fnorm == 0.0 {
            model.norm_x(&r)
        } else {
            model.norm_x(&r) / fnorm
        }
    }

    /// Solve `(sigma + A_h) U = F` through the edge system.
    pub fn solve(&self, f: &State<T>, method: Krylov, x0: Option<&[T]>, tol: f64) -> Result<(State<T>, SolveReport)> {
        f.check_shape(self.model)?;
        let mesh = &self.model.mesh;
        let n = mesh.n_edges;
        let b = self.rhs(f);
        let mut x = match x0 {
            Some(x0) if x0.len() == n => x0.to_vec(),
            _ => vec![T::zero(); n],
        };
        for e in 0..n {
            if !mesh.edge_free[e] {
                x[e] = T::zero();
            }
        }
        let w = &mesh.edge_w;
        let apply = |u: &[T], o: &mut [T]| self.apply(u, o);
        let pre = |u: &[T], o: &mut [T]| self.precondition(u, o);
        let st: SolveStats = match method {
            Krylov::Cg => linalg::cg(apply, pre, &b, w, &mut x, tol, 10 * n)?,
            Krylov::Gmres => linalg::gmres(apply, pre, &b, w, &mut x, tol, 10 * n, 200)?,
        };
        let u = self.reconstruct(&x, f);
        let residual = self.residual(&u, f);
        Ok((u, SolveReport { iterations: st.iterations, reduced_residual: st.residual, residual }))
    }

    /// Largest nodal divergence of `B_sigma E - G`, relative to `|G|_inf`.
    /// Vanishes when the unconstrained solve already satisfies the
    /// divergence constraint of the mixed formulation.
    pub fn divergence_residual(&self, e: &[T], f: &State<T>) -> f64 {
        let mesh = &self.model.mesh;
        let g = self.reduced_source(f);
        let be = self.apply_b(e);
        let diff: Vec<T> = be.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        let d = mesh.div_e.apply(&diff);
        let h = mesh.grid.min_spacing();
        let scale = linalg::max_abs(&g).max(linalg::max_abs(&be)).max(f64::MIN_POSITIVE);
        linalg::max_abs(&d) * h / scale
    }
}

fn invert3<T: Scalar>(a: &Matrix3<T>) -> Matrix3<T> {
    let m = &a.m;
    let det = a.det();
    let mut inv = Matrix3::<T>::zero();
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv.m[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

/// `lambda max_s,x (nu_s + |Omega_cs|)`, the bound on `|lambda M_s|`.
pub fn lambda_bound(model: &Model, lambda: f64) -> f64 {
    let mut m: f64 = 0.0;
    for sp in &model.medium.species {
        for i in 0..sp.nu.len() {
            m = m.max(sp.nu[i].abs() + sp.omega_c[i].abs());
        }
    }
    lambda * m
}

fn gyrotropic(model: &Model) -> bool {
    model.medium.species.iter().any(|s| s.omega_c.iter().any(|w| *w != 0.0))
}

/// Solve `(I + lambda A_h) U = F`. The reduced system is symmetric positive
/// definite when no species gyrates and is then solved by CG, otherwise by GMRES.
pub fn resolvent_step(model: &Model, f: &State<f64>, lambda: f64) -> Result<(State<f64>, SolveReport)> {
    let bound = lambda_bound(model, lambda);
    if !(lambda > 0.0) || !lambda.is_finite() || !(bound < 1.0) {
        return Err(Error::NonAdmissibleLambda { lambda, bound });
    }
    let sigma = 1.0 / lambda;
    let sys = ShiftedSystem::new(model, sigma)?;
    let fs = f.map(|x| x * sigma);
    let method = if gyrotropic(model) { Krylov::Gmres } else { Krylov::Cg };
    let (mut u, mut rep) = sys.solve(&fs, method, None, 1e-12)?;
    u.t = f.t;
    rep.residual = sys.residual(&u, &fs);
    Ok((u, rep))
}

/// Solve `(-i omega I + A_h) U = F`. A zero frequency goes to a sparse direct
/// solve of `A_h` itself; a residual above `1e-9` there, or a stalled Krylov
/// iteration otherwise, is reported as a near-singular shift.
pub fn shifted_solve(
    model: &Model,
    omega: f64,
    f: &State<Complex64>,
    x0: Option<&State<Complex64>>,
) -> Result<(State<Complex64>, SolveReport)> {
    f.check_shape(model)?;
    if omega == 0.0 {
        return direct_zero_shift(model, f);
    }
    let sigma = Complex64::new(0.0, -omega);
    let sys = ShiftedSystem::new(model, sigma)?;
    let start = x0.map(|u| u.e.clone());
    match sys.solve(f, Krylov::Gmres, start.as_deref(), 1e-12) {
        Ok((u, rep)) if rep.residual < 1e-9 => Ok((u, rep)),
        Ok((_, rep)) => Err(Error::NearSingularShift { omega, residual: rep.residual }),
        Err(Error::IterativeSolveFailure { residual, .. }) => Err(Error::NearSingularShift { omega, residual }),
        Err(e) => Err(e),
    }
}

fn direct_zero_shift(model: &Model, f: &State<Complex64>) -> Result<(State<Complex64>, SolveReport)> {
    let a = model.assemble_a();
    let lu = SparseLu::<Complex64>::from_csr(&a)
        .map_err(|_| Error::NearSingularShift { omega: 0.0, residual: f64::INFINITY })?;
    let mut fp = f.clone();
    model.apply_pec(&mut fp);
    let x = lu.solve(&model.to_flat(&fp));
    let u = model.from_flat(&x);
    let r = model.apply_a(&u).axpy(Complex64::new(-1.0, 0.0), &fp);
    let fnorm = model.norm_x(&fp).max(f64::MIN_POSITIVE);
    let residual = model.norm_x(&r) / fnorm;
    if !u.is_finite() || !(residual < 1e-9) {
        return Err(Error::NearSingularShift { omega: 0.0, residual: if residual.is_nan() { f64::INFINITY } else { residual } });
    }
    Ok((u, SolveReport { iterations: 0, reduced_residual: residual, residual }))
}

/// Triplets of `sigma I + A_h` on the flat layout.
pub fn shifted_triplets<T: Scalar>(model: &Model, sigma: T) -> Vec<(usize, usize, T)> {
    let mut t: Vec<(usize, usize, T)> = model.assemble_a().triplets().into_iter().map(|(i, j, v)| (i, j, T::from_f64(v))).collect();
    t.extend((0..model.dim()).map(|i| (i, i, sigma)));
    t
}

/// Monolithic sparse direct solve of `(sigma I + A_h) U = F`, used to check
/// the elimination on small grids.
pub fn monolithic_solve<T: Scalar + faer::traits::ComplexField>(model: &Model, sigma: T, f: &State<T>) -> Result<State<T>> {
    let lu = SparseLu::<T>::new(model.dim(), &shifted_triplets(model, sigma))?;
    let mut fp = f.clone();
    model.apply_pec(&mut fp);
    let mut u = model.from_flat(&lu.solve(&model.to_flat(&fp)));
    u.t = f.t;
    Ok(u)
}
