//! Spectrum and resolvent norms of the slab generator.
//!
//! Everything is computed on the symmetrized matrix `W^{1/2} A_h W^{-1/2}`,
//! for which the Euclidean norm is the energy norm.

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdtd::{Model, State};
use crate::linalg::{self, Csr, SparseLu};
use crate::medium::{sample_medium_at, MediumSpec};
use crate::mesh::{Constants, FaceKind, Mesh};

/// Largest dimension handled by dense SVD in [`resolvent_curve`].
pub const DENSE_SVD_MAX: usize = 600;

pub struct SlabOperator {
    pub model: Model,
    pub a: Csr,
    /// X-norm weights on the flat layout.
    pub weights: Vec<f64>,
}

pub fn assemble_slab(
    spec: &MediumSpec,
    length: f64,
    n: usize,
    lo: FaceKind,
    hi: FaceKind,
    consts: Constants,
) -> Result<SlabOperator> {
    if n < 4 {
        return Err(Error::ShapeMismatch(format!("slab needs at least 4 cells, got {n}")));
    }
    let mesh = Mesh::slab(length, n, lo, hi, consts);
    let medium = sample_medium_at(spec, &mesh.site_pos)?;
    SlabOperator::new(Model::new(mesh, medium)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projector {
    /// Remove the discrete mean of each transverse magnetic component.
    ZeroMeanB,
}

impl SlabOperator {
    pub fn new(model: Model) -> Result<SlabOperator> {
        let a = model.assemble_a();
        let weights = model.flat_weights();
        Ok(SlabOperator { model, a, weights })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows
    }

    /// `W^{1/2} A W^{-1/2}`.
    pub fn scaled(&self) -> Csr {
        let s: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        let si: Vec<f64> = s.iter().map(|x| 1.0 / x).collect();
        self.a.scaled(&s, &si)
    }

    pub fn scaled_dense(&self) -> Mat<f64> {
        let s = self.scaled();
        let mut m = Mat::<f64>::zeros(s.nrows, s.ncols);
        for (i, j, v) in s.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Spectral norm of the scaled matrix (power iteration on `S^T S`).
    pub fn norm(&self) -> f64 {
        let s = self.scaled();
        let st = s.transpose();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut v: Vec<f64> = (0..s.ncols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut lam = 0.0;
        for _ in 0..500 {
            let w = st.apply(&s.apply(&v));
            let nw = linalg::norm(&w);
            if nw == 0.0 {
                return 0.0;
            }
            v = w.iter().map(|x| x / nw).collect();
            if (nw - lam).abs() <= 1e-12 * nw {
                lam = nw;
                break;
            }
            lam = nw;
        }
        lam.sqrt()
    }

    /// Orthonormal (scaled coordinates) basis of the directions removed by the projector.
    pub fn projector_basis(&self, p: Projector) -> Vec<Vec<f64>> {
        match p {
            Projector::ZeroMeanB => {
                let mesh = &self.model.mesh;
                let off = self.dim() - mesh.n_faces;
                (0..2)
                    .map(|comp| {
                        let mut k = vec![0.0; self.dim()];
                        for f in (comp..mesh.n_faces).step_by(2) {
                            k[off + f] = self.weights[off + f].sqrt();
                        }
                        let nk = linalg::norm(&k);
                        k.iter_mut().for_each(|x| *x /= nk);
                        k
                    })
                    .collect()
            }
        }
    }

    /// Coordinate ranges `(J, E, B)` of the flat layout.
    fn blocks(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
        let nj = self.model.n_species() * 3 * self.model.mesh.n_sites;
        let nb = self.model.mesh.n_faces;
        let d = self.dim();
        (0..nj, nj..d - nb, d - nb..d)
    }
}

/// Householder reflectors sending an orthonormal family onto coordinate
/// axes; conjugating a matrix by them and dropping those axes restricts it
/// to the orthogonal complement of the family.
pub struct Reflectors {
    vs: Vec<Vec<f64>>,
    pub dropped: Vec<usize>,
}

impl Reflectors {
    pub fn new(basis: &[Vec<f64>]) -> Reflectors {
        let mut vs: Vec<Vec<f64>> = Vec::new();
        let mut dropped = Vec::new();
        for k in basis {
            let mut k = k.clone();
            for v in &vs {
                reflect(v, &mut k);
            }
            let j = (0..k.len())
                .filter(|j| !dropped.contains(j))
                .max_by(|&a, &b| k[a].abs().total_cmp(&k[b].abs()))
                .expect("nonempty");
            // H k = -sign(k_j) e_j
            let mut v = k.clone();
            v[j] += k[j].signum() * linalg::norm(&k);
            let nv = linalg::norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            vs.push(v);
            dropped.push(j);
        }
        Reflectors { vs, dropped }
    }

    /// `Q^T x` (apply the reflectors in order).
    pub fn forward(&self, x: &mut [f64]) {
        for v in &self.vs {
            reflect(v, x);
        }
    }

    /// `Q y` (inverse order).
    pub fn backward(&self, x: &mut [f64]) {
        for v in self.vs.iter().rev() {
            reflect(v, x);
        }
    }

    /// `Q^T A Q` with the dropped rows and columns removed.
    pub fn restrict(&self, a: &Mat<f64>) -> Mat<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        for v in &self.vs {
            // rows: m <- (I - 2 v v^T) m
            for j in 0..n {
                let s: f64 = (0..n).map(|i| v[i] * m[(i, j)]).sum();
                if s != 0.0 {
                    for i in 0..n {
                        m[(i, j)] -= 2.0 * v[i] * s;
                    }
                }
            }
            // columns: m <- m (I - 2 v v^T)
            for i in 0..n {
                let s: f64 = (0..n).map(|j| m[(i, j)] * v[j]).sum();
                if s != 0.0 {
                    for j in 0..n {
                        m[(i, j)] -= 2.0 * s * v[j];
                    }
                }
            }
        }
        let keep = self.kept(n);
        Mat::from_fn(keep.len(), keep.len(), |i, j| m[(keep[i], keep[j])])
    }

    pub fn kept(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|i| !self.dropped.contains(i)).collect()
    }
}

fn reflect(v: &[f64], x: &mut [f64]) {
    let s: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= 2.0 * s * vi;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeClass {
    /// Eigenvector carries no current or electric field.
    KernelMode,
    Damped,
    Suspicious,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedEigenvalue {
    pub value: Complex64,
    pub class: ModeClass,
    /// Share of the eigenvector norm in the `J` and `E` components.
    pub field_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    /// Eigenvalues with `|Im| <= im_window`, classified.
    pub near_axis: Vec<ClassifiedEigenvalue>,
    pub norm: f64,
    pub re_tol: f64,
}

impl Spectrum {
    pub fn count(&self, class: ModeClass) -> usize {
        self.near_axis.iter().filter(|e| e.class == class).count()
    }

    pub fn min_re(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
    }

    pub fn min_nonkernel_re(&self) -> f64 {
        self.near_axis
            .iter()
            .filter(|e| e.class != ModeClass::KernelMode)
            .map(|e| e.value.re)
            .fold(f64::INFINITY, f64::min)
    }

    /// Spectral abscissa of `-A_h`, ignoring kernel modes.
    pub fn abscissa(&self) -> f64 {
        -self.min_nonkernel_re()
    }

    /// Conjugate pairs `(a, -a)` with `a > 0` and `|Re| < tol`.
    pub fn imaginary_pairs(&self, tol: f64) -> usize {
        self.eigenvalues.iter().filter(|z| z.re.abs() < tol && z.im > tol).count()
    }
}

/// Eigenvalues of `A_h` (optionally restricted by a projector) with the
/// near-axis ones classified. Eigenvalues with `|Re| <= re_tol` are
/// kernel modes when their eigenvector has `J`/`E` share below `1e-8`,
/// suspicious otherwise; the rest inside the window are damped.
pub fn spectrum_near_axis(op: &SlabOperator, projector: Option<Projector>, re_tol: f64, im_window: f64) -> Result<Spectrum> {
    let full = op.scaled_dense();
    let refl = projector.map(|p| Reflectors::new(&op.projector_basis(p)));
    let mat = match &refl {
        Some(r) => r.restrict(&full),
        None => full,
    };
    let norm = op.norm();
    let eig = |m: &Mat<f64>| m.eigenvalues().map_err(|e| Error::EigensolveFailure(format!("{e:?}")));
    let eigenvalues: Vec<Complex64> = eig(&mat)?;
    let need_vectors = eigenvalues.iter().any(|z| z.re.abs() <= re_tol && z.im.abs() <= im_window);
    let mut near_axis = Vec::new();
    if need_vectors {
        let ev = mat.eigen().map_err(|e| Error::EigensolveFailure(format!("{e:?}")))?;
        let (u, s) = (ev.U(), ev.S());
        let (jr, er, _) = op.blocks();
        let n = mat.nrows();
        for k in 0..n {
            let value = s[k];
            if value.im.abs() > im_window {
                continue;
            }
            let class = if value.re.abs() <= re_tol {
                // lift the eigenvector back to the full coordinates
                let mut re = vec![0.0; op.dim()];
                let mut im = vec![0.0; op.dim()];
                let keep = refl.as_ref().map(|r| r.kept(op.dim())).unwrap_or_else(|| (0..op.dim()).collect());
                for (p, &i) in keep.iter().enumerate() {
                    re[i] = u[(p, k)].re;
                    im[i] = u[(p, k)].im;
                }
                if let Some(r) = &refl {
                    r.backward(&mut re);
                    r.backward(&mut im);
                }
                let total: f64 = re.iter().chain(&im).map(|x| x * x).sum();
                let field: f64 = (jr.start..er.end).map(|i| re[i] * re[i] + im[i] * im[i]).sum();
                let frac = (field / total).sqrt();
                near_axis.push(ClassifiedEigenvalue {
                    value,
                    class: if frac < 1e-8 { ModeClass::KernelMode } else { ModeClass::Suspicious },
                    field_fraction: frac,
                });
                continue;
            } else {
                ModeClass::Damped
            };
            near_axis.push(ClassifiedEigenvalue { value, class, field_fraction: f64::NAN });
        }
    } else {
        near_axis = eigenvalues
            .iter()
            .filter(|z| z.im.abs() <= im_window)
            .map(|&value| ClassifiedEigenvalue { value, class: ModeClass::Damped, field_fraction: f64::NAN })
            .collect();
    }
    Ok(Spectrum { eigenvalues, near_axis, norm, re_tol })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResolventCurve {
    pub betas: Vec<f64>,
    pub sigma_min: Vec<f64>,
    /// `|(i beta + A_h)^{-1}|_X`.
    pub norms: Vec<f64>,
}

impl ResolventCurve {
    pub fn sup_on(&self, lo: f64, hi: f64) -> f64 {
        self.window(lo, hi).map(|(_, n)| n).fold(0.0, f64::max)
    }

    pub fn median_on(&self, lo: f64, hi: f64) -> f64 {
        let mut v: Vec<f64> = self.window(lo, hi).map(|(_, n)| n).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        if v.len() % 2 == 1 {
            v[m]
        } else {
            0.5 * (v[m - 1] + v[m])
        }
    }

    fn window(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.betas.iter().zip(&self.norms).filter(move |(b, _)| **b >= lo && **b <= hi).map(|(b, n)| (*b, *n))
    }

    /// Local maxima of the sampled curve inside the window.
    pub fn peaks(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        let pts: Vec<(f64, f64)> = self.window(lo, hi).collect();
        (0..pts.len())
            .filter(|&i| {
                let left = i == 0 || pts[i].1 >= pts[i - 1].1;
                let right = i + 1 == pts.len() || pts[i].1 >= pts[i + 1].1;
                left && right && i > 0 && i + 1 < pts.len()
            })
            .map(|i| pts[i])
            .collect()
    }

    /// Slope of `log |R|` against `log beta` through the peaks of the curve
    /// in the window (least squares), i.e. the growth of its upper envelope.
    pub fn envelope_slope(&self, lo: f64, hi: f64) -> Option<f64> {
        let env: Vec<(f64, f64)> = self.peaks(lo, hi).into_iter().filter(|p| p.0 > 0.0).map(|(b, n)| (b.ln(), n.ln())).collect();
        if env.len() < 2 {
            return None;
        }
        let n = env.len() as f64;
        let mx = env.iter().map(|p| p.0).sum::<f64>() / n;
        let my = env.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = env.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = env.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

/// Resolvent norms along the imaginary axis. Frequencies that hit a
/// discrete eigenvalue exactly are moved by `1e-9`.
pub fn resolvent_curve(op: &SlabOperator, betas: &[f64], projector: Option<Projector>) -> Result<ResolventCurve> {
    let mut betas: Vec<f64> = betas.to_vec();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let basis = projector.map(|p| op.projector_basis(p)).unwrap_or_default();
    let sigma_min: Vec<f64> = if op.dim() <= DENSE_SVD_MAX {
        let full = op.scaled_dense();
        let mat = if basis.is_empty() { full } else { Reflectors::new(&basis).restrict(&full) };
        betas.par_iter().map(|&b| dense_sigma_min(&mat, b)).collect::<Result<_>>()?
    } else {
        betas.par_iter().map(|&b| sparse_sigma_min(op, b, &basis)).collect::<Result<_>>()?
    };
    let norms = sigma_min.iter().map(|s| 1.0 / s).collect();
    Ok(ResolventCurve { betas, sigma_min, norms })
}

fn dense_sigma_min(a: &Mat<f64>, beta: f64) -> Result<f64> {
    let n = a.nrows();
    let m = Mat::<Complex64>::from_fn(n, n, |i, j| Complex64::new(a[(i, j)], if i == j { beta } else { 0.0 }));
    let s = m.singular_values().map_err(|_| Error::ConvergenceFailure { beta })?;
    Ok(s.iter().copied().fold(f64::INFINITY, f64::min))
}

fn shifted_lu(op: &SlabOperator, beta: f64) -> Result<(SparseLu<Complex64>, f64)> {
    let mut b = beta;
    for _ in 0..3 {
        let mut t: Vec<(usize, usize, Complex64)> =
            op.a.triplets().into_iter().map(|(i, j, v)| (i, j, Complex64::new(v, 0.0))).collect();
        t.extend((0..op.dim()).map(|i| (i, i, Complex64::new(0.0, b))));
        if let Ok(lu) = SparseLu::new(op.dim(), &t) {
            return Ok((lu, b));
        }
        b += 1e-9;
    }
    Err(Error::ConvergenceFailure { beta })
}

/// Smallest singular value of `i beta + W^{1/2} A W^{-1/2}` on the complement
/// of `basis`, by Lanczos on `(M^* M)^{-1}` with a sparse LU of the shift.
fn sparse_sigma_min(op: &SlabOperator, beta: f64, basis: &[Vec<f64>]) -> Result<f64> {
    let (lu, _) = shifted_lu(op, beta)?;
    let n = op.dim();
    let s: Vec<f64> = op.weights.iter().map(|w| w.sqrt()).collect();
    let project = |x: &mut [Complex64]| {
        for k in basis {
            let d: Complex64 = k.iter().zip(x.iter()).map(|(a, b)| *b * *a).sum();
            for (xi, ki) in x.iter_mut().zip(k) {
                *xi -= d * *ki;
            }
        }
    };
    // H x = T^* T x with T = S (i beta + A)^{-1} S^{-1}
    let apply = |x: &[Complex64]| -> Vec<Complex64> {
        let y: Vec<Complex64> = x.iter().zip(&s).map(|(v, si)| v / si).collect();
        let y = lu.solve(&y);
        let y: Vec<Complex64> = y.iter().zip(&s).map(|(v, si)| v * si * si).collect();
        let y = lu.solve_adjoint(&y);
        let mut y: Vec<Complex64> = y.iter().zip(&s).map(|(v, si)| v / si).collect();
        project(&mut y);
        y
    };
    let mut rng = ChaCha8Rng::seed_from_u64(beta.to_bits());
    let mut q: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    project(&mut q);
    let nq = linalg::norm(&q);
    q.iter_mut().for_each(|x| *x /= nq);
    let w = vec![1.0; n];
    let mut qs: Vec<Vec<Complex64>> = vec![q];
    let (mut alpha, mut betas_t): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut prev = 0.0;
    let kmax = 120.min(n.saturating_sub(basis.len()));
    for k in 0..kmax {
        let mut v = apply(&qs[k]);
        let a = linalg::wdot(&w, &qs[k], &v).re;
        alpha.push(a);
        for _ in 0..2 {
            for qj in &qs {
                let d = linalg::wdot(&w, qj, &v);
                linalg::axpy(-d, qj, &mut v);
            }
        }
        let theta = largest_tridiagonal(&alpha, &betas_t);
        if k > 2 && (theta - prev).abs() <= 1e-12 * theta {
            return Ok(1.0 / theta.sqrt());
        }
        prev = theta;
        let bn = linalg::norm(&v);
        if bn <= 1e-14 * theta {
            return Ok(1.0 / theta.sqrt());
        }
        betas_t.push(bn);
        v.iter_mut().for_each(|x| *x /= bn);
        qs.push(v);
    }
    Err(Error::ConvergenceFailure { beta })
}

fn largest_tridiagonal(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len();
    let m = Mat::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            a[i]
        } else if i + 1 == j {
            b[i]
        } else if j + 1 == i {
            b[j]
        } else {
            0.0
        }
    });
    m.self_adjoint_eigenvalues(faer::Side::Lower)
        .map(|v| v.into_iter().fold(f64::NEG_INFINITY, f64::max))
        .unwrap_or(f64::NAN)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quasimode {
    /// Cavity frequency `c k`.
    pub lambda: f64,
    /// `|(i lambda + A_h) U| / |U|`.
    pub residual: f64,
    pub norm: f64,
}

/// Cavity quasimodes: `E` an eigenvector of `c^2 C* C` on the `E_y` edges with
/// eigenvalue `lambda^2`, completed by the currents and magnetic field that
/// cancel the current and Faraday rows of `(i lambda + A_h) U` exactly. The
/// remaining residual is the plasma response `K* D R E`, which shrinks
/// like `1/lambda`.
pub fn quasimode_witness(op: &SlabOperator, modes: &[usize]) -> Result<Vec<Quasimode>> {
    let model = &op.model;
    let mesh = &model.mesh;
    let edges: Vec<usize> = (0..mesh.n_edges).filter(|&e| mesh.edge_free[e] && mesh.edge_axis[e] == 1).collect();
    let c2 = model.c() * model.c();
    let cc = mesh.curl_star.matmul(&mesh.curl);
    let n = edges.len();
    let sw: Vec<f64> = edges.iter().map(|&e| mesh.edge_w[e].sqrt()).collect();
    let sym = Mat::<f64>::from_fn(n, n, |i, j| c2 * sw[i] * cc.get(edges[i], edges[j]) / sw[j]);
    let sym = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (sym[(i, j)] + sym[(j, i)]));
    let eig = sym.self_adjoint_eigen(faer::Side::Lower).map_err(|e| Error::EigensolveFailure(format!("{e:?}")))?;
    let (u, s) = (eig.U(), eig.S());
    let mut order: Vec<usize> = (0..n).filter(|&k| s[k] > 1e-12).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let mut out = Vec::new();
    for &k in modes {
        let Some(&idx) = order.get(k) else {
            return Err(Error::ShapeMismatch(format!("only {} cavity modes", order.len())));
        };
        let lambda = s[idx].sqrt();
        let sigma = Complex64::new(0.0, lambda);
        let mut st = State::<Complex64>::zeros(model);
        for (p, &e) in edges.iter().enumerate() {
            st.e[e] = Complex64::new(u[(p, idx)] / sw[p], 0.0);
        }
        let scale = 1.0 / model.norm_x(&st);
        st.e.iter_mut().for_each(|x| *x *= scale);
        let re = mesh.recon.apply(&st.e);
        for sidx in 0..model.n_species() {
            let sp = &model.medium.species[sidx];
            for i in 0..mesh.n_sites {
                let frame = crate::stix::stix_frame(model.medium.b[i])?;
                let (inv, _) = crate::stix::inv_affine(sigma, 1.0, sp.nu[i], sp.omega_c[i], &frame);
                let k = model.coupling[sidx][i];
                let v = inv.mul_vec(&[re[3 * i] * k, re[3 * i + 1] * k, re[3 * i + 2] * k]);
                st.j[sidx][3 * i..3 * i + 3].copy_from_slice(&v);
            }
        }
        let ce = mesh.curl.apply(&st.e);
        st.b = ce.iter().map(|x| -*x / sigma).collect();
        let r = model.apply_a(&st).axpy(sigma, &st);
        let norm = model.norm_x(&st);
        out.push(Quasimode { lambda, residual: model.norm_x(&r) / norm, norm });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(nu: f64, b: [f64; 3], lo: FaceKind, hi: FaceKind, n: usize) -> SlabOperator {
        let spec = MediumSpec::uniform(&[(1.0, nu, 1.5)], b);
        assemble_slab(&spec, 1.0, n, lo, hi, Constants::default()).unwrap()
    }

    #[test]
    fn assembled_matches_matrix_free() {
        let o = op(0.7, [0.3, 0.5, 0.8], FaceKind::Pec, FaceKind::SilverMuller, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let norm = o.norm();
        for _ in 0..100 {
            let v: Vec<f64> = (0..o.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let av = o.a.apply(&v);
            let mf = o.model.to_flat(&o.model.apply_a(&o.model.from_flat(&v)));
            let s: Vec<f64> = o.weights.iter().map(|w| w.sqrt()).collect();
            let diff: Vec<f64> = av.iter().zip(&mf).zip(&s).map(|((a, b), w)| (a - b) * w).collect();
            let vn: Vec<f64> = v.iter().zip(&s).map(|(a, w)| a * w).collect();
            assert!(linalg::norm(&diff) <= 1e-13 * norm * linalg::norm(&vn));
        }
    }

    #[test]
    fn numerical_range_is_nonnegative() {
        let o = op(0.4, [0.0, 0.6, 0.8], FaceKind::SilverMuller, FaceKind::SilverMuller, 10);
        let s = o.scaled();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let v: Vec<f64> = (0..o.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q: f64 = s.apply(&v).iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!(q >= -1e-12 * linalg::norm(&v).powi(2));
        }
    }

    #[test]
    fn longitudinal_block_roots() {
        // b along x: each node carries the decoupled (J_x, E_x) pair with
        // characteristic polynomial z^2 - nu z + omega_p^2.
        let o = op(0.6, [1.0, 0.0, 0.0], FaceKind::Pec, FaceKind::Pec, 6);
        let sp = spectrum_near_axis(&o, None, 1e-12, f64::INFINITY).unwrap();
        let disc = Complex64::new(0.36 - 4.0, 0.0).sqrt();
        for root in [(0.6 + disc) / 2.0, (0.6 - disc) / 2.0] {
            let hits = sp.eigenvalues.iter().filter(|z| (**z - root).norm() < 1e-10).count();
            assert!(hits >= 7, "{root}: {hits}");
        }
    }

    #[test]
    fn reflectors_restrict_to_complement() {
        let o = op(1.0, [0.3, 0.5, 0.8], FaceKind::Pec, FaceKind::Pec, 8);
        let basis = o.projector_basis(Projector::ZeroMeanB);
        let r = Reflectors::new(&basis);
        for k in &basis {
            let mut x = k.clone();
            r.forward(&mut x);
            let off: f64 = r.kept(x.len()).iter().map(|&i| x[i] * x[i]).sum();
            assert!(off.sqrt() < 1e-14);
        }
        // mean-B vectors are in the kernel of the PEC operator
        let s = o.scaled();
        for k in &basis {
            assert!(linalg::norm(&s.apply(k)) < 1e-12);
        }
    }

    #[test]
    fn pec_kernel_is_classified() {
        let o = op(1.0, [0.3, 0.5, 0.8], FaceKind::Pec, FaceKind::Pec, 8);
        let sp = spectrum_near_axis(&o, None, 1e-9, f64::INFINITY).unwrap();
        assert_eq!(sp.count(ModeClass::KernelMode), 2);
        assert_eq!(sp.count(ModeClass::Suspicious), 0);
        let tilde = spectrum_near_axis(&o, Some(Projector::ZeroMeanB), 1e-9, f64::INFINITY).unwrap();
        assert_eq!(tilde.count(ModeClass::KernelMode), 0);
        assert!(tilde.min_nonkernel_re() > 0.0);
    }

    #[test]
    fn dense_and_sparse_sigma_min_agree() {
        let o = op(1.0, [0.3, 0.5, 0.8], FaceKind::Pec, FaceKind::Pec, 10);
        let full = o.scaled_dense();
        let basis = o.projector_basis(Projector::ZeroMeanB);
        let restricted = Reflectors::new(&basis).restrict(&full);
        for beta in [0.5, 3.0, 17.0] {
            let d = dense_sigma_min(&restricted, beta).unwrap();
            let s = sparse_sigma_min(&o, beta, &basis).unwrap();
            assert!((d - s).abs() < 1e-8 * d, "{beta}: {d} {s}");
            let d0 = dense_sigma_min(&full, beta).unwrap();
            let s0 = sparse_sigma_min(&o, beta, &[]).unwrap();
            assert!((d0 - s0).abs() < 1e-8 * d0);
        }
    }

    #[test]
    fn quasimode_residuals_shrink() {
        let o = op(1.0, [0.3, 0.5, 0.8], FaceKind::Pec, FaceKind::Pec, 100);
        let q = quasimode_witness(&o, &[0, 2, 8, 20]).unwrap();
        for w in q.windows(2) {
            assert!(w[1].residual < w[0].residual);
        }
        assert!(q.iter().all(|m| m.norm >= 1.0));
    }
}
