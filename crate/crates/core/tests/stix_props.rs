use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use magplasma::medium::{sample_medium_at, MediumPoint, MediumSpec, Profile, SpeciesSpec};
use magplasma::stix::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn unit_vec() -> impl Strategy<Value = [f64; 3]> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("not too short", |(x, y, z)| x * x + y * y + z * z > 0.01)
        .prop_map(|(x, y, z)| {
            let n = (x * x + y * y + z * z).sqrt();
            [x / n, y / n, z / n]
        })
}

fn species() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.1..5.0f64, 0.05..5.0f64, -10.0..10.0f64), 1..=2)
}

fn cvec() -> impl Strategy<Value = [Complex64; 3]> {
    prop::array::uniform3((-1.0..1.0f64, -1.0..1.0f64)).prop_map(|a| a.map(|(r, i)| Complex64::new(r, i)))
}

fn quad(m: &CMatrix3, v: &[Complex64; 3]) -> Complex64 {
    let mv = m.mul_vec(v);
    (0..3).map(|i| v[i].conj() * mv[i]).sum()
}

fn to_faer(m: &CMatrix3) -> Mat<Complex64> {
    Mat::from_fn(3, 3, |i, j| m.m[i][j])
}

fn fro(m: &CMatrix3) -> f64 {
    m.norm_fro()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn frame_is_orthonormal(b in unit_vec()) {
        let f = stix_frame(b).unwrap();
        let q = f.rotation();
        let g = q.transpose() * q;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g.m[i][j] - want).abs() < 1e-12);
            }
        }
        prop_assert!(cross(f.e1, f.e2).iter().zip(&f.e3).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn m_matches_cross_product(nu in 0.0..5.0f64, wc in -10.0..10.0f64, b in unit_vec(), v in prop::array::uniform3(-1.0..1.0f64)) {
        let mv = assemble_m(nu, wc, b).mul_vec(&v);
        let bx = cross(b, v);
        for i in 0..3 {
            let want = wc * bx[i] + nu * v[i];
            prop_assert!((mv[i] - want).abs() <= 1e-13 * (1.0 + want.abs() + nu + wc.abs()));
        }
    }

    #[test]
    fn shifted_inverse_is_inverse_and_normal(alpha in -30.0..30.0f64, nu in 0.05..5.0f64, wc in -10.0..10.0f64, b in unit_vec()) {
        let x = inv_shifted_m(alpha, nu, wc, b).unwrap();
        let a = assemble_m(nu, wc, b).to_complex() + CMatrix3::diag(Complex64::new(0.0, alpha));
        let p = a * x;
        prop_assert!(fro(&(p - CMatrix3::identity())) < 1e-12);
        // normal matrix: operator norm equals the spectral radius
        let rho = to_faer(&x).eigenvalues().unwrap().iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!((x.op_norm() - rho).abs() <= 1e-10 * rho);
    }

    #[test]
    fn resolvent_matrix_is_coercive(lambda in 0.0..1.0f64, nu in 0.0..5.0f64, wc in -10.0..10.0f64, b in unit_vec(), v in prop::array::uniform3(-1.0..1.0f64)) {
        let m = assemble_m(nu, wc, b);
        let lambda = lambda * 0.99 / (nu + wc.abs()).max(1e-12);
        let iv = RMatrix3::identity() + m.scale(lambda);
        let w = iv.mul_vec(&v);
        let vv = dot(v, v);
        prop_assert!(dot(w, v) >= vv * (1.0 - 1e-12));
    }

    #[test]
    fn d_lambda_is_positive(lambda in 0.01..1.0f64, sp in species(), b in unit_vec(), v in prop::array::uniform3(-1.0..1.0f64)) {
        let pt = MediumPoint { species: sp, b };
        let d = assemble_d(Shift::Lambda(lambda), &pt).unwrap();
        let vc = v.map(|x| Complex64::new(x, 0.0));
        prop_assert!(quad(&d, &vc).re >= -1e-14);
    }

    #[test]
    fn d_alpha_is_sum_of_independent_inverses(alpha in -30.0..30.0f64, sp in species(), b in unit_vec()) {
        let pt = MediumPoint { species: sp.clone(), b };
        let d = assemble_d(Shift::Alpha(alpha), &pt).unwrap();
        let mut want = Mat::<Complex64>::zeros(3, 3);
        let cx = [[0.0, -b[2], b[1]], [b[2], 0.0, -b[0]], [-b[1], b[0], 0.0]];
        for (wp, nu, wc) in sp {
            let a = Mat::from_fn(3, 3, |i, j| {
                Complex64::new(if i == j { nu } else { 0.0 }, if i == j { alpha } else { 0.0 }) + wc * cx[i][j]
            });
            want += a.partial_piv_lu().inverse() * faer::Scale(Complex64::new(wp * wp, 0.0));
        }
        let mut err = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                err = err.max((d.m[i][j] - want[(i, j)]).norm());
            }
        }
        prop_assert!(err <= 1e-12 * want.norm_l2().max(1.0));
    }

    #[test]
    fn b_alpha_is_normal_with_exact_eigenvalues(alpha in -30.0..30.0f64, sp in species(), b in unit_vec()) {
        let pt = MediumPoint { species: sp, b };
        let (bm, triple) = b_alpha(alpha, &pt).unwrap();
        let comm = bm * bm.adjoint() - bm.adjoint() * bm;
        let n = bm.op_norm();
        prop_assert!(fro(&comm) < 1e-11 * n.max(1.0).powi(2));
        for l in triple.as_array() {
            let det = (bm - CMatrix3::diag(l)).det();
            prop_assert!(det.norm() < 1e-9 * n.powi(3).max(1.0));
        }
    }

    #[test]
    fn zeta_eta_bound_numerical_range(alpha in -30.0..30.0f64, sp in species(), b in unit_vec(), v in cvec()) {
        let pt = MediumPoint { species: sp.clone(), b };
        let spec = MediumSpec {
            species: sp
                .iter()
                .map(|&(wp, nu, wc)| SpeciesSpec {
                    omega_p: Profile::constant(wp),
                    nu: Profile::constant(nu),
                    charge_sign: wc.signum(),
                    gyro: wc.abs(),
                })
                .collect(),
            b_ext: b.map(Profile::constant),
        };
        let fields = sample_medium_at(&spec, &[[0.0; 3]]).unwrap();
        let (zeta, eta) = zeta_eta(alpha, &fields).unwrap();
        let (bm, triple) = b_alpha(alpha, &pt).unwrap();
        prop_assert!((zeta - triple.min_re()).abs() <= 1e-12 * zeta.abs().max(1.0));
        let vv: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let q = quad(&bm, &v);
        let tol = 1e-12 * eta * vv;
        prop_assert!(eta * vv + tol >= q.norm());
        prop_assert!(q.norm() + tol >= q.re);
        prop_assert!(q.re + tol >= zeta * vv);
    }
}

#[test]
fn single_species_r_function() {
    let pt = MediumPoint { species: vec![(1.0, 1.0, 0.0)], b: [0.0, 0.0, 1.0] };
    let (_, triple) = b_alpha(0.0, &pt).unwrap();
    assert!((triple.lambda3.re - 1.0).abs() < 1e-15);
}

#[test]
fn m_for_field_along_z() {
    let m = assemble_m(1.0, 2.0, [0.0, 0.0, 1.0]);
    assert_eq!(m.m, [[1.0, -2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
}

#[test]
fn shifted_inverse_against_lu() {
    let x = inv_shifted_m(0.5, 1.0, 2.0, [0.0, 0.0, 1.0]).unwrap();
    let a = Mat::from_fn(3, 3, |i, j| {
        let m = [[1.0, -2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Complex64::new(m[i][j], if i == j { 0.5 } else { 0.0 })
    });
    let inv = a.partial_piv_lu().inverse();
    for i in 0..3 {
        for j in 0..3 {
            assert!((x.m[i][j] - inv[(i, j)]).norm() < 1e-12);
        }
    }
}

#[test]
fn zeta_over_ramp_medium_is_exhaustive_minimum() {
    let spec = MediumSpec {
        species: vec![SpeciesSpec {
            omega_p: Profile::constant(1.0),
            nu: Profile::Ramp { base: 0.5, slope: [1.0, 0.0, 0.0] },
            charge_sign: -1.0,
            gyro: 2.0,
        }],
        b_ext: [Profile::constant(0.0), Profile::constant(0.0), Profile::constant(1.0)],
    };
    let xs: Vec<[f64; 3]> = (0..=20).map(|k| [k as f64 / 20.0, 0.0, 0.0]).collect();
    let m = sample_medium_at(&spec, &xs).unwrap();
    let (zeta, _) = zeta_eta(0.7, &m).unwrap();
    let scan = (0..xs.len()).map(|i| b_alpha(0.7, &m.point(i)).unwrap().1.min_re()).fold(f64::INFINITY, f64::min);
    assert_eq!(zeta, scan);
}
