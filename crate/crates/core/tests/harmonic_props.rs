use magplasma::diagnostics::{fit_decay, DecayModel};
use magplasma::fdtd::{Model, State, Stepper};
use magplasma::harmonic::{convergence_test, harmonic_solution, lift_boundary_data, trace};
use magplasma::medium::{sample_medium_at, MediumSpec};
use magplasma::mesh::{BoundaryTags, Constants, FaceKind, Mesh};
use num_complex::Complex64;
use proptest::prelude::*;

fn mixed_box(cells: [usize; 3]) -> Model {
    let bc = BoundaryTags::all(FaceKind::Pec)
        .with(0, 0, FaceKind::SilverMuller)
        .with(1, 1, FaceKind::SilverMuller)
        .with(2, 1, FaceKind::SilverMuller);
    let mesh = Mesh::box3([1.0, 1.0, 1.0], cells, bc, Constants::default());
    let spec = MediumSpec::uniform(&[(2.0, 1.0, 1.5), (1.0, 0.5, -0.5)], [0.0, 0.6, 0.8]);
    Model::new(mesh.clone(), sample_medium_at(&spec, &mesh.site_pos).unwrap()).unwrap()
}

fn smooth_data(m: &Model) -> Vec<Complex64> {
    m.mesh
        .sm
        .iter()
        .map(|s| {
            let p = s.pos;
            let env = (std::f64::consts::PI * p[0]).sin().abs() + 0.5 * p[1] + 0.2;
            Complex64::new(env, 0.3 * env * (s.axis as f64 - 1.0))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lifting_reproduces_random_data(
        re in prop::collection::vec(-1.0..1.0f64, 200),
        im in prop::collection::vec(-1.0..1.0f64, 200),
        theta in 0.0..1.0f64,
    ) {
        let m = mixed_box([3, 4, 3]);
        let n = m.mesh.sm.len();
        prop_assume!(n <= 200);
        let g: Vec<Complex64> = (0..n).map(|k| Complex64::new(re[k], im[k])).collect();
        let l = lift_boundary_data(&m.mesh, &g, theta).unwrap();
        let tr = trace(&m.mesh, &l.e, &l.b);
        let err = tr.iter().zip(&g).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-9, "{err:e}");
    }
}

#[test]
fn regime_is_stationary_to_second_order_in_dt() {
    let m = mixed_box([4, 4, 4]);
    let g = smooth_data(&m);
    let s = harmonic_solution(&m, 1.5, &g, None).unwrap();
    let t_end = 2.0;
    let mut errs = Vec::new();
    for frac in [0.8, 0.4, 0.2] {
        let dt = frac * m.mesh.cfl_max_dt();
        let n = (t_end / dt).round() as usize;
        let st = Stepper::new(&m, t_end / n as f64).unwrap();
        let run = convergence_test(&st, &s, s.at(0.0), n, n, None).unwrap();
        errs.push(run.samples.last().unwrap().err_x);
    }
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!(ratio > 3.0 && ratio < 5.0, "{errs:?}");
    }
}

#[test]
fn perturbation_of_the_regime_decays() {
    let m = mixed_box([6, 6, 6]);
    let g = smooth_data(&m);
    let s = harmonic_solution(&m, 2.0, &g, None).unwrap();
    let mut p = State::zeros(&m);
    for (k, x) in p.j[0].iter_mut().enumerate() {
        *x = ((k % 5) as f64 - 2.0) * 0.2;
    }
    // distance between two forced orbits, so the O(dt^2) offset of the
    // discrete orbit from the semi-discrete regime cancels
    let mut a = s.at(0.0).axpy(1.0, &p);
    let mut b = s.at(0.0);
    let st = Stepper::new(&m, 0.9 * m.mesh.cfl_max_dt()).unwrap();
    let forcing = s.forcing();
    let mut series = Vec::new();
    while a.t < 40.0 {
        for _ in 0..5 {
            st.step(&mut a, &forcing).unwrap();
            st.step(&mut b, &forcing).unwrap();
        }
        series.push((a.t, m.norm_x(&a.axpy(-1.0, &b))));
    }
    let slope = fit_decay(&series, DecayModel::Poly, Some((4.0, 40.0))).unwrap().rate;
    assert!(slope <= -0.35, "slope {slope}");
}
