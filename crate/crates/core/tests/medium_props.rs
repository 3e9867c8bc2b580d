use magplasma::medium::{sample_medium_at, validate_hypotheses, MediumSpec, Profile, SpeciesSpec};
use proptest::prelude::*;

fn ramp() -> impl Strategy<Value = Profile> {
    (-2.0..2.0f64, prop::array::uniform3(-1.0..1.0f64)).prop_map(|(base, slope)| Profile::Ramp { base, slope })
}

fn species() -> impl Strategy<Value = SpeciesSpec> {
    (ramp(), ramp(), prop::bool::ANY, 0.0..3.0f64).prop_map(|(omega_p, nu, neg, gyro)| SpeciesSpec {
        omega_p,
        nu,
        charge_sign: if neg { -1.0 } else { 1.0 },
        gyro,
    })
}

fn medium() -> impl Strategy<Value = MediumSpec> {
    // b_ext stays away from zero inside the unit cube: a dominant constant z part
    (prop::collection::vec(species(), 1..=3), -0.3..0.3f64, -0.3..0.3f64, 1.0..2.0f64).prop_map(|(species, bx, by, bz)| {
        MediumSpec {
            species,
            b_ext: [
                Profile::Ramp { base: bx, slope: [0.2, 0.0, 0.0] },
                Profile::constant(by),
                Profile::Ramp { base: bz, slope: [0.0, 0.0, -0.5] },
            ],
        }
    })
}

fn points() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(0.0..1.0f64), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn field_direction_is_unit(spec in medium(), xs in points()) {
        let m = sample_medium_at(&spec, &xs).unwrap();
        for b in &m.b {
            let n = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bounds_match_exhaustive_scan(spec in medium(), xs in points()) {
        let m = sample_medium_at(&spec, &xs).unwrap();
        let r = &m.bounds;
        let mut nu_lo = f64::INFINITY;
        let mut nu_hi = f64::NEG_INFINITY;
        let mut wp_lo = f64::INFINITY;
        let mut wp_hi = f64::NEG_INFINITY;
        let mut wc_hi = 0.0f64;
        let mut bad = false;
        let mut zero_nu = false;
        for x in &xs {
            let bmag = spec.b_ext.iter().map(|p| p.eval(*x).powi(2)).sum::<f64>().sqrt();
            for s in &spec.species {
                let (wp, nu) = (s.omega_p.eval(*x), s.nu.eval(*x));
                nu_lo = nu_lo.min(nu);
                nu_hi = nu_hi.max(nu);
                wp_lo = wp_lo.min(wp);
                wp_hi = wp_hi.max(wp);
                wc_hi = wc_hi.max(s.gyro * bmag);
                bad |= nu < 0.0 || wp <= 0.0;
                zero_nu |= nu == 0.0;
            }
        }
        prop_assert_eq!(r.nu_lower, nu_lo);
        prop_assert_eq!(r.nu_star, nu_hi);
        prop_assert_eq!(r.omega_p_lower, wp_lo);
        prop_assert_eq!(r.omega_p_star, wp_hi);
        prop_assert!((r.omega_c_star - wc_hi).abs() <= 1e-14 * wc_hi.max(1.0));
        prop_assert_eq!(r.hyp1_ok, !bad);
        prop_assert_eq!(r.hyp2_ok, !bad && !zero_nu && nu_lo > 0.0);
    }

    #[test]
    fn validation_is_idempotent_and_order_free(spec in medium(), xs in points(), seed in 0u64..1000) {
        let m = sample_medium_at(&spec, &xs).unwrap();
        prop_assert_eq!(&validate_hypotheses(&m), &m.bounds);
        prop_assert_eq!(&validate_hypotheses(&m), &validate_hypotheses(&m));
        let mut perm: Vec<[f64; 3]> = xs.clone();
        let k = (seed as usize) % perm.len();
        perm.rotate_left(k);
        perm.reverse();
        let p = sample_medium_at(&spec, &perm).unwrap();
        let (a, b) = (&m.bounds, &p.bounds);
        prop_assert_eq!(a.nu_star, b.nu_star);
        prop_assert_eq!(a.nu_lower, b.nu_lower);
        prop_assert_eq!(a.omega_p_star, b.omega_p_star);
        prop_assert_eq!(a.omega_p_lower, b.omega_p_lower);
        prop_assert_eq!(a.omega_c_star, b.omega_c_star);
        prop_assert_eq!(a.hyp1_ok, b.hyp1_ok);
        prop_assert_eq!(a.hyp2_ok, b.hyp2_ok);
        prop_assert_eq!(a.violations.len(), b.violations.len());
    }
}
