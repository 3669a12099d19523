use std::sync::Arc;

use proptest::prelude::*;
use torcrit::amplitude::Amplitude;
use torcrit::covariance::{kernel_deriv_lattice, kernel_poisson, LatticeSpectrum};
use torcrit::critical::{find_critical_points, FinderSettings, TestFunction};
use torcrit::kac_rice::{continuum_spectrum, two_point_matrices};
use torcrit::sampler::sample_field;

fn g1() -> Amplitude {
    Amplitude::gaussian(1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sample_is_periodic(seed in any::<u64>(), t in prop::array::uniform2(0.0f64..1.0), k in -3i32..4) {
        let spec = Arc::new(LatticeSpectrum::new(&g1(), 2, 6.0).unwrap());
        let s = sample_field(&spec, seed);
        let a = s.eval_jet(&t, 2).unwrap();
        let b = s.eval_jet(&[t[0] + k as f64, t[1] - k as f64], 2).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-9);
        for i in 0..2 {
            prop_assert!((a.grad[i] - b.grad[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn minima_and_maxima_alternate_on_the_circle(seed in any::<u64>(), r in 6.0f64..14.0) {
        let spec = Arc::new(LatticeSpectrum::new(&g1(), 1, r).unwrap());
        let s = sample_field(&spec, seed);
        let cm = find_critical_points(&s, &FinderSettings::for_sample(&s)).unwrap();
        prop_assume!(!cm.is_non_morse());
        let idx = cm.index_counts();
        prop_assert_eq!(idx[0], idx[1]);
        prop_assert_eq!(cm.euler_characteristic(), 0);
    }

    #[test]
    fn lattice_kernel_matches_image_sum(z in prop::array::uniform2(-8.0f64..8.0), r in 3.0f64..9.0) {
        let spec = LatticeSpectrum::new(&g1(), 2, r).unwrap();
        let a = kernel_deriv_lattice(&spec, &z, &[0, 0]).unwrap();
        let b = kernel_poisson(&g1(), 2, r, &z).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn two_point_matrices_are_even_symmetric_psd(z in prop::array::uniform2(-3.0f64..3.0)) {
        prop_assume!(z[0].hypot(z[1]) > 0.2);
        let spec = continuum_spectrum(&g1(), 2, 3.5).unwrap();
        let a = two_point_matrices(&spec, &z).unwrap();
        let b = two_point_matrices(&spec, &[-z[0], -z[1]]).unwrap();
        let scale = a.sigma.abs().max();
        prop_assert!((&a.sigma - a.sigma.transpose()).abs().max() <= 1e-12 * scale);
        prop_assert!((&a.cond_hat - &b.cond_hat).abs().max() <= 1e-10 * scale);
        let eig = a.cond_hat.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() >= -1e-10 * scale);
    }

    #[test]
    fn bump_is_bounded_and_supported(x in prop::array::uniform2(0.0f64..1.0), r0 in 0.05f64..0.5) {
        let f = TestFunction::bump(&[0.5, 0.5], r0).unwrap();
        let v = f.eval(&x);
        prop_assert!((0.0..=1.0).contains(&v));
        if (x[0] - 0.5).hypot(x[1] - 0.5) >= r0 {
            prop_assert_eq!(v, 0.0);
        }
    }
}
