use num_complex::Complex64;
use proptest::prelude::*;

use senskit::grid::{ComplexImageStack, Domain};
use senskit::projection_residual;

fn stack(q: usize, vals: &[(f64, f64)], domain: Domain) -> ComplexImageStack {
    let data = vals.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
    ComplexImageStack::new(vec![4, 3], q, data, domain).unwrap()
}

proptest! {
    #[test]
    fn residual_ignores_data_scale_and_map_phase(
        data in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 36),
        maps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 36),
        phases in prop::collection::vec(0.0f64..6.283, 12),
        beta in (0.1f64..10.0, 0.0f64..6.283),
    ) {
        let d = stack(3, &data, Domain::Kspace);
        let m = stack(3, &maps, Domain::Image);
        let r0 = projection_residual(&d, &m).unwrap().value;
        let b = Complex64::from_polar(beta.0, beta.1);
        let scaled = ComplexImageStack::new(vec![4, 3], 3, d.data().iter().map(|x| x * b).collect(), Domain::Kspace).unwrap();
        let mut rotated = m.clone();
        for q in 0..3 {
            for (v, x) in rotated.channel_mut(q).iter_mut().enumerate() {
                *x *= Complex64::from_polar(1.0, phases[v]);
            }
        }
        let r1 = projection_residual(&scaled, &rotated).unwrap().value;
        prop_assert!((r0 - r1).abs() < 1e-12);
        prop_assert!(r0 >= 0.0 && r0 <= 1.0 + 1e-12);
    }
}
