use hybrid_nse::chain::{build_partition, h_jump};
use hybrid_nse::noise::*;
use hybrid_nse::spectral::*;
use hybrid_nse::stability::{exact_thresholds, jump_denominator, thresholds};
use hybrid_nse::GeneratorMatrix;
use num_rational::Ratio;
use proptest::prelude::*;

fn spectrum() -> impl Strategy<Value = StokesSpectrum> {
    prop::collection::vec(0.01f64..5.0, 1..10).prop_map(|gaps| {
        let mut acc = 0.0;
        StokesSpectrum::new(
            gaps.iter()
                .map(|g| {
                    acc += g;
                    acc
                })
                .collect(),
        )
        .unwrap()
    })
}

fn field(n: usize) -> impl Strategy<Value = SpectralField> {
    prop::collection::vec(-3.0f64..3.0, n).prop_map(SpectralField)
}

fn tensor_and_fields() -> impl Strategy<Value = (ConvectionTensor, SpectralField, SpectralField, SpectralField, f64, f64)> {
    (3usize..8).prop_flat_map(|n| {
        let entries = prop::collection::vec((0..n, 0..n, 0..n, -2.0f64..2.0), 1..12).prop_map(move |es| {
            let es: Vec<_> = es.into_iter().filter(|e| e.1 != e.2).collect();
            ConvectionTensor::from_entries(n, &es).unwrap()
        });
        (entries, field(n), field(n), field(n), -2.0f64..2.0, -2.0f64..2.0)
    })
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-10 * scale.max(1.0)
}

proptest! {
    #[test]
    fn poincare_and_stokes_form(spec in spectrum(), seed in prop::collection::vec(-3.0f64..3.0, 10)) {
        let u = SpectralField(seed[..spec.len()].to_vec());
        let v2 = v_norm_sq(&u, &spec).unwrap();
        prop_assert!(v2 >= spec.lambda1() * u.h_norm_sq() * (1.0 - 1e-12));
        let au = apply_stokes(&u, &spec).unwrap();
        prop_assert!(close(au.dot(&u).unwrap(), v2, v2));
    }

    #[test]
    fn convection_structure((t, u, v, w, a, b) in tensor_and_fields()) {
        let scale = 1e3;
        prop_assert!(b_form(&t, &u, &v, &v).unwrap().abs() <= 1e-10 * scale);
        prop_assert!(close(b_form(&t, &u, &v, &w).unwrap(), -b_form(&t, &u, &w, &v).unwrap(), scale));
        // (B(u,u), u) = 0
        let buu = apply_convection(&t, &u, &u).unwrap();
        prop_assert!(buu.dot(&u).unwrap().abs() <= 1e-10 * scale);
        // bilinearity in each slot
        let comb = SpectralField(u.0.iter().zip(&w.0).map(|(x, y)| a * x + b * y).collect());
        let lhs = apply_convection(&t, &comb, &v).unwrap();
        let (bu, bw) = (apply_convection(&t, &u, &v).unwrap(), apply_convection(&t, &w, &v).unwrap());
        for k in 0..lhs.len() {
            prop_assert!(close(lhs[k], a * bu[k] + b * bw[k], scale));
        }
        let lhs = apply_convection(&t, &v, &comb).unwrap();
        let (bu, bw) = (apply_convection(&t, &v, &u).unwrap(), apply_convection(&t, &v, &w).unwrap());
        for k in 0..lhs.len() {
            prop_assert!(close(lhs[k], a * bu[k] + b * bw[k], scale));
        }
        prop_assert!(close(apply_convection(&t, &u, &v).unwrap().dot(&w).unwrap(), b_form(&t, &u, &v, &w).unwrap(), scale));
    }

    #[test]
    fn partition_layout(rates in prop::collection::vec(prop::collection::vec(0.0f64..3.0, 4), 4), m in 1usize..5, ys in prop::collection::vec(0.0f64..40.0, 20)) {
        let off: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| if i == j { 0.0 } else { rates[i][j] }).collect()).collect();
        let g = GeneratorMatrix::from_off_diagonal(off).unwrap();
        let part = build_partition(&g);
        prop_assert_eq!(part.intervals.len(), m * (m - 1));
        for w in part.intervals.windows(2) {
            prop_assert_eq!(w[0].right, w[1].left);
        }
        if let Some(first) = part.intervals.first() {
            prop_assert_eq!(first.left, 0.0);
        }
        let total: f64 = (0..m).map(|i| g.exit_rate(i)).sum();
        prop_assert!(close(part.extent(), total, total));
        for i in 0..m {
            for &y in &ys {
                let d = h_jump(&part, i, y);
                let target = i as i64 + d;
                prop_assert!(target >= 0 && (target as usize) < m);
                let inside = part.source_intervals(i).iter().find(|iv| iv.contains(y));
                match inside {
                    Some(iv) => prop_assert_eq!(target as usize, iv.target),
                    None => prop_assert_eq!(d, 0),
                }
            }
        }
    }

    #[test]
    fn threshold_algebra(p in 2u32..12, nu in 0.01f64..10.0, l1 in 0.01f64..10.0) {
        let ex = exact_thresholds(p).unwrap();
        prop_assert_eq!(ex.jump * Ratio::from_integer(jump_denominator(p)), Ratio::from_integer(p as u64));
        let th = thresholds(p, nu, l1).unwrap();
        let nl = nu * l1;
        prop_assert!(close(th.jump_kmax * th.jump_denominator as f64, p as f64 * nl, nl));
        prop_assert!(th.jump_kmax < th.continuous_kmax);
        // the guaranteed rate vanishes at the threshold
        prop_assert!(th.continuous_rate(th.continuous_kmax).abs() <= 1e-10 * nl.max(1.0) * p as f64);
        if p >= 3 {
            prop_assert!(th.jump_rate(th.jump_kmax).abs() <= 1e-10 * nl.max(1.0) * p as f64);
        }
    }

    #[test]
    fn growth_constant_scaling(amps in prop::collection::vec(0.0f64..2.0, 1..6), c in 0.0f64..3.0, p in 2u32..5) {
        let n = amps.len();
        let q = CovarianceSpectrum::new(vec![0.5; n]).unwrap();
        for kind in [DiffusionKind::LinearDiagonal, DiffusionKind::Additive] {
            let fam = DiffusionFamily::new(kind, vec![amps.clone()], TimeProfile::Constant).unwrap();
            let k = fam.growth_constant(&q, p as f64);
            let ks = fam.scaled(c).growth_constant(&q, p as f64);
            prop_assert!(close(ks, c.powi(p as i32) * k, k));
        }
        let kern = JumpKernel::new(1.0, MarkDistribution::atom(1.0), JumpKind::LinearDiagonal, vec![amps.clone()], TimeProfile::Constant).unwrap();
        let k = kern.growth_constant(2.0).unwrap();
        prop_assert!(close(kern.scaled(c).growth_constant(2.0).unwrap(), c * c * k, k));
    }
}
