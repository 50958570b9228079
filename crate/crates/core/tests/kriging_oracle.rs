use gsuq::kriging::{collocated_cokrige, simple_krige, Secondary};
use gsuq::variogram::{VariogramKind, VariogramModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn cov(m: &VariogramModel, a: [f64; 3], b: [f64; 3]) -> f64 {
    let h = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    if h == [0.0; 3] {
        return m.sill + m.nugget;
    }
    let t = m.azimuth_deg.to_radians();
    let u = (h[0] * t.cos() + h[1] * t.sin()) / m.a1;
    let v = (-h[0] * t.sin() + h[1] * t.cos()) / m.a2;
    let d = (u * u + v * v + (h[2] / m.a3).powi(2)).sqrt();
    m.sill * if d >= 1.0 { 0.0 } else { 1.0 - 1.5 * d + 0.5 * d.powi(3) }
}

fn points() -> impl Strategy<Value = Vec<[f64; 3]>> {
    proptest::collection::vec([0.0f64..60.0, 0.0f64..60.0, 0.0f64..20.0], 1..8).prop_filter("separated", |p| {
        let x0 = [30.0, 30.0, 10.0];
        let far = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>() > 4.0;
        p.iter().all(|a| far(a, &x0)) && p.iter().enumerate().all(|(i, a)| p[i + 1..].iter().all(|b| far(a, b)))
    })
}

proptest! {
    #[test]
    fn simple_kriging_matches_dense_solve(
        pts in points(),
        a1 in 20.0f64..80.0,
        ratio in 0.3f64..1.0,
        az in 0.0f64..180.0,
        nugget in 0.0f64..0.5,
        mean in -2.0f64..2.0,
    ) {
        let m = VariogramModel::new(VariogramKind::Spherical, a1, a1 * ratio, 8.0, az, 2.0, nugget).unwrap();
        let x0 = [30.0, 30.0, 10.0];
        let data: Vec<([f64; 3], f64)> = pts.iter().enumerate().map(|(i, p)| (*p, (i as f64 * 0.7).sin() * 2.0)).collect();
        let n = data.len();
        let a = DMatrix::from_fn(n, n, |i, j| cov(&m, data[i].0, data[j].0));
        let b = DVector::from_fn(n, |i, _| cov(&m, data[i].0, x0));
        let w = a.lu().solve(&b).unwrap();
        let est = mean + (0..n).map(|i| w[i] * (data[i].1 - mean)).sum::<f64>();
        let var = m.sill + m.nugget - w.dot(&b);
        let r = simple_krige(x0, &data, mean, &m).unwrap();
        prop_assert!((r.mean - est).abs() < 1e-9);
        prop_assert!((r.variance - var).abs() < 1e-9);
    }

    #[test]
    fn collocated_variance_never_exceeds_simple(
        pts in points(),
        cc in -0.9f64..0.9,
        y in -3.0f64..3.0,
    ) {
        let m = VariogramModel::spherical(50.0, 8.0, 1.5).unwrap();
        let x0 = [30.0, 30.0, 10.0];
        let data: Vec<([f64; 3], f64)> = pts.iter().map(|p| (*p, p[0] / 30.0 - 1.0)).collect();
        let sec = Secondary { value: y, mean: 0.0, variance: 1.0, cc };
        let sk = simple_krige(x0, &data, 0.0, &m).unwrap();
        let ck = collocated_cokrige(x0, &data, &sec, 0.0, &m).unwrap();
        prop_assert!(ck.variance <= sk.variance + 1e-12);
    }
}
