use carnot_web::demo::*;

#[test]
fn gauge_pair_is_left_invariant_and_homogeneous() {
    let [d, gamma] = gauge_pair(&[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
    assert!((d - 1.0).abs() < 1e-15 && (gamma - 1.0).abs() < 1e-15);
    // purely vertical: d = (16 t^2)^{1/4} = 2 sqrt(t)
    let [dv, _] = gauge_pair(&[0.0; 3], &[0.0, 0.0, 0.25]).unwrap();
    assert!((dv - 1.0).abs() < 1e-15);
    // p^{-1} q for p = (1, 0, 0), q = (1, 1, 1/2) is (0, 1, 1/2 - 1/2) = (0, 1, 0)
    let [ds, _] = gauge_pair(&[1.0, 0.0, 0.0], &[1.0, 1.0, 0.5]).unwrap();
    assert!((ds - 1.0).abs() < 1e-12, "{ds}");
    assert!(gauge_pair(&[0.0; 3], &[0.0; 3]).unwrap()[1].is_infinite());
    assert!(gauge_pair(&[0.0; 2], &[0.0; 3]).is_err());
}

#[test]
fn slice_of_one_atom_matches_the_kernel() {
    let n = 5;
    let v = potential_slice(&[0.0, 0.0, 0.0, 2.0], 0.5, 1.0, n).unwrap();
    assert_eq!(v.len(), n * n);
    // grid point (x, y) = (1, -1) at t = 1/2
    let want = 2.0 / (2.0f64.powi(2) + 16.0 * 0.25).sqrt();
    assert!((v[n - 1] - want).abs() < 1e-12, "{} vs {want}", v[n - 1]);
    // symmetric under (x, y) -> (-x, -y)
    for k in 0..n * n {
        assert!((v[k] - v[n * n - 1 - k]).abs() < 1e-12);
    }
    assert!(potential_slice(&[0.0, 0.0, 0.0, 1.0], 0.0, 1.0, 3).unwrap()[4].is_infinite());
    assert!(potential_slice(&[0.0, 0.0, 0.0], 0.0, 1.0, 3).is_err());
    assert!(potential_slice(&[0.0, 0.0, 0.0, 1.0], 0.0, 1.0, 1).is_err());
}

#[test]
fn cantor_dimension_is_near_the_similarity_dimension() {
    let [moran, slope, ci] = cantor_dimension(1.0 / 3.0, 100_000, 5).unwrap();
    assert!((moran - 2f64.ln() / 3f64.ln()).abs() < 1e-12);
    assert!((slope - moran).abs() < 0.05, "{slope} +- {ci}");
    assert!(cantor_dimension(0.6, 100_000, 5).is_err());
    assert!(cantor_dimension(0.3, 10, 5).is_err());
}
