use copsel::Scalar;

#[test]
fn round_half_even_ties() {
    assert_eq!(0.5f64.round_half_even(), 0.0);
    assert_eq!(1.5f64.round_half_even(), 2.0);
    assert_eq!(2.5f64.round_half_even(), 2.0);
    assert_eq!((-0.5f64).round_half_even(), 0.0);
    assert_eq!(0.7f64.round_half_even(), 1.0);
    assert_eq!(0.49f32.round_half_even(), 0.0);
}

#[test]
fn erfc_agrees_between_precisions() {
    for x in [-2.0f64, -0.5, 0.0, 0.3, 1.7] {
        assert!((Scalar::erfc(x as f32) as f64 - Scalar::erfc(x)).abs() < 1e-6);
    }
    assert_eq!(Scalar::erfc(0.0f64), 1.0);
}
