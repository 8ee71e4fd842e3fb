mod common;

use common::*;
use pmiris::rng::Stream;

#[test]
fn every_kernel_matches_finite_differences() {
    for r in gradient_suite(2024, 20) {
        assert!(
            r.passed(),
            "{}: worst relative error {:.3e} over {} instances",
            r.op,
            r.worst_rel_err,
            r.instances
        );
    }
}

#[test]
fn conv_forward_matches_reference() {
    let mut s = Stream::new(5);
    let dims = [2, 3, 5, 7];
    let x: Vec<f64> = random_vec(&mut s, 2 * 3 * 35, 1.0).iter().map(|&v| v as f32 as f64).collect();
    let k: Vec<f64> = random_vec(&mut s, 4 * 3 * 9, 1.0).iter().map(|&v| v as f32 as f64).collect();
    let b: Vec<f64> = random_vec(&mut s, 4, 1.0).iter().map(|&v| v as f32 as f64).collect();
    let y = pmiris::tensor::conv2d(
        &pmiris::tensor::Tensor::new(&dims, to_f32(&x)).unwrap(),
        &pmiris::tensor::Tensor::new(&[4, 3, 3, 3], to_f32(&k)).unwrap(),
        &pmiris::tensor::Tensor::new(&[4], to_f32(&b)).unwrap(),
    )
    .unwrap();
    assert_eq!(y.shape(), &[2, 4, 5, 7]);
    assert!(rel_err(&to_f64(y.data()), &conv_ref(&x, dims, &k, 4, 3, &b)) < 1e-6);
}
