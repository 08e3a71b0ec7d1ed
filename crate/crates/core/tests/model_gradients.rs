//! End-to-end gradient and behaviour checks of the encoder-decoder.

mod common;

use common::gradcheck;
use oceantl::model::RcCan;
use oceantl::tensor::Tensor4;

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let (global, (name, worst)) = gradcheck::end_to_end();
    assert!(global < 1e-3, "norm-wise error {global:e}");
    assert!(worst < 1e-3, "{name}: relative error {worst:e}");
}

#[test]
fn different_masks_give_different_outputs() {
    let model = RcCan::<f32>::new(gradcheck::tiny_model()).unwrap();
    let zeros = Tensor4::zeros([1, 1, 12, 14]);
    let ones = Tensor4::full([1, 1, 12, 14], 1.0f32);
    assert_ne!(model.forward(&zeros).unwrap(), model.forward(&ones).unwrap());
}
