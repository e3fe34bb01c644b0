//! Central finite-difference oracle for the reverse-mode gradients.
//!
//! The oracle only ever calls the forward pass, so it stays independent of
//! the backward implementation it checks. Double precision is required for
//! the difference quotients, hence the feature gate.
#![cfg(not(feature = "f32"))]

use fpsim_core::nn::{backward, forward, Layer, Network, Reduction, Tensor};
use fpsim_core::nn::{GradResult, ParamSet};
use fpsim_core::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: Real = 1e-5;
const REL_TOL: Real = 1e-4;
/// Grad magnitudes below this are compared absolutely; central differences
/// bottom out around 1e-11 for unit-scale losses.
const REL_FLOOR: Real = 1e-6;

fn loss_at(net: &Network, params: &ParamSet, input: &Tensor, labels: &[usize]) -> Real {
    forward(net, params, input)
        .unwrap()
        .loss(labels, Reduction::Mean)
        .unwrap()
}

fn fd_param(
    net: &Network,
    params: &ParamSet,
    input: &Tensor,
    labels: &[usize],
    name: &str,
    flat: usize,
) -> Real {
    let mut p = params.clone();
    p.get_mut(name).unwrap().data_mut()[flat] += FD_STEP;
    let up = loss_at(net, &p, input, labels);
    p.get_mut(name).unwrap().data_mut()[flat] -= 2.0 * FD_STEP;
    let down = loss_at(net, &p, input, labels);
    (up - down) / (2.0 * FD_STEP)
}

fn fd_input(
    net: &Network,
    params: &ParamSet,
    input: &Tensor,
    labels: &[usize],
    flat: usize,
) -> Real {
    let mut x = input.clone();
    x.data_mut()[flat] += FD_STEP;
    let up = loss_at(net, params, &x, labels);
    x.data_mut()[flat] -= 2.0 * FD_STEP;
    let down = loss_at(net, params, &x, labels);
    (up - down) / (2.0 * FD_STEP)
}

fn assert_close(analytic: Real, fd: Real, what: &str) {
    let denom = analytic.abs().max(fd.abs()).max(REL_FLOOR);
    let rel = (analytic - fd).abs() / denom;
    assert!(
        rel <= REL_TOL,
        "{what}: analytic {analytic} vs finite-difference {fd} (relative {rel:.3e})"
    );
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: Real) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn check_all_params(
    net: &Network,
    params: &ParamSet,
    input: &Tensor,
    labels: &[usize],
    grad: &GradResult,
) {
    for (name, tensor) in grad.param_grads.iter() {
        for flat in 0..tensor.numel() {
            let fd = fd_param(net, params, input, labels, name, flat);
            assert_close(tensor.data()[flat], fd, &format!("{name}[{flat}]"));
        }
    }
}

#[test]
fn single_dense_layer_matches_finite_differences_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let net = Network {
        layers: vec![Layer::Dense {
            weight: "w".into(),
            bias: "b".into(),
        }],
    };
    let mut params = ParamSet::new();
    params.insert("w", random_tensor(&mut rng, &[3, 5], 0.8)).unwrap();
    params.insert("b", random_tensor(&mut rng, &[3], 0.8)).unwrap();
    let input = random_tensor(&mut rng, &[2, 5], 1.0);
    let labels = [2usize, 0];

    let trace = forward(&net, &params, &input).unwrap();
    let grad = backward(&net, &params, &trace, &labels, Reduction::Mean).unwrap();

    check_all_params(&net, &params, &input, &labels, &grad);
    for flat in 0..input.numel() {
        let fd = fd_input(&net, &params, &input, &labels, flat);
        assert_close(grad.input_grad.data()[flat], fd, &format!("input[{flat}]"));
    }
}

#[test]
fn random_small_conv_networks_match_finite_differences() {
    // A couple of random shallow stacks exercising conv, relu, flatten, dense.
    for seed in [7u64, 8] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network {
            layers: vec![
                Layer::Conv2d {
                    kernel: "c1k".into(),
                    bias: "c1b".into(),
                },
                Layer::Relu,
                Layer::Conv2d {
                    kernel: "c2k".into(),
                    bias: "c2b".into(),
                },
                Layer::Relu,
                Layer::Flatten,
                Layer::Dense {
                    weight: "dw".into(),
                    bias: "db".into(),
                },
            ],
        };
        let mut params = ParamSet::new();
        params.insert("c1k", random_tensor(&mut rng, &[3, 1, 1, 3], 0.6)).unwrap();
        params.insert("c1b", random_tensor(&mut rng, &[3], 0.3)).unwrap();
        params.insert("c2k", random_tensor(&mut rng, &[4, 3, 2, 3], 0.6)).unwrap();
        params.insert("c2b", random_tensor(&mut rng, &[4], 0.3)).unwrap();
        // input [B,1,2,10] -> conv1 [3,2,8] -> conv2 [4,1,6] -> 24 features
        params.insert("dw", random_tensor(&mut rng, &[3, 24], 0.6)).unwrap();
        params.insert("db", random_tensor(&mut rng, &[3], 0.3)).unwrap();

        let input = random_tensor(&mut rng, &[2, 1, 2, 10], 1.0);
        let labels = [1usize, 2];

        let trace = forward(&net, &params, &input).unwrap();
        let grad = backward(&net, &params, &trace, &labels, Reduction::Mean).unwrap();

        check_all_params(&net, &params, &input, &labels, &grad);
        for flat in 0..input.numel() {
            let fd = fd_input(&net, &params, &input, &labels, flat);
            assert_close(grad.input_grad.data()[flat], fd, &format!("input[{flat}]"));
        }
    }
}
