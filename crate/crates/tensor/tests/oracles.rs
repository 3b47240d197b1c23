//! Reverse-mode gradients and forward values checked against independent
//! oracles: central differences, direct loops, closed forms.

use picnn_tensor::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rand_param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::parameter((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

/// Fixed pseudo-random weights to make scalar objectives sensitive to
/// every output element.
fn probe(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand_param(&mut rng, shape).detach()
}

fn weighted_sum(y: &Tensor, seed: u64) -> Result<Tensor> {
    Ok(y.mul(&probe(y.shape(), seed))?.sum())
}

fn check(name: &str, f: impl Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor]) {
    let r = gradcheck(f, inputs, H, TOL).unwrap();
    assert!(r.passed(), "{name}: {:?}", r.max_rel_error);
}

#[test]
fn conv2d_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_param(&mut rng, &[1, 2, 5, 5]);
    let w = rand_param(&mut rng, &[3, 2, 3, 3]);
    let b = rand_param(&mut rng, &[3]);
    check(
        "conv2d same",
        |t| weighted_sum(&conv2d(&t[0], &t[1], Some(&t[2]), 1, PaddingSpec::Same)?, 11),
        &[x.clone(), w.clone(), b],
    );
    check(
        "conv2d stride 2",
        |t| weighted_sum(&conv2d(&t[0], &t[1], None, 2, PaddingSpec::Valid)?, 12),
        &[x, w],
    );
    let x = rand_param(&mut rng, &[2, 3, 4, 4]);
    let w = rand_param(&mut rng, &[2, 3, 1, 1]);
    check(
        "conv2d pointwise",
        |t| weighted_sum(&conv2d(&t[0], &t[1], None, 1, PaddingSpec::Valid)?, 13),
        &[x, w],
    );
}

#[test]
fn separable_conv_matches_two_step_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_param(&mut rng, &[2, 3, 6, 5]).detach();
    let dw = rand_param(&mut rng, &[3, 1, 3, 3]).detach();
    let pw = rand_param(&mut rng, &[4, 3, 1, 1]).detach();
    let fused = depthwise_separable_conv2d(&x, &dw, &pw, None, 1, PaddingSpec::Same).unwrap();

    // per-channel conv2d calls then a separate 1x1 conv2d
    let per_channel: Vec<Tensor> = (0..3)
        .map(|c| {
            let xs: Vec<f64> = (0..2)
                .flat_map(|s| x.to_vec()[(s * 3 + c) * 30..(s * 3 + c + 1) * 30].to_vec())
                .collect();
            let xc = Tensor::new(xs, &[2, 1, 6, 5]).unwrap();
            let wc = Tensor::new(dw.to_vec()[c * 9..(c + 1) * 9].to_vec(), &[1, 1, 3, 3]).unwrap();
            conv2d(&xc, &wc, None, 1, PaddingSpec::Same).unwrap()
        })
        .collect();
    let mid = concat(&per_channel, 1).unwrap();
    let two_step = conv2d(&mid, &pw, None, 1, PaddingSpec::Valid).unwrap();
    for (a, b) in fused.to_vec().iter().zip(two_step.to_vec()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn separable_conv_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_param(&mut rng, &[1, 2, 5, 5]);
    let dw = rand_param(&mut rng, &[2, 1, 3, 3]);
    let pw = rand_param(&mut rng, &[3, 2, 1, 1]);
    check(
        "separable",
        |t| {
            weighted_sum(
                &depthwise_separable_conv2d(&t[0], &t[1], &t[2], None, 1, PaddingSpec::Same)?,
                21,
            )
        },
        &[x, dw, pw],
    );
}

#[test]
fn pooling_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_param(&mut rng, &[1, 2, 5, 6]);
    check(
        "avgpool",
        |t| weighted_sum(&avgpool2d(&t[0], 3, 1, PaddingSpec::Same)?, 31),
        &[x.clone()],
    );
    // random values are distinct with overwhelming margin versus h
    check(
        "maxpool",
        |t| weighted_sum(&maxpool2d(&t[0], 2, 2, PaddingSpec::Valid)?, 32),
        &[x],
    );
}

#[test]
fn upsample_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_param(&mut rng, &[1, 2, 3, 4]);
    check(
        "bilinear",
        |t| weighted_sum(&upsample(&t[0], UpsampleMode::Bilinear, 2)?, 41),
        &[x.clone()],
    );
    check(
        "bilinear resize",
        |t| weighted_sum(&resize(&t[0], UpsampleMode::Bilinear, 7, 5)?, 42),
        &[x.clone()],
    );
    check(
        "nearest",
        |t| weighted_sum(&upsample(&t[0], UpsampleMode::Nearest, 3)?, 43),
        &[x],
    );
}

#[test]
fn group_norm_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_param(&mut rng, &[2, 4, 3, 3]);
    let gamma = rand_param(&mut rng, &[4]);
    let beta = rand_param(&mut rng, &[4]);
    check(
        "group_norm",
        |t| weighted_sum(&group_norm(&t[0], 2, &t[1], &t[2], 1e-5)?, 51),
        &[x, gamma, beta],
    );
}

#[test]
fn activation_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_param(&mut rng, &[12]);
    check("gelu", |t| weighted_sum(&t[0].gelu(), 61), &[x.clone()]);
    check("relu", |t| weighted_sum(&t[0].relu(), 62), &[x.clone()]);
    check("tanh", |t| weighted_sum(&t[0].tanh(), 63), &[x.clone()]);
    check("sigmoid", |t| weighted_sum(&t[0].sigmoid(), 64), &[x.clone()]);
    check("exp", |t| weighted_sum(&t[0].exp(), 65), &[x.clone()]);
    check("log_softmax", |t| weighted_sum(&t[0].log_softmax(), 66), &[x.clone()]);
    check("softmax", |t| weighted_sum(&t[0].softmax(), 67), &[x]);
}

#[test]
fn composite_algebra_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = rand_param(&mut rng, &[6]);
    let b = rand_param(&mut rng, &[6]);
    let c = rand_param(&mut rng, &[6]);
    check(
        "(a*b + |c|)^2",
        |t| Ok(t[0].mul(&t[1])?.add(&t[2].abs())?.pow2().sum()),
        &[a.clone(), b.clone(), c.clone()],
    );
    let d = Tensor::parameter(vec![1.5, -2.0, 0.7, 3.0, -1.1, 0.9], &[6]).unwrap();
    check(
        "div/sub/mean/max",
        |t| {
            let q = t[0].div(&t[1])?.sub(&t[2])?;
            Ok(q.mean().add(&q.max_reduce())?)
        },
        &[a, d, c],
    );
    let m1 = rand_param(&mut rng, &[3, 4]);
    let m2 = rand_param(&mut rng, &[4, 2]);
    check("matmul", |t| weighted_sum(&t[0].matmul(&t[1])?, 71), &[m1, m2]);
}

/// erf by its Maclaurin series, independent of the library routine.
fn erf_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = x; // x^(2n+1) (-1)^n / n!
    for n in 0..60 {
        sum += term / (2 * n + 1) as f64;
        term *= -x * x / (n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn gelu_matches_erf_oracle() {
    let y = Tensor::new(vec![1.0], &[1]).unwrap().gelu().item();
    let phi = 0.5 * (1.0 + erf_series(1.0 / std::f64::consts::SQRT_2));
    assert!((y - phi).abs() < 1e-12, "{y} vs {phi}");
}

#[test]
fn sum_of_conv_gives_window_sums_as_weight_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_param(&mut rng, &[1, 2, 5, 4]).detach();
    let w = rand_param(&mut rng, &[3, 2, 3, 3]);
    conv2d(&x, &w, None, 1, PaddingSpec::Same).unwrap().sum().backward().unwrap();
    let g = w.grad().unwrap();
    let xv = x.to_vec();
    for co in 0..3 {
        for ci in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut expect = 0.0;
                    for oy in 0..5i64 {
                        for ox in 0..4i64 {
                            let (y, xx) = (oy + i as i64 - 1, ox + j as i64 - 1);
                            if (0..5).contains(&y) && (0..4).contains(&xx) {
                                expect += xv[ci * 20 + y as usize * 4 + xx as usize];
                            }
                        }
                    }
                    let got = g[((co * 2 + ci) * 3 + i) * 3 + j];
                    assert!((got - expect).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn square_then_backward_twice_accumulates() {
    let x = Tensor::parameter(vec![3.0], &[1]).unwrap();
    x.pow2().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![6.0]);
    x.pow2().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![12.0]);
    x.zero_grad();
    assert!(x.grad().is_none());
}

#[test]
fn backward_visits_shared_nodes_once() {
    // diamond: a -> b, a -> c, (b, c) -> d -> e
    let a = Tensor::parameter(vec![2.0], &[1]).unwrap();
    let b = a.mul_scalar(3.0);
    let c = a.pow2();
    let d = b.add(&c).unwrap();
    let e = d.mul(&d).unwrap().sum();
    let stats = e.backward().unwrap();
    assert_eq!(stats.nodes_visited, 6);
    assert_eq!(stats.leaves_updated, 1);
    // e = (3a + a^2)^2, de/da = 2(3a + a^2)(3 + 2a) = 2*10*7
    assert_eq!(a.grad().unwrap(), vec![140.0]);
}

proptest! {
    #[test]
    fn conv2d_is_linear_in_input(
        seed in 0u64..1000,
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_param(&mut rng, &[1, 2, 6, 6]).detach();
        let y = rand_param(&mut rng, &[1, 2, 6, 6]).detach();
        let w = rand_param(&mut rng, &[2, 2, 3, 3]).detach();
        let lhs = conv2d(&x.mul_scalar(alpha).add(&y.mul_scalar(beta)).unwrap(), &w, None, 1, PaddingSpec::Same).unwrap();
        let cx = conv2d(&x, &w, None, 1, PaddingSpec::Same).unwrap();
        let cy = conv2d(&y, &w, None, 1, PaddingSpec::Same).unwrap();
        let rhs = cx.mul_scalar(alpha).add(&cy.mul_scalar(beta)).unwrap();
        for (p, q) in lhs.to_vec().iter().zip(rhs.to_vec()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_file_round_trip_is_bit_exact(
        dims in proptest::collection::vec(1usize..5, 0..4),
        seed in any::<u64>(),
    ) {
        let n: usize = dims.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n).map(|_| f64::from_bits(rng.random::<u64>() >> 2)).collect();
        let t = io::TensorData::new(dims.clone(), data).unwrap();
        let mut buf = Vec::new();
        io::write_tensor(&mut buf, &t, io::Dtype::F64).unwrap();
        let (back, dtype) = io::read_tensor(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(dtype, io::Dtype::F64);
        prop_assert_eq!(back.shape, t.shape);
        let same = back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }
}
