use strgate_tensor::gradcheck::{numerical_gradient, relative_error};
use strgate_tensor::{Graph, Tensor, Var};

fn pseudo_random(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape.to_vec(), |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// Checks d(loss)/d(input k) for every input against central differences.
fn check(inputs: &[Tensor], build: impl for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>) {
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&g, &vars);
    let grads = g.backward(loss).unwrap();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(&vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        let numeric = numerical_gradient(
            |probe| {
                let g = Graph::new();
                let vars: Vec<_> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| g.param(if j == k { probe.clone() } else { t.clone() }))
                    .collect();
                build(&g, &vars).item().unwrap()
            },
            input,
            1e-6,
        );
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-6, "input {k}: relative error {err}");
    }
}

/// Projects onto fixed random weights so every output element matters.
fn project<'g>(g: &'g Graph, y: Var<'g>, seed: u64) -> Var<'g> {
    let w = g.constant(pseudo_random(&y.shape(), seed));
    y.mul(&w).unwrap().sum()
}

#[test]
fn conv2d_strided_padded() {
    let x = pseudo_random(&[2, 3, 7, 6], 1);
    let w = pseudo_random(&[4, 3, 4, 4], 2);
    let b = pseudo_random(&[4], 3);
    check(&[x, w, b], |g, v| project(g, v[0].conv2d(&v[1], Some(&v[2]), 2, 1).unwrap(), 9));
}

#[test]
fn conv2d_pointwise_and_seven_by_seven() {
    let x = pseudo_random(&[1, 3, 5, 5], 4);
    let w1 = pseudo_random(&[2, 3, 1, 1], 5);
    let w7 = pseudo_random(&[1, 2, 7, 7], 6);
    check(&[x, w1, w7], |g, v| {
        let y = v[0].conv2d(&v[1], None, 1, 0).unwrap();
        project(g, y.conv2d(&v[2], None, 1, 3).unwrap(), 10)
    });
}

#[test]
fn conv_transpose2d() {
    let x = pseudo_random(&[2, 3, 3, 4], 7);
    let w = pseudo_random(&[3, 2, 4, 4], 8);
    let b = pseudo_random(&[2], 9);
    check(&[x, w, b], |g, v| {
        let y = v[0].conv_transpose2d(&v[1], Some(&v[2]), 2, 1).unwrap();
        assert_eq!(y.shape(), vec![2, 2, 6, 8]);
        project(g, y, 11)
    });
}

#[test]
fn instance_norm() {
    let x = pseudo_random(&[2, 3, 4, 4], 12);
    let gamma = pseudo_random(&[3], 13);
    let beta = pseudo_random(&[3], 14);
    check(&[x, gamma, beta], |g, v| project(g, v[0].instance_norm(&v[1], &v[2], 1e-5).unwrap(), 15));
}

#[test]
fn pooling_and_channel_reductions() {
    let x = pseudo_random(&[2, 3, 4, 6], 16);
    check(&[x.clone()], |g, v| project(g, v[0].max_pool2().unwrap(), 17));
    check(&[x.clone()], |g, v| project(g, v[0].avg_pool2().unwrap(), 18));
    check(&[x.clone()], |g, v| project(g, v[0].channel_max().unwrap(), 19));
    check(&[x], |g, v| project(g, v[0].channel_mean().unwrap(), 20));
}

#[test]
fn gram_concat_and_broadcast() {
    let x = pseudo_random(&[2, 3, 3, 2], 21);
    let m = pseudo_random(&[2, 1, 3, 2], 22);
    let s = pseudo_random(&[1], 23);
    check(&[x, m, s], |g, v| {
        let cat = g.concat_channels(&[v[0], v[1]]).unwrap();
        let scaled = cat.mul_scalar_var(&v[2]).unwrap();
        let gated = v[0].mul_broadcast(&v[1]).unwrap();
        project(g, scaled.gram().unwrap(), 24).add(&project(g, gated, 25)).unwrap()
    });
}

#[test]
fn elementwise_chain() {
    let x = pseudo_random(&[3, 4], 26);
    let y = pseudo_random(&[3, 4], 27);
    check(&[x, y], |_, v| {
        let a = v[0].sigmoid().clamp(0.3, 0.7).ln();
        let b = v[1].tanh().sub(&v[0]).unwrap().abs().scale(0.5).add_scalar(1.0);
        let c = v[0].leaky_relu(0.2).mul(&v[1].relu()).unwrap().square();
        a.add(&b).unwrap().add(&c).unwrap().mean()
    });
}

#[test]
fn constants_receive_no_gradient() {
    let g = Graph::new();
    let x = g.param(Tensor::ones([2]));
    let c = g.constant(Tensor::ones([2]));
    let loss = x.mul(&c).unwrap().sum();
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(&c).is_none());
    assert_eq!(grads.get(&x).unwrap().data(), &[1.0, 1.0]);
}
