use strgate_tensor::{Graph, Tensor};

fn pseudo_random(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed ^ 0x9e37_79b9_7f4a_7c15;
    Tensor::from_fn(shape.to_vec(), |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s % 2001) as f64 / 1000.0 - 1.0
    })
}

fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, kh, kw) = w.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at4(bi, ci, iy as usize, ix as usize) * w.at4(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                    out.data_mut()[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Scatter form: every input pixel spreads `w[ci, co]` onto the output.
fn naive_conv_transpose(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (_, cout, kh, kw) = w.dims4().unwrap();
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (wd - 1) * stride + kw - 2 * pad;
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    for bi in 0..n {
        for co in 0..cout {
            for y in 0..oh {
                for xx in 0..ow {
                    out.data_mut()[((bi * cout + co) * oh + y) * ow + xx] = b.data()[co];
                }
            }
            for ci in 0..cin {
                for iy in 0..h {
                    for ix in 0..wd {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (iy * stride + ky) as isize - pad as isize;
                                let xx = (ix * stride + kx) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < oh && (xx as usize) < ow {
                                    out.data_mut()[((bi * cout + co) * oh + y as usize) * ow + xx as usize] +=
                                        x.at4(bi, ci, iy, ix) * w.at4(ci, co, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_loops() {
    for (k, s, p) in [(4, 2, 1), (3, 1, 1), (7, 1, 3), (1, 1, 0)] {
        let x = pseudo_random(&[2, 3, 8, 6], 1);
        let w = pseudo_random(&[5, 3, k, k], 2);
        let b = pseudo_random(&[5], 3);
        let g = Graph::new();
        let y = g
            .constant(x.clone())
            .conv2d(&g.constant(w.clone()), Some(&g.constant(b.clone())), s, p)
            .unwrap();
        let want = naive_conv(&x, &w, &b, s, p);
        assert!(y.value().max_abs_diff(&want).unwrap() < 1e-12, "k={k} s={s} p={p}");
    }
}

#[test]
fn conv_transpose2d_matches_scatter_loops() {
    let x = pseudo_random(&[2, 3, 4, 5], 4);
    let w = pseudo_random(&[3, 2, 4, 4], 5);
    let b = pseudo_random(&[2], 6);
    let g = Graph::new();
    let y = g
        .constant(x.clone())
        .conv_transpose2d(&g.constant(w.clone()), Some(&g.constant(b.clone())), 2, 1)
        .unwrap();
    assert_eq!(y.shape(), vec![2, 2, 8, 10]);
    let want = naive_conv_transpose(&x, &w, &b, 2, 1);
    assert!(y.value().max_abs_diff(&want).unwrap() < 1e-12);
}

#[test]
fn instance_norm_output_is_standardized() {
    let x = pseudo_random(&[1, 2, 5, 5], 7);
    let g = Graph::new();
    let y = g
        .constant(x)
        .instance_norm(&g.constant(Tensor::ones([2])), &g.constant(Tensor::zeros([2])), 0.0)
        .unwrap()
        .value();
    for c in 0..2 {
        let plane = &y.data()[c * 25..(c + 1) * 25];
        let mean: f64 = plane.iter().sum::<f64>() / 25.0;
        let var: f64 = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 25.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn gram_is_feature_inner_products() {
    let x = Tensor::new([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let g = Graph::new();
    let gram = g.constant(x).gram().unwrap().value();
    // rows (1,2) and (3,4); scaled by 1/(C·H·W) = 1/4
    assert_eq!(gram.data(), &[5.0 / 4.0, 11.0 / 4.0, 11.0 / 4.0, 25.0 / 4.0]);
}
