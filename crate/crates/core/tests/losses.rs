mod common;

use common::{binary, naive_extractor, naive_gram, rng, uniform};
use proptest::prelude::*;
use strgate_core::ga::GaVars;
use strgate_core::losses::{
    attention_loss, composite, composite_tensor, discriminator_loss, full_image_l1_loss,
    generator_adversarial_loss, perceptual_loss, roi_regression_loss, style_loss,
    total_generator_loss, total_variation_loss, AttentionLossMode, LevelTargets, LossComponents,
    LossValues, LossWeights,
};
use strgate_core::perceptual::PerceptualExtractor;
use strgate_tensor::gradcheck::{numerical_gradient, relative_error};
use strgate_tensor::{Graph, Tensor, Var};

const SCALES: [f64; 3] = [0.6, 0.8, 1.0];

/// Compares the analytic gradient of `f` w.r.t. `x` with central differences.
fn check_grad(x: &Tensor, f: impl for<'g> Fn(&'g Graph, Var<'g>) -> Var<'g>) {
    let g = Graph::new();
    let v = g.param(x.clone());
    let grads = g.backward(f(&g, v)).unwrap();
    let analytic = grads.get(&v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let numeric = numerical_gradient(
        |probe| {
            let g = Graph::new();
            f(&g, g.constant(probe.clone())).item().unwrap()
        },
        x,
        1e-6,
    );
    let err = relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "relative error {err}");
}

fn pyramid_outputs<'g>(full: Var<'g>) -> [Var<'g>; 3] {
    let half = full.avg_pool2().unwrap();
    [half.avg_pool2().unwrap(), half, full]
}

#[test]
fn composite_examples() {
    let mut r = rng(1);
    let input = uniform(&mut r, &[2, 3, 4, 5], -1.0, 1.0);
    let output = uniform(&mut r, &[2, 3, 4, 5], -1.0, 1.0);
    let zeros = Tensor::zeros([2, 1, 4, 5]);
    let ones = Tensor::ones([2, 1, 4, 5]);
    assert_eq!(composite_tensor(&input, &output, &zeros).unwrap(), input);
    assert_eq!(composite_tensor(&input, &output, &ones).unwrap(), output);
    let m = binary(&mut r, &[2, 1, 4, 5], 0.5);
    let c = composite_tensor(&input, &output, &m).unwrap();
    for n in 0..2 {
        for ch in 0..3 {
            for y in 0..4 {
                for x in 0..5 {
                    let mv = m.at4(n, 0, y, x);
                    let want = input.at4(n, ch, y, x) * (1.0 - mv) + output.at4(n, ch, y, x) * mv;
                    assert_eq!(c.at4(n, ch, y, x), want);
                }
            }
        }
    }
    assert!(composite_tensor(&input, &output, &Tensor::zeros([2, 1, 4, 4])).is_err());
}

#[test]
fn roi_regression_examples() {
    let g = Graph::new();
    let mut r = rng(2);
    let gt = uniform(&mut r, &[1, 3, 8, 8], -1.0, 1.0);
    let box_mask = binary(&mut r, &[1, 1, 8, 8], 0.5);
    let same = pyramid_outputs(g.constant(gt.clone()));
    assert_eq!(roi_regression_loss(&same, &gt, &box_mask, &SCALES).unwrap().item().unwrap(), 0.0);

    let other = pyramid_outputs(g.constant(uniform(&mut r, &[1, 3, 8, 8], -1.0, 1.0)));
    let empty = Tensor::zeros([1, 1, 8, 8]);
    assert_eq!(roi_regression_loss(&other, &gt, &empty, &SCALES).unwrap().item().unwrap(), 0.0);

    // 1×1 images with |diff| = d at every scale give (0.6 + 0.8 + 1.0)·d
    let d = 0.37;
    let gt1 = Tensor::full([1, 3, 1, 1], 0.1);
    let out = g.constant(Tensor::full([1, 3, 1, 1], 0.1 - d));
    let v = roi_regression_loss(&[out, out, out], &gt1, &Tensor::ones([1, 1, 1, 1]), &SCALES)
        .unwrap()
        .item()
        .unwrap();
    assert!((v - 2.4 * d).abs() < 1e-7, "{v}");
}

#[test]
fn roi_regression_is_a_masked_mean_at_each_scale() {
    let g = Graph::new();
    let mut r = rng(3);
    let gt = uniform(&mut r, &[2, 3, 8, 8], -1.0, 1.0);
    let mask = binary(&mut r, &[2, 1, 8, 8], 0.3);
    let outs: Vec<Tensor> = [2, 4, 8].iter().map(|&s| uniform(&mut r, &[2, 3, s, s], -1.0, 1.0)).collect();
    let vars: Vec<Var> = outs.iter().map(|t| g.constant(t.clone())).collect();
    let got = roi_regression_loss(&vars, &gt, &mask, &SCALES).unwrap().item().unwrap();
    // oracle: block-average gt, block-max mask, explicit masked mean
    let mut want = 0.0;
    for (out, &lambda) in outs.iter().zip(&SCALES) {
        let s = out.shape()[2];
        let f = 8 / s;
        let (mut sum, mut count) = (0.0, 0.0);
        for n in 0..2 {
            for y in 0..s {
                for x in 0..s {
                    let mut m: f64 = 0.0;
                    for dy in 0..f {
                        for dx in 0..f {
                            m = m.max(mask.at4(n, 0, y * f + dy, x * f + dx));
                        }
                    }
                    if m == 0.0 {
                        continue;
                    }
                    for c in 0..3 {
                        let mut avg = 0.0;
                        for dy in 0..f {
                            for dx in 0..f {
                                avg += gt.at4(n, c, y * f + dy, x * f + dx);
                            }
                        }
                        avg /= (f * f) as f64;
                        sum += (out.at4(n, c, y, x) - avg).abs();
                        count += 1.0;
                    }
                }
            }
        }
        want += lambda * sum / (count + 1e-8);
    }
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn perceptual_matches_independent_extractor() {
    let ext = PerceptualExtractor::fixed_random(7);
    let mut r = rng(4);
    let gt = uniform(&mut r, &[1, 3, 16, 16], -1.0, 1.0);
    let a = uniform(&mut r, &[1, 3, 16, 16], -1.0, 1.0);
    let b = uniform(&mut r, &[1, 3, 16, 16], -1.0, 1.0);
    let g = Graph::new();
    let got = perceptual_loss(&ext, &[g.constant(a.clone()), g.constant(b.clone())], &gt)
        .unwrap()
        .item()
        .unwrap();
    let fg = naive_extractor(&gt, ext.stage_weights());
    let mut want = 0.0;
    for img in [&a, &b] {
        for (fa, fb) in naive_extractor(img, ext.stage_weights()).iter().zip(&fg) {
            want += fa.zip_map(fb, |x, y| (x - y).abs()).unwrap().mean();
        }
    }
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    let gtv = g.constant(gt.clone());
    assert_eq!(perceptual_loss(&ext, &[gtv, gtv], &gt).unwrap().item().unwrap(), 0.0);
}

#[test]
fn perceptual_vanishes_when_composites_collapse_to_gt() {
    let ext = PerceptualExtractor::default();
    let mut r = rng(5);
    let gt = uniform(&mut r, &[1, 3, 8, 8], -1.0, 1.0);
    let g = Graph::new();
    let out = g.constant(uniform(&mut r, &[1, 3, 8, 8], -1.0, 1.0));
    let comp = composite(&gt, &out, &Tensor::zeros([1, 1, 8, 8])).unwrap();
    assert_eq!(perceptual_loss(&ext, &[comp], &gt).unwrap().item().unwrap(), 0.0);
    assert_eq!(style_loss(&ext, &[comp], &gt).unwrap().item().unwrap(), 0.0);
}

#[test]
fn style_matches_independent_gram() {
    let ext = PerceptualExtractor::fixed_random(8);
    let mut r = rng(6);
    let gt = uniform(&mut r, &[2, 3, 16, 16], -1.0, 1.0);
    let a = uniform(&mut r, &[2, 3, 16, 16], -1.0, 1.0);
    let g = Graph::new();
    let got = style_loss(&ext, &[g.constant(a.clone())], &gt).unwrap().item().unwrap();
    let mut want = 0.0;
    for (fa, fb) in naive_extractor(&a, ext.stage_weights())
        .iter()
        .zip(&naive_extractor(&gt, ext.stage_weights()))
    {
        want += naive_gram(fa).zip_map(&naive_gram(fb), |x, y| (x - y).abs()).unwrap().mean();
    }
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn gram_of_two_channel_two_by_two_features() {
    // A = [[1, 2, 3, 4], [0, 1, 0, -1]] → A Aᵀ = [[30, -2], [-2, 2]], / (2·2·2)
    // B = [[1, 1, 1, 1], [1, 0, 0, 1]] → B Bᵀ = [[4, 2], [2, 2]], / 8
    let g = Graph::new();
    let a = g.constant(Tensor::new([1, 2, 2, 2], vec![1., 2., 3., 4., 0., 1., 0., -1.]).unwrap());
    let b = g.constant(Tensor::new([1, 2, 2, 2], vec![1., 1., 1., 1., 1., 0., 0., 1.]).unwrap());
    let ga = a.gram().unwrap().value();
    assert_eq!(ga.data(), &[30.0 / 8.0, -2.0 / 8.0, -2.0 / 8.0, 2.0 / 8.0]);
    let diff = a.gram().unwrap().sub(&b.gram().unwrap()).unwrap().abs().mean().item().unwrap();
    // |26| + |−4| + |−4| + |0| = 34, / 8 / 4 entries
    assert!((diff - 34.0 / 32.0).abs() < 1e-15);
}

#[test]
fn total_variation_examples() {
    let g = Graph::new();
    let c = g.constant(Tensor::full([1, 3, 5, 6], 0.3));
    assert_eq!(total_variation_loss(&c).unwrap().item().unwrap(), 0.0);

    // step of height h between columns 2 and 3 of a W = 6 image: h / (W − 1)
    let (hgt, w) = (0.8, 6);
    let step = Tensor::from_fn([1, 3, 5, w], |i| if i % w >= 3 { hgt } else { 0.0 });
    let v = total_variation_loss(&g.constant(step)).unwrap().item().unwrap();
    assert!((v - hgt / (w as f64 - 1.0)).abs() < 1e-15);

    let mut r = rng(7);
    let t = uniform(&mut r, &[2, 3, 4, 5], -1.0, 1.0);
    let (mut sx, mut sy) = (0.0, 0.0);
    for n in 0..2 {
        for ch in 0..3 {
            for y in 0..4 {
                for x in 0..5 {
                    if x + 1 < 5 {
                        sx += (t.at4(n, ch, y, x + 1) - t.at4(n, ch, y, x)).abs();
                    }
                    if y + 1 < 4 {
                        sy += (t.at4(n, ch, y + 1, x) - t.at4(n, ch, y, x)).abs();
                    }
                }
            }
        }
    }
    let want = sx / (2 * 3 * 4 * 4) as f64 + sy / (2 * 3 * 3 * 5) as f64;
    let got = total_variation_loss(&g.constant(t)).unwrap().item().unwrap();
    assert!((got - want).abs() < 1e-12);
}

fn level(box_mask: Tensor, stroke: Tensor) -> LevelTargets {
    let surround = box_mask.zip_map(&stroke, |b, s| b * (1.0 - s)).unwrap();
    LevelTargets {
        box_mask,
        stroke,
        surround,
    }
}

fn ga_with_scores<'g>(g: &'g Graph, st: Var<'g>, ss: Var<'g>) -> GaVars<'g> {
    let dummy = g.constant(Tensor::zeros(st.shape()));
    GaVars {
        features_out: dummy,
        attn: dummy,
        score_t: Some(st),
        score_s: Some(ss),
    }
}

#[test]
fn attention_loss_examples() {
    let g = Graph::new();
    let mut r = rng(8);
    let st = g.constant(uniform(&mut r, &[1, 1, 4, 4], -3.0, 3.0));
    let ss = g.constant(uniform(&mut r, &[1, 1, 4, 4], -3.0, 3.0));
    let stroke = binary(&mut r, &[1, 1, 4, 4], 0.5);
    let t = level(Tensor::zeros([1, 1, 4, 4]), Tensor::zeros([1, 1, 4, 4]));
    let ga = [Some(ga_with_scores(&g, st, ss))];
    assert_eq!(attention_loss(&g, &ga, &[t], AttentionLossMode::Bce).unwrap().item().unwrap(), 0.0);

    // saturated correct logits
    let boxm = Tensor::ones([1, 1, 4, 4]);
    let t = level(boxm.clone(), stroke.clone());
    let st = g.constant(stroke.map(|s| if s > 0.0 { 20.0 } else { -20.0 }));
    let ss = g.constant(stroke.map(|s| if s > 0.0 { -20.0 } else { 20.0 }));
    let v = attention_loss(&g, &[Some(ga_with_scores(&g, st, ss))], &[t], AttentionLossMode::Bce)
        .unwrap()
        .item()
        .unwrap();
    assert!(v < 1e-6, "{v}");

    // one pixel, σ = 0.5, stroke target 1, surround target 0: ln 2 per term
    let one = Tensor::ones([1, 1, 1, 1]);
    let t = level(one.clone(), one.clone());
    let z = g.constant(Tensor::zeros([1, 1, 1, 1]));
    let ln2 = std::f64::consts::LN_2;
    let bce = attention_loss(&g, &[Some(ga_with_scores(&g, z, z))], &[t.clone()], AttentionLossMode::Bce)
        .unwrap()
        .item()
        .unwrap();
    assert!((bce - 2.0 * ln2).abs() < 1e-7);
    // the literal form only has the positive stroke term
    let lit = attention_loss(&g, &[Some(ga_with_scores(&g, z, z))], &[t], AttentionLossMode::Literal)
        .unwrap()
        .item()
        .unwrap();
    assert!((lit - ln2).abs() < 1e-7);
}

#[test]
fn attention_gradient_vanishes_outside_box() {
    let mut r = rng(9);
    let scores = uniform(&mut r, &[2, 1, 6, 6], -2.0, 2.0);
    let boxm = binary(&mut r, &[2, 1, 6, 6], 0.5);
    let stroke = boxm.zip_map(&binary(&mut r, &[2, 1, 6, 6], 0.5), |a, b| a * b).unwrap();
    let t = level(boxm.clone(), stroke);
    for mode in [AttentionLossMode::Bce, AttentionLossMode::Literal] {
        let g = Graph::new();
        let st = g.param(scores.clone());
        let ss = g.param(scores.map(|v| -v));
        let loss = attention_loss(&g, &[Some(ga_with_scores(&g, st, ss))], &[t.clone()], mode).unwrap();
        let grads = g.backward(loss).unwrap();
        for v in [st, ss] {
            let gr = grads.get(&v).unwrap();
            for (i, &m) in boxm.data().iter().enumerate() {
                if m == 0.0 {
                    assert_eq!(gr.data()[i], 0.0);
                }
            }
        }
        assert!(grads.get(&st).unwrap().data().iter().any(|&v| v != 0.0));
    }
}

#[test]
fn attention_branch_without_scores_ignores_its_target() {
    let g = Graph::new();
    let mut r = rng(10);
    let st = g.constant(uniform(&mut r, &[1, 1, 4, 4], -2.0, 2.0));
    let ga = GaVars {
        features_out: st,
        attn: st,
        score_t: Some(st),
        score_s: None,
    };
    let boxm = Tensor::ones([1, 1, 4, 4]);
    let stroke = binary(&mut r, &[1, 1, 4, 4], 0.5);
    let mut a = level(boxm.clone(), stroke.clone());
    let va = attention_loss(&g, &[Some(ga)], &[a.clone()], AttentionLossMode::Bce).unwrap().item().unwrap();
    a.surround = binary(&mut r, &[1, 1, 4, 4], 0.5);
    let vb = attention_loss(&g, &[Some(ga)], &[a], AttentionLossMode::Bce).unwrap().item().unwrap();
    assert_eq!(va, vb);
}

#[test]
fn adversarial_examples() {
    let g = Graph::new();
    let labels = Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let real = g.constant(Tensor::ones([1, 1, 2, 2]));
    let fake = g.constant(labels.clone());
    // perfect discriminator
    let d = discriminator_loss(&real, &fake, &labels).unwrap().item().unwrap();
    assert!(d < 1e-6, "{d}");
    // generator fooling it on text cells
    let fooled = g.constant(Tensor::ones([1, 1, 2, 2]));
    let gl = generator_adversarial_loss(&fooled, &labels).unwrap().item().unwrap();
    assert!(gl < 1e-6);
    assert!(discriminator_loss(&real, &fake, &Tensor::ones([1, 1, 1, 2])).is_err());
}

#[test]
fn total_is_weighted_sum() {
    let g = Graph::new();
    let mut r = rng(11);
    let vals = uniform(&mut r, &[6], 0.0, 3.0);
    let v: Vec<Var> = vals.data().iter().map(|&x| g.constant(Tensor::scalar(x))).collect();
    let c = LossComponents {
        l_r: v[0],
        l_p: v[1],
        l_s: v[2],
        l_tv: v[3],
        l_adv: v[4],
        l_att: v[5],
    };
    let w = LossWeights::default();
    let got = total_generator_loss(&c, &w).unwrap().item().unwrap();
    let d = vals.data();
    let want = 100.0 * d[0] + 0.5 * d[1] + 50.0 * d[2] + 25.0 * d[3] + d[4] + 10.0 * d[5];
    assert!((got - want).abs() < 1e-12);
    assert_eq!(c.values().unwrap().l_tv, d[3]);
    let unit = LossValues {
        l_r: 1.0,
        l_p: 1.0,
        l_s: 1.0,
        l_tv: 1.0,
        l_adv: 1.0,
        l_att: 1.0,
    };
    assert_eq!(w.combine(&unit), 186.5);
}

/// Output pixels outside the box never reach the box-restricted losses.
#[test]
fn perturbing_outside_box_changes_nothing() {
    let ext = PerceptualExtractor::default();
    let mut r = rng(12);
    let input = uniform(&mut r, &[1, 3, 16, 16], -1.0, 1.0);
    let gt = uniform(&mut r, &[1, 3, 16, 16], -1.0, 1.0);
    let out = uniform(&mut r, &[1, 3, 16, 16], -1.0, 1.0);
    let mut boxm = Tensor::zeros([1, 1, 16, 16]);
    for y in 4..10 {
        for x in 2..12 {
            boxm.data_mut()[y * 16 + x] = 1.0;
        }
    }
    let stroke = boxm.zip_map(&binary(&mut r, &[1, 1, 16, 16], 0.4), |a, b| a * b).unwrap();
    let eval = |out: &Tensor| -> [f64; 4] {
        let g = Graph::new();
        let full = g.constant(out.clone());
        let aux = pyramid_outputs(full);
        let bc = composite(&input, &full, &boxm).unwrap();
        let sc = composite(&input, &full, &stroke).unwrap();
        [
            roi_regression_loss(&aux, &gt, &boxm, &SCALES).unwrap().item().unwrap(),
            perceptual_loss(&ext, &[bc, sc], &gt).unwrap().item().unwrap(),
            style_loss(&ext, &[bc, sc], &gt).unwrap().item().unwrap(),
            total_variation_loss(&bc).unwrap().item().unwrap(),
        ]
    };
    let base = eval(&out);
    // the two coarser outputs average 4×4 blocks; keep perturbations in blocks the box misses
    for _ in 0..20 {
        let mut p = out.clone();
        for (i, v) in p.data_mut().iter_mut().enumerate() {
            let (y, x) = ((i / 16) % 16, i % 16);
            let block_touches_box = (y / 4 == 1 || y / 4 == 2) && x / 4 <= 2;
            if boxm.data()[y * 16 + x] == 0.0 && !block_touches_box {
                *v += (rand::Rng::random_range(&mut r, -1.0..1.0f64)) * 3.0;
            }
        }
        assert_eq!(eval(&p), base);
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let ext = PerceptualExtractor::fixed_random(3);
    let mut r = rng(13);
    let input = uniform(&mut r, &[1, 3, 8, 8], -1.0, 1.0);
    let gt = uniform(&mut r, &[1, 3, 8, 8], -1.0, 1.0);
    let boxm = binary(&mut r, &[1, 1, 8, 8], 0.6);
    let x = uniform(&mut r, &[1, 3, 8, 8], -1.0, 1.0);

    check_grad(&x, |_, v| roi_regression_loss(&pyramid_outputs(v), &gt, &boxm, &SCALES).unwrap());
    check_grad(&x, |_, v| full_image_l1_loss(&pyramid_outputs(v), &gt, &SCALES).unwrap());
    check_grad(&x, |_, v| {
        let c = composite(&input, &v, &boxm).unwrap();
        perceptual_loss(&ext, &[c, v], &gt).unwrap()
    });
    check_grad(&x, |_, v| {
        let c = composite(&input, &v, &boxm).unwrap();
        style_loss(&ext, &[c], &gt).unwrap()
    });
    check_grad(&x, |_, v| total_variation_loss(&composite(&input, &v, &boxm).unwrap()).unwrap());

    let scores = uniform(&mut r, &[1, 1, 8, 8], -3.0, 3.0);
    let stroke = boxm.zip_map(&binary(&mut r, &[1, 1, 8, 8], 0.5), |a, b| a * b).unwrap();
    let t = level(boxm.clone(), stroke);
    let other = uniform(&mut r, &[1, 1, 8, 8], -3.0, 3.0);
    for mode in [AttentionLossMode::Bce, AttentionLossMode::Literal] {
        check_grad(&scores, |g, v| {
            let ss = g.constant(other.clone());
            attention_loss(g, &[Some(ga_with_scores(g, v, ss))], &[t.clone()], mode).unwrap()
        });
    }

    let d = uniform(&mut r, &[1, 1, 4, 4], 0.05, 0.95);
    let labels = binary(&mut r, &[1, 1, 4, 4], 0.5);
    let real = uniform(&mut r, &[1, 1, 4, 4], 0.05, 0.95);
    check_grad(&d, |_, v| generator_adversarial_loss(&v, &labels).unwrap());
    check_grad(&d, |g, v| discriminator_loss(&g.constant(real.clone()), &v, &labels).unwrap());
    check_grad(&d, |g, v| discriminator_loss(&v, &g.constant(real.clone()), &labels).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pixel_losses_are_nonnegative(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let ext = PerceptualExtractor::fixed_random(seed);
        let gt = uniform(&mut r, &[1, 3, 8, 8], -1.0, 1.0);
        let out = uniform(&mut r, &[1, 3, 8, 8], -1.0, 1.0);
        let m = binary(&mut r, &[1, 1, 8, 8], 0.5);
        let g = Graph::new();
        let o = g.constant(out);
        prop_assert!(roi_regression_loss(&pyramid_outputs(o), &gt, &m, &SCALES).unwrap().item().unwrap() >= 0.0);
        prop_assert!(perceptual_loss(&ext, &[o], &gt).unwrap().item().unwrap() >= 0.0);
        prop_assert!(style_loss(&ext, &[o], &gt).unwrap().item().unwrap() >= 0.0);
        prop_assert!(total_variation_loss(&o).unwrap().item().unwrap() >= 0.0);
        let s = g.constant(uniform(&mut r, &[1, 1, 8, 8], -5.0, 5.0));
        let t = level(m.clone(), m.zip_map(&binary(&mut r, &[1, 1, 8, 8], 0.5), |a, b| a * b).unwrap());
        prop_assert!(attention_loss(&g, &[Some(ga_with_scores(&g, s, s))], &[t], AttentionLossMode::Bce).unwrap().item().unwrap() >= 0.0);
    }

    #[test]
    fn gram_ignores_spatial_permutation(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let a = uniform(&mut r, &[1, 3, 2, 4], -1.0, 1.0);
        let mut perm: Vec<usize> = (0..8).collect();
        for i in (1..8).rev() {
            perm.swap(i, rand::Rng::random_range(&mut r, 0..=i));
        }
        let b = Tensor::from_fn([1, 3, 2, 4], |i| a.data()[(i / 8) * 8 + perm[i % 8]]);
        let g = Graph::new();
        let ga = g.constant(a).gram().unwrap().value();
        let gb = g.constant(b).gram().unwrap().value();
        prop_assert!(ga.max_abs_diff(&gb).unwrap() < 1e-12);
    }
}
