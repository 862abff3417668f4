use proptest::prelude::*;
use radpose::net::graph::{NormSets, Tape};
use radpose::net::tensor::{conv3d_backward, conv3d_forward, upsample_forward, ConvGeom};
use radpose::net::*;
use radpose::dsp::RadarTensor4D;
use radpose::pose::{Person, PoseSet, NUM_JOINTS};
use radpose::scene::{template_person, CartesianGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct seven-loop convolution with zero padding.
fn naive_conv(x: &Tensor<f64>, w: &[f64], b: &[f64], c_out: usize, g: ConvGeom) -> Tensor<f64> {
    let [n, c_in, zi, yi, xi] = x.shape;
    let k = g.kernel;
    let out = |l: usize| if l + 2 * g.pad < k { 0 } else { (l + 2 * g.pad - k) / g.stride + 1 };
    let (zo, yo, xo) = (out(zi), out(yi), out(xi));
    let mut y = Tensor::zeros([n, c_out, zo, yo, xo]);
    for bn in 0..n {
        for co in 0..c_out {
            for z in 0..zo {
                for yy in 0..yo {
                    for xx in 0..xo {
                        let mut acc = b[co];
                        for ci in 0..c_in {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iz = (z * g.stride + kz) as i64 - g.pad as i64;
                                        let iy = (yy * g.stride + ky) as i64 - g.pad as i64;
                                        let ix = (xx * g.stride + kx) as i64 - g.pad as i64;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= zi as i64 || iy >= yi as i64 || ix >= xi as i64 {
                                            continue;
                                        }
                                        let wi = (((co * c_in + ci) * k + kz) * k + ky) * k + kx;
                                        acc += w[wi] * x.get(bn, ci, iz as usize, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        let i = y.index(bn, co, z, yy, xx);
                        y.data[i] = acc;
                    }
                }
            }
        }
    }
    y
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

const GEOMS: [ConvGeom; 4] = [
    ConvGeom { kernel: 3, stride: 1, pad: 1 },
    ConvGeom { kernel: 3, stride: 2, pad: 1 },
    ConvGeom { kernel: 1, stride: 1, pad: 0 },
    ConvGeom { kernel: 2, stride: 2, pad: 0 },
];

#[test]
fn conv_matches_direct_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for g in GEOMS {
        for shape in [[2, 3, 5, 4, 7], [1, 1, 1, 3, 2], [1, 2, 6, 6, 6]] {
            let c_out = 4;
            let w: Vec<f64> = (0..c_out * shape[1] * g.kernel.pow(3)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = random_tensor(shape, &mut rng);
            let fast = conv3d_forward(&x, &w, Some(&b), c_out, g);
            let slow = naive_conv(&x, &w, &b, c_out, g);
            assert_eq!(fast.shape, slow.shape, "{g:?}");
            assert!(max_abs_diff(&fast.data, &slow.data) <= 1e-12, "{g:?} {shape:?}");
        }
    }
}

#[test]
fn conv_backward_is_the_adjoint() {
    // <conv(x), gy> is bilinear, so dx and dw must reproduce it exactly
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for g in GEOMS {
        let x = random_tensor([2, 3, 5, 6, 4], &mut rng);
        let c_out = 2;
        let w: Vec<f64> = (0..c_out * 3 * g.kernel.pow(3)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = conv3d_forward(&x, &w, None, c_out, g);
        let gy = random_tensor(y.shape, &mut rng);
        let (gx, gw, gb) = conv3d_backward(&x, &w, &gy, g);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(&y.data, &gy.data);
        assert!((dot(&gx.data, &x.data) - lhs).abs() < 1e-10);
        assert!((dot(&gw, &w) - lhs).abs() < 1e-10);
        let per_channel: Vec<f64> = (0..c_out)
            .map(|c| (0..2).map(|n| gy.channel(n, c).iter().sum::<f64>()).sum())
            .collect();
        assert!(max_abs_diff(&gb, &per_channel) < 1e-12);
    }
}

fn tiny_grid() -> CartesianGrid {
    CartesianGrid {
        origin: [-1.0, 2.0, -1.0],
        voxel_extent: [0.25, 0.25, 0.5],
        dims: [4, 8, 8],
    }
}

fn tiny_config(norm_kind: NormKind) -> NetworkConfig {
    NetworkConfig {
        stages: 2,
        modules_per_stage: 1,
        parallel_convs_per_module: 1,
        base_channels: 4,
        norm_kind,
        group_count: 2,
        input_downsample: [1, 1, 1, 1],
        head_channels: 4,
        ..NetworkConfig::default()
    }
}

fn person_at(pelvis: [f64; 3], heading: f64) -> Person {
    template_person(pelvis, heading, &[[0.0; 3]; NUM_JOINTS])
}

/// Random non-negative tensors on the tiny grid, each with one person.
fn tiny_frames(n: usize, seed: u64) -> (Vec<RadarTensor4D<f64>>, Vec<PoseSet>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = tiny_grid();
    let mut tensors = Vec::new();
    let mut poses = Vec::new();
    for _ in 0..n {
        let mut t = RadarTensor4D::zeros(4, grid);
        t.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
        tensors.push(t);
        let p = [rng.gen_range(-0.7..0.7), rng.gen_range(2.3..3.7), rng.gen_range(-0.8..0.8)];
        poses.push(PoseSet::new(vec![person_at(p, rng.gen_range(0.0..6.0))]));
    }
    (tensors, poses)
}

fn zero_biases(net: &mut Network<f64>) {
    let names: Vec<String> = net.params.names().to_vec();
    for n in names.iter().filter(|n| n.ends_with(".bias") || n.ends_with(".beta")) {
        net.params.by_name_mut(n).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn zero_input_and_biases_give_half_confidence() {
    for norm in [NormKind::Group, NormKind::Batch] {
        for head_kind in [HeadKind::CenterOffset, HeadKind::PerJoint] {
            let cfg = NetworkConfig { head_kind, ..tiny_config(norm) };
            let mut net = Network::<f64>::new(cfg, 4, 3).unwrap();
            zero_biases(&mut net);
            let x = Tensor::zeros([2, 4, 4, 8, 8]);
            for mode in [Mode::Train, Mode::Eval] {
                let (tape, out) = net.forward(&x, mode).unwrap();
                let v = out.center.or(out.joints).unwrap();
                assert!(tape.value(v).data.iter().all(|&p| p == 0.5));
                if let Some(o) = out.offsets {
                    assert!(tape.value(o).data.iter().all(|&p| p == 0.0));
                }
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let (t, _) = tiny_frames(2, 4);
    let refs: Vec<_> = t.iter().collect();
    for norm in [NormKind::Group, NormKind::Batch] {
        let a = Network::<f64>::new(tiny_config(norm), 4, 9).unwrap();
        let b = Network::<f64>::new(tiny_config(norm), 4, 9).unwrap();
        let ha = a.infer(&refs).unwrap();
        let hb = b.infer(&refs).unwrap();
        assert_eq!(ha, hb);
        let c = Network::<f64>::new(tiny_config(norm), 4, 10).unwrap();
        assert_ne!(c.infer(&refs).unwrap(), ha);
    }
}

#[test]
fn composed_convolutions_match_direct_oracle() {
    // identity-like first kernel (scaled centre tap plus a shifted tap),
    // then a random kernel; compare with two direct convolutions
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = ConvGeom { kernel: 3, stride: 1, pad: 1 };
    let x = random_tensor([1, 1, 4, 5, 6], &mut rng);
    let mut w1 = vec![0.0; 27];
    w1[13] = 2.0;
    w1[14] = -0.5;
    let w2: Vec<f64> = (0..27).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), "x");
    let a = tape.param(0, Tensor::from_vec([1, 1, 3, 3, 3], w1.clone()).unwrap(), "w1");
    let b = tape.param(1, Tensor::from_vec([1, 1, 3, 3, 3], w2.clone()).unwrap(), "w2");
    let h = tape.conv(xv, a, None, g, "c1").unwrap();
    let y = tape.conv(h, b, None, g, "c2").unwrap();
    let want = naive_conv(&naive_conv(&x, &w1, &[0.0], 1, g), &w2, &[0.0], 1, g);
    assert!(max_abs_diff(&tape.value(y).data, &want.data) <= 1e-6);
    // first stage alone is 2x(centre) - 0.5x(shifted by +1 in x)
    let hv = tape.value(h);
    for z in 0..4 {
        for yy in 0..5 {
            for xx in 0..6 {
                let next = if xx + 1 < 6 { x.get(0, 0, z, yy, xx + 1) } else { 0.0 };
                let want = 2.0 * x.get(0, 0, z, yy, xx) - 0.5 * next;
                assert!((hv.get(0, 0, z, yy, xx) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn branches_double_channels_and_halve_dims() {
    let cfg = NetworkConfig {
        stages: 3,
        base_channels: 2,
        group_count: 2,
        ..tiny_config(NormKind::Group)
    };
    let net = Network::<f64>::new(cfg.clone(), 3, 1).unwrap();
    let x = Tensor::zeros([1, 3, 5, 7, 9]);
    let (tape, _) = net.forward(&x, Mode::Train).unwrap();
    let mut prev = tape.value(tape.find("stem.1.relu").unwrap()).shape;
    assert_eq!(prev, [1, 2, 5, 7, 9]);
    for s in 1..cfg.stages {
        let t = tape.value(tape.find(&format!("stage{s}.transition.relu")).unwrap()).shape;
        assert_eq!(t[1], 2 * prev[1]);
        for a in 2..5 {
            assert_eq!(t[a], prev[a].div_ceil(2));
        }
        prev = t;
    }
    assert_eq!(prev, [1, 8, 2, 2, 3]);
}

#[test]
fn norm_kinds_share_every_layer() {
    let g = Network::<f64>::new(NetworkConfig::micro(), 8, 0).unwrap();
    let b = Network::<f64>::new(
        NetworkConfig {
            norm_kind: NormKind::Batch,
            ..NetworkConfig::micro()
        },
        8,
        0,
    )
    .unwrap();
    assert_eq!(g.params.names(), b.params.names());
    assert_eq!(g.params.count(), b.params.count());
    assert!(g.params.count() <= 100_000);
    assert!(g.params.running.is_empty());
    assert!(!b.params.running.is_empty());
}

#[test]
fn group_norm_ignores_per_group_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor([2, 4, 3, 3, 3], &mut rng);
    let mut scaled = x.clone();
    // channels {0,1} and {2,3} form the two groups; scale each (sample, group)
    for n in 0..2 {
        for c in 0..4 {
            let k = [0.5, 3.0, 7.0, 0.01][n * 2 + c / 2];
            scaled.channel_mut(n, c).iter_mut().for_each(|v| *v *= k);
        }
    }
    let run = |t: &Tensor<f64>| {
        let mut tape = Tape::new();
        let xv = tape.leaf(t.clone(), "x");
        let gm = tape.param(0, Tensor::from_vec([4, 1, 1, 1, 1], vec![1.0; 4]).unwrap(), "g");
        let bt = tape.param(1, Tensor::zeros([4, 1, 1, 1, 1]), "b");
        let y = tape.norm(xv, gm, bt, NormSets::Group(2), 0.0, "gn").unwrap();
        tape.value(y).clone()
    };
    assert!(max_abs_diff(&run(&x).data, &run(&scaled).data) < 1e-9);
}

#[test]
fn linear_layer_gradient_is_closed_form() {
    // loss = <conv1x1(x; w), c>, so dloss/dw[co, ci] = sum over voxels of x[ci] c[co]
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor([2, 3, 2, 3, 4], &mut rng);
    let w = random_tensor([2, 3, 1, 1, 1], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), "x");
    let wv = tape.param(0, w, "w");
    let bv = tape.param(1, Tensor::zeros([2, 1, 1, 1, 1]), "b");
    let g1 = ConvGeom { kernel: 1, stride: 1, pad: 0 };
    let y = tape.conv(xv, wv, Some(bv), g1, "lin").unwrap();
    let c = random_tensor(tape.value(y).shape, &mut rng);
    let grads = tape.backward(vec![(y, c.clone())], 2).unwrap();
    let gw = grads[0].as_ref().unwrap();
    for co in 0..2 {
        for ci in 0..3 {
            let want: f64 = (0..2)
                .map(|n| x.channel(n, ci).iter().zip(c.channel(n, co)).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            assert!((gw.data[co * 3 + ci] - want).abs() < 1e-12);
        }
        let want_b: f64 = (0..2).map(|n| c.channel(n, co).iter().sum::<f64>()).sum();
        assert!((grads[1].as_ref().unwrap().data[co] - want_b).abs() < 1e-12);
    }
}

#[test]
fn zero_loss_weights_give_zero_gradients() {
    let (t, p) = tiny_frames(2, 8);
    let refs: Vec<_> = t.iter().collect();
    let net = Network::<f64>::new(tiny_config(NormKind::Group), 4, 0).unwrap();
    let input = prepare_input(&refs, [1, 1, 1, 1]).unwrap();
    let poses: Vec<&PoseSet> = p.iter().collect();
    let targets = frame_targets(&poses, &tiny_grid(), 2.0).unwrap();
    let loss = LossConfig {
        w_class: 0.0,
        w_reg: 0.0,
        ..LossConfig::default()
    };
    let (l, grads) = loss_gradients(&net, &input, &targets, &loss).unwrap();
    assert_eq!(l.total, 0.0);
    for g in grads.iter().flatten() {
        assert!(g.data.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn gradients_match_finite_differences_for_both_norms() {
    let (t, p) = tiny_frames(2, 9);
    let refs: Vec<_> = t.iter().collect();
    let poses: Vec<&PoseSet> = p.iter().collect();
    let targets = frame_targets(&poses, &tiny_grid(), 2.0).unwrap();
    let input = prepare_input(&refs, [1, 1, 1, 1]).unwrap();
    for norm in [NormKind::Group, NormKind::Batch] {
        let net = Network::<f64>::new(tiny_config(norm), 4, 2).unwrap();
        let r = gradcheck(&net, &input, &targets, &LossConfig::default(), 40, 1e-3, 1).unwrap();
        assert_eq!(r.entries.len(), 40, "skipped {}", r.skipped);
        assert!(r.max_rel_err() <= 1e-4, "{:?}", r.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)));
    }
}

#[test]
fn pooling_averages_blocks_and_normalises_peak() {
    let grid = CartesianGrid {
        origin: [0.0, 1.0, 0.0],
        voxel_extent: [0.1, 0.1, 0.1],
        dims: [1, 2, 3],
    };
    let mut t = RadarTensor4D::<f64>::zeros(2, grid);
    t.data = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0, 0.0, 0.0, 0.0, 0.0, 12.0];
    let x = prepare_input(&[&t], [2, 1, 2, 2]).unwrap();
    assert_eq!(x.shape, [1, 1, 1, 1, 2]);
    // blocks: (1+2+4+5+0+0+0+0)/8 = 1.5 and (3+6+0+12)/4 = 5.25
    assert!((x.data[0] - 1.5 / 5.25).abs() < 1e-15);
    assert_eq!(x.data[1], 1.0);
    let zero = RadarTensor4D::<f64>::zeros(2, grid);
    assert!(prepare_input(&[&zero], [1, 1, 1, 1]).unwrap().data.iter().all(|&v| v == 0.0));
}

#[test]
fn shape_errors_name_the_layer() {
    let net = Network::<f64>::new(tiny_config(NormKind::Group), 4, 0).unwrap();
    match net.forward(&Tensor::zeros([1, 3, 4, 8, 8]), Mode::Train) {
        Err(radpose::Error::Dimension(m)) => assert!(m.contains("input"), "{m}"),
        Err(e) => panic!("{e}"),
        Ok(_) => panic!("accepted"),
    }
    let mut bad = net.clone();
    *bad.params.by_name_mut("stem.1.weight").unwrap() = Tensor::zeros([4, 3, 3, 3, 3]);
    match bad.forward(&Tensor::zeros([1, 4, 4, 8, 8]), Mode::Train) {
        Err(radpose::Error::Dimension(m)) => assert!(m.contains("stem.1"), "{m}"),
        Err(e) => panic!("{e}"),
        Ok(_) => panic!("accepted"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        NetworkConfig { stages: 0, ..NetworkConfig::micro() },
        NetworkConfig { group_count: 3, ..NetworkConfig::micro() },
        NetworkConfig { input_downsample: [0, 1, 1, 1], ..NetworkConfig::micro() },
    ];
    for c in bad {
        assert!(matches!(Network::<f32>::new(c, 8, 0), Err(radpose::Error::Config(_))));
    }
    // batch norm has no group constraint
    let ok = NetworkConfig { group_count: 3, norm_kind: NormKind::Batch, ..NetworkConfig::micro() };
    assert!(ok.validate().is_ok());
    let text = NetworkConfig::micro().to_toml().unwrap();
    assert_eq!(NetworkConfig::from_toml(&text).unwrap(), NetworkConfig::micro());
}

#[test]
fn parameters_survive_the_container() {
    let (t, p) = tiny_frames(2, 11);
    let refs: Vec<_> = t.iter().collect();
    let frames: Vec<_> = t.iter().zip(&p).collect();
    let opts = TrainOptions { epochs: 2, lr: 0.01, ..TrainOptions::default() };
    let trained = train_micro(&frames, &tiny_config(NormKind::Batch), &opts).unwrap();
    // the container holds single precision
    let mut net = trained.network;
    net.params = net.params.cast::<f32>().cast::<f64>();
    let back = Network::<f64>::from_container(&net.to_container().unwrap()).unwrap();
    assert_eq!(back.params.names(), net.params.names());
    assert_eq!(back.params.running.len(), net.params.running.len());
    for (k, v) in &net.params.running {
        assert_eq!(back.params.running[k].mean, v.mean);
        assert_eq!(back.params.running[k].var, v.var);
    }
    assert_eq!(back.infer(&refs).unwrap(), net.infer(&refs).unwrap());
    let single = net.params.cast::<f32>();
    assert_eq!(single.count(), net.params.count());
}

#[test]
fn train_micro_rejects_bad_inputs_and_divergence() {
    let (t, p) = tiny_frames(65, 12);
    let frames: Vec<_> = t.iter().zip(&p).collect();
    let cfg = tiny_config(NormKind::Group);
    let opts = TrainOptions { epochs: 3, ..TrainOptions::default() };
    assert!(matches!(train_micro(&frames, &cfg, &opts), Err(radpose::Error::Validation(_))));
    let few = &frames[..2];
    let wild = TrainOptions { epochs: 30, lr: 1e9, ..TrainOptions::default() };
    assert!(matches!(train_micro(few, &cfg, &wild), Err(radpose::Error::Numerical(_))));
    let r = train_micro(few, &cfg, &TrainOptions { epochs: 5, lr: 0.01, ..TrainOptions::default() }).unwrap();
    assert_eq!(r.losses.len(), 5);
    assert!(r.final_loss.is_finite());
}

#[test]
fn batch_norm_eval_matches_training_statistics_after_training() {
    let (t, p) = tiny_frames(3, 13);
    let frames: Vec<_> = t.iter().zip(&p).collect();
    let r = train_micro(&frames, &tiny_config(NormKind::Batch), &TrainOptions { epochs: 3, lr: 0.01, ..TrainOptions::default() }).unwrap();
    let refs: Vec<_> = t.iter().collect();
    let input = prepare_input(&refs, [1, 1, 1, 1]).unwrap();
    let (train_tape, tout) = r.network.forward(&input, Mode::Train).unwrap();
    let (eval_tape, eout) = r.network.forward(&input, Mode::Eval).unwrap();
    let a = &train_tape.value(tout.center.unwrap()).data;
    let b = &eval_tape.value(eout.center.unwrap()).data;
    assert!(max_abs_diff(a, b) < 1e-9);
}

/// Focal loss written out term by term.
fn focal_oracle(p: &[f64], y: &[f64]) -> f64 {
    let pos = y.iter().filter(|&&v| v == 1.0).count().max(1) as f64;
    let mut s = 0.0;
    for (&p, &y) in p.iter().zip(y) {
        let p = p.clamp(1e-6, 1.0 - 1e-6);
        s += if y == 1.0 {
            (1.0 - p) * (1.0 - p) * p.ln()
        } else {
            (1.0 - y).powi(4) * p * p * (1.0 - p).ln()
        };
    }
    -s / pos
}

fn map_of(dims: [usize; 3], values: Vec<f64>) -> radpose::decode::CenterTargetMap {
    radpose::decode::CenterTargetMap {
        dims,
        values,
        gaussian_sigma: 1.0,
    }
}

#[test]
fn focal_loss_reference_values() {
    // uniform 0.5 on 8 voxels, one positive, the rest at y = 0.5 and 0
    let y = vec![1.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0];
    let p = vec![0.5; 8];
    let ln2 = 2f64.ln();
    // positive: 0.25 ln2; two at y=.5: 2 * 0.0625 * 0.25 ln2; five at 0: 5 * 0.25 ln2
    let hand = 0.25 * ln2 + 2.0 * 0.0625 * 0.25 * ln2 + 5.0 * 0.25 * ln2;
    let got = focal_loss(&p, &map_of([2, 2, 2], y.clone()), 2.0, 4.0).unwrap();
    assert!((got - hand).abs() < 1e-9, "{got} vs {hand}");
    assert!((got - focal_oracle(&p, &y)).abs() < 1e-12);
    // near perfect prediction
    let good: Vec<f64> = y.iter().map(|&v| if v == 1.0 { 1.0 - 1e-6 } else { 1e-6 }).collect();
    assert!(focal_loss(&good, &map_of([2, 2, 2], y.clone()), 2.0, 4.0).unwrap() <= 1e-4);
}

#[test]
fn focal_loss_uses_batch_foreground_count() {
    // duplicating a frame doubles both the sum and the positive count
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let y: Vec<f64> = (0..27).map(|i| if i == 13 { 1.0 } else { rng.gen_range(0.0..0.99) }).collect();
    let p: Vec<f64> = (0..27).map(|_| rng.gen_range(0.01..0.99)).collect();
    let (one, _) = focal_loss_grad(&p, &y, 2.0, 4.0).unwrap();
    let (two, _) = focal_loss_grad(&[p.clone(), p.clone()].concat(), &[y.clone(), y.clone()].concat(), 2.0, 4.0).unwrap();
    assert!((one - two).abs() < 1e-12);
    assert!((one - focal_oracle(&p, &y)).abs() < 1e-12);
    // no positives: normaliser floors at 1
    let neg = vec![0.0; 27];
    assert!((focal_loss_grad(&p, &neg, 2.0, 4.0).unwrap().0 - focal_oracle(&p, &neg)).abs() < 1e-12);
}

#[test]
fn focal_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let y: Vec<f64> = (0..20).map(|i| if i % 7 == 0 { 1.0 } else { rng.gen_range(0.0..0.99) }).collect();
    let p: Vec<f64> = (0..20).map(|_| rng.gen_range(0.05..0.95)).collect();
    let (_, g) = focal_loss_grad(&p, &y, 2.0, 4.0).unwrap();
    let h = 1e-6;
    for i in 0..p.len() {
        let mut a = p.clone();
        a[i] += h;
        let mut b = p.clone();
        b[i] -= h;
        let num = (focal_oracle(&a, &y) - focal_oracle(&b, &y)) / (2.0 * h);
        assert!(relative_error(g[i], num) < 1e-6, "{i}: {} vs {num}", g[i]);
    }
    // clamped predictions get no gradient
    let (_, g) = focal_loss_grad(&[0.0, 1.0], &[1.0, 0.0], 2.0, 4.0).unwrap();
    assert_eq!(g, vec![0.0, 0.0]);
}

fn exact_head(grid: &CartesianGrid, poses: &PoseSet) -> (HeadOutput, radpose::decode::CenterTargetMap) {
    let (map, offs) = radpose::decode::encode_targets(poses, grid, 1.0).unwrap();
    let head = radpose::decode::head_from_targets(&map, &offs);
    (head, map)
}

#[test]
fn offset_loss_reference_values() {
    let grid = tiny_grid();
    let poses = PoseSet::new(vec![person_at([0.1, 3.0, 0.2], 0.5)]);
    let (mut head, map) = exact_head(&grid, &poses);
    assert_eq!(offset_loss(&head, &poses, &map, &grid).unwrap(), 0.0);
    // one joint displaced 0.1 m in x
    let v = map.foreground()[0];
    let s = head.voxels();
    head.keypoint_offsets[3 * 4 * s + v] += 0.1;
    let got = offset_loss(&head, &poses, &map, &grid).unwrap();
    assert!((got - 0.1 / 15.0).abs() < 1e-12);
    // weights combine linearly
    let class = focal_loss(&head.center_confidence, &map, 2.0, 4.0).unwrap();
    for (wc, wr) in [(1.0, 1.0), (0.0, 1.0), (2.0, 0.5), (0.0, 0.0)] {
        let cfg = LossConfig { w_class: wc, w_reg: wr, ..LossConfig::default() };
        let t = total_loss(&head, &map, &poses, &grid, &cfg).unwrap();
        assert!((t - (wc * class + wr * got)).abs() < 1e-12);
    }
}

#[test]
fn offset_loss_averages_over_persons_and_joints() {
    let grid = tiny_grid();
    let gt = PoseSet::new(vec![person_at([-0.5, 2.6, -0.4], 0.0), person_at([0.5, 3.5, 0.4], 2.0)]);
    let (map, offs) = radpose::decode::encode_targets(&gt, &grid, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut head = radpose::decode::head_from_targets(&map, &offs);
    head.keypoint_offsets.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let s = head.voxels();
    let mut want = 0.0;
    for p in &gt.persons {
        let v = grid.voxel_of(p.pelvis()).unwrap();
        let flat = (v[0] * 8 + v[1]) * 8 + v[2];
        let c = grid.voxel_center(v[0], v[1], v[2]);
        let mut per = 0.0;
        for j in 0..NUM_JOINTS {
            for a in 0..3 {
                per += (head.keypoint_offsets[(3 * j + a) * s + flat] - (p.joints[j][a] - c[a])).abs();
            }
        }
        want += per / 15.0;
    }
    want /= 2.0;
    let got = offset_loss(&head, &gt, &map, &grid).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    // a foreground voxel without an annotated person
    let lone = PoseSet::new(vec![gt.persons[0].clone()]);
    assert!(matches!(offset_loss(&head, &lone, &map, &grid), Err(radpose::Error::Annotation(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn losses_are_finite_inside_the_clamp(
        p in prop::collection::vec(1e-6f64..(1.0 - 1e-6), 8),
        y in prop::collection::vec(0.0f64..=1.0, 8),
        o in prop::collection::vec(-5.0f64..5.0, 45),
    ) {
        let (l, g) = focal_loss_grad(&p, &y, 2.0, 4.0).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
        prop_assert!(g.iter().all(|v| v.is_finite()));
        let t = Tensor::from_vec([1, 45, 1, 1, 1], o).unwrap();
        let target = radpose::decode::OffsetTarget { voxel: 0, offsets: [[0.0; 3]; NUM_JOINTS] };
        let (r, _) = offset_loss_grad(&t, &[&[target][..]]).unwrap();
        prop_assert!(r.is_finite() && r >= 0.0);
    }

    #[test]
    fn upsample_adjoint_holds(f in 1usize..4, z in 1usize..3, y in 1usize..4, x in 1usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor([1, 2, z, y, x], &mut rng);
        let dims = [z * f - (f - 1).min(z * f - 1) / 2, y * f, x * f];
        let up = upsample_forward(&a, f, dims);
        prop_assert_eq!(up.shape, [1, 2, dims[0], dims[1], dims[2]]);
        for c in 0..2 {
            for k in 0..dims[0] {
                for j in 0..dims[1] {
                    for i in 0..dims[2] {
                        prop_assert_eq!(up.get(0, c, k, j, i), a.get(0, c, k / f, j / f, i / f));
                    }
                }
            }
        }
    }
}
