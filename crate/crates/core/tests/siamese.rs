use docspot::siamese::*;
use docspot::{Error, GrayImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_arch() -> Architecture {
    Architecture::new(
        Shape::new(1, 10, 10),
        vec![
            Layer::Conv { out_channels: 3, kernel: 3, stride: 1 },
            Layer::Relu,
            Layer::MaxPool { window: 2, stride: 2 },
            Layer::Dense { out: 6 },
        ],
    )
    .unwrap()
}

/// Straight-line forward pass over the public weight layout.
fn scalar_forward(arch: &Architecture, weights: &[f32], patch: &GrayImage) -> Vec<f64> {
    let s = arch.input();
    let (mut c, mut h, mut w) = (s.channels as usize, s.height as usize, s.width as usize);
    let mut x: Vec<f64> = patch.pixels().iter().map(|&p| (255 - p) as f64 / 255.0).collect();
    let mut off = 0usize;
    for layer in arch.layers() {
        match *layer {
            Layer::Conv { out_channels, kernel, stride } => {
                let (o, k, st) = (out_channels as usize, kernel as usize, stride as usize);
                let (oh, ow) = ((h - k) / st + 1, (w - k) / st + 1);
                let wts = &weights[off..off + o * c * k * k];
                let bias = &weights[off + o * c * k * k..off + o * c * k * k + o];
                let mut y = vec![0.0; o * oh * ow];
                for oc in 0..o {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias[oc] as f64;
                            for ic in 0..c {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        acc += wts[((oc * c + ic) * k + ky) * k + kx] as f64
                                            * x[ic * h * w + (oy * st + ky) * w + ox * st + kx];
                                    }
                                }
                            }
                            y[(oc * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                off += o * c * k * k + o;
                x = y;
                c = o;
                h = oh;
                w = ow;
            }
            Layer::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Layer::MaxPool { window, stride } => {
                let (wn, st) = (window as usize, stride as usize);
                let (oh, ow) = ((h - wn) / st + 1, (w - wn) / st + 1);
                let mut y = Vec::new();
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut m = f64::NEG_INFINITY;
                            for dy in 0..wn {
                                for dx in 0..wn {
                                    m = m.max(x[ch * h * w + (oy * st + dy) * w + ox * st + dx]);
                                }
                            }
                            y.push(m);
                        }
                    }
                }
                x = y;
                h = oh;
                w = ow;
            }
            Layer::Dense { out } => {
                let n = x.len();
                let o = out as usize;
                let y = (0..o)
                    .map(|j| {
                        let mut acc = weights[off + o * n + j] as f64;
                        for i in 0..n {
                            acc += weights[off + j * n + i] as f64 * x[i];
                        }
                        acc
                    })
                    .collect();
                off += o * n + o;
                x = y;
                c = o;
                h = 1;
                w = 1;
            }
        }
    }
    assert_eq!(off, weights.len());
    x
}

fn patch(rng: &mut ChaCha8Rng, size: u32) -> GrayImage {
    random_patch(size, size, rng)
}

struct Stub(Vec<(GrayImage, Vec<f32>)>);

impl Embedder for Stub {
    fn embed(&self, p: &GrayImage) -> docspot::Result<Vec<f32>> {
        Ok(self.0.iter().find(|(q, _)| q == p).unwrap().1.clone())
    }
}

#[test]
fn zero_model_embeds_to_zero() {
    let m = SiameseModel::zeroed(Architecture::desk(Some(128)).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let e = m.embed(&patch(&mut rng, 32)).unwrap();
    assert_eq!(e.len(), 128);
    assert!(e.iter().all(|v| *v == 0.0));
}

#[test]
fn identical_patches_embed_identically() {
    let m = SiameseModel::seeded(Architecture::desk(Some(64)).unwrap(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = patch(&mut rng, 32);
    let a = m.embed(&p).unwrap();
    let b = m.embed(&p.clone()).unwrap();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn forward_matches_scalar_oracle() {
    let arch = Architecture::new(
        Shape::new(1, 8, 8),
        vec![
            Layer::Conv { out_channels: 2, kernel: 3, stride: 1 },
            Layer::Relu,
            Layer::Dense { out: 5 },
        ],
    )
    .unwrap();
    let m = SiameseModel::seeded(arch.clone(), 42);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let p = patch(&mut rng, 8);
        let got = m.embed(&p).unwrap();
        let want = scalar_forward(&arch, m.weights(), &p);
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(*g, *w as f32);
        }
    }
    // strided conv and pooling as well
    let m = SiameseModel::seeded(small_arch(), 3);
    let p = patch(&mut rng, 10);
    let want = scalar_forward(&small_arch(), m.weights(), &p);
    assert_eq!(m.embed(&p).unwrap(), want.iter().map(|v| *v as f32).collect::<Vec<_>>());
    let desk = Architecture::desk(Some(16)).unwrap();
    let m = SiameseModel::seeded(desk.clone(), 4);
    let p = patch(&mut rng, 32);
    let want = scalar_forward(&desk, m.weights(), &p);
    for (g, w) in m.embed(&p).unwrap().iter().zip(&want) {
        assert!((*g as f64 - w).abs() <= 1e-6 * w.abs().max(1.0));
    }
}

#[test]
fn shape_mismatch_is_input_error() {
    let m = SiameseModel::seeded(small_arch(), 1);
    let p = GrayImage::filled(11, 10, 0).unwrap();
    assert!(matches!(m.embed(&p), Err(Error::Input(_))));
    assert!(m.embed_any(&p).is_ok());
}

#[test]
fn identical_pair_with_zero_head() {
    let mut m = SiameseModel::seeded(small_arch(), 1);
    m.set_head(DistanceHead { w: 0.0, b: 0.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = patch(&mut rng, 10);
    for label in [PairLabel::Similar, PairLabel::Dissimilar] {
        let t = pair_distance(&m, m.head(), &p, &p, Some(label)).unwrap();
        assert_eq!(t.distance, 0.0);
        assert_eq!(t.prob, 0.5);
        assert!((t.loss.unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }
    let unlabeled = pair_distance(&m, m.head(), &p, &p, None).unwrap();
    assert!(unlabeled.loss.is_none());
}

#[test]
fn stub_encoder_three_four_five() {
    let a = GrayImage::filled(2, 2, 0).unwrap();
    let b = GrayImage::filled(2, 2, 1).unwrap();
    let mut ea = vec![0.0f32; 8];
    let mut eb = vec![0.0f32; 8];
    ea[0] = 3.0;
    eb[1] = 4.0;
    let stub = Stub(vec![(a.clone(), ea), (b.clone(), eb)]);
    let t = pair_distance(&stub, DistanceHead { w: -1.0, b: 0.0 }, &a, &b, None).unwrap();
    assert_eq!(t.distance, 5.0);
    assert_eq!(t.logit, -5.0);
}

#[test]
fn pair_distance_matches_exported_embeddings_and_is_symmetric() {
    let m = SiameseModel::seeded(Architecture::desk(Some(32)).unwrap(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let (a, b, c) = (patch(&mut rng, 32), patch(&mut rng, 32), patch(&mut rng, 32));
        let t = pair_distance(&m, m.head(), &a, &b, None).unwrap();
        let d = docspot::distance::euclidean(&m.embed(&a).unwrap(), &m.embed(&b).unwrap());
        assert!((t.distance - d).abs() <= 1e-5 * d.max(1e-12));
        assert_eq!(t.distance, pair_distance(&m, m.head(), &b, &a, None).unwrap().distance);
        let ac = pair_distance(&m, m.head(), &a, &c, None).unwrap().distance;
        let bc = pair_distance(&m, m.head(), &b, &c, None).unwrap().distance;
        assert!(ac <= t.distance + bc + 1e-5);
    }
}

#[test]
fn sorting_by_distance_and_by_probability_agree() {
    let m = SiameseModel::seeded(Architecture::desk(Some(32)).unwrap(), 12);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let q = patch(&mut rng, 32);
    let cands: Vec<_> = (0..20).map(|_| patch(&mut rng, 32)).collect();
    for head in [DistanceHead { w: -0.7, b: 2.0 }, DistanceHead { w: 0.4, b: -1.0 }] {
        let terms: Vec<_> = cands.iter().map(|c| pair_distance(&m, head, &q, c, None).unwrap()).collect();
        let mut by_d: Vec<usize> = (0..terms.len()).collect();
        by_d.sort_by(|&i, &j| terms[i].distance.total_cmp(&terms[j].distance));
        let mut by_p: Vec<usize> = (0..terms.len()).collect();
        by_p.sort_by(|&i, &j| terms[i].prob.total_cmp(&terms[j].prob));
        if head.w > 0.0 {
            assert_eq!(by_d, by_p);
        } else {
            by_p.reverse();
            assert_eq!(by_d, by_p);
        }
    }
}

#[test]
fn loss_at_half_probability_is_ln2() {
    assert_eq!(cross_entropy(0.0, PairLabel::Similar), std::f64::consts::LN_2);
    assert_eq!(cross_entropy(0.0, PairLabel::Dissimilar), std::f64::consts::LN_2);
    assert!(cross_entropy(800.0, PairLabel::Dissimilar).is_finite());
    assert!(cross_entropy(-800.0, PairLabel::Similar).is_finite());
}

fn far_pair(m: &SiameseModel, rng: &mut ChaCha8Rng, size: u32) -> PairSample {
    loop {
        let a = patch(rng, size);
        let b = patch(rng, size);
        let label = if rng.gen_bool(0.5) { PairLabel::Similar } else { PairLabel::Dissimilar };
        if pair_distance(m, m.head(), &a, &b, None).unwrap().distance > 1e-2 {
            return PairSample { a, b, label };
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20 {
        let m = SiameseModel::seeded(small_arch(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let s = far_pair(&m, &mut rng, 10);
        let r = grad_check(&m, &s, &GradCheckOptions { seed, ..Default::default() }).unwrap();
        let err = r.max_rel_error().expect("not at the kink");
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn head_only_gradient() {
    let m = SiameseModel::seeded(Architecture::desk(Some(32)).unwrap(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = far_pair(&m, &mut rng, 32);
    let opts = GradCheckOptions { eps: 1e-5, scope: GradScope::HeadOnly, ..Default::default() };
    match grad_check(&m, &s, &opts).unwrap() {
        GradCheck::Checked { max_rel_error, compared, kinks } => {
            assert_eq!((compared, kinks), (2, 0));
            assert!(max_rel_error < 1e-6, "{max_rel_error}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn subsampled_gradient_on_desk_model() {
    let m = SiameseModel::seeded(Architecture::desk(Some(128)).unwrap(), 77);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let s = far_pair(&m, &mut rng, 32);
    let opts = GradCheckOptions { max_params: Some(200), seed: 1, ..Default::default() };
    match grad_check(&m, &s, &opts).unwrap() {
        GradCheck::Checked { max_rel_error, compared, kinks } => {
            assert_eq!(compared + kinks, 202);
            assert!(kinks < 20, "{kinks} kinks");
            assert!(max_rel_error < 1e-4, "{max_rel_error}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn zero_model_identical_pair_is_skipped() {
    let m = SiameseModel::zeroed(small_arch());
    let p = GrayImage::filled(10, 10, 30).unwrap();
    let s = PairSample { a: p.clone(), b: p, label: PairLabel::Similar };
    let r = grad_check(&m, &s, &GradCheckOptions::default()).unwrap();
    assert_eq!(r, GradCheck::SkippedAtKink { distance: 0.0 });
    let bad = GradCheckOptions { eps: 1e-2, ..Default::default() };
    assert!(matches!(grad_check(&m, &s, &bad), Err(Error::Param(_))));
}

#[test]
fn zero_epochs_leave_model_untouched() {
    let m = SiameseModel::seeded(small_arch(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs = vec![far_pair(&m, &mut rng, 10)];
    let out = train(&m, &pairs, &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
    assert_eq!(out.model, m);
    assert!(out.loss_trace.is_empty());
}

#[test]
fn divergence_names_the_epoch() {
    let m = SiameseModel::seeded(small_arch(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs: Vec<_> = (0..8).map(|_| far_pair(&m, &mut rng, 10)).collect();
    let cfg = TrainConfig { lr0: 1e300, epochs: 5, batch: 1, ..Default::default() };
    match train(&m, &pairs, &cfg) {
        Err(Error::Divergence { epoch, .. }) => assert!(epoch < 5),
        other => panic!("expected divergence, got {other:?}"),
    }
}

/// Patches with a few random dark blobs on paper.
fn blob_patch(rng: &mut ChaCha8Rng) -> GrayImage {
    let mut p = GrayImage::filled(32, 32, 235).unwrap();
    for _ in 0..rng.gen_range(2..5) {
        let (x0, y0) = (rng.gen_range(0..24), rng.gen_range(0..24));
        let (w, h) = (rng.gen_range(3..9), rng.gen_range(3..9));
        let v = rng.gen_range(0..90);
        for y in y0..(y0 + h).min(32) {
            for x in x0..(x0 + w).min(32) {
                p.set(x, y, v);
            }
        }
    }
    p
}

#[test]
fn toy_task_learns_to_separate_inversions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut pairs = Vec::new();
    for i in 0..80 {
        let p = blob_patch(&mut rng);
        if i % 2 == 0 {
            pairs.push(PairSample { a: p.clone(), b: p, label: PairLabel::Similar });
        } else {
            let inv = p.inverted();
            pairs.push(PairSample { a: p, b: inv, label: PairLabel::Dissimilar });
        }
    }
    let (train_pairs, test_pairs) = split_pairs(pairs, 0.7);
    let m = SiameseModel::seeded(Architecture::desk(Some(32)).unwrap(), 31);
    let cfg = TrainConfig { epochs: 30, batch: 8, seed: 31, ..Default::default() };
    let out = train(&m, &train_pairs, &cfg).unwrap();
    assert_eq!(out.loss_trace.len(), 30);
    assert!(out.loss_trace[29] < out.loss_trace[0], "{:?}", out.loss_trace);

    let again = train(&m, &train_pairs, &cfg).unwrap();
    assert_eq!(again.model, out.model);

    let trained = out.model;
    let (mut ds, mut dd, mut ns, mut nd, mut correct) = (0.0, 0.0, 0, 0, 0);
    for p in &test_pairs {
        let t = pair_distance(&trained, trained.head(), &p.a, &p.b, None).unwrap();
        match p.label {
            PairLabel::Similar => {
                ds += t.distance;
                ns += 1;
            }
            PairLabel::Dissimilar => {
                dd += t.distance;
                nd += 1;
            }
        }
        let predicted = if t.prob >= 0.5 { PairLabel::Similar } else { PairLabel::Dissimilar };
        correct += (predicted == p.label) as usize;
    }
    assert!((ds / ns as f64) < (dd / nd as f64));
    let acc = correct as f64 / test_pairs.len() as f64;
    assert!(acc >= 0.9, "held-out accuracy {acc}");
}

#[test]
fn model_file_round_trip_and_errors() {
    let m = SiameseModel::seeded(Architecture::desk(Some(128)).unwrap(), 19);
    let bytes = model_to_bytes(&m);
    assert_eq!(&bytes[..4], b"SIAM");
    let back = model_from_bytes(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(model_to_bytes(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.siam");
    save_model(&m, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), m);

    assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    assert!(matches!(model_from_bytes(&bytes[..10]), Err(Error::Format(_))));
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(model_from_bytes(&bad_magic), Err(Error::Format(_))));
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    assert!(matches!(model_from_bytes(&bad_version), Err(Error::Format(_))));

    // the embed_dim field sits right after the descriptors
    let dim_at = bytes.len() - 8 - 4 * m.weights().len() - 4;
    assert_eq!(u32::from_le_bytes(bytes[dim_at..dim_at + 4].try_into().unwrap()), 128);
    let mut bad_dim = bytes.clone();
    bad_dim[dim_at..dim_at + 4].copy_from_slice(&64u32.to_le_bytes());
    assert!(matches!(model_from_bytes(&bad_dim), Err(Error::Format(_))));
}

#[test]
fn unreduced_model_round_trips() {
    let m = SiameseModel::seeded(Architecture::desk(None).unwrap(), 3);
    assert_eq!(m.embed_dim(), 576);
    assert_eq!(model_from_bytes(&model_to_bytes(&m)).unwrap(), m);
}
