use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::autodiff::{grad_check, pool, Pool, Tensor};
use crate::rng::{stream, Rng, Stream};

fn rng(seed: u64) -> Rng {
    stream(seed, Stream::Check)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn small_config() -> ModelConfig {
    ModelConfig {
        conv_channels: vec![3, 4, 8],
        embed_dim: 6,
        dim: 8,
        channel_ratio: 2,
        spatial_ratio: 2,
        crop_height: 12,
        crop_width: 8,
    }
}

#[test]
fn zero_gates_give_one_half() {
    let ca = ChannelAttention::zeroed(16, 4).unwrap();
    let a = channel_attention(&ca, &Tensor::full(&[16], 3.0)).unwrap();
    assert!(a.data().iter().all(|&v| v == 0.5));
    let sa = SpatialAttention::zeroed(6, 2, 3).unwrap();
    let m = spatial_attention(&sa, &Tensor::full(&[16, 6, 2], -1.0)).unwrap();
    assert_eq!(m.shape(), &[6, 2]);
    assert!(m.data().iter().all(|&v| v == 0.5));
    assert!(ChannelAttention::new(16, 5, &mut rng(0)).is_err());
    assert!(SpatialAttention::new(6, 2, 5, &mut rng(0)).is_err());
}

#[test]
fn gate_outputs_stay_in_open_unit_interval() {
    let ca = ChannelAttention::new(16, 4, &mut rng(1)).unwrap();
    for s in [0.0, 1.0, 10.0, -10.0] {
        let x = Tensor::randn(&[16], 1.0, &mut rng(2)).into_data();
        let x = Tensor::vector(x.iter().map(|v| v * s).collect());
        let a = channel_attention(&ca, &x).unwrap();
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0 || v == 0.5));
    }
    assert!(channel_attention(&ca, &Tensor::zeros(&[15])).is_err());
}

#[test]
fn channel_scaling_identity_and_zero() {
    let f = Tensor::randn(&[3, 2, 2], 1.0, &mut rng(3));
    let same = apply_channel_attention(&Tensor::full(&[3], 1.0), &f).unwrap();
    assert_eq!(same.data(), f.data());
    let zero = apply_channel_attention(&Tensor::zeros(&[3]), &f).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
    assert!(apply_channel_attention(&Tensor::zeros(&[2]), &f).is_err());
}

#[test]
fn channel_scaling_gradient() {
    let mut r = rng(4);
    let a = Tensor::randn(&[3], 1.0, &mut r).into_data();
    let f = Tensor::randn(&[3, 2, 2], 1.0, &mut r).into_data();
    let c = Tensor::randn(&[12], 1.0, &mut r).into_data();
    let theta = [a, f].concat();
    let res = grad_check(&theta, 1e-5, |t| {
        let a = Tensor::vector(t[..3].to_vec());
        let f = Tensor::new(vec![3, 2, 2], t[3..].to_vec()).unwrap();
        let y = apply_channel_attention(&a, &f).unwrap();
        let (ga, gf) = apply_channel_attention_backward(&a, &f, &c).unwrap();
        (dot(y.data(), &c), [ga, gf].concat())
    })
    .unwrap();
    assert!(res.max_rel_error < 1e-8, "{res:?}");
}

#[test]
fn ema_examples() {
    let mut t = PrototypeTable::new(3, 2, 0.5).unwrap();
    assert!(t.row(0).is_none());
    update_prototype(&mut t, 0, &[1.0, 0.0]).unwrap();
    assert_eq!(t.row(0).unwrap(), &[1.0, 0.0]);
    update_prototype(&mut t, 0, &[0.0, 1.0]).unwrap();
    assert_eq!(t.row(0).unwrap(), &[0.5, 0.5]);
    assert!(t.row(1).is_none() && t.row(2).is_none());
    assert!(matches!(
        update_prototype(&mut t, 3, &[0.0, 1.0]),
        Err(crate::Error::IdentityOutOfRange { index: 3, len: 3 })
    ));
    assert!(PrototypeTable::new(1, 2, 1.0).is_err());
}

#[test]
fn ema_replay_matches_script() {
    let mut r = rng(5);
    let (n, d, lambda) = (4, 3, 0.3);
    let mut t = PrototypeTable::new(n, d, lambda).unwrap();
    let mut script: Vec<Option<Vec<f64>>> = vec![None; n];
    for _ in 0..200 {
        let k = rand::Rng::random_range(&mut r, 0..n);
        let f = unit(Tensor::randn(&[d], 1.0, &mut r).into_data());
        t.update(k, &f).unwrap();
        script[k] = Some(match script[k].take() {
            None => f,
            Some(p) => p.iter().zip(&f).map(|(p, f)| lambda * p + (1.0 - lambda) * f).collect(),
        });
    }
    for k in 0..n {
        assert_eq!(t.row(k).map(<[f64]>::to_vec), script[k]);
    }
}

#[test]
fn target_map_cases() {
    let p = [0.6, 0.8];
    let par = Tensor::new(vec![2, 1, 2], vec![0.6, 1.2, 0.8, 1.6]).unwrap();
    assert!(target_map(&p, &par).unwrap().data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    let ortho = Tensor::new(vec![2, 1, 1], vec![-0.8, 0.6]).unwrap();
    assert_eq!(target_map(&p, &ortho).unwrap().data(), &[0.0]);
    let anti = Tensor::new(vec![2, 1, 1], vec![-0.6, -0.8]).unwrap();
    assert_eq!(target_map(&p, &anti).unwrap().data(), &[0.0]);
    let zero = Tensor::zeros(&[2, 1, 1]);
    assert_eq!(target_map(&p, &zero).unwrap().data(), &[0.0]);
    assert!(target_map(&[0.0, 0.0], &par).is_err());
    assert!(target_map(&[1.0], &par).is_err());
}

#[test]
fn guidance_cases() {
    let a = Tensor::randn(&[2, 3], 1.0, &mut rng(6));
    assert_eq!(guidance_loss(&a, &a).unwrap().0, 0.0);
    let (l, _) = guidance_loss(&Tensor::full(&[2, 2], 1.0), &Tensor::zeros(&[2, 2])).unwrap();
    assert_eq!(l, 4.0);
    assert!(guidance_loss(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[4])).is_err());

    let target = Tensor::randn(&[2, 3], 1.0, &mut rng(7));
    let res = grad_check(a.data(), 1e-5, |t| {
        let a = Tensor::new(vec![2, 3], t.to_vec()).unwrap();
        guidance_loss(&target, &a).unwrap()
    })
    .unwrap();
    assert!(res.max_rel_error < 1e-8, "{res:?}");
}

#[test]
fn pooling_cases() {
    let f = Tensor::randn(&[4, 3, 2], 1.0, &mut rng(8));
    let (e, _) = attend_pool(&f, &Tensor::full(&[3, 2], 0.3)).unwrap();
    let mean = unit(pool(&f, Pool::SpatialMean).unwrap().into_data());
    for (a, b) in e.data().iter().zip(&mean) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    let mut onehot = Tensor::zeros(&[3, 2]);
    onehot.data_mut()[3] = 1.0;
    let (e, _) = attend_pool(&f, &onehot).unwrap();
    let col = unit((0..4).map(|c| f.data()[c * 6 + 3]).collect());
    for (a, b) in e.data().iter().zip(&col) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    assert!(attend_pool(&f, &Tensor::zeros(&[3, 2])).is_err());
    assert!((e.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn pooling_gradient() {
    let mut r = rng(9);
    let f = Tensor::randn(&[4, 3, 2], 1.0, &mut r).into_data();
    let a: Vec<f64> = (0..6).map(|_| rand::Rng::random_range(&mut r, 0.1..0.9)).collect();
    let c = Tensor::randn(&[4], 1.0, &mut r).into_data();
    let theta = [f, a].concat();
    let res = grad_check(&theta, 1e-5, |t| {
        let f = Tensor::new(vec![4, 3, 2], t[..24].to_vec()).unwrap();
        let a = Tensor::new(vec![3, 2], t[24..].to_vec()).unwrap();
        let (e, tr) = attend_pool(&f, &a).unwrap();
        let (gf, ga) = attend_pool_backward(&f, &a, &tr, &c).unwrap();
        (dot(e.data(), &c), [gf, ga].concat())
    })
    .unwrap();
    assert!(res.max_rel_error < 1e-6, "{res:?}");
}

/// A model and patch whose relu inputs all sit at least `margin` from zero.
fn clear_model(margin: f64) -> (TpsModel, Tensor) {
    for seed in 0.. {
        let mut r = rng(100 + seed);
        let model = TpsModel::new(small_config(), 7, 3, &mut r).unwrap();
        let patch = Tensor::randn(&[3, 12, 8], 1.0, &mut r);
        if model.forward_image(&patch).unwrap().min_abs_preactivation() > margin {
            return (model, patch);
        }
    }
    unreachable!()
}

#[test]
fn image_path_gradient_with_fixed_target() {
    let (model, patch) = clear_model(1e-3);
    let fwd = model.forward_image(&patch).unwrap();
    let c = Tensor::randn(&[fwd.embedding.len()], 1.0, &mut rng(11)).into_data();
    let target = Tensor::new(
        fwd.attention.shape().to_vec(),
        (0..fwd.attention.len()).map(|i| (i % 3) as f64 / 2.0).collect(),
    )
    .unwrap();
    let theta = model.flat_params();
    let res = grad_check(&theta, 1e-5, |t| {
        let mut m = model.clone();
        m.set_flat_params(t).unwrap();
        m.zero_grads();
        let out = tpan_forward_with_target(&m, &patch, Some(&target)).unwrap();
        let loss = dot(out.forward.embedding.data(), &c) + out.guide;
        let g_a = out.guide_grad.clone();
        m.backward_image(out.forward, &c, &g_a).unwrap();
        (loss, m.flat_grads())
    })
    .unwrap();
    assert!(res.max_rel_error < 1e-4, "{res:?}");
}

#[test]
fn modes_branch_as_documented() {
    let (model, patch) = clear_model(0.0);
    let f_t = model.embed_text(&[1, 2, 3]).unwrap().into_data();
    let mut table = PrototypeTable::new(3, 8, 0.5).unwrap();

    let base = tpan_forward(&model, &patch, GuideSource::for_mode(Mode::Baseline, Some(&table), 1, &f_t).unwrap()).unwrap();
    assert_eq!(base.guide, 0.0);
    assert!(base.target.is_none());

    let tian = tpan_forward(&model, &patch, GuideSource::for_mode(Mode::Tian, None, 1, &f_t).unwrap()).unwrap();
    let cold = tpan_forward(&model, &patch, GuideSource::for_mode(Mode::Tpan, Some(&table), 1, &f_t).unwrap()).unwrap();
    assert!(cold.fell_back);
    assert_eq!(cold.guide, tian.guide);

    table.set_row(1, &f_t).unwrap();
    let warm = tpan_forward(&model, &patch, GuideSource::for_mode(Mode::Tpan, Some(&table), 1, &f_t).unwrap()).unwrap();
    assert!(!warm.fell_back);
    assert_eq!(warm.guide, tian.guide);
    assert!(tian.guide > 0.0);
    assert!(GuideSource::for_mode(Mode::Tpan, None, 1, &f_t).is_err());
}

#[test]
fn pgm_and_csv_layout() {
    let m = Tensor::new(vec![2, 3], vec![0.0, 0.5, 1.0, 1.2, -0.1, 0.25]).unwrap();
    assert_eq!(map_to_pgm(&m).unwrap(), "P2\n3 2\n255\n0 128 255\n255 0 64\n");
    assert_eq!(map_to_csv(&m).unwrap().lines().count(), 2);
    let dir = tempfile::tempdir().unwrap();
    let files = write_attention_maps(dir.path(), "scene_0001", 2, &m, Some(&m)).unwrap();
    let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(
        names,
        ["scene_0001_2_A.pgm", "scene_0001_2_A.csv", "scene_0001_2_Atarget.pgm", "scene_0001_2_Atarget.csv"]
    );
}

proptest! {
    #[test]
    fn ema_contracts_geometrically(
        lambda in prop::sample::select(vec![0.1, 0.5, 0.9]),
        steps in 1usize..=50,
        p0 in prop::collection::vec(-1.0f64..1.0, 4),
        f in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let mut t = PrototypeTable::new(1, 4, lambda).unwrap();
        t.set_row(0, &p0).unwrap();
        for _ in 0..steps {
            t.update(0, &f).unwrap();
        }
        let dist = |p: &[f64]| p.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let expect = lambda.powi(steps as i32) * dist(&p0);
        prop_assert!((dist(t.row(0).unwrap()) - expect).abs() <= 1e-12);
    }

    #[test]
    fn update_touches_one_row(k in 0usize..5, f in prop::collection::vec(-1.0f64..1.0, 3)) {
        let mut t = PrototypeTable::new(5, 3, 0.5).unwrap();
        for j in 0..5 {
            t.set_row(j, &[j as f64, 1.0, -1.0]).unwrap();
        }
        let before = t.clone();
        t.update(k, &f).unwrap();
        for j in (0..5).filter(|&j| j != k) {
            prop_assert_eq!(t.row(j), before.row(j));
        }
    }

    #[test]
    fn target_map_is_scale_invariant(
        p in prop::collection::vec(-1.0f64..1.0, 3),
        f in prop::collection::vec(-1.0f64..1.0, 12),
        c in 0.01f64..100.0,
        loc_scale in prop::collection::vec(0.01f64..100.0, 4),
    ) {
        prop_assume!(p.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let fc = Tensor::new(vec![3, 2, 2], f.clone()).unwrap();
        let base = target_map(&p, &fc).unwrap();
        let scaled_p: Vec<f64> = p.iter().map(|v| v * c).collect();
        let a = target_map(&scaled_p, &fc).unwrap();
        let scaled_f: Vec<f64> = f.iter().enumerate().map(|(i, v)| v * loc_scale[i % 4]).collect();
        let b = target_map(&p, &Tensor::new(vec![3, 2, 2], scaled_f).unwrap()).unwrap();
        for ((x, y), z) in base.data().iter().zip(a.data()).zip(b.data()) {
            prop_assert!((0.0..=1.0).contains(x));
            prop_assert!((x - y).abs() < 1e-9 && (x - z).abs() < 1e-9);
        }
    }

    #[test]
    fn guidance_nonnegative_and_zero_only_on_equality(
        a in prop::collection::vec(0.0f64..1.0, 6),
        b in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let ta = Tensor::new(vec![2, 3], a.clone()).unwrap();
        let tb = Tensor::new(vec![2, 3], b.clone()).unwrap();
        let (l, _) = guidance_loss(&ta, &tb).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, a == b);
    }
}
