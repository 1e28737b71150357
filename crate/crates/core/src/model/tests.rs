use super::*;
use crate::optim::AdamConfig;
use alloc::string::ToString;
use rand::Rng;

pub(crate) fn tiny_config(mode: Mode, r: usize) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        conv_layers: 2,
        conv_kernel: 3,
        conv_channels: 8,
        conv_stride: 2,
        enc_layers: 2,
        dec_layers: 2,
        embed_dim: 8,
        ffn_dim: 12,
        enc_heads: 2,
        dec_heads: 2,
        aux: vec![AuxSpec { target: AuxTarget::SourceChars, attach_layer: 1 }],
        aux_layers: 1,
        aux_heads: 2,
        ctc_attach_layer: 1,
        units: 4,
        r,
        mode,
        src_vocab: 3,
        tgt_vocab: 3,
        src_units: 0,
        dropout: 0.0,
        label_smoothing: 0.2,
        lambda_aux: 0.5,
        lambda_ctc: 0.7,
        lambda_dur: 1.0,
        seed: 11,
    }
}

pub(crate) fn example(seed: u64, frames: usize, units: Vec<usize>) -> Example {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    Example {
        id: seed.to_string(),
        source: Mat::from_vec(frames, 3, data),
        units: UnitSequence(units),
        src_text: vec![0, 2, 1],
        tgt_text: vec![1, 0],
        src_units: None,
    }
}

#[test]
fn encoder_length_law() {
    let mut c = tiny_config(Mode::Reduced, 1);
    c.conv_kernel = 5;
    let m = S2UTModel::new(c.clone()).unwrap();
    for t in 1..100 {
        let src = Mat::filled(t, 3, 0.1);
        let rows = m.encode_source(&src).unwrap().rows;
        assert_eq!(rows, t.div_ceil(4), "T = {t}");
        assert_eq!(encoder_len(&c, t), rows);
    }
}

#[test]
fn deterministic_init_and_optional_heads() {
    let c = tiny_config(Mode::Stacked, 2);
    assert_eq!(S2UTModel::new(c.clone()).unwrap().params.checksum(), S2UTModel::new(c.clone()).unwrap().params.checksum());
    let mut bare = c.clone();
    bare.aux.clear();
    bare.ctc_attach_layer = 0;
    let m = S2UTModel::new(bare).unwrap();
    let b = Batch::new(&m.config, &[example(1, 9, vec![0, 0, 1, 2])]).unwrap();
    let l = m.forward_train(&b, None, None).unwrap();
    assert!(l.aux_losses.is_empty());
    assert_eq!(l.total, l.unit_loss);
    let mut bad = c;
    bad.aux[0].attach_layer = 3;
    assert!(matches!(S2UTModel::new(bad), Err(Error::Config(_))));
}

#[test]
fn step_accounting() {
    let units = UnitSequence(vec![1, 1, 1, 2, 2, 0, 0, 0, 0, 3]);
    assert_eq!(decode_steps(&tiny_config(Mode::Reduced, 5), &units).unwrap(), 5);
    assert_eq!(decode_steps(&tiny_config(Mode::Stacked, 5), &units).unwrap(), 3);
    assert_eq!(decode_steps(&tiny_config(Mode::Stacked, 3), &units).unwrap(), 4);
    assert_eq!(decode_steps(&tiny_config(Mode::R1, 1), &units).unwrap(), 11);
    let t = unit_targets(&tiny_config(Mode::Stacked, 3), &units).unwrap();
    assert_eq!(t.last().unwrap(), &vec![3, 4, 4]);
    let t = unit_targets(&tiny_config(Mode::Stacked, 5), &units).unwrap();
    assert_eq!(t.last().unwrap(), &vec![4; 5]);
}

#[test]
fn label_smoothed_ce_examples() {
    let logits = [1.0, 0.0, 0.0];
    let z = libm::log(libm::exp(1.0) + 2.0);
    let nll = [z - 1.0, z, z];
    let expect = 0.8 * nll[0] + 0.2 * (nll[0] + nll[1] + nll[2]) / 3.0;
    assert!((label_smoothed_ce(&logits, 0, 0.2).unwrap() - expect).abs() < 1e-15);
    assert!((label_smoothed_ce(&logits, 1, 0.0).unwrap() - z).abs() < 1e-15);
    assert!(label_smoothed_ce(&[50.0, 0.0], 0, 0.0).unwrap() < 1e-20);
    assert!(label_smoothed_ce(&logits, 3, 0.1).is_err());
}

#[test]
fn uniform_logits_give_log_v() {
    let mut c = tiny_config(Mode::Stacked, 2);
    c.lambda_aux = 0.0;
    c.lambda_ctc = 0.0;
    let mut m = S2UTModel::new(c).unwrap();
    for name in ["dec.head.weight", "dec.head.bias"] {
        let id = m.params.find(name).unwrap();
        m.params.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
    }
    let b = Batch::new(&m.config, &[example(3, 10, vec![0, 1, 1, 3, 2])]).unwrap();
    let l = m.forward_train(&b, None, None).unwrap();
    assert!((l.unit_loss - libm::log(5.0)).abs() < 1e-12);
    assert_eq!(l.total, l.unit_loss);
}

#[test]
fn total_is_weighted_sum() {
    let m = S2UTModel::new(tiny_config(Mode::Reduced, 1)).unwrap();
    let b = Batch::new(&m.config, &[example(3, 10, vec![0, 1, 1, 3, 2]), example(4, 7, vec![2, 2, 1])]).unwrap();
    let l = m.forward_train(&b, None, None).unwrap();
    assert_eq!(l.total - (l.unit_loss + 0.5 * l.aux_losses.iter().sum::<f64>() + 0.7 * l.ctc_loss), 0.0);
    assert!(l.components(&m.config).iter().all(|(_, v)| v.is_finite() && *v >= 0.0));
}

fn check_gradients(mode: Mode, r: usize) {
    let mut m = S2UTModel::new(tiny_config(mode, r)).unwrap();
    let b = Batch::new(&m.config, &[example(5, 11, vec![1, 1, 0, 3, 3, 3, 2])]).unwrap();
    let mut grads = Gradients::zeros_like(&m.params);
    m.forward_train(&b, None, Some(&mut grads)).unwrap();
    let h = 1e-5;
    let ids: Vec<ParamId> = m.params.iter().map(|(id, _, _)| id).collect();
    let mut worst = 0.0f64;
    for id in ids {
        for j in 0..m.params.get(id).data.len() {
            let orig = m.params.get(id).data[j];
            m.params.get_mut(id).data[j] = orig + h;
            let up = m.forward_train(&b, None, None).unwrap().total;
            m.params.get_mut(id).data[j] = orig - h;
            let down = m.forward_train(&b, None, None).unwrap().total;
            m.params.get_mut(id).data[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads.get(id).data[j];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(err);
            assert!(err < 1e-4, "{}[{j}]: fd {fd:e} analytic {an:e}", m.params.name(id));
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn total_loss_gradient_reduced() {
    check_gradients(Mode::Reduced, 1);
}

#[test]
fn total_loss_gradient_stacked() {
    check_gradients(Mode::Stacked, 3);
}

#[test]
fn padding_does_not_change_losses() {
    let m = S2UTModel::new(tiny_config(Mode::Stacked, 2)).unwrap();
    let a = example(6, 13, vec![0, 1, 1, 3, 2, 2, 2]);
    let bx = example(7, 5, vec![2, 3]);
    let single = m.forward_train(&Batch::new(&m.config, core::slice::from_ref(&bx)).unwrap(), None, None).unwrap();
    let mut padded = Batch::new(&m.config, &[bx]).unwrap();
    padded.pad_extra(&m.config, 9, 4);
    let p = m.forward_train(&padded, None, None).unwrap();
    assert!((single.total - p.total).abs() < 1e-6);
    let mut pair = Batch::new(&m.config, &[a.clone(), example(7, 5, vec![2, 3])]).unwrap();
    let l1 = m.forward_train(&pair, None, None).unwrap();
    pair.pad_extra(&m.config, 3, 2);
    let l2 = m.forward_train(&pair, None, None).unwrap();
    assert!((l1.total - l2.total).abs() < 1e-12);
}

#[test]
fn stacked_r1_matches_reduced_on_duplicate_free_targets() {
    let e = example(8, 12, vec![0, 2, 1, 3, 0]);
    let s = S2UTModel::new(tiny_config(Mode::Stacked, 1)).unwrap();
    let r = S2UTModel::new(tiny_config(Mode::Reduced, 1)).unwrap();
    assert_eq!(s.params.checksum(), r.params.checksum());
    let ls = s.forward_train(&Batch::new(&s.config, core::slice::from_ref(&e)).unwrap(), None, None).unwrap();
    let lr = r.forward_train(&Batch::new(&r.config, &[e]).unwrap(), None, None).unwrap();
    assert_eq!(ls.unit_loss, lr.unit_loss);
}

#[test]
fn infeasible_ctc_is_skipped() {
    let m = S2UTModel::new(tiny_config(Mode::Stacked, 4)).unwrap();
    let mut e = example(9, 8, vec![0, 1, 2]);
    e.tgt_text = vec![0, 0, 1, 2];
    let l = m.forward_train(&Batch::new(&m.config, &[e]).unwrap(), None, None).unwrap();
    assert_eq!(l.ctc_skipped, 1);
    assert_eq!(l.ctc_loss, 0.0);
}

fn toy_data() -> Vec<Example> {
    (0..10)
        .map(|i| {
            let n = 3 + i % 3;
            let units: Vec<usize> = (0..n).flat_map(|j| core::iter::repeat_n((i + j) % 4, 2)).collect();
            let mut e = example(100 + i as u64, 2 * n, units);
            e.tgt_text = (0..n).map(|j| (i + j) % 3).collect();
            e
        })
        .collect()
}

#[test]
fn fifty_steps_reduce_the_loss() {
    let mut c = tiny_config(Mode::Reduced, 1);
    c.dropout = 0.1;
    let mut state = TrainState::new(S2UTModel::new(c).unwrap(), AdamConfig::default());
    let cfg = TrainConfig { lr: 3e-3, warmup: 10, batch_size: 5, max_steps: 50, seed: 2, adam: AdamConfig::default(), specaugment: None };
    let rec = train(&mut state, &toy_data(), &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(rec.len(), 50);
    assert!(rec[49].loss.total < rec[0].loss.total);
}

#[test]
fn resumed_training_is_bit_identical() {
    let mut c = tiny_config(Mode::Stacked, 2);
    c.dropout = 0.2;
    let cfg = TrainConfig {
        lr: 1e-3,
        warmup: 4,
        batch_size: 3,
        max_steps: 8,
        seed: 9,
        adam: AdamConfig::default(),
        specaugment: Some(crate::units::MaskPolicy { freq_masks: 1, freq_width: 1, time_masks: 1, time_width: 2 }),
    };
    let data = toy_data();
    let mut straight = TrainState::new(S2UTModel::new(c.clone()).unwrap(), AdamConfig::default());
    train(&mut straight, &data, &cfg, |_, _| Ok(())).unwrap();
    let mut first = TrainState::new(S2UTModel::new(c.clone()).unwrap(), AdamConfig::default());
    let mut saved = None;
    train(&mut first, &data, &TrainConfig { max_steps: 5, ..cfg.clone() }, |r, s| {
        if r.step == 3 {
            saved = Some((s.model.params.clone(), s.adam.clone(), s.step));
        }
        Ok(())
    })
    .unwrap();
    let (params, adam, step) = saved.unwrap();
    let mut resumed = TrainState { model: S2UTModel::from_params(c, params).unwrap(), adam, step };
    train(&mut resumed, &data, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(resumed.model.params.checksum(), straight.model.params.checksum());
}

#[test]
fn non_finite_loss_names_component() {
    let mut m = S2UTModel::new(tiny_config(Mode::Reduced, 1)).unwrap();
    let id = m.params.find("aux0.head.bias").unwrap();
    m.params.get_mut(id).data[0] = f64::NAN;
    let mut state = TrainState::new(m, AdamConfig::default());
    let cfg = TrainConfig { lr: 1e-3, warmup: 4, batch_size: 2, max_steps: 2, seed: 1, adam: AdamConfig::default(), specaugment: None };
    let err = train(&mut state, &toy_data(), &cfg, |_, _| Ok(())).unwrap_err();
    assert_eq!(err, Error::NonFinite { component: "aux:source-chars".to_string(), step: 1 });
}

#[test]
fn rescoring_matches_stepwise_scores() {
    let m = S2UTModel::new(tiny_config(Mode::Stacked, 2)).unwrap();
    let e = example(12, 9, vec![0, 1, 1]);
    let mem = m.encode_source(&e.source).unwrap();
    let groups = unit_targets(&m.config, &e.units).unwrap();
    let mut inputs = shift_right(&m.config, &groups[..1]);
    let mut total = 0.0;
    for (i, grp) in groups.iter().enumerate() {
        if i > 0 {
            inputs.push(groups[i - 1].clone());
        }
        let (lp, _) = m.next_step(&mem, &inputs);
        total += grp.iter().enumerate().map(|(j, &t)| lp.get(j, t)).sum::<f64>();
    }
    assert!((total - m.score_groups(&mem, &groups)).abs() < 1e-9);
}
