//! Structural properties of the SpecTNT graph and full-model gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectnt::autograd::{Tape, Var};
use spectnt::gradcheck::{gradcheck, GradCheckOptions};
use spectnt::model::{variant_param_count, FrameActivation, ModelConfig, OutputSpec, SpecTnt, Variant};
use spectnt::nn::{ForwardCtx, Init};
use spectnt::params::{ParamId, ParamStore};
use spectnt::Tensor;

fn micro(variant: Variant, o_d: OutputSpec) -> ModelConfig {
    ModelConfig {
        n_freq: 4,
        n_frames: 3,
        in_channels: 1,
        p_f: 1,
        p_t: 1,
        k: 8,
        d: 8,
        h_k: 2,
        h_d: 2,
        o_d,
        blocks: 2,
        dropout: 0.0,
        variant,
        conv_depth: 1,
        ffn_ratio: 4,
        frame_activation: FrameActivation::Softmax,
    }
}

fn build(cfg: &ModelConfig, std: f64, seed: u64) -> (SpecTnt, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = SpecTnt::build_with_init(cfg, &mut store, Init { std }, &mut rng).unwrap();
    (m, store)
}

fn random(shape: &[usize], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..shape.iter().product::<usize>()).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn zero(store: &mut ParamStore<f64>, ids: impl IntoIterator<Item = ParamId>) {
    for id in ids {
        store.get_mut(id).data_mut().fill(0.0);
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn full_model_gradcheck_all_variants() {
    let opts = GradCheckOptions::default();
    for variant in Variant::ALL {
        for o_d in [OutputSpec::Clip(3), OutputSpec::Frame(3)] {
            let cfg = micro(variant, o_d);
            let (model, store) = build(&cfg, 0.3, 7);
            let shape = model.input_shape(2);
            let x = random(&shape, 1);
            let w = random(&[2 * cfg.te_len() * 3], 2);
            let report = gradcheck(
                &store,
                |tape, p| {
                    let input = tape.constant(&shape, x.clone());
                    let y = model.forward(p, input, &mut ForwardCtx::eval())?;
                    let weights = tape.constant(&y.shape(), w[..y.numel()].to_vec());
                    Ok(y.mul(weights)?.sum())
                },
                &opts,
            )
            .unwrap();
            let worst = report.worst().unwrap();
            assert!(report.pass, "{variant} {o_d:?}: {} {}", worst.name, worst.max_rel_error);
        }
    }
}

/// Embeds a random input and returns (SE, TE) entering block 0.
fn embedded<'t>(
    model: &SpecTnt,
    tape: &'t Tape<f64>,
    p: &spectnt::params::Bound<'t, f64>,
    seed: u64,
) -> (Var<'t, f64>, Var<'t, f64>) {
    let shape = model.input_shape(1);
    model.embed(p, tape.constant(&shape, random(&shape, seed))).unwrap()
}

#[test]
fn block_preserves_shapes() {
    for variant in Variant::ALL {
        for o_d in [OutputSpec::Clip(3), OutputSpec::Frame(3)] {
            let (m, s) = build(&micro(variant, o_d), 0.3, 1);
            let tape = Tape::new();
            let p = s.bind(&tape);
            let (se, te) = embedded(&m, &tape, &p, 3);
            let (se2, te2) = m.block_forward(0, &p, se, te, &mut ForwardCtx::eval()).unwrap();
            assert_eq!(se.shape(), se2.shape());
            assert_eq!(te.shape(), te2.shape());
        }
    }
}

#[test]
fn a3_leaves_spectral_embedding_untouched() {
    let (m, s) = build(&micro(Variant::A3, OutputSpec::Clip(3)), 0.3, 1);
    let tape = Tape::new();
    let p = s.bind(&tape);
    let (se, te) = embedded(&m, &tape, &p, 3);
    let (se2, _) = m.block_forward(0, &p, se, te, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(se.value().as_slice(), se2.value().as_slice());
}

#[test]
fn zero_bridge_out_and_temporal_sublayers_keep_te() {
    for o_d in [OutputSpec::Clip(3), OutputSpec::Frame(3)] {
        let (m, mut s) = build(&micro(Variant::Full, o_d), 0.3, 1);
        let b = &m.blocks[0];
        let out = b.bridge_out.as_ref().unwrap();
        let t = &b.temp;
        zero(&mut s, [out.params(), t.attn.out.params(), t.ffn.fc2.params()].concat());
        let tape = Tape::new();
        let p = s.bind(&tape);
        let (se, te) = embedded(&m, &tape, &p, 3);
        let (_, te2) = m.block_forward(0, &p, se, te, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(te.value().as_slice(), te2.value().as_slice());
    }
}

#[test]
fn spectral_permutation_equivariance_with_fpe_zero() {
    let cfg = micro(Variant::Full, OutputSpec::Frame(3));
    let (m, mut s) = build(&cfg, 0.3, 4);
    zero(&mut s, [m.fpe]);
    let (t, rows, k) = (cfg.t_hat(), cfg.f_hat() + 1, cfg.k);
    let se_data = random(&[1, t, rows, k], 5);
    // permutation of the frequency rows that keeps the FCT at index 0
    let perm = [0, 3, 1, 4, 2];
    let permute = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for ti in 0..t {
            for (r, &src) in perm.iter().enumerate() {
                let (dst, from) = ((ti * rows + r) * k, (ti * rows + src) * k);
                out[dst..dst + k].copy_from_slice(&v[from..from + k]);
            }
        }
        out
    };
    let tape = Tape::new();
    let p = s.bind(&tape);
    let te = tape.constant(&[1, t, cfg.d], random(&[1, t, cfg.d], 6));
    let run = |data: Vec<f64>| {
        let se = tape.constant(&[1, t, rows, k], data);
        let (a, b) = m.block_forward(0, &p, se, te, &mut ForwardCtx::eval()).unwrap();
        (a.value().to_vec(), b.value().to_vec())
    };
    let (se_a, te_a) = run(se_data.clone());
    let (se_b, te_b) = run(permute(&se_data));
    assert!(max_diff(&permute(&se_a), &se_b) <= 1e-6);
    assert!(max_diff(&te_a, &te_b) <= 1e-6);
}

#[test]
fn spectral_encoding_is_frame_independent() {
    let cfg = micro(Variant::Full, OutputSpec::Frame(3));
    let (m, s) = build(&cfg, 0.3, 4);
    let (t, rows, k) = (cfg.t_hat(), cfg.f_hat() + 1, cfg.k);
    let frame = rows * k;
    let tape = Tape::new();
    let p = s.bind(&tape);
    let te = tape.constant(&[1, t, cfg.d], random(&[1, t, cfg.d], 6));
    let base = random(&[1, t, rows, k], 7);
    let mut changed = base.clone();
    for v in &mut changed[frame..2 * frame] {
        *v += 0.5;
    }
    let run = |data: Vec<f64>| {
        let se = tape.constant(&[1, t, rows, k], data);
        m.block_forward(0, &p, se, te, &mut ForwardCtx::eval()).unwrap().0.value().to_vec()
    };
    let (a, b) = (run(base), run(changed));
    for ti in 0..t {
        let d = max_diff(&a[ti * frame..(ti + 1) * frame], &b[ti * frame..(ti + 1) * frame]);
        if ti == 1 {
            assert!(d > 1e-3);
        } else {
            assert_eq!(d, 0.0, "frame {ti}");
        }
    }
}

#[test]
fn zero_bridge_out_isolates_te_from_input() {
    for variant in [Variant::Full, Variant::A1, Variant::A2] {
        for o_d in [OutputSpec::Clip(3), OutputSpec::Frame(3)] {
            let (m, mut s) = build(&micro(variant, o_d), 0.3, 2);
            let ids: Vec<ParamId> = m
                .blocks
                .iter()
                .flat_map(|b| b.bridge_out.as_ref().unwrap().params())
                .collect();
            zero(&mut s, ids);
            let tape = Tape::new();
            let p = s.bind(&tape);
            let shape = m.input_shape(1);
            let run = |seed| {
                let x = tape.constant(&shape, random(&shape, seed));
                m.encode(&p, x, &mut ForwardCtx::eval()).unwrap().value().to_vec()
            };
            assert_eq!(run(10), run(11), "{variant}");
        }
    }
}

#[test]
fn fpe_is_shared_and_local() {
    let cfg = micro(Variant::Full, OutputSpec::Frame(3));
    let (m, mut s) = build(&cfg, 0.3, 2);
    let (t, rows, k) = (cfg.t_hat(), cfg.f_hat() + 1, cfg.k);
    let frame = random(&[rows, k], 3);
    let se_data: Vec<f64> = (0..t).flat_map(|_| frame.clone()).collect();
    let apply = |s: &ParamStore<f64>| {
        let tape = Tape::new();
        let p = s.bind(&tape);
        let se = tape.constant(&[1, t, rows, k], se_data.clone());
        m.apply_fpe(&p, se).unwrap().value().to_vec()
    };
    let base = apply(&s);
    for ti in 1..t {
        assert_eq!(base[..rows * k], base[ti * rows * k..(ti + 1) * rows * k]);
    }
    s.get_mut(m.fpe).data_mut()[2 * k + 1] += 1.0;
    let bumped = apply(&s);
    for (i, (a, b)) in base.iter().zip(&bumped).enumerate() {
        let row = (i / k) % rows;
        assert_eq!(a != b, row == 2 && i % k == 1, "index {i}");
    }
    zero(&mut s, [m.fpe]);
    assert_eq!(apply(&s), se_data);
}

#[test]
fn clip_head_reads_only_class_token() {
    let cfg = micro(Variant::Full, OutputSpec::Clip(3));
    let (m, s) = build(&cfg, 0.3, 2);
    let tape = Tape::new();
    let p = s.bind(&tape);
    let shape = [1, cfg.te_len(), cfg.d];
    let te = random(&shape, 1);
    let mut other = te.clone();
    for v in &mut other[cfg.d..] {
        *v = -*v;
    }
    let out = |data| {
        let te = tape.constant(&shape, data);
        m.activate(m.head_logits(&p, te).unwrap()).unwrap().value().to_vec()
    };
    let a = out(te);
    assert_eq!(a, out(other));
    assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn zero_heads_give_uniform_outputs() {
    let clip = micro(Variant::Full, OutputSpec::Clip(50));
    let (m, mut s) = build(&clip, 0.3, 2);
    zero(&mut s, m.head.params());
    let y = m.predict(&s, &Tensor::new(&m.input_shape(1), random(&m.input_shape(1), 3)).unwrap()).unwrap();
    assert_eq!(y.shape(), &[1, 50]);
    assert!(y.data().iter().all(|&v| v == 0.5));

    let frame = micro(Variant::Full, OutputSpec::Frame(25));
    let (m, mut s) = build(&frame, 0.3, 2);
    zero(&mut s, m.head.params());
    let y = m.predict(&s, &Tensor::new(&m.input_shape(1), random(&m.input_shape(1), 3)).unwrap()).unwrap();
    assert!(y.data().iter().all(|&v| (v - 0.04).abs() < 1e-15));
}

#[test]
fn frame_head_is_shared_across_time() {
    let cfg = micro(Variant::Full, OutputSpec::Frame(4));
    let (m, s) = build(&cfg, 0.3, 2);
    let tape = Tape::new();
    let p = s.bind(&tape);
    let row = random(&[cfg.d], 4);
    let te = tape.constant(&[1, 3, cfg.d], row.iter().cycle().take(3 * cfg.d).copied().collect());
    let y = m.activate(m.head_logits(&p, te).unwrap()).unwrap().value().to_vec();
    assert_eq!(y[..4], y[4..8]);
    assert!((y[..4].iter().sum::<f64>() - 1.0).abs() < 1e-6);
    // a class token is a contract violation for frame heads
    let with_cls = tape.constant(&[1, 4, cfg.d], vec![0.0; 4 * cfg.d]);
    assert!(m.head_logits(&p, with_cls).is_err());
}

#[test]
fn conv_module_geometry() {
    let mut cfg = ModelConfig::tagging();
    cfg.n_frames = 196;
    let (m, s) = SpecTnt::init::<f32>(&cfg, 0).unwrap();
    let tape = Tape::inference();
    let p = s.bind(&tape);
    let x = tape.constant(&m.input_shape(1), vec![0.1; 196 * 128]);
    assert_eq!(m.conv_forward(&p, x).unwrap().shape(), vec![1, 49, 128, 96]);

    let mut chord = ModelConfig::chord();
    chord.n_frames = 8;
    let (m, s) = SpecTnt::init::<f32>(&chord, 0).unwrap();
    let p = s.bind(&tape);
    let x = tape.constant(&m.input_shape(1), vec![0.1; 8 * 24]);
    assert_eq!(m.conv_forward(&p, x).unwrap().shape(), vec![1, 8, 24, 64]);
}

#[test]
fn zero_conv_with_matching_channels_is_identity() {
    let mut cfg = micro(Variant::Full, OutputSpec::Frame(3));
    cfg.in_channels = cfg.k;
    let (m, mut s) = build(&cfg, 0.3, 2);
    zero(&mut s, [m.conv[0].conv2.0]);
    let tape = Tape::new();
    let p = s.bind(&tape);
    let shape = m.input_shape(1);
    let data = random(&shape, 9);
    let y = m.conv_forward(&p, tape.constant(&shape, data.clone())).unwrap();
    assert_eq!(y.value().as_slice(), data.as_slice());
}

#[test]
fn parameter_ordering_for_presets() {
    for cfg in [ModelConfig::tagging(), ModelConfig::melody(), ModelConfig::chord()] {
        let count = |v| variant_param_count(&cfg.clone().with_variant(v)).unwrap();
        let (full, a2, a3) = (count(Variant::Full), count(Variant::A2), count(Variant::A3));
        assert!(a3 < full && full < a2, "{a3} {full} {a2}");
    }
}

#[test]
fn a1_difference_is_bridge_in_minus_shared_fct() {
    for blocks in [1, 3] {
        let mut cfg = ModelConfig::tagging();
        cfg.blocks = blocks;
        let full = variant_param_count(&cfg).unwrap();
        let a1 = variant_param_count(&cfg.clone().with_variant(Variant::A1)).unwrap();
        let (d, k) = (cfg.d, cfg.k);
        assert_eq!(full - a1, blocks * (d * k + k) - k);
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let cfg = micro(Variant::A2, OutputSpec::Clip(3));
    let (m, s) = build(&cfg, 0.3, 2);
    let x = Tensor::new(&m.input_shape(2), random(&m.input_shape(2), 3)).unwrap();
    assert_eq!(m.predict(&s, &x).unwrap(), m.predict(&s, &x).unwrap());
}

#[test]
fn model_and_task_loss_gradcheck() {
    use spectnt::gradcheck::{check_model, micro_config, CheckObjective};
    for variant in Variant::ALL {
        for o_d in [OutputSpec::Clip(3), OutputSpec::Frame(3)] {
            let cfg = micro_config(variant, o_d);
            let report = check_model(&cfg, CheckObjective::TaskLoss, 7, &GradCheckOptions::default()).unwrap();
            let worst = report.worst().unwrap();
            assert!(report.pass, "{variant} {o_d:?}: {} {}", worst.name, worst.max_rel_error);
        }
    }
}

#[test]
fn gradcheck_with_fixed_dropout_masks() {
    use spectnt::gradcheck::{micro_config, CHECK_INIT_STD};
    use spectnt::train::bce_loss;
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            dropout: 0.3,
            ..micro_config(variant, OutputSpec::Clip(3))
        };
        let (model, store) = build(&cfg, CHECK_INIT_STD, 7);
        let shape = model.input_shape(2);
        let x = random(&shape, 4);
        let report = gradcheck(
            &store,
            |tape, p| {
                // same seed on every evaluation, so the masks are identical
                let mut ctx = ForwardCtx::train(ChaCha8Rng::seed_from_u64(3));
                let y = model.forward(p, tape.constant(&shape, x.clone()), &mut ctx)?;
                bce_loss(y, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0])
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        let worst = report.worst().unwrap();
        assert!(report.pass, "{variant}: {} {}", worst.name, worst.max_rel_error);
    }
}
