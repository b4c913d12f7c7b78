use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::Coord;
use crate::structure::ResidueFeatures;
use crate::synth;
use crate::tensor::{Padding, Precision, Tape, Tensor};

fn small() -> HyperParams {
    HyperParams {
        d_model: 8,
        n_heads: 2,
        segment_half_len: 2,
        max_contacts: 4,
        d_contact: 8,
        cnn_channels: [4, 6, 6],
        head_hidden: 4,
        n_enc_layers: 2,
        n_tx_layers: 2,
        ffn_mult: 2,
        ..Default::default()
    }
}

/// Receptor and ligand close enough to touch.
fn docked(seed: u64, nr: usize, nl: usize) -> (ComponentInput, ComponentInput) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rec = synth::random_component(nr, Coord::zeros(), &mut rng);
    let lig = synth::random_component(nl, Coord::new(16.0, 0.0, 0.0), &mut rng);
    (rec, lig)
}

#[test]
fn attention_rows_are_distributions_over_neighbours() {
    let w = init_weights(&small(), 1).unwrap();
    let (rec, _) = docked(2, 30, 10);
    let maps = Scorer::<f64>::new(&w).attention_maps(&rec, Side::Receptor).unwrap();
    assert_eq!(maps.len(), 2 * 2);
    let n = rec.ca.len();
    for m in &maps {
        for i in 0..n {
            let row = m.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (j, &p) in row.iter().enumerate() {
                if (rec.ca[i] - rec.ca[j]).norm() >= 16.0 && i != j {
                    assert_eq!(p, 0.0);
                }
            }
        }
    }
}

#[test]
fn distant_residues_do_not_interact() {
    let w = init_weights(&small(), 3).unwrap();
    let scorer = Scorer::<f64>::new(&w);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = synth::random_features(2, &mut rng);
    let pair = ComponentInput::new(vec![Coord::zeros(), Coord::new(100.0, 0.0, 0.0)], f.clone()).unwrap();
    let e = scorer.encode(&pair, Side::Receptor).unwrap();
    for i in 0..2 {
        let one = ResidueFeatures {
            matrix: Tensor::new(vec![1, 24], f.matrix.row(i).to_vec()).unwrap(),
        };
        let alone = scorer
            .encode(&ComponentInput::new(vec![Coord::zeros()], one).unwrap(), Side::Receptor)
            .unwrap();
        let diff = e.embeddings.row(i).iter().zip(alone.embeddings.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }
}

#[test]
fn encoder_shape_invariance_and_equivariance() {
    let w = init_weights(&small(), 5).unwrap();
    let scorer = Scorer::<f64>::new(&w);
    let (rec, _) = docked(6, 25, 10);
    let e = scorer.encode(&rec, Side::Receptor).unwrap().embeddings;
    assert_eq!(e.shape(), &[25, 8]);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = synth::random_rigid_transform(&mut rng, 50.0);
    let moved = scorer.encode(&rec.transformed(&t), Side::Receptor).unwrap().embeddings;
    assert!(e.max_abs_diff(&moved) < 1e-10);

    let perm: Vec<usize> = (0..25).map(|i| (i * 7 + 3) % 25).collect();
    let ca: Vec<Coord> = perm.iter().map(|&p| rec.ca[p]).collect();
    let rows: Vec<f64> = perm.iter().flat_map(|&p| rec.features.matrix.row(p).to_vec()).collect();
    let permuted = ComponentInput::new(ca, ResidueFeatures { matrix: Tensor::new(vec![25, 24], rows).unwrap() }).unwrap();
    let ep = scorer.encode(&permuted, Side::Receptor).unwrap().embeddings;
    for (k, &p) in perm.iter().enumerate() {
        for c in 0..8 {
            assert!((ep.at(&[k, c]) - e.at(&[p, c])).abs() < 1e-10);
        }
    }
    let bad = ComponentInput {
        ca: rec.ca[..3].to_vec(),
        features: rec.features.clone(),
    };
    assert!(scorer.encode(&bad, Side::Receptor).is_err());
}

#[test]
fn fused_contact_codes_match_explicit_descriptor_route() {
    let h = small();
    let w = init_weights(&h, 8).unwrap();
    let scorer = Scorer::<f64>::new(&w);
    let (rec, lig) = docked(9, 30, 20);
    let r = scorer.encode(&rec, Side::Receptor).unwrap();
    let l = scorer.encode(&lig, Side::Ligand).unwrap();
    let contacts = scorer.contacts(&r.ca, &l.ca);
    assert!(contacts.len() >= 2, "{contacts:?}");

    let mut tape = Tape::inference();
    let b = Bound::bind(&mut tape, &w);
    let (re, le) = (tape.param(&r.embeddings), tape.param(&l.embeddings));
    let fused = contact_codes(&mut tape, &b, &[(re, le, &contacts)]).unwrap().unwrap();
    let fused = tape.value(fused).clone();

    for (k, c) in contacts.iter().enumerate() {
        let sr = extract_segment(&r.embeddings, c.i, h.segment_half_len).unwrap();
        let sl = extract_segment(&l.embeddings, c.j, h.segment_half_len).unwrap();
        let e = build_interaction_descriptor(&sr, &sl).unwrap();
        let ev = tape.constant(e);
        let code = encode_contact(&mut tape, &b, ev).unwrap();
        let diff = tape
            .value(code)
            .data()
            .iter()
            .zip(fused.row(k))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "contact {k}: {diff}");
    }
}

#[test]
fn contact_encoder_examples() {
    let h = HyperParams::default();
    let mut w = init_weights(&h, 10).unwrap();
    let zero = Tensor::zeros(vec![21, 21, 128]);
    let mut tape = Tape::inference();
    let b = Bound::bind(&mut tape, &w);
    let z = tape.constant(zero);
    let c = encode_contact(&mut tape, &b, z).unwrap();
    assert_eq!(tape.value(c).shape(), &[1, 128]);
    assert!(tape.value(c).data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let e = synth::random_features(21 * 21, &mut rng).matrix;
    let desc = Tensor::new(vec![21, 21, 24], e.into_data()).unwrap();
    let small_desc: Tensor<f64> = Tensor::from_fn(vec![21, 21, 128], |k| desc.data()[k % desc.len()] - 0.3);
    let before = {
        let mut tape = Tape::inference();
        let b = Bound::bind(&mut tape, &w);
        let v = tape.constant(small_desc.clone());
        let c = encode_contact(&mut tape, &b, v).unwrap();
        tape.value(c).clone()
    };
    for name in ["cnn.proj.w", "cnn.proj.b"] {
        let t = w.get(name).map(|v| 2.0 * v);
        *w.get_mut(name) = t;
    }
    let mut tape = Tape::inference();
    let b = Bound::bind(&mut tape, &w);
    let v = tape.constant(small_desc);
    let after = encode_contact(&mut tape, &b, v).unwrap();
    assert_eq!(tape.value(after).data(), before.map(|v| 2.0 * v).data());
}

fn transformer_logit(w: &ModelWeights, tokens: &Tensor<f64>, valid: usize, slots: usize) -> f64 {
    let mut tape = Tape::inference();
    let b = Bound::bind(&mut tape, w);
    let t = tape.constant(tokens.clone());
    let z = interaction_transformer(&mut tape, &b, t, valid, slots).unwrap();
    tape.value(z).item()
}

#[test]
fn transformer_is_order_invariant_and_ignores_padding() {
    let w = init_weights(&HyperParams::default(), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let tokens = Tensor::new(vec![5, 128], synth::random_features(5 * 128 / 24 + 1, &mut rng).matrix.into_data()[..640].to_vec()).unwrap();
    let base = transformer_logit(&w, &tokens, 5, 9);
    let order = [3, 0, 4, 1, 2];
    let rows: Vec<f64> = order.iter().flat_map(|&r| tokens.row(r).to_vec()).collect();
    let shuffled = Tensor::new(vec![5, 128], rows).unwrap();
    assert!((transformer_logit(&w, &shuffled, 5, 9) - base).abs() < 1e-10);

    let one = Tensor::new(vec![1, 128], tokens.row(0).to_vec()).unwrap();
    let bare = transformer_logit(&w, &one, 1, 0);
    assert!((transformer_logit(&w, &one, 1, 9) - bare).abs() < 1e-10);
    // Junk in padded rows is masked out as well.
    assert!((transformer_logit(&w, &tokens, 1, 9) - bare).abs() < 1e-10);
}

#[test]
fn scores_are_probabilities_and_rigid_motion_invariant() {
    let w = init_weights(&small(), 14).unwrap();
    let (rec, lig) = docked(15, 30, 20);
    let s64 = score_complex(&rec, &lig, &w, Precision::F64).unwrap();
    let s32 = score_complex(&rec, &lig, &w, Precision::F32).unwrap();
    assert!(!s64.no_contact());
    assert!((0.0..=1.0).contains(&s64.score));
    assert!((s64.score - s32.score).abs() < 1e-5);
    assert_eq!(s64, score_complex(&rec, &lig, &w, Precision::F64).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..5 {
        let t = synth::random_rigid_transform(&mut rng, 40.0);
        let m64 = score_complex(&rec.transformed(&t), &lig.transformed(&t), &w, Precision::F64).unwrap();
        let m32 = score_complex(&rec.transformed(&t), &lig.transformed(&t), &w, Precision::F32).unwrap();
        assert!((m64.score - s64.score).abs() < 1e-10);
        assert!((m32.score - s32.score).abs() < 1e-8);
    }
}

#[test]
fn far_ligand_scores_zero_with_flag() {
    let w = init_weights(&small(), 17).unwrap();
    let (rec, lig) = docked(18, 20, 10);
    let away = lig.transformed(&crate::geometry::RigidTransform::translation(Coord::new(100.0, 0.0, 0.0)));
    let s = score_complex(&rec, &away, &w, Precision::F32).unwrap();
    assert!(s.no_contact());
    assert_eq!(s.score, 0.0);
    assert_eq!(s.logit, None);
}

#[test]
fn cached_encodings_give_identical_scores() {
    let w = init_weights(&small(), 19).unwrap();
    let scorer = Scorer::<f32>::new(&w);
    let (rec, lig) = docked(20, 30, 20);
    let r = scorer.encode(&rec, Side::Receptor).unwrap();
    let l = scorer.encode(&lig, Side::Ligand).unwrap();
    let t = crate::geometry::RigidTransform::from_euler_zyx(0.1, 0.05, -0.1, Coord::new(1.0, 0.5, 0.0));
    let cached = scorer.score_encoded(&r, &l.transformed(&t)).unwrap();
    let direct = scorer.score(&rec, &lig.transformed(&t)).unwrap();
    assert_eq!(cached.contacts, direct.contacts);
    assert!((cached.score - direct.score).abs() < 1e-6);
}

#[test]
fn unshared_encoders_differ_per_side() {
    let h = HyperParams {
        shared_encoder: false,
        ..small()
    };
    let w = init_weights(&h, 21).unwrap();
    let scorer = Scorer::<f64>::new(&w);
    let (rec, _) = docked(22, 12, 5);
    let a = scorer.encode(&rec, Side::Receptor).unwrap().embeddings;
    let b = scorer.encode(&rec, Side::Ligand).unwrap().embeddings;
    assert!(a.max_abs_diff(&b) > 1e-6);
}

fn complex_loss<'a>(
    tape: &mut Tape<'a, f64>,
    b: &Bound<'a, f64>,
    rec: &ComponentInput,
    lig: &ComponentInput,
    contacts: &ContactSet,
) -> crate::Result<crate::tensor::Var> {
    let fr = tape.constant(rec.features.matrix.clone());
    let fl = tape.constant(lig.features.matrix.clone());
    let re = encode_protein(tape, b, Side::Receptor, fr, &rec.ca)?;
    let le = encode_protein(tape, b, Side::Ligand, fl, &lig.ca)?;
    let z = complex_logits(tape, b, &[(re, le, contacts)])?[0].expect("contacts present");
    tape.bce_with_logits(z, &[1.0], None)
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let h = small();
    let w = init_weights(&h, 23).unwrap();
    let (rec, lig) = docked(24, 16, 12);
    let contacts = Scorer::<f64>::new(&w).contacts(&rec.ca, &lig.ca);
    assert!(!contacts.is_empty());
    let mut tape = Tape::new();
    let b = Bound::bind(&mut tape, &w);
    let l = complex_loss(&mut tape, &b, &rec, &lig, &contacts).unwrap();
    let vars = b.vars().to_vec();
    let mut grads = tape.backward(l).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.take(v)).collect();
    let cfg = crate::tensor::GradCheckConfig {
        max_coords: 12,
        ..Default::default()
    };
    let report = crate::tensor::grad_check(
        w.tensors(),
        &analytic,
        |ps| {
            let ws = w.with_tensors(ps.to_vec())?;
            let mut tape = Tape::inference();
            let b = Bound::bind(&mut tape, &ws);
            let l = complex_loss(&mut tape, &b, &rec, &lig, &contacts)?;
            Ok(tape.value(l).item())
        },
        &cfg,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{:?}", report.params.iter().filter(|p| p.max_rel_error > 1e-4).collect::<Vec<_>>());
    assert!(report.checked() > 200);
}

#[test]
fn explicit_conv_padding_is_same() {
    let w = init_weights(&small(), 25).unwrap();
    let mut tape = Tape::inference();
    let b = Bound::bind(&mut tape, &w);
    let x = tape.constant(Tensor::full(vec![1, 5, 5, 16], 0.1));
    let y = tape.conv2d(x, b.var("cnn.conv1.w"), None, Padding::Same).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 5, 5, 4]);
}
