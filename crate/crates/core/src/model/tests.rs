use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::scene::{pad_future, remove_translation_at};

fn random_window(
    rng: &mut ChaCha8Rng,
    real: usize,
    slots: usize,
    c: &ModelConfig,
) -> TrajectoryWindow {
    let (j, h, t) = (c.joints, c.history_len, c.future_len);
    let mut hist = vec![0.0; slots * j * 3 * h];
    let mut fut = vec![0.0; slots * j * 3 * t];
    for s in 0..real {
        let base = [rng.gen_range(-3.0..3.0), 0.0, rng.gen_range(-3.0..3.0)];
        for jj in 0..j {
            for axis in 0..3 {
                let row = (s * j + jj) * 3 + axis;
                let v0 = base[axis] + rng.gen_range(-0.5..0.5);
                let vel = rng.gen_range(-0.1..0.1);
                for f in 0..h {
                    hist[row * h + f] = v0 + vel * f as f64;
                }
                for f in 0..t {
                    fut[row * t + f] = v0 + vel * (h + f) as f64 + rng.gen_range(-0.01..0.01);
                }
            }
        }
    }
    let mask = (0..slots).map(|s| s < real).collect();
    TrajectoryWindow::new(h, t, j, hist, Some(fut), mask).unwrap()
}

fn zero_velocity(w: &TrajectoryWindow) -> Vec<f64> {
    let (h, t) = (w.history_len(), w.future_len());
    w.history()
        .chunks(h)
        .flat_map(|row| std::iter::repeat_n(row[h - 1], t))
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Random output head, so equivalence checks exercise the whole network.
fn trained_like(c: ModelConfig, seed: u64) -> SoMoFormer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = SoMoFormer::new(c, &mut rng).unwrap();
    for name in ["head.weight", "head.bias"] {
        for v in m.params_mut().by_name_mut(name).unwrap().data_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
    m
}

#[test]
fn presets_validate() {
    for name in ["tiny", "small", "desk", "full"] {
        ModelConfig::preset(name).unwrap().validate().unwrap();
    }
    assert_eq!(ModelConfig::full().d_model(), 1024);
    assert_eq!(ModelConfig::tiny().d_model(), 32);
    assert!(ModelConfig::preset("huge").is_err());
    let bad = ModelConfig {
        heads: 5,
        ..ModelConfig::tiny()
    };
    assert!(bad.validate().is_err());
    let bad = ModelConfig {
        layer_loss_weights: vec![1.0],
        ..ModelConfig::tiny()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn token_count_and_static_tokens() {
    let c = ModelConfig::desk();
    let basis = DctBasis::new(c.seq_len()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = random_window(&mut rng, 2, 2, &c);
    let local = remove_translation_at(&w, 0).unwrap();
    assert_eq!(tokenize(&local, &basis).unwrap().len(), 78 * c.seq_len());
    assert!(tokenize(&w, &basis).is_err());

    let (h, t) = (c.history_len, c.future_len);
    let hist: Vec<f64> = (0..13 * 3)
        .flat_map(|r| std::iter::repeat_n(r as f64 * 0.1, h))
        .collect();
    let still = TrajectoryWindow::new(h, t, 13, hist, None, vec![true]).unwrap();
    let local = remove_translation_at(&still, 0).unwrap();
    let tokens = tokenize(&local, &basis).unwrap();
    let n = c.seq_len() as f64;
    for (r, tok) in tokens.chunks(c.seq_len()).enumerate() {
        let expected = local.history_row(0, r / 3, r % 3)[0] * n.sqrt();
        assert!((tok[0] - expected).abs() < 1e-9);
        assert!(tok[1..].iter().all(|v| v.abs() < 1e-9));
    }
}

#[test]
fn tokens_invert_to_padded_rows() {
    let c = ModelConfig::tiny();
    let basis = DctBasis::new(c.seq_len()).unwrap();
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(2), 2, 2, &c);
    let local = remove_translation_at(&w, 0).unwrap();
    let back = basis.inverse(&tokenize(&local, &basis).unwrap()).unwrap();
    let padded = pad_future(local.history(), c.history_len, c.future_len);
    assert!(max_diff(&back, &padded) < 1e-9);
}

fn roots_window(roots: &[[f64; 2]]) -> TrajectoryWindow {
    let hist: Vec<f64> = roots
        .iter()
        .flat_map(|r| {
            [r[0], 1.5, r[1]]
                .into_iter()
                .flat_map(|v| std::iter::repeat_n(v, 2))
        })
        .collect();
    TrajectoryWindow::new(2, 1, 1, hist, None, vec![true; roots.len()]).unwrap()
}

#[test]
fn grid_cell_examples() {
    assert_eq!(
        assign_grid_cells(&roots_window(&[[3.0, -7.0]]), 0, 5).unwrap(),
        vec![12]
    );
    assert_eq!(
        assign_grid_cells(&roots_window(&[[0.0, 0.0], [2.0, 2.0]]), 0, 5).unwrap(),
        vec![0, 24]
    );
    let padded = roots_window(&[[0.0, 0.0], [2.0, 2.0]]).packed(3).unwrap();
    assert_eq!(assign_grid_cells(&padded, 0, 5).unwrap()[..2], [0, 24]);
}

#[test]
fn grid_boundary_goes_to_higher_cell() {
    // Square of side 1.05 * 4.2 = 4.41 from -0.105; with G = 7 the cell
    // width is 0.63, so x = -0.105 + 2 * 0.63 = 1.155 sits on a boundary.
    let roots = [[0.0, 0.0], [4.2, 0.0], [1.155, 0.0]];
    let cells = assign_grid_cells(&roots_window(&roots), 0, 7).unwrap();
    let reference = |x: f64| {
        let (side, lo) = (4.2 * 1.05, 2.1 - 4.2 * 1.05 / 2.0);
        (((x - lo) / side * 7.0).floor() as usize).min(6)
    };
    assert_eq!(cells[2] / 7, reference(1.155));
    assert_eq!(cells[2] / 7, 2);
    assert_eq!(
        cells.iter().map(|c| c / 7).collect::<Vec<_>>(),
        vec![0, 6, 2]
    );
}

#[test]
fn embedding_composition() {
    let c = ModelConfig::tiny();
    let mut m = SoMoFormer::new(c.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let q = c.queries(2);
    let ids = m.ids().clone();
    let run = |m: &SoMoFormer, tokens: Vec<f64>| {
        let mut tape = Tape::new();
        let tok = tape.constant(Tensor::new(&[q, c.seq_len()], tokens).unwrap());
        let e = embed_tokens(&mut tape, m.params(), &ids, &c, tok, 2, &[3, 7]).unwrap();
        assert_eq!(tape.shape(e), [q, c.d_model()]);
        tape.value(e).data().to_vec()
    };
    let tokens: Vec<f64> = (0..q * c.seq_len())
        .map(|i| (i as f64 * 0.37).sin())
        .collect();
    let out = run(&m, tokens.clone());
    let d = c.d_model();
    let id = m
        .params()
        .by_name("embed.identity")
        .unwrap()
        .data()
        .to_vec();
    // Query 1 (slot 0) and query 1 + 9 (slot 1) share joint and axis.
    let same_tokens: Vec<f64> = {
        let mut t = tokens.clone();
        let s = c.seq_len();
        let row: Vec<f64> = t[s..2 * s].to_vec();
        t[10 * s..11 * s].copy_from_slice(&row);
        t
    };
    let out2 = run(&m, same_tokens);
    for k in 0..c.d_token {
        let diff = out2[10 * d + k] - out2[d + k];
        assert!((diff - (id[c.d_token + k] - id[k])).abs() < 1e-12);
    }
    assert_ne!(out, out2);

    for (_, t) in m.params_mut().iter_mut() {
        t.data_mut().fill(0.0);
    }
    assert!(run(&m, vec![0.0; q * c.seq_len()])
        .iter()
        .all(|&v| v == 0.0));
    let mut tape = Tape::new();
    let tok = tape.constant(Tensor::zeros(&[q, c.seq_len()]));
    assert!(embed_tokens(&mut tape, m.params(), &ids, &c, tok, 2, &[3, 25]).is_err());
}

#[test]
fn zero_head_gives_zero_residuals_and_normalised_attention() {
    let c = ModelConfig::tiny();
    let m = SoMoFormer::new(c.clone(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(6), 1, 2, &c);
    let mut tape = Tape::new();
    let pass = m.forward_on_tape(&mut tape, &w, None).unwrap();
    assert_eq!(pass.layer_futures.len(), c.layers);
    for &r in &pass.residuals {
        assert!(tape.value(r).data().iter().all(|&v| v == 0.0));
    }
    let p = m.forward(&w).unwrap();
    assert_eq!(p.attention.layers.len(), c.layers);
    for l in 0..c.layers {
        for h in 0..c.heads {
            for q in 0..p.attention.num_queries() {
                let row = p.attention.row(l, h, q);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row[9..].iter().all(|&v| v == 0.0));
            }
        }
    }
    assert!(
        max_diff(
            &p.future[..9 * c.future_len],
            &zero_velocity(&w)[..9 * c.future_len]
        ) < 1e-9
    );
    assert!(p.future[9 * c.future_len..].iter().all(|&v| v == 0.0));
}

#[test]
fn decode_examples() {
    let c = ModelConfig::tiny();
    let basis = DctBasis::new(c.seq_len()).unwrap();
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(7), 2, 2, &c);
    let local = remove_translation_at(&w, 0).unwrap();
    let tokens = tokenize(&local, &basis).unwrap();
    let offsets = local.root_offsets().unwrap().to_vec();
    let zero = vec![0.0; tokens.len()];
    let held = decode_prediction(&tokens, &zero, &basis, c.history_len, &offsets).unwrap();
    assert!(max_diff(&held, &zero_velocity(&w)) < 1e-9);

    // Residual that turns the padded input into the ground truth.
    let (h, t) = (c.history_len, c.future_len);
    let full: Vec<f64> = local
        .history()
        .chunks(h)
        .zip(local.future().unwrap().chunks(t))
        .flat_map(|(a, b)| a.iter().chain(b).copied().collect::<Vec<_>>())
        .collect();
    let target = basis.forward(&full).unwrap();
    let residual: Vec<f64> = target.iter().zip(&tokens).map(|(a, b)| a - b).collect();
    let exact = decode_prediction(&tokens, &residual, &basis, h, &offsets).unwrap();
    assert!(max_diff(&exact, w.future().unwrap()) < 1e-9);

    let v = [0.25, -1.0, 3.5];
    let moved: Vec<[f64; 3]> = offsets
        .iter()
        .map(|o| [o[0] + v[0], o[1] + v[1], o[2] + v[2]])
        .collect();
    let shifted = decode_prediction(&tokens, &residual, &basis, h, &moved).unwrap();
    for (i, (a, b)) in shifted.iter().zip(&exact).enumerate() {
        assert!((a - b - v[(i / t) % 3]).abs() < 1e-12);
    }
}

#[test]
fn fresh_model_is_zero_velocity() {
    let c = ModelConfig::tiny();
    let m = SoMoFormer::new(c.clone(), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let w = random_window(&mut rng, 2, 2, &c);
        assert!(max_diff(&m.predict(&w).unwrap(), &zero_velocity(&w)) < 1e-9);
    }
}

#[test]
fn padded_slots_do_not_leak() {
    let c = ModelConfig {
        n_slots: 4,
        ..ModelConfig::tiny()
    };
    let m = trained_like(c.clone(), 10);
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(11), 2, 2, &c);
    let base = m.predict(&w).unwrap();
    for slots in 3..=4 {
        let padded = m.predict(&w.packed(slots).unwrap()).unwrap();
        assert!(max_diff(&base, &padded[..base.len()]) < 1e-9);
    }
}

#[test]
fn translation_and_permutation_equivariance() {
    let c = ModelConfig {
        n_slots: 3,
        ..ModelConfig::tiny()
    };
    let m = trained_like(c.clone(), 12);
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(13), 3, 3, &c);
    let base = m.forward(&w).unwrap();

    let v = [1.5, -0.25, -2.0];
    let mut moved = w.clone();
    moved.map_points(|p| [p[0] + v[0], p[1] + v[1], p[2] + v[2]]);
    let shifted = m.forward(&moved).unwrap();
    assert_eq!(shifted.cells, base.cells);
    for (i, (a, b)) in shifted.future.iter().zip(&base.future).enumerate() {
        assert!((a - b - v[(i / c.future_len) % 3]).abs() < 1e-9);
    }

    let perm = [2, 0, 1];
    let permuted_window = w.permuted(&perm).unwrap();
    let mut conj = m.clone();
    let table = m
        .params()
        .by_name("embed.identity")
        .unwrap()
        .data()
        .to_vec();
    let dst = conj
        .params_mut()
        .by_name_mut("embed.identity")
        .unwrap()
        .data_mut();
    for (src, &to) in perm.iter().enumerate() {
        dst[to * c.d_token..(to + 1) * c.d_token]
            .copy_from_slice(&table[src * c.d_token..(src + 1) * c.d_token]);
    }
    let out = conj.predict(&permuted_window).unwrap();
    let per_slot = c.joints * 3 * c.future_len;
    for (src, &to) in perm.iter().enumerate() {
        let a = &out[to * per_slot..(to + 1) * per_slot];
        let b = &base.future[src * per_slot..(src + 1) * per_slot];
        assert!(max_diff(a, b) < 1e-9);
    }
    // Without conjugating the identity rows the outputs genuinely differ.
    let raw = m.predict(&permuted_window).unwrap();
    assert!(max_diff(&raw[..per_slot], &base.future[per_slot..2 * per_slot]) > 1e-6);
}

#[test]
fn window_shape_errors() {
    let c = ModelConfig::tiny();
    let m = SoMoFormer::new(c.clone(), &mut ChaCha8Rng::seed_from_u64(14)).unwrap();
    let w = random_window(&mut ChaCha8Rng::seed_from_u64(15), 2, 2, &c);
    assert!(m.predict(&w.packed(3).unwrap()).is_err());
    let empty =
        TrajectoryWindow::new(4, 4, 3, vec![0.0; 2 * 9 * 4], None, vec![false, false]).unwrap();
    assert!(m.predict(&empty).is_err());
    let short = TrajectoryWindow::new(3, 4, 3, vec![0.0; 9 * 3], None, vec![true]).unwrap();
    let msg = m.predict(&short).unwrap_err().to_string();
    assert!(msg.contains("t=4"), "{msg}");
    let future_less = w.clone().without_future();
    assert_eq!(m.predict(&future_less).unwrap(), m.predict(&w).unwrap());
}
