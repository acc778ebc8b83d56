use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::sim::scene::SceneModel;

fn norm() -> TargetNorm {
    TargetNorm::from_workspace(&SceneModel::default().workspace)
}

fn random_input<T: Scalar>(cfg: &ModelConfig, seed: u64) -> SpectrogramTensor<T> {
    let mut rng = derived_rng(seed, &[99]);
    let n = cfg.channels * cfg.input_t * cfg.input_f;
    let data = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
    SpectrogramTensor::new(cfg.channels, cfg.input_t, cfg.input_f, data, 312.5, 156.25).unwrap()
}

/// Generic parameters: every group away from its special init value.
fn scrambled(cfg: ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::zeros(cfg, norm()).unwrap();
    let mut rng = derived_rng(seed, &[98]);
    let dist = Normal::new(0.0, 0.1).unwrap();
    for spec in p.layout().specs.clone() {
        let base = if spec.name.ends_with(".g") { 1.0 } else { 0.0 };
        for v in &mut p.data[spec.range()] {
            *v = base + dist.sample(&mut rng);
        }
    }
    p
}

#[test]
fn token_counts() {
    let c = ModelConfig::desk(61, 65);
    assert_eq!(c.grid(), (5, 5));
    assert_eq!(c.num_patches(), 25);
    assert_eq!(c.tokens(), 26);
    assert_eq!(ModelConfig::desk(16, 16).num_patches(), 1);
    assert!(matches!(ModelConfig::desk(15, 65).validate(), Err(Error::Shape(_))));
    for t in 16..80 {
        for s in 1..17 {
            let c = ModelConfig { stride: s, ..ModelConfig::desk(t, 40) };
            let nt = (0..).take_while(|i| i * s + 16 <= t).count();
            assert_eq!(c.grid().0, nt);
        }
    }
}

#[test]
fn desk_parameter_count() {
    let (c, k, d, n, depth) = (7usize, 16usize, 64usize, 26usize, 2usize);
    let patch = d * c * k * k + d;
    let tokens = d + n * d;
    // ln1 + qkv + proj + ln2 + fc1 + fc2
    let block = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (4 * d * d + 4 * d) + (4 * d * d + d);
    let tail = 2 * d + 3 * d + 3;
    let expected = patch + tokens + depth * block + tail;
    assert_eq!(expected, 216_771);
    let p = ModelParams::<f32>::init(ModelConfig::desk(61, 65), norm(), 0).unwrap();
    assert_eq!(p.num_params(), expected);
    let from_shapes: usize = p.tensors().map(|(s, _)| s.shape.iter().product::<usize>()).sum();
    assert_eq!(from_shapes, expected);
}

#[test]
fn init_rules() {
    let cfg = ModelConfig::desk(61, 65);
    let a = ModelParams::<f32>::init(cfg, norm(), 3).unwrap();
    assert_eq!(a, ModelParams::<f32>::init(cfg, norm(), 3).unwrap());
    assert_ne!(a, ModelParams::<f32>::init(cfg, norm(), 4).unwrap());
    for (spec, vals) in a.tensors() {
        if spec.name.ends_with(".g") {
            assert!(vals.iter().all(|&v| v == 1.0), "{}", spec.name);
        } else if spec.name.ends_with(".b") {
            assert!(vals.iter().all(|&v| v == 0.0), "{}", spec.name);
        } else {
            assert!(vals.iter().all(|&v| v.abs() <= 0.04 + 1e-7), "{}", spec.name);
        }
    }
    let w = a.tensor("patch.w").unwrap();
    let sd = (w.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
    // a normal truncated at 2 sigma keeps 0.88 of its standard deviation
    assert!((sd - 0.02 * 0.8796).abs() < 0.0005, "{sd}");
}

#[test]
fn head_passthrough() {
    let cfg = ModelConfig::desk(61, 65);
    let mut p = ModelParams::<f64>::init(cfg, norm(), 1).unwrap();
    p.tensor_mut("head.w").unwrap().fill(0.0);
    p.tensor_mut("head.b").unwrap().copy_from_slice(&[0.25, -0.5, 0.75]);
    let x = SpectrogramTensor::new(7, 61, 65, vec![0.0; 7 * 61 * 65], 1.0, 1.0).unwrap();
    let out = forward(&p, &[&x]).unwrap();
    assert_eq!(out, vec![[0.25, -0.5, 0.75]]);
    let pred = predict(&p, &[&x]).unwrap()[0];
    assert_eq!(pred.position_mm, [25.0, -50.0, 262.5]);
}

#[test]
fn target_norm_round_trip() {
    let n = norm();
    assert_eq!(n.normalize(&[100.0, -100.0, 150.0]), [1.0, -1.0, 0.0]);
    let mut rng = derived_rng(5, &[]);
    for _ in 0..1000 {
        let p = [rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0), rng.gen_range(0.0..300.0)];
        let back = n.denormalize(&n.normalize(&p));
        for k in 0..3 {
            assert!((back[k] - p[k]).abs() <= 1e-12 * p[k].abs().max(1.0));
        }
    }
}

#[test]
fn attention_rows_are_distributions() {
    let cfg = ModelConfig::desk(61, 65);
    let p = scrambled(cfg, 2);
    let maps = attention_maps(&p, &random_input(&cfg, 1)).unwrap();
    assert_eq!(maps.len(), 2);
    let n = cfg.tokens();
    for m in maps {
        assert_eq!(m.len(), cfg.heads * n * n);
        for row in m.chunks(n) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn batch_permutation_equivariance() {
    let cfg = ModelConfig::desk(61, 65);
    let p = scrambled(cfg, 3);
    let xs: Vec<SpectrogramTensor<f64>> = (0..20).map(|i| random_input(&cfg, i)).collect();
    let refs: Vec<&SpectrogramTensor<f64>> = xs.iter().collect();
    let out = forward(&p, &refs).unwrap();
    let perm: Vec<usize> = (0..20).map(|i| (i * 7) % 20).collect();
    let permuted: Vec<&SpectrogramTensor<f64>> = perm.iter().map(|&i| &xs[i]).collect();
    let out2 = forward(&p, &permuted).unwrap();
    for (j, &i) in perm.iter().enumerate() {
        for k in 0..3 {
            assert!((out2[j][k] - out[i][k]).abs() < 1e-12);
        }
    }
}

#[test]
fn shape_errors() {
    let cfg = ModelConfig::desk(61, 65);
    let p = ModelParams::<f64>::init(cfg, norm(), 0).unwrap();
    let x = random_input::<f64>(&ModelConfig::desk(60, 65), 0);
    assert!(matches!(forward(&p, &[&x]), Err(Error::Shape(_))));
    assert!(matches!(patch_embed(&x, &p), Err(Error::Shape(_))));
    let ok = random_input::<f64>(&cfg, 0);
    assert_eq!(patch_embed(&ok, &p).unwrap().len(), 26 * 64);
    assert!(matches!(loss_and_grad(&p, &[&ok], &[]), Err(Error::Shape(_))));
}

#[test]
fn patch_embed_matches_direct_sum() {
    let cfg = ModelConfig::tiny();
    let p = scrambled(cfg, 4);
    let x = random_input::<f64>(&cfg, 4);
    let tokens = patch_embed(&x, &p).unwrap();
    let d = cfg.embed_dim;
    let (w, b, pos, cls) = (p.tensor("patch.w").unwrap(), p.tensor("patch.b").unwrap(), p.tensor("pos").unwrap(), p.tensor("cls").unwrap());
    for k in 0..d {
        assert!((tokens[k] - (cls[k] + pos[k])).abs() < 1e-12);
    }
    // patch (1, 1) starts at frame 10, bin 10; it is token 1 + 1*2 + 1 = 4
    for o in 0..d {
        let mut acc = b[o] + pos[4 * d + o];
        for c in 0..7 {
            for dt in 0..16 {
                for df in 0..16 {
                    acc += w[o * 1792 + c * 256 + dt * 16 + df] * x.at(c, 10 + dt, 10 + df);
                }
            }
        }
        assert!((tokens[4 * d + o] - acc).abs() < 1e-10);
    }
}

#[test]
fn mse_examples() {
    let t: [[f64; 3]; 2] = [[0.1, 0.2, 0.3], [-0.5, 0.0, 0.9]];
    assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
    assert!((mse_loss::<f64>(&[[1.0, 0.0, 0.0]], &[[0.0, 0.0, 0.0]]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    let p = [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
    let a = mse_loss(&p, &t).unwrap();
    let b = mse_loss(&[p[1], p[0]], &[t[1], t[0]]).unwrap();
    assert!((a - b).abs() < 1e-15);
    assert!(mse_loss::<f64>(&[], &[]).is_err());
}

#[test]
fn finite_difference_gradients() {
    let cfg = ModelConfig::tiny();
    let p = scrambled(cfg, 11);
    let xs: Vec<SpectrogramTensor<f64>> = (0..3).map(|i| random_input(&cfg, 20 + i)).collect();
    let refs: Vec<&SpectrogramTensor<f64>> = xs.iter().collect();
    let targets = [[0.3, -0.2, 0.9], [-0.7, 0.1, 0.0], [0.5, 0.5, -0.5]];
    let (_, grads) = loss_and_grad(&p, &refs, &targets).unwrap();
    let loss = |q: &ModelParams<f64>| mse_loss(&forward(q, &refs).unwrap(), &targets).unwrap();
    let h = 1e-4;
    let mut q = p.clone();
    for spec in p.layout().specs.clone() {
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for i in spec.range() {
            let orig = q.data[i];
            q.data[i] = orig + h;
            let up = loss(&q);
            q.data[i] = orig - h;
            let down = loss(&q);
            q.data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            diff += (numeric - grads.data[i]).powi(2);
            na += grads.data[i].powi(2);
            nn += numeric.powi(2);
        }
        let rel = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-300);
        assert!(na > 0.0, "{} has an all-zero gradient", spec.name);
        assert!(rel < 1e-4, "{}: relative error {rel:e}", spec.name);
    }
}

#[test]
fn zero_loss_gives_zero_head_gradient() {
    let cfg = ModelConfig::tiny();
    let p = scrambled(cfg, 12);
    let x = random_input::<f64>(&cfg, 3);
    let target = forward(&p, &[&x]).unwrap();
    let (loss, g) = loss_and_grad(&p, &[&x], &target).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.tensor("head.w").unwrap().iter().all(|&v| v == 0.0));
    assert!(g.tensor("head.b").unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn duplicated_batch_gradient_equals_single() {
    let cfg = ModelConfig::tiny();
    let p = scrambled(cfg, 13);
    let x = random_input::<f64>(&cfg, 5);
    let t = [[0.1, 0.2, -0.3]];
    let (l1, g1) = loss_and_grad(&p, &[&x], &t).unwrap();
    let (l2, g2) = loss_and_grad(&p, &[&x, &x], &[t[0], t[0]]).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in g1.data.iter().zip(&g2.data) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gradient_is_reproducible_across_chunks() {
    let cfg = ModelConfig::tiny();
    let p = scrambled(cfg, 14).cast::<f32>();
    let xs: Vec<SpectrogramTensor<f32>> = (0..40).map(|i| random_input(&cfg, i)).collect();
    let refs: Vec<&SpectrogramTensor<f32>> = xs.iter().collect();
    let t: Vec<[f32; 3]> = (0..40).map(|i| [i as f32 / 40.0, 0.0, -0.5]).collect();
    let a = loss_and_grad(&p, &refs, &t).unwrap();
    let b = loss_and_grad(&p, &refs, &t).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = ModelConfig::desk(61, 65);
    let p = ModelParams::<f32>::init(cfg, norm(), 9).unwrap();
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), "9".to_string());
    save_checkpoint(&p, &meta, &path).unwrap();
    let back = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(back.meta, meta);
    assert_eq!(back.params.config, cfg);
    assert!(p.data.iter().zip(&back.params.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(load_checkpoint_expecting::<f32>(&path, &cfg).is_ok());
    let other = ModelConfig { depth: 3, ..cfg };
    assert!(matches!(load_checkpoint_expecting::<f32>(&path, &other), Err(Error::ConfigMismatch(_))));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Corrupt { .. })));
    std::fs::write(&path, &bytes[..4]).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Corrupt { .. })));
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0; 4]);
    std::fs::write(&path, &extra).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Corrupt { .. })));
}

use std::collections::BTreeMap;
