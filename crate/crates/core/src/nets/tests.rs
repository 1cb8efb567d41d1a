use super::params::parameter_count;
use super::*;
use crate::diffengine::Tape;

fn tiny(labels: usize) -> ModelConfig {
    ModelConfig::new(2, labels, 1, 8, 4, 2)
}

fn unet_count(p: &ModelParams<f64>) -> usize {
    p.names()
        .iter()
        .zip(p.tensors())
        .filter(|(n, _)| n.starts_with("unet."))
        .map(|(_, t)| t.len())
        .sum()
}

#[test]
fn unet_parameter_count_is_frozen() {
    // enc 276, mid 1092, up 66, dec 438, head 6
    let p = ModelParams::<f64>::init(tiny(2), 0).unwrap();
    assert_eq!(unet_count(&p), 1878);
    assert_eq!(p.count(), parameter_count(p.config()));
}

#[test]
fn autoencoder_count_scales_with_labels() {
    let one = parameter_count(&tiny(1));
    let three = parameter_count(&tiny(3));
    let unet = |l| {
        let p = ModelParams::<f64>::init(tiny(l), 0).unwrap();
        unet_count(&p)
    };
    let ae = |total: usize, l| total - unet(l);
    assert_eq!(ae(three, 3), 3 * ae(one, 1));
}

fn ramp(n: usize) -> Volume {
    Volume::new([n, n, n], (0..n * n * n).map(|j| ((j * 37) % 101) as f32 / 100.0).collect()).unwrap()
}

#[test]
fn zero_head_gives_uniform_probabilities() {
    let mut p = ModelParams::<f64>::init(tiny(4), 3).unwrap();
    p.get_mut("unet.head.weight").unwrap().data_mut().fill(0.0);
    let out = infer(&p, &ramp(8)).unwrap();
    assert!(out.y.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
}

#[test]
fn probabilities_lie_on_the_simplex() {
    let p = ModelParams::<f64>::init(tiny(3), 11).unwrap();
    let out = infer(&p, &ramp(8)).unwrap();
    assert_eq!(out.y.shape(), [3, 8, 8, 8]);
    let sp = 512;
    for j in 0..sp {
        let s: f64 = (0..3).map(|i| out.y.data()[i * sp + j]).sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!((0..3).all(|i| out.y.data()[i * sp + j] >= 0.0));
    }
}

#[test]
fn zero_input_with_zero_biases_gives_zero_codes() {
    let p = ModelParams::<f64>::init(tiny(2), 5).unwrap();
    let out = infer(&p, &Volume::zeros([8, 8, 8])).unwrap();
    for (z, e) in out.z.iter().zip(&out.e) {
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(e.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn embedding_length_follows_ae_channels() {
    for ca in [4, 8, 16, 32, 64] {
        let cfg = ModelConfig::new(2, 2, 1, 8, ca, 2);
        let p = ModelParams::<f32>::init(cfg, 1).unwrap();
        let out = infer(&p, &ramp(8)).unwrap();
        assert_eq!(out.e.len(), 2);
        assert!(out.e.iter().all(|e| e.shape() == [ca]));
        assert!(out.z.iter().all(|z| z.shape() == [1, 8, 8, 8]));
    }
}

#[test]
fn init_is_deterministic_and_he_scaled() {
    let cfg = ModelConfig::new(8, 2, 1, 8, 4, 2);
    let a = ModelParams::<f64>::init(cfg, 9).unwrap();
    let b = ModelParams::<f64>::init(cfg, 9).unwrap();
    let c = ModelParams::<f64>::init(cfg, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    // 8×8×27 = 1728 weights with sd² = 2/216
    let w = a.get("unet.enc0.conv1.weight").unwrap().data();
    let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    let expect = 2.0 / 216.0;
    assert!((var / expect - 1.0).abs() < 0.1, "{var} vs {expect}");
    assert!(a.get("unet.enc0.conv1.bias").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let p = ModelParams::<f32>::init(tiny(2), 21).unwrap();
    p.save(&path).unwrap();
    let q = ModelParams::<f32>::load(&path).unwrap();
    assert_eq!(p, q);
    let x = ramp(8);
    let (a, b) = (infer(&p, &x).unwrap(), infer(&q, &x).unwrap());
    assert_eq!(a.y.data(), b.y.data());
    assert_eq!(a.e[1].data(), b.e[1].data());
}

#[test]
fn checkpoint_keeps_extra_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let p = ModelParams::<f32>::init(tiny(1), 2).unwrap();
    let mut ck = p.to_checkpoint();
    ck.meta.insert("epoch".into(), "7".into());
    ck.tensors.push(("extra.state".into(), Tensor::full([3], 1.5)));
    ck.save(&path).unwrap();
    let mut back = Checkpoint::<f32>::load(&path).unwrap();
    let q = ModelParams::from_checkpoint(&mut back).unwrap();
    assert_eq!(p, q);
    assert_eq!(back.meta["epoch"], "7");
    assert_eq!(back.take("extra.state").unwrap().data(), [1.5; 3]);
}

#[test]
fn truncated_blob_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ModelParams::<f32>::init(tiny(1), 2).unwrap().save(&path).unwrap();
    let blob = checkpoint::blob_path(&path);
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(ModelParams::<f32>::load(&path), Err(Error::Format { .. })));
}

#[test]
fn compose_reconstruction_cases() {
    let w = Mask::new([1, 1, 3], vec![1, 1, 0]).unwrap();
    let y = Tensor::new([2, 1, 1, 3], vec![1.0, 0.25, 0.5, 0.0, 0.75, 0.5]).unwrap();
    let z = vec![
        Tensor::new([1, 1, 1, 3], vec![2.0, 4.0, 9.0]).unwrap(),
        Tensor::new([1, 1, 1, 3], vec![5.0, 8.0, 9.0]).unwrap(),
    ];
    let x = compose_reconstruction(&y, &z, &w).unwrap();
    assert_eq!(x.data(), [2.0, 7.0, 0.0]);
    assert!(compose_reconstruction(&y, &z[..1], &w).is_err());
}

#[test]
fn joint_gradient_reaches_both_networks() {
    let p = ModelParams::<f64>::init(tiny(2), 4).unwrap();
    let mut tape = Tape::new();
    let net = p.bind(&mut tape, true).unwrap();
    let x = tape.constant(ramp(8).to_tensor()).unwrap();
    let out = autoatlas_forward(&mut tape, &net, x).unwrap();
    let d = tape.sub(x, out.z[0]).unwrap();
    let sq = tape.mul(d, d).unwrap();
    let y0 = tape.channel(out.y, 0).unwrap();
    let prod = tape.mul(sq, y0).unwrap();
    let loss = tape.sum(prod).unwrap();
    let vars = net.vars().to_vec();
    let grads = tape.backward(loss).unwrap();
    let norm = |name: &str| {
        let v = vars[p.index_of(name).unwrap()];
        grads.get(v).unwrap().data().iter().map(|g| g * g).sum::<f64>()
    };
    assert!(norm("unet.head.weight") > 0.0);
    assert!(norm("unet.enc0.conv0.weight") > 0.0);
    assert!(norm("ae0.fc_in.weight") > 0.0);
    assert!(norm("ae0.enc0.weight") > 0.0);
    // autoencoder 1 does not feed this loss
    assert_eq!(norm("ae1.fc_in.weight"), 0.0);
}

#[test]
fn single_label_is_degenerate_but_valid() {
    let p = ModelParams::<f64>::init(tiny(1), 8).unwrap();
    let out = infer(&p, &ramp(8)).unwrap();
    assert!(out.y.data().iter().all(|&v| v == 1.0));
    assert_eq!(out.z.len(), 1);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(ModelConfig::new(2, 0, 1, 8, 4, 2).validate().is_err());
    assert!(ModelConfig::new(2, 2, 2, 6, 4, 1).validate().is_err());
    assert!(ModelConfig::new(2, 2, 1, 8, 4, 4).validate().is_err());
    assert!(ModelConfig::new(0, 2, 1, 8, 4, 2).validate().is_err());
    let p = ModelParams::<f64>::init(tiny(2), 0).unwrap();
    assert!(infer(&p, &ramp(16)).is_err());
}

#[test]
fn paper_scale_shapes() {
    let cfg = ModelConfig::paper_scale(16);
    cfg.validate().unwrap();
    assert_eq!(cfg.autoencoder.bottleneck(), 6);
    assert_eq!(cfg.labels(), 16);
}
