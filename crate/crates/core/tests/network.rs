use odl::checkpoint::{decode, encode_network, header_bytes, load_network, save_checkpoint};
use odl::model::Model;
use odl::net::{EncoderDecoder, NetworkConfig};
use odl::nn::gradcheck::{grad_check, GradCheckOptions};
use odl::nn::{gaussian_init, mse_loss, Adam, Mode};
use odl::rng::Stream;
use odl::{Dims, Tensor4};

fn cfg(widths: Vec<usize>) -> NetworkConfig {
    NetworkConfig {
        input_channels: 1,
        encoder_channels: widths,
        seed: 5,
        ..NetworkConfig::default()
    }
}

fn batch(n: usize, seed: u64) -> Tensor4<f64> {
    let mut rng = Stream::new(seed);
    Tensor4::from_fn(Dims::new(n, 1, 64, 64), |_, _, _, _| rng.uniform_in(-1.0, 1.0))
}

#[test]
fn eval_restore_is_pure_and_bounded() {
    let net = EncoderDecoder::<f64>::build(cfg(vec![4, 8, 8, 8])).unwrap();
    let x = batch(3, 1).map(|v| v * 5.0);
    let a = net.restore(&x).unwrap();
    assert_eq!(a, net.restore(&x).unwrap());
    assert_eq!(a.dims(), x.dims());
    assert!(a.data().iter().all(|v| v.is_finite() && v.abs() < 1.0));
}

#[test]
fn own_output_as_target_gives_zero_loss_and_no_update() {
    let mut net = EncoderDecoder::<f64>::build(cfg(vec![4, 4, 4, 4])).unwrap();
    let x = batch(4, 2);
    let mut probe = net.clone();
    let target = probe.forward(&x, Mode::Train).unwrap();
    let before: Vec<_> = net.parameters().iter().map(|p| p.value.clone()).collect();
    let loss = net.train_step(&x, &target, &Adam::default()).unwrap();
    assert_eq!(loss, 0.0);
    let after: Vec<_> = net.parameters().iter().map(|p| p.value.clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn returned_loss_matches_independent_mse() {
    let mut net = EncoderDecoder::<f64>::build(cfg(vec![4, 4, 4, 4])).unwrap();
    let (x, y) = (batch(4, 3), batch(4, 4).map(|v| v * 0.5));
    let mut probe = net.clone();
    let out = probe.forward(&x, Mode::Train).unwrap();
    let (oracle, _) = mse_loss(&out, &y).unwrap();
    let loss = net.train_step(&x, &y, &Adam::default()).unwrap();
    assert!((loss - oracle).abs() < 1e-12);
}

#[test]
fn overfits_one_batch() {
    let mut net = EncoderDecoder::<f32>::build(cfg(vec![8, 16, 16, 16])).unwrap();
    let scenes = odl::data::synthetic_images(4, 1, 64, 5);
    let y = Tensor4::stack(scenes.iter().map(|r| &r.pixels)).unwrap().cast::<f32>();
    let mut rng = Stream::new(6);
    let x = y.map(|v| v + 0.2 * rng.normal() as f32);
    let adam = Adam::default();
    let first = net.train_step(&x, &y, &adam).unwrap();
    let mut losses = vec![first];
    while losses.len() < 500 && *losses.last().unwrap() >= 0.1 * first {
        losses.push(net.train_step(&x, &y, &adam).unwrap());
    }
    let last = *losses.last().unwrap();
    assert!(last < 0.1 * first, "{first} -> {last} after {} steps", losses.len());
    // Adam with momentum wobbles step to step; the trend must fall strictly.
    let sampled: Vec<f64> = losses.iter().step_by(10).copied().collect();
    assert!(sampled.windows(2).all(|w| w[1] < w[0]), "{sampled:?}");
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut net = EncoderDecoder::<f32>::build(cfg(vec![4, 8, 8, 8])).unwrap();
    let x = batch(4, 7).cast::<f32>();
    for _ in 0..3 {
        net.train_step(&x, &x, &Adam::default()).unwrap();
    }
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("n.odlr");
    save_checkpoint(&net, None, &path).unwrap();
    let back = load_network::<f32>(&path).unwrap();
    assert_eq!(back.restore(&x).unwrap(), net.restore(&x).unwrap());
    for (a, b) in net.parameters().iter().zip(back.parameters()) {
        assert_eq!((&a.value, &a.adam_m, &a.adam_v, a.step_count), (&b.value, &b.adam_m, &b.adam_v, b.step_count));
    }
    let stats = |n: &EncoderDecoder<f32>| n.batchnorms().map(|b| b.running.clone()).collect::<Vec<_>>();
    assert_eq!(stats(&net), stats(&back));
}

#[test]
fn checkpoint_size_matches_count_oracle() {
    let c = NetworkConfig::default();
    let mut net = EncoderDecoder::<f64>::build(c.clone()).unwrap();
    let mut rng = Stream::new(9);
    for p in net.parameters_mut() {
        p.value = gaussian_init(p.dims(), 0.1, &mut rng);
    }
    let bytes = encode_network(&net, None);

    // Geometry from first principles, not from the built network.
    let mut widths = vec![c.input_channels];
    widths.extend(&c.encoder_channels);
    let mut param_lens = Vec::new();
    let mut bn_channels = Vec::new();
    for w in widths.windows(2) {
        param_lens.extend([w[1] * w[0] * 16, w[1]]);
        param_lens.extend([w[1], w[1]]);
        bn_channels.push(w[1]);
    }
    let s = c.latent_spatial * c.latent_spatial;
    let top = *widths.last().unwrap();
    param_lens.extend([top * s * s, top * s]);
    for w in widths.windows(2).rev() {
        param_lens.extend([w[1] * w[0] * 16, w[0]]);
    }
    let scalars: usize = param_lens.iter().map(|l| 3 * l + 1).sum::<usize>() + bn_channels.iter().map(|c| 2 * c).sum::<usize>();
    let tensor_headers = param_lens.len() * (3 * (4 + 16) + 4) + bn_channels.len() * 2 * (4 + 4);
    assert_eq!(bytes.len(), header_bytes(&c) + tensor_headers + 8 * scalars);

    let Model::Network(back) = decode::<f64>(&bytes).unwrap().model else { panic!("network expected") };
    assert_eq!(back.parameter_count(), param_lens.iter().sum::<usize>());
}

// Composite check: relu kinks inside the net are not steered around, so a
// perturbation may straddle one. The looser tolerance covers that.
#[test]
fn whole_network_matches_finite_differences() {
    let mut rng = Stream::new(0xacce);
    let mut net = EncoderDecoder::<f64>::build(NetworkConfig {
        input_channels: 1,
        input_size: 16,
        encoder_channels: vec![3, 4, 4, 5],
        latent_spatial: 1,
        seed: 3,
    })
    .unwrap();
    for p in net.parameters_mut() {
        p.value = gaussian_init(p.dims(), 0.4, &mut rng);
    }
    let x = gaussian_init(Dims::new(3, 1, 16, 16), 1.0, &mut rng);
    let opts = GradCheckOptions {
        max_coords: 60,
        floor: 1e-5,
        tolerance: 1e-3,
        ..GradCheckOptions::default()
    };
    let r = grad_check(&mut net, &x, &opts).unwrap();
    assert!(r.max_rel_error() < 1e-3, "{r}");
}
