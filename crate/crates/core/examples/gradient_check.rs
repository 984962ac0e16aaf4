//! Finite-difference check of every layer kind and of a small whole network.
//!
//! `cargo run --example gradient_check`

use odl::net::{EncoderDecoder, NetworkConfig};
use odl::nn::gradcheck::{grad_check, GradCheckOptions};
use odl::nn::{gaussian_init, Activation, ActivationKind, BatchNorm, ChannelwiseFc, Conv2d, ConvGeometry, Deconv2d, Module};
use odl::rng::Stream;
use odl::{Dims, Tensor4};

fn check<M: Module<f64>>(name: &str, layer: &mut M, input: Tensor4<f64>, opts: &GradCheckOptions) -> bool {
    let report = grad_check(layer, &input, opts).expect("shapes agree");
    println!("== {name}\n{report}\n");
    report.passed()
}

fn main() {
    let mut rng = Stream::new(1);
    let opts = GradCheckOptions::default();
    let x = |d: Dims, rng: &mut Stream| gaussian_init::<f64>(d, 1.0, rng);
    let mut ok = true;

    let g = ConvGeometry::new(2, 3, 4, 2, 1);
    let mut conv = Conv2d::<f64>::new("conv", g, 0.5, &mut rng).unwrap();
    ok &= check("conv 4x4 stride 2", &mut conv, x(Dims::new(2, 2, 8, 8), &mut rng), &opts);

    let mut deconv = Deconv2d::<f64>::new("deconv", g, 0.5, &mut rng).unwrap();
    ok &= check("deconv 4x4 stride 2", &mut deconv, x(Dims::new(2, 2, 4, 4), &mut rng), &opts);

    let mut bn = BatchNorm::<f64>::new("bn", 3, 1e-5, 0.1);
    ok &= check("batch norm", &mut bn, x(Dims::new(4, 3, 3, 3), &mut rng), &opts);

    let mut fc = ChannelwiseFc::<f64>::new("fc", 3, 4, 4, 0.5, &mut rng);
    ok &= check("channel-wise fc", &mut fc, x(Dims::new(2, 3, 4, 4), &mut rng), &opts);

    for kind in [ActivationKind::Relu, ActivationKind::LEAKY_RELU, ActivationKind::Tanh] {
        // Keep inputs off the kink at zero.
        let input = x(Dims::new(2, 2, 3, 3), &mut rng).map(|v| if v.abs() < 1e-2 { v + 0.1 } else { v });
        ok &= check(&format!("{kind:?}"), &mut Activation::<f64>::new(kind), input, &opts);
    }

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
    let whole = GradCheckOptions { max_coords: 60, floor: 1e-5, ..opts };
    ok &= check("whole network", &mut net, x(Dims::new(3, 1, 16, 16), &mut rng), &whole);

    println!("{}", if ok { "all layers pass" } else { "some layers FAIL" });
    if !ok {
        std::process::exit(3);
    }
}
