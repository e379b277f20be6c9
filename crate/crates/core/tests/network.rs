use combnet::analysis::{count_macs, grad_check, random_tensor, reduction_ratio, FlopReport};
use combnet::mask::MaskConfig;
use combnet::network::{
    build, Arch, ConvBlock, Layer, Network, NetworkConfig, COMB_STACK_DEPTHS, COMB_STACK_WIDTHS,
    VGG_DEPTHS,
};
use combnet::ops::{softmax_cross_entropy, BnState, BnStrategy, CombConvLayer, ConvMode, Linear};
use combnet::training::init_rng;
use proptest::prelude::*;

fn all_configs() -> Vec<NetworkConfig> {
    let mut out = Vec::new();
    for interleave in [true, false] {
        for bn_strategy in [BnStrategy::PreBn, BnStrategy::PostBn] {
            for &depth in &COMB_STACK_DEPTHS {
                for &width in &COMB_STACK_WIDTHS {
                    out.push(NetworkConfig {
                        depth,
                        width,
                        interleave,
                        bn_strategy,
                        ..Default::default()
                    });
                }
            }
            for &depth in &VGG_DEPTHS {
                out.push(NetworkConfig {
                    arch: Arch::Vgg,
                    depth,
                    interleave,
                    bn_strategy,
                    num_classes: 100,
                    ..Default::default()
                });
            }
        }
    }
    out
}

#[test]
fn comb_and_standard_have_equal_capacity() {
    for cfg in all_configs() {
        let comb = build(&NetworkConfig { mode: ConvMode::Comb, ..cfg.clone() }).unwrap();
        let std = build(&NetworkConfig { mode: ConvMode::Standard, ..cfg.clone() }).unwrap();
        assert_eq!(comb.num_params(), std.num_params(), "{cfg:?}");
    }
}

#[test]
fn checkpoint_lists_every_tensor() {
    let net = build(&NetworkConfig::default()).unwrap();
    let names: Vec<String> = net.tensor_dims().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.iter().filter(|n| n.ends_with("conv.weight")).count(), 8);
    assert_eq!(names.iter().filter(|n| n.ends_with("running_var")).count(), 8);
}

fn toy_net(strategy: BnStrategy, phase0: u8) -> Network {
    let cfg = NetworkConfig {
        input_shape: [2, 6, 6],
        num_classes: 4,
        bn_strategy: strategy,
        ..Default::default()
    };
    let block = |c_in, c_out, phase| {
        let mask = MaskConfig::new(3, 1, 1, true, phase).unwrap();
        Layer::Conv(ConvBlock {
            conv: CombConvLayer::new(c_in, c_out, 1, mask, ConvMode::Comb)
                .unwrap()
                .with_bn(strategy),
            bn: (strategy != BnStrategy::None).then(|| BnState::new(c_out)),
        })
    };
    let layers = vec![
        block(2, 3, phase0),
        block(3, 3, 1 - phase0),
        Layer::MaxPool,
        block(3, 4, phase0),
        Layer::GlobalAvgPool,
        Layer::Linear(Linear::zeros(4, 6)),
        Layer::Relu,
        Layer::Linear(Linear::zeros(6, 4)),
    ];
    Network::new(cfg, layers).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn whole_network_gradients(seed in 0u64..10_000, strat in 0usize..3, phase in 0u8..2) {
        let strategy = [BnStrategy::PreBn, BnStrategy::PostBn, BnStrategy::None][strat];
        let mut net = toy_net(strategy, phase);
        let mut rng = init_rng(seed);
        net.initialize(&mut rng);
        let x = random_tensor(&mut rng, [3, 2, 6, 6]);
        let labels = [seed as usize % 4, 1, 3];
        let (logits, trace) = net.forward(&x, true).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let analytic = net.backward(&trace, &g).unwrap().concat();
        let point: Vec<f64> = net.params_mut().iter().flat_map(|p| p.values.to_vec()).collect();
        let template = net.clone();
        let err = grad_check(
            |p| {
                let mut n = template.clone();
                let mut off = 0;
                for param in n.params_mut() {
                    let len = param.values.len();
                    param.values.copy_from_slice(&p[off..off + len]);
                    off += len;
                }
                Ok(softmax_cross_entropy(&n.forward(&x, true)?.0, &labels)?.0)
            },
            &point,
            &analytic,
            1e-4,
        )
        .unwrap();
        prop_assert!(err < 1e-5, "relative error {}", err);
    }

    #[test]
    fn mac_counts_follow_closed_form(
        half in 1usize..9,
        c_in in 1usize..6,
        c_out in 1usize..9,
        k in prop::sample::select(vec![1usize, 3, 5]),
        interleave: bool,
        phase in 0u8..2,
    ) {
        let n = 2 * half;
        let mask = MaskConfig::new(k, 1, k / 2, interleave, phase).unwrap();
        let layer = CombConvLayer::new(c_in, c_out, 1, mask, ConvMode::Comb).unwrap();
        let m = count_macs(&layer, [c_in, n, n]).unwrap();
        let (k2, n2) = ((k * k) as u64, (n * n) as u64);
        prop_assert_eq!(m.standard, n2 * k2 * (c_in * c_out) as u64);
        // (½·K²·C_out + 1)·N²·C_in, exact for even N
        prop_assert_eq!(2 * m.comb, (k2 * c_out as u64 + 2) * n2 * c_in as u64);
        prop_assert_eq!(2 * m.removed, n2 * c_out as u64 * (k2 - 1) * c_in as u64);
        let expect = reduction_ratio(k, c_out);
        prop_assert!((m.reduction() - expect).abs() < 1e-12);
    }

    #[test]
    fn flop_csv_round_trips(depth in prop::sample::select(COMB_STACK_DEPTHS.to_vec()),
                            width in prop::sample::select(COMB_STACK_WIDTHS.to_vec())) {
        let net = build(&NetworkConfig { depth, width, ..Default::default() }).unwrap();
        let report = net.flop_report().unwrap();
        let back = FlopReport::from_csv(&report.to_csv()).unwrap();
        prop_assert_eq!(back.total().macs_standard, report.total().macs_standard);
        prop_assert_eq!(back.total().macs_comb, report.total().macs_comb);
        prop_assert!(report.total().macs_comb < report.total().macs_standard);
        let doubled = report.doubled().total();
        prop_assert_eq!(doubled.macs_comb, 2 * report.total().macs_comb);
    }
}
