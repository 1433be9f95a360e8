use masksup_core::losses::{total_loss, total_loss_with_grad, LossOptions};
use masksup_core::maskgen::{apply_mask, generate_mask};
use masksup_core::nn::SiameseNet;
use masksup_core::{ImageTensor, LabelMap, LossWeights, MaskGenConfig, MaskRegime, UNet, UNetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> UNetConfig {
    UNetConfig { in_channels: 3, num_classes: 3, base_width: 2, depth: 2, convs_per_block: 1, norm_groups: 2 }
}

struct Problem {
    image: ImageTensor,
    masked: ImageTensor,
    gt: LabelMap,
}

fn problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = ImageTensor::new(8, 8, 3, (0..192).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let gt = LabelMap::new(8, 8, (0..64).map(|_| rng.random_range(0..3)).collect()).unwrap();
    let mask = generate_mask(8, 8, &MaskRegime::high(), &MaskGenConfig::default(), seed).unwrap();
    let masked = apply_mask(&image, &mask).unwrap();
    Problem { image, masked, gt }
}

fn loss_at(net: &SiameseNet<f64>, p: &Problem, w: LossWeights) -> f64 {
    let pass = net.forward_pair(&p.image, &p.masked).unwrap();
    total_loss(&pass.clean, &pass.masked, &p.gt, w, None).unwrap().total
}

fn max_rel_error(seed: u64, w: LossWeights) -> f64 {
    let p = problem(seed);
    let mut net = SiameseNet::new(UNet::<f64>::new(tiny(), seed).unwrap());
    let n = net.backbone().parameter_count();
    assert!(n <= 500, "{n} parameters");

    let pass = net.forward_pair(&p.image, &p.masked).unwrap();
    let g = total_loss_with_grad(&pass.clean, &pass.masked, &p.gt, w, LossOptions::default(), None).unwrap();
    let mut analytic = vec![0.0; n];
    net.backward_pair(&pass, &g.clean, &g.masked, &mut analytic);

    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..n {
        let orig = net.backbone().params().values()[i];
        net.backbone_mut().params_mut().values_mut()[i] = orig + h;
        let up = loss_at(&net, &p, w);
        net.backbone_mut().params_mut().values_mut()[i] = orig - h;
        let down = loss_at(&net, &p, w);
        net.backbone_mut().params_mut().values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[test]
fn full_objective_matches_finite_differences() {
    for seed in 0..2 {
        let err = max_rel_error(seed, LossWeights::default());
        assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn unequal_weights_match_finite_differences() {
    let err = max_rel_error(5, LossWeights::new(0.3, 1.7, 2.5).unwrap());
    assert!(err < 1e-4, "max relative error {err:e}");
}
