mod common;

use deocc::image::{BinaryMask, Image};
use deocc::losses::{
    adversarial_losses, l1_loss, l1_loss_with_grad, mask_loss, mask_loss_with_grad, ssim, ssim_loss,
    ssim_loss_with_grad, total_loss, LossParts, LossWeights,
};

#[test]
fn ssim_matches_the_direct_oracle() {
    for (i, (a, b)) in common::fixture_pairs().iter().enumerate() {
        let got = ssim(a, b).unwrap();
        let want = common::ssim_oracle(a, b);
        assert!((got - want).abs() < 1e-4, "pair {i}: {got} vs {want}");
    }
}

#[test]
fn ssim_identities() {
    let a = common::gradient_image(16, 16, 0.0);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let g = Image::filled(16, 16, 0.5);
    assert!((ssim(&g, &g).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(ssim_loss(&a, &a).unwrap(), 0.0);
    let mut r = common::rng(2);
    for _ in 0..5 {
        let x = common::random_image(&mut r, 16, 16);
        let y = common::random_image(&mut r, 16, 16);
        let v = ssim_loss(&x, &y).unwrap();
        assert!((0.0..=2.0).contains(&v));
    }
}

#[test]
fn l1_cases() {
    let mut r = common::rng(3);
    let a = common::random_image(&mut r, 4, 4);
    assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
    assert_eq!(
        l1_loss(&Image::filled(4, 4, 0.0), &Image::filled(4, 4, 1.0)).unwrap(),
        1.0
    );
    let b = common::random_image(&mut r, 4, 4);
    let mut sum = 0.0;
    for y in 0..4 {
        for x in 0..4 {
            for c in 0..3 {
                sum += (a.get(y, x, c) - b.get(y, x, c)).abs();
            }
        }
    }
    assert!((l1_loss(&a, &b).unwrap() - sum / 48.0).abs() < 1e-7);
}

#[test]
fn adversarial_closed_forms() {
    let a = adversarial_losses(0.5, 0.5);
    assert!((a.l_d - 1.3863).abs() < 1e-4);
    assert!((a.l_d - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert!((a.l_g - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(adversarial_losses(1.0 - 1e-9, 1e-9).l_d < 1e-6);
}

#[test]
fn mask_loss_cases() {
    let mut r = common::rng(4);
    let rec = common::random_image(&mut r, 8, 8);
    let gt = common::random_image(&mut r, 8, 8);
    assert_eq!(mask_loss(&rec, &gt, &BinaryMask::zeros(8, 8)).unwrap(), 0.0);
    let full = mask_loss(&rec, &gt, &BinaryMask::ones(8, 8)).unwrap();
    assert!((full - l1_loss(&rec, &gt).unwrap()).abs() < 1e-7);

    let gt = Image::from_fn(2, 2, |y, x| if (y, x) == (0, 0) { [1.0; 3] } else { [0.0; 3] });
    let m = BinaryMask::from_fn(2, 2, |y, x| (y, x) == (0, 0));
    assert_eq!(mask_loss(&Image::filled(2, 2, 0.0), &gt, &m).unwrap(), 1.0);
}

#[test]
fn weighted_total() {
    let parts = LossParts {
        l_rec: 0.1,
        l_adv_g: 0.7,
        l_ssim: 0.05,
        l_mask: 0.02,
    };
    let w = LossWeights::default();
    assert!((total_loss(&parts, &w).unwrap() - 0.177).abs() < 1e-12);
    let only_rec = LossWeights {
        lambda_rec: 1.0,
        lambda_adv: 0.0,
        lambda_ssim: 0.0,
        lambda_mask: 0.0,
    };
    assert_eq!(total_loss(&parts, &only_rec).unwrap(), 0.1);
    let doubled = total_loss(&parts, &w.scaled(2.0)).unwrap();
    assert!((doubled - 2.0 * total_loss(&parts, &w).unwrap()).abs() < 1e-12);
}

#[test]
fn loss_gradients_match_central_differences() {
    let mut r = common::rng(5);
    for side in [8, 16] {
        let rec = common::random_image(&mut r, side, side);
        let gt = common::random_image(&mut r, side, side);
        let mask = common::random_mask(&mut r, side, side);

        let (_, g) = l1_loss_with_grad(&rec, &gt).unwrap();
        let e = common::max_gradient_error(&rec, &g, |x| l1_loss(x, &gt).unwrap());
        assert!(e < 1e-3, "l1 {side}: {e}");

        let (_, g) = ssim_loss_with_grad(&rec, &gt).unwrap();
        let e = common::max_gradient_error(&rec, &g, |x| ssim_loss(x, &gt).unwrap());
        assert!(e < 1e-3, "ssim {side}: {e}");

        let (_, g) = mask_loss_with_grad(&rec, &gt, &mask).unwrap();
        let e = common::max_gradient_error(&rec, &g, |x| mask_loss(x, &gt, &mask).unwrap());
        assert!(e < 1e-3, "mask {side}: {e}");
    }
}
