mod common;

use common::random_tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vision_core::preprocess::*;
use vision_core::tensor::Tensor;

fn dataset(seed: u64, n: usize) -> Vec<Tensor<f64>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (h, w) = (r.gen_range(1..9), r.gen_range(1..9));
            random_tensor(&[3, h, w], &mut r, 0.0, 255.0)
        })
        .collect()
}

fn pooled_means(images: &[Tensor<f64>]) -> [f64; 3] {
    let mut sums = [0.0; 3];
    let mut count = 0;
    for img in images {
        let plane = img.len() / 3;
        for (c, s) in sums.iter_mut().enumerate() {
            *s += img.data()[c * plane..(c + 1) * plane].iter().sum::<f64>();
        }
        count += plane;
    }
    sums.map(|s| s / count as f64)
}

proptest! {
    #[test]
    fn normalized_dataset_has_zero_mean(seed in 0u64..1000, n in 1usize..6) {
        let data = dataset(seed, n);
        let stats = channel_means(&data).unwrap();
        prop_assert_eq!(stats.sigma, 255.0);
        let normed: Vec<_> = data.iter().map(|im| normalize(im, &stats).unwrap()).collect();
        for m in pooled_means(&normed) {
            prop_assert!(m.abs() < 1e-5, "{m}");
        }
    }

    #[test]
    fn normalize_is_affine(seed in 0u64..1000, a in 0.1f64..3.0, b in -50.0f64..50.0, sigma in 1.0f64..300.0) {
        let x = &dataset(seed, 1)[0];
        let stats = ChannelStats { mu_r: 10.0, mu_g: 20.0, mu_b: 30.0, sigma };
        let y = Tensor::from_vec(x.shape(), x.data().iter().map(|v| a * v + b).collect()).unwrap();
        let nx = normalize(x, &stats).unwrap();
        let ny = normalize(&y, &stats).unwrap();
        let plane = x.len() / 3;
        for (i, (p, q)) in nx.data().iter().zip(ny.data()).enumerate() {
            let mu = stats.means()[i / plane];
            let expect = a * p + (b + (a - 1.0) * mu) / sigma;
            prop_assert!((q - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn denormalize_inverts_normalize(seed in 0u64..1000) {
        let data = dataset(seed, 2);
        let stats = channel_means(&data).unwrap();
        for im in &data {
            let back = denormalize(&normalize(im, &stats).unwrap(), &stats).unwrap();
            for (p, q) in im.data().iter().zip(back.data()) {
                prop_assert!((p - q).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn stats_text_round_trips(mu in prop::array::uniform3(-300.0f64..300.0), sigma in 0.01f64..1000.0) {
        let s = ChannelStats { mu_r: mu[0], mu_g: mu[1], mu_b: mu[2], sigma };
        let text = s.to_text();
        prop_assert_eq!(text.lines().count(), 4);
        prop_assert_eq!(ChannelStats::from_text(&text).unwrap(), s);
    }
}

#[test]
fn normalize_rejects_bad_sigma() {
    let img = Tensor::<f32>::zeros(&[3, 2, 2]).unwrap();
    for sigma in [0.0, -1.0, f64::NAN] {
        let stats = ChannelStats {
            sigma,
            ..ChannelStats::default()
        };
        assert!(normalize(&img, &stats).is_err());
    }
    assert!(ChannelStats::from_text("1\n2\n3\n").is_err());
}
