use std::collections::HashSet;

use candle_core::{DType, Device, Tensor};
use hairgan::data::make_split;
use hairgan::imageio::{decode_image, encode_png_gray, encode_png_rgb, gray_to_mask, mask_to_gray, rgb_to_tensor, tensor_to_rgb};
use hairgan::model::{adain, Discriminator, MaskPyramid, ModelConfig};
use hairgan::tasks::dilate_mask;
use image::{GrayImage, Luma, Rgb, RgbImage};
use proptest::prelude::*;

fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn rgb(w: u32, h: u32, bytes: &[u8]) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let i = 3 * (y * w + x) as usize;
        Rgb([bytes[i % bytes.len()], bytes[(i + 1) % bytes.len()], bytes[(i + 2) % bytes.len()]])
    })
}

fn binary(n: usize, bits: &[bool]) -> Vec<f32> {
    (0..n).map(|i| if bits[i % bits.len()] { 1.0 } else { 0.0 }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rgb_survives_tensor_and_png(w in 1u32..20, h in 1u32..20, bytes in prop::collection::vec(any::<u8>(), 1..64)) {
        let img = rgb(w, h, &bytes);
        prop_assert_eq!(&tensor_to_rgb(&rgb_to_tensor(&img).unwrap()).unwrap(), &img);
        let back = decode_image(&encode_png_rgb(&img).unwrap()).unwrap().to_rgb8();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn masks_binarize_at_half(w in 1u32..20, h in 1u32..20, levels in prop::collection::vec(any::<u8>(), 1..64)) {
        let gray = GrayImage::from_fn(w, h, |x, y| Luma([levels[(y * w + x) as usize % levels.len()]]));
        let m = gray_to_mask(&gray).unwrap();
        for (v, p) in flat(&m).iter().zip(gray.pixels()) {
            prop_assert_eq!(*v, if p.0[0] >= 128 { 1.0 } else { 0.0 });
        }
        let rendered = mask_to_gray(&m).unwrap();
        prop_assert_eq!(flat(&gray_to_mask(&rendered).unwrap()), flat(&m));
        let png = decode_image(&encode_png_gray(&rendered).unwrap()).unwrap().to_luma8();
        prop_assert_eq!(png, rendered);
    }

    #[test]
    fn split_partitions_the_ids(n in 0usize..200, f in 0.0f64..=1.0, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
        let s = make_split(&ids, f, seed).unwrap();
        prop_assert_eq!(s.train_ids.len(), (n as f64 * f + 1e-9).floor() as usize);
        prop_assert_eq!(s.train_ids.len() + s.test_ids.len(), n);
        let all: HashSet<&String> = s.train_ids.iter().chain(&s.test_ids).collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(&s, &make_split(&ids, f, seed).unwrap());
    }

    #[test]
    fn dilation_is_a_window_max(h in 1usize..12, w in 1usize..12, r in 0usize..4, bits in prop::collection::vec(any::<bool>(), 1..40)) {
        let data = binary(h * w, &bits);
        let m = Tensor::from_vec(data.clone(), (1, 1, h, w), &Device::Cpu).unwrap();
        let got = flat(&dilate_mask(&m, r).unwrap());
        for y in 0..h {
            for x in 0..w {
                let mut hit = 0.0;
                for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                    for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                        hit = f64::max(hit, data[yy * w + xx] as f64);
                    }
                }
                prop_assert_eq!(got[y * w + x], hit, "at ({}, {})", y, x);
            }
        }
    }

    #[test]
    fn pyramid_levels_are_thresholded_block_means(bits in prop::collection::vec(any::<bool>(), 1..300), block in 1usize..9) {
        let data = binary(128 * 128, &bits);
        let m = Tensor::from_vec(data.clone(), (1, 1, 128, 128), &Device::Cpu).unwrap();
        let p = MaskPyramid::new(&m, &[8, 16, 32, 64, 128]).unwrap();
        for (level, r) in p.levels().iter().zip([8usize, 16, 32, 64, 128]) {
            let f = 128 / r;
            let got = flat(level);
            // Spot-check `block` cells per level rather than all of them.
            for k in 0..block {
                let (i, j) = ((k * 7) % r, (k * 13 + 3) % r);
                let mut s = 0.0;
                for y in i * f..(i + 1) * f {
                    for x in j * f..(j + 1) * f {
                        s += data[y * 128 + x] as f64;
                    }
                }
                let want = if s / (f * f) as f64 >= 0.5 { 1.0 } else { 0.0 };
                prop_assert_eq!(got[i * r + j], want);
            }
        }
    }

    #[test]
    fn adain_ignores_input_affine(seed in any::<u64>(), a in 0.5f64..4.0, b in -3.0f64..3.0) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..2 * 3 * 36).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = Tensor::from_vec(v, (2, 3, 6, 6), &Device::Cpu).unwrap();
        let mu = Tensor::new(&[0.5f64, -1.0, 2.0], &Device::Cpu).unwrap();
        let sigma = Tensor::new(&[1.0f64, 0.3, 2.5], &Device::Cpu).unwrap();
        let y = flat(&adain(&x, &mu, &sigma).unwrap());
        let z = flat(&adain(&x.affine(a, b).unwrap(), &mu, &sigma).unwrap());
        for (p, q) in y.iter().zip(&z) {
            prop_assert!((p - q).abs() < 1e-4, "{} vs {}", p, q);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn discriminator_commutes_with_batch_permutation(seed in any::<u64>(), rot in 1usize..3) {
        let d = Discriminator::new(&ModelConfig::miniature(), DType::F32, seed).unwrap();
        let x = Tensor::randn(0f32, 1.0, (3, 3, 128, 128), &Device::Cpu).unwrap();
        let order: Vec<u32> = (0..3).map(|i| ((i + rot) % 3) as u32).collect();
        let idx = Tensor::new(order.as_slice(), &Device::Cpu).unwrap();
        let permuted_out = d.forward(&x.index_select(&idx, 0).unwrap()).unwrap();
        let out_permuted = d.forward(&x).unwrap().scores().index_select(&idx, 0).unwrap();
        prop_assert_eq!(flat(permuted_out.scores()), flat(&out_permuted));
    }
}
