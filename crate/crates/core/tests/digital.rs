use semcom_core::channel::Channel;
use semcom_core::data_io::{make_synthetic_clip, SyntheticKind};
use semcom_core::digital_baseline::{
    bit_error_rate, bpsk_ber, bpsk_over_awgn, dequantize, fec_decode, fec_encode, q_function, quantize,
    run_digital_pipeline, DigitalConfig,
};
use semcom_core::metrics::psnr;
use semcom_tensor::Tensor;

fn nibble(v: u8) -> [u8; 4] {
    [(v >> 3) & 1, (v >> 2) & 1, (v >> 1) & 1, v & 1]
}

#[test]
fn hamming_corrects_every_single_error_of_every_codeword() {
    let mut cases = 0;
    for v in 0..16u8 {
        let data = nibble(v);
        let code = fec_encode(&data);
        assert_eq!(code.len(), 7);
        assert_eq!(&code[..4], &data, "systematic");
        assert_eq!(fec_decode(&code), data);
        cases += 1;
        for pos in 0..7 {
            let mut c = code.clone();
            c[pos] ^= 1;
            assert_eq!(fec_decode(&c), data, "codeword {v} flip {pos}");
            cases += 1;
        }
    }
    assert_eq!(cases, 16 * 8);
}

#[test]
fn every_double_error_is_miscorrected() {
    for v in 0..16u8 {
        let data = nibble(v);
        let code = fec_encode(&data);
        let mut patterns = 0;
        for i in 0..7 {
            for j in i + 1..7 {
                let mut c = code.clone();
                c[i] ^= 1;
                c[j] ^= 1;
                assert_ne!(fec_decode(&c), data, "codeword {v} flips {i},{j}");
                patterns += 1;
            }
        }
        assert_eq!(patterns, 21);
    }
}

#[test]
fn code_has_minimum_distance_three() {
    let words: Vec<Vec<u8>> = (0..16).map(|v| fec_encode(&nibble(v))).collect();
    for a in 0..16 {
        for b in a + 1..16 {
            let d = words[a].iter().zip(&words[b]).filter(|(x, y)| x != y).count();
            assert!(d >= 3);
        }
    }
}

#[test]
fn quantizer_error_bound() {
    for bits in [1, 3, 8, 12] {
        let values: Vec<f32> = (0..=1000).map(|i| i as f32 / 1000.0).collect();
        let back = dequantize(&quantize(&values, bits), bits);
        let bound = 1.0 / (2.0 * ((1u32 << bits) - 1) as f32) + 1e-6;
        for (a, b) in values.iter().zip(&back) {
            assert!((a - b).abs() <= bound, "bits {bits}: {a} -> {b}");
        }
    }
    assert_eq!(quantize(&[0.6], 1), vec![1]);
    assert_eq!(quantize(&[0.0], 8), vec![0; 8]);
}

#[test]
fn bpsk_monte_carlo_matches_tail_probability() {
    let n = 1_000_000;
    let bits: Vec<u8> = (0..n).map(|i| ((i * 7 + i / 3) % 2) as u8).collect();
    for snr in [0.0, 3.0, 6.0] {
        let mut ch = Channel::new(42);
        let rx = bpsk_over_awgn(&bits, snr, 1.0, &mut ch);
        let ber = bit_error_rate(&bits, &rx);
        let want = bpsk_ber(snr);
        assert!((ber - want).abs() / want < 0.05, "snr {snr}: {ber} vs {want}");
    }
}

#[test]
fn q_function_values() {
    assert!((q_function(0.0) - 0.5).abs() < 1e-15);
    assert!((q_function(1.0) - 0.158_655_253_931_457).abs() < 1e-9);
    assert!((q_function(3.0) - 0.001_349_898_031_630).abs() < 1e-9);
    assert!((q_function(-1.0) + q_function(1.0) - 1.0).abs() < 1e-12);
}

#[test]
fn high_snr_is_quantization_limited() {
    let clip = make_synthetic_clip(SyntheticKind::Noise, 16, 16, 2, (0, 0), 3).unwrap();
    let out = run_digital_pipeline(&clip, &DigitalConfig::new(30.0)).unwrap();
    assert_eq!(out.decoded_ber, 0.0);
    let q = dequantize(&quantize(clip.frames().data(), 8), 8);
    let oracle = psnr(clip.frames(), &Tensor::from_vec(clip.frames().shape(), q)).unwrap();
    assert!((out.psnr_db - oracle).abs() < 1e-9, "{} vs {oracle}", out.psnr_db);
}

/// Post-decode data BER for channel flip probability `p`. The code is linear,
/// so it suffices to decode every error pattern on the zero codeword.
fn hamming_data_ber(p: f64) -> f64 {
    let zero = fec_encode(&[0, 0, 0, 0]);
    let mut ber = 0.0;
    for e in 0u8..128 {
        let word: Vec<u8> = (0..7).map(|i| zero[i] ^ ((e >> i) & 1)).collect();
        let w = e.count_ones() as i32;
        let prob = p.powi(w) * (1.0 - p).powi(7 - w);
        let wrong = fec_decode(&word).iter().filter(|&&b| b != 0).count();
        ber += prob * wrong as f64 / 4.0;
    }
    ber
}

#[test]
fn very_low_snr_destroys_the_bits() {
    let clip = make_synthetic_clip(SyntheticKind::Noise, 32, 32, 2, (0, 0), 4).unwrap();
    let out = run_digital_pipeline(&clip, &DigitalConfig::new(-20.0)).unwrap();
    let p = bpsk_ber(-20.0);
    assert!((out.channel_ber - p).abs() < 0.01, "{} vs {p}", out.channel_ber);
    let want = hamming_data_ber(p);
    assert!((out.decoded_ber - want).abs() < 0.01, "{} vs {want}", out.decoded_ber);
    assert!(out.decoded_ber > 0.44);
    // Nearly every pixel word is corrupted, so the output carries almost no
    // information about the source.
    let mut gray = clip.frames().clone();
    for v in gray.data_mut() {
        *v = 0.5;
    }
    let mid = psnr(clip.frames(), &gray).unwrap();
    assert!(out.psnr_db < mid + 1.0, "{} vs {mid}", out.psnr_db);
}

#[test]
fn noise_clip_shows_a_cliff_and_a_plateau() {
    let clip = make_synthetic_clip(SyntheticKind::Noise, 32, 32, 2, (0, 0), 11).unwrap();
    let curve: Vec<f64> = (-5..=15)
        .map(|snr| {
            let mut cfg = DigitalConfig::new(snr as f64);
            cfg.seed = 5;
            run_digital_pipeline(&clip, &cfg).unwrap().psnr_db
        })
        .collect();
    let (cliff, drop) =
        (1..curve.len())
            .map(|i| (i, curve[i] - curve[i - 1]))
            .fold((0, f64::MIN), |best, x| if x.1 > best.1 { x } else { best });
    assert!(drop > 10.0, "largest adjacent drop {drop:.2} dB in {curve:?}");
    let plateau = &curve[cliff..];
    let spread = plateau.iter().cloned().fold(f64::MIN, f64::max) - plateau.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 0.5, "plateau spread {spread}");
}

#[test]
fn pipeline_is_deterministic_under_seed() {
    let clip = make_synthetic_clip(SyntheticKind::Translate, 16, 16, 2, (1, 0), 2).unwrap();
    let cfg = DigitalConfig { bits_per_pixel: 6, snr_test_db: 4.0, power: 1.0, seed: 9 };
    let a = run_digital_pipeline(&clip, &cfg).unwrap();
    let b = run_digital_pipeline(&clip, &cfg).unwrap();
    assert_eq!(a.reconstructed.frames(), b.reconstructed.frames());
    assert_eq!(a.psnr_db, b.psnr_db);
}
