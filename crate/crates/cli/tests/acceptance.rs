//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcom_core::channel::{average_power, normalize_power, transmit, ChannelFamily, ChannelSpec};
use semcom_core::data_io::{make_synthetic_clip, make_synthetic_dataset, write_svc1, SyntheticKind, VideoClip};
use semcom_core::digital_baseline::{fec_decode, fec_encode};
use semcom_core::flow_matching::{bidirectional_flow, correlation_volume, flow_graph, DenseFeatures};
use semcom_core::metrics::{ms_ssim, psnr, PSNR_MAX};
use semcom_core::nn_core::{gdn_graph, noise_attention_graph, Ctx, ParamStore, SeWeights};
use semcom_core::semantic_codec::{ModelConfig, Transceiver};
use semcom_core::train_eval::{
    evaluate, matched_grid, mismatch_grid, train, EvalOptions, GridPoint, SweepResult, System, TrainConfig,
};
use semcom_tensor::gradcheck::check_gradients;
use semcom_tensor::Tensor;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn symbol_accounting() -> Outcome {
    let a = ModelConfig::desk(32, 32, 0.031).plan().map_err(|e| e.to_string())?.symbols;
    let b = ModelConfig::desk(32, 32, 0.021).plan().map_err(|e| e.to_string())?.symbols;
    let gap = (b as f64 - a as f64 * 2.0 / 3.0).abs();
    check(gap <= 1.0, format!("{b} symbols vs 2/3 of {a}"))?;
    Ok(format!("{a} -> {b} symbols, {:.1}% fewer", 100.0 * (1.0 - b as f64 / a as f64)))
}

fn channel_physics() -> Outcome {
    let k = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let raw: Vec<Complex64> =
        (0..k).map(|_| Complex64::new(rng.random_range(-2.0..3.0), rng.random_range(-1.0..1.0))).collect();
    let mut worst_power: f64 = 0.0;
    for power in [1.0, 0.5, 3.0] {
        let frame = normalize_power(&raw, power).map_err(|e| e.to_string())?;
        worst_power = worst_power.max((average_power(&frame.symbols) - power).abs() / power);
    }
    check(worst_power < 1e-5, format!("power error {worst_power:e}"))?;
    let frame = normalize_power(&raw, 1.0).map_err(|e| e.to_string())?;
    let mut worst_var: f64 = 0.0;
    for snr in [-5.0, 0.0, 10.0] {
        let rx = transmit(&frame, &ChannelSpec::awgn(snr).with_seed(11)).map_err(|e| e.to_string())?;
        let var = rx.iter().zip(&frame.symbols).map(|(r, s)| (r - s).norm_sqr()).sum::<f64>() / k as f64;
        let want = 10f64.powf(-snr / 10.0);
        worst_var = worst_var.max((var - want).abs() / want);
    }
    check(worst_var < 0.01, format!("noise variance error {worst_var:.4}"))?;
    Ok(format!("power rel err {worst_power:.1e}, variance rel err {:.3}%", 100.0 * worst_var))
}

fn roll(f: &Tensor<f64>, dx: isize, dy: isize) -> Tensor<f64> {
    let (h, w, d) = (f.dim(0), f.dim(1), f.dim(2));
    Tensor::from_fn(f.shape(), |i| {
        let (c, p) = (i % d, i / d);
        let (y, x) = ((p / w) as isize, (p % w) as isize);
        let sy = (y - dy).rem_euclid(h as isize) as usize;
        let sx = (x - dx).rem_euclid(w as isize) as usize;
        f.data()[(sy * w + sx) * d + c]
    })
}

fn flow_correctness() -> Outcome {
    let (h, w) = (32, 32);
    let mut worst_epe: f64 = 0.0;
    for (dx, dy) in [(3, 0), (0, -2), (2, 1), (-1, 3)] {
        let f1 = uniform(&[h, w, 64], -30.0, 30.0, 5);
        let f2 = roll(&f1, dx, dy);
        let flow =
            bidirectional_flow(&DenseFeatures::new(f1, f2).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let inside = |x: isize, y: isize| (0..w as isize).contains(&x) && (0..h as isize).contains(&y);
        let (mut fe, mut be, mut nf, mut nb) = (0.0, 0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let (xi, yi) = (x as isize, y as isize);
                if inside(xi + dx, yi + dy) {
                    let (u, v) = flow.forward_at(x, y);
                    fe += ((u - dx as f64).powi(2) + (v - dy as f64).powi(2)).sqrt();
                    nf += 1.0;
                }
                if inside(xi - dx, yi - dy) {
                    let (u, v) = flow.backward_at(x, y);
                    be += ((u + dx as f64).powi(2) + (v + dy as f64).powi(2)).sqrt();
                    nb += 1.0;
                }
            }
        }
        worst_epe = worst_epe.max(fe / nf).max(be / nb);
    }
    check(worst_epe < 0.1, format!("endpoint error {worst_epe}"))?;
    let (h, w, d) = (12, 10, 16);
    let f = DenseFeatures::new(uniform(&[h, w, d], -1.0, 1.0, 6), uniform(&[h, w, d], -1.0, 1.0, 7))
        .map_err(|e| e.to_string())?;
    let c = correlation_volume(&f);
    let p = h * w;
    let mut worst_corr: f64 = 0.0;
    for i in 0..p {
        for j in 0..p {
            let dot: f64 = (0..d).map(|k| f.f1.data()[i * d + k] * f.f2.data()[j * d + k]).sum();
            worst_corr = worst_corr.max((c.data()[i * p + j] - dot / (d as f64).sqrt()).abs());
        }
    }
    check(worst_corr < 1e-6, format!("correlation error {worst_corr:e}"))?;
    Ok(format!("mean EPE <= {worst_epe:.2e} px, correlation error {worst_corr:.1e}"))
}

fn tiny(h: usize, w: usize) -> ModelConfig {
    ModelConfig {
        flow_dim: 4,
        key_channels: 8,
        flow_channels: 8,
        fused_channels: 8,
        enc_hidden: 8,
        dec_hidden: 8,
        channel_hidden: 8,
        unet_widths: [8, 8, 8],
        ..ModelConfig::desk(h, w, 0.031)
    }
}

fn clip_loss(model: &Transceiver, params: &ParamStore<f64>, frames: &Tensor<f64>) -> f64 {
    let mut ctx = Ctx::inference(params);
    let pass = model.forward(&mut ctx, frames, 10.0, None).expect("forward");
    let target = ctx.constant(frames.clone());
    let loss = ctx.g.mse(pass.clip, target);
    ctx.value(loss).item()
}

fn differentiability() -> Outcome {
    let w = uniform(&[2, 3, 3, 4], -1.0, 1.0, 1);
    let gdn = check_gradients(
        &[uniform(&[2, 3, 3, 4], -2.0, 2.0, 2), uniform(&[4], 0.5, 1.5, 3), uniform(&[4, 4], 0.01, 0.3, 4)],
        |g, v| {
            let y = gdn_graph(g, v[0], v[1], v[2], false);
            let c = g.constant(w.clone());
            let p = g.mul(y, c);
            g.sum(p)
        },
        1e-5,
        1e-6,
        None,
    );
    check(gdn.max_rel_error < 1e-4, format!("GDN {:e}", gdn.max_rel_error))?;
    let w8 = uniform(&[2, 3, 3, 8], -1.0, 1.0, 5);
    let na = check_gradients(
        &[
            uniform(&[2, 3, 3, 8], -1.0, 1.0, 6),
            Tensor::from_vec(&[2, 1], vec![4.0, -3.0]),
            uniform(&[9, 2], -0.5, 0.5, 7),
            uniform(&[2], 0.1, 0.5, 8),
            uniform(&[2, 8], -0.5, 0.5, 9),
            uniform(&[8], -0.1, 0.1, 10),
        ],
        |g, v| {
            let se = SeWeights { fc1_w: v[2], fc1_b: v[3], fc2_w: v[4], fc2_b: v[5] };
            let y = noise_attention_graph(g, v[0], v[1], se);
            let c = g.constant(w8.clone());
            let p = g.mul(y, c);
            g.sum(p)
        },
        1e-5,
        1e-6,
        None,
    );
    check(na.max_rel_error < 1e-4, format!("noise attention {:e}", na.max_rel_error))?;
    let wf = uniform(&[1, 3, 4, 4], -1.0, 1.0, 11);
    let matching = check_gradients(
        &[uniform(&[1, 3, 4, 5], -1.0, 1.0, 12), uniform(&[1, 3, 4, 5], -1.0, 1.0, 13)],
        |g, v| {
            let f = flow_graph(g, v[0], v[1]);
            let c = g.constant(wf.clone());
            let p = g.mul(f, c);
            g.sum(p)
        },
        1e-5,
        1e-6,
        None,
    );
    check(matching.max_rel_error < 1e-4, format!("matching {:e}", matching.max_rel_error))?;

    let model = Transceiver::new(tiny(16, 16)).map_err(|e| e.to_string())?;
    let params = model.init::<f64>(3);
    let clip = make_synthetic_clip(SyntheticKind::Translate, 16, 16, 2, (1, 1), 4).map_err(|e| e.to_string())?;
    let frames = clip.frames().cast::<f64>().reshape(&[1, 2, 16, 16, 3]);
    let grads = {
        let mut ctx = Ctx::train(&params);
        let pass = model.forward(&mut ctx, &frames, 10.0, None).map_err(|e| e.to_string())?;
        let target = ctx.constant(frames.clone());
        let loss = ctx.g.mse(pass.clip, target);
        ctx.param_grads(loss)
    };
    let names: Vec<String> = params.names().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_e2e: f64 = 0.0;
    let step = 1e-5;
    for _ in 0..10 {
        let name = &names[rng.random_range(0..names.len())];
        let j = rng.random_range(0..params.get(name).unwrap().len());
        let analytic = grads[name].data()[j];
        let mut p = params.clone();
        let orig = p.get(name).unwrap().data()[j];
        p.get_mut(name).unwrap().data_mut()[j] = orig + step;
        let plus = clip_loss(&model, &p, &frames);
        p.get_mut(name).unwrap().data_mut()[j] = orig - step;
        let minus = clip_loss(&model, &p, &frames);
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst_e2e = worst_e2e.max(rel);
    }
    check(worst_e2e < 1e-3, format!("end to end {worst_e2e:e}"))?;
    Ok(format!(
        "GDN {:.1e}, noise attention {:.1e}, matching {:.1e}, end to end {worst_e2e:.1e}",
        gdn.max_rel_error, na.max_rel_error, matching.max_rel_error
    ))
}

const OVERFIT_STEPS: usize = 1200;
const RETRAIN_STEPS: usize = 300;

struct Trained {
    model: Transceiver,
    params: ParamStore<f32>,
    data: Vec<VideoClip>,
}

fn eval_opts() -> EvalOptions {
    EvalOptions { seed: 1, batch_size: 8, with_baseline: false, baseline_bits: 8 }
}

fn overfit(slot: &mut Option<Trained>) -> Outcome {
    let t0 = Instant::now();
    let model = Transceiver::new(ModelConfig::desk(32, 32, 0.031)).map_err(|e| e.to_string())?;
    check(model.config().t == 4, "expected t = 4 at 32x32")?;
    let data = make_synthetic_dataset(SyntheticKind::Translate, 8, 32, 32, 2, 3, 7).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { channel: ChannelFamily::Noiseless, ..TrainConfig::new(OVERFIT_STEPS, 1) };
    let out = train(&model, model.init::<f32>(1), &cfg, &data, |_, _| {}).map_err(|e| e.to_string())?;
    let grid = [GridPoint { snr_test_db: f64::INFINITY, snr_est_db: cfg.snr_high_db }];
    let res = evaluate(&model, &out.params, &data, &grid, &eval_opts()).map_err(|e| e.to_string())?;
    let got = res.rows[0].psnr_db;
    let initial = out.losses[0].loss;
    let tail = |from: usize, to: usize| out.losses[from..to].iter().map(|r| r.loss).sum::<f64>() / (to - from) as f64;
    let early = initial / tail(40, 50);
    let total = initial / tail(OVERFIT_STEPS - 10, OVERFIT_STEPS);
    *slot = Some(Trained { model, params: out.params, data });
    check(got >= 30.0, format!("PSNR {got:.2} dB after {OVERFIT_STEPS} steps"))?;
    check(total >= 10.0, format!("loss fell only {total:.1}x over the run"))?;
    Ok(format!(
        "{got:.2} dB after {OVERFIT_STEPS} steps, loss down {early:.1}x by step 50 and {total:.0}x overall ({:.0} s)",
        t0.elapsed().as_secs_f64()
    ))
}

fn snr_grid() -> Vec<f64> {
    (-5..=15).map(f64::from).collect()
}

fn series(res: &SweepResult, system: System) -> Vec<f64> {
    res.rows.iter().filter(|r| r.system == system).map(|r| r.psnr_db).collect()
}

/// Start of the flat top of the curve: the first index from which every
/// remaining point lies within `tol` of the others.
fn plateau_start(ys: &[f64], tol: f64) -> usize {
    let mut start = ys.len() - 1;
    let (mut lo, mut hi) = (ys[start], ys[start]);
    while start > 0 {
        let v = ys[start - 1];
        if hi.max(v) - lo.min(v) > tol {
            break;
        }
        lo = lo.min(v);
        hi = hi.max(v);
        start -= 1;
    }
    start
}

fn degradation(trained: &mut Option<Trained>) -> Outcome {
    let t = trained.as_mut().ok_or("no checkpoint from the overfit run")?;
    let t0 = Instant::now();
    let cfg = TrainConfig::new(RETRAIN_STEPS, 2);
    let out = train(&t.model, t.params.clone(), &cfg, &t.data, |_, _| {}).map_err(|e| e.to_string())?;
    t.params = out.params;
    let opts = EvalOptions { with_baseline: true, ..eval_opts() };
    let res = evaluate(&t.model, &t.params, &t.data, &matched_grid(&snr_grid()), &opts).map_err(|e| e.to_string())?;
    let learned = series(&res, System::Learned);
    let digital = series(&res, System::Digital);
    check(learned.len() == 21 && digital.len() == 21, "expected 21 points per system")?;
    let worst_drop = learned.windows(2).map(|w| w[1] - w[0]).map(|d| -d).fold(f64::MIN, f64::max);
    check(worst_drop <= 3.0, format!("learned curve drops {worst_drop:.2} dB between adjacent points"))?;
    let start = plateau_start(&digital, 0.5);
    let cliff = digital[..=start].windows(2).map(|w| w[1] - w[0]).fold(f64::MIN, f64::max);
    check(cliff > 10.0, format!("largest digital step below the plateau is {cliff:.2} dB"))?;
    check(digital.len() - start >= 3, format!("digital plateau has {} points", digital.len() - start))?;
    let flat = digital[start..].iter().fold(f64::MIN, |a, &b| a.max(b))
        - digital[start..].iter().fold(f64::MAX, |a, &b| a.min(b));
    Ok(format!(
        "learned {:.1}..{:.1} dB, worst adjacent drop {:.2} dB; digital cliff {cliff:.1} dB, plateau from {} dB flat to {flat:.2} dB ({:.0} s)",
        learned[0],
        learned[20],
        worst_drop.max(0.0),
        snr_grid()[start],
        t0.elapsed().as_secs_f64()
    ))
}

fn mismatch(trained: &Option<Trained>) -> Outcome {
    let t = trained.as_ref().ok_or("no checkpoint from the degradation run")?;
    let res = evaluate(&t.model, &t.params, &t.data, &mismatch_grid(5.0, &snr_grid()), &eval_opts())
        .map_err(|e| e.to_string())?;
    let (best, at) =
        res.rows.iter().map(|r| (r.psnr_db, r.snr_est_db)).fold((f64::MIN, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    let matched = res.rows.iter().find(|r| r.snr_est_db == 5.0).ok_or("no matched row")?.psnr_db;
    check(best - matched <= 0.5, format!("matched {matched:.2} dB, best {best:.2} dB at {at} dB"))?;
    Ok(format!("matched {matched:.3} dB, best {best:.3} dB at SNR_est {at} dB"))
}

fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let n = 7;
    let c = 3.0;
    let mut win = [[0.0; 7]; 7];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    let mut count = 0.0;
    for y in 0..=h - n {
        for x in 0..=w - n {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = win[i][j] / total;
                    let (p, q) = (a[(y + i) * w + x + j], b[(y + i) * w + x + j]);
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let cs = (2.0 * (sab - ma * mb) + c2) / (saa - ma * ma + sbb - mb * mb + c2);
            acc += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * cs;
            count += 1.0;
        }
    }
    (acc / count).max(0.0)
}

fn metric_fidelity() -> Outcome {
    let (mut worst_psnr, mut worst_ssim): (f64, f64) = (0.0, 0.0);
    for seed in 0..20 {
        let a = uniform(&[1, 8, 8, 3], 0.0, 1.0, seed);
        let noise = uniform(&[1, 8, 8, 3], -0.2, 0.2, seed + 100);
        let b = a.zip_map(&noise, |x, n| (x + n).clamp(0.0, 1.0));
        let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 192.0;
        worst_psnr = worst_psnr.max((psnr(&a, &b).map_err(|e| e.to_string())? - 10.0 * (1.0 / mse).log10()).abs());
        let mut want = 0.0;
        for ch in 0..3 {
            let plane = |t: &Tensor<f64>| t.data().iter().skip(ch).step_by(3).copied().collect::<Vec<_>>();
            want += ssim_oracle(&plane(&a), &plane(&b), 8, 8) / 3.0;
        }
        worst_ssim = worst_ssim.max((ms_ssim(&a, &b).map_err(|e| e.to_string())? - want).abs());
    }
    check(worst_psnr < 1e-6 && worst_ssim < 1e-6, format!("PSNR error {worst_psnr:e}, MS-SSIM error {worst_ssim:e}"))?;
    let a = uniform(&[2, 8, 8, 3], 0.0, 1.0, 50);
    let (p, s) = (psnr(&a, &a).map_err(|e| e.to_string())?, ms_ssim(&a, &a).map_err(|e| e.to_string())?);
    check(p == PSNR_MAX && s == 1.0, format!("identical inputs give {p} dB and {s}"))?;
    let mut cases = 0;
    for v in 0..16u8 {
        let data = [(v >> 3) & 1, (v >> 2) & 1, (v >> 1) & 1, v & 1];
        let code = fec_encode(&data);
        for flip in 0..8 {
            let mut c = code.clone();
            if flip < 7 {
                c[flip] ^= 1;
            }
            check(fec_decode(&c) == data, format!("codeword {v}, flip {flip}"))?;
            cases += 1;
        }
    }
    Ok(format!(
        "PSNR error {worst_psnr:.1e}, MS-SSIM error {worst_ssim:.1e}, sentinels exact, {cases}/128 Hamming cases"
    ))
}

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_semcom"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), format!("semcom {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let clip = make_synthetic_clip(SyntheticKind::Translate, 16, 16, 2, (2, 1), 9).map_err(|e| e.to_string())?;
    write_svc1(&dir.join("clip.svc1"), clip.frames()).map_err(|e| e.to_string())?;
    let mut compared = Vec::new();
    for run in ["a", "b"] {
        let config = format!(
            "seed = 4\noutput_dir = \"{run}\"\n\n[model]\nheight = 16\nwidth = 16\nrho = 0.031\n\n\
             [train]\nlearning_rate = 1e-3\nbatch_size = 4\nsteps = 15\n\n[data]\nkind = \"translate\"\nclips = 4\n"
        );
        std::fs::write(dir.join(format!("{run}.toml")), config).map_err(|e| e.to_string())?;
        let cfg = format!("{run}.toml");
        let ck = format!("{run}/checkpoint.safetensors");
        run_cli(&["train", "--config", &cfg], dir)?;
        run_cli(
            &[
                "sweep",
                "--config",
                &cfg,
                "--checkpoint",
                &ck,
                "--grid",
                "-5,5,15,inf",
                "--with-baseline",
                "--out",
                &format!("{run}/sweep.csv"),
            ],
            dir,
        )?;
        run_cli(
            &[
                "sweep",
                "--config",
                &cfg,
                "--checkpoint",
                &ck,
                "--grid",
                "-5:15:10",
                "--snr-test",
                "5",
                "--out",
                &format!("{run}/mismatch.csv"),
            ],
            dir,
        )?;
        run_cli(&["baseline", "--config", &cfg, "--grid", "0:10:5", "--out", &format!("{run}/baseline.csv")], dir)?;
        run_cli(
            &[
                "transmit",
                "--checkpoint",
                &ck,
                "--clip",
                "clip.svc1",
                "--snr",
                "3",
                "--seed",
                "2",
                "--out",
                &format!("{run}/rec.svc1"),
                "--report",
                &format!("{run}/report.csv"),
            ],
            dir,
        )?;
    }
    for file in ["loss.csv", "sweep.csv", "mismatch.csv", "baseline.csv", "report.csv"] {
        let (a, b) = (read(&dir.join("a").join(file))?, read(&dir.join("b").join(file))?);
        check(!a.is_empty() && a == b, format!("{file} differs between runs"))?;
        compared.push(file);
    }
    Ok(format!("train, sweep, mismatch sweep, baseline and transmit CSVs identical ({})", compared.join(", ")))
}

fn main() {
    let t0 = Instant::now();
    let mut trained = None;
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {n}: {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n}: {name}: {why} [{secs:.1} s]");
            }
        }
    };
    report(1, "symbol accounting", &mut symbol_accounting);
    report(2, "channel physics", &mut channel_physics);
    report(3, "flow correctness", &mut flow_correctness);
    report(4, "differentiability", &mut differentiability);
    report(5, "overfit run", &mut || overfit(&mut trained));
    report(6, "graceful degradation vs cliff", &mut || degradation(&mut trained));
    report(7, "mismatch sweep shape", &mut || mismatch(&trained));
    report(8, "metric fidelity", &mut metric_fidelity);
    report(9, "determinism", &mut determinism);
    println!("{} of 9 criteria passed in {:.0} s", 9 - failed, t0.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
