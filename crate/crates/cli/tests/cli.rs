use std::path::Path;
use std::process::Command;

use semcom_cli::{
    cmd_baseline, cmd_sweep, cmd_train, cmd_transmit, parse_grid, BaselineArgs, CliError, ConfigError, RunConfig,
    SweepArgs, TransmitArgs,
};
use semcom_core::data_io::{load_clip, make_synthetic_clip, read_svc1, write_svc1, SyntheticKind};
use semcom_core::train_eval::{load_checkpoint, read_loss_csv, read_sweep_csv, System, TrainError};

const TINY: &str = r#"
seed = 3
output_dir = "OUT"

[model]
height = 16
width = 16
rho = 0.031
flow_dim = 4
key_channels = 8
flow_channels = 8
fused_channels = 8
enc_hidden = 8
dec_hidden = 8
channel_hidden = 8
unet_widths = [8, 8, 8]

[train]
learning_rate = 1e-3
steps = 50
batch_size = 8

[data]
kind = "translate"
clips = 8
"#;

fn tiny(out: &Path) -> RunConfig {
    RunConfig::parse(&TINY.replace("OUT", &out.display().to_string())).unwrap()
}

fn sweep<'a>(cfg: &'a RunConfig, ck: Option<&'a Path>, grid: &'a [f64], out: &'a Path) -> SweepArgs<'a> {
    SweepArgs {
        config: Some(cfg),
        checkpoint: ck,
        grid,
        mismatch_snr_test: None,
        with_baseline: false,
        seed: cfg.seed,
        out,
        plot: None,
        data_root: None,
    }
}

#[test]
fn missing_learning_rate_is_named() {
    let text = TINY.replace("learning_rate = 1e-3\n", "");
    let err = RunConfig::parse(&text).unwrap_err();
    assert!(matches!(err, ConfigError::Parse { .. }));
    assert!(err.to_string().contains("learning_rate"), "{err}");
}

#[test]
fn missing_and_unknown_model_keys_are_named() {
    let err = RunConfig::parse(&TINY.replace("rho = 0.031\n", "")).unwrap_err();
    assert!(err.to_string().contains("rho"), "{err}");
    let err = RunConfig::parse(&TINY.replace("flow_dim = 4", "flow_dimm = 4")).unwrap_err();
    assert!(err.to_string().contains("flow_dimm"), "{err}");
    let err = RunConfig::parse(&TINY.replace("height = 16", "height = 18")).unwrap_err();
    assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
}

#[test]
fn fingerprint_ignores_key_order_and_formatting() {
    let a = RunConfig::parse(TINY).unwrap();
    let reordered = r#"
output_dir = "elsewhere"
seed = 3

[data]
clips = 8
kind = "translate"

[train]
batch_size = 8
steps = 50
learning_rate = 0.001

[model]
unet_widths = [ 8, 8, 8 ]
channel_hidden = 8
dec_hidden = 8
enc_hidden = 8
fused_channels = 8
flow_channels = 8
key_channels = 8
flow_dim = 4
rho = 0.031
width = 16
height = 16
"#;
    let b = RunConfig::parse(reordered).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_eq!(a.fingerprint().len(), 64);
    assert_ne!(a.fingerprint(), a.clone().with_seed(4).fingerprint());
    assert_ne!(a.fingerprint(), a.clone().with_rho(0.021).unwrap().fingerprint());
}

#[test]
fn presets_and_overrides() {
    let cfg = RunConfig::parse(
        "[model]\npreset = \"paper\"\nheight = 64\nwidth = 64\nrho = 0.021\n[train]\nlearning_rate = 1e-4\nsteps = 1\n",
    )
    .unwrap();
    assert_eq!(cfg.model.t, 8);
    assert_eq!(cfg.model.flow_channels, 512);
    assert_eq!(cfg.train.batch_size, 8);
    let small = RunConfig::parse(TINY).unwrap();
    assert_eq!(small.model.t, 4);
    assert_eq!(small.model.unet_widths, [8, 8, 8]);
}

#[test]
fn data_seed_decouples_clips_from_the_run_seed() {
    let a = RunConfig::parse(TINY).unwrap();
    let b = RunConfig::parse(TINY).unwrap().with_seed(9);
    assert_ne!(a.load_dataset(None).unwrap(), b.load_dataset(None).unwrap());
    let pinned = TINY.replace("clips = 8", "clips = 8\nseed = 3");
    let c = RunConfig::parse(&pinned).unwrap().with_seed(9);
    assert_eq!(a.load_dataset(None).unwrap(), c.load_dataset(None).unwrap());
}

#[test]
fn shipped_configs_parse() {
    for name in ["overfit.toml", "awgn.toml"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.model.plan().unwrap().symbols, 192, "{name}");
        assert_eq!(cfg.data.seed, Some(7));
    }
}

#[test]
fn train_writes_checkpoint_and_deterministic_loss_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = cmd_train(&tiny(&dir.path().join("a")), None, None).unwrap();
    let b = cmd_train(&tiny(&dir.path().join("b")), None, None).unwrap();
    let csv_a = std::fs::read(&a.loss_csv).unwrap();
    assert_eq!(csv_a, std::fs::read(&b.loss_csv).unwrap());
    assert_eq!(std::fs::read(&a.checkpoint).unwrap(), std::fs::read(&b.checkpoint).unwrap());
    let rows = read_loss_csv(csv_a.as_slice()).unwrap();
    assert_eq!(rows.len(), 50);
    assert!(String::from_utf8(csv_a).unwrap().starts_with("step,loss,snr_db\n"));
    let ck = load_checkpoint(&a.checkpoint).unwrap();
    let cfg = tiny(&dir.path().join("a"));
    assert_eq!(ck.fingerprint, cfg.fingerprint());
    assert_eq!(ck.step, 50);
    assert_eq!(ck.config, cfg.model);

    let more = RunConfig { output_dir: dir.path().join("c"), ..cfg };
    let c = cmd_train(&more, Some(&a.checkpoint), None).unwrap();
    assert_eq!(load_checkpoint(&c.checkpoint).unwrap().step, 100);
}

#[test]
fn fine_tuning_rejects_a_different_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&dir.path().join("a"));
    cfg.train.steps = 1;
    let a = cmd_train(&cfg, None, None).unwrap();
    let other = cfg.with_rho(0.1).unwrap();
    let err = cmd_train(&other, Some(&a.checkpoint), None).unwrap_err();
    assert!(matches!(err, CliError::Train(TrainError::IncompatibleCheckpoint(_))), "{err}");
}

#[test]
fn sweep_rows_baseline_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let grid = parse_grid("-5:15:5").unwrap();
    let out = dir.path().join("sweep.csv");
    let plain = cmd_sweep(&sweep(&cfg, None, &grid, &out)).unwrap();
    assert_eq!(plain.rows.len(), 5);
    let plot = dir.path().join("plots/sweep.svg");
    let args = SweepArgs { with_baseline: true, plot: Some(&plot), ..sweep(&cfg, None, &grid, &out) };
    let full = cmd_sweep(&args).unwrap();
    assert_eq!(full.learned().count(), 5);
    assert_eq!(full.digital().count(), 5);
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(read_sweep_csv(bytes.as_slice()).unwrap(), full);
    assert!(String::from_utf8(bytes).unwrap().lines().skip(1).filter(|l| l.ends_with(",digital")).count() == 5);
    let svg = std::fs::read_to_string(&plot).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("MS-SSIM"));
}

#[test]
fn sweep_rejects_an_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let err = cmd_sweep(&sweep(&cfg, None, &[], &dir.path().join("x.csv"))).unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
}

#[test]
fn two_ratios_give_two_thirds_the_symbols() {
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig::parse(&TINY.replace("height = 16\nwidth = 16", "height = 32\nwidth = 32")).unwrap();
    let out = dir.path().join("s.csv");
    let count = |rho: f64| {
        let cfg = base.clone().with_rho(rho).unwrap();
        cmd_sweep(&sweep(&cfg, None, &[10.0], &out)).unwrap().rows[0].symbols
    };
    let (hi, lo) = (count(0.031), count(0.021));
    assert_eq!((hi, lo), (192, 128));
    assert!((3 * lo).abs_diff(2 * hi) <= 3);
}

#[test]
fn mismatch_and_noiseless_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = dir.path().join("m.csv");
    let grid = [-5.0, 5.0, 15.0];
    let res = cmd_sweep(&SweepArgs { mismatch_snr_test: Some(5.0), ..sweep(&cfg, None, &grid, &out) }).unwrap();
    assert!(res.rows.iter().all(|r| r.snr_test_db == 5.0 && r.system == System::Learned));
    let ests: Vec<f64> = res.rows.iter().map(|r| r.snr_est_db).collect();
    assert_eq!(ests, grid);

    let res = cmd_sweep(&sweep(&cfg, None, &[f64::INFINITY], &out)).unwrap();
    assert_eq!(res.rows[0].snr_est_db, cfg.train.snr_high_db);
    let back = read_sweep_csv(std::fs::read(&out).unwrap().as_slice()).unwrap();
    assert_eq!(back.rows[0].snr_test_db, f64::INFINITY);
}

#[test]
fn baseline_only_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = dir.path().join("b.csv");
    let grid = [0.0, 5.0, f64::INFINITY, 5.0];
    let args = BaselineArgs { config: &cfg, grid: &grid, seed: 1, out: &out, plot: None, data_root: None };
    let res = cmd_baseline(&args).unwrap();
    assert_eq!(res.rows.len(), 2);
    assert!(res.rows.iter().all(|r| r.system == System::Digital));
    assert_eq!(std::fs::read(&out).unwrap(), {
        let out2 = dir.path().join("b2.csv");
        cmd_baseline(&BaselineArgs { out: &out2, ..args }).unwrap();
        std::fs::read(&out2).unwrap()
    });
}

#[test]
fn transmit_writes_a_loadable_clip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&dir.path().join("run"));
    cfg.train.steps = 2;
    let trained = cmd_train(&cfg, None, None).unwrap();
    let clip_path = dir.path().join("clip.svc1");
    let clip = make_synthetic_clip(SyntheticKind::Translate, 16, 16, 4, (1, 0), 9).unwrap();
    write_svc1(&clip_path, clip.frames()).unwrap();
    let out = dir.path().join("out/rec.svc1");
    let report = dir.path().join("report.csv");
    let args = TransmitArgs {
        checkpoint: &trained.checkpoint,
        clip: &clip_path,
        snr_test_db: f64::INFINITY,
        snr_est_db: None,
        seed: 0,
        out: &out,
        report_csv: Some(&report),
        data_root: None,
    };
    let rep = cmd_transmit(&args).unwrap();
    assert!(rep.psnr_db.is_finite());
    let raw = read_svc1(&out).unwrap();
    assert_eq!(raw.shape(), &[2, 16, 16, 3]);
    let loaded = load_clip(&out, 2, (16, 16), 4).unwrap();
    assert_eq!(loaded.frames(), &raw);
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("frame,psnr_db,ms_ssim\n"));
    assert_eq!(text.lines().count(), 4);

    let noisy = TransmitArgs { snr_test_db: -20.0, seed: 5, ..args };
    let rep = cmd_transmit(&noisy).unwrap();
    assert!(rep.psnr_db.is_finite() && rep.psnr_db > 0.0);
    let first = std::fs::read(&report).unwrap();
    cmd_transmit(&noisy).unwrap();
    assert_eq!(std::fs::read(&report).unwrap(), first);
}

#[test]
fn data_root_supplies_clips_and_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    std::fs::create_dir_all(&root).unwrap();
    for i in 0..3 {
        let c = make_synthetic_clip(SyntheticKind::Translate, 16, 16, 2, (1, 1), i).unwrap();
        write_svc1(&root.join(format!("c{i}.svc1")), c.frames()).unwrap();
    }
    let text = TINY.replace("kind = \"translate\"\nclips = 8\n", "");
    let cfg = RunConfig::parse(&text.replace("OUT", "unused")).unwrap();
    assert_eq!(cfg.load_dataset(Some(&root)).unwrap().len(), 3);
    assert!(cfg.load_dataset(None).is_err());
    let with_path =
        RunConfig::parse(&text.replace("OUT", "unused").replace("[data]\n", "[data]\npath = \"data\"\nclips = 2\n"))
            .unwrap();
    assert_eq!(with_path.load_dataset(Some(dir.path())).unwrap().len(), 2);

    let out = dir.path().join("s.csv");
    let grid = [5.0];
    let args = SweepArgs { config: None, data_root: Some(&root), ..sweep(&cfg, None, &grid, &out) };
    assert!(matches!(cmd_sweep(&args), Err(CliError::Usage(_))));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_semcom");
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    std::fs::write(&cfg_path, TINY.replace("learning_rate = 1e-3\n", "")).unwrap();
    let out = Command::new(bin).args(["train", "--config"]).arg(&cfg_path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    std::fs::write(&cfg_path, TINY.replace("OUT", &dir.path().join("o").display().to_string())).unwrap();
    let out = Command::new(bin).args(["sweep", "--grid", "", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(bin).args(["sweep", "--grid", "5:0:1", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(bin).arg("--help").output().unwrap();
    assert!(out.status.success());
}
