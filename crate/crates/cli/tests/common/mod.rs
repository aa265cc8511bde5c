//! Synthetic recordings in the public file formats.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use deepact_cli::config::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WISDM_ACTIVITIES: [&str; 6] = ["Walking", "Jogging", "Sitting", "Standing", "Upstairs", "Downstairs"];

/// Each activity is a tone at its own frequency, with a subharmonic and an
/// overtone, plus noise. Units are m/s².
fn wisdm_reading(class: usize, k: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let hz = 20.0;
    let f = 0.5 + 1.5 * class as f64;
    let t = k as f64 / hz;
    let s = (2.0 * PI * f * t).sin()
        + 0.5 * (2.0 * PI * (f / 2.0 + 0.35) * t).sin()
        + 0.3 * (2.0 * PI * 2.0 * f * t).sin();
    [
        3.0 * s + 0.3 * (rng.random::<f64>() - 0.5),
        9.8 + 1.5 * s + 0.3 * (rng.random::<f64>() - 0.5),
        0.5 * class as f64 + 0.3 * (rng.random::<f64>() - 0.5),
    ]
}

/// `users` subjects, each performing `blocks` activity blocks of
/// `windows_per_block` 10 s windows. The activity sequence is a sticky chain
/// so whole windows carry one label.
pub fn write_wisdm(dir: &Path, users: u32, blocks: usize, windows_per_block: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for user in 1..=users {
        let mut ts: u64 = 1_000_000_000_000;
        let mut class = (user as usize) % 6;
        for b in 0..blocks {
            if b > 0 {
                class = (class + 1 + rng.random_range(0..5)) % 6;
            }
            for k in 0..windows_per_block * 200 {
                let r = wisdm_reading(class, k, &mut rng);
                let _ = writeln!(
                    text,
                    "{user},{},{ts},{:.4},{:.4},{:.4};",
                    WISDM_ACTIVITIES[class], r[0], r[1], r[2]
                );
                ts += 50_000_000;
            }
        }
    }
    let path = dir.join("wisdm.txt");
    std::fs::write(&path, text).unwrap();
    path
}

/// Daphnet-style files (`S01R01.txt`, ...) with freeze episodes that shake
/// the ankle sensor at a higher frequency. Values in mg.
pub fn write_daphnet(dir: &Path, subjects: u32, seconds: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = dir.join("daphnet");
    std::fs::create_dir_all(&root).unwrap();
    for s in 1..=subjects {
        let mut text = String::new();
        for k in 0..seconds * 64 {
            let t = k as f64 / 64.0;
            let freeze = (k / (64 * 8)) % 3 == 2;
            let f = if freeze { 6.0 } else { 1.5 };
            let a = 400.0 * (2.0 * PI * f * t).sin();
            let mut noise = || 30.0 * (rng.random::<f64>() - 0.5);
            let label = if k < 64 { 0 } else if freeze { 2 } else { 1 };
            let _ = writeln!(
                text,
                "{} {:.0} {:.0} {:.0} 0 0 0 0 0 0 {label}",
                (t * 1000.0) as u64,
                a + noise(),
                1000.0 + 0.5 * a + noise(),
                noise()
            );
        }
        std::fs::write(root.join(format!("S{s:02}R01.txt")), text).unwrap();
    }
    root
}

/// Small, fast config for synthetic WISDM runs.
pub fn small_config(data: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.path = data.to_path_buf();
    cfg.model.layers = vec![24, 12];
    cfg.model.grbm.epochs = 10;
    cfg.model.grbm.learning_rate = 0.01;
    cfg.model.grbm.batch_size = 8;
    cfg.model.brbm.epochs = 10;
    cfg.model.brbm.batch_size = 8;
    cfg.model.finetune.epochs = 100;
    cfg.model.finetune.batch_size = 8;
    cfg.model.finetune.learning_rate = 0.5;
    cfg.seed = 7;
    cfg
}
