//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lungseg::dataset::{scan_dataset, split, Layout, Manifest, Split, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC};
use lungseg::eval::{confusion, dice, evaluate, DEFAULT_THRESHOLD};
use lungseg::imaging::{dilate, BinaryMask};
use lungseg::train::{train_epochs, TrainConfig, Trainer};
use lungseg::unet::{read_checkpoint, write_checkpoint, UNet, UNetConfig};
use lungseg::{Error, Tensor};

use common::{gradient_suite, loader, phantom_set};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const GRAD_TOL: f64 = 1e-4;

fn gradients() -> Outcome {
    let results = gradient_suite();
    let worst = results.iter().cloned().fold(("", 0.0f64), |w, r| if r.1 > w.1 { r } else { w });
    let failing: Vec<_> = results.iter().filter(|r| !(r.1 < GRAD_TOL)).map(|r| r.0).collect();
    outcome(
        failing.is_empty(),
        format!(
            "{} checks, worst {} rel err {:.2e} (tol {GRAD_TOL:e}){}",
            results.len(),
            worst.0,
            worst.1,
            if failing.is_empty() { String::new() } else { format!("; failing: {failing:?}") }
        ),
    )
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
    let p: f64 = rng.random_range(0.0..1.0);
    BinaryMask::from_fn(w, h, |_, _| rng.random_bool(p))
}

fn dice_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let s = random_mask(&mut rng, 16, 16);
        let gt = random_mask(&mut rng, 16, 16);
        let (mut both, mut ns, mut ngt) = (0u64, 0u64, 0u64);
        let (mut fp, mut fnn) = (0u64, 0u64);
        for y in 0..16 {
            for x in 0..16 {
                let (a, b) = (s.get(x, y), gt.get(x, y));
                both += (a && b) as u64;
                ns += a as u64;
                ngt += b as u64;
                fp += (a && !b) as u64;
                fnn += (!a && b) as u64;
            }
        }
        let direct = if ns + ngt == 0 { 1.0 } else { (2 * both) as f64 / (ns + ngt) as f64 };
        let c = confusion(&s, &gt).unwrap();
        let counts_ok = c.tp == both && c.fp == fp && c.fn_ == fnn && c.total() == 256;
        if !counts_ok || dice(&s, &gt).unwrap().to_bits() != direct.to_bits() {
            mismatches += 1;
        }
    }
    let s = BinaryMask::new(4, 1, vec![true, true, true, false]).unwrap();
    let gt = BinaryMask::new(4, 1, vec![true, true, false, false]).unwrap();
    let hand = dice(&s, &gt).unwrap();
    outcome(
        mismatches == 0 && hand == 0.8,
        format!("1000 random 16x16 pairs, {mismatches} mismatches; hand case = {hand}"),
    )
}

fn dilation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..200 {
        let m = random_mask(&mut rng, 32, 32);
        let brute = BinaryMask::from_fn(32, 32, |x, y| {
            let mut any = false;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if (0..32).contains(&nx) && (0..32).contains(&ny) {
                        any |= m.get(nx as usize, ny as usize);
                    }
                }
            }
            any
        });
        if dilate(&m, 1) != brute {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("200 random 32x32 masks, {mismatches} mismatches"))
}

const OVERFIT_MAX_STEPS: usize = 500;

struct OverfitRun {
    losses: Vec<f64>,
    reached: Option<(usize, f64, f64)>,
    net: UNet,
    batch: lungseg::dataset::Batch,
}

fn overfit_run(seed: u64) -> OverfitRun {
    let mut l = loader(phantom_set(4, 64, 40), 64);
    let batch = l.sequential(4).unwrap().next().unwrap().unwrap();
    let cfg = UNetConfig {
        depth: 3,
        base_channels: 8,
        input_size: 64,
        ..UNetConfig::desk()
    };
    let mut trainer = Trainer::new(UNet::build(cfg, seed).unwrap(), 1e-3);
    let mut losses = Vec::new();
    let mut reached = None;
    for step in 1..=OVERFIT_MAX_STEPS {
        let s = trainer.step(&batch).unwrap();
        losses.push(s.loss);
        if s.loss < 0.05 && s.dice >= 0.99 {
            reached = Some((step, s.loss, s.dice));
            break;
        }
    }
    OverfitRun {
        losses,
        reached,
        net: trainer.net,
        batch,
    }
}

fn overfit(first: &OverfitRun) -> Outcome {
    match first.reached {
        Some((step, loss, d)) => outcome(
            true,
            format!("BCE {loss:.4} < 0.05 and DICE {d:.4} >= 0.99 at step {step} (limit {OVERFIT_MAX_STEPS})"),
        ),
        None => outcome(
            false,
            format!("not reached in {OVERFIT_MAX_STEPS} steps; final BCE {:.4}", first.losses.last().unwrap()),
        ),
    }
}

fn determinism(first: &OverfitRun) -> Outcome {
    let second = overfit_run(7);
    let same_history = first.losses.len() == second.losses.len()
        && first.losses.iter().zip(&second.losses).all(|(a, b)| a.to_bits() == b.to_bits());
    let restored: UNet = read_checkpoint(&write_checkpoint(&first.net).unwrap()).unwrap();
    let a = first.net.forward(&first.batch.images).unwrap();
    let b = restored.forward(&first.batch.images).unwrap();
    let same_output = a.shape() == b.shape()
        && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    outcome(
        same_history && same_output,
        format!(
            "loss history of {} steps bit-identical: {same_history}; checkpoint round trip forward bit-identical: {same_output}",
            first.losses.len()
        ),
    )
}

fn desk_config(epochs: usize, seed: u64, augment: bool) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr: 0.0005,
        seed,
        augment,
        report_every: 0,
        ..TrainConfig::default()
    }
}

/// Trains the desk profile and returns mean test Dice of the best-val model.
fn desk_test_dice(n_train: usize, seed: u64, augment: bool) -> f64 {
    let mut train = loader(phantom_set(n_train, 64, 100), 64);
    let mut val = loader(phantom_set(20, 64, 200), 64);
    let mut test = loader(phantom_set(40, 64, 300), 64);
    let net = UNet::<f32>::build(UNetConfig::desk(), seed).unwrap();
    let out = train_epochs(net, &desk_config(20, seed, augment), &mut train, &mut val).unwrap();
    evaluate(&out.best, &mut test, DEFAULT_THRESHOLD, 4).unwrap().mean
}

fn generalization() -> Outcome {
    let d = desk_test_dice(200, 1, true);
    outcome(
        d >= 0.95,
        format!("200 train / 40 test phantoms, 20 epochs, lr 0.0005, batch 4: mean test DICE {d:.4} (need >= 0.95)"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn augmentation() -> Outcome {
    let seeds = [1, 2, 3];
    let with: Vec<f64> = seeds.iter().map(|&s| desk_test_dice(40, s, true)).collect();
    let without: Vec<f64> = seeds.iter().map(|&s| desk_test_dice(40, s, false)).collect();
    let (mw, mo) = (median(with.clone()), median(without.clone()));
    outcome(
        mw >= mo - 0.01,
        format!("40 train phantoms, median of 3 seeds: with aug {mw:.4} {with:.4?}, without {mo:.4} {without:.4?}"),
    )
}

fn touch(p: &Path) {
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    fs::write(p, b"").unwrap();
}

fn split_arithmetic() -> Outcome {
    let records = (0..100)
        .map(|i| lungseg::dataset::SampleRecord {
            id: format!("s{i}"),
            image: format!("s{i}.png").into(),
            masks: vec![format!("s{i}_mask.png").into()],
            source: lungseg::dataset::Source::Generic,
            split: Split::Unassigned,
        })
        .collect();
    let m = split(&Manifest::new(records).unwrap(), 8, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC).unwrap();
    let counts = (m.count(Split::Train), m.count(Split::Val), m.count(Split::Test));
    let exhaustive = m.count(Split::Unassigned) == 0 && counts.0 + counts.1 + counts.2 == 100;

    let dir = tempfile::tempdir().unwrap();
    let mont = dir.path().join("montgomery");
    let shen = dir.path().join("shenzhen");
    for i in 0..138 {
        let stem = format!("MCUCXR_{i:04}_{}.png", i % 2);
        touch(&mont.join("CXR_png").join(&stem));
        touch(&mont.join("ManualMask/leftMask").join(&stem));
        touch(&mont.join("ManualMask/rightMask").join(&stem));
    }
    for i in 0..615 {
        let stem = format!("CHNCXR_{i:04}_{}", i % 2);
        touch(&shen.join("CXR_png").join(format!("{stem}.png")));
        touch(&shen.join("mask").join(format!("{stem}_mask.png")));
    }
    let pooled = Manifest::merge([
        scan_dataset(&mont, Layout::Montgomery).unwrap().manifest,
        scan_dataset(&shen, Layout::Shenzhen).unwrap().manifest,
    ])
    .unwrap();
    let p = split(&pooled, 8, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC);
    let pooled_ok = matches!(&p, Ok(m) if m.len() == 753 && m.count(Split::Unassigned) == 0);
    let pc = p
        .map(|m| (m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)))
        .unwrap_or_default();
    outcome(
        counts == (72, 8, 20) && exhaustive && pooled_ok,
        format!(
            "N=100 -> train/val/test {}/{}/{}; pooled 138+615 -> {}/{}/{}",
            counts.0, counts.1, counts.2, pc.0, pc.1, pc.2
        ),
    )
}

fn shape_sweep() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut problems = Vec::new();
    for size in [32, 64, 128] {
        for depth in [1, 2, 3] {
            let cfg = UNetConfig {
                depth,
                base_channels: 4,
                input_size: size,
                ..UNetConfig::desk()
            };
            let net = UNet::<f32>::build(cfg, 5).unwrap();
            let x = Tensor::from_fn(&[2, 1, size, size], |_| rng.random_range(0.0f32..1.0));
            let y = net.forward(&x).unwrap();
            if y.shape() != [2, 1, size, size] || !y.data().iter().all(|&v| v > 0.0 && v < 1.0) {
                problems.push(format!("size {size} depth {depth}"));
            }
        }
    }
    for (size, depth) in [(36, 3), (33, 1), (50, 2), (100, 3)] {
        let cfg = UNetConfig {
            depth,
            base_channels: 4,
            input_size: 32,
            ..UNetConfig::desk()
        };
        let net = UNet::<f32>::build(cfg, 5).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 1, size, size]);
        if !matches!(net.forward(&x), Err(Error::Shape(_))) {
            problems.push(format!("indivisible {size} depth {depth} accepted"));
        }
    }
    outcome(
        problems.is_empty(),
        format!("9 size/depth combinations and 4 indivisible sizes; problems: {problems:?}"),
    )
}

fn main() -> ExitCode {
    let overfit_cell = std::cell::OnceCell::new();
    let first = || overfit_cell.get_or_init(|| overfit_run(7));
    type Check<'a> = (&'a str, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        ("gradient suite", Box::new(gradients)),
        ("metric oracle", Box::new(dice_oracle)),
        ("morphology oracle", Box::new(dilation_oracle)),
        ("overfit contract", Box::new(|| overfit(first()))),
        ("generalization contract", Box::new(generalization)),
        ("augmentation echo", Box::new(augmentation)),
        ("determinism", Box::new(|| determinism(first()))),
        ("split arithmetic", Box::new(split_arithmetic)),
        ("shape sweep", Box::new(shape_sweep)),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();

    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "[{status}] {n}. {name}: {} ({:.1}s)",
            result.detail,
            t.elapsed().as_secs_f64()
        );
        failed += (!result.pass) as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all criteria passed");
        ExitCode::SUCCESS
    }
}
