//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use degrade_bench::degrade::{
    adjust_contrast_brightness, motion_blur, motion_blur_kernel, resample, DegradationFactor, FactorKind,
};
use degrade_bench::ident::{tally, ConfusionCounts, TallyMode};
use degrade_bench::metrics::{align_pose_curve, CurvePoint, Estimate, RateKind, Subgroup};
use degrade_bench::report::{run_experiment, ExperimentConfig, ExperimentResults};
use degrade_bench::{seed, Image};
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<String, String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))?;
    Ok(format!("{t:.2?}"))
}

fn worked_example() -> Check {
    let start = Instant::now();
    let img = Image::new(2, 2, 1, vec![12, 24, 36, 48]).unwrap();
    let out = adjust_contrast_brightness(&img, 2.0, 50.0).map_err(|e| e.to_string())?;
    ensure(out.pixels() == [74, 98, 122, 146], || format!("got {:?}", out.pixels()))?;
    within(start, Duration::from_secs(1))
}

fn identities_and_kernels() -> Check {
    let start = Instant::now();
    for s in 1..=101 {
        let k = motion_blur_kernel(s).map_err(|e| e.to_string())?;
        let sum: f64 = k.to_matrix().iter().flatten().sum();
        ensure((sum - 1.0).abs() <= 1e-12, || format!("kernel {s} sums to {sum}"))?;
    }
    let mut rng = seed::rng(2);
    for i in 0..50 {
        let img = random_image(&mut rng, 64, 64);
        let same = |name: &str, out: &Image| ensure(out == &img, || format!("{name} changed image {i}"));
        same("blur 0", &motion_blur(&img, 0))?;
        same("blur 1", &motion_blur(&img, 1))?;
        same("scale 100", &resample(&img, 100.0).map_err(|e| e.to_string())?)?;
        same("contrast (1, 0)", &adjust_contrast_brightness(&img, 1.0, 0.0).map_err(|e| e.to_string())?)?;
    }
    within(start, Duration::from_secs(5))
}

fn oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = seed::rng(3);
    for i in 0..200 {
        let img = random_image(&mut rng, 8, 8);
        let s = rng.random_range(0..=24);
        ensure(motion_blur(&img, s) == blur_oracle(&img, s), || format!("blur mismatch on image {i}, s={s}"))?;
        let pct = rng.random_range(1..=100u32);
        let ok = match resample_oracle(&img, pct) {
            Some(want) => resample(&img, pct as f64).ok() == Some(want),
            None => resample(&img, pct as f64).is_err(),
        };
        ensure(ok, || format!("resample mismatch on image {i}, scale={pct}"))?;
    }
    for k in 0..200u64 {
        let inst = instance(seed::derive(3, k));
        let t = rng.random_range(-0.1..2.1);
        let got = tally(&inst.split, &search_all(&inst, t), TallyMode::PerComparison).map_err(|e| e.to_string())?;
        let want = tally_oracle(&inst.probes, &inst.mates, &inst.gallery, t);
        ensure(got == want, || format!("split {k}: {got:?} vs {want:?}"))?;
    }
    within(start, Duration::from_secs(30))
}

fn config_for(corpus: &Corpus, sweeps: &[(FactorKind, &[f64])]) -> ExperimentConfig {
    ExperimentConfig {
        manifest: corpus.manifest(),
        out: corpus.dir.path().join("out"),
        sweeps: sweeps.iter().map(|(k, l)| (*k, l.to_vec())).collect(),
        subgroups: vec![Subgroup::All],
        ..ExperimentConfig::default()
    }
}

fn all_counts(res: &ExperimentResults, factor: DegradationFactor) -> Vec<ConfusionCounts> {
    res.counts
        .iter()
        .filter(|c| c.subgroup == Subgroup::All && c.factor == factor)
        .map(|c| c.counts)
        .collect()
}

fn split_arithmetic(corpus: &Corpus) -> Check {
    let start = Instant::now();
    let baseline = DegradationFactor::baseline(FactorKind::Contrast);
    for t in [-1.0, 0.0, 0.3, 0.68, 1.0, 1.5, 2.0] {
        let mut cfg = config_for(corpus, &[(FactorKind::Contrast, &[1.0])]);
        cfg.threshold = t;
        let res = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let counts = all_counts(&res, baseline);
        ensure(counts.len() == cfg.plan.replications, || format!("{} replications", counts.len()))?;
        for (r, c) in counts.iter().enumerate() {
            ensure(c.tp + c.fn_ == 83 && c.fp + c.tn == 27806, || format!("t={t} replication {r}: {c:?}"))?;
        }
    }
    within(start, Duration::from_secs(60))
}

fn determinism() -> Check {
    let corpus = corpus(20, true);
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = serde_json::json!({
        "manifest": corpus.manifest(),
        "plan": {"gallery_size": 10, "probes_absent": 5, "probes_present": 5, "replications": 16},
        "sweeps": {
            "contrast": [0.25, 1.0, 4.0],
            "brightness": [0.0, 100.0],
            "motion_blur": [0.0, 50.0, 100.0],
            "resolution": [1.0, 10.0, 100.0],
            "pose": [-5.0, 0.0, 5.0],
        },
    });
    let path = work.path().join("config.json");
    std::fs::write(&path, cfg.to_string()).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut outputs = Vec::new();
    for threads in ["1", "0"] {
        let out = work.path().join(format!("t{threads}"));
        let o = Command::new(env!("CARGO_BIN_EXE_degrade-bench"))
            .args(["run", "--config", path.to_str().unwrap(), "--threads", threads, "--out", out.to_str().unwrap()])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        outputs.push(std::fs::read(out.join("curves.csv")).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], || "curves.csv differs between 1 and all threads".into())?;
    within(start, Duration::from_secs(120))
}

fn interval_coverage() -> Check {
    let start = Instant::now();
    let (p, n, reps, trials) = (0.1, 83, 256, 1000);
    let mut covered = 0;
    for trial in 0..trials {
        let mut rng = seed::rng(seed::derive(6, trial));
        let rates: Vec<f64> = (0..reps)
            .map(|_| (0..n).filter(|_| rng.random_bool(p)).count() as f64 / n as f64)
            .collect();
        let e = Estimate::from_samples(&rates, 0.95).map_err(|e| e.to_string())?.unwrap();
        if e.lo <= p && p <= e.hi {
            covered += 1;
        }
    }
    let share = covered as f64 / trials as f64;
    ensure(share >= 0.93, || format!("coverage {share}"))?;
    Ok(format!("coverage {share}, {}", within(start, Duration::from_secs(60))?))
}

fn directional_sanity(corpus: &Corpus) -> Check {
    let extremes = [
        (FactorKind::MotionBlur, 100.0),
        (FactorKind::Resolution, 1.0),
        (FactorKind::Contrast, 4.0),
        (FactorKind::Brightness, 100.0),
    ];
    let sweeps: Vec<(FactorKind, Vec<f64>)> = extremes.iter().map(|&(k, v)| (k, vec![k.baseline(), v])).collect();
    let sweeps: Vec<(FactorKind, &[f64])> = sweeps.iter().map(|(k, v)| (*k, v.as_slice())).collect();
    let res = run_experiment(&config_for(corpus, &sweeps)).map_err(|e| e.to_string())?;
    let rate = |kind: FactorKind, raw: f64, which: RateKind| -> Result<f64, String> {
        let p = res
            .curves
            .iter()
            .find(|p| p.factor == kind && p.raw_level == raw)
            .ok_or_else(|| format!("no point for {kind}={raw}"))?;
        p.estimate(which).map(|e| e.mean).ok_or_else(|| format!("{kind}={raw} {} undefined", which.name()))
    };
    let base_fnr = rate(FactorKind::Contrast, 1.0, RateKind::Fnr)?;
    let base_fpr = rate(FactorKind::Contrast, 1.0, RateKind::Fpr)?;
    let mut notes = vec![format!("baseline FNR {base_fnr:.4} FPR {base_fpr:.4}")];
    for (kind, raw) in &extremes[..2] {
        let fnr = rate(*kind, *raw, RateKind::Fnr)?;
        ensure(fnr > base_fnr, || format!("{kind}={raw} FNR {fnr} not above baseline {base_fnr}"))?;
        notes.push(format!("{kind}={raw} FNR {fnr:.4}"));
    }
    for (kind, raw) in &extremes {
        let fpr = rate(*kind, *raw, RateKind::Fpr)?;
        ensure(fpr <= base_fpr, || format!("{kind}={raw} FPR {fpr} above baseline {base_fpr}"))?;
    }
    Ok(notes.join(", "))
}

fn pose_point(psi: f64, fpr: Estimate, fnr: Estimate) -> CurvePoint {
    CurvePoint {
        factor: FactorKind::Pose,
        raw_level: psi,
        normalized_level: psi / 5.0,
        subgroup: Subgroup::All,
        fpr: Some(fpr),
        fnr: Some(fnr),
        counts: ConfusionCounts::default(),
        samples: Vec::new(),
        pose_shift: None,
    }
}

fn pose_alignment() -> Check {
    let start = Instant::now();
    let mut rng = seed::rng(8);
    let est = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mean: f64 = rng.random_range(0.2..0.8);
        Estimate { mean, lo: mean - rng.random_range(0.0..0.1), hi: mean + rng.random_range(0.0..0.1) }
    };
    for trial in 0..200 {
        let curve: Vec<CurvePoint> = (-5..=5).map(|p| pose_point(p as f64, est(&mut rng), est(&mut rng))).collect();
        for kind in [RateKind::Fpr, RateKind::Fnr] {
            let baseline: f64 = rng.random_range(0.1..0.9);
            let aligned = align_pose_curve(&curve, kind, baseline).map_err(|e| e.to_string())?;
            let zero = aligned.iter().find(|p| p.raw_level == 0.0).unwrap();
            ensure(zero.estimate(kind).unwrap().mean == baseline, || format!("trial {trial}: level 0 is not the baseline"))?;
            for (a, b) in aligned.iter().zip(&curve).filter(|(a, _)| !a.pose_shift.unwrap().clamped) {
                for (c, d) in aligned.iter().zip(&curve).filter(|(c, _)| !c.pose_shift.unwrap().clamped) {
                    let moved = a.estimate(kind).unwrap().mean - c.estimate(kind).unwrap().mean;
                    let orig = b.estimate(kind).unwrap().mean - d.estimate(kind).unwrap().mean;
                    ensure((moved - orig).abs() <= 1e-12, || format!("trial {trial}: difference changed by {}", moved - orig))?;
                }
            }
        }
    }
    let e = |m: f64| Estimate { mean: m, lo: m, hi: m };
    let curve = vec![pose_point(0.0, e(0.5), e(0.10)), pose_point(5.0, e(0.5), e(0.20))];
    let aligned = align_pose_curve(&curve, RateKind::Fnr, 0.04).map_err(|e| e.to_string())?;
    let got: Vec<f64> = aligned.iter().map(|p| p.fnr.unwrap().mean).collect();
    ensure(got[0] == 0.04 && (got[1] - 0.14).abs() <= 1e-12, || format!("worked example gave {got:?}"))?;
    let curve = vec![pose_point(0.0, e(0.5), e(0.30)), pose_point(-2.0, e(0.5), e(0.05))];
    let aligned = align_pose_curve(&curve, RateKind::Fnr, 0.1).map_err(|e| e.to_string())?;
    ensure(aligned[1].fnr.unwrap().mean == 0.0 && aligned[1].pose_shift.unwrap().clamped, || "clamp not flagged".into())?;
    within(start, Duration::from_secs(1))
}

fn main() {
    println!("generating the 400-identity synthetic corpus");
    let t = Instant::now();
    let big = corpus(400, false);
    println!("corpus ready in {:.2?}", t.elapsed());

    let checks: Vec<(&str, Box<dyn FnOnce() -> Check + '_>)> = vec![
        ("contrast/brightness worked example", Box::new(worked_example)),
        ("kernel normalization and identities", Box::new(identities_and_kernels)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("split arithmetic", Box::new(|| split_arithmetic(&big))),
        ("determinism", Box::new(determinism)),
        ("interval coverage", Box::new(interval_coverage)),
        ("directional sanity", Box::new(|| directional_sanity(&big))),
        ("pose alignment", Box::new(pose_alignment)),
    ];
    let mut failed = 0;
    let mut summary = BTreeMap::new();
    for (i, (name, check)) in checks.into_iter().enumerate() {
        let result = check();
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        if result.is_err() {
            failed += 1;
        }
        println!("criterion {} {name}: {status} ({detail})", i + 1);
        summary.insert(i + 1, status);
    }
    println!("{} of {} criteria passed", summary.len() - failed, summary.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
