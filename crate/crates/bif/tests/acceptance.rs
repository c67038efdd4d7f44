//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use bif::config::ExperimentConfig;
use bif::data;
use bif::experiment;
use bif::io;
use bif::report::RunReport;
use bif_core::bounds::{mcmc_bound, vi_bound};
use bif_core::certificate::{kl_meanfield, vi_certificate};
use bif_core::clock::SystemClock;
use bif_core::models::EnergyModel;
use bif_core::forget::{forget_mcmc, ForgetRequest};
use bif_core::influence::{neumann_inverse_hvp, power_iteration, vi_influence, InfluenceConfig, ScalePolicy};
use bif_core::linalg::{dense_solve, norm2, DenseMatrix, ParamVector};
use bif_core::models::{BayesianClassifier, ClassifierArch, ConjugateGaussianMean, ConjugateVi, Gmm, GmmVi};
use bif_core::sgmcmc::{effective_sample_size, run_chain, SamplerKind};
use bif_core::vi::{McVi, MeanFieldGaussianParams, SigmaBounds};
use bif_core::{seeded_rng, Datum, Dataset, RngStream};

type Outcome = Result<String, String>;

const NS: [usize; 5] = [100, 200, 400, 800, 1600];
const BOUNDS: SigmaBounds = SigmaBounds { min: 1e-3, max: 10.0 };

fn config(pairs: &[(&str, &str)]) -> ExperimentConfig {
    let o: Vec<(String, String)> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    ExperimentConfig::from_toml_str("", &o, None).expect("valid config")
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x.ln() / k, b + y.ln() / k));
    let num: f64 = points.iter().map(|(x, y)| (x.ln() - mx) * (y.ln() - my)).sum();
    let den: f64 = points.iter().map(|(x, _)| (x.ln() - mx).powi(2)).sum();
    num / den
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

struct ConjugateCase {
    lam: Vec<f64>,
    processed: Vec<f64>,
    retrained: Vec<f64>,
    shift: Vec<f64>,
}

/// Single-datum VI forgetting on the conjugate model, with a fixed outlying datum 0.
fn conjugate_case(n: usize) -> ConjugateCase {
    let m = ConjugateGaussianMean::new(1, 1.0);
    let mut rng = seeded_rng(n as u64);
    let mut rows = vec![vec![1.5]];
    rows.extend((1..n).map(|_| vec![0.5 + rng.normal()]));
    let s = Dataset::from_rows(&rows, None).unwrap();
    let lam = MeanFieldGaussianParams::from_flat(&m.vi_optimum(&s), BOUNDS).unwrap();
    let cfg = InfluenceConfig { neumann_j: 200, scale: ScalePolicy::Spectral { safety: 0.9 }, ..Default::default() };
    let (inf, _) = vi_influence(&m, &lam, &s, &[0], &cfg).unwrap();
    let mut out = lam.clone();
    out.shift(&inf.delta).unwrap();
    ConjugateCase { lam: lam.flat(), processed: out.flat(), retrained: m.vi_optimum(&s.remove(&[0]).unwrap()), shift: inf.delta }
}

fn c1() -> Outcome {
    let t = Instant::now();
    let pts: Vec<(f64, f64)> = NS.iter().map(|&n| {
        let c = conjugate_case(n);
        (n as f64, dist(&c.processed, &c.retrained))
    }).collect();
    let s = slope(&pts);
    let secs = t.elapsed().as_secs_f64();
    check(s <= -1.8 && secs < 60.0, format!("slope {s:.3} (need <= -1.8), {secs:.2}s"))
}

fn random_spd(rng: &mut RngStream, p: usize) -> DenseMatrix {
    let a: Vec<f64> = (0..p * p).map(|_| rng.normal()).collect();
    let mut h = DenseMatrix::identity(p);
    for i in 0..p {
        for j in 0..p {
            let v: f64 = (0..p).map(|k| a[k * p + i] * a[k * p + j]).sum();
            h.add_at(i, j, v / p as f64);
        }
    }
    h.symmetrize();
    h
}

fn c2() -> Outcome {
    let t = Instant::now();
    let mut rng = seeded_rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let h = random_spd(&mut rng, 10);
        let v: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
        let lmax = power_iteration(&h, 500).map_err(|e| e.to_string())?;
        let (x, _) = neumann_inverse_hvp(&h, &v, 500, 0.9 / lmax).map_err(|e| e.to_string())?;
        let exact = dense_solve(&h, &ParamVector::new(v).unwrap()).map_err(|e| e.to_string())?;
        let exact = exact.as_slice();
        worst = worst.max(dist(&x, exact) / norm2(exact));
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst <= 1e-4 && secs < 10.0, format!("worst relative error {worst:.2e}, {secs:.2}s"))
}

fn c3() -> Outcome {
    let mut rng = seeded_rng(3);
    let (m1, m2) = (0.2, 3.0);
    let mut violations = 0;
    for _ in 0..100 {
        let d = 1 + rng.below(6);
        let mut pair = [Vec::new(), Vec::new()];
        for l in pair.iter_mut() {
            l.extend((0..d).map(|_| 2.0 * rng.normal()));
            l.extend((0..d).map(|_| m1 + (m2 - m1) * rng.uniform()));
        }
        let kl = kl_meanfield(&pair[0], &pair[1]).map_err(|e| e.to_string())?;
        let eps = vi_certificate(&pair[0], &pair[1], m1, m2).map_err(|e| e.to_string())?.epsilon;
        if kl > eps {
            violations += 1;
        }
    }
    let hand = vi_certificate(&[0.1, 1.0], &[0.0, 1.0], 1.0, 1.0).map_err(|e| e.to_string())?.epsilon;
    let hand_err = (hand - 0.205).abs();
    check(violations == 0 && hand_err <= 1e-12, format!("{violations} violations in 100 pairs, hand value {hand} (error {hand_err:.1e})"))
}

/// Criterion 4 and 5 share the GMM runs: seed 0 for the accuracy check, seeds 0..3 for speed.
fn gmm_runs() -> (Outcome, Outcome) {
    let mut accuracy = Vec::new();
    let mut speed = Vec::new();
    let (mut acc_ok, mut speed_ok) = (true, true);
    for kind in ["vi", "sgld", "sghmc"] {
        let mut ratios = Vec::new();
        for seed in 0..3u64 {
            let cfg = config(&[("model", "gmm"), ("inference", kind), ("seed", &seed.to_string())]);
            let t = Instant::now();
            let out = experiment::run_experiment(&cfg);
            let secs = t.elapsed().as_secs_f64();
            let r = &out.report;
            let Some(d) = r.distances.as_ref().filter(|_| r.succeeded()) else {
                acc_ok = false;
                speed_ok = false;
                accuracy.push(format!("{kind} seed {seed} failed: {:?}", r.failure));
                continue;
            };
            if seed == 0 {
                let limit = 0.2 * d.original_to_retrain + 0.05;
                let ok = d.processed_to_retrain <= limit && secs < 300.0 && r.n_removed == 800;
                acc_ok &= ok;
                accuracy.push(format!("{kind} {:.3} <= {limit:.3} in {secs:.0}s", d.processed_to_retrain));
            }
            ratios.push(r.timings.retrain_secs / r.timings.forget_secs);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
        speed_ok &= ratios.len() == 3 && mean >= 5.0;
        speed.push(format!("{kind} {mean:.1}x"));
    }
    (check(acc_ok, accuracy.join("; ")), check(speed_ok, format!("mean retrain/forget {} (need >= 5x)", speed.join(", "))))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    dist(a, b) / (1.0 + norm2(b))
}

fn central_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Worst gradient error of h and f over 100 probes. `probe` draws (γ, x, label).
fn worst_gradient_error<M: EnergyModel + ?Sized>(m: &M, probe: &mut dyn FnMut(&mut RngStream) -> (Vec<f64>, Vec<f64>, Option<usize>)) -> f64 {
    let mut rng = seeded_rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (gamma, x, label) = probe(&mut rng);
        let z = match label {
            Some(y) => Datum::labelled(&x, y),
            None => Datum::new(&x),
        };
        let mut gh = vec![0.0; gamma.len()];
        m.add_grad_h(&gamma, z, 1.0, &mut gh);
        let mut gf = vec![0.0; gamma.len()];
        m.add_grad_f(&gamma, 1.0, &mut gf);
        worst = worst.max(rel_err(&gh, &central_grad(|g| m.h(g, z), &gamma)));
        worst = worst.max(rel_err(&gf, &central_grad(|g| m.f(g), &gamma)));
    }
    worst
}

fn normals(rng: &mut RngStream, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| s * rng.normal()).collect()
}

/// Flat (μ, σ) with σ kept away from zero.
fn lam_probe(rng: &mut RngStream, d: usize) -> Vec<f64> {
    let mut l = normals(rng, d, 1.0);
    l.extend((0..d).map(|_| 0.1 + rng.uniform()));
    l
}

fn c6() -> Outcome {
    let conj = ConjugateGaussianMean::new(3, 1.5);
    let gmm = Gmm::new(4, 2, 1.0);
    let logistic = BayesianClassifier::new(ClassifierArch::logistic(4, 3), 1.0);
    let hidden = BayesianClassifier::new(ClassifierArch::one_hidden(4, 5, 3), 1.0);
    let mc = McVi::new(&hidden, 3, &mut seeded_rng(60));
    let pl = logistic.dim_param();
    let ph = hidden.dim_param();
    let results = [
        ("conjugate", worst_gradient_error(&conj, &mut |r| (normals(r, 3, 1.0), normals(r, 3, 2.0), None))),
        ("conjugate-vi", worst_gradient_error(&ConjugateVi { model: conj }, &mut |r| (lam_probe(r, 3), normals(r, 3, 2.0), None))),
        ("gmm", worst_gradient_error(&gmm, &mut |r| (normals(r, 8, 2.0), normals(r, 2, 2.0), None))),
        ("gmm-vi", worst_gradient_error(&GmmVi { model: gmm }, &mut |r| (lam_probe(r, 8), normals(r, 2, 2.0), None))),
        ("logistic", worst_gradient_error(&logistic, &mut |r| (normals(r, pl, 1.0), normals(r, 4, 1.0), Some(r.below(3))))),
        ("hidden", worst_gradient_error(&hidden, &mut |r| (normals(r, ph, 1.0), normals(r, 4, 1.0), Some(r.below(3))))),
        ("hidden-mc-vi", worst_gradient_error(&mc, &mut |r| (lam_probe(r, ph), normals(r, 4, 1.0), Some(r.below(3))))),
    ];
    let ok = results.iter().all(|(_, e)| *e <= 1e-5);
    let msg = results.iter().map(|(name, e)| format!("{name} {e:.1e}")).collect::<Vec<_>>().join(", ");
    check(ok, msg)
}

fn c7() -> Outcome {
    let cfg = config(&[("model", "conjugate"), ("inference", "sgld"), ("batch_size", "0")]);
    let model = ConjugateGaussianMean::new(cfg.dim, cfg.prior_std);
    let (train, _) = data::generate(&cfg).map_err(|e| e.to_string())?;
    let n = train.len();
    let chain = cfg.chain_config();
    let original = run_chain(&model, &train, &chain, SamplerKind::Sgld).map_err(|e| e.to_string())?;
    let req = ForgetRequest::new(vec![0], 1, cfg.influence_config());
    let processed = forget_mcmc(&model, original.clone(), train.clone(), &req, &SystemClock::default()).map_err(|f| f.error.to_string())?.state;
    let retrained = run_chain(&model, &train.remove(&[0]).unwrap(), &chain, SamplerKind::Sgld).map_err(|e| e.to_string())?;

    let len = original.len();
    let mut exact = true;
    for a in 0..len {
        for b in 0..len {
            let (p, o) = (processed.difference(a, b), original.difference(a, b));
            exact &= p.iter().zip(&o).all(|(x, y)| x.to_bits() == y.to_bits());
        }
    }

    // Band: the O(1/n²) remainder plus three Monte-Carlo standard errors of the retrained mean.
    let samples = retrained.samples();
    let se = (0..retrained.dim())
        .map(|k| {
            let xs: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            (var / effective_sample_size(&xs)).sqrt()
        })
        .fold(0.0, f64::max);
    let band = 10.0 / (n * n) as f64 + 3.0 * se;
    let gap = dist(&processed.mean(), &retrained.mean());
    let before = dist(&original.mean(), &retrained.mean());
    check(exact && gap <= band, format!("{len}² differences bit-exact: {exact}; mean gap {gap:.2e} (before {before:.2e}) within band {band:.2e}"))
}

fn c8() -> Outcome {
    let ln = f64::ln;
    let c_vi = 0.02 + 2.0 * 2f64.sqrt() * 0.02f64.sqrt() + 2.0 - 2.0 * ln(0.9);
    let want_vi = 0.2 + ((c_vi - 1.0 + 2.0 * ln(20.0) + 2.0 * ln(1000.0) + 4.0) / (4.0 * 1000.0 - 2.0)).sqrt();
    let got_vi = vi_bound(0.2, &[1.0, 1.0], &[0.1, 0.1], 1000, 0.05).map_err(|e| e.to_string())?.bound;
    let j = DenseMatrix::diagonal(&[2.0]);
    let c_mc = 0.1 * 0.1 + 2.0 * 0.1 * 1.0 + 1.0 + 1.0 / (2.0 * 1000.0) + ln(2.0);
    let want_mc = 0.2 + ((c_mc + 2.0 * ln(20.0) + 3.0 * ln(1000.0) - 1.0 + 4.0) / (4.0 * 1000.0 - 2.0)).sqrt();
    let got_mc = mcmc_bound(0.2, &[1.0], &[0.1], &j, 1000, 0.05).map_err(|e| e.to_string())?.bound;
    let hand = (got_vi - want_vi).abs().max((got_mc - want_mc).abs());

    let sizes = [50, 100, 200, 400, 800, 1600, 3200];
    let vi_seq: Vec<f64> = sizes.iter().map(|&n| vi_bound(0.2, &[1.0, 1.0], &[0.1, 0.1], n, 0.05).unwrap().bound).collect();
    let mc_seq: Vec<f64> = sizes.iter().map(|&n| mcmc_bound(0.2, &[1.0], &[0.1], &j, n, 0.05).unwrap().bound).collect();
    let monotone = vi_seq.windows(2).chain(mc_seq.windows(2)).all(|w| w[1] < w[0]);

    let pts: Vec<(f64, f64)> = NS
        .iter()
        .map(|&n| {
            let c = conjugate_case(n);
            let with = vi_bound(0.2, &c.lam, &c.shift, n, 0.05).unwrap().bound;
            let without = vi_bound(0.2, &c.lam, &vec![0.0; c.lam.len()], n, 0.05).unwrap().bound;
            (n as f64, (with - without).abs())
        })
        .collect();
    let s = slope(&pts);
    check(hand <= 1e-6 && monotone && s <= -0.8, format!("hand error {hand:.1e}, monotone {monotone}, increment slope {s:.3} (need <= -0.8)"))
}

fn run_all_report(inference: &str) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let o = Command::new(env!("CARGO_BIN_EXE_bif"))
        .args(["run-all", "--out-dir"])
        .arg(dir.path())
        .args(["--model", "conjugate", "--inference", inference, "--seed", "9"])
        .env_remove("BIF_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let text = std::fs::read_to_string(dir.path().join("report.json")).map_err(|e| e.to_string())?;
    let r: RunReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    Ok(io::to_json(&r.without_timings()))
}

fn c9() -> Outcome {
    let mut same = Vec::new();
    for inference in ["vi", "sgld", "sghmc"] {
        let (a, b) = (run_all_report(inference)?, run_all_report(inference)?);
        same.push((inference, a == b));
    }
    let ok = same.iter().all(|(_, s)| *s);
    check(ok, same.iter().map(|(k, s)| format!("{k} identical: {s}")).collect::<Vec<_>>().join(", "))
}

fn main() -> ExitCode {
    let (c4, c5) = gmm_runs();
    let results: [(&str, Outcome); 9] = [
        ("1 conjugate forgetting rate", c1()),
        ("2 inverse-HVP accuracy", c2()),
        ("3 certificate soundness", c3()),
        ("4 GMM end-to-end", c4),
        ("5 forgetting speedup", c5),
        ("6 gradient fidelity", c6()),
        ("7 MCMC shift geometry", c7()),
        ("8 bound evaluators", c8()),
        ("9 determinism", c9()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(msg) => println!("PASS criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
