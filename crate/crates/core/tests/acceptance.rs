//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fail.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::{
    grad_case_error, hand_rolled_federation, l2, max_abs_diff, normals, random_grad_case, rdp_quadrature, small_arch,
    small_datasets,
};
use fedhypevae::alignment::{mmd2, per_sample_mmd2, MultiKernel};
use fedhypevae::config::{Profile, RunConfig};
use fedhypevae::evalbench::{make_synthetic_federation, run_seed, stage_rng, summarize, Condition, LabelSkew, SeedRun, DATA_STREAM};
use fedhypevae::federation::{
    aggregation_weights, encode_payload, initial_clients, run_federation, FederationConfig,
    Party, PayloadKind,
};
use fedhypevae::hypernet::{generate_decoder, GeneratedDecoder};
use fedhypevae::model::Architecture;
use fedhypevae::numerics::ParamVector;
use fedhypevae::privacy::{
    calibrate_sigma, clip, privatize, rdp_subsampled_gaussian, DPConfig, NoiseMode, PrivacyLedger, RDP_ORDERS,
};
use fedhypevae::synthesis::{mix_parameters, Generator, MetaMixture};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn majority(hits: &[bool]) -> bool {
    2 * hits.iter().filter(|h| **h).count() > hits.len()
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let worst = (0..100).map(|_| grad_case_error(&random_grad_case(&mut rng))).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-4 && secs < 60.0, format!("max rel err {worst:.2e} over 100 configs in {secs:.1}s"))
}

fn dp_mechanics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut clip_ok = true;
    for _ in 0..1000 {
        let scale = rng.gen_range(0.0..10.0);
        let g = normals(&mut rng, 20, scale);
        let c = rng.gen_range(0.1..3.0);
        clip_ok &= l2(&clip(&g, c)) <= c;
    }

    let c = 1.5;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..1000 {
        let b = rng.gen_range(1..12);
        let batch: Vec<Vec<f64>> = (0..b).map(|_| normals(&mut rng, 6, 3.0)).collect();
        let mut other = batch.clone();
        other[rng.gen_range(0..b)] = normals(&mut rng, 6, 3.0);
        let p = privatize(&batch, c, 0.0, NoiseMode::AsWritten, &mut rng).unwrap();
        let q = privatize(&other, c, 0.0, NoiseMode::AsWritten, &mut rng).unwrap();
        let d: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a - b).collect();
        worst_ratio = worst_ratio.max(l2(&d) / (2.0 * c / b as f64));
    }

    let std_of = |mode| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zeros = vec![vec![0.0; 1]; 8];
        let draws: Vec<f64> = (0..100_000).map(|_| privatize(&zeros, 1.5, 2.0, mode, &mut rng).unwrap()[0]).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        (draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt()
    };
    let as_written = std_of(NoiseMode::AsWritten) / 3.0 - 1.0;
    let per_batch = std_of(NoiseMode::PerBatch) / (3.0 / 8.0) - 1.0;
    check(
        clip_ok && worst_ratio <= 1.0 + 1e-12 && as_written.abs() < 0.02 && per_batch.abs() < 0.02,
        format!(
            "clip ok {clip_ok}, max sensitivity/(2C/B) {worst_ratio:.6}, std rel err {as_written:+.4} / {per_batch:+.4}"
        ),
    )
}

fn eps(q: f64, sigma: f64, steps: usize, delta: f64) -> f64 {
    let mut l = PrivacyLedger::new();
    l.rdp_steps(q, sigma, steps).unwrap();
    l.epsilon(delta).unwrap()
}

fn accountant() -> Verdict {
    let mut closed: f64 = 0.0;
    let mut quad: f64 = 0.0;
    for sigma in [0.8, 1.0, 2.0] {
        for &a in RDP_ORDERS.iter() {
            closed = closed.max((rdp_subsampled_gaussian(1.0, sigma, a) - a / (2.0 * sigma * sigma)).abs());
            for q in [0.01, 0.1, 0.5] {
                let want = rdp_quadrature(q, sigma, a);
                quad = quad.max((rdp_subsampled_gaussian(q, sigma, a) - want).abs() / want);
            }
        }
    }
    let mut monotone = true;
    for q in [0.01, 0.1, 0.5] {
        let t: Vec<f64> = [1usize, 10, 100, 1000].iter().map(|&t| eps(q, 1.0, t, 1e-5)).collect();
        let s: Vec<f64> = [0.8, 1.0, 2.0, 4.0].iter().map(|&s| eps(q, s, 100, 1e-5)).collect();
        let d: Vec<f64> = [1e-8, 1e-6, 1e-4, 1e-2].iter().map(|&d| eps(q, 1.0, 100, d)).collect();
        monotone &= t.windows(2).all(|w| w[1] > w[0]);
        monotone &= s.windows(2).all(|w| w[1] < w[0]);
        monotone &= d.windows(2).all(|w| w[1] < w[0]);
    }
    let mut calibrated = true;
    for (q, t) in [(0.1, 250usize), (0.04, 1500), (0.5, 20)] {
        let s = calibrate_sigma(1.0, 1e-4, q, t).unwrap();
        calibrated &= eps(q, s, t, 1e-4) <= 1.0 && eps(q, s - 0.01, t, 1e-4) > 1.0;
    }
    check(
        closed <= 1e-12 && quad < 0.05 && monotone && calibrated,
        format!("closed-form err {closed:.1e}, max quadrature rel err {quad:.4}, monotone {monotone}, calibration {calibrated}"),
    )
}

fn mmd_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let set = |rng: &mut ChaCha8Rng, d: usize| -> Vec<Vec<f64>> {
        let n = rng.gen_range(1..12);
        let shift = rng.gen_range(-2.0..2.0);
        (0..n).map(|_| normals(rng, d, 1.0).into_iter().map(|v| v + shift).collect()).collect()
    };
    let (mut self_zero, mut worst_sym, mut worst_perm, mut lowest) = (true, 0.0f64, 0.0f64, f64::INFINITY);
    for _ in 0..1000 {
        let d = rng.gen_range(1..5);
        let k = MultiKernel::with_default_multipliers(rng.gen_range(0.2..5.0)).unwrap();
        let x = set(&mut rng, d);
        let mut y = set(&mut rng, d);
        self_zero &= mmd2(&x, &x, &k).unwrap() == 0.0;
        let m = mmd2(&x, &y, &k).unwrap();
        lowest = lowest.min(m);
        worst_sym = worst_sym.max((m - mmd2(&y, &x, &k).unwrap()).abs());
        y.shuffle(&mut rng);
        worst_perm = worst_perm.max((m - mmd2(&x, &y, &k).unwrap()).abs());
    }

    let k = MultiKernel::new(1.0, vec![1.0]).unwrap();
    let x = vec![vec![0.0], vec![1.0]];
    let synth = vec![vec![0.5]];
    let avg = (per_sample_mmd2(&x[0], &synth, &k).unwrap() + per_sample_mmd2(&x[1], &synth, &k).unwrap()) / 2.0;
    let gap = 1.0 - (2.0 + 2.0 * k.eval_sq(1.0)) / 4.0;
    let counter = (avg - mmd2(&x, &synth, &k).unwrap() - gap).abs() < 1e-14 && gap > 0.0;
    check(
        self_zero && worst_sym <= 1e-12 && worst_perm <= 1e-12 && lowest >= -1e-12 && counter,
        format!(
            "self-zero {self_zero}, asym {worst_sym:.1e}, perm {worst_perm:.1e}, min {lowest:.2e}, per-sample gap {gap:.4} asserted {counter}"
        ),
    )
}

fn small_experiment() -> RunConfig {
    let mut cfg = RunConfig::profile(Profile::Desk);
    cfg.data.samples_per_client = 60;
    cfg.federation.rounds = 2;
    cfg.federation.local_epochs = 1;
    cfg.federation.dp.enabled = true;
    cfg.synthesis.steps = 10;
    cfg.synthesis.samples = 32;
    cfg.synthesis.count = 300;
    cfg.probe.epochs = 50;
    cfg
}

fn protocol() -> Verdict {
    let arch = small_arch();
    let cfg = FederationConfig {
        clients: 3,
        rounds: 2,
        local_epochs: 2,
        batch_size: 4,
        lr_encoder: 0.05,
        lr_code: 0.05,
        lr_hyper: 0.3,
        lambda_mmd: 0.5,
        lambda_lip: 0.0,
        lambda_code: 0.01,
        dp: DPConfig::disabled(),
        seed: 17,
        ..FederationConfig::default()
    };
    let data = small_datasets(5, &[11, 7, 14]);
    let out = run_federation(&arch, &cfg, &data).unwrap();
    let oracle_diff = max_abs_diff(out.phi.as_slice(), hand_rolled_federation(&arch, &cfg, &data).last().unwrap().as_slice());

    let audit_cfg = FederationConfig {
        rounds: 3,
        lambda_lip: 1e-3,
        audit_payloads: true,
        ..cfg.clone()
    };
    let start = initial_clients(&arch, &audit_cfg, &data).unwrap();
    let audited = run_federation(&arch, &audit_cfg, &data).unwrap();
    let phi_bytes = 8 * arch.phi_layout.len();
    let mut shape_ok = audited.messages.records().len() == 2 * audit_cfg.clients * audit_cfg.rounds;
    for r in audited.messages.records() {
        shape_ok &= r.bytes == phi_bytes
            && matches!(
                (r.kind, r.sender, r.receiver),
                (PayloadKind::PhiBroadcast, Party::Server, Party::Client(_))
                    | (PayloadKind::PrivatizedGradient, Party::Client(_), Party::Server)
            );
    }
    let mut secrets: Vec<Vec<u8>> = Vec::new();
    for c in start.iter().chain(&audited.clients) {
        secrets.push(encode_payload(c.psi.as_slice()));
        secrets.push(encode_payload(&c.code));
        secrets.extend(c.data.xs.iter().map(|x| encode_payload(x)));
    }
    let leaked = audited.messages.payloads().unwrap().iter().any(|p| {
        secrets.iter().any(|s| (0..=p.len().saturating_sub(s.len())).step_by(8).any(|i| p.len() >= s.len() && &p[i..i + s.len()] == s.as_slice()))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let worst_sum = (0..1000)
        .map(|_| {
            let counts: Vec<usize> = (0..rng.gen_range(1..50)).map(|_| rng.gen_range(1..100_000)).collect();
            (aggregation_weights(&counts).unwrap().iter().sum::<f64>() - 1.0).abs()
        })
        .fold(0.0, f64::max);

    let exp = small_experiment().experiment();
    let report = |seed| serde_json::to_string(&summarize(&[run_seed(&exp, seed).unwrap()])).unwrap();
    let reproducible = report(5) == report(5);

    check(
        oracle_diff <= 1e-10 && shape_ok && !leaked && worst_sum <= 1e-15 && reproducible,
        format!(
            "oracle diff {oracle_diff:.1e}, log shape {shape_ok}, leak {leaked}, max |Σw−1| {worst_sum:.1e}, reproducible {reproducible}"
        ),
    )
}

fn synthesis_algebra() -> Verdict {
    let arch = small_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut phi = ParamVector::from_data(arch.phi_layout.clone(), normals(&mut rng, arch.phi_layout.len(), 0.5)).unwrap();
    let bits = |g: &Generator| -> Vec<u64> {
        g.decoder
            .scales
            .iter()
            .chain(&g.decoder.shifts)
            .chain(&g.prior.mu)
            .chain(&g.prior.logsig)
            .flatten()
            .map(|v| v.to_bits())
            .collect()
    };
    let codes = vec![vec![1.0, 0.0, -1.0], vec![0.2, 0.4, 0.9], vec![-2.0, 1.0, 0.5]];
    let single = bits(&mix_parameters(&arch, &MetaMixture::single(codes[1].clone()), &phi).unwrap())
        == bits(&Generator::from_code(&arch, &codes[1], &phi).unwrap());
    let one_hot = (0..3).all(|k| {
        let mut weights = vec![0.0; 3];
        weights[k] = 1.0;
        bits(&mix_parameters(&arch, &MetaMixture { codes: codes.clone(), weights }, &phi).unwrap())
            == bits(&Generator::from_code(&arch, &codes[k], &phi).unwrap())
    });
    for name in ["h_theta.1.w", "h_theta.1.b"] {
        phi.segment_mut(name).iter_mut().for_each(|v| *v = 0.0);
    }
    let identity = codes
        .iter()
        .all(|c| generate_decoder(&arch, c, &phi).unwrap() == GeneratedDecoder::identity(&arch));
    check(single && one_hot && identity, format!("single {single}, one-hot {one_hot}, identity {identity}"))
}

fn desk_runs(config: Option<&str>) -> (Vec<SeedRun>, f64) {
    let cfg = match config {
        Some(name) => RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap(),
        None => RunConfig::profile(Profile::Desk),
    };
    let exp = cfg.experiment();
    let start = Instant::now();
    let runs = SEEDS.iter().map(|&s| run_seed(&exp, s).unwrap()).collect();
    (runs, start.elapsed().as_secs_f64())
}

fn utility(runs: &[SeedRun], secs: f64) -> Verdict {
    let hits: Vec<bool> = runs
        .iter()
        .map(|r| {
            let s = r.mean_bacc(Condition::Synthetic);
            s - r.untrained_bacc >= 0.15 && s >= 0.8 * r.pooled_bacc
        })
        .collect();
    let detail = runs
        .iter()
        .map(|r| {
            format!(
                "seed {} synth {:.3} untrained {:.3} pooled {:.3}",
                r.seed,
                r.mean_bacc(Condition::Synthetic),
                r.untrained_bacc,
                r.pooled_bacc
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    check(majority(&hits) && secs < 300.0, format!("{detail}; {secs:.0}s"))
}

fn dp_utility(runs: &[SeedRun]) -> Verdict {
    let chance = 1.0 / runs[0].data.test[0].num_classes as f64;
    let hits: Vec<bool> = runs
        .iter()
        .map(|r| r.mean_bacc(Condition::Synthetic) > chance + 0.1 && r.total_epsilon.is_some_and(|e| e <= 1.0))
        .collect();
    let detail = runs
        .iter()
        .map(|r| {
            format!(
                "seed {} synth {:.3} eps {:.3} sigma {:.3}",
                r.seed,
                r.mean_bacc(Condition::Synthetic),
                r.total_epsilon.unwrap_or(f64::NAN),
                r.outcome.noise_multiplier
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    check(majority(&hits), format!("threshold {:.3}; {detail}", chance + 0.1))
}

fn personalization_mse(seed: u64, tie: bool) -> f64 {
    let cfg = RunConfig::profile(Profile::Desk);
    let arch = Architecture::new(cfg.model.clone()).unwrap();
    let mut spec = cfg.data.clone();
    spec.label_skew = LabelSkew::Dirichlet(0.3);
    let data = make_synthetic_federation(&spec, &mut stage_rng(seed, DATA_STREAM)).unwrap();
    let fed = FederationConfig {
        seed,
        tie_codes: tie,
        lr_code: if tie { 0.0 } else { cfg.federation.lr_code },
        ..cfg.federation.clone()
    };
    let out = run_federation(&arch, &fed, &data.train).unwrap();
    let total: f64 = out.clients.iter().map(|c| c.reconstruction_mse(&arch, &out.phi).unwrap()).sum();
    total / out.clients.len() as f64
}

fn personalization() -> Verdict {
    let pairs: Vec<(f64, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = SEEDS
            .iter()
            .map(|&seed| s.spawn(move || (personalization_mse(seed, false), personalization_mse(seed, true))))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let wins = pairs.iter().filter(|(d, t)| d <= t).count();
    let detail = pairs
        .iter()
        .zip(SEEDS)
        .map(|((d, t), s)| format!("seed {s} distinct {d:.4} tied {t:.4}"))
        .collect::<Vec<_>>()
        .join("; ");
    check(wins >= 2, detail)
}

fn alignment(runs: &[SeedRun]) -> Verdict {
    let hits: Vec<bool> = runs
        .iter()
        .map(|r| r.outcome.reports.last().unwrap().mean_mmd() < r.outcome.reports[0].mean_mmd())
        .collect();
    let detail = runs
        .iter()
        .map(|r| {
            format!(
                "seed {} {:.3} -> {:.3}",
                r.seed,
                r.outcome.reports[0].mean_mmd(),
                r.outcome.reports.last().unwrap().mean_mmd()
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    check(majority(&hits), detail)
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (tag, detail) = match &v {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n:>2} {tag} {name}: {detail}");
    v.is_ok()
}

fn main() {
    let mut all = true;
    all &= report(1, "gradient correctness", gradients);
    all &= report(2, "dp mechanics", dp_mechanics);
    all &= report(3, "accountant", accountant);
    all &= report(4, "mmd suite", mmd_suite);
    all &= report(5, "protocol invariants", protocol);

    let plain = catch_unwind(|| desk_runs(None));
    let private = catch_unwind(|| desk_runs(Some("desk-dp.json")).0);
    all &= report(6, "desk utility", || {
        let (runs, secs) = plain.as_ref().map_err(|_| "desk runs panicked".to_string())?;
        utility(runs, *secs)
    });
    all &= report(7, "dp degradation", || {
        dp_utility(private.as_ref().map_err(|_| "dp desk runs panicked".to_string())?)
    });
    all &= report(8, "personalization", personalization);
    all &= report(9, "synthesis algebra", synthesis_algebra);
    all &= report(10, "alignment effect", || {
        alignment(&plain.as_ref().map_err(|_| "desk runs panicked".to_string())?.0)
    });

    if !all {
        std::process::exit(1);
    }
}
