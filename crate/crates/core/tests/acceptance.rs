//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use seltest_core::game::{
    best_response_exact_linear, detection_prob_exact, honesty_report, min_deposit, simulate_detection,
    theorem_bounds_check, GameParams,
};
use seltest_core::harness::{bench_conv_input_sizes, BenchTable, ConvSetting};
use seltest_core::layout::StageId;
use seltest_core::merkle::{group_commit, verify_group, Side};
use seltest_core::monitor::MonitorConfig;
use seltest_core::nn::{self, Activation, ConvSpec, FcSpec, Tensor};
use seltest_core::par;
use seltest_core::session::{Keyring, Simulation, WorkerSetup};
use seltest_core::worker::{build_fc_trees, CheatMode, CheatStrategy};
use seltest_core::model::GlobalModel;
use seltest_core::records::{build_record_store, RecordFile};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn merkle_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut trees = Vec::with_capacity(1024);
    let mut honest_checks = 0u64;
    let mut honest_fail = 0u64;
    for len in 1..=1024usize {
        let groups: Vec<Vec<f64>> = (0..len).map(|_| vec![rng.gen_range(-1e3..1e3)]).collect();
        let tree = group_commit(&groups).unwrap();
        if tree.root().0 != merkle_root(&groups) {
            honest_fail += 1;
        }
        let idx: Vec<usize> = if len <= 64 {
            (0..len).collect()
        } else {
            (0..16).map(|_| rng.gen_range(0..len)).chain([0, len - 1]).collect()
        };
        for i in idx {
            honest_checks += 1;
            let ev = tree.evidence_for(i).unwrap();
            if !verify_group(&groups[i], i, &tree.root(), &ev) || ev.len() != path_len(i, len) {
                honest_fail += 1;
            }
        }
        trees.push((groups, tree));
    }

    let cases = 10_000;
    let mut accepted_tampers = 0;
    for _ in 0..cases {
        let (groups, tree) = &trees[rng.gen_range(0..trees.len())];
        let len = groups.len();
        let i = rng.gen_range(0..len);
        let mut values = groups[i].clone();
        let mut ev = tree.evidence_for(i).unwrap();
        let mut root = tree.root();
        let bit = rng.gen_range(0..64);
        let target = if ev.path.is_empty() { rng.gen_range(0..2) * 2 } else { rng.gen_range(0..4) };
        match target {
            0 => values[0] = f64::from_bits(values[0].to_bits() ^ (1 << bit)),
            1 => {
                let k = rng.gen_range(0..ev.path.len());
                ev.path[k].0 .0[bit / 8] ^= 1 << (bit % 8);
            }
            2 => root.0[bit % 32] ^= 1 << (bit % 8),
            _ => {
                let k = rng.gen_range(0..ev.path.len());
                ev.path[k].1 = match ev.path[k].1 {
                    Side::Left => Side::Right,
                    Side::Right => Side::Left,
                };
            }
        }
        if verify_group(&values, i, &root, &ev) {
            accepted_tampers += 1;
        }
    }
    // A proof for one index must not pass for its neighbour either.
    let mut moved = 0;
    for (groups, tree) in trees.iter().skip(1).step_by(7) {
        let i = groups.len() / 2;
        let j = (i + 1) % groups.len();
        let ev = tree.evidence_for(i).unwrap();
        if verify_group(&groups[i], j, &tree.root(), &ev) {
            moved += 1;
        }
    }
    outcome(
        honest_fail == 0 && accepted_tampers == 0 && moved == 0,
        format!(
            "{honest_checks} honest openings over |v|=1..1024, {honest_fail} failures; \
             {cases} single-bit tampers, {accepted_tampers} accepted; {moved} index swaps accepted"
        ),
    )
}

/// `n^m - (n-p)^m > m n^{m-1}`, the first-case inequality scaled by `n^m`.
fn case_one_exact(n: u64, p: u64, m: u64) -> bool {
    let nb = BigInt::from(n);
    let lhs = nb.pow(m as u32) - BigInt::from(n - p).pow(m as u32);
    lhs > BigInt::from(m) * nb.pow(m as u32 - 1)
}

fn theorem_bounds() -> Outcome {
    let mut ns: Vec<u64> = (4..=100).collect();
    ns.extend((101..1000).step_by(9));
    ns.push(1000);
    let mut cells = 0;
    let mut failed = Vec::new();
    for &n in &ns {
        for p in 2..=6u64.min(n) {
            cells += 1;
            if !theorem_bounds_check(n, p).unwrap() {
                failed.push((n, p));
            }
        }
    }
    let mut exact_fail = 0;
    for n in 4..=40u64 {
        for p in 2..=6u64.min(n) {
            let split = n - n.div_ceil(p);
            exact_fail += (1..=split).filter(|&m| !case_one_exact(n, p, m)).count();
        }
    }
    outcome(
        failed.is_empty() && exact_fail == 0,
        format!(
            "{cells} (n,p) cells, n in 4..1000, p in 2..6: {} failing {:?}; exact first-case recheck n<=40: {exact_fail} failures",
            failed.len(),
            failed.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn deposit_remark() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = 0;
    let trials = 100_000;
    for _ in 0..trials {
        let c = 10f64.powf(rng.gen_range(-9.0..12.0));
        let d = min_deposit(c, 2).unwrap();
        let reference = c / (1.0 - (-1.0f64).exp());
        if !(d < 2.0 * c) || (d - reference).abs() > 4.0 * f64::EPSILON * reference {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{trials} random c in [1e-9, 1e12]: {bad} with min_deposit(c,2) >= 2c"))
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

fn best_response() -> Outcome {
    let mut cells = 0;
    let mut bad = Vec::new();
    for &n in &[10u64, 100, 1000] {
        for &p in &[2u64, 3] {
            for &b in &[0.0, 1.0, 10.0] {
                for &c in &[1.0, 7.25] {
                    cells += 1;
                    let d = min_deposit(c, p).unwrap();
                    // E[u(m)] <= u(0)  <=>  c m / n <= q_m (B + d), q_m = (n^m - (n-p)^m) / n^m;
                    // cleared of denominators and compared as integers
                    let stake = exact(b) + exact(d);
                    let cost = exact(c);
                    let mut ok = true;
                    for m in 1..=n {
                        let nm = BigInt::from(n).pow(m as u32);
                        let q_num = &nm - BigInt::from(n - p).pow(m as u32);
                        let lhs = q_num * stake.numer() * cost.denom() * BigInt::from(n);
                        let rhs = cost.numer() * stake.denom() * BigInt::from(m) * &nm;
                        if lhs < rhs {
                            ok = false;
                            break;
                        }
                    }
                    let lib = best_response_exact_linear(n, p, c, b, d).unwrap();
                    let mut params = GameParams::linear(n, p, c, b);
                    params.deposit = d;
                    let report = honesty_report(&params).unwrap();
                    if !ok || !lib || !report.enforced {
                        bad.push((n, p, b, c));
                    }
                }
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("{cells} cells with d = min_deposit(c,p), every m in 1..=n: {} where cheating pays {:?}", bad.len(), bad),
    )
}

fn detection_monte_carlo() -> Outcome {
    let mut grid = vec![(100u64, 2u64, 1u64), (100, 2, 10), (100, 2, 50), (100, 2, 90)];
    grid.extend([(100, 2, 0), (10, 3, 1), (10, 3, 5), (10, 3, 10), (1000, 5, 1), (1000, 5, 100), (50, 6, 25), (20, 20, 1)]);
    let trials = 100_000;
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, &(n, p, m)) in grid.iter().enumerate() {
        let oracle = hypergeom_detect(n, p, m).to_f64().unwrap();
        let lib = detection_prob_exact(n, p, m).unwrap();
        let emp = simulate_detection(n, p, m, trials, 1000 + k as u64).unwrap();
        let sigma3 = 3.0 * (oracle * (1.0 - oracle) / trials as f64).sqrt();
        let paper = 1.0 - (1.0 - p as f64 / n as f64).powi(m as i32);
        let pass = (lib - oracle).abs() <= 1e-12
            && (emp - oracle).abs() <= sigma3
            && emp >= paper - sigma3;
        ok &= pass;
        if !pass || m == 50 {
            lines.push(format!("({n},{p},{m}) emp {emp:.5} exact {oracle:.5} paper {paper:.5}"));
        }
    }
    outcome(ok, format!("{} grid points x {trials} trials; {}", grid.len(), lines.join("; ")))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) == 0.0 {
        0.0
    } else {
        diff / na.max(nb)
    }
}

fn central_diff(params: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut p = params.to_vec();
    (0..params.len())
        .map(|k| {
            let orig = p[k];
            p[k] = orig + h;
            let up = f(&p);
            p[k] = orig - h;
            let down = f(&p);
            p[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Conv -> sigmoid -> FC -> MSE, written out from scratch.
fn net_loss(x: &[f64], a: usize, filters: &[Vec<f64>], fs: usize, d: usize, theta: &[f64], y: &[f64]) -> f64 {
    let h: Vec<f64> = conv_direct(x, a, filters, fs, d).into_iter().map(sigmoid).collect();
    let out = fc_direct(theta, &h, y.len());
    out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / y.len() as f64
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    let mut cases = 0;
    let eta = 0.1;
    for &(a, n_f, fs, d, l_y) in &[(16, 3, 4, 2, 4), (9, 2, 3, 1, 3), (16, 2, 5, 3, 5), (12, 4, 2, 2, 2), (8, 1, 8, 1, 6)] {
        let spec = ConvSpec {
            n_filters: n_f,
            filter_side: fs,
            stride: d,
            input_side: a,
            eta,
        };
        let out = spec.output_side().unwrap();
        let l_x = n_f * out * out;
        let x: Vec<f64> = (0..a * a).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let filters: Vec<Vec<f64>> = (0..n_f).map(|_| (0..fs * fs).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
        let theta: Vec<f64> = (0..l_x * l_y).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let y: Vec<f64> = (0..l_y).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // analytic, through the library
        let xt = Tensor::new(vec![a, a], x.clone()).unwrap();
        let ft: Vec<Tensor> = filters.iter().map(|f| Tensor::new(vec![fs, fs], f.clone()).unwrap()).collect();
        let z = nn::conv_forward(&spec, &xt, &ft).unwrap();
        let hact = nn::activation_apply(Activation::Sigmoid, &z);
        let hvec = Tensor::vector(hact.values().to_vec());
        let fc = FcSpec::new(Tensor::new(vec![l_x, l_y], theta.clone()).unwrap(), eta).unwrap();
        let yhat = nn::fc_forward(&fc, &hvec).unwrap();
        let (_, gyhat) = nn::loss_eval(&yhat, &Tensor::vector(y.clone())).unwrap();
        let (gh, gtheta) = nn::fc_backward(&fc, &hvec, &gyhat).unwrap();
        let gz = nn::activation_grad(
            Activation::Sigmoid,
            &Tensor::vector(z.values().to_vec()),
            &gh,
        )
        .unwrap();
        let gz = Tensor::new(vec![n_f, out, out], gz.into_values()).unwrap();
        let grads = nn::conv_backward(&spec, &xt, &ft, &gz).unwrap();

        let dx = central_diff(&x, |p| net_loss(p, a, &filters, fs, d, &theta, &y));
        worst = worst.max(rel_err(grads.grad_x.values(), &dx));
        let flat_f: Vec<f64> = filters.concat();
        let df = central_diff(&flat_f, |p| {
            let fsplit: Vec<Vec<f64>> = p.chunks(fs * fs).map(<[f64]>::to_vec).collect();
            net_loss(&x, a, &fsplit, fs, d, &theta, &y)
        });
        let gf: Vec<f64> = grads.grad_f.iter().flat_map(|g| g.values().iter().map(|v| v / -eta)).collect();
        worst = worst.max(rel_err(&gf, &df));
        let dtheta = central_diff(&theta, |p| net_loss(&x, a, &filters, fs, d, p, &y));
        let gt: Vec<f64> = gtheta.values().iter().map(|v| v / -eta).collect();
        worst = worst.max(rel_err(&gt, &dtheta));
        cases += 1;
    }

    // Stand-alone FC layer at 64 x 32.
    let (l_x, l_y) = (64, 32);
    let x: Vec<f64> = (0..l_x).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let theta: Vec<f64> = (0..l_x * l_y).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let y: Vec<f64> = (0..l_y).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |x: &[f64], th: &[f64]| {
        let o = fc_direct(th, x, l_y);
        o.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / l_y as f64
    };
    let fc = FcSpec::new(Tensor::new(vec![l_x, l_y], theta.clone()).unwrap(), eta).unwrap();
    let xv = Tensor::vector(x.clone());
    let yhat = nn::fc_forward(&fc, &xv).unwrap();
    let (_, gy) = nn::loss_eval(&yhat, &Tensor::vector(y.clone())).unwrap();
    let (gx, gt) = nn::fc_backward(&fc, &xv, &gy).unwrap();
    worst = worst.max(rel_err(gx.values(), &central_diff(&x, |p| loss(p, &theta))));
    let gt: Vec<f64> = gt.values().iter().map(|v| v / -eta).collect();
    worst = worst.max(rel_err(&gt, &central_diff(&theta, |p| loss(&x, p))));
    cases += 1;

    outcome(
        worst <= 1e-5,
        format!("{cases} networks (conv alpha_X<=16, FC 64x32), worst relative error {worst:.2e}"),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut mismatches = [0usize; 3];
    let mut checked = [0usize; 3];
    for _ in 0..200 {
        let fs = rng.gen_range(1..=5);
        let d = rng.gen_range(1..=3);
        let a = fs + d * rng.gen_range(0..6) + rng.gen_range(0..d);
        let n_f = rng.gen_range(1..=4);
        let eta = rng.gen_range(0.01..0.5);
        let spec = ConvSpec {
            n_filters: n_f,
            filter_side: fs,
            stride: d,
            input_side: a,
            eta,
        };
        let out = spec.output_side().unwrap();
        let x: Vec<f64> = (0..a * a).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let filters: Vec<Vec<f64>> = (0..n_f).map(|_| (0..fs * fs).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let gy: Vec<f64> = (0..n_f * out * out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xt = Tensor::new(vec![a, a], x.clone()).unwrap();
        let ft: Vec<Tensor> = filters.iter().map(|f| Tensor::new(vec![fs, fs], f.clone()).unwrap()).collect();
        let grads = nn::conv_backward(&spec, &xt, &ft, &Tensor::new(vec![n_f, out, out], gy.clone()).unwrap()).unwrap();

        let gf = grad_f_direct(&gy, &x, a, n_f, fs, d, eta);
        for (t, e) in grads.grad_f_expanded.iter().enumerate() {
            for (s, vec_u) in e.values().chunks(out).enumerate() {
                checked[0] += 1;
                let folded = -eta * vec_u.iter().sum::<f64>();
                if !close(folded, gf[t][s]) {
                    mismatches[0] += 1;
                }
            }
        }

        let gx = grad_x_direct(&gy, a, &filters, fs, d);
        for s in 0..a * a {
            checked[2] += 1;
            let summed: f64 = grads.grad_x_per_filter.iter().map(|g| g.values()[s]).sum();
            if !close(summed, gx[s]) || !close(grads.grad_x.values()[s], gx[s]) {
                mismatches[2] += 1;
            }
        }

        let l_y = rng.gen_range(1..=6);
        let model = GlobalModel::init(spec_for(a, n_f, fs, d, l_y), rng.gen()).unwrap();
        let g = model.geometry().unwrap();
        let fx: Vec<f64> = (0..g.l_x).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fc = build_fc_trees(&g, &fx, &model.fc.theta).unwrap();
        let direct = fc_direct(model.fc.theta.values(), &fx, l_y);
        for i in 0..l_y {
            checked[1] += 1;
            let s: f64 = fc.y_prime[i * g.n_x..(i + 1) * g.n_x].iter().sum();
            if !close(s, direct[i]) {
                mismatches[1] += 1;
            }
        }
    }
    outcome(
        mismatches.iter().all(|&m| m == 0),
        format!(
            "filter folds {}/{}, FC partial rows {}/{}, per-filter input grads {}/{} within 1e-12",
            checked[0] - mismatches[0],
            checked[0],
            checked[1] - mismatches[1],
            checked[1],
            checked[2] - mismatches[2],
            checked[2]
        ),
    )
}

fn spec_for(a: usize, n_f: usize, fs: usize, d: usize, l_y: usize) -> seltest_core::model::ModelSpec {
    let mut s = spec(a, n_f, fs, d, l_y);
    s.activation = Activation::Relu;
    s
}

fn random_fixtures(count: usize, seed: u64) -> Vec<Fixture> {
    par::map_range(count, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64 * 7919));
        let fs = rng.gen_range(1..=4);
        let d = rng.gen_range(1..=2);
        let a = if k % 25 == 0 { 32 } else { fs + d * rng.gen_range(1..5) };
        let mut s = spec(a, rng.gen_range(1..=3), fs, d, rng.gen_range(1..=5));
        if k % 2 == 0 {
            s.activation = Activation::Relu;
        }
        Fixture::new(s, 4, k as u64)
    })
}

fn protocol_soundness() -> Outcome {
    let fixtures = random_fixtures(50, 99);
    let cfg = MonitorConfig::default();

    // completeness
    let rounds = 10_000usize;
    let false_alarms: usize = par::map_range(rounds, |r| {
        let fx = &fixtures[r % fixtures.len()];
        let (mut w, mut m) = fx.pair(None, cfg, r as u64);
        let mut bad = !m.init_round(&mut w).1.is_honest() as usize;
        for s in StageId::PIPELINE {
            bad += !m.audit(&mut w, s).verdict.is_honest() as usize;
        }
        bad + m.endorse().is_err() as usize
    })
    .into_iter()
    .sum();

    // soundness: a probe lands on a faked computation
    let trials = 10_000usize;
    let missed: Vec<String> = par::map_range(trials, |r| {
        let fx = &fixtures[r % fixtures.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(0xbad ^ r as u64);
        let stage = StageId::PIPELINE[rng.gen_range(0..StageId::PIPELINE.len())];
        let g = fx.package.model.geometry().unwrap();
        let n = g.computations(stage);
        let mode = if r % 10 == 9 {
            CheatMode::FakeEvidence
        } else {
            CheatMode::FakeOutputs { m: rng.gen_range(1..=n.min(5)) }
        };
        let (mut w, mut m) = fx.pair(Some(CheatStrategy { stage, mode }), cfg, r as u64);
        m.init_round(&mut w);
        for s in StageId::PIPELINE.into_iter().take_while(|&s| s != stage) {
            m.audit(&mut w, s);
        }
        let c = w.run_stage(stage).unwrap();
        m.receive_commit(&c).unwrap();
        let faked = w.faked_indices(stage).to_vec();
        let mut picks = vec![match mode {
            CheatMode::FakeOutputs { .. } => faked[rng.gen_range(0..faked.len())],
            _ => rng.gen_range(0..n),
        }];
        if n > 1 {
            let other = (picks[0] + rng.gen_range(1..n)) % n;
            picks.push(other);
            picks.sort_unstable();
        }
        let plan = m.plan_for(stage, &picks);
        let resp = w.answer_challenge(&plan.challenge()).unwrap();
        let rep = m.check(&plan, &resp);
        if rep.verdict.is_honest() {
            Some(format!("{stage} {mode:?} picks {picks:?}"))
        } else {
            None
        }
    })
    .into_iter()
    .flatten()
    .collect();

    // end to end: a worker faking every computation of a stage
    let mut e2e = 0;
    let mut e2e_missed = Vec::new();
    for stage in StageId::PIPELINE {
        for seed in 0..12u64 {
            let fx_spec = spec(6 + (seed as usize % 3), 2, 3, 1 + (seed as usize % 2), 3);
            let g = fx_spec.geometry().unwrap();
            let keys = Keyring::derived("e2e", [1, 2]);
            let file = RecordFile::synthetic(3, g.input_side * g.input_side, g.l_y, seed);
            let store = build_record_store(file.sign_all(keys.authority.as_ref()).unwrap(), keys.authority.as_ref()).unwrap();
            let cheat = CheatStrategy {
                stage,
                mode: CheatMode::FakeOutputs { m: g.computations(stage) },
            };
            let workers = vec![WorkerSetup { id: 1, cheat: None }, WorkerSetup { id: 2, cheat: Some(cheat) }];
            let mut sim = Simulation::new(
                GlobalModel::init(fx_spec, seed).unwrap(),
                store,
                keys,
                workers,
                cfg,
                10,
                10,
                seed,
            )
            .unwrap();
            let rep = sim.run_round().unwrap();
            e2e += 1;
            let evicted = rep.aggregate.as_ref().is_some_and(|a| a.evicted.iter().any(|(w, _)| *w == 2));
            if !evicted || sim.ledger.state().is_active(2) {
                e2e_missed.push(format!("{stage} seed {seed}"));
            }
        }
    }

    outcome(
        false_alarms == 0 && missed.is_empty() && e2e_missed.is_empty(),
        format!(
            "{rounds} honest rounds: {false_alarms} dishonest verdicts; {trials} probed tampers: {} missed {:?}; \
             {e2e} full-stage cheaters: {} not slashed in round 1 {:?}",
            missed.len(),
            missed.iter().take(3).collect::<Vec<_>>(),
            e2e_missed.len(),
            e2e_missed.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn growth(t: &BenchTable, col: impl Fn(&seltest_core::harness::BenchRow) -> f64) -> f64 {
    col(t.rows.last().unwrap()) / col(&t.rows[0])
}

fn efficiency_trend() -> Outcome {
    let base = ConvSetting {
        input_side: 16,
        n_filters: 16,
        filter_side: 8,
        stride: 2,
    };
    let sides = [16, 32, 64, 128];
    let mut ok = true;
    let mut parts = Vec::new();
    for backward in [false, true] {
        let t = bench_conv_input_sizes(base, &sides, backward, 10, 5, 7).unwrap();
        let mon_peak = t.rows.iter().map(|r| r.monitor_test).fold(0.0, f64::max) / t.rows[0].monitor_test;
        let compute = growth(&t, |r| r.worker_compute);
        let worker_total = growth(&t, |r| r.worker_compute + r.worker_commit_overhead);
        let commit = growth(&t, |r| r.worker_commit_overhead);
        ok &= mon_peak < 4.0 && compute >= 30.0 && worker_total >= 30.0;
        parts.push(format!(
            "{}: monitor x{mon_peak:.2}, worker compute x{compute:.0}, worker total x{worker_total:.0} (commit alone x{commit:.0})",
            if backward { "bwd" } else { "fwd" }
        ));
    }
    outcome(ok, format!("alpha_X 16->128: {}", parts.join("; ")))
}

fn access_budget() -> Outcome {
    let geoms = [(32, 4, 8, 2, 3), (16, 3, 5, 3, 2), (20, 2, 4, 4, 4), (12, 2, 3, 1, 3), (24, 5, 6, 2, 2)];
    let mut probes = 0;
    let mut off = Vec::new();
    let mut worst_frac = 0.0f64;
    for (gi, &(a, n_f, fs, d, l_y)) in geoms.iter().enumerate() {
        let fx = Fixture::new(spec(a, n_f, fs, d, l_y), 2, gi as u64);
        let (mut w, mut m) = fx.pair(None, MonitorConfig::default(), 3);
        m.init_round(&mut w);
        for s in StageId::PIPELINE.into_iter().take_while(|&s| s != StageId::ConvBackwardInput) {
            m.audit(&mut w, s);
        }
        let g = *m.geometry();
        let out = g.out_side;
        let lm = d * fs.div_ceil(d);
        let budget = (4 * lm * lm + fs * fs * out + fs.div_ceil(d) * out) as u64;
        for stage in [StageId::ConvBackwardInput, StageId::ConvBackwardFilters] {
            let c = w.run_stage(stage).unwrap();
            m.receive_commit(&c).unwrap();
            for k in 0..g.computations(stage) {
                let plan = m.plan_for(stage, &[k]);
                let rep = m.check(&plan, &w.answer_challenge(&plan.challenge()).unwrap());
                let (reads, digests, fetched) = match stage {
                    StageId::ConvBackwardInput => {
                        let (t, i, j) = (k / (a * a), k / a % a, k % a);
                        let rows: Vec<usize> = (0..out).filter(|&u| u * d <= i && i < u * d + fs).collect();
                        let dig = path_len(i * a + j, a * a)
                            + rows.iter().map(|&u| path_len(t * out + u, n_f * out)).sum::<usize>();
                        (n_f + rows.len() * out, dig, 1 + rows.len())
                    }
                    _ => {
                        let u = k % out;
                        let rest = k / out;
                        let (t, i, j) = (rest / (fs * fs), rest / fs % fs, rest % fs);
                        let dig = path_len((t * fs + i) * fs + j, n_f * fs * fs)
                            + path_len(t * out + u, n_f * out)
                            + path_len((i * fs + j) * out + u, fs * fs * out);
                        (3 * out, dig, 3)
                    }
                };
                let widest = (a * a).max(n_f * out).max(n_f * fs * fs).max(fs * fs * out);
                let log_cap = fetched * widest.next_power_of_two().trailing_zeros() as usize;
                probes += 1;
                worst_frac = worst_frac.max(rep.reads as f64 / budget as f64);
                if !rep.verdict.is_honest()
                    || rep.reads != reads as u64
                    || rep.digests_read != digests as u64
                    || rep.reads > budget
                    || digests > log_cap
                {
                    off.push(format!(
                        "{stage} k={k} reads {} (want {reads}) digests {} (want {digests})",
                        rep.reads, rep.digests_read
                    ));
                }
            }
        }
    }
    outcome(
        off.is_empty(),
        format!(
            "{probes} conv-backward probes over {} geometries: counters match exact accounting, \
             peak reads {:.0}% of budget; {} mismatches {:?}",
            geoms.len(),
            worst_frac * 100.0,
            off.len(),
            off.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("merkle suite", Duration::from_secs(10), merkle_suite),
        ("theorem bounds", Duration::from_secs(5), theorem_bounds),
        ("deposit remark", Duration::MAX, deposit_remark),
        ("best response", Duration::from_secs(5), best_response),
        ("detection monte carlo", Duration::from_secs(60), detection_monte_carlo),
        ("gradient checks", Duration::from_secs(30), gradient_checks),
        ("oracle equivalence", Duration::from_secs(10), oracle_equivalence),
        ("protocol soundness/completeness", Duration::from_secs(120), protocol_soundness),
        ("efficiency trend", Duration::MAX, efficiency_trend),
        ("access budget", Duration::MAX, access_budget),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let t = Instant::now();
        let o = run();
        let took = t.elapsed();
        let in_time = took <= limit;
        let pass = o.pass && in_time;
        failed += !pass as usize;
        let limit_note = if limit == Duration::MAX {
            String::new()
        } else {
            format!(" / limit {:.0} s", limit.as_secs_f64())
        };
        println!(
            "{} {name}: {} [{:.2} s{limit_note}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
