//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset.

#[path = "../../../core/tests/support/mod.rs"]
mod support;

mod arbitrage;
mod gradients;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use gridmarket_cli::*;
use gridmarket_core::auction::*;
use gridmarket_core::env::*;
use gridmarket_core::microgrid::MicrogridParams;
use gridmarket_core::par::{self, Execution};
use gridmarket_marl::{evaluate, EvalPolicy, PolicyNet, TrainConfig, Trainer, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion<'a> = (usize, &'static str, Box<dyn Fn() -> Check + 'a>);

fn criterion_1() -> Check {
    let book = [
        Quotation::sell(0, 6.0, 2.0),
        Quotation::sell(1, 1.0, 3.0),
        Quotation::sell(2, 4.0, 2.0),
    ];
    let (sellers, _) = sort_book(&book);
    let order: Vec<(f64, f64)> = sellers.iter().map(|q| (q.price, q.quantity)).collect();
    if order == [(1.0, 3.0), (4.0, 2.0), (6.0, 2.0)] {
        Ok(format!("{order:?}"))
    } else {
        Err(format!("sorted to {order:?}"))
    }
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let ask = rng.random_range(2.0..35.0);
        let bid = rng.random_range(ask..=35.0);
        let (qs, qb) = (rng.random_range(0.01..20.0), rng.random_range(0.01..20.0));
        let t = match_pair(&Quotation::sell(0, ask, qs), &Quotation::buy(1, bid, qb))
            .ok_or(format!("case {case}: crossing pair did not match"))?;
        if t.price != (ask + bid) / 2.0 || t.quantity != qs.min(qb) {
            return Err(format!("case {case}: {t:?} for ask {ask} bid {bid}"));
        }
    }
    Ok("1000 cases exact".into())
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut traded = 0;
    for case in 0..1000 {
        let book = support::random_small_book(&mut rng);
        let seed: u64 = rng.random();
        let (trades, residual_buy, residual_sell) = support::brute_force_mrdac(&book, seed);
        let got = clear_mrdac(&support::to_quotations(&book), seed);
        let got_trades: Vec<_> = got
            .trades
            .iter()
            .map(|t| (t.seller_id, t.buyer_id, t.price, t.quantity, t.round))
            .collect();
        if got_trades != trades || got.residual_buy != residual_buy || got.residual_sell != residual_sell {
            return Err(format!("case {case}: book {book:?}"));
        }
        traded += usize::from(!trades.is_empty());
    }
    Ok(format!("1000 books identical, {traded} with trades"))
}

fn criterion_4() -> Check {
    let per_mechanism = 100_000 / 3 + 1;
    for m in Mechanism::ALL {
        let failures = par::map_indexed(Execution::Parallel, per_mechanism, |k| {
            let mut rng = ChaCha8Rng::seed_from_u64(4_000_000 + k as u64);
            let max_side = rng.random_range(1..=8);
            let book = support::random_real_book(&mut rng, max_side);
            let result = clear(m, &book, rng.random());
            support::check_market_invariants(&book, &result)
                .err()
                .map(|e| format!("{} book {k}: {e}", m.name()))
        });
        if let Some(e) = failures.into_iter().flatten().next() {
            return Err(e);
        }
    }
    Ok(format!("{} clearings", 3 * per_mechanism))
}

fn fuzz_episode(env: &mut MarketEnv, seed: u64) -> Result<(), String> {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let day = rng.random_range(0..env.n_start_days());
    env.reset(
        day,
        EpisodeSeeds {
            noise: rng.random(),
            auction: rng.random(),
        },
    )
    .map_err(|e| e.to_string())?;
    while !env.done() {
        let actions: Vec<ActionTriple> = (0..env.n_agents())
            .map(|_| {
                ActionTriple::new(
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                )
            })
            .collect();
        let out = env.step(&actions).map_err(|e| format!("seed {seed}: {e}"))?;
        for (i, a) in out.record.agents.iter().enumerate() {
            let p = env.params()[i];
            if a.balance_residual.abs() > TOL {
                return Err(format!("seed {seed}: balance residual {}", a.balance_residual));
            }
            if a.soc_after < p.e_min - TOL || a.soc_after > a.action.alpha_e * p.e_max + TOL {
                return Err(format!("seed {seed}: soc {} outside bounds", a.soc_after));
            }
        }
    }
    Ok(())
}

fn criterion_5() -> Check {
    let n = 10_000;
    let envs: Vec<MarketEnv> = Mechanism::ALL
        .iter()
        .map(|&mechanism| {
            let cfg = EpisodeConfig {
                mechanism,
                ..EpisodeConfig::default()
            };
            MarketEnv::from_library(
                cfg,
                MicrogridParams::four_grid_community(),
                &ProfileLibrary::synthetic(4, 30, 5),
            )
            .unwrap()
        })
        .collect();
    let results = par::map_indexed(Execution::Parallel, n, |k| {
        fuzz_episode(&mut envs[k % 3].clone(), k as u64)
    });
    match results.into_iter().find_map(Result::err) {
        Some(e) => Err(e),
        None => Ok(format!("{n} episodes")),
    }
}

fn criterion_6() -> Check {
    let dense = gradients::dense_worst();
    let lstm = gradients::lstm_worst();
    let logp = gradients::log_prob_worst();
    let msg = format!("dense {dense:.1e}, lstm {lstm:.1e}, log-prob {logp:.1e}");
    if dense < 1e-6 && lstm < 1e-5 && logp < 1e-5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_7() -> Check {
    let out = arbitrage::run(7);
    // one full charge bought in the valley and spent at the peak
    let closed_form = out.baseline + (arbitrage::PEAK_PRICE - arbitrage::VALLEY_PRICE) * arbitrage::params().e_max;
    if (out.optimal - closed_form).abs() > 1e-9 {
        return Err(format!(
            "dynamic programme gives {}, closed form {closed_form}",
            out.optimal
        ));
    }
    let msg = format!(
        "trained {:.2}, optimal {:.2}, no storage {:.2}, captured {:.1}%",
        out.trained,
        out.optimal,
        out.baseline,
        100.0 * out.fraction()
    );
    if out.fraction() >= 0.8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Mean community reward per episode of sampled actions on fixed days.
fn sampled_reward(env: &MarketEnv, trainer: &Trainer, policies: &[PolicyNet], days: &[usize]) -> f64 {
    let res = evaluate(
        env,
        trainer.scaler(),
        &EvalPolicy::Sampled(policies, 808),
        days,
        808,
        Execution::Parallel,
    )
    .unwrap();
    res.iter().map(|d| d.community_profit()).sum::<f64>() / res.len() as f64
}

fn criterion_8() -> Check {
    let cfg = ExperimentConfig::default();
    let env = build_env(&cfg).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        episodes: 1500,
        ..cfg.train.clone()
    };
    let mut trainer = Trainer::new(env.clone(), Variant::Mmappo, config, cfg.seeds.train).map_err(|e| e.to_string())?;
    let days: Vec<usize> = (0..env.n_start_days())
        .step_by(env.n_start_days() / 50)
        .take(50)
        .collect();
    let initial = trainer.policies();
    let before = sampled_reward(&env, &trainer, &initial, &days);
    trainer.train(|_| {}).map_err(|e| e.to_string())?;
    let after = sampled_reward(&env, &trainer, &trainer.policies(), &days);
    let gain = (after - before) / before.abs();
    let msg = format!(
        "reward per episode {before:.2} -> {after:.2} after {} episodes, {:+.1}%",
        trainer.episodes_done(),
        100.0 * gain
    );
    if gain >= 0.3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_9(dir: &Path) -> Check {
    let mut cfg = ExperimentConfig {
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.train.episodes = 1500;
    let mut checkpoints = Vec::new();
    for m in Mechanism::ALL {
        let mut c = cfg.with_mechanism(m);
        c.output_dir = dir.join(m.name());
        let out = run_train(&c, None, Execution::Parallel).map_err(|e| e.to_string())?;
        checkpoints.push(out.checkpoint);
    }
    let days = cfg.profiles.test_days;
    let report = run_compare(
        &cfg,
        [&checkpoints[0], &checkpoints[1], &checkpoints[2]],
        days,
        Execution::Parallel,
    )
    .map_err(|e| e.to_string())?;
    print!("{}", report.table());
    let cells: Vec<String> = report
        .reports
        .iter()
        .map(|r| {
            let m = r.mean.unwrap_or_default();
            format!("{} {:.2}/{:.2}", r.mechanism.name(), m.total_profit(), m.emergency())
        })
        .collect();
    let msg = format!("{days} test days, profit/emergency: {}", cells.join(", "));
    if report.reports.iter().all(|r| r.daily.len() >= 200) && report.profit_order && report.emergency_lowest {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn same_bytes(a: &Path, b: &Path) -> Result<(), String> {
    let (x, y) = (
        fs::read(a).map_err(|e| e.to_string())?,
        fs::read(b).map_err(|e| e.to_string())?,
    );
    if x == y {
        Ok(())
    } else {
        Err(format!("{} and {} differ", a.display(), b.display()))
    }
}

fn criterion_10(dir: &Path) -> Check {
    let err = |e: CliError| e.to_string();
    let mut runs = Vec::new();
    for (k, exec) in [Execution::Parallel, Execution::Sequential].into_iter().enumerate() {
        let mut cfg = ExperimentConfig {
            output_dir: dir.join(format!("run{k}")),
            ..ExperimentConfig::default()
        };
        cfg.train.episodes = 24;
        let trained = run_train(&cfg, None, exec).map_err(err)?;
        let ck = trained.checkpoint.clone();
        let eval = run_eval(&cfg, EvalSource::Checkpoint(&ck), 20, exec).map_err(err)?;
        let compare = run_compare(&cfg, [&ck, &ck, &ck], 20, exec).map_err(err)?;
        let profiles = cfg.output_dir.join("profiles.csv");
        run_gen_profiles(4, 10, 3, &profiles).map_err(err)?;
        runs.push(vec![
            trained.curve,
            eval.summary_csv,
            eval.daily_csv,
            compare.csv,
            profiles,
        ]);
    }
    for (a, b) in runs[0].iter().zip(&runs[1]) {
        same_bytes(a, b)?;
    }
    let book = dir.join("book.csv");
    fs::write(
        &book,
        "agent_id,side,price,quantity\n0,sell,3,2\n1,buy,9,1.5\n2,buy,7,4\n3,sell,6,3\n",
    )
    .map_err(|e| e.to_string())?;
    for m in Mechanism::ALL {
        if run_clear(&book, m, 5).map_err(err)? != run_clear(&book, m, 5).map_err(err)? {
            return Err(format!("clear under {} differs", m.name()));
        }
    }
    Ok(format!("{} CSV files identical across two runs", runs[0].len()))
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        (1, "seller priority sort", Box::new(criterion_1)),
        (2, "pair settlement", Box::new(criterion_2)),
        (3, "clearing oracle equivalence", Box::new(criterion_3)),
        (4, "market invariants", Box::new(criterion_4)),
        (5, "physics invariants", Box::new(criterion_5)),
        (6, "gradient checks", Box::new(criterion_6)),
        (7, "single-agent arbitrage", Box::new(criterion_7)),
        (8, "learning improvement", Box::new(criterion_8)),
        (
            9,
            "mechanism ordering",
            Box::new(|| criterion_9(&dir.path().join("ordering"))),
        ),
        (
            10,
            "determinism",
            Box::new(|| criterion_10(&dir.path().join("determinism"))),
        ),
    ];
    let mut failed = 0;
    for (n, name, check) in &criteria {
        if !wanted.is_empty() && !wanted.contains(n) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("[PASS] {n:>2} {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {n:>2} {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
