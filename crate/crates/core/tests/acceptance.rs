//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
//! summary. The process fails only on execution errors, or on any FAIL when
//! `STAGEBC_ACCEPTANCE_STRICT=1` is set.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stagebc::chunkstore::{chunk, Dataset, DatasetConfig};
use stagebc::demogen::{
    annotate, collect, AnnotateConfig, CollectConfig, DemoArchive, ExpertConfig, StageLabels, Step, Trajectory, TrajectoryMeta,
};
use stagebc::doorworld::{self, Action, EnvParams, EpisodeOutcome, Observation, ACTION_DIM, OBS_DIM, PROPRIO_DIM, VISUAL_DIM};
use stagebc::evalbench::*;
use stagebc::par::Exec;
use stagebc::policy::*;
use stagebc::runtime::{rollout, EnsembleBuffer, RolloutConfig, StageFeed, StageSourceSpec};
use stagebc::Stage;

/// Final validation recon over epoch-0 recon, fixed from the reference run
/// (0.53 to 0.57 across the three variants on the default pipeline).
const RECON_RATIO_MAX: f64 = 0.6;

#[derive(Default)]
struct Ledger {
    passed: usize,
    failed: Vec<String>,
}

impl Ledger {
    fn check(&mut self, name: &str, ok: bool, detail: impl AsRef<str>) {
        println!("{} {name}: {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(name.to_string());
        }
    }
}

fn numerics(l: &mut Ledger) {
    let start = Instant::now();
    let cfg = PolicyConfig {
        h: 4,
        dz: 4,
        width: 16,
        heads: 2,
        layers: 1,
        ffn: 32,
        seed: 3,
        ..PolicyConfig::for_variant(Variant::StageConditioned)
    };
    let w = PolicyWeights::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 3;
    let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
    let b = Batch {
        n,
        visual: normal(n * cfg.k * VISUAL_DIM),
        proprio: normal(n * PROPRIO_DIM),
        stage: Some((0..n).flat_map(|i| Stage::ALL[i + 1].one_hot()).collect()),
        target: normal(n * cfg.chunk_len()),
    };
    let noise = normal(n * cfg.dz);
    let total = |w: &PolicyWeights| {
        let (g, nodes) = build_loss_graph(w, &b, &noise, Exec::Sequential).unwrap();
        g.value(nodes.total).item()
    };
    let (mut g, nodes) = build_loss_graph(&w, &b, &noise, Exec::Sequential).unwrap();
    g.backward(nodes.total).unwrap();
    let grads = g.gradients();
    let flat: Vec<(String, usize)> = w
        .params
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i)))
        .collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let picks = sample(&mut rng, flat.len(), 100);
    for j in picks.iter() {
        let (name, i) = &flat[j];
        let mut plus = w.clone();
        plus.params.get_mut(name).unwrap().data_mut()[*i] += h;
        let mut minus = w.clone();
        minus.params.get_mut(name).unwrap().data_mut()[*i] -= h;
        let num = (total(&plus) - total(&minus)) / (2.0 * h);
        let a = grads[name].data()[*i];
        worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-6));
    }
    let secs = start.elapsed().as_secs_f64();
    l.check(
        "numerics",
        picks.len() >= 100 && worst < 1e-4 && secs < 60.0,
        format!("{} params, max rel err {worst:.2e}, {secs:.1}s", picks.len()),
    );
}

fn cvae_math(l: &mut Ledger) {
    let zero = LatentParams {
        mu: vec![0.0; 4],
        logvar: vec![0.0; 4],
    };
    let e1 = LatentParams {
        mu: vec![1.0, 0.0, 0.0, 0.0],
        logvar: vec![0.0; 4],
    };
    let (k0, k1) = (kl_std_normal(&zero), kl_std_normal(&e1));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut decomposed = true;
    for _ in 0..500 {
        let lp = LatentParams {
            mu: (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
            logvar: (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let pred: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
        let target: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
        let beta = rng.random_range(0.0..20.0);
        let parts = loss(&pred, &target, &lp, beta).unwrap();
        decomposed &= parts.total == parts.recon + beta * parts.kl;
    }
    l.check(
        "cvae_math",
        k0 == 0.0 && k1 == 0.5 && decomposed,
        format!("kl(0,0)={k0}, kl(e1,0)={k1}, total==recon+beta*kl on 500 draws: {decomposed}"),
    );
}

fn synthetic(id: usize, len: usize) -> Trajectory {
    let steps = (0..len)
        .map(|t| {
            let mut v = vec![0.0; OBS_DIM];
            v[0] = id as f64;
            Step {
                obs: Observation::from_slice(&v).unwrap(),
                action: Action {
                    d_arm_left: id as f64,
                    d_arm_right: t as f64,
                    base_v: 0.0,
                },
                stage: Stage::ALL[(5 * t / len).min(4)],
            }
        })
        .collect();
    Trajectory {
        steps,
        meta: TrajectoryMeta {
            seed: id as u64,
            randomize_init: false,
            env_hash: String::new(),
            duration_s: 0.0,
            success: true,
            clean: true,
        },
    }
}

fn chunking(l: &mut Ledger) {
    let stages = |t: &Trajectory| t.steps.iter().map(|s| s.stage).collect::<Vec<_>>();
    let t = synthetic(0, 300);
    let count = chunk(&t, &stages(&t), 100, 1).unwrap().len();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut clean = true;
    for case in 0..300 {
        let h = rng.random_range(1..40);
        let k = rng.random_range(1..6);
        for id in 0..rng.random_range(1..5) {
            let t = synthetic(case * 10 + id, rng.random_range(1..80));
            let samples = chunk(&t, &stages(&t), h, k).unwrap();
            clean &= samples.len() == t.len().saturating_sub(h);
            for (i, s) in samples.iter().enumerate() {
                clean &= s.target_chunk.iter().enumerate().all(|(j, a)| {
                    a[0] == (case * 10 + id) as f64 && a[1] == (i + j) as f64
                });
                clean &= s.obs_window.iter().all(|o| o.visual[0] == (case * 10 + id) as f64);
            }
        }
    }
    l.check(
        "chunking",
        count == 200 && clean,
        format!("T=300 H=100 gives {count} samples; 300 random cases stay inside their trajectory: {clean}"),
    );
}

fn ensembling(l: &mut Ledger) {
    let rows: Vec<[f64; ACTION_DIM]> = (0..4).map(|i| [0.1 * i as f64, -0.3, 1.7 + i as f64]).collect();
    let mut b = EnsembleBuffer::new(4, 0.1).unwrap();
    b.push(3, rows.clone()).unwrap();
    let passthrough = (0..4).all(|o| b.action(3 + o).unwrap().to_array() == rows[o]);

    let a = [0.123456789, -3.3, 1e-3];
    let mut b = EnsembleBuffer::new(5, 0.37).unwrap();
    let mut fixpoint = true;
    for t in 0..12 {
        b.push(t, vec![a; 5]).unwrap();
        fixpoint &= b.action(t).unwrap().to_array() == a;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mean_ok = true;
    let mut sums_ok = true;
    for _ in 0..200 {
        let h = rng.random_range(1..8);
        let m = rng.random_range(0.0..2.0);
        let mut flat = EnsembleBuffer::new(h, 0.0).unwrap();
        let mut weighted = EnsembleBuffer::new(h, m).unwrap();
        let mut history: Vec<(usize, Vec<[f64; ACTION_DIM]>)> = Vec::new();
        for t in 0..rng.random_range(1..20) {
            let c: Vec<[f64; ACTION_DIM]> = (0..h).map(|_| std::array::from_fn(|_| rng.random_range(-5.0..5.0))).collect();
            flat.push(t, c.clone()).unwrap();
            weighted.push(t, c.clone()).unwrap();
            history.push((t, c));
            let live: Vec<_> = history.iter().filter(|(s, _)| t < s + h).collect();
            let got = flat.action(t).unwrap().to_array();
            for j in 0..ACTION_DIM {
                let want = live.iter().map(|(s, c)| c[t - s][j]).sum::<f64>() / live.len() as f64;
                mean_ok &= (got[j] - want).abs() <= 1e-12;
            }
            let total: f64 = weighted.weights(t).iter().map(|x| x.0).sum();
            sums_ok &= (total - 1.0).abs() <= 1e-12;
        }
    }
    l.check(
        "ensembling",
        passthrough && fixpoint && mean_ok && sums_ok,
        format!("passthrough {passthrough}, fixpoint {fixpoint}, m=0 mean {mean_ok}, weights sum to 1 {sums_ok}"),
    );
}

fn environment(l: &mut Ledger, ckpt: &Checkpoint) {
    let p = EnvParams::default();
    // Press the lever down from above until the latch gives, then let go.
    let (mut s, _) = doorworld::reset(0, false, &p);
    s.base_x = p.door_x - 0.35;
    s.arm_left_h = p.handle_height + 0.02;
    s.hand_above_handle = true;
    let mut release_ok = true;
    let mut released_at = None;
    for _ in 0..80 {
        let next = doorworld::step(&s, &Action { d_arm_left: -0.01, ..Action::ZERO }, &p).unwrap().0;
        if s.latch_engaged && !next.latch_engaged {
            release_ok &= next.handle_angle >= p.theta_unlatch && s.handle_angle < p.theta_unlatch;
            released_at = Some(next.handle_angle);
            s = next;
            break;
        }
        release_ok &= next.handle_angle < p.theta_unlatch || !next.latch_engaged;
        s = next;
    }
    release_ok &= released_at.is_some();
    let mut relatch_ok = false;
    for _ in 0..200 {
        let next = doorworld::step(&s, &Action { d_arm_left: 0.02, ..Action::ZERO }, &p).unwrap().0;
        if !s.latch_engaged && next.latch_engaged {
            relatch_ok = next.handle_angle < p.theta_relatch && next.door_angle <= p.door_closed_tol;
            break;
        }
        s = next;
    }

    // Random reachable states: walk random actions from random starts.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut states = 0;
    let mut differing = 0;
    let mut ep = 0;
    while states < 10_000 {
        let (mut s, _) = doorworld::reset(ep, true, &p);
        ep += 1;
        for _ in 0..200 {
            let a = Action {
                d_arm_left: rng.random_range(-0.08..0.08),
                d_arm_right: rng.random_range(-0.05..0.05),
                base_v: rng.random_range(-0.2..0.8),
            };
            s = doorworld::step(&s, &a, &p).unwrap().0;
            let mut flipped = s.clone();
            flipped.latch_engaged = !s.latch_engaged;
            if doorworld::observe(&s, &p) != doorworld::observe(&flipped, &p) {
                differing += 1;
            }
            states += 1;
        }
    }

    let rc = RolloutConfig::default();
    let src = StageSourceSpec::oracle();
    let run = |seed| rollout(&p, ckpt, StageFeed::new(&src, seed).unwrap(), src.kind(), seed, &rc).unwrap();
    let deterministic = (0..3).all(|seed| {
        let (a, b) = (run(seed), run(seed));
        a.states() == b.states() && a.actions() == b.actions() && a.outcome == b.outcome
    });
    l.check(
        "environment",
        release_ok && relatch_ok && differing == 0 && deterministic,
        format!(
            "release at threshold {release_ok}, relatch below threshold {relatch_ok}, \
             {differing}/{states} states see the latch, repeat rollouts identical {deterministic}"
        ),
    );
}

fn annotation(l: &mut Ledger, noisy: &DemoArchive) {
    let p = EnvParams::default();
    let cc = CollectConfig {
        n: 200,
        seed: 31,
        expert: ExpertConfig {
            sigma: 0.0,
            ..ExpertConfig::default()
        },
        ..CollectConfig::default()
    };
    let clean = collect(&cc, &p, Exec::default()).unwrap();
    let ann = AnnotateConfig::default();
    let start = Instant::now();
    let labels: Vec<StageLabels> = clean.iter().map(|t| annotate(t, &ann, &p).unwrap()).collect();
    let secs = start.elapsed().as_secs_f64();
    let mean = |trajs: &[Trajectory], labels: &[StageLabels]| {
        trajs
            .iter()
            .zip(labels)
            .map(|(t, l)| l.agreement(&StageLabels::oracle(t)).unwrap())
            .sum::<f64>()
            / trajs.len() as f64
    };
    let a0 = mean(&clean, &labels);
    let a1 = mean(&noisy.trajectories, &noisy.labels);
    l.check(
        "annotation",
        a0 >= 0.95 && a1 >= 0.85 && secs < 30.0,
        format!("agreement {:.1}% noiseless, {:.1}% at default noise, {secs:.2}s for 200 demos", 100.0 * a0, 100.0 * a1),
    );
}

fn metrics(l: &mut Ledger) {
    let tr = |v: &[f64]| v.iter().map(|&x| [x; ACTION_DIM]).collect::<Vec<_>>();
    let q = tr(&[0.0, 1.0, 2.0]);
    let r = tr(&[1.0, 1.0, 1.0]);
    let shifted: Vec<_> = q.iter().map(|row| row.map(|v| v + 0.3)).collect();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let hand = tracking_error_upper(&q, &q).unwrap() == 0.0
        && tracking_error_root(&q, &q).unwrap() == 0.0
        && close(tracking_error_upper(&shifted, &q).unwrap(), 0.3)
        && close(tracking_error_root(&shifted, &q).unwrap(), 0.3)
        && close(tracking_error_upper(&q, &r).unwrap(), 2.0 / 3.0)
        && close(tracking_error_root(&q, &r).unwrap(), 2.0 / 3.0);

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut chained = true;
    for _ in 0..500 {
        let n = rng.random_range(1..80);
        let outcomes: Vec<EpisodeOutcome> = (0..n)
            .map(|_| {
                let passed = rng.random_range(0..=5);
                let mut completed = [false; 5];
                completed.iter_mut().take(passed).for_each(|c| *c = true);
                EpisodeOutcome {
                    completed,
                    success: passed == 5,
                    duration_s: 1.0,
                    success_step: (passed == 5).then_some(10),
                }
            })
            .collect();
        let rows = funnel_table(&outcomes).unwrap();
        chained &= rows[0].attempts == n;
        chained &= rows.windows(2).all(|w| w[1].attempts == w[0].successes);
    }
    l.check("metrics", hand && chained, format!("hand examples exact {hand}, funnel chain on 500 random sets {chained}"));
}

fn stage_rate(row: &ModelRow, s: Stage) -> f64 {
    let f = &row.funnel[s.index()];
    if f.attempts == 0 {
        0.0
    } else {
        f.successes as f64 / f.attempts as f64
    }
}

fn main() {
    let start = Instant::now();
    let strict = std::env::var("STAGEBC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut l = Ledger::default();

    numerics(&mut l);
    cvae_math(&mut l);
    chunking(&mut l);
    ensembling(&mut l);
    metrics(&mut l);

    // Pipeline: 200 demos, three default trainings, held-out evaluation.
    let p = EnvParams::default();
    let cc = CollectConfig::default();
    let demos = collect(&cc, &p, Exec::default()).unwrap();
    let archive = DemoArchive::build(p.clone(), cc, demos, &AnnotateConfig::default());
    annotation(&mut l, &archive);
    let mut models = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for v in [Variant::StageConditioned, Variant::Plain, Variant::History5] {
        let pc = PolicyConfig::for_variant(v);
        let ds = Dataset::build(
            &archive,
            &DatasetConfig {
                h: pc.h,
                k: pc.k,
                ..DatasetConfig::default()
            },
        )
        .unwrap();
        let t0 = Instant::now();
        let r = train(&ds, &pc).unwrap();
        println!(
            "  trained {} in {:.0}s: val recon {:.4} -> {:.4} (best epoch {})",
            v.label(),
            t0.elapsed().as_secs_f64(),
            r.curves[0].val_recon,
            r.curves[r.best_epoch].val_recon,
            r.best_epoch
        );
        worst_ratio = worst_ratio.max(r.curves[r.best_epoch].val_recon / r.curves[0].val_recon);
        models.push(Checkpoint::new(r.weights, &ds).unwrap());
    }
    l.check(
        "training_convergence",
        worst_ratio < RECON_RATIO_MAX,
        format!("worst final/epoch-0 val recon {worst_ratio:.3} (limit {RECON_RATIO_MAX})"),
    );
    environment(&mut l, &models[0]);

    let reference = ReferenceTrajectory::from_archive(&archive, &DatasetConfig::default()).unwrap();
    let ec = EvalConfig::default();
    let refs: Vec<&Checkpoint> = models.iter().collect();
    let cmp = run_comparison(&p, &refs, &reference, &ec).unwrap();
    let pipeline_secs = start.elapsed().as_secs_f64();
    print!("{}", indent(&comparison_table(&cmp)));
    print!("{}", indent(&funnel_text(&cmp)));
    let (stage, plain, hist) = (&cmp.rows[0], &cmp.rows[1], &cmp.rows[2]);

    l.check(
        "comparison_success_order",
        stage.success_rate >= 1.5 * plain.success_rate && stage.success_rate >= hist.success_rate,
        format!(
            "StageACT {:.0}% vs ACT {:.0}% (need >= {:.0}) and ACT-history-5 {:.0}%",
            stage.success_rate,
            plain.success_rate,
            1.5 * plain.success_rate,
            hist.success_rate
        ),
    );
    let fmt_t = |t: Option<f64>| t.map_or("none".to_string(), |t| format!("{t:.2}s"));
    l.check(
        "comparison_completion_time",
        matches!((stage.mean_time_s, plain.mean_time_s), (Some(a), Some(b)) if a < b),
        format!(
            "mean time among successes: StageACT {} vs ACT {}",
            fmt_t(stage.mean_time_s),
            fmt_t(plain.mean_time_s)
        ),
    );
    l.check(
        "pipeline_time",
        pipeline_secs < 3600.0,
        format!("demos + 3 trainings + eval in {pipeline_secs:.0}s"),
    );

    let rates: Vec<f64> = Stage::ALL.iter().map(|&s| stage_rate(plain, s)).collect();
    let lowest = (0..5).fold(0, |best, i| if rates[i] < rates[best] { i } else { best });
    l.check(
        "funnel_plain_bottleneck",
        lowest == 1 || lowest == 2,
        format!("ACT lowest pass fraction at {} ({:.2})", Stage::ALL[lowest], rates[lowest]),
    );
    let (s2, p2) = (stage_rate(stage, Stage::S2), stage_rate(plain, Stage::S2));
    l.check(
        "funnel_stage_s2",
        s2 > p2,
        format!(
            "S2 pass: StageACT {}/{} vs ACT {}/{}",
            stage.funnel[1].successes, stage.funnel[1].attempts, plain.funnel[1].successes, plain.funnel[1].attempts
        ),
    );

    let abl = run_ablation(&p, &models[0], &reference, &ec).unwrap();
    print!("{}", indent(&ablation_table(&abl)));
    let sr = |label: &str| abl.row(label).unwrap().success_rate;
    let (oracle, constant, random) = (sr(ABLATION_ORACLE), sr(ABLATION_CONSTANT), sr(ABLATION_RANDOM));
    l.check(
        "ablation_oracle_gap",
        oracle - random >= 30.0,
        format!("oracle {oracle:.0}% - random {random:.0}% = {:.0} points", oracle - random),
    );
    l.check(
        "ablation_constant",
        constant <= random + 10.0,
        format!("constant S1 {constant:.0}% vs random {random:.0}% + 10"),
    );

    let gc = GuidanceConfig::default();
    let latch = run_guidance(&p, &models[0], Scenario::LatchDisabled, &gc).unwrap();
    let rec = run_guidance(&p, &models[0], Scenario::Recovery, &gc).unwrap();
    print!("{}", indent(&guidance_table(&latch)));
    print!("{}", indent(&guidance_table(&rec)));
    let sched = latch.row(SCHEDULED).unwrap();
    let (with, without) = (rec.row(GUIDED).unwrap(), rec.row(UNGUIDED).unwrap());
    let sources = [
        StageSourceSpec::oracle(),
        StageSourceSpec::Constant { stage: Stage::S1 },
        StageSourceSpec::Random { seed: 3 },
        StageSourceSpec::FixedSequence { schedule: gc.schedule.clone() },
    ];
    let seeds: Vec<u64> = (0..5).collect();
    let invariant = schedule_invariant(&p, &models[1], &sources, &seeds, &RolloutConfig::default()).unwrap();
    l.check(
        "guidance",
        sched.successes > 0 && with.successes > without.successes && invariant,
        format!(
            "latch disabled S1>S4>S5 {}/{}; recovery with S1 prompt {}/{} vs without {}/{}; ACT schedule-invariant {invariant}",
            sched.successes, sched.n, with.successes, with.n, without.successes, without.n
        ),
    );

    println!(
        "acceptance: {} passed, {} failed{} ({:.0}s)",
        l.passed,
        l.failed.len(),
        if l.failed.is_empty() { String::new() } else { format!(": {}", l.failed.join(", ")) },
        start.elapsed().as_secs_f64()
    );
    if strict && !l.failed.is_empty() {
        std::process::exit(1);
    }
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("  {l}\n")).collect()
}
