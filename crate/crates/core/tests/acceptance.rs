//! Acceptance suite: one PASS/FAIL line per criterion, run sequentially so
//! the wall-clock budgets are measured without contention. Runs without the
//! libtest harness so the per-criterion lines are always printed.

use std::time::{Duration, Instant};

use kinetok::eval::suite::{goal_suite, text_to_motion_suite, SuiteConfig};
use kinetok::eval::{bleu, fid, r_precision, rouge_l, FeatureConfig, FeatureExtractor, MetricReport};
use kinetok::lm::{Constraint, GenerationConfig, LanguageModel, LmConfig, LmTrainConfig};
use kinetok::motion::{
    endpoint, generate_human_corpus, generate_qa_corpus, generate_robot_corpus, mirror, time_scale, Embodiment, Gait,
    HumanSynthConfig, SynthConfig, Trajectory,
};
use kinetok::nn::gradcheck::layer_suite;
use kinetok::nn::{Graph, OptimConfig, ParamStore, Tensor};
use kinetok::pipeline::{build_dataset, instruction_pools, Bundle, Corpora, MixConfig};
use kinetok::template::{self, render_sample, InstructionSample, TaskRegistry};
use kinetok::tokenizer::{nearest, BinningScheme, Codebook, VqConfig, VqTrainConfig, VqVae};
use kinetok::vocab::{build_vocabulary, GridCell, Segment, UnifiedVocabulary, VocabConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn vocab() -> UnifiedVocabulary {
    build_vocabulary(&VocabConfig::default()).unwrap()
}

fn trajectories(corpus: &[kinetok::motion::CaptionedTrajectory]) -> Vec<Trajectory> {
    corpus.iter().map(|c| c.trajectory.clone()).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect())
        .collect()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    for seed in 0..5 {
        for (name, report) in layer_suite(seed).unwrap() {
            if report.max_rel_error >= worst.0 {
                worst = (report.max_rel_error, format!("{name} seed {seed}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 <= 1e-3 && secs < 60.0,
        format!("max relative error {:.2e} ({}), {secs:.1}s", worst.0, worst.1),
    )
}

fn quantization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut agree = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..64);
        let d = rng.gen_range(1..16);
        let book = Codebook::new(Tensor::randn(vec![n, d], 1.0, &mut rng)).unwrap();
        let z = Tensor::<f32>::randn(vec![d], 1.0, &mut rng).into_data();
        let brute = (0..n)
            .map(|k| {
                let dist: f64 = book.entries.row(k).iter().zip(&z).map(|(c, x)| (*c as f64 - *x as f64).powi(2)).sum();
                (dist, k)
            })
            .fold((f64::INFINITY, 0), |best, cur| if cur.0 < best.0 { cur } else { best });
        let (k, q) = book.quantize(&z).unwrap();
        agree += (k == brute.1 && nearest(&book.entries, &z).unwrap().0 == k && q == book.entries.row(k)) as usize;
    }

    let mut store = ParamStore::<f32>::default();
    let zp = store.add("z", Tensor::randn(vec![10, 6], 1.0, &mut rng));
    let mut g = Graph::new(&store);
    let z = g.param(zp);
    let q = Tensor::randn(vec![10, 6], 1.0, &mut rng);
    let st = g.straight_through(z, q).unwrap();
    let target = g.constant(Tensor::randn(vec![10, 6], 1.0, &mut rng));
    let loss = g.smooth_l1(st, target, 1.0).unwrap();
    let back = g.backward(loss).unwrap();
    let identity = back.node(z).unwrap() == back.node(st).unwrap();
    outcome(
        agree == 1000 && identity,
        format!("{agree}/1000 index agreement, straight-through identity {identity}"),
    )
}

fn tokenizer_training() -> Outcome {
    let start = Instant::now();
    let train = trajectories(&generate_robot_corpus(&SynthConfig { n_samples: 2000, seed: 21, ..Default::default() }).unwrap());
    let held = trajectories(&generate_robot_corpus(&SynthConfig { n_samples: 200, seed: 22, ..Default::default() }).unwrap());
    let cfg = VqConfig {
        codebook_size: 128,
        code_dim: 64,
        downsample: 4,
        ..VqConfig::robot()
    };
    let mut vq = VqVae::new(cfg, 0.1, 0).unwrap();
    let before = vq.evaluate(&held).unwrap().reconstruction;
    let tc = VqTrainConfig {
        steps: 3000,
        optim: OptimConfig {
            initial_lr: 1e-3,
            total_steps: 3000,
            ..Default::default()
        },
        ..Default::default()
    };
    vq.train(&train, &tc, |_| {}).unwrap();
    let after = vq.evaluate(&held).unwrap().reconstruction;
    let util = vq.utilization(&held).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        after <= 0.25 * before && util >= 0.2 && secs < 900.0,
        format!(
            "held-out reconstruction {after:.4} vs untrained {before:.4} (ratio {:.3}), utilization {util:.2}, {secs:.0}s",
            after / before
        ),
    )
}

fn compression() -> Outcome {
    let vq = VqVae::new(VqConfig { code_dim: 8, hidden: 8, ..VqConfig::robot() }, 0.1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    let mut ratio40 = 0.0;
    let fit = trajectories(&generate_robot_corpus(&SynthConfig { n_samples: 50, seed: 4, ..Default::default() }).unwrap());
    let scheme = BinningScheme::fit_robot(&fit).unwrap();
    for t in 1usize..=120 {
        let poses = (0..t).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let traj = Trajectory::new(Embodiment::Robot, 0.1, poses).unwrap();
        let tokens = vq.encode_trajectory(&traj).unwrap().len();
        let symbols = BinningScheme::symbol_count(&scheme.encode_trajectory(&traj).unwrap());
        ok &= tokens == t.div_ceil(4) && symbols == t * 4;
        if t == 40 {
            ratio40 = symbols as f64 / tokens as f64;
        }
    }
    outcome(ok && ratio40 == 16.0, format!("counts follow both laws for T=1..120, ratio at T=40 is {ratio40}"))
}

fn binning() -> Outcome {
    let corpus = trajectories(&generate_robot_corpus(&SynthConfig { n_samples: 300, seed: 5, ..Default::default() }).unwrap());
    let scheme = BinningScheme::fit_robot(&corpus).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let dim = rng.gen_range(0..3);
        let v: f64 = rng.gen_range(-2.5..2.5);
        let mut pose = vec![0.0; 3];
        pose[dim] = v;
        let (back, _) = scheme.decode_pose(&scheme.encode_pose(&pose, false).unwrap()).unwrap();
        worst = worst.max((back[dim] - scheme.clip(dim, v)).abs() / scheme.width(dim));
    }
    let ends = (0..3).all(|d| scheme.bin(d, scheme.dims[d].q01) == 0 && scheme.bin(d, scheme.dims[d].q99) == 255);
    outcome(
        worst <= 0.5 + 1e-9 && ends,
        format!("worst error {worst:.4} bin widths, endpoints at bins 0 and 255: {ends}"),
    )
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let words = ["walk", "forward", "turn", "left", "right", "then", "jump", "wave", "the", "robot"];
    (0..rng.gen_range(1..8)).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
}

fn templates() -> Outcome {
    let v = vocab();
    let reg = TaskRegistry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ok = 0;
    let mut per_task = [0usize; 5];
    for i in 0..1000 {
        let kind = i % 5;
        let text = random_text(&mut rng);
        let len = rng.gen_range(1..30);
        let codes: Vec<usize> = (0..len).map(|_| rng.gen_range(0..128)).collect();
        let gait = rng.gen_bool(0.5).then(|| Gait::ALL[rng.gen_range(0..2)]);
        let cell = GridCell { col: rng.gen_range(0..28), row: rng.gen_range(0..28) };
        let sample = match kind {
            0 => InstructionSample::text_to_robot(&v, &text, gait, &codes),
            1 => InstructionSample::text_to_human(&v, &text, &codes),
            2 => InstructionSample::caption(&v, if rng.gen_bool(0.5) { Segment::Robot } else { Segment::Human }, &codes, &text),
            3 => InstructionSample::goal(&v, cell, gait, &codes),
            _ => InstructionSample::question_to_human(&v, &text, &codes),
        }
        .unwrap();
        let ids = template::render(&reg, &v, &sample).unwrap();
        let spec = reg.get(&sample.task).unwrap();
        let mut expected = v.encode_text(&spec.prefix).unwrap();
        expected.extend(&sample.input);
        expected.push(v.special_id(&spec.start).unwrap());
        expected.extend(sample.gait);
        expected.extend(&sample.output);
        expected.push(v.special_id(&spec.end).unwrap());
        if ids == expected && template::parse(&reg, &v, &ids).unwrap() == sample {
            ok += 1;
            per_task[kind] += 1;
        }
    }
    outcome(ok == 1000, format!("{ok}/1000 round trips in prefix/input/start/gait/output/end order, per task {per_task:?}"))
}

fn lm_sanity() -> Outcome {
    let v = vocab();
    let reg = TaskRegistry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<_> = (0..32)
        .map(|_| {
            let text = random_text(&mut rng);
            let codes: Vec<usize> = (0..rng.gen_range(4..12)).map(|_| rng.gen_range(0..128)).collect();
            render_sample(&reg, &v, &InstructionSample::text_to_robot(&v, &text, Some(Gait::Trot), &codes).unwrap()).unwrap()
        })
        .collect();
    let cfg = LmConfig {
        vocab_size: v.len(),
        d_model: 64,
        layers: 2,
        heads: 4,
        context: 96,
        ..LmConfig::default()
    };
    let mut lm = LanguageModel::new(cfg, 0).unwrap();
    let initial = lm.mean_loss(&data).unwrap();
    let ln_v = (v.len() as f64).ln();
    let init_ok = (initial - ln_v).abs() <= 0.05 * ln_v;

    let tc = LmTrainConfig {
        steps: 2000,
        batch_size: 32,
        optim: OptimConfig {
            initial_lr: 3e-3,
            total_steps: 2000,
            ..Default::default()
        },
        seed: 0,
    };
    let mut reached = None;
    lm.train(&data, &tc, |log| {
        if log.loss < 0.1 {
            reached = Some(log.step);
        }
        reached.is_none()
    })
    .unwrap();
    let final_loss = lm.mean_loss(&data).unwrap();

    let dir = tempfile::tempdir().unwrap();
    lm.save(dir.path()).unwrap();
    let loaded = LanguageModel::load(dir.path()).unwrap();
    let prompt = &data[0].ids[..=data[0].response_start];
    let constraint = Constraint {
        output: v.range(Segment::Robot),
        gait: None,
        stop: v.special_id(&reg.get(template::TEXT_TO_ROBOT).unwrap().end).unwrap(),
    };
    let greedy = GenerationConfig::greedy();
    let a = lm.generate(prompt, &constraint, &greedy, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = loaded.generate(prompt, &constraint, &greedy, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let logits_equal = lm.logits(prompt).unwrap() == loaded.logits(prompt).unwrap();
    outcome(
        init_ok && reached.is_some() && a == b && logits_equal,
        format!(
            "initial loss {initial:.3} vs ln|V| {ln_v:.3}; overfit loss < 0.1 at step {reached:?} (final {final_loss:.4}); checkpoint greedy identical {}",
            a == b && logits_equal
        ),
    )
}

fn find<'a>(reports: &'a [MetricReport], metric: &str) -> &'a MetricReport {
    reports.iter().find(|r| r.metric == metric).unwrap_or_else(|| panic!("missing metric {metric}"))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let robot = generate_robot_corpus(&SynthConfig { n_samples: 3500, seed: 1, ..Default::default() }).unwrap();
    let human = generate_human_corpus(&HumanSynthConfig { n_samples: 1000, seed: 2, ..Default::default() }).unwrap();
    let qa = generate_qa_corpus(&HumanSynthConfig { n_samples: 500, seed: 3, ..Default::default() }).unwrap();

    let vq_train = |steps: usize| VqTrainConfig {
        steps,
        optim: OptimConfig {
            initial_lr: 1e-3,
            total_steps: steps,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut robot_tok = VqVae::new(VqConfig { code_dim: 64, ..VqConfig::robot() }, 0.1, 0).unwrap();
    robot_tok.train(&trajectories(&robot), &vq_train(1500), |_| {}).unwrap();
    let human_cfg = VqConfig {
        code_dim: 64,
        codebook_size: 128,
        ..VqConfig::human(HumanSynthConfig::default().joints)
    };
    let mut human_tok = VqVae::new(human_cfg, 0.1, 0).unwrap();
    let human_trajs: Vec<Trajectory> = human.iter().chain(&qa).map(|c| c.trajectory.clone()).collect();
    human_tok.train(&human_trajs, &vq_train(750), |_| {}).unwrap();

    let vocab = build_vocabulary(&VocabConfig { human_codebook: 128, ..Default::default() }).unwrap();
    let tasks = TaskRegistry::default();
    let corpora = Corpora { robot: robot.clone(), human, qa };
    let pools = instruction_pools(&vocab, Some(&robot_tok), Some(&human_tok), &corpora, false).unwrap();
    let (steps, batch) = (LM_STEPS, 32);
    let mix = MixConfig {
        sequences: steps * batch,
        weights: [("t2rm", 1.0), ("caption", 1.0), ("goal", 1.0), ("t2hm", 0.3), ("qa", 0.2)]
            .iter()
            .map(|(k, w)| (k.to_string(), *w))
            .collect(),
        ..Default::default()
    };
    let cfg = LmConfig {
        vocab_size: vocab.len(),
        d_model: 128,
        layers: 4,
        heads: 4,
        context: 160,
        ..LmConfig::default()
    };
    let data = build_dataset(&tasks, &vocab, &pools, &mix, cfg.context).unwrap();
    let mut lm = LanguageModel::new(cfg, 0).unwrap();
    let tc = LmTrainConfig {
        steps,
        batch_size: batch,
        optim: OptimConfig {
            initial_lr: 1e-3,
            total_steps: steps,
            ..Default::default()
        },
        seed: 0,
    };
    lm.train(&data, &tc, |_| true).unwrap();
    let bundle = Bundle::new(vocab, tasks, Some(robot_tok), Some(human_tok), lm).unwrap();
    let trained = start.elapsed();

    let suite = SuiteConfig::default();
    let goals = goal_suite(&bundle, &robot, &suite, 0).unwrap();
    let success = find(&goals, "success_pct").value;
    let random = find(&goals, "success_pct_random_codes").value;

    let extractor = FeatureExtractor::train(&robot, &FeatureConfig::default(), |_| {}).unwrap();
    let held = generate_robot_corpus(&SynthConfig { n_samples: 200, seed: 99, ..Default::default() }).unwrap();
    let sampled = text_to_motion_suite(&bundle, &held, &extractor, &suite, 0).unwrap();
    let b1 = find(&sampled, "bleu@1").value;
    let shuffled = find(&sampled, "bleu@1_shuffled_captions").value;
    let mm = find(&sampled, "multimodality").value;
    let greedy_suite = SuiteConfig {
        generation: GenerationConfig::greedy(),
        prompts: 40,
        ..suite
    };
    let greedy = text_to_motion_suite(&bundle, &held, &extractor, &greedy_suite, 0).unwrap();
    let mm_greedy = find(&greedy, "multimodality").value;

    let goal_ok = success >= 5.0 * random && success > 0.0;
    let bleu_ok = b1 - shuffled >= 20.0;
    let mm_ok = mm > 0.0 && mm_greedy == 0.0;
    let budget = trained <= Duration::from_secs(30 * 60);
    outcome(
        goal_ok && bleu_ok && mm_ok && budget,
        format!(
            "training {:.0}s; (a) success {success:.2}% vs random codes {random:.2}%; (b) BLEU@1 {b1:.1} vs shuffled {shuffled:.1}; \
             (c) multimodality {mm:.4} sampled, {mm_greedy} greedy; total {:.0}s",
            trained.as_secs_f64(),
            start.elapsed().as_secs_f64()
        ),
    )
}

const LM_STEPS: usize = 2000;

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = gaussian(&mut rng, 2000, 4, 0.0);
    let self_fid = fid(&x, &x).unwrap();
    let a = gaussian(&mut rng, 6000, 4, 0.0);
    let b = gaussian(&mut rng, 6000, 4, 1.5);
    let offset = fid(&a, &b).unwrap();
    let expected = 4.0 * 1.5 * 1.5;
    let fid_ok = self_fid.abs() <= 1e-6 && (offset - expected).abs() <= 0.05 * expected;

    let out = gaussian(&mut rng, 2000, 8, 0.0);
    let cond = gaussian(&mut rng, 2000, 8, 0.0);
    let chance = r_precision(&out, &cond, 10).unwrap().top[0].value;
    let chance_ok = (chance - 1.0 / 32.0).abs() <= 0.02;

    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let text_ok = close(bleu(&s(&["the robot walks"]), &s(&["the robot walks forward"]), 1).unwrap().value, 100.0 * (-1.0f64 / 3.0).exp())
        && close(bleu(&s(&["the the the"]), &s(&["the cat"]), 1).unwrap().value, 100.0 / 3.0)
        && close(bleu(&s(&["a b c d"]), &s(&["a b x d"]), 2).unwrap().value, 100.0 * (0.75f64 / 3.0).sqrt())
        && close(bleu(&s(&["walk left then turn right"]), &s(&["walk left then turn right"]), 4).unwrap().value, 100.0)
        && close(rouge_l(&s(&["a b c d"]), &s(&["a x c d"])).unwrap().value, 0.75)
        && close(rouge_l(&s(&["the robot walks"]), &s(&["the robot walks forward"])).unwrap().value, 1.5 / 1.75)
        && rouge_l(&s(&["walk left"]), &s(&["turn right"])).unwrap().value == 0.0;
    outcome(
        fid_ok && chance_ok && text_ok,
        format!("FID(X,X) {self_fid:.2e}, offset FID {offset:.3} vs {expected}; R-precision@1 chance {chance:.4}; text fixtures {text_ok}"),
    )
}

fn augmentation() -> Outcome {
    let robot = generate_robot_corpus(&SynthConfig { n_samples: 300, seed: 12, ..Default::default() }).unwrap();
    let human = generate_human_corpus(&HumanSynthConfig { n_samples: 100, seed: 13, ..Default::default() }).unwrap();
    let involution = robot.iter().chain(&human).all(|c| mirror(&mirror(c).unwrap()).unwrap() == *c);

    let mut worst = 0.0f64;
    for (v, t) in [([0.5, 0.0, 0.0], 40), ([0.3, -0.2, 0.0], 20), ([-0.4, 0.7, 0.0], 12), ([1.0, 0.5, 0.0], 8)] {
        let traj = Trajectory::new(Embodiment::Robot, 0.1, vec![v.to_vec(); t]).unwrap();
        let a = endpoint(&traj).unwrap();
        for f in [0.25, 0.5, 2.0, 3.0, 4.0] {
            let b = endpoint(&time_scale(&traj, f).unwrap()).unwrap();
            let norm = a.0.hypot(a.1);
            worst = worst.max((a.0 - b.0).hypot(a.1 - b.1) / norm);
        }
    }
    outcome(
        involution && worst <= 1e-6,
        format!("mirror involution {involution}; worst time-scale endpoint relative error {worst:.2e}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", gradients),
        ("nearest-code quantization", quantization),
        ("tokenizer training", tokenizer_training),
        ("compression law", compression),
        ("binning round trip", binning),
        ("template round trip", templates),
        ("language model sanity", lm_sanity),
        ("end-to-end benchmark", end_to_end),
        ("metric oracles", metric_oracles),
        ("augmentation invariants", augmentation),
    ];
    let only: Option<Vec<usize>> = std::env::var("KINETOK_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let r = run();
        println!("[criterion {n}] {} {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        if !r.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
