//! Command implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use kinetok::eval::suite::{caption_suite, goal_suite, rollout_rng, text_to_motion_suite};
use kinetok::eval::{write_reports, FeatureExtractor};
use kinetok::lm::{GenerationConfig, LanguageModel};
use kinetok::motion::{
    generate_human_corpus, generate_qa_corpus, generate_robot_corpus, read_corpus, trace_csv, trace_svg,
    write_corpus, CaptionedTrajectory, Embodiment, Gait, Trajectory,
};
use kinetok::pipeline::{build_dataset, instruction_pools, Bundle, Corpora};
use kinetok::template::{self, TaskRegistry};
use kinetok::tokenizer::binning::quantile_sorted;
use kinetok::tokenizer::{VqConfig, VqVae};
use kinetok::vocab::{build_vocabulary, GridCell};
use serde::Serialize;

use crate::config::{self, usage, CorpusKind, EvaluateRun, GenerateRun, LmRun, SynthRun, TokenizerRun};
use crate::{Cli, Command};

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: Option<CorpusKind>,
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TokenizerArgs {
    /// Corpus JSONL (default: `<data-dir>/robot.jsonl`).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct LmArgs {
    #[arg(long)]
    pub robot_corpus: Option<PathBuf>,
    #[arg(long)]
    pub human_corpus: Option<PathBuf>,
    #[arg(long)]
    pub qa_corpus: Option<PathBuf>,
    #[arg(long)]
    pub robot_tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub human_tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Bundle directory (default: `<data-dir>/bundle`).
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Task name: t2rm, t2hm, qa, caption or goal.
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long)]
    pub question: Option<String>,
    /// Goal cell as `col,row`.
    #[arg(long)]
    pub goal: Option<String>,
    /// Trajectory JSONL to caption.
    #[arg(long)]
    pub motion: Option<PathBuf>,
    /// Gait to condition on; omitted, the model predicts it.
    #[arg(long)]
    pub gait: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub unconstrained: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Goal,
    TextToMotion,
    Caption,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Reference corpus JSONL (default: `<data-dir>/robot.jsonl`).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Trained feature extractor directory; trained on the corpus when absent.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub n_per_goal: Option<usize>,
    #[arg(long)]
    pub goals: Option<usize>,
    #[arg(long)]
    pub prompts: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// JSONL of robot trajectories (corpus or generate output).
    #[arg(long)]
    pub input: PathBuf,
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg_path = cli.config.as_deref();
    match &cli.command {
        Command::SynthData(a) => synth(cli, a, config::load(cfg_path)?),
        Command::TrainTokenizer(a) => train_tokenizer(cli, a, config::load(cfg_path)?),
        Command::TrainLm(a) => train_lm(cli, a, config::load(cfg_path)?),
        Command::Generate(a) => generate(cli, a, config::load(cfg_path)?),
        Command::Evaluate(a) => evaluate(cli, a, config::load(cfg_path)?),
        Command::ExportTraces(a) => export(cli, a),
    }
}

fn out_or(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| cli.data_dir.join(default))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    kinetok::io::atomic_write(path, text.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct DimStats {
    name: String,
    min: f64,
    q01: f64,
    q99: f64,
    max: f64,
}

#[derive(Serialize)]
struct CorpusStats {
    samples: usize,
    frames: usize,
    embodiment: Option<Embodiment>,
    dims: Vec<DimStats>,
}

fn corpus_stats(corpus: &[CaptionedTrajectory]) -> CorpusStats {
    let embodiment = corpus.first().map(|c| c.trajectory.embodiment);
    let dim = embodiment.map_or(0, |e| e.dim());
    let mut cols = vec![Vec::new(); dim];
    for c in corpus {
        for p in &c.trajectory.poses {
            for (col, v) in cols.iter_mut().zip(p) {
                col.push(*v);
            }
        }
    }
    let names: Vec<String> = match embodiment {
        Some(Embodiment::Robot) => ["lin_x", "lin_z", "ang_y"].iter().map(|s| s.to_string()).collect(),
        _ => (0..dim).map(|i| format!("d{i}")).collect(),
    };
    let dims = cols
        .into_iter()
        .zip(names)
        .map(|(mut c, name)| {
            c.sort_by(f64::total_cmp);
            DimStats {
                name,
                min: c[0],
                q01: quantile_sorted(&c, 0.01),
                q99: quantile_sorted(&c, 0.99),
                max: c[c.len() - 1],
            }
        })
        .collect();
    CorpusStats {
        samples: corpus.len(),
        frames: corpus.iter().map(|c| c.trajectory.len()).sum(),
        embodiment,
        dims,
    }
}

fn synth(cli: &Cli, a: &SynthArgs, mut run: SynthRun) -> Result<()> {
    if let Some(k) = a.kind {
        run.kind = k;
    }
    if let Some(n) = a.n {
        run.robot.n_samples = n;
        run.human.n_samples = n;
    }
    if let Some(s) = cli.seed {
        run.robot.seed = s;
        run.human.seed = s;
    }
    let corpus = match run.kind {
        CorpusKind::Robot => generate_robot_corpus(&run.robot)?,
        CorpusKind::Human => generate_human_corpus(&run.human)?,
        CorpusKind::Qa => generate_qa_corpus(&run.human)?,
    };
    let name = match run.kind {
        CorpusKind::Robot => "robot.jsonl",
        CorpusKind::Human => "human.jsonl",
        CorpusKind::Qa => "qa.jsonl",
    };
    let out = out_or(cli, name);
    write_corpus(&out, &corpus)?;
    kinetok::io::write_json(&sibling(&out, ".stats.json"), &corpus_stats(&corpus))?;
    config::save(&sibling(&out, ".run.json"), &run)?;
    eprintln!("wrote {} samples to {}", corpus.len(), out.display());
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Vec<CaptionedTrajectory>> {
    read_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn train_tokenizer(cli: &Cli, a: &TokenizerArgs, mut run: TokenizerRun) -> Result<()> {
    let corpus_path = a.corpus.clone().unwrap_or_else(|| cli.data_dir.join("robot.jsonl"));
    let corpus = load_corpus(&corpus_path)?;
    let first = corpus.first().ok_or_else(|| kinetok::Error::Data("empty corpus".into()))?;
    let embodiment = first.trajectory.embodiment;
    let dt = first.trajectory.dt;
    let vq = run.tokenizer.clone().unwrap_or_else(|| match embodiment {
        Embodiment::Human { joints } => VqConfig::human(joints),
        _ => VqConfig::robot(),
    });
    if vq.embodiment != embodiment {
        return Err(kinetok::Error::Mismatch(format!("tokenizer for {} given a {embodiment} corpus", vq.embodiment)).into());
    }
    if let Some(s) = a.steps {
        run.train.steps = s;
        run.train.optim.total_steps = s;
    }
    if let Some(s) = cli.seed {
        run.train.seed = s;
    }
    run.tokenizer = Some(vq.clone());
    if run.holdout >= corpus.len() {
        return Err(usage(format!("holdout {} leaves no training data", run.holdout)));
    }
    let trajs: Vec<Trajectory> = corpus.iter().map(|c| c.trajectory.clone()).collect();
    let (train, held) = trajs.split_at(trajs.len() - run.holdout);
    let out = out_or(cli, &format!("tokenizer_{}", if embodiment.is_robot() { "robot" } else { "human" }));
    let mut model = VqVae::new(vq, dt, run.train.seed)?;
    let before = (!held.is_empty()).then(|| model.evaluate(held)).transpose()?;
    let mut csv = String::from("step,lr,total,reconstruction,commitment,velocity,resets\n");
    model.train(train, &run.train, |l| {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            l.step, l.lr, l.loss.total, l.loss.reconstruction, l.loss.commitment, l.loss.velocity_reg, l.resets
        ));
        if l.step % 100 == 0 {
            eprintln!("step {} loss {:.4}", l.step, l.loss.total);
        }
    })?;
    model.save(&out)?;
    write_text(&out.join("loss.csv"), &csv)?;
    let after = (!held.is_empty()).then(|| model.evaluate(held)).transpose()?;
    let summary = serde_json::json!({
        "heldout_reconstruction_before": before.map(|r| r.reconstruction),
        "heldout_reconstruction_after": after.map(|r| r.reconstruction),
        "utilization": model.utilization(train)?,
    });
    kinetok::io::write_json(&out.join("summary.json"), &summary)?;
    config::save(&out.join("run_config.json"), &run)?;
    eprintln!("wrote tokenizer to {}", out.display());
    Ok(())
}

fn train_lm(cli: &Cli, a: &LmArgs, mut run: LmRun) -> Result<()> {
    let robot = a.robot_tokenizer.as_deref().map(VqVae::load).transpose()?;
    let human = a.human_tokenizer.as_deref().map(VqVae::load).transpose()?;
    if let Some(t) = &robot {
        run.vocab.robot_codebook = t.config().codebook_size;
    }
    if let Some(t) = &human {
        run.vocab.human_codebook = t.config().codebook_size;
    }
    let load = |p: &Option<PathBuf>| -> Result<Vec<CaptionedTrajectory>> { p.as_deref().map(load_corpus).transpose().map(Option::unwrap_or_default) };
    let corpora = Corpora {
        robot: load(&a.robot_corpus)?,
        human: load(&a.human_corpus)?,
        qa: load(&a.qa_corpus)?,
    };
    let vocab = build_vocabulary(&run.vocab)?;
    let tasks = TaskRegistry::default();
    let pools = instruction_pools(&vocab, robot.as_ref(), human.as_ref(), &corpora, run.mix.mirror)?;
    run.mix.weights.retain(|task, _| {
        let keep = pools.contains_key(task);
        if !keep {
            eprintln!("no samples for task {task}; dropping it from the mixture");
        }
        keep
    });
    if let Some(s) = a.steps {
        run.train.steps = s;
        run.train.optim.total_steps = s;
    }
    if let Some(s) = cli.seed {
        run.train.seed = s;
        run.mix.seed = s;
    }
    run.lm.vocab_size = vocab.len();
    let data = build_dataset(&tasks, &vocab, &pools, &run.mix, run.lm.context)?;
    let mut lm = LanguageModel::new(run.lm.clone(), run.train.seed)?;
    let out = out_or(cli, "bundle");
    let mut csv = String::from("step,lr,loss,tokens\n");
    lm.train(&data, &run.train, |l| {
        csv.push_str(&format!("{},{},{},{}\n", l.step, l.lr, l.loss, l.tokens));
        if l.step % 100 == 0 {
            eprintln!("step {} loss {:.4}", l.step, l.loss);
        }
        true
    })?;
    let bundle = Bundle::new(vocab, tasks, robot, human, lm)?;
    bundle.save(&out)?;
    write_text(&out.join("loss.csv"), &csv)?;
    config::save(&out.join("run_config.json"), &run)?;
    eprintln!("wrote bundle to {}", out.display());
    Ok(())
}

fn parse_cell(s: &str) -> Result<GridCell> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [c, r] => Ok(GridCell {
            col: c.parse().map_err(|_| usage(format!("bad goal column {c:?}")))?,
            row: r.parse().map_err(|_| usage(format!("bad goal row {r:?}")))?,
        }),
        _ => Err(usage(format!("goal must be `col,row`, got {s:?}"))),
    }
}

#[derive(Serialize)]
struct GeneratedMotion {
    prompt: String,
    #[serde(flatten)]
    trajectory: Trajectory,
    gait: Option<Gait>,
    codes: Vec<usize>,
    terminated: bool,
}

fn generate(cli: &Cli, a: &GenerateArgs, mut run: GenerateRun) -> Result<()> {
    let bundle = Bundle::load(&a.bundle.clone().unwrap_or_else(|| cli.data_dir.join("bundle")))?;
    bundle.tasks.get(&a.task)?;
    if let Some(s) = a.samples {
        run.samples = s;
    }
    if let Some(t) = a.temperature {
        run.generation.temperature = t;
    }
    if let Some(k) = a.top_k {
        run.generation.top_k = k;
    }
    if a.greedy {
        run.generation = GenerationConfig {
            top_k: 1,
            ..run.generation
        };
    }
    if a.unconstrained {
        run.generation.constrained = false;
    }
    if let Some(s) = cli.seed {
        run.seed = s;
    }
    run.generation.validate()?;
    let gait = a
        .gait
        .as_deref()
        .map(|g| Gait::from_token_name(&g.to_uppercase()))
        .transpose()?;
    let gen = &run.generation;
    if a.task == template::CAPTION {
        let path = a.motion.as_ref().ok_or_else(|| usage("the caption task needs --motion"))?;
        let trajs: Vec<Trajectory> = kinetok::io::read_jsonl(path)?;
        let out = out_or(cli, "captions.txt");
        let mut text = String::new();
        for (i, t) in trajs.iter().enumerate() {
            for k in 0..run.samples {
                text.push_str(&bundle.motion_to_text(t, gen, &mut rollout_rng(run.seed, i, k))?);
                text.push('\n');
            }
        }
        write_text(&out, &text)?;
        config::save(&sibling(&out, ".run.json"), &run)?;
        print!("{text}");
        return Ok(());
    }
    let mut results = Vec::with_capacity(run.samples);
    for k in 0..run.samples {
        let rng = &mut rollout_rng(run.seed, 0, k);
        let (prompt, m) = match a.task.as_str() {
            template::GOAL => {
                let s = a.goal.as_deref().ok_or_else(|| usage("the goal task needs --goal col,row"))?;
                (format!("goal {s}"), bundle.goal(parse_cell(s)?, gait, gen, rng)?)
            }
            template::QA => {
                let q = a.question.as_ref().or(a.text.as_ref()).ok_or_else(|| usage("the qa task needs --question"))?;
                (q.clone(), bundle.text_to_motion(&a.task, q, None, gen, rng)?)
            }
            _ => {
                let t = a.text.as_ref().ok_or_else(|| usage(format!("task {} needs --text", a.task)))?;
                (t.clone(), bundle.text_to_motion(&a.task, t, gait, gen, rng)?)
            }
        };
        results.push(GeneratedMotion {
            prompt,
            trajectory: m.trajectory,
            gait: m.gait,
            codes: m.codes,
            terminated: m.terminated,
        });
    }
    let out = out_or(cli, "generated.jsonl");
    kinetok::io::write_jsonl(&out, &results)?;
    config::save(&sibling(&out, ".run.json"), &run)?;
    eprintln!("wrote {} trajectories to {}", results.len(), out.display());
    Ok(())
}

fn evaluate(cli: &Cli, a: &EvaluateArgs, mut run: EvaluateRun) -> Result<()> {
    let bundle = Bundle::load(&a.bundle.clone().unwrap_or_else(|| cli.data_dir.join("bundle")))?;
    let corpus = load_corpus(&a.corpus.clone().unwrap_or_else(|| cli.data_dir.join("robot.jsonl")))?;
    if let Some(n) = a.n_per_goal {
        run.suite.n_per_goal = n;
    }
    if let Some(n) = a.goals {
        run.suite.goals = n;
    }
    if let Some(n) = a.prompts {
        run.suite.prompts = n;
    }
    if let Some(s) = cli.seed {
        run.seed = s;
        run.features.seed = s;
    }
    let out = out_or(cli, "eval");
    let (stem, reports) = match a.suite {
        Suite::Goal => ("goal", goal_suite(&bundle, &corpus, &run.suite, run.seed)?),
        Suite::Caption => ("caption", caption_suite(&bundle, &corpus, &run.suite, run.seed)?),
        Suite::TextToMotion => {
            let fx = match &a.features {
                Some(dir) => FeatureExtractor::load(dir)?,
                None => {
                    let fx = FeatureExtractor::train(&corpus, &run.features, |_| {})?;
                    fx.save(&out.join("features"))?;
                    fx
                }
            };
            ("text_to_motion", text_to_motion_suite(&bundle, &corpus, &fx, &run.suite, run.seed)?)
        }
    };
    write_reports(&out, stem, &reports)?;
    config::save(&out.join(format!("{stem}.run.json")), &run)?;
    let mut stdout = std::io::stdout().lock();
    for r in &reports {
        writeln!(stdout, "{:<28} {:>10.4} ± {:.4}", r.metric, r.value, r.ci95)?;
    }
    Ok(())
}

fn export(cli: &Cli, a: &ExportArgs) -> Result<()> {
    let trajs: Vec<Trajectory> = kinetok::io::read_jsonl(&a.input)?;
    if let Some(t) = trajs.iter().find(|t| !t.embodiment.is_robot()) {
        return Err(kinetok::Error::Embodiment(format!("cannot export {} trajectories as planar traces", t.embodiment)).into());
    }
    let out = out_or(cli, "traces");
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join("traces.csv"), &trace_csv(&trajs)?)?;
    write_text(&out.join("traces.svg"), &trace_svg(&trajs)?)?;
    eprintln!("wrote {} traces to {}", trajs.len(), out.display());
    Ok(())
}
