//! Instruction template: `prefix input START [gait] output END`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::Gait;
use crate::vocab::{GridCell, Segment, UnifiedVocabulary};

pub const TEXT_TO_ROBOT: &str = "t2rm";
pub const TEXT_TO_HUMAN: &str = "t2hm";
pub const CAPTION: &str = "caption";
pub const GOAL: &str = "goal";
pub const QA: &str = "qa";

/// Static description of one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub prefix: String,
    pub start: String,
    pub end: String,
    /// Segments an input may be drawn from (all input tokens share one).
    pub inputs: Vec<Segment>,
    pub output: Segment,
    pub gait_allowed: bool,
    /// Input must be exactly one token.
    pub single_input: bool,
}

impl TaskSpec {
    fn new(name: &str, prefix: &str, special: &str, inputs: &[Segment], output: Segment) -> Self {
        Self {
            name: name.into(),
            prefix: prefix.into(),
            start: format!("{special}_START"),
            end: format!("{special}_END"),
            inputs: inputs.to_vec(),
            output,
            gait_allowed: output == Segment::Robot,
            single_input: inputs == [Segment::Grid],
        }
    }
}

/// Ordered set of tasks known to a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRegistry {
    pub tasks: Vec<TaskSpec>,
}

impl Default for TaskRegistry {
    fn default() -> Self {
        use Segment::*;
        Self {
            tasks: vec![
                TaskSpec::new(TEXT_TO_ROBOT, "give robot motion: ", "T2RM", &[Text], Robot),
                TaskSpec::new(TEXT_TO_HUMAN, "give human motion: ", "T2HM", &[Text], Human),
                TaskSpec::new(CAPTION, "give text description: ", "CAP", &[Robot, Human], Text),
                TaskSpec::new(GOAL, "reach goal: ", "GOAL", &[Grid], Robot),
                TaskSpec::new(QA, "give human motion: ", "QA", &[Text], Human),
            ],
        }
    }
}

impl TaskRegistry {
    /// Checks internal consistency and that every delimiter exists in `vocab`.
    pub fn validate(&self, vocab: &UnifiedVocabulary) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        let mut delims = std::collections::BTreeSet::new();
        for t in &self.tasks {
            if !names.insert(&t.name) {
                return Err(Error::Config(format!("duplicate task {:?}", t.name)));
            }
            if t.gait_allowed && t.output != Segment::Robot {
                return Err(Error::Config(format!("task {:?} allows gait without robot output", t.name)));
            }
            if t.inputs.is_empty() {
                return Err(Error::Config(format!("task {:?} has no input segment", t.name)));
            }
            for d in [&t.start, &t.end] {
                vocab.special_id(d)?;
                if !delims.insert(d) {
                    return Err(Error::Config(format!("delimiter {d:?} is used twice")));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Template(format!("unknown task {name:?}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tasks.iter().map(|t| t.name.as_str())
    }

    fn by_start(&self, vocab: &UnifiedVocabulary, id: usize) -> Option<&TaskSpec> {
        let n = vocab.special_name(id)?;
        self.tasks.iter().find(|t| t.start == n)
    }

    fn by_end(&self, vocab: &UnifiedVocabulary, id: usize) -> Option<&TaskSpec> {
        let n = vocab.special_name(id)?;
        self.tasks.iter().find(|t| t.end == n)
    }
}

/// One training example in global token ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub task: String,
    pub input: Vec<usize>,
    pub gait: Option<usize>,
    pub output: Vec<usize>,
}

fn segment_ids(vocab: &UnifiedVocabulary, segment: Segment, local: &[usize]) -> Result<Vec<usize>> {
    local.iter().map(|&l| vocab.to_global(segment, l)).collect()
}

impl InstructionSample {
    pub fn text_to_robot(vocab: &UnifiedVocabulary, text: &str, gait: Option<Gait>, codes: &[usize]) -> Result<Self> {
        Ok(Self {
            task: TEXT_TO_ROBOT.into(),
            input: vocab.encode_text(text)?,
            gait: gait.map(|g| vocab.gait_id(g)).transpose()?,
            output: segment_ids(vocab, Segment::Robot, codes)?,
        })
    }

    pub fn text_to_human(vocab: &UnifiedVocabulary, text: &str, codes: &[usize]) -> Result<Self> {
        Ok(Self {
            task: TEXT_TO_HUMAN.into(),
            input: vocab.encode_text(text)?,
            gait: None,
            output: segment_ids(vocab, Segment::Human, codes)?,
        })
    }

    pub fn question_to_human(vocab: &UnifiedVocabulary, question: &str, codes: &[usize]) -> Result<Self> {
        Ok(Self {
            task: QA.into(),
            input: vocab.encode_text(question)?,
            gait: None,
            output: segment_ids(vocab, Segment::Human, codes)?,
        })
    }

    /// Caption task; `segment` is the motion segment of `codes`.
    pub fn caption(vocab: &UnifiedVocabulary, segment: Segment, codes: &[usize], text: &str) -> Result<Self> {
        Ok(Self {
            task: CAPTION.into(),
            input: segment_ids(vocab, segment, codes)?,
            gait: None,
            output: vocab.encode_text(text)?,
        })
    }

    pub fn goal(vocab: &UnifiedVocabulary, cell: GridCell, gait: Option<Gait>, codes: &[usize]) -> Result<Self> {
        Ok(Self {
            task: GOAL.into(),
            input: vec![vocab.grid_token(cell)?],
            gait: gait.map(|g| vocab.gait_id(g)).transpose()?,
            output: segment_ids(vocab, Segment::Robot, codes)?,
        })
    }
}

fn check_input(vocab: &UnifiedVocabulary, task: &TaskSpec, input: &[usize]) -> Result<()> {
    let Some(&first) = input.first() else {
        return Err(Error::Template(format!("task {:?} has an empty input", task.name)));
    };
    if task.single_input && input.len() != 1 {
        return Err(Error::Template(format!("task {:?} takes exactly one input token", task.name)));
    }
    let seg = vocab
        .segment_of(first)
        .filter(|s| task.inputs.contains(s))
        .ok_or_else(|| Error::Template(format!("input token {first} is not valid for task {:?}", task.name)))?;
    if let Some(&bad) = input.iter().find(|&&id| !vocab.is_in(id, seg)) {
        return Err(Error::Template(format!("input token {bad} is outside the {seg} segment")));
    }
    Ok(())
}

fn check_gait(vocab: &UnifiedVocabulary, task: &TaskSpec, gait: Option<usize>) -> Result<()> {
    match gait {
        None => Ok(()),
        Some(_) if !task.gait_allowed => Err(Error::Template(format!("task {:?} has no gait slot", task.name))),
        Some(g) if !vocab.is_in(g, Segment::Gait) => Err(Error::Template(format!("token {g} is not a gait token"))),
        Some(_) => Ok(()),
    }
}

fn check_output(vocab: &UnifiedVocabulary, task: &TaskSpec, output: &[usize]) -> Result<()> {
    if output.is_empty() {
        return Err(Error::Template(format!("task {:?} has an empty output", task.name)));
    }
    if let Some(&bad) = output.iter().find(|&&id| !vocab.is_in(id, task.output)) {
        return Err(Error::Template(format!(
            "output token {bad} is outside the {} segment of task {:?}",
            task.output, task.name
        )));
    }
    Ok(())
}

/// Prompt ids up to and including the start token (and gait, if given).
pub fn render_prompt(
    registry: &TaskRegistry,
    vocab: &UnifiedVocabulary,
    task: &str,
    input: &[usize],
    gait: Option<usize>,
) -> Result<Vec<usize>> {
    let spec = registry.get(task)?;
    check_input(vocab, spec, input)?;
    check_gait(vocab, spec, gait)?;
    let mut ids = vocab.encode_text(&spec.prefix)?;
    ids.extend_from_slice(input);
    ids.push(vocab.special_id(&spec.start)?);
    ids.extend(gait);
    Ok(ids)
}

pub fn render(registry: &TaskRegistry, vocab: &UnifiedVocabulary, sample: &InstructionSample) -> Result<Vec<usize>> {
    let spec = registry.get(&sample.task)?;
    check_output(vocab, spec, &sample.output)?;
    let mut ids = render_prompt(registry, vocab, &sample.task, &sample.input, sample.gait)?;
    ids.extend_from_slice(&sample.output);
    ids.push(vocab.special_id(&spec.end)?);
    Ok(ids)
}

/// Inverse of [`render`].
pub fn parse(registry: &TaskRegistry, vocab: &UnifiedVocabulary, ids: &[usize]) -> Result<InstructionSample> {
    let starts: Vec<_> = ids
        .iter()
        .enumerate()
        .filter_map(|(i, &id)| registry.by_start(vocab, id).map(|t| (i, t)))
        .collect();
    let ends: Vec<_> = ids
        .iter()
        .enumerate()
        .filter_map(|(i, &id)| registry.by_end(vocab, id).map(|t| (i, t)))
        .collect();
    let (s, spec) = match starts.as_slice() {
        [one] => *one,
        [] => return Err(Error::Template("missing start token".into())),
        _ => return Err(Error::Template("duplicated start token".into())),
    };
    let e = match ends.as_slice() {
        [] => return Err(Error::Template("unterminated response".into())),
        [(e, t)] if t.name == spec.name && *e > s => *e,
        [(e, _)] if *e < s => return Err(Error::Template("end token precedes start token".into())),
        [_] => return Err(Error::Template("end token does not match the task start token".into())),
        _ => return Err(Error::Template("duplicated end token".into())),
    };
    let prefix = vocab.encode_text(&spec.prefix)?;
    if !ids[..s].starts_with(&prefix) {
        return Err(Error::Template(format!("missing prefix {:?} for task {:?}", spec.prefix, spec.name)));
    }
    let input = ids[prefix.len()..s].to_vec();
    let mut body = &ids[s + 1..e];
    let gait = match body.first() {
        Some(&g) if vocab.is_in(g, Segment::Gait) => {
            body = &body[1..];
            Some(g)
        }
        _ => None,
    };
    check_input(vocab, spec, &input)?;
    check_gait(vocab, spec, gait)?;
    check_output(vocab, spec, body)?;
    Ok(InstructionSample {
        task: spec.name.clone(),
        input,
        gait,
        output: body.to_vec(),
    })
}

/// A rendered sequence and the index of its start token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedSample {
    pub task: String,
    pub ids: Vec<usize>,
    pub response_start: usize,
}

pub fn render_sample(registry: &TaskRegistry, vocab: &UnifiedVocabulary, sample: &InstructionSample) -> Result<RenderedSample> {
    let spec = registry.get(&sample.task)?;
    let ids = render(registry, vocab, sample)?;
    let response_start = vocab.encode_text(&spec.prefix)?.len() + sample.input.len();
    Ok(RenderedSample {
        task: sample.task.clone(),
        ids,
        response_start,
    })
}

/// Exact per-task counts for `n` draws by largest remainder.
fn allocate(weights: &BTreeMap<String, f64>, n: usize) -> Result<Vec<(String, usize)>> {
    let total: f64 = weights.values().sum();
    if weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) || !(total > 0.0) {
        return Err(Error::Config("task weights must be non-negative with a positive sum".into()));
    }
    let mut alloc: Vec<(String, usize, f64)> = weights
        .iter()
        .map(|(k, w)| {
            let exact = w / total * n as f64;
            (k.clone(), exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = alloc.iter().map(|a| a.1).sum();
    let mut order: Vec<usize> = (0..alloc.len()).collect();
    order.sort_by(|&a, &b| alloc[b].2.total_cmp(&alloc[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(n - assigned) {
        alloc[i].1 += 1;
    }
    Ok(alloc.into_iter().map(|(k, c, _)| (k, c)).collect())
}

/// Deterministic multi-task mixture of `n` rendered sequences.
///
/// Each task receives its weight's share of `n` (largest remainder); samples
/// are drawn without replacement from a reshuffled pool per pass.
pub fn build_training_set(
    registry: &TaskRegistry,
    vocab: &UnifiedVocabulary,
    pools: &BTreeMap<String, Vec<InstructionSample>>,
    weights: &BTreeMap<String, f64>,
    n: usize,
    seed: u64,
) -> Result<Vec<RenderedSample>> {
    if weights.is_empty() {
        return Err(Error::Config("at least one task is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(n);
    let mut draws: BTreeMap<&str, (Vec<usize>, usize)> = BTreeMap::new();
    for (task, count) in allocate(weights, n)? {
        registry.get(&task)?;
        if count == 0 {
            continue;
        }
        let pool = pools
            .get(&task)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::Data(format!("no samples for requested task {task:?}")))?;
        labels.extend(std::iter::repeat(task.clone()).take(count));
        draws.insert(registry.get(&task)?.name.as_str(), ((0..pool.len()).collect(), pool.len()));
    }
    labels.shuffle(&mut rng);
    let mut out = Vec::with_capacity(n);
    for task in labels {
        let (perm, cursor) = draws.get_mut(task.as_str()).expect("allocated task");
        if *cursor == perm.len() {
            perm.shuffle(&mut rng);
            *cursor = 0;
        }
        let sample = &pools[&task][perm[*cursor]];
        *cursor += 1;
        if sample.task != task {
            return Err(Error::Data(format!("pool {task:?} contains a {:?} sample", sample.task)));
        }
        out.push(render_sample(registry, vocab, sample)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{build_vocabulary, VocabConfig};

    fn setup() -> (TaskRegistry, UnifiedVocabulary) {
        let v = build_vocabulary(&VocabConfig::default()).unwrap();
        let r = TaskRegistry::default();
        r.validate(&v).unwrap();
        (r, v)
    }

    #[test]
    fn text_to_robot_order() {
        let (r, v) = setup();
        let s = InstructionSample::text_to_robot(&v, "walk forward", Some(Gait::Trot), &[3, 9]).unwrap();
        let ids = render(&r, &v, &s).unwrap();
        let p = "give robot motion: walk forward".len();
        assert_eq!(v.decode_text(&ids[..p]).unwrap(), "give robot motion: walk forward");
        assert_eq!(
            &ids[p..],
            &[
                v.special_id("T2RM_START").unwrap(),
                v.gait_id(Gait::Trot).unwrap(),
                257 + 3,
                257 + 9,
                v.special_id("T2RM_END").unwrap()
            ]
        );
        assert_eq!(parse(&r, &v, &ids).unwrap(), s);
    }

    #[test]
    fn caption_has_no_gait_and_rejects_one() {
        let (r, v) = setup();
        let mut s = InstructionSample::caption(&v, Segment::Human, &[1, 2], "a person jumps").unwrap();
        let ids = render(&r, &v, &s).unwrap();
        assert!(!ids.iter().any(|&id| v.is_in(id, Segment::Gait)));
        s.gait = Some(v.gait_id(Gait::Bound).unwrap());
        assert!(render(&r, &v, &s).is_err());
    }

    #[test]
    fn goal_round_trip() {
        let (r, v) = setup();
        let s = InstructionSample::goal(&v, GridCell { col: 3, row: 20 }, None, &[0]).unwrap();
        let back = parse(&r, &v, &render(&r, &v, &s).unwrap()).unwrap();
        assert_eq!(back.task, GOAL);
        assert_eq!(back.input.len(), 1);
        assert_eq!(v.token_cell(back.input[0]).unwrap(), GridCell { col: 3, row: 20 });
    }

    #[test]
    fn parse_errors() {
        let (r, v) = setup();
        let s = InstructionSample::text_to_human(&v, "a person jumps", &[5]).unwrap();
        let ids = render(&r, &v, &s).unwrap();
        let err = parse(&r, &v, &ids[..ids.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("unterminated response"));
        let mut dup = ids.clone();
        dup.insert(3, v.special_id("T2HM_START").unwrap());
        assert!(parse(&r, &v, &dup).is_err());
        let mut wrong = ids.clone();
        *wrong.last_mut().unwrap() = v.special_id("QA_END").unwrap();
        assert!(parse(&r, &v, &wrong).is_err());
        let mut robot_in_human = ids;
        let n = robot_in_human.len();
        robot_in_human[n - 2] = 257;
        assert!(parse(&r, &v, &robot_in_human).is_err());
    }

    #[test]
    fn segment_mismatch_is_rejected() {
        let (r, v) = setup();
        let s = InstructionSample {
            task: TEXT_TO_ROBOT.into(),
            input: v.encode_text("x").unwrap(),
            gait: None,
            output: vec![v.to_global(Segment::Human, 0).unwrap()],
        };
        assert!(render(&r, &v, &s).is_err());
    }

    #[test]
    fn mixing_counts_and_determinism() {
        let (r, v) = setup();
        let mut pools = BTreeMap::new();
        pools.insert(
            TEXT_TO_ROBOT.to_string(),
            (0..7).map(|i| InstructionSample::text_to_robot(&v, "walk", None, &[i]).unwrap()).collect(),
        );
        pools.insert(
            CAPTION.to_string(),
            (0..5).map(|i| InstructionSample::caption(&v, Segment::Robot, &[i], "walk").unwrap()).collect(),
        );
        let w: BTreeMap<_, _> = [(TEXT_TO_ROBOT.to_string(), 0.5), (CAPTION.to_string(), 0.5)].into();
        let a = build_training_set(&r, &v, &pools, &w, 10_000, 7).unwrap();
        let n_t2rm = a.iter().filter(|s| s.task == TEXT_TO_ROBOT).count();
        assert!((4900..=5100).contains(&n_t2rm));
        assert_eq!(a, build_training_set(&r, &v, &pools, &w, 10_000, 7).unwrap());
        let only: BTreeMap<_, _> = [(TEXT_TO_ROBOT.to_string(), 1.0)].into();
        assert!(build_training_set(&r, &v, &pools, &only, 100, 0).unwrap().iter().all(|s| s.task == TEXT_TO_ROBOT));
        let missing: BTreeMap<_, _> = [(GOAL.to_string(), 1.0)].into();
        assert!(build_training_set(&r, &v, &pools, &missing, 10, 0).is_err());
    }
}
