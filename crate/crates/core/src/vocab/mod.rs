//! Unified token vocabulary: text bytes, per-embodiment motion codes,
//! task delimiters, ground-plane cells and gait selectors share one id space.

mod grid;

use serde::{Deserialize, Serialize};

pub use grid::{GridCell, GridSpec};

use crate::error::{Error, Result};
use crate::motion::Gait;

/// Vocabulary segments in their fixed global order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Text,
    Robot,
    Human,
    Special,
    Grid,
    Gait,
}

impl Segment {
    pub const ALL: [Segment; 6] = [
        Segment::Text,
        Segment::Robot,
        Segment::Human,
        Segment::Special,
        Segment::Grid,
        Segment::Gait,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Segment::Text => "text",
            Segment::Robot => "robot",
            Segment::Human => "human",
            Segment::Special => "special",
            Segment::Grid => "grid",
            Segment::Gait => "gait",
        }
    }
}

impl std::fmt::Display for Segment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub segment: Segment,
    pub size: usize,
    pub offset: usize,
}

/// Byte-level text segment: 256 byte values followed by end-of-text.
pub const BYTE_TEXT_SIZE: usize = 257;

/// One start/end pair per task, in registry order.
pub fn default_special_names() -> Vec<String> {
    ["T2RM", "T2HM", "CAP", "GOAL", "QA"]
        .iter()
        .flat_map(|t| [format!("{t}_START"), format!("{t}_END")])
        .collect()
}

pub fn default_gait_names() -> Vec<String> {
    Gait::ALL.iter().map(|g| g.token_name().to_string()).collect()
}

/// Sizes and names from which a [`UnifiedVocabulary`] is laid out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    pub text_size: usize,
    pub robot_codebook: usize,
    pub human_codebook: usize,
    pub grid: GridSpec,
    pub specials: Vec<String>,
    pub gaits: Vec<String>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            text_size: BYTE_TEXT_SIZE,
            robot_codebook: 128,
            human_codebook: 512,
            grid: GridSpec::default(),
            specials: default_special_names(),
            gaits: default_gait_names(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabManifest")]
pub struct UnifiedVocabulary {
    segments: Vec<SegmentInfo>,
    grid: GridSpec,
    specials: Vec<String>,
    gaits: Vec<String>,
}

#[derive(Deserialize)]
struct VocabManifest {
    segments: Vec<SegmentInfo>,
    grid: GridSpec,
    specials: Vec<String>,
    gaits: Vec<String>,
}

impl TryFrom<VocabManifest> for UnifiedVocabulary {
    type Error = Error;

    fn try_from(m: VocabManifest) -> Result<Self> {
        let size = |s: Segment| m.segments.iter().find(|i| i.segment == s).map(|i| i.size).unwrap_or(0);
        let rebuilt = build_vocabulary(&VocabConfig {
            text_size: size(Segment::Text),
            robot_codebook: size(Segment::Robot),
            human_codebook: size(Segment::Human),
            grid: m.grid,
            specials: m.specials,
            gaits: m.gaits,
        })?;
        if rebuilt.segments != m.segments {
            return Err(Error::Mismatch("vocabulary manifest segment layout is inconsistent".into()));
        }
        Ok(rebuilt)
    }
}

/// Lays out segments contiguously in [`Segment::ALL`] order.
pub fn build_vocabulary(cfg: &VocabConfig) -> Result<UnifiedVocabulary> {
    cfg.grid.validate()?;
    let mut names = std::collections::BTreeSet::new();
    for n in cfg.specials.iter().chain(&cfg.gaits) {
        if !names.insert(n.as_str()) {
            return Err(Error::Config(format!("duplicate token name {n:?}")));
        }
    }
    let sizes = [
        cfg.text_size,
        cfg.robot_codebook,
        cfg.human_codebook,
        cfg.specials.len(),
        cfg.grid.num_cells(),
        cfg.gaits.len(),
    ];
    let mut offset = 0;
    let mut segments = Vec::with_capacity(sizes.len());
    for (segment, size) in Segment::ALL.into_iter().zip(sizes) {
        if size == 0 {
            return Err(Error::Config(format!("segment {segment} must have at least one token")));
        }
        segments.push(SegmentInfo { segment, size, offset });
        offset += size;
    }
    Ok(UnifiedVocabulary {
        segments,
        grid: cfg.grid,
        specials: cfg.specials.clone(),
        gaits: cfg.gaits.clone(),
    })
}

impl UnifiedVocabulary {
    pub fn segments(&self) -> &[SegmentInfo] {
        &self.segments
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn special_names(&self) -> &[String] {
        &self.specials
    }

    pub fn gait_names(&self) -> &[String] {
        &self.gaits
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.size)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn info(&self, segment: Segment) -> SegmentInfo {
        self.segments[segment as usize]
    }

    pub fn offset(&self, segment: Segment) -> usize {
        self.info(segment).offset
    }

    pub fn size(&self, segment: Segment) -> usize {
        self.info(segment).size
    }

    /// Global id range of a segment.
    pub fn range(&self, segment: Segment) -> std::ops::Range<usize> {
        let i = self.info(segment);
        i.offset..i.offset + i.size
    }

    pub fn to_global(&self, segment: Segment, local: usize) -> Result<usize> {
        let i = self.info(segment);
        if local >= i.size {
            return Err(Error::TokenRange {
                id: local,
                segment: segment.name().into(),
            });
        }
        Ok(i.offset + local)
    }

    pub fn from_global(&self, id: usize) -> Result<(Segment, usize)> {
        let pos = self.segments.partition_point(|s| s.offset + s.size <= id);
        match self.segments.get(pos) {
            Some(s) => Ok((s.segment, id - s.offset)),
            None => Err(Error::TokenRange {
                id,
                segment: "vocabulary".into(),
            }),
        }
    }

    pub fn segment_of(&self, id: usize) -> Option<Segment> {
        self.from_global(id).ok().map(|(s, _)| s)
    }

    pub fn is_in(&self, id: usize, segment: Segment) -> bool {
        self.range(segment).contains(&id)
    }

    /// Local id of a global id known to lie in `segment`.
    pub fn local(&self, id: usize, segment: Segment) -> Result<usize> {
        if !self.is_in(id, segment) {
            return Err(Error::TokenRange {
                id,
                segment: segment.name().into(),
            });
        }
        Ok(id - self.offset(segment))
    }

    pub fn special_id(&self, name: &str) -> Result<usize> {
        let i = self
            .specials
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("unknown special token {name:?}")))?;
        Ok(self.offset(Segment::Special) + i)
    }

    pub fn special_name(&self, id: usize) -> Option<&str> {
        let local = self.local(id, Segment::Special).ok()?;
        Some(&self.specials[local])
    }

    pub fn gait_id(&self, gait: Gait) -> Result<usize> {
        let i = self
            .gaits
            .iter()
            .position(|n| n == gait.token_name())
            .ok_or_else(|| Error::Config(format!("gait {gait:?} not in vocabulary")))?;
        Ok(self.offset(Segment::Gait) + i)
    }

    pub fn gait_of(&self, id: usize) -> Result<Gait> {
        let local = self.local(id, Segment::Gait)?;
        Gait::from_token_name(&self.gaits[local])
    }

    pub fn end_of_text(&self) -> usize {
        self.offset(Segment::Text) + self.size(Segment::Text) - 1
    }

    pub fn cell_to_token(&self, x: f64, z: f64) -> Result<usize> {
        let cell = self.grid.cell_at(x, z)?;
        self.grid_token(cell)
    }

    pub fn grid_token(&self, cell: GridCell) -> Result<usize> {
        self.to_global(Segment::Grid, self.grid.index(cell)?)
    }

    pub fn token_cell(&self, id: usize) -> Result<GridCell> {
        self.grid.cell(self.local(id, Segment::Grid)?)
    }

    pub fn token_to_cell_center(&self, id: usize) -> Result<(f64, f64)> {
        Ok(self.grid.center(self.token_cell(id)?))
    }

    /// UTF-8 bytes mapped into the text segment.
    pub fn encode_text(&self, s: &str) -> Result<Vec<usize>> {
        if self.size(Segment::Text) < BYTE_TEXT_SIZE {
            return Err(Error::Config("text segment is too small for byte-level text".into()));
        }
        let off = self.offset(Segment::Text);
        Ok(s.bytes().map(|b| off + b as usize).collect())
    }

    fn text_bytes(&self, ids: &[usize]) -> Result<Vec<u8>> {
        ids.iter()
            .map(|&id| match self.local(id, Segment::Text) {
                Ok(l) if l < 256 => Ok(l as u8),
                _ => Err(Error::TokenRange {
                    id,
                    segment: "text bytes".into(),
                }),
            })
            .collect()
    }

    pub fn decode_text(&self, ids: &[usize]) -> Result<String> {
        String::from_utf8(self.text_bytes(ids)?).map_err(|e| Error::Data(format!("decoded text is not UTF-8: {e}")))
    }

    /// Like [`decode_text`](Self::decode_text) but replaces invalid UTF-8.
    pub fn decode_text_lossy(&self, ids: &[usize]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.text_bytes(ids)?).into_owned())
    }
}
