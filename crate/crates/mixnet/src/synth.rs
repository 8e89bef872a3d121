//! Deterministic generator of synthetic "acoustic" frame data: a broad-class
//! / sub-class hierarchy, Gaussian emissions around seeded sub-class means,
//! and first-order Markov temporal structure with extra transition mass
//! inside each broad class.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FrameSequence;
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Distance between broad-class centroids at overlap 0.
const BROAD_SEPARATION: f64 = 8.0;
/// Fraction of the non-self transition mass that stays within the broad class.
const WITHIN_BROAD_MASS: f64 = 0.8;

const SPLIT_TAGS: [u64; 3] = [0x7261_696e, 0x6376_5f31, 0x7465_7374];
const MEANS_TAG: u64 = 0x6d65_616e;

/// Broad classes (voiced/unvoiced/silence analogs) and their sub-classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHierarchy {
    subclass_to_broad: Vec<usize>,
    broad_count: usize,
}

impl ClassHierarchy {
    pub fn new(subclass_counts: &[usize]) -> Result<Self> {
        if subclass_counts.is_empty() || subclass_counts.iter().any(|&c| c == 0) {
            return Err(Error::Validation(
                "every broad class needs at least one subclass".into(),
            ));
        }
        let mut subclass_to_broad = Vec::new();
        for (broad, &count) in subclass_counts.iter().enumerate() {
            subclass_to_broad.extend(std::iter::repeat(broad).take(count));
        }
        Ok(ClassHierarchy {
            subclass_to_broad,
            broad_count: subclass_counts.len(),
        })
    }

    /// 17 voiced / 27 unvoiced / 1 silence sub-classes.
    pub fn default_three_class() -> Self {
        ClassHierarchy::new(&[17, 27, 1]).unwrap()
    }

    pub fn subclass_count(&self) -> usize {
        self.subclass_to_broad.len()
    }

    pub fn broad_count(&self) -> usize {
        self.broad_count
    }

    pub fn broad_of(&self, subclass: usize) -> Result<usize> {
        self.subclass_to_broad.get(subclass).copied().ok_or_else(|| {
            Error::Validation(format!("subclass {subclass} has no broad class"))
        })
    }

    pub fn map(&self) -> &[usize] {
        &self.subclass_to_broad
    }

    pub fn subclasses_of(&self, broad: usize) -> Vec<usize> {
        (0..self.subclass_count())
            .filter(|&s| self.subclass_to_broad[s] == broad)
            .collect()
    }
}

/// Knobs of the synthetic task. `overlap` scales the inter-broad-class
/// centroid distances down by (1 − overlap).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub subclass_spread: f64,
    pub within_scale: f64,
    pub overlap: f64,
    pub self_transition: f64,
    pub frames_per_utterance: usize,
    pub train_utterances: usize,
    pub cv_utterances: usize,
    pub test_utterances: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 26,
            subclass_spread: 1.8,
            within_scale: 0.7,
            overlap: 0.5,
            self_transition: 0.35,
            frames_per_utterance: 150,
            train_utterances: 300,
            cv_utterances: 40,
            test_utterances: 40,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Validation(format!(
                "overlap must lie in [0,1], got {}",
                self.overlap
            )));
        }
        if !(0.0..1.0).contains(&self.self_transition) {
            return Err(Error::Validation(format!(
                "self-transition must lie in [0,1), got {}",
                self.self_transition
            )));
        }
        if self.dim == 0
            || self.frames_per_utterance == 0
            || self.train_utterances == 0
            || self.cv_utterances == 0
            || self.test_utterances == 0
        {
            return Err(Error::Validation("counts must be >= 1".into()));
        }
        if self.subclass_spread < 0.0 || self.within_scale < 0.0 {
            return Err(Error::Validation("scales must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A labeled split: utterances with globally unique IDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDataset {
    pub dim: usize,
    pub hierarchy: ClassHierarchy,
    pub utterance_ids: Vec<u64>,
    pub utterances: Vec<FrameSequence>,
}

impl FrameDataset {
    pub fn frame_count(&self) -> usize {
        self.utterances.iter().map(FrameSequence::len).sum()
    }

    pub fn frames(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.utterances.iter().flat_map(|u| u.frames.iter())
    }

    pub fn subclass_labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.utterances
            .iter()
            .flat_map(|u| u.subclass_labels.iter().copied())
    }

    pub fn broad_labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.utterances
            .iter()
            .flat_map(|u| u.broadclass_labels.iter().copied())
    }
}

/// Deterministic sub-class mean lattice: broad centroids on scaled axes,
/// sub-class means drawn on spheres around them. Independent of the split.
pub fn subclass_means(config: &SynthConfig, hierarchy: &ClassHierarchy) -> Vec<Vec<f64>> {
    let mut rng = Rng::substream(config.seed, MEANS_TAG);
    let scale = BROAD_SEPARATION * (1.0 - config.overlap);
    let mut means = Vec::with_capacity(hierarchy.subclass_count());
    for s in 0..hierarchy.subclass_count() {
        let broad = hierarchy.broad_of(s).unwrap();
        let mut m = vec![0.0; config.dim];
        if broad < config.dim {
            m[broad] = scale;
        }
        // direction on the unit sphere
        let mut u: Vec<f64> = (0..config.dim).map(|_| rng.standard_normal()).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for (mi, ui) in m.iter_mut().zip(&mut u) {
            *mi += config.subclass_spread * *ui / norm;
        }
        means.push(m);
    }
    means
}

/// Row-stochastic sub-class transition matrix: `self_transition` mass on the
/// diagonal, and of the rest, most stays inside the broad class.
pub fn transition_matrix(config: &SynthConfig, hierarchy: &ClassHierarchy) -> Matrix {
    let n = hierarchy.subclass_count();
    let mut p = Matrix::zeros(n, n);
    for s in 0..n {
        let broad = hierarchy.broad_of(s).unwrap();
        let siblings: Vec<usize> = hierarchy
            .subclasses_of(broad)
            .into_iter()
            .filter(|&t| t != s)
            .collect();
        let others: Vec<usize> = (0..n)
            .filter(|&t| hierarchy.broad_of(t).unwrap() != broad)
            .collect();
        let rest = 1.0 - config.self_transition;
        let mut self_mass = config.self_transition;
        let within = rest * WITHIN_BROAD_MASS;
        let across = rest - within;
        if siblings.is_empty() {
            self_mass += within;
        } else {
            for &t in &siblings {
                p.set(s, t, within / siblings.len() as f64);
            }
        }
        if others.is_empty() {
            self_mass += across;
        } else {
            for &t in &others {
                p.set(s, t, across / others.len() as f64);
            }
        }
        p.set(s, s, self_mass);
    }
    p
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
pub fn stationary_distribution(p: &Matrix) -> Vec<f64> {
    let n = p.rows();
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let mut next = vec![0.0; n];
        for s in 0..n {
            let vs = v[s];
            for t in 0..n {
                next[t] += vs * p.get(s, t);
            }
        }
        let diff: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if diff < 1e-14 {
            break;
        }
    }
    v
}

fn sample_categorical(weights: &[f64], rng: &mut Rng) -> usize {
    let mut u = rng.uniform();
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn generate_split(
    config: &SynthConfig,
    hierarchy: &ClassHierarchy,
    means: &[Vec<f64>],
    transition: &Matrix,
    stationary: &[f64],
    utterance_count: usize,
    first_id: u64,
    rng: &mut Rng,
) -> FrameDataset {
    let mut utterances = Vec::with_capacity(utterance_count);
    let mut utterance_ids = Vec::with_capacity(utterance_count);
    for u in 0..utterance_count {
        let mut frames = Vec::with_capacity(config.frames_per_utterance);
        let mut subclass_labels = Vec::with_capacity(config.frames_per_utterance);
        let mut broadclass_labels = Vec::with_capacity(config.frames_per_utterance);
        let mut state = sample_categorical(stationary, rng);
        for _ in 0..config.frames_per_utterance {
            let frame: Vec<f64> = means[state]
                .iter()
                .map(|m| m + config.within_scale * rng.standard_normal())
                .collect();
            frames.push(frame);
            subclass_labels.push(state);
            broadclass_labels.push(hierarchy.broad_of(state).unwrap());
            let row: Vec<f64> = (0..transition.cols()).map(|t| transition.get(state, t)).collect();
            state = sample_categorical(&row, rng);
        }
        utterances.push(FrameSequence {
            frames,
            subclass_labels,
            broadclass_labels,
        });
        utterance_ids.push(first_id + u as u64);
    }
    FrameDataset {
        dim: config.dim,
        hierarchy: hierarchy.clone(),
        utterance_ids,
        utterances,
    }
}

/// Generates train/cv/test splits, disjoint by utterance, each from its own
/// RNG substream of the seed. The same config yields byte-identical output.
pub fn generate(
    config: &SynthConfig,
    hierarchy: &ClassHierarchy,
) -> Result<(FrameDataset, FrameDataset, FrameDataset)> {
    config.validate()?;
    let means = subclass_means(config, hierarchy);
    let transition = transition_matrix(config, hierarchy);
    let stationary = stationary_distribution(&transition);
    let counts = [
        config.train_utterances,
        config.cv_utterances,
        config.test_utterances,
    ];
    let mut first_id = 0u64;
    let mut splits = Vec::with_capacity(3);
    for (i, &count) in counts.iter().enumerate() {
        let mut rng = Rng::substream(config.seed, SPLIT_TAGS[i]);
        splits.push(generate_split(
            config, hierarchy, &means, &transition, &stationary, count, first_id, &mut rng,
        ));
        first_id += count as u64;
    }
    let test = splits.pop().unwrap();
    let cv = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok((train, cv, test))
}

/// Label-wise application of the subclass → broad map.
pub fn derive_broad_labels(seq: &FrameSequence, hierarchy: &ClassHierarchy) -> Result<Vec<usize>> {
    seq.subclass_labels
        .iter()
        .map(|&s| hierarchy.broad_of(s))
        .collect()
}

/// Accuracy of the classifier that assigns each frame to the nearest
/// configured sub-class mean. `broad` maps predictions and references
/// through the hierarchy first.
pub fn nearest_mean_accuracy(
    dataset: &FrameDataset,
    means: &[Vec<f64>],
    broad: bool,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for utt in &dataset.utterances {
        for (frame, &label) in utt.frames.iter().zip(&utt.subclass_labels) {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (s, m) in means.iter().enumerate() {
                let d: f64 = frame.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best_d {
                    best_d = d;
                    best = s;
                }
            }
            let (pred, refl) = if broad {
                (
                    dataset.hierarchy.broad_of(best)?,
                    dataset.hierarchy.broad_of(label)?,
                )
            } else {
                (best, label)
            };
            if pred == refl {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

// ---------------------------------------------------------------------------
// MIXNET-FRAMES v1 file format
// ---------------------------------------------------------------------------

const FRAMES_MAGIC: &str = "MIXNET-FRAMES v1";

#[derive(Serialize, Deserialize)]
struct FramesManifest {
    dim: usize,
    utterance_ids: Vec<u64>,
    frames_per_utterance: Vec<usize>,
    subclass_counts: Vec<usize>,
}

fn hierarchy_counts(h: &ClassHierarchy) -> Vec<usize> {
    (0..h.broad_count()).map(|b| h.subclasses_of(b).len()).collect()
}

impl FrameDataset {
    /// Writes the dataset: magic line, JSON manifest line, frames as
    /// little-endian f64 in utterance order, then sub-class and broad labels
    /// as little-endian i32.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let manifest = FramesManifest {
            dim: self.dim,
            utterance_ids: self.utterance_ids.clone(),
            frames_per_utterance: self.utterances.iter().map(FrameSequence::len).collect(),
            subclass_counts: hierarchy_counts(&self.hierarchy),
        };
        writeln!(w, "{FRAMES_MAGIC}")?;
        serde_json::to_writer(&mut *w, &manifest)?;
        writeln!(w)?;
        for utt in &self.utterances {
            for frame in &utt.frames {
                for &v in frame {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        for utt in &self.utterances {
            for &l in &utt.subclass_labels {
                w.write_all(&(l as i32).to_le_bytes())?;
            }
        }
        for utt in &self.utterances {
            for &l in &utt.broadclass_labels {
                w.write_all(&(l as i32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != FRAMES_MAGIC {
            return Err(Error::Format(format!(
                "expected `{FRAMES_MAGIC}` header, got `{}`",
                line.trim_end()
            )));
        }
        line.clear();
        reader.read_line(&mut line)?;
        let manifest: FramesManifest = serde_json::from_str(line.trim_end())?;
        let hierarchy = ClassHierarchy::new(&manifest.subclass_counts)?;
        if manifest.utterance_ids.len() != manifest.frames_per_utterance.len() {
            return Err(Error::Format("manifest count mismatch".into()));
        }
        let mut utterances = Vec::with_capacity(manifest.frames_per_utterance.len());
        let mut f64_buf = [0u8; 8];
        for &count in &manifest.frames_per_utterance {
            let mut frames = Vec::with_capacity(count);
            for _ in 0..count {
                let mut frame = Vec::with_capacity(manifest.dim);
                for _ in 0..manifest.dim {
                    reader.read_exact(&mut f64_buf)?;
                    frame.push(f64::from_le_bytes(f64_buf));
                }
                frames.push(frame);
            }
            utterances.push(FrameSequence {
                frames,
                subclass_labels: Vec::new(),
                broadclass_labels: Vec::new(),
            });
        }
        let mut i32_buf = [0u8; 4];
        for utt in &mut utterances {
            for _ in 0..utt.frames.len() {
                reader.read_exact(&mut i32_buf)?;
                utt.subclass_labels.push(i32::from_le_bytes(i32_buf) as usize);
            }
        }
        for utt in &mut utterances {
            for _ in 0..utt.frames.len() {
                reader.read_exact(&mut i32_buf)?;
                utt.broadclass_labels.push(i32::from_le_bytes(i32_buf) as usize);
            }
        }
        Ok(FrameDataset {
            dim: manifest.dim,
            hierarchy,
            utterance_ids: manifest.utterance_ids,
            utterances,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::fs::File::open(path)?;
        FrameDataset::read_from(&mut r)
    }
}
