//! Class-separation analysis: Fisher ratios of tapped layer activations,
//! PCA scatter projections, and serializable reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{fisher_criterion, window_at};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::synth::FrameDataset;
use crate::training::{prepare_split, Model};

/// Fisher criterion J = trace(S_w⁺ S_b); a larger value means the classes
/// are further apart relative to their spread.
pub fn fisher_ratio(vectors: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    fisher_criterion(vectors, labels)
}

/// Activations of one network stage for every frame of a split, with labels.
/// Tap 0 is the network input (after the feature pipeline); tap `i` is the
/// output of layer `i − 1`.
pub struct TappedActivations {
    pub vectors: Vec<Vec<f64>>,
    pub subclass_labels: Vec<usize>,
    pub broad_labels: Vec<usize>,
}

pub fn tap_layer(model: &Model, ds: &FrameDataset, tap: usize) -> Result<TappedActivations> {
    if tap > model.stack.layers().len() {
        return Err(Error::Validation(format!(
            "tap {tap} exceeds stack depth {}",
            model.stack.layers().len()
        )));
    }
    let contextual = model.stack.starts_contextual();
    if contextual && model.aux.is_none() && tap > 0 {
        return Err(Error::Validation("model has no auxiliary classifier".into()));
    }
    let radius = if contextual {
        model.config.context_radius
    } else {
        0
    };
    let prepared = prepare_split(&model.pipeline, ds)?;
    let mut vectors = Vec::new();
    let mut subclass_labels = Vec::new();
    let mut broad_labels = Vec::new();
    for utt in &prepared {
        for t in 0..utt.len() {
            let v = if tap == 0 {
                utt.frames[t].clone()
            } else {
                let gate = match (&model.aux, contextual) {
                    (Some(aux), true) => Some(aux.posterior(&utt.frames[t])?),
                    _ => None,
                };
                let window = window_at(&utt.frames, t, radius);
                let mut acts = model.stack.activations(&window, gate.as_ref())?;
                acts.swap_remove(tap - 1)
            };
            vectors.push(v);
            subclass_labels.push(utt.subclass_labels[t]);
            broad_labels.push(utt.broadclass_labels[t]);
        }
    }
    Ok(TappedActivations {
        vectors,
        subclass_labels,
        broad_labels,
    })
}

/// PCA of a vector set: leading principal directions (rows, each with its
/// first nonzero component positive), the fraction of variance each
/// explains, and the centered projections. Zero-variance input yields an
/// all-zero projection rather than an error.
pub struct PcaProjection {
    pub components: Matrix,
    pub explained: Vec<f64>,
    pub projected: Vec<Vec<f64>>,
}

pub fn pca_project(vectors: &[Vec<f64>], dims: usize) -> Result<PcaProjection> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::Validation("cannot run PCA on no vectors".into()));
    }
    let d = vectors[0].len();
    if dims == 0 || dims > d {
        return Err(Error::Validation(format!(
            "projection dims {dims} must lie in 1..={d}"
        )));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        if v.len() != d {
            return Err(Error::Shape {
                context: "pca_project",
                expected: d,
                got: v.len(),
            });
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = Matrix::zeros(d, d);
    for v in vectors {
        let centered: Vec<f64> = v.iter().zip(&mean).map(|(x, m)| x - m).collect();
        cov.add_scaled_outer(&centered, &centered, 1.0 / n as f64);
    }
    let total: f64 = (0..d).map(|i| cov.get(i, i)).sum();
    if total <= 0.0 {
        return Ok(PcaProjection {
            components: Matrix::zeros(dims, d),
            explained: vec![0.0; dims],
            projected: vec![vec![0.0; dims]; n],
        });
    }
    let eig = symmetric_eigen(&cov)?;
    let mut components = Matrix::zeros(dims, d);
    let mut explained = Vec::with_capacity(dims);
    for k in 0..dims {
        for c in 0..d {
            components.set(k, c, eig.vectors.get(k, c));
        }
        explained.push(eig.values[k].max(0.0) / total);
    }
    let projected = vectors
        .iter()
        .map(|v| {
            let centered: Vec<f64> = v.iter().zip(&mean).map(|(x, m)| x - m).collect();
            components.apply(&centered)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PcaProjection {
        components,
        explained,
        projected,
    })
}

/// Class-separation summary of one tapped network stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub tap: usize,
    pub frames: usize,
    pub dim: usize,
    pub fisher_broad: f64,
    /// Absent when some sub-class has fewer than two frames in the split.
    pub fisher_subclass: Option<f64>,
    /// Variance fraction carried by each scatter axis.
    pub explained_variance: Vec<f64>,
}

/// Measures class separation at a tap and projects the activations to
/// `dims` axes for scatter plotting.
pub fn separation_analysis(
    model: &Model,
    ds: &FrameDataset,
    tap: usize,
    dims: usize,
) -> Result<(SeparationReport, TappedActivations, PcaProjection)> {
    let acts = tap_layer(model, ds, tap)?;
    let pca = pca_project(&acts.vectors, dims)?;
    let mut counts = std::collections::HashMap::new();
    for &l in &acts.subclass_labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let fisher_subclass = if counts.len() >= 2 && counts.values().all(|&c| c >= 2) {
        Some(fisher_ratio(&acts.vectors, &acts.subclass_labels)?)
    } else {
        None
    };
    let report = SeparationReport {
        tap,
        frames: acts.vectors.len(),
        dim: acts.vectors.first().map(Vec::len).unwrap_or(0),
        fisher_broad: fisher_ratio(&acts.vectors, &acts.broad_labels)?,
        fisher_subclass,
        explained_variance: pca.explained.clone(),
    };
    Ok((report, acts, pca))
}

/// Writes scatter rows as `x,y,broad_label,subclass_label` CSV.
pub fn write_scatter_csv(
    w: &mut impl Write,
    pca: &PcaProjection,
    acts: &TappedActivations,
) -> Result<()> {
    if pca.projected.len() != acts.broad_labels.len() {
        return Err(Error::Validation(
            "projection and labels disagree on frame count".into(),
        ));
    }
    writeln!(w, "x,y,broad_label,subclass_label")?;
    for ((p, &b), &s) in pca
        .projected
        .iter()
        .zip(&acts.broad_labels)
        .zip(&acts.subclass_labels)
    {
        let x = p.first().copied().unwrap_or(0.0);
        let y = p.get(1).copied().unwrap_or(0.0);
        writeln!(w, "{x},{y},{b},{s}")?;
    }
    Ok(())
}
