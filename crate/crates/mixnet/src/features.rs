//! Feature pre-processing: per-dimension mean normalization, ±K context
//! splicing with edge replication, and full-dimension LDA. The normative
//! pipeline order is mean_normalize → splice(K) → lda_apply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{generalized_eigen, pinv_psd, Matrix};

/// One utterance: ordered feature frames with per-frame sub-class and
/// broad-class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    pub frames: Vec<Vec<f64>>,
    pub subclass_labels: Vec<usize>,
    pub broadclass_labels: Vec<usize>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.subclass_labels.len()
            || self.frames.len() != self.broadclass_labels.len()
        {
            return Err(Error::Validation(
                "frame/label length mismatch in sequence".into(),
            ));
        }
        let d = self.dim();
        if self.frames.iter().any(|f| f.len() != d) {
            return Err(Error::Validation("ragged frame dimensions".into()));
        }
        Ok(())
    }
}

/// Subtracts the per-dimension mean computed over the sequence.
pub fn mean_normalize(seq: &FrameSequence) -> Result<FrameSequence> {
    if seq.is_empty() {
        return Err(Error::Validation(
            "cannot mean-normalize an empty sequence".into(),
        ));
    }
    let d = seq.dim();
    let n = seq.len() as f64;
    let mut mean = vec![0.0; d];
    for f in &seq.frames {
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let frames = seq
        .frames
        .iter()
        .map(|f| f.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    Ok(FrameSequence {
        frames,
        subclass_labels: seq.subclass_labels.clone(),
        broadclass_labels: seq.broadclass_labels.clone(),
    })
}

/// A ±radius window around frame `t`, replicating the boundary frames.
pub fn window_at(frames: &[Vec<f64>], t: usize, radius: usize) -> Vec<Vec<f64>> {
    let last = frames.len() - 1;
    (-(radius as isize)..=radius as isize)
        .map(|j| {
            let idx = (t as isize + j).clamp(0, last as isize) as usize;
            frames[idx].clone()
        })
        .collect()
}

/// Frame t becomes concat(x(t−K)..x(t+K)); output dim is d·(2K+1).
pub fn splice(seq: &FrameSequence, radius: usize) -> FrameSequence {
    let frames = (0..seq.len())
        .map(|t| {
            window_at(&seq.frames, t, radius)
                .into_iter()
                .flatten()
                .collect()
        })
        .collect();
    FrameSequence {
        frames,
        subclass_labels: seq.subclass_labels.clone(),
        broadclass_labels: seq.broadclass_labels.clone(),
    }
}

/// Within/between scatter matrices with equal-weighted class means around
/// the (equal-weighted) mean of class means. Returns (S_w, S_b, class means).
pub fn scatter_matrices(
    vectors: &[Vec<f64>],
    labels: &[usize],
) -> Result<(Matrix, Matrix, Vec<Vec<f64>>)> {
    if vectors.len() != labels.len() || vectors.is_empty() {
        return Err(Error::Validation("scatter needs matched, nonempty data".into()));
    }
    let d = vectors[0].len();
    let class_count = labels.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; class_count];
    let mut means = vec![vec![0.0; d]; class_count];
    for (v, &l) in vectors.iter().zip(labels) {
        counts[l] += 1;
        for (m, x) in means[l].iter_mut().zip(v) {
            *m += x;
        }
    }
    let populated: Vec<usize> = (0..class_count).filter(|&c| counts[c] > 0).collect();
    if populated.len() < 2 {
        return Err(Error::Validation("scatter needs at least 2 classes".into()));
    }
    for c in &populated {
        for m in means[*c].iter_mut() {
            *m /= counts[*c] as f64;
        }
    }

    // S_w: average within-class covariance, classes weighted equally.
    let mut s_w = Matrix::zeros(d, d);
    for c in &populated {
        if counts[*c] < 2 {
            return Err(Error::Validation(format!(
                "class {c} has fewer than 2 points"
            )));
        }
        let mut cov = Matrix::zeros(d, d);
        for (v, &l) in vectors.iter().zip(labels) {
            if l != *c {
                continue;
            }
            for r in 0..d {
                let dr = v[r] - means[*c][r];
                for cc in 0..d {
                    let val = cov.get(r, cc) + dr * (v[cc] - means[*c][cc]);
                    cov.set(r, cc, val);
                }
            }
        }
        let scale = 1.0 / (counts[*c] as f64 * populated.len() as f64);
        for r in 0..d {
            for cc in 0..d {
                let val = s_w.get(r, cc) + cov.get(r, cc) * scale;
                s_w.set(r, cc, val);
            }
        }
    }

    // S_b: equal-weighted spread of class means around their mean.
    let mut global = vec![0.0; d];
    for c in &populated {
        for (g, m) in global.iter_mut().zip(&means[*c]) {
            *g += m;
        }
    }
    for g in &mut global {
        *g /= populated.len() as f64;
    }
    let mut s_b = Matrix::zeros(d, d);
    for c in &populated {
        for r in 0..d {
            let dr = means[*c][r] - global[r];
            for cc in 0..d {
                let val = s_b.get(r, cc)
                    + dr * (means[*c][cc] - global[cc]) / populated.len() as f64;
                s_b.set(r, cc, val);
            }
        }
    }
    Ok((s_w, s_b, means))
}

/// Class-discriminative linear transform fitted from labeled vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaTransform {
    /// Rows are S_w-conjugate directions, ordered by descending generalized
    /// eigenvalue.
    pub matrix: Matrix,
    pub eigenvalues: Vec<f64>,
}

/// Fits LDA: W solves S_b w = λ S_w w. S_w is regularized with
/// ε·I, ε = 1e-6·trace(S_w)/d, before solving; `out_dim` leading rows are
/// retained (out_dim = d keeps an invertible transform).
pub fn lda_fit(vectors: &[Vec<f64>], labels: &[usize], out_dim: usize) -> Result<LdaTransform> {
    let (mut s_w, s_b, _) = scatter_matrices(vectors, labels)?;
    let d = s_w.rows();
    if out_dim > d {
        return Err(Error::Validation(format!(
            "out_dim {out_dim} exceeds feature dim {d}"
        )));
    }
    let eps = 1e-6 * (0..d).map(|i| s_w.get(i, i)).sum::<f64>() / d as f64;
    for i in 0..d {
        s_w.set(i, i, s_w.get(i, i) + eps);
    }
    let (values, vectors_m) = generalized_eigen(&s_b, &s_w)?;
    let mut rows = Vec::with_capacity(out_dim);
    for i in 0..out_dim {
        rows.push(vectors_m.row(i).to_vec());
    }
    Ok(LdaTransform {
        matrix: Matrix::from_rows(&rows)?,
        eigenvalues: values[..out_dim].to_vec(),
    })
}

/// Maps every frame of the sequence by W.
pub fn lda_apply(t: &LdaTransform, seq: &FrameSequence) -> Result<FrameSequence> {
    let frames = seq
        .frames
        .iter()
        .map(|f| t.matrix.apply(f))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameSequence {
        frames,
        subclass_labels: seq.subclass_labels.clone(),
        broadclass_labels: seq.broadclass_labels.clone(),
    })
}

/// Fisher criterion J = trace(S_w⁺ S_b) of a labeled vector set.
pub fn fisher_criterion(vectors: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let (s_w, s_b, _) = scatter_matrices(vectors, labels)?;
    let pinv = pinv_psd(&s_w, 1e-10)?;
    let prod = pinv.matmul(&s_b)?;
    Ok((0..prod.rows()).map(|i| prod.get(i, i)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn seq(frames: Vec<Vec<f64>>) -> FrameSequence {
        let n = frames.len();
        FrameSequence {
            frames,
            subclass_labels: vec![0; n],
            broadclass_labels: vec![0; n],
        }
    }

    #[test]
    fn mean_normalize_constant_is_zero() {
        let s = seq(vec![vec![2.0, -1.0]; 4]);
        let out = mean_normalize(&s).unwrap();
        assert!(out.frames.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_normalize_zero_mean_and_idempotent() {
        let mut rng = Rng::new(3);
        let s = seq((0..20)
            .map(|_| (0..5).map(|_| rng.standard_normal() + 2.0).collect())
            .collect());
        let once = mean_normalize(&s).unwrap();
        for dim in 0..5 {
            let m: f64 = once.frames.iter().map(|f| f[dim]).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-12);
        }
        let twice = mean_normalize(&once).unwrap();
        for (a, b) in twice.frames.iter().flatten().zip(once.frames.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_normalize_rejects_empty() {
        assert!(mean_normalize(&seq(vec![])).is_err());
    }

    #[test]
    fn splice_k0_is_identity() {
        let s = seq(vec![vec![1.0], vec![2.0]]);
        assert_eq!(splice(&s, 0).frames, s.frames);
    }

    #[test]
    fn splice_edge_replication() {
        let s = seq(vec![vec![1.0], vec![2.0], vec![3.0]]);
        let out = splice(&s, 1);
        assert_eq!(
            out.frames,
            vec![
                vec![1.0, 1.0, 2.0],
                vec![1.0, 2.0, 3.0],
                vec![2.0, 3.0, 3.0]
            ]
        );
    }

    #[test]
    fn splice_output_dim() {
        let mut rng = Rng::new(5);
        let s = seq((0..7).map(|_| (0..4).map(|_| rng.uniform()).collect()).collect());
        for k in 0..4 {
            let out = splice(&s, k);
            assert_eq!(out.dim(), 4 * (2 * k + 1));
        }
    }

    #[test]
    fn lda_two_class_closed_form() {
        // means (±1, 0), within-class covariance diag(1, 4):
        // leading direction is S_w⁻¹(μ1−μ2) ∝ x-axis
        let mut rng = Rng::new(6);
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..4000 {
            vectors.push(vec![
                1.0 + rng.standard_normal(),
                2.0 * rng.standard_normal(),
            ]);
            labels.push(0);
            vectors.push(vec![
                -1.0 + rng.standard_normal(),
                2.0 * rng.standard_normal(),
            ]);
            labels.push(1);
        }
        let t = lda_fit(&vectors, &labels, 2).unwrap();
        let w = t.matrix.row(0);
        let norm = (w[0] * w[0] + w[1] * w[1]).sqrt();
        let cos = w[0].abs() / norm;
        assert!(cos > 0.999, "leading direction {w:?}");
        // trailing eigenvalue ~0 for 2 classes in 2D
        assert!(t.eigenvalues[1].abs() < 1e-6 * t.eigenvalues[0].max(1.0));
    }

    #[test]
    fn lda_equal_means_all_zero_eigenvalues() {
        let mut rng = Rng::new(7);
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for i in 0..400 {
            vectors.push(vec![rng.standard_normal(), rng.standard_normal()]);
            labels.push(i % 2);
        }
        // force identical class means by mirroring
        let mirrored: Vec<Vec<f64>> = vectors.iter().map(|v| vec![-v[0], -v[1]]).collect();
        let mut all = vectors.clone();
        all.extend(mirrored.clone());
        let mut all_labels = labels.clone();
        all_labels.extend(labels.iter().map(|&l| l));
        let t = lda_fit(&all, &all_labels, 2).unwrap();
        // class means are exactly zero, so S_b = 0
        assert!(t.eigenvalues.iter().all(|&l| l.abs() < 1e-9));
    }

    #[test]
    fn lda_full_dim_invertible_and_preserves_fisher() {
        let mut rng = Rng::new(8);
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3usize {
            for _ in 0..200 {
                vectors.push(vec![
                    c as f64 + 0.5 * rng.standard_normal(),
                    -(c as f64) + 0.7 * rng.standard_normal(),
                    rng.standard_normal(),
                ]);
                labels.push(c);
            }
        }
        let j_before = fisher_criterion(&vectors, &labels).unwrap();
        let t = lda_fit(&vectors, &labels, 3).unwrap();
        let mapped: Vec<Vec<f64>> = vectors.iter().map(|v| t.matrix.apply(v).unwrap()).collect();
        let j_after = fisher_criterion(&mapped, &labels).unwrap();
        assert!(
            (j_before - j_after).abs() < 1e-9 * j_before.max(1.0),
            "J changed: {j_before} -> {j_after}"
        );
        // determinant check via eigenvalues of WᵀW
        let wtw = t.matrix.transpose().matmul(&t.matrix).unwrap();
        let eig = crate::linalg::symmetric_eigen(&wtw).unwrap();
        assert!(eig.values.iter().all(|&l| l > 1e-12), "W not invertible");
    }

    #[test]
    fn lda_identity_transform_is_noop() {
        let t = LdaTransform {
            matrix: Matrix::identity(2),
            eigenvalues: vec![1.0, 1.0],
        };
        let s = seq(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(lda_apply(&t, &s).unwrap().frames, s.frames);
    }

    #[test]
    fn fisher_two_point_classes_closed_form() {
        // two 1-D classes, means 0 and 2, unit variance, equal priors -> J = 1
        let mut rng = Rng::new(9);
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..60_000 {
            vectors.push(vec![rng.standard_normal()]);
            labels.push(0);
            vectors.push(vec![2.0 + rng.standard_normal()]);
            labels.push(1);
        }
        let j = fisher_criterion(&vectors, &labels).unwrap();
        assert!((j - 1.0).abs() < 0.05, "J = {j}");
    }
}
