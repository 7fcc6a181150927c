//! Latent-space analytics: class-center geometry, similarity matrices,
//! pairwise statistics, anomaly and novelty scoring, concentration
//! gradients, drift scoring, and a 2-D PCA projection.
//!
//! Class centers average raw representations and are then unit-normalized;
//! every similarity consumes normalized directions. Set-level reductions sum
//! their addends in value-sorted order, so results are bit-identical under
//! any permutation of the input rows.

pub mod pca;

use ndarray::Array2;

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

pub use pca::{pca2, Pca2};

const NORM_FLOOR: f64 = 1e-12;

/// Sum with a canonical (value-sorted) addend order; permutation-invariant
/// bit-for-bit.
pub(crate) fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

pub(crate) fn sorted_mean(values: Vec<f64>) -> f64 {
    let n = values.len();
    sorted_sum(values) / n as f64
}

/// Unit-normalized copy of a row; errors on (near-)zero norm.
fn normalized_row(row: ndarray::ArrayView1<'_, f64>, what: &str) -> Result<Vec<f64>> {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < NORM_FLOOR {
        return Err(Error::DegenerateEmbedding(format!(
            "{what} has norm {norm:.3e}"
        )));
    }
    Ok(row.iter().map(|v| v / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-class raw means and their unit-normalized directions.
#[derive(Debug, Clone)]
pub struct CenterSet {
    pub classes: Vec<String>,
    /// K x D raw means.
    pub raw: Array2<f64>,
    /// K x D unit-norm rows.
    pub normalized: Array2<f64>,
}

impl CenterSet {
    pub fn dim(&self) -> usize {
        self.raw.ncols()
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }
}

/// Class centers of a fully labeled set: the raw mean of each class's rows,
/// plus its normalization. Class order is first appearance.
pub fn class_centers(embeddings: &EmbeddingSet) -> Result<CenterSet> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput("cannot compute centers of an empty set".into()));
    }
    let labels = embeddings.require_labels()?;
    let classes = embeddings.class_list();
    let dim = embeddings.dim();
    let mut raw = Array2::zeros((classes.len(), dim));
    let mut normalized = Array2::zeros((classes.len(), dim));
    for (k, class) in classes.iter().enumerate() {
        let members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class.as_str())
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyClass(class.clone()));
        }
        for d in 0..dim {
            let vals: Vec<f64> = members.iter().map(|&i| embeddings.reps[[i, d]]).collect();
            raw[[k, d]] = sorted_sum(vals) / members.len() as f64;
        }
        let norm = raw.row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < NORM_FLOOR {
            return Err(Error::DegenerateEmbedding(format!(
                "center of class `{class}` has norm {norm:.3e}"
            )));
        }
        for d in 0..dim {
            normalized[[k, d]] = raw[[k, d]] / norm;
        }
    }
    Ok(CenterSet {
        classes,
        raw,
        normalized,
    })
}

/// Labeled cosine-similarity table with values in [-1, 1].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SimilarityMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row][col]
    }
}

/// Mean cosine similarity of each class's rows to each normalized center:
/// entry (l, k) averages `normalized_row . center_k` over the rows of class
/// l. Rows and columns both follow the center class order; every center
/// class must appear in the evaluated set.
pub fn mean_similarity_matrix(
    embeddings: &EmbeddingSet,
    centers: &CenterSet,
) -> Result<SimilarityMatrix> {
    let labels = embeddings.require_labels()?;
    if embeddings.dim() != centers.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings have dim {} but centers have dim {}",
            embeddings.dim(),
            centers.dim()
        )));
    }
    for label in &labels {
        if centers.class_index(label).is_none() {
            return Err(Error::ClassMismatch(format!(
                "label `{label}` has no center"
            )));
        }
    }
    let k_classes = centers.classes.len();
    let mut per_class_dots: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); k_classes]; k_classes];
    for (i, label) in labels.iter().enumerate() {
        let l = centers.class_index(label).expect("checked above");
        let h = normalized_row(embeddings.reps.row(i), &format!("row {i}"))?;
        for k in 0..k_classes {
            let c = centers.normalized.row(k);
            per_class_dots[l][k].push(dot(&h, c.as_slice().expect("standard layout")));
        }
    }
    let mut values = vec![vec![0.0; k_classes]; k_classes];
    for l in 0..k_classes {
        if per_class_dots[l][0].is_empty() {
            return Err(Error::EmptyClass(format!(
                "class `{}` has no rows in the evaluated set",
                centers.classes[l]
            )));
        }
        for k in 0..k_classes {
            values[l][k] = sorted_mean(std::mem::take(&mut per_class_dots[l][k]));
        }
    }
    Ok(SimilarityMatrix {
        row_labels: centers.classes.clone(),
        col_labels: centers.classes.clone(),
        values,
    })
}

/// Cosine similarities between normalized class centers; symmetric with a
/// unit diagonal.
pub fn center_similarity(centers: &CenterSet) -> SimilarityMatrix {
    let k_classes = centers.classes.len();
    let mut values = vec![vec![0.0; k_classes]; k_classes];
    for l in 0..k_classes {
        values[l][l] = 1.0;
        for k in (l + 1)..k_classes {
            let row_l = centers.normalized.row(l);
            let row_k = centers.normalized.row(k);
            let d = dot(
                row_l.as_slice().expect("standard layout"),
                row_k.as_slice().expect("standard layout"),
            );
            values[l][k] = d;
            values[k][l] = d;
        }
    }
    SimilarityMatrix {
        row_labels: centers.classes.clone(),
        col_labels: centers.classes.clone(),
        values,
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct PairwiseStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Min/mean/max cosine similarity over all distinct unordered row pairs.
pub fn pairwise_stats(embeddings: &EmbeddingSet) -> Result<PairwiseStats> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "pairwise statistics need at least 2 rows, got {n}"
        )));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| normalized_row(embeddings.reps.row(i), &format!("row {i}")))
        .collect::<Result<_>>()?;
    let mut sims = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            sims.push(dot(&rows[i], &rows[j]));
        }
    }
    let min = sims.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = sorted_mean(sims);
    Ok(PairwiseStats { min, mean, max })
}

/// Per-class anomaly scores of a single representation:
/// `score_k = 1 - normalized(h) . center_k`, each in [0, 2].
pub fn anomaly_scores(h: ndarray::ArrayView1<'_, f64>, centers: &CenterSet) -> Result<Vec<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("representation contains NaN or infinity".into()));
    }
    if h.len() != centers.dim() {
        return Err(Error::DimensionMismatch(format!(
            "representation dim {} vs centers dim {}",
            h.len(),
            centers.dim()
        )));
    }
    let hn = normalized_row(h, "representation")?;
    Ok((0..centers.classes.len())
        .map(|k| 1.0 - dot(&hn, centers.normalized.row(k).as_slice().expect("standard layout")))
        .collect())
}

/// Index of the minimum score; ties resolve to the lowest class index.
pub fn nearest_class(scores: &[f64]) -> usize {
    let mut best = 0usize;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NoveltyReport {
    /// Highest center similarity per sample.
    pub max_similarity: Vec<f64>,
    /// True where `max_similarity < threshold`.
    pub novel: Vec<bool>,
}

/// Flag samples whose best center similarity falls below `threshold`.
pub fn detect_novel(
    embeddings: &EmbeddingSet,
    centers: &CenterSet,
    threshold: f64,
) -> Result<NoveltyReport> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid_config("novel_threshold", "must be in (0, 1]"));
    }
    if embeddings.dim() != centers.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings dim {} vs centers dim {}",
            embeddings.dim(),
            centers.dim()
        )));
    }
    let mut max_similarity = Vec::with_capacity(embeddings.len());
    let mut novel = Vec::with_capacity(embeddings.len());
    for i in 0..embeddings.len() {
        let hn = normalized_row(embeddings.reps.row(i), &format!("row {i}"))?;
        let best = (0..centers.classes.len())
            .map(|k| dot(&hn, centers.normalized.row(k).as_slice().expect("standard layout")))
            .fold(f64::NEG_INFINITY, f64::max);
        max_similarity.push(best);
        novel.push(best < threshold);
    }
    Ok(NoveltyReport {
        max_similarity,
        novel,
    })
}

/// Window-level drift: `1 - mean_i max_k similarity(row_i, center_k)`,
/// in [0, 2]; higher means further from every known mode.
pub fn drift_score(window: &EmbeddingSet, centers: &CenterSet) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::EmptyInput("drift window is empty".into()));
    }
    if window.dim() != centers.dim() {
        return Err(Error::DimensionMismatch(format!(
            "window dim {} vs centers dim {}",
            window.dim(),
            centers.dim()
        )));
    }
    let mut best = Vec::with_capacity(window.len());
    for i in 0..window.len() {
        let hn = normalized_row(window.reps.row(i), &format!("row {i}"))?;
        best.push(
            (0..centers.classes.len())
                .map(|k| dot(&hn, centers.normalized.row(k).as_slice().expect("standard layout")))
                .fold(f64::NEG_INFINITY, f64::max),
        );
    }
    Ok(1.0 - sorted_mean(best))
}

/// Average ranks (1-based, ties averaged).
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the average rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling. Returns
/// `(0, true)` when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, bool)> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "spearman inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("spearman needs at least 2 points".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mean_x = sorted_mean(rx.clone());
    let mean_y = sorted_mean(ry.clone());
    let cov = sorted_sum(
        rx.iter()
            .zip(&ry)
            .map(|(a, b)| (a - mean_x) * (b - mean_y))
            .collect(),
    ) / n;
    let var_x = sorted_sum(rx.iter().map(|a| (a - mean_x).powi(2)).collect()) / n;
    let var_y = sorted_sum(ry.iter().map(|b| (b - mean_y).powi(2)).collect()) / n;
    if var_x < NORM_FLOOR || var_y < NORM_FLOOR {
        return Ok((0.0, true));
    }
    Ok((cov / (var_x * var_y).sqrt(), false))
}

/// Dose-response summary for one treated class.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClassGradient {
    pub class: String,
    /// Spearman rank correlation between dose and anomaly-to-healthy score.
    pub spearman_rho: f64,
    /// True when the score or dose vector was constant (rho reported as 0).
    pub degenerate: bool,
    /// Mean pairwise cosine similarity of the per-dose-level mean
    /// displacement directions from the healthy center.
    pub direction_consistency: f64,
    pub n_levels: usize,
    pub n_samples: usize,
}

/// Dose-gradient analysis: for every non-healthy class with at least 3
/// distinct dose levels, correlate dose with the anomaly score to the
/// healthy center (computed from this set) and measure how consistently the
/// per-level mean displacements point away from it. Rows without a dose are
/// ignored; classes with fewer than 3 levels are skipped.
pub fn concentration_gradient(
    embeddings: &EmbeddingSet,
    healthy_label: &str,
) -> Result<Vec<ClassGradient>> {
    let labels = embeddings.require_labels()?;
    if !labels.iter().any(|l| *l == healthy_label) {
        return Err(Error::ClassMismatch(format!(
            "healthy label `{healthy_label}` not present"
        )));
    }
    let centers = class_centers(embeddings)?;
    let healthy_idx = centers.class_index(healthy_label).expect("present");
    let healthy: Vec<f64> = centers.normalized.row(healthy_idx).to_vec();

    let mut out = Vec::new();
    for class in embeddings.class_list() {
        if class == healthy_label {
            continue;
        }
        let members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(i, l)| **l == class && embeddings.concentrations[*i].is_some())
            .map(|(i, _)| i)
            .collect();
        let mut levels: Vec<f64> = members
            .iter()
            .map(|&i| embeddings.concentrations[i].expect("filtered"))
            .collect();
        levels.sort_unstable_by(f64::total_cmp);
        levels.dedup();
        if levels.len() < 3 {
            continue;
        }

        let mut doses = Vec::with_capacity(members.len());
        let mut scores = Vec::with_capacity(members.len());
        let mut normalized_rows = Vec::with_capacity(members.len());
        for &i in &members {
            let hn = normalized_row(embeddings.reps.row(i), &format!("row {i}"))?;
            doses.push(embeddings.concentrations[i].expect("filtered"));
            scores.push(1.0 - dot(&hn, &healthy));
            normalized_rows.push(hn);
        }
        let (rho, degenerate) = spearman(&doses, &scores)?;

        // Mean displacement direction per dose level.
        let dim = embeddings.dim();
        let mut directions: Vec<Vec<f64>> = Vec::new();
        for &level in &levels {
            let level_rows: Vec<&Vec<f64>> = doses
                .iter()
                .zip(&normalized_rows)
                .filter(|(d, _)| **d == level)
                .map(|(_, h)| h)
                .collect();
            let mut displacement = vec![0.0; dim];
            for (d, slot) in displacement.iter_mut().enumerate() {
                let mean =
                    sorted_mean(level_rows.iter().map(|h| h[d]).collect::<Vec<f64>>());
                *slot = mean - healthy[d];
            }
            let norm = displacement.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm >= NORM_FLOOR {
                directions.push(displacement.iter().map(|v| v / norm).collect());
            }
        }
        let mut cosines = Vec::new();
        for a in 0..directions.len() {
            for b in (a + 1)..directions.len() {
                cosines.push(dot(&directions[a], &directions[b]));
            }
        }
        let direction_consistency = if cosines.is_empty() {
            0.0
        } else {
            sorted_mean(cosines)
        };

        out.push(ClassGradient {
            class,
            spearman_rho: rho,
            degenerate,
            direction_consistency,
            n_levels: levels.len(),
            n_samples: members.len(),
        });
    }
    Ok(out)
}

/// Ranking quality of `positive` scoring above `negative`: the probability
/// that a random positive outranks a random negative, ties counted half.
pub fn auroc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::InsufficientData(
            "auroc needs at least one score on each side".into(),
        ));
    }
    let all: Vec<f64> = positive.iter().chain(negative).copied().collect();
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("auroc scores contain NaN or infinity".into()));
    }
    let ranks = average_ranks(&all);
    let n_pos = positive.len() as f64;
    let n_neg = negative.len() as f64;
    let rank_sum: f64 = ranks[..positive.len()].iter().sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn labeled_set(reps: Array2<f64>, labels: Vec<&str>) -> EmbeddingSet {
        let n = reps.nrows();
        EmbeddingSet::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            reps,
            labels.into_iter().map(|l| Some(l.to_string())).collect(),
            vec![None; n],
        )
        .unwrap()
    }

    fn random_set(seed: u64, n: usize, d: usize, k: usize) -> EmbeddingSet {
        let mut rng = SplitMix64::new(seed);
        let reps = Array2::from_shape_fn((n, d), |_| rng.normal() + 0.5);
        let labels: Vec<String> = (0..n).map(|i| format!("c{}", i % k)).collect();
        EmbeddingSet::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            reps,
            labels.into_iter().map(Some).collect(),
            (0..n).map(|i| Some((i % 4) as f64 + 1.0)).collect(),
        )
        .unwrap()
    }

    // Naive two-loop re-implementations used as oracles.
    mod oracle {
        use super::*;

        pub fn centers(e: &EmbeddingSet) -> (Vec<String>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
            let classes = e.class_list();
            let mut raw = Vec::new();
            let mut normed = Vec::new();
            for class in &classes {
                let mut sum = vec![0.0; e.dim()];
                let mut count = 0usize;
                for i in 0..e.len() {
                    if e.labels[i].as_deref() == Some(class) {
                        for d in 0..e.dim() {
                            sum[d] += e.reps[[i, d]];
                        }
                        count += 1;
                    }
                }
                let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
                let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
                normed.push(mean.iter().map(|v| v / norm).collect());
                raw.push(mean);
            }
            (classes, raw, normed)
        }

        pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            dot / (na * nb)
        }

        pub fn mean_similarity(e: &EmbeddingSet, classes: &[String], centers: &[Vec<f64>]) -> Vec<Vec<f64>> {
            let mut out = vec![vec![0.0; classes.len()]; classes.len()];
            for (l, class) in classes.iter().enumerate() {
                let mut count = 0usize;
                for i in 0..e.len() {
                    if e.labels[i].as_deref() == Some(class) {
                        count += 1;
                        let row: Vec<f64> = e.reps.row(i).to_vec();
                        for (k, c) in centers.iter().enumerate() {
                            out[l][k] += cosine(&row, c);
                        }
                    }
                }
                for v in out[l].iter_mut() {
                    *v /= count as f64;
                }
            }
            out
        }
    }

    #[test]
    fn two_point_center_direct_substitution() {
        let e = labeled_set(
            Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            vec!["a", "a"],
        );
        let c = class_centers(&e).unwrap();
        assert_eq!(c.raw.row(0).to_vec(), vec![0.5, 0.5]);
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((c.normalized[[0, 0]] - inv_sqrt2).abs() < 1e-12);
        assert!((c.normalized[[0, 1]] - inv_sqrt2).abs() < 1e-12);
    }

    #[test]
    fn single_member_center_is_member_normalized() {
        let e = labeled_set(
            Array2::from_shape_vec((1, 3), vec![3.0, 0.0, 4.0]).unwrap(),
            vec!["only"],
        );
        let c = class_centers(&e).unwrap();
        assert!((c.normalized[[0, 0]] - 0.6).abs() < 1e-12);
        assert!((c.normalized[[0, 2]] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn centers_match_two_loop_oracle() {
        let e = random_set(40, 100, 16, 5);
        let c = class_centers(&e).unwrap();
        let (classes, raw, normed) = oracle::centers(&e);
        assert_eq!(c.classes, classes);
        for k in 0..classes.len() {
            for d in 0..e.dim() {
                assert!((c.raw[[k, d]] - raw[k][d]).abs() < 1e-9);
                assert!((c.normalized[[k, d]] - normed[k][d]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn centers_are_permutation_invariant_bitwise() {
        let e = random_set(41, 60, 8, 3);
        let mut idx: Vec<usize> = (0..e.len()).collect();
        SplitMix64::new(9).shuffle(&mut idx);
        let shuffled = e.select(&idx).unwrap();
        let a = class_centers(&e).unwrap();
        let b = class_centers(&shuffled).unwrap();
        for class in &a.classes {
            let ka = a.class_index(class).unwrap();
            let kb = b.class_index(class).unwrap();
            for d in 0..e.dim() {
                assert_eq!(a.raw[[ka, d]].to_bits(), b.raw[[kb, d]].to_bits());
            }
        }
    }

    #[test]
    fn mean_similarity_identity_cases() {
        // Members equal to their center direction give a diagonal of 1;
        // orthogonal class axes give an identity matrix.
        let e = labeled_set(
            Array2::from_shape_vec((4, 2), vec![2.0, 0.0, 3.0, 0.0, 0.0, 1.0, 0.0, 5.0]).unwrap(),
            vec!["x", "x", "y", "y"],
        );
        let c = class_centers(&e).unwrap();
        let m = mean_similarity_matrix(&e, &c).unwrap();
        assert!((m.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((m.get(1, 1) - 1.0).abs() < 1e-12);
        assert!(m.get(0, 1).abs() < 1e-12);
        assert!(m.get(1, 0).abs() < 1e-12);
    }

    #[test]
    fn mean_similarity_matches_two_loop_oracle() {
        let train = random_set(42, 80, 12, 4);
        let test = random_set(43, 60, 12, 4);
        let centers = class_centers(&train).unwrap();
        let m = mean_similarity_matrix(&test, &centers).unwrap();
        let raw_centers: Vec<Vec<f64>> = (0..centers.classes.len())
            .map(|k| centers.raw.row(k).to_vec())
            .collect();
        let oracle = oracle::mean_similarity(&test, &centers.classes, &raw_centers);
        for l in 0..centers.classes.len() {
            for k in 0..centers.classes.len() {
                assert!(
                    (m.get(l, k) - oracle[l][k]).abs() < 1e-9,
                    "({l},{k}): {} vs {}",
                    m.get(l, k),
                    oracle[l][k]
                );
            }
        }
    }

    #[test]
    fn center_similarity_symmetric_unit_diagonal() {
        let e = random_set(44, 90, 10, 6);
        let c = class_centers(&e).unwrap();
        let m = center_similarity(&c);
        for l in 0..6 {
            assert!((m.get(l, l) - 1.0).abs() < 1e-9);
            for k in 0..6 {
                assert!((m.get(l, k) - m.get(k, l)).abs() < 1e-9);
                assert!(m.get(l, k) <= 1.0 + 1e-9 && m.get(l, k) >= -1.0 - 1e-9);
            }
        }
        // Orthogonal centers: off-diagonal 0.
        let e = labeled_set(
            Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            vec!["x", "y"],
        );
        let m = center_similarity(&class_centers(&e).unwrap());
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn center_similarity_matches_oracle() {
        let e = random_set(45, 120, 14, 6);
        let c = class_centers(&e).unwrap();
        let m = center_similarity(&c);
        for l in 0..6 {
            for k in 0..6 {
                let o = oracle::cosine(&c.raw.row(l).to_vec(), &c.raw.row(k).to_vec());
                assert!((m.get(l, k) - o).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pairwise_stats_small_cases() {
        let e = labeled_set(
            Array2::from_shape_vec((2, 2), vec![1.0, 0.0, -1.0, 0.0]).unwrap(),
            vec!["a", "b"],
        );
        let s = pairwise_stats(&e).unwrap();
        assert_eq!((s.min, s.mean, s.max), (-1.0, -1.0, -1.0));

        let e = labeled_set(
            Array2::from_shape_vec((3, 2), vec![2.0, 0.0, 4.0, 0.0, 0.5, 0.0]).unwrap(),
            vec!["a", "a", "a"],
        );
        let s = pairwise_stats(&e).unwrap();
        assert!((s.min - 1.0).abs() < 1e-12);
        assert!((s.max - 1.0).abs() < 1e-12);

        let single = labeled_set(Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap(), vec!["a"]);
        assert!(matches!(pairwise_stats(&single), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn pairwise_stats_match_double_loop_oracle() {
        let e = random_set(46, 50, 9, 3);
        let s = pairwise_stats(&e).unwrap();
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..e.len() {
            for j in (i + 1)..e.len() {
                let c = oracle::cosine(&e.reps.row(i).to_vec(), &e.reps.row(j).to_vec());
                min = min.min(c);
                max = max.max(c);
                sum += c;
                count += 1;
            }
        }
        assert!((s.min - min).abs() < 1e-9);
        assert!((s.max - max).abs() < 1e-9);
        assert!((s.mean - sum / count as f64).abs() < 1e-9);
    }

    #[test]
    fn anomaly_scores_identity_cases() {
        let e = labeled_set(
            Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            vec!["x", "y"],
        );
        let c = class_centers(&e).unwrap();
        let h = ndarray::arr1(&[5.0, 0.0]);
        let scores = anomaly_scores(h.view(), &c).unwrap();
        assert!(scores[0].abs() < 1e-12, "same direction scores 0");
        assert!((scores[1] - 1.0).abs() < 1e-12, "orthogonal scores 1");
        assert_eq!(nearest_class(&scores), 0);

        let zero = ndarray::arr1(&[0.0, 0.0]);
        assert!(matches!(
            anomaly_scores(zero.view(), &c),
            Err(Error::DegenerateEmbedding(_))
        ));
    }

    #[test]
    fn anomaly_scores_match_oracle() {
        let e = random_set(47, 70, 11, 5);
        let c = class_centers(&e).unwrap();
        let h = e.reps.row(13);
        let scores = anomaly_scores(h, &c).unwrap();
        for (k, score) in scores.iter().enumerate() {
            let o = 1.0 - oracle::cosine(&h.to_vec(), &c.raw.row(k).to_vec());
            assert!((score - o).abs() < 1e-9);
            assert!((0.0..=2.0).contains(score));
        }
    }

    #[test]
    fn nearest_class_breaks_ties_low() {
        assert_eq!(nearest_class(&[0.5, 0.2, 0.2]), 1);
        assert_eq!(nearest_class(&[0.2, 0.2, 0.2]), 0);
    }

    #[test]
    fn novelty_threshold_cases() {
        let train = labeled_set(
            Array2::from_shape_vec((2, 3), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(),
            vec!["x", "y"],
        );
        let centers = class_centers(&train).unwrap();
        // First sample sits on a center, second is orthogonal to both.
        let probe = EmbeddingSet::new(
            vec!["p0".into(), "p1".into()],
            Array2::from_shape_vec((2, 3), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
            vec![None, None],
            vec![None, None],
        )
        .unwrap();
        let report = detect_novel(&probe, &centers, 0.9).unwrap();
        assert!(!report.novel[0]);
        assert!(report.novel[1]);
        let report = detect_novel(&probe, &centers, 0.5).unwrap();
        assert!(report.novel[1], "orthogonal sample has similarity 0 < 0.5");
        assert!(detect_novel(&probe, &centers, 0.0).is_err());
        assert!(detect_novel(&probe, &centers, 1.5).is_err());
    }

    #[test]
    fn drift_score_extremes() {
        let train = labeled_set(
            Array2::from_shape_vec((2, 3), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(),
            vec!["x", "y"],
        );
        let centers = class_centers(&train).unwrap();
        let window_on_centers = EmbeddingSet::new(
            vec!["a".into(), "b".into()],
            Array2::from_shape_vec((2, 3), vec![2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap(),
            vec![None, None],
            vec![None, None],
        )
        .unwrap();
        assert!(drift_score(&window_on_centers, &centers).unwrap().abs() < 1e-12);
        let orthogonal = EmbeddingSet::new(
            vec!["a".into()],
            Array2::from_shape_vec((1, 3), vec![0.0, 0.0, 1.0]).unwrap(),
            vec![None],
            vec![None],
        )
        .unwrap();
        assert!((drift_score(&orthogonal, &centers).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_perfect_and_reversed_ranks() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let inc = [0.1, 0.2, 0.3, 0.4];
        let dec = [0.4, 0.3, 0.2, 0.1];
        assert!((spearman(&x, &inc).unwrap().0 - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &dec).unwrap().0 + 1.0).abs() < 1e-12);
        let constant = [0.5, 0.5, 0.5, 0.5];
        let (rho, degenerate) = spearman(&x, &constant).unwrap();
        assert_eq!(rho, 0.0);
        assert!(degenerate);
    }

    #[test]
    fn spearman_matches_rank_oracle_with_ties() {
        // Independent oracle: rank via explicit tie groups, then Pearson.
        fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
            fn ranks(v: &[f64]) -> Vec<f64> {
                let mut r = vec![0.0; v.len()];
                for i in 0..v.len() {
                    let less = v.iter().filter(|&&o| o < v[i]).count() as f64;
                    let equal = v.iter().filter(|&&o| o == v[i]).count() as f64;
                    r[i] = less + (equal + 1.0) / 2.0;
                }
                r
            }
            let rx = ranks(x);
            let ry = ranks(y);
            let n = x.len() as f64;
            let mx = rx.iter().sum::<f64>() / n;
            let my = ry.iter().sum::<f64>() / n;
            let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
            let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
            let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
            cov / (vx * vy).sqrt()
        }
        let mut rng = SplitMix64::new(31);
        for _ in 0..20 {
            let n = 30;
            let x: Vec<f64> = (0..n).map(|_| (rng.below(6) as f64) * 0.5).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let (rho, _) = spearman(&x, &y).unwrap();
            let o = oracle_spearman(&x, &y);
            assert!((rho - o).abs() < 1e-9, "{rho} vs {o}");
        }
    }

    #[test]
    fn gradient_report_monotone_construction() {
        // Build embeddings that move linearly away from the healthy axis as
        // dose grows; rho must be exactly 1 for the treated class.
        let mut reps = Vec::new();
        let mut labels = Vec::new();
        let mut doses = Vec::new();
        for i in 0..4 {
            reps.extend_from_slice(&[1.0, 0.001 * i as f64]);
            labels.push(Some("Normal".to_string()));
            doses.push(None);
        }
        for (i, dose) in [0.5, 1.0, 2.0, 4.0].iter().enumerate() {
            let angle = 0.2 + 0.3 * i as f64;
            reps.extend_from_slice(&[angle.cos(), angle.sin()]);
            labels.push(Some("Treated".to_string()));
            doses.push(Some(*dose));
        }
        let e = EmbeddingSet::new(
            (0..8).map(|i| format!("s{i}")).collect(),
            Array2::from_shape_vec((8, 2), reps).unwrap(),
            labels,
            doses,
        )
        .unwrap();
        let report = concentration_gradient(&e, "Normal").unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].class, "Treated");
        assert!((report[0].spearman_rho - 1.0).abs() < 1e-12);
        assert!(!report[0].degenerate);
        assert_eq!(report[0].n_levels, 4);

        assert!(matches!(
            concentration_gradient(&e, "NoSuchClass"),
            Err(Error::ClassMismatch(_))
        ));
    }

    #[test]
    fn gradient_skips_classes_with_few_levels() {
        let e = EmbeddingSet::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            Array2::from_shape_vec((4, 2), vec![1.0, 0.0, 0.9, 0.1, 0.8, 0.2, 0.7, 0.3]).unwrap(),
            vec![
                Some("Normal".into()),
                Some("T".into()),
                Some("T".into()),
                Some("T".into()),
            ],
            vec![None, Some(1.0), Some(1.0), Some(2.0)],
        )
        .unwrap();
        assert!(concentration_gradient(&e, "Normal").unwrap().is_empty());
    }

    #[test]
    fn auroc_separable_and_tied() {
        assert_eq!(auroc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.2], &[0.9, 0.8]).unwrap(), 0.0);
        assert_eq!(auroc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert!(auroc(&[], &[0.1]).is_err());
    }

    #[test]
    fn scale_invariance_of_direction_consumers() {
        let e = random_set(48, 40, 6, 4);
        let mut scaled = e.clone();
        let mut rng = SplitMix64::new(7);
        for i in 0..scaled.len() {
            let s = 0.1 + 5.0 * rng.next_f64();
            for d in 0..scaled.dim() {
                scaled.reps[[i, d]] *= s;
            }
        }
        let centers = class_centers(&e).unwrap();
        // Per-row rescaling leaves every normalized-direction consumer
        // unchanged within 1e-9.
        let a = pairwise_stats(&e).unwrap();
        let b = pairwise_stats(&scaled).unwrap();
        assert!((a.min - b.min).abs() < 1e-9);
        assert!((a.mean - b.mean).abs() < 1e-9);
        assert!((a.max - b.max).abs() < 1e-9);
        let ma = mean_similarity_matrix(&e, &centers).unwrap();
        let mb = mean_similarity_matrix(&scaled, &centers).unwrap();
        for l in 0..4 {
            for k in 0..4 {
                assert!((ma.get(l, k) - mb.get(l, k)).abs() < 1e-9);
            }
        }
        let da = drift_score(&e, &centers).unwrap();
        let db = drift_score(&scaled, &centers).unwrap();
        assert!((da - db).abs() < 1e-9);
        // Uniform scaling also leaves the center directions unchanged.
        let uniform = {
            let mut u = e.clone();
            u.reps.mapv_inplace(|v| v * 3.25);
            u
        };
        let cu = class_centers(&uniform).unwrap();
        for k in 0..4 {
            for d in 0..e.dim() {
                assert!((cu.normalized[[k, d]] - centers.normalized[[k, d]]).abs() < 1e-9);
            }
        }
    }
}
