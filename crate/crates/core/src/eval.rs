//! Thresholding, confusion counts, Acc/Sen/Spe, and ROC/AUC.

use crate::error::{Error, Result};
use crate::imgio::{GrayImage, MaskImage, RangeTag};

/// Pixel-level confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.true_neg += other.true_neg;
        self.false_neg += other.false_neg;
    }
}

/// Binarizes a probability map: pixel is 1 iff `prob >= t`.
pub fn apply_threshold(prob: &GrayImage, t: f64) -> Result<MaskImage> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("threshold must lie in [0,1], got {t}")));
    }
    if prob.range() != RangeTag::Unit {
        return Err(Error::Config("thresholding requires a unit-range map".into()));
    }
    let pixels = prob.pixels().iter().map(|&v| (v >= t) as u8).collect();
    MaskImage::new(prob.width(), prob.height(), pixels)
}

/// Pixel confusion counts over the ROI (or the whole image).
pub fn confusion(
    pred: &MaskImage,
    truth: &MaskImage,
    roi: Option<&MaskImage>,
) -> Result<ConfusionCounts> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::Shape(format!(
            "prediction {}x{} does not match truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    if let Some(r) = roi {
        if r.width() != pred.width() || r.height() != pred.height() {
            return Err(Error::Shape("roi does not match image dimensions".into()));
        }
    }
    let mut c = ConfusionCounts::default();
    for i in 0..pred.pixels().len() {
        if let Some(r) = roi {
            if r.pixels()[i] == 0 {
                continue;
            }
        }
        match (pred.pixels()[i], truth.pixels()[i]) {
            (1, 1) => c.true_pos += 1,
            (1, 0) => c.false_pos += 1,
            (0, 0) => c.true_neg += 1,
            (0, 1) => c.false_neg += 1,
            _ => unreachable!("masks are binary"),
        }
    }
    Ok(c)
}

/// Accuracy, sensitivity, and specificity. A zero denominator yields
/// `None` (an explicit undefined marker) rather than NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub acc: f64,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Config("no pixels were evaluated".into()));
    }
    let acc = (c.true_pos + c.true_neg) as f64 / total as f64;
    let pos = c.true_pos + c.false_neg;
    let neg = c.true_neg + c.false_pos;
    Ok(Metrics {
        acc,
        sen: (pos > 0).then(|| c.true_pos as f64 / pos as f64),
        spe: (neg > 0).then(|| c.true_neg as f64 / neg as f64),
    })
}

/// ROC curve swept over unique score thresholds, from (0,0) to (1,1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Unique thresholds, descending; point `i+1` classifies
    /// `score >= thresholds[i]` as positive.
    pub thresholds: Vec<f64>,
    /// (fpr, tpr) pairs, starting at (0,0) and ending at (1,1).
    pub points: Vec<(f64, f64)>,
}

/// ROC curve and trapezoidal AUC. Equal scores collapse into one sweep
/// step, so the AUC equals the Mann-Whitney statistic
/// `P(score+ > score-) + P(tie)/2`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(RocCurve, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Config("scores must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = Vec::new();
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(s);
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    debug_assert_eq!(*points.last().expect("nonempty"), (1.0, 1.0));

    let mut auc = 0.0;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok((RocCurve { thresholds, points }, auc))
}

/// Renders metrics the way the evaluation tables print them: four
/// fixed-point decimals, `-` for undefined values.
pub fn format_metrics_line(m: &Metrics, auc: Option<f64>) -> String {
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    };
    format!("{:.4} {} {} {}", m.acc, fmt(m.sen), fmt(m.spe), fmt(auc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(w: usize, h: usize, px: Vec<u8>) -> MaskImage {
        MaskImage::new(w, h, px).unwrap()
    }

    #[test]
    fn threshold_extremes_and_boundary() {
        let prob = GrayImage::new(3, 1, vec![0.2, 0.5, 0.8], RangeTag::Unit).unwrap();
        assert_eq!(apply_threshold(&prob, 0.0).unwrap().pixels(), &[1, 1, 1]);
        assert_eq!(apply_threshold(&prob, 1.0).unwrap().pixels(), &[0, 0, 0]);
        // The boundary is inclusive.
        assert_eq!(apply_threshold(&prob, 0.5).unwrap().pixels(), &[0, 1, 1]);
        assert!(apply_threshold(&prob, 1.5).is_err());
    }

    #[test]
    fn threshold_is_monotone_in_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prob = GrayImage::new(
            8,
            8,
            (0..64).map(|_| rng.random::<f64>()).collect(),
            RangeTag::Unit,
        )
        .unwrap();
        let mut prev = apply_threshold(&prob, 0.0).unwrap();
        for i in 1..=10 {
            let cur = apply_threshold(&prob, i as f64 / 10.0).unwrap();
            for (a, b) in cur.pixels().iter().zip(prev.pixels()) {
                assert!(a <= b, "raising t turned a 0 into 1");
            }
            prev = cur;
        }
    }

    #[test]
    fn confusion_perfect_and_inverted() {
        let truth = mask(2, 2, vec![1, 0, 1, 0]);
        let c = confusion(&truth, &truth, None).unwrap();
        assert_eq!((c.false_pos, c.false_neg), (0, 0));
        assert_eq!((c.true_pos, c.true_neg), (2, 2));

        let inverted = mask(2, 2, vec![0, 1, 0, 1]);
        let c = confusion(&inverted, &truth, None).unwrap();
        assert_eq!((c.true_pos, c.true_neg), (0, 0));
    }

    #[test]
    fn confusion_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<u8> = (0..64).map(|_| (rng.random::<f64>() < 0.4) as u8).collect();
        let b: Vec<u8> = (0..64).map(|_| (rng.random::<f64>() < 0.5) as u8).collect();
        let roi: Vec<u8> = (0..64).map(|_| (rng.random::<f64>() < 0.8) as u8).collect();
        let pred = mask(8, 8, a.clone());
        let truth = mask(8, 8, b.clone());
        let roi_mask = mask(8, 8, roi.clone());
        let c = confusion(&pred, &truth, Some(&roi_mask)).unwrap();

        let (mut tp, mut fp, mut tn, mut fneg) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..64 {
            if roi[i] == 0 {
                continue;
            }
            match (a[i], b[i]) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 0) => tn += 1,
                _ => fneg += 1,
            }
        }
        assert_eq!(
            (c.true_pos, c.false_pos, c.true_neg, c.false_neg),
            (tp, fp, tn, fneg)
        );
    }

    #[test]
    fn confusion_rejects_dimension_mismatch() {
        let a = mask(2, 2, vec![0; 4]);
        let b = mask(2, 3, vec![0; 6]);
        assert!(confusion(&a, &b, None).is_err());
    }

    #[test]
    fn metrics_arithmetic() {
        let c = ConfusionCounts {
            true_pos: 3,
            false_pos: 1,
            true_neg: 3,
            false_neg: 1,
        };
        let m = metrics(&c).unwrap();
        assert_eq!(m.acc, 0.75);
        assert_eq!(m.sen, Some(0.75));
        assert_eq!(m.spe, Some(0.75));
    }

    #[test]
    fn metrics_perfect_sensitivity_and_undefined_marker() {
        let c = ConfusionCounts {
            true_pos: 5,
            false_pos: 2,
            true_neg: 3,
            false_neg: 0,
        };
        assert_eq!(metrics(&c).unwrap().sen, Some(1.0));

        let no_pos = ConfusionCounts {
            true_pos: 0,
            false_pos: 1,
            true_neg: 3,
            false_neg: 0,
        };
        let m = metrics(&no_pos).unwrap();
        assert_eq!(m.sen, None);
        assert!(metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn metrics_match_published_reference_point() {
        // Counts constructed from the published DRIVE operating point
        // (acc 0.9700, sen 0.7864, spe 0.9876) over a million pixels.
        let c = ConfusionCounts {
            true_pos: 68_794,
            false_neg: 87_480 - 68_794,
            true_neg: 901_205,
            false_pos: 912_520 - 901_205,
        };
        let m = metrics(&c).unwrap();
        let line = format_metrics_line(&m, Some(0.9862));
        assert_eq!(line, "0.9700 0.7864 0.9876 0.9862");
    }

    #[test]
    fn metrics_complement_symmetry() {
        let c = ConfusionCounts {
            true_pos: 10,
            false_pos: 4,
            true_neg: 20,
            false_neg: 6,
        };
        // Complementing both prediction and truth swaps pos/neg roles.
        let comp = ConfusionCounts {
            true_pos: c.true_neg,
            false_pos: c.false_neg,
            true_neg: c.true_pos,
            false_neg: c.false_pos,
        };
        let m = metrics(&c).unwrap();
        let mc = metrics(&comp).unwrap();
        assert_eq!(m.acc, mc.acc);
        assert_eq!(m.sen, mc.spe);
        assert_eq!(m.spe, mc.sen);
    }

    #[test]
    fn auc_perfect_separation_and_ties() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        let (curve, auc) = roc_auc(&scores, &labels).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));

        let tied = [0.5, 0.5, 0.5, 0.5];
        let (_, auc) = roc_auc(&tied, &labels).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn auc_rejects_single_class() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedAuc)
        ));
    }

    #[test]
    fn auc_matches_pairwise_mann_whitney() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..5 {
            let n = 200;
            // Quantized scores force plenty of ties.
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random::<f64>() * 20.0).floor() / 20.0)
                .collect();
            let labels: Vec<bool> = (0..n)
                .map(|i| rng.random::<f64>() < 0.3 + scores[i] * 0.4)
                .collect();
            if labels.iter().all(|&l| l) || !labels.iter().any(|&l| l) {
                continue;
            }
            let (_, auc) = roc_auc(&scores, &labels).unwrap();

            // O(n^2) pairwise oracle.
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                if !labels[i] {
                    continue;
                }
                for j in 0..n {
                    if labels[j] {
                        continue;
                    }
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
            let oracle = wins / pairs;
            assert!((auc - oracle).abs() < 1e-9, "trial {trial}: {auc} vs {oracle}");
        }
    }

    #[test]
    fn roc_curve_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<bool> = (0..100).map(|i| i % 3 == 0).collect();
        let (curve, _) = roc_auc(&scores, &labels).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
    }
}
