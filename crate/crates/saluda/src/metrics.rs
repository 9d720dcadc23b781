//! Segmentation metrics: confusion matrix with global accumulation,
//! per-class IoU / mIoU / frequency-weighted IoU, and per-distance-band
//! evaluation of a trained network on raw points.

use crate::error::{Error, Result};
use crate::geom::cloud::PointCloud;
use crate::geom::voxel::voxel_downsample;
use crate::model::forward::{backbone_on_geometry, cls_forward};
use crate::model::features::prepare_geometry;
use crate::model::state::NetworkState;
use crate::nn::batchnorm::BnMode;
use serde::{Deserialize, Serialize};

/// C x C counts, rows = ground truth, columns = prediction. Ignore-labeled
/// points never enter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    ignore_id: u16,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize, ignore_id: u16) -> Self {
        ConfusionMatrix { classes, ignore_id, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn gt_count(&self, class: usize) -> u64 {
        self.counts[class * self.classes..(class + 1) * self.classes].iter().sum()
    }

    pub fn accumulate(&mut self, predictions: &[u16], labels: &[u16]) -> Result<()> {
        if predictions.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        for (&pred, &gt) in predictions.iter().zip(labels) {
            if gt == self.ignore_id {
                continue;
            }
            if gt as usize >= self.classes || pred as usize >= self.classes {
                return Err(Error::Data(format!(
                    "class out of range: gt {gt}, pred {pred}, {} classes",
                    self.classes
                )));
            }
            self.counts[gt as usize * self.classes + pred as usize] += 1;
        }
        Ok(())
    }

    /// Shard merge; accumulation is associative.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes || other.ignore_id != self.ignore_id {
            return Err(Error::Dimension("confusion matrix shape mismatch".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// IoU per class; None where TP + FP + FN = 0 (class absent from both
    /// ground truth and predictions).
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.count(c, c);
                let fp: u64 = (0..self.classes).filter(|&g| g != c).map(|g| self.count(g, c)).sum();
                let fngt: u64 =
                    (0..self.classes).filter(|&p| p != c).map(|p| self.count(c, p)).sum();
                let denom = tp + fp + fngt;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean over classes with a defined IoU.
    pub fn miou(&self) -> Result<f64> {
        let defined: Vec<f64> = self.iou_per_class().into_iter().flatten().collect();
        if defined.is_empty() {
            return Err(Error::Data("no class has a defined IoU".into()));
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }

    /// Per-class IoU weighted by ground-truth frequency.
    pub fn fw_iou(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Data("empty confusion matrix".into()));
        }
        let ious = self.iou_per_class();
        let mut value = 0.0;
        for c in 0..self.classes {
            let weight = self.gt_count(c) as f64 / total as f64;
            if let Some(iou) = ious[c] {
                value += weight * iou;
            }
        }
        Ok(value)
    }
}

fn default_bands() -> Vec<[f64; 2]> {
    vec![[0.0, 7.5], [7.5, 15.0], [15.0, 30.0], [30.0, 50.0]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Half-open [lo, hi) distance bands in meters from the sensor origin.
    pub bands: Vec<[f64; 2]>,
    /// Measure band distance in the ground plane instead of full 3D range.
    pub horizontal_distance: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { bands: default_bands(), horizontal_distance: false }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        let mut last = f64::NEG_INFINITY;
        for b in &self.bands {
            if b[1] <= b[0] || b[0] < last {
                return Err(Error::Config("distance bands must be sorted and disjoint".into()));
            }
            last = b[1];
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BandReport {
    pub lo: f64,
    pub hi: f64,
    pub points: u64,
    pub miou: Option<f64>,
}

/// JSON-facing metric summary.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub fw_iou: f64,
    pub evaluated_points: u64,
    pub bands: Vec<BandReport>,
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub global: ConfusionMatrix,
    pub band_matrices: Vec<ConfusionMatrix>,
}

/// Argmax class per row, ties toward the smaller id.
pub fn argmax_rows(probs: &crate::nn::tensor::Tensor) -> Result<Vec<u16>> {
    let (n, c) = probs.dims2()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = &probs.data()[i * c..(i + 1) * c];
        let mut best = 0usize;
        for k in 1..c {
            if row[k] > row[best] {
                best = k;
            }
        }
        out.push(best as u16);
    }
    Ok(out)
}

/// Predict a class for every raw point of a frame: downsample, run the
/// frozen network on representatives, project predictions back through the
/// voxel mapping.
pub fn predict_frame(
    net: &mut NetworkState,
    cloud: &PointCloud,
    voxel_size: f64,
) -> Result<Vec<u16>> {
    let (down, mapping) = voxel_downsample(cloud, voxel_size)?;
    let geometry = prepare_geometry(&down, &net.config)?;
    let latents = backbone_on_geometry(net, &geometry, cloud.frame_id, BnMode::EvalFrozen)?;
    let probs = cls_forward(net, &latents)?;
    let rep_preds = argmax_rows(&probs)?;
    Ok(mapping.iter().map(|&rep| rep_preds[rep as usize]).collect())
}

/// Full evaluation over labeled frames: global matrix plus one matrix per
/// distance band, all on raw points.
pub fn evaluate(
    net: &mut NetworkState,
    frames: &[PointCloud],
    voxel_size: f64,
    ignore_id: u16,
    options: &EvalOptions,
) -> Result<EvalOutcome> {
    options.validate()?;
    let classes = net.config.class_count;
    let mut global = ConfusionMatrix::new(classes, ignore_id);
    let mut band_matrices: Vec<ConfusionMatrix> =
        options.bands.iter().map(|_| ConfusionMatrix::new(classes, ignore_id)).collect();
    for frame in frames {
        let labels = frame
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data(format!("frame {} has no labels", frame.frame_id)))?;
        let preds = predict_frame(net, frame, voxel_size)?;
        global.accumulate(&preds, labels)?;
        for (bi, band) in options.bands.iter().enumerate() {
            let mut band_preds = Vec::new();
            let mut band_labels = Vec::new();
            for (i, &p) in frame.positions.iter().enumerate() {
                let c = frame.sensor_origin;
                let d = if options.horizontal_distance {
                    ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()
                } else {
                    ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt()
                };
                if d >= band[0] && d < band[1] {
                    band_preds.push(preds[i]);
                    band_labels.push(labels[i]);
                }
            }
            band_matrices[bi].accumulate(&band_preds, &band_labels)?;
        }
    }
    let report = EvalReport {
        class_iou: global.iou_per_class(),
        miou: global.miou()?,
        fw_iou: global.fw_iou()?,
        evaluated_points: global.total(),
        bands: options
            .bands
            .iter()
            .zip(&band_matrices)
            .map(|(b, cm)| BandReport {
                lo: b[0],
                hi: b[1],
                points: cm.total(),
                miou: cm.miou().ok(),
            })
            .collect(),
    };
    Ok(EvalOutcome { report, global, band_matrices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const IGNORE: u16 = u16::MAX;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let mut cm = ConfusionMatrix::new(3, IGNORE);
        cm.accumulate(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap();
        for g in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.count(g, p), if g == p { [1, 2, 1][g] } else { 0 });
            }
        }
        assert_eq!(cm.miou().unwrap(), 1.0);
        assert_eq!(cm.fw_iou().unwrap(), 1.0);
    }

    #[test]
    fn ignored_labels_change_nothing() {
        let mut cm = ConfusionMatrix::new(3, IGNORE);
        cm.accumulate(&[0, 1, 2], &[IGNORE, IGNORE, IGNORE]).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(cm.miou().is_err());
    }

    #[test]
    fn out_of_range_class_is_an_error() {
        let mut cm = ConfusionMatrix::new(3, IGNORE);
        assert!(cm.accumulate(&[3], &[0]).is_err());
        assert!(cm.accumulate(&[0], &[7]).is_err());
    }

    #[test]
    fn textbook_two_class_case() {
        // gt class 0: 5 points all predicted 0; gt class 1: 5 points all
        // predicted 0 => IoU = [0.5, 0], mIoU = 0.25
        let mut cm = ConfusionMatrix::new(2, IGNORE);
        cm.accumulate(&[0; 10], &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]).unwrap();
        assert_eq!(cm.iou_per_class(), vec![Some(0.5), Some(0.0)]);
        assert_eq!(cm.miou().unwrap(), 0.25);
        // fw-IoU: both classes weigh 0.5 -> 0.25 as well
        assert_eq!(cm.fw_iou().unwrap(), 0.25);
    }

    #[test]
    fn absent_class_is_excluded_from_the_mean() {
        let mut cm = ConfusionMatrix::new(3, IGNORE);
        cm.accumulate(&[0, 1], &[0, 1]).unwrap();
        assert_eq!(cm.iou_per_class()[2], None);
        assert_eq!(cm.miou().unwrap(), 1.0);
    }

    #[test]
    fn single_class_half_iou_fixture() {
        // one class in gt, predictions half right into a second class
        let mut cm = ConfusionMatrix::new(2, IGNORE);
        cm.accumulate(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        // class 0: tp 2, fn 2, fp 0 -> 0.5; class 1: tp 0, fp 2 -> 0.0
        assert!((cm.fw_iou().unwrap() - 0.5).abs() < 1e-12, "all weight on class 0");
    }

    fn random_pairs(n: usize, classes: u16, seed: u64) -> (Vec<u16>, Vec<u16>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let preds = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let labels = (0..n)
            .map(|_| if rng.gen_bool(0.1) { IGNORE } else { rng.gen_range(0..classes) })
            .collect();
        (preds, labels)
    }

    #[test]
    fn twenty_random_fixtures_match_brute_force() {
        for seed in 0..20 {
            let classes = 2 + (seed % 5) as usize;
            let (preds, labels) = random_pairs(400, classes as u16, seed);
            let mut cm = ConfusionMatrix::new(classes, IGNORE);
            cm.accumulate(&preds, &labels).unwrap();

            // brute force straight from the pairs
            let mut ious = Vec::new();
            let mut total = 0u64;
            for c in 0..classes as u16 {
                let tp = preds
                    .iter()
                    .zip(&labels)
                    .filter(|&(&p, &l)| l != IGNORE && p == c && l == c)
                    .count() as u64;
                let fp = preds
                    .iter()
                    .zip(&labels)
                    .filter(|&(&p, &l)| l != IGNORE && p == c && l != c)
                    .count() as u64;
                let fngt = preds
                    .iter()
                    .zip(&labels)
                    .filter(|&(&p, &l)| l == c && p != c)
                    .count() as u64;
                ious.push(if tp + fp + fngt > 0 {
                    Some(tp as f64 / (tp + fp + fngt) as f64)
                } else {
                    None
                });
                total += labels.iter().filter(|&&l| l == c).count() as u64;
            }
            assert_eq!(cm.iou_per_class(), ious);
            let defined: Vec<f64> = ious.iter().flatten().copied().collect();
            let brute_miou = defined.iter().sum::<f64>() / defined.len() as f64;
            assert_eq!(cm.miou().unwrap(), brute_miou);
            let brute_fw: f64 = (0..classes)
                .map(|c| {
                    let w = labels.iter().filter(|&&l| l == c as u16).count() as f64
                        / total as f64;
                    w * ious[c].unwrap_or(0.0)
                })
                .sum();
            assert!((cm.fw_iou().unwrap() - brute_fw).abs() < 1e-12);
        }
    }

    #[test]
    fn shard_merge_equals_single_pass() {
        let (preds, labels) = random_pairs(999, 5, 77);
        let mut single = ConfusionMatrix::new(5, IGNORE);
        single.accumulate(&preds, &labels).unwrap();
        let mut merged = ConfusionMatrix::new(5, IGNORE);
        for chunk in 0..3 {
            let lo = chunk * 333;
            let mut shard = ConfusionMatrix::new(5, IGNORE);
            shard.accumulate(&preds[lo..lo + 333], &labels[lo..lo + 333]).unwrap();
            merged.merge(&shard).unwrap();
        }
        assert_eq!(single, merged);
    }

    #[test]
    fn fw_iou_never_exceeds_best_class() {
        let (preds, labels) = random_pairs(500, 4, 5);
        let mut cm = ConfusionMatrix::new(4, IGNORE);
        cm.accumulate(&preds, &labels).unwrap();
        let best = cm.iou_per_class().into_iter().flatten().fold(0.0f64, f64::max);
        assert!(cm.fw_iou().unwrap() <= best + 1e-12);
        let miou = cm.miou().unwrap();
        assert!((0.0..=1.0).contains(&miou));
    }

    #[test]
    fn bad_band_configs_are_rejected() {
        let opts = EvalOptions { bands: vec![[0.0, 5.0], [4.0, 8.0]], horizontal_distance: false };
        assert!(opts.validate().is_err());
        let opts = EvalOptions { bands: vec![[3.0, 3.0]], horizontal_distance: false };
        assert!(opts.validate().is_err());
        assert!(EvalOptions::default().validate().is_ok());
    }

    #[test]
    fn default_bands_match_the_reporting_convention() {
        assert_eq!(
            EvalOptions::default().bands,
            vec![[0.0, 7.5], [7.5, 15.0], [15.0, 30.0], [30.0, 50.0]]
        );
    }

    #[test]
    fn bands_partition_the_global_matrix() {
        use crate::geom::cloud::{Domain, PointCloud};
        use crate::model::state::{ModelConfig, NetworkState};

        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut frames = Vec::new();
        for frame_id in 0..3 {
            let n = 160;
            let positions: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    let r = rng.gen_range(0.5..12.0);
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    [r * a.cos(), r * a.sin(), rng.gen_range(-1.0..3.0)]
                })
                .collect();
            let labels = (0..n).map(|_| rng.gen_range(0..4u16)).collect();
            frames.push(PointCloud {
                positions,
                sensor_origin: [0.0, 0.0, 1.5],
                labels: Some(labels),
                domain: Domain::Target,
                frame_id,
            });
        }

        let config = ModelConfig { class_count: 4, ..ModelConfig::default() };
        let mut net = NetworkState::init(config, 11).unwrap();
        // bands chosen to cover every point, so they partition the points
        let options = EvalOptions {
            bands: vec![[0.0, 4.0], [4.0, 9.0], [9.0, 50.0]],
            horizontal_distance: false,
        };
        let outcome = evaluate(&mut net, &frames, 0.4, IGNORE, &options).unwrap();

        let mut recombined = ConfusionMatrix::new(4, IGNORE);
        for cm in &outcome.band_matrices {
            recombined.merge(cm).unwrap();
        }
        assert_eq!(recombined, outcome.global);
        assert_eq!(
            outcome.report.evaluated_points,
            outcome.report.bands.iter().map(|b| b.points).sum::<u64>()
        );

        // horizontal flag changes the banding but not the global matrix
        let horizontal = EvalOptions {
            bands: vec![[0.0, 4.0], [4.0, 9.0], [9.0, 50.0]],
            horizontal_distance: true,
        };
        let outcome_h = evaluate(&mut net, &frames, 0.4, IGNORE, &horizontal).unwrap();
        assert_eq!(outcome_h.global, outcome.global);
        assert_ne!(
            outcome_h.report.bands.iter().map(|b| b.points).collect::<Vec<_>>(),
            outcome.report.bands.iter().map(|b| b.points).collect::<Vec<_>>()
        );
    }

    #[test]
    fn prediction_projection_covers_every_raw_point() {
        use crate::geom::cloud::{Domain, PointCloud};
        use crate::model::state::{ModelConfig, NetworkState};

        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let n = 300;
        let positions: Vec<[f64; 3]> =
            (0..n).map(|_| [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), 0.0]).collect();
        let cloud = PointCloud {
            positions,
            sensor_origin: [0.0, 0.0, 1.0],
            labels: None,
            domain: Domain::Source,
            frame_id: 0,
        };
        let config = ModelConfig { class_count: 3, ..ModelConfig::default() };
        let mut net = NetworkState::init(config, 4).unwrap();
        let preds = predict_frame(&mut net, &cloud, 0.5).unwrap();
        assert_eq!(preds.len(), n);
        assert!(preds.iter().all(|&p| p < 3));
        // frozen network, same input -> identical output
        let again = predict_frame(&mut net, &cloud, 0.5).unwrap();
        assert_eq!(preds, again);
    }

    #[test]
    fn argmax_breaks_ties_toward_smaller_class() {
        let probs = crate::nn::tensor::Tensor::new(
            vec![2, 3],
            vec![0.4, 0.4, 0.2, 0.1, 0.2, 0.7],
        )
        .unwrap();
        assert_eq!(argmax_rows(&probs).unwrap(), vec![0, 2]);
    }
}
