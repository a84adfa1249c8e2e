use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{argmax, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::nets::{fuse, Batch, Input, Model};
use crate::scene::{Dataset, CLASS_NAMES};
use crate::tensor::Tensor;

/// Softmax outputs of one sample, row-major `[N, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePrediction {
    pub probs_2d: Vec<f32>,
    pub probs_3d: Vec<f32>,
    pub probs_fusion: Option<Vec<f32>>,
}

impl SamplePrediction {
    /// Mean of the two branch distributions.
    pub fn probs_avg(&self, num_classes: usize) -> Result<Vec<f32>> {
        let n = self.probs_2d.len() / num_classes.max(1);
        let a = Tensor::new(&[n, num_classes], self.probs_2d.clone())?;
        let b = Tensor::new(&[n, num_classes], self.probs_3d.clone())?;
        Ok(fuse(&a, &b)?.to_vec())
    }
}

/// Inference over a dataset in batches of `batch_size` samples.
pub fn predict(model: &Model, dataset: &Dataset, batch_size: usize) -> Result<Vec<SamplePrediction>> {
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in dataset.samples.chunks(batch_size.max(1)) {
        let inputs = chunk.iter().map(Input::from_sample).collect::<Result<Vec<_>>>()?;
        let batch = Batch::new(&inputs, &model.config)?;
        let f = model.infer(&batch)?;
        let p2 = f.out2d.main_logits.softmax(1)?;
        let p3 = f.out3d.main_logits.softmax(1)?;
        let pf = f.fusion_logits.as_ref().map(|l| l.softmax(1)).transpose()?;
        let c = model.config.num_classes;
        for r in &batch.ranges {
            let s = r.start * c..r.end * c;
            out.push(SamplePrediction {
                probs_2d: p2.data()[s.clone()].to_vec(),
                probs_3d: p3.data()[s.clone()].to_vec(),
                probs_fusion: pf.as_ref().map(|p| p.data()[s.clone()].to_vec()),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamScore {
    pub stream: String,
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub classes: Vec<String>,
    pub points: u64,
    pub streams: Vec<StreamScore>,
}

impl Report {
    pub fn stream(&self, name: &str) -> Option<&StreamScore> {
        self.streams.iter().find(|s| s.stream == name)
    }

    /// mIoU of a stream in percent.
    pub fn miou(&self, name: &str) -> f64 {
        self.stream(name).map_or(f64::NAN, |s| 100.0 * s.miou)
    }

    /// Plain-text table: one row per stream, per-class IoU then mIoU (percent).
    pub fn to_table(&self) -> String {
        let mut t = String::new();
        let _ = write!(t, "{:<8}", "stream");
        for c in &self.classes {
            let _ = write!(t, " {c:>10}");
        }
        let _ = writeln!(t, " {:>8}", "mIoU");
        for s in &self.streams {
            let _ = write!(t, "{:<8}", s.stream);
            for v in &s.iou {
                match v {
                    Some(v) => {
                        let _ = write!(t, " {:>10.2}", 100.0 * v);
                    }
                    None => {
                        let _ = write!(t, " {:>10}", "-");
                    }
                }
            }
            let _ = writeln!(t, " {:>8.2}", 100.0 * s.miou);
        }
        t
    }
}

fn class_names(c: usize) -> Vec<String> {
    (0..c)
        .map(|k| CLASS_NAMES.get(k).map_or_else(|| format!("class{k}"), |s| s.to_string()))
        .collect()
}

/// Scores the 2D, 3D and Avg streams (and the fusion head when present)
/// against the dataset labels.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<Report> {
    let preds = predict(model, dataset, 8)?;
    score(&preds, dataset, model.config.num_classes)
}

/// Scores precomputed predictions.
pub fn score(preds: &[SamplePrediction], dataset: &Dataset, c: usize) -> Result<Report> {
    let has_fusion = preds.first().is_some_and(|p| p.probs_fusion.is_some());
    let names: Vec<&str> = if has_fusion {
        vec!["2D", "3D", "Avg", "Fusion"]
    } else {
        vec!["2D", "3D", "Avg"]
    };
    let mut cms = vec![ConfusionMatrix::new(c); names.len()];
    for (p, s) in preds.iter().zip(&dataset.samples) {
        let Some(labels) = s.labels() else { continue };
        let avg = p.probs_avg(c)?;
        let mut tables = vec![&p.probs_2d, &p.probs_3d, &avg];
        if let Some(f) = &p.probs_fusion {
            tables.push(f);
        }
        for (cm, probs) in cms.iter_mut().zip(tables) {
            let pred: Vec<usize> = probs.chunks(c).map(argmax).collect();
            cm.add(labels, &pred)?;
        }
    }
    let points = cms[0].total();
    if points == 0 {
        return Err(Error::usage("dataset has no labeled points to evaluate"));
    }
    let streams = names
        .iter()
        .zip(cms)
        .map(|(n, cm)| StreamScore {
            stream: n.to_string(),
            iou: cm.iou(),
            miou: cm.miou().unwrap_or(0.0),
            confusion: cm,
        })
        .collect();
    Ok(Report {
        classes: class_names(c),
        points,
        streams,
    })
}
