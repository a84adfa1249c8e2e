use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::predict;
use crate::error::{Error, Result};
use crate::geometry::IGNORE_LABEL;
use crate::nets::Model;
use crate::scene::Dataset;

/// Which predictions become pseudo-labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoSource {
    /// 2D labels from the 2D branch, 3D labels from the 3D branch.
    #[default]
    Branch,
    /// Argmax of the averaged distributions, for both branches.
    Fused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub labels_2d: Vec<i32>,
    pub labels_3d: Vec<i32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub keep_fraction: f64,
    pub source: PseudoSource,
    pub samples: Vec<PseudoLabels>,
}

impl PseudoLabelSet {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        crate::codec::Writer { buf: text.into_bytes() }.write_to(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = crate::codec::read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            offset: e.column() as u64,
            msg: format!("{}: {e}", path.display()),
        })
    }

    /// Checks that the labels line up with a dataset.
    pub fn check_against(&self, dataset: &Dataset) -> Result<()> {
        if self.samples.len() != dataset.len() {
            return Err(Error::Consistency(format!(
                "{} pseudo-labeled samples for a dataset of {}",
                self.samples.len(),
                dataset.len()
            )));
        }
        for (i, (p, s)) in self.samples.iter().zip(&dataset.samples).enumerate() {
            if p.labels_2d.len() != s.num_points() || p.labels_3d.len() != s.num_points() {
                return Err(Error::Consistency(format!("sample {i}: pseudo-label count differs from point count")));
            }
        }
        Ok(())
    }
}

fn check_keep(keep: f64) -> Result<()> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::Config(format!("keep_fraction must be in (0, 1], got {keep}")));
    }
    Ok(())
}

/// Per class, keeps the `ceil(keep·n)` most confident of the `n` points
/// predicted as that class (ties to the lower index); the rest become
/// [`IGNORE_LABEL`].
pub fn filter_by_class(preds: &[(usize, f32)], keep: f64, num_classes: usize) -> Result<Vec<i32>> {
    check_keep(keep)?;
    let mut out = vec![IGNORE_LABEL; preds.len()];
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &(c, _)) in preds.iter().enumerate() {
        by_class
            .get_mut(c)
            .ok_or_else(|| Error::Domain(format!("predicted class {c} outside 0..{num_classes}")))?
            .push(i);
    }
    for (c, mut idx) in by_class.into_iter().enumerate() {
        idx.sort_by(|&a, &b| preds[b].1.total_cmp(&preds[a].1).then(a.cmp(&b)));
        let n = ((keep * idx.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        for &i in &idx[..n.min(idx.len())] {
            out[i] = c as i32;
        }
    }
    Ok(out)
}

fn argmax_conf(probs: &[f32], c: usize) -> Vec<(usize, f32)> {
    probs
        .chunks(c)
        .map(|row| {
            let k = super::metrics::argmax(row);
            (k, row[k])
        })
        .collect()
}

/// Pseudo-labels for an unlabeled dataset from a trained model. Selection is
/// per class over all points of the dataset.
pub fn generate_pseudo_labels(
    model: &Model,
    target: &Dataset,
    keep_fraction: f64,
    source: PseudoSource,
) -> Result<PseudoLabelSet> {
    check_keep(keep_fraction)?;
    if target.is_empty() {
        return Err(Error::usage("cannot pseudo-label an empty dataset"));
    }
    let c = model.config.num_classes;
    let preds = predict(model, target, 8)?;
    let counts: Vec<usize> = target.samples.iter().map(|s| s.num_points()).collect();
    let split = |flat: Vec<i32>| -> Vec<Vec<i32>> {
        let mut it = flat.into_iter();
        counts.iter().map(|&n| it.by_ref().take(n).collect()).collect()
    };
    let (l2, l3) = match source {
        PseudoSource::Branch => {
            let p2: Vec<_> = preds.iter().flat_map(|p| argmax_conf(&p.probs_2d, c)).collect();
            let p3: Vec<_> = preds.iter().flat_map(|p| argmax_conf(&p.probs_3d, c)).collect();
            (filter_by_class(&p2, keep_fraction, c)?, filter_by_class(&p3, keep_fraction, c)?)
        }
        PseudoSource::Fused => {
            let mut pf = Vec::new();
            for p in &preds {
                pf.extend(argmax_conf(&p.probs_avg(c)?, c));
            }
            let l = filter_by_class(&pf, keep_fraction, c)?;
            (l.clone(), l)
        }
    };
    let samples = split(l2)
        .into_iter()
        .zip(split(l3))
        .map(|(labels_2d, labels_3d)| PseudoLabels { labels_2d, labels_3d })
        .collect();
    Ok(PseudoLabelSet {
        keep_fraction,
        source,
        samples,
    })
}
