use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::augment::augmented_input;
use super::config::TrainConfig;
use super::eval::{evaluate, Report};
use super::loss::{total_loss, LossTerms, LossWeights, StepOutputs, Supervision};
use super::optim::{AdamW, OneCycle};
use super::pseudo::PseudoLabelSet;
use crate::error::{Error, Result};
use crate::nets::{Batch, Input, Model};
use crate::scene::{Dataset, Sample};

/// Endless shuffled index stream; reshuffles on every wrap.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn aug_seed(seed: u64, step: usize, slot: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((step as u64) << 20) ^ slot as u64
}

/// Result of a training run.
pub struct TrainOutcome {
    pub model: Model,
    pub steps: usize,
    pub last_terms: LossTerms,
    /// Target-domain evaluation after training, if the target is labeled.
    pub target_report: Option<Report>,
}

/// Runs one training round.
///
/// * without `[uda]` or a target dataset: source-only segmentation loss;
/// * with both: the full objective on alternating source/target batches,
///   with the pseudo-label term when `pseudo` is given.
///
/// Training always starts from a fresh initialization seeded by
/// `train.seed`. Metrics go to `log` as one JSON object per line.
pub fn train(
    cfg: &TrainConfig,
    source: &Dataset,
    target: Option<&Dataset>,
    pseudo: Option<&PseudoLabelSet>,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::usage("source dataset is empty"));
    }
    for (i, s) in source.samples.iter().enumerate() {
        if s.labels().is_none_or(|l| l.len() != s.num_points()) {
            return Err(Error::usage(format!("source sample {i} has no labels")));
        }
    }
    let uda = cfg.uda.as_ref();
    let target = match (uda, target) {
        (Some(_), Some(t)) if !t.is_empty() => Some(t),
        (Some(_), _) => return Err(Error::Config("[uda] needs a non-empty target dataset".into())),
        (None, _) => None,
    };
    if let Some(u) = uda {
        if u.lambda_t.is_some_and(|l| l > 0.0) && pseudo.is_none() {
            return Err(Error::Config("lambda_t > 0 requires a pseudo-label file".into()));
        }
    }
    if let (Some(p), Some(t)) = (pseudo, target) {
        p.check_against(t)?;
    }
    let weights = match uda {
        Some(u) => u.weights(),
        None => LossWeights {
            lambda_s: 1.0,
            lambda_t: 0.0,
            lambda_xs: 0.0,
            lambda_xt: 0.0,
        },
    };
    let detach = uda.is_none_or(|u| u.detach_target);

    let t = &cfg.train;
    let bs = t.batch_size;
    let longest = source.len().max(target.map_or(0, |d| d.len()));
    let steps_per_epoch = longest.div_ceil(bs);
    let total_steps = steps_per_epoch * t.epochs;
    let schedule = OneCycle {
        peak: t.peak_lr,
        floor: t.floor_lr,
        warmup: t.warmup,
        div: t.div_factor,
        total_steps,
    };

    let mut model = Model::new(cfg.model.clone(), t.seed)?;
    let mut opt = AdamW::new(&model.params, t.weight_decay);
    let mut src_order = Cycler::new(source.len(), stream(t.seed, 10));
    let mut tgt_order = Cycler::new(target.map_or(0, |d| d.len()), stream(t.seed, 11));
    let mut last_terms = LossTerms::default();

    let make_input = |s: &Sample, step: usize, slot: usize| -> Result<Input> {
        if t.augment {
            augmented_input(s, aug_seed(t.seed, step, slot))
        } else {
            Input::from_sample(s)
        }
    };

    for step in 0..total_steps {
        let epoch = step / steps_per_epoch;
        let src_idx: Vec<usize> = (0..bs).map(|_| src_order.next()).collect();
        let src_inputs = src_idx
            .iter()
            .enumerate()
            .map(|(k, &i)| make_input(&source.samples[i], step, k))
            .collect::<Result<Vec<_>>>()?;
        let src_labels: Vec<i32> = src_idx
            .iter()
            .flat_map(|&i| source.samples[i].labels().unwrap_or(&[]).iter().copied())
            .collect();
        let src_batch = Batch::new(&src_inputs, &model.config)?;

        let params = model.params.leaves();
        let src_out = model.forward(&params, &src_batch)?;

        let mut tgt_out = None;
        let mut pseudo_2d = Vec::new();
        let mut pseudo_3d = Vec::new();
        if let Some(tds) = target {
            let idx: Vec<usize> = (0..bs).map(|_| tgt_order.next()).collect();
            let inputs = idx
                .iter()
                .enumerate()
                .map(|(k, &i)| make_input(&tds.samples[i], step, bs + k))
                .collect::<Result<Vec<_>>>()?;
            if let Some(p) = pseudo {
                for &i in &idx {
                    pseudo_2d.extend_from_slice(&p.samples[i].labels_2d);
                    pseudo_3d.extend_from_slice(&p.samples[i].labels_3d);
                }
            }
            let batch = Batch::new(&inputs, &model.config)?;
            tgt_out = Some(model.forward(&params, &batch)?);
        }

        let outputs = StepOutputs {
            source: &src_out,
            source_labels: &src_labels,
            target: tgt_out.as_ref(),
            pseudo: pseudo.map(|_| Supervision {
                labels_2d: &pseudo_2d,
                labels_3d: &pseudo_3d,
            }),
        };
        let (loss, terms) = total_loss(&outputs, &weights, detach)?;
        if !terms.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {step} (epoch {epoch}): {terms:?}"
            )));
        }
        loss.backward()?;
        let grads = params.grads();
        drop(params);
        if let Some((i, _)) = grads
            .iter()
            .enumerate()
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numeric(format!(
                "non-finite gradient in {} at step {step}",
                model.params.entries()[i].name
            )));
        }
        let lr = schedule.lr(step);
        opt.step(&mut model.params, &grads, lr)?;
        last_terms = terms;

        if t.log_every > 0 && (step % t.log_every == 0 || step + 1 == total_steps) {
            let rec = json!({
                "step": step,
                "epoch": epoch,
                "split": "train",
                "lr": lr,
                "loss": terms.total,
                "seg_source": terms.seg_source,
                "seg_target": terms.seg_target,
                "xm_source": terms.xm_source,
                "xm_target": terms.xm_target,
            });
            writeln!(log, "{rec}").map_err(|e| Error::io("metrics log", e))?;
        }
    }

    let target_report = match target {
        Some(t) if t.samples.iter().any(|s| s.labels().is_some()) => {
            let r = evaluate(&model, t)?;
            write_report_record(log, total_steps, "target", &r)?;
            Some(r)
        }
        _ => None,
    };
    Ok(TrainOutcome {
        model,
        steps: total_steps,
        last_terms,
        target_report,
    })
}

/// Appends an evaluation record (per-class IoU and mIoU per stream).
pub fn write_report_record(log: &mut dyn Write, step: usize, split: &str, r: &Report) -> Result<()> {
    let streams: serde_json::Map<String, serde_json::Value> = r
        .streams
        .iter()
        .map(|s| (s.stream.clone(), json!({ "iou": s.iou, "miou": s.miou })))
        .collect();
    let rec = json!({ "step": step, "split": split, "points": r.points, "streams": streams });
    writeln!(log, "{rec}").map_err(|e| Error::io("metrics log", e))
}
