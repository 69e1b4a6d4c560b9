//! Two-level classification: level 1 separates the clearly visible faults
//! from one merged class (normal plus incipient faults); level 2 resolves the
//! merged class, optionally on excited data.

use serde::{Deserialize, Serialize};

use crate::batch::WindowBatch;
use crate::dataio::Scaler;
use crate::error::{FddError, Result};
use crate::metrics::{confusion, EvalReport};
use crate::model::{train_standardized, ModelConfig, TrainedModel};
use crate::softmax::argmax;
use crate::tensor::Tensor2;

/// Original labels to level-1 and level-2 indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    classes: usize,
    normal: usize,
    incipient: Vec<usize>,
    forward: Vec<usize>,
    /// Level-1 index to original label; `None` for the merged class.
    inverse: Vec<Option<usize>>,
    merged: Option<usize>,
}

impl LabelMap {
    /// Merges `normal` and `incipient` into one level-1 class placed at the
    /// position of its lowest member; other classes keep their order. An empty
    /// incipient set gives the identity map.
    pub fn new(classes: usize, normal: usize, incipient: &[usize]) -> Result<Self> {
        if normal >= classes {
            return Err(FddError::Label(format!("normal class {normal} outside [0, {classes})")));
        }
        let mut inc = incipient.to_vec();
        inc.sort_unstable();
        inc.dedup();
        if let Some(&bad) = inc.iter().find(|&&c| c >= classes || c == normal) {
            return Err(FddError::Label(format!(
                "incipient class {bad} is not a fault label in [0, {classes})"
            )));
        }
        let mut forward = vec![0; classes];
        let mut inverse = Vec::new();
        let mut merged = None;
        for (c, slot) in forward.iter_mut().enumerate() {
            let in_group = !inc.is_empty() && (c == normal || inc.contains(&c));
            if in_group {
                let idx = *merged.get_or_insert_with(|| {
                    inverse.push(None);
                    inverse.len() - 1
                });
                *slot = idx;
            } else {
                *slot = inverse.len();
                inverse.push(Some(c));
            }
        }
        Ok(Self {
            classes,
            normal,
            incipient: inc,
            forward,
            inverse,
            merged,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn normal(&self) -> usize {
        self.normal
    }

    pub fn incipient(&self) -> &[usize] {
        &self.incipient
    }

    pub fn level1_classes(&self) -> usize {
        self.inverse.len()
    }

    pub fn merged(&self) -> Option<usize> {
        self.merged
    }

    pub fn to_level1(&self, label: usize) -> usize {
        self.forward[label]
    }

    /// Original label of a level-1 index, `None` for the merged class.
    pub fn from_level1(&self, idx: usize) -> Option<usize> {
        self.inverse[idx]
    }

    /// `[normal, incipient...]`, index-aligned with level-2 outputs.
    pub fn level2_classes(&self) -> Vec<usize> {
        std::iter::once(self.normal).chain(self.incipient.iter().copied()).collect()
    }

    pub fn to_level2(&self, label: usize) -> Option<usize> {
        self.level2_classes().iter().position(|&c| c == label)
    }

    pub fn is_level2(&self, label: usize) -> bool {
        label == self.normal || self.incipient.contains(&label)
    }
}

/// Maps labels to level-1 indices.
pub fn regroup_labels(labels: &[usize], classes: usize, normal: usize, incipient: &[usize]) -> Result<(Vec<usize>, LabelMap)> {
    let map = LabelMap::new(classes, normal, incipient)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(FddError::Label(format!("label {bad} outside [0, {classes})")));
    }
    Ok((labels.iter().map(|&l| map.to_level1(l)).collect(), map))
}

/// The two level models with their scalers.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel {
    pub level1: TrainedModel,
    pub level2: TrainedModel,
    pub scaler1: Scaler,
    pub scaler2: Scaler,
    pub label_map: LabelMap,
}

/// Outcome for one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Routed {
    pub label: usize,
    pub used_level2: bool,
}

impl HierarchicalModel {
    /// Takes each level's scaler from its model.
    pub fn new(level1: TrainedModel, level2: TrainedModel, label_map: LabelMap) -> Result<Self> {
        if level1.config.classes != label_map.level1_classes() {
            return Err(FddError::Config(format!(
                "level-1 model has {} outputs, label map needs {}",
                level1.config.classes,
                label_map.level1_classes()
            )));
        }
        if level2.config.classes != label_map.level2_classes().len() {
            return Err(FddError::Config(format!(
                "level-2 model has {} outputs, label map needs {}",
                level2.config.classes,
                label_map.level2_classes().len()
            )));
        }
        let take = |m: &TrainedModel, which| {
            m.scaler
                .clone()
                .ok_or_else(|| FddError::Config(format!("{which} model carries no scaler")))
        };
        Ok(Self {
            scaler1: take(&level1, "level-1")?,
            scaler2: take(&level2, "level-2")?,
            level1,
            level2,
            label_map,
        })
    }

    /// Final label of one raw window. `excited` replaces the window seen by
    /// level 2 when active excitation is in use.
    pub fn infer(&self, window: &Tensor2, excited: Option<&Tensor2>) -> Result<Routed> {
        let w1 = self.scaler1.apply(window)?;
        let l1 = argmax(&self.level1.probabilities(&w1)?);
        if let Some(label) = self.label_map.from_level1(l1) {
            return Ok(Routed { label, used_level2: false });
        }
        let w2 = self.scaler2.apply(excited.unwrap_or(window))?;
        let l2 = argmax(&self.level2.probabilities(&w2)?);
        Ok(Routed {
            label: self.label_map.level2_classes()[l2],
            used_level2: true,
        })
    }

    /// [`Self::infer`] over a batch. `excited`, when given, must be aligned
    /// window for window with `test`.
    pub fn route(&self, test: &WindowBatch, excited: Option<&WindowBatch>) -> Result<Vec<Routed>> {
        if let Some(e) = excited {
            if e.len() != test.len() {
                return Err(FddError::dim("excited batch is not aligned with the test batch"));
            }
        }
        let l1 = self.level1.predict(&self.scaler1.apply_batch(test)?)?;
        let routed: Vec<usize> = (0..test.len())
            .filter(|&i| self.label_map.from_level1(l1[i]).is_none())
            .collect();
        let second = excited.unwrap_or(test).subset(&routed);
        let l2 = if second.is_empty() {
            Vec::new()
        } else {
            self.level2.predict(&self.scaler2.apply_batch(&second)?)?
        };
        let classes2 = self.label_map.level2_classes();
        let mut out: Vec<Routed> = l1
            .iter()
            .map(|&p| Routed {
                label: self.label_map.from_level1(p).unwrap_or(usize::MAX),
                used_level2: false,
            })
            .collect();
        for (&i, &p) in routed.iter().zip(&l2) {
            out[i] = Routed {
                label: classes2[p],
                used_level2: true,
            };
        }
        Ok(out)
    }

    /// Full-alphabet evaluation of the combined decision.
    pub fn combined_metrics(
        &self,
        test: &WindowBatch,
        excited: Option<&WindowBatch>,
        class_names: Vec<String>,
        dataset_id: &str,
    ) -> Result<EvalReport> {
        if test.is_empty() {
            return Err(FddError::EmptySplit("test"));
        }
        let pred: Vec<usize> = self.route(test, excited)?.iter().map(|r| r.label).collect();
        let cm = confusion(test.labels(), &pred, self.label_map.classes())?;
        EvalReport::build(
            cm,
            class_names,
            self.label_map.normal(),
            None,
            "hierarchical",
            dataset_id,
            test.horizon(),
        )
    }
}

/// Level-1 training: relabel, fit the scaler on the training windows, train.
pub fn train_level1(train: &WindowBatch, val: &WindowBatch, map: &LabelMap, config: &ModelConfig) -> Result<TrainedModel> {
    let relabel = |b: &WindowBatch| {
        let mut b = b.clone();
        b.check_labels(map.classes())?;
        b.relabel(|l| map.to_level1(l));
        Ok::<_, FddError>(b)
    };
    train_standardized(&relabel(train)?, &relabel(val)?, config)
}

/// Windows of level-2 classes, relabeled to level-2 indices.
pub fn level2_subset(batch: &WindowBatch, map: &LabelMap) -> WindowBatch {
    let mut b = batch.filter_labels(|l| map.is_level2(l));
    b.relabel(|l| map.to_level2(l).expect("filtered to level-2 classes"));
    b
}

/// Level-2 training on the normal and incipient windows only; the scaler
/// sees nothing else.
pub fn train_level2(train: &WindowBatch, val: &WindowBatch, map: &LabelMap, config: &ModelConfig) -> Result<TrainedModel> {
    let t = level2_subset(train, map);
    if t.is_empty() {
        return Err(FddError::EmptySplit("level-2 training"));
    }
    train_standardized(&t, &level2_subset(val, map), config)
}
