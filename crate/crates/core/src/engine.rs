//! The online loop: predict, detect, store, and retrain when the novel buffer
//! fills or the training interval elapses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corrector::{correct, CorrectionRecord, RetentionPolicy};
use crate::memory::{DynamicMemory, QueueItem, Slot};
use crate::model::{ModelConfig, UnifiedModel};
use crate::novelty::{compute_thresholds, detect, Detection, NoveltyThresholds};
use crate::smote::{build_training_set, smote_class, SmoteConfig};
use crate::{Error, Result};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Incremental retraining fires when the step count is a multiple of this.
    pub t_train: u64,
    /// Majority queue capacity.
    pub m: usize,
    /// Minority and novel queue capacity.
    pub l: usize,
    pub epochs_offline: usize,
    pub epochs_online: usize,
    pub pretrain_majority_count: usize,
    pub pretrain_minority_count: usize,
    /// `false` runs the baseline: no interval retraining.
    pub incremental_enabled: bool,
    #[serde(default = "yes")]
    pub correction_enabled: bool,
    #[serde(default = "yes")]
    pub oversampling_enabled: bool,
    #[serde(default)]
    pub seed: u64,
    /// Promotions stop once this many classes exist; the novel buffer then
    /// just keeps its latest `l` items. `None` never stops.
    #[serde(default)]
    pub max_classes: Option<usize>,
    pub model: ModelConfig,
    #[serde(default)]
    pub corrector: RetentionPolicy,
    #[serde(default)]
    pub smote: SmoteConfig,
}

fn yes() -> bool {
    true
}

impl EngineConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            t_train: 2000,
            m: 1000,
            l: 30,
            epochs_offline: 20,
            epochs_online: 10,
            pretrain_majority_count: 1000,
            pretrain_minority_count: 30,
            incremental_enabled: true,
            correction_enabled: true,
            oversampling_enabled: true,
            seed: 0,
            max_classes: None,
            model,
            corrector: RetentionPolicy::default(),
            smote: SmoteConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_train == 0 {
            return Err(Error::config("t_train must be at least 1"));
        }
        if self.m == 0 || self.l == 0 || self.l > self.m {
            return Err(Error::config(format!("queue sizes need 0 < l <= m (l = {}, m = {})", self.l, self.m)));
        }
        if self.max_classes.is_some_and(|c| c < 2) {
            return Err(Error::config("max_classes must be at least 2"));
        }
        if self.smote.k_neighbors == 0 {
            return Err(Error::config("smote.k_neighbors must be at least 1"));
        }
        self.model.validate()?;
        self.corrector.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Event {
    None,
    NewModelTrained,
    IncrementalTrained,
}

impl Event {
    pub fn as_str(self) -> &'static str {
        match self {
            Event::None => "none",
            Event::NewModelTrained => "new_model",
            Event::IncrementalTrained => "incremental",
        }
    }
}

/// A novel buffer that became a class.
#[derive(Debug, Clone, PartialEq)]
pub struct Promotion {
    pub class: usize,
    /// Evaluation-only labels of the promoted instances, in arrival order.
    pub ground_truths: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub timestep: u64,
    /// Class chosen by the classifier before novelty detection.
    pub model_label: usize,
    /// Post-detection label: `model_label`, or `n + 1` when novel.
    pub predicted_label: usize,
    pub is_novel: bool,
    pub recon_loss: f64,
    pub theta_of_predicted: f64,
    pub event: Event,
    pub promotion: Option<Promotion>,
    pub corrections: Vec<CorrectionRecord>,
}

impl StepOutcome {
    /// The internal class, or `None` if flagged novel.
    pub fn internal_class(&self) -> Option<usize> {
        (!self.is_novel).then_some(self.predicted_label)
    }
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    model: UnifiedModel,
    memory: DynamicMemory,
    thresholds: NoveltyThresholds,
    rng: ChaCha8Rng,
    t: u64,
    cap_reached: bool,
}

impl Engine {
    /// Trains the initial model on `data[i]` (class `i`, class 0 the
    /// majority) and fills the queues from the same data.
    pub fn pretrain(config: EngineConfig, data: &[Vec<Vec<f64>>]) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::config("pretraining needs majority data"));
        }
        for (i, d) in data.iter().enumerate() {
            if d.is_empty() {
                return Err(Error::config(format!("no pretraining data for class {i}")));
            }
            if let Some(bad) = d.iter().find(|x| x.len() != config.model.input_dim) {
                return Err(Error::config(format!(
                    "class {i} pretraining row has {} features, expected {}",
                    bad.len(),
                    config.model.input_dim
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let classes = data.len();
        let mut model = UnifiedModel::new(config.model.clone(), classes, config.seed, &mut rng)?;

        let target = config.smote.target_count.unwrap_or(config.m);
        let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
        for (c, d) in data.iter().enumerate() {
            let class_rows = if c == 0 || !config.oversampling_enabled {
                d.clone()
            } else {
                smote_class(d, target, config.smote.k_neighbors, &mut rng)?
            };
            rows.extend(class_rows.into_iter().map(|x| (x, c)));
        }
        rows.shuffle(&mut rng);
        model.train_session(&rows, config.epochs_offline, &mut rng)?;

        let mut memory = DynamicMemory::new(config.m, config.l, classes - 1)?;
        for (c, d) in data.iter().enumerate() {
            for x in d {
                memory.append(Slot::Class(c), QueueItem::new(x.clone(), 0, None))?;
            }
        }
        let thresholds = compute_thresholds(&model, &memory, 0)?;
        Ok(Self {
            config,
            model,
            memory,
            thresholds,
            rng,
            t: 0,
            cap_reached: false,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn model(&self) -> &UnifiedModel {
        &self.model
    }

    pub fn memory(&self) -> &DynamicMemory {
        &self.memory
    }

    pub fn thresholds(&self) -> &NoveltyThresholds {
        &self.thresholds
    }

    /// Number of instances processed so far.
    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn class_count(&self) -> usize {
        self.memory.class_count()
    }

    /// Processes one instance. `truth` rides along for evaluation only.
    pub fn step(&mut self, x: &[f64], truth: Option<usize>) -> Result<StepOutcome> {
        let prediction = self.model.predict(x)?;
        self.t += 1;
        let n_plus_1 = self.memory.class_count();
        let theta = self.thresholds.get(prediction.label).unwrap_or(f64::NAN);
        let detection = detect(&prediction, &self.thresholds);
        let item = QueueItem::new(x.to_vec(), self.t, truth);
        let (slot, predicted_label) = match detection {
            Detection::Novel => (Slot::Novel, n_plus_1),
            Detection::Known(i) => (Slot::Class(i), i),
        };
        self.memory.append(slot, item)?;

        let mut outcome = StepOutcome {
            timestep: self.t,
            model_label: prediction.label,
            predicted_label,
            is_novel: detection == Detection::Novel,
            recon_loss: prediction.recon_loss,
            theta_of_predicted: theta,
            event: Event::None,
            promotion: None,
            corrections: Vec::new(),
        };

        let may_grow = self
            .config
            .max_classes
            .is_none_or(|cap| self.memory.class_count() < cap);
        if self.memory.is_novel_full() && !may_grow && !self.cap_reached {
            log::warn!(
                "step {}: class cap {} reached, novel buffer no longer promotes",
                self.t,
                self.memory.class_count()
            );
            self.cap_reached = true;
        }
        if self.memory.is_novel_full() && may_grow {
            let (promotion, corrections) = self.train_new_model()?;
            outcome.event = Event::NewModelTrained;
            outcome.promotion = Some(promotion);
            outcome.corrections = corrections;
        } else if self.config.incremental_enabled && self.t % self.config.t_train == 0 {
            self.train_incremental()?;
            outcome.event = Event::IncrementalTrained;
        }
        Ok(outcome)
    }

    fn training_set(&mut self) -> Result<Vec<(Vec<f64>, usize)>> {
        if self.config.oversampling_enabled {
            build_training_set(&self.memory, &self.config.smote, &mut self.rng)
        } else {
            let mut rows = self.memory.snapshot_for_training();
            rows.shuffle(&mut self.rng);
            Ok(rows)
        }
    }

    fn train_new_model(&mut self) -> Result<(Promotion, Vec<CorrectionRecord>)> {
        let ground_truths = self
            .memory
            .novel_buffer()
            .items()
            .map(|i| i.ground_truth_for_eval())
            .collect();
        let class = self.memory.promote_novel()?;
        log::debug!("step {}: novel buffer promoted to class {class}", self.t);
        let corrections = if self.config.correction_enabled {
            correct(&mut self.memory, &self.config.corrector)?
        } else {
            Vec::new()
        };
        let rows = self.training_set()?;
        self.model.expand_classes(self.memory.class_count(), &mut self.rng)?;
        self.model
            .train_session(&rows, self.config.epochs_offline, &mut self.rng)?;
        self.thresholds = compute_thresholds(&self.model, &self.memory, self.t)?;
        Ok((
            Promotion {
                class,
                ground_truths,
            },
            corrections,
        ))
    }

    fn train_incremental(&mut self) -> Result<()> {
        let rows = self.training_set()?;
        self.model
            .train_session(&rows, self.config.epochs_online, &mut self.rng)?;
        self.thresholds = compute_thresholds(&self.model, &self.memory, self.t)?;
        Ok(())
    }

    /// Feeds every instance in order.
    pub fn run_stream<'a, I>(&mut self, stream: I) -> Result<Vec<StepOutcome>>
    where
        I: IntoIterator<Item = (&'a [f64], Option<usize>)>,
    {
        stream.into_iter().map(|(x, y)| self.step(x, y)).collect()
    }
}
