use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::error::{Error, Result};
use crate::evalharness::bundle::{build_bundle, DetectionBundle};
use crate::evalharness::experiments::{run_ood, run_seen, run_unseen, DetectConfig, ExperimentReport};
use crate::evalharness::{gen_synthetic, Dataset, SyntheticKind, SyntheticSpec};
use crate::model::{NetConfig, ResidualNet};
use crate::trainer::{train, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Size of the classifier test set the detection bundles are built from.
    pub test_n: usize,
    /// Attacks the FGM-trained detector is tested on.
    pub unseen_attacks: Vec<AttackKind>,
    /// Second distribution of the OOD experiment (detector training).
    pub ood_second: SyntheticSpec,
    /// Third distribution of the OOD experiment (testing only).
    pub ood_third: SyntheticSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            test_n: 1000,
            unseen_attacks: vec![AttackKind::Bim, AttackKind::Pgd],
            ood_second: SyntheticSpec {
                kind: SyntheticKind::Moons,
                n: 1000,
                noise: 0.08,
                ..SyntheticSpec::default()
            },
            ood_third: SyntheticSpec {
                kind: SyntheticKind::Blobs,
                n: 1000,
                noise: 0.3,
                shift: [1.5, 1.5],
                ..SyntheticSpec::default()
            },
        }
    }
}

/// Everything a pipeline run needs besides the master seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub data: SyntheticSpec,
    pub model: NetConfig,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub detect: DetectConfig,
    pub experiment: ExperimentConfig,
}

/// Per-stage seeds drawn in a fixed order from the master seed. They
/// replace the `seed` fields of the individual config sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub data: u64,
    pub test_data: u64,
    pub init: u64,
    pub train: u64,
    pub attack: u64,
    pub split: u64,
    pub forest: u64,
    pub ood: u64,
}

impl Seeds {
    pub fn derive(master: u64) -> Seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        let mut next = || rng.random::<u64>();
        Seeds {
            master,
            data: next(),
            test_data: next(),
            init: next(),
            train: next(),
            attack: next(),
            split: next(),
            forest: next(),
            ood: next(),
        }
    }

    pub fn as_map(&self) -> BTreeMap<String, u64> {
        [
            ("master", self.master),
            ("data", self.data),
            ("test_data", self.test_data),
            ("init", self.init),
            ("train", self.train),
            ("attack", self.attack),
            ("split", self.split),
            ("forest", self.forest),
            ("ood", self.ood),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// A trained net, its test set and the seeds of the run.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub seeds: Seeds,
    pub net: ResidualNet<f64>,
    pub test_data: Dataset<f64>,
}

/// A classifier with the data and report of its training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub classifier: Classifier,
    pub train_data: Dataset<f64>,
    pub train_report: TrainReport<f64>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.attack.validate()?;
        self.detect.forest.validate()?;
        self.experiment.ood_second.validate()?;
        self.experiment.ood_third.validate()?;
        if self.experiment.test_n < 20 {
            return Err(Error::contract("experiment.test_n must be at least 20"));
        }
        if self.model.dim != 2 {
            return Err(Error::contract("synthetic pipelines need model.dim = 2"));
        }
        Ok(())
    }

    pub fn data_spec(&self, seeds: &Seeds) -> SyntheticSpec {
        SyntheticSpec {
            seed: seeds.data,
            ..self.data.clone()
        }
    }

    pub fn test_spec(&self, seeds: &Seeds) -> SyntheticSpec {
        SyntheticSpec {
            seed: seeds.test_data,
            n: self.experiment.test_n,
            ..self.data.clone()
        }
    }

    pub fn train_config(&self, seeds: &Seeds) -> TrainConfig {
        TrainConfig {
            seed: seeds.train,
            ..self.train.clone()
        }
    }

    pub fn attack_config(&self, kind: AttackKind, seeds: &Seeds) -> AttackConfig {
        AttackConfig {
            kind,
            seed: seeds.attack,
            ..self.attack.clone()
        }
    }

    pub fn detect_config(&self, seeds: &Seeds) -> DetectConfig {
        let mut d = self.detect.clone();
        d.forest.seed = seeds.forest;
        d
    }

    /// Generates data and trains a classifier.
    pub fn prepare(&self, master: u64) -> Result<Prepared> {
        self.validate()?;
        let seeds = Seeds::derive(master);
        let train_data = gen_synthetic::<f64>(&self.data_spec(&seeds))?;
        let test_data = gen_synthetic::<f64>(&self.test_spec(&seeds))?;
        let mut net = ResidualNet::init(&self.model, seeds.init)?;
        let train_report = train(
            &mut net,
            &train_data.points,
            &train_data.labels,
            &self.train_config(&seeds),
        )?;
        Ok(Prepared {
            classifier: Classifier { seeds, net, test_data },
            train_data,
            train_report,
        })
    }

    pub fn bundle(&self, c: &Classifier, kind: AttackKind) -> Result<DetectionBundle<f64>> {
        build_bundle(
            &c.net,
            &c.test_data,
            &self.attack_config(kind, &c.seeds),
            c.seeds.split,
            self.detect.with_noise,
        )
    }

    fn finish(&self, mut r: ExperimentReport, seeds: &Seeds) -> Result<ExperimentReport> {
        r.seeds = seeds.as_map();
        r.config = serde_json::to_value(self)?;
        Ok(r)
    }

    pub fn seen(&self, c: &Classifier) -> Result<ExperimentReport> {
        let b = self.bundle(c, self.attack.kind)?;
        self.finish(run_seen(&c.net, &b, &self.detect_config(&c.seeds))?, &c.seeds)
    }

    pub fn unseen(&self, c: &Classifier) -> Result<ExperimentReport> {
        let train_bundle = self.bundle(c, AttackKind::Fgm)?;
        let tests = self
            .experiment
            .unseen_attacks
            .iter()
            .map(|&k| self.bundle(c, k))
            .collect::<Result<Vec<_>>>()?;
        self.finish(
            run_unseen(&c.net, &train_bundle, &tests, &self.detect_config(&c.seeds))?,
            &c.seeds,
        )
    }

    pub fn ood(&self, c: &Classifier) -> Result<ExperimentReport> {
        let second = gen_synthetic::<f64>(&SyntheticSpec {
            seed: c.seeds.ood,
            ..self.experiment.ood_second.clone()
        })?;
        let third = gen_synthetic::<f64>(&SyntheticSpec {
            seed: c.seeds.ood ^ 1,
            ..self.experiment.ood_third.clone()
        })?;
        let r = run_ood(
            &c.net,
            &c.test_data,
            &second,
            &third,
            &self.detect_config(&c.seeds),
            c.seeds.split,
        )?;
        self.finish(r, &c.seeds)
    }
}
