use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{named_target, Matrix3, Orientation, Stage, StageSchedule};
use crate::diffusion::{LrSchedule, NoiseSchedule, Optimizer, Spacing, TrainOptions};
use crate::error::{Error, Result};
use crate::fem::{PlaneModel, StretchBc};
use crate::nn::{Activation, ArchSpec, MlpSpec, OutputKind, UnetSpec};

pub const COMMANDS: [&str; 5] = ["train", "sample", "gradcheck", "design", "gmm-demo"];

/// Every knob of a run. Absent keys take the defaults below; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Empty means "take it from the command line".
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub out: String,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub physics: PhysicsConfig,
    pub loss: LossConfig,
    pub stages: StagesConfig,
    pub gradcheck: GradcheckConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// gmm | toy | idx
    pub kind: String,
    pub n_samples: usize,
    pub side: usize,
    pub idx_path: String,
    /// Cap on images read from an IDX file (0 = all).
    pub max_images: usize,
    pub noise_std: f64,
    pub filter_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// mlp | unet
    pub kind: String,
    pub hidden: usize,
    pub depth: usize,
    pub activation: String,
    pub emb_dim: usize,
    pub levels: usize,
    pub base_channels: usize,
    pub channel_mult: Vec<usize>,
    pub res_blocks: usize,
    /// Negative disables attention.
    pub attention_level: i64,
    pub heads: usize,
    /// U-Net output head: velocity | epsilon
    pub output: String,
    /// Load weights from this file instead of training.
    pub checkpoint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// adam | adamw
    pub optimizer: String,
    pub weight_decay: f64,
    /// constant | warmup_cosine
    pub lr_schedule: String,
    pub warmup_frac: f64,
    /// 0 disables weight averaging.
    pub ema_decay: f64,
    pub shard: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub ddim_steps: usize,
    pub eta: f64,
    /// uniform | quadratic
    pub spacing: String,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    /// identity | homogenization | hyperelastic | plasticity
    pub kind: String,
    pub nu: f64,
    /// stress | strain (homogenization)
    pub plane: String,
    pub e_soft: f64,
    pub e_stiff: f64,
    pub sigma0_soft: f64,
    pub sigma0_stiff: f64,
    /// both | e | sigma0 (plasticity): which fields follow the density.
    pub fields: String,
    pub load_first: f64,
    pub load_last: f64,
    pub load_steps: usize,
    /// fixed_base | clamped | roller (hyperelastic)
    pub bc: String,
    /// direct | inverted
    pub orientation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// sample | homogenization | strain_energy | stress_curve
    pub kind: String,
    /// Target of the `sample` loss.
    pub target_value: f64,
    /// Named C_obj; ignored when `c_obj` is given.
    pub target_tensor: String,
    pub c_obj: Vec<Vec<f64>>,
    /// Homogenize a generated sample for C_obj instead (self-consistent target).
    pub target_from_sample: bool,
    pub target_seed: u64,
    pub alpha: f64,
    /// Stress-curve group (1..=3).
    pub curve_group: usize,
    /// random | search: `search` scans scalar noise for one mapping near `initial_target`.
    pub initial: String,
    pub initial_target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagesConfig {
    pub gammas: Vec<f64>,
    pub loss_tol: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// 0 = dense BFGS.
    pub lbfgs_memory: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub coords: usize,
    pub step: f64,
    pub homogenization_side: usize,
    pub mechanics_side: usize,
    pub ddim_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            seed: 0,
            threads: 1,
            out: "runs".into(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            physics: PhysicsConfig::default(),
            loss: LossConfig::default(),
            stages: StagesConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: "gmm".into(),
            n_samples: 20000,
            side: 16,
            idx_path: String::new(),
            max_images: 0,
            noise_std: 0.01,
            filter_std: 1.0,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        let u = UnetSpec::default();
        let m = MlpSpec::default();
        Self {
            kind: "mlp".into(),
            hidden: m.hidden,
            depth: m.depth,
            activation: m.activation.name().into(),
            emb_dim: m.emb_dim,
            levels: u.levels,
            base_channels: u.base_channels,
            channel_mult: u.channel_mult,
            res_blocks: u.res_blocks,
            attention_level: u.attention_level.map_or(-1, |l| l as i64),
            heads: u.heads,
            output: "velocity".into(),
            checkpoint: String::new(),
        }
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 128,
            lr: 1e-4,
            optimizer: "adam".into(),
            weight_decay: 1e-4,
            lr_schedule: "constant".into(),
            warmup_frac: 0.05,
            ema_decay: 0.999,
            shard: 32,
        }
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            ddim_steps: 50,
            eta: 0.0,
            spacing: "uniform".into(),
            n_samples: 10000,
        }
    }
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            kind: "identity".into(),
            nu: 0.3,
            plane: "stress".into(),
            e_soft: 1.0,
            e_stiff: 100.0,
            sigma0_soft: 100.0,
            sigma0_stiff: 300.0,
            fields: "both".into(),
            load_first: 0.1,
            load_last: 0.5,
            load_steps: 5,
            bc: "fixed_base".into(),
            orientation: "direct".into(),
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: "sample".into(),
            target_value: -2.5,
            target_tensor: String::new(),
            c_obj: vec![],
            target_from_sample: false,
            target_seed: 1,
            alpha: 0.3,
            curve_group: 1,
            initial: "random".into(),
            initial_target: 2.5,
        }
    }
}

impl Default for StagesConfig {
    fn default() -> Self {
        Self {
            gammas: vec![1.0],
            loss_tol: 1e-3,
            max_iter: 20,
            grad_tol: 1e-10,
            lbfgs_memory: 0,
        }
    }
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            coords: 5,
            step: 1e-6,
            homogenization_side: 8,
            mechanics_side: 4,
            ddim_steps: 10,
        }
    }
}

/// Dotted paths of keys in `given` that have no counterpart in `known`.
fn unknown_keys(given: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match known.get(k) {
            None => out.push(format!("unknown key `{path}`")),
            Some(toml::Value::Table(kt)) => match v {
                toml::Value::Table(vt) => unknown_keys(vt, kt, &path, out),
                _ => out.push(format!("`{path}` must be a section")),
            },
            Some(_) => {}
        }
    }
}

fn one_of(key: &str, v: &str, allowed: &[&str], problems: &mut Vec<String>) {
    if !allowed.contains(&v) {
        problems.push(format!("`{key}` = \"{v}\" (expected one of {})", allowed.join(", ")));
    }
}

impl ExperimentConfig {
    /// Strict parse: all unknown keys, type errors and invalid values are
    /// reported together.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let given: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let known = toml::Table::try_from(Self::default()).expect("defaults serialize");
        let mut problems = Vec::new();
        unknown_keys(&given, &known, "", &mut problems);
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let cfg: Self = toml::Value::Table(given)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().trim().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Resolved configuration in the same format.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if !self.command.is_empty() {
            one_of("command", &self.command, &COMMANDS, &mut p);
        }
        if self.threads == 0 {
            p.push("`threads` must be at least 1".into());
        }
        one_of("data.kind", &self.data.kind, &["gmm", "toy", "idx"], &mut p);
        if self.data.kind == "idx" && self.data.idx_path.is_empty() {
            p.push("`data.idx_path` is required for data.kind = \"idx\"".into());
        }
        one_of("model.kind", &self.model.kind, &["mlp", "unet"], &mut p);
        one_of("model.output", &self.model.output, &["velocity", "epsilon"], &mut p);
        if let Err(e) = Activation::parse(&self.model.activation) {
            p.push(format!("`model.activation`: {e}"));
        }
        one_of("train.optimizer", &self.train.optimizer, &["adam", "adamw"], &mut p);
        one_of("train.lr_schedule", &self.train.lr_schedule, &["constant", "warmup_cosine"], &mut p);
        if !(0.0..1.0).contains(&self.train.ema_decay) {
            p.push(format!("`train.ema_decay` = {} outside [0, 1)", self.train.ema_decay));
        }
        if !(self.train.lr > 0.0) || self.train.batch == 0 {
            p.push("`train.lr` and `train.batch` must be positive".into());
        }
        one_of("sampler.spacing", &self.sampler.spacing, &["uniform", "quadratic"], &mut p);
        if !(0.0..=1.0).contains(&self.sampler.eta) {
            p.push(format!("`sampler.eta` = {} outside [0, 1]", self.sampler.eta));
        }
        one_of(
            "physics.kind",
            &self.physics.kind,
            &["identity", "homogenization", "hyperelastic", "plasticity"],
            &mut p,
        );
        one_of("physics.plane", &self.physics.plane, &["stress", "strain"], &mut p);
        one_of("physics.fields", &self.physics.fields, &["both", "e", "sigma0"], &mut p);
        one_of("physics.bc", &self.physics.bc, &["fixed_base", "clamped", "roller"], &mut p);
        if let Err(e) = Orientation::parse(&self.physics.orientation) {
            p.push(format!("`physics.orientation`: {e}"));
        }
        if !(self.physics.nu > -1.0 && self.physics.nu < 0.5) {
            p.push(format!("`physics.nu` = {} outside (−1, 0.5)", self.physics.nu));
        }
        if self.physics.load_steps == 0 {
            p.push("`physics.load_steps` must be at least 1".into());
        }
        one_of(
            "loss.kind",
            &self.loss.kind,
            &["sample", "homogenization", "strain_energy", "stress_curve"],
            &mut p,
        );
        let expected_loss = match self.physics.kind.as_str() {
            "identity" => "sample",
            "homogenization" => "homogenization",
            "hyperelastic" => "strain_energy",
            _ => "stress_curve",
        };
        if self.loss.kind != expected_loss {
            p.push(format!(
                "`loss.kind` = \"{}\" does not match physics \"{}\" (expected \"{expected_loss}\")",
                self.loss.kind, self.physics.kind
            ));
        }
        if !self.loss.c_obj.is_empty() && (self.loss.c_obj.len() != 3 || self.loss.c_obj.iter().any(|r| r.len() != 3)) {
            p.push("`loss.c_obj` must be a 3×3 matrix".into());
        }
        if !self.loss.target_tensor.is_empty() {
            if let Err(e) = named_target(&self.loss.target_tensor) {
                p.push(format!("`loss.target_tensor`: {e}"));
            }
        }
        if self.command == "design"
            && self.loss.kind == "homogenization"
            && self.loss.c_obj.is_empty()
            && self.loss.target_tensor.is_empty()
            && !self.loss.target_from_sample
        {
            p.push("homogenization design needs `loss.c_obj`, `loss.target_tensor` or `loss.target_from_sample`".into());
        }
        one_of("loss.initial", &self.loss.initial, &["random", "search"], &mut p);
        if let Err(e) = self.stage_schedule() {
            p.push(format!("`stages`: {e}"));
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn arch(&self) -> Result<ArchSpec> {
        let m = &self.model;
        let arch = match m.kind.as_str() {
            "mlp" => ArchSpec::Mlp(MlpSpec {
                data_dim: 1,
                hidden: m.hidden,
                depth: m.depth,
                activation: Activation::parse(&m.activation)?,
                emb_dim: m.emb_dim,
            }),
            _ => ArchSpec::Unet(UnetSpec {
                in_channels: 1,
                side: self.data.side,
                levels: m.levels,
                base_channels: m.base_channels,
                channel_mult: m.channel_mult.clone(),
                res_blocks: m.res_blocks,
                attention_level: usize::try_from(m.attention_level).ok(),
                heads: m.heads,
                emb_dim: m.emb_dim,
                output: OutputKind::parse(&m.output)?,
            }),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end)
    }

    pub fn train_options(&self) -> TrainOptions {
        let t = &self.train;
        TrainOptions {
            epochs: t.epochs,
            batch: t.batch,
            lr: t.lr,
            seed: self.seed,
            optimizer: if t.optimizer == "adamw" {
                Optimizer::AdamW {
                    weight_decay: t.weight_decay,
                }
            } else {
                Optimizer::Adam
            },
            lr_schedule: if t.lr_schedule == "warmup_cosine" {
                LrSchedule::WarmupCosine {
                    warmup_frac: t.warmup_frac,
                }
            } else {
                LrSchedule::Constant
            },
            shard: t.shard.max(1),
            ema_decay: (t.ema_decay > 0.0).then_some(t.ema_decay),
        }
    }

    pub fn spacing(&self) -> Spacing {
        if self.sampler.spacing == "quadratic" {
            Spacing::Quadratic
        } else {
            Spacing::Uniform
        }
    }

    pub fn stage_schedule(&self) -> Result<StageSchedule> {
        let s = &self.stages;
        StageSchedule::new(
            s.gammas
                .iter()
                .map(|&gamma| Stage {
                    gamma,
                    loss_tol: s.loss_tol,
                    max_iter: s.max_iter,
                })
                .collect(),
        )
    }

    pub fn plane_model(&self) -> PlaneModel {
        if self.physics.plane == "strain" {
            PlaneModel::Strain
        } else {
            PlaneModel::Stress
        }
    }

    pub fn stretch_bc(&self) -> StretchBc {
        match self.physics.bc.as_str() {
            "clamped" => StretchBc::Clamped,
            "roller" => StretchBc::Roller,
            _ => StretchBc::FixedBase,
        }
    }

    /// Explicit C_obj, if configured.
    pub fn target_tensor(&self) -> Result<Option<Matrix3>> {
        if !self.loss.c_obj.is_empty() {
            let r = &self.loss.c_obj;
            return Ok(Some([
                [r[0][0], r[0][1], r[0][2]],
                [r[1][0], r[1][1], r[1][2]],
                [r[2][0], r[2][1], r[2][2]],
            ]));
        }
        if !self.loss.target_tensor.is_empty() {
            return named_target(&self.loss.target_tensor).map(Some);
        }
        Ok(None)
    }
}
