use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::ModelSpec;
use crate::dataset::NormalizationParams;
use crate::error::{dim_err, Error, Result};
use crate::nn::{fit, predict_batch, AdamState, ForwardCtx, Module, Network, Param, Tensor, TrainingConfig};

/// Training stage a set of weights has completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Untrained,
    PretrainX,
    PretrainY,
    Cross,
    Finetuned,
}

fn batched(shape: &[usize], n: usize) -> Vec<usize> {
    let mut s = vec![n];
    s.extend_from_slice(shape);
    s
}

/// Encoder/decoder pair trained to reproduce its input.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub encoder: Network,
    pub decoder: Network,
    pub input_shape: Vec<usize>,
    pub latent_shape: Vec<usize>,
    pub phase: Phase,
}

impl Autoencoder {
    /// Encodes a batch; inputs of any shape with the right item length are
    /// viewed as `input_shape`.
    pub fn encode(&mut self, x: Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let n = x.batch();
        self.encoder.forward(x.reshape(&batched(&self.input_shape, n))?, ctx)
    }
}

impl Module for Autoencoder {
    fn forward(&mut self, x: Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let z = self.encode(x, ctx)?;
        self.decoder.forward(z, ctx)
    }

    fn backward(&mut self, g: Tensor, want_input: bool) -> Result<Option<Tensor>> {
        let n = g.batch();
        let need = want_input || self.encoder.has_trainable();
        let g = self
            .decoder
            .backward(g.reshape(&batched(&self.input_shape, n))?, need)?;
        match g {
            Some(g) => self.encoder.backward(g, want_input),
            None => {
                self.encoder.clear_cache();
                Ok(None)
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.decoder.zero_grad();
    }
}

pub fn build_dae_x(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<Autoencoder> {
    let layout = spec.dae_x_layout()?;
    Ok(Autoencoder {
        encoder: Network::from_specs(layout.encoder, rng)?,
        decoder: Network::from_specs(layout.decoder, rng)?,
        input_shape: layout.input_shape,
        latent_shape: layout.latent_shape,
        phase: Phase::Untrained,
    })
}

pub fn build_dae_y(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<Autoencoder> {
    let layout = spec.dae_y_layout()?;
    Ok(Autoencoder {
        encoder: Network::from_specs(layout.encoder, rng)?,
        decoder: Network::from_specs(layout.decoder, rng)?,
        input_shape: layout.input_shape,
        latent_shape: layout.latent_shape,
        phase: Phase::Untrained,
    })
}

pub fn build_lfmm(spec: &ModelSpec, zx: &[usize], zy: &[usize], rng: &mut ChaCha8Rng) -> Result<Network> {
    Network::from_specs(spec.lfmm_layout(zx, zy)?, rng)
}

/// Trains an auto-encoder on its own inputs and tags it with `phase`.
/// Returns the per-epoch mean loss.
pub fn pretrain_dae(
    dae: &mut Autoencoder,
    inputs: &Tensor,
    config: &TrainingConfig,
    phase: Phase,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let curve = fit(dae, inputs, inputs, config, &mut AdamState::new(), &mut rng, on_epoch)?;
    dae.phase = phase;
    Ok(curve)
}

/// `D_Y(LFMM(E_X(x)))`: historical input to future speeds.
#[derive(Debug, Clone)]
pub struct CrossModel {
    pub spec: ModelSpec,
    pub encoder: Network,
    pub lfmm: Network,
    pub decoder: Network,
    pub zy_shape: Vec<usize>,
    pub phase: Phase,
}

impl CrossModel {
    /// Bypasses the E_X/D_Y stages and returns LFMM output viewed as Z^Y.
    fn latent(&mut self, x: Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let n = x.batch();
        let x = x.reshape(&batched(&self.spec.x_shape, n))?;
        let zx = self.encoder.forward(x, ctx)?;
        self.lfmm.forward(zx, ctx)?.reshape(&batched(&self.zy_shape, n))
    }

    /// Freezes E_X and D_Y so that only the LFMM trains, or unfreezes all.
    pub fn freeze_outer(&mut self, frozen: bool) {
        self.encoder.set_frozen(frozen);
        self.decoder.set_frozen(frozen);
    }
}

impl Module for CrossModel {
    fn forward(&mut self, x: Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let n = x.batch();
        let z = self.latent(x, ctx)?;
        self.decoder.forward(z, ctx)?.reshape(&[n, self.spec.horizon])
    }

    fn backward(&mut self, g: Tensor, want_input: bool) -> Result<Option<Tensor>> {
        let n = g.batch();
        let g = g.reshape(&batched(&[self.spec.horizon, 1, 1], n))?;
        let need_lfmm_input = want_input || self.encoder.has_trainable();
        let need_dy_input = need_lfmm_input || self.lfmm.has_trainable();
        let Some(g) = self.decoder.backward(g, need_dy_input)? else {
            self.lfmm.clear_cache();
            self.encoder.clear_cache();
            return Ok(None);
        };
        let g = g.reshape(&[n, self.zy_shape.iter().product()])?;
        let Some(g) = self.lfmm.backward(g, need_lfmm_input)? else {
            self.encoder.clear_cache();
            return Ok(None);
        };
        self.encoder.backward(g, want_input)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.lfmm.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }

    fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.lfmm.zero_grad();
        self.decoder.zero_grad();
    }
}

/// Joins the pre-trained E_X and D_Y through `lfmm`. Both auto-encoders
/// must carry their pre-training tags unless `allow_untrained` is set.
pub fn assemble_cross_connected(
    spec: &ModelSpec,
    dae_x: &Autoencoder,
    dae_y: &Autoencoder,
    lfmm: Network,
    allow_untrained: bool,
) -> Result<CrossModel> {
    if !allow_untrained && (dae_x.phase != Phase::PretrainX || dae_y.phase != Phase::PretrainY) {
        return Err(Error::State(format!(
            "cross connection needs pre-trained auto-encoders, got {:?} and {:?}",
            dae_x.phase, dae_y.phase
        )));
    }
    let out = lfmm
        .output_shape(&dae_x.latent_shape)
        .map_err(|e| Error::Config(format!("LFMM does not accept Z^X {:?}: {e}", dae_x.latent_shape)))?;
    if out != [dae_y.latent_shape.iter().product::<usize>()] {
        return Err(Error::Config(format!(
            "LFMM output {out:?} does not match Z^Y {:?}",
            dae_y.latent_shape
        )));
    }
    Ok(CrossModel {
        spec: spec.clone(),
        encoder: dae_x.encoder.clone(),
        lfmm,
        decoder: dae_y.decoder.clone(),
        zy_shape: dae_y.latent_shape.clone(),
        phase: Phase::Untrained,
    })
}

/// Epoch budget of the two cross-training phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhasePlan {
    /// Phase A: only the LFMM is updated.
    pub lfmm_epochs: usize,
    /// Phase B: every parameter is updated.
    pub finetune_epochs: usize,
}

impl Default for PhasePlan {
    fn default() -> Self {
        Self {
            lfmm_epochs: 30,
            finetune_epochs: 20,
        }
    }
}

/// Loss curves of both phases.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrossCurves {
    pub lfmm: Vec<f64>,
    pub finetune: Vec<f64>,
}

/// Phase A trains the LFMM with E_X and D_Y frozen; phase B fine-tunes the
/// whole network with a fresh optimizer state.
pub fn train_cross(
    model: &mut CrossModel,
    x: &Tensor,
    y: &Tensor,
    config: &TrainingConfig,
    plan: PhasePlan,
    on_epoch: &mut dyn FnMut(Phase, usize, f64),
) -> Result<CrossCurves> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut curves = CrossCurves::default();
    if plan.lfmm_epochs > 0 {
        model.freeze_outer(true);
        let cfg = TrainingConfig {
            epochs: plan.lfmm_epochs,
            ..config.clone()
        };
        let result = fit(model, x, y, &cfg, &mut AdamState::new(), &mut rng, &mut |e, l| {
            on_epoch(Phase::Cross, e, l)
        });
        model.freeze_outer(false);
        curves.lfmm = result?;
        model.phase = Phase::Cross;
    }
    if plan.finetune_epochs > 0 {
        let cfg = TrainingConfig {
            epochs: plan.finetune_epochs,
            ..config.clone()
        };
        curves.finetune = fit(model, x, y, &cfg, &mut AdamState::new(), &mut rng, &mut |e, l| {
            on_epoch(Phase::Finetuned, e, l)
        })?;
        model.phase = Phase::Finetuned;
    }
    Ok(curves)
}

/// Eval-mode forecasts in mph, one 12-vector per input row, clamped to
/// `speed_range`.
pub fn predict(
    model: &mut CrossModel,
    x: &Tensor,
    params: &NormalizationParams,
    speed_range: (f64, f64),
) -> Result<Vec<Vec<f64>>> {
    let item: usize = model.spec.x_shape.iter().product();
    if x.shape().len() < 2 || x.item_len() != item {
        return dim_err(format!(
            "prediction input {:?} does not hold {:?} items",
            x.shape(),
            model.spec.x_shape
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = predict_batch(model, x, 256, &mut rng)?;
    Ok(out
        .data()
        .chunks(model.spec.horizon)
        .map(|row| {
            row.iter()
                .map(|v| params.denormalize(*v).clamp(speed_range.0, speed_range.1))
                .collect()
        })
        .collect())
}
