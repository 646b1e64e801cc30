use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{Estimator, FlowModel};
use super::stream::{sample_reference, FlowStreamConfig};
use super::{cfm_loss, cfm_pair_with_noise, CfmExample, FlowCondition, FlowError};
use crate::attention_masks::{build_mask, sample_variant_with, MaskSpec, MaskVariant};
use crate::constants::{ICL_MAX_FRACTION, LEFT_CONTEXT_CAP_S};
use crate::corpus::CorpusItem;
use crate::frames::Frames;
use crate::nn::Adam;
use crate::scalar::Scalar;

/// One (semantic tokens, target mel, speaker) training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowExample<T> {
    pub semantic: Vec<u32>,
    pub mel: Frames<T>,
    pub speaker: Vec<T>,
}

impl<T: Scalar> FlowExample<T> {
    pub fn from_item(item: &CorpusItem) -> Self {
        Self {
            semantic: item.semantic.clone(),
            mel: item.mel.cast(),
            speaker: item.speaker.iter().map(|&v| T::lit(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowTrainConfig {
    pub steps: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Leading share of steps trained with full attention only.
    pub full_mask_fraction: f64,
    pub icl_max_fraction: f64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            seed: 0,
            learning_rate: 3e-3,
            batch_size: 4,
            full_mask_fraction: 0.8,
            icl_max_fraction: ICL_MAX_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub stage1_steps: usize,
}

impl TrainReport {
    fn mean(v: &[f64]) -> f64 {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Mean loss over the first 50 steps.
    pub fn initial_loss(&self) -> f64 {
        Self::mean(&self.losses[..self.losses.len().min(50)])
    }

    /// Mean loss over the last 100 steps.
    pub fn final_loss(&self) -> f64 {
        Self::mean(&self.losses[self.losses.len().saturating_sub(100)..])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

fn capped(variant: MaskVariant) -> Option<f64> {
    variant.is_chunked().then_some(LEFT_CONTEXT_CAP_S)
}

fn mask_specs<T: Scalar>(model: &FlowModel<T>, variant: MaskVariant) -> (MaskSpec, MaskSpec) {
    (model.cfg.token_spec(variant, capped(variant)), model.cfg.mel_spec(variant, capped(variant)))
}

/// Builds one training example: random ICL prefix, flow time and noise.
fn make_example<T: Scalar>(
    model: &FlowModel<T>,
    ex: &FlowExample<T>,
    feats: &Frames<T>,
    variant: MaskVariant,
    icl_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<CfmExample<T>, FlowError> {
    let n = ex.mel.len();
    if feats.len() != n {
        return Err(FlowError::Shape { what: "encoded frames vs target mel", expected: n, got: feats.len() });
    }
    let frac = rng.gen_range(0.0..=icl_max);
    let ctx = (frac * n as f64).floor() as usize;
    let cond = FlowCondition::new(feats.clone(), ex.speaker.clone(), ex.mel.slice(0, ctx));
    let t = T::lit(rng.gen::<f64>());
    let x0 = Frames::from_vec(ex.mel.dim(), (0..n * ex.mel.dim()).map(|_| T::lit(StandardNormal.sample(rng))).collect());
    let (x_t, target) = cfm_pair_with_noise(&ex.mel, &x0, t)?;
    let (_, mel_spec) = mask_specs(model, variant);
    Ok(CfmExample { x_t, t, cond, mask: build_mask(&mel_spec, n)?, target })
}

/// Loss and head gradients. The fixed front end is evaluated once per example.
fn loss_and_grads<T: Scalar>(est: &Estimator<T>, batch: &[CfmExample<T>]) -> Result<(T, Vec<Vec<T>>), FlowError> {
    if batch.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    let total: usize = batch.iter().map(|e| e.target.as_slice().len()).sum();
    let scale = T::lit(2.0) / T::from_count(total.max(1));
    let mut grads = est.mlp.zero_grads();
    let mut loss = T::zero();
    for ex in batch {
        let z = est.head_input(&ex.cond.rows(0, ex.cond.frames()), &ex.x_t, ex.t, &ex.mask)?;
        let cache = est.mlp.forward_cached(&z);
        let diff: Vec<T> = cache.output.as_slice().iter().zip(ex.target.as_slice()).map(|(&a, &b)| a - b).collect();
        loss += diff.iter().map(|&d| d * d).sum::<T>();
        let g = Frames::from_vec(ex.target.dim(), diff.into_iter().map(|d| d * scale).collect());
        est.mlp.backward(&cache, &g, &mut grads);
    }
    Ok((loss / T::from_count(total.max(1)), grads))
}

/// Two-stage toy schedule: full-attention-only for the leading
/// `full_mask_fraction` of steps, then one of the four mask variants drawn
/// per example. Only the estimator head is updated.
pub fn train_toy_estimator<T: Scalar>(
    model: &mut FlowModel<T>,
    data: &[FlowExample<T>],
    cfg: &FlowTrainConfig,
) -> Result<TrainReport, FlowError> {
    let stage1 = (cfg.steps as f64 * cfg.full_mask_fraction).round() as usize;
    if cfg.steps == 0 {
        return Ok(TrainReport { losses: Vec::new(), stage1_steps: 0 });
    }
    if data.is_empty() {
        return Err(FlowError::NoData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::for_params(cfg.learning_rate, &model.trainable_params());
    let mut feats: HashMap<(usize, MaskVariant), Frames<T>> = HashMap::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size.max(1) {
            let idx = rng.gen_range(0..data.len());
            let variant = if step < stage1 {
                MaskVariant::Full
            } else {
                sample_variant_with(&mut rng, model.cfg.mel_rate_hz).variant
            };
            let ex = &data[idx];
            if !feats.contains_key(&(idx, variant)) {
                let (tok_spec, _) = mask_specs(model, variant);
                let f = model.encoder.encode_full(&ex.semantic, &build_mask(&tok_spec, ex.semantic.len())?)?;
                feats.insert((idx, variant), f);
            }
            batch.push(make_example(model, ex, &feats[&(idx, variant)], variant, cfg.icl_max_fraction, &mut rng)?);
        }
        let (loss, grads) = loss_and_grads(&model.estimator, &batch)?;
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(FlowError::Diverged { step });
        }
        adam.update(&mut model.trainable_params_mut(), &grads);
        losses.push(loss.as_f64());
    }
    Ok(TrainReport { losses, stage1_steps: stage1 })
}

/// Draws a batch of training examples the same way the trainer does.
pub fn sample_batch<T: Scalar>(
    model: &FlowModel<T>,
    data: &[FlowExample<T>],
    size: usize,
    variant: MaskVariant,
    seed: u64,
) -> Result<Vec<CfmExample<T>>, FlowError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tok_spec, _) = mask_specs(model, variant);
    (0..size)
        .map(|_| {
            let ex = &data[rng.gen_range(0..data.len())];
            let f = model.encoder.encode_full(&ex.semantic, &build_mask(&tok_spec, ex.semantic.len())?)?;
            make_example(model, ex, &f, variant, ICL_MAX_FRACTION, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    /// Distinct tensors covered by the sample.
    pub fn tensors(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.entries.iter().map(|e| e.tensor.as_str()).collect();
        v.dedup();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Relative error with a floor on the denominator so that gradients that
/// are zero in both forms compare as equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs());
    if d < 1e-12 {
        (a - b).abs()
    } else {
        (a - b).abs() / d
    }
}

/// Compares analytic head gradients with central differences of
/// [`cfm_loss`] for `n_params` sampled parameters, visiting every tensor in
/// turn so each layer is covered.
pub fn grad_check(est: &Estimator<f64>, batch: &[CfmExample<f64>], eps: f64, n_params: usize, seed: u64) -> Result<GradCheckReport, FlowError> {
    let (_, grads) = loss_and_grads(est, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tensors = grads.len();
    let mut entries = Vec::with_capacity(n_params);
    for s in 0..n_params {
        let tk = s % n_tensors;
        let idx = rng.gen_range(0..grads[tk].len());
        let mut plus = est.clone();
        plus.mlp.params_mut()[tk].data[idx] += eps;
        let mut minus = est.clone();
        minus.mlp.params_mut()[tk].data[idx] -= eps;
        let numeric = (cfm_loss(&plus, batch)? - cfm_loss(&minus, batch)?) / (2.0 * eps);
        let analytic = grads[tk][idx];
        entries.push(GradCheckEntry {
            tensor: est.mlp.params()[tk].name.clone(),
            index: idx,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    Ok(GradCheckReport { entries })
}

/// Mean squared error between the streamed-equivalent sample and the target.
pub fn sample_l2<T: Scalar>(model: &FlowModel<T>, ex: &FlowExample<T>, cfg: &FlowStreamConfig) -> Result<f64, FlowError> {
    let (ts, ms) = cfg.specs(&model.cfg)?;
    let mel = sample_reference(model, &ex.semantic, &ex.speaker, None, &ts, &ms, cfg.euler_steps, cfg.noise_seed)?;
    let n = mel.as_slice().len().max(1) as f64;
    Ok(mel.as_slice().iter().zip(ex.mel.as_slice()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, SynthCorpusSpec};
    use crate::flow_decoder::{FlowConfig, Mlp};

    fn data(n: usize, seed: u64) -> Vec<FlowExample<f64>> {
        let spec = SynthCorpusSpec { n_items: n, seed, ..Default::default() };
        generate_corpus(&spec).unwrap().iter().map(FlowExample::from_item).collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = FlowModel::<f64>::toy(3);
        let d = data(6, 1);
        let batch = sample_batch(&model, &d, 3, MaskVariant::CHUNK_1S, 5).unwrap();
        let r = grad_check(&model.estimator, &batch, 1e-4, 60, 2).unwrap();
        assert_eq!(r.entries.len(), 60);
        assert_eq!(r.tensors().len(), 6);
        assert!(r.max_rel_err() <= 1e-4, "{:?}", r.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)));
    }

    #[test]
    fn linear_head_gradient_is_exact() {
        let cfg = FlowConfig::toy();
        let model = FlowModel::<f64>::new(cfg.clone(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sizes = [cfg.mlp_sizes()[0], cfg.mel_bins];
        let est = model.estimator.clone().with_mlp(Mlp::new("lin", &sizes, true, &mut rng));
        let batch = sample_batch(&model, &data(4, 2), 2, MaskVariant::Full, 1).unwrap();
        let r = grad_check(&est, &batch, 1e-4, 50, 3).unwrap();
        assert!(r.max_rel_err() <= 1e-8, "{}", r.max_rel_err());
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let mut model = FlowModel::<f64>::toy(1);
        let before = model.clone();
        let r = train_toy_estimator(&mut model, &data(4, 0), &FlowTrainConfig { steps: 0, ..Default::default() }).unwrap();
        assert!(r.losses.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let d = data(16, 3);
        let cfg = FlowTrainConfig { steps: 300, seed: 8, ..Default::default() };
        let mut a = FlowModel::<f64>::toy(1);
        let ra = train_toy_estimator(&mut a, &d, &cfg).unwrap();
        let mut b = FlowModel::<f64>::toy(1);
        let rb = train_toy_estimator(&mut b, &d, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.stage1_steps, 240);
        assert!(ra.final_loss() < ra.initial_loss());
        assert!(ra.to_csv().starts_with("step,loss\n0,"));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = FlowModel::<f64>::toy(1);
        train_toy_estimator(&mut model, &data(4, 0), &FlowTrainConfig { steps: 5, ..Default::default() }).unwrap();
        let back = FlowModel::<f64>::from_checkpoint(&model.to_checkpoint()).unwrap();
        assert_eq!(back, model);
    }
}
