//! Heatmap-regression training for both stages and two-stage inference.
//!
//! Stage 1 sees the whole image (resized to the network input) and predicts
//! all landmarks. Stage 2 trains one single-landmark model per landmark on
//! patches cut around the ground truth plus uniform jitter; at inference the
//! patches are cut around the stage-1 estimate instead.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::patch::{extract_patch, PatchSpec};
use super::schedule::{lr_at, TrainConfig};
use super::Sample;
use crate::backbone::{NetworkConfig, SelfCephaloNet, HEATMAP_STRIDE};
use crate::error::{Error, Result};
use crate::heatmap::{decode, encode_targets, HeatmapStack, LandmarkSet, Point};
use crate::metrics;
use crate::raster::{Raster, ScaleMap};
use crate::tensor::{adam_step, AdamConfig, AdamState, Parameterized, Tape, Tensor};

/// Stage-2 estimates below this peak value are discarded in favour of the
/// stage-1 estimate.
pub const STAGE2_MIN_CONFIDENCE: f64 = 0.05;

const INFERENCE_BATCH: usize = 16;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    /// Loss of the very first mini-batch before any update.
    pub initial_loss: Option<f64>,
    /// Mean mini-batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean validation NME per epoch, when a validation set was given.
    pub val_nme: Vec<Option<f64>>,
    pub steps: usize,
}

/// Network inputs and heatmap targets, flattened per example.
struct HeatmapDataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    input_size: (usize, usize),
    target_shape: [usize; 3],
}

impl HeatmapDataset {
    fn new(input_size: (usize, usize), heatmap_size: (usize, usize), channels: usize) -> Self {
        Self {
            inputs: Vec::new(),
            targets: Vec::new(),
            input_size,
            target_shape: [channels, heatmap_size.0, heatmap_size.1],
        }
    }

    fn push(&mut self, input: &Raster, points_in_input: &[Point], sigma: f64) -> Result<()> {
        let (h, w) = self.input_size;
        debug_assert_eq!((input.width(), input.height()), (w, h));
        let [_, hh, hw] = self.target_shape;
        let hm = encode_targets(points_in_input, (h, w), (hh, hw), sigma)?;
        self.inputs.push(input.data().to_vec());
        self.targets.push(hm.maps.into_data());
        Ok(())
    }

    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let (h, w) = self.input_size;
        let [c, hh, hw] = self.target_shape;
        let x: Vec<f64> = idx.iter().flat_map(|&i| self.inputs[i].iter().copied()).collect();
        let t: Vec<f64> = idx.iter().flat_map(|&i| self.targets[i].iter().copied()).collect();
        Ok((
            Tensor::new(&[idx.len(), 1, h, w], x)?,
            Tensor::new(&[idx.len(), c, hh, hw], t)?,
        ))
    }
}

/// Resizes `image` to the network input and reports the coordinate map.
fn to_input(image: &Raster, cfg: &NetworkConfig) -> (Raster, ScaleMap) {
    let (h, w) = cfg.input_size;
    let map = ScaleMap::between((image.width(), image.height()), (w, h));
    (image.resize(w, h), map)
}

/// Mini-batch Adam on heatmap MSE.
fn fit(
    model: &mut SelfCephaloNet,
    data: &HeatmapDataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut validate: impl FnMut(&SelfCephaloNet) -> Result<Option<f64>>,
) -> Result<History> {
    let mut history = History::default();
    if data.len() == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut adam = AdamState::new(AdamConfig::default(), model.params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let lr = lr_at(epoch, cfg);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, t) = data.batch(chunk)?;
            let mut tape = Tape::new();
            let xv = tape.leaf(&x);
            let tv = tape.leaf(&t);
            let loss = model
                .forward(&mut tape, xv)
                .and_then(|y| tape.mse(y, tv))
                .map_err(|e| diverged_or(e, epoch, history.steps))?;
            let loss_value = tape.value(loss)[0];
            if !loss_value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: history.steps,
                    loss: loss_value,
                });
            }
            history.initial_loss.get_or_insert(loss_value);
            let grads = tape.backward(loss)?;
            grads.write_into(model.params_mut())?;
            adam_step(&mut model.params_mut(), &mut adam, lr)?;
            total += loss_value;
            batches += 1;
            history.steps += 1;
        }
        history.epoch_loss.push(total / batches as f64);
        history.val_nme.push(validate(model)?);
    }
    Ok(history)
}

fn diverged_or(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged {
            epoch,
            step,
            loss: f64::NAN,
        },
        other => other,
    }
}

fn check_samples(train: &[Sample]) -> Result<(usize, usize)> {
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
    let size = (first.image.width(), first.image.height());
    if let Some(s) = train.iter().find(|s| (s.image.width(), s.image.height()) != size) {
        return Err(Error::InvalidArgument(format!(
            "sample {} is {}x{}, expected {}x{}",
            s.id,
            s.image.width(),
            s.image.height(),
            size.0,
            size.1
        )));
    }
    Ok(size)
}

/// Trains the global model on whole images.
pub fn train_stage1(
    train: &[Sample],
    val: &[Sample],
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<(SelfCephaloNet, History)> {
    train_cfg.validate()?;
    check_samples(train)?;
    let mut model = SelfCephaloNet::build(net_cfg, train_cfg.seed)?;
    let mut data = HeatmapDataset::new(net_cfg.input_size, net_cfg.heatmap_size, net_cfg.num_landmarks);
    for s in train {
        let (input, map) = to_input(&s.image, net_cfg);
        let pts: Vec<Point> = s.landmarks.points().iter().map(|&p| map.to_target(p)).collect();
        data.push(&input, &pts, train_cfg.sigma)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let history = fit(&mut model, &data, train_cfg, &mut rng, |m| {
        if val.is_empty() {
            return Ok(None);
        }
        let preds = predict_stage1(m, val)?;
        let mut total = 0.0;
        for ((p, _), s) in preds.iter().zip(val) {
            total += metrics::nme(p, &s.landmarks)?;
        }
        Ok(Some(total / val.len() as f64))
    })?;
    Ok((model, history))
}

/// Runs stage 1 over a list of samples, returning landmarks in image
/// coordinates with per-landmark confidences.
pub fn predict_stage1(model: &SelfCephaloNet, samples: &[Sample]) -> Result<Vec<(LandmarkSet, Vec<f64>)>> {
    let images: Vec<(&Raster, f64)> = samples
        .iter()
        .map(|s| (&s.image, s.landmarks.pixel_spacing_mm()))
        .collect();
    predict_images(model, &images)
}

/// Stage-1 inference on raw images with their pixel spacing.
pub fn predict_images(model: &SelfCephaloNet, images: &[(&Raster, f64)]) -> Result<Vec<(LandmarkSet, Vec<f64>)>> {
    let cfg = model.config();
    let (h, w) = cfg.input_size;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFERENCE_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * h * w);
        let mut maps = Vec::with_capacity(chunk.len());
        for (img, _) in chunk {
            let (input, map) = to_input(img, cfg);
            data.extend_from_slice(input.data());
            maps.push(map);
        }
        let heat = model.predict(&Tensor::new(&[chunk.len(), 1, h, w], data)?)?;
        let per = heat.len() / chunk.len();
        let [_, k, hh, hw] = heat.dims4()?;
        for (b, ((_, spacing), map)) in chunk.iter().zip(&maps).enumerate() {
            let maps_b = Tensor::new(&[k, hh, hw], heat.data()[b * per..(b + 1) * per].to_vec())?;
            let stack = HeatmapStack::from_maps(maps_b, HEATMAP_STRIDE, 0.0)?;
            let decoded = decode(&stack);
            let pts = decoded.iter().map(|d| map.to_source(d.point)).collect();
            let conf = decoded.iter().map(|d| d.confidence).collect();
            out.push((LandmarkSet::new(pts, *spacing)?, conf));
        }
    }
    Ok(out)
}

/// One single-landmark refinement model per landmark.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Models {
    pub models: Vec<SelfCephaloNet>,
    pub patch: PatchSpec,
    pub histories: Vec<History>,
}

impl Stage2Models {
    /// No refinement: two-stage prediction degenerates to stage 1.
    pub fn empty(patch: PatchSpec) -> Self {
        Self {
            models: Vec::new(),
            patch,
            histories: Vec::new(),
        }
    }
}

fn landmark_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains the per-landmark refinement models. `net_cfg.num_landmarks` is
/// forced to one; `net_cfg.input_size` is the size patches are resized to.
pub fn train_stage2(
    train: &[Sample],
    val: &[Sample],
    net_cfg: &NetworkConfig,
    patch: &PatchSpec,
    train_cfg: &TrainConfig,
) -> Result<Stage2Models> {
    train_cfg.validate()?;
    patch.validate()?;
    check_samples(train)?;
    let cfg = NetworkConfig {
        num_landmarks: 1,
        ..net_cfg.clone()
    };
    cfg.validate()?;
    let num_landmarks = train[0].landmarks.points().len();
    let mut models = Vec::with_capacity(num_landmarks);
    let mut histories = Vec::with_capacity(num_landmarks);
    for k in 0..num_landmarks {
        let seed = landmark_seed(train_cfg.seed, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = patch_dataset(train, k, &cfg, patch, train_cfg.sigma, &mut rng)?;
        let mut model = SelfCephaloNet::build(&cfg, seed)?;
        let history = fit(&mut model, &data, train_cfg, &mut rng, |m| {
            if val.is_empty() {
                return Ok(None);
            }
            // validation: mean radial error (px) of refining from the ground truth
            let mut total = 0.0;
            for s in val {
                let gt = s.landmarks.points()[k];
                let (p, _) = refine_one(m, patch, &s.image, gt)?;
                total += p.distance(gt);
            }
            Ok(Some(total / val.len() as f64))
        })?;
        models.push(model);
        histories.push(history);
    }
    Ok(Stage2Models {
        models,
        patch: patch.clone(),
        histories,
    })
}

fn patch_dataset(
    samples: &[Sample],
    k: usize,
    cfg: &NetworkConfig,
    patch: &PatchSpec,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<HeatmapDataset> {
    let (h, w) = cfg.input_size;
    let mut data = HeatmapDataset::new(cfg.input_size, cfg.heatmap_size, 1);
    let to_net = ScaleMap::between((patch.patch_size, patch.patch_size), (w, h));
    let j = patch.jitter_px_max;
    for s in samples {
        let gt = s.landmarks.points()[k];
        for _ in 0..patch.patches_per_image {
            let jitter = if j > 0.0 {
                Point::new(rng.random_range(-j..=j), rng.random_range(-j..=j))
            } else {
                Point::default()
            };
            let (raster, origin) = extract_patch(&s.image, gt + jitter, patch)?;
            let local = to_net.to_target(gt - origin);
            data.push(&raster.resize(w, h), &[local], sigma)?;
        }
    }
    Ok(data)
}

/// Refines one landmark estimate; returns the global point and confidence.
fn refine_one(model: &SelfCephaloNet, patch: &PatchSpec, image: &Raster, estimate: Point) -> Result<(Point, f64)> {
    let (h, w) = model.config().input_size;
    let (raster, origin) = extract_patch(image, estimate, patch)?;
    let to_net = ScaleMap::between((patch.patch_size, patch.patch_size), (w, h));
    let input = raster.resize(w, h);
    let heat = model.predict(&Tensor::new(&[1, 1, h, w], input.data().to_vec())?)?;
    let [_, _, hh, hw] = heat.dims4()?;
    let maps = Tensor::new(&[1, hh, hw], heat.data()[..hh * hw].to_vec())?;
    let d = decode(&HeatmapStack::from_maps(maps, HEATMAP_STRIDE, 0.0)?)[0];
    Ok((crate::heatmap::map_patch_to_global(to_net.to_source(d.point), origin), d.confidence))
}

/// Replaces each landmark of `initial` by its stage-2 estimate, keeping the
/// initial position when the refinement peak is below
/// [`STAGE2_MIN_CONFIDENCE`].
pub fn refine_with_stage2(stage2: &Stage2Models, image: &Raster, initial: &LandmarkSet) -> Result<LandmarkSet> {
    if stage2.models.is_empty() {
        return Ok(initial.clone());
    }
    if stage2.models.len() != initial.points().len() {
        return Err(Error::shape(
            "refine",
            format!("{} refinement models for {} landmarks", stage2.models.len(), initial.points().len()),
        ));
    }
    let mut pts = Vec::with_capacity(initial.points().len());
    for (model, &p) in stage2.models.iter().zip(initial.points()) {
        let (q, conf) = refine_one(model, &stage2.patch, image, p)?;
        pts.push(if conf < STAGE2_MIN_CONFIDENCE { p } else { q });
    }
    LandmarkSet::new(pts, initial.pixel_spacing_mm())
}

/// Stage-1 prediction followed by per-landmark patch refinement.
pub fn predict_two_stage(
    stage1: &SelfCephaloNet,
    stage2: &Stage2Models,
    image: &Raster,
    pixel_spacing_mm: f64,
) -> Result<LandmarkSet> {
    let (initial, _) = predict_images(stage1, &[(image, pixel_spacing_mm)])?
        .pop()
        .expect("one image in, one prediction out");
    refine_with_stage2(stage2, image, &initial)
}
