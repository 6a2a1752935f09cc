//! Temperature-field surrogate: a CNN mapping the binary design grid to the
//! full-resolution temperature field, trained on FEM labels.
//!
//! The network upsamples the design grid to the field resolution through a
//! chain of nearest-neighbor+conv stages (factors 2/3/5 covering the mesh
//! refinement ratio), with squeeze-and-excitation residual blocks after every
//! non-final stage. The tail — the last upsample stage and the 1×1 head — is
//! linear; steady conduction is linear in the source term, so the target field
//! is affine in the layout and a linear tail costs no accuracy. It also lets
//! the objective path fold the head into the final stage's kernels and reduce
//! max/probe values phase-by-phase without materializing the field, which is
//! what makes screening large candidate pools affordable.
//!
//! Training runs in f32 (bandwidth-bound on this workload); checkpoints store
//! f64 and reload exactly.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::TemperatureField;
use crate::ga::ObjectiveSpec;
use crate::grid::{Layout, ProblemSpec};
use crate::nn::{
    checkpoint, loss, upconv_extrema, Adam, Init, LayerSpec, Network, Tensor, UpsampleConv,
};

/// Affine map between kelvin and the network's unit output scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    /// Temperature mapped to 0 (the sink temperature).
    pub reference: f64,
    /// Kelvin span mapped to one unit.
    pub span: f64,
}

/// Default span: a 350 K design ceiling minus the 298 K reference.
pub const DEFAULT_SPAN: f64 = 52.0;

impl Normalization {
    pub fn new(reference: f64, span: f64) -> Result<Self> {
        if !(span > 0.0) {
            return Err(Error::Spec(format!("normalization span must be positive, got {span}")));
        }
        Ok(Normalization { reference, span })
    }

    pub fn for_spec(spec: &ProblemSpec) -> Self {
        Normalization { reference: spec.sink_temperature, span: DEFAULT_SPAN }
    }

    pub fn normalize(&self, kelvin: f64) -> f64 {
        (kelvin - self.reference) / self.span
    }

    pub fn denormalize(&self, unit: f64) -> f64 {
        self.reference + self.span * unit
    }
}

/// A layout with its FEM-labeled field, stored normalized in f32 — at the full
/// profile a 10 000-sample set is 1.6 GB, double that in f64.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub layout: Layout,
    field_norm: Vec<f32>,
    field_resolution: usize,
}

impl LabeledSample {
    pub fn new(layout: Layout, field: &TemperatureField, norm: &Normalization) -> Self {
        let field_norm =
            field.values().iter().map(|&t| norm.normalize(t) as f32).collect();
        LabeledSample { layout, field_norm, field_resolution: field.resolution() }
    }

    pub fn field_resolution(&self) -> usize {
        self.field_resolution
    }

    /// Reconstructs the kelvin field (within f32 rounding of the original).
    pub fn field(&self, domain_length: f64, norm: &Normalization) -> Result<TemperatureField> {
        let values = self.field_norm.iter().map(|&v| norm.denormalize(v as f64)).collect();
        TemperatureField::from_values(self.field_resolution, domain_length, values)
    }
}

/// Decomposes the mesh refinement ratio into upsampling factors, largest
/// factors last (…, 3s, then 5s), e.g. 20 → [2, 2, 5].
fn upsample_factors(refinement: usize) -> Result<Vec<usize>> {
    if refinement < 2 {
        return Err(Error::Spec(format!(
            "field resolution must refine the design grid, got ratio {refinement}"
        )));
    }
    let mut rest = refinement;
    let mut factors = Vec::new();
    for f in [2usize, 3, 5] {
        while rest % f == 0 {
            factors.push(f);
            rest /= f;
        }
    }
    if rest != 1 {
        return Err(Error::Spec(format!(
            "refinement ratio {refinement} must factor into 2s, 3s and 5s"
        )));
    }
    Ok(factors)
}

/// Builds the field-network layer stack for a refinement ratio.
pub fn field_net_architecture(refinement: usize) -> Result<Vec<LayerSpec>> {
    let factors = upsample_factors(refinement)?;
    let n = factors.len();
    let mut specs = vec![
        LayerSpec::Conv2d { in_ch: 1, out_ch: 32, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::Relu,
    ];
    let mut in_ch = 32;
    for (i, &factor) in factors.iter().enumerate() {
        // Channel widths halve stage by stage down to 16 at the last.
        let out_ch = 16usize << (n - 1 - i);
        specs.push(LayerSpec::UpsampleConv { in_ch, out_ch, factor });
        if i + 1 < n {
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::SeResBlock { channels: out_ch, reduction: 4 });
        }
        in_ch = out_ch;
    }
    specs.push(LayerSpec::Conv2d { in_ch, out_ch: 1, kernel: 1, stride: 1, padding: 0 });
    Ok(specs)
}

/// Per-epoch training record.
#[derive(Debug, Clone)]
pub struct TrainRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<TrainRow>,
    pub epochs_run: usize,
    pub early_stopped: bool,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.rows.last().map(|r| r.train_loss).unwrap_or(f64::NAN)
    }
}

/// Hard cap on epochs per (re)training call.
pub const MAX_TRAIN_EPOCHS: usize = 500;
/// Early stop when relative improvement over this window falls under 1%.
const PLATEAU_WINDOW: usize = 50;
const PLATEAU_RELATIVE: f64 = 0.01;

/// The trainable surrogate bound to one problem's grid geometry.
pub struct FieldSurrogate {
    net: Network<f32>,
    adam: Adam<f32>,
    norm: Normalization,
    design_resolution: usize,
    field_resolution: usize,
    domain_length: f64,
    /// Last upsample stage with the 1×1 head folded in; rebuilt after every
    /// parameter change, used by the reduced objective path.
    folded_tail: UpsampleConv<f32>,
}

/// Default learning rate for the field network.
pub const FIELD_NET_LR: f64 = 1e-3;
/// Default minibatch size.
pub const FIELD_NET_BATCH: usize = 10;

impl FieldSurrogate {
    pub fn new(spec: &ProblemSpec, rng: &mut impl Rng) -> Result<Self> {
        let specs = field_net_architecture(spec.refinement())?;
        let net: Network<f32> = Network::from_specs(&specs, rng);
        Self::assemble(net, spec)
    }

    fn assemble(net: Network<f32>, spec: &ProblemSpec) -> Result<Self> {
        let folded_tail = fold_tail(&net)?;
        Ok(FieldSurrogate {
            net,
            adam: Adam::new(FIELD_NET_LR),
            norm: Normalization::for_spec(spec),
            design_resolution: spec.design_resolution,
            field_resolution: spec.fem_resolution,
            domain_length: spec.domain_length,
            folded_tail,
        })
    }

    pub fn norm(&self) -> Normalization {
        self.norm
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(&self.net, path)
    }

    /// Loads a checkpoint, validating that it matches the problem's geometry.
    pub fn load(spec: &ProblemSpec, path: &std::path::Path) -> Result<Self> {
        let net: Network<f32> = checkpoint::load(path)?;
        let want = field_net_architecture(spec.refinement())?;
        if net.specs() != want {
            return Err(Error::format(path, "checkpoint architecture does not match problem"));
        }
        Self::assemble(net, spec)
    }

    fn input_tensor(&self, layouts: &[&Layout]) -> Result<Tensor<f32>> {
        let res = self.design_resolution;
        let mut x = Tensor::zeros(&[layouts.len(), 1, res, res]);
        let xd = x.data_mut();
        for (i, layout) in layouts.iter().enumerate() {
            if layout.resolution() != res {
                return Err(Error::Spec(format!(
                    "layout resolution {} does not match surrogate grid {res}",
                    layout.resolution()
                )));
            }
            for (dst, &cell) in xd[i * res * res..(i + 1) * res * res]
                .iter_mut()
                .zip(layout.cells())
            {
                *dst = cell as f32;
            }
        }
        Ok(x)
    }

    /// Predicts the kelvin field for one layout: forward pass, then
    /// denormalization `T = reference + span·ŷ`; no clamping.
    pub fn predict_field(&self, layout: &Layout) -> Result<TemperatureField> {
        let x = self.input_tensor(&[layout])?;
        let y = self.net.infer(&x);
        let values = y.data().iter().map(|&v| self.norm.denormalize(v as f64)).collect();
        TemperatureField::from_values(self.field_resolution, self.domain_length, values)
    }

    /// Batched prediction (chunked internally to bound peak memory).
    pub fn predict_fields(&self, layouts: &[Layout]) -> Result<Vec<TemperatureField>> {
        let res = self.field_resolution;
        let mut out = Vec::with_capacity(layouts.len());
        for chunk in layouts.chunks(FIELD_NET_BATCH) {
            let refs: Vec<&Layout> = chunk.iter().collect();
            let x = self.input_tensor(&refs)?;
            let y = self.net.infer(&x);
            for s in 0..chunk.len() {
                let values = y.data()[s * res * res..(s + 1) * res * res]
                    .iter()
                    .map(|&v| self.norm.denormalize(v as f64))
                    .collect();
                out.push(TemperatureField::from_values(res, self.domain_length, values)?);
            }
        }
        Ok(out)
    }

    /// Mirrors `TemperatureField::probe`'s cell-center bilinear interpolation:
    /// returns the four corner pixels (row, col) and their weights.
    fn probe_pixels(&self, x: f64, y: f64) -> Result<([(usize, usize); 4], [f64; 4])> {
        let l = self.domain_length;
        if !(0.0..=l).contains(&x) || !(0.0..=l).contains(&y) {
            return Err(Error::Spec(format!("probe point ({x}, {y}) outside [0, {l}]²")));
        }
        let res = self.field_resolution;
        let h = l / res as f64;
        let locate = |coord: f64| -> (usize, f64) {
            let u = coord / h - 0.5;
            if u <= 0.0 {
                (0, 0.0)
            } else if u >= (res - 1) as f64 {
                (res - 2, 1.0)
            } else {
                let i = (u.floor() as usize).min(res - 2);
                (i, u - i as f64)
            }
        };
        let (ix, fx) = locate(x);
        let (iy, fy) = locate(y);
        let pixels = [(iy, ix), (iy, ix + 1), (iy + 1, ix), (iy + 1, ix + 1)];
        let weights = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        Ok((pixels, weights))
    }

    /// Predicted peak temperature and probe temperature for a batch, without
    /// materializing full fields: the stack runs to the last nonlinear stage,
    /// then the folded linear tail is reduced phase-by-phase.
    pub fn predict_extrema(
        &self,
        layouts: &[&Layout],
        probe: Option<(f64, f64)>,
    ) -> Result<Vec<(f64, Option<f64>)>> {
        let (points, weights) = match probe {
            Some((px, py)) => {
                let (pixels, weights) = self.probe_pixels(px, py)?;
                (pixels.to_vec(), Some(weights))
            }
            None => (Vec::new(), None),
        };
        let mut out = Vec::with_capacity(layouts.len());
        for chunk in layouts.chunks(64) {
            let mut act = self.input_tensor(chunk)?;
            let body_end = self.net.layers().len() - 2;
            for layer in &self.net.layers()[..body_end] {
                act = layer.infer(&act);
            }
            for (tmax_norm, pvals) in upconv_extrema(&self.folded_tail, &act, &points) {
                let t_max = self.norm.denormalize(tmax_norm as f64);
                let t_point = weights.as_ref().map(|w| {
                    let unit: f64 =
                        pvals.iter().zip(w).map(|(&v, &wi)| v as f64 * wi).sum();
                    self.norm.denormalize(unit)
                });
                out.push((t_max, t_point));
            }
        }
        Ok(out)
    }

    /// Objective value for one layout under `objective`.
    pub fn objective(&self, layout: &Layout, objective: &ObjectiveSpec) -> Result<f64> {
        Ok(self.objective_batch(&[layout.clone()], objective)?[0])
    }

    /// Objective values for many layouts; parallel across chunks.
    pub fn objective_batch(
        &self,
        layouts: &[Layout],
        objective: &ObjectiveSpec,
    ) -> Result<Vec<f64>> {
        let probe = objective.probe_point();
        let chunks: Vec<&[Layout]> = layouts.chunks(256).collect();
        let per_chunk: Result<Vec<Vec<f64>>> = chunks
            .into_par_iter()
            .map(|chunk| {
                let refs: Vec<&Layout> = chunk.iter().collect();
                let ex = self.predict_extrema(&refs, probe)?;
                Ok(ex.into_iter().map(|(tm, tp)| objective.value(tm, tp)).collect())
            })
            .collect();
        Ok(per_chunk?.into_iter().flatten().collect())
    }

    /// Indices of the `top_m` layouts with the smallest surrogate objective,
    /// ties broken by input index; all indices when `top_m` exceeds the pool.
    pub fn screen_indices(
        &self,
        layouts: &[Layout],
        objective: &ObjectiveSpec,
        top_m: usize,
    ) -> Result<Vec<usize>> {
        let values = self.objective_batch(layouts, objective)?;
        Ok(rank_smallest(&values, top_m))
    }

    /// The screened layouts themselves, in rank order.
    pub fn screen(
        &self,
        layouts: &[Layout],
        objective: &ObjectiveSpec,
        top_m: usize,
    ) -> Result<Vec<Layout>> {
        Ok(self
            .screen_indices(layouts, objective, top_m)?
            .into_iter()
            .map(|i| layouts[i].clone())
            .collect())
    }

    /// Mean MSE on normalized fields (the training loss) over a sample set.
    pub fn evaluate_loss(&self, samples: &[LabeledSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Spec("cannot evaluate on an empty dataset".into()));
        }
        let mut total = 0.0;
        for chunk in samples.chunks(FIELD_NET_BATCH) {
            let (x, t) = self.batch_tensors(chunk)?;
            let y = self.net.infer(&x);
            let (l, _) = loss::mse(&y, &t);
            total += l * chunk.len() as f64;
        }
        Ok(total / samples.len() as f64)
    }

    /// Mean relative error in kelvin over all pixels: mean(|T̂ − T| / T).
    pub fn mean_relative_error(&self, samples: &[LabeledSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Spec("cannot evaluate on an empty dataset".into()));
        }
        let mut total = 0.0f64;
        let mut count = 0usize;
        for chunk in samples.chunks(FIELD_NET_BATCH) {
            let refs: Vec<&Layout> = chunk.iter().map(|s| &s.layout).collect();
            let x = self.input_tensor(&refs)?;
            let y = self.net.infer(&x);
            let res = self.field_resolution;
            for (s, sample) in chunk.iter().enumerate() {
                let pred = &y.data()[s * res * res..(s + 1) * res * res];
                for (&p, &t) in pred.iter().zip(&sample.field_norm) {
                    let tk = self.norm.denormalize(t as f64);
                    let pk = self.norm.denormalize(p as f64);
                    total += (pk - tk).abs() / tk;
                }
                count += res * res;
            }
        }
        Ok(total / count as f64)
    }

    fn batch_tensors(
        &self,
        samples: &[LabeledSample],
    ) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let res = self.field_resolution;
        let refs: Vec<&Layout> = samples.iter().map(|s| &s.layout).collect();
        let x = self.input_tensor(&refs)?;
        let mut t = Tensor::zeros(&[samples.len(), 1, res, res]);
        let td = t.data_mut();
        for (i, s) in samples.iter().enumerate() {
            if s.field_resolution != res {
                return Err(Error::Spec(format!(
                    "label field resolution {} does not match surrogate {res}",
                    s.field_resolution
                )));
            }
            td[i * res * res..(i + 1) * res * res].copy_from_slice(&s.field_norm);
        }
        Ok((x, t))
    }

    /// Trains (or continues training — parameters and optimizer state carry
    /// over) with shuffled minibatches, stopping early when the training loss
    /// plateaus.
    pub fn train(
        &mut self,
        samples: &[LabeledSample],
        epochs: usize,
        rng: &mut impl Rng,
    ) -> Result<TrainReport> {
        self.train_with_validation(samples, &[], epochs, rng)
    }

    /// Like `train`, also recording the loss on `validation` each epoch when
    /// nonempty (validation never influences the updates or the early stop).
    pub fn train_with_validation(
        &mut self,
        samples: &[LabeledSample],
        validation: &[LabeledSample],
        epochs: usize,
        rng: &mut impl Rng,
    ) -> Result<TrainReport> {
        if samples.is_empty() {
            return Err(Error::Spec("cannot train on an empty dataset".into()));
        }
        let epochs = epochs.min(MAX_TRAIN_EPOCHS);
        let mut rows: Vec<TrainRow> = Vec::with_capacity(epochs);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut early_stopped = false;
        let mut batch: Vec<LabeledSample> = Vec::with_capacity(FIELD_NET_BATCH);
        for epoch in 1..=epochs {
            order.shuffle(rng);
            let mut epoch_loss = 0.0;
            for ids in order.chunks(FIELD_NET_BATCH) {
                batch.clear();
                batch.extend(ids.iter().map(|&i| samples[i].clone()));
                let (x, t) = self.batch_tensors(&batch)?;
                self.net.zero_grads();
                let y = self.net.forward(&x);
                let (l, g) = loss::mse(&y, &t);
                self.net.backward(&g);
                self.adam.step(&mut self.net.params_mut());
                epoch_loss += l * ids.len() as f64;
            }
            let train_loss = epoch_loss / samples.len() as f64;
            let val_loss = if validation.is_empty() {
                None
            } else {
                Some(self.evaluate_loss(validation)?)
            };
            rows.push(TrainRow { epoch, train_loss, val_loss });
            if epoch >= PLATEAU_WINDOW {
                let past = rows[epoch - PLATEAU_WINDOW].train_loss;
                if past - train_loss < PLATEAU_RELATIVE * past {
                    early_stopped = true;
                    break;
                }
            }
        }
        self.folded_tail = fold_tail(&self.net)?;
        let epochs_run = rows.len();
        Ok(TrainReport { rows, epochs_run, early_stopped })
    }

    /// Zeroes the head so the network predicts a uniform reference field.
    pub fn zero_head(&mut self) {
        let mut params = self.net.params_mut();
        let n = params.len();
        for p in &mut params[n - 2..] {
            p.value.fill(0.0);
        }
        drop(params);
        self.folded_tail = fold_tail(&self.net).expect("architecture unchanged");
    }
}

/// Folds the 1×1 head into the final upsample-conv stage: with a linear tail,
/// `head(up(x))` equals a single-output upsample-conv whose kernels are the
/// head-weighted sums of the stage kernels.
fn fold_tail(net: &Network<f32>) -> Result<UpsampleConv<f32>> {
    let specs = net.specs();
    let n = specs.len();
    let (in_ch, mid_ch, factor) = match (specs.get(n.wrapping_sub(2)), specs.last()) {
        (
            Some(&LayerSpec::UpsampleConv { in_ch, out_ch, factor }),
            Some(&LayerSpec::Conv2d { in_ch: h_in, out_ch: 1, kernel: 1, stride: 1, padding: 0 }),
        ) if h_in == out_ch => (in_ch, out_ch, factor),
        _ => {
            return Err(Error::Spec(
                "field network must end with an upsample-conv stage and a 1×1 head".into(),
            ))
        }
    };
    let params = net.params();
    let [up_w, up_b, head_w, head_b] = &params[params.len() - 4..] else {
        unreachable!("two trailing layers with two parameters each");
    };
    let mut rng = crate::rng::tagged(0, "fold-tail");
    let mut folded = UpsampleConv::new(in_ch, 1, factor, Init::He, &mut rng);
    {
        let fw = folded.w.value.data_mut();
        fw.fill(0.0);
        for o in 0..mid_ch {
            let hw = head_w.value.data()[o];
            for i in 0..in_ch {
                for k in 0..9 {
                    fw[i * 9 + k] += hw * up_w.value.data()[(o * in_ch + i) * 9 + k];
                }
            }
        }
    }
    let bias = head_b.value.data()[0]
        + (0..mid_ch)
            .map(|o| head_w.value.data()[o] * up_b.value.data()[o])
            .sum::<f32>();
    folded.b.value.data_mut()[0] = bias;
    Ok(folded)
}

/// Returns the indices of the `m` smallest values, ascending, ties broken by
/// smaller index.
pub fn rank_smallest(values: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{CallKind, ThermalSolver};
    use crate::grid::sample::random_layout;
    use crate::rng::tagged;
    use approx::assert_relative_eq;

    fn reduced_spec() -> ProblemSpec {
        ProblemSpec::min_max().with_fem_resolution(50)
    }

    #[test]
    fn architecture_full_profile_matches_frozen_shape() {
        let specs = field_net_architecture(20).unwrap();
        assert_eq!(
            specs,
            vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 32, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::UpsampleConv { in_ch: 32, out_ch: 64, factor: 2 },
                LayerSpec::Relu,
                LayerSpec::SeResBlock { channels: 64, reduction: 4 },
                LayerSpec::UpsampleConv { in_ch: 64, out_ch: 32, factor: 2 },
                LayerSpec::Relu,
                LayerSpec::SeResBlock { channels: 32, reduction: 4 },
                LayerSpec::UpsampleConv { in_ch: 32, out_ch: 16, factor: 5 },
                LayerSpec::Conv2d { in_ch: 16, out_ch: 1, kernel: 1, stride: 1, padding: 0 },
            ]
        );
        let mut rng = tagged(80, "surrogate-test");
        let net: Network<f32> = Network::from_specs(&specs, &mut rng);
        assert_eq!(net.param_count(), 136_953);
    }

    #[test]
    fn architecture_rejects_prime_refinement() {
        assert!(field_net_architecture(7).is_err());
        assert!(field_net_architecture(1).is_err());
        assert!(upsample_factors(12).unwrap() == vec![2, 2, 3]);
    }

    #[test]
    fn output_shape_tracks_refinement() {
        for (fem_res, refinement) in [(50usize, 5usize), (200, 20)] {
            let spec = ProblemSpec::min_max().with_fem_resolution(fem_res);
            assert_eq!(spec.refinement(), refinement);
            let mut rng = tagged(81, "surrogate-test");
            let s = FieldSurrogate::new(&spec, &mut rng).unwrap();
            let layout = Layout::from_indices(10, &(0..20).collect::<Vec<_>>()).unwrap();
            let field = s.predict_field(&layout).unwrap();
            assert_eq!(field.resolution(), fem_res);
        }
    }

    #[test]
    fn normalization_roundtrips() {
        let n = Normalization::new(298.0, 52.0).unwrap();
        for t in [298.0, 310.5, 350.0, 420.0, 250.0] {
            assert_relative_eq!(n.denormalize(n.normalize(t)), t, max_relative = 1e-12);
        }
        assert!(Normalization::new(298.0, 0.0).is_err());
    }

    #[test]
    fn zeroed_head_predicts_uniform_reference() {
        let spec = reduced_spec();
        let mut rng = tagged(82, "surrogate-test");
        let mut s = FieldSurrogate::new(&spec, &mut rng).unwrap();
        s.zero_head();
        let layout = random_layout(&spec, &mut rng);
        let field = s.predict_field(&layout).unwrap();
        for &v in field.values() {
            assert_relative_eq!(v, 298.0, epsilon = 1e-9);
        }
        // The reduced objective path agrees.
        let obj = s.objective(&layout, &ObjectiveSpec::min_max()).unwrap();
        assert_relative_eq!(obj, 298.0, epsilon = 1e-9);
    }

    /// The folded-tail objective path must agree with the materialized field.
    #[test]
    fn objective_matches_field_composition() {
        let spec = reduced_spec();
        let mut rng = tagged(83, "surrogate-test");
        let s = FieldSurrogate::new(&spec, &mut rng).unwrap();
        let probe = spec.probe_point.unwrap_or((0.1, 0.05625));
        let objective = ObjectiveSpec::constrained(335.0, probe, 10.0);
        let layouts: Vec<Layout> =
            (0..8).map(|_| random_layout(&spec, &mut rng)).collect();
        let fast = s.objective_batch(&layouts, &objective).unwrap();
        for (layout, &got) in layouts.iter().zip(&fast) {
            let field = s.predict_field(layout).unwrap();
            let t_point = field.probe(probe.0, probe.1).unwrap();
            let want = objective.value(field.max(), Some(t_point));
            assert_relative_eq!(got, want, epsilon = 1e-3);
        }
    }

    #[test]
    fn screening_is_stable_and_bounded() {
        let values = [3.0, 1.0, 2.0, 1.0, 0.5];
        assert_eq!(rank_smallest(&values, 3), vec![4, 1, 3]);
        assert_eq!(rank_smallest(&values, 99), vec![4, 1, 3, 2, 0]);
        let ties = [1.0; 4];
        assert_eq!(rank_smallest(&ties, 2), vec![0, 1]);
    }

    /// Screening with the surrogate must order exactly like brute force on
    /// the same predictions (argsort invariance under monotone transforms).
    #[test]
    fn screen_equals_brute_force_on_predictions() {
        let spec = reduced_spec();
        let mut rng = tagged(84, "surrogate-test");
        let s = FieldSurrogate::new(&spec, &mut rng).unwrap();
        let layouts: Vec<Layout> =
            (0..30).map(|_| random_layout(&spec, &mut rng)).collect();
        let objective = ObjectiveSpec::min_max();
        let picked = s.screen_indices(&layouts, &objective, 10).unwrap();
        let values = s.objective_batch(&layouts, &objective).unwrap();
        let brute = rank_smallest(&values, 10);
        assert_eq!(picked, brute);
        // Monotone transform of the objective cannot change the selection.
        let squashed: Vec<f64> = values.iter().map(|v| (v / 100.0).tanh()).collect();
        assert_eq!(rank_smallest(&squashed, 10), brute);
        assert_eq!(s.screen(&layouts, &objective, 10).unwrap().len(), 10);
    }

    #[test]
    fn training_memorizes_a_single_sample() {
        let spec = reduced_spec();
        let solver = ThermalSolver::new(spec.clone()).unwrap();
        let mut rng = tagged(85, "surrogate-test");
        let layout = random_layout(&spec, &mut rng);
        let field = solver.solve(&layout, CallKind::TrainingLabel).unwrap();
        let mut s = FieldSurrogate::new(&spec, &mut rng).unwrap();
        let sample = LabeledSample::new(layout, &field, &s.norm());
        // Two rounds: also exercises warm-start (parameters and Adam moments
        // persist across calls).
        let first = s.train(&[sample.clone()], 400, &mut rng).unwrap();
        let report = s.train(&[sample.clone()], 400, &mut rng).unwrap();
        assert!(
            report.final_train_loss() < first.final_train_loss(),
            "second round must continue, not restart: {} then {}",
            first.final_train_loss(),
            report.final_train_loss()
        );
        assert!(
            report.final_train_loss() < 5e-3,
            "single-sample loss {} after {}+{} epochs",
            report.final_train_loss(),
            first.epochs_run,
            report.epochs_run
        );
        // Memorization shows up in kelvin: mean error under 1% of ~300 K.
        let mre = s.mean_relative_error(&[sample]).unwrap();
        assert!(mre < 1e-2, "memorized mean relative error {mre}");
    }

    #[test]
    fn training_rejects_empty_dataset() {
        let spec = reduced_spec();
        let mut rng = tagged(86, "surrogate-test");
        let mut s = FieldSurrogate::new(&spec, &mut rng).unwrap();
        assert!(s.train(&[], 10, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surrogate.tnn1");
        let spec = reduced_spec();
        let mut rng = tagged(87, "surrogate-test");
        let s = FieldSurrogate::new(&spec, &mut rng).unwrap();
        s.save(&path).unwrap();
        let loaded = FieldSurrogate::load(&spec, &path).unwrap();
        let layout = random_layout(&spec, &mut rng);
        assert_eq!(
            s.predict_field(&layout).unwrap().values(),
            loaded.predict_field(&layout).unwrap().values()
        );
        // A checkpoint from a different geometry is rejected.
        let other = ProblemSpec::min_max().with_fem_resolution(200);
        assert!(FieldSurrogate::load(&other, &path).is_err());
    }

    #[test]
    fn labeled_sample_reconstructs_field_within_f32() {
        let spec = reduced_spec();
        let solver = ThermalSolver::new(spec.clone()).unwrap();
        let mut rng = tagged(88, "surrogate-test");
        let layout = random_layout(&spec, &mut rng);
        let field = solver.solve(&layout, CallKind::TrainingLabel).unwrap();
        let norm = Normalization::for_spec(&spec);
        let sample = LabeledSample::new(layout, &field, &norm);
        let back = sample.field(spec.domain_length, &norm).unwrap();
        for (&a, &b) in field.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-4, "f32 roundtrip moved {a} to {b}");
        }
    }
}
