//! Layout generator: a small GAN whose generator ends in a count-controlling
//! layer, so every emitted layout has exactly the requested number of sources.
//!
//! The generator maps a 10-dimensional latent vector to a real score map over
//! the design grid. The controlling layer subtracts a per-image threshold
//! `vf = (s₍n₎ + s₍n+1₎)/2` (the mean of the n-th and (n+1)-th largest
//! scores) and binarizes; selection is by top-n score with row-major index
//! tie-break, which guarantees the count even when scores tie. Training uses
//! a straight-through estimator: the discriminator sees the hard layout, and
//! the generator's backward pass uses the gradient of `sigmoid(score − vf)`
//! with `vf` held constant.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ga::sample_latent;
use crate::grid::Layout;
use crate::nn::{checkpoint, loss, sigmoid_scalar, LayerSpec, Network, Tensor};

/// Latent-vector dimension.
pub const LATENT_DIM: usize = 10;
/// Adam learning rate for both networks.
pub const GAN_LR: f64 = 5e-4;
/// Minibatch size; the dataset must hold at least this many layouts.
pub const GAN_BATCH: usize = 250;

/// Layer stack of the generator network (latent vector to score map).
pub fn generator_architecture(resolution: usize) -> Result<Vec<LayerSpec>> {
    if resolution < 2 || resolution % 2 != 0 {
        return Err(Error::Spec(format!(
            "generator needs an even design resolution ≥ 2, got {resolution}"
        )));
    }
    let base = resolution / 2;
    Ok(vec![
        LayerSpec::Dense { inputs: LATENT_DIM, outputs: 64 * base * base },
        LayerSpec::Relu,
        LayerSpec::Reshape { shape: vec![64, base, base] },
        LayerSpec::UpsampleConv { in_ch: 64, out_ch: 32, factor: 2 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { in_ch: 32, out_ch: 16, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { in_ch: 16, out_ch: 1, kernel: 3, stride: 1, padding: 1 },
    ])
}

/// Layer stack of the discriminator (layout to probability-real score).
pub fn discriminator_architecture(resolution: usize) -> Vec<LayerSpec> {
    let half = resolution.div_ceil(2);
    vec![
        LayerSpec::Conv2d { in_ch: 1, out_ch: 16, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Conv2d { in_ch: 16, out_ch: 32, kernel: 3, stride: 2, padding: 1 },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Reshape { shape: vec![32 * half * half] },
        LayerSpec::Dense { inputs: 32 * half * half, outputs: 1 },
        LayerSpec::Sigmoid,
    ]
}

/// Threshold and mask for exactly `n` sources from a raw score map.
///
/// `vf` is the mean of the n-th and (n+1)-th largest scores, or `min − 1`
/// when `n` fills the grid. The mask picks the top `n` scores, breaking ties
/// toward the smaller row-major index, so it always has exactly `n` ones.
pub fn controlling_threshold(scores: &[f64], n: usize) -> Result<(f64, Vec<u8>)> {
    let cells = scores.len();
    if n < 1 || n > cells {
        return Err(Error::Spec(format!(
            "source count {n} outside 1..={cells} for a {cells}-cell grid"
        )));
    }
    let mut order: Vec<usize> = (0..cells).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let vf = if n == cells {
        scores.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0
    } else {
        (scores[order[n - 1]] + scores[order[n]]) / 2.0
    };
    let mut mask = vec![0u8; cells];
    for &i in &order[..n] {
        mask[i] = 1;
    }
    Ok((vf, mask))
}

/// Generator wrapper owning the score-map network. Arithmetic runs in f32
/// (plenty for adversarial training and roughly 1.5× faster on this CPU);
/// the public interface and checkpoints stay f64.
pub struct GanGenerator {
    net: Network<f32>,
    resolution: usize,
}

impl GanGenerator {
    pub fn new(resolution: usize, rng: &mut impl Rng) -> Result<Self> {
        let specs = generator_architecture(resolution)?;
        Ok(GanGenerator { net: Network::from_specs(&specs, rng), resolution })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn raw_scores(&self, zs: &[Vec<f64>]) -> Tensor<f32> {
        self.net.infer(&latent_tensor(zs))
    }

    /// Raw score maps for a batch of latent vectors, shape `[b, 1, r, r]`.
    pub fn score_maps(&self, zs: &[Vec<f64>]) -> Tensor<f64> {
        let raw = self.raw_scores(zs);
        let mut out = Tensor::zeros(raw.shape());
        for (o, &v) in out.data_mut().iter_mut().zip(raw.data()) {
            *o = v as f64;
        }
        out
    }

    /// Emits the layout for one latent vector; deterministic in
    /// (parameters, z, n), always exactly `n` sources.
    pub fn generate(&self, z: &[f64], n: usize) -> Result<Layout> {
        Ok(self.generate_batch(std::slice::from_ref(&z.to_vec()), n)?.remove(0))
    }

    /// Batched [`GanGenerator::generate`].
    pub fn generate_batch(&self, zs: &[Vec<f64>], n: usize) -> Result<Vec<Layout>> {
        let cells = self.resolution * self.resolution;
        let mut out = Vec::with_capacity(zs.len());
        let mut plane = vec![0.0f64; cells];
        // Chunked so huge candidate pools don't hold all score maps at once.
        for chunk in zs.chunks(1024) {
            let scores = self.raw_scores(chunk);
            for s in 0..chunk.len() {
                for (p, &v) in plane.iter_mut().zip(&scores.data()[s * cells..]) {
                    *p = v as f64;
                }
                let (_, mask) = controlling_threshold(&plane, n)?;
                out.push(Layout::from_cells(self.resolution, mask)?);
            }
        }
        Ok(out)
    }

    /// Ablation path: binarize at `sigmoid(score) ≥ 0.5` (score ≥ 0) with no
    /// count control, so the source count varies with the score map.
    pub fn generate_uncontrolled(&self, z: &[f64]) -> Result<Layout> {
        let scores = self.raw_scores(std::slice::from_ref(&z.to_vec()));
        let mask: Vec<u8> = scores.data().iter().map(|&s| (s >= 0.0) as u8).collect();
        Layout::from_cells(self.resolution, mask)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(&self.net, path)
    }

    pub fn load(resolution: usize, path: &std::path::Path) -> Result<Self> {
        let net: Network<f32> = checkpoint::load(path)?;
        if net.specs() != generator_architecture(resolution)? {
            return Err(Error::format(path, "checkpoint is not a generator for this grid"));
        }
        Ok(GanGenerator { net, resolution })
    }
}

/// Discriminator wrapper; outputs the probability a layout is from the data.
pub struct GanDiscriminator {
    net: Network<f32>,
    resolution: usize,
}

impl GanDiscriminator {
    pub fn new(resolution: usize, rng: &mut impl Rng) -> Self {
        let specs = discriminator_architecture(resolution);
        GanDiscriminator { net: Network::from_specs(&specs, rng), resolution }
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// P(real) for each layout.
    pub fn classify(&self, layouts: &[Layout]) -> Result<Vec<f64>> {
        let x = layout_tensor(layouts, self.resolution)?;
        Ok(self.net.infer(&x).data().iter().map(|&p| p as f64).collect())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(&self.net, path)
    }

    pub fn load(resolution: usize, path: &std::path::Path) -> Result<Self> {
        let net: Network<f32> = checkpoint::load(path)?;
        if net.specs() != discriminator_architecture(resolution) {
            return Err(Error::format(path, "checkpoint is not a discriminator for this grid"));
        }
        Ok(GanDiscriminator { net, resolution })
    }
}

/// Per-epoch adversarial training record.
#[derive(Debug, Clone)]
pub struct GanTrainRow {
    pub epoch: usize,
    /// Mean discriminator BCE over real and generated batches.
    pub d_loss: f64,
    /// Mean generator (non-saturating) BCE.
    pub g_loss: f64,
    /// Fraction of real/generated samples the discriminator classifies
    /// correctly at threshold 0.5.
    pub d_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct GanReport {
    pub rows: Vec<GanTrainRow>,
}

#[derive(Debug, Clone)]
pub struct GanTrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// `Some(n)`: controlling layer active, every training sample the
    /// generator produces has exactly `n` sources. `None`: uncontrolled
    /// ablation (binarize at score ≥ 0).
    pub count_control: Option<usize>,
}

impl GanTrainOptions {
    pub fn controlled(epochs: usize, n: usize) -> Self {
        GanTrainOptions { epochs, lr: GAN_LR, batch: GAN_BATCH, count_control: Some(n) }
    }

    pub fn uncontrolled(epochs: usize) -> Self {
        GanTrainOptions { epochs, lr: GAN_LR, batch: GAN_BATCH, count_control: None }
    }
}

fn latent_tensor(zs: &[Vec<f64>]) -> Tensor<f32> {
    let mut x = Tensor::zeros(&[zs.len(), LATENT_DIM]);
    for (i, z) in zs.iter().enumerate() {
        assert_eq!(z.len(), LATENT_DIM, "latent vector must have {LATENT_DIM} entries");
        for (dst, &v) in
            x.data_mut()[i * LATENT_DIM..(i + 1) * LATENT_DIM].iter_mut().zip(z)
        {
            *dst = v as f32;
        }
    }
    x
}

fn layout_tensor(layouts: &[Layout], resolution: usize) -> Result<Tensor<f32>> {
    let cells = resolution * resolution;
    let mut x = Tensor::zeros(&[layouts.len(), 1, resolution, resolution]);
    for (i, layout) in layouts.iter().enumerate() {
        if layout.resolution() != resolution {
            return Err(Error::Layout(format!(
                "layout resolution {} does not match the GAN grid {resolution}",
                layout.resolution()
            )));
        }
        for (dst, &c) in
            x.data_mut()[i * cells..(i + 1) * cells].iter_mut().zip(layout.cells())
        {
            *dst = c as f32;
        }
    }
    Ok(x)
}

fn sample_latent_batch(count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..count).map(|_| sample_latent(LATENT_DIM, rng)).collect()
}

/// Binarizes a score-map batch under the training-time control setting,
/// returning the hard tensor and each image's threshold.
fn binarize_scores(
    scores: &Tensor<f32>,
    cells: usize,
    count_control: Option<usize>,
) -> Result<(Tensor<f32>, Vec<f32>)> {
    let b = scores.shape()[0];
    let mut hard = Tensor::zeros(scores.shape());
    let mut vfs = Vec::with_capacity(b);
    let mut plane = vec![0.0f64; cells];
    for s in 0..b {
        let raw = &scores.data()[s * cells..(s + 1) * cells];
        for (p, &v) in plane.iter_mut().zip(raw) {
            *p = v as f64;
        }
        let (vf, mask) = match count_control {
            Some(n) => controlling_threshold(&plane, n)?,
            None => (0.0, plane.iter().map(|&v| (v >= 0.0) as u8).collect()),
        };
        for (dst, &m) in
            hard.data_mut()[s * cells..(s + 1) * cells].iter_mut().zip(&mask)
        {
            *dst = m as f32;
        }
        vfs.push(vf as f32);
    }
    Ok((hard, vfs))
}

/// Alternating adversarial training on a fixed layout dataset.
///
/// Each epoch shuffles the dataset and walks it in full minibatches; per
/// batch the discriminator sees one real and one freshly generated batch
/// (labels 1/0), then the generator takes a non-saturating step through the
/// straight-through path. Partial trailing batches are skipped so every
/// update uses the configured batch size.
pub fn train_gan(
    gen: &mut GanGenerator,
    disc: &mut GanDiscriminator,
    layouts: &[Layout],
    opts: &GanTrainOptions,
    rng: &mut impl Rng,
) -> Result<GanReport> {
    if layouts.len() < opts.batch {
        return Err(Error::Spec(format!(
            "GAN training needs at least one full batch ({} layouts), got {}",
            opts.batch,
            layouts.len()
        )));
    }
    if let Some(n) = opts.count_control {
        // Validate once up front instead of failing mid-epoch.
        controlling_threshold(&vec![0.0; gen.resolution * gen.resolution], n)?;
    }
    let res = gen.resolution;
    let cells = res * res;
    let mut adam_g: crate::nn::Adam<f32> = crate::nn::Adam::new(opts.lr);
    let mut adam_d: crate::nn::Adam<f32> = crate::nn::Adam::new(opts.lr);
    let ones: Tensor<f32> = Tensor::from_vec(&[opts.batch, 1], vec![1.0; opts.batch])?;
    let zeros: Tensor<f32> = Tensor::zeros(&[opts.batch, 1]);
    let mut order: Vec<usize> = (0..layouts.len()).collect();
    let mut rows = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        order.shuffle(rng);
        let (mut d_sum, mut g_sum, mut acc_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for ids in order.chunks_exact(opts.batch) {
            // One generator forward serves both halves of the step: the hard
            // batch is the discriminator's fake input, and the cached
            // activations back the generator update afterwards.
            let scores = gen.net.forward(&latent_tensor(&sample_latent_batch(
                opts.batch, rng,
            )));
            let (hard, vfs) = binarize_scores(&scores, cells, opts.count_control)?;

            // Discriminator step: real batch up, generated batch down.
            let real: Vec<Layout> = ids.iter().map(|&i| layouts[i].clone()).collect();
            let real_x = layout_tensor(&real, res)?;
            disc.net.zero_grads();
            let p_real = disc.net.forward(&real_x);
            let (l_real, g_real) = loss::bce(&p_real, &ones);
            let correct_real =
                p_real.data().iter().filter(|&&p| p > 0.5).count();
            disc.net.backward(&g_real);
            let p_fake = disc.net.forward(&hard);
            let (l_fake, g_fake) = loss::bce(&p_fake, &zeros);
            let correct_fake =
                p_fake.data().iter().filter(|&&p| p < 0.5).count();
            disc.net.backward(&g_fake);
            adam_d.step(&mut disc.net.params_mut());

            // Generator step: straight-through gradient of the binarization,
            // scored by the just-updated discriminator.
            disc.net.zero_grads();
            gen.net.zero_grads();
            let p_gen = disc.net.forward(&hard);
            let (l_gen, g_gen) = loss::bce(&p_gen, &ones);
            let d_hard = disc.net.backward(&g_gen);
            let mut d_scores = Tensor::zeros(scores.shape());
            for s in 0..opts.batch {
                let vf = vfs[s];
                let sd = &scores.data()[s * cells..(s + 1) * cells];
                let gd = &d_hard.data()[s * cells..(s + 1) * cells];
                let out = &mut d_scores.data_mut()[s * cells..(s + 1) * cells];
                for ((o, &g), &v) in out.iter_mut().zip(gd).zip(sd) {
                    let sig = sigmoid_scalar(v - vf);
                    *o = g * sig * (1.0 - sig);
                }
            }
            gen.net.backward(&d_scores);
            adam_g.step(&mut gen.net.params_mut());

            d_sum += (l_real + l_fake) / 2.0;
            g_sum += l_gen;
            acc_sum +=
                (correct_real + correct_fake) as f64 / (2 * opts.batch) as f64;
            batches += 1;
        }
        rows.push(GanTrainRow {
            epoch,
            d_loss: d_sum / batches as f64,
            g_loss: g_sum / batches as f64,
            d_accuracy: acc_sum / batches as f64,
        });
    }
    Ok(GanReport { rows })
}

/// Standard-normal latent batch, exposed for callers that track latents and
/// layouts together.
pub fn latent_batch(count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    sample_latent_batch(count, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::tagged;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn threshold_matches_hand_example() {
        // Five informative scores padded with zeros to a full grid.
        let mut scores = vec![0.0; 100];
        scores[..5].copy_from_slice(&[0.9, 0.8, 0.7, 0.3, 0.2]);
        let (vf, mask) = controlling_threshold(&scores, 2).unwrap();
        assert_relative_eq!(vf, 0.75);
        assert_eq!(mask.iter().filter(|&&m| m == 1).count(), 2);
        assert_eq!(mask[0], 1);
        assert_eq!(mask[1], 1);
    }

    #[test]
    fn threshold_breaks_ties_row_major() {
        let scores = vec![1.0; 100];
        let (_, mask) = controlling_threshold(&scores, 20).unwrap();
        assert!(mask[..20].iter().all(|&m| m == 1));
        assert!(mask[20..].iter().all(|&m| m == 0));
    }

    #[test]
    fn threshold_full_grid_uses_min_minus_one() {
        let scores: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let (vf, mask) = controlling_threshold(&scores, 100).unwrap();
        assert_relative_eq!(vf, -1.0);
        assert!(mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn threshold_rejects_out_of_range_counts() {
        let scores = vec![0.0; 100];
        assert!(controlling_threshold(&scores, 0).is_err());
        assert!(controlling_threshold(&scores, 101).is_err());
    }

    proptest! {
        /// Count invariant and score-monotonicity of the mask, any scores.
        #[test]
        fn threshold_always_selects_exactly_n(
            scores in proptest::collection::vec(-1e3f64..1e3, 100),
            n in 1usize..=100,
        ) {
            let (vf, mask) = controlling_threshold(&scores, n).unwrap();
            prop_assert_eq!(mask.iter().filter(|&&m| m == 1).count(), n);
            // Every selected score beats every unselected one, or ties with
            // a larger-index unselected cell.
            let lowest_in = (0..100)
                .filter(|&i| mask[i] == 1)
                .map(|i| (scores[i], i))
                .fold((f64::INFINITY, 0usize), |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 > a.1) { b } else { a });
            for i in 0..100 {
                if mask[i] == 0 {
                    prop_assert!(
                        scores[i] < lowest_in.0
                            || (scores[i] == lowest_in.0 && i > lowest_in.1)
                    );
                }
            }
            if n < 100 {
                // vf sits between the boundary scores.
                let mut sorted = scores.clone();
                sorted.sort_by(|a, b| b.total_cmp(a));
                prop_assert!(vf <= sorted[n - 1] && vf >= sorted[n]);
            }
        }
    }

    #[test]
    fn generate_is_deterministic_and_counted() {
        let mut rng = tagged(90, "gan-test");
        let gen = GanGenerator::new(10, &mut rng).unwrap();
        let z = vec![0.0; LATENT_DIM];
        let a = gen.generate(&z, 20).unwrap();
        let b = gen.generate(&z, 20).unwrap();
        assert_eq!(a.cells(), b.cells());
        assert_eq!(a.count(), 20);
        for n in [1usize, 5, 99, 100] {
            for trial in 0..5 {
                let z = sample_latent(LATENT_DIM, &mut rng);
                let l = gen.generate(&z, n).unwrap();
                assert_eq!(l.count(), n, "n={n} trial={trial}");
            }
        }
        assert!(gen.generate(&z, 0).is_err());
        assert!(gen.generate(&z, 101).is_err());
    }

    #[test]
    fn architectures_have_expected_parameter_counts() {
        let mut rng = tagged(91, "gan-test");
        let gen = GanGenerator::new(10, &mut rng).unwrap();
        // dense 10→1600 + up-conv 64→32 + conv 32→16 + conv 16→1.
        assert_eq!(gen.param_count(), 17_600 + 18_464 + 4_624 + 145);
        let disc = GanDiscriminator::new(10, &mut rng);
        // conv 1→16 + conv 16→32 (stride 2) + dense 800→1.
        assert_eq!(disc.param_count(), 160 + 4_640 + 801);
        assert!(GanGenerator::new(9, &mut rng).is_err());
    }

    #[test]
    fn discriminator_outputs_probabilities() {
        let mut rng = tagged(92, "gan-test");
        let disc = GanDiscriminator::new(10, &mut rng);
        let layouts: Vec<Layout> = (0..4)
            .map(|i| Layout::from_indices(10, &[(i * 7) % 100, (i * 13 + 1) % 100]).unwrap())
            .collect();
        for p in disc.classify(&layouts).unwrap() {
            assert!((0.0..=1.0).contains(&p), "classifier output {p}");
        }
    }

    #[test]
    fn training_rejects_undersized_datasets() {
        let mut rng = tagged(93, "gan-test");
        let mut gen = GanGenerator::new(10, &mut rng).unwrap();
        let mut disc = GanDiscriminator::new(10, &mut rng);
        let few: Vec<Layout> =
            (0..10).map(|_| Layout::from_indices(10, &[0, 1]).unwrap()).collect();
        let opts = GanTrainOptions::controlled(1, 20);
        assert!(train_gan(&mut gen, &mut disc, &few, &opts, &mut rng).is_err());
        assert!(train_gan(&mut gen, &mut disc, &[], &opts, &mut rng).is_err());
    }

    /// The generator should shift its output distribution toward the data:
    /// trained on layouts whose sources all sit in the bottom half, it should
    /// place clearly more than the untrained ~half of sources there.
    #[test]
    fn training_moves_generated_mass_toward_dataset() {
        let mut rng = tagged(94, "gan-test");
        let mut gen = GanGenerator::new(10, &mut rng).unwrap();
        let mut disc = GanDiscriminator::new(10, &mut rng);
        // 250 layouts, 20 sources each, all in rows 5..10.
        let data: Vec<Layout> = (0..GAN_BATCH)
            .map(|_| {
                let cells = rand::seq::index::sample(&mut rng, 50, 20)
                    .into_iter()
                    .map(|i| 50 + i)
                    .collect::<Vec<_>>();
                Layout::from_indices(10, &cells).unwrap()
            })
            .collect();
        let before = bottom_half_mean(&gen, &mut rng);
        let opts = GanTrainOptions::controlled(120, 20);
        let report = train_gan(&mut gen, &mut disc, &data, &opts, &mut rng).unwrap();
        assert_eq!(report.rows.len(), 120);
        let after = bottom_half_mean(&gen, &mut rng);
        assert!(
            after > before && after > 13.0,
            "bottom-half sources per layout, before {before:.2} after {after:.2}"
        );
        // Counts stay exact throughout.
        for z in sample_latent_batch(20, &mut rng) {
            assert_eq!(gen.generate(&z, 20).unwrap().count(), 20);
        }
    }

    fn bottom_half_mean(gen: &GanGenerator, rng: &mut impl Rng) -> f64 {
        let layouts = gen.generate_batch(&sample_latent_batch(200, rng), 20).unwrap();
        let total: usize = layouts
            .iter()
            .map(|l| l.source_indices().iter().filter(|&&i| i >= 50).count())
            .sum();
        total as f64 / layouts.len() as f64
    }

    #[test]
    fn uncontrolled_generation_varies_counts() {
        let mut rng = tagged(95, "gan-test");
        let gen = GanGenerator::new(10, &mut rng).unwrap();
        let counts: std::collections::HashSet<usize> = (0..50)
            .map(|_| {
                gen.generate_uncontrolled(&sample_latent(LATENT_DIM, &mut rng))
                    .unwrap()
                    .count()
            })
            .collect();
        assert!(counts.len() > 1, "uncontrolled counts all identical: {counts:?}");
    }

    #[test]
    fn checkpoints_roundtrip_both_networks() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = tagged(96, "gan-test");
        let gen = GanGenerator::new(10, &mut rng).unwrap();
        let disc = GanDiscriminator::new(10, &mut rng);
        let gp = dir.path().join("gen.tnn1");
        let dp = dir.path().join("disc.tnn1");
        gen.save(&gp).unwrap();
        disc.save(&dp).unwrap();
        let gen2 = GanGenerator::load(10, &gp).unwrap();
        let z = sample_latent(LATENT_DIM, &mut rng);
        assert_eq!(
            gen.generate(&z, 20).unwrap().cells(),
            gen2.generate(&z, 20).unwrap().cells()
        );
        let disc2 = GanDiscriminator::load(10, &dp).unwrap();
        let sample = vec![gen.generate(&z, 20).unwrap()];
        assert_relative_eq!(
            disc.classify(&sample).unwrap()[0],
            disc2.classify(&sample).unwrap()[0],
            max_relative = 1e-12
        );
        // Mismatched geometry is rejected.
        assert!(GanGenerator::load(10, &dp).is_err());
    }
}
