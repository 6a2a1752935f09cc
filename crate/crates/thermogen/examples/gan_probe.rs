use std::time::Instant;
use thermogen::nn::{LayerSpec, Network, Tensor};
use thermogen::rng::tagged;

fn time_layers(label: &str, specs: &[LayerSpec], x: &Tensor<f32>, reps: usize) {
    let mut rng = tagged(7, "gan-probe");
    let mut net: Network<f32> = Network::from_specs(specs, &mut rng);
    let y = net.forward(x);
    // Dense gradient: zero grads would let the value-skipping kernels elide
    // all the work and time nothing.
    let g = randn(y.shape(), &mut rng);
    net.backward(&g);
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = net.forward(x);
    }
    let fw = t0.elapsed().as_secs_f64() / reps as f64;
    let t1 = Instant::now();
    for _ in 0..reps {
        let _ = net.forward(x);
        let _ = net.backward(&g);
    }
    let fwbw = t1.elapsed().as_secs_f64() / reps as f64;
    println!("{label:<24} fw {:7.2} ms   bw {:7.2} ms", fw * 1e3, (fwbw - fw) * 1e3);
}

fn randn(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.sample::<f64, _>(rand_distr::StandardNormal) as f32;
    }
    assert_eq!(t.data().len(), n);
    t
}

fn time_train_step() {
    use rand::seq::index::sample;
    use thermogen::gan::{train_gan, GanDiscriminator, GanGenerator, GanTrainOptions};
    use thermogen::Layout;

    let mut rng = tagged(11, "gan-probe-train");
    let layouts: Vec<Layout> = (0..250)
        .map(|_| {
            let mut cells = vec![0u8; 100];
            for i in sample(&mut rng, 100, 20) {
                cells[i] = 1;
            }
            Layout::from_cells(10, cells).unwrap()
        })
        .collect();
    let mut gen = GanGenerator::new(10, &mut rng).unwrap();
    let mut disc = GanDiscriminator::new(10, &mut rng);
    let opts = GanTrainOptions::controlled(10, 20);
    let t0 = Instant::now();
    let report = train_gan(&mut gen, &mut disc, &layouts, &opts, &mut rng).unwrap();
    let per = t0.elapsed().as_secs_f64() / report.rows.len() as f64;
    println!("{:<24} {:7.2} ms / step", "full train step", per * 1e3);
}

fn main() {
    let mut rng = tagged(8, "gan-probe");
    let z = randn(&[250, 10], &mut rng);
    let img = randn(&[250, 1, 10, 10], &mut rng);
    let mid = randn(&[250, 64, 5, 5], &mut rng);
    let up = randn(&[250, 32, 10, 10], &mut rng);

    time_layers("gen dense+relu+reshape", &[
        LayerSpec::Dense { inputs: 10, outputs: 1600 },
        LayerSpec::Relu,
        LayerSpec::Reshape { shape: vec![64, 5, 5] },
    ], &z, 20);
    time_layers("gen upconv 64->32 x2", &[
        LayerSpec::UpsampleConv { in_ch: 64, out_ch: 32, factor: 2 },
    ], &mid, 20);
    time_layers("gen conv 32->16", &[
        LayerSpec::Conv2d { in_ch: 32, out_ch: 16, kernel: 3, stride: 1, padding: 1 },
    ], &up, 20);
    time_layers("disc stack", &[
        LayerSpec::Conv2d { in_ch: 1, out_ch: 16, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Conv2d { in_ch: 16, out_ch: 32, kernel: 3, stride: 2, padding: 1 },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Reshape { shape: vec![800] },
        LayerSpec::Dense { inputs: 800, outputs: 1 },
        LayerSpec::Sigmoid,
    ], &img, 20);
    time_train_step();
}
