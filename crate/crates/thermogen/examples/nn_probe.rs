use rand::Rng;
use thermogen::nn::*;

fn run<T: Scalar>(label: &str) {
    let mut rng = thermogen::rng::tagged(1, "probe");
    let specs = vec![
        LayerSpec::Conv2d { in_ch: 1, out_ch: 32, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::UpsampleConv { in_ch: 32, out_ch: 64, factor: 2 },
        LayerSpec::Relu,
        LayerSpec::SeResBlock { channels: 64, reduction: 4 },
        LayerSpec::UpsampleConv { in_ch: 64, out_ch: 32, factor: 2 },
        LayerSpec::Relu,
        LayerSpec::SeResBlock { channels: 32, reduction: 4 },
        LayerSpec::UpsampleConv { in_ch: 32, out_ch: 16, factor: 5 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { in_ch: 16, out_ch: 1, kernel: 1, stride: 1, padding: 0 },
    ];
    let mut net: Network<T> = Network::from_specs(&specs, &mut rng);
    println!("== {label}: params {}", net.param_count());
    let mut x: Tensor<T> = Tensor::zeros(&[10, 1, 10, 10]);
    for v in x.data_mut() {
        *v = T::from_f64(rng.random_range(0.0..1.0));
    }
    let y = net.infer(&x);
    println!("out shape {:?}", y.shape());
    let reps = 5u32;
    let t0 = std::time::Instant::now();
    for _ in 0..reps {
        let _ = net.infer(&x);
    }
    let dt = t0.elapsed();
    println!("infer batch10: {:?}/batch = {:?}/sample", dt / reps, dt / reps / 10);

    let single: Tensor<T> = Tensor::zeros(&[1, 1, 10, 10]);
    let t0 = std::time::Instant::now();
    for _ in 0..reps {
        let _ = net.infer(&single);
    }
    println!("infer single: {:?}/sample", t0.elapsed() / reps);

    let mut adam: Adam<T> = Adam::new(1e-3);
    let target: Tensor<T> = Tensor::zeros(&[10, 1, 200, 200]);
    let t0 = std::time::Instant::now();
    for _ in 0..reps {
        net.zero_grads();
        let y = net.forward(&x);
        let (_l, g) = loss::mse(&y, &target);
        net.backward(&g);
        adam.step(&mut net.params_mut());
    }
    let dt = t0.elapsed();
    println!("train step batch10: {:?}/batch = {:?}/sample", dt / reps, dt / reps / 10);

    // Fused screening tail: conv stem portion up to the last upsample input is
    // 40x40x32; time the up5+relu+conv1x1 tail alone, fused vs materialized.
    let mut rng2 = thermogen::rng::tagged(2, "probe");
    let up: UpsampleConv<T> = UpsampleConv::new(32, 16, 5, Init::He, &mut rng2);
    let head: Conv2d<T> = Conv2d::new(16, 1, 1, 1, 0, Init::He, &mut rng2);
    let mut mid: Tensor<T> = Tensor::zeros(&[10, 32, 40, 40]);
    for v in mid.data_mut() {
        *v = T::from_f64(rng2.random_range(-0.5..0.5));
    }
    let points = [(180usize, 20usize), (181, 20), (180, 21), (181, 21)];
    let _ = fused_tail_extrema(&up, &head, &mid, &points);
    let t0 = std::time::Instant::now();
    for _ in 0..reps {
        let _ = fused_tail_extrema(&up, &head, &mid, &points);
    }
    let dt = t0.elapsed();
    println!("fused tail batch10: {:?}/batch = {:?}/sample", dt / reps, dt / reps / 10);

    // Per-layer forward/backward breakdown (batch 10).
    let mut acts = vec![x.clone()];
    for l in net.layers_mut() {
        let y = l.forward(acts.last().unwrap());
        acts.push(y);
    }
    let n = acts.len() - 1;
    let mut fw = vec![std::time::Duration::ZERO; n];
    let mut bw = vec![std::time::Duration::ZERO; n];
    for _ in 0..reps {
        for (li, l) in net.layers_mut().iter_mut().enumerate() {
            let t = std::time::Instant::now();
            let _ = l.forward(&acts[li]);
            fw[li] += t.elapsed();
        }
        let mut g = acts.last().unwrap().clone();
        for (li, l) in net.layers_mut().iter_mut().enumerate().rev() {
            let t = std::time::Instant::now();
            g = l.backward(&g);
            bw[li] += t.elapsed();
        }
    }
    for li in 0..n {
        println!(
            "layer {:2} {:<45} fw {:>12?} bw {:>12?}",
            li,
            format!("{:?}", net.layers()[li].spec()),
            fw[li] / reps,
            bw[li] / reps
        );
    }
}

fn main() {
    run::<f64>("f64");
    run::<f32>("f32");
}
