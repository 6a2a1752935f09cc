use std::time::Instant;
use thermogen::fem::{CallKind, ThermalSolver};
use thermogen::ga::ObjectiveSpec;
use thermogen::grid::{random_layout, ProblemSpec};
use thermogen::rng::tagged;
use thermogen::surrogate::{FieldSurrogate, LabeledSample};

fn main() {
    let spec = ProblemSpec::min_max();
    let mut rng = tagged(21, "surrogate-probe");
    let solver = ThermalSolver::new(spec.clone()).unwrap();
    let mut surrogate = FieldSurrogate::new(&spec, &mut rng).unwrap();
    let norm = surrogate.norm();

    let t0 = Instant::now();
    let samples: Vec<LabeledSample> = (0..40)
        .map(|_| {
            let layout = random_layout(&spec, &mut rng);
            let field = solver.solve(&layout, CallKind::TrainingLabel).unwrap();
            LabeledSample::new(layout, &field, &norm)
        })
        .collect();
    println!("label 40 samples      {:7.2} ms", t0.elapsed().as_secs_f64() * 1e3);

    let t1 = Instant::now();
    let report = surrogate.train(&samples, 5, &mut rng).unwrap();
    let steps = report.epochs_run * samples.len().div_ceil(10);
    println!(
        "train step (batch 10) {:7.2} ms  ({} steps)",
        t1.elapsed().as_secs_f64() * 1e3 / steps as f64,
        steps
    );

    let pool: Vec<_> = (0..2000).map(|_| random_layout(&spec, &mut rng)).collect();
    let t2 = Instant::now();
    let vals = surrogate.objective_batch(&pool, &ObjectiveSpec::min_max()).unwrap();
    println!(
        "screen per layout     {:7.3} ms  (best {:.2} K)",
        t2.elapsed().as_secs_f64() * 1e3 / pool.len() as f64,
        vals.iter().cloned().fold(f64::INFINITY, f64::min)
    );

    let one = [pool[0].clone()];
    let t3 = Instant::now();
    for _ in 0..50 {
        let _ = surrogate.predict_field(&one[0]).unwrap();
    }
    println!("predict full field    {:7.2} ms", t3.elapsed().as_secs_f64() * 1e3 / 50.0);
}
