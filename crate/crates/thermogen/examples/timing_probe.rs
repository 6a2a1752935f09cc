use thermogen::*;
fn main() {
    let spec = ProblemSpec::min_max();
    let mut rng = thermogen::rng::tagged(1, "probe");
    let layout = thermogen::grid::random_layout(&spec, &mut rng);
    // cold: fresh solver, includes assembly + factorization
    let t0 = std::time::Instant::now();
    let solver = ThermalSolver::new(spec.clone()).unwrap();
    let f = solver.solve(&layout, CallKind::Validation).unwrap();
    println!("cold solve: {:?}  (max {:.3} K)", t0.elapsed(), f.max());
    // warm solves
    let t0 = std::time::Instant::now();
    let n = 20;
    for _ in 0..n { solver.solve(&layout, CallKind::Validation).unwrap(); }
    println!("warm solve: {:?}", t0.elapsed() / n);
}
