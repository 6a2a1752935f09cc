//! Steady-state conduction solver used as labeling and validation oracle.
//!
//! `-∇·(k ∇T) = φ(x, y)` is discretized with bilinear quadrilateral elements
//! on the uniform `fem_resolution²` mesh. The assembled stiffness matrix does
//! not depend on the layout, so one banded Cholesky factorization per solver
//! serves every solve; each call builds only the load vector and runs the two
//! triangular sweeps.

mod assembly;
mod banded;

pub use assembly::UNIT_ELEMENT_STIFFNESS;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::grid::{IntensityField, Layout, ProblemSpec};

/// Why a solve was requested; drives separate budget counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKind {
    /// Labeling a layout to train the surrogate or the generator.
    TrainingLabel,
    /// Checking a candidate the optimizer reported.
    Validation,
    /// A baseline optimizer consuming its own budget.
    Baseline,
}

/// Monotone counts of completed solves per [`CallKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FemCounts {
    pub training_labels: u64,
    pub validation: u64,
    pub baseline: u64,
}

impl FemCounts {
    pub fn total(&self) -> u64 {
        self.training_labels + self.validation + self.baseline
    }
}

/// Steady-state temperature at cell centers, row-major with row 0 at `y = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    resolution: usize,
    domain_length: f64,
    values: Vec<f64>,
}

impl TemperatureField {
    pub fn from_values(resolution: usize, domain_length: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != resolution * resolution {
            return Err(Error::Shape(format!(
                "expected {} cell temperatures, got {}",
                resolution * resolution,
                values.len()
            )));
        }
        Ok(TemperatureField { resolution, domain_length, values })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear interpolation on the cell-center lattice, clamped to the
    /// outermost centers; `(x, y)` must lie inside the domain.
    pub fn probe(&self, x: f64, y: f64) -> Result<f64> {
        let l = self.domain_length;
        if !(0.0..=l).contains(&x) || !(0.0..=l).contains(&y) {
            return Err(Error::Spec(format!("probe point ({x}, {y}) outside [0, {l}]²")));
        }
        let res = self.resolution;
        if res == 1 {
            return Ok(self.values[0]);
        }
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
        let v00 = self.get(iy, ix);
        let v10 = self.get(iy, ix + 1);
        let v01 = self.get(iy + 1, ix);
        let v11 = self.get(iy + 1, ix + 1);
        Ok(v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy)
    }
}

/// Conduction solver bound to one [`ProblemSpec`]. Assembly and factorization
/// happen on the first solve and are reused afterwards; the solver is safe to
/// share across threads.
pub struct ThermalSolver {
    spec: ProblemSpec,
    system: OnceLock<std::result::Result<assembly::Assembled, String>>,
    counts: [AtomicU64; 3],
}

impl ThermalSolver {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        spec.validate()?;
        Ok(ThermalSolver {
            spec,
            system: OnceLock::new(),
            counts: [AtomicU64::new(0), AtomicU64::new(0), AtomicU64::new(0)],
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn system(&self) -> Result<&assembly::Assembled> {
        let stored = self.system.get_or_init(|| {
            assembly::assemble(&self.spec).map_err(|e| e.to_string())
        });
        match stored {
            Ok(sys) => Ok(sys),
            Err(msg) => Err(Error::IllPosed(msg.clone())),
        }
    }

    /// Forces assembly and factorization without solving.
    pub fn warm_up(&self) -> Result<()> {
        self.system().map(|_| ())
    }

    /// Solves for the temperature field of a layout.
    pub fn solve(&self, layout: &Layout, kind: CallKind) -> Result<TemperatureField> {
        let source = self.spec.intensity_field(layout)?;
        self.solve_source(&source, kind)
    }

    /// Solves for an arbitrary per-element source field (analytic checks,
    /// manufactured solutions).
    pub fn solve_source(&self, source: &IntensityField, kind: CallKind) -> Result<TemperatureField> {
        let system = self.system()?;
        let u = system.solve_nodes(&self.spec, source)?;
        let res = self.spec.fem_resolution;
        let np = system.nodes_per_side;
        let t0 = self.spec.sink_temperature;
        let mut values = vec![0.0; res * res];
        for er in 0..res {
            for ec in 0..res {
                let n00 = er * np + ec;
                let avg = 0.25 * (u[n00] + u[n00 + 1] + u[n00 + np] + u[n00 + np + 1]);
                values[er * res + ec] = t0 + avg;
            }
        }
        let idx = match kind {
            CallKind::TrainingLabel => 0,
            CallKind::Validation => 1,
            CallKind::Baseline => 2,
        };
        self.counts[idx].fetch_add(1, Ordering::Relaxed);
        Ok(TemperatureField { resolution: res, domain_length: self.spec.domain_length, values })
    }

    pub fn counts(&self) -> FemCounts {
        FemCounts {
            training_labels: self.counts[0].load(Ordering::Relaxed),
            validation: self.counts[1].load(Ordering::Relaxed),
            baseline: self.counts[2].load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryKind, Side};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    /// Spec with every side held at the sink temperature, no sink segment.
    fn isothermal_spec(fem_resolution: usize) -> ProblemSpec {
        let mut spec = ProblemSpec::min_max().with_fem_resolution(fem_resolution);
        spec.sink_length = 0.0;
        spec.boundaries = [BoundaryKind::Isothermal; 4];
        spec
    }

    /// Manufactured solution T* = 298 + sin(πx/L) sin(πy/L) with matching
    /// source φ = 2k(π/L)² sin(πx/L) sin(πy/L), midpoint-sampled per element.
    fn manufactured_error(fem_resolution: usize) -> f64 {
        let spec = isothermal_spec(fem_resolution);
        let l = spec.domain_length;
        let k = spec.conductivity;
        let h = spec.element_size();
        let amp = 2.0 * k * (PI / l) * (PI / l);
        let res = fem_resolution;
        let mut source = vec![0.0; res * res];
        for row in 0..res {
            for col in 0..res {
                let x = (col as f64 + 0.5) * h;
                let y = (row as f64 + 0.5) * h;
                source[row * res + col] = amp * (PI * x / l).sin() * (PI * y / l).sin();
            }
        }
        let field = IntensityField::from_values(res, source).unwrap();
        let solver = ThermalSolver::new(spec.clone()).unwrap();
        let got = solver.solve_source(&field, CallKind::Validation).unwrap();
        let mut sq = 0.0;
        for row in 0..res {
            for col in 0..res {
                let x = (col as f64 + 0.5) * h;
                let y = (row as f64 + 0.5) * h;
                let exact = 298.0 + (PI * x / l).sin() * (PI * y / l).sin();
                let d = got.get(row, col) - exact;
                sq += d * d;
            }
        }
        (sq / (res * res) as f64).sqrt()
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let e50 = manufactured_error(50);
        let e100 = manufactured_error(100);
        let e200 = manufactured_error(200);
        let order_a = (e50 / e100).log2();
        let order_b = (e100 / e200).log2();
        assert!(
            (1.7..=2.3).contains(&order_a) && (1.7..=2.3).contains(&order_b),
            "observed orders {order_a:.3}, {order_b:.3} (errors {e50:.3e}, {e100:.3e}, {e200:.3e})"
        );
    }

    #[test]
    fn uniform_source_full_sink_matches_1d_profile() {
        // Sink across the whole bottom edge, uniform source: the field reduces
        // to T(y) = 298 + (φ/k)(Ly - y²/2), peaking at 348 K on the top edge.
        let mut spec = ProblemSpec::min_max();
        spec.sink_center_x = 0.05;
        spec.sink_length = 0.1;
        let solver = ThermalSolver::new(spec.clone()).unwrap();
        let source = IntensityField::uniform(spec.fem_resolution, spec.source_intensity);
        let field = solver.solve_source(&source, CallKind::Validation).unwrap();

        let phi_over_k = spec.source_intensity / spec.conductivity;
        let l = spec.domain_length;
        let h = spec.element_size();
        for row in [0, 57, 123, 199] {
            let y = (row as f64 + 0.5) * h;
            let exact = 298.0 + phi_over_k * (l * y - y * y / 2.0);
            for col in [0, 100, 199] {
                assert_relative_eq!(field.get(row, col), exact, epsilon = 2e-2);
            }
        }
        assert!((field.max() - 348.0).abs() <= 0.1, "max {}", field.max());
    }

    #[test]
    fn disjoint_sources_superpose() {
        let spec = ProblemSpec::min_max().with_fem_resolution(50);
        let solver = ThermalSolver::new(spec.clone()).unwrap();
        let a = Layout::from_indices(10, &[23]).unwrap();
        let b = Layout::from_indices(10, &[77]).unwrap();
        let ab = Layout::from_indices(10, &[23, 77]).unwrap();
        let fa = solver.solve(&a, CallKind::Validation).unwrap();
        let fb = solver.solve(&b, CallKind::Validation).unwrap();
        let fab = solver.solve(&ab, CallKind::Validation).unwrap();
        for i in 0..fa.values().len() {
            let sum = (fa.values()[i] - 298.0) + (fb.values()[i] - 298.0) + 298.0;
            assert_relative_eq!(fab.values()[i], sum, epsilon = 1e-8);
        }
    }

    #[test]
    fn strong_convection_approaches_isothermal_side() {
        let base = ProblemSpec::min_max().with_fem_resolution(50);
        let layout = Layout::from_indices(10, &[44, 45, 54, 55]).unwrap();

        let mut robin = base.clone();
        robin.boundaries[Side::Left.index()] =
            BoundaryKind::Convective { h: 1.0e9, t_inf: robin.sink_temperature };
        let mut iso = base;
        iso.boundaries[Side::Left.index()] = BoundaryKind::Isothermal;

        let fr = ThermalSolver::new(robin).unwrap().solve(&layout, CallKind::Validation).unwrap();
        let fi = ThermalSolver::new(iso).unwrap().solve(&layout, CallKind::Validation).unwrap();
        let max_diff = fr
            .values()
            .iter()
            .zip(fi.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
            ;
        assert!(max_diff < 0.01, "Robin limit deviates by {max_diff} K");
    }

    #[test]
    fn discrete_maximum_principle_holds() {
        // Non-negative sources with a cold sink: the minimum sits at the sink
        // temperature and nothing dips below it.
        let spec = ProblemSpec::min_max().with_fem_resolution(50);
        let solver = ThermalSolver::new(spec).unwrap();
        let mut rng = crate::rng::tagged(3, "fem-test");
        for _ in 0..5 {
            let layout = crate::grid::random_layout(solver.spec(), &mut rng);
            let field = solver.solve(&layout, CallKind::Validation).unwrap();
            assert!(field.min() >= 298.0 - 1e-9, "field dipped to {}", field.min());
            assert!(field.max() > 298.0);
        }
    }

    #[test]
    fn hotter_layout_dominates_subset() {
        // Adding a source can only raise the temperature everywhere.
        let spec = ProblemSpec::min_max().with_fem_resolution(50);
        let solver = ThermalSolver::new(spec).unwrap();
        let small = Layout::from_indices(10, &[12, 47, 81]).unwrap();
        let big = Layout::from_indices(10, &[12, 47, 81, 55]).unwrap();
        let fs = solver.solve(&small, CallKind::Validation).unwrap();
        let fb = solver.solve(&big, CallKind::Validation).unwrap();
        for (a, b) in fs.values().iter().zip(fb.values()) {
            assert!(b + 1e-9 >= *a);
        }
    }

    #[test]
    fn counters_track_call_kinds() {
        let spec = ProblemSpec::min_max().with_fem_resolution(50);
        let solver = ThermalSolver::new(spec).unwrap();
        let mut rng = crate::rng::tagged(4, "fem-test");
        let layout = crate::grid::random_layout(solver.spec(), &mut rng);
        for _ in 0..3 {
            solver.solve(&layout, CallKind::TrainingLabel).unwrap();
        }
        for _ in 0..2 {
            solver.solve(&layout, CallKind::Validation).unwrap();
        }
        solver.solve(&layout, CallKind::Baseline).unwrap();
        let c = solver.counts();
        assert_eq!(c.training_labels, 3);
        assert_eq!(c.validation, 2);
        assert_eq!(c.baseline, 1);
        assert_eq!(c.total(), 6);
    }

    #[test]
    fn probe_reproduces_linear_fields_and_clamps() {
        let res = 8;
        let l = 0.1;
        let h = l / res as f64;
        let mut values = vec![0.0; res * res];
        for row in 0..res {
            for col in 0..res {
                let x = (col as f64 + 0.5) * h;
                let y = (row as f64 + 0.5) * h;
                values[row * res + col] = 300.0 + 40.0 * x + 7.0 * y;
            }
        }
        let field = TemperatureField::from_values(res, l, values).unwrap();
        for (x, y) in [(0.031, 0.044), (0.05, 0.05), (0.088, 0.011)] {
            assert_relative_eq!(field.probe(x, y).unwrap(), 300.0 + 40.0 * x + 7.0 * y, epsilon = 1e-9);
        }
        // Outside the outermost centers the interpolant clamps.
        let edge = field.probe(l, 0.05).unwrap();
        let center = 300.0 + 40.0 * (l - h / 2.0) + 7.0 * 0.05;
        assert_relative_eq!(edge, center, epsilon = 1e-9);
        assert!(field.probe(-0.01, 0.05).is_err());
        assert!(field.probe(0.05, 0.11).is_err());
    }

    #[test]
    fn full_resolution_solve_is_fast_enough() {
        let spec = ProblemSpec::min_max();
        let solver = ThermalSolver::new(spec).unwrap();
        let mut rng = crate::rng::tagged(5, "fem-test");
        let layout = crate::grid::random_layout(solver.spec(), &mut rng);
        let start = std::time::Instant::now();
        let field = solver.solve(&layout, CallKind::Validation).unwrap();
        let cold = start.elapsed();
        assert!(cold.as_secs_f64() < 10.0, "cold solve took {cold:?}");
        assert!(field.max() > 298.0);
        let start = std::time::Instant::now();
        solver.solve(&layout, CallKind::Validation).unwrap();
        let warm = start.elapsed();
        assert!(warm.as_secs_f64() < 10.0, "warm solve took {warm:?}");
    }
}
