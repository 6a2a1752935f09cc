//! Stiffness assembly for bilinear quadrilateral elements on the uniform mesh.
//!
//! The system is posed in the shifted unknown `u = T - sink_temperature`, so
//! every Dirichlet constraint (sink segment, isothermal sides) becomes
//! homogeneous and needs no right-hand-side correction. Convective sides add
//! their mass-like edge terms to the stiffness and a constant load
//! proportional to `t_inf - sink_temperature`.

use super::banded::{BandedSpd, CholeskyBand};
use crate::error::{Error, Result};
use crate::grid::{BoundaryKind, IntensityField, ProblemSpec, Side};

/// Element stiffness for a square bilinear element with unit conductivity,
/// nodes ordered counter-clockwise from bottom-left; independent of element
/// size.
pub const UNIT_ELEMENT_STIFFNESS: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

/// Factorized system plus the layout-independent pieces of the load.
#[derive(Debug)]
pub struct Assembled {
    pub factor: CholeskyBand,
    /// Nodes per side (`fem_resolution + 1`).
    pub nodes_per_side: usize,
    /// Constant load from convective sides, already Dirichlet-masked.
    pub boundary_load: Vec<f64>,
    /// Ascending node indices pinned to the sink temperature.
    pub dirichlet: Vec<usize>,
}

fn node(np: usize, row: usize, col: usize) -> usize {
    row * np + col
}

/// Ascending node indices held at the sink temperature: the sink segment on
/// the bottom edge plus every node of each isothermal side.
pub fn dirichlet_nodes(spec: &ProblemSpec) -> Vec<usize> {
    let np = spec.fem_resolution + 1;
    let h = spec.element_size();
    let tol = 1e-9 * spec.domain_length;
    let mut pinned = vec![false; np * np];

    if spec.sink_length > 0.0 {
        let half = spec.sink_length / 2.0;
        for col in 0..np {
            let x = col as f64 * h;
            if (x - spec.sink_center_x).abs() <= half + tol {
                pinned[node(np, 0, col)] = true;
            }
        }
    }
    for side in Side::ALL {
        if spec.boundaries[side.index()] == BoundaryKind::Isothermal {
            for t in 0..np {
                let (row, col) = match side {
                    Side::Left => (t, 0),
                    Side::Right => (t, np - 1),
                    Side::Bottom => (0, t),
                    Side::Top => (np - 1, t),
                };
                pinned[node(np, row, col)] = true;
            }
        }
    }
    pinned
        .iter()
        .enumerate()
        .filter(|(_, &p)| p)
        .map(|(i, _)| i)
        .collect()
}

/// Assembles and factorizes the stiffness system for `spec`.
pub fn assemble(spec: &ProblemSpec) -> Result<Assembled> {
    spec.validate()?;
    let res = spec.fem_resolution;
    let np = res + 1;
    let n = np * np;
    let h = spec.element_size();
    let k = spec.conductivity;

    let dirichlet = dirichlet_nodes(spec);
    let any_robin = Side::ALL.iter().any(|s| {
        matches!(spec.boundaries[s.index()], BoundaryKind::Convective { h, .. } if h > 0.0)
    });
    if dirichlet.is_empty() && !any_robin {
        return Err(Error::IllPosed(
            "no temperature constraint: sink absent and every side adiabatic".into(),
        ));
    }

    let mut band = BandedSpd::zeros(n, np + 1);
    for er in 0..res {
        for ec in 0..res {
            let nodes = [
                node(np, er, ec),
                node(np, er, ec + 1),
                node(np, er + 1, ec + 1),
                node(np, er + 1, ec),
            ];
            for a in 0..4 {
                for b in 0..=a {
                    band.add(nodes[a], nodes[b], k * UNIT_ELEMENT_STIFFNESS[a][b]);
                }
            }
        }
    }

    let mut boundary_load = vec![0.0; n];
    for side in Side::ALL {
        if let BoundaryKind::Convective { h: hc, t_inf } = spec.boundaries[side.index()] {
            if hc == 0.0 {
                continue;
            }
            let shifted = t_inf - spec.sink_temperature;
            for t in 0..res {
                let (a, b) = match side {
                    Side::Left => (node(np, t, 0), node(np, t + 1, 0)),
                    Side::Right => (node(np, t, np - 1), node(np, t + 1, np - 1)),
                    Side::Bottom => (node(np, 0, t), node(np, 0, t + 1)),
                    Side::Top => (node(np, np - 1, t), node(np, np - 1, t + 1)),
                };
                let m = hc * h / 6.0;
                band.add(a, a, 2.0 * m);
                band.add(b, b, 2.0 * m);
                band.add(a, b, m);
                let f = hc * shifted * h / 2.0;
                boundary_load[a] += f;
                boundary_load[b] += f;
            }
        }
    }

    for &d in &dirichlet {
        band.pin_unit(d);
    }
    for &d in &dirichlet {
        boundary_load[d] = 0.0;
    }

    let factor = band.factorize()?;
    Ok(Assembled { factor, nodes_per_side: np, boundary_load, dirichlet })
}

impl Assembled {
    /// Builds the full shifted-load vector for a source field and solves for
    /// nodal `u = T - sink_temperature`.
    pub fn solve_nodes(&self, spec: &ProblemSpec, source: &IntensityField) -> Result<Vec<f64>> {
        let res = spec.fem_resolution;
        if source.resolution() != res {
            return Err(Error::Shape(format!(
                "source field resolution {} does not match mesh {}",
                source.resolution(),
                res
            )));
        }
        let np = self.nodes_per_side;
        let h = spec.element_size();
        let quarter = h * h / 4.0;
        let mut rhs = self.boundary_load.clone();
        let values = source.values();
        for er in 0..res {
            let row = er * res;
            for ec in 0..res {
                let phi = values[row + ec];
                if phi != 0.0 {
                    let f = phi * quarter;
                    rhs[node(np, er, ec)] += f;
                    rhs[node(np, er, ec + 1)] += f;
                    rhs[node(np, er + 1, ec + 1)] += f;
                    rhs[node(np, er + 1, ec)] += f;
                }
            }
        }
        for &d in &self.dirichlet {
            rhs[d] = 0.0;
        }
        self.factor.solve_in_place(&mut rhs);
        Ok(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_stiffness_rows_sum_to_zero() {
        for row in UNIT_ELEMENT_STIFFNESS {
            let s: f64 = row.iter().sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn default_sink_pins_expected_nodes() {
        // h = 5e-4: nodes at x = 0.0495, 0.05, 0.0505 fall inside the 1 mm sink.
        let spec = ProblemSpec::min_max();
        let d = dirichlet_nodes(&spec);
        assert_eq!(d, vec![99, 100, 101]);
        // h = 2e-3: only x = 0.05 remains inside.
        let coarse = spec.with_fem_resolution(50);
        assert_eq!(dirichlet_nodes(&coarse), vec![25]);
    }

    #[test]
    fn isothermal_sides_pin_full_edges() {
        let mut spec = ProblemSpec::min_max().with_fem_resolution(10);
        spec.sink_length = 0.0;
        spec.boundaries = [
            BoundaryKind::Isothermal,
            BoundaryKind::Adiabatic,
            BoundaryKind::Adiabatic,
            BoundaryKind::Adiabatic,
        ];
        let d = dirichlet_nodes(&spec);
        assert_eq!(d.len(), 11);
        assert!(d.iter().all(|&i| i % 11 == 0));
    }

    #[test]
    fn fully_adiabatic_without_sink_is_rejected() {
        let mut spec = ProblemSpec::min_max().with_fem_resolution(10);
        spec.sink_length = 0.0;
        match assemble(&spec) {
            Err(Error::IllPosed(_)) => {}
            other => panic!("expected IllPosed, got {other:?}"),
        }
    }
}
