//! Design domain, binary source layouts, and the piecewise intensity field.
//!
//! The domain is the square `[0, L] × [0, L]` partitioned into
//! `design_resolution²` square cells. A layout marks each cell as holding a
//! heat source (`1`) or not (`0`); every source dissipates the same volumetric
//! intensity over its full cell. Row-major storage throughout, row 0 at the
//! bottom edge (`y = 0`).

pub mod sample;

use crate::error::{Error, Result};

pub use sample::{perturb, perturb_walk, random_layout, Direction};

/// One side of the square domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Top, Side::Bottom];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
            Side::Top => 2,
            Side::Bottom => 3,
        }
    }
}

/// Boundary condition attached to a side (outside the heat-sink segment).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryKind {
    /// Zero normal flux.
    Adiabatic,
    /// Fixed temperature equal to the sink temperature.
    Isothermal,
    /// Newton cooling `q = h (T - t_inf)`.
    Convective { h: f64, t_inf: f64 },
}

/// Full physical and discretization description of one design problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    /// Side length of the square domain (m).
    pub domain_length: f64,
    /// Side length of one source cell (m); must equal `domain_length / design_resolution`.
    pub source_length: f64,
    /// Thermal conductivity (W/(m·K)).
    pub conductivity: f64,
    /// Volumetric intensity of an active source cell (W/m²).
    pub source_intensity: f64,
    /// Number of sources every admissible layout must hold.
    pub n_sources: usize,
    /// Center of the heat-sink segment on the bottom edge (m).
    pub sink_center_x: f64,
    /// Width of the heat-sink segment (m); `0` removes the sink.
    pub sink_length: f64,
    /// Temperature imposed on the sink and on isothermal sides (K).
    pub sink_temperature: f64,
    /// Conditions on [left, right, top, bottom] outside the sink.
    pub boundaries: [BoundaryKind; 4],
    /// Cells per side of the design grid.
    pub design_resolution: usize,
    /// Elements per side of the FEM mesh; multiple of `design_resolution`.
    pub fem_resolution: usize,
    /// Monitoring point for constrained problems (m).
    pub probe_point: Option<(f64, f64)>,
    /// Lower bound demanded of the probe temperature (K).
    pub t_pmin: Option<f64>,
}

impl ProblemSpec {
    /// Unconstrained peak-temperature minimization on the standard plate:
    /// 0.1 m square, conductivity 1, intensity 10⁴, 20 sources, a 1 mm sink
    /// centered on the otherwise adiabatic bottom edge.
    pub fn min_max() -> Self {
        ProblemSpec {
            domain_length: 0.1,
            source_length: 0.01,
            conductivity: 1.0,
            source_intensity: 1.0e4,
            n_sources: 20,
            sink_center_x: 0.05,
            sink_length: 0.001,
            sink_temperature: 298.0,
            boundaries: [BoundaryKind::Adiabatic; 4],
            design_resolution: 10,
            fem_resolution: 200,
            probe_point: None,
            t_pmin: None,
        }
    }

    /// Same plate with an additional lower bound on the temperature at a
    /// monitoring point on the right edge.
    pub fn constrained() -> Self {
        ProblemSpec {
            probe_point: Some((0.1, 0.05625)),
            t_pmin: Some(335.0),
            ..Self::min_max()
        }
    }

    /// Returns a copy meshed at `fem_resolution` elements per side.
    pub fn with_fem_resolution(mut self, fem_resolution: usize) -> Self {
        self.fem_resolution = fem_resolution;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.domain_length > 0.0) {
            return Err(Error::Spec("domain_length must be positive".into()));
        }
        if !(self.conductivity > 0.0) {
            return Err(Error::Spec("conductivity must be positive".into()));
        }
        if self.source_intensity < 0.0 {
            return Err(Error::Spec("source_intensity must be non-negative".into()));
        }
        if self.design_resolution == 0 {
            return Err(Error::Spec("design_resolution must be positive".into()));
        }
        if self.fem_resolution == 0 || self.fem_resolution % self.design_resolution != 0 {
            return Err(Error::Spec(format!(
                "fem_resolution {} must be a positive multiple of design_resolution {}",
                self.fem_resolution, self.design_resolution
            )));
        }
        let cell = self.domain_length / self.design_resolution as f64;
        if (self.source_length - cell).abs() > 1e-9 * self.domain_length {
            return Err(Error::Spec(format!(
                "source_length {} must equal domain_length/design_resolution = {}",
                self.source_length, cell
            )));
        }
        if self.n_sources > self.design_resolution * self.design_resolution {
            return Err(Error::Spec(format!(
                "n_sources {} exceeds {} design cells",
                self.n_sources,
                self.design_resolution * self.design_resolution
            )));
        }
        if self.sink_length < 0.0 {
            return Err(Error::Spec("sink_length must be non-negative".into()));
        }
        let half = self.sink_length / 2.0;
        if self.sink_center_x - half < -1e-12 || self.sink_center_x + half > self.domain_length + 1e-12 {
            return Err(Error::Spec("sink segment extends outside the bottom edge".into()));
        }
        for side in Side::ALL {
            if let BoundaryKind::Convective { h, .. } = self.boundaries[side.index()] {
                if h < 0.0 {
                    return Err(Error::Spec("convective coefficient must be non-negative".into()));
                }
            }
        }
        if let Some((px, py)) = self.probe_point {
            if !(0.0..=self.domain_length).contains(&px) || !(0.0..=self.domain_length).contains(&py) {
                return Err(Error::Spec("probe point lies outside the domain".into()));
            }
        }
        Ok(())
    }

    /// Side length of one design cell (m).
    pub fn design_cell(&self) -> f64 {
        self.domain_length / self.design_resolution as f64
    }

    /// Side length of one FEM element (m).
    pub fn element_size(&self) -> f64 {
        self.domain_length / self.fem_resolution as f64
    }

    /// FEM elements per design cell, per side.
    pub fn refinement(&self) -> usize {
        self.fem_resolution / self.design_resolution
    }

    /// Expands a layout into the per-element intensity field (Eq. on the
    /// design statement): `source_intensity` over occupied design cells, zero
    /// elsewhere.
    pub fn intensity_field(&self, layout: &Layout) -> Result<IntensityField> {
        if layout.resolution() != self.design_resolution {
            return Err(Error::Layout(format!(
                "layout resolution {} does not match design resolution {}",
                layout.resolution(),
                self.design_resolution
            )));
        }
        let r = self.refinement();
        let fr = self.fem_resolution;
        let mut values = vec![0.0f64; fr * fr];
        for (row, col) in layout.sources() {
            for er in row * r..(row + 1) * r {
                let base = er * fr + col * r;
                values[base..base + r].fill(self.source_intensity);
            }
        }
        Ok(IntensityField { resolution: fr, values })
    }
}

/// Binary source placement on the design grid. Row-major, row 0 at the bottom.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Layout {
    resolution: usize,
    cells: Vec<u8>,
}

impl Layout {
    pub fn empty(resolution: usize) -> Self {
        Layout { resolution, cells: vec![0; resolution * resolution] }
    }

    /// Builds a layout from per-cell flags; values must be 0 or 1.
    pub fn from_cells(resolution: usize, cells: Vec<u8>) -> Result<Self> {
        if cells.len() != resolution * resolution {
            return Err(Error::Layout(format!(
                "expected {} cells, got {}",
                resolution * resolution,
                cells.len()
            )));
        }
        if let Some(bad) = cells.iter().find(|&&c| c > 1) {
            return Err(Error::Layout(format!("cell value {bad} is not 0/1")));
        }
        Ok(Layout { resolution, cells })
    }

    /// Builds a layout with sources at the given row-major cell indices.
    pub fn from_indices(resolution: usize, indices: &[usize]) -> Result<Self> {
        let mut layout = Layout::empty(resolution);
        for &i in indices {
            if i >= layout.cells.len() {
                return Err(Error::Layout(format!("cell index {i} out of range")));
            }
            if layout.cells[i] == 1 {
                return Err(Error::Layout(format!("duplicate cell index {i}")));
            }
            layout.cells[i] = 1;
        }
        Ok(layout)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.resolution + col]
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.cells[row * self.resolution + col] = u8::from(on);
    }

    /// Number of active source cells.
    pub fn count(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }

    /// Active cells as `(row, col)` in row-major order.
    pub fn sources(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let res = self.resolution;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 1)
            .map(move |(i, _)| (i / res, i % res))
    }

    /// Active cells as row-major indices, ascending.
    pub fn source_indices(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 1)
            .map(|(i, _)| i)
            .collect()
    }

    /// Serializes to one `'0'`/`'1'` character per cell, row-major.
    pub fn to_line(&self) -> String {
        self.cells.iter().map(|&c| if c == 1 { '1' } else { '0' }).collect()
    }

    /// Parses the output of [`Layout::to_line`]; the length must be a perfect
    /// square matching `expected_resolution` when given.
    pub fn from_line(line: &str, expected_resolution: Option<usize>) -> Result<Self> {
        let n = line.len();
        let res = match expected_resolution {
            Some(r) => {
                if n != r * r {
                    return Err(Error::Layout(format!(
                        "line has {n} cells, expected {} for resolution {r}",
                        r * r
                    )));
                }
                r
            }
            None => {
                let r = (n as f64).sqrt().round() as usize;
                if r * r != n {
                    return Err(Error::Layout(format!("line length {n} is not a perfect square")));
                }
                r
            }
        };
        let mut cells = Vec::with_capacity(n);
        for ch in line.chars() {
            match ch {
                '0' => cells.push(0),
                '1' => cells.push(1),
                other => return Err(Error::Layout(format!("invalid cell character {other:?}"))),
            }
        }
        Ok(Layout { resolution: res, cells })
    }
}

/// Per-element heat intensity on the FEM mesh, row-major from the bottom row.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityField {
    resolution: usize,
    values: Vec<f64>,
}

impl IntensityField {
    /// Builds a field from raw per-element values (used by analytic tests and
    /// manufactured sources); layouts go through [`ProblemSpec::intensity_field`].
    pub fn from_values(resolution: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != resolution * resolution {
            return Err(Error::Shape(format!(
                "expected {} element values, got {}",
                resolution * resolution,
                values.len()
            )));
        }
        Ok(IntensityField { resolution, values })
    }

    pub fn uniform(resolution: usize, value: f64) -> Self {
        IntensityField { resolution, values: vec![value; resolution * resolution] }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }

    /// Total dissipated power (W) for a domain of side `domain_length`.
    pub fn total_power(&self, domain_length: f64) -> f64 {
        let h = domain_length / self.resolution as f64;
        self.values.iter().sum::<f64>() * h * h
    }
}
