//! Layout sampling and local perturbation moves.
//!
//! Two samplers feed the bootstrap pool: [`random_layout`] places sources
//! uniformly without replacement, and [`evolving_sample`] grows a cluster
//! around an anchor cell, weighting each remaining cell by a Gaussian kernel
//! `exp(-r² / (2 τ²))` in the anchor's cell-distance `r`. Small `τ` gives
//! tightly packed blobs, large `τ` approaches uniform placement.
//!
//! [`perturb`] applies single-cell moves: pick a source, pick one of the four
//! axis directions, and move it one cell if the target is inside the grid and
//! unoccupied; blocked moves leave the layout unchanged but still consume a
//! step. The source count is invariant under any number of moves.

use rand::Rng;

use super::{Layout, ProblemSpec};
use crate::error::{Error, Result};

/// Axis-aligned move directions, in the order used for uniform draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    fn offset(self) -> (isize, isize) {
        match self {
            Direction::Up => (1, 0),
            Direction::Down => (-1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }
}

/// Uniformly random layout with exactly `spec.n_sources` sources.
pub fn random_layout(spec: &ProblemSpec, rng: &mut impl Rng) -> Layout {
    let res = spec.design_resolution;
    let picks = rand::seq::index::sample(rng, res * res, spec.n_sources);
    let mut layout = Layout::empty(res);
    for i in picks {
        layout.cells[i] = 1;
    }
    layout
}

/// Cluster sample anchored at a uniformly random cell.
pub fn evolving_sample(spec: &ProblemSpec, tau: f64, rng: &mut impl Rng) -> Result<Layout> {
    let res = spec.design_resolution;
    let anchor = rng.random_range(0..res * res);
    evolving_sample_anchored(spec, tau, (anchor / res, anchor % res), rng)
}

/// Cluster sample with a fixed anchor cell `(row, col)`.
///
/// The anchor is always a source; the remaining `n_sources - 1` cells are
/// drawn without replacement with probability proportional to
/// `exp(-r²/(2τ²))`, `r` being the Euclidean distance to the anchor in cell
/// units.
pub fn evolving_sample_anchored(
    spec: &ProblemSpec,
    tau: f64,
    anchor: (usize, usize),
    rng: &mut impl Rng,
) -> Result<Layout> {
    let res = spec.design_resolution;
    if !(tau > 0.0) {
        return Err(Error::Spec(format!("evolving-sample tau must be positive, got {tau}")));
    }
    if anchor.0 >= res || anchor.1 >= res {
        return Err(Error::Layout(format!("anchor {anchor:?} outside {res}x{res} grid")));
    }
    if spec.n_sources == 0 {
        return Ok(Layout::empty(res));
    }

    let mut layout = Layout::empty(res);
    layout.set(anchor.0, anchor.1, true);

    let mut weights: Vec<f64> = (0..res * res)
        .map(|i| {
            let dr = (i / res) as f64 - anchor.0 as f64;
            let dc = (i % res) as f64 - anchor.1 as f64;
            (-(dr * dr + dc * dc) / (2.0 * tau * tau)).exp()
        })
        .collect();
    weights[anchor.0 * res + anchor.1] = 0.0;

    for _ in 1..spec.n_sources {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            // Kernel underflowed for every free cell; fall back to uniform.
            let free: Vec<usize> =
                (0..res * res).filter(|&i| layout.cells[i] == 0).collect();
            let pick = free[rng.random_range(0..free.len())];
            layout.cells[pick] = 1;
            weights[pick] = 0.0;
            continue;
        }
        let mut target = rng.random_range(0.0..total);
        let mut pick = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if target < w {
                pick = Some(i);
                break;
            }
            target -= w;
        }
        // Rounding can exhaust the scan; take the last weighted cell.
        let pick = pick.unwrap_or_else(|| {
            weights
                .iter()
                .rposition(|&w| w > 0.0)
                .expect("at least one free cell must remain")
        });
        layout.cells[pick] = 1;
        weights[pick] = 0.0;
    }
    Ok(layout)
}

/// Tight cluster anchored next to the bottom-edge sink; used to build
/// out-of-distribution evaluation sets.
pub fn sink_clustered_layout(spec: &ProblemSpec, rng: &mut impl Rng) -> Result<Layout> {
    let res = spec.design_resolution;
    let col_f = spec.sink_center_x / spec.design_cell();
    let right = (col_f.floor() as usize).min(res - 1);
    let left = right.saturating_sub(1);
    let col = if rng.random_bool(0.5) { left } else { right };
    evolving_sample_anchored(spec, 0.8, (0, col), rng)
}

/// Moves the source at `(row, col)` one cell in `dir` if the target cell is
/// inside the grid and free. Returns whether the move was applied.
pub fn try_move(layout: &mut Layout, row: usize, col: usize, dir: Direction) -> Result<bool> {
    let res = layout.resolution();
    if row >= res || col >= res {
        return Err(Error::Layout(format!("cell ({row},{col}) outside {res}x{res} grid")));
    }
    if layout.get(row, col) != 1 {
        return Err(Error::Layout(format!("cell ({row},{col}) holds no source")));
    }
    let (dr, dc) = dir.offset();
    let nr = row as isize + dr;
    let nc = col as isize + dc;
    if nr < 0 || nc < 0 || nr >= res as isize || nc >= res as isize {
        return Ok(false);
    }
    let (nr, nc) = (nr as usize, nc as usize);
    if layout.get(nr, nc) == 1 {
        return Ok(false);
    }
    layout.set(row, col, false);
    layout.set(nr, nc, true);
    Ok(true)
}

fn one_move(layout: &mut Layout, rng: &mut impl Rng) {
    let sources = layout.source_indices();
    if sources.is_empty() {
        return;
    }
    let idx = sources[rng.random_range(0..sources.len())];
    let dir = Direction::ALL[rng.random_range(0..4)];
    let res = layout.resolution();
    try_move(layout, idx / res, idx % res, dir).expect("source index is valid");
}

/// Applies `moves` sequential random single-cell moves and returns the result.
pub fn perturb(layout: &Layout, moves: usize, rng: &mut impl Rng) -> Layout {
    let mut current = layout.clone();
    for _ in 0..moves {
        one_move(&mut current, rng);
    }
    current
}

/// Applies `moves` sequential random moves, returning the layout after each
/// one (`moves` snapshots; the input itself is not included).
pub fn perturb_walk(layout: &Layout, moves: usize, rng: &mut impl Rng) -> Vec<Layout> {
    let mut snapshots = Vec::with_capacity(moves);
    let mut current = layout.clone();
    for _ in 0..moves {
        one_move(&mut current, rng);
        snapshots.push(current.clone());
    }
    snapshots
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::tagged;

    fn spec() -> ProblemSpec {
        ProblemSpec::min_max()
    }

    #[test]
    fn random_layout_has_exact_count() {
        let spec = spec();
        let mut rng = tagged(1, "sample-test");
        for _ in 0..200 {
            assert_eq!(random_layout(&spec, &mut rng).count(), 20);
        }
    }

    #[test]
    fn evolving_sample_has_exact_count() {
        let spec = spec();
        let mut rng = tagged(2, "sample-test");
        for _ in 0..100 {
            let tau = rng.random_range(0.3..5.0);
            assert_eq!(evolving_sample(&spec, tau, &mut rng).unwrap().count(), 20);
        }
    }

    #[test]
    fn evolving_sample_rejects_bad_tau() {
        let spec = spec();
        let mut rng = tagged(3, "sample-test");
        assert!(evolving_sample(&spec, 0.0, &mut rng).is_err());
        assert!(evolving_sample(&spec, -1.0, &mut rng).is_err());
    }

    /// Monte-Carlo check of the clustering contract: at tau = 0.5 an anchored
    /// sample keeps all 20 sources within Chebyshev distance 4 of the anchor
    /// with probability > 0.99.
    #[test]
    fn tight_tau_stays_within_radius_four() {
        let spec = spec();
        let mut rng = tagged(4, "sample-test");
        let anchor = (4usize, 4usize);
        let trials = 2000;
        let mut inside = 0usize;
        for _ in 0..trials {
            let layout = evolving_sample_anchored(&spec, 0.5, anchor, &mut rng).unwrap();
            let max_cheb = layout
                .sources()
                .map(|(r, c)| {
                    let dr = (r as isize - anchor.0 as isize).unsigned_abs();
                    let dc = (c as isize - anchor.1 as isize).unsigned_abs();
                    dr.max(dc)
                })
                .max()
                .unwrap();
            if max_cheb <= 4 {
                inside += 1;
            }
        }
        let frac = inside as f64 / trials as f64;
        assert!(frac > 0.99, "only {frac} of samples stayed within radius 4");
    }

    /// At large tau the sampler must still differ measurably from uniform:
    /// sources sit closer to the anchor on average than uniform placements do.
    #[test]
    fn loose_tau_still_biased_toward_anchor() {
        let spec = spec();
        let mut rng = tagged(5, "sample-test");
        let anchor = (0usize, 0usize);
        let trials = 500;
        let mean_dist = |layout: &Layout| {
            layout
                .sources()
                .map(|(r, c)| ((r * r + c * c) as f64).sqrt())
                .sum::<f64>()
                / layout.count() as f64
        };
        let mut evolving = 0.0;
        let mut uniform = 0.0;
        for _ in 0..trials {
            evolving += mean_dist(&evolving_sample_anchored(&spec, 5.0, anchor, &mut rng).unwrap());
            uniform += mean_dist(&random_layout(&spec, &mut rng));
        }
        evolving /= trials as f64;
        uniform /= trials as f64;
        assert!(
            evolving < uniform - 0.3,
            "tau=5 mean anchor distance {evolving} vs uniform {uniform}"
        );
    }

    #[test]
    fn sink_clustered_layouts_hug_the_bottom() {
        let spec = spec();
        let mut rng = tagged(6, "sample-test");
        let mut mean_row = 0.0;
        let trials = 200;
        for _ in 0..trials {
            let layout = sink_clustered_layout(&spec, &mut rng).unwrap();
            assert_eq!(layout.count(), 20);
            mean_row +=
                layout.sources().map(|(r, _)| r as f64).sum::<f64>() / layout.count() as f64;
        }
        mean_row /= trials as f64;
        assert!(mean_row < 2.5, "sink-clustered samples sit too high: mean row {mean_row}");
    }

    #[test]
    fn try_move_applies_and_blocks() {
        // Source at (0,0); left/down are walls, right is occupied, up is free.
        let mut layout = Layout::from_indices(10, &[0, 1]).unwrap();
        assert!(!try_move(&mut layout, 0, 0, Direction::Left).unwrap());
        assert!(!try_move(&mut layout, 0, 0, Direction::Down).unwrap());
        assert!(!try_move(&mut layout, 0, 0, Direction::Right).unwrap());
        assert_eq!(layout.source_indices(), vec![0, 1]);
        assert!(try_move(&mut layout, 0, 0, Direction::Up).unwrap());
        assert_eq!(layout.source_indices(), vec![1, 10]);
    }

    #[test]
    fn try_move_rejects_non_source() {
        let mut layout = Layout::from_indices(10, &[5]).unwrap();
        assert!(try_move(&mut layout, 0, 0, Direction::Up).is_err());
        assert!(try_move(&mut layout, 20, 0, Direction::Up).is_err());
    }

    #[test]
    fn perturb_zero_moves_is_identity() {
        let spec = spec();
        let mut rng = tagged(7, "sample-test");
        let layout = random_layout(&spec, &mut rng);
        assert_eq!(perturb(&layout, 0, &mut rng), layout);
        assert!(perturb_walk(&layout, 0, &mut rng).is_empty());
    }

    #[test]
    fn perturb_preserves_count() {
        let spec = spec();
        let mut rng = tagged(8, "sample-test");
        for _ in 0..50 {
            let layout = random_layout(&spec, &mut rng);
            let moved = perturb(&layout, 25, &mut rng);
            assert_eq!(moved.count(), layout.count());
        }
    }

    #[test]
    fn perturb_walk_matches_sequential_perturb() {
        let spec = spec();
        let layout = random_layout(&spec, &mut tagged(9, "sample-test"));
        let walk = perturb_walk(&layout, 10, &mut tagged(10, "sample-test"));
        let direct = perturb(&layout, 10, &mut tagged(10, "sample-test"));
        assert_eq!(walk.len(), 10);
        assert_eq!(*walk.last().unwrap(), direct);
        for w in &walk {
            assert_eq!(w.count(), layout.count());
        }
    }

    #[test]
    fn full_grid_cannot_move() {
        let full = Layout::from_cells(4, vec![1; 16]).unwrap();
        let mut rng = tagged(11, "sample-test");
        assert_eq!(perturb(&full, 40, &mut rng), full);
    }
}
