//! Real-coded genetic algorithm over latent vectors.
//!
//! The GA never sees the networks directly: callers hand it a `decode` closure
//! (latent vectors → layouts, normally the generator) and a `score` closure
//! (fitness, normally the surrogate objective; lower is better). Both run on
//! whole generations at once so network-backed callers amortize their batch
//! cost. Because the production fitness depends only on the decoded layout,
//! evaluations are cached by layout bits, so duplicate decodes cost nothing;
//! fitness functions that read the latent vector itself can switch the cache
//! off.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::grid::Layout;

/// Design objective shared by the surrogate, GA, adaptive loop and baselines.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    /// Minimize the peak temperature.
    MinMaxTemperature,
    /// Minimize peak temperature subject to `probe ≥ t_pmin`, scalarized as
    /// `f = t_max + lambda · max(0, t_pmin − t_point)`.
    TemperatureConstrained { t_pmin: f64, probe_point: (f64, f64), lambda: f64 },
}

impl ObjectiveSpec {
    pub fn min_max() -> Self {
        ObjectiveSpec::MinMaxTemperature
    }

    pub fn constrained(t_pmin: f64, probe_point: (f64, f64), lambda: f64) -> Self {
        assert!(lambda >= 0.0, "penalty weight must be nonnegative");
        ObjectiveSpec::TemperatureConstrained { t_pmin, probe_point, lambda }
    }

    /// The probe location, when the objective needs one.
    pub fn probe_point(&self) -> Option<(f64, f64)> {
        match self {
            ObjectiveSpec::MinMaxTemperature => None,
            ObjectiveSpec::TemperatureConstrained { probe_point, .. } => Some(*probe_point),
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            ObjectiveSpec::MinMaxTemperature => 0.0,
            ObjectiveSpec::TemperatureConstrained { lambda, .. } => *lambda,
        }
    }

    /// Returns a copy with the penalty weight replaced (no-op for min-max).
    pub fn with_lambda(&self, new_lambda: f64) -> Self {
        match self {
            ObjectiveSpec::MinMaxTemperature => ObjectiveSpec::MinMaxTemperature,
            ObjectiveSpec::TemperatureConstrained { t_pmin, probe_point, .. } => {
                ObjectiveSpec::constrained(*t_pmin, *probe_point, new_lambda)
            }
        }
    }

    /// Scalar objective value; `t_point` is required for the constrained kind.
    pub fn value(&self, t_max: f64, t_point: Option<f64>) -> f64 {
        match self {
            ObjectiveSpec::MinMaxTemperature => t_max,
            ObjectiveSpec::TemperatureConstrained { t_pmin, lambda, .. } => {
                let tp = t_point.expect("constrained objective needs a probe temperature");
                t_max + lambda * (t_pmin - tp).max(0.0)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaConfig {
    /// Latent dimension of each individual.
    pub dim: usize,
    pub population: usize,
    /// Probability a pairing recombines (otherwise the first parent is copied).
    pub crossover_rate: f64,
    /// Blend-crossover expansion factor: child genes are drawn uniformly from
    /// the parents' interval widened by this fraction on both sides.
    pub blx_alpha: f64,
    /// Probability an offspring is mutated.
    pub mutation_rate: f64,
    /// When set, `mutation_rate` applies independently per gene instead of
    /// perturbing every gene of a selected individual.
    pub per_gene_mutation: bool,
    pub mutation_sigma: f64,
    pub tournament: usize,
    pub elitism: usize,
    /// Stop when the best fitness improves by less than `min_improvement`
    /// over this many consecutive generations.
    pub patience: usize,
    pub min_improvement: f64,
    pub max_generations: usize,
    /// Cache fitness by decoded layout bits. Valid whenever fitness is a pure
    /// function of the layout, which holds for the surrogate objective.
    pub cache_by_layout: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            dim: 10,
            population: 250,
            crossover_rate: 0.9,
            blx_alpha: 0.5,
            mutation_rate: 0.2,
            per_gene_mutation: false,
            mutation_sigma: 0.1,
            tournament: 2,
            elitism: 1,
            patience: 10,
            min_improvement: 1e-3,
            max_generations: 200,
            cache_by_layout: true,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(crate::Error::Spec(msg.to_string()))
            }
        };
        check(self.dim >= 1, "latent dimension must be at least 1")?;
        check(self.population >= 2, "population must be at least 2")?;
        check(
            (0.0..=1.0).contains(&self.crossover_rate)
                && (0.0..=1.0).contains(&self.mutation_rate),
            "rates must lie in [0, 1]",
        )?;
        check(self.tournament >= 1, "tournament size must be at least 1")?;
        check(self.elitism < self.population, "elitism must leave room for offspring")?;
        check(self.max_generations >= 1, "need at least one generation")?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Individual {
    pub z: Vec<f64>,
    pub fitness: f64,
    pub layout: Layout,
}

/// One row of the per-generation log.
#[derive(Debug, Clone, Copy)]
pub struct GaLogRow {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub distinct_layouts: usize,
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    /// Best individual ever seen (kept in the population by elitism).
    pub best: Individual,
    /// Final population, `config.population` individuals.
    pub population: Vec<Individual>,
    pub generations_run: usize,
    pub log: Vec<GaLogRow>,
}

/// Draws a latent vector from the standard-normal prior.
pub fn sample_latent(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

struct Evaluator<D, S> {
    decode: D,
    score: S,
    cache: Option<HashMap<Vec<u8>, f64>>,
}

impl<D, S> Evaluator<D, S>
where
    D: FnMut(&[Vec<f64>]) -> Vec<Layout>,
    S: FnMut(&[Vec<f64>], &[Layout]) -> Vec<f64>,
{
    /// Decodes and scores one generation; cached layouts skip the score call.
    fn eval(&mut self, zs: Vec<Vec<f64>>) -> Vec<Individual> {
        let layouts = (self.decode)(&zs);
        assert_eq!(layouts.len(), zs.len(), "decode must map latents one-to-one");
        let fitness: Vec<f64> = match &mut self.cache {
            Some(cache) => {
                let mut todo: Vec<usize> = Vec::new();
                let mut batch_seen: std::collections::HashSet<&[u8]> =
                    std::collections::HashSet::new();
                for (i, layout) in layouts.iter().enumerate() {
                    if !cache.contains_key(layout.cells()) && batch_seen.insert(layout.cells()) {
                        todo.push(i);
                    }
                }
                if !todo.is_empty() {
                    let sub_z: Vec<Vec<f64>> = todo.iter().map(|&i| zs[i].clone()).collect();
                    let sub_l: Vec<Layout> = todo.iter().map(|&i| layouts[i].clone()).collect();
                    let values = (self.score)(&sub_z, &sub_l);
                    assert_eq!(values.len(), todo.len(), "score must return one value per input");
                    for (&i, &v) in todo.iter().zip(&values) {
                        cache.insert(layouts[i].cells().to_vec(), v);
                    }
                }
                layouts.iter().map(|l| cache[l.cells()]).collect()
            }
            None => {
                let values = (self.score)(&zs, &layouts);
                assert_eq!(values.len(), zs.len(), "score must return one value per input");
                values
            }
        };
        zs.into_iter()
            .zip(layouts)
            .zip(fitness)
            .map(|((z, layout), fitness)| Individual { z, fitness, layout })
            .collect()
    }
}

fn tournament_pick<'p>(
    pop: &'p [Individual],
    size: usize,
    rng: &mut impl Rng,
) -> &'p Individual {
    let mut best: Option<&Individual> = None;
    for _ in 0..size {
        let c = &pop[rng.random_range(0..pop.len())];
        if best.is_none_or(|b| c.fitness < b.fitness) {
            best = Some(c);
        }
    }
    best.expect("tournament size validated nonzero")
}

/// Runs the GA; lower fitness is better. `decode` maps a batch of latent
/// vectors to layouts and `score` evaluates a batch (receiving the latent
/// vectors too, for fitness stubs that bypass decoding).
pub fn run_ga(
    config: &GaConfig,
    decode: impl FnMut(&[Vec<f64>]) -> Vec<Layout>,
    score: impl FnMut(&[Vec<f64>], &[Layout]) -> Vec<f64>,
    rng: &mut impl Rng,
) -> crate::Result<GaOutcome> {
    config.validate()?;
    let mut ev = Evaluator {
        decode,
        score,
        cache: config.cache_by_layout.then(HashMap::new),
    };

    let seed_zs: Vec<Vec<f64>> =
        (0..config.population).map(|_| sample_latent(config.dim, rng)).collect();
    let mut pop: Vec<Individual> = ev.eval(seed_zs);

    let mut best = pop
        .iter()
        .min_by(|a, b| a.fitness.total_cmp(&b.fitness))
        .expect("population validated nonempty")
        .clone();
    let mut log = vec![log_row(0, &pop)];
    let mut last_improvement_gen = 0usize;
    let mut generations_run = 0usize;

    for generation in 1..=config.max_generations {
        generations_run = generation;
        let mut next: Vec<Individual> = Vec::with_capacity(config.population);
        // Elitism: carry the best individuals over unchanged.
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| pop[a].fitness.total_cmp(&pop[b].fitness).then(a.cmp(&b)));
        for &i in order.iter().take(config.elitism) {
            next.push(pop[i].clone());
        }
        // Selection reads only parent fitness, so the whole offspring batch
        // can be bred first and evaluated in one call.
        let mut offspring: Vec<Vec<f64>> =
            Vec::with_capacity(config.population - next.len());
        while next.len() + offspring.len() < config.population {
            let p1 = tournament_pick(&pop, config.tournament, rng);
            let mut child = if rng.random_bool(config.crossover_rate) {
                let p2 = tournament_pick(&pop, config.tournament, rng);
                blend(&p1.z, &p2.z, config.blx_alpha, rng)
            } else {
                p1.z.clone()
            };
            mutate(&mut child, config, rng);
            offspring.push(child);
        }
        next.extend(ev.eval(offspring));
        pop = next;
        let gen_best = pop
            .iter()
            .min_by(|a, b| a.fitness.total_cmp(&b.fitness))
            .expect("population nonempty");
        if best.fitness - gen_best.fitness >= config.min_improvement {
            last_improvement_gen = generation;
        }
        if gen_best.fitness < best.fitness {
            best = gen_best.clone();
        }
        log.push(log_row(generation, &pop));
        if generation - last_improvement_gen >= config.patience {
            break;
        }
    }

    Ok(GaOutcome { best, population: pop, generations_run, log })
}

fn blend(a: &[f64], b: &[f64], alpha: f64, rng: &mut impl Rng) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let lo = x.min(y);
            let hi = x.max(y);
            let d = hi - lo;
            rng.random_range((lo - alpha * d)..=(hi + alpha * d))
        })
        .collect()
}

fn mutate(z: &mut [f64], config: &GaConfig, rng: &mut impl Rng) {
    if config.per_gene_mutation {
        for g in z.iter_mut() {
            if rng.random_bool(config.mutation_rate) {
                *g += config.mutation_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    } else if rng.random_bool(config.mutation_rate) {
        for g in z.iter_mut() {
            *g += config.mutation_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn log_row(generation: usize, pop: &[Individual]) -> GaLogRow {
    let best_fitness = pop.iter().map(|i| i.fitness).fold(f64::INFINITY, f64::min);
    let mean_fitness = pop.iter().map(|i| i.fitness).sum::<f64>() / pop.len() as f64;
    let mut seen: Vec<&[u8]> = pop.iter().map(|i| i.layout.cells()).collect();
    seen.sort_unstable();
    seen.dedup();
    GaLogRow { generation, best_fitness, mean_fitness, distinct_layouts: seen.len() }
}

/// Picks `count` distinct random elements (used for label selection).
pub fn choose_distinct<'a, T>(items: &'a [T], count: usize, rng: &mut impl Rng) -> Vec<&'a T> {
    let count = count.min(items.len());
    let picked = rand::seq::index::sample(rng, items.len(), count);
    picked.iter().map(|i| &items[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::tagged;

    fn stub_decode(res: usize) -> impl FnMut(&[Vec<f64>]) -> Vec<Layout> {
        move |zs| zs.iter().map(|_| Layout::empty(res)).collect()
    }

    /// Lifts a scalar latent-space fitness to the batch interface.
    fn by_z(
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> impl FnMut(&[Vec<f64>], &[Layout]) -> Vec<f64> {
        move |zs, _| zs.iter().map(|z| f(z)).collect()
    }

    #[test]
    fn penalty_vanishes_when_constraint_holds() {
        let obj = ObjectiveSpec::constrained(335.0, (0.1, 0.05625), 10.0);
        assert_eq!(obj.value(340.0, Some(336.0)), 340.0);
    }

    #[test]
    fn penalty_arithmetic_matches_definition() {
        let obj = ObjectiveSpec::constrained(335.0, (0.1, 0.05625), 10.0);
        assert_eq!(obj.value(340.0, Some(330.0)), 340.0 + 10.0 * 5.0);
        assert_eq!(obj.with_lambda(20.0).value(340.0, Some(330.0)), 340.0 + 20.0 * 5.0);
        assert_eq!(ObjectiveSpec::min_max().value(341.5, None), 341.5);
    }

    /// f(z) = ‖z‖² has its optimum at the origin; the GA must find it.
    #[test]
    fn quadratic_fitness_converges_near_origin() {
        let mut rng = tagged(71, "ga-test");
        let config = GaConfig { cache_by_layout: false, ..GaConfig::default() };
        let out = run_ga(
            &config,
            stub_decode(10),
            by_z(|z| z.iter().map(|v| v * v).sum()),
            &mut rng,
        )
        .unwrap();
        assert!(
            out.best.fitness < 1e-2,
            "best ‖z‖² = {} after {} generations",
            out.best.fitness,
            out.generations_run
        );
    }

    /// Elitism makes the per-generation best monotone non-increasing.
    #[test]
    fn best_fitness_is_monotone_under_elitism() {
        let mut rng = tagged(72, "ga-test");
        // Rugged deterministic fitness of the latent vector.
        let config = GaConfig {
            cache_by_layout: false,
            max_generations: 40,
            patience: 40,
            ..GaConfig::default()
        };
        let out = run_ga(
            &config,
            stub_decode(10),
            by_z(|z| {
                z.iter().enumerate().map(|(i, v)| (v * (i as f64 + 1.0)).sin() + v * v).sum()
            }),
            &mut rng,
        )
        .unwrap();
        for pair in out.log.windows(2) {
            assert!(
                pair[1].best_fitness <= pair[0].best_fitness + 1e-12,
                "best fitness regressed between generations {} and {}",
                pair[0].generation,
                pair[1].generation
            );
        }
    }

    #[test]
    fn population_size_is_constant() {
        let mut rng = tagged(73, "ga-test");
        let config = GaConfig {
            population: 40,
            max_generations: 10,
            cache_by_layout: false,
            ..GaConfig::default()
        };
        let out =
            run_ga(&config, stub_decode(10), by_z(|z| z[0].abs()), &mut rng).unwrap();
        assert_eq!(out.population.len(), 40);
    }

    /// Tournament selection ranks, so shifting all fitness values by a
    /// constant must not change the evolution at all.
    #[test]
    fn selection_invariant_under_constant_fitness_shift() {
        let config = GaConfig {
            population: 30,
            max_generations: 15,
            patience: 15,
            cache_by_layout: false,
            ..GaConfig::default()
        };
        let run = |shift: f64| {
            let mut rng = tagged(74, "ga-test");
            run_ga(
                &config,
                stub_decode(10),
                by_z(move |z| shift + z.iter().map(|v| (v - 0.3) * (v - 0.3)).sum::<f64>()),
                &mut rng,
            )
            .unwrap()
        };
        let a = run(0.0);
        let b = run(1000.0);
        assert_eq!(a.best.z, b.best.z);
        assert!((b.best.fitness - a.best.fitness - 1000.0).abs() < 1e-9);
    }

    /// With caching on, the score closure runs once per distinct layout.
    #[test]
    fn layout_cache_deduplicates_scoring() {
        let mut rng = tagged(75, "ga-test");
        let config = GaConfig {
            population: 20,
            max_generations: 5,
            ..GaConfig::default()
        };
        let mut calls = 0usize;
        // Decode collapses the latent space onto 4 distinct layouts.
        let out = run_ga(
            &config,
            |zs: &[Vec<f64>]| {
                zs.iter()
                    .map(|z| {
                        let which = ((z[0].abs() * 2.0) as usize % 2) * 2
                            + ((z[1].abs() * 2.0) as usize % 2);
                        Layout::from_indices(10, &[which]).unwrap()
                    })
                    .collect()
            },
            |_zs, layouts: &[Layout]| {
                calls += layouts.len();
                layouts.iter().map(|l| l.source_indices()[0] as f64).collect()
            },
            &mut rng,
        )
        .unwrap();
        assert!(calls <= 4, "score ran {calls} times for at most 4 distinct layouts");
        assert_eq!(out.best.layout.source_indices(), vec![0]);
    }

    #[test]
    fn config_validation_rejects_bad_rates() {
        let bad = GaConfig { crossover_rate: 1.5, ..GaConfig::default() };
        assert!(bad.validate().is_err());
        let bad = GaConfig { population: 1, ..GaConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn latent_prior_is_standard_normal() {
        let mut rng = tagged(76, "ga-test");
        let n = 10_000;
        let mut mean = vec![0.0; 10];
        let mut var = vec![0.0; 10];
        for _ in 0..n {
            let z = sample_latent(10, &mut rng);
            for (i, v) in z.iter().enumerate() {
                mean[i] += v;
                var[i] += v * v;
            }
        }
        for i in 0..10 {
            let m = mean[i] / n as f64;
            let v = var[i] / n as f64 - m * m;
            assert!(m.abs() < 0.05, "coordinate {i} mean {m}");
            assert!((v - 1.0).abs() < 0.1, "coordinate {i} variance {v}");
        }
    }
}
