//! Non-learning solvers: a real-coded genetic algorithm over the phase
//! vectors and the time split, the random-configuration baseline, and
//! small-instance exhaustive oracles.
//!
//! The genome is `2N + 1` reals: the energy-transfer phases, the
//! information-transfer phases, then `tau`. Phases are circular quantities,
//! so mutation wraps modulo `2 pi` rather than clipping; `tau` is clamped
//! to `[1e-6, 1 - 1e-6]`.

use std::fmt;

use crate::channel::{FeatureVector, SystemParams};
use crate::evaluator::{self, PhaseConfig, TAU_MARGIN};
use crate::rng::SplitMix64;

#[derive(Debug)]
pub enum BaselineError {
    /// Exhaustive search refused: the grid is larger than the budget.
    BudgetExceeded { points: u128, budget: u128 },
    /// A parameter violated the documented invariants.
    BadParams(String),
    Eval(evaluator::EvalError),
}

impl fmt::Display for BaselineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineError::BudgetExceeded { points, budget } => {
                write!(f, "grid of {points} points exceeds the {budget}-point budget")
            }
            BaselineError::BadParams(msg) => write!(f, "bad solver parameters: {msg}"),
            BaselineError::Eval(e) => write!(f, "evaluation failed: {e}"),
        }
    }
}

impl std::error::Error for BaselineError {}

impl From<evaluator::EvalError> for BaselineError {
    fn from(e: evaluator::EvalError) -> Self {
        BaselineError::Eval(e)
    }
}

/// What a genome coordinate is: a circular phase on `[0, 2 pi)` or the
/// time split on `[1e-6, 1 - 1e-6]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gene {
    Phase,
    Split,
}

impl Gene {
    fn range(self) -> f64 {
        match self {
            Gene::Phase => std::f64::consts::TAU,
            Gene::Split => 1.0,
        }
    }

    fn sample(self, rng: &mut SplitMix64) -> f64 {
        match self {
            Gene::Phase => rng.next_range(0.0, std::f64::consts::TAU),
            Gene::Split => rng.next_range(TAU_MARGIN, 1.0 - TAU_MARGIN),
        }
    }

    fn repair(self, x: f64) -> f64 {
        match self {
            Gene::Phase => evaluator::wrap_phase(x),
            Gene::Split => x.clamp(TAU_MARGIN, 1.0 - TAU_MARGIN),
        }
    }
}

/// Genetic-algorithm settings.
///
/// Only the iteration budget is externally fixed (runs of 5 or 20
/// generations are the usual comparison points); everything else uses
/// standard real-coded defaults and is fully configurable.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    /// Generation count; the common benchmarks run 5 or 20.
    pub generations: usize,
    pub crossover_prob: f64,
    /// Per-gene mutation probability.
    pub mutation_prob: f64,
    /// Gaussian mutation deviation as a fraction of each gene's range.
    pub mutation_scale: f64,
    pub tournament: usize,
    pub elitism: usize,
    pub seed: u64,
}

impl GaParams {
    /// Defaults for a `2N + 1`-dimensional problem: population 50,
    /// tournament 3, crossover 0.9, mutation 1/(2N+1) per gene with a 5%
    /// range deviation, two elites.
    pub fn for_elements(elements: usize, generations: usize, seed: u64) -> Self {
        GaParams {
            population: 50,
            generations,
            crossover_prob: 0.9,
            mutation_prob: 1.0 / (2 * elements + 1) as f64,
            mutation_scale: 0.05,
            tournament: 3,
            elitism: 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.population < 2 {
            return Err(BaselineError::BadParams("population must be at least 2".into()));
        }
        if self.elitism >= self.population {
            return Err(BaselineError::BadParams("elitism must be below population".into()));
        }
        if self.tournament == 0 {
            return Err(BaselineError::BadParams("tournament must be at least 1".into()));
        }
        for (name, p) in
            [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(BaselineError::BadParams(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.mutation_scale > 0.0 && self.mutation_scale.is_finite()) {
            return Err(BaselineError::BadParams("mutation_scale must be positive".into()));
        }
        Ok(())
    }
}

/// One member of the population.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Phases then `tau`, always kept inside the box.
    pub genome: Vec<f64>,
    /// Objective value; NaN objectives are recorded as -inf.
    pub fitness: f64,
}

/// Result of a genetic-algorithm run.
#[derive(Debug, Clone)]
pub struct GaRun {
    pub best: Candidate,
    /// Best fitness after each generation (non-decreasing with elitism).
    pub history: Vec<f64>,
    /// Objective evaluations that returned NaN and were discarded.
    pub nan_evals: u64,
}

fn score(objective: &mut dyn FnMut(&[f64]) -> f64, genome: &[f64], nan_evals: &mut u64) -> f64 {
    let f = objective(genome);
    if f.is_nan() {
        *nan_evals += 1;
        f64::NEG_INFINITY
    } else {
        f
    }
}

/// Maximizes `objective` over the box described by `genes` with tournament
/// selection, uniform crossover, Gaussian mutation (phase coordinates wrap
/// around), and elitism. One RNG stream drives the whole run in a fixed
/// order, so results are seed-deterministic.
pub fn ga_optimize(
    mut objective: impl FnMut(&[f64]) -> f64,
    genes: &[Gene],
    ga: &GaParams,
    rng: &mut SplitMix64,
) -> Result<GaRun, BaselineError> {
    ga.validate()?;
    if genes.is_empty() {
        return Err(BaselineError::BadParams("empty genome".into()));
    }
    let mut nan_evals = 0u64;

    let mut population: Vec<Candidate> = (0..ga.population)
        .map(|_| {
            let genome: Vec<f64> = genes.iter().map(|g| g.sample(rng)).collect();
            let fitness = score(&mut objective, &genome, &mut nan_evals);
            Candidate { genome, fitness }
        })
        .collect();

    // Descending fitness; ties keep the earlier candidate first.
    let by_fitness = |a: &Candidate, b: &Candidate| {
        b.fitness.partial_cmp(&a.fitness).unwrap_or(std::cmp::Ordering::Equal)
    };
    population.sort_by(by_fitness);
    let mut best = population[0].clone();
    let mut history = Vec::with_capacity(ga.generations);

    for _ in 0..ga.generations {
        let mut next: Vec<Candidate> = population[..ga.elitism].to_vec();
        while next.len() < ga.population {
            let a = tournament_pick(&population, ga.tournament, rng);
            let b = tournament_pick(&population, ga.tournament, rng);
            let mut child = crossover(&population[a].genome, &population[b].genome, ga, rng);
            mutate(&mut child, genes, ga, rng);
            let fitness = score(&mut objective, &child, &mut nan_evals);
            next.push(Candidate { genome: child, fitness });
        }
        population = next;
        population.sort_by(by_fitness);
        if population[0].fitness > best.fitness {
            best = population[0].clone();
        }
        history.push(best.fitness);
    }
    Ok(GaRun { best, history, nan_evals })
}

fn tournament_pick(population: &[Candidate], size: usize, rng: &mut SplitMix64) -> usize {
    let mut winner = rng.next_below(population.len() as u64) as usize;
    for _ in 1..size {
        let challenger = rng.next_below(population.len() as u64) as usize;
        if population[challenger].fitness > population[winner].fitness {
            winner = challenger;
        }
    }
    winner
}

fn crossover(a: &[f64], b: &[f64], ga: &GaParams, rng: &mut SplitMix64) -> Vec<f64> {
    if rng.next_bool(ga.crossover_prob) {
        // Uniform crossover: each gene from either parent with equal odds.
        a.iter().zip(b).map(|(&x, &y)| if rng.next_bool(0.5) { x } else { y }).collect()
    } else {
        a.to_vec()
    }
}

fn mutate(genome: &mut [f64], genes: &[Gene], ga: &GaParams, rng: &mut SplitMix64) {
    for (x, gene) in genome.iter_mut().zip(genes) {
        if rng.next_bool(ga.mutation_prob) {
            let sigma = ga.mutation_scale * gene.range();
            let (z, _) = rng.next_gaussian_pair();
            *x = gene.repair(*x + sigma * z);
        }
    }
}

fn gene_layout(elements: usize) -> Vec<Gene> {
    let mut genes = vec![Gene::Phase; 2 * elements];
    genes.push(Gene::Split);
    genes
}

fn config_from_genome(genome: &[f64], elements: usize) -> PhaseConfig {
    PhaseConfig {
        et_phases: genome[..elements].to_vec(),
        it_phases: genome[elements..2 * elements].to_vec(),
        tau: genome[2 * elements],
    }
}

/// Runs the genetic algorithm against the throughput objective for one
/// feature vector. Returns the best configuration and its throughput.
pub fn ga_throughput(
    f: &FeatureVector,
    p: &SystemParams,
    ga: &GaParams,
) -> Result<(PhaseConfig, f64), BaselineError> {
    let n = f.elements();
    let genes = gene_layout(n);
    let mut rng = SplitMix64::new(ga.seed);
    let objective = |genome: &[f64]| {
        evaluator::throughput_from_parts(f, &genome[..n], &genome[n..2 * n], genome[2 * n], p)
            .unwrap_or(f64::NAN)
    };
    let run = ga_optimize(objective, &genes, ga, &mut rng)?;
    Ok((config_from_genome(&run.best.genome, n), run.best.fitness))
}

/// The random-configuration baseline: phases drawn uniformly, then `tau`
/// alone optimized by a one-dimensional run of the same genetic algorithm
/// (every child mutates its single gene). Returns the configuration and
/// its throughput.
pub fn random_baseline(
    f: &FeatureVector,
    p: &SystemParams,
    ga: &GaParams,
    rng: &mut SplitMix64,
) -> Result<(PhaseConfig, f64), BaselineError> {
    let n = f.elements();
    let et: Vec<f64> = (0..n).map(|_| rng.next_range(0.0, std::f64::consts::TAU)).collect();
    let it: Vec<f64> = (0..n).map(|_| rng.next_range(0.0, std::f64::consts::TAU)).collect();

    // For fixed phases the SINR factorizes as k * tau / (1 - tau); the
    // gain k is the SINR at tau = 1/2.
    let k = evaluator::sinr_from_parts(f, &et, &it, 0.5, p)?;
    let mut tau_ga = ga.clone();
    tau_ga.mutation_prob = 1.0;
    let run = ga_optimize(|g| split_throughput(k, g[0]), &[Gene::Split], &tau_ga, rng)?;
    let tau = run.best.genome[0];
    let cfg = PhaseConfig { et_phases: et, it_phases: it, tau };
    let achieved = evaluator::throughput(f, &cfg, p)?;
    Ok((cfg, achieved))
}

/// Throughput as a function of the split alone, given the phase-dependent
/// gain `k`: `(1 - tau) * log2(1 + k * tau / (1 - tau))`.
pub fn split_throughput(k: f64, tau: f64) -> f64 {
    (1.0 - tau) * (1.0 + k * tau / (1.0 - tau)).ln() / std::f64::consts::LN_2
}

/// Golden-section search for the maximizer of a unimodal function on
/// `[lo, hi]`. Returns `(argmax, max)`.
pub fn golden_section_max(
    mut f: impl FnMut(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tolerance: f64,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tolerance {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    (mid, f(mid))
}

/// The split maximizing throughput for a fixed phase-dependent gain `k`,
/// by golden-section search over the admissible interval.
pub fn golden_section_tau(k: f64) -> (f64, f64) {
    golden_section_max(|t| split_throughput(k, t), TAU_MARGIN, 1.0 - TAU_MARGIN, 1e-10)
}

/// Point budget for the exhaustive oracle.
pub const GRID_BUDGET: u128 = 100_000_000;

/// Exhaustive-search oracle for small instances.
///
/// The SINR factorizes as `eta * tau/(1-tau) * E(theta_ET) * S(theta_IT) /
/// D(theta_IT)`, all factors nonnegative, so the maximizing phases do not
/// depend on `tau` and each phase group is searched exhaustively on its
/// own lattice (step `2 pi / resolution` per phase); `tau` is then scanned
/// on `{j / resolution}`. Within lattice resolution this attains the global
/// maximum. Ties keep the first lattice point visited.
pub fn grid_oracle(
    f: &FeatureVector,
    p: &SystemParams,
    resolution: usize,
) -> Result<(PhaseConfig, f64), BaselineError> {
    if resolution < 2 {
        return Err(BaselineError::BadParams("resolution must be at least 2".into()));
    }
    if p.interferer_power > 0.0 && !f.interference() {
        return Err(BaselineError::Eval(evaluator::EvalError::ModeMismatch));
    }
    let n = f.elements();
    let lattice = (resolution as u128)
        .checked_pow(n as u32)
        .ok_or(BaselineError::BudgetExceeded { points: u128::MAX, budget: GRID_BUDGET })?;
    let points = 2 * lattice + (resolution as u128 - 1);
    if points > GRID_BUDGET {
        return Err(BaselineError::BudgetExceeded { points, budget: GRID_BUDGET });
    }

    // Phase lattice values and their trig tables, computed once.
    let step = std::f64::consts::TAU / resolution as f64;
    let values: Vec<f64> = (0..resolution).map(|k| k as f64 * step).collect();
    let cos_v: Vec<f64> = values.iter().map(|&t| t.cos()).collect();
    let sin_v: Vec<f64> = values.iter().map(|&t| t.sin()).collect();

    let with_interferer = f.interference() && p.interferer_power > 0.0;

    // Energy-transfer factor: P_B ||a + e.V||^2 (+ interferer pickup).
    let et_objective = |idx: &[usize]| -> f64 {
        let mut norm_sqr = 0.0;
        let v_re = f.v_re();
        let v_im = f.v_im();
        for col in 0..f.antennas() {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for row in 0..n {
                let k = idx[row];
                let at = row + col * n;
                acc_re += cos_v[k] * v_re[at] - sin_v[k] * v_im[at];
                acc_im += cos_v[k] * v_im[at] + sin_v[k] * v_re[at];
            }
            let re = acc_re + f.a_re()[col];
            let im = acc_im + f.a_im()[col];
            norm_sqr += re * re + im * im;
        }
        let mut gain = p.pb_power * norm_sqr;
        if with_interferer {
            let h = f.h_is().unwrap();
            let u_re = f.u_is_re().unwrap();
            let u_im = f.u_is_im().unwrap();
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for row in 0..n {
                let k = idx[row];
                acc_re += cos_v[k] * u_re[row] - sin_v[k] * u_im[row];
                acc_im += cos_v[k] * u_im[row] + sin_v[k] * u_re[row];
            }
            let re = acc_re + h.re;
            let im = acc_im + h.im;
            gain += p.interferer_power * (re * re + im * im);
        }
        gain
    };

    // Information-transfer factor: S / D.
    let it_objective = |idx: &[usize]| -> f64 {
        let u_re = f.u_sd_re();
        let u_im = f.u_sd_im();
        let mut acc_re = 0.0;
        let mut acc_im = 0.0;
        for row in 0..n {
            let k = idx[row];
            acc_re += cos_v[k] * u_re[row] - sin_v[k] * u_im[row];
            acc_im += cos_v[k] * u_im[row] + sin_v[k] * u_re[row];
        }
        let h = f.h_sd();
        let re = acc_re + h.re;
        let im = acc_im + h.im;
        let signal = re * re + im * im;
        let denom = if with_interferer {
            let h = f.h_id().unwrap();
            let u_re = f.u_id_re().unwrap();
            let u_im = f.u_id_im().unwrap();
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for row in 0..n {
                let k = idx[row];
                acc_re += cos_v[k] * u_re[row] - sin_v[k] * u_im[row];
                acc_im += cos_v[k] * u_im[row] + sin_v[k] * u_re[row];
            }
            let re = acc_re + h.re;
            let im = acc_im + h.im;
            p.interferer_power * (re * re + im * im) + p.noise_power
        } else {
            p.noise_power
        };
        signal / denom
    };

    let best_et = lattice_argmax(n, resolution, et_objective);
    let best_it = lattice_argmax(n, resolution, it_objective);
    let et_phases: Vec<f64> = best_et.iter().map(|&k| values[k]).collect();
    let it_phases: Vec<f64> = best_it.iter().map(|&k| values[k]).collect();

    let mut best_tau = 1.0 / resolution as f64;
    let mut best_c = evaluator::throughput_from_parts(f, &et_phases, &it_phases, best_tau, p)?;
    for j in 2..resolution {
        let tau = j as f64 / resolution as f64;
        let c = evaluator::throughput_from_parts(f, &et_phases, &it_phases, tau, p)?;
        if c > best_c {
            best_c = c;
            best_tau = tau;
        }
    }
    Ok((PhaseConfig { et_phases, it_phases, tau: best_tau }, best_c))
}

/// Odometer scan over the `resolution^n` lattice, returning the index
/// vector of the first maximizer encountered.
fn lattice_argmax(n: usize, resolution: usize, objective: impl Fn(&[usize]) -> f64) -> Vec<usize> {
    let mut idx = vec![0usize; n];
    let mut best_idx = idx.clone();
    let mut best = objective(&idx);
    loop {
        // Advance the odometer (last coordinate fastest).
        let mut pos = n;
        loop {
            if pos == 0 {
                return best_idx;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < resolution {
                break;
            }
            idx[pos] = 0;
        }
        let value = objective(&idx);
        if value > best {
            best = value;
            best_idx.copy_from_slice(&idx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_features, generate_dataset, sample_channels};

    fn feature(m: usize, n: usize, interference: bool, seed: u64) -> FeatureVector {
        let p = SystemParams::new(m, n);
        build_features(&sample_channels(&p, &mut SplitMix64::new(seed)), interference)
    }

    #[test]
    fn ga_finds_a_known_quadratic_optimum() {
        // Maximize -sum (x - c)^2 over the 2N+1 box; optimum at c.
        let genes = gene_layout(2);
        let c = [1.2, 4.0, 0.7, 5.5, 0.37];
        let objective =
            |g: &[f64]| -g.iter().zip(&c).map(|(x, t)| (x - t) * (x - t)).sum::<f64>();
        let ga = GaParams::for_elements(2, 100, 5);
        let mut rng = SplitMix64::new(ga.seed);
        let run = ga_optimize(objective, &genes, &ga, &mut rng).unwrap();
        for (x, t) in run.best.genome.iter().zip(&c) {
            assert!((x - t).abs() < 1e-2, "coordinate {x} vs {t}");
        }
        assert_eq!(run.nan_evals, 0);
    }

    #[test]
    fn elitism_makes_best_fitness_monotone() {
        let genes = gene_layout(3);
        let objective = |g: &[f64]| g.iter().map(|x| (x * 1.3).sin()).sum::<f64>();
        let ga = GaParams::for_elements(3, 40, 9);
        let mut rng = SplitMix64::new(ga.seed);
        let run = ga_optimize(objective, &genes, &ga, &mut rng).unwrap();
        for pair in run.history.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
    }

    #[test]
    fn ga_is_seed_deterministic() {
        let f = feature(2, 4, false, 3);
        let p = SystemParams::new(2, 4);
        let ga = GaParams::for_elements(4, 5, 1234);
        let (cfg_a, fit_a) = ga_throughput(&f, &p, &ga).unwrap();
        let (cfg_b, fit_b) = ga_throughput(&f, &p, &ga).unwrap();
        assert_eq!(cfg_a, cfg_b);
        assert_eq!(fit_a, fit_b);
        let other = GaParams { seed: 77, ..ga };
        let (_, fit_c) = ga_throughput(&f, &p, &other).unwrap();
        assert_ne!(fit_a, fit_c);
    }

    #[test]
    fn ga_respects_the_box() {
        let f = feature(1, 3, false, 8);
        let p = SystemParams::new(1, 3);
        let mut ga = GaParams::for_elements(3, 30, 2);
        ga.mutation_prob = 0.9; // hammer the repair paths
        let (cfg, _) = ga_throughput(&f, &p, &ga).unwrap();
        for &t in cfg.et_phases.iter().chain(cfg.it_phases.iter()) {
            assert!((0.0..std::f64::consts::TAU).contains(&t));
        }
        assert!(cfg.tau >= TAU_MARGIN && cfg.tau <= 1.0 - TAU_MARGIN);
    }

    #[test]
    fn nan_objectives_are_discarded_with_a_count() {
        let genes = gene_layout(1);
        let objective = |g: &[f64]| {
            if g[0] > 3.0 {
                f64::NAN
            } else {
                -(g[0] - 1.0).abs()
            }
        };
        let ga = GaParams::for_elements(1, 20, 3);
        let mut rng = SplitMix64::new(ga.seed);
        let run = ga_optimize(objective, &genes, &ga, &mut rng).unwrap();
        assert!(run.nan_evals > 0);
        assert!(run.best.fitness.is_finite());
        assert!(run.best.genome[0] <= 3.0);
    }

    #[test]
    fn ga_params_validation() {
        let mut ga = GaParams::for_elements(2, 5, 1);
        ga.population = 1;
        assert!(ga.validate().is_err());
        let mut ga = GaParams::for_elements(2, 5, 1);
        ga.elitism = 50;
        assert!(ga.validate().is_err());
        let mut ga = GaParams::for_elements(2, 5, 1);
        ga.crossover_prob = 1.5;
        assert!(ga.validate().is_err());
    }

    #[test]
    fn ga_beats_random_baseline_on_most_instances() {
        let p = SystemParams::new(2, 8);
        let ds = generate_dataset(&p, false, 200, 60).unwrap();
        let mut wins = 0;
        for (i, f) in ds.features.iter().enumerate() {
            let ga = GaParams::for_elements(8, 5, SplitMix64::derive(1000, i as u64));
            let (_, c_ga) = ga_throughput(f, &p, &ga).unwrap();
            let mut rng = SplitMix64::new(SplitMix64::derive(2000, i as u64));
            let (_, c_rand) = random_baseline(f, &p, &ga, &mut rng).unwrap();
            if c_ga >= c_rand {
                wins += 1;
            }
        }
        assert!(wins >= 180, "GA won only {wins}/200 paired comparisons");
    }

    #[test]
    fn random_baseline_is_deterministic_and_split_optimized() {
        let f = feature(2, 4, false, 9);
        let p = SystemParams::new(2, 4);
        let ga = GaParams::for_elements(4, 5, 11);
        let (cfg_a, c_a) = random_baseline(&f, &p, &ga, &mut SplitMix64::new(5)).unwrap();
        let (cfg_b, c_b) = random_baseline(&f, &p, &ga, &mut SplitMix64::new(5)).unwrap();
        assert_eq!(cfg_a, cfg_b);
        assert_eq!(c_a, c_b);

        // The 1-D run lands essentially on the golden-section split.
        let k =
            evaluator::sinr_from_parts(&f, &cfg_a.et_phases, &cfg_a.it_phases, 0.5, &p).unwrap();
        let (_, c_star) = golden_section_tau(k);
        assert!(c_star - c_a < 1e-3, "achieved {c_a} vs best {c_star}");
    }

    #[test]
    fn split_objective_matches_full_throughput() {
        // The k-factored form agrees with the full evaluator at any tau.
        let f = feature(2, 4, false, 14);
        let p = SystemParams::new(2, 4);
        let et = vec![0.3, 1.1, 4.4, 2.0];
        let it = vec![5.5, 0.2, 3.3, 1.7];
        let k = evaluator::sinr_from_parts(&f, &et, &it, 0.5, &p).unwrap();
        for tau in [0.1, 0.37, 0.5, 0.81, 0.99] {
            let full = evaluator::throughput_from_parts(&f, &et, &it, tau, &p).unwrap();
            let reduced = split_throughput(k, tau);
            assert!((full - reduced).abs() <= 1e-12 * full.abs().max(1e-12), "tau {tau}");
        }
    }

    #[test]
    fn golden_section_matches_a_fine_scan() {
        for k in [0.3, 5.0, 120.0] {
            let (_, c_gold) = golden_section_tau(k);
            let mut best = 0.0f64;
            for j in 1..100_000 {
                let tau = j as f64 / 100_000.0;
                best = best.max(split_throughput(k, tau));
            }
            assert!(c_gold >= best - 1e-8, "k {k}: golden {c_gold} vs scan {best}");
        }
    }

    #[test]
    fn grid_oracle_budget_guard() {
        let f = feature(1, 8, false, 2);
        let p = SystemParams::new(1, 8);
        // 256^8 lattice points is far beyond the budget.
        match grid_oracle(&f, &p, 256) {
            Err(BaselineError::BudgetExceeded { points, .. }) => {
                assert!(points > GRID_BUDGET);
            }
            other => panic!("expected budget refusal, got {other:?}"),
        }
    }

    #[test]
    fn grid_oracle_zero_feature_returns_first_point() {
        let len = FeatureVector::feature_len(1, 2, false);
        let f = FeatureVector::from_flat(1, 2, false, vec![0.0; len]).unwrap();
        let p = SystemParams::new(1, 2);
        let (cfg, c) = grid_oracle(&f, &p, 16).unwrap();
        assert_eq!(c, 0.0);
        assert_eq!(cfg.et_phases, vec![0.0, 0.0]);
        assert_eq!(cfg.it_phases, vec![0.0, 0.0]);
        assert_eq!(cfg.tau, 1.0 / 16.0);
    }

    #[test]
    fn grid_oracle_dominates_ga_on_tiny_instances() {
        let p = SystemParams::new(1, 1);
        for seed in 0..20 {
            let f = feature(1, 1, false, 300 + seed);
            let (_, c_oracle) = grid_oracle(&f, &p, 512).unwrap();
            let ga = GaParams::for_elements(1, 5, seed);
            let (_, c_ga) = ga_throughput(&f, &p, &ga).unwrap();
            assert!(c_oracle >= c_ga - 1e-6, "seed {seed}: oracle {c_oracle} vs GA {c_ga}");
        }
    }

    #[test]
    fn doubling_resolution_never_decreases_the_oracle() {
        let p = SystemParams::new(1, 2);
        for seed in 0..20 {
            let f = feature(1, 2, false, 400 + seed);
            let (_, c8) = grid_oracle(&f, &p, 8).unwrap();
            let (_, c16) = grid_oracle(&f, &p, 16).unwrap();
            let (_, c32) = grid_oracle(&f, &p, 32).unwrap();
            assert!(c16 >= c8, "seed {seed}");
            assert!(c32 >= c16, "seed {seed}");
        }
    }

    #[test]
    fn oracle_value_is_exactly_permutation_invariant() {
        // Swapping the reflecting elements permutes every cascade block
        // identically; the exhaustive optimum value must not move at all.
        let p = SystemParams::new(1, 2);
        for seed in 0..10 {
            let mut ch = sample_channels(&p, &mut SplitMix64::new(500 + seed));
            let f = build_features(&ch, false);
            ch.pb_irs.swap(0, 1);
            ch.irs_source.swap(0, 1);
            ch.interferer_irs.swap(0, 1);
            ch.irs_dest.swap(0, 1);
            let f_swapped = build_features(&ch, false);
            let (_, c_a) = grid_oracle(&f, &p, 64).unwrap();
            let (_, c_b) = grid_oracle(&f_swapped, &p, 64).unwrap();
            assert_eq!(c_a, c_b, "seed {seed}");
        }
    }

    #[test]
    fn oracle_handles_interference_mode() {
        let mut p = SystemParams::new(1, 2);
        p.interferer_power = crate::channel::dbm_to_watts(10.0);
        let f = feature(1, 2, true, 21);
        let (cfg, c) = grid_oracle(&f, &p, 32).unwrap();
        assert!(c > 0.0);
        let direct = evaluator::throughput(&f, &cfg, &p).unwrap();
        assert_eq!(direct, c);

        // Noise-limited features with interferer power set are refused.
        let f_off = feature(1, 2, false, 21);
        assert!(grid_oracle(&f_off, &p, 32).is_err());
    }
}
