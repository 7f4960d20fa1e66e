use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{latent_distance, BlackBoxModel, LatentModel};
use crate::error::{LxlError, Result, Stage};
use crate::image::Image;
use crate::models::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneticParams {
    /// Individuals per sub-population, and the number of candidates each one returns.
    pub population: usize,
    pub generations: usize,
    /// Evolution continues past `generations` up to this bound while an archive is short.
    pub max_generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    pub mutation_std: f64,
    /// Spread of the initial population around the anchor code.
    pub init_std: f64,
    pub tournament: usize,
    /// Discriminator validity threshold.
    pub tau: f32,
}

impl Default for GeneticParams {
    fn default() -> Self {
        GeneticParams {
            population: 200,
            generations: 10,
            max_generations: 30,
            crossover_rate: 0.5,
            mutation_rate: 0.2,
            mutation_std: 0.15,
            init_std: 0.5,
            tournament: 3,
            tau: 0.35,
        }
    }
}

impl GeneticParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LxlError::Config(format!("genetic: {m}")));
        if self.population < 10 {
            return bad("population must be at least 10");
        }
        if self.generations < 1 || self.max_generations < self.generations {
            return bad("need 1 <= generations <= max_generations");
        }
        for (name, p) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0,1]"));
            }
        }
        if !(self.mutation_std > 0.0 && self.init_std > 0.0) {
            return bad("standard deviations must be positive");
        }
        if self.tournament < 1 {
            return bad("tournament size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0,1]");
        }
        Ok(())
    }
}

/// Validity check and black-box labelling of one latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct Disde {
    pub valid: bool,
    pub decoded: Image,
    pub label: usize,
    /// Black-box score of `label`.
    pub confidence: f32,
    pub score: f32,
}

pub fn disde<L: LatentModel + ?Sized, B: BlackBoxModel + ?Sized>(aae: &L, h: &[f32], b: &B, tau: f32) -> Result<Disde> {
    Ok(disde_batch(aae, &[h], b, tau)?.remove(0))
}

pub fn disde_batch<L: LatentModel + ?Sized, B: BlackBoxModel + ?Sized>(
    aae: &L,
    hs: &[&[f32]],
    b: &B,
    tau: f32,
) -> Result<Vec<Disde>> {
    if hs.is_empty() {
        return Ok(Vec::new());
    }
    let decoded = aae.decode_batch(hs)?;
    let scores = b.classify_batch(&decoded.iter().collect::<Vec<_>>())?;
    let validity = aae.discriminate_batch(hs)?;
    Ok(decoded
        .into_iter()
        .zip(scores)
        .zip(validity)
        .map(|((decoded, s), score)| {
            let label = argmax(&s);
            Disde {
                valid: score >= tau,
                decoded,
                label,
                confidence: s[label],
                score,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubPopulation {
    /// Individuals that keep the anchor's label.
    Same,
    /// Individuals that change it.
    Different,
}

/// Fitness of an individual at latent distance `d` from the anchor.
pub fn fitness(sub: SubPopulation, same_label: bool, d: f64, d_max: f64, is_anchor: bool) -> f64 {
    let closeness = if d_max > 0.0 { 1.0 - d / d_max } else { 1.0 };
    match sub {
        SubPopulation::Same => f64::from(u8::from(same_label)) + closeness - f64::from(u8::from(is_anchor)),
        SubPopulation::Different => f64::from(u8::from(!same_label)) + closeness,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCandidate {
    /// Position in the neighbourhood; used for deterministic tie-breaks.
    pub id: usize,
    pub z: Vec<f32>,
    pub decoded: Image,
    pub label: usize,
    pub confidence: f32,
    pub discriminator: f32,
    pub fitness: f64,
    pub origin: SubPopulation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub anchor: Vec<f32>,
    pub anchor_label: usize,
    pub candidates: Vec<LatentCandidate>,
    /// Best fitness per generation of the same-label run.
    pub same_log: Vec<f64>,
    pub different_log: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Neighborhood {
    pub fn different_label(&self) -> impl Iterator<Item = &LatentCandidate> {
        self.candidates.iter().filter(move |c| c.label != self.anchor_label)
    }
}

struct Evaluated {
    z: Vec<f32>,
    d: f64,
    eval: Disde,
}

fn gaussian_around<R: Rng>(z: &[f32], std: f64, rng: &mut R) -> Vec<f32> {
    z.iter()
        .map(|&v| v + (std * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect()
}

fn tournament<R: Rng>(fit: &[f64], size: usize, rng: &mut R) -> usize {
    let mut best = rng.gen_range(0..fit.len());
    for _ in 1..size {
        let i = rng.gen_range(0..fit.len());
        if fit[i] > fit[best] {
            best = i;
        }
    }
    best
}

struct RunOutput {
    archive: Vec<Evaluated>,
    log: Vec<f64>,
    d_max: f64,
}

#[allow(clippy::too_many_arguments)]
fn evolve<L, B, R>(
    aae: &L,
    b: &B,
    z: &[f32],
    anchor_label: usize,
    sub: SubPopulation,
    p: &GeneticParams,
    rng: &mut R,
) -> Result<RunOutput>
where
    L: LatentModel + ?Sized,
    B: BlackBoxModel + ?Sized,
    R: Rng,
{
    let score = |ev: &Evaluated, d_max: f64| fitness(sub, ev.eval.label == anchor_label, ev.d, d_max, ev.z == z);
    let evaluate = |zs: Vec<Vec<f32>>| -> Result<Vec<Evaluated>> {
        let refs: Vec<&[f32]> = zs.iter().map(|v| v.as_slice()).collect();
        let evals = disde_batch(aae, &refs, b, p.tau)?;
        Ok(zs
            .into_iter()
            .zip(evals)
            .map(|(h, eval)| Evaluated {
                d: latent_distance(&h, z),
                z: h,
                eval,
            })
            .collect())
    };

    let init: Vec<Vec<f32>> = (0..p.population).map(|_| gaussian_around(z, p.init_std, rng)).collect();
    let mut pop = evaluate(init)?;
    let mut archive: Vec<Evaluated> = Vec::new();
    let mut log = Vec::new();
    let mut d_max = 0.0f64;
    let mut fresh_from = 0;
    for gen in 0.. {
        // The running maximum keeps an elite's fitness from dropping between generations.
        d_max = pop.iter().map(|e| e.d).fold(d_max, f64::max);
        let fit: Vec<f64> = pop.iter().map(|e| score(e, d_max)).collect();
        let elite = (0..pop.len()).fold(0, |best, i| if fit[i] > fit[best] { i } else { best });
        log.push(fit[elite]);
        for e in &pop[fresh_from..] {
            if e.eval.valid {
                archive.push(Evaluated {
                    z: e.z.clone(),
                    d: e.d,
                    eval: e.eval.clone(),
                });
            }
        }
        let done = gen + 1 >= p.generations && archive.len() >= p.population;
        if done || gen + 1 >= p.max_generations {
            break;
        }
        let mut children = Vec::with_capacity(p.population - 1);
        for _ in 1..p.population {
            let a = &pop[tournament(&fit, p.tournament, rng)].z;
            let mut child = a.clone();
            if rng.gen_bool(p.crossover_rate) {
                let other = &pop[tournament(&fit, p.tournament, rng)].z;
                for (c, &o) in child.iter_mut().zip(other) {
                    if rng.gen_bool(0.5) {
                        *c = o;
                    }
                }
            }
            for c in child.iter_mut() {
                if rng.gen_bool(p.mutation_rate) {
                    *c += (p.mutation_std * rng.sample::<f64, _>(StandardNormal)) as f32;
                }
            }
            children.push(child);
        }
        let elite = pop.swap_remove(elite);
        let mut next = vec![elite];
        next.extend(evaluate(children)?);
        pop = next;
        fresh_from = 1;
    }
    Ok(RunOutput { archive, log, d_max })
}

/// Evolves same-label and different-label sub-populations around `z` and keeps, for each, the
/// `population` fittest valid individuals it ever produced.
pub fn neighgen_genetic<L, B, R>(z: &[f32], anchor_label: usize, b: &B, aae: &L, params: &GeneticParams, rng: &mut R) -> Result<Neighborhood>
where
    L: LatentModel + ?Sized,
    B: BlackBoxModel + ?Sized,
    R: Rng,
{
    params.validate()?;
    if z.len() != aae.latent_dim() {
        return Err(LxlError::shape("anchor latent", aae.latent_dim(), z.len()));
    }
    let mut candidates = Vec::new();
    let mut logs = Vec::new();
    let mut warnings = Vec::new();
    for sub in [SubPopulation::Same, SubPopulation::Different] {
        let run = evolve(aae, b, z, anchor_label, sub, params, rng)?;
        let mut scored: Vec<(f64, Evaluated)> = run
            .archive
            .into_iter()
            .map(|e| (fitness(sub, e.eval.label == anchor_label, e.d, run.d_max, e.z == z), e))
            .collect();
        // Stable sort keeps discovery order among equal fitness.
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        if scored.len() < params.population {
            warnings.push(format!(
                "{sub:?} sub-population produced {} of {} valid candidates",
                scored.len(),
                params.population
            ));
        }
        for (f, e) in scored.into_iter().take(params.population) {
            candidates.push(LatentCandidate {
                id: candidates.len(),
                z: e.z,
                label: e.eval.label,
                confidence: e.eval.confidence,
                discriminator: e.eval.score,
                decoded: e.eval.decoded,
                fitness: f,
                origin: sub,
            });
        }
        logs.push(run.log);
    }
    if candidates.is_empty() {
        return Err(LxlError::Infeasible {
            stage: Stage::Neighborhood,
            detail: format!("no latent passed the validity threshold {}", params.tau),
        });
    }
    let different_log = logs.pop().unwrap_or_default();
    let same_log = logs.pop().unwrap_or_default();
    Ok(Neighborhood {
        anchor: z.to_vec(),
        anchor_label,
        candidates,
        same_log,
        different_log,
        warnings,
    })
}

/// Best same-label fitness among `n` codes drawn uniformly from the box `z ± half_width`.
pub fn random_search_best<L, B, R>(z: &[f32], anchor_label: usize, b: &B, aae: &L, n: usize, half_width: f64, rng: &mut R) -> Result<f64>
where
    L: LatentModel + ?Sized,
    B: BlackBoxModel + ?Sized,
    R: Rng,
{
    let zs: Vec<Vec<f32>> = (0..n)
        .map(|_| z.iter().map(|&v| v + rng.gen_range(-half_width..=half_width) as f32).collect())
        .collect();
    let refs: Vec<&[f32]> = zs.iter().map(|v| v.as_slice()).collect();
    let decoded = aae.decode_batch(&refs)?;
    let labels: Vec<usize> = b.classify_batch(&decoded.iter().collect::<Vec<_>>())?.iter().map(|s| argmax(s)).collect();
    let d: Vec<f64> = zs.iter().map(|h| latent_distance(h, z)).collect();
    let d_max = d.iter().copied().fold(0.0, f64::max);
    Ok(zs
        .iter()
        .zip(&labels)
        .zip(&d)
        .map(|((h, &l), &d)| fitness(SubPopulation::Same, l == anchor_label, d, d_max, h.as_slice() == z))
        .fold(f64::NEG_INFINITY, f64::max))
}
