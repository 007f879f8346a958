use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::config::{SimConfig, GENERATION_INTERVAL_DAYS};
use super::{derive_seed, SimError, STREAM_OUTBREAK};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agent {
    pub id: usize,
    pub infector: Option<usize>,
    pub infection_day: u32,
    pub symptomatic: bool,
    /// 0 for seeds.
    pub generation: u32,
}

/// Ground-truth infection forest. Agents are stored in breadth-first order,
/// so an infector always precedes its infectees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmissionTree {
    agents: Vec<Agent>,
    children: Vec<Vec<usize>>,
    truncated: bool,
}

impl TransmissionTree {
    /// Builds a forest from infector links. `infectors[i]` must be `None`
    /// or an index below `i`. Infection days follow the generation interval.
    pub fn from_infectors(infectors: &[Option<usize>]) -> Result<Self, SimError> {
        let mut tree = TransmissionTree {
            agents: Vec::with_capacity(infectors.len()),
            children: Vec::with_capacity(infectors.len()),
            truncated: false,
        };
        for (id, &infector) in infectors.iter().enumerate() {
            match infector {
                Some(p) if p >= id => {
                    return Err(SimError::InvalidTree(format!(
                        "agent {id} has infector {p} not before it"
                    )))
                }
                _ => {
                    tree.push(infector, infector.is_none());
                }
            }
        }
        Ok(tree)
    }

    /// A forest where every seed has `branching[0]` infectees, each of those
    /// has `branching[1]`, and so on.
    pub fn regular(n_seeds: usize, branching: &[usize]) -> Self {
        let mut infectors: Vec<Option<usize>> = vec![None; n_seeds];
        let mut frontier: Vec<usize> = (0..n_seeds).collect();
        for &b in branching {
            let mut next = Vec::with_capacity(frontier.len() * b);
            for &parent in &frontier {
                for _ in 0..b {
                    next.push(infectors.len());
                    infectors.push(Some(parent));
                }
            }
            frontier = next;
        }
        // Regular shapes are breadth-first by construction.
        Self::from_infectors(&infectors).expect("breadth-first construction")
    }

    fn push(&mut self, infector: Option<usize>, symptomatic: bool) -> usize {
        let id = self.agents.len();
        let (infection_day, generation) = match infector {
            Some(p) => (
                self.agents[p].infection_day + GENERATION_INTERVAL_DAYS,
                self.agents[p].generation + 1,
            ),
            None => (0, 0),
        };
        self.agents.push(Agent {
            id,
            infector,
            infection_day,
            symptomatic,
            generation,
        });
        self.children.push(Vec::new());
        if let Some(p) = infector {
            self.children[p].push(id);
        }
        id
    }

    pub fn set_symptomatic(&mut self, id: usize, symptomatic: bool) {
        self.agents[id].symptomatic = symptomatic;
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn seeds(&self) -> impl Iterator<Item = &Agent> {
        self.agents.iter().filter(|a| a.infector.is_none())
    }

    pub fn non_seed_count(&self) -> usize {
        self.agents.iter().filter(|a| a.infector.is_some()).count()
    }

    pub fn max_generation(&self) -> u32 {
        self.agents.iter().map(|a| a.generation).max().unwrap_or(0)
    }

    /// True when generation stopped at `max_agents` rather than the horizon.
    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

/// Poisson offspring counts conditioned on `count <= max`.
#[derive(Debug, Clone, Copy)]
pub struct OffspringDistribution {
    poisson: Option<Poisson<f64>>,
    max: u32,
}

impl OffspringDistribution {
    pub fn new(mean: f64, max: u32) -> Self {
        OffspringDistribution {
            poisson: (mean > 0.0 && max > 0)
                .then(|| Poisson::new(mean).expect("positive finite mean")),
            max,
        }
    }
}

impl Distribution<u32> for OffspringDistribution {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let Some(poisson) = &self.poisson else {
            return 0;
        };
        loop {
            let draw = poisson.sample(rng);
            if draw <= self.max as f64 {
                return draw as u32;
            }
        }
    }
}

/// Grows a branching process from `config.n_seeds` seeds until no infection
/// falls within `config.horizon_days` or `config.max_agents` is reached.
/// The same `(config, seed)` always yields the same tree.
pub fn generate_outbreak(config: &SimConfig, seed: u64) -> TransmissionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_OUTBREAK, 0));
    let offspring = OffspringDistribution::new(config.offspring_mean, config.offspring_max);
    let mut tree = TransmissionTree {
        agents: Vec::new(),
        children: Vec::new(),
        truncated: false,
    };
    let mut queue = VecDeque::new();
    for _ in 0..config.n_seeds {
        if tree.len() >= config.max_agents {
            tree.truncated = true;
            break;
        }
        queue.push_back(tree.push(None, true));
    }
    while let Some(id) = queue.pop_front() {
        if tree.agents[id].infection_day + GENERATION_INTERVAL_DAYS > config.horizon_days {
            continue;
        }
        let n = offspring.sample(&mut rng);
        for _ in 0..n {
            if tree.len() >= config.max_agents {
                tree.truncated = true;
                return tree;
            }
            let symptomatic = rng.random_bool(config.p_symptomatic);
            queue.push_back(tree.push(Some(id), symptomatic));
        }
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_generation(mean: f64) -> SimConfig {
        SimConfig {
            n_seeds: 1,
            offspring_mean: mean,
            horizon_days: GENERATION_INTERVAL_DAYS,
            ..SimConfig::default()
        }
    }

    #[test]
    fn zero_mean_gives_seeds_only() {
        let cfg = SimConfig {
            offspring_mean: 0.0,
            ..SimConfig::default()
        };
        let tree = generate_outbreak(&cfg, 3);
        assert_eq!(tree.len(), cfg.n_seeds as usize);
        assert_eq!(tree.non_seed_count(), 0);
    }

    #[test]
    fn same_seed_same_tree() {
        let cfg = SimConfig::default();
        assert_eq!(generate_outbreak(&cfg, 42), generate_outbreak(&cfg, 42));
        let a = generate_outbreak(&one_generation(2.5), 9);
        let b = generate_outbreak(&one_generation(2.5), 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 1 + a.children(0).len());
        assert_eq!(a.max_generation(), u32::from(a.len() > 1));
    }

    #[test]
    fn forest_invariants_hold() {
        let tree = generate_outbreak(&SimConfig::default(), 5);
        for a in tree.agents() {
            if let Some(p) = a.infector {
                assert!(p < a.id);
                assert!(tree.agents()[p].infection_day < a.infection_day);
                assert!(tree.children(p).contains(&a.id));
            }
            assert!(a.infection_day <= SimConfig::default().horizon_days);
            assert!(tree.children(a.id).len() <= 10);
        }
    }

    #[test]
    fn max_agents_truncates() {
        let cfg = SimConfig {
            offspring_mean: 6.0,
            horizon_days: 60,
            max_agents: 500,
            ..SimConfig::default()
        };
        let tree = generate_outbreak(&cfg, 1);
        assert_eq!(tree.len(), 500);
        assert!(tree.truncated());
    }

    #[test]
    fn regular_shape_and_bad_links() {
        let tree = TransmissionTree::regular(1, &[2, 2]);
        assert_eq!(tree.len(), 7);
        assert_eq!(tree.children(0), &[1, 2]);
        assert_eq!(tree.agents()[6].generation, 2);
        assert_eq!(tree.agents()[6].infection_day, 10);
        assert!(TransmissionTree::from_infectors(&[None, Some(1)]).is_err());
    }

    /// Analytic mean of a Poisson(mean) conditioned on not exceeding `max`.
    fn truncated_poisson_mean(mean: f64, max: u32) -> f64 {
        let mut pmf = (-mean).exp();
        let (mut mass, mut first) = (0.0, 0.0);
        for k in 0..=max {
            if k > 0 {
                pmf *= mean / k as f64;
            }
            mass += pmf;
            first += k as f64 * pmf;
        }
        first / mass
    }

    #[test]
    fn single_generation_offspring_matches_truncated_mean() {
        for (mean, max) in [(2.5, 10), (6.0, 4), (1.0, 1)] {
            let cfg = SimConfig {
                offspring_max: max,
                ..one_generation(mean)
            };
            let counts: Vec<f64> = (0..10_000)
                .map(|s| generate_outbreak(&cfg, s).non_seed_count() as f64)
                .collect();
            let n = counts.len() as f64;
            let avg = counts.iter().sum::<f64>() / n;
            let var = counts.iter().map(|c| (c - avg).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            let expected = truncated_poisson_mean(mean, max);
            assert!(
                (avg - expected).abs() <= 3.0 * se,
                "mean {mean} max {max}: sample {avg}, expected {expected}, se {se}"
            );
        }
    }
}
