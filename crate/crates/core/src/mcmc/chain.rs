use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Hyperparameters, ResponseKind};
use crate::error::{Error, Result};

use super::sampler::{occupancy_order, Sampler};
use super::state::{init_state, McmcState};

/// Iteration schedule and sampler options for one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_init_clusters: usize,
    pub seed: u64,
    /// Keep a u snapshot every `u_thin`-th retained iteration.
    pub u_thin: usize,
    pub spatial: bool,
    /// Tune proposal scales during burn-in.
    pub adapt: bool,
}

impl Schedule {
    pub fn new(n_iter: usize, burn_in: usize, thin: usize) -> Self {
        Schedule {
            n_iter,
            burn_in,
            thin,
            n_init_clusters: 50,
            seed: 1,
            u_thin: 10,
            spatial: true,
            adapt: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.u_thin == 0 {
            return Err(Error::InvalidInput("thin and u_thin must be positive".into()));
        }
        if self.burn_in > self.n_iter {
            return Err(Error::InvalidInput(format!(
                "burn_in {} exceeds n_iter {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.n_init_clusters < 2 {
            return Err(Error::InvalidInput(format!(
                "n_init_clusters must be at least 2, got {}",
                self.n_init_clusters
            )));
        }
        Ok(())
    }

    /// Number of retained iterations, ⌊(n_iter − burn_in) / thin⌋.
    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    fn keeps(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in + 1) % self.thin == 0
    }
}

/// An occupied cluster as reported in the trace, after relabeling by occupancy.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceCluster {
    pub label: usize,
    pub size: usize,
    pub psi: f64,
    pub theta: f64,
    pub phi: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSample {
    pub iteration: usize,
    pub z: Vec<usize>,
    pub alpha: f64,
    pub tau: f64,
    pub tau_y: Option<f64>,
    pub beta: Vec<f64>,
    pub clusters: Vec<TraceCluster>,
}

impl TraceSample {
    pub fn k_occupied(&self) -> usize {
        self.clusters.len()
    }

    /// Reported view of a state: occupied clusters relabeled by descending size.
    pub fn from_state(iteration: usize, state: &McmcState, kind: ResponseKind) -> Self {
        let order = occupancy_order(state.counts());
        let mut relabel = vec![usize::MAX; state.c_total()];
        for (new, &old) in order.iter().enumerate() {
            relabel[old] = new;
        }
        let clusters = order
            .iter()
            .enumerate()
            .map(|(label, &c)| TraceCluster {
                label,
                size: state.counts()[c],
                psi: state.psi[c],
                theta: state.clusters[c].response.theta,
                phi: state.clusters[c].covariates.phi.clone(),
            })
            .collect();
        TraceSample {
            iteration,
            z: state.z.iter().map(|&c| relabel[c]).collect(),
            alpha: state.alpha,
            tau: state.spatial.tau,
            tau_y: (kind == ResponseKind::Gaussian).then(|| state.globals.tau_y()),
            beta: state.globals.beta.clone(),
            clusters,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainStats {
    pub theta_acceptance: f64,
    pub beta_acceptance: Vec<f64>,
    pub swap_acceptance: f64,
    pub site_acceptance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub samples: Vec<TraceSample>,
    /// Posterior mean of u over all retained iterations.
    pub u_mean: Vec<f64>,
    /// (iteration, u) every `u_thin`-th retained iteration.
    pub u_snapshots: Vec<(usize, Vec<f64>)>,
    pub stats: ChainStats,
    pub spatial: bool,
}

impl SampleTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Runs one chain on random stream 0 of the schedule's seed.
pub fn run_chain(data: &Dataset, hyper: &Hyperparameters, schedule: &Schedule) -> Result<SampleTrace> {
    run_chain_stream(data, hyper, schedule, 0)
}

/// Runs one chain on the given ChaCha stream, so chains sharing a seed are independent.
pub fn run_chain_stream(
    data: &Dataset,
    hyper: &Hyperparameters,
    schedule: &Schedule,
    stream: u64,
) -> Result<SampleTrace> {
    schedule.validate()?;
    hyper.validate(data.categories())?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    rng.set_stream(stream);
    let mut state = init_state(data, hyper, schedule.n_init_clusters, &mut rng)?;
    let mut sampler = Sampler::new(data, hyper, schedule.spatial);
    sampler.set_adapting(schedule.adapt && schedule.burn_in > 0);

    let n = data.n();
    let mut samples = Vec::with_capacity(schedule.retained());
    let mut u_sum = vec![0.0; n];
    let mut u_snapshots = vec![];
    for t in 0..schedule.n_iter {
        if t == schedule.burn_in {
            sampler.set_adapting(false);
            sampler.reset_counts();
        }
        sampler.sweep(&mut state, &mut rng)?;
        if schedule.keeps(t) {
            u_sum.iter_mut().zip(&state.spatial.u).for_each(|(s, u)| *s += u);
            if samples.len() % schedule.u_thin == 0 {
                u_snapshots.push((t, state.spatial.u.clone()));
            }
            samples.push(TraceSample::from_state(t, &state, data.kind()));
        }
        if (t + 1) % 1000 == 0 {
            log::info!(
                "stream {stream}: iteration {}/{}, {} occupied clusters, alpha {:.3}",
                t + 1,
                schedule.n_iter,
                state.c_active(),
                state.alpha
            );
        }
    }
    let kept = samples.len().max(1) as f64;
    let stats = ChainStats {
        theta_acceptance: sampler.theta_step.acceptance_rate(),
        beta_acceptance: sampler.beta_steps.iter().map(|s| s.acceptance_rate()).collect(),
        swap_acceptance: sampler.swaps.rate(),
        site_acceptance: sampler.site_moves.rate(),
    };
    Ok(SampleTrace {
        samples,
        u_mean: u_sum.iter().map(|s| s / kept).collect(),
        u_snapshots,
        stats,
        spatial: sampler.spatial(),
    })
}
