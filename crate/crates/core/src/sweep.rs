//! Multi-seed scenario sweeps. Each seed runs single-threaded; with the
//! `parallel` feature seeds run on the rayon pool, otherwise one after another.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::simulator::{run, ScenarioConfig, SimError, SimOutput};

/// Runs `config` once per seed and maps each output through `f`, keeping seed
/// order. Results are identical whichever executor runs them.
pub fn sweep<T, F>(config: &ScenarioConfig, seeds: &[u64], f: F) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(u64, SimOutput) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    {
        sweep_parallel(config, seeds, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        sweep_sequential(config, seeds, f)
    }
}

fn one<T>(config: &ScenarioConfig, seed: u64, f: &impl Fn(u64, SimOutput) -> T) -> Result<T, SimError> {
    let cfg = ScenarioConfig { seed, ..config.clone() };
    Ok(f(seed, run(&cfg)?))
}

pub fn sweep_sequential<T, F>(config: &ScenarioConfig, seeds: &[u64], f: F) -> Result<Vec<T>, SimError>
where
    F: Fn(u64, SimOutput) -> T,
{
    seeds.iter().map(|&s| one(config, s, &f)).collect()
}

#[cfg(feature = "parallel")]
pub fn sweep_parallel<T, F>(config: &ScenarioConfig, seeds: &[u64], f: F) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(u64, SimOutput) -> T + Sync,
{
    seeds.par_iter().map(|&s| one(config, s, &f)).collect()
}
