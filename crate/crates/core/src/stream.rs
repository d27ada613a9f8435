//! Deterministic, independently keyed reward streams.
//!
//! Every (seed, trial, client, arm) key owns its own ChaCha8 stream, so the
//! `i`-th reward of a given arm at a given client is fixed by the key alone,
//! regardless of pull order or of which thread runs the trial.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::instance::ProblemInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub trial: u64,
    pub client: u32,
    pub arm: u32,
}

#[derive(Debug, Clone)]
pub struct RewardStream {
    rng: ChaCha8Rng,
}

impl RewardStream {
    pub fn new(key: StreamKey) -> Self {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&key.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&key.trial.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(((key.client as u64) << 32) | key.arm as u64);
        RewardStream { rng }
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Anything that can produce the next reward of arm `arm` at client `client`.
pub trait RewardSource {
    fn draw(&mut self, arm: usize, client: usize) -> f64;
}

impl<F: FnMut(usize, usize) -> f64> RewardSource for F {
    fn draw(&mut self, arm: usize, client: usize) -> f64 {
        self(arm, client)
    }
}

/// Samples an instance through one keyed stream per (arm, client).
#[derive(Debug, Clone)]
pub struct InstanceSource<'a> {
    instance: &'a ProblemInstance,
    streams: Vec<RewardStream>,
}

impl<'a> InstanceSource<'a> {
    pub fn new(instance: &'a ProblemInstance, seed: u64, trial: u64) -> Self {
        let m_clients = instance.num_clients();
        let streams = (0..instance.num_arms())
            .flat_map(|k| {
                (0..m_clients).map(move |m| {
                    RewardStream::new(StreamKey {
                        seed,
                        trial,
                        client: m as u32,
                        arm: k as u32,
                    })
                })
            })
            .collect();
        InstanceSource { instance, streams }
    }
}

impl RewardSource for InstanceSource<'_> {
    fn draw(&mut self, arm: usize, client: usize) -> f64 {
        let idx = arm * self.instance.num_clients() + client;
        self.instance.draw(&mut self.streams[idx], arm, client)
    }
}
