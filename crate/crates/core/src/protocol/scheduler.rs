//! Trainer-order scheduling for token grants and peer relays.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    RoundRobin,
    Random,
}

/// Picks the next trainer. Round robin cycles a fixed order; uniform random
/// draws from all trainers except the one that just finished.
#[derive(Clone, Debug)]
pub enum Scheduler {
    RoundRobin { order: Vec<u32> },
    UniformRandom { rng: ChaCha8Rng },
}

impl Scheduler {
    pub fn round_robin(trainer_count: u32) -> Self {
        Scheduler::RoundRobin { order: (0..trainer_count).collect() }
    }

    pub fn uniform_random(seed: u64) -> Self {
        Scheduler::UniformRandom { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn from_kind(kind: SchedulerKind, trainer_count: u32, seed: u64) -> Self {
        match kind {
            SchedulerKind::RoundRobin => Scheduler::round_robin(trainer_count),
            SchedulerKind::Random => Scheduler::uniform_random(seed),
        }
    }

    /// Next grantee among `alive` (ascending ids). `previous` is the trainer
    /// that just finished, never re-picked while an alternative exists;
    /// `slot` is the grant index within the current central epoch.
    pub fn next(&mut self, alive: &[u32], previous: Option<u32>, slot: u32) -> Option<u32> {
        if alive.is_empty() {
            return None;
        }
        match self {
            Scheduler::RoundRobin { order } => {
                // walk the fixed order from the epoch slot, skipping departed ids
                let l = order.len() as u32;
                for offset in 0..l {
                    let candidate = order[((slot + offset) % l) as usize];
                    if alive.contains(&candidate) {
                        return Some(candidate);
                    }
                }
                None
            }
            Scheduler::UniformRandom { rng } => {
                let pool: Vec<u32> =
                    alive.iter().copied().filter(|&t| Some(t) != previous).collect();
                let pool = if pool.is_empty() { alive.to_vec() } else { pool };
                Some(pool[rng.random_range(0..pool.len())])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_is_periodic() {
        let mut s = Scheduler::round_robin(3);
        let alive = [0, 1, 2];
        let mut grants = Vec::new();
        let mut prev = None;
        for round in 0..6 {
            let t = s.next(&alive, prev, round % 3).unwrap();
            grants.push(t);
            prev = Some(t);
        }
        assert_eq!(grants, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn round_robin_skips_departed_trainers() {
        let mut s = Scheduler::round_robin(3);
        assert_eq!(s.next(&[0, 2], None, 1), Some(2));
        assert_eq!(s.next(&[0, 2], Some(2), 2), Some(2));
    }

    #[test]
    fn uniform_random_never_repeats_previous() {
        let mut s = Scheduler::uniform_random(7);
        let alive = [0, 1];
        let mut prev = None;
        for i in 0..50 {
            let t = s.next(&alive, prev, i % 2).unwrap();
            if let Some(p) = prev {
                assert_ne!(t, p, "repeat at draw {i}");
            }
            prev = Some(t);
        }
    }

    #[test]
    fn uniform_random_with_single_trainer_degenerates() {
        let mut s = Scheduler::uniform_random(3);
        assert_eq!(s.next(&[4], Some(4), 0), Some(4));
    }

    #[test]
    fn random_draws_are_seed_deterministic() {
        let alive = [0, 1, 2, 3];
        let draw = |seed| {
            let mut s = Scheduler::uniform_random(seed);
            let mut prev = None;
            (0..20)
                .map(|i| {
                    let t = s.next(&alive, prev, i).unwrap();
                    prev = Some(t);
                    t
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }
}
