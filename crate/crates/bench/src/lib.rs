//! Shared fixtures for the criterion benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lsr_core::corpus::Query;
use lsr_core::index::ImpactIndex;
use lsr_core::synth::{random_query, sized_index, ImpactDraw};

/// A frozen Zipfian index plus a query batch, the workload both engines are
/// measured on.
pub struct Workload {
    pub index: ImpactIndex,
    pub queries: Vec<Query>,
}

pub fn zipfian_workload(num_docs: u32, vocab: usize, num_queries: usize, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index = sized_index(&mut rng, num_docs, vocab, ImpactDraw::Zipfian);
    let queries = (0..num_queries)
        .map(|_| random_query(&mut rng, &index, 2, 6))
        .collect();
    Workload { index, queries }
}
