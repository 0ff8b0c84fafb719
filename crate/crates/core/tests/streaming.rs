use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tonegan::generator::{Generator, GeneratorConfig};
use tonegan::streaming::StreamState;

fn small() -> Arc<Generator<f32>> {
    let cfg = GeneratorConfig {
        n_stacks: 2,
        layers_per_stack: 5,
        channels: 5,
        ..GeneratorConfig::default()
    };
    Arc::new(Generator::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_partition_matches_offline(
        seed in any::<u64>(),
        blocks in prop::collection::vec(1usize..700, 1..12),
    ) {
        let g = small();
        let n: usize = blocks.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let offline = g.forward(&x).unwrap();
        let mut s = StreamState::new(g).unwrap();
        let mut y = Vec::with_capacity(n);
        let mut t = 0;
        for b in blocks {
            y.extend(s.process_block(&x[t..t + b]));
            t += b;
        }
        for (a, b) in y.iter().zip(&offline) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }
}

#[test]
fn consecutive_streams_are_independent_after_reset() {
    let g = small();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f32> = (0..3000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut s = StreamState::new(g.clone()).unwrap();
    let first = s.process_block(&x);
    s.reset();
    assert_eq!(s.process_block(&x), first);
}
