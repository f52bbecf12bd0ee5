//! Times forward+backward passes of the glyph16 models.

use std::time::Instant;

use dsn_core::autodiff::Graph;
use dsn_core::data::{generate, BatchIterator, Scenario, ScenarioSpec};
use dsn_core::losses::{total_loss, LossWeights};
use dsn_core::model::{DsnModel, ModelVariant, Similarity};
use dsn_core::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn time<T: Real>(variant: ModelVariant, batch: usize, steps: usize) {
    let pair = generate(&ScenarioSpec::new(Scenario::Glyph16, 500, 10, 0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = DsnModel::<T>::new(Scenario::Glyph16, variant, Similarity::Dann, &mut rng).unwrap();
    let mut it = BatchIterator::new(&pair.source_train, &pair.target_train, batch, 0).unwrap();
    let weights = LossWeights { warmup_steps: 0, ..LossWeights::default() };
    let start = Instant::now();
    for _ in 0..steps {
        let b = it.next_batch();
        let mut g = Graph::<T>::new();
        let p = model.params.bind(&mut g);
        let (_, parts) = model.batch_losses(&mut g, &p, &b, true, 0.125).unwrap();
        let loss = total_loss(&mut g, &parts, &weights, 1).unwrap();
        g.backward(loss).unwrap();
    }
    let ms = start.elapsed().as_secs_f64() * 1000.0 / steps as f64;
    println!("{} {variant} batch {batch}: {ms:.2} ms/step", T::NAME);
}

fn main() {
    // `step_timing <variant> <steps>` times a single f64 configuration
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [variant, steps] = args.as_slice() {
        time::<f64>(variant.parse().unwrap(), 32, steps.parse().unwrap());
        return;
    }
    for v in [ModelVariant::Dsn, ModelVariant::SourceOnly, ModelVariant::DannOnly] {
        time::<f64>(v, 32, 30);
        time::<f32>(v, 32, 30);
    }
}
