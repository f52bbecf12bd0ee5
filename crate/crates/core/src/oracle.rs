//! Finite-difference suite over every loss and the end-to-end models.
//!
//! Each case draws fresh random inputs in `[-2, 2]` per trial and compares
//! the engine's gradients with central differences at `EPSILON`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::data::{generate, BatchIterator, Scenario, ScenarioSpec};
use crate::error::Result;
use crate::gradcheck::{finite_difference_check, Probe};
use crate::losses::{self, CodeNorm, KernelSpec, LossParts, LossWeights, Quaternion, ReconKind};
use crate::model::{DsnModel, ModelVariant, Similarity};
use crate::tensor::Tensor;

pub const EPSILON: f64 = 1e-5;
pub const LOSS_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const TRIALS: usize = 20;

/// Loss closure over the parameter leaves of one trial.
pub type LossFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;
/// Draws trial inputs and the loss to evaluate on them.
pub type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, LossFn)>;

/// A named loss with a sampler for its random trial inputs.
pub struct LossCase {
    pub name: &'static str,
    pub sample: Sampler,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub trials: usize,
}

impl CaseResult {
    pub fn passes(&self) -> bool {
        self.worst < self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn one_hot(rng: &mut ChaCha8Rng, rows: usize, classes: usize) -> Tensor<f64> {
    let mut data = vec![0.0; rows * classes];
    for r in 0..rows {
        data[r * classes + rng.random_range(0..classes)] = 1.0;
    }
    Tensor::new(&[rows, classes], data).expect("shape matches data")
}

fn case(
    name: &'static str,
    sample: impl Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, LossFn) + 'static,
) -> LossCase {
    LossCase {
        name,
        sample: Box::new(sample),
    }
}

/// si_mse with a deliberately wrong backward pass: the value is unchanged
/// but every input receives an extra gradient of 0.5.
pub fn corrupted_si_mse() -> LossCase {
    case("si_mse", |rng| {
        let params = vec![uniform(rng, &[3, 6]), uniform(rng, &[3, 6])];
        let f: LossFn = Box::new(|g, v| {
            let l = losses::si_mse(g, v[0], v[1])?;
            let s = g.sum(v[0]);
            let frozen = g.value(s).clone();
            let frozen = g.constant(frozen);
            let zero = g.sub(s, frozen)?;
            let skew = g.scale(zero, 0.5);
            g.add(l, skew)
        });
        (params, f)
    })
}

/// Every loss of the objective, plus the total-loss combiner.
pub fn loss_cases() -> Vec<LossCase> {
    vec![
        case("task_nll", |rng| {
            let labels = one_hot(rng, 5, 4);
            let params = vec![uniform(rng, &[5, 4])];
            let f: LossFn = Box::new(move |g, v| {
                let p = g.softmax(v[0]);
                let y = g.constant(labels.clone());
                losses::task_nll(g, p, y)
            });
            (params, f)
        }),
        case("si_mse", |rng| {
            let params = vec![uniform(rng, &[3, 6]), uniform(rng, &[3, 6])];
            let f: LossFn = Box::new(|g, v| losses::si_mse(g, v[0], v[1]));
            (params, f)
        }),
        case("mse", |rng| {
            let params = vec![uniform(rng, &[3, 6]), uniform(rng, &[3, 6])];
            let f: LossFn = Box::new(|g, v| losses::mse(g, v[0], v[1]));
            (params, f)
        }),
        case("reconstruction_loss", |rng| {
            let params: Vec<_> = (0..4).map(|_| uniform(rng, &[2, 2, 2, 3])).collect();
            let f: LossFn = Box::new(|g, v| {
                losses::reconstruction_loss(g, (v[0], v[1]), (v[2], v[3]), ReconKind::ScaleInvariant)
            });
            (params, f)
        }),
        case("difference_loss", |rng| {
            let params: Vec<_> = (0..4).map(|_| uniform(rng, &[4, 3])).collect();
            let f: LossFn = Box::new(|g, v| {
                losses::difference_loss(g, (v[0], v[1]), (v[2], v[3]), CodeNorm::Normalized)
            });
            (params, f)
        }),
        case("dann_domain_loss", |rng| {
            let labels: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
            let labels = Tensor::new(&[6, 1], labels).expect("shape matches data");
            let params = vec![uniform(rng, &[6, 1])];
            let f: LossFn = Box::new(move |g, v| {
                let p = g.sigmoid(v[0]);
                let d = g.constant(labels.clone());
                losses::dann_domain_loss(g, p, d)
            });
            (params, f)
        }),
        case("mmd_loss", |rng| {
            let params = vec![uniform(rng, &[3, 2]), uniform(rng, &[4, 2])];
            let kernel = KernelSpec::default();
            let f: LossFn = Box::new(move |g, v| losses::mmd_loss(g, v[0], v[1], &kernel));
            (params, f)
        }),
        case("correg_loss", |rng| {
            let params = vec![uniform(rng, &[4, 3]), uniform(rng, &[5, 3])];
            let f: LossFn =
                Box::new(|g, v| losses::correg_loss(g, v[0], v[1], CodeNorm::Normalized));
            (params, f)
        }),
        case("pose_term", |rng| {
            let truth: Vec<f64> = (0..3)
                .flat_map(|_| {
                    let q = Quaternion::about_z(rng.random_range(-3.0..3.0));
                    [q.w, q.x, q.y, q.z]
                })
                .collect();
            let truth = Tensor::new(&[3, 4], truth).expect("shape matches data");
            let params = vec![uniform(rng, &[3, 4])];
            let f: LossFn = Box::new(move |g, v| {
                let t = g.constant(truth.clone());
                losses::pose_term(g, t, v[0], 0.125)
            });
            (params, f)
        }),
        case("total_loss", |rng| {
            let params: Vec<_> = (0..4).map(|_| uniform(rng, &[1])).collect();
            let f: LossFn = Box::new(|g, v| {
                let sq: Vec<Var> = v.iter().map(|&x| g.square(x)).collect();
                let parts = LossParts {
                    task: g.sum(sq[0]),
                    recon: Some(g.sum(sq[1])),
                    difference: Some(g.sum(sq[2])),
                    similarity: Some(g.sum(sq[3])),
                };
                let weights = LossWeights {
                    warmup_steps: 0,
                    ..LossWeights::default()
                };
                losses::total_loss(g, &parts, &weights, 0)
            });
            (params, f)
        }),
    ]
}

/// Worst relative error of `case` over `trials` random draws.
pub fn check_case(case: &LossCase, trials: usize, seed: u64) -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (params, f) = (case.sample)(&mut rng);
        let report = finite_difference_check(|g, v| f(g, v), &params, EPSILON, Probe::All)?;
        worst = worst.max(report.max_rel_error);
    }
    Ok(CaseResult {
        name: case.name.to_string(),
        worst,
        tolerance: LOSS_TOLERANCE,
        trials,
    })
}

/// The models probed end to end: every group of a small batch, adaptation
/// terms active.
pub const MODEL_PROBES: [(Scenario, ModelVariant, Similarity); 3] = [
    (Scenario::Blobs2d, ModelVariant::Dsn, Similarity::Dann),
    (Scenario::Glyph16, ModelVariant::Dsn, Similarity::Dann),
    (Scenario::PoseGlyph, ModelVariant::Dsn, Similarity::Dann),
];

/// Worst relative error over every parameter group of one model, including
/// the gap between the applied gradient and the reference objective.
pub fn check_model(
    scenario: Scenario,
    variant: ModelVariant,
    similarity: Similarity,
    seed: u64,
) -> Result<CaseResult> {
    let pair = generate(&ScenarioSpec::new(scenario, 16, 4, seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = DsnModel::<f64>::new(scenario, variant, similarity, &mut rng)?;
    let batch = BatchIterator::new(&pair.source_train, &pair.target_train, 4, seed)?.next_batch();
    let weights = LossWeights {
        warmup_steps: 0,
        ..LossWeights::default()
    };
    let probes = model.gradient_probe(&batch, &weights, 1, EPSILON, 6, seed)?;
    let worst = probes
        .iter()
        .map(|p| p.report.max_rel_error.max(p.applied_gap))
        .fold(0.0, f64::max);
    Ok(CaseResult {
        name: format!("{scenario}/{variant}+{similarity}"),
        worst,
        tolerance: MODEL_TOLERANCE,
        trials: probes.iter().map(|p| p.report.checked).sum(),
    })
}
