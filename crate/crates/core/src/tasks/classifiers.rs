//! Tiny binary classifiers of mixed architecture, trained for a random
//! budget so their held-out accuracies spread between chance and the
//! Bayes rate.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{NetworkDataset, NetworkItem, Split, TaskError, TaskKind};
use crate::arch::grad::{backward, forward_taped};
use crate::arch::{forward_batch, init_params, output_shape, Activation, ArchSpec, LayerSpec, ParamStore};
use crate::exec::{Executor, Sequential};
use crate::math::{exp, ln, sqrt};
use crate::rng::{derive_seed, normal, stream, uniform};
use crate::tensor::Tensor;
use crate::train::{LossKind, OptimizerKind, OptimizerState};

pub const CLASSIFIER_INPUT_DIM: usize = 8;
/// Class means sit at `+-SEPARATION / 2` along the all-ones direction, so
/// the Bayes accuracy is `Phi(SEPARATION / 2)` (about 0.98).
const SEPARATION: f64 = 4.0;
const TRAIN_POINTS: usize = 200;
const TEST_POINTS: usize = 1000;
const MAX_STEPS: usize = 300;

/// Shared two-class Gaussian data every classifier is trained and scored
/// on.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierData {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub test_x: Vec<f64>,
    pub test_y: Vec<f64>,
}

impl ClassifierData {
    pub fn generate(seed: u64) -> Self {
        let mut rng = stream(seed);
        let mut sample = |n: usize| {
            let mut xs = Vec::with_capacity(n * CLASSIFIER_INPUT_DIM);
            let mut ys = Vec::with_capacity(n);
            let shift = SEPARATION / 2.0 / sqrt(CLASSIFIER_INPUT_DIM as f64);
            for i in 0..n {
                let label = (i % 2) as f64;
                let sign = if label == 1.0 { 1.0 } else { -1.0 };
                for _ in 0..CLASSIFIER_INPUT_DIM {
                    xs.push(normal(&mut rng) + sign * shift);
                }
                ys.push(label);
            }
            (xs, ys)
        };
        let (train_x, train_y) = sample(TRAIN_POINTS);
        let (test_x, test_y) = sample(TEST_POINTS);
        Self {
            train_x,
            train_y,
            test_x,
            test_y,
        }
    }

    fn batch(xs: &[f64], spec: &ArchSpec) -> Tensor {
        let mut shape = vec![xs.len() / CLASSIFIER_INPUT_DIM];
        shape.extend_from_slice(&spec.input_shape);
        Tensor::new(shape, xs.to_vec()).expect("classifier input shape")
    }

    /// Fraction of test points on the right side of logit 0.
    pub fn accuracy(&self, spec: &ArchSpec, params: &ParamStore) -> Result<f64, TaskError> {
        let logits = forward_batch(spec, params, &Self::batch(&self.test_x, spec))?;
        let correct = logits.data().iter().zip(&self.test_y).filter(|(z, y)| (**z > 0.0) == (**y == 1.0)).count();
        Ok(correct as f64 / self.test_y.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ArchFamily {
    Mlp,
    Cnn,
    DeepSets,
}

impl ArchFamily {
    pub fn name(self) -> &'static str {
        match self {
            ArchFamily::Mlp => "mlp",
            ArchFamily::Cnn => "cnn",
            ArchFamily::DeepSets => "deepsets",
        }
    }

    /// One-logit classifier of this family with hidden width `width` and
    /// `depth` hidden layers.
    pub fn spec(self, width: usize, depth: usize) -> ArchSpec {
        let d = CLASSIFIER_INPUT_DIM;
        match self {
            ArchFamily::Mlp => {
                let mut widths = vec![d];
                widths.extend(core::iter::repeat_n(width, depth.max(1)));
                widths.push(1);
                ArchSpec::mlp(&widths, Activation::Relu)
            }
            ArchFamily::Cnn => {
                let mut layers = Vec::new();
                let mut cin = 1;
                for _ in 0..depth.max(1) {
                    layers.push(LayerSpec::Conv {
                        spatial_rank: 1,
                        in_channels: cin,
                        out_channels: width,
                        kernel_shape: vec![3],
                        stride: 1,
                        has_bias: true,
                    });
                    layers.push(LayerSpec::relu());
                    cin = width;
                }
                layers.push(LayerSpec::Flatten);
                let spec = ArchSpec::new(vec![d, 1], layers);
                let flat = output_shape(&spec).expect("valid cnn")[0];
                let mut spec = spec;
                spec.layers.push(LayerSpec::linear(flat, 1));
                spec
            }
            ArchFamily::DeepSets => {
                let mut layers = Vec::new();
                let mut cin = 1;
                for _ in 0..depth.max(1) {
                    layers.push(LayerSpec::DeepSetsLinear {
                        in_channels: cin,
                        out_channels: width,
                        set_size: d,
                    });
                    layers.push(LayerSpec::relu());
                    cin = width;
                }
                layers.push(LayerSpec::DeepSetsLinear {
                    in_channels: cin,
                    out_channels: 1,
                    set_size: d,
                });
                layers.push(LayerSpec::Flatten);
                layers.push(LayerSpec::linear(d, 1));
                ArchSpec::new(vec![d, 1], layers)
            }
        }
    }
}

/// Architectures to sample from: every family crossed with every width and
/// depth.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArchPool {
    pub families: Vec<ArchFamily>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
}

impl Default for ArchPool {
    fn default() -> Self {
        Self {
            families: vec![ArchFamily::Mlp, ArchFamily::Cnn, ArchFamily::DeepSets],
            widths: vec![2, 3, 4, 5, 6],
            depths: vec![1, 2],
        }
    }
}

impl ArchPool {
    /// Same families at widths never seen in the default pool.
    pub fn held_out_widths() -> Self {
        Self {
            widths: vec![8, 10],
            ..Self::default()
        }
    }

    fn sample(&self, rng: &mut crate::rng::Rng) -> (ArchFamily, ArchSpec) {
        use rand::Rng as _;
        let fam = self.families[rng.random_range(0..self.families.len())];
        let w = self.widths[rng.random_range(0..self.widths.len())];
        let d = self.depths[rng.random_range(0..self.depths.len())];
        (fam, fam.spec(w, d))
    }
}

/// Trains one classifier for `steps` full-batch Adam steps.
fn train_classifier(spec: &ArchSpec, data: &ClassifierData, seed: u64, steps: usize, lr: f64) -> Result<ParamStore, TaskError> {
    let mut params = init_params(spec, seed);
    let xs = ClassifierData::batch(&data.train_x, spec);
    let mut flat = params.to_flat();
    let mut opt = OptimizerState::new(OptimizerKind::Adam { lr }, flat.len());
    for _ in 0..steps {
        let (y, tape) = forward_taped(spec, &params, &xs)?;
        let (_, dy) = LossKind::BceWithSigmoid.value_and_grad(y.data(), &data.train_y)?;
        let grad = backward(spec, &params, &tape, &dy).to_flat();
        opt.apply(&mut flat, &grad)?;
        params.load_flat(&flat);
    }
    Ok(params)
}

/// `n` classifiers drawn from `pool`; target is held-out accuracy.
pub fn gen_tiny_classifiers(n: usize, seed: u64, pool: &ArchPool) -> Result<NetworkDataset, TaskError> {
    gen_tiny_classifiers_with(n, seed, pool, &Sequential)
}

pub fn gen_tiny_classifiers_with<E: Executor>(n: usize, seed: u64, pool: &ArchPool, exec: &E) -> Result<NetworkDataset, TaskError> {
    if n < 2 {
        return Err(TaskError::TooFew { min: 2, got: n });
    }
    // The data depends only on the seed, not on the pool.
    let data = ClassifierData::generate(derive_seed(seed, u64::MAX - 1));
    let items = exec.map(n, |i| {
        let item_seed = derive_seed(seed, i as u64);
        let mut rng = stream(item_seed);
        let (family, spec) = pool.sample(&mut rng);
        let steps = (uniform(&mut rng, 0.0, 1.0) * (MAX_STEPS + 1) as f64) as usize;
        let lr = exp(uniform(&mut rng, ln(3e-4), ln(3e-2)));
        let params = train_classifier(&spec, &data, derive_seed(item_seed, 1), steps, lr)?;
        let acc = data.accuracy(&spec, &params)?;
        Ok(NetworkItem {
            spec,
            params,
            target: vec![acc],
            fit_failed: false,
            family: String::from(family.name()),
        })
    });
    let items = items.into_iter().collect::<Result<Vec<_>, TaskError>>()?;
    Ok(NetworkDataset {
        task: TaskKind::Acc,
        split: Split::random(n, 0.8, 0.1, derive_seed(seed, u64::MAX)),
        items,
        seed,
    })
}
