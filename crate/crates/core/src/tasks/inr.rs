//! Sinusoid INRs: small sine networks fit to `x -> a sin(b x)`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{NetworkDataset, NetworkItem, Split, TaskError, TaskKind};
use crate::arch::grad::{backward, forward_taped};
use crate::arch::{forward_batch, init_params, Activation, ArchSpec, LayerSpec, ParamKey, ParamName, ParamStore};
use crate::exec::{Executor, Sequential};
use crate::math::{sin, PI};
use crate::rng::{derive_seed, stream, uniform};
use crate::tensor::Tensor;
use crate::train::{OptimizerKind, OptimizerState};

/// Points of the fitting grid on `[-pi, pi]`.
pub const INR_FIT_GRID: usize = 64;
/// Fit MSE below which an INR counts as converged.
pub const INR_FIT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_INR_WIDTHS: [usize; 3] = [1, 16, 1];
const FIT_MAX_ITERS: usize = 4000;
const FIT_LR: f64 = 0.01;
/// First-layer weight range: wide enough to cover frequencies up to 3.
const FIRST_LAYER_SCALE: f64 = 4.0;
const EDIT_GRID: usize = 32;

/// `n` evenly spaced points covering `[-pi, pi]`.
pub fn inr_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -PI + 2.0 * PI * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InrFit {
    pub spec: ArchSpec,
    pub params: ParamStore,
    /// Final MSE on the fitting grid.
    pub mse: f64,
    pub converged: bool,
}

fn first_linear(spec: &ArchSpec) -> Option<usize> {
    spec.indexed_layers().into_iter().find(|(_, l)| matches!(l, LayerSpec::Linear { .. })).map(|(i, _)| i)
}

/// Fits a sine MLP with the given widths to `a sin(b x)` by full-batch Adam.
pub fn fit_sinusoid_inr(a: f64, b: f64, widths: &[usize], seed: u64) -> Result<InrFit, TaskError> {
    let spec = ArchSpec::mlp(widths, Activation::Sine);
    let mut params = init_params(&spec, seed);
    let mut rng = stream(derive_seed(seed, 1));
    if let Some(first) = first_linear(&spec) {
        for v in params.get_mut(&ParamKey::new(first, ParamName::Weight)).expect("weight").data_mut() {
            *v = uniform(&mut rng, -FIRST_LAYER_SCALE, FIRST_LAYER_SCALE);
        }
        if let Some(bias) = params.get_mut(&ParamKey::new(first, ParamName::Bias)) {
            for v in bias.data_mut() {
                *v = uniform(&mut rng, -PI, PI);
            }
        }
    }
    let xs = inr_grid(INR_FIT_GRID);
    let ys: Vec<f64> = xs.iter().map(|&x| a * sin(b * x)).collect();
    let grid = Tensor::new(vec![xs.len(), 1], xs).expect("grid shape");
    let mut flat = params.to_flat();
    let mut opt = OptimizerState::new(OptimizerKind::Adam { lr: FIT_LR }, flat.len());
    let n = ys.len() as f64;
    let mut mse = f64::INFINITY;
    for _ in 0..FIT_MAX_ITERS {
        let (y, tape) = forward_taped(&spec, &params, &grid)?;
        mse = y.data().iter().zip(&ys).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
        if mse < INR_FIT_TOLERANCE * 0.5 {
            break;
        }
        let dy: Vec<f64> = y.data().iter().zip(&ys).map(|(p, t)| 2.0 * (p - t) / n).collect();
        let grad = backward(&spec, &params, &tape, &dy).to_flat();
        opt.apply(&mut flat, &grad)?;
        params.load_flat(&flat);
    }
    let y = forward_batch(&spec, &params, &grid)?;
    mse = mse.min(y.data().iter().zip(&ys).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n);
    Ok(InrFit {
        spec,
        params,
        mse,
        converged: mse < INR_FIT_TOLERANCE,
    })
}

fn split_seed(seed: u64) -> u64 {
    derive_seed(seed, u64::MAX)
}

/// `n` INRs with targets `(a, b)`, `a` in `[0.5, 2]`, `b` in `[1, 3]`; an
/// 80/10/10 split.
pub fn gen_sinusoid_inrs(n: usize, seed: u64, widths: &[usize]) -> Result<NetworkDataset, TaskError> {
    gen_sinusoid_inrs_with(n, seed, widths, &Sequential)
}

pub fn gen_sinusoid_inrs_with<E: Executor>(n: usize, seed: u64, widths: &[usize], exec: &E) -> Result<NetworkDataset, TaskError> {
    if n < 10 {
        return Err(TaskError::TooFew { min: 10, got: n });
    }
    let items = exec.map(n, |i| {
        let item_seed = derive_seed(seed, i as u64);
        let mut rng = stream(item_seed);
        let a = uniform(&mut rng, 0.5, 2.0);
        let b = uniform(&mut rng, 1.0, 3.0);
        fit_sinusoid_inr(a, b, widths, derive_seed(item_seed, 2)).map(|fit| NetworkItem {
            spec: fit.spec,
            params: fit.params,
            target: vec![a, b],
            fit_failed: !fit.converged,
            family: String::from("sine_mlp"),
        })
    });
    let items = items.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(NetworkDataset {
        task: TaskKind::Inr,
        split: Split::random(n, 0.8, 0.1, split_seed(seed)),
        items,
        seed,
    })
}

/// The edit applied to every source INR.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EditDescription {
    /// Output scale of the target function.
    pub scale: f64,
    /// Points where edited and target functions are compared.
    pub grid: Vec<f64>,
}

/// Sinusoid INRs whose target is their own function doubled, sampled on a
/// fixed grid.
pub fn gen_edit_dataset(n: usize, seed: u64) -> Result<(NetworkDataset, EditDescription), TaskError> {
    gen_edit_dataset_with(n, seed, &DEFAULT_INR_WIDTHS, &Sequential)
}

pub fn gen_edit_dataset_with<E: Executor>(n: usize, seed: u64, widths: &[usize], exec: &E) -> Result<(NetworkDataset, EditDescription), TaskError> {
    let mut ds = gen_sinusoid_inrs_with(n, seed, widths, exec)?;
    let desc = EditDescription {
        scale: 2.0,
        grid: inr_grid(EDIT_GRID),
    };
    let grid = Tensor::new(vec![desc.grid.len(), 1], desc.grid.clone()).expect("grid shape");
    for it in &mut ds.items {
        let y = forward_batch(&it.spec, &it.params, &grid)?;
        it.target = y.data().iter().map(|v| desc.scale * v).collect();
    }
    ds.task = TaskKind::Edit;
    Ok((ds, desc))
}
