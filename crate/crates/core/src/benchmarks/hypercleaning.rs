use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Batch, BatchPurpose, DeterministicOracles, Dims, ProblemConstants, SolverRng, StochasticOracles,
};
use crate::error::{MoblError, Result};
use crate::linalg::{dot, norm_sq};

/// Label-corruption rates of the five-task preset.
pub const PRESET_CORRUPTION: [f64; 5] = [0.0, 0.15, 0.3, 0.45, 0.6];

/// Toy data hyper-cleaning: `S` binary classification tasks with noisy
/// training labels. The UL variable holds one weight logit per training
/// sample, the LL variable one linear model per task.
///
/// ```text
/// g(x, w)     = Σ_s [ (1/n) Σ_j σ(x_{s,j}) ℓ(w_s; z_{s,j}, l_{s,j}) + (ρ/2)‖w_s‖² ]
/// f^(s)(x, w) = (1/n_val) Σ_j ℓ(w_s; z^val_{s,j}, l^val_{s,j})
/// ```
///
/// with the logistic loss `ℓ(w; z, l) = log(1 + exp(−l wᵀz))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypercleaningToySpec {
    pub feature_dim: usize,
    /// Training samples per task.
    pub n_train: usize,
    /// Clean validation samples per task.
    pub n_val: usize,
    /// One rate per task, each in `[0, 1)`.
    pub corruption: Vec<f64>,
    /// `ρ`; equals `μ_g`.
    pub regularizer: f64,
    pub seed: u64,
}

impl HypercleaningToySpec {
    /// Five tasks with [`PRESET_CORRUPTION`] and `ρ = 0.2`, i.e. the
    /// penalty `0.1‖w_s‖²`.
    pub fn preset(feature_dim: usize, n_train: usize, n_val: usize, seed: u64) -> Self {
        Self {
            feature_dim,
            n_train,
            n_val,
            corruption: PRESET_CORRUPTION.to_vec(),
            regularizer: 0.2,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(MoblError::InvalidProblem(m));
        if self.feature_dim == 0 || self.n_train == 0 || self.n_val == 0 {
            return bad("feature_dim, n_train and n_val must be positive".into());
        }
        if self.corruption.is_empty() {
            return bad("at least one task is required".into());
        }
        if let Some(c) = self.corruption.iter().find(|c| !(0.0..1.0).contains(*c)) {
            return bad(format!("corruption rate {c} is outside [0, 1)"));
        }
        if !(self.regularizer > 0.0) || !self.regularizer.is_finite() {
            return bad(format!(
                "regularizer must be positive, got {}",
                self.regularizer
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Task {
    train_z: Vec<Vec<f64>>,
    train_l: Vec<f64>,
    val_z: Vec<Vec<f64>>,
    val_l: Vec<f64>,
}

/// Oracles of a [`HypercleaningToySpec`]. Sampled oracles draw the same
/// within-task indices for every task, with replacement.
#[derive(Debug, Clone)]
pub struct HypercleaningToy {
    dims: Dims,
    d: usize,
    n: usize,
    n_val: usize,
    rho: f64,
    tasks: Vec<Task>,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(−m))`
fn logistic(m: f64) -> f64 {
    (-m).max(0.0) + (-m.abs()).exp().ln_1p()
}

pub fn make_hypercleaning_toy(
    spec: &HypercleaningToySpec,
) -> Result<(HypercleaningToy, ProblemConstants)> {
    spec.check()?;
    let d = spec.feature_dim;
    let mut rng = SolverRng::seed_from_u64(spec.seed);
    let mut max_sq = 0.0_f64;
    let mut tasks = Vec::with_capacity(spec.corruption.len());
    for &rate in &spec.corruption {
        let truth: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mut draw = |n: usize, rate: f64, rng: &mut SolverRng| {
            let mut zs = Vec::with_capacity(n);
            let mut ls = Vec::with_capacity(n);
            for _ in 0..n {
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let noise: f64 = rng.sample(StandardNormal);
                let mut l = if dot(&truth, &z) + 0.1 * noise >= 0.0 {
                    1.0
                } else {
                    -1.0
                };
                if rng.random::<f64>() < rate {
                    l = -l;
                }
                max_sq = max_sq.max(norm_sq(&z));
                zs.push(z);
                ls.push(l);
            }
            (zs, ls)
        };
        let (train_z, train_l) = draw(spec.n_train, rate, &mut rng);
        let (val_z, val_l) = draw(spec.n_val, 0.0, &mut rng);
        tasks.push(Task {
            train_z,
            train_l,
            val_z,
            val_l,
        });
    }
    let s = tasks.len();
    let problem = HypercleaningToy {
        dims: Dims {
            p: s * spec.n_train,
            q: s * d,
            s,
        },
        d,
        n: spec.n_train,
        n_val: spec.n_val,
        rho: spec.regularizer,
        tasks,
    };
    // logistic curvature is at most 1/4
    let constants = ProblemConstants {
        mu_g: spec.regularizer,
        l: Some(0.25 * max_sq + spec.regularizer),
        m: None,
        tau: None,
        rho: None,
    };
    Ok((problem, constants))
}

impl HypercleaningToy {
    /// `(index, weight)` pairs of a batch over a population of size `n`.
    fn weights(batch: &Batch, n: usize) -> Vec<(usize, f64)> {
        match batch {
            Batch::Full => (0..n).map(|j| (j, 1.0 / n as f64)).collect(),
            Batch::Samples(idx) => {
                let w = 1.0 / idx.len() as f64;
                idx.iter().map(|&j| (j, w)).collect()
            }
        }
    }

    fn block<'a>(&self, y: &'a [f64], s: usize) -> &'a [f64] {
        &y[s * self.d..(s + 1) * self.d]
    }

    /// Mean logistic loss of task `s`'s clean validation set at `w`.
    pub fn validation_loss(&self, s: usize, y: &[f64]) -> f64 {
        <Self as StochasticOracles>::ul_value(self, s, &[], y, &Batch::Full)
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn n_train(&self) -> usize {
        self.n
    }

    /// Training labels of task `s` after corruption.
    pub fn training_labels(&self, s: usize) -> &[f64] {
        &self.tasks[s].train_l
    }
}

impl StochasticOracles for HypercleaningToy {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn sample_batch(&self, purpose: BatchPurpose, size: usize, rng: &mut SolverRng) -> Batch {
        let n = match purpose {
            BatchPurpose::UpperObjective(_) => self.n_val,
            _ => self.n,
        };
        Batch::Samples((0..size).map(|_| rng.random_range(0..n)).collect())
    }

    fn ul_value(&self, s: usize, _x: &[f64], y: &[f64], batch: &Batch) -> f64 {
        let t = &self.tasks[s];
        let w = self.block(y, s);
        Self::weights(batch, self.n_val)
            .into_iter()
            .map(|(j, wt)| wt * logistic(t.val_l[j] * dot(w, &t.val_z[j])))
            .sum()
    }

    fn ul_grad_x(&self, _s: usize, _x: &[f64], _y: &[f64], _batch: &Batch) -> Vec<f64> {
        vec![0.0; self.dims.p]
    }

    fn ul_grad_y(&self, s: usize, _x: &[f64], y: &[f64], batch: &Batch) -> Vec<f64> {
        let t = &self.tasks[s];
        let w = self.block(y, s);
        let mut out = vec![0.0; self.dims.q];
        let g = &mut out[s * self.d..(s + 1) * self.d];
        for (j, wt) in Self::weights(batch, self.n_val) {
            let z = &t.val_z[j];
            let c = -wt * t.val_l[j] * sigmoid(-t.val_l[j] * dot(w, z));
            g.iter_mut().zip(z).for_each(|(gi, zi)| *gi += c * zi);
        }
        out
    }

    fn ll_grad_y(&self, x: &[f64], y: &[f64], batch: &Batch) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.q];
        let pairs = Self::weights(batch, self.n);
        for (s, t) in self.tasks.iter().enumerate() {
            let w = self.block(y, s);
            let g = &mut out[s * self.d..(s + 1) * self.d];
            for &(j, wt) in &pairs {
                let z = &t.train_z[j];
                let l = t.train_l[j];
                let c = -wt * sigmoid(x[s * self.n + j]) * l * sigmoid(-l * dot(w, z));
                g.iter_mut().zip(z).for_each(|(gi, zi)| *gi += c * zi);
            }
            g.iter_mut()
                .zip(w)
                .for_each(|(gi, wi)| *gi += self.rho * wi);
        }
        out
    }

    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64], batch: &Batch) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.q];
        let pairs = Self::weights(batch, self.n);
        for (s, t) in self.tasks.iter().enumerate() {
            let w = self.block(y, s);
            let vs = self.block(v, s);
            let h = &mut out[s * self.d..(s + 1) * self.d];
            for &(j, wt) in &pairs {
                let z = &t.train_z[j];
                let m = t.train_l[j] * dot(w, z);
                let c = wt * sigmoid(x[s * self.n + j]) * sigmoid(m) * sigmoid(-m) * dot(z, vs);
                h.iter_mut().zip(z).for_each(|(hi, zi)| *hi += c * zi);
            }
            h.iter_mut()
                .zip(vs)
                .for_each(|(hi, vi)| *hi += self.rho * vi);
        }
        out
    }

    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64], batch: &Batch) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.p];
        let pairs = Self::weights(batch, self.n);
        for (s, t) in self.tasks.iter().enumerate() {
            let w = self.block(y, s);
            let vs = self.block(v, s);
            for &(j, wt) in &pairs {
                let z = &t.train_z[j];
                let l = t.train_l[j];
                let sx = sigmoid(x[s * self.n + j]);
                let grad_dot_v = -l * sigmoid(-l * dot(w, z)) * dot(z, vs);
                out[s * self.n + j] += wt * sx * (1.0 - sx) * grad_dot_v;
            }
        }
        out
    }
}

impl DeterministicOracles for HypercleaningToy {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn ul_value(&self, s: usize, x: &[f64], y: &[f64]) -> f64 {
        StochasticOracles::ul_value(self, s, x, y, &Batch::Full)
    }

    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        StochasticOracles::ul_grad_x(self, s, x, y, &Batch::Full)
    }

    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        StochasticOracles::ul_grad_y(self, s, x, y, &Batch::Full)
    }

    fn ll_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        StochasticOracles::ll_grad_y(self, x, y, &Batch::Full)
    }

    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        StochasticOracles::ll_hvp(self, x, y, v, &Batch::Full)
    }

    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        StochasticOracles::ll_jvp(self, x, y, v, &Batch::Full)
    }
}
