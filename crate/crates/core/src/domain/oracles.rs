//! Oracle interfaces. Problems supply every derivative; nothing here
//! differentiates.

use rand_chacha::ChaCha8Rng;

/// Random stream used by every sampler and stochastic run.
pub type SolverRng = ChaCha8Rng;

/// Problem dimensions: UL variable `p`, LL variable `q`, objective count `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub p: usize,
    pub q: usize,
    pub s: usize,
}

/// Deterministic first- and second-order oracles for `S` upper-level
/// objectives `f^(s)(x, y)` and one lower-level objective `g(x, y)`.
///
/// `ll_hvp` must be a symmetric positive-definite linear map in `v` for every
/// fixed `(x, y)`; `ll_jvp` maps a `q`-vector to a `p`-vector through the
/// mixed block `∇²_{xy} g`.
pub trait DeterministicOracles {
    fn dims(&self) -> Dims;

    fn ul_value(&self, s: usize, x: &[f64], y: &[f64]) -> f64;
    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64>;
    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64>;

    fn ll_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64>;
    /// `∇²_y g(x, y) · v`
    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64>;
    /// `∇²_{xy} g(x, y) · v`
    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64>;

    /// Ground truth, only available on analytic benchmarks.
    fn analytic(&self) -> Option<&dyn AnalyticReference> {
        None
    }
}

/// Closed-form references used to record true stationarity gaps.
pub trait AnalyticReference {
    fn y_star(&self, x: &[f64]) -> Vec<f64>;
    fn phi(&self, s: usize, x: &[f64]) -> f64;
    fn true_hypergradient(&self, s: usize, x: &[f64]) -> Vec<f64>;
}

/// What a batch will be used for inside the stochastic algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BatchPurpose {
    /// `T_{t-1}`, one per inner step.
    LowerStep,
    /// `D_F^s` for objective `s`.
    UpperObjective(usize),
    /// `D_G`, shared by every objective's Jacobian-vector product.
    Jacobian,
    /// One of `B_1..B_Q`.
    Hessian,
}

/// A drawn sample set. `Full` means the whole population in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Batch {
    Full,
    Samples(Vec<usize>),
}

impl Batch {
    pub fn is_empty(&self) -> bool {
        matches!(self, Batch::Samples(v) if v.is_empty())
    }

    pub fn len(&self) -> Option<usize> {
        match self {
            Batch::Full => None,
            Batch::Samples(v) => Some(v.len()),
        }
    }
}

/// Sampled counterparts `F^(s)(x, y; ξ)` and `G(x, y; ζ)` of the
/// deterministic oracles, plus the sampler producing batch handles.
///
/// With [`Batch::Full`] every sampled oracle must equal the deterministic one
/// exactly, and `sample_batch` must be a pure function of
/// `(purpose, size, rng state)`.
pub trait StochasticOracles {
    fn dims(&self) -> Dims;

    fn sample_batch(&self, purpose: BatchPurpose, size: usize, rng: &mut SolverRng) -> Batch;

    fn ul_value(&self, s: usize, x: &[f64], y: &[f64], batch: &Batch) -> f64;
    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64], batch: &Batch) -> Vec<f64>;
    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64], batch: &Batch) -> Vec<f64>;

    fn ll_grad_y(&self, x: &[f64], y: &[f64], batch: &Batch) -> Vec<f64>;
    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64], batch: &Batch) -> Vec<f64>;
    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64], batch: &Batch) -> Vec<f64>;

    fn analytic(&self) -> Option<&dyn AnalyticReference> {
        None
    }
}

/// Exposes deterministic oracles through the stochastic interface: the
/// sampler always returns [`Batch::Full`] and batches are ignored.
#[derive(Debug, Clone)]
pub struct AsStochastic<P>(pub P);

impl<P: DeterministicOracles> StochasticOracles for AsStochastic<P> {
    fn dims(&self) -> Dims {
        self.0.dims()
    }

    fn sample_batch(&self, _: BatchPurpose, _: usize, _: &mut SolverRng) -> Batch {
        Batch::Full
    }

    fn ul_value(&self, s: usize, x: &[f64], y: &[f64], _: &Batch) -> f64 {
        self.0.ul_value(s, x, y)
    }

    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64], _: &Batch) -> Vec<f64> {
        self.0.ul_grad_x(s, x, y)
    }

    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64], _: &Batch) -> Vec<f64> {
        self.0.ul_grad_y(s, x, y)
    }

    fn ll_grad_y(&self, x: &[f64], y: &[f64], _: &Batch) -> Vec<f64> {
        self.0.ll_grad_y(x, y)
    }

    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64], _: &Batch) -> Vec<f64> {
        self.0.ll_hvp(x, y, v)
    }

    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64], _: &Batch) -> Vec<f64> {
        self.0.ll_jvp(x, y, v)
    }

    fn analytic(&self) -> Option<&dyn AnalyticReference> {
        self.0.analytic()
    }
}

/// Zero-variance sampler: every draw is the full population. The random
/// stream is left untouched.
#[derive(Debug, Clone)]
pub struct FullBatch<P>(pub P);

impl<P: StochasticOracles> StochasticOracles for FullBatch<P> {
    fn dims(&self) -> Dims {
        self.0.dims()
    }

    fn sample_batch(&self, _: BatchPurpose, _: usize, _: &mut SolverRng) -> Batch {
        Batch::Full
    }

    fn ul_value(&self, s: usize, x: &[f64], y: &[f64], b: &Batch) -> f64 {
        self.0.ul_value(s, x, y, b)
    }

    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64], b: &Batch) -> Vec<f64> {
        self.0.ul_grad_x(s, x, y, b)
    }

    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64], b: &Batch) -> Vec<f64> {
        self.0.ul_grad_y(s, x, y, b)
    }

    fn ll_grad_y(&self, x: &[f64], y: &[f64], b: &Batch) -> Vec<f64> {
        self.0.ll_grad_y(x, y, b)
    }

    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64], b: &Batch) -> Vec<f64> {
        self.0.ll_hvp(x, y, v, b)
    }

    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64], b: &Batch) -> Vec<f64> {
        self.0.ll_jvp(x, y, v, b)
    }

    fn analytic(&self) -> Option<&dyn AnalyticReference> {
        self.0.analytic()
    }
}

/// Views stochastic oracles at full batch as deterministic ones.
#[derive(Debug, Clone)]
pub struct FullBatchDeterministic<P>(pub P);

impl<P: StochasticOracles> DeterministicOracles for FullBatchDeterministic<P> {
    fn dims(&self) -> Dims {
        self.0.dims()
    }

    fn ul_value(&self, s: usize, x: &[f64], y: &[f64]) -> f64 {
        self.0.ul_value(s, x, y, &Batch::Full)
    }

    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.0.ul_grad_x(s, x, y, &Batch::Full)
    }

    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.0.ul_grad_y(s, x, y, &Batch::Full)
    }

    fn ll_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.0.ll_grad_y(x, y, &Batch::Full)
    }

    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        self.0.ll_hvp(x, y, v, &Batch::Full)
    }

    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        self.0.ll_jvp(x, y, v, &Batch::Full)
    }

    fn analytic(&self) -> Option<&dyn AnalyticReference> {
        self.0.analytic()
    }
}

impl<P: DeterministicOracles + ?Sized> DeterministicOracles for &P {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn ul_value(&self, s: usize, x: &[f64], y: &[f64]) -> f64 {
        (**self).ul_value(s, x, y)
    }
    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        (**self).ul_grad_x(s, x, y)
    }
    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        (**self).ul_grad_y(s, x, y)
    }
    fn ll_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        (**self).ll_grad_y(x, y)
    }
    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        (**self).ll_hvp(x, y, v)
    }
    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        (**self).ll_jvp(x, y, v)
    }
    fn analytic(&self) -> Option<&dyn AnalyticReference> {
        (**self).analytic()
    }
}

impl<P: StochasticOracles + ?Sized> StochasticOracles for &P {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn sample_batch(&self, p: BatchPurpose, n: usize, rng: &mut SolverRng) -> Batch {
        (**self).sample_batch(p, n, rng)
    }
    fn ul_value(&self, s: usize, x: &[f64], y: &[f64], b: &Batch) -> f64 {
        (**self).ul_value(s, x, y, b)
    }
    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64], b: &Batch) -> Vec<f64> {
        (**self).ul_grad_x(s, x, y, b)
    }
    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64], b: &Batch) -> Vec<f64> {
        (**self).ul_grad_y(s, x, y, b)
    }
    fn ll_grad_y(&self, x: &[f64], y: &[f64], b: &Batch) -> Vec<f64> {
        (**self).ll_grad_y(x, y, b)
    }
    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64], b: &Batch) -> Vec<f64> {
        (**self).ll_hvp(x, y, v, b)
    }
    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64], b: &Batch) -> Vec<f64> {
        (**self).ll_jvp(x, y, v, b)
    }
    fn analytic(&self) -> Option<&dyn AnalyticReference> {
        (**self).analytic()
    }
}
