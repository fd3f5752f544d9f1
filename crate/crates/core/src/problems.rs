//! Test systems: a convection-diffusion equation on `[-1, 1]^d` and a chain of coupled
//! birth-death processes.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TtError};
use crate::tt::{RoundSpec, TtOperator, TtVector};

/// A linear system `A x = b` together with the Kronecker-sum part used for preconditioning.
///
/// The preconditioner approximates `(precond_sign · ⊕ kron_factors)^{-1}`; the factors are
/// oriented so that their spectra lie in the right half-plane.
#[derive(Clone, Debug)]
pub struct Problem {
    pub operator: TtOperator,
    pub rhs: TtVector,
    pub kron_factors: Vec<Mat<f64>>,
    pub precond_sign: f64,
}

fn default_diffusion() -> f64 {
    1e-2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvectionDiffusionSpec {
    pub d: usize,
    /// Interior grid points per mode.
    pub n: usize,
    #[serde(default = "default_diffusion")]
    pub diffusion: f64,
    /// Convection vector; defaults to `1e-2` in every direction.
    #[serde(default)]
    pub convection: Option<Vec<f64>>,
}

impl ConvectionDiffusionSpec {
    pub fn new(d: usize, n: usize) -> Self {
        Self { d, n, diffusion: default_diffusion(), convection: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(TtError::Invalid("d must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(TtError::Invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.diffusion > 0.0) {
            return Err(TtError::Invalid(format!("diffusion must be positive, got {}", self.diffusion)));
        }
        if let Some(w) = &self.convection {
            if w.len() != self.d {
                return Err(TtError::Invalid(format!("convection has {} entries for d = {}", w.len(), self.d)));
            }
        }
        Ok(())
    }

    pub fn mesh_width(&self) -> f64 {
        2.0 / (self.n + 1) as f64
    }

    /// The 1D block `-(L + D_i)` for direction `i`.
    pub fn factor(&self, i: usize) -> Mat<f64> {
        let n = self.n;
        let h = self.mesh_width();
        let w = self.convection.as_ref().map_or(1e-2, |w| w[i]);
        let (diff, conv) = (self.diffusion / (h * h), w / h);
        Mat::from_fn(n, n, |r, c| {
            if r == c {
                2.0 * diff + conv
            } else if c == r + 1 {
                -diff - conv
            } else if r == c + 1 {
                -diff
            } else {
                0.0
            }
        })
    }

    /// Samples of `exp(-10 x^2)` at the interior nodes.
    pub fn source_factor(&self) -> Vec<f64> {
        let h = self.mesh_width();
        (1..=self.n)
            .map(|j| {
                let x = -1.0 + j as f64 * h;
                (-10.0 * x * x).exp()
            })
            .collect()
    }
}

/// `(⊕_i -(L + D_i)) x = ⊗_i g` with `L` the scaled second difference and `D_i` the upwind
/// convection stencil; the sign makes the symmetric part positive definite.
pub fn convection_diffusion(spec: &ConvectionDiffusionSpec) -> Result<Problem> {
    spec.validate()?;
    let factors: Vec<Mat<f64>> = (0..spec.d).map(|i| spec.factor(i)).collect();
    let operator = TtOperator::kron_sum(&factors)?;
    let g = spec.source_factor();
    let rhs = TtVector::rank_one(&vec![g; spec.d])?;
    Ok(Problem { operator, rhs, kron_factors: factors, precond_sign: 1.0 })
}

/// Treatment of the end states of each birth-death walk.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Every state carries outflow `η_k + μ_k` on the diagonal, so probability leaks out at
    /// both ends. The system matrix is then a nonsingular (negated) M-matrix.
    #[default]
    Leaky,
    /// The first state cannot move down and the last cannot move up: each `Q_i` is a proper
    /// generator with zero row sums, and so is the full operator, which is singular.
    OneSided,
}

fn default_sync() -> f64 {
    0.1
}

fn default_low() -> f64 {
    1.0
}

fn default_high() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovSpec {
    pub d: usize,
    /// States per system.
    pub n: usize,
    #[serde(default = "default_sync")]
    pub sync_rate: f64,
    #[serde(default = "default_low")]
    pub rate_low: f64,
    #[serde(default = "default_high")]
    pub rate_high: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl MarkovSpec {
    pub fn new(d: usize, n: usize, seed: u64) -> Self {
        Self {
            d,
            n,
            sync_rate: default_sync(),
            rate_low: default_low(),
            rate_high: default_high(),
            seed,
            boundary: Boundary::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(TtError::Invalid(format!("the Markov chain needs d >= 2, got {}", self.d)));
        }
        if self.n < 2 {
            return Err(TtError::Invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.sync_rate >= 0.0) {
            return Err(TtError::Invalid(format!("sync_rate must be nonnegative, got {}", self.sync_rate)));
        }
        if !(0.0 < self.rate_low && self.rate_low <= self.rate_high && self.rate_high.is_finite()) {
            return Err(TtError::Invalid(format!("need 0 < rate_low <= rate_high, got [{}, {}]", self.rate_low, self.rate_high)));
        }
        Ok(())
    }

    /// Birth-death generators `Q_i` (row = source state, column = target state).
    pub fn generators(&self) -> Result<Vec<Mat<f64>>> {
        self.validate()?;
        let n = self.n;
        let dist = Uniform::new_inclusive(self.rate_low, self.rate_high).map_err(|e| TtError::Invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.d);
        for _ in 0..self.d {
            let fwd: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            let bwd: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            let mut q = Mat::<f64>::zeros(n, n);
            for k in 0..n {
                if k + 1 < n {
                    q[(k, k + 1)] = fwd[k];
                }
                if k > 0 {
                    q[(k, k - 1)] = bwd[k];
                }
                q[(k, k)] = match self.boundary {
                    Boundary::Leaky => -(fwd[k] + bwd[k]),
                    Boundary::OneSided => -(if k + 1 < n { fwd[k] } else { 0.0 } + if k > 0 { bwd[k] } else { 0.0 }),
                };
            }
            out.push(q);
        }
        Ok(out)
    }
}

fn kron_term(d: usize, n: usize, i: usize, left: &Mat<f64>, right: &Mat<f64>) -> Result<TtOperator> {
    let factors: Vec<Mat<f64>> = (0..d)
        .map(|k| if k == i { left.clone() } else if k == i + 1 { right.clone() } else { Mat::identity(n, n) })
        .collect();
    TtOperator::kronecker(&factors)
}

/// `(Q + W - D) π = e` for `d` birth-death systems where system `i` jumping from state
/// `n-1` to `n` (1-based) drags system `i+1` along at rate `sync_rate`.
///
/// `W` holds the synchronised transitions and `D = diag(W 1)` compensates them. The
/// right-hand side is the all-ones vector. The Kronecker-sum part `⊕ Q_i` is exposed for
/// preconditioning as factors `-Q_i` with sign `-1`.
pub fn markov_chain(spec: &MarkovSpec) -> Result<Problem> {
    let q = spec.generators()?;
    let (d, n) = (spec.d, spec.n);
    let kron = TtOperator::kron_sum(&q)?;
    let mut e = Mat::<f64>::zeros(n, n);
    e[(n - 2, n - 1)] = 1.0;
    let mut f = Mat::<f64>::zeros(n, n);
    f[(n - 2, n - 2)] = 1.0;
    let mut terms = Vec::with_capacity(2 * (d - 1));
    for i in 0..d - 1 {
        terms.push((spec.sync_rate, kron_term(d, n, i, &e, &e)?));
        terms.push((-spec.sync_rate, kron_term(d, n, i, &f, &f)?));
    }
    let operator = if spec.sync_rate == 0.0 {
        kron
    } else {
        let mut refs: Vec<(f64, &TtOperator)> = vec![(1.0, &kron)];
        refs.extend(terms.iter().map(|(c, t)| (*c, t)));
        TtOperator::linear_combination(&refs)?.round(&RoundSpec::tol(1e-13))
    };
    let rhs = TtVector::ones(&vec![n; d]);
    let factors = q.into_iter().map(|m| m * faer::Scale(-1.0)).collect();
    Ok(Problem { operator, rhs, kron_factors: factors, precond_sign: -1.0 })
}

/// Dense matrix and right-hand side of a problem (for oracles); at most `cap` unknowns.
pub fn dense_reference(problem: &Problem, cap: usize) -> Result<(Mat<f64>, Vec<f64>)> {
    let b = problem.rhs.to_dense_with_cap(cap)?.data;
    let a = problem.operator.to_dense_with_cap(cap)?;
    Ok((a, b))
}
