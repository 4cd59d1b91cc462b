//! Registered benchmark problems.
//!
//! | name              | nx          | nu | default N, Ts   |
//! |-------------------|-------------|----|-----------------|
//! | `pendulum`        | 4           | 1  | 40, 0.05 s      |
//! | `chain-linear`    | 2 * masses  | 1  | 50, 0.2 s       |
//! | `chain-nonlinear` | 6 * m + 3   | 3  | 50, 0.2 s       |
//!
//! Models are generic, so callers that select a benchmark at run time go
//! through [`with_benchmark`] and a [`BenchmarkVisitor`].

mod chain;
mod pendulum;

pub use chain::{LinearChain, NonlinearChain};
pub use pendulum::Pendulum;

use crate::model::{ModelError, OcpModel, OcpProblem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkKind {
    Pendulum,
    ChainLinear,
    ChainNonlinear,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 3] = [
        BenchmarkKind::Pendulum,
        BenchmarkKind::ChainLinear,
        BenchmarkKind::ChainNonlinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::Pendulum => "pendulum",
            BenchmarkKind::ChainLinear => "chain-linear",
            BenchmarkKind::ChainNonlinear => "chain-nonlinear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn description(self) -> &'static str {
        match self {
            BenchmarkKind::Pendulum => {
                "cart-pole swing-up from the hanging position, |F| <= 20 N"
            }
            BenchmarkKind::ChainLinear => {
                "masses on a line joined by linear springs, force on the last mass, |F| <= 1"
            }
            BenchmarkKind::ChainNonlinear => {
                "hanging 3-D chain, free end moved by a bounded velocity to a target"
            }
        }
    }
}

/// Size overrides for a benchmark; unset fields keep the defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub horizon: Option<usize>,
    pub ts: Option<f64>,
    /// number of masses (chain benchmarks)
    pub masses: Option<usize>,
}

/// A ready-to-solve benchmark instance.
#[derive(Clone, Debug)]
pub struct Benchmark<M> {
    pub kind: BenchmarkKind,
    pub problem: OcpProblem<M>,
    /// initial plant state of a closed-loop run
    pub x_init: DVector<f64>,
    /// input used for the cold-start trajectory
    pub u_guess: DVector<f64>,
    /// reference (online parameters) per sample; one entry means constant
    pub references: Vec<Vec<f64>>,
    /// default closed-loop duration in seconds
    pub t_end: f64,
}

impl<M: OcpModel> Benchmark<M> {
    /// Cold start: every node at the initial state, every input at the guess.
    pub fn cold_start(&self) -> crate::shooting::Trajectory {
        crate::shooting::Trajectory::constant(&self.problem.dims, &self.x_init, &self.u_guess)
    }
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

pub fn pendulum(cfg: &ProblemConfig) -> Result<Benchmark<Pendulum>, ModelError> {
    let model = Pendulum::default();
    let n = cfg.horizon.unwrap_or(40);
    let ts = cfg.ts.unwrap_or(0.05);
    let problem = OcpProblem::new(
        model,
        n,
        ts,
        diag(&[10.0, 10.0, 0.1, 0.1, 0.01]),
        diag(&[10.0, 10.0, 0.1, 0.1]),
    )?
    .with_stage_bounds(DVector::from_element(1, -20.0), DVector::from_element(1, 20.0))?
    .with_params(vec![0.0])?;
    Ok(Benchmark {
        kind: BenchmarkKind::Pendulum,
        problem,
        x_init: DVector::from_vec(vec![0.0, std::f64::consts::PI, 0.0, 0.0]),
        u_guess: DVector::zeros(1),
        references: vec![vec![0.0]],
        t_end: 5.0,
    })
}

pub fn chain_linear(cfg: &ProblemConfig) -> Result<Benchmark<LinearChain>, ModelError> {
    let model = LinearChain {
        masses: cfg.masses.unwrap_or(15),
        ..Default::default()
    };
    let s = model.shape();
    let n = cfg.horizon.unwrap_or(50);
    let ts = cfg.ts.unwrap_or(0.2);
    let problem = OcpProblem::new(
        model,
        n,
        ts,
        DMatrix::identity(s.nr, s.nr),
        DMatrix::identity(s.nr_n, s.nr_n) * 10.0,
    )?
    .with_stage_bounds(DVector::from_element(1, -1.0), DVector::from_element(1, 1.0))?;
    // every mass displaced by 0.5
    let mut x_init = DVector::zeros(s.nx);
    x_init.rows_mut(0, s.nx / 2).fill(0.5);
    Ok(Benchmark {
        kind: BenchmarkKind::ChainLinear,
        problem,
        x_init,
        u_guess: DVector::zeros(1),
        references: vec![vec![]],
        t_end: 10.0,
    })
}

pub fn chain_nonlinear(cfg: &ProblemConfig) -> Result<Benchmark<NonlinearChain>, ModelError> {
    let model = NonlinearChain {
        points: cfg.masses.map(|m| m + 1).unwrap_or(6),
        ..Default::default()
    };
    if model.points < 3 {
        return Err(ModelError::InvalidHorizon(
            "chain-nonlinear needs at least 2 masses".into(),
        ));
    }
    let s = model.shape();
    let nm3 = 3 * model.intermediate();
    let n = cfg.horizon.unwrap_or(50);
    let ts = cfg.ts.unwrap_or(0.2);
    let mut w = vec![1.0; s.nr];
    w[nm3..nm3 + 3].fill(25.0);
    w[nm3 + 3..].fill(0.01);
    let mut wn = vec![1.0; s.nr_n];
    wn[nm3..].fill(25.0);
    let x_init = model.rest_state([1.0, 0.0, 0.0]);
    let problem = OcpProblem::new(model, n, ts, diag(&w), diag(&wn))?
        .with_stage_bounds(DVector::from_element(3, -1.0), DVector::from_element(3, 1.0))?
        .with_params(vec![0.8, 0.2, -0.2])?;
    Ok(Benchmark {
        kind: BenchmarkKind::ChainNonlinear,
        problem,
        x_init,
        u_guess: DVector::zeros(3),
        references: vec![vec![0.8, 0.2, -0.2]],
        t_end: 10.0,
    })
}

/// Receives a benchmark of whatever model type was selected at run time.
pub trait BenchmarkVisitor {
    type Output;
    fn visit<M: OcpModel + Clone + std::fmt::Debug + 'static>(self, bench: Benchmark<M>) -> Self::Output;
}

pub fn with_benchmark<V: BenchmarkVisitor>(
    kind: BenchmarkKind,
    cfg: &ProblemConfig,
    visitor: V,
) -> Result<V::Output, ModelError> {
    Ok(match kind {
        BenchmarkKind::Pendulum => visitor.visit(pendulum(cfg)?),
        BenchmarkKind::ChainLinear => visitor.visit(chain_linear(cfg)?),
        BenchmarkKind::ChainNonlinear => visitor.visit(chain_nonlinear(cfg)?),
    })
}
