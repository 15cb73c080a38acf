//! Pluggable solver backends.
//!
//! The bundled simplex/branch-and-bound is always registered under
//! [`BUNDLED`]. Other adapters implement [`SolverBackend`]; the process
//! adapter pipes a JSON model to an external command.

use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::lp::{LinearProgram, LpSolution, LpStatus};
use crate::milp::{relative_gap, solve_milp, MilpModel, MilpSolution, MilpStatus, SolveOptions};
use crate::simplex::solve_lp_with;
use crate::tolerances::Tolerances;

pub const BUNDLED: &str = "bundled";
/// Environment variable naming the backend [`BackendRegistry::from_env`] selects.
pub const BACKEND_ENV: &str = "SBPP_SOLVER_BACKEND";

pub trait SolverBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve_lp(&self, lp: &LinearProgram, tol: &Tolerances) -> Result<LpSolution, SolverError>;
    fn solve_milp(&self, model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution, SolverError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct BundledBackend;

impl SolverBackend for BundledBackend {
    fn name(&self) -> &str {
        BUNDLED
    }

    fn solve_lp(&self, lp: &LinearProgram, tol: &Tolerances) -> Result<LpSolution, SolverError> {
        solve_lp_with(lp, tol)
    }

    fn solve_milp(&self, model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution, SolverError> {
        solve_milp(model, opts)
    }
}

/// Index of a registered backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendHandle(usize);

/// Set of available backends with one active selection.
#[derive(Clone)]
pub struct BackendRegistry {
    backends: Vec<Arc<dyn SolverBackend>>,
    active: usize,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self { backends: vec![Arc::new(BundledBackend)], active: 0 }
    }
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendRegistry")
            .field("backends", &self.names())
            .field("active", &self.active().name())
            .finish()
    }
}

impl BackendRegistry {
    /// Registry with the bundled backend and the scipy process backend, with
    /// the active one taken from `SBPP_SOLVER_BACKEND` when set.
    pub fn from_env() -> Result<Self, SolverError> {
        let mut reg = Self::default();
        reg.register(Arc::new(ProcessBackend::scipy()))?;
        reg.active = 0;
        if let Ok(name) = std::env::var(BACKEND_ENV) {
            if !name.is_empty() {
                reg.select(&name)?;
            }
        }
        Ok(reg)
    }

    /// Add `backend` and make it the active one.
    pub fn register(&mut self, backend: Arc<dyn SolverBackend>) -> Result<BackendHandle, SolverError> {
        if self.backends.iter().any(|b| b.name() == backend.name()) {
            return Err(SolverError::DuplicateBackend(backend.name().to_string()));
        }
        self.backends.push(backend);
        self.active = self.backends.len() - 1;
        Ok(BackendHandle(self.active))
    }

    pub fn select(&mut self, name: &str) -> Result<BackendHandle, SolverError> {
        let idx = self
            .backends
            .iter()
            .position(|b| b.name() == name)
            .ok_or_else(|| SolverError::UnknownBackend(name.to_string()))?;
        self.active = idx;
        Ok(BackendHandle(idx))
    }

    pub fn active(&self) -> &dyn SolverBackend {
        self.backends[self.active].as_ref()
    }

    pub fn get(&self, handle: BackendHandle) -> &dyn SolverBackend {
        self.backends[handle.0].as_ref()
    }

    pub fn names(&self) -> Vec<String> {
        self.backends.iter().map(|b| b.name().to_string()).collect()
    }

    pub fn solve_lp(&self, lp: &LinearProgram, tol: &Tolerances) -> Result<LpSolution, SolverError> {
        self.active().solve_lp(lp, tol)
    }

    pub fn solve_milp(&self, model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution, SolverError> {
        self.active().solve_milp(model, opts)
    }
}

/// Request sent to a process backend on stdin.
#[derive(Debug, Serialize)]
struct Request<'a> {
    kind: &'static str,
    model: &'a MilpModel,
    time_limit: f64,
    rel_gap: f64,
}

/// Reply read from a process backend's stdout.
#[derive(Debug, Deserialize)]
struct Reply {
    status: String,
    #[serde(default)]
    x: Option<Vec<f64>>,
    #[serde(default)]
    duals: Option<Vec<f64>>,
    #[serde(default)]
    reduced_costs: Option<Vec<f64>>,
    #[serde(default)]
    bound: Option<f64>,
    #[serde(default)]
    nodes: Option<usize>,
    #[serde(default)]
    message: Option<String>,
}

/// Adapter for an external solver driven over a JSON pipe.
///
/// The command receives `{kind, model, time_limit, rel_gap}` on stdin, where
/// `model` is the serialized [`MilpModel`], and answers with
/// `{status, x, duals, reduced_costs, objective, bound, nodes}`. Status is one
/// of `optimal`, `infeasible`, `unbounded`, `time_limit`, `no_solution`.
#[derive(Debug, Clone)]
pub struct ProcessBackend {
    name: String,
    program: String,
    args: Vec<String>,
}

impl ProcessBackend {
    pub fn new(name: impl Into<String>, program: impl Into<String>, args: Vec<String>) -> Self {
        Self { name: name.into(), program: program.into(), args }
    }

    /// HiGHS through scipy, using the script shipped in `tools/`.
    /// `SBPP_SCIPY_SCRIPT` overrides the script path.
    pub fn scipy() -> Self {
        let script = std::env::var("SBPP_SCIPY_SCRIPT")
            .unwrap_or_else(|_| concat!(env!("CARGO_MANIFEST_DIR"), "/../../tools/scipy_backend.py").to_string());
        Self::new("scipy", "python3", vec![script])
    }

    fn call(&self, req: &Request<'_>) -> Result<Reply, SolverError> {
        let fail = |detail: String| SolverError::Backend { backend: self.name.clone(), detail };
        let payload = serde_json::to_vec(req).map_err(|e| fail(e.to_string()))?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("cannot start `{}`: {e}", self.program)))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin.write_all(&payload).map_err(|e| fail(e.to_string()))?;
        }
        let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!(
                "exit status {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let reply: Reply = serde_json::from_slice(&out.stdout).map_err(|e| fail(format!("bad reply: {e}")))?;
        if reply.status == "error" {
            return Err(fail(reply.message.unwrap_or_default()));
        }
        Ok(reply)
    }
}

impl SolverBackend for ProcessBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn solve_lp(&self, lp: &LinearProgram, _tol: &Tolerances) -> Result<LpSolution, SolverError> {
        lp.check()?;
        let model = MilpModel::new(lp.clone());
        let reply = self.call(&Request { kind: "lp", model: &model, time_limit: 1e9, rel_gap: 0.0 })?;
        let (n, m) = (lp.num_cols(), lp.num_rows());
        let status = match reply.status.as_str() {
            "optimal" => LpStatus::Optimal,
            "infeasible" => LpStatus::Infeasible,
            "unbounded" => LpStatus::Unbounded,
            other => {
                return Err(SolverError::Backend { backend: self.name.clone(), detail: format!("LP status `{other}`") })
            }
        };
        if status != LpStatus::Optimal {
            return Ok(LpSolution::without_point(status, n, m, 0));
        }
        let x = reply.x.unwrap_or_default();
        if x.len() != n {
            return Err(SolverError::Backend {
                backend: self.name.clone(),
                detail: format!("reply has {} values for {n} columns", x.len()),
            });
        }
        Ok(LpSolution {
            status,
            objective: lp.evaluate(&x),
            x,
            duals: reply.duals.unwrap_or_else(|| vec![0.0; m]),
            reduced_costs: reply.reduced_costs.unwrap_or_else(|| vec![0.0; n]),
            iterations: 0,
        })
    }

    fn solve_milp(&self, model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution, SolverError> {
        model.check()?;
        let start = Instant::now();
        let reply = self.call(&Request {
            kind: "milp",
            model,
            time_limit: opts.time_limit.as_secs_f64(),
            rel_gap: opts.rel_gap_target,
        })?;
        let objective = reply.x.as_ref().map(|x| model.lp.evaluate(x));
        let bound = reply.bound.or(objective).unwrap_or(f64::NAN);
        let status = match (reply.status.as_str(), objective.is_some()) {
            ("optimal", true) => MilpStatus::Optimal,
            ("infeasible", _) => MilpStatus::Infeasible,
            ("unbounded", _) => MilpStatus::Unbounded,
            ("time_limit", true) => MilpStatus::TimeLimit,
            ("time_limit" | "no_solution", false) => MilpStatus::NoSolution,
            (other, _) => {
                return Err(SolverError::Backend { backend: self.name.clone(), detail: format!("MILP status `{other}`") })
            }
        };
        Ok(MilpSolution {
            status,
            rel_gap: objective.map_or(f64::INFINITY, |o| relative_gap(o, bound)),
            x: reply.x,
            objective,
            bound,
            nodes: reply.nodes.unwrap_or(0),
            runtime: start.elapsed().max(Duration::from_nanos(1)),
            incumbent_trail: Vec::new(),
        })
    }
}
