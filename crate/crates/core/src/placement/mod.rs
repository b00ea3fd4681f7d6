//! Exact field-to-device placement under per-device capacity.
//!
//! Cost of field `i` on device `j` is `F_i C_ij + F_i R_ij P_j`; the solver
//! minimizes the sum over fields subject to `X * sum(B_i on j) <= S_j`.

mod sweep;

use std::fmt::Write;

use rand::{Rng, RngExt};
use thiserror::Error;

use crate::schema::{Assignment, ObjectSchema, SchemaError};
use crate::tiers::TierId;

pub use sweep::{sweep, SweepAxis, SweepCell, SweepGrid, SweepParam};

/// Largest instance `brute_force` accepts, in assignments.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("infeasible: field `{field}` needs {demand} bytes (X * B) and does not fit once earlier fields are placed; capacities: {capacities}")]
    Infeasible {
        field: String,
        demand: u128,
        capacities: String,
    },
    #[error("instance has {0} assignments, more than brute force allows")]
    TooLarge(u128),
    #[error("field mismatch: {0}")]
    FieldMismatch(String),
    #[error("device `{0}` is not a schema tier")]
    UnknownDevice(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{0}")]
    Parse(String),
}

pub type Result<T, E = PlacementError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementProblem {
    pub fields: Vec<String>,
    pub devices: Vec<String>,
    /// Access count per field.
    pub f: Vec<f64>,
    /// Bytes per field.
    pub b: Vec<u64>,
    /// Capacity per device.
    pub s: Vec<u64>,
    /// Failure probability per device.
    pub p: Vec<f64>,
    /// Access time, fields x devices, in ns.
    pub c: Vec<Vec<f64>>,
    /// Recomputation time, fields x devices, in ns.
    pub r: Vec<Vec<f64>>,
    /// Number of objects stored.
    pub x: u64,
}

impl PlacementProblem {
    /// An instance with every number zeroed (except X = 1) and unbounded capacity.
    pub fn new(fields: &[&str], devices: &[&str]) -> PlacementProblem {
        let (n, m) = (fields.len(), devices.len());
        PlacementProblem {
            fields: fields.iter().map(|s| s.to_string()).collect(),
            devices: devices.iter().map(|s| s.to_string()).collect(),
            f: vec![0.0; n],
            b: vec![0; n],
            s: vec![u64::MAX; m],
            p: vec![0.0; m],
            c: vec![vec![0.0; m]; n],
            r: vec![vec![0.0; m]; n],
            x: 1,
        }
    }

    pub fn n(&self) -> usize {
        self.fields.len()
    }

    pub fn m(&self) -> usize {
        self.devices.len()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f == name)
    }

    pub fn device_index(&self, name: &str) -> Option<usize> {
        self.devices.iter().position(|d| d == name)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        let dim = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(PlacementError::Dimension(format!("{what} has {got} entries, expected {want}")))
            }
        };
        dim("F", self.f.len(), n)?;
        dim("B", self.b.len(), n)?;
        dim("S", self.s.len(), m)?;
        dim("P", self.p.len(), m)?;
        dim("C", self.c.len(), n)?;
        dim("R", self.r.len(), n)?;
        for i in 0..n {
            dim(&format!("C row {i}"), self.c[i].len(), m)?;
            dim(&format!("R row {i}"), self.r[i].len(), m)?;
        }
        if m == 0 && n > 0 {
            return Err(PlacementError::Dimension("no devices".into()));
        }
        if self.x == 0 {
            return Err(PlacementError::InvalidInput("X must be at least 1".into()));
        }
        let bad = |what: String| Err(PlacementError::InvalidInput(what));
        for (i, name) in self.fields.iter().enumerate() {
            if !(self.f[i].is_finite() && self.f[i] >= 0.0) {
                return bad(format!("F[{name}] = {}", self.f[i]));
            }
            for j in 0..m {
                if !(self.c[i][j].is_finite() && self.c[i][j] >= 0.0) {
                    return bad(format!("C[{name}][{}] = {}", self.devices[j], self.c[i][j]));
                }
                if !(self.r[i][j].is_finite() && self.r[i][j] >= 0.0) {
                    return bad(format!("R[{name}][{}] = {}", self.devices[j], self.r[i][j]));
                }
            }
        }
        for (j, name) in self.devices.iter().enumerate() {
            if !(0.0..=1.0).contains(&self.p[j]) {
                return bad(format!("P[{name}] = {}", self.p[j]));
            }
        }
        Ok(())
    }

    /// Cost of field `i` on device `j`.
    pub fn term(&self, i: usize, j: usize) -> f64 {
        self.f[i] * self.c[i][j] + self.f[i] * self.r[i][j] * self.p[j]
    }

    fn demand(&self, i: usize) -> u128 {
        self.x as u128 * self.b[i] as u128
    }

    fn capacities(&self) -> String {
        self.devices
            .iter()
            .zip(&self.s)
            .map(|(d, s)| format!("{d}={s}"))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Objective of an assignment given as one device index per field.
    pub fn objective(&self, a: &[usize]) -> Result<f64> {
        self.validate()?;
        if a.len() != self.n() {
            return Err(PlacementError::Dimension(format!(
                "assignment has {} entries, expected {}",
                a.len(),
                self.n()
            )));
        }
        if let Some(&j) = a.iter().find(|&&j| j >= self.m()) {
            return Err(PlacementError::Dimension(format!("device index {j} out of range")));
        }
        Ok(self.cost(a))
    }

    /// Objective of a 0/1 matrix; rows must each hold exactly one 1.
    pub fn objective_matrix(&self, a: &[Vec<u8>]) -> Result<f64> {
        let mut idx = Vec::with_capacity(a.len());
        for (i, row) in a.iter().enumerate() {
            if row.len() != self.m() || row.iter().any(|&v| v > 1) || row.iter().filter(|&&v| v == 1).count() != 1 {
                return Err(PlacementError::Dimension(format!("row {i} is not a one-hot device choice")));
            }
            idx.push(row.iter().position(|&v| v == 1).unwrap());
        }
        self.objective(&idx)
    }

    // Field-order summation; solve and brute_force both rely on it.
    fn cost(&self, a: &[usize]) -> f64 {
        let mut total = 0.0;
        for (i, &j) in a.iter().enumerate() {
            total += self.term(i, j);
        }
        total
    }

    fn used(&self, a: &[usize]) -> Vec<u128> {
        let mut used = vec![0u128; self.m()];
        for (i, &j) in a.iter().enumerate() {
            used[j] += self.demand(i);
        }
        used
    }

    fn fits(&self, used: &[u128]) -> bool {
        used.iter().zip(&self.s).all(|(&u, &s)| u <= s as u128)
    }

    fn solution(&self, a: Vec<usize>) -> PlacementSolution {
        PlacementSolution {
            objective: self.cost(&a),
            used: self.used(&a),
            assignment: a,
        }
    }

    /// Names the first field whose addition leaves no feasible packing.
    fn infeasibility(&self) -> PlacementError {
        fn packable(p: &PlacementProblem, i: usize, k: usize, used: &mut [u128]) -> bool {
            if i == k {
                return true;
            }
            for j in 0..p.m() {
                used[j] += p.demand(i);
                let ok = used[j] <= p.s[j] as u128 && packable(p, i + 1, k, used);
                used[j] -= p.demand(i);
                if ok {
                    return true;
                }
            }
            false
        }
        let k = (1..=self.n())
            .find(|&k| !packable(self, 0, k, &mut vec![0; self.m()]))
            .unwrap_or(self.n());
        let i = k.saturating_sub(1);
        PlacementError::Infeasible {
            field: self.fields.get(i).cloned().unwrap_or_default(),
            demand: if self.n() > 0 { self.demand(i) } else { 0 },
            capacities: self.capacities(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementSolution {
    /// Device index per field.
    pub assignment: Vec<usize>,
    pub objective: f64,
    /// Bytes used per device: X * sum of B over its fields.
    pub used: Vec<u128>,
}

impl PlacementSolution {
    /// The 0/1 matrix form, fields x devices.
    pub fn matrix(&self, m: usize) -> Vec<Vec<u8>> {
        self.assignment
            .iter()
            .map(|&j| (0..m).map(|d| (d == j) as u8).collect())
            .collect()
    }

    pub fn device_of<'p>(&self, problem: &'p PlacementProblem, field: &str) -> Option<&'p str> {
        let i = problem.field_index(field)?;
        Some(&problem.devices[self.assignment[i]])
    }

    /// `field,device,cost_contribution` rows with a header.
    pub fn to_csv(&self, problem: &PlacementProblem) -> String {
        let mut out = String::from("field,device,cost_contribution\n");
        for (i, &j) in self.assignment.iter().enumerate() {
            writeln!(out, "{},{},{}", problem.fields[i], problem.devices[j], problem.term(i, j)).unwrap();
        }
        out
    }
}

/// Branch and bound over fields in order, devices in index order.
///
/// The bound adds each unassigned field's cheapest device and ignores
/// capacity. Ties keep the first assignment found, which is the
/// lexicographically smallest.
pub fn solve(problem: &PlacementProblem) -> Result<PlacementSolution> {
    problem.validate()?;
    let (n, m) = (problem.n(), problem.m());
    let terms: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| problem.term(i, j)).collect()).collect();
    let mut rest = vec![0.0; n + 1];
    for i in (0..n).rev() {
        rest[i] = rest[i + 1] + terms[i].iter().copied().fold(f64::INFINITY, f64::min);
    }

    struct Search<'a> {
        p: &'a PlacementProblem,
        terms: Vec<Vec<f64>>,
        rest: Vec<f64>,
        current: Vec<usize>,
        used: Vec<u128>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn dfs(&mut self, i: usize, cost: f64) {
            if let Some((best, _)) = &self.best {
                if cost + self.rest[i] > best + best.abs() * 1e-12 {
                    return;
                }
            }
            if i == self.p.n() {
                if self.best.as_ref().is_none_or(|(b, _)| cost < *b) {
                    self.best = Some((cost, self.current.clone()));
                }
                return;
            }
            let demand = self.p.demand(i);
            for j in 0..self.p.m() {
                if self.used[j] + demand > self.p.s[j] as u128 {
                    continue;
                }
                self.used[j] += demand;
                self.current.push(j);
                self.dfs(i + 1, cost + self.terms[i][j]);
                self.current.pop();
                self.used[j] -= demand;
            }
        }
    }

    let mut search = Search {
        p: problem,
        terms,
        rest,
        current: Vec::with_capacity(n),
        used: vec![0; m],
        best: None,
    };
    search.dfs(0, 0.0);
    match search.best {
        Some((_, a)) => Ok(problem.solution(a)),
        None => Err(problem.infeasibility()),
    }
}

/// Exhaustive enumeration in lexicographic order, same tie rule as [`solve`].
pub fn brute_force(problem: &PlacementProblem) -> Result<PlacementSolution> {
    problem.validate()?;
    let (n, m) = (problem.n(), problem.m());
    let total = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if total > BRUTE_FORCE_LIMIT as u128 {
        return Err(PlacementError::TooLarge(total));
    }
    let mut a = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..total {
        if problem.fits(&problem.used(&a)) {
            let cost = problem.cost(&a);
            if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                best = Some((cost, a.clone()));
            }
        }
        // next assignment, last field fastest
        for i in (0..n).rev() {
            a[i] += 1;
            if a[i] < m {
                break;
            }
            a[i] = 0;
        }
    }
    match best {
        Some((_, a)) => Ok(problem.solution(a)),
        None => Err(problem.infeasibility()),
    }
}

/// A random instance with `n` fields and `m` devices. Capacities range from
/// tight (often infeasible) to ample so every constraint regime shows up.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> PlacementProblem {
    let fields: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
    let devices: Vec<String> = (0..m).map(|j| format!("d{j}")).collect();
    let x = rng.random_range(1..=20u64);
    let b: Vec<u64> = (0..n).map(|_| rng.random_range(1..=64u64)).collect();
    let total = x * b.iter().sum::<u64>();
    PlacementProblem {
        f: (0..n).map(|_| rng.random_range(0..=1000u32) as f64).collect(),
        s: (0..m).map(|_| rng.random_range(total / (m as u64 * 2)..=total)).collect(),
        p: (0..m).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() * 0.1 }).collect(),
        c: (0..n).map(|_| (0..m).map(|_| rng.random_range(1.0..1000.0)).collect()).collect(),
        r: (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..100_000.0)).collect()).collect(),
        fields,
        devices,
        b,
        x,
    }
}

/// The schema with each field tagged by its solved device only.
pub fn emit_tags(solution: &PlacementSolution, problem: &PlacementProblem, schema: &ObjectSchema) -> Result<String> {
    Ok(retag(solution, problem, schema)?.to_string())
}

pub fn retag(solution: &PlacementSolution, problem: &PlacementProblem, schema: &ObjectSchema) -> Result<ObjectSchema> {
    if solution.assignment.len() != problem.n() {
        return Err(PlacementError::Dimension("solution does not match problem".into()));
    }
    let mut assignment = Assignment::new();
    for (i, name) in problem.fields.iter().enumerate() {
        if schema.field(name).is_none() {
            return Err(PlacementError::FieldMismatch(format!(
                "schema `{}` has no field `{name}`",
                schema.name
            )));
        }
        let device = &problem.devices[solution.assignment[i]];
        let tier = TierId::from_name(device).ok_or_else(|| PlacementError::UnknownDevice(device.clone()))?;
        assignment.insert(name.clone(), tier);
    }
    if let Some(f) = schema.fields.iter().find(|f| !assignment.contains_key(&f.name)) {
        return Err(PlacementError::FieldMismatch(format!("no solution entry for field `{}`", f.name)));
    }
    Ok(schema.retagged(&assignment)?)
}

#[cfg(test)]
mod tests;
