use std::fmt::{self, Write};
use std::str::FromStr;

use super::{solve, PlacementError, PlacementProblem, PlacementSolution, Result};
use crate::par::Exec;

/// One problem parameter driven by a sweep axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepParam {
    /// `R[field][device] = v`.
    R { field: usize, device: usize },
    /// `R[field][device] = v * ns_per_iter`, with `v` an iteration count.
    Iters { field: usize, device: usize, ns_per_iter: f64 },
    /// `P[device] = v`, or every device when `None`.
    P { device: Option<usize> },
    /// `C[field][device] = v`.
    C { field: usize, device: usize },
    /// `F[field] = v`.
    F { field: usize },
}

impl SweepParam {
    /// Parses `R:<field>:<device>`, `iters:<field>:<device>:<ns>`,
    /// `P:<device>` (or `P:*`), `C:<field>:<device>` or `F:<field>`.
    /// Fields and devices are names or zero-based indices.
    pub fn parse(s: &str, problem: &PlacementProblem) -> Result<SweepParam> {
        let err = |m: String| PlacementError::Parse(format!("sweep parameter `{s}`: {m}"));
        let parts: Vec<&str> = s.split(':').collect();
        let field = |t: &str| {
            problem
                .field_index(t)
                .or_else(|| t.parse().ok().filter(|&i| i < problem.n()))
                .ok_or_else(|| err(format!("unknown field `{t}`")))
        };
        let device = |t: &str| {
            problem
                .device_index(t)
                .or_else(|| t.parse().ok().filter(|&j| j < problem.m()))
                .ok_or_else(|| err(format!("unknown device `{t}`")))
        };
        Ok(match parts.as_slice() {
            ["R", f, d] => SweepParam::R { field: field(f)?, device: device(d)? },
            ["C", f, d] => SweepParam::C { field: field(f)?, device: device(d)? },
            ["F", f] => SweepParam::F { field: field(f)? },
            ["P", "*"] => SweepParam::P { device: None },
            ["P", d] => SweepParam::P { device: Some(device(d)?) },
            ["iters", f, d, ns] => SweepParam::Iters {
                field: field(f)?,
                device: device(d)?,
                ns_per_iter: ns
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| err(format!("bad ns per iteration `{ns}`")))?,
            },
            _ => return Err(err("unrecognized form".into())),
        })
    }

    pub fn apply(&self, problem: &mut PlacementProblem, v: f64) {
        match *self {
            SweepParam::R { field, device } => problem.r[field][device] = v,
            SweepParam::Iters { field, device, ns_per_iter } => problem.r[field][device] = v * ns_per_iter,
            SweepParam::P { device: Some(d) } => problem.p[d] = v,
            SweepParam::P { device: None } => problem.p.iter_mut().for_each(|p| *p = v),
            SweepParam::C { field, device } => problem.c[field][device] = v,
            SweepParam::F { field } => problem.f[field] = v,
        }
    }
}

/// A parameter and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl SweepAxis {
    /// `count` evenly spaced values from `start` to `end` inclusive.
    pub fn linear(param: SweepParam, start: f64, end: f64, count: usize) -> SweepAxis {
        let values = match count {
            0 => vec![],
            1 => vec![start],
            _ => (0..count)
                .map(|k| start + (end - start) * k as f64 / (count - 1) as f64)
                .collect(),
        };
        SweepAxis { param, values }
    }

    /// Parses `<param>@<start>:<end>:<count>`.
    pub fn parse(s: &str, problem: &PlacementProblem) -> Result<SweepAxis> {
        let err = || PlacementError::Parse(format!("sweep axis `{s}`: expected <param>@<start>:<end>:<count>"));
        let (param, range) = s.rsplit_once('@').ok_or_else(err)?;
        let param = SweepParam::parse(param, problem)?;
        let r: Vec<&str> = range.split(':').collect();
        let [start, end, count] = r.as_slice() else {
            return Err(err());
        };
        let num = |t: &str| f64::from_str(t).ok().filter(|v| v.is_finite()).ok_or_else(err);
        let count: usize = count.parse().ok().filter(|&c| c > 0).ok_or_else(err)?;
        Ok(SweepAxis::linear(param, num(start)?, num(end)?, count))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub v1: f64,
    pub v2: Option<f64>,
    pub result: Result<PlacementSolution>,
}

/// Solutions over the grid, axis 1 outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub fields: Vec<String>,
    pub devices: Vec<String>,
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, row: usize, col: usize) -> &SweepCell {
        &self.cells[row * self.cols + col]
    }

    /// Device index chosen for `field`, `None` where the cell is infeasible.
    pub fn choice(&self, row: usize, col: usize, field: usize) -> Option<usize> {
        self.cell(row, col).result.as_ref().ok().map(|s| s.assignment[field])
    }

    /// `axis1,axis2,field,choice,objective`; infeasible cells carry
    /// `infeasible` and an empty objective.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis1,axis2,field,choice,objective\n");
        for cell in &self.cells {
            let v2 = cell.v2.map(|v| v.to_string()).unwrap_or_default();
            for (i, field) in self.fields.iter().enumerate() {
                match &cell.result {
                    Ok(s) => writeln!(out, "{},{v2},{field},{},{}", cell.v1, self.devices[s.assignment[i]], s.objective),
                    Err(_) => writeln!(out, "{},{v2},{field},infeasible,", cell.v1),
                }
                .unwrap();
            }
        }
        out
    }
}

impl fmt::Display for SweepGrid {
    /// One character per cell per field: the chosen device's initial.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, name) in self.fields.iter().enumerate() {
            writeln!(f, "{name}:")?;
            for row in 0..self.rows {
                for col in 0..self.cols {
                    let c = match self.choice(row, col, i) {
                        Some(j) => self.devices[j].chars().next().unwrap_or('?'),
                        None => 'x',
                    };
                    write!(f, "{c}")?;
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

/// Solves `template` at every grid point. Cells are independent and solved
/// with `exec`; output order does not depend on it.
pub fn sweep(template: &PlacementProblem, axis1: &SweepAxis, axis2: Option<&SweepAxis>, exec: Exec) -> Result<SweepGrid> {
    template.validate()?;
    let cols = axis2.map_or(1, |a| a.values.len());
    let points: Vec<(f64, Option<f64>)> = axis1
        .values
        .iter()
        .flat_map(|&v1| match axis2 {
            Some(a) => a.values.iter().map(|&v2| (v1, Some(v2))).collect::<Vec<_>>(),
            None => vec![(v1, None)],
        })
        .collect();
    let cells = exec.map(&points, |&(v1, v2)| {
        let mut p = template.clone();
        axis1.param.apply(&mut p, v1);
        if let (Some(a), Some(v2)) = (axis2, v2) {
            a.param.apply(&mut p, v2);
        }
        SweepCell { v1, v2, result: solve(&p) }
    });
    Ok(SweepGrid {
        fields: template.fields.clone(),
        devices: template.devices.clone(),
        rows: axis1.values.len(),
        cols,
        cells,
    })
}
