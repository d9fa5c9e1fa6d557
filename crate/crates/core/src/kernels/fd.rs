//! Crank–Nicolson oracle for the forward equation
//! `∂_t p = ½ ∂_yy (sigma(y)^2 p)`, started from a point mass.
//!
//! The operator is discretised in divergence form on a uniform node grid with
//! zero Dirichlet values at both ends, so the discrete mass `h Σ p_i` is
//! conserved up to boundary outflow. The point mass is replaced by the exact
//! constant-coefficient Gaussian after one step `t0 = t / n_time` with
//! `sigma(x)`; the first two Crank–Nicolson steps are replaced by four
//! implicit Euler half steps to damp the high-frequency modes.

use std::io::Write;

use crate::error::{Error, Result};
use crate::lamperti::TransformContext;

use super::{Backend, DensityEstimate};

pub const DEFAULT_MASS_TOL: f64 = 1e-4;
pub const DEFAULT_N_TIME: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdMesh {
    pub y_min: f64,
    pub y_max: f64,
    /// Number of cells; the grid has `n_space + 1` nodes.
    pub n_space: usize,
    pub n_time: usize,
}

impl FdMesh {
    pub fn step(&self) -> f64 {
        (self.y_max - self.y_min) / self.n_space as f64
    }

    /// Mesh whose boundaries sit at least `6 sqrt(t) / delta` (plus a small
    /// margin) from `x` and from every point of `cover`, with spacing that
    /// resolves the initial Gaussian.
    pub fn auto(ctx: &TransformContext, t: f64, x: f64, cover: &[f64]) -> Self {
        let n_time = DEFAULT_N_TIME;
        let delta = ctx.spec().declared_delta();
        let reach = 6.0 * t.sqrt() / delta + 0.5;
        let lo = cover.iter().fold(x, |a, &b| a.min(b)) - reach;
        let hi = cover.iter().fold(x, |a, &b| a.max(b)) + reach;
        let h = (ctx.sigma(x) * (t / n_time as f64).sqrt() / 4.0).min(0.01);
        let mut n_space = ((hi - lo) / h).ceil() as usize;
        n_space += n_space % 2;
        Self {
            y_min: lo,
            y_max: hi,
            n_space,
            n_time,
        }
    }
}

/// Density values on the nodes of a mesh at time `t` for start `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub y_min: f64,
    pub step: f64,
    pub values: Vec<f64>,
    pub t: f64,
    pub x: f64,
    /// `1 - h Σ p` at the final time.
    pub mass_leak: f64,
    /// Richardson estimate of the discretization error (max norm), when
    /// computed.
    pub error_budget: Option<f64>,
}

impl DensityTable {
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (self.y_min + i as f64 * self.step, v))
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + (self.values.len() - 1) as f64 * self.step
    }

    pub fn mass(&self) -> f64 {
        self.step * self.values.iter().sum::<f64>()
    }

    /// Linear interpolation; zero outside the mesh.
    pub fn value_at(&self, y: f64) -> f64 {
        let pos = (y - self.y_min) / self.step;
        if !(pos >= 0.0) || pos > (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let w = pos - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    pub fn eval(&self, y: f64) -> Result<DensityEstimate> {
        if y < self.y_min || y > self.y_max() {
            return Err(Error::Mesh(format!(
                "y = {y} outside mesh [{}, {}]",
                self.y_min,
                self.y_max()
            )));
        }
        Ok(DensityEstimate {
            value: self.value_at(y),
            std_error: 0.0,
            disc_error: self.error_budget.unwrap_or(0.0),
            backend: Backend::FdPde,
            t: self.t,
            x: self.x,
            y,
        })
    }

    /// `∫ f(y) p(y) dy` by the trapezoid rule on the nodes.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.step * self.nodes().map(|(y, p)| f(y) * p).sum::<f64>()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["y", "density"])?;
        for (y, p) in self.nodes() {
            out.write_record(&[format!("{y:?}"), format!("{p:?}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Precomputed Thomas factorisation of `I - r A` on the interior nodes.
struct Factor {
    lower: Vec<f64>,
    cprime: Vec<f64>,
    inv_den: Vec<f64>,
}

impl Factor {
    fn new(a: &[f64], r: f64) -> Self {
        let n = a.len();
        let m = n - 2;
        let mut lower = vec![0.0; m];
        let mut cprime = vec![0.0; m];
        let mut inv_den = vec![0.0; m];
        for k in 0..m {
            let i = k + 1;
            let l = -r * a[i - 1];
            let d = 1.0 + 2.0 * r * a[i];
            let u = -r * a[i + 1];
            let den = if k == 0 { d } else { d - l * cprime[k - 1] };
            lower[k] = l;
            inv_den[k] = 1.0 / den;
            cprime[k] = u / den;
        }
        Self {
            lower,
            cprime,
            inv_den,
        }
    }

    /// Solves in place; `rhs` holds the interior values.
    fn solve(&self, rhs: &mut [f64]) {
        let m = rhs.len();
        rhs[0] *= self.inv_den[0];
        for k in 1..m {
            rhs[k] = (rhs[k] - self.lower[k] * rhs[k - 1]) * self.inv_den[k];
        }
        for k in (0..m - 1).rev() {
            rhs[k] -= self.cprime[k] * rhs[k + 1];
        }
    }
}

struct Solver {
    /// `sigma^2 / 2` at the nodes.
    a: Vec<f64>,
    h: f64,
    y_min: f64,
}

impl Solver {
    fn new(ctx: &TransformContext, mesh: &FdMesh) -> Result<Self> {
        if mesh.n_space < 4 || mesh.n_time < 2 || !(mesh.y_max > mesh.y_min) {
            return Err(Error::Mesh(format!("degenerate mesh {mesh:?}")));
        }
        let h = mesh.step();
        let a = (0..=mesh.n_space)
            .map(|i| {
                let s = ctx.sigma(mesh.y_min + i as f64 * h);
                0.5 * s * s
            })
            .collect();
        Ok(Self {
            a,
            h,
            y_min: mesh.y_min,
        })
    }

    fn mass(&self, p: &[f64]) -> f64 {
        self.h * p.iter().sum::<f64>()
    }

    /// Advances `p` by `steps` steps of size `dt`, calling `on_step(j)` after
    /// the `j`-th full step.
    fn run<F: FnMut(usize, &[f64])>(&self, p: &mut [f64], dt: f64, steps: usize, rannacher: bool, mut on_step: F) {
        let n = p.len();
        let r_cn = 0.5 * dt / (self.h * self.h);
        // The implicit half of Crank–Nicolson, I - (dt/2) A, is also the
        // implicit Euler operator for a half step.
        let cn = Factor::new(&self.a, r_cn);
        let mut rhs = vec![0.0; n - 2];
        for step in 1..=steps {
            if rannacher && step <= 2 {
                for _ in 0..2 {
                    rhs.copy_from_slice(&p[1..n - 1]);
                    cn.solve(&mut rhs);
                    p[1..n - 1].copy_from_slice(&rhs);
                }
            } else {
                for k in 0..n - 2 {
                    let i = k + 1;
                    let lap = self.a[i + 1] * p[i + 1] - 2.0 * self.a[i] * p[i] + self.a[i - 1] * p[i - 1];
                    rhs[k] = p[i] + r_cn * lap;
                }
                cn.solve(&mut rhs);
                p[1..n - 1].copy_from_slice(&rhs);
            }
            on_step(step, p);
        }
    }

    fn gaussian_start(&self, ctx: &TransformContext, x: f64, t0: f64, nodes: usize) -> Vec<f64> {
        let s = ctx.sigma(x);
        let v = s * s * t0;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * v).sqrt();
        let mut p: Vec<f64> = (0..nodes)
            .map(|i| {
                let d = self.y_min + i as f64 * self.h - x;
                norm * (-d * d / (2.0 * v)).exp()
            })
            .collect();
        p[0] = 0.0;
        p[nodes - 1] = 0.0;
        let m = self.mass(&p);
        p.iter_mut().for_each(|v| *v /= m);
        p
    }
}

fn check_start(ctx: &TransformContext, t: f64, x: f64, mesh: &FdMesh) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time {t} must be positive")));
    }
    let h = mesh.step();
    if !(x > mesh.y_min + 10.0 * h && x < mesh.y_max - 10.0 * h) {
        return Err(Error::Mesh(format!(
            "start {x} not well inside mesh [{}, {}]",
            mesh.y_min, mesh.y_max
        )));
    }
    let t0 = t / mesh.n_time as f64;
    let width = ctx.sigma(x) * t0.sqrt();
    if width < 2.0 * h {
        return Err(Error::Mesh(format!(
            "initial Gaussian width {width:.3e} under-resolved by spacing {h:.3e}; refine n_space or lower n_time"
        )));
    }
    Ok(())
}

fn solve_plain(ctx: &TransformContext, t: f64, x: f64, mesh: &FdMesh) -> Result<DensityTable> {
    check_start(ctx, t, x, mesh)?;
    let solver = Solver::new(ctx, mesh)?;
    let dt = t / mesh.n_time as f64;
    let mut p = solver.gaussian_start(ctx, x, dt, mesh.n_space + 1);
    solver.run(&mut p, dt, mesh.n_time - 1, true, |_, _| {});
    let leak = 1.0 - solver.mass(&p);
    Ok(DensityTable {
        y_min: mesh.y_min,
        step: solver.h,
        values: p,
        t,
        x,
        mass_leak: leak,
        error_budget: None,
    })
}

/// Density table of `p(t, x, ·)` on `mesh`, with a Richardson error budget
/// from a second solve at half resolution in space and time.
pub fn kernel_fd_oracle(ctx: &TransformContext, t: f64, x: f64, mesh: FdMesh) -> Result<DensityTable> {
    kernel_fd_oracle_with_tol(ctx, t, x, mesh, DEFAULT_MASS_TOL)
}

pub fn kernel_fd_oracle_with_tol(
    ctx: &TransformContext,
    t: f64,
    x: f64,
    mesh: FdMesh,
    mass_tol: f64,
) -> Result<DensityTable> {
    let mut fine = solve_plain(ctx, t, x, &mesh)?;
    if fine.mass_leak.abs() > mass_tol {
        return Err(Error::MassLeak {
            leak: fine.mass_leak,
            tol: mass_tol,
        });
    }
    let coarse_mesh = FdMesh {
        n_space: mesh.n_space / 2,
        n_time: (mesh.n_time / 2).max(2),
        ..mesh
    };
    let richardson = match solve_plain(ctx, t, x, &coarse_mesh) {
        Ok(coarse) => fine
            .nodes()
            .map(|(y, p)| (p - coarse.value_at(y)).abs())
            .fold(0.0, f64::max)
            / 3.0,
        // The coarse mesh may fail the resolution check; fall back to the
        // interpolation term alone.
        Err(_) => 0.0,
    };
    // Linear interpolation error h^2/8 max|p''|.
    let curv = fine
        .values
        .windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]).abs())
        .fold(0.0, f64::max);
    fine.error_budget = Some(richardson + curv / 8.0);
    Ok(fine)
}

/// Tables of `p(t_j, x, ·)` at `t_j = j * every * t_final / n_time` for
/// `j = 1, 2, ...` (the same mesh and step as a single solve to `t_final`).
pub fn fd_marginals(
    ctx: &TransformContext,
    x: f64,
    t_final: f64,
    mesh: FdMesh,
    every: usize,
) -> Result<Vec<DensityTable>> {
    check_start(ctx, t_final, x, &mesh)?;
    if every == 0 || mesh.n_time % every != 0 {
        return Err(Error::Mesh(format!("record interval {every} must divide n_time {}", mesh.n_time)));
    }
    let solver = Solver::new(ctx, &mesh)?;
    let dt = t_final / mesh.n_time as f64;
    let mut p = solver.gaussian_start(ctx, x, dt, mesh.n_space + 1);
    let mut out = Vec::new();
    let mut record = |step_count: usize, p: &[f64]| {
        // step_count counts the Gaussian start as step 1.
        if step_count % every == 0 {
            out.push(DensityTable {
                y_min: mesh.y_min,
                step: solver.h,
                values: p.to_vec(),
                t: step_count as f64 * dt,
                x,
                mass_leak: 1.0 - solver.mass(p),
                error_budget: None,
            });
        }
    };
    record(1, &p);
    solver.run(&mut p, dt, mesh.n_time - 1, true, |j, p| record(j + 1, p));
    Ok(out)
}

/// Evolves an existing table by `duration` with `n_time` Crank–Nicolson steps
/// on the table's own mesh.
pub fn evolve(ctx: &TransformContext, table: &DensityTable, duration: f64, n_time: usize) -> Result<DensityTable> {
    let mesh = FdMesh {
        y_min: table.y_min,
        y_max: table.y_max(),
        n_space: table.values.len() - 1,
        n_time,
    };
    let solver = Solver::new(ctx, &mesh)?;
    let dt = duration / n_time as f64;
    let mut p = table.values.clone();
    solver.run(&mut p, dt, n_time, false, |_, _| {});
    Ok(DensityTable {
        y_min: table.y_min,
        step: table.step,
        mass_leak: 1.0 - solver.mass(&p),
        values: p,
        t: table.t + duration,
        x: table.x,
        error_budget: None,
    })
}
