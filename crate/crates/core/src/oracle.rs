//! Independent reference solutions used for test scoring.
//!
//! 1D-Burgers is evaluated through the Cole–Hopf transformation with
//! Gauss–Hermite quadrature, 1D-Schrödinger by a Strang split-step Fourier
//! integrator on a periodic domain, and the two 2D equations by closed forms
//! (verified by residual annihilation in the problem definitions).

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::graph::GridSpec;

/// Viscosity of the 1D-Burgers benchmark.
pub const BURGERS_NU: f64 = 0.01 / std::f64::consts::PI;

/// Default Gauss–Hermite order for [`cole_hopf_burgers`].
pub const COLE_HOPF_ORDER: usize = 100;

/// Gauss–Hermite abscissae and weights for `∫ e^{-z²} f(z) dz`.
///
/// Golub–Welsch: eigenvalues of the Jacobi matrix (implicit QL with shifts)
/// give the nodes; the squared first eigenvector components give the
/// weights. Stable well past order 200 in double precision.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut d = vec![0.0f64; n];
    // Off-diagonals of the Hermite Jacobi matrix: sqrt(j/2).
    let mut e: Vec<f64> = (1..n).map(|j| (j as f64 / 2.0).sqrt()).collect();
    e.push(0.0);
    let mut fr = vec![0.0f64; n];
    fr[0] = 1.0;
    tridiag_eigen_first_row(&mut d, &mut e, &mut fr);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let x: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let w: Vec<f64> = order.iter().map(|&i| sqrt_pi * fr[i] * fr[i]).collect();
    (x, w)
}

/// Implicit-QL eigenvalue iteration for a symmetric tridiagonal matrix,
/// accumulating the plane rotations into one eigenvector-matrix row.
fn tridiag_eigen_first_row(d: &mut [f64], e: &mut [f64], fr: &mut [f64]) {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter <= 50, "tridiagonal QL did not converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                f = fr[i + 1];
                fr[i + 1] = s * fr[i] + c * f;
                fr[i] = c * fr[i] - s * f;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
}

/// Cole–Hopf solution of the 1D-Burgers benchmark at one point, using
/// Gauss–Hermite quadrature of the given order.
pub fn cole_hopf_burgers_order(x: f64, t: f64, order: usize) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::Domain(format!("negative time {}", t)));
    }
    if t == 0.0 {
        return Ok(-(std::f64::consts::PI * x).sin());
    }
    let (z, w) = gauss_hermite(order);
    cole_hopf_with_rule(x, t, &z, &w)
}

/// Cole–Hopf evaluation with a precomputed quadrature rule; build the rule
/// once when sweeping many points.
pub fn cole_hopf_with_rule(x: f64, t: f64, z: &[f64], w: &[f64]) -> Result<f64> {
    let pi = std::f64::consts::PI;
    let a = 2.0 * (BURGERS_NU * t).sqrt();
    let mut num = 0.0;
    let mut den = 0.0;
    for (&zi, &wi) in z.iter().zip(w) {
        let y = x - a * zi;
        // exp(-∫₀^y u₀/2ν) with u₀ = -sin(πs): exponent -(cos(πy)-1)/(2νπ).
        let f = (-( (pi * y).cos() - 1.0) / (2.0 * BURGERS_NU * pi)).exp();
        num += wi * (pi * y).sin() * f;
        den += wi * f;
    }
    let u = -num / den;
    if u.is_finite() {
        Ok(u)
    } else {
        Err(Error::NonFinite {
            context: format!("cole_hopf_burgers at ({}, {})", x, t),
        })
    }
}

/// Cole–Hopf at the default quadrature order.
pub fn cole_hopf_burgers(x: f64, t: f64) -> Result<f64> {
    cole_hopf_burgers_order(x, t, COLE_HOPF_ORDER)
}

/// Traveling-wave solution of the 2D-Burgers benchmark.
pub fn exact_2d_burgers(x: f64, y: f64, t: f64) -> f64 {
    1.0 / (1.0 + ((x + y - t) / 0.2).exp())
}

/// Closed-form solution of the 2D-Schrödinger benchmark as a real/imaginary
/// pair `(u, v)`.
pub fn exact_2d_schrodinger(x: f64, y: f64, t: f64) -> (f64, f64) {
    let c = x.cosh() * y.cosh();
    (-t.sin() / c, t.cos() / c)
}

/// Ground-truth solution values on one grid.
#[derive(Clone, Debug)]
pub struct ReferenceField {
    pub grid: GridSpec,
    /// `N×m` row-major solution components.
    pub values: Vec<f64>,
    pub arity: usize,
    pub method: &'static str,
}

impl ReferenceField {
    pub fn value(&self, node: usize) -> &[f64] {
        &self.values[node * self.arity..(node + 1) * self.arity]
    }

    /// CSV export: header `x[,y],t,u[,v]`, one row per node, 17 significant
    /// digits.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let p = self.grid.p();
        let header = match (p, self.arity) {
            (2, 1) => "x,t,u",
            (2, 2) => "x,t,u,v",
            (3, 1) => "x,y,t,u",
            (3, 2) => "x,y,t,u,v",
            _ => return Err(Error::Config("unsupported field shape".into())),
        };
        writeln!(out, "{}", header)?;
        let coords = crate::graph::discretize(&self.grid);
        for node in 0..self.grid.n() {
            let mut fields: Vec<String> = coords[node * p..(node + 1) * p]
                .iter()
                .map(|v| format!("{:.16e}", v))
                .collect();
            fields.extend(self.value(node).iter().map(|v| format!("{:.16e}", v)));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Number of Fourier modes used by the split-step integrator.
pub const SPLIT_STEP_MODES: usize = 512;

/// Default integrator substep; divides the 1D-Schrödinger output spacing.
pub fn split_step_default_substep(grid: &GridSpec) -> f64 {
    let t_axis = grid.time_axis();
    let a = &grid.axes[t_axis];
    // Division by 256 puts the Strang splitting error well below the 1e-6
    // substep-halving budget; the scheme's error is quadratic in the step.
    (a.max - a.min) / ((a.count - 1) as f64) / 256.0
}

/// Strang split-step Fourier solution of `iψ_t + ½ψ_xx + |ψ|²ψ = 0` with
/// `ψ(x,0) = 2 sech x` on the periodic domain `[-5, 5)`, sampled on `grid`.
pub fn split_step_schrodinger(grid: &GridSpec, substep: f64) -> Result<ReferenceField> {
    split_step_schrodinger_with_mass(grid, substep).map(|(field, _)| field)
}

/// As [`split_step_schrodinger`], also returning `∫|ψ|²dx` on the internal
/// collocation grid at each output level. The scheme conserves this exactly
/// up to rounding; the output-grid Riemann sum does not, because downsampling
/// discards spectral content.
pub fn split_step_schrodinger_with_mass(
    grid: &GridSpec,
    substep: f64,
) -> Result<(ReferenceField, Vec<f64>)> {
    if grid.p() != 2 {
        return Err(Error::Config("split-step oracle expects a 2-axis grid".into()));
    }
    let t_axis = grid.time_axis();
    let nt = grid.axes[t_axis].count;
    let dt_out = (grid.axes[t_axis].max - grid.axes[t_axis].min) / ((nt - 1) as f64);
    let steps_f = dt_out / substep;
    let steps = steps_f.round() as usize;
    if steps == 0 || (steps_f - steps as f64).abs() > 1e-9 * steps_f {
        return Err(Error::Config(format!(
            "substep {} does not divide output spacing {}",
            substep, dt_out
        )));
    }
    if grid.axes[t_axis].min != 0.0 {
        return Err(Error::Config("split-step oracle starts at t = 0".into()));
    }

    let nmodes = SPLIT_STEP_MODES;
    let (xmin, xmax) = (-5.0, 5.0);
    let len = xmax - xmin;
    let dx = len / nmodes as f64;
    let dt = dt_out / steps as f64;

    // Solver state on the periodic collocation grid.
    let mut psi: Vec<Complex64> = (0..nmodes)
        .map(|j| {
            let x: f64 = xmin + j as f64 * dx;
            Complex64::new(2.0 / x.cosh(), 0.0)
        })
        .collect();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nmodes);
    let ifft = planner.plan_fft_inverse(nmodes);
    // Angular wavenumbers in FFT bin order.
    let kvec: Vec<f64> = (0..nmodes)
        .map(|j| {
            let jj = if j <= nmodes / 2 { j as i64 } else { j as i64 - nmodes as i64 };
            2.0 * std::f64::consts::PI * jj as f64 / len
        })
        .collect();
    let disp: Vec<Complex64> = kvec
        .iter()
        .map(|&k| (Complex64::new(0.0, -0.5 * k * k * dt)).exp())
        .collect();

    let half_nonlinear = |psi: &mut [Complex64]| {
        for p in psi.iter_mut() {
            let phase = p.norm_sqr() * dt * 0.5;
            *p *= Complex64::new(0.0, phase).exp();
        }
    };

    let nx_out = grid.axes[0].count;
    let mut values = vec![0.0f64; grid.n() * 2];
    let mut spectrum = vec![Complex64::new(0.0, 0.0); nmodes];

    // Evaluate the Fourier series of `psi` at the output x positions.
    let mut sample = |psi: &[Complex64], level: usize, values: &mut [f64]| {
        spectrum.copy_from_slice(psi);
        fft.process(&mut spectrum);
        for ix in 0..nx_out {
            let x = grid.coord(0, ix);
            let theta = (x - xmin) / len; // in [0, 1]
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, &s) in spectrum.iter().enumerate() {
                let jj = if j <= nmodes / 2 { j as i64 } else { j as i64 - nmodes as i64 };
                let ang = 2.0 * std::f64::consts::PI * jj as f64 * theta;
                acc += s * Complex64::new(0.0, ang).exp();
            }
            acc /= nmodes as f64;
            let node = grid.node_index(&[ix, level]);
            values[node * 2] = acc.re;
            values[node * 2 + 1] = acc.im;
        }
    };

    let internal_mass =
        |psi: &[Complex64]| -> f64 { psi.iter().map(|p| p.norm_sqr() * dx).sum() };

    let mut masses = Vec::with_capacity(nt);
    sample(&psi, 0, &mut values);
    masses.push(internal_mass(&psi));
    for level in 1..nt {
        for _ in 0..steps {
            half_nonlinear(&mut psi);
            fft.process(&mut psi);
            for (p, d) in psi.iter_mut().zip(&disp) {
                *p *= d;
            }
            ifft.process(&mut psi);
            let scale = 1.0 / nmodes as f64;
            for p in psi.iter_mut() {
                *p *= scale;
            }
            half_nonlinear(&mut psi);
        }
        sample(&psi, level, &mut values);
        masses.push(internal_mass(&psi));
    }

    Ok((
        ReferenceField {
            grid: grid.clone(),
            values,
            arity: 2,
            method: "split-step-fourier",
        },
        masses,
    ))
}

/// Discrete mass `Σ|ψ|²Δx` of one stored time level of a two-component field.
pub fn discrete_mass(field: &ReferenceField, level: usize) -> f64 {
    let nx = field.grid.axes[0].count;
    let a = &field.grid.axes[0];
    let dx = (a.max - a.min) / ((nx - 1) as f64);
    let mut mass = 0.0;
    for ix in 0..nx - 1 {
        // Left-endpoint rule over [-5, 5); the x = +5 node duplicates -5.
        let node = field.grid.node_index(&[ix, level]);
        let (u, v) = (field.values[node * 2], field.values[node * 2 + 1]);
        mass += (u * u + v * v) * dx;
    }
    mass
}

/// The full reference field for a named problem on a grid.
pub fn reference_field(problem: crate::problems::Problem, grid: &GridSpec) -> Result<ReferenceField> {
    use crate::problems::Problem;
    match problem {
        Problem::Burgers1d => {
            let (z, w) = gauss_hermite(COLE_HOPF_ORDER);
            let mut values = Vec::with_capacity(grid.n());
            for node in 0..grid.n() {
                let idx = grid.multi_index(node);
                let (x, t) = (grid.coord(0, idx[0]), grid.coord(1, idx[1]));
                let u = if t == 0.0 {
                    -(std::f64::consts::PI * x).sin()
                } else {
                    cole_hopf_with_rule(x, t, &z, &w)?
                };
                values.push(u);
            }
            Ok(ReferenceField {
                grid: grid.clone(),
                values,
                arity: 1,
                method: "cole-hopf",
            })
        }
        Problem::Schrodinger1d => split_step_schrodinger(grid, split_step_default_substep(grid)),
        Problem::Burgers2d => {
            let mut values = Vec::with_capacity(grid.n());
            for node in 0..grid.n() {
                let idx = grid.multi_index(node);
                values.push(exact_2d_burgers(
                    grid.coord(0, idx[0]),
                    grid.coord(1, idx[1]),
                    grid.coord(2, idx[2]),
                ));
            }
            Ok(ReferenceField {
                grid: grid.clone(),
                values,
                arity: 1,
                method: "closed-form",
            })
        }
        Problem::Schrodinger2d => {
            let mut values = Vec::with_capacity(grid.n() * 2);
            for node in 0..grid.n() {
                let idx = grid.multi_index(node);
                let (u, v) = exact_2d_schrodinger(
                    grid.coord(0, idx[0]),
                    grid.coord(1, idx[1]),
                    grid.coord(2, idx[2]),
                );
                values.push(u);
                values.push(v);
            }
            Ok(ReferenceField {
                grid: grid.clone(),
                values,
                arity: 2,
                method: "closed-form",
            })
        }
    }
}
