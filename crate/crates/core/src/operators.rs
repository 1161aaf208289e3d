//! Dense discretizations of `Fu(x) = ∫ e^{iS(x,θ)} a(x,θ) ℱu(θ) d̂θ`.
//!
//! A [`DiscreteOperator`] stores `A = W_x^{1/2} K W_y^{1/2}`, the kernel with
//! the quadrature weights folded symmetrically, so that the conjugate
//! transpose of `A` is the `L²` adjoint.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{edge_taper, GridSpec};
use crate::phases::GeneratingFunction;
use crate::symbols::SymbolField;

/// Builder or algebraic origin of a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Route {
    Kernel,
    Spectral,
    Direct,
    Adjoint,
    Compose,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub route: Route,
    /// SHA-256 of the canonical builder configuration.
    pub config_hash: String,
}

/// Inputs of a build, hashed into the provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub route: Route,
    /// Cosine roll-off fraction of the `θ` quadrature (kernel route only).
    pub taper: f64,
}

impl BuildConfig {
    pub fn kernel(taper: f64) -> Self {
        BuildConfig {
            route: Route::Kernel,
            taper,
        }
    }

    pub fn spectral() -> Self {
        BuildConfig {
            route: Route::Spectral,
            taper: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteOperator {
    pub matrix: DMatrix<Complex64>,
    pub row_grid: GridSpec,
    pub col_grid: GridSpec,
    pub row_weights: Vec<f64>,
    pub col_weights: Vec<f64>,
    pub provenance: Provenance,
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable config");
    hex::encode(Sha256::digest(bytes))
}

fn grid_weights(g: &GridSpec) -> Vec<f64> {
    vec![g.cell_volume(); g.len()]
}

/// `(2π)^{-n} Δθ^n e^{iS(x,θ)} a(x,θ) τ(θ)` for every `(x_i, θ_k)`.
fn multiplier(
    s: &GeneratingFunction,
    a: &SymbolField,
    x_grid: &GridSpec,
    theta_grid: &GridSpec,
    taper: f64,
) -> DMatrix<Complex64> {
    let n = s.n();
    let xs = x_grid.nodes();
    let ts = theta_grid.nodes();
    let c = theta_grid.cell_volume() / (2.0 * PI).powi(n as i32);
    let tapers: Vec<f64> = ts
        .iter()
        .map(|t| {
            if taper > 0.0 {
                t.iter()
                    .map(|&c| edge_taper(c, theta_grid.radius, taper))
                    .product()
            } else {
                1.0
            }
        })
        .collect();
    let rows: Vec<Vec<Complex64>> = xs
        .par_iter()
        .map(|x| {
            let mut p = x.clone();
            p.extend(std::iter::repeat(0.0).take(n));
            ts.iter()
                .zip(&tapers)
                .map(|(t, &tau)| {
                    if tau == 0.0 {
                        return Complex64::new(0.0, 0.0);
                    }
                    p[n..].copy_from_slice(t);
                    let amp = a.eval(&p);
                    if amp == Complex64::new(0.0, 0.0) {
                        return amp;
                    }
                    Complex64::from_polar(c * tau, s.eval(&p)) * amp
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(xs.len(), ts.len(), |i, k| rows[i][k])
}

fn check_dims(s: &GeneratingFunction, a: &SymbolField, grids: &[&GridSpec]) -> Result<()> {
    let n = s.n();
    if a.dim() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            got: a.dim(),
        });
    }
    for g in grids {
        if g.dim != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: g.dim,
            });
        }
    }
    Ok(())
}

/// `K(x, y) = ∫ e^{i(S(x,θ) − y·θ)} a(x,θ) d̂θ` by tapered trapezoid sums
/// over `theta_grid`.
pub fn kernel_eval(
    s: &GeneratingFunction,
    a: &SymbolField,
    x: &[f64],
    y: &[f64],
    theta_grid: &GridSpec,
    taper: f64,
) -> Result<Complex64> {
    let n = s.n();
    if x.len() != n || y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len().min(y.len()),
        });
    }
    check_dims(s, a, &[theta_grid])?;
    let c = theta_grid.cell_volume() / (2.0 * PI).powi(n as i32);
    let mut p = x.to_vec();
    p.extend(std::iter::repeat(0.0).take(n));
    let mut sum = Complex64::new(0.0, 0.0);
    for t in theta_grid.nodes() {
        let tau: f64 = if taper > 0.0 {
            t.iter()
                .map(|&c| edge_taper(c, theta_grid.radius, taper))
                .product()
        } else {
            1.0
        };
        if tau == 0.0 {
            continue;
        }
        p[n..].copy_from_slice(&t);
        let yt: f64 = y.iter().zip(&t).map(|(a, b)| a * b).sum();
        sum += Complex64::from_polar(tau, s.eval(&p) - yt) * a.eval(&p);
    }
    Ok(sum * c)
}

/// `e^{-i y_j·θ_k}` for all node pairs.
fn fourier_matrix(theta_grid: &GridSpec, y_grid: &GridSpec) -> DMatrix<Complex64> {
    let ts = theta_grid.nodes();
    let ys = y_grid.nodes();
    DMatrix::from_fn(ts.len(), ys.len(), |k, j| {
        let d: f64 = ts[k].iter().zip(&ys[j]).map(|(a, b)| a * b).sum();
        Complex64::from_polar(1.0, -d)
    })
}

/// In-place multidimensional DFT (`e^{-2πi jk/M}` per axis) over a tensor
/// stored last axis fastest.
fn fft_nd(data: &mut [Complex64], m: usize, dim: usize, planner: &mut FftPlanner<f64>) {
    let fft = planner.plan_fft_forward(m);
    let mut line = vec![Complex64::new(0.0, 0.0); m];
    for axis in 0..dim {
        let stride = m.pow((dim - 1 - axis) as u32);
        let outer = data.len() / (m * stride);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * m * stride + s;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = data[base + j * stride];
                }
                fft.process(&mut line);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }
}

/// Row `i` of `K` via the discrete Fourier transform: with
/// `y_j = -R + jΔ`, `θ_k = -Θ + kΔθ`, `ΔΔθ = 2π/M`,
/// `Σ_k m_k e^{-iy_j θ_k} = e^{-iRΘ} e^{ijΔΘ} DFT[m_k e^{ikRΔθ}]_j` per axis.
fn spectral_kernel(
    mult: &DMatrix<Complex64>,
    y_grid: &GridSpec,
    theta_grid: &GridSpec,
) -> DMatrix<Complex64> {
    let (m, dim) = (y_grid.points, y_grid.dim);
    let (r, dy) = (y_grid.radius, y_grid.spacing());
    let (big_t, dt) = (theta_grid.radius, theta_grid.spacing());
    let pre: Vec<Complex64> = (0..m)
        .map(|k| Complex64::from_polar(1.0, k as f64 * r * dt))
        .collect();
    let post: Vec<Complex64> = (0..m)
        .map(|j| Complex64::from_polar(1.0, j as f64 * dy * big_t - r * big_t))
        .collect();
    let multi = |mut idx: usize, table: &[Complex64]| {
        let mut z = Complex64::new(1.0, 0.0);
        for _ in 0..dim {
            z *= table[idx % m];
            idx /= m;
        }
        z
    };
    let len = y_grid.len();
    let rows: Vec<Vec<Complex64>> = (0..mult.nrows())
        .into_par_iter()
        .map_init(FftPlanner::new, |planner, i| {
            let mut buf: Vec<Complex64> = (0..len).map(|k| mult[(i, k)] * multi(k, &pre)).collect();
            fft_nd(&mut buf, m, dim, planner);
            buf.iter()
                .enumerate()
                .map(|(j, v)| v * multi(j, &post))
                .collect()
        })
        .collect();
    DMatrix::from_fn(mult.nrows(), len, |i, j| rows[i][j])
}

fn fold_weights(k: &mut DMatrix<Complex64>, rw: &[f64], cw: &[f64]) {
    let rs: Vec<f64> = rw.iter().map(|w| w.sqrt()).collect();
    let cs: Vec<f64> = cw.iter().map(|w| w.sqrt()).collect();
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            k[(i, j)] *= rs[i] * cs[j];
        }
    }
}

/// Dense matrix of `F` from `y_grid` samples to `x_grid` samples.
pub fn discretize_fio(
    s: &GeneratingFunction,
    a: &SymbolField,
    x_grid: &GridSpec,
    y_grid: &GridSpec,
    theta_grid: &GridSpec,
    cfg: &BuildConfig,
) -> Result<DiscreteOperator> {
    check_dims(s, a, &[x_grid, y_grid, theta_grid])?;
    let mut kernel = match cfg.route {
        Route::Kernel => {
            let mult = multiplier(s, a, x_grid, theta_grid, cfg.taper);
            mult * fourier_matrix(theta_grid, y_grid)
        }
        Route::Spectral => {
            if !y_grid.is_dual_of(theta_grid) {
                return Err(Error::NotDftAligned);
            }
            let mult = multiplier(s, a, x_grid, theta_grid, 0.0);
            spectral_kernel(&mult, y_grid, theta_grid)
        }
        other => {
            return Err(Error::UnsupportedKind(format!("{other:?} is not a builder")))
        }
    };
    let (rw, cw) = (grid_weights(x_grid), grid_weights(y_grid));
    fold_weights(&mut kernel, &rw, &cw);
    let hash = hash_json(&(
        s.describe(),
        a.describe(),
        x_grid,
        y_grid,
        theta_grid,
        cfg,
    ));
    Ok(DiscreteOperator {
        matrix: kernel,
        row_grid: x_grid.clone(),
        col_grid: y_grid.clone(),
        row_weights: rw,
        col_weights: cw,
        provenance: Provenance {
            route: cfg.route,
            config_hash: hash,
        },
    })
}

/// `K_{FF*}(x, x̃) = ∫ e^{i(S(x,θ) − S(x̃,θ))} a(x,θ) conj(a(x̃,θ)) d̂θ`.
pub fn ffstar_kernel_direct(
    s: &GeneratingFunction,
    a: &SymbolField,
    x: &[f64],
    x_tilde: &[f64],
    theta_grid: &GridSpec,
) -> Result<Complex64> {
    let n = s.n();
    check_dims(s, a, &[theta_grid])?;
    if x.len() != n || x_tilde.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len().min(x_tilde.len()),
        });
    }
    let c = theta_grid.cell_volume() / (2.0 * PI).powi(n as i32);
    let mut p = [x, &vec![0.0; n]].concat();
    let mut q = [x_tilde, &vec![0.0; n]].concat();
    let mut sum = Complex64::new(0.0, 0.0);
    for t in theta_grid.nodes() {
        p[n..].copy_from_slice(&t);
        q[n..].copy_from_slice(&t);
        sum += Complex64::from_polar(1.0, s.eval(&p) - s.eval(&q)) * a.eval(&p) * a.eval(&q).conj();
    }
    Ok(sum * c)
}

/// Dense `FF*` straight from the double-integral kernel on `x_grid`.
pub fn ffstar_direct(
    s: &GeneratingFunction,
    a: &SymbolField,
    x_grid: &GridSpec,
    theta_grid: &GridSpec,
) -> Result<DiscreteOperator> {
    check_dims(s, a, &[x_grid, theta_grid])?;
    let e = multiplier(s, a, x_grid, theta_grid, 0.0);
    let c = theta_grid.cell_volume() / (2.0 * PI).powi(s.n() as i32);
    // multiplier carries one factor of c; E E^H / c restores a single one.
    let mut k = (&e * e.adjoint()).map(|z| z / c);
    let w = grid_weights(x_grid);
    fold_weights(&mut k, &w, &w);
    Ok(DiscreteOperator {
        matrix: k,
        row_grid: x_grid.clone(),
        col_grid: x_grid.clone(),
        row_weights: w.clone(),
        col_weights: w,
        provenance: Provenance {
            route: Route::Direct,
            config_hash: hash_json(&(s.describe(), a.describe(), x_grid, theta_grid)),
        },
    })
}

const MAGIC: &[u8; 8] = b"FIOLABOP";

#[derive(Serialize, Deserialize)]
struct Header {
    rows: usize,
    cols: usize,
    row_grid: GridSpec,
    col_grid: GridSpec,
    row_weights: Vec<f64>,
    col_weights: Vec<f64>,
    provenance: Provenance,
}

/// Power-iteration cap.
pub const MAX_ITERATIONS: usize = 10_000;

impl DiscreteOperator {
    pub fn zeros(row_grid: &GridSpec, col_grid: &GridSpec) -> Self {
        DiscreteOperator {
            matrix: DMatrix::zeros(row_grid.len(), col_grid.len()),
            row_grid: row_grid.clone(),
            col_grid: col_grid.clone(),
            row_weights: grid_weights(row_grid),
            col_weights: grid_weights(col_grid),
            provenance: Provenance {
                route: Route::Zero,
                config_hash: hash_json(&(row_grid, col_grid)),
            },
        }
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Unweighted kernel value `K(x_i, y_j)`.
    pub fn kernel(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[(i, j)] / (self.row_weights[i] * self.col_weights[j]).sqrt()
    }

    /// `(Fu)(x_i) = Σ_j K(x_i, y_j) u(y_j) w_j`.
    pub fn apply(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        if u.len() != self.ncols() {
            return Err(Error::GridMismatch(format!(
                "input has {} samples, operator expects {}",
                u.len(),
                self.ncols()
            )));
        }
        let v = DVector::from_iterator(
            u.len(),
            u.iter().zip(&self.col_weights).map(|(z, w)| z * w.sqrt()),
        );
        let out = &self.matrix * v;
        Ok(out
            .iter()
            .zip(&self.row_weights)
            .map(|(z, w)| z / w.sqrt())
            .collect())
    }

    pub fn adjoint(&self) -> DiscreteOperator {
        DiscreteOperator {
            matrix: self.matrix.adjoint(),
            row_grid: self.col_grid.clone(),
            col_grid: self.row_grid.clone(),
            row_weights: self.col_weights.clone(),
            col_weights: self.row_weights.clone(),
            provenance: Provenance {
                route: Route::Adjoint,
                config_hash: hash_json(&("adjoint", &self.provenance)),
            },
        }
    }

    /// `A ∘ B`; `B`'s rows must live on `A`'s column grid.
    pub fn compose(&self, other: &DiscreteOperator) -> Result<DiscreteOperator> {
        if self.col_grid != other.row_grid || self.col_weights != other.row_weights {
            return Err(Error::GridMismatch(format!(
                "cannot compose: inner grids {:?} and {:?}",
                self.col_grid, other.row_grid
            )));
        }
        Ok(DiscreteOperator {
            matrix: &self.matrix * &other.matrix,
            row_grid: self.row_grid.clone(),
            col_grid: other.col_grid.clone(),
            row_weights: self.row_weights.clone(),
            col_weights: other.col_weights.clone(),
            provenance: Provenance {
                route: Route::Compose,
                config_hash: hash_json(&("compose", &self.provenance, &other.provenance)),
            },
        })
    }

    /// Multiplies every entry by `c`.
    pub fn scaled(&self, c: Complex64) -> DiscreteOperator {
        DiscreteOperator {
            matrix: self.matrix.map(|z| z * c),
            ..self.clone()
        }
    }

    /// Weighted inner product `Σ w_i u_i conj(v_i)` on the row grid.
    pub fn row_inner(&self, u: &[Complex64], v: &[Complex64]) -> Complex64 {
        u.iter()
            .zip(v)
            .zip(&self.row_weights)
            .map(|((a, b), w)| a * b.conj() * w)
            .sum()
    }

    /// Weighted inner product on the column grid.
    pub fn col_inner(&self, u: &[Complex64], v: &[Complex64]) -> Complex64 {
        u.iter()
            .zip(v)
            .zip(&self.col_weights)
            .map(|((a, b), w)| a * b.conj() * w)
            .sum()
    }

    /// `‖F‖` as `√λ_max(F*F)` by power iteration, stopping when the
    /// Rayleigh quotient changes by less than `tol` relative.
    pub fn operator_norm(&self, tol: f64) -> Result<f64> {
        let ncols = self.ncols();
        if ncols == 0 || self.matrix.iter().all(|z| z.norm() == 0.0) {
            return Ok(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut v = DVector::from_fn(ncols, |_, _| {
            Complex64::new(1.0 + 0.1 * rng.gen::<f64>(), 0.1 * rng.gen::<f64>())
        });
        v /= Complex64::new(v.norm(), 0.0);
        let ah = self.matrix.adjoint();
        let mut last = 0.0;
        let mut history = Vec::new();
        for _ in 0..MAX_ITERATIONS {
            let w = &ah * (&self.matrix * &v);
            let lambda = v.dotc(&w).re;
            let norm = w.norm();
            if norm == 0.0 {
                return Ok(0.0);
            }
            v = w / Complex64::new(norm, 0.0);
            if (lambda - last).abs() <= tol * lambda.abs() {
                return Ok(lambda.max(0.0).sqrt());
            }
            last = lambda;
            if history.len() < 8 {
                history.push(lambda);
            }
        }
        Err(Error::NonConvergence {
            what: "power iteration".into(),
            residuals: history,
        })
    }

    /// All singular values, nonincreasing, by dense decomposition.
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        let size = self.nrows().max(self.ncols());
        if size > MAX_DENSE_SVD {
            return Err(Error::Validation(format!(
                "dense decomposition limited to {MAX_DENSE_SVD} rows, got {size}"
            )));
        }
        let mut s: Vec<f64> = self.matrix.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        Ok(s)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            rows: self.nrows(),
            cols: self.ncols(),
            row_grid: self.row_grid.clone(),
            col_grid: self.col_grid.clone(),
            row_weights: self.row_weights.clone(),
            col_weights: self.col_weights.clone(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for i in 0..self.nrows() {
            for j in 0..self.ncols() {
                let z = self.matrix[(i, j)];
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DiscreteOperator> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Validation(format!(
                "{}: not an operator file",
                path.display()
            )));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json)?;
        let mut data = vec![0u8; h.rows * h.cols * 16];
        r.read_exact(&mut data)?;
        let f = |k: usize| f64::from_le_bytes(data[8 * k..8 * k + 8].try_into().unwrap());
        let matrix = DMatrix::from_fn(h.rows, h.cols, |i, j| {
            let k = 2 * (i * h.cols + j);
            Complex64::new(f(k), f(k + 1))
        });
        Ok(DiscreteOperator {
            matrix,
            row_grid: h.row_grid,
            col_grid: h.col_grid,
            row_weights: h.row_weights,
            col_weights: h.col_weights,
            provenance: h.provenance,
        })
    }
}

/// Largest matrix side handled by [`DiscreteOperator::singular_values`].
pub const MAX_DENSE_SVD: usize = 2304;

/// Samples of `f` on every node of `grid`.
pub fn sample(grid: &GridSpec, f: impl Fn(&[f64]) -> Complex64) -> Vec<Complex64> {
    grid.nodes().iter().map(|p| f(p)).collect()
}

/// Relative discrete `L²` distance `‖u − v‖ / ‖v‖` with uniform weights.
pub fn relative_l2(u: &[Complex64], v: &[Complex64]) -> f64 {
    let num: f64 = u.iter().zip(v).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = v.iter().map(|b| b.norm_sqr()).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VarSpace;
    use crate::weights::WeightSpec;

    fn gen(src: &str) -> GeneratingFunction {
        GeneratingFunction::parse(src, 1).unwrap()
    }

    fn amp(src: &str) -> SymbolField {
        SymbolField::parse(src, VarSpace::x_theta(1), WeightSpec::constant(1.0, 2), 0.0).unwrap()
    }

    fn grids(m: usize, r: f64) -> (GridSpec, GridSpec) {
        let g = GridSpec::new(1, r, m);
        let d = g.dual();
        (g, d)
    }

    #[test]
    fn kernel_values() {
        let tg = GridSpec::new(1, 8.0, 256);
        let (s, a) = (gen("x*theta"), amp("exp(-theta^2)"));
        let k0 = kernel_eval(&s, &a, &[0.3], &[0.3], &tg, 0.0).unwrap();
        assert!((k0.re - PI.sqrt() / (2.0 * PI)).abs() < 1e-12);
        let k2 = kernel_eval(&s, &a, &[1.0], &[-1.0], &tg, 0.0).unwrap();
        assert!((k2.re - PI.sqrt() * (-1f64).exp() / (2.0 * PI)).abs() < 1e-12);
        assert!(k2.im.abs() < 1e-12);
        let z = kernel_eval(&s, &amp("0"), &[1.0], &[0.0], &tg, 0.1).unwrap();
        assert_eq!(z, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn spectral_identity() {
        let (g, d) = grids(128, 8.0);
        let f = discretize_fio(&gen("x*theta"), &amp("1"), &g, &g, &d, &BuildConfig::spectral()).unwrap();
        let u = sample(&g, |p| Complex64::new((-p[0] * p[0] / 2.0).exp(), 0.0));
        assert!(relative_l2(&f.apply(&u).unwrap(), &u) < 1e-12);
        assert!(matches!(
            discretize_fio(&gen("x*theta"), &amp("1"), &g, &g, &g, &BuildConfig::spectral()),
            Err(Error::NotDftAligned)
        ));
    }

    #[test]
    fn routes_agree() {
        let (g, d) = grids(64, 6.0);
        let (s, a) = (gen("x*theta + theta^2/2"), amp("exp(-theta^2/4)"));
        let k = discretize_fio(&s, &a, &g, &g, &d, &BuildConfig::kernel(0.0)).unwrap();
        let sp = discretize_fio(&s, &a, &g, &g, &d, &BuildConfig::spectral()).unwrap();
        let diff = (&k.matrix - &sp.matrix).norm() / sp.matrix.norm();
        assert!(diff < 1e-10, "{diff}");
        assert_ne!(k.provenance.config_hash, sp.provenance.config_hash);
    }

    #[test]
    fn adjoint_and_persistence() {
        let (g, d) = grids(32, 4.0);
        let f = discretize_fio(&gen("x*theta + x^2/2"), &amp("exp(-theta^2/8)"), &g, &g, &d, &BuildConfig::spectral()).unwrap();
        assert_eq!(f.adjoint().adjoint().matrix, f.matrix);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rand_vec = || -> Vec<Complex64> {
            (0..32).map(|_| Complex64::new(rng.gen(), rng.gen())).collect()
        };
        let (u, v) = (rand_vec(), rand_vec());
        let lhs = f.row_inner(&f.apply(&u).unwrap(), &v);
        let rhs = f.col_inner(&u, &f.adjoint().apply(&v).unwrap());
        assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        f.save(&path).unwrap();
        assert_eq!(DiscreteOperator::load(&path).unwrap(), f);
    }

    #[test]
    fn ffstar_matches_direct() {
        let (g, d) = grids(64, 6.0);
        let (s, a) = (gen("x*theta + theta^2/2 + x^2/3"), amp("exp(-x^2/8 - theta^2/8)"));
        let f = discretize_fio(&s, &a, &g, &g, &d, &BuildConfig::spectral()).unwrap();
        let ff = f.compose(&f.adjoint()).unwrap();
        let direct = ffstar_direct(&s, &a, &g, &d).unwrap();
        assert!((&ff.matrix - &direct.matrix).norm() < 1e-10 * direct.matrix.norm());
        let xs = g.axis();
        for (i, j) in [(3, 40), (32, 32), (50, 10)] {
            let k = ffstar_kernel_direct(&s, &a, &[xs[i]], &[xs[j]], &d).unwrap();
            assert!((ff.kernel(i, j) - k).norm() <= 1e-10 * k.norm().max(1e-3));
        }
    }

    #[test]
    fn norms() {
        let (g, d) = grids(64, 8.0);
        let f = discretize_fio(&gen("x*theta"), &amp("exp(-theta^2)"), &g, &g, &d, &BuildConfig::spectral()).unwrap();
        let nf = f.operator_norm(1e-8).unwrap();
        assert!((nf - 1.0).abs() < 1e-6, "{nf}");
        let sv = f.singular_values().unwrap();
        assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        let fro2: f64 = sv.iter().map(|s| s * s).sum();
        assert!((fro2 - f.frobenius_norm().powi(2)).abs() < 1e-8 * fro2);
        let ff = f.compose(&f.adjoint()).unwrap();
        assert!((ff.operator_norm(1e-8).unwrap() - nf * nf).abs() < 1e-6);
        assert_eq!(DiscreteOperator::zeros(&g, &g).operator_norm(1e-8).unwrap(), 0.0);
        let chirp = discretize_fio(&gen("x*theta + theta^2/2"), &amp("1"), &g, &g, &d, &BuildConfig::spectral()).unwrap();
        assert!((chirp.operator_norm(1e-8).unwrap() - 1.0).abs() < 1e-6);
    }
}
