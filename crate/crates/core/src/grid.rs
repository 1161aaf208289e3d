//! Uniform tensor grids on `[-R, R)^dim`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// `points` nodes per axis at `x_j = -R + j·Δ`, `Δ = 2R / points`.
///
/// A `dft_aligned` grid is the frequency dual of another grid with the same
/// point count: `Δx·Δθ = 2π / M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub radius: f64,
    pub points: usize,
    pub dft_aligned: bool,
}

impl GridSpec {
    pub fn new(dim: usize, radius: f64, points: usize) -> Self {
        assert!(dim >= 1 && points >= 1 && radius > 0.0, "invalid grid");
        GridSpec {
            dim,
            radius,
            points,
            dft_aligned: false,
        }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / self.points as f64
    }

    /// The frequency grid paired with this one by the discrete Fourier
    /// transform: spacing `2π/(MΔ)`, radius `π/Δ`.
    pub fn dual(&self) -> GridSpec {
        GridSpec {
            dim: self.dim,
            radius: PI / self.spacing(),
            points: self.points,
            dft_aligned: true,
        }
    }

    /// True when `other` is this grid's DFT dual to rounding.
    pub fn is_dual_of(&self, other: &GridSpec) -> bool {
        self.dim == other.dim
            && self.points == other.points
            && ((self.spacing() * other.spacing()) - 2.0 * PI / self.points as f64).abs()
                <= 1e-12 * 2.0 * PI / self.points as f64
    }

    /// Nyquist frequency of the axis sampling.
    pub fn nyquist(&self) -> f64 {
        PI / self.spacing()
    }

    pub fn axis(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points)
            .map(|j| -self.radius + j as f64 * h)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of every node (`Δ^dim`).
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Node coordinates for flat index `k` (last axis fastest).
    pub fn node(&self, mut k: usize) -> Vec<f64> {
        let h = self.spacing();
        let mut out = vec![0.0; self.dim];
        for d in (0..self.dim).rev() {
            out[d] = -self.radius + (k % self.points) as f64 * h;
            k /= self.points;
        }
        out
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    /// Same radius, doubled point count.
    pub fn refined(&self) -> GridSpec {
        GridSpec {
            points: self.points * 2,
            ..self.clone()
        }
    }
}

/// Cosine roll-off over the outer `fraction` of `[-radius, radius]`: `1` in
/// the interior, falling to `0` at the edge.
pub fn edge_taper(t: f64, radius: f64, fraction: f64) -> f64 {
    let a = t.abs();
    let inner = radius * (1.0 - fraction);
    if a <= inner {
        1.0
    } else if a >= radius {
        0.0
    } else {
        let s = (a - inner) / (radius - inner);
        0.5 * (1.0 + (PI * s).cos())
    }
}

/// Trapezoid nodes and weights on `[-radius, radius]` in a stretched
/// coordinate: spacing about `coarse` away from `zone` and `fine` inside it.
///
/// The stretch `x(u) = u − c w [ln cosh((u−a)/w) − ln cosh((u−b)/w)]` is
/// analytic, so the rule keeps the spectral accuracy of the uniform one.
#[derive(Clone, Debug)]
pub struct GradedAxis {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn ln_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl GradedAxis {
    pub fn uniform(radius: f64, h: f64) -> Self {
        Self::new(radius, h, None, h)
    }

    pub fn new(radius: f64, coarse: f64, zone: Option<(f64, f64)>, fine: f64) -> Self {
        let ratio = (coarse / fine).max(1.0);
        let zone = zone.filter(|(lo, hi)| hi > lo && ratio > 1.0);
        let Some((lo, hi)) = zone else {
            let m = (2.0 * radius / coarse).ceil().max(1.0) as usize;
            let du = 2.0 * radius / m as f64;
            let nodes: Vec<f64> = (0..=m).map(|j| -radius + j as f64 * du).collect();
            let mut weights = vec![du; m + 1];
            weights[0] *= 0.5;
            weights[m] *= 0.5;
            return GradedAxis { nodes, weights };
        };
        let c = 0.5 * (1.0 - 1.0 / ratio);
        let w = 5.0 * coarse;
        let mid = 0.5 * (lo + hi);
        let map = |u: f64, half: f64| {
            let (a, b) = (mid - half, mid + half);
            u - c * w * (ln_cosh((u - a) / w) - ln_cosh((u - b) / w))
        };
        let deriv = |u: f64, half: f64| {
            let (a, b) = (mid - half, mid + half);
            1.0 - c * (((u - a) / w).tanh() - ((u - b) / w).tanh())
        };
        // Half-length in u whose image, shrunk by 2w, covers the zone.
        let target = 0.5 * (hi - lo);
        let reach = |half: f64| map(mid + (half - 2.0 * w).max(0.0), half) - mid;
        let mut hl = (0.0, target * ratio + 4.0 * w + coarse);
        while reach(hl.1) < target {
            hl.1 *= 2.0;
        }
        for _ in 0..100 {
            let m = 0.5 * (hl.0 + hl.1);
            if reach(m) < target {
                hl.0 = m;
            } else {
                hl.1 = m;
            }
        }
        let half = hl.1;
        let solve = |x: f64| {
            let (mut l, mut r) = (x - 2.0 * half - 1.0, x + 2.0 * half + 1.0);
            for _ in 0..200 {
                let m = 0.5 * (l + r);
                if map(m, half) < x {
                    l = m;
                } else {
                    r = m;
                }
            }
            0.5 * (l + r)
        };
        let (ul, ur) = (solve(-radius), solve(radius));
        let m = ((ur - ul) / coarse).ceil().max(1.0) as usize;
        let du = (ur - ul) / m as f64;
        let mut nodes = Vec::with_capacity(m + 1);
        let mut weights = Vec::with_capacity(m + 1);
        for j in 0..=m {
            let u = ul + j as f64 * du;
            let end = if j == 0 || j == m { 0.5 } else { 1.0 };
            nodes.push(map(u, half).clamp(-radius, radius));
            weights.push(end * du * deriv(u, half));
        }
        GradedAxis { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
}
