//! Truncated multivariate Taylor arithmetic.
//!
//! A [`Jet`] holds the Taylor coefficients `c_α` of a smooth function around a
//! point, for every multi-index with `|α| ≤ order`. Arithmetic and composition
//! with univariate functions propagate them exactly, so `∂^α f = α! c_α` is an
//! exact derivative (up to floating point), never a finite difference.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::Arc;

/// Index tables shared by all jets over the same number of variables and
/// maximal order.
pub struct JetSpace {
    nvars: usize,
    max_order: usize,
    indices: Vec<Vec<u8>>,
    degree: Vec<usize>,
    lookup: HashMap<Vec<u8>, usize>,
    /// `(a, b, out)` with `deg(out) = deg(a) + deg(b) ≤ max_order`, sorted by `deg(out)`.
    mul_table: Vec<(u32, u32, u32)>,
    /// `mul_end[k]` = number of `mul_table` rows whose output degree is `≤ k`.
    mul_end: Vec<usize>,
    /// `raise[j][i]` = index of `indices[i] + e_j`, when that stays within `max_order`.
    raise: Vec<Vec<Option<usize>>>,
    /// `len_upto[k]` = number of multi-indices of degree `≤ k`.
    len_upto: Vec<usize>,
}

impl fmt::Debug for JetSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JetSpace")
            .field("nvars", &self.nvars)
            .field("max_order", &self.max_order)
            .finish()
    }
}

impl JetSpace {
    pub fn new(nvars: usize, max_order: usize) -> Arc<Self> {
        assert!(nvars >= 1, "jet space needs at least one variable");
        let mut indices: Vec<Vec<u8>> = Vec::new();
        for deg in 0..=max_order {
            let mut cur = vec![0u8; nvars];
            graded(&mut indices, &mut cur, 0, deg);
        }
        let degree: Vec<usize> = indices
            .iter()
            .map(|a| a.iter().map(|&v| v as usize).sum())
            .collect();
        let lookup: HashMap<Vec<u8>, usize> = indices
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        let mut mul_table = Vec::new();
        for (ia, a) in indices.iter().enumerate() {
            for (ib, b) in indices.iter().enumerate() {
                if degree[ia] + degree[ib] > max_order {
                    continue;
                }
                let sum: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                mul_table.push((ia as u32, ib as u32, lookup[&sum] as u32));
            }
        }
        mul_table.sort_by_key(|&(_, _, o)| (degree[o as usize], o));
        let mul_end = (0..=max_order)
            .map(|k| {
                mul_table
                    .iter()
                    .take_while(|&&(_, _, o)| degree[o as usize] <= k)
                    .count()
            })
            .collect();
        let raise = (0..nvars)
            .map(|j| {
                indices
                    .iter()
                    .map(|a| {
                        let mut b = a.clone();
                        b[j] += 1;
                        lookup.get(&b).copied()
                    })
                    .collect()
            })
            .collect();
        let len_upto = (0..=max_order)
            .map(|k| degree.iter().filter(|&&d| d <= k).count())
            .collect();
        Arc::new(JetSpace {
            nvars,
            max_order,
            indices,
            degree,
            lookup,
            mul_table,
            mul_end,
            raise,
            len_upto,
        })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Multi-indices in graded order.
    pub fn multi_indices(&self) -> &[Vec<u8>] {
        &self.indices
    }

    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }
}

fn graded(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, pos: usize, remaining: usize) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining as u8;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for v in (0..=remaining).rev() {
        cur[pos] = v as u8;
        graded(out, cur, pos + 1, remaining - v);
    }
    cur[pos] = 0;
}

/// Truncated Taylor expansion valid through total degree `order`.
#[derive(Clone)]
pub struct Jet {
    space: Arc<JetSpace>,
    coeffs: Vec<f64>,
    order: usize,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("order", &self.order)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl Jet {
    pub fn constant(space: &Arc<JetSpace>, value: f64) -> Self {
        let mut coeffs = vec![0.0; space.len()];
        coeffs[0] = value;
        Jet {
            space: space.clone(),
            coeffs,
            order: space.max_order,
        }
    }

    /// The coordinate function `v_i` expanded around `value`.
    pub fn variable(space: &Arc<JetSpace>, i: usize, value: f64) -> Self {
        let mut jet = Jet::constant(space, value);
        if space.max_order >= 1 {
            let mut alpha = vec![0u8; space.nvars];
            alpha[i] = 1;
            let idx = space.lookup[&alpha];
            jet.coeffs[idx] = 1.0;
        }
        jet
    }

    /// Seeds all coordinates of a point at once.
    pub fn variables(space: &Arc<JetSpace>, point: &[f64]) -> Vec<Jet> {
        assert_eq!(point.len(), space.nvars, "point dimension mismatch");
        point
            .iter()
            .enumerate()
            .map(|(i, &v)| Jet::variable(space, i, v))
            .collect()
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs[..self.space.len_upto[self.order]]
    }

    /// Taylor coefficient `c_α`; `None` when `|α|` exceeds the valid order.
    pub fn coeff(&self, alpha: &[u8]) -> Option<f64> {
        let idx = self.space.index_of(alpha)?;
        (self.space.degree[idx] <= self.order).then(|| self.coeffs[idx])
    }

    /// Exact partial derivative `∂^α f` at the expansion point.
    pub fn derivative(&self, alpha: &[u8]) -> Option<f64> {
        let fact: f64 = alpha
            .iter()
            .map(|&a| (1..=a as u64).product::<u64>() as f64)
            .product();
        self.coeff(alpha).map(|c| c * fact)
    }

    /// Gradient (first derivatives) at the expansion point.
    pub fn gradient(&self) -> Vec<f64> {
        (0..self.space.nvars).map(|j| self.partial_value(j)).collect()
    }

    fn partial_value(&self, j: usize) -> f64 {
        match self.space.raise[j][0] {
            Some(idx) if self.order >= 1 => self.coeffs[idx],
            _ => 0.0,
        }
    }

    /// Lowers the valid order, zeroing coefficients above it.
    pub fn truncate(mut self, order: usize) -> Self {
        if order < self.order {
            let keep = self.space.len_upto[order];
            self.coeffs[keep..].iter_mut().for_each(|c| *c = 0.0);
            self.order = order;
        }
        self
    }

    /// `∂f/∂v_j`, valid through `order - 1`.
    pub fn d(&self, j: usize) -> Jet {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let new_order = self.order - 1;
        let mut coeffs = vec![0.0; self.space.len()];
        for (i, c) in coeffs
            .iter_mut()
            .enumerate()
            .take(self.space.len_upto[new_order])
        {
            if let Some(up) = self.space.raise[j][i] {
                let power = self.space.indices[up][j] as f64;
                *c = power * self.coeffs[up];
            }
        }
        Jet {
            space: self.space.clone(),
            coeffs,
            order: new_order,
        }
    }

    pub fn scale(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out
    }

    pub fn add_const(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += s;
        out
    }

    /// Evaluates `g(self)` given the Taylor coefficients `g^{(j)}(u0)/j!`
    /// of a univariate `g` at `u0 = self.value()`.
    pub fn compose(&self, taylor: &[f64]) -> Jet {
        let k = self.order.min(taylor.len().saturating_sub(1));
        let mut delta = self.clone().truncate(k);
        delta.coeffs[0] = 0.0;
        let mut acc = Jet::constant(&self.space, taylor[k]).truncate(k);
        for j in (0..k).rev() {
            acc = &acc * &delta;
            acc.coeffs[0] += taylor[j];
        }
        acc
    }

    pub fn recip(&self) -> Jet {
        let u0 = self.value();
        let taylor: Vec<f64> = (0..=self.order)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign / u0.powi(j as i32 + 1)
            })
            .collect();
        self.compose(&taylor)
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let taylor: Vec<f64> = factorial_scaled((0..=self.order).map(|_| e));
        self.compose(&taylor)
    }

    pub fn ln(&self) -> Jet {
        let u0 = self.value();
        let taylor: Vec<f64> = (0..=self.order)
            .map(|j| {
                if j == 0 {
                    u0.ln()
                } else {
                    let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                    sign / (j as f64 * u0.powi(j as i32))
                }
            })
            .collect();
        self.compose(&taylor)
    }

    /// `self^p` for real `p`. Integer exponents are exact polynomials and
    /// valid at any base; fractional ones need a positive base.
    pub fn powf(&self, p: f64) -> Jet {
        if p == 0.0 {
            return Jet::constant(&self.space, 1.0).truncate(self.order);
        }
        if p.fract() == 0.0 && p > 0.0 && p <= 16.0 {
            let mut acc = self.clone();
            for _ in 1..(p as usize) {
                acc = &acc * self;
            }
            return acc;
        }
        let u0 = self.value();
        let mut taylor = Vec::with_capacity(self.order + 1);
        let mut falling = 1.0;
        for j in 0..=self.order {
            taylor.push(falling * u0.powf(p - j as f64));
            falling *= p - j as f64;
        }
        let taylor = factorial_scaled(taylor.into_iter());
        self.compose(&taylor)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let taylor = factorial_scaled((0..=self.order).map(|j| cycle[j % 4]));
        self.compose(&taylor)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        let taylor = factorial_scaled((0..=self.order).map(|j| cycle[j % 4]));
        self.compose(&taylor)
    }

    /// `e^{-1/u}` for `u > 0`, zero otherwise (the flat building block of
    /// smooth cutoffs).
    pub fn flat_exp(&self) -> Jet {
        self.compose(&flat_exp_taylor(self.value(), self.order))
    }

    /// The cutoff `χ`: `1` on `[-1, 1]`, `0` outside `[-2, 2]`, smooth and
    /// monotone in between.
    pub fn bump(&self) -> Jet {
        self.compose(&bump_taylor(self.value(), self.order))
    }

    fn binary(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        debug_assert!(Arc::ptr_eq(&self.space, &other.space));
        let order = self.order.min(other.order);
        let len = self.space.len_upto[order];
        let mut coeffs = vec![0.0; self.space.len()];
        for i in 0..len {
            coeffs[i] = f(self.coeffs[i], other.coeffs[i]);
        }
        Jet {
            space: self.space.clone(),
            coeffs,
            order,
        }
    }
}

fn factorial_scaled(derivs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut fact = 1.0;
    derivs
        .enumerate()
        .map(|(j, d)| {
            if j > 0 {
                fact *= j as f64;
            }
            d / fact
        })
        .collect()
}

/// Taylor coefficients of `e^{-1/u}` at `u0`, through degree `order`.
pub fn flat_exp_taylor(u0: f64, order: usize) -> Vec<f64> {
    if u0 <= 0.0 {
        return vec![0.0; order + 1];
    }
    let s = 1.0 / u0;
    let base = (-s).exp();
    // d^j/du^j e^{-1/u} = e^{-1/u} P_j(1/u),  P_{j+1}(s) = s^2 (P_j(s) - P_j'(s))
    let mut poly = vec![1.0];
    let mut derivs = Vec::with_capacity(order + 1);
    for _ in 0..=order {
        let val = poly.iter().rev().fold(0.0, |acc, &c| acc * s + c);
        derivs.push(base * val);
        let mut next = vec![0.0; poly.len() + 2];
        for (k, &c) in poly.iter().enumerate() {
            next[k + 2] += c;
            if k > 0 {
                next[k + 1] -= k as f64 * c;
            }
        }
        poly = next;
    }
    factorial_scaled(derivs.into_iter())
}

/// Taylor coefficients of the cutoff `χ(t) = s(2-|t|) / (s(2-|t|) + s(|t|-1))`
/// with `s(u) = e^{-1/u}`.
pub fn bump_taylor(t0: f64, order: usize) -> Vec<f64> {
    let sign = if t0 < 0.0 { -1.0 } else { 1.0 };
    let a = t0.abs();
    if a <= 1.0 {
        let mut out = vec![0.0; order + 1];
        out[0] = 1.0;
        return out;
    }
    if a >= 2.0 {
        return vec![0.0; order + 1];
    }
    let space = univariate_space(order);
    let t = Jet::variable(&space, 0, a);
    let left = t.scale(-1.0).add_const(2.0).flat_exp();
    let right = t.add_const(-1.0).flat_exp();
    let chi = &left * &(&left + &right).recip();
    // χ is even, so mirror odd coefficients for negative arguments.
    chi.coeffs()
        .iter()
        .enumerate()
        .map(|(j, &c)| if j % 2 == 1 { sign * c } else { c })
        .collect()
}

fn univariate_space(order: usize) -> Arc<JetSpace> {
    thread_local! {
        static SPACES: std::cell::RefCell<Vec<Option<Arc<JetSpace>>>> =
            const { std::cell::RefCell::new(Vec::new()) };
    }
    SPACES.with(|cache| {
        let mut cache = cache.borrow_mut();
        if cache.len() <= order {
            cache.resize(order + 1, None);
        }
        cache[order]
            .get_or_insert_with(|| JetSpace::new(1, order))
            .clone()
    })
}

/// Scalar evaluation of the cutoff `χ`.
pub fn bump(t: f64) -> f64 {
    bump_taylor(t, 0)[0]
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        self.binary(rhs, |a, b| a + b)
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self.binary(rhs, |a, b| a - b)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        debug_assert!(Arc::ptr_eq(&self.space, &rhs.space));
        let order = self.order.min(rhs.order);
        let mut coeffs = vec![0.0; self.space.len()];
        for &(a, b, o) in &self.space.mul_table[..self.space.mul_end[order]] {
            coeffs[o as usize] += self.coeffs[a as usize] * rhs.coeffs[b as usize];
        }
        Jet {
            space: self.space.clone(),
            coeffs,
            order,
        }
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl AddAssign<&Jet> for Jet {
    fn add_assign(&mut self, rhs: &Jet) {
        let order = self.order.min(rhs.order);
        let len = self.space.len_upto[order];
        for i in 0..len {
            self.coeffs[i] += rhs.coeffs[i];
        }
        if order < self.order {
            *self = std::mem::replace(self, Jet::constant(&rhs.space, 0.0)).truncate(order);
        }
    }
}

macro_rules! owned_ops {
    ($($tr:ident :: $m:ident),*) => {$(
        impl $tr for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet { (&self).$m(&rhs) }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet { (&self).$m(rhs) }
        }
    )*};
}
owned_ops!(Add::add, Sub::sub, Mul::mul);

/// A complex-valued jet stored as real and imaginary parts.
#[derive(Clone, Debug)]
pub struct ComplexJet {
    pub re: Jet,
    pub im: Jet,
}

impl ComplexJet {
    pub fn real(re: Jet) -> Self {
        let im = Jet::constant(re.space(), 0.0).truncate(re.order());
        ComplexJet { re, im }
    }

    pub fn order(&self) -> usize {
        self.re.order().min(self.im.order())
    }

    pub fn value(&self) -> num_complex::Complex64 {
        num_complex::Complex64::new(self.re.value(), self.im.value())
    }

    pub fn mul_real(&self, r: &Jet) -> ComplexJet {
        ComplexJet {
            re: &self.re * r,
            im: &self.im * r,
        }
    }

    pub fn mul(&self, other: &ComplexJet) -> ComplexJet {
        ComplexJet {
            re: &(&self.re * &other.re) - &(&self.im * &other.im),
            im: &(&self.re * &other.im) + &(&self.im * &other.re),
        }
    }

    /// Multiplication by `i`.
    pub fn times_i(&self) -> ComplexJet {
        ComplexJet {
            re: -&self.im,
            im: self.re.clone(),
        }
    }

    pub fn d(&self, j: usize) -> ComplexJet {
        ComplexJet {
            re: self.re.d(j),
            im: self.im.d(j),
        }
    }

    pub fn add(&self, other: &ComplexJet) -> ComplexJet {
        ComplexJet {
            re: &self.re + &other.re,
            im: &self.im + &other.im,
        }
    }

    pub fn truncate(self, order: usize) -> ComplexJet {
        ComplexJet {
            re: self.re.truncate(order),
            im: self.im.truncate(order),
        }
    }

    /// True when every valid coefficient is below `tol` in magnitude.
    pub fn is_negligible(&self, tol: f64) -> bool {
        self.re.coeffs().iter().all(|c| c.abs() < tol)
            && self.im.coeffs().iter().all(|c| c.abs() < tol)
    }
}
