//! Periodic 3-D lattice and discrete calculus.
//!
//! Fields are collocated on the nodes of a uniform periodic grid. The only
//! difference operator is the second-order centered stencil
//!
//! ```text
//! D_a f(x) = (f(x + dx_a e_a) - f(x - dx_a e_a)) / (2 dx_a)
//! ```
//!
//! which is exactly skew-adjoint under the grid inner product and commutes
//! with itself across axes. Every discrete integration-by-parts identity the
//! scheme relies on follows from those two facts.
//!
//! Reductions (`integrate`, `inner`) use a fixed pairwise summation order so
//! that results do not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::GridError;

/// Below this many points pointwise loops run sequentially.
pub(crate) const PAR_THRESHOLD: usize = 4096;

/// Uniform periodic grid on the torus `[0, L_1) x [0, L_2) x [0, L_3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    n: [usize; 3],
    len: [f64; 3],
    dx: [f64; 3],
}

impl GridSpec {
    /// Smallest admissible number of points per axis.
    pub const MIN_POINTS: usize = 4;

    pub fn new(n: [usize; 3], len: [f64; 3]) -> Result<Self, GridError> {
        for a in 0..3 {
            if n[a] < Self::MIN_POINTS {
                return Err(GridError::TooFewPoints {
                    axis: a + 1,
                    n: n[a],
                });
            }
            if !(len[a].is_finite() && len[a] > 0.0) {
                return Err(GridError::BadLength {
                    axis: a + 1,
                    len: len[a],
                });
            }
        }
        let dx = [
            len[0] / n[0] as f64,
            len[1] / n[1] as f64,
            len[2] / n[2] as f64,
        ];
        Ok(Self { n, len, dx })
    }

    /// Cubic grid with `n` points per axis on the unit torus.
    pub fn unit_cube(n: usize) -> Result<Self, GridError> {
        Self::new([n; 3], [1.0; 3])
    }

    pub fn n(&self) -> [usize; 3] {
        self.n
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.len
    }

    pub fn dx(&self) -> [f64; 3] {
        self.dx
    }

    pub fn max_dx(&self) -> f64 {
        self.dx[0].max(self.dx[1]).max(self.dx[2])
    }

    pub fn num_points(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx[0] * self.dx[1] * self.dx[2]
    }

    pub fn domain_volume(&self) -> f64 {
        self.len[0] * self.len[1] * self.len[2]
    }

    /// Linear index of node `(i, j, k)`; axis 1 varies slowest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n[1] + j) * self.n[2] + k
    }

    #[inline]
    pub fn coords(&self, p: usize) -> [usize; 3] {
        let k = p % self.n[2];
        let ij = p / self.n[2];
        [ij / self.n[1], ij % self.n[1], k]
    }

    /// Physical position of node `p`.
    #[inline]
    pub fn position(&self, p: usize) -> [f64; 3] {
        let c = self.coords(p);
        [
            c[0] as f64 * self.dx[0],
            c[1] as f64 * self.dx[1],
            c[2] as f64 * self.dx[2],
        ]
    }

    /// Indices of the `+1` and `-1` neighbours of `p` along `axis` (0-based), with wrap-around.
    #[inline]
    pub fn neighbours(&self, p: usize, axis: usize) -> (usize, usize) {
        let c = self.coords(p);
        let n = self.n[axis];
        let mut up = c;
        let mut down = c;
        up[axis] = if c[axis] + 1 == n { 0 } else { c[axis] + 1 };
        down[axis] = if c[axis] == 0 { n - 1 } else { c[axis] - 1 };
        (
            self.index(up[0], up[1], up[2]),
            self.index(down[0], down[1], down[2]),
        )
    }
}

/// Grid function with `C` real components per node, stored point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<const C: usize> {
    grid: GridSpec,
    data: Vec<f64>,
}

pub type ScalarField = Field<1>;
pub type VectorField = Field<3>;
/// 3x3 tensor per node, row-major: component `3 i + a` holds `T_{i a}`.
pub type TensorField = Field<9>;
/// Extended variable per node: `F` (9, row-major), `zeta` (9, row-major), `w` (1).
pub type ExtField = Field<19>;

impl<const C: usize> Field<C> {
    pub const COMPONENTS: usize = C;

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.num_points() * C],
        }
    }

    pub fn constant(grid: GridSpec, value: [f64; C]) -> Self {
        let mut data = Vec::with_capacity(grid.num_points() * C);
        for _ in 0..grid.num_points() {
            data.extend_from_slice(&value);
        }
        Self { grid, data }
    }

    pub fn from_vec(grid: GridSpec, data: Vec<f64>) -> Result<Self, GridError> {
        let expected = grid.num_points() * C;
        if data.len() != expected {
            return Err(GridError::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self { grid, data })
    }

    /// Samples `f` at every node position.
    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> [f64; C] + Sync) -> Self {
        let mut out = Self::zeros(grid);
        out.map_points_mut(|p, v| *v = f(grid.position(p)));
        out
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn num_points(&self) -> usize {
        self.grid.num_points()
    }

    #[inline]
    pub fn at(&self, p: usize) -> [f64; C] {
        let mut out = [0.0; C];
        out.copy_from_slice(&self.data[p * C..(p + 1) * C]);
        out
    }

    #[inline]
    pub fn point(&self, p: usize) -> &[f64] {
        &self.data[p * C..(p + 1) * C]
    }

    #[inline]
    pub fn set(&mut self, p: usize, value: [f64; C]) {
        self.data[p * C..(p + 1) * C].copy_from_slice(&value);
    }

    pub fn component(&self, c: usize) -> ScalarField {
        let data = self.data.iter().skip(c).step_by(C).copied().collect();
        Field {
            grid: self.grid,
            data,
        }
    }

    /// Applies `f` to every node in place; `f` receives the node index and its components.
    pub fn map_points_mut(&mut self, f: impl Fn(usize, &mut [f64; C]) + Sync) {
        let body = |(p, chunk): (usize, &mut [f64])| {
            let v: &mut [f64; C] = chunk.try_into().expect("chunk has C entries");
            f(p, v);
        };
        if self.grid.num_points() >= PAR_THRESHOLD {
            self.data.par_chunks_mut(C).enumerate().for_each(body);
        } else {
            self.data.chunks_mut(C).enumerate().for_each(body);
        }
    }

    /// Builds a new field from a pointwise function of the node index.
    pub fn tabulate(grid: GridSpec, f: impl Fn(usize) -> [f64; C] + Sync) -> Self {
        let mut out = Self::zeros(grid);
        out.map_points_mut(|p, v| *v = f(p));
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) {
        debug_assert_eq!(self.grid, other.grid);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += s * b);
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Discrete L2 norm, `sqrt(inner(self, self))`.
    pub fn norm(&self) -> f64 {
        inner(self, self).sqrt()
    }

    /// Centered periodic difference along `axis` (1-based), componentwise.
    pub fn diff(&self, axis: usize) -> Result<Self, GridError> {
        if !(1..=3).contains(&axis) {
            return Err(GridError::BadAxis(axis));
        }
        Ok(self.diff0(axis - 1))
    }

    /// Same as [`Field::diff`] with a 0-based axis that is known to be valid.
    pub(crate) fn diff0(&self, a: usize) -> Self {
        let grid = self.grid;
        let two_dx = 2.0 * grid.dx[a];
        let src = &self.data;
        let mut out = Self::zeros(grid);
        out.map_points_mut(|p, v| {
            let (up, down) = grid.neighbours(p, a);
            for c in 0..C {
                v[c] = (src[up * C + c] - src[down * C + c]) / two_dx;
            }
        });
        out
    }
}

/// Deterministic pairwise sum of `f(0) + ... + f(n-1)`.
pub fn pairwise_sum_by(n: usize, f: &impl Fn(usize) -> f64) -> f64 {
    fn rec(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        const BLOCK: usize = 32;
        if hi - lo <= BLOCK {
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, f)
}

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise_sum_by(xs.len(), &|i| xs[i])
}

/// `vol * sum_points f`.
pub fn integrate(f: &ScalarField) -> f64 {
    f.grid.cell_volume() * pairwise_sum(&f.data)
}

/// `vol * sum_points sum_components f g`.
pub fn inner<const C: usize>(f: &Field<C>, g: &Field<C>) -> f64 {
    assert_eq!(f.grid, g.grid, "inner: fields live on different grids");
    let (a, b) = (&f.data, &g.data);
    f.grid.cell_volume() * pairwise_sum_by(a.len(), &|i| a[i] * b[i])
}

/// Integral of a pointwise function of the node index.
pub fn integrate_by(grid: &GridSpec, f: impl Fn(usize) -> f64) -> f64 {
    grid.cell_volume() * pairwise_sum_by(grid.num_points(), &f)
}

/// `(gradient v)_{i a} = D_a v_i`.
pub fn gradient(v: &VectorField) -> TensorField {
    let grid = *v.grid();
    let d = [v.diff0(0), v.diff0(1), v.diff0(2)];
    TensorField::tabulate(grid, |p| {
        let mut t = [0.0; 9];
        for i in 0..3 {
            for a in 0..3 {
                t[3 * i + a] = d[a].data[p * 3 + i];
            }
        }
        t
    })
}

/// `(divergence T)_i = sum_a D_a T_{i a}`.
pub fn divergence(t: &TensorField) -> VectorField {
    let grid = *t.grid();
    let d = [t.diff0(0), t.diff0(1), t.diff0(2)];
    VectorField::tabulate(grid, |p| {
        let mut out = [0.0; 3];
        for i in 0..3 {
            for a in 0..3 {
                out[i] += d[a].data[p * 9 + 3 * i + a];
            }
        }
        out
    })
}

/// Largest L2 norm of `D_a F_{i b} - D_b F_{i a}` over `i` and `a < b`.
///
/// Zero (up to roundoff) whenever `F` is a discrete gradient.
pub fn curl_residual(f: &TensorField) -> f64 {
    let grid = *f.grid();
    let d = [f.diff0(0), f.diff0(1), f.diff0(2)];
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for a in 0..3 {
            for b in (a + 1)..3 {
                let sq = integrate_by(&grid, |p| {
                    let r = d[a].data[p * 9 + 3 * i + b] - d[b].data[p * 9 + 3 * i + a];
                    r * r
                });
                worst = worst.max(sq.sqrt());
            }
        }
    }
    worst
}
