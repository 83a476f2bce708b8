//! The null-Lagrangian vector `Phi(F) = (F, cof F, det F)` and its derivative.
//!
//! Component layout of the 19-vector (also used for every [`ExtField`]):
//! `F` row-major in `0..9`, `cof F` row-major in `9..18`, `det F` at `18`.

use crate::grid::{integrate_by, Field, ScalarField, TensorField, VectorField};
use crate::ExtField;

pub type Mat3 = [[f64; 3]; 3];
pub type Ext = [f64; EXT_DIM];
/// `T[B][a] = sum_i dPhi^B/dF_{i a} v_i`.
pub type PairingTable = [[f64; 3]; EXT_DIM];

pub const EXT_DIM: usize = 19;
pub const F_OFFSET: usize = 0;
pub const COF_OFFSET: usize = 9;
pub const DET_INDEX: usize = 18;

/// The six non-zero Levi-Civita entries `(i, j, k, sign)`.
const LEVI_CIVITA: [(usize, usize, usize, f64); 6] = [
    (0, 1, 2, 1.0),
    (1, 2, 0, 1.0),
    (2, 0, 1, 1.0),
    (0, 2, 1, -1.0),
    (2, 1, 0, -1.0),
    (1, 0, 2, -1.0),
];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[inline]
pub fn mat_from_slice(s: &[f64]) -> Mat3 {
    [[s[0], s[1], s[2]], [s[3], s[4], s[5]], [s[6], s[7], s[8]]]
}

#[inline]
pub fn mat_to_array(m: &Mat3) -> [f64; 9] {
    [
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    ]
}

pub fn frobenius(m: &Mat3) -> f64 {
    m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cofactor matrix, `cof(F)_{i a} = 1/2 eps_{ijk} eps_{abc} F_{jb} F_{kc}`.
#[inline]
pub fn cof(f: &Mat3) -> Mat3 {
    [
        [
            f[1][1] * f[2][2] - f[1][2] * f[2][1],
            f[1][2] * f[2][0] - f[1][0] * f[2][2],
            f[1][0] * f[2][1] - f[1][1] * f[2][0],
        ],
        [
            f[0][2] * f[2][1] - f[0][1] * f[2][2],
            f[0][0] * f[2][2] - f[0][2] * f[2][0],
            f[0][1] * f[2][0] - f[0][0] * f[2][1],
        ],
        [
            f[0][1] * f[1][2] - f[0][2] * f[1][1],
            f[0][2] * f[1][0] - f[0][0] * f[1][2],
            f[0][0] * f[1][1] - f[0][1] * f[1][0],
        ],
    ]
}

#[inline]
pub fn det(f: &Mat3) -> f64 {
    f[0][0] * (f[1][1] * f[2][2] - f[1][2] * f[2][1])
        - f[0][1] * (f[1][0] * f[2][2] - f[1][2] * f[2][0])
        + f[0][2] * (f[1][0] * f[2][1] - f[1][1] * f[2][0])
}

/// `Phi(F) = (F, cof F, det F)`.
pub fn phi(f: &Mat3) -> Ext {
    let mut out = [0.0; EXT_DIM];
    let c = cof(f);
    for i in 0..3 {
        for a in 0..3 {
            out[F_OFFSET + 3 * i + a] = f[i][a];
            out[COF_OFFSET + 3 * i + a] = c[i][a];
        }
    }
    out[DET_INDEX] = det(f);
    out
}

/// Contracts `dPhi/dF(F0)` with `v` over the row index `i`.
pub fn dphi_apply(f0: &Mat3, v: &[f64; 3]) -> PairingTable {
    let mut t = [[0.0; 3]; EXT_DIM];
    for k in 0..3 {
        for g in 0..3 {
            t[F_OFFSET + 3 * k + g][g] = v[k];
        }
    }
    // d cof_{kc} / dF_{ia} = eps_{ijk} eps_{abc} F_{jb}
    for &(i, j, k, s1) in &LEVI_CIVITA {
        for &(a, b, c, s2) in &LEVI_CIVITA {
            t[COF_OFFSET + 3 * k + c][a] += s1 * s2 * f0[j][b] * v[i];
        }
    }
    let c = cof(f0);
    for a in 0..3 {
        t[DET_INDEX][a] = c[0][a] * v[0] + c[1][a] * v[1] + c[2][a] * v[2];
    }
    t
}

/// Transpose of [`dphi_apply`]: `out_i = sum_{B, a} dPhi^B/dF_{i a}(F0) g[B][a]`.
pub fn dphi_contract(f0: &Mat3, g: &PairingTable) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        for a in 0..3 {
            out[i] += g[F_OFFSET + 3 * i + a][a];
        }
    }
    for &(i, j, k, s1) in &LEVI_CIVITA {
        for &(a, b, c, s2) in &LEVI_CIVITA {
            out[i] += s1 * s2 * f0[j][b] * g[COF_OFFSET + 3 * k + c][a];
        }
    }
    let c = cof(f0);
    for i in 0..3 {
        for a in 0..3 {
            out[i] += c[i][a] * g[DET_INDEX][a];
        }
    }
    out
}

/// Pointwise pairing tables of `F0` with `v`, as a 57-component field laid out `[3 B + a]`.
pub(crate) fn pairing_field(f0: &TensorField, v: &VectorField) -> Field<57> {
    Field::<57>::tabulate(*f0.grid(), |p| {
        let t = dphi_apply(&mat_from_slice(f0.point(p)), &v.at(p));
        let mut flat = [0.0; 57];
        for (b, row) in t.iter().enumerate() {
            flat[3 * b..3 * b + 3].copy_from_slice(row);
        }
        flat
    })
}

/// `out^B = sum_a D_a T[B][a]` for a 57-component pairing field.
pub(crate) fn div_rows(table: &Field<57>) -> ExtField {
    let grid = *table.grid();
    let two_dx = grid.dx().map(|d| 2.0 * d);
    let src = table.as_slice();
    ExtField::tabulate(grid, |p| {
        let mut out = [0.0; EXT_DIM];
        for a in 0..3 {
            let (up, down) = grid.neighbours(p, a);
            for (b, o) in out.iter_mut().enumerate() {
                let c = 3 * b + a;
                *o += (src[up * 57 + c] - src[down * 57 + c]) / two_dx[a];
            }
        }
        out
    })
}

/// `Phi(F)` evaluated at every node.
pub fn phi_field(f: &TensorField) -> ExtField {
    ExtField::tabulate(*f.grid(), |p| phi(&mat_from_slice(f.point(p))))
}

/// Per block `B`, the L2 norm over grid and `i` of `sum_a D_a (dPhi^B/dF_{i a}(F))`.
///
/// The `F` rows vanish identically; the cofactor rows vanish up to roundoff for
/// discrete gradients (the stencils commute); the determinant row carries the
/// O(dx^2) failure of the discrete product rule.
pub fn piola_residual(f: &TensorField) -> Ext {
    let grid = *f.grid();
    let mut sq = [0.0; EXT_DIM];
    for i in 0..3 {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        let unit = VectorField::constant(grid, e);
        let r = div_rows(&pairing_field(f, &unit));
        for (b, s) in sq.iter_mut().enumerate() {
            *s += integrate_by(&grid, |p| r.at(p)[b].powi(2));
        }
    }
    sq.map(f64::sqrt)
}

/// Summary of [`piola_residual`] by block: `(F rows, cofactor rows, determinant row)`.
pub fn piola_block_norms(res: &Ext) -> (f64, f64, f64) {
    let block = |r: std::ops::Range<usize>| res[r].iter().map(|x| x * x).sum::<f64>().sqrt();
    (block(0..9), block(9..18), res[DET_INDEX].abs())
}

/// Residuals of the transport identities for cof F and det F over one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransportResidual {
    /// `|| (cof F1 - cof F0)/h - D_a(dcof/dF_{ia}(F0) v_i) ||`
    pub cof: f64,
    /// `|| (det F1 - det F0)/h - D_a(cof(F0)_{ia} v_i) ||`
    pub det: f64,
    /// `|| D_a(dcof/dF_{ia}(F0) v_i) - dcof/dF_{ia}(F0) D_a v_i ||`, the frozen-field spatial part.
    pub cof_spatial: f64,
    /// Same as `cof_spatial` for the determinant row.
    pub det_spatial: f64,
}

/// Transport residuals between consecutive deformation gradients `f0 -> f1`
/// driven by velocity `v` over a step of length `h`.
pub fn transport_residual(
    f0: &TensorField,
    f1: &TensorField,
    v: &VectorField,
    h: f64,
) -> TransportResidual {
    let grid = *f0.grid();
    let flux = div_rows(&pairing_field(f0, v));
    let phi0 = phi_field(f0);
    let phi1 = phi_field(f1);
    let dv = crate::grid::gradient(v);
    let local = ExtField::tabulate(grid, |p| {
        // dPhi/dF(F0) : grad v
        let f = mat_from_slice(f0.point(p));
        let g = dv.point(p);
        let mut out = [0.0; EXT_DIM];
        for i in 0..3 {
            let mut e = [0.0; 3];
            e[i] = 1.0;
            let t = dphi_apply(&f, &e);
            for (b, o) in out.iter_mut().enumerate() {
                for a in 0..3 {
                    *o += t[b][a] * g[3 * i + a];
                }
            }
        }
        out
    });
    let norm_block = |fun: &dyn Fn(usize, usize) -> f64, range: std::ops::Range<usize>| {
        integrate_by(&grid, |p| {
            range.clone().map(|b| fun(p, b).powi(2)).sum::<f64>()
        })
        .sqrt()
    };
    let time = |p: usize, b: usize| (phi1.at(p)[b] - phi0.at(p)[b]) / h - flux.at(p)[b];
    let space = |p: usize, b: usize| flux.at(p)[b] - local.at(p)[b];
    TransportResidual {
        cof: norm_block(&time, COF_OFFSET..DET_INDEX),
        det: norm_block(&time, DET_INDEX..EXT_DIM),
        cof_spatial: norm_block(&space, COF_OFFSET..DET_INDEX),
        det_spatial: norm_block(&space, DET_INDEX..EXT_DIM),
    }
}

/// `|| zeta - cof F ||` and `|| w - det F ||` for an extended field.
pub fn extended_drift(xi: &ExtField) -> (f64, f64) {
    let grid = *xi.grid();
    let zeta = integrate_by(&grid, |p| {
        let x = xi.point(p);
        let c = cof(&mat_from_slice(&x[0..9]));
        (0..9)
            .map(|k| (x[COF_OFFSET + k] - c[k / 3][k % 3]).powi(2))
            .sum()
    });
    let w = integrate_by(&grid, |p| {
        let x = xi.point(p);
        (x[DET_INDEX] - det(&mat_from_slice(&x[0..9]))).powi(2)
    });
    (zeta.sqrt(), w.sqrt())
}

/// Splits an extended field into its `F` block.
pub fn f_block(xi: &ExtField) -> TensorField {
    TensorField::tabulate(*xi.grid(), |p| {
        let mut out = [0.0; 9];
        out.copy_from_slice(&xi.point(p)[0..9]);
        out
    })
}

pub fn det_field(f: &TensorField) -> ScalarField {
    ScalarField::tabulate(*f.grid(), |p| [det(&mat_from_slice(f.point(p)))])
}
