use approx::assert_relative_eq;
use polytherm_core::grid::{curl_residual, inner};
use polytherm_core::varstep::{
    constraint_adjoint, constraint_linear, deformation_gradient, relative_energy,
};
use polytherm_core::*;
use proptest::prelude::*;

fn field<const C: usize>(grid: GridSpec, values: &[f64]) -> Field<C> {
    let n = grid.num_points() * C;
    Field::from_vec(grid, values.iter().cycle().take(n).copied().collect()).unwrap()
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 40..80)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adjoint_identity(u in values(), v in values(), m in values(), n in 4usize..7) {
        let grid = GridSpec::new([n, n + 1, 4], [1.0, 1.3, 0.8]).unwrap();
        let mut u: VectorField = field(grid, &u);
        u.scale(0.05);
        let f0 = deformation_gradient(&u);
        let v: VectorField = field(grid, &v);
        let m: ExtField = field(grid, &m);
        let lhs = inner(&constraint_linear(&f0, &v), &m);
        let rhs = inner(&v, &constraint_adjoint(&f0, &m));
        prop_assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()));
    }

    #[test]
    fn discrete_gradients_are_curl_free(u in values(), n in 4usize..8) {
        let grid = GridSpec::unit_cube(n).unwrap();
        let f = deformation_gradient(&field(grid, &u));
        prop_assert!(curl_residual(&f) <= 1e-12 * f.norm());
    }

    #[test]
    fn relative_energy_controls_distance(a in values(), b in values(), s in 0.0f64..0.3) {
        let grid = GridSpec::unit_cube(4).unwrap();
        let model = PaperEnergy::default();
        let base = InitialData::default().build(grid).unwrap();
        let mut other = base.clone();
        other.v.axpy(s, &field(grid, &a));
        other.xi.axpy(s, &field(grid, &b));
        let up: Vec<f64> = b.iter().map(|x| x.abs()).collect();
        other.eta.axpy(s, &field(grid, &up));
        let rel = relative_energy(&other, &base, &model).unwrap();
        let c = model.convexity_constant().min(1.0);
        let dist = {
            let (dv, dx, de) = (other.v.sub(&base.v), other.xi.sub(&base.xi), other.eta.sub(&base.eta));
            inner(&dv, &dv) + inner(&dx, &dx) + inner(&de, &de)
        };
        prop_assert!(rel >= 0.5 * c * dist * (1.0 - 1e-12) - 1e-15);
    }
}

#[test]
fn quadratic_relative_energy_is_half_distance() {
    let grid = GridSpec::unit_cube(4).unwrap();
    let base = InitialData::default().build(grid).unwrap();
    let mut other = base.clone();
    other.v.scale(2.0);
    other.eta.scale(1.5);
    let rel = relative_energy(&other, &base, &QuadraticEnergy::default()).unwrap();
    let (dv, de) = (other.v.sub(&base.v), other.eta.sub(&base.eta));
    assert_relative_eq!(
        rel,
        0.5 * (inner(&dv, &dv) + inner(&de, &de)),
        max_relative = 1e-12
    );
}
