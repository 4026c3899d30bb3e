//! Randomized structural properties of the numeric core: algebraic
//! identities the rest of the crate silently relies on.

use proptest::prelude::*;

use homobs::graph::{decompose, Topology};
use homobs::homogeneity::{CanonicalNorm, Dilation};
use homobs::linalg::{self, Matrix};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-1.5f64..1.5, rows * cols)
        .prop_map(move |data| Matrix::try_new(rows, cols, data).expect("finite entries"))
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0f64..5.0, dim)
}

fn euclidean(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn kron_satisfies_the_mixed_product_rule(
        a in matrix(2, 3),
        c in matrix(3, 2),
        b in matrix(3, 2),
        d in matrix(2, 3),
    ) {
        let lhs = linalg::kron(&a, &b).matmul(&linalg::kron(&c, &d));
        let rhs = linalg::kron(&a.matmul(&c), &b.matmul(&d));
        let scale = rhs.max_abs().max(1.0);
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * scale);
    }

    #[test]
    fn mat_exp_is_a_one_parameter_group(
        g in matrix(3, 3),
        s in -1.0f64..1.0,
        t in -1.0f64..1.0,
    ) {
        let both = linalg::mat_exp(&g.scaled(s + t)).unwrap();
        let split = linalg::mat_exp(&g.scaled(s))
            .unwrap()
            .matmul(&linalg::mat_exp(&g.scaled(t)).unwrap());
        let scale = both.max_abs().max(split.max_abs()).max(1.0);
        prop_assert!(both.max_abs_diff(&split) <= 1e-11 * scale);
    }

    #[test]
    fn canonical_norm_respects_the_scaling_identity(
        e in proptest::collection::vec(-0.2f64..0.2, 9),
        x in vector(3),
        s in -2.0f64..2.0,
    ) {
        prop_assume!(euclidean(&x) > 1e-3);
        // A generator close to the identity keeps monotonicity under the
        // identity weight, so every draw is a valid norm.
        let generator = Matrix::identity(3).add(&Matrix::try_new(3, 3, e).unwrap());
        let dilation = Dilation::new(generator).unwrap();
        let norm = CanonicalNorm::new(dilation.clone(), Matrix::identity(3)).unwrap();
        let scaled = dilation.apply(s, &x).unwrap();
        let lhs = norm.eval(&scaled).unwrap();
        let rhs = s.exp() * norm.eval(&x).unwrap();
        prop_assert!(
            (lhs - rhs).abs() <= 1e-8 * rhs.max(1e-6),
            "scaled norm {lhs} vs rescaled norm {rhs}"
        );
    }

    #[test]
    fn weighted_norm_obeys_the_triangle_inequality(
        a in matrix(3, 3),
        x in vector(3),
        y in vector(3),
    ) {
        prop_assume!(euclidean(&x) > 1e-3 && euclidean(&y) > 1e-3);
        let weight = a
            .transpose()
            .matmul(&a)
            .add_scaled(&Matrix::identity(3), 0.5);
        let norm = CanonicalNorm::new(Dilation::euler(3), weight).unwrap();
        let sum: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u + v).collect();
        let lhs = norm.eval(&sum).unwrap();
        let rhs = norm.eval(&x).unwrap() + norm.eval(&y).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-9), "{lhs} > {rhs}");
    }

    #[test]
    fn ring_laplacians_decompose_cleanly(n in 2usize..7) {
        let topology = Topology::ring(n).unwrap();
        let lap = topology.laplacian();
        for i in 0..n {
            let row_sum: f64 = (0..n).map(|j| lap[(i, j)]).sum();
            prop_assert!(row_sum.abs() < 1e-12);
        }
        let dec = decompose(&topology).unwrap();
        prop_assert!((dec.zeta.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(dec.zeta.iter().all(|&z| z > 0.0));
    }
}
