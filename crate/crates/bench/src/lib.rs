//! Fixtures shared by the benchmarks under `benches/`.

use nalgebra::DMatrix;
use lbras_core::{vector, QPProblem};

/// A deterministic, well-conditioned 2-input QP with a box and two rows.
pub fn qp_instance(k: usize) -> QPProblem {
    let s = |i: usize| ((k * 7 + i) as f64 * 0.7548776662).fract() * 2.0 - 1.0;
    let (a, b, c) = (1.0 + s(0).abs(), 0.3 * s(1), 1.0 + s(2).abs());
    QPProblem {
        p: DMatrix::from_row_slice(2, 2, &[a * a + b * b, b * c, b * c, c * c]),
        q: vector(&[s(3), s(4)]),
        c: 0.0,
        rows: vec![
            (vector(&[s(5), s(6)]), 0.5 + s(7).abs()),
            (vector(&[s(8), -s(9)]), 0.5 + s(10).abs()),
        ],
        lo: vector(&[-1.0, -1.0]),
        hi: vector(&[1.0, 1.0]),
    }
}
