//! Monomial observable dictionaries.
//!
//! A [`Dictionary`] holds every monomial of total degree at most `max_order`
//! in `q` variables, in graded lexicographic order: the constant first, then
//! the coordinate functions `z_1 .. z_q`, then higher degrees. Within a degree
//! the exponent tuples are sorted in descending lexicographic order, so for
//! `q = 2, max_order = 2` the basis is `(1, z1, z2, z1^2, z1 z2, z2^2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tag written into model files for the basis ordering.
pub const ORDERING_TAG: &str = "graded-lex";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    q: usize,
    max_order: usize,
    exponents: Vec<Vec<u32>>,
}

/// Serialized form of a dictionary. Exponent tables are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub q: usize,
    pub max_order: usize,
    pub ordering: String,
}

impl Dictionary {
    pub fn new(q: usize, max_order: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("dictionary needs at least one observable"));
        }
        let mut exponents = Vec::with_capacity(binomial(q + max_order, max_order));
        let mut current = vec![0u32; q];
        for degree in 0..=max_order {
            push_degree(&mut exponents, &mut current, 0, degree as u32);
        }
        Ok(Dictionary {
            q,
            max_order,
            exponents,
        })
    }

    pub fn from_spec(spec: &DictionarySpec) -> Result<Self> {
        if spec.ordering != ORDERING_TAG {
            return Err(Error::invalid(format!(
                "unsupported dictionary ordering '{}'",
                spec.ordering
            )));
        }
        Self::new(spec.q, spec.max_order)
    }

    pub fn spec(&self) -> DictionarySpec {
        DictionarySpec {
            q: self.q,
            max_order: self.max_order,
            ordering: ORDERING_TAG.to_string(),
        }
    }

    /// Observable dimension.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Basis size.
    pub fn k(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// Positions of the coordinate functions inside a lifted vector, or
    /// `None` for a constant-only dictionary.
    pub fn coordinate_positions(&self) -> Option<std::ops::Range<usize>> {
        (self.max_order >= 1).then(|| 1..1 + self.q)
    }

    pub fn lift(&self, z: &[f64]) -> Result<DVector<f64>> {
        if z.len() != self.q {
            return Err(Error::ShapeMismatch {
                what: "observable vector",
                expected: self.q,
                found: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observable vector".into()));
        }
        let powers = self.power_table(z);
        let lifted = DVector::from_iterator(
            self.k(),
            self.exponents.iter().map(|e| {
                e.iter()
                    .enumerate()
                    .map(|(i, &p)| powers[i * (self.max_order + 1) + p as usize])
                    .product::<f64>()
            }),
        );
        if lifted.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lifted vector (monomial overflow)".into()));
        }
        Ok(lifted)
    }

    /// Lifts every column of a `q x m` matrix.
    pub fn lift_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.nrows() != self.q {
            return Err(Error::ShapeMismatch {
                what: "observable matrix rows",
                expected: self.q,
                found: z.nrows(),
            });
        }
        if z.ncols() == 0 {
            return Err(Error::invalid("cannot lift an empty snapshot matrix"));
        }
        let mut out = DMatrix::zeros(self.k(), z.ncols());
        let mut column = vec![0.0; self.q];
        for j in 0..z.ncols() {
            column.iter_mut().zip(z.column(j).iter()).for_each(|(c, v)| *c = *v);
            out.set_column(j, &self.lift(&column)?);
        }
        Ok(out)
    }

    /// Applies the selection matrix `P`: picks the coordinate components.
    pub fn project(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        if g.len() != self.k() {
            return Err(Error::ShapeMismatch {
                what: "lifted vector",
                expected: self.k(),
                found: g.len(),
            });
        }
        let range = self.coordinate_positions().ok_or_else(|| {
            Error::invalid("constant-only dictionary has no coordinate functions to project on")
        })?;
        Ok(g.rows(range.start, self.q).into_owned())
    }

    /// The `q x k` selection matrix.
    pub fn projection_matrix(&self) -> Result<DMatrix<f64>> {
        let range = self
            .coordinate_positions()
            .ok_or_else(|| Error::invalid("constant-only dictionary has no projection"))?;
        let mut p = DMatrix::zeros(self.q, self.k());
        for (row, col) in range.enumerate() {
            p[(row, col)] = 1.0;
        }
        Ok(p)
    }

    fn power_table(&self, z: &[f64]) -> Vec<f64> {
        let stride = self.max_order + 1;
        let mut table = vec![1.0; self.q * stride];
        for (i, &zi) in z.iter().enumerate() {
            for p in 1..stride {
                table[i * stride + p] = table[i * stride + p - 1] * zi;
            }
        }
        table
    }
}

fn push_degree(out: &mut Vec<Vec<u32>>, current: &mut [u32], index: usize, remaining: u32) {
    if index + 1 == current.len() {
        current[index] = remaining;
        out.push(current.to_vec());
        current[index] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[index] = e;
        push_degree(out, current, index + 1, remaining - e);
    }
    current[index] = 0;
}

/// Binomial coefficient `C(n, r)`.
pub fn binomial(n: usize, r: usize) -> usize {
    let r = r.min(n.saturating_sub(r));
    (0..r).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basis_sizes_match_table_settings() {
        assert_eq!(Dictionary::new(2, 2).unwrap().k(), 6);
        assert_eq!(Dictionary::new(4, 3).unwrap().k(), 35);
        assert_eq!(Dictionary::new(8, 2).unwrap().k(), 45);
        assert_eq!(Dictionary::new(1, 0).unwrap().k(), 1);
    }

    #[test]
    fn rejects_zero_observables() {
        assert!(Dictionary::new(0, 2).is_err());
    }

    #[test]
    fn graded_lex_order() {
        let d = Dictionary::new(2, 2).unwrap();
        let expected: Vec<Vec<u32>> = vec![
            vec![0, 0],
            vec![1, 0],
            vec![0, 1],
            vec![2, 0],
            vec![1, 1],
            vec![0, 2],
        ];
        assert_eq!(d.exponents(), expected.as_slice());
    }

    #[test]
    fn lift_examples() {
        let d = Dictionary::new(2, 2).unwrap();
        let g = d.lift(&[2.0, 3.0]).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);

        let d1 = Dictionary::new(2, 1).unwrap();
        assert_eq!(d1.lift(&[0.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0, 0.0]);

        assert!(d.lift(&[f64::NAN, 1.0]).is_err());
        assert!(d.lift(&[1.0]).is_err());
    }

    #[test]
    fn project_selects_coordinates() {
        let d = Dictionary::new(2, 2).unwrap();
        let g = DVector::from_vec(vec![1.0, 5.0, 7.0, 25.0, 35.0, 49.0]);
        assert_eq!(d.project(&g).unwrap().as_slice(), &[5.0, 7.0]);
        assert!(d.project(&DVector::from_vec(vec![1.0, 2.0])).is_err());
        assert!(Dictionary::new(3, 0).unwrap().project(&DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn projection_matrix_agrees_with_project() {
        let d = Dictionary::new(3, 2).unwrap();
        let g = d.lift(&[0.3, -1.2, 2.0]).unwrap();
        let p = d.projection_matrix().unwrap();
        assert_eq!(p * &g, d.project(&g).unwrap());
    }

    #[test]
    fn batch_matches_single_lift() {
        let d = Dictionary::new(2, 3).unwrap();
        let z = DMatrix::from_row_slice(2, 5, &[0.1, -0.4, 1.3, 2.2, -0.7, 0.9, 0.0, -1.1, 0.5, 3.0]);
        let lifted = d.lift_batch(&z).unwrap();
        for j in 0..5 {
            let col = [z[(0, j)], z[(1, j)]];
            assert_eq!(lifted.column(j).into_owned(), d.lift(&col).unwrap());
        }
        let same = DMatrix::from_fn(2, 3, |i, _| [0.5, -2.0][i]);
        let l = d.lift_batch(&same).unwrap();
        assert_eq!(l.column(0), l.column(1));
        assert_eq!(l.column(1), l.column(2));
    }

    #[test]
    fn spec_round_trip() {
        let d = Dictionary::new(4, 3).unwrap();
        let spec = d.spec();
        let json = serde_json::to_string(&spec).unwrap();
        let back: DictionarySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(Dictionary::from_spec(&back).unwrap(), d);
    }

    proptest! {
        #[test]
        fn size_is_binomial(q in 1usize..=10, order in 0usize..=5) {
            let d = Dictionary::new(q, order).unwrap();
            // count by brute force over all exponent tuples with entries <= order
            let mut count = 0usize;
            let mut tuple = vec![0usize; q];
            loop {
                if tuple.iter().sum::<usize>() <= order { count += 1; }
                let mut i = 0;
                while i < q {
                    tuple[i] += 1;
                    if tuple[i] <= order { break; }
                    tuple[i] = 0;
                    i += 1;
                }
                if i == q { break; }
            }
            prop_assert_eq!(d.k(), count);
            let mut unique = d.exponents().to_vec();
            unique.sort();
            unique.dedup();
            prop_assert_eq!(unique.len(), d.k());
        }

        #[test]
        fn project_inverts_lift(z in proptest::collection::vec(-10.0f64..10.0, 3)) {
            let d = Dictionary::new(3, 3).unwrap();
            let g = d.lift(&z).unwrap();
            let back = d.project(&g).unwrap();
            prop_assert_eq!(back.as_slice(), z.as_slice());
        }

        #[test]
        fn lift_matches_naive_products(z in proptest::collection::vec(-3.0f64..3.0, 2)) {
            let d = Dictionary::new(2, 4).unwrap();
            let g = d.lift(&z).unwrap();
            for (j, e) in d.exponents().iter().enumerate() {
                let naive: f64 = z.iter().zip(e).map(|(v, &p)| v.powi(p as i32)).product();
                prop_assert!((g[j] - naive).abs() <= 1e-12 * naive.abs().max(1.0));
            }
        }
    }
}
