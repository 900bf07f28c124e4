//! Additive attention bias implementing token invisibility.

use std::collections::BTreeSet;

use ndarray::Array2;

use crate::corpus::TokenId;

/// Additive score offset for blocked attention edges.
///
/// Finite rather than negative infinity so score arithmetic never produces
/// NaN, yet large enough that `exp` underflows to exactly `0.0` in f64
/// after row-max subtraction. Blocked positions therefore receive exactly
/// zero attention, not merely a small amount.
pub const BLOCK: f64 = -1.0e9;

/// Per-sequence attention bias that hides chosen token types.
///
/// A column `v` is blocked for every row `u != v` when the token at `v` has
/// an invisible type; the diagonal is never blocked, so a token always sees
/// itself and each softmax row keeps at least one live entry. One bias is
/// built per input sequence and shared by every layer and head of that
/// forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityBias {
    n: usize,
    /// Positions (not types) whose column is blocked, ascending.
    blocked_cols: Vec<usize>,
}

impl VisibilityBias {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Positions whose columns are blocked off-diagonal.
    pub fn blocked_cols(&self) -> &[usize] {
        &self.blocked_cols
    }

    /// True when the bias does nothing.
    pub fn is_zero(&self) -> bool {
        self.blocked_cols.is_empty()
    }

    /// Adds the bias onto one row of attention scores.
    ///
    /// Touches only blocked entries, so an all-visible bias leaves scores
    /// bitwise untouched.
    pub fn apply_row(&self, row: usize, scores_row: &mut [f64]) {
        for &c in &self.blocked_cols {
            if c != row {
                scores_row[c] += BLOCK;
            }
        }
    }

    /// Dense matrix form, mostly for inspection and tests.
    pub fn to_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for u in 0..self.n {
            for &c in &self.blocked_cols {
                if c != u {
                    m[[u, c]] = BLOCK;
                }
            }
        }
        m
    }
}

/// Builds the bias hiding every occurrence of the given token types.
pub fn build_visibility_bias(seq: &[TokenId], invisible: &BTreeSet<TokenId>) -> VisibilityBias {
    let blocked_cols = seq
        .iter()
        .enumerate()
        .filter(|(_, id)| invisible.contains(id))
        .map(|(i, _)| i)
        .collect();
    VisibilityBias {
        n: seq.len(),
        blocked_cols,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_set_gives_identically_zero_bias() {
        let b = build_visibility_bias(&[0, 4, 5, 1], &BTreeSet::new());
        assert!(b.is_zero());
        assert!(b.to_matrix().iter().all(|&x| x == 0.0));
        let mut row = vec![0.25, -1.5, 3.0, 0.0];
        let orig = row.clone();
        b.apply_row(1, &mut row);
        assert_eq!(row, orig);
    }

    #[test]
    fn blocked_columns_spare_the_diagonal() {
        // Sequence [a, b, c] with b invisible.
        let set: BTreeSet<usize> = [5].into_iter().collect();
        let b = build_visibility_bias(&[4, 5, 6], &set);
        let m = b.to_matrix();
        assert_eq!(m[[0, 1]], BLOCK);
        assert_eq!(m[[2, 1]], BLOCK);
        assert_eq!(m[[1, 1]], 0.0);
        assert_eq!(m[[0, 0]], 0.0);
        assert_eq!(m[[0, 2]], 0.0);
    }

    #[test]
    fn every_occurrence_of_an_invisible_type_is_blocked() {
        let set: BTreeSet<usize> = [7].into_iter().collect();
        let b = build_visibility_bias(&[7, 4, 7, 5], &set);
        assert_eq!(b.blocked_cols(), &[0, 2]);
        let m = b.to_matrix();
        assert_eq!(m[[1, 0]], BLOCK);
        assert_eq!(m[[1, 2]], BLOCK);
        assert_eq!(m[[0, 0]], 0.0);
        assert_eq!(m[[2, 2]], 0.0);
        // Blocked tokens still see each other's columns blocked.
        assert_eq!(m[[0, 2]], BLOCK);
        assert_eq!(m[[2, 0]], BLOCK);
    }

    #[test]
    fn all_invisible_still_leaves_self_visibility() {
        let set: BTreeSet<usize> = [4, 5, 6].into_iter().collect();
        let b = build_visibility_bias(&[4, 5, 6], &set);
        let m = b.to_matrix();
        for u in 0..3 {
            for v in 0..3 {
                if u == v {
                    assert_eq!(m[[u, v]], 0.0);
                } else {
                    assert_eq!(m[[u, v]], BLOCK);
                }
            }
        }
    }
}
