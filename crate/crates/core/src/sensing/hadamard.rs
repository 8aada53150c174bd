//! Sylvester Hadamard patterns in natural or sequency (Walsh) order.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{PatternBank, Strategy};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HadamardOrdering {
    Natural,
    /// Rows sorted by number of sign changes; row 0 is the all-ones row.
    #[default]
    Sequency,
}

/// Entry `(i, j)` of the order-`n` Sylvester matrix: `(-1)^{popcount(i & j)}`.
#[inline]
pub fn sylvester_entry(i: usize, j: usize) -> i8 {
    if (i & j).count_ones() % 2 == 0 {
        1
    } else {
        -1
    }
}

fn check_order(n: usize) -> Result<u32> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Construction(format!("order {n} is not a power of two")));
    }
    Ok(n.trailing_zeros())
}

/// Full order-`n` Sylvester matrix in natural order.
pub fn hadamard_matrix(n: usize) -> Result<Array2<i8>> {
    check_order(n)?;
    Ok(Array2::from_shape_fn((n, n), |(i, j)| sylvester_entry(i, j)))
}

/// Natural-order row holding sequency `k`: bit-reversed Gray code of `k`.
pub fn sequency_to_natural(k: usize, bits: u32) -> usize {
    let gray = k ^ (k >> 1);
    if bits == 0 {
        0
    } else {
        gray.reverse_bits() >> (usize::BITS - bits)
    }
}

/// Natural-order row indices listed in the requested ordering.
pub fn row_order(n: usize, ordering: HadamardOrdering) -> Result<Vec<usize>> {
    let bits = check_order(n)?;
    Ok(match ordering {
        HadamardOrdering::Natural => (0..n).collect(),
        HadamardOrdering::Sequency => (0..n).map(|k| sequency_to_natural(k, bits)).collect(),
    })
}

/// First `count` rows (in `ordering`) of the order-`H·W` Sylvester matrix,
/// each reshaped row-major to `H × W`, entries in `{-1, +1}`.
pub fn make_hadamard_patterns(
    count: usize,
    dims: (usize, usize),
    ordering: HadamardOrdering,
) -> Result<PatternBank> {
    let n = dims.0 * dims.1;
    check_order(n)?;
    if count == 0 {
        return Err(Error::Domain("pattern count must be at least 1".into()));
    }
    if count > n {
        return Err(Error::Capacity { requested: count, available: n });
    }
    let rows = row_order(n, ordering)?;
    let patterns = rows[..count]
        .iter()
        .map(|&row| {
            Array2::from_shape_fn(dims, |(r, c)| sylvester_entry(row, r * dims.1 + c) as f64)
        })
        .collect();
    PatternBank::new(patterns, Strategy::Hadamard, 0)
}

/// Number of sign changes along a ±1 sequence.
pub fn sign_changes<I: IntoIterator<Item = f64>>(row: I) -> usize {
    let mut it = row.into_iter();
    let Some(mut prev) = it.next() else { return 0 };
    let mut changes = 0;
    for v in it {
        if (v > 0.0) != (prev > 0.0) {
            changes += 1;
        }
        prev = v;
    }
    changes
}
