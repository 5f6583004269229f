use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape {
                    op: "broadcast",
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

fn dim_from_right(shape: &[usize], from_right: usize) -> usize {
    if from_right < shape.len() {
        shape[shape.len() - 1 - from_right]
    } else {
        1
    }
}

/// Strides of `small` expressed over the axes of `big`, zero along broadcast
/// axes. `small` must broadcast to `big`.
fn broadcast_strides(big: &[usize], small: &[usize]) -> Vec<usize> {
    let rank = big.len();
    let offset = rank - small.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..small.len()).rev() {
        if small[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= small[i];
    }
    strides
}

/// Calls `f(i_big, i_small)` for each flat index of `big`, where `i_small` is
/// the flat index of the element of `small` that broadcasts onto it.
pub(crate) fn for_each_broadcast(big: &[usize], small: &[usize], mut f: impl FnMut(usize, usize)) {
    let numel: usize = big.iter().product();
    if big == small {
        for i in 0..numel {
            f(i, i);
        }
        return;
    }
    let rank = big.len();
    let strides = broadcast_strides(big, small);
    // The innermost axis is walked in a tight loop.
    let inner = big[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut counter = vec![0usize; rank];
    let mut base = 0usize;
    let mut i = 0;
    while i < numel {
        for j in 0..inner {
            f(i + j, base + j * inner_stride);
        }
        i += inner;
        // Advance the odometer over the outer axes.
        let mut axis = rank - 1;
        while axis > 0 {
            axis -= 1;
            counter[axis] += 1;
            base += strides[axis];
            if counter[axis] < big[axis] {
                break;
            }
            base -= strides[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
}

/// Shape with the listed axes collapsed to 1.
pub(crate) fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect()
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}
