//! Broadcasting and axis bookkeeping shared by the forward and backward kernels.
//!
//! Broadcasting follows the usual trailing-axis alignment: two extents are
//! compatible when they are equal or one of them is 1.

use crate::error::TapeError;
use crate::tensor::Tensor;

pub(crate) fn broadcast_shape(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<usize>, TapeError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (i, o) in out.iter_mut().enumerate() {
        let da = extent_aligned(a, rank, i);
        let db = extent_aligned(b, rank, i);
        *o = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(TapeError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

fn extent_aligned(shape: &[usize], rank: usize, i: usize) -> usize {
    let offset = rank - shape.len();
    if i < offset {
        1
    } else {
        shape[i - offset]
    }
}

/// Strides of `shape` viewed inside `out`, zero along broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
pub(crate) fn for_each_pair(
    out: &[usize],
    a: &[usize],
    b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let sa = aligned_strides(a, out);
    let sb = aligned_strides(b, out);
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    // innermost axis handled as a tight loop
    let inner = out[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let mut counter = vec![0usize; rank - 1];
    let mut flat = 0;
    loop {
        let mut ia = 0;
        let mut ib = 0;
        for (k, &c) in counter.iter().enumerate() {
            ia += c * sa[k];
            ib += c * sb[k];
        }
        for j in 0..inner {
            f(flat + j, ia + j * ia_step, ib + j * ib_step);
        }
        flat += inner;
        // odometer over the leading axes
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            counter[axis] += 1;
            if counter[axis] < out[axis] {
                break;
            }
            counter[axis] = 0;
        }
    }
}

pub(crate) fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, TapeError> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out = broadcast_shape(op, a.shape(), b.shape())?;
    if b.len() == 1 && out == a.shape() {
        let y = b.data()[0];
        return Ok(a.map(|x| f(x, y)));
    }
    if a.len() == 1 && out == b.shape() {
        let x = a.data()[0];
        return Ok(b.map(|y| f(x, y)));
    }
    let mut data = vec![0.0; out.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_pair(&out, a.shape(), b.shape(), |o, i, j| data[o] = f(ad[i], bd[j]));
    Ok(Tensor::from_parts(out, data))
}

/// Sums `g` down to `shape`, undoing a broadcast.
pub(crate) fn sum_to_shape(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let total: usize = shape.iter().product();
    if total == 1 {
        return Tensor::from_parts(shape.to_vec(), vec![g.data().iter().sum()]);
    }
    let mut data = vec![0.0; total];
    let gd = g.data();
    for_each_pair(g.shape(), shape, shape, |o, i, _| data[i] += gd[o]);
    Tensor::from_parts(shape.to_vec(), data)
}

pub(crate) fn broadcast_to(t: &Tensor, shape: &[usize]) -> Result<Tensor, TapeError> {
    let out = broadcast_shape("broadcast", t.shape(), shape)?;
    if out != shape {
        return Err(TapeError::ShapeMismatch {
            op: "broadcast",
            lhs: t.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let mut data = vec![0.0; out.iter().product()];
    let td = t.data();
    for_each_pair(&out, t.shape(), t.shape(), |o, i, _| data[o] = td[i]);
    Ok(Tensor::from_parts(out, data))
}

/// `(outer, extent, inner)` split of `shape` around `axis`.
pub(crate) fn axis_split(
    op: &'static str,
    shape: &[usize],
    axis: usize,
) -> Result<(usize, usize, usize), TapeError> {
    if axis >= shape.len() {
        return Err(TapeError::InvalidAxis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_broadcast_trailing() {
        assert_eq!(broadcast_shape("t", &[4, 3], &[3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast_shape("t", &[4, 1], &[1, 3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast_shape("t", &[], &[2, 2]).unwrap(), vec![2, 2]);
        assert!(broadcast_shape("t", &[4, 3], &[4]).is_err());
    }

    #[test]
    fn sum_to_shape_reduces_broadcast_axes() {
        let g = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(sum_to_shape(&g, &[1, 3]).data(), &[5., 7., 9.]);
        assert_eq!(sum_to_shape(&g, &[2, 1]).data(), &[6., 15.]);
        assert_eq!(sum_to_shape(&g, &[]).data(), &[21.]);
    }

    #[test]
    fn zip_general_path_matches_manual() {
        let a = Tensor::new(vec![2, 1], vec![10., 20.]).unwrap();
        let b = Tensor::new(vec![1, 3], vec![1., 2., 3.]).unwrap();
        let c = zip_broadcast("t", &a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[11., 12., 13., 21., 22., 23.]);
    }
}
