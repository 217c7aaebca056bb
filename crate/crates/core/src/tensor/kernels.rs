//! Non-differentiable tensor kernels. The tape's forward and backward rules
//! are written in terms of these. All reductions run sequentially in
//! ascending index order so results are bit-reproducible.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

pub fn offset(shape: &[usize], index: &[usize]) -> usize {
    assert_eq!(shape.len(), index.len(), "index rank");
    index
        .iter()
        .zip(shape)
        .zip(strides(shape))
        .map(|((&i, &n), s)| {
            assert!(i < n, "index {i} out of bounds for extent {n}");
            i * s
        })
        .sum()
}

/// Right-aligned broadcast of two shapes (numpy rules).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside the broadcast shape `out` (zero on
/// broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let lead = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < lead || shape[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Visits every index of `shape` in row-major order, passing the offsets
/// into each strided operand.
fn for_each_strided<const N: usize>(shape: &[usize], strides: [&[usize]; N], mut f: impl FnMut(usize, [usize; N])) {
    let total: usize = shape.iter().product();
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut offs = [0usize; N];
    for lin in 0..total {
        f(lin, offs);
        for d in (0..rank).rev() {
            idx[d] += 1;
            for (o, s) in offs.iter_mut().zip(strides.iter()) {
                *o += s[d];
            }
            if idx[d] < shape[d] {
                break;
            }
            for (o, s) in offs.iter_mut().zip(strides.iter()) {
                *o -= s[d] * shape[d];
            }
            idx[d] = 0;
        }
    }
}

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

/// Elementwise binary op with broadcasting.
pub fn binary<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(sa.to_vec(), data));
    }
    if is_suffix(sb, sa) {
        let n = b.numel();
        let data = a
            .data()
            .chunks_exact(n)
            .flat_map(|chunk| chunk.iter().zip(b.data()).map(|(&x, &y)| f(x, y)))
            .collect();
        return Ok(Tensor::from_parts(sa.to_vec(), data));
    }
    if is_suffix(sa, sb) {
        let n = a.numel();
        let data = b
            .data()
            .chunks_exact(n)
            .flat_map(|chunk| a.data().iter().zip(chunk).map(|(&x, &y)| f(x, y)))
            .collect();
        return Ok(Tensor::from_parts(sb.to_vec(), data));
    }
    let out = broadcast_shape(sa, sb).ok_or_else(|| Error::shape(op, sa, sb))?;
    let (ta, tb) = (broadcast_strides(sa, &out), broadcast_strides(sb, &out));
    let mut data = Vec::with_capacity(out.iter().product());
    for_each_strided(&out, [&ta, &tb], |_, [oa, ob]| data.push(f(a.data()[oa], b.data()[ob])));
    Ok(Tensor::from_parts(out, data))
}

/// Sums `grad` down to `shape`, undoing a broadcast.
pub fn reduce_to<T: Scalar>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut out = vec![T::zero(); shape.iter().product()];
    if is_suffix(shape, grad.shape()) {
        for chunk in grad.data().chunks_exact(out.len()) {
            for (o, &g) in out.iter_mut().zip(chunk) {
                *o = *o + g;
            }
        }
    } else {
        let s = broadcast_strides(shape, grad.shape());
        for_each_strided(grad.shape(), [&s], |lin, [o]| {
            out[o] = out[o] + grad.data()[lin];
        });
    }
    Tensor::from_parts(shape.to_vec(), out)
}

pub fn permute<T: Scalar>(t: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let rank = t.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::invalid(
            "permute",
            format!("{axes:?} is not a permutation of the axes of {:?}", t.shape()),
        ));
    }
    let in_strides = strides(t.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| t.shape()[a]).collect();
    let src: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut data = Vec::with_capacity(t.numel());
    for_each_strided(&out_shape, [&src], |_, [o]| data.push(t.data()[o]));
    Ok(Tensor::from_parts(out_shape, data))
}

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Batched matrix product. `a` is `(.., m, k)` (or `(.., k, m)` when
/// `trans_a`), `b` is `(k, n)` shared across the batch or `(.., k, n)` with
/// the same leading dims as `a` (transposed likewise with `trans_b`).
pub fn matmul<T: Scalar>(a: &Tensor<T>, trans_a: bool, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() < 2 || sb.len() < 2 {
        return Err(Error::shape("matmul", sa, sb));
    }
    let (ra, rb) = (sa.len(), sb.len());
    let (m, ka) = if trans_a {
        (sa[ra - 1], sa[ra - 2])
    } else {
        (sa[ra - 2], sa[ra - 1])
    };
    let (kb, n) = if trans_b {
        (sb[rb - 1], sb[rb - 2])
    } else {
        (sb[rb - 2], sb[rb - 1])
    };
    let batch_dims = &sa[..ra - 2];
    let shared_b = rb == 2;
    if ka != kb || (!shared_b && sb[..rb - 2] != *batch_dims) {
        return Err(Error::shape("matmul", sa, sb));
    }
    let k = ka;
    let batch: usize = batch_dims.iter().product();
    let mut out_shape = batch_dims.to_vec();
    out_shape.extend([m, n]);
    let mut out = vec![T::zero(); batch * m * n];

    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    for bi in 0..batch {
        let a_off = bi * m * k;
        let b_off = if shared_b { 0 } else { bi * k * n };
        let c_off = bi * m * n;
        // SAFETY: offsets and strides stay inside the three buffers, whose
        // sizes were validated against (m, k, n) above.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                a.data().as_ptr().add(a_off),
                rsa,
                csa,
                b.data().as_ptr().add(b_off),
                rsb,
                csb,
                T::zero(),
                out.as_mut_ptr().add(c_off),
                n as isize,
                1,
            );
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::invalid(
            "concat",
            format!("axis {axis} out of range for {:?}", first.shape()),
        ));
    }
    let mut total = 0;
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (x, y))| d == axis || x == y);
        if !ok {
            return Err(Error::shape("concat", first.shape(), p.shape()));
        }
        total += p.shape()[axis];
    }
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, data))
}

/// `len` consecutive entries along `axis` starting at `start`.
pub fn narrow<T: Scalar>(t: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= t.rank() || len == 0 || start + len > t.shape()[axis] {
        return Err(Error::invalid(
            "narrow",
            format!("range {start}..{} on axis {axis} of {:?}", start + len, t.shape()),
        ));
    }
    let (outer, n, inner) = axis_split(t.shape(), axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        data.extend_from_slice(&t.data()[base..base + len * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = len;
    Ok(Tensor::from_parts(shape, data))
}

pub fn softmax<T: Scalar>(t: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = axis_split(t.shape(), axis);
    let mut out = t.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..n {
                max = max.max(out[at(j)]);
            }
            let mut sum = T::zero();
            for j in 0..n {
                let e = (out[at(j)] - max).exp();
                out[at(j)] = e;
                sum = sum + e;
            }
            for j in 0..n {
                out[at(j)] = out[at(j)] / sum;
            }
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

/// Given `y = softmax(x)` and `dy`, returns `dx = y * (dy - sum(dy * y))`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = axis_split(y.shape(), axis);
    let (yv, gv) = (y.data(), dy.data());
    let mut out = vec![T::zero(); y.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mut dot = T::zero();
            for j in 0..n {
                dot = dot + yv[at(j)] * gv[at(j)];
            }
            for j in 0..n {
                out[at(j)] = yv[at(j)] * (gv[at(j)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

/// Layer normalisation over the last axis. Returns the output together with
/// the normalised input and the per-row reciprocal standard deviation that
/// the backward rule needs.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let d = *x.shape().last().expect("rank >= 1");
    let rows = x.numel() / d;
    let dn = T::from_usize(d).expect("dim");
    let mut xhat = vec![T::zero(); x.numel()];
    let mut rstd = vec![T::zero(); rows];
    let mut y = vec![T::zero(); x.numel()];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    (Tensor::from_parts(x.shape().to_vec(), y), xhat, rstd)
}

/// Gradients of layer norm w.r.t. (x, gamma, beta).
pub fn layer_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    xhat: &[T],
    rstd: &[T],
    gamma: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = gamma.numel();
    let rows = dy.numel() / d;
    let dn = T::from_usize(d).expect("dim");
    let mut dx = vec![T::zero(); dy.numel()];
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let mut g = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = &dy.data()[r * d..(r + 1) * d];
        let xh = &xhat[r * d..(r + 1) * d];
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for j in 0..d {
            dgamma[j] = dgamma[j] + dyr[j] * xh[j];
            dbeta[j] = dbeta[j] + dyr[j];
            g[j] = dyr[j] * gamma.data()[j];
            sum_g = sum_g + g[j];
            sum_gx = sum_gx + g[j] * xh[j];
        }
        for j in 0..d {
            dx[r * d + j] = rstd[r] * (g[j] - sum_g / dn - xh[j] * sum_gx / dn);
        }
    }
    (
        Tensor::from_parts(dy.shape().to_vec(), dx),
        Tensor::from_parts(vec![d], dgamma),
        Tensor::from_parts(vec![d], dbeta),
    )
}

/// Rows of a `(rows, cols)` table picked by `index`.
pub fn gather_rows<T: Scalar>(table: &Tensor<T>, index: &[usize]) -> Result<Tensor<T>> {
    if table.rank() != 2 {
        return Err(Error::invalid(
            "gather_rows",
            format!("table must be rank 2, got {:?}", table.shape()),
        ));
    }
    let (rows, cols) = (table.shape()[0], table.shape()[1]);
    let mut data = Vec::with_capacity(index.len() * cols);
    for &i in index {
        if i >= rows {
            return Err(Error::invalid(
                "gather_rows",
                format!("row {i} out of range for {rows} rows"),
            ));
        }
        data.extend_from_slice(&table.data()[i * cols..(i + 1) * cols]);
    }
    Ok(Tensor::from_parts(vec![index.len(), cols], data))
}

pub fn scatter_add_rows<T: Scalar>(grad: &Tensor<T>, index: &[usize], rows: usize) -> Tensor<T> {
    let cols = grad.shape()[1];
    let mut out = vec![T::zero(); rows * cols];
    for (r, &i) in index.iter().enumerate() {
        for c in 0..cols {
            out[i * cols + c] = out[i * cols + c] + grad.data()[r * cols + c];
        }
    }
    Tensor::from_parts(vec![rows, cols], out)
}

pub fn sum_all<T: Scalar>(t: &Tensor<T>) -> T {
    t.data().iter().fold(T::zero(), |acc, &x| acc + x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 2], &[5., 6., 7., 8.]);
        let c = matmul(&a, false, &b, false).unwrap();
        assert_eq!(c.data(), naive_matmul(a.data(), b.data(), 2, 2, 2).as_slice());
        assert_eq!(c.data(), &[19., 22., 43., 50.]);
    }

    #[test]
    fn matmul_transposed_views() {
        let a = Tensor::from_fn(&[3, 2], |i| i as f64 * 0.5 - 1.0);
        let b = Tensor::from_fn(&[3, 4], |i| (i as f64).sin());
        let at = permute(&a, &[1, 0]).unwrap();
        let expect = naive_matmul(at.data(), b.data(), 2, 3, 4);
        let got = matmul(&a, true, &b, false).unwrap();
        for (x, y) in got.data().iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        let bt = permute(&b, &[1, 0]).unwrap();
        let got = matmul(&at, false, &bt, true).unwrap();
        for (x, y) in got.data().iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let err = matmul(&a, false, &b, false).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn broadcast_general_and_reduce() {
        let a = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let b = t(&[3, 1], &[10., 20., 30.]);
        let c = binary("add", &a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.shape(), &[2, 3, 4]);
        assert_eq!(c.get(&[1, 2, 3]), a.get(&[1, 2, 3]) + 30.0);
        let r = reduce_to(&Tensor::<f64>::ones(&[2, 3, 4]), &[3, 1]);
        assert_eq!(r.data(), &[8., 8., 8.]);
    }

    #[test]
    fn broadcast_incompatible_is_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4]);
        assert!(binary("add", &a, &b, |x, y| x + y).is_err());
    }

    #[test]
    fn permute_and_inverse() {
        let a = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let axes = [2, 0, 1];
        let p = permute(&a, &axes).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), a.get(&[1, 2, 3]));
        let back = permute(&p, &inverse_permutation(&axes)).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn concat_then_narrow() {
        let a = Tensor::from_fn(&[2, 2, 3], |i| i as f64);
        let b = Tensor::from_fn(&[2, 1, 3], |i| 100.0 + i as f64);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(narrow(&c, 1, 0, 2).unwrap(), a);
        assert_eq!(narrow(&c, 1, 2, 1).unwrap(), b);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_fn(&[3, 5], |i| (i as f64 * 1.7).cos() * 4.0);
        for axis in 0..2 {
            let y = softmax(&x, axis);
            let s = if axis == 1 {
                (0..3)
                    .map(|r| (0..5).map(|c| y.get(&[r, c])).sum::<f64>())
                    .collect::<Vec<_>>()
            } else {
                (0..5).map(|c| (0..3).map(|r| y.get(&[r, c])).sum::<f64>()).collect()
            };
            assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }
}
