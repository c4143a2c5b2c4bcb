use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Scalar;

/// Dense, contiguous, row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Self::from_vec(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    /// Standard normal draws scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std)
            })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::lit(rng.random_range(lo..hi)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(numel(shape), self.data.len(), "reshape {:?} -> {shape:?}", self.shape);
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type through f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Row `i` of a tensor viewed as `[shape[0], rest]`.
    pub fn row(&self, i: usize) -> &[T] {
        let w = self.data.len() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn permute(&self, perm: &[usize]) -> Self {
        permute(self, perm)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        narrow(self, axis, start, len)
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Self {
        concat(parts, axis)
    }
}

/// `(outer, axis, inner)` factorisation of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn permute<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let rank = x.rank();
    assert_eq!(perm.len(), rank, "permute rank mismatch");
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return Tensor::from_vec(&out_shape, out);
    }
    // Innermost loop unrolled over the last output axis.
    let last = rank - 1;
    let inner_len = out_shape[last];
    let inner_stride = src_strides[last];
    let mut idx = vec![0usize; rank];
    let data = x.data();
    loop {
        let base: usize = (0..last).map(|a| idx[a] * src_strides[a]).sum();
        for j in 0..inner_len {
            out.push(data[base + j * inner_stride]);
        }
        // advance outer multi-index
        let mut a = last;
        loop {
            if a == 0 {
                return Tensor::from_vec(&out_shape, out);
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < out_shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub(crate) fn narrow<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, alen, inner) = split_axis(x.shape(), axis);
    assert!(start + len <= alen, "narrow out of range");
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * alen * inner + start * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::from_vec(&shape, out)
}

pub(crate) fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
    assert!(!parts.is_empty(), "concat of nothing");
    let mut shape = parts[0].shape().to_vec();
    for p in parts {
        assert_eq!(p.rank(), shape.len(), "concat rank mismatch");
        for (a, (&d0, &d)) in shape.iter().zip(p.shape()).enumerate() {
            assert!(a == axis || d0 == d, "concat shape mismatch on axis {a}");
        }
    }
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let (outer, _, inner) = split_axis(&shape, axis);
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for p in parts {
            let w = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
        }
    }
    Tensor::from_vec(&shape, out)
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    (0..rank)
        .map(|i| {
            let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
            let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
            assert!(
                da == db || da == 1 || db == 1,
                "shapes {a:?} and {b:?} do not broadcast"
            );
            da.max(db)
        })
        .collect()
}

/// Strides of `shape` viewed inside `out_shape`, with zeros on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let own = strides(shape);
    (0..rank)
        .map(|i| {
            if i + shape.len() < rank {
                0
            } else {
                let j = i + shape.len() - rank;
                if shape[j] == 1 {
                    0
                } else {
                    own[j]
                }
            }
        })
        .collect()
}

pub(crate) fn broadcast_zip<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape());
    let n = numel(&out_shape);
    // Fast path: b repeats along leading axes of a.
    if a.shape() == out_shape.as_slice() && !b.is_empty() && n % b.len() == 0 {
        let blen = b.len();
        let tail = &out_shape[out_shape.len().saturating_sub(b.rank())..];
        if tail == b.shape() {
            let data = a
                .data()
                .chunks(blen)
                .flat_map(|chunk| chunk.iter().zip(b.data()).map(|(&x, &y)| f(x, y)))
                .collect();
            return Tensor::from_vec(&out_shape, data);
        }
    }
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let mut data = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        let ia: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ib: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        data.push(f(a.data()[ia], b.data()[ib]));
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::from_vec(&out_shape, data)
}

/// Sums `grad` down to `shape`, undoing a broadcast.
pub(crate) fn reduce_to<T: Scalar>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out_shape = grad.shape();
    let n_target = numel(shape);
    let mut out = vec![T::zero(); n_target];
    if !out.is_empty() && out_shape.ends_with(shape) {
        for chunk in grad.data().chunks(n_target) {
            for (o, &g) in out.iter_mut().zip(chunk) {
                *o += g;
            }
        }
        return Tensor::from_vec(shape, out);
    }
    let st = broadcast_strides(shape, out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    for &g in grad.data() {
        let it: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
        out[it] += g;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::from_vec(shape, out)
}

/// Row-major `[m,k]·[k,n]` (optionally transposed operands) accumulated into `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
    beta: T,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices cover exactly the described matrices and `c` is a
    // distinct mutable borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_manual_transpose() {
        let x = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let t = x.permute(&[1, 0]);
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_f64_vec(), vec![1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn permute_4d_round_trip() {
        let x = Tensor::<f64>::from_vec(&[2, 3, 4, 5], (0..120).map(|v| v as f64).collect());
        let p = [0, 2, 1, 3];
        let y = x.permute(&p).permute(&inverse_perm(&p));
        assert_eq!(x, y);
    }

    #[test]
    fn broadcast_and_reduce() {
        let a = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = Tensor::<f64>::from_f64(&[3], &[10., 20., 30.]);
        let c = broadcast_zip(&a, &b, |x, y| x + y);
        assert_eq!(c.to_f64_vec(), vec![11., 22., 33., 14., 25., 36.]);
        let col = Tensor::<f64>::from_f64(&[2, 1], &[1., 2.]);
        let d = broadcast_zip(&a, &col, |x, y| x * y);
        assert_eq!(d.to_f64_vec(), vec![1., 2., 3., 8., 10., 12.]);
        assert_eq!(reduce_to(&d, &[2, 1]).to_f64_vec(), vec![6., 30.]);
        assert_eq!(reduce_to(&d, &[3]).to_f64_vec(), vec![9., 12., 15.]);
    }

    #[test]
    fn concat_and_narrow_inverse() {
        let a = Tensor::<f32>::from_vec(&[2, 2, 3], (0..12).map(|v| v as f32).collect());
        let b = Tensor::<f32>::from_vec(&[2, 1, 3], (0..6).map(|v| 100.0 + v as f32).collect());
        let c = Tensor::concat(&[&a, &b], 1);
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.narrow(1, 0, 2), a);
        assert_eq!(c.narrow(1, 2, 1), b);
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1., 2., 3., 4.];
        let b = [5., 6., 7., 8.];
        let mut c = [0f64; 4];
        gemm_into(&a, &b, &mut c, 2, 2, 2, false, false, 0.0);
        assert_eq!(c, [19., 22., 43., 50.]);
        gemm_into(&a, &b, &mut c, 2, 2, 2, true, false, 0.0);
        assert_eq!(c, [26., 30., 38., 44.]);
        gemm_into(&a, &b, &mut c, 2, 2, 2, false, true, 0.0);
        assert_eq!(c, [17., 23., 39., 53.]);
    }
}
