//! Dense row-major `f64` arrays and the raw numeric kernels behind every
//! differentiable primitive. Nothing in here knows about the tape.

use super::error::{shape_err, Result, TensorError};

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "array",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Array {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Array {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element array.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Array> {
        Array::new(shape.to_vec(), self.data.clone())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Array) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Numpy-style broadcast of two shapes (aligned from the right, size-1 dims stretch).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n {
            a[i + a.len() - n]
        } else {
            1
        };
        let db = if i + b.len() >= n {
            b[i + b.len() - n]
        } else {
            1
        };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `shape` when viewed inside the broadcast shape `out`; broadcast dims get stride 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; out.len()];
    let off = out.len() - shape.len();
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[off + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Walks every multi-index of `shape` in row-major order, tracking one linear
/// offset per stride set.
fn for_each_offset<const M: usize>(
    shape: &[usize],
    strides: [&[usize]; M],
    mut f: impl FnMut(usize, [usize; M]),
) {
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    let nd = shape.len();
    let mut idx = vec![0usize; nd];
    let mut offs = [0usize; M];
    for lin in 0..total {
        f(lin, offs);
        for d in (0..nd).rev() {
            idx[d] += 1;
            for m in 0..M {
                offs[m] += strides[m][d];
            }
            if idx[d] < shape[d] {
                break;
            }
            for m in 0..M {
                offs[m] -= strides[m][d] * shape[d];
            }
            idx[d] = 0;
        }
    }
}

pub fn binary(
    a: &Array,
    b: &Array,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Array> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Array {
            shape: a.shape.clone(),
            data,
        });
    }
    let out = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| {
        shape_err(
            op,
            format!("cannot broadcast {:?} with {:?}", a.shape, b.shape),
        )
    })?;
    if b.numel() == 1 && out == a.shape {
        let y = b.data[0];
        return Ok(a.map(|x| f(x, y)));
    }
    let sa = broadcast_strides(&a.shape, &out);
    let sb = broadcast_strides(&b.shape, &out);
    let mut data = vec![0.0; out.iter().product()];
    for_each_offset(&out, [&sa, &sb], |lin, [ia, ib]| {
        data[lin] = f(a.data[ia], b.data[ib]);
    });
    Ok(Array { shape: out, data })
}

/// Sums `a` down to `shape`, the inverse of broadcasting `shape` up to `a.shape()`.
pub fn sum_to(a: &Array, shape: &[usize]) -> Result<Array> {
    if a.shape == shape {
        return Ok(a.clone());
    }
    match broadcast_shape(shape, &a.shape) {
        Some(s) if s == a.shape => {}
        _ => {
            return Err(shape_err(
                "sum_to",
                format!("{:?} does not broadcast to {:?}", shape, a.shape),
            ))
        }
    }
    let st = broadcast_strides(shape, &a.shape);
    let ident = contiguous_strides(&a.shape);
    let mut data = vec![0.0; shape.iter().product()];
    for_each_offset(&a.shape, [&st, &ident], |_, [it, ia]| {
        data[it] += a.data[ia];
    });
    Ok(Array {
        shape: shape.to_vec(),
        data,
    })
}

pub fn broadcast_to(a: &Array, shape: &[usize]) -> Result<Array> {
    if a.shape == shape {
        return Ok(a.clone());
    }
    match broadcast_shape(&a.shape, shape) {
        Some(s) if s == shape => {}
        _ => {
            return Err(shape_err(
                "broadcast_to",
                format!("{:?} does not broadcast to {:?}", a.shape, shape),
            ))
        }
    }
    let sa = broadcast_strides(&a.shape, shape);
    let mut data = vec![0.0; shape.iter().product()];
    for_each_offset(shape, [&sa], |lin, [ia]| data[lin] = a.data[ia]);
    Ok(Array {
        shape: shape.to_vec(),
        data,
    })
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        s[i] = acc;
        acc *= shape[i];
    }
    s
}

pub fn matmul(a: &Array, b: &Array) -> Result<Array> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(shape_err(
            "matmul",
            format!("{:?} x {:?}", a.shape, b.shape),
        ));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Array {
        shape: vec![m, n],
        data: out,
    })
}

pub fn transpose(a: &Array) -> Result<Array> {
    if a.ndim() != 2 {
        return Err(shape_err(
            "transpose",
            format!("expected rank 2, got {:?}", a.shape),
        ));
    }
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Ok(Array {
        shape: vec![n, m],
        data: out,
    })
}

// 3x3, stride 1, zero padding 1. The three kernels below are the partial
// derivatives of the trilinear form sum(g * conv(x, w)) and close under VJP.

fn conv_dims(
    x: &[usize],
    w: &[usize],
    op: &'static str,
) -> Result<(usize, usize, usize, usize, usize)> {
    if x.len() != 4 || w.len() != 4 || w[2] != 3 || w[3] != 3 || w[1] != x[1] {
        return Err(shape_err(op, format!("input {:?}, weight {:?}", x, w)));
    }
    Ok((x[0], x[1], x[2], x[3], w[0]))
}

pub fn conv2d(x: &Array, w: &Array) -> Result<Array> {
    let (n, c, h, wd, o) = conv_dims(&x.shape, &w.shape, "conv2d")?;
    let mut out = vec![0.0; n * o * h * wd];
    for b in 0..n {
        for oc in 0..o {
            let dst = &mut out[(b * o + oc) * h * wd..(b * o + oc + 1) * h * wd];
            for ic in 0..c {
                let src = &x.data[(b * c + ic) * h * wd..(b * c + ic + 1) * h * wd];
                let k = &w.data[(oc * c + ic) * 9..(oc * c + ic + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = k[ky * 3 + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = &src[sy as usize * wd..(sy as usize + 1) * wd];
                            let drow = &mut dst[y * wd..(y + 1) * wd];
                            let (x0, x1) = col_range(kx, wd);
                            for xx in x0..x1 {
                                drow[xx] += kv * srow[xx + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Array {
        shape: vec![n, o, h, wd],
        data: out,
    })
}

/// Output columns `xx` for which `xx + kx - 1` is inside `[0, wd)`.
fn col_range(kx: usize, wd: usize) -> (usize, usize) {
    match kx {
        0 => (1, wd),
        1 => (0, wd),
        _ => (0, wd.saturating_sub(1)),
    }
}

/// Gradient of `sum(g * conv2d(x, w))` with respect to `x`.
pub fn conv2d_input_grad(g: &Array, w: &Array) -> Result<Array> {
    if g.ndim() != 4
        || w.ndim() != 4
        || g.shape[1] != w.shape[0]
        || w.shape[2] != 3
        || w.shape[3] != 3
    {
        return Err(shape_err(
            "conv2d_input_grad",
            format!("grad {:?}, weight {:?}", g.shape, w.shape),
        ));
    }
    let (n, o, h, wd) = (g.shape[0], g.shape[1], g.shape[2], g.shape[3]);
    let c = w.shape[1];
    let mut out = vec![0.0; n * c * h * wd];
    for b in 0..n {
        for oc in 0..o {
            let src = &g.data[(b * o + oc) * h * wd..(b * o + oc + 1) * h * wd];
            for ic in 0..c {
                let dst = &mut out[(b * c + ic) * h * wd..(b * c + ic + 1) * h * wd];
                let k = &w.data[(oc * c + ic) * 9..(oc * c + ic + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = k[ky * 3 + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let grow = &src[y * wd..(y + 1) * wd];
                            let drow = &mut dst[sy as usize * wd..(sy as usize + 1) * wd];
                            let (x0, x1) = col_range(kx, wd);
                            for xx in x0..x1 {
                                drow[xx + kx - 1] += kv * grow[xx];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Array {
        shape: vec![n, c, h, wd],
        data: out,
    })
}

/// Gradient of `sum(g * conv2d(x, w))` with respect to `w`.
pub fn conv2d_weight_grad(x: &Array, g: &Array) -> Result<Array> {
    if x.ndim() != 4 || g.ndim() != 4 || x.shape[0] != g.shape[0] || x.shape[2..] != g.shape[2..] {
        return Err(shape_err(
            "conv2d_weight_grad",
            format!("input {:?}, grad {:?}", x.shape, g.shape),
        ));
    }
    let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let o = g.shape[1];
    let mut out = vec![0.0; o * c * 9];
    for b in 0..n {
        for oc in 0..o {
            let grad = &g.data[(b * o + oc) * h * wd..(b * o + oc + 1) * h * wd];
            for ic in 0..c {
                let src = &x.data[(b * c + ic) * h * wd..(b * c + ic + 1) * h * wd];
                let k = &mut out[(oc * c + ic) * 9..(oc * c + ic + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let mut acc = 0.0;
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = &src[sy as usize * wd..(sy as usize + 1) * wd];
                            let grow = &grad[y * wd..(y + 1) * wd];
                            let (x0, x1) = col_range(kx, wd);
                            for xx in x0..x1 {
                                acc += grow[xx] * srow[xx + kx - 1];
                            }
                        }
                        k[ky * 3 + kx] += acc;
                    }
                }
            }
        }
    }
    Ok(Array {
        shape: vec![o, c, 3, 3],
        data: out,
    })
}

/// Row-wise softmax over the last axis.
pub fn softmax(a: &Array) -> Result<Array> {
    let c = *a
        .shape
        .last()
        .ok_or_else(|| shape_err("softmax", "rank-0 input"))?;
    let mut out = a.data.clone();
    if c == 0 {
        return Ok(a.clone());
    }
    for row in out.chunks_mut(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(Array {
        shape: a.shape.clone(),
        data: out,
    })
}

/// Mean cross-entropy of row-wise softmax against integer labels.
pub fn softmax_cross_entropy(logits: &Array, labels: &[usize]) -> Result<f64> {
    if logits.ndim() != 2 || logits.shape[0] != labels.len() || logits.shape[0] == 0 {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("logits {:?}, {} labels", logits.shape, labels.len()),
        ));
    }
    let c = logits.shape[1];
    let mut total = 0.0;
    for (row, &y) in logits.data.chunks(c).zip(labels) {
        if y >= c {
            return Err(TensorError::Invalid {
                op: "softmax_cross_entropy",
                detail: format!("label {} out of range for {} classes", y, c),
            });
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Splits `shape` around `axis` into (outer, axis length, inner) element counts.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat(parts: &[&Array], axis: usize) -> Result<Array> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err("concat", "no inputs"))?;
    if axis >= first.ndim() {
        return Err(shape_err(
            "concat",
            format!("axis {} for rank {}", axis, first.ndim()),
        ));
    }
    let mut shape = first.shape.clone();
    shape[axis] = 0;
    for p in parts {
        let same = p.ndim() == first.ndim()
            && p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !same {
            return Err(shape_err(
                "concat",
                format!("{:?} vs {:?}", p.shape, first.shape),
            ));
        }
        shape[axis] += p.shape[axis];
    }
    let (outer, _, inner) = axis_split(&shape, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Array { shape, data })
}

pub fn slice(a: &Array, axis: usize, start: usize, end: usize) -> Result<Array> {
    if axis >= a.ndim() || start > end || end > a.shape[axis] {
        return Err(shape_err(
            "slice",
            format!("[{}..{}) on axis {} of {:?}", start, end, axis, a.shape),
        ));
    }
    let (outer, len, inner) = axis_split(&a.shape, axis);
    let mut shape = a.shape.clone();
    shape[axis] = end - start;
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        let base = o * len * inner;
        data.extend_from_slice(&a.data[base + start * inner..base + end * inner]);
    }
    Ok(Array { shape, data })
}

/// Embeds `a` at `[start, start + a.shape[axis])` of a zero array whose `axis` has length `len`.
pub fn slice_pad(a: &Array, axis: usize, start: usize, len: usize) -> Result<Array> {
    if axis >= a.ndim() || start + a.shape[axis] > len {
        return Err(shape_err(
            "slice_pad",
            format!("{:?} at {} into length {}", a.shape, start, len),
        ));
    }
    let (outer, part, inner) = axis_split(&a.shape, axis);
    let mut shape = a.shape.clone();
    shape[axis] = len;
    let mut data = vec![0.0; shape.iter().product()];
    for o in 0..outer {
        let dst = o * len * inner + start * inner;
        data[dst..dst + part * inner]
            .copy_from_slice(&a.data[o * part * inner..(o + 1) * part * inner]);
    }
    Ok(Array { shape, data })
}

/// `out[i] = src[idx[i]]`, with `None` reading as zero.
pub fn gather(src: &Array, idx: &[Option<usize>], out_shape: &[usize]) -> Result<Array> {
    if idx.len() != out_shape.iter().product::<usize>() {
        return Err(shape_err(
            "gather",
            "index count does not match output shape",
        ));
    }
    let data = idx
        .iter()
        .map(|i| match i {
            Some(j) => src
                .data
                .get(*j)
                .copied()
                .ok_or_else(|| TensorError::Invalid {
                    op: "gather",
                    detail: format!("index {} out of bounds for {} elements", j, src.numel()),
                }),
            None => Ok(0.0),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Array {
        shape: out_shape.to_vec(),
        data,
    })
}

/// Adjoint of [`gather`]: `out[idx[i]] += g[i]`.
pub fn scatter_add(g: &Array, idx: &[Option<usize>], out_shape: &[usize]) -> Result<Array> {
    if idx.len() != g.numel() {
        return Err(shape_err(
            "scatter_add",
            "index count does not match gradient size",
        ));
    }
    let mut out = vec![0.0; out_shape.iter().product()];
    for (v, i) in g.data.iter().zip(idx) {
        if let Some(j) = i {
            let slot = out.get_mut(*j).ok_or_else(|| TensorError::Invalid {
                op: "scatter_add",
                detail: format!("index {} out of bounds", j),
            })?;
            *slot += v;
        }
    }
    Ok(Array {
        shape: out_shape.to_vec(),
        data: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn sum_to_inverts_broadcast() {
        let a = Array::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let b = broadcast_to(&a, &[3, 2, 4]).unwrap();
        assert_eq!(b.numel(), 24);
        let s = sum_to(&b, &[2, 1]).unwrap();
        assert_eq!(s.data(), &[12.0, 24.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Array::new(vec![1, 1, 3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = Array::new(vec![1, 1, 3, 3], k).unwrap();
        assert_eq!(conv2d(&x, &w).unwrap(), x);
    }

    #[test]
    fn conv_adjoint_identity() {
        // <conv(x,w), g> == <x, conv_input_grad(g,w)> == <w, conv_weight_grad(x,g)>
        let x = Array::new(
            vec![2, 2, 4, 5],
            (0..80).map(|v| ((v * 7 % 13) as f64) - 6.0).collect(),
        )
        .unwrap();
        let w = Array::new(
            vec![3, 2, 3, 3],
            (0..54).map(|v| ((v * 5 % 11) as f64) / 3.0 - 1.5).collect(),
        )
        .unwrap();
        let g = Array::new(
            vec![2, 3, 4, 5],
            (0..120).map(|v| ((v * 3 % 7) as f64) - 3.0).collect(),
        )
        .unwrap();
        let dot = |a: &Array, b: &Array| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(p, q)| p * q)
                .sum::<f64>()
        };
        let t0 = dot(&conv2d(&x, &w).unwrap(), &g);
        let t1 = dot(&x, &conv2d_input_grad(&g, &w).unwrap());
        let t2 = dot(&w, &conv2d_weight_grad(&x, &g).unwrap());
        assert!((t0 - t1).abs() < 1e-9 && (t0 - t2).abs() < 1e-9);
    }

    #[test]
    fn slice_pad_roundtrip() {
        let a = Array::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s = slice(&a, 1, 1, 3).unwrap();
        assert_eq!(s.data(), &[2., 3., 5., 6.]);
        let p = slice_pad(&s, 1, 1, 3).unwrap();
        assert_eq!(p.data(), &[0., 2., 3., 0., 5., 6.]);
        let c = concat(&[&slice(&a, 1, 0, 1).unwrap(), &s], 1).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Array::new(vec![2, 2], vec![1.0]).is_err());
    }
}
