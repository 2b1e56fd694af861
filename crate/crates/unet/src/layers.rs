//! Network primitives on `B x C x H x W` tensors, each with an exact backward pass.

use std::ops::Range;

use hifreq_core::{Rng, Tensor};
use rayon::prelude::*;

use crate::gemm::{gemm, MatRef, Real};
use crate::UnetError;

/// Upper bound on im2col buffer elements; larger images are processed in row bands.
const COL_BUDGET: usize = 1 << 22;

fn dims4<T: Real>(x: &Tensor<T>) -> Result<[usize; 4], UnetError> {
    match *x.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(UnetError::ShapeMismatch {
            expected: vec![0, 0, 0, 0],
            got: x.shape().to_vec(),
        }),
    }
}

fn check_channels(got: &[usize], c: usize) -> Result<(), UnetError> {
    if got.len() != 4 || got[1] != c {
        let mut expected = got.to_vec();
        if expected.len() == 4 {
            expected[1] = c;
        }
        return Err(UnetError::ShapeMismatch {
            expected,
            got: got.to_vec(),
        });
    }
    Ok(())
}

/// Sliding-window geometry of a `k x k` convolution over a `c x h x w` image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        }
    }

    fn kdim(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Output-row bands whose column buffers fit the budget.
    fn bands(&self) -> impl Iterator<Item = Range<usize>> {
        let per_row = (self.kdim() * self.ow).max(1);
        let rows = (COL_BUDGET / per_row).clamp(1, self.oh);
        let oh = self.oh;
        (0..oh).step_by(rows).map(move |r| r..(r + rows).min(oh))
    }

    /// Input column range touched by kernel column `kj`: `(first output col, first input col, count)`.
    #[inline]
    fn col_span(&self, kj: usize) -> (usize, isize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        // smallest oc with oc*s + kj - p >= 0
        let lo = ((p - kj as isize).max(0) + s - 1) / s;
        // largest oc with oc*s + kj - p <= w - 1
        let hi_num = self.w as isize - 1 + p - kj as isize;
        if hi_num < 0 {
            return (0, 0, 0);
        }
        let hi = (hi_num / s).min(self.ow as isize - 1);
        if hi < lo {
            return (0, 0, 0);
        }
        (lo as usize, lo * s + kj as isize - p, (hi - lo + 1) as usize)
    }

    /// Fills `col` (`kdim x rows.len()*ow`) from `img` (`c x h x w`).
    pub fn im2col<T: Real>(&self, img: &[T], rows: Range<usize>, col: &mut [T]) {
        let n = rows.len() * self.ow;
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        for ci in 0..self.c {
            let plane = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut col[row * n..(row + 1) * n];
                    let (oc0, ic0, cnt) = self.col_span(kj);
                    for (j, or) in rows.clone().enumerate() {
                        let out = &mut dst[j * self.ow..(j + 1) * self.ow];
                        let ih = (or * s) as isize + ki as isize - p;
                        if ih < 0 || ih >= self.h as isize || cnt == 0 {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        out[..oc0].fill(T::zero());
                        out[oc0 + cnt..].fill(T::zero());
                        if s == 1 {
                            out[oc0..oc0 + cnt]
                                .copy_from_slice(&src[ic0 as usize..ic0 as usize + cnt]);
                        } else {
                            for t in 0..cnt {
                                out[oc0 + t] = src[ic0 as usize + t * s];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geom::im2col`]: accumulates `col` into `img`.
    pub fn col2im_add<T: Real>(&self, col: &[T], rows: Range<usize>, img: &mut [T]) {
        let n = rows.len() * self.ow;
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        for ci in 0..self.c {
            let plane = &mut img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &col[row * n..(row + 1) * n];
                    let (oc0, ic0, cnt) = self.col_span(kj);
                    if cnt == 0 {
                        continue;
                    }
                    for (j, or) in rows.clone().enumerate() {
                        let ih = (or * s) as isize + ki as isize - p;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        let inp = &src[j * self.ow..(j + 1) * self.ow];
                        for t in 0..cnt {
                            dst[ic0 as usize + t * s] = dst[ic0 as usize + t * s] + inp[oc0 + t];
                        }
                    }
                }
            }
        }
    }
}

/// Same-size convolution (stride 1, zero padding `k / 2`).
///
/// `weight` is `Cout x Cin x k x k`, `bias` is `Cout`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Stride-2 transposed convolution with a 3x3 kernel that doubles `H` and `W`
/// (padding 1, output padding 1).
///
/// `weight` is `Cin x Cout x 3 x 3`, `bias` is `Cout`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpLayer<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn he_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.uniform(-bound, bound))).expect("nonzero shape")
}

/// Parameter gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[cout, cin, k, k]).expect("nonzero"),
            bias: Tensor::zeros(&[cout]).expect("nonzero"),
        }
    }

    pub fn he(cin: usize, cout: usize, k: usize, rng: &mut Rng) -> Self {
        Self {
            weight: he_uniform(&[cout, cin, k, k], cin * k * k, rng),
            bias: Tensor::zeros(&[cout]).expect("nonzero"),
        }
    }

    pub fn cin(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn cout(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn geom(&self, h: usize, w: usize) -> Geom {
        Geom::new(self.cin(), h, w, self.kernel(), 1, self.kernel() / 2)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, UnetError> {
        check_channels(x.shape(), self.cin())?;
        let [b, _, h, w] = dims4(x)?;
        let g = self.geom(h, w);
        let cout = self.cout();
        let plane_in = self.cin() * h * w;
        let plane_out = cout * h * w;
        let kd = g.kdim();
        let mut out = vec![T::zero(); b * plane_out];
        out.par_chunks_mut(plane_out)
            .zip(x.data().par_chunks(plane_in))
            .for_each(|(y, xi)| {
                let mut col = Vec::new();
                for rows in g.bands() {
                    let n = rows.len() * w;
                    col.resize(kd * n, T::zero());
                    g.im2col(xi, rows.clone(), &mut col);
                    gemm(
                        MatRef::rm(self.weight.data(), cout, kd, kd),
                        MatRef::rm(&col, kd, n, n),
                        T::zero(),
                        &mut y[rows.start * w..],
                        h * w,
                    );
                }
                for (co, plane) in y.chunks_mut(h * w).enumerate() {
                    let bias = self.bias.data()[co];
                    plane.iter_mut().for_each(|v| *v = *v + bias);
                }
            });
        Ok(Tensor::from_vec(&[b, cout, h, w], out)?)
    }

    /// Gradients w.r.t. parameters and, when `need_dx`, the input.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Result<(Option<Tensor<T>>, LayerGrads<T>), UnetError> {
        check_channels(x.shape(), self.cin())?;
        let [b, _, h, w] = dims4(x)?;
        let cout = self.cout();
        if dy.shape() != [b, cout, h, w] {
            return Err(UnetError::ShapeMismatch {
                expected: vec![b, cout, h, w],
                got: dy.shape().to_vec(),
            });
        }
        let g = self.geom(h, w);
        let kd = g.kdim();
        let plane_in = self.cin() * h * w;
        let plane_out = cout * h * w;
        let mut dx = if need_dx {
            vec![T::zero(); b * plane_in]
        } else {
            Vec::new()
        };
        let slots: Vec<Option<&mut [T]>> = if need_dx {
            dx.chunks_mut(plane_in).map(Some).collect()
        } else {
            (0..b).map(|_| None).collect()
        };
        let per_item: Vec<(Vec<T>, Vec<T>)> = slots
            .into_par_iter()
            .enumerate()
            .map(|(i, mut dxi)| {
                let xi = &x.data()[i * plane_in..(i + 1) * plane_in];
                let dyi = &dy.data()[i * plane_out..(i + 1) * plane_out];
                let mut dw = vec![T::zero(); cout * kd];
                let db: Vec<T> = dyi
                    .chunks(h * w)
                    .map(|p| p.iter().fold(T::zero(), |a, &v| a + v))
                    .collect();
                let mut col = Vec::new();
                for rows in g.bands() {
                    let n = rows.len() * w;
                    col.resize(kd * n, T::zero());
                    g.im2col(xi, rows.clone(), &mut col);
                    let dy_band = MatRef {
                        data: &dyi[rows.start * w..],
                        rows: cout,
                        cols: n,
                        rs: h * w,
                        cs: 1,
                    };
                    gemm(dy_band, MatRef::rm(&col, kd, n, n).t(), T::one(), &mut dw, kd);
                    if let Some(dxi) = dxi.as_deref_mut() {
                        gemm(
                            MatRef::rm(self.weight.data(), cout, kd, kd).t(),
                            dy_band,
                            T::zero(),
                            &mut col,
                            n,
                        );
                        g.col2im_add(&col, rows, dxi);
                    }
                }
                (dw, db)
            })
            .collect();
        let mut dw = vec![T::zero(); cout * kd];
        let mut db = vec![T::zero(); cout];
        for (w_i, b_i) in per_item {
            dw.iter_mut().zip(&w_i).for_each(|(a, &v)| *a = *a + v);
            db.iter_mut().zip(&b_i).for_each(|(a, &v)| *a = *a + v);
        }
        let grads = LayerGrads {
            weight: Tensor::from_vec(self.weight.shape(), dw)?,
            bias: Tensor::from_vec(&[cout], db)?,
        };
        let dx = if need_dx {
            Some(Tensor::from_vec(x.shape(), dx)?)
        } else {
            None
        };
        Ok((dx, grads))
    }
}

impl<T: Real> UpLayer<T> {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[cin, cout, 3, 3]).expect("nonzero"),
            bias: Tensor::zeros(&[cout]).expect("nonzero"),
        }
    }

    pub fn he(cin: usize, cout: usize, rng: &mut Rng) -> Self {
        Self {
            weight: he_uniform(&[cin, cout, 3, 3], cin * 9, rng),
            bias: Tensor::zeros(&[cout]).expect("nonzero"),
        }
    }

    pub fn cin(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn cout(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Stride-2 convolution geometry on the (doubled) output image.
    fn geom(&self, h: usize, w: usize) -> Geom {
        Geom::new(self.cout(), 2 * h, 2 * w, 3, 2, 1)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, UnetError> {
        check_channels(x.shape(), self.cin())?;
        let [b, cin, h, w] = dims4(x)?;
        let g = self.geom(h, w);
        debug_assert_eq!((g.oh, g.ow), (h, w));
        let cout = self.cout();
        let kd = g.kdim();
        let plane_in = cin * h * w;
        let plane_out = cout * 4 * h * w;
        let mut out = vec![T::zero(); b * plane_out];
        out.par_chunks_mut(plane_out)
            .zip(x.data().par_chunks(plane_in))
            .for_each(|(y, xi)| {
                let mut col = Vec::new();
                for rows in g.bands() {
                    let n = rows.len() * w;
                    col.resize(kd * n, T::zero());
                    let x_band = MatRef {
                        data: &xi[rows.start * w..],
                        rows: cin,
                        cols: n,
                        rs: h * w,
                        cs: 1,
                    };
                    gemm(
                        MatRef::rm(self.weight.data(), cin, kd, kd).t(),
                        x_band,
                        T::zero(),
                        &mut col,
                        n,
                    );
                    g.col2im_add(&col, rows, y);
                }
                for (co, plane) in y.chunks_mut(4 * h * w).enumerate() {
                    let bias = self.bias.data()[co];
                    plane.iter_mut().for_each(|v| *v = *v + bias);
                }
            });
        Ok(Tensor::from_vec(&[b, cout, 2 * h, 2 * w], out)?)
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> Result<(Tensor<T>, LayerGrads<T>), UnetError> {
        check_channels(x.shape(), self.cin())?;
        let [b, cin, h, w] = dims4(x)?;
        let cout = self.cout();
        if dy.shape() != [b, cout, 2 * h, 2 * w] {
            return Err(UnetError::ShapeMismatch {
                expected: vec![b, cout, 2 * h, 2 * w],
                got: dy.shape().to_vec(),
            });
        }
        let g = self.geom(h, w);
        let kd = g.kdim();
        let plane_in = cin * h * w;
        let plane_out = cout * 4 * h * w;
        let mut dx = vec![T::zero(); b * plane_in];
        let per_item: Vec<(Vec<T>, Vec<T>)> = dx
            .par_chunks_mut(plane_in)
            .enumerate()
            .map(|(i, dxi)| {
                let xi = &x.data()[i * plane_in..(i + 1) * plane_in];
                let dyi = &dy.data()[i * plane_out..(i + 1) * plane_out];
                let db: Vec<T> = dyi
                    .chunks(4 * h * w)
                    .map(|p| p.iter().fold(T::zero(), |a, &v| a + v))
                    .collect();
                let mut dw = vec![T::zero(); cin * kd];
                let mut col = Vec::new();
                for rows in g.bands() {
                    let n = rows.len() * w;
                    col.resize(kd * n, T::zero());
                    g.im2col(dyi, rows.clone(), &mut col);
                    gemm(
                        MatRef::rm(self.weight.data(), cin, kd, kd),
                        MatRef::rm(&col, kd, n, n),
                        T::zero(),
                        &mut dxi[rows.start * w..],
                        h * w,
                    );
                    let x_band = MatRef {
                        data: &xi[rows.start * w..],
                        rows: cin,
                        cols: n,
                        rs: h * w,
                        cs: 1,
                    };
                    gemm(x_band, MatRef::rm(&col, kd, n, n).t(), T::one(), &mut dw, kd);
                }
                (dw, db)
            })
            .collect();
        let mut dw = vec![T::zero(); cin * kd];
        let mut db = vec![T::zero(); cout];
        for (w_i, b_i) in per_item {
            dw.iter_mut().zip(&w_i).for_each(|(a, &v)| *a = *a + v);
            db.iter_mut().zip(&b_i).for_each(|(a, &v)| *a = *a + v);
        }
        Ok((
            Tensor::from_vec(x.shape(), dx)?,
            LayerGrads {
                weight: Tensor::from_vec(self.weight.shape(), dw)?,
                bias: Tensor::from_vec(&[cout], db)?,
            },
        ))
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward through `y = relu(x)` given the forward output `y`; the gradient
/// at exactly zero is 0.
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// 2x2 max pooling; also returns, per output, the flat input index of the
/// maximum (first in row-major order on ties).
pub fn maxpool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>), UnetError> {
    let [b, c, h, w] = dims4(x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(UnetError::OddSize { height: h, width: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    let d = x.data();
    for p in 0..b * c {
        let base = p * h * w;
        for r in 0..oh {
            for cc in 0..ow {
                let i0 = base + 2 * r * w + 2 * cc;
                let mut best = i0;
                for i in [i0 + 1, i0 + w, i0 + w + 1] {
                    if d[i] > d[best] {
                        best = i;
                    }
                }
                out.push(d[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&[b, c, oh, ow], out)?, arg))
}

pub fn maxpool2_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[u32],
    dy: &Tensor<T>,
) -> Result<Tensor<T>, UnetError> {
    let mut dx = Tensor::zeros(input_shape)?;
    if dy.len() != argmax.len() {
        return Err(UnetError::ShapeMismatch {
            expected: vec![argmax.len()],
            got: dy.shape().to_vec(),
        });
    }
    let dd = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dd[i as usize] = dd[i as usize] + g;
    }
    Ok(dx)
}

/// Channel concatenation `[a, b]`.
pub fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, UnetError> {
    let [n, ca, h, w] = dims4(a)?;
    let [nb, cb, hb, wb] = dims4(b)?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(UnetError::ShapeMismatch {
            expected: vec![n, cb, h, w],
            got: b.shape().to_vec(),
        });
    }
    let (pa, pb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(n * (pa + pb));
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * pa..(i + 1) * pa]);
        out.extend_from_slice(&b.data()[i * pb..(i + 1) * pb]);
    }
    Ok(Tensor::from_vec(&[n, ca + cb, h, w], out)?)
}

/// Splits a gradient of [`concat`] back into its two parts.
pub fn split<T: Real>(d: &Tensor<T>, ca: usize) -> Result<(Tensor<T>, Tensor<T>), UnetError> {
    let [n, c, h, w] = dims4(d)?;
    if ca > c {
        return Err(UnetError::ShapeMismatch {
            expected: vec![n, ca, h, w],
            got: d.shape().to_vec(),
        });
    }
    let cb = c - ca;
    let (pa, pb) = (ca * h * w, cb * h * w);
    let mut a = Vec::with_capacity(n * pa);
    let mut b = Vec::with_capacity(n * pb);
    for i in 0..n {
        let item = &d.data()[i * (pa + pb)..(i + 1) * (pa + pb)];
        a.extend_from_slice(&item[..pa]);
        b.extend_from_slice(&item[pa..]);
    }
    Ok((
        Tensor::from_vec(&[n, ca, h, w], a)?,
        Tensor::from_vec(&[n, cb, h, w], b)?,
    ))
}
