use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense 5D array, row-major (n, c, z, y, x).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: [usize; 5],
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::dimension(format!(
                "tensor data of length {} does not fit shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Voxels per channel.
    pub fn spatial(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
        let [_, cs, zs, ys, xs] = self.shape;
        (((n * cs + c) * zs + z) * ys + y) * xs + x
    }

    pub fn get(&self, n: usize, c: usize, z: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, z, y, x)]
    }

    /// Contiguous (z, y, x) block of sample `n`, channel `c`.
    pub fn channel(&self, n: usize, c: usize) -> &[T] {
        let s = self.spatial();
        let o = (n * self.shape[1] + c) * s;
        &self.data[o..o + s]
    }

    pub fn channel_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let s = self.spatial();
        let o = (n * self.shape[1] + c) * s;
        &mut self.data[o..o + s]
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    if len + 2 * pad < kernel {
        0
    } else {
        (len + 2 * pad - kernel) / stride + 1
    }
}

/// Output positions `o` with `0 <= o*stride + k - pad < len`, as a range.
#[inline]
fn valid(out: usize, len: usize, k: usize, stride: usize, pad: usize) -> std::ops::Range<usize> {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // largest o with o*stride + k - pad <= len - 1
    let hi = if len + pad < k + 1 {
        0
    } else {
        ((len - 1 + pad - k) / stride + 1).min(out)
    };
    lo..hi.max(lo)
}

/// Geometry of one 3D convolution: cubic kernel, equal stride and padding
/// on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        dims.map(|d| conv_out(d, self.kernel, self.stride, self.pad))
    }
}

/// Visit every (output row, input row, weight) triple of a convolution for
/// one (input channel, output channel) pair: `f(out_row_start, in_row_start,
/// x_range, kernel_flat_index)` where the row covers outputs `x_range`.
#[inline]
fn for_each_row(
    g: ConvGeom,
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    mut f: impl FnMut(usize, usize, std::ops::Range<usize>, usize),
) {
    let [zi, yi, xi] = in_dims;
    let [zo, yo, xo] = out_dims;
    let k = g.kernel;
    for kz in 0..k {
        for oz in valid(zo, zi, kz, g.stride, g.pad) {
            let iz = oz * g.stride + kz - g.pad;
            for ky in 0..k {
                for oy in valid(yo, yi, ky, g.stride, g.pad) {
                    let iy = oy * g.stride + ky - g.pad;
                    for kx in 0..k {
                        let xr = valid(xo, xi, kx, g.stride, g.pad);
                        if xr.is_empty() {
                            continue;
                        }
                        let ix0 = xr.start * g.stride + kx - g.pad;
                        f(
                            (oz * yo + oy) * xo,
                            (iz * yi + iy) * xi + ix0,
                            xr,
                            (kz * k + ky) * k + kx,
                        );
                    }
                }
            }
        }
    }
}

fn is_pointwise(g: ConvGeom) -> bool {
    g.kernel == 1 && g.stride == 1 && g.pad == 0
}

/// Unfold sample `n` of `x` into `col`: row `ci * k^3 + tap`, one column
/// per output voxel; taps that fall in the padding stay zero.
fn im2col<T: Scalar>(x: &Tensor<T>, n: usize, g: ConvGeom, od: [usize; 3], col: &mut [T]) {
    let c_in = x.shape[1];
    let k3 = g.kernel.pow(3);
    let p = od.iter().product::<usize>();
    col[..c_in * k3 * p].iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..c_in {
        let inp = x.channel(n, ci);
        for_each_row(g, x.dims(), od, |o0, i0, xr, kk| {
            let row = &mut col[(ci * k3 + kk) * p + o0..];
            if g.stride == 1 {
                row[xr.clone()].copy_from_slice(&inp[i0..i0 + xr.len()]);
            } else {
                for (j, o) in xr.enumerate() {
                    row[o] = inp[i0 + j * g.stride];
                }
            }
        });
    }
}

/// Scatter-add `col` back into sample `n` of `gx`.
fn col2im<T: Scalar>(col: &[T], g: ConvGeom, od: [usize; 3], gx: &mut Tensor<T>, n: usize) {
    let c_in = gx.shape[1];
    let dims = gx.dims();
    let k3 = g.kernel.pow(3);
    let p = od.iter().product::<usize>();
    for ci in 0..c_in {
        let gin = gx.channel_mut(n, ci);
        for_each_row(g, dims, od, |o0, i0, xr, kk| {
            let row = &col[(ci * k3 + kk) * p + o0..];
            if g.stride == 1 {
                for (d, &v) in gin[i0..i0 + xr.len()].iter_mut().zip(&row[xr]) {
                    *d += v;
                }
            } else {
                for (j, o) in xr.enumerate() {
                    gin[i0 + j * g.stride] += row[o];
                }
            }
        });
    }
}

/// `y = conv(x, w) + b`; `w` is (c_out, c_in, k, k, k) stored flat.
pub fn conv3d_forward<T: Scalar>(x: &Tensor<T>, w: &[T], bias: Option<&[T]>, c_out: usize, g: ConvGeom) -> Tensor<T> {
    let [n, c_in, ..] = x.shape;
    let od = g.out_dims(x.dims());
    let p: usize = od.iter().product();
    let kk = c_in * g.kernel.pow(3);
    let mut y = Tensor::zeros([n, c_out, od[0], od[1], od[2]]);
    if p == 0 {
        return y;
    }
    let mut col = if is_pointwise(g) { Vec::new() } else { vec![T::zero(); kk * p] };
    for b in 0..n {
        let out = &mut y.data[b * c_out * p..(b + 1) * c_out * p];
        if let Some(bias) = bias {
            for (co, row) in out.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = bias[co]);
            }
        }
        let src: &[T] = if is_pointwise(g) {
            &x.data[b * kk * p..(b + 1) * kk * p]
        } else {
            im2col(x, b, g, od, &mut col);
            &col
        };
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(c_out, kk, p, w, [kk, 1], src, [p, 1], beta, out);
    }
    y
}

/// Gradients of a convolution: (dx, dw, db).
pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    gy: &Tensor<T>,
    g: ConvGeom,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let [n, c_in, ..] = x.shape;
    let c_out = gy.shape[1];
    let od = gy.dims();
    let p: usize = od.iter().product();
    let kk = c_in * g.kernel.pow(3);
    let mut gx = Tensor::zeros(x.shape);
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); c_out];
    if p == 0 {
        return (gx, gw, gb);
    }
    let mut col = vec![T::zero(); kk * p];
    for b in 0..n {
        let go = &gy.data[b * c_out * p..(b + 1) * c_out * p];
        for (co, row) in go.chunks(p).enumerate() {
            gb[co] += row.iter().copied().sum::<T>();
        }
        if is_pointwise(g) {
            let src = &x.data[b * kk * p..(b + 1) * kk * p];
            T::gemm(c_out, p, kk, go, [p, 1], src, [1, p], T::one(), &mut gw);
            let dst = &mut gx.data[b * kk * p..(b + 1) * kk * p];
            T::gemm(kk, c_out, p, w, [1, kk], go, [p, 1], T::zero(), dst);
        } else {
            im2col(x, b, g, od, &mut col);
            T::gemm(c_out, p, kk, go, [p, 1], &col, [1, p], T::one(), &mut gw);
            T::gemm(kk, c_out, p, w, [1, kk], go, [p, 1], T::zero(), &mut col);
            col2im(&col, g, od, &mut gx, b);
        }
    }
    (gx, gw, gb)
}

/// Nearest-neighbour upsampling by `factor`, cropped to `dims`.
pub fn upsample_forward<T: Scalar>(x: &Tensor<T>, factor: usize, dims: [usize; 3]) -> Tensor<T> {
    let [n, c, ..] = x.shape;
    let [_, yi, xi] = x.dims();
    let mut y = Tensor::zeros([n, c, dims[0], dims[1], dims[2]]);
    for b in 0..n {
        for ch in 0..c {
            let inp = x.channel(b, ch).to_vec();
            let out = y.channel_mut(b, ch);
            for z in 0..dims[0] {
                for yy in 0..dims[1] {
                    let row = ((z / factor) * yi + yy / factor) * xi;
                    let o = (z * dims[1] + yy) * dims[2];
                    for xx in 0..dims[2] {
                        out[o + xx] = inp[row + xx / factor];
                    }
                }
            }
        }
    }
    y
}

pub fn upsample_backward<T: Scalar>(gy: &Tensor<T>, factor: usize, in_shape: [usize; 5]) -> Tensor<T> {
    let mut gx = Tensor::zeros(in_shape);
    let [n, c, ..] = gy.shape;
    let dims = gy.dims();
    let [_, _, _, yi, xi] = in_shape;
    for b in 0..n {
        for ch in 0..c {
            let go = gy.channel(b, ch).to_vec();
            let gi = gx.channel_mut(b, ch);
            for z in 0..dims[0] {
                for yy in 0..dims[1] {
                    let row = ((z / factor) * yi + yy / factor) * xi;
                    let o = (z * dims[1] + yy) * dims[2];
                    for xx in 0..dims[2] {
                        gi[row + xx / factor] += go[o + xx];
                    }
                }
            }
        }
    }
    gx
}
