//! Raw slice kernels behind the differentiable 3D ops. Layouts are row-major,
//! channels-first; kernels are cubic.

use super::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims {
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn spatial(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.c * self.spatial()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub input: Dims,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub od: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: Dims, k: usize, stride: usize, pad: usize) -> Option<Self> {
        let out = |e: usize| {
            let padded = e + 2 * pad;
            (padded >= k && stride >= 1).then(|| (padded - k) / stride + 1)
        };
        Some(Self {
            input,
            k,
            stride,
            pad,
            od: out(input.d)?,
            oh: out(input.h)?,
            ow: out(input.w)?,
        })
    }

    pub fn out_spatial(&self) -> usize {
        self.od * self.oh * self.ow
    }

    pub fn col_rows(&self) -> usize {
        self.input.c * self.k * self.k * self.k
    }

    /// 1×1×1, unit stride, unpadded: the column matrix is the input itself.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output positions `o` along one axis for which `o*stride + tap - pad`
    /// lands inside `[0, extent)`.
    fn valid_range(&self, tap: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = tap as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= extent - 1
        let hi_num = extent as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.min(out_extent as isize);
        let hi = (hi + 1).clamp(lo, out_extent as isize);
        (lo as usize, hi as usize)
    }
}

/// Unfold receptive fields into a `(C·k³) × (OD·OH·OW)` matrix.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let Dims { c, d, h, w } = g.input;
    let (k, s) = (g.k, g.stride);
    let osp = g.out_spatial();
    debug_assert_eq!(col.len(), g.col_rows() * osp);
    for ci in 0..c {
        let xc = &x[ci * d * h * w..(ci + 1) * d * h * w];
        for kd in 0..k {
            let (d0, d1) = g.valid_range(kd, d, g.od);
            for kh in 0..k {
                let (h0, h1) = g.valid_range(kh, h, g.oh);
                for kw in 0..k {
                    let (w0, w1) = g.valid_range(kw, w, g.ow);
                    let row = ((ci * k + kd) * k + kh) * k + kw;
                    let dst = &mut col[row * osp..(row + 1) * osp];
                    dst.fill(T::zero());
                    for od in d0..d1 {
                        let id = od * s + kd - g.pad;
                        for oh in h0..h1 {
                            let ih = oh * s + kh - g.pad;
                            let src_row = &xc[(id * h + ih) * w..(id * h + ih + 1) * w];
                            let dst_row = &mut dst[(od * g.oh + oh) * g.ow..][..g.ow];
                            if s == 1 {
                                let iw0 = w0 + kw - g.pad;
                                dst_row[w0..w1].copy_from_slice(&src_row[iw0..iw0 + (w1 - w0)]);
                            } else {
                                for ow in w0..w1 {
                                    dst_row[ow] = src_row[ow * s + kw - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input grid.
pub(crate) fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let Dims { c, d, h, w } = g.input;
    let (k, s) = (g.k, g.stride);
    let osp = g.out_spatial();
    for ci in 0..c {
        let xc = &mut dx[ci * d * h * w..(ci + 1) * d * h * w];
        for kd in 0..k {
            let (d0, d1) = g.valid_range(kd, d, g.od);
            for kh in 0..k {
                let (h0, h1) = g.valid_range(kh, h, g.oh);
                for kw in 0..k {
                    let (w0, w1) = g.valid_range(kw, w, g.ow);
                    let row = ((ci * k + kd) * k + kh) * k + kw;
                    let src = &col[row * osp..(row + 1) * osp];
                    for od in d0..d1 {
                        let id = od * s + kd - g.pad;
                        for oh in h0..h1 {
                            let ih = oh * s + kh - g.pad;
                            let dst_row = &mut xc[(id * h + ih) * w..(id * h + ih + 1) * w];
                            let src_row = &src[(od * g.oh + oh) * g.ow..][..g.ow];
                            for ow in w0..w1 {
                                dst_row[ow * s + kw - g.pad] += src_row[ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out = weight · col + bias`, weight `C_out × (C_in·k³)`.
pub(crate) fn conv3d_forward<T: Real>(
    x: &[T],
    g: &ConvGeom,
    weight: &[T],
    bias: &[T],
    c_out: usize,
) -> Vec<T> {
    let osp = g.out_spatial();
    let rows = g.col_rows();
    let mut out = vec![T::zero(); c_out * osp];
    for (co, chunk) in out.chunks_mut(osp).enumerate() {
        chunk.fill(bias[co]);
    }
    let owned;
    let col: &[T] = if g.is_pointwise() {
        x
    } else {
        let mut buf = vec![T::zero(); rows * osp];
        im2col(x, g, &mut buf);
        owned = buf;
        &owned
    };
    T::gemm(
        c_out,
        rows,
        osp,
        T::one(),
        weight,
        (rows as isize, 1),
        col,
        (osp as isize, 1),
        T::one(),
        &mut out,
        (osp as isize, 1),
    );
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv3d_backward<T: Real>(
    x: &[T],
    g: &ConvGeom,
    weight: &[T],
    c_out: usize,
    dy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let osp = g.out_spatial();
    let rows = g.col_rows();
    let db = need
        .2
        .then(|| dy.chunks(osp).map(|c| c.iter().copied().sum()).collect());
    let dw = need.1.then(|| {
        let owned;
        let col: &[T] = if g.is_pointwise() {
            x
        } else {
            let mut buf = vec![T::zero(); rows * osp];
            im2col(x, g, &mut buf);
            owned = buf;
            &owned
        };
        let mut dw = vec![T::zero(); c_out * rows];
        // dW = dY · colᵀ
        T::gemm(
            c_out,
            osp,
            rows,
            T::one(),
            dy,
            (osp as isize, 1),
            col,
            (1, osp as isize),
            T::zero(),
            &mut dw,
            (rows as isize, 1),
        );
        dw
    });
    let dx = need.0.then(|| {
        let mut dcol = vec![T::zero(); rows * osp];
        // dcol = Wᵀ · dY
        T::gemm(
            rows,
            c_out,
            osp,
            T::one(),
            weight,
            (1, rows as isize),
            dy,
            (osp as isize, 1),
            T::zero(),
            &mut dcol,
            (osp as isize, 1),
        );
        if g.is_pointwise() {
            dcol
        } else {
            let mut dx = vec![T::zero(); g.input.len()];
            col2im(&dcol, g, &mut dx);
            dx
        }
    });
    ConvGrads { dx, dw, db }
}

/// Transposed convolution with kernel == stride (non-overlapping taps).
/// Weight layout `C_in × C_out × s³`.
pub(crate) fn conv_t_forward<T: Real>(
    x: &[T],
    input: Dims,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    s: usize,
) -> Vec<T> {
    let sp = input.spatial();
    let taps = s * s * s;
    let m = c_out * taps;
    let mut tmp = vec![T::zero(); m * sp];
    T::gemm(
        m,
        input.c,
        sp,
        T::one(),
        weight,
        (1, m as isize),
        x,
        (sp as isize, 1),
        T::zero(),
        &mut tmp,
        (sp as isize, 1),
    );
    let (d, h, w) = (input.d, input.h, input.w);
    let (od, oh, ow) = (d * s, h * s, w * s);
    let mut out = vec![T::zero(); c_out * od * oh * ow];
    for co in 0..c_out {
        let b = bias[co];
        let dst = &mut out[co * od * oh * ow..(co + 1) * od * oh * ow];
        for t in 0..taps {
            let (a, bb, cc) = (t / (s * s), (t / s) % s, t % s);
            let src = &tmp[(co * taps + t) * sp..(co * taps + t + 1) * sp];
            for id in 0..d {
                for ih in 0..h {
                    let row = ((id * s + a) * oh + ih * s + bb) * ow + cc;
                    let srow = &src[(id * h + ih) * w..(id * h + ih + 1) * w];
                    for (iw, &v) in srow.iter().enumerate() {
                        dst[row + iw * s] = v + b;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_t_backward<T: Real>(
    x: &[T],
    input: Dims,
    weight: &[T],
    c_out: usize,
    s: usize,
    dy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let sp = input.spatial();
    let taps = s * s * s;
    let m = c_out * taps;
    let (d, h, w) = (input.d, input.h, input.w);
    let (od, oh, ow) = (d * s, h * s, w * s);
    let osp = od * oh * ow;
    let db = need
        .2
        .then(|| dy.chunks(osp).map(|c| c.iter().copied().sum()).collect());
    // gather dY into (C_out·s³) × (D·H·W)
    let mut gathered = vec![T::zero(); m * sp];
    for co in 0..c_out {
        let src = &dy[co * osp..(co + 1) * osp];
        for t in 0..taps {
            let (a, bb, cc) = (t / (s * s), (t / s) % s, t % s);
            let dst = &mut gathered[(co * taps + t) * sp..(co * taps + t + 1) * sp];
            for id in 0..d {
                for ih in 0..h {
                    let row = ((id * s + a) * oh + ih * s + bb) * ow + cc;
                    let drow = &mut dst[(id * h + ih) * w..(id * h + ih + 1) * w];
                    for (iw, v) in drow.iter_mut().enumerate() {
                        *v = src[row + iw * s];
                    }
                }
            }
        }
    }
    let dx = need.0.then(|| {
        let mut dx = vec![T::zero(); input.c * sp];
        T::gemm(
            input.c,
            m,
            sp,
            T::one(),
            weight,
            (m as isize, 1),
            &gathered,
            (sp as isize, 1),
            T::zero(),
            &mut dx,
            (sp as isize, 1),
        );
        dx
    });
    let dw = need.1.then(|| {
        let mut dw = vec![T::zero(); input.c * m];
        T::gemm(
            input.c,
            sp,
            m,
            T::one(),
            x,
            (sp as isize, 1),
            &gathered,
            (1, sp as isize),
            T::zero(),
            &mut dw,
            (m as isize, 1),
        );
        dw
    });
    ConvGrads { dx, dw, db }
}

/// Max-pool with cubic window `k`; returns output and, per output element,
/// the flat input index that won. Ties keep the lowest index.
pub(crate) fn maxpool_forward<T: Real>(x: &[T], input: Dims, k: usize) -> (Vec<T>, Vec<u32>) {
    let Dims { c, d, h, w } = input;
    let (od, oh, ow) = (d / k, h / k, w / k);
    let n = c * od * oh * ow;
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for ci in 0..c {
        for zd in 0..od {
            for zh in 0..oh {
                for zw in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for a in 0..k {
                        for b in 0..k {
                            let base = ((ci * d + zd * k + a) * h + zh * k + b) * w + zw * k;
                            for cc in 0..k {
                                let v = x[base + cc];
                                if best_i == usize::MAX || v > best {
                                    best = v;
                                    best_i = base + cc;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i as u32);
                }
            }
        }
    }
    (out, arg)
}
