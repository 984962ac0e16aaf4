//! Strided 2-D convolution and its transpose, lowered to GEMM via im2col.

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{Dims, Scalar, Tensor4};

use super::param::{gaussian_init, Parameter};
use super::{missing_cache, Mode, Module};

/// Kernel geometry shared by [`Conv2d`] and [`Deconv2d`].
///
/// For a convolution `in_channels -> out_channels`, the weight tensor is
/// `(out, in, kh, kw)`. For the transposed layer the weight tensor is
/// `(in, out, kh, kw)`, which makes a deconvolution the exact adjoint of the
/// convolution that shares its weight tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            padding,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::Config("kernel extents must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        Ok(())
    }

    /// Spatial extent produced by a convolution over an `h x w` input.
    pub fn conv_output(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (kh, kw) = self.kernel;
        let p2 = 2 * self.padding;
        if h + p2 < kh {
            return Err(Error::Config(format!(
                "height {h} with padding {} is smaller than kernel height {kh}",
                self.padding
            )));
        }
        if w + p2 < kw {
            return Err(Error::Config(format!(
                "width {w} with padding {} is smaller than kernel width {kw}",
                self.padding
            )));
        }
        Ok(((h + p2 - kh) / self.stride + 1, (w + p2 - kw) / self.stride + 1))
    }

    /// Spatial extent produced by a transposed convolution over `h x w`.
    pub fn deconv_output(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (kh, kw) = self.kernel;
        let p2 = 2 * self.padding;
        let oh = (h.max(1) - 1) * self.stride + kh;
        let ow = (w.max(1) - 1) * self.stride + kw;
        if h == 0 || w == 0 || oh <= p2 || ow <= p2 {
            return Err(Error::Config(format!(
                "transposed convolution over {h}x{w} has non-positive output extent"
            )));
        }
        Ok((oh - p2, ow - p2))
    }

    fn window(&self) -> Window {
        Window {
            kh: self.kernel.0,
            kw: self.kernel.1,
            stride: self.stride,
            pad: self.padding,
        }
    }

    pub fn conv_weight_dims(&self) -> Dims {
        Dims::new(self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }

    pub fn deconv_weight_dims(&self) -> Dims {
        Dims::new(self.in_channels, self.out_channels, self.kernel.0, self.kernel.1)
    }

    fn bias_dims(&self) -> Dims {
        Dims::new(1, self.out_channels, 1, 1)
    }
}

#[derive(Clone, Copy)]
struct Window {
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

/// Unfolds `src` (dims `d`) into a `[c*kh*kw, n*oh*ow]` row-major matrix.
fn im2col<T: Scalar>(src: &[T], d: Dims, win: Window, oh: usize, ow: usize, cols: &mut [T]) {
    let ncols = d.n * oh * ow;
    debug_assert_eq!(cols.len(), d.c * win.kh * win.kw * ncols);
    let (h, w) = (d.h as isize, d.w as isize);
    let pad = win.pad as isize;
    for ci in 0..d.c {
        for ky in 0..win.kh {
            for kx in 0..win.kw {
                let row = ((ci * win.kh + ky) * win.kw + kx) * ncols;
                for ni in 0..d.n {
                    let plane = &src[(ni * d.c + ci) * d.h * d.w..][..d.h * d.w];
                    for oy in 0..oh {
                        let dst = &mut cols[row + (ni * oh + oy) * ow..][..ow];
                        let iy = (oy * win.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h {
                            dst.fill(T::zero());
                            continue;
                        }
                        let srow = &plane[iy as usize * d.w..][..d.w];
                        for (ox, out) in dst.iter_mut().enumerate() {
                            let ix = (ox * win.stride + kx) as isize - pad;
                            *out = if ix >= 0 && ix < w {
                                srow[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates the column matrix back into `dst`.
fn col2im<T: Scalar>(cols: &[T], d: Dims, win: Window, oh: usize, ow: usize, dst: &mut [T]) {
    let ncols = d.n * oh * ow;
    debug_assert_eq!(cols.len(), d.c * win.kh * win.kw * ncols);
    let (h, w) = (d.h as isize, d.w as isize);
    let pad = win.pad as isize;
    for ci in 0..d.c {
        for ky in 0..win.kh {
            for kx in 0..win.kw {
                let row = ((ci * win.kh + ky) * win.kw + kx) * ncols;
                for ni in 0..d.n {
                    let plane = &mut dst[(ni * d.c + ci) * d.h * d.w..][..d.h * d.w];
                    for oy in 0..oh {
                        let iy = (oy * win.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src = &cols[row + (ni * oh + oy) * ow..][..ow];
                        let drow = &mut plane[iy as usize * d.w..][..d.w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * win.stride + kx) as isize - pad;
                            if ix >= 0 && ix < w {
                                drow[ix as usize] = drow[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// NCHW tensor to a `[c, n*h*w]` channel-major matrix.
fn to_channel_major<T: Scalar>(t: &Tensor4<T>) -> Vec<T> {
    let d = t.dims();
    let p = d.plane();
    let ncols = d.n * p;
    let mut out = vec![T::zero(); d.len()];
    for n in 0..d.n {
        for c in 0..d.c {
            out[c * ncols + n * p..][..p].copy_from_slice(t.plane(n, c));
        }
    }
    out
}

/// Inverse of [`to_channel_major`], adding a per-channel bias.
fn from_channel_major<T: Scalar>(mat: &[T], d: Dims, bias: Option<&[T]>) -> Tensor4<T> {
    let p = d.plane();
    let ncols = d.n * p;
    let mut out = Tensor4::zeros(d);
    for n in 0..d.n {
        for c in 0..d.c {
            let src = &mat[c * ncols + n * p..][..p];
            let dst = out.plane_mut(n, c);
            match bias {
                Some(b) => {
                    let bc = b[c];
                    for (o, &v) in dst.iter_mut().zip(src) {
                        *o = v + bc;
                    }
                }
                None => dst.copy_from_slice(src),
            }
        }
    }
    out
}

fn add_channel_bias<T: Scalar>(t: &mut Tensor4<T>, bias: &[T]) {
    let d = t.dims();
    for n in 0..d.n {
        for (c, &b) in bias.iter().enumerate() {
            t.plane_mut(n, c).iter_mut().for_each(|v| *v = *v + b);
        }
    }
}

fn accumulate_bias_grad<T: Scalar>(upstream: &Tensor4<T>, grad: &mut [T]) {
    let d = upstream.dims();
    for n in 0..d.n {
        for (c, g) in grad.iter_mut().enumerate() {
            let s = upstream.plane(n, c).iter().fold(T::zero(), |a, &v| a + v);
            *g = *g + s;
        }
    }
}

fn check_params<T: Scalar>(
    what: &str,
    weight: &Parameter<T>,
    weight_dims: Dims,
    bias: &Parameter<T>,
    bias_dims: Dims,
) -> Result<()> {
    if weight.dims() != weight_dims {
        return Err(Error::Config(format!(
            "{what}: weight dims {} do not match geometry {}",
            weight.dims(),
            weight_dims
        )));
    }
    if bias.dims() != bias_dims {
        return Err(Error::Config(format!(
            "{what}: bias dims {} do not match geometry {}",
            bias.dims(),
            bias_dims
        )));
    }
    Ok(())
}

fn check_in_channels(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Config(format!(
            "{what}: input has {got} channels, layer expects in_channels = {want}"
        )));
    }
    Ok(())
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Parameter<T>,
    bias: &Parameter<T>,
    geom: &ConvGeometry,
) -> Result<Tensor4<T>> {
    let d = input.dims();
    check_in_channels("conv2d", d.c, geom.in_channels)?;
    check_params("conv2d", weight, geom.conv_weight_dims(), bias, geom.bias_dims())?;
    let (oh, ow) = geom.conv_output(d.h, d.w)?;
    let k = geom.in_channels * geom.kernel.0 * geom.kernel.1;
    let ncols = d.n * oh * ow;
    let mut cols = vec![T::zero(); k * ncols];
    im2col(input.data(), d, geom.window(), oh, ow, &mut cols);
    let cout = geom.out_channels;
    let mut out = vec![T::zero(); cout * ncols];
    T::gemm(
        cout,
        k,
        ncols,
        T::one(),
        weight.value.data(),
        (k as isize, 1),
        &cols,
        (ncols as isize, 1),
        T::zero(),
        &mut out,
        (ncols as isize, 1),
    );
    Ok(from_channel_major(
        &out,
        Dims::new(d.n, cout, oh, ow),
        Some(bias.value.data()),
    ))
}

/// Gradient of `<upstream, conv2d_forward(input)>`. Weight and bias
/// gradients accumulate into the parameters; the input gradient is returned.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    upstream: &Tensor4<T>,
    weight: &mut Parameter<T>,
    bias: &mut Parameter<T>,
    geom: &ConvGeometry,
) -> Result<Tensor4<T>> {
    let d = input.dims();
    check_in_channels("conv2d_backward", d.c, geom.in_channels)?;
    check_params("conv2d_backward", weight, geom.conv_weight_dims(), bias, geom.bias_dims())?;
    let (oh, ow) = geom.conv_output(d.h, d.w)?;
    let cout = geom.out_channels;
    upstream.require_dims(Dims::new(d.n, cout, oh, ow), "conv2d_backward upstream")?;

    let k = geom.in_channels * geom.kernel.0 * geom.kernel.1;
    let ncols = d.n * oh * ow;
    let dy = to_channel_major(upstream);
    let mut cols = vec![T::zero(); k * ncols];
    im2col(input.data(), d, geom.window(), oh, ow, &mut cols);

    T::gemm(
        cout,
        ncols,
        k,
        T::one(),
        &dy,
        (ncols as isize, 1),
        &cols,
        (1, ncols as isize),
        T::one(),
        weight.grad.data_mut(),
        (k as isize, 1),
    );
    accumulate_bias_grad(upstream, bias.grad.data_mut());

    // Reuse the column buffer for the column-space input gradient.
    T::gemm(
        k,
        cout,
        ncols,
        T::one(),
        weight.value.data(),
        (1, k as isize),
        &dy,
        (ncols as isize, 1),
        T::zero(),
        &mut cols,
        (ncols as isize, 1),
    );
    let mut grad_input = Tensor4::zeros(d);
    col2im(&cols, d, geom.window(), oh, ow, grad_input.data_mut());
    Ok(grad_input)
}

pub fn deconv2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Parameter<T>,
    bias: &Parameter<T>,
    geom: &ConvGeometry,
) -> Result<Tensor4<T>> {
    let d = input.dims();
    check_in_channels("deconv2d", d.c, geom.in_channels)?;
    check_params("deconv2d", weight, geom.deconv_weight_dims(), bias, geom.bias_dims())?;
    let (oh, ow) = geom.deconv_output(d.h, d.w)?;
    let cin = geom.in_channels;
    let rows = geom.out_channels * geom.kernel.0 * geom.kernel.1;
    let ncols = d.n * d.h * d.w;
    let x = to_channel_major(input);
    let mut cols = vec![T::zero(); rows * ncols];
    T::gemm(
        rows,
        cin,
        ncols,
        T::one(),
        weight.value.data(),
        (1, rows as isize),
        &x,
        (ncols as isize, 1),
        T::zero(),
        &mut cols,
        (ncols as isize, 1),
    );
    let od = Dims::new(d.n, geom.out_channels, oh, ow);
    let mut out = Tensor4::zeros(od);
    col2im(&cols, od, geom.window(), d.h, d.w, out.data_mut());
    add_channel_bias(&mut out, bias.value.data());
    Ok(out)
}

pub fn deconv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    upstream: &Tensor4<T>,
    weight: &mut Parameter<T>,
    bias: &mut Parameter<T>,
    geom: &ConvGeometry,
) -> Result<Tensor4<T>> {
    let d = input.dims();
    check_in_channels("deconv2d_backward", d.c, geom.in_channels)?;
    check_params("deconv2d_backward", weight, geom.deconv_weight_dims(), bias, geom.bias_dims())?;
    let (oh, ow) = geom.deconv_output(d.h, d.w)?;
    let od = Dims::new(d.n, geom.out_channels, oh, ow);
    upstream.require_dims(od, "deconv2d_backward upstream")?;

    let cin = geom.in_channels;
    let rows = geom.out_channels * geom.kernel.0 * geom.kernel.1;
    let ncols = d.n * d.h * d.w;
    let mut cols = vec![T::zero(); rows * ncols];
    im2col(upstream.data(), od, geom.window(), d.h, d.w, &mut cols);
    let x = to_channel_major(input);

    T::gemm(
        cin,
        ncols,
        rows,
        T::one(),
        &x,
        (ncols as isize, 1),
        &cols,
        (1, ncols as isize),
        T::one(),
        weight.grad.data_mut(),
        (rows as isize, 1),
    );
    accumulate_bias_grad(upstream, bias.grad.data_mut());

    let mut dx = vec![T::zero(); cin * ncols];
    T::gemm(
        cin,
        rows,
        ncols,
        T::one(),
        weight.value.data(),
        (rows as isize, 1),
        &cols,
        (ncols as isize, 1),
        T::zero(),
        &mut dx,
        (ncols as isize, 1),
    );
    Ok(from_channel_major(&dx, d, None))
}

/// Convolution layer with cached input.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub geom: ConvGeometry,
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    cache: Option<Tensor4<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Gaussian-initialized weights, zero bias.
    pub fn new(name: &str, geom: ConvGeometry, init_std: f64, rng: &mut Stream) -> Result<Self> {
        geom.validate()?;
        Ok(Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                gaussian_init(geom.conv_weight_dims(), init_std, rng),
            ),
            bias: Parameter::zeros(format!("{name}.bias"), geom.bias_dims()),
            geom,
            cache: None,
        })
    }

    pub fn from_parts(geom: ConvGeometry, weight: Parameter<T>, bias: Parameter<T>) -> Result<Self> {
        geom.validate()?;
        check_params("conv2d", &weight, geom.conv_weight_dims(), &bias, geom.bias_dims())?;
        Ok(Self {
            geom,
            weight,
            bias,
            cache: None,
        })
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let out = conv2d_forward(input, &self.weight, &self.bias, &self.geom)?;
        self.cache = (mode == Mode::Train).then(|| input.clone());
        Ok(out)
    }

    fn infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        conv2d_forward(input, &self.weight, &self.bias, &self.geom)
    }

    fn backward(&mut self, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
        let input = self.cache.take().ok_or_else(|| missing_cache("conv2d"))?;
        conv2d_backward(&input, upstream, &mut self.weight, &mut self.bias, &self.geom)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Transposed-convolution layer with cached input.
#[derive(Debug, Clone)]
pub struct Deconv2d<T: Scalar> {
    pub geom: ConvGeometry,
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    cache: Option<Tensor4<T>>,
}

impl<T: Scalar> Deconv2d<T> {
    pub fn new(name: &str, geom: ConvGeometry, init_std: f64, rng: &mut Stream) -> Result<Self> {
        geom.validate()?;
        Ok(Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                gaussian_init(geom.deconv_weight_dims(), init_std, rng),
            ),
            bias: Parameter::zeros(format!("{name}.bias"), geom.bias_dims()),
            geom,
            cache: None,
        })
    }

    pub fn from_parts(geom: ConvGeometry, weight: Parameter<T>, bias: Parameter<T>) -> Result<Self> {
        geom.validate()?;
        check_params("deconv2d", &weight, geom.deconv_weight_dims(), &bias, geom.bias_dims())?;
        Ok(Self {
            geom,
            weight,
            bias,
            cache: None,
        })
    }
}

impl<T: Scalar> Module<T> for Deconv2d<T> {
    fn forward(&mut self, input: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let out = deconv2d_forward(input, &self.weight, &self.bias, &self.geom)?;
        self.cache = (mode == Mode::Train).then(|| input.clone());
        Ok(out)
    }

    fn infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        deconv2d_forward(input, &self.weight, &self.bias, &self.geom)
    }

    fn backward(&mut self, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
        let input = self.cache.take().ok_or_else(|| missing_cache("deconv2d"))?;
        deconv2d_backward(&input, upstream, &mut self.weight, &mut self.bias, &self.geom)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
