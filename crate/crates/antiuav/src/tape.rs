//! Minimal reverse-mode automatic differentiation on dense `f64` arrays.
//!
//! A [`Tape`] records a sequence of array operations; [`Tape::backward`]
//! replays them in reverse to accumulate exact gradients of a scalar with
//! respect to every recorded input. The engine is deliberately small and
//! fully sequential: the same inputs always produce bit-identical values
//! and gradients, which the training loop relies on for reproducibility.
//!
//! The op set is exactly what the tracker needs: dense/depthwise
//! convolution, bilinear region pooling, elementwise arithmetic, the two
//! loss kernels (logistic cross-entropy and smooth-L1), and a few
//! reductions. [`check_gradients`] provides the central finite-difference
//! harness used by the verification suite.

use crate::geometry::BoundingBox;

/// A dense row-major `f64` array with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Arr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Arr {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single element of a scalar array.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    /// Fills with uniform samples from `[lo, hi)` drawn in index order.
    pub fn fill_uniform<R: rand::Rng>(&mut self, rng: &mut R, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = rng.gen_range(lo..hi);
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
pub type Var = usize;

type BackFn = Box<dyn Fn(&[Arr], &Arr, &mut Grads)>;

/// Per-variable gradient store produced by [`Tape::backward`].
pub struct Grads {
    slots: Vec<Option<Arr>>,
}

impl Grads {
    /// Gradient of the backward root with respect to `v`, if any path
    /// connected them.
    pub fn get(&self, v: Var) -> Option<&Arr> {
        self.slots[v].as_ref()
    }

    /// Gradient of `v`, densified to zeros when no path reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Arr {
        self.slots[v].clone().unwrap_or_else(|| Arr::zeros(shape))
    }

    fn accum(&mut self, v: Var, shape: &[usize]) -> &mut Arr {
        if self.slots[v].is_none() {
            self.slots[v] = Some(Arr::zeros(shape));
        }
        self.slots[v].as_mut().expect("just filled")
    }
}

/// A record of array operations supporting reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    values: Vec<Arr>,
    backs: Vec<Option<BackFn>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded variables.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Records a leaf value (an input or parameter).
    pub fn input(&mut self, value: Arr) -> Var {
        self.push(value, None)
    }

    /// Forward value of a variable.
    pub fn value(&self, v: Var) -> &Arr {
        &self.values[v]
    }

    fn push(&mut self, value: Arr, back: Option<BackFn>) -> Var {
        self.values.push(value);
        self.backs.push(back);
        self.values.len() - 1
    }

    /// Accumulates gradients of the scalar `root` with respect to every
    /// variable it depends on.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(
            self.values[root].len(),
            1,
            "backward root must be a scalar, got shape {:?}",
            self.values[root].shape()
        );
        let mut grads = Grads {
            slots: vec![None; self.values.len()],
        };
        grads.slots[root] = Some(Arr::scalar(1.0));
        // Reverse topological order is simply reverse insertion order.
        for v in (0..=root).rev() {
            let Some(g) = grads.slots[v].take() else {
                continue;
            };
            if let Some(back) = &self.backs[v] {
                back(&self.values, &g, &mut grads);
            }
            grads.slots[v] = Some(g);
        }
        grads
    }

    // --- elementwise ops ---------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.values[a], &self.values[b]);
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = va.shape().to_vec();
        let back_shape = shape.clone();
        self.push(
            Arr::from_vec(shape, data),
            Some(Box::new(move |_vals, g, grads| {
                for (dst, src) in grads.accum(a, &back_shape).data_mut().iter_mut().zip(g.data()) {
                    *dst += src;
                }
                for (dst, src) in grads.accum(b, &back_shape).data_mut().iter_mut().zip(g.data()) {
                    *dst += src;
                }
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.values[a], &self.values[b]);
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = va.shape().to_vec();
        let back_shape = shape.clone();
        self.push(
            Arr::from_vec(shape, data),
            Some(Box::new(move |_vals, g, grads| {
                for (dst, src) in grads.accum(a, &back_shape).data_mut().iter_mut().zip(g.data()) {
                    *dst += src;
                }
                for (dst, src) in grads.accum(b, &back_shape).data_mut().iter_mut().zip(g.data()) {
                    *dst -= src;
                }
            })),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.values[a], &self.values[b]);
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = va.shape().to_vec();
        let back_shape = shape.clone();
        self.push(
            Arr::from_vec(shape, data),
            Some(Box::new(move |vals, g, grads| {
                {
                    let da = grads.accum(a, &back_shape);
                    for i in 0..g.len() {
                        da.data_mut()[i] += g.data()[i] * vals[b].data()[i];
                    }
                }
                let db = grads.accum(b, &back_shape);
                for i in 0..g.len() {
                    db.data_mut()[i] += g.data()[i] * vals[a].data()[i];
                }
            })),
        )
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let va = &self.values[a];
        let data = va.data().iter().map(|x| x * k).collect();
        let shape = va.shape().to_vec();
        let back_shape = shape.clone();
        self.push(
            Arr::from_vec(shape, data),
            Some(Box::new(move |_vals, g, grads| {
                let da = grads.accum(a, &back_shape);
                for i in 0..g.len() {
                    da.data_mut()[i] += k * g.data()[i];
                }
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = &self.values[a];
        let data = va.data().iter().map(|x| x.max(0.0)).collect();
        let shape = va.shape().to_vec();
        let back_shape = shape.clone();
        self.push(
            Arr::from_vec(shape, data),
            Some(Box::new(move |vals, g, grads| {
                let da = grads.accum(a, &back_shape);
                for i in 0..g.len() {
                    if vals[a].data()[i] > 0.0 {
                        da.data_mut()[i] += g.data()[i];
                    }
                }
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let va = &self.values[a];
        let data: Vec<f64> = va.data().iter().map(|x| sigmoid(*x)).collect();
        let shape = va.shape().to_vec();
        let back_shape = shape.clone();
        let saved = data.clone();
        self.push(
            Arr::from_vec(shape, data),
            Some(Box::new(move |_vals, g, grads| {
                let da = grads.accum(a, &back_shape);
                for i in 0..g.len() {
                    let s = saved[i];
                    da.data_mut()[i] += g.data()[i] * s * (1.0 - s);
                }
            })),
        )
    }

    /// Adds a per-channel bias to a CHW map.
    pub fn add_bias_chw(&mut self, x: Var, bias: Var) -> Var {
        let (vx, vb) = (&self.values[x], &self.values[bias]);
        assert_eq!(vx.shape().len(), 3, "add_bias_chw expects CHW input");
        let (c, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        assert_eq!(vb.shape(), &[c], "bias must have one entry per channel");
        let mut data = vx.data().to_vec();
        for ci in 0..c {
            let b = vb.data()[ci];
            for v in &mut data[ci * h * w..(ci + 1) * h * w] {
                *v += b;
            }
        }
        let shape = vx.shape().to_vec();
        let x_shape = shape.clone();
        self.push(
            Arr::from_vec(shape, data),
            Some(Box::new(move |_vals, g, grads| {
                {
                    let dx = grads.accum(x, &x_shape);
                    for i in 0..g.len() {
                        dx.data_mut()[i] += g.data()[i];
                    }
                }
                let db = grads.accum(bias, &[c]);
                for ci in 0..c {
                    let s: f64 = g.data()[ci * h * w..(ci + 1) * h * w].iter().sum();
                    db.data_mut()[ci] += s;
                }
            })),
        )
    }

    // --- convolution family --------------------------------------------------

    /// Dense 2-D convolution of a CHW map with an OIHW weight tensor, with
    /// zero padding.
    pub fn conv2d(&mut self, x: Var, weight: Var, stride: usize, pad: usize) -> Var {
        let (vx, vw) = (&self.values[x], &self.values[weight]);
        assert_eq!(vx.shape().len(), 3, "conv2d input must be CHW");
        assert_eq!(vw.shape().len(), 4, "conv2d weight must be OIHW");
        let (cin, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let (cout, wcin, kh, kw) = (
            vw.shape()[0],
            vw.shape()[1],
            vw.shape()[2],
            vw.shape()[3],
        );
        assert_eq!(cin, wcin, "conv2d channel mismatch");
        assert!(stride > 0);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;

        let mut out = vec![0.0f64; cout * ho * wo];
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += vx.data()[(ci * h + iy as usize) * w + ix as usize]
                                    * vw.data()[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        let x_shape = vx.shape().to_vec();
        let w_shape = vw.shape().to_vec();
        self.push(
            Arr::from_vec(vec![cout, ho, wo], out),
            Some(Box::new(move |vals, g, grads| {
                {
                    let dx = grads.accum(x, &x_shape);
                    for co in 0..cout {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let go = g.data()[(co * ho + oy) * wo + ox];
                                if go == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            dx.data_mut()
                                                [(ci * h + iy as usize) * w + ix as usize] += go
                                                * vals[weight].data()
                                                    [((co * cin + ci) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let dw = grads.accum(weight, &w_shape);
                for co in 0..cout {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let go = g.data()[(co * ho + oy) * wo + ox];
                            if go == 0.0 {
                                continue;
                            }
                            for ci in 0..cin {
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        dw.data_mut()[((co * cin + ci) * kh + ky) * kw + kx] += go
                                            * vals[x].data()
                                                [(ci * h + iy as usize) * w + ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            })),
        )
    }

    /// Depthwise cross-correlation of a CHW map with a per-channel kernel,
    /// stride 1, zero padding chosen so the spatial size is preserved
    /// (odd kernel sides).
    pub fn depthwise_corr(&mut self, x: Var, kernel: Var) -> Var {
        let (vx, vk) = (&self.values[x], &self.values[kernel]);
        assert_eq!(vx.shape().len(), 3, "depthwise_corr input must be CHW");
        assert_eq!(vk.shape().len(), 3, "depthwise_corr kernel must be CHW");
        let (c, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let (kc, kh, kw) = (vk.shape()[0], vk.shape()[1], vk.shape()[2]);
        assert_eq!(c, kc, "depthwise_corr channel mismatch");
        assert!(kh % 2 == 1 && kw % 2 == 1, "kernel sides must be odd");
        let (ph, pw) = (kh / 2, kw / 2);

        let mut out = vec![0.0f64; c * h * w];
        for ci in 0..c {
            for y in 0..h {
                for x_ in 0..w {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        let iy = (y + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (x_ + kx) as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += vx.data()[(ci * h + iy as usize) * w + ix as usize]
                                * vk.data()[(ci * kh + ky) * kw + kx];
                        }
                    }
                    out[(ci * h + y) * w + x_] = acc;
                }
            }
        }
        let x_shape = vx.shape().to_vec();
        let k_shape = vk.shape().to_vec();
        self.push(
            Arr::from_vec(vec![c, h, w], out),
            Some(Box::new(move |vals, g, grads| {
                {
                    let dx = grads.accum(x, &x_shape);
                    for ci in 0..c {
                        for y in 0..h {
                            for x_ in 0..w {
                                let go = g.data()[(ci * h + y) * w + x_];
                                if go == 0.0 {
                                    continue;
                                }
                                for ky in 0..kh {
                                    let iy = (y + ky) as isize - ph as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (x_ + kx) as isize - pw as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        dx.data_mut()[(ci * h + iy as usize) * w + ix as usize] +=
                                            go * vals[kernel].data()[(ci * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                    }
                }
                let dk = grads.accum(kernel, &k_shape);
                for ci in 0..c {
                    for y in 0..h {
                        for x_ in 0..w {
                            let go = g.data()[(ci * h + y) * w + x_];
                            if go == 0.0 {
                                continue;
                            }
                            for ky in 0..kh {
                                let iy = (y + ky) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (x_ + kx) as isize - pw as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    dk.data_mut()[(ci * kh + ky) * kw + kx] += go
                                        * vals[x].data()[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                }
            })),
        )
    }

    /// Bilinear region pooling: samples a `size x size` grid of points
    /// inside `rect` (given in feature-map coordinates) from a CHW map,
    /// one sample per output bin at the bin center.
    ///
    /// Feature cell `(ix, iy)` is treated as a point sample located at
    /// `(ix + 0.5, iy + 0.5)`; sample coordinates are clamped to the map
    /// border. The output is differentiable with respect to the map (the
    /// rectangle is a constant).
    pub fn roi_align(&mut self, x: Var, rect: &BoundingBox, size: usize) -> Var {
        let vx = &self.values[x];
        assert_eq!(vx.shape().len(), 3, "roi_align input must be CHW");
        let (c, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        assert!(size > 0);

        // Precompute bilinear taps per output bin: 4 neighbors + fractions.
        let mut taps = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let sx = rect.x1 + (j as f64 + 0.5) * rect.width() / size as f64;
                let sy = rect.y1 + (i as f64 + 0.5) * rect.height() / size as f64;
                // Shift into cell-center coordinates and clamp inside the map.
                let u = (sx - 0.5).clamp(0.0, (w - 1) as f64);
                let v = (sy - 0.5).clamp(0.0, (h - 1) as f64);
                let x0 = u.floor() as usize;
                let y0 = v.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let fx = u - x0 as f64;
                let fy = v - y0 as f64;
                taps.push(([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], fx, fy));
            }
        }

        // Interpolate as nested lerps a + t*(b - a): exact on constant
        // maps (a == b collapses to a), unlike a 4-term weighted sum.
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let mut out = vec![0.0f64; c * size * size];
        for ci in 0..c {
            let plane = &vx.data()[ci * h * w..(ci + 1) * h * w];
            for (bin, (idx, fx, fy)) in taps.iter().enumerate() {
                let top = lerp(plane[idx[0]], plane[idx[1]], *fx);
                let bottom = lerp(plane[idx[2]], plane[idx[3]], *fx);
                out[ci * size * size + bin] = lerp(top, bottom, *fy);
            }
        }
        let x_shape = vx.shape().to_vec();
        self.push(
            Arr::from_vec(vec![c, size, size], out),
            Some(Box::new(move |_vals, g, grads| {
                let dx = grads.accum(x, &x_shape);
                for ci in 0..c {
                    for (bin, (idx, fx, fy)) in taps.iter().enumerate() {
                        let go = g.data()[ci * size * size + bin];
                        if go == 0.0 {
                            continue;
                        }
                        let wt = [
                            (1.0 - fy) * (1.0 - fx),
                            (1.0 - fy) * fx,
                            fy * (1.0 - fx),
                            fy * fx,
                        ];
                        for (i, k) in idx.iter().zip(wt) {
                            dx.data_mut()[ci * h * w + *i] += go * k;
                        }
                    }
                }
            })),
        )
    }

    // --- dense layers, gathers, reshapes -------------------------------------

    /// Fully connected layer `weight (M, N) . x (N) + bias (M)`.
    pub fn linear(&mut self, weight: Var, x: Var, bias: Option<Var>) -> Var {
        let (vw, vx) = (&self.values[weight], &self.values[x]);
        assert_eq!(vw.shape().len(), 2, "linear weight must be 2-D");
        let (m, n) = (vw.shape()[0], vw.shape()[1]);
        assert_eq!(vx.len(), n, "linear input length mismatch");
        let mut out = vec![0.0f64; m];
        for mi in 0..m {
            let row = &vw.data()[mi * n..(mi + 1) * n];
            out[mi] = row.iter().zip(vx.data()).map(|(a, b)| a * b).sum();
        }
        if let Some(b) = bias {
            let vb = &self.values[b];
            assert_eq!(vb.len(), m, "linear bias length mismatch");
            for (o, bv) in out.iter_mut().zip(vb.data()) {
                *o += bv;
            }
        }
        self.push(
            Arr::from_vec(vec![m], out),
            Some(Box::new(move |vals, g, grads| {
                {
                    let dw = grads.accum(weight, &[m, n]);
                    for mi in 0..m {
                        let go = g.data()[mi];
                        if go == 0.0 {
                            continue;
                        }
                        for ni in 0..n {
                            dw.data_mut()[mi * n + ni] += go * vals[x].data()[ni];
                        }
                    }
                }
                {
                    let dx = grads.accum(x, &[n]);
                    for mi in 0..m {
                        let go = g.data()[mi];
                        if go == 0.0 {
                            continue;
                        }
                        for ni in 0..n {
                            dx.data_mut()[ni] += go * vals[weight].data()[mi * n + ni];
                        }
                    }
                }
                if let Some(b) = bias {
                    let db = grads.accum(b, &[m]);
                    for mi in 0..m {
                        db.data_mut()[mi] += g.data()[mi];
                    }
                }
            })),
        )
    }

    /// Reinterprets a value under a new shape of the same total length.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let va = &self.values[a];
        assert_eq!(
            shape.iter().product::<usize>(),
            va.len(),
            "reshape length mismatch"
        );
        let data = va.data().to_vec();
        let back_shape = va.shape().to_vec();
        self.push(
            Arr::from_vec(shape, data),
            Some(Box::new(move |_vals, g, grads| {
                let da = grads.accum(a, &back_shape);
                for i in 0..g.len() {
                    da.data_mut()[i] += g.data()[i];
                }
            })),
        )
    }

    /// Flattens to a rank-1 vector.
    pub fn flatten(&mut self, a: Var) -> Var {
        let n = self.values[a].len();
        self.reshape(a, vec![n])
    }

    /// Selects elements by flat index (indices may repeat).
    pub fn gather(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let va = &self.values[a];
        let data: Vec<f64> = indices.iter().map(|i| va.data()[*i]).collect();
        let n = data.len();
        let back_shape = va.shape().to_vec();
        self.push(
            Arr::from_vec(vec![n], data),
            Some(Box::new(move |_vals, g, grads| {
                let da = grads.accum(a, &back_shape);
                for (out_i, src_i) in indices.iter().enumerate() {
                    da.data_mut()[*src_i] += g.data()[out_i];
                }
            })),
        )
    }

    // --- loss kernels and reductions ------------------------------------------

    /// Elementwise binary cross-entropy on logits against constant targets,
    /// in the numerically stable form
    /// `max(s, 0) - s * t + ln(1 + exp(-|s|))`.
    pub fn bce_logits(&mut self, logits: Var, targets: &Arr) -> Var {
        let vl = &self.values[logits];
        assert_eq!(vl.len(), targets.len(), "bce_logits length mismatch");
        let t = targets.data().to_vec();
        let data: Vec<f64> = vl
            .data()
            .iter()
            .zip(&t)
            .map(|(s, ti)| s.max(0.0) - s * ti + (-s.abs()).exp().ln_1p())
            .collect();
        let n = data.len();
        self.push(
            Arr::from_vec(vec![n], data),
            Some(Box::new(move |vals, g, grads| {
                let dl = grads.accum(logits, &[n]);
                for i in 0..n {
                    let s = vals[logits].data()[i];
                    dl.data_mut()[i] += g.data()[i] * (sigmoid(s) - t[i]);
                }
            })),
        )
    }

    /// Elementwise smooth-L1 against constant targets, with the quadratic /
    /// linear transition at |d| = 1.
    pub fn smooth_l1(&mut self, pred: Var, targets: &Arr) -> Var {
        let vp = &self.values[pred];
        assert_eq!(vp.len(), targets.len(), "smooth_l1 length mismatch");
        let t = targets.data().to_vec();
        let data: Vec<f64> = vp
            .data()
            .iter()
            .zip(&t)
            .map(|(p, ti)| {
                let d = p - ti;
                if d.abs() < 1.0 {
                    0.5 * d * d
                } else {
                    d.abs() - 0.5
                }
            })
            .collect();
        let n = data.len();
        self.push(
            Arr::from_vec(vec![n], data),
            Some(Box::new(move |vals, g, grads| {
                let dp = grads.accum(pred, &[n]);
                for i in 0..n {
                    let d = vals[pred].data()[i] - t[i];
                    dp.data_mut()[i] += g.data()[i] * d.clamp(-1.0, 1.0);
                }
            })),
        )
    }

    /// Weighted sum against a constant weight vector, yielding a scalar.
    pub fn dot_const(&mut self, a: Var, weights: &Arr) -> Var {
        let va = &self.values[a];
        assert_eq!(va.len(), weights.len(), "dot_const length mismatch");
        let w = weights.data().to_vec();
        let v: f64 = va.data().iter().zip(&w).map(|(x, y)| x * y).sum();
        let n = va.len();
        self.push(
            Arr::scalar(v),
            Some(Box::new(move |_vals, g, grads| {
                let da = grads.accum(a, &[n]);
                let go = g.data()[0];
                for i in 0..n {
                    da.data_mut()[i] += go * w[i];
                }
            })),
        )
    }

    /// Sum of all elements.
    pub fn sum(&mut self, a: Var) -> Var {
        let va = &self.values[a];
        let v: f64 = va.data().iter().sum();
        let shape = va.shape().to_vec();
        self.push(
            Arr::scalar(v),
            Some(Box::new(move |_vals, g, grads| {
                let da = grads.accum(a, &shape);
                let go = g.data()[0];
                for x in da.data_mut() {
                    *x += go;
                }
            })),
        )
    }

    /// Mean of all elements.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.values[a].len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numeric sigmoid, shared with inference code that scores plain floats.
pub fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

// --- finite-difference gradient checking ------------------------------------

/// Outcome of a finite-difference sweep.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    /// Largest relative disagreement between analytic and numeric gradients.
    pub max_rel_err: f64,
    /// Number of scalar entries perturbed.
    pub elements_checked: usize,
}

/// Compares analytic gradients against central finite differences.
///
/// `build` must deterministically construct a scalar from the given input
/// variables; it is re-run twice per perturbed element with the input
/// nudged by ±`eps`. The relative error of entry `g` against the numeric
/// estimate `n` is `|g - n| / max(|g|, |n|, 1e-3)` — the floor keeps the
/// measure meaningful where the true gradient is (near) zero and finite
/// differences only deliver absolute accuracy.
pub fn check_gradients<F>(inputs: &[Arr], eps: f64, mut build: F) -> GradCheckReport
where
    F: FnMut(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.input(a.clone())).collect();
    let root = build(&mut tape, &vars);
    let grads = tape.backward(root);
    let analytic: Vec<Arr> = vars
        .iter()
        .zip(inputs)
        .map(|(v, a)| grads.get_or_zeros(*v, a.shape()))
        .collect();

    let eval = |ins: &[Arr], build: &mut F| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|a| t.input(a.clone())).collect();
        let r = build(&mut t, &vs);
        t.value(r).item()
    };

    let mut max_rel_err = 0.0f64;
    let mut elements_checked = 0usize;
    let mut work: Vec<Arr> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let f_plus = eval(&work, &mut build);
            work[i].data_mut()[j] = orig - eps;
            let f_minus = eval(&work, &mut build);
            work[i].data_mut()[j] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let an = analytic[i].data()[j];
            let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(1e-3);
            max_rel_err = max_rel_err.max(rel);
            elements_checked += 1;
        }
    }
    GradCheckReport {
        max_rel_err,
        elements_checked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    fn rand_arr(rng: &mut ChaCha8Rng, shape: &[usize]) -> Arr {
        let mut a = Arr::zeros(shape);
        a.fill_uniform(rng, -1.0, 1.0);
        a
    }

    #[test]
    fn add_mul_scale_forward_values() {
        let mut t = Tape::new();
        let a = t.input(Arr::from_vec(vec![3], vec![1.0, 2.0, 3.0]));
        let b = t.input(Arr::from_vec(vec![3], vec![10.0, 20.0, 30.0]));
        let s = t.add(a, b);
        let m = t.mul(s, a);
        let k = t.scale(m, 0.5);
        // ((a + b) * a) / 2 = [5.5, 22, 49.5]
        assert_eq!(t.value(k).data(), &[5.5, 22.0, 49.5]);
    }

    #[test]
    fn backward_through_simple_graph() {
        // f = sum((a + b) * a); df/da = 2a + b, df/db = a.
        let mut t = Tape::new();
        let a = t.input(Arr::from_vec(vec![2], vec![2.0, -1.0]));
        let b = t.input(Arr::from_vec(vec![2], vec![5.0, 4.0]));
        let s = t.add(a, b);
        let m = t.mul(s, a);
        let f = t.sum(m);
        let g = t.backward(f);
        assert_eq!(g.get(a).unwrap().data(), &[9.0, 2.0]);
        assert_eq!(g.get(b).unwrap().data(), &[2.0, -1.0]);
    }

    #[test]
    fn unused_inputs_have_no_gradient() {
        let mut t = Tape::new();
        let a = t.input(Arr::scalar(3.0));
        let b = t.input(Arr::scalar(4.0));
        let f = t.scale(a, 2.0);
        let g = t.backward(f);
        assert!(g.get(b).is_none());
        assert_eq!(g.get_or_zeros(b, &[1]).data(), &[0.0]);
    }

    #[test]
    fn elementwise_ops_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let a = rand_arr(&mut rng, &[7]);
            let b = rand_arr(&mut rng, &[7]);
            let rep = check_gradients(&[a, b], EPS, |t, v| {
                let s = t.add(v[0], v[1]);
                let d = t.sub(s, v[1]);
                let m = t.mul(d, v[1]);
                let r = t.relu(m);
                let sg = t.sigmoid(r);
                t.sum(sg)
            });
            assert!(rep.max_rel_err < TOL, "rel err {}", rep.max_rel_err);
        }
    }

    #[test]
    fn conv2d_matches_hand_computed_example() {
        // 1x3x3 input, 1x1x2x2 kernel, stride 1, no padding.
        let mut t = Tape::new();
        let x = t.input(Arr::from_vec(
            vec![1, 3, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        ));
        let w = t.input(Arr::from_vec(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let y = t.conv2d(x, w, 1, 0);
        // Each output = x[i] + x[i + diag]: [[1+5, 2+6], [4+8, 5+9]].
        assert_eq!(t.value(y).shape(), &[1, 2, 2]);
        assert_eq!(t.value(y).data(), &[6.0, 8.0, 12.0, 14.0]);
    }

    #[test]
    fn conv2d_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
            let x = rand_arr(&mut rng, &[2, 5, 5]);
            let w = rand_arr(&mut rng, &[3, 2, 3, 3]);
            let b = rand_arr(&mut rng, &[3]);
            let rep = check_gradients(&[x, w, b], EPS, |t, v| {
                let c = t.conv2d(v[0], v[1], stride, pad);
                let cb = t.add_bias_chw(c, v[2]);
                let r = t.relu(cb);
                t.sum(r)
            });
            assert!(
                rep.max_rel_err < TOL,
                "stride {stride} pad {pad}: rel err {}",
                rep.max_rel_err
            );
        }
    }

    #[test]
    fn depthwise_corr_preserves_shape_and_matches_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_arr(&mut rng, &[2, 6, 6]);
        let mut k = Arr::zeros(&[2, 3, 3]);
        // Center-one kernels: correlation must reproduce the input.
        k.data_mut()[4] = 1.0;
        k.data_mut()[9 + 4] = 1.0;
        let mut t = Tape::new();
        let xv = t.input(x.clone());
        let kv = t.input(k);
        let y = t.depthwise_corr(xv, kv);
        assert_eq!(t.value(y).shape(), &[2, 6, 6]);
        assert_eq!(t.value(y).data(), x.data());
    }

    #[test]
    fn depthwise_corr_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..3 {
            let x = rand_arr(&mut rng, &[2, 5, 5]);
            let k = rand_arr(&mut rng, &[2, 3, 3]);
            let rep = check_gradients(&[x, k], EPS, |t, v| {
                let y = t.depthwise_corr(v[0], v[1]);
                let s = t.sigmoid(y);
                t.sum(s)
            });
            assert!(rep.max_rel_err < TOL, "rel err {}", rep.max_rel_err);
        }
    }

    #[test]
    fn roi_align_on_axis_aligned_box_reads_cells_exactly() {
        // A 2x2 pool over a box covering cells (1..3)x(1..3) samples the
        // four cell centers exactly.
        let mut t = Tape::new();
        let mut x = Arr::zeros(&[1, 4, 4]);
        for i in 0..16 {
            x.data_mut()[i] = i as f64;
        }
        let xv = t.input(x);
        let rect = BoundingBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
        let y = t.roi_align(xv, &rect, 2);
        // Sample points (1.5, 1.5), (2.5, 1.5), (1.5, 2.5), (2.5, 2.5) map
        // to cells (1,1), (2,1), (1,2), (2,2): values 5, 6, 9, 10.
        assert_eq!(t.value(y).data(), &[5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn roi_align_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let rects = [
            BoundingBox::new(0.7, 1.1, 3.9, 4.2).unwrap(),
            BoundingBox::new(-1.0, -1.0, 7.0, 7.0).unwrap(), // clamped at borders
            BoundingBox::new(2.0, 2.0, 2.4, 3.0).unwrap(),   // sub-cell box
        ];
        for rect in rects {
            let x = rand_arr(&mut rng, &[2, 5, 5]);
            let rep = check_gradients(&[x], EPS, move |t, v| {
                let y = t.roi_align(v[0], &rect, 3);
                t.sum(y)
            });
            assert!(rep.max_rel_err < TOL, "rel err {}", rep.max_rel_err);
        }
    }

    #[test]
    fn linear_and_gather_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let w = rand_arr(&mut rng, &[4, 6]);
        let x = rand_arr(&mut rng, &[6]);
        let b = rand_arr(&mut rng, &[4]);
        let rep = check_gradients(&[w, x, b], EPS, |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]));
            let g = t.gather(y, vec![0, 2, 2, 3]); // repeated index
            let m = t.mul(g, g);
            t.mean(m)
        });
        assert!(rep.max_rel_err < TOL, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn bce_logits_matches_reference_values() {
        let mut t = Tape::new();
        let logits = t.input(Arr::from_vec(vec![3], vec![0.0, 2.0, -3.0]));
        let targets = Arr::from_vec(vec![3], vec![1.0, 0.0, 1.0]);
        let l = t.bce_logits(logits, &targets);
        let expect = [
            (1.0f64 + (-0.0f64).exp()).ln(), // ln 2
            2.0 + (1.0f64 + (-2.0f64).exp()).ln() - 2.0 + 0.0, // softplus(2) - 0
            3.0 + (1.0f64 + (-3.0f64).exp()).ln(), // softplus(-(-3)) - (-3)*1
        ];
        // Cross-check against the naive formula -t ln σ(s) - (1-t) ln(1-σ(s)).
        let naive = |s: f64, t: f64| {
            let p = 1.0 / (1.0 + (-s as f64).exp());
            -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
        };
        for (i, (s, tt)) in [(0.0, 1.0), (2.0, 0.0), (-3.0, 1.0)].iter().enumerate() {
            assert!((t.value(l).data()[i] - naive(*s, *tt)).abs() < 1e-12);
            let _ = expect; // the closed forms above document the stable path
        }
    }

    #[test]
    fn loss_kernels_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let logits = rand_arr(&mut rng, &[9]);
        let targets = Arr::from_vec(
            vec![9],
            (0..9).map(|i| (i % 2) as f64).collect::<Vec<f64>>(),
        );
        let rep = check_gradients(&[logits], EPS, |t, v| {
            let l = t.bce_logits(v[0], &targets);
            t.mean(l)
        });
        assert!(rep.max_rel_err < TOL, "bce rel err {}", rep.max_rel_err);

        // Keep smooth-L1 samples away from the |d| = 1 kink, where the
        // derivative genuinely does not exist.
        let mut pred = rand_arr(&mut rng, &[8]);
        for v in pred.data_mut() {
            *v *= 0.8;
        }
        let targets = Arr::zeros(&[8]);
        let rep = check_gradients(&[pred], EPS, |t, v| {
            let l = t.smooth_l1(v[0], &targets);
            t.sum(l)
        });
        assert!(rep.max_rel_err < TOL, "smooth_l1 rel err {}", rep.max_rel_err);

        let pred = Arr::from_vec(vec![3], vec![2.5, -3.0, 0.2]);
        let targets = Arr::zeros(&[3]);
        let rep = check_gradients(&[pred], EPS, |t, v| {
            let l = t.smooth_l1(v[0], &targets);
            t.sum(l)
        });
        assert!(
            rep.max_rel_err < TOL,
            "smooth_l1 linear branch rel err {}",
            rep.max_rel_err
        );
    }

    #[test]
    fn smooth_l1_values_on_both_branches() {
        let mut t = Tape::new();
        let p = t.input(Arr::from_vec(vec![3], vec![0.5, 2.0, -1.5]));
        let targets = Arr::zeros(&[3]);
        let l = t.smooth_l1(p, &targets);
        assert_eq!(t.value(l).data(), &[0.125, 1.5, 1.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x = rand_arr(&mut rng, &[2, 4, 4]);
        let w = rand_arr(&mut rng, &[2, 2, 3, 3]);
        let run = || {
            let mut t = Tape::new();
            let xv = t.input(x.clone());
            let wv = t.input(w.clone());
            let c = t.conv2d(xv, wv, 1, 1);
            let r = t.relu(c);
            let f = t.mean(r);
            let g = t.backward(f);
            (
                t.value(f).item(),
                g.get(xv).unwrap().data().to_vec(),
                g.get(wv).unwrap().data().to_vec(),
            )
        };
        let (f1, gx1, gw1) = run();
        let (f2, gx2, gw2) = run();
        assert_eq!(f1.to_bits(), f2.to_bits());
        assert_eq!(gx1, gx2);
        assert_eq!(gw1, gw2);
    }
}
