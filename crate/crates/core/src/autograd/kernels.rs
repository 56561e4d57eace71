//! Raw NHWC kernels behind the differentiable ops.

/// Sliding-window geometry shared by `unfold` and its adjoint `fold`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl Geom {
    pub fn out_hw(&self) -> Option<(usize, usize)> {
        let span_h = self.dilation * (self.kh - 1) + 1;
        let span_w = self.dilation * (self.kw - 1) + 1;
        let ph = self.in_h + 2 * self.pad;
        let pw = self.in_w + 2 * self.pad;
        if ph < span_h || pw < span_w || self.stride == 0 {
            return None;
        }
        Some(((ph - span_h) / self.stride + 1, (pw - span_w) / self.stride + 1))
    }

    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k * self.dilation) as isize - self.pad as isize;
        if pos < 0 || pos as usize >= limit {
            None
        } else {
            Some(pos as usize)
        }
    }
}

/// `x` is (b, in_h, in_w, c); output is (b, out_h*out_w, kh*kw*c) with the
/// last axis ordered (ky, kx, channel).
pub fn unfold(x: &[f64], b: usize, c: usize, g: &Geom) -> Vec<f64> {
    let (oh, ow) = g.out_hw().expect("window larger than input");
    let k = g.kh * g.kw * c;
    let mut cols = vec![0.0; b * oh * ow * k];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((bi * oh + oy) * ow + ox) * k;
                for ky in 0..g.kh {
                    let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                        let src = ((bi * g.in_h + iy) * g.in_w + ix) * c;
                        let dst = row + (ky * g.kw + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`unfold`]: scatter-adds windows back onto the input grid.
pub fn fold(cols: &[f64], b: usize, c: usize, g: &Geom) -> Vec<f64> {
    let (oh, ow) = g.out_hw().expect("window larger than input");
    let k = g.kh * g.kw * c;
    let mut x = vec![0.0; b * g.in_h * g.in_w * c];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((bi * oh + oy) * ow + ox) * k;
                for ky in 0..g.kh {
                    let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                        let dst = ((bi * g.in_h + iy) * g.in_w + ix) * c;
                        let src = row + (ky * g.kw + kx) * c;
                        for ch in 0..c {
                            x[dst + ch] += cols[src + ch];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Nearest-neighbour upsampling of (b, h, w, c) by an integer factor.
pub fn upsample(x: &[f64], b: usize, h: usize, w: usize, c: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let mut out = vec![0.0; b * oh * ow * c];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((bi * h + oy / f) * w + ox / f) * c;
                let dst = ((bi * oh + oy) * ow + ox) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    out
}

/// Sum over non-overlapping f×f blocks; adjoint of [`upsample`].
pub fn sum_pool(x: &[f64], b: usize, h: usize, w: usize, c: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h / f, w / f);
    let mut out = vec![0.0; b * oh * ow * c];
    for bi in 0..b {
        for y in 0..oh * f {
            for xx in 0..ow * f {
                let src = ((bi * h + y) * w + xx) * c;
                let dst = ((bi * oh + y / f) * ow + xx / f) * c;
                for ch in 0..c {
                    out[dst + ch] += x[src + ch];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn fold_is_adjoint_of_unfold() {
        let g = Geom {
            kh: 3,
            kw: 2,
            stride: 2,
            pad: 1,
            dilation: 2,
            in_h: 7,
            in_w: 6,
        };
        let (b, c) = (2, 3);
        let x: Vec<f64> = (0..b * 7 * 6 * c).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let cols = unfold(&x, b, c, &g);
        let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let lhs = dot(&cols, &y);
        let rhs = dot(&x, &fold(&y, b, c, &g));
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn sum_pool_is_adjoint_of_upsample() {
        let (b, h, w, c, f) = (1, 3, 2, 2, 2);
        let x: Vec<f64> = (0..b * h * w * c).map(|i| i as f64 * 0.5 - 1.0).collect();
        let up = upsample(&x, b, h, w, c, f);
        let y: Vec<f64> = (0..up.len()).map(|i| (i % 5) as f64).collect();
        assert!((dot(&up, &y) - dot(&x, &sum_pool(&y, b, h * f, w * f, c, f))).abs() < 1e-12);
    }

    #[test]
    fn output_size_matches_convolution_arithmetic() {
        let g = Geom {
            kh: 3,
            kw: 3,
            stride: 2,
            pad: 1,
            dilation: 1,
            in_h: 64,
            in_w: 64,
        };
        assert_eq!(g.out_hw(), Some((32, 32)));
        let d = Geom {
            dilation: 4,
            pad: 4,
            stride: 1,
            ..g
        };
        assert_eq!(d.out_hw(), Some((64, 64)));
    }
}
