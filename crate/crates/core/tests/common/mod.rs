//! Brute-force reference computations shared by the integration suites.
//! None of these call into the library's numeric routines.
#![allow(dead_code)]

use daam::{AttentionSlice, SliceSource};

/// out[x, y] = F[x / s, y / s] / s², cropped to the target.
pub fn deconv_oracle(plane: &[f64], w: usize, s: usize, th: usize, tw: usize) -> Vec<f64> {
    let mut out = vec![0.0; th * tw];
    for x in 0..th {
        for y in 0..tw {
            out[x * tw + y] = plane[(x / s) * w + (y / s)] / (s * s) as f64;
        }
    }
    out
}

fn kernel(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x.powi(3) - (a + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Direct 16-tap bicubic: half-pixel aligned source coordinates,
/// edge-clamped indices, negative results clamped to zero.
pub fn bicubic_oracle(plane: &[f64], h: usize, w: usize, s: usize, th: usize, tw: usize) -> Vec<f64> {
    let mut out = vec![0.0; th * tw];
    for x in 0..th {
        let u = (x as f64 + 0.5) / s as f64 - 0.5;
        let i0 = u.floor() as i64;
        for y in 0..tw {
            let v = (y as f64 + 0.5) / s as f64 - 0.5;
            let j0 = v.floor() as i64;
            let mut acc = 0.0;
            for di in -1..=2i64 {
                for dj in -1..=2i64 {
                    let i = i0 + di;
                    let j = j0 + dj;
                    let wgt = kernel(u - i as f64) * kernel(v - j as f64);
                    let ci = i.clamp(0, h as i64 - 1) as usize;
                    let cj = j.clamp(0, w as i64 - 1) as usize;
                    acc += wgt * plane[ci * w + cj];
                }
            }
            out[x * tw + y] = acc.max(0.0);
        }
    }
    out
}

/// Per-slice, per-pixel accumulation of the token's upscaled scores over
/// every layer and timestep.
pub fn naive_token_map<S: SliceSource>(src: &S, token: usize, bicubic: bool) -> Vec<f64> {
    let m = src.manifest();
    let (th, tw) = (m.image_height, m.image_width);
    let ratio = m.image_height / m.latent_height;
    let mut out = vec![0.0; th * tw];
    for layer in &m.layers {
        let s = layer.scale_factor * ratio;
        for &t in &m.timesteps {
            let slice = src.load_slice(layer, t).unwrap();
            let plane = plane_of(&slice, token);
            if bicubic {
                let up = bicubic_oracle(&plane, slice.height, slice.width, s, th, tw);
                for (o, u) in out.iter_mut().zip(up) {
                    *o += u;
                }
            } else {
                for x in 0..th {
                    for y in 0..tw {
                        out[x * tw + y] += slice.get(x / s, y / s, token) as f64 / (s * s) as f64;
                    }
                }
            }
        }
    }
    out
}

pub fn plane_of(slice: &AttentionSlice, token: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(slice.height * slice.width);
    for r in 0..slice.height {
        for c in 0..slice.width {
            p.push(slice.get(r, c, token) as f64);
        }
    }
    p
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Intersection and union counted with an explicit double loop.
pub fn counting_iou(pred: &daam::Mask, gt: &daam::Mask) -> f64 {
    let (mut i, mut u) = (0u64, 0u64);
    for r in 0..gt.height {
        for c in 0..gt.width {
            let p = pred.get(r, c);
            let g = gt.get(r, c);
            if p && g {
                i += 1;
            }
            if p || g {
                u += 1;
            }
        }
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}
