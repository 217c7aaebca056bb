use crate::tensor::{Scalar, Tensor};

/// Additive bias for token pairs that belong to different regions.
pub const MASK_NEG: f64 = -1e4;

fn axis_region(i: usize, g: usize, w: usize, s: usize) -> usize {
    if i < g - w {
        0
    } else if i < g - s {
        1
    } else {
        2
    }
}

/// Region label of every grid cell (row-major) after a cyclic shift by `s`.
/// Each axis is cut into `[0, G-w)`, `[G-w, G-s)`, `[G-s, G)`.
pub fn region_ids(gh: usize, gw: usize, w: usize, s: usize) -> Vec<usize> {
    let mut ids = Vec::with_capacity(gh * gw);
    for i in 0..gh {
        for j in 0..gw {
            if s == 0 {
                ids.push(0);
            } else {
                ids.push(axis_region(i, gh, w, s) * 3 + axis_region(j, gw, w, s));
            }
        }
    }
    ids
}

/// Per-window `(num_windows, w*w, w*w)` additive masks: zero where both tokens
/// share a region, [`MASK_NEG`] elsewhere.
pub fn build_shift_mask<T: Scalar>(gh: usize, gw: usize, w: usize, s: usize) -> Tensor<T> {
    let ids = region_ids(gh, gw, w, s);
    let n = w * w;
    let nw = (gh / w) * (gw / w);
    let mut data = Vec::with_capacity(nw * n * n);
    for wr in 0..gh / w {
        for wc in 0..gw / w {
            let window: Vec<usize> = (0..n).map(|t| ids[(wr * w + t / w) * gw + wc * w + t % w]).collect();
            for &a in &window {
                for &b in &window {
                    data.push(if a == b { T::zero() } else { T::lit(MASK_NEG) });
                }
            }
        }
    }
    Tensor::from_parts(vec![nw, n, n], data)
}
