//! Bilinear resampling with the align-corners-false convention: output cell
//! `i` of `n_out` samples source coordinate `(i + 0.5) * n_src / n_out - 0.5`.

use super::FeatureLayer;

/// Source coordinate of output index `i`, clamped to the valid range.
fn source_coord(i: usize, n_src: usize, n_out: usize) -> f64 {
    let x = (i as f64 + 0.5) * n_src as f64 / n_out as f64 - 0.5;
    x.clamp(0.0, (n_src - 1) as f64)
}

/// `(lower index, upper index, weight of upper)`.
fn taps(x: f64, n: usize) -> (usize, usize, f64) {
    let x = x.clamp(0.0, (n - 1) as f64);
    let lo = x.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, x - lo as f64)
}

/// Bilinear sample of every channel of `layer` at continuous cell
/// coordinate `(x, y)`; coordinates outside the grid clamp to the edge.
pub fn sample_bilinear(layer: &FeatureLayer, x: f64, y: f64) -> Vec<f32> {
    let (x0, x1, fx) = taps(x, layer.width);
    let (y0, y1, fy) = taps(y, layer.height);
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w01 = fx * (1.0 - fy);
    let w10 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    (0..layer.channels)
        .map(|c| {
            let v = w00 * layer.value(c, y0, x0) as f64
                + w01 * layer.value(c, y0, x1) as f64
                + w10 * layer.value(c, y1, x0) as f64
                + w11 * layer.value(c, y1, x1) as f64;
            v as f32
        })
        .collect()
}

/// Resize `layer` to `(height, width)` by per-channel bilinear interpolation.
///
/// An identical target size returns the layer unchanged.
pub fn upsample_layer(layer: &FeatureLayer, target: (usize, usize)) -> FeatureLayer {
    let (th, tw) = target;
    if (th, tw) == (layer.height, layer.width) {
        return layer.clone();
    }
    let mut data = vec![0.0f32; layer.channels * th * tw];
    for y in 0..th {
        let sy = source_coord(y, layer.height, th);
        for x in 0..tw {
            let sx = source_coord(x, layer.width, tw);
            let v = sample_bilinear(layer, sx, sy);
            for (c, val) in v.into_iter().enumerate() {
                data[(c * th + y) * tw + x] = val;
            }
        }
    }
    FeatureLayer {
        layer_id: layer.layer_id,
        channels: layer.channels,
        height: th,
        width: tw,
        data,
    }
}

/// Continuous grid coordinate of full-resolution pixel `u` when an axis of
/// `extent` pixels is covered by `cells` grid cells.
pub(crate) fn pixel_to_grid(u: usize, extent: usize, cells: usize) -> f64 {
    (u as f64 + 0.5) * cells as f64 / extent as f64 - 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(channels: usize, h: usize, w: usize, data: Vec<f32>) -> FeatureLayer {
        FeatureLayer::new(0, channels, h, w, data).unwrap()
    }

    #[test]
    fn constant_stays_constant() {
        let l = layer(2, 3, 2, vec![1.5; 12]);
        let up = upsample_layer(&l, (7, 9));
        assert!(up.data.iter().all(|v| *v == 1.5));
    }

    #[test]
    fn same_size_is_identity() {
        let l = layer(1, 2, 3, vec![0.1, 0.7, -3.0, 2.0, 5.5, 1e-7]);
        assert_eq!(upsample_layer(&l, (2, 3)), l);
    }

    #[test]
    fn two_by_two_to_four_by_four() {
        // f(x, y) = 2y + x is bilinear, so interpolation reproduces it at the
        // clamped source coordinates {0, 0.25, 0.75, 1}.
        let l = layer(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        let up = upsample_layer(&l, (4, 4));
        let coords = [0.0, 0.25, 0.75, 1.0];
        for (y, cy) in coords.iter().enumerate() {
            for (x, cx) in coords.iter().enumerate() {
                let expect = 2.0 * cy + cx;
                assert_eq!(up.value(0, y, x) as f64, expect, "({x}, {y})");
            }
        }
    }

    #[test]
    fn pixel_grid_mapping() {
        // 16 pixels per cell: pixel 7.5 would be the first cell center.
        assert_eq!(pixel_to_grid(8, 704, 44), 0.03125);
        assert_eq!(pixel_to_grid(0, 4, 4), 0.0);
    }
}
