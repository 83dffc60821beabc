use crate::autodiff::Tensor;
use crate::dataset::{BoundingBox, SceneImage};
use crate::error::{Error, Result};

/// Bilinear resampling of the box region to `channels × out_h × out_w`.
///
/// Output pixel centres are spread evenly over the box (half-pixel
/// convention), and sample coordinates are clamped to the pixels the box
/// touches, so every output value is a convex combination of pixels inside
/// the (image-clamped) box.
pub fn crop_resize(scene: &SceneImage, bbox: &BoundingBox, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Invalid("crop size must be positive".into()));
    }
    let b = bbox.clamped(scene.width, scene.height).ok_or_else(|| {
        Error::Invalid(format!(
            "degenerate box ({}, {}, {}, {}) in scene {}",
            bbox.x, bbox.y, bbox.w, bbox.h, scene.id
        ))
    })?;
    let axis = |start: f64, extent: f64, out: usize, limit: usize| -> Vec<(usize, usize, f64)> {
        let lo = start.floor();
        let hi = ((start + extent).ceil() - 1.0).min(limit as f64 - 1.0).max(lo);
        (0..out)
            .map(|i| {
                let s = (start + (i as f64 + 0.5) * extent / out as f64 - 0.5).clamp(lo, hi);
                let i0 = s.floor();
                let t = s - i0;
                let i0 = i0 as usize;
                let i1 = (i0 + 1).min(hi as usize);
                (i0, i1, t)
            })
            .collect()
    };
    let ys = axis(b.y, b.h, out_h, scene.height);
    let xs = axis(b.x, b.w, out_w, scene.width);
    let c = scene.channels;
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let p = |y: usize, x: usize| scene.at(ch, y, x) as f64;
                let top = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
                let bottom = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
                out[(ch * out_h + oy) * out_w + ox] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_scene_gives_constant_crop() {
        let s = SceneImage::filled("s", (3, 20, 30), 0.375);
        let t = crop_resize(&s, &BoundingBox::new(3.3, 2.1, 7.7, 13.2), 48, 16).unwrap();
        assert_eq!(t.shape(), &[3, 48, 16]);
        assert!(t.data().iter().all(|&v| v == 0.375));
    }

    #[test]
    fn full_box_at_native_size_is_identity() {
        let mut s = SceneImage::filled("s", (2, 17, 19), 0.0);
        for (i, v) in s.pixels.iter_mut().enumerate() {
            *v = ((i * 37) % 101) as f32 / 100.0;
        }
        let t = crop_resize(&s, &BoundingBox::new(0.0, 0.0, 19.0, 17.0), 17, 19).unwrap();
        for (a, b) in t.data().iter().zip(&s.pixels) {
            assert_eq!(*a, *b as f64);
        }
    }

    #[test]
    fn checkerboard_upsampling_matches_direct_bilinear() {
        let mut s = SceneImage::filled("s", (1, 16, 16), 0.0);
        // 2x2 checkerboard at (4..6, 4..6)
        s.set(0, 4, 4, 1.0);
        s.set(0, 5, 5, 1.0);
        let t = crop_resize(&s, &BoundingBox::new(4.0, 4.0, 2.0, 2.0), 4, 4).unwrap();
        // oracle: source coordinate u = (i + 0.5) / 2 - 0.5 clamped to [0, 1],
        // value = (1-u)(1-v) + u v for the checkerboard [[1,0],[0,1]]
        for i in 0..4 {
            for j in 0..4 {
                let u = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
                let v = ((j as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
                let expect = (1.0 - u) * (1.0 - v) + u * v;
                assert!((t.data()[i * 4 + j] - expect).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn degenerate_box_is_an_error() {
        let s = SceneImage::filled("s", (3, 16, 16), 0.5);
        assert!(crop_resize(&s, &BoundingBox::new(40.0, 0.0, 4.0, 4.0), 8, 8).is_err());
    }
}
