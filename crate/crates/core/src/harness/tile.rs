use super::EVAL_CHUNK;
use crate::error::{Error, Result};
use crate::model::Restorer;
use crate::tensor::{Dims, Tensor4};

pub const TILE_STRIDE: usize = 3;

/// Window origins along one axis: `0, stride, 2*stride, ...` plus a final
/// origin flush with the far border.
pub fn tile_origins(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    if extent < patch {
        return Vec::new();
    }
    let last = extent - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Number of windows covering each pixel, row-major.
pub fn coverage_map(h: usize, w: usize, patch: usize, stride: usize) -> Vec<u32> {
    let mut cov = vec![0u32; h * w];
    for &oy in &tile_origins(h, patch, stride) {
        for &ox in &tile_origins(w, patch, stride) {
            for y in oy..oy + patch {
                for c in &mut cov[y * w + ox..y * w + ox + patch] {
                    *c += 1;
                }
            }
        }
    }
    cov
}

/// Restores a `(1, C, H, W)` image of any size at least the model's patch
/// size by averaging overlapping stride-3 windows.
pub fn tile_restore(model: &dyn Restorer, image: &Tensor4<f64>) -> Result<Tensor4<f64>> {
    let d = image.dims();
    let p = model.patch_size();
    if d.n != 1 {
        return Err(Error::Shape(format!("tile_restore takes one image, got {}", d.n)));
    }
    if d.h < p || d.w < p {
        return Err(Error::InputSize { h: d.h, w: d.w, size: p });
    }
    let ys = tile_origins(d.h, p, TILE_STRIDE);
    let xs = tile_origins(d.w, p, TILE_STRIDE);
    let origins: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();

    // Running means stay exact when every window agrees on a pixel.
    let mut mean = Tensor4::zeros(d);
    let mut count = vec![0u32; d.h * d.w];
    let patch_dims = Dims::new(1, d.c, p, p);
    for chunk in origins.chunks(EVAL_CHUNK) {
        let patches: Vec<Tensor4<f64>> = chunk
            .iter()
            .map(|&(oy, ox)| Tensor4::from_fn(patch_dims, |_, c, y, x| image.at(0, c, oy + y, ox + x)))
            .collect();
        let restored = model.restore_batch(&Tensor4::stack(&patches)?)?;
        for (k, &(oy, ox)) in chunk.iter().enumerate() {
            for y in 0..p {
                for x in 0..p {
                    let pix = (oy + y) * d.w + ox + x;
                    count[pix] += 1;
                    let n = count[pix] as f64;
                    for c in 0..d.c {
                        let v = restored.at(k, c, y, x);
                        let i = mean.index(0, c, oy + y, ox + x);
                        let m = mean.data()[i];
                        mean.data_mut()[i] = m + (v - m) / n;
                    }
                }
            }
        }
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IdentityRestorer;
    use crate::rng::Stream;

    #[test]
    fn origins() {
        assert_eq!(tile_origins(64, 64, 3), vec![0]);
        assert_eq!(tile_origins(70, 64, 3), vec![0, 3, 6]);
        assert_eq!(tile_origins(69, 64, 3), vec![0, 3, 5]);
        assert!(tile_origins(63, 64, 3).is_empty());
    }

    #[test]
    fn identity_is_preserved_exactly() {
        let mut rng = Stream::new(4);
        let img = Tensor4::from_fn(Dims::new(1, 3, 71, 80), |_, _, _, _| rng.uniform_in(-1.0, 1.0));
        let id = IdentityRestorer { channels: 3, size: 64 };
        assert_eq!(tile_restore(&id, &img).unwrap(), img);
    }

    #[test]
    fn undersized_image_rejected() {
        let id = IdentityRestorer { channels: 1, size: 64 };
        let err = tile_restore(&id, &Tensor4::zeros(Dims::new(1, 1, 63, 100))).unwrap_err();
        assert!(err.to_string().contains("64"));
    }
}
