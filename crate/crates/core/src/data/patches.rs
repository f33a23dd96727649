//! Lossless patch <-> image conversion for the transformer models.
//!
//! Token layout: patches in row-major grid order, pixels within a patch
//! in (channel, row, col) order. `unpatchify(patchify(x)) == x` exactly.

use super::{DataError, Result};
use crate::tensor::Tensor;

/// (N, C, H, W) -> (N, P, C*p*p)
pub fn patchify(images: &Tensor, patch: usize) -> Result<Tensor> {
    let s = images.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    for extent in [h, w] {
        if extent % patch != 0 {
            return Err(DataError::IndivisiblePatch { extent, patch });
        }
    }
    let (gh, gw) = (h / patch, w / patch);
    let tokens = gh * gw;
    let token_dim = c * patch * patch;
    let mut out = Tensor::zeros(&[n, tokens, token_dim]);
    let src = images.data();
    let dst = out.data_mut();
    for img in 0..n {
        for t in 0..tokens {
            let (pi, pj) = (t / gw, t % gw);
            for ci in 0..c {
                for y in 0..patch {
                    for x in 0..patch {
                        let sy = pi * patch + y;
                        let sx = pj * patch + x;
                        dst[(img * tokens + t) * token_dim + (ci * patch + y) * patch + x] =
                            src[((img * c + ci) * h + sy) * w + sx];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// (N, P, C*p*p) -> (N, C, H, W); inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, c: usize, h: usize, w: usize, patch: usize) -> Result<Tensor> {
    let s = tokens.shape();
    let (n, t_count, token_dim) = (s[0], s[1], s[2]);
    debug_assert_eq!(t_count, (h / patch) * (w / patch));
    debug_assert_eq!(token_dim, c * patch * patch);
    for extent in [h, w] {
        if extent % patch != 0 {
            return Err(DataError::IndivisiblePatch { extent, patch });
        }
    }
    let gw = w / patch;
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let src = tokens.data();
    let dst = out.data_mut();
    for img in 0..n {
        for t in 0..t_count {
            let (pi, pj) = (t / gw, t % gw);
            for ci in 0..c {
                for y in 0..patch {
                    for x in 0..patch {
                        let sy = pi * patch + y;
                        let sx = pj * patch + x;
                        dst[((img * c + ci) * h + sy) * w + sx] =
                            src[(img * t_count + t) * token_dim + (ci * patch + y) * patch + x];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Pixel-level 0/1 mask for a set of masked patches, shaped like the
/// image batch (one shared patch set).
pub fn patch_pixel_mask(
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    patch: usize,
    masked_patches: &[usize],
) -> Tensor {
    let gw = w / patch;
    let mut mask = Tensor::zeros(&[batch, c, h, w]);
    let data = mask.data_mut();
    for img in 0..batch {
        for &t in masked_patches {
            let (pi, pj) = (t / gw, t % gw);
            for ci in 0..c {
                for y in 0..patch {
                    for x in 0..patch {
                        data[((img * c + ci) * h + pi * patch + y) * w + pj * patch + x] = 1.0;
                    }
                }
            }
        }
    }
    mask
}

/// Per-image pixel masks from per-image patch masks.
pub fn patch_pixel_mask_rows(c: usize, h: usize, w: usize, patch: usize, masks: &[crate::zoo::PatchMask]) -> Tensor {
    let gw = w / patch;
    let mut mask = Tensor::zeros(&[masks.len(), c, h, w]);
    let data = mask.data_mut();
    for (img, m) in masks.iter().enumerate() {
        for &t in &m.masked {
            let (pi, pj) = (t / gw, t % gw);
            for ci in 0..c {
                for y in 0..patch {
                    for x in 0..patch {
                        data[((img * c + ci) * h + pi * patch + y) * w + pj * patch + x] = 1.0;
                    }
                }
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_normal, rng_from_seed};

    #[test]
    fn twenty_eight_with_seven_patches_gives_sixteen_tokens() {
        let images = Tensor::zeros(&[2, 1, 28, 28]);
        let t = patchify(&images, 7).unwrap();
        assert_eq!(t.shape(), &[2, 16, 49]);
    }

    #[test]
    fn whole_image_patch_is_the_flattened_image() {
        let mut rng = rng_from_seed(1);
        let mut img = Tensor::zeros(&[1, 1, 4, 4]);
        fill_normal(&mut rng, 1.0, img.data_mut());
        let t = patchify(&img, 4).unwrap();
        assert_eq!(t.shape(), &[1, 1, 16]);
        assert_eq!(t.data(), img.data());
    }

    #[test]
    fn patchify_unpatchify_is_exact_bijection() {
        let mut rng = rng_from_seed(2);
        let mut img = Tensor::zeros(&[3, 2, 12, 12]);
        fill_normal(&mut rng, 1.0, img.data_mut());
        for patch in [2, 3, 4, 6] {
            let t = patchify(&img, patch).unwrap();
            let back = unpatchify(&t, 2, 12, 12, patch).unwrap();
            assert_eq!(back.data(), img.data(), "patch {patch}");
        }
    }

    #[test]
    fn indivisible_extent_is_rejected() {
        let images = Tensor::zeros(&[1, 1, 28, 28]);
        assert!(matches!(
            patchify(&images, 5),
            Err(DataError::IndivisiblePatch { extent: 28, patch: 5 })
        ));
    }

    #[test]
    fn pixel_mask_marks_only_masked_patches() {
        let mask = patch_pixel_mask(1, 1, 4, 4, 2, &[3]);
        let want_ones: Vec<usize> = vec![2 * 4 + 2, 2 * 4 + 3, 3 * 4 + 2, 3 * 4 + 3];
        for (i, v) in mask.data().iter().enumerate() {
            assert_eq!(*v, if want_ones.contains(&i) { 1.0 } else { 0.0 });
        }
    }
}
