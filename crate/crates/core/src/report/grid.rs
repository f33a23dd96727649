//! Side-by-side input/reconstruction image grids as binary PGM (gray)
//! or PPM (color).

use crate::data::unit_to_byte;
use crate::tensor::Tensor;
use crate::zoo::{CreModel, Result};

/// A rasterized grid plus its pixel dimensions.
#[derive(Debug, Clone)]
pub struct GridImage {
    /// Binary P5 (1 channel) or P6 (3 channels) file content.
    pub bytes: Vec<u8>,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

const GUTTER: usize = 2;
const GUTTER_VALUE: u8 = 128;

/// Renders input images (left column) next to their reconstructions
/// (right column), mapping [-1, 1] back to bytes with clamping.
/// Layout: width = 2W + gutter, height = N*H + (N-1)*gutter.
pub fn reconstruction_grid(model: &mut CreModel, images: &Tensor) -> Result<GridImage> {
    assert!(images.shape()[0] <= 64, "at most 64 images per grid");
    let repr = model.encode(images)?;
    let recon = model.decode(&repr)?;
    Ok(render_pair_grid(images, &recon))
}

/// Pure layout: pairs each image row with its counterpart.
pub fn render_pair_grid(left: &Tensor, right: &Tensor) -> GridImage {
    let s = left.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    debug_assert_eq!(left.shape(), right.shape());
    let width = 2 * w + GUTTER;
    let height = n * h + n.saturating_sub(1) * GUTTER;
    let mut pixels = vec![GUTTER_VALUE; width * height * c];

    let mut put = |src: &Tensor, img: usize, x0: usize| {
        let per = c * h * w;
        let data = &src.data()[img * per..(img + 1) * per];
        let y0 = img * (h + GUTTER);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = unit_to_byte(data[(ch * h + y) * w + x]);
                    pixels[((y0 + y) * width + x0 + x) * c + ch] = v;
                }
            }
        }
    };
    for img in 0..n {
        put(left, img, 0);
        put(right, img, w + GUTTER);
    }

    let magic = if c == 3 { "P6" } else { "P5" };
    let mut bytes = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(&pixels);
    GridImage {
        bytes,
        width,
        height,
        channels: c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_images(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, 1, 4, 4]);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = -1.0 + 2.0 * (i % 16) as f64 / 15.0;
        }
        t
    }

    fn parse_header(bytes: &[u8]) -> (String, usize, usize, usize) {
        let text = String::from_utf8_lossy(&bytes[..20.min(bytes.len())]);
        let mut parts = text.split_whitespace();
        let magic = parts.next().unwrap().to_string();
        let w: usize = parts.next().unwrap().parse().unwrap();
        let h: usize = parts.next().unwrap().parse().unwrap();
        let max: usize = parts.next().unwrap().parse().unwrap();
        (magic, w, h, max)
    }

    #[test]
    fn identity_pair_renders_identical_columns() {
        let imgs = gradient_images(2);
        let grid = render_pair_grid(&imgs, &imgs);
        let (magic, w, h, max) = parse_header(&grid.bytes);
        assert_eq!(magic, "P5");
        assert_eq!(max, 255);
        assert_eq!((w, h), (2 * 4 + 2, 2 * 4 + 2));
        let header_len = grid.bytes.len() - w * h;
        let pix = &grid.bytes[header_len..];
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(pix[y * w + x], pix[y * w + x + 4 + 2], "columns identical");
            }
        }
    }

    #[test]
    fn byte_mapping_endpoints_and_clamp() {
        let mut left = Tensor::zeros(&[1, 1, 2, 2]);
        left.data_mut().copy_from_slice(&[-1.0, 1.0, -3.0, 3.0]);
        let grid = render_pair_grid(&left, &left);
        let pix_start = grid.bytes.len() - grid.width * grid.height;
        let pix = &grid.bytes[pix_start..];
        assert_eq!(pix[0], 0);
        assert_eq!(pix[1], 255);
        assert_eq!(pix[grid.width], 0, "clamped below");
        assert_eq!(pix[grid.width + 1], 255, "clamped above");
    }

    #[test]
    fn layout_dimensions_follow_the_arithmetic() {
        for n in [1, 3, 8] {
            let imgs = gradient_images(n);
            let grid = render_pair_grid(&imgs, &imgs);
            assert_eq!(grid.width, 2 * 4 + 2);
            assert_eq!(grid.height, n * 4 + (n - 1) * 2);
            let header = format!("P5\n{} {}\n255\n", grid.width, grid.height);
            assert_eq!(grid.bytes.len(), header.len() + grid.width * grid.height);
        }
    }

    #[test]
    fn color_images_render_as_p6() {
        let mut t = Tensor::zeros(&[1, 3, 2, 2]);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = (i as f64) / 12.0 - 0.5;
        }
        let grid = render_pair_grid(&t, &t);
        let (magic, w, h, _) = parse_header(&grid.bytes);
        assert_eq!(magic, "P6");
        let pix_len = w * h * 3;
        assert_eq!(grid.bytes.len() - pix_len, format!("P6\n{w} {h}\n255\n").len());
    }
}
