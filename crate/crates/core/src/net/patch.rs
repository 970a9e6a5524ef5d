//! Rearrangement between `V × h × w × C` images and `p×p` patch tokens.
//!
//! Token order is view-major, then row-major over the patch grid. Inside a
//! token the values are ordered `(dy, dx, channel)`.

use crate::image::Image;
use crate::real::Real;
use crate::{Error, Result};

/// Splits images into flat patch tokens, returning `(tokens, grid_h, grid_w)`.
pub fn patchify<T: Real, F: Real>(images: &[Image<T>], patch: usize) -> Result<(Vec<F>, usize, usize)> {
    let Some(first) = images.first() else {
        return Ok((Vec::new(), 0, 0));
    };
    if patch == 0 || first.height % patch != 0 || first.width % patch != 0 {
        return Err(Error::shape(format!(
            "{}×{} image is not divisible into {patch}×{patch} patches",
            first.height, first.width
        )));
    }
    if images.iter().any(|im| !im.same_shape(first)) {
        return Err(Error::shape("all views must share one resolution"));
    }
    let (gh, gw, c) = (first.height / patch, first.width / patch, first.channels);
    let mut out = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        for i in 0..gh {
            for j in 0..gw {
                for dy in 0..patch {
                    let row = (i * patch + dy) * img.width + j * patch;
                    let src = &img.data[row * c..(row + patch) * c];
                    out.extend(src.iter().map(|x| F::of(x.as_f64())));
                }
            }
        }
    }
    Ok((out, gh, gw))
}

/// Inverse of [`patchify`].
pub fn unpatchify<F: Real>(
    tokens: &[F],
    views: usize,
    grid_h: usize,
    grid_w: usize,
    patch: usize,
    channels: usize,
) -> Result<Vec<Image<F>>> {
    let (h, w) = (grid_h * patch, grid_w * patch);
    let per_view = h * w * channels;
    if tokens.len() != views * per_view {
        return Err(Error::shape(format!(
            "{} token values cannot form {views} views of {h}×{w}×{channels}",
            tokens.len()
        )));
    }
    let mut images = Vec::with_capacity(views);
    for v in 0..views {
        let mut data = vec![F::zero(); per_view];
        let src = &tokens[v * per_view..(v + 1) * per_view];
        let mut k = 0;
        for i in 0..grid_h {
            for j in 0..grid_w {
                for dy in 0..patch {
                    let row = (i * patch + dy) * w + j * patch;
                    let n = patch * channels;
                    data[row * channels..row * channels + n].copy_from_slice(&src[k..k + n]);
                    k += n;
                }
            }
        }
        images.push(Image::from_vec(h, w, channels, data)?);
    }
    Ok(images)
}
