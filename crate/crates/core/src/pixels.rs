//! Conversions between RGB images and `[H, W, 3]` tensors in [-1, 1], and
//! the 8x8 patch layout the models work on.

use vqai_tensor::{Graph, Scalar, Tensor, Var};

use crate::microworld::{Image, CELL, SIZE};

/// Tokens per image.
pub const PATCHES: usize = (SIZE / CELL) * (SIZE / CELL);
/// Values per RGB patch.
pub const PATCH_DIM: usize = CELL * CELL * 3;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("expected a {SIZE}x{SIZE} RGB image, got {0}x{1}")]
pub struct BadImageShape(pub u32, pub u32);

pub fn image_to_tensor<T: Scalar>(img: &Image) -> Result<Tensor<T>, BadImageShape> {
    if img.width() as usize != SIZE || img.height() as usize != SIZE {
        return Err(BadImageShape(img.width(), img.height()));
    }
    let data = img
        .as_raw()
        .iter()
        .map(|&v| T::lit(v as f64 / 127.5 - 1.0))
        .collect();
    Ok(Tensor::from_vec(&[SIZE, SIZE, 3], data))
}

pub fn tensor_to_image<T: Scalar>(t: &Tensor<T>) -> Image {
    assert_eq!(t.shape(), [SIZE, SIZE, 3], "image tensor shape");
    let raw = t
        .data()
        .iter()
        .map(|v| ((v.as_f64().clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
        .collect();
    Image::from_raw(SIZE as u32, SIZE as u32, raw).unwrap()
}

/// Stacks `[H, W, C]` tensors into `[B, H, W, C]`.
pub fn stack<T: Scalar>(items: &[&Tensor<T>]) -> Tensor<T> {
    let mut shape = vec![items.len()];
    shape.extend_from_slice(items[0].shape());
    let mut data = Vec::with_capacity(items.len() * items[0].len());
    for t in items {
        assert_eq!(t.shape(), items[0].shape(), "stack shape mismatch");
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&shape, data)
}

/// `[B, H, W, C]` to `[B, cells, 64*C]`, cells in row-major order.
pub fn patchify<T: Scalar>(g: &Graph<T>, x: Var) -> Var {
    let s = g.shape(x);
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (gh, gw) = (h / CELL, w / CELL);
    let x = g.reshape(x, &[b, gh, CELL, gw, CELL, c]);
    let x = g.permute(x, &[0, 1, 3, 2, 4, 5]);
    g.reshape(x, &[b, gh * gw, CELL * CELL * c])
}

/// Inverse of [`patchify`] for a square canvas.
pub fn unpatchify<T: Scalar>(g: &Graph<T>, p: Var, channels: usize) -> Var {
    let s = g.shape(p);
    let (b, n) = (s[0], s[1]);
    let side = (n as f64).sqrt() as usize;
    let x = g.reshape(p, &[b, side, side, CELL, CELL, channels]);
    let x = g.permute(x, &[0, 1, 3, 2, 4, 5]);
    g.reshape(x, &[b, side * CELL, side * CELL, channels])
}

/// Same as [`patchify`] on a plain tensor.
pub fn patchify_tensor<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (gh, gw) = (h / CELL, w / CELL);
    x.clone()
        .reshape(&[b, gh, CELL, gw, CELL, c])
        .permute(&[0, 1, 3, 2, 4, 5])
        .reshape(&[b, gh * gw, CELL * CELL * c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use vqai_tensor::ParamStore;

    #[test]
    fn round_trips() {
        let img = Image::from_fn(64, 64, |x, y| image::Rgb([x as u8 * 4, y as u8 * 4, 7]));
        let t: Tensor<f32> = image_to_tensor(&img).unwrap();
        assert_eq!(tensor_to_image(&t), img);
        let store = ParamStore::<f32>::new();
        let g = Graph::inference(&store);
        let x = g.constant(stack(&[&t, &t]));
        let p = patchify(&g, x);
        assert_eq!(g.shape(p), [2, 64, 192]);
        // first patch is the top-left cell
        assert_eq!(g.value(p).data()[3], t.data()[3]);
        assert_eq!(g.value(p).data()[24], t.data()[64 * 3]);
        assert_eq!(g.value(unpatchify(&g, p, 3)), g.value(x));
        assert_eq!(patchify_tensor(&g.value(x)), g.value(p));
        assert_eq!(image_to_tensor::<f32>(&Image::new(32, 64)), Err(BadImageShape(32, 64)));
    }
}
