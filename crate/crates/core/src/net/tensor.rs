use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::Image;

/// Dense row-major array with an optional gradient buffer of the same shape.
///
/// Activations use `[C, H, W]`; convolution weights use `[C_out, C_in, 3, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    /// Parameter tensor: allocates a zeroed gradient buffer.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let mut t = Self::from_vec(shape, data)?;
        t.grad = Some(vec![0.0; t.data.len()]);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub(crate) fn data_and_grad_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        (&mut self.data, grad)
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `(C, H, W)` of an activation tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        debug_assert_eq!(self.shape.len(), 3);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let (_, h, w) = self.chw();
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Planar `[C, H, W]` copy of an interleaved image.
    pub fn from_image(img: &Image) -> Self {
        let (w, h, c) = (img.width(), img.height(), img.channels());
        let mut data = vec![0.0; w * h * c];
        for (p, px) in img.data().chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * w * h + p] = v;
            }
        }
        Tensor {
            shape: vec![c, h, w],
            data,
            grad: None,
        }
    }

    pub fn to_image(&self) -> Image {
        let (c, h, w) = self.chw();
        let mut data = vec![0.0; w * h * c];
        for ch in 0..c {
            for (p, &v) in self.plane(ch).iter().enumerate() {
                data[p * c + ch] = v;
            }
        }
        Image::from_vec(w, h, c, data).expect("tensor shape is consistent")
    }

    /// Two-channel tensor as a flow field.
    pub fn to_flow(&self) -> FlowField {
        let (c, h, w) = self.chw();
        assert_eq!(c, 2, "flow tensors have two channels");
        FlowField::from_fn(w, h, |x, y| (self.data[y * w + x], self.data[h * w + y * w + x]))
    }

    pub fn from_flow(flow: &FlowField) -> Self {
        let (w, h) = (flow.width(), flow.height());
        let mut data = vec![0.0; 2 * w * h];
        for y in 0..h {
            for x in 0..w {
                let (du, dv) = flow.get(x, y);
                data[y * w + x] = du;
                data[h * w + y * w + x] = dv;
            }
        }
        Tensor {
            shape: vec![2, h, w],
            data,
            grad: None,
        }
    }
}
