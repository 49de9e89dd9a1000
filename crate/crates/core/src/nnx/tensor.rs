use std::fmt;

use super::NnxError;

/// Dense row-major `f32` array.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, NnxError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NnxError::ShapeMismatch(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the same values under a new shape with equal element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, NnxError> {
        Self::new(shape, self.data)
    }

    /// Extents of a `(channels, height, width)` tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize), NnxError> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(NnxError::ShapeMismatch(format!(
                "expected a (C, H, W) tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// `(C, H, W)` to `(H, W, C)`.
    pub fn to_channels_last(&self) -> Result<Self, NnxError> {
        let (c, h, w) = self.chw()?;
        let mut out = vec![0.0; self.data.len()];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(y * w + x) * c + ch] = self.data[(ch * h + y) * w + x];
                }
            }
        }
        Ok(Self {
            shape: vec![h, w, c],
            data: out,
        })
    }

    /// `(H, W, C)` to `(C, H, W)`.
    pub fn to_channels_first(&self) -> Result<Self, NnxError> {
        let (h, w, c) = match self.shape[..] {
            [h, w, c] => (h, w, c),
            _ => {
                return Err(NnxError::ShapeMismatch(format!(
                    "expected a (H, W, C) tensor, got shape {:?}",
                    self.shape
                )))
            }
        };
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = self.data[(y * w + x) * c + ch];
                }
            }
        }
        Ok(Self {
            shape: vec![c, h, w],
            data: out,
        })
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        let head = &self.data[..self.data.len().min(PREVIEW)];
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &head)
            .field("truncated", &(self.data.len() > PREVIEW))
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(NnxError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn channel_permutes_are_inverse() {
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let t = Tensor::new(vec![2, 3, 4], data).unwrap();
        let last = t.to_channels_last().unwrap();
        assert_eq!(last.shape(), &[3, 4, 2]);
        // (c=1, y=0, x=1) lives at index 13 in CHW.
        assert_eq!(last.data()[3], 13.0);
        assert_eq!(last.to_channels_first().unwrap(), t);
    }
}
