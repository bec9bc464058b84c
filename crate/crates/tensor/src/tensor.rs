use crate::error::{shape_err, Result};
use crate::real::Real;

/// Dense row-major array with an optional gradient buffer.
///
/// Images use the batch-channels-height-width layout; token sequences use
/// batch-tokens-channels. Every extent is at least one.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return shape_err("tensors need at least one axis");
    }
    if let Some(axis) = shape.iter().position(|&d| d == 0) {
        return shape_err(format!("extent of axis {axis} is zero in {shape:?}"));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel = check_shape(&shape)?;
        if numel != data.len() {
            return shape_err(format!(
                "shape {shape:?} holds {numel} values but {} were supplied",
                data.len()
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let numel = check_shape(&shape)?;
        Self::new(shape, vec![value; numel])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds a tensor by evaluating `f` at each flat (row-major) index.
    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        let numel = check_shape(&shape)?;
        Self::new(shape, (0..numel).map(f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the values; used by optimizers for in-place updates.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Enables or disables gradient tracking. Disabling drops any stored gradient.
    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.set_requires_grad(true);
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<T>) {
        debug_assert_eq!(grad.len(), self.data.len());
        if self.requires_grad {
            self.grad = Some(grad);
        }
    }

    pub fn zero_grad(&mut self) {
        if self.requires_grad {
            self.grad = Some(vec![T::zero(); self.data.len()]);
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel = check_shape(&shape)?;
        if numel != self.numel() {
            return shape_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
            requires_grad: false,
            grad: None,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Converts element type (e.g. `f32` parameters into `f64` for verification).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::from_f64(v.as_f64())).collect()),
        }
    }

    /// Applies a precomputed gather: `out[i] = self[index[i]]`.
    pub fn gather(&self, index: &[usize], shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel = check_shape(&shape)?;
        if numel != index.len() {
            return shape_err("gather index length does not match output shape");
        }
        let data = index.iter().map(|&i| self.data[i]).collect();
        Self::new(shape, data)
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return shape_err(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shapes() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(Vec::<usize>::new(), vec![]).is_err());
        assert_eq!(Tensor::<f32>::zeros(vec![2, 3]).unwrap().numel(), 6);
    }

    #[test]
    fn grad_only_kept_when_tracked() {
        let mut t = Tensor::<f64>::ones(vec![3]).unwrap();
        t.set_grad(vec![1.0; 3]);
        assert!(t.grad().is_none());
        t.set_requires_grad(true);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0; 3]);
        t.set_requires_grad(false);
        assert!(t.grad().is_none());
    }
}
