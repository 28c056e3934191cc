use ndarray::{ArrayD, ArrayViewD, IxDyn};

use super::ModelError;

/// A named, shaped block of row-major values as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ModelError> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ModelError::Shape(format!(
                "{name}: shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    pub fn from_view(name: &str, view: ArrayViewD<'_, f64>) -> Self {
        Self {
            name: name.to_string(),
            shape: view.shape().to_vec(),
            data: view.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.data.clone())
            .expect("shape checked at construction")
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        check_finite(&self.name, self.data.iter())
    }
}

/// Fails with [`ModelError::NonFinite`] on the first NaN or infinity.
pub fn check_finite<'a, I>(name: &str, values: I) -> Result<(), ModelError>
where
    I: IntoIterator<Item = &'a f64>,
{
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(name.to_string()))
    }
}
