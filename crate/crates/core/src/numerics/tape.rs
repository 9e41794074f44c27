use super::{Matrix, NumericsError};

/// Handle to a parameter registered on a [`ParamTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Matrix,
    grad: Matrix,
}

/// Ordered registry of named parameter matrices and their gradient
/// accumulators. Registration order fixes iteration, flattening and
/// serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamTape {
    entries: Vec<Entry>,
}

impl ParamTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(self.id_of(&name).is_none(), "duplicate parameter {name}");
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.entries.push(Entry { name, value, grad });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].grad
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: Matrix) -> Result<(), NumericsError> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(NumericsError::Shape(format!(
                "{}: expected {:?}, got {:?}",
                entry.name,
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Matrix) {
        self.entries[id.0].grad.add_assign(grad);
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.as_mut_slice().fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.as_slice().len()).sum()
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (i, e) in self.entries.iter().enumerate() {
            let n = e.value.as_slice().len();
            if flat < n {
                return (i, flat);
            }
            flat -= n;
        }
        panic!("flat parameter index out of range");
    }

    pub fn scalar(&self, flat: usize) -> f64 {
        let (i, j) = self.locate(flat);
        self.entries[i].value.as_slice()[j]
    }

    pub fn set_scalar(&mut self, flat: usize, v: f64) {
        let (i, j) = self.locate(flat);
        self.entries[i].value.as_mut_slice()[j] = v;
    }

    pub fn grad_scalar(&self, flat: usize) -> f64 {
        let (i, j) = self.locate(flat);
        self.entries[i].grad.as_slice()[j]
    }

    /// `(name, value)` pairs in registration order.
    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }
}
