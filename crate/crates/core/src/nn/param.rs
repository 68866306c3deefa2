/// A trainable tensor with its gradient and momentum buffer. Gradient and
/// momentum storage is allocated on first use so inference-only models stay
/// small.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Whether weight decay applies (weights yes, biases no).
    pub decay: bool,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f64>, decay: bool) -> Param {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        Param {
            shape,
            value,
            grad: Vec::new(),
            velocity: Vec::new(),
            decay,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        if self.grad.len() == self.value.len() {
            self.grad.fill(0.0);
        } else {
            self.grad = vec![0.0; self.value.len()];
        }
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
        &mut self.grad
    }
}
