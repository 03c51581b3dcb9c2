use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

pub const BUFFER_CAPACITY: usize = 50;

/// History of generated images shown to a discriminator. While filling, every
/// fake is stored and returned; once full, each fake is swapped with a random
/// stored image with probability ½, otherwise returned as is.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Tensor>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            items: Vec::new(),
        }
    }

    pub fn from_items(capacity: usize, items: Vec<Tensor>) -> Self {
        let mut items = items;
        items.truncate(capacity);
        ReplayBuffer { capacity, items }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Tensor] {
        &self.items
    }

    /// Passes an N×C×H×W batch of fakes through the buffer.
    pub fn query(&mut self, fakes: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let (n, ..) = fakes.dims4()?;
        if self.capacity == 0 {
            return Ok(fakes.clone());
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let img = fakes.batch_item(i)?;
            if self.items.len() < self.capacity {
                self.items.push(img.clone());
                out.push(img);
            } else if rng.random::<f64>() < 0.5 {
                let j = rng.random_range(0..self.capacity);
                out.push(std::mem::replace(&mut self.items[j], img));
            } else {
                out.push(img);
            }
        }
        Tensor::stack(&out)
    }
}
