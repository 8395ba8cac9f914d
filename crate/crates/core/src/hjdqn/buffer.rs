use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::scalar::Real;

/// One sample `(x_k, a_k, r_k, x_{k+1})`; `r` is the reward rate at `(x_k, a_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub x: Vec<S>,
    pub a: Vec<S>,
    pub r: S,
    pub x_next: Vec<S>,
}

impl<S: Real> Transition<S> {
    pub fn is_finite(&self) -> bool {
        self.r.is_finite() && self.x.iter().chain(&self.a).chain(&self.x_next).all(|v| v.is_finite())
    }
}

/// Fixed-capacity FIFO ring of transitions collected at interval `h`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<S> {
    capacity: usize,
    h: S,
    data: Vec<Transition<S>>,
    cursor: usize,
}

impl<S: Real> ReplayBuffer<S> {
    pub fn new(capacity: usize, h: S) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            h,
            data: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Sampling interval the stored transitions were collected at.
    pub fn h(&self) -> S {
        self.h
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Appends `t`, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition<S>) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite("transition".into()));
        }
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Storage slot `i` (not insertion order once the ring wraps).
    pub fn get(&self, i: usize) -> Option<&Transition<S>> {
        self.data.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<S>> {
        self.data.iter()
    }

    /// Slots drawn uniformly with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.data.len() < batch || batch == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot sample {batch} transitions from a buffer holding {}",
                self.data.len()
            )));
        }
        Ok((0..batch).map(|_| rng.index(self.data.len())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(i: usize) -> Transition<f64> {
        Transition {
            x: vec![i as f64],
            a: vec![0.0],
            r: 0.0,
            x_next: vec![0.0],
        }
    }

    #[test]
    fn fifo_overwrite() {
        let mut buf = ReplayBuffer::new(3, 0.1).unwrap();
        for i in 0..4 {
            buf.push(tr(i)).unwrap();
        }
        assert_eq!(buf.len(), 3);
        assert!(buf.iter().all(|t| t.x[0] != 0.0));
        buf.push(tr(4)).unwrap();
        assert!(buf.iter().all(|t| t.x[0] != 1.0));
        assert!(ReplayBuffer::<f64>::new(0, 0.1).is_err());
    }

    #[test]
    fn rejects_non_finite_and_short_sampling() {
        let mut buf = ReplayBuffer::new(4, 0.1).unwrap();
        let mut bad = tr(0);
        bad.r = f64::NAN;
        assert!(buf.push(bad).is_err());
        assert!(buf.is_empty());
        buf.push(tr(1)).unwrap();
        let mut rng = Rng::new(0);
        assert!(buf.sample_indices(2, &mut rng).is_err());
        assert_eq!(buf.sample_indices(1, &mut rng).unwrap(), vec![0]);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let n = 8;
        let mut buf = ReplayBuffer::new(n, 0.1).unwrap();
        for i in 0..n {
            buf.push(tr(i)).unwrap();
        }
        let mut rng = Rng::new(12);
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            counts[buf.sample_indices(1, &mut rng).unwrap()[0]] += 1;
        }
        let p = 1.0 / n as f64;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "count {c}");
        }
    }
}
