/// Multiplies the learning rate by `factor` once the monitored loss has gone
/// `patience` consecutive epochs without a strict improvement on its best
/// value. The counter restarts after every reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    stale_epochs: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            stale_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records an epoch's loss. Returns true when the rate was just reduced.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale_epochs = 0;
            return false;
        }
        self.stale_epochs += 1;
        if self.stale_epochs >= self.patience {
            self.lr *= self.factor;
            self.stale_epochs = 0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_after_patience_stale_epochs() {
        let mut s = PlateauSchedule::new(1e-3, 0.5, 3);
        assert!(!s.observe(1.0));
        assert!(!s.observe(0.9));
        assert!(!s.observe(0.95));
        assert!(!s.observe(0.9)); // equal is not an improvement
        assert!(s.observe(0.91));
        assert_eq!(s.lr(), 5e-4);
        assert!(!s.observe(0.92));
        assert!(!s.observe(0.93));
        assert!(s.observe(0.94));
        assert_eq!(s.lr(), 2.5e-4);
        assert!(!s.observe(0.5));
        assert_eq!(s.best(), 0.5);
    }
}
