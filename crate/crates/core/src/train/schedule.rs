/// Linear warmup from 0 to `target`, then geometric decay by `gamma` every
/// `interval` iterations, optionally divided by 10 once.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub target: f64,
    pub warmup: u64,
    pub gamma: f64,
    pub interval: u64,
    pub plateau_drop: bool,
}

impl LrSchedule {
    pub fn lr(&self, iter: u64) -> f64 {
        let base = if iter < self.warmup {
            self.target * iter as f64 / self.warmup as f64
        } else {
            let decays = (iter - self.warmup) / self.interval.max(1);
            self.target * self.gamma.powf(decays as f64)
        };
        if self.plateau_drop {
            base / 10.0
        } else {
            base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> LrSchedule {
        LrSchedule {
            target: 1e-3,
            warmup: 500,
            gamma: 0.999,
            interval: 1,
            plateau_drop: false,
        }
    }

    #[test]
    fn warmup_then_decay() {
        let s = sched();
        assert_eq!(s.lr(0), 0.0);
        assert!((s.lr(250) - 5e-4).abs() < 1e-15);
        assert!((s.lr(500) - 1e-3).abs() < 1e-15);
        assert!((s.lr(501) - 1e-3 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn plateau_divides_by_ten() {
        let s = LrSchedule {
            plateau_drop: true,
            ..sched()
        };
        assert!((s.lr(700) - sched().lr(700) / 10.0).abs() < 1e-18);
    }

    #[test]
    fn longer_interval_holds_rate() {
        let s = LrSchedule {
            interval: 100,
            ..sched()
        };
        assert_eq!(s.lr(550), 1e-3);
        assert!((s.lr(600) - 1e-3 * 0.999).abs() < 1e-15);
    }
}
