//! Cosine annealing with warm restarts, stepped once per epoch.

use crate::config::ScheduleSection;

/// Position inside the current cycle: `(epochs since restart, cycle length)`.
fn cycle_position(epoch: usize, t0: usize, t_mult: usize) -> (usize, usize) {
    let (mut e, mut period) = (epoch, t0);
    while e >= period {
        e -= period;
        period *= t_mult;
    }
    (e, period)
}

/// Learning rate for `epoch` (0-based).
pub fn learning_rate(base: f64, s: &ScheduleSection, epoch: usize) -> f64 {
    let (e, period) = cycle_position(epoch, s.t0, s.t_mult);
    s.min_lr
        + (base - s.min_lr) * (1.0 + (std::f64::consts::PI * e as f64 / period as f64).cos()) / 2.0
}

/// Epochs at which a new cycle starts, up to `epochs` (exclusive), not
/// counting epoch 0.
pub fn restart_epochs(s: &ScheduleSection, epochs: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut at, mut period) = (s.t0, s.t0);
    while at < epochs {
        out.push(at);
        period *= s.t_mult;
        at += period;
    }
    out
}
