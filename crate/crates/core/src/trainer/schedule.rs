use rand::Rng;

/// Constant for the first two thirds, then linear to zero.
pub fn lr_schedule(iter: u64, base: f64, iterations: u64) -> f64 {
    let start = iterations - iterations / 3;
    if iter < start {
        base
    } else {
        base * iterations.saturating_sub(iter) as f64 / (iterations - start) as f64
    }
}

/// Probability of feeding the ground-truth frame: 1 before `window`, 0 after,
/// linear in between.
pub fn scheduled_sampling_prob(iter: u64, window: [u64; 2]) -> f64 {
    let [start, end] = window;
    if iter >= end {
        0.0
    } else if iter <= start {
        1.0
    } else {
        (end - iter) as f64 / (end - start) as f64
    }
}

/// One i.i.d. Bernoulli(`p`) teacher-forcing flag per rollout step.
pub fn teacher_forcing_flags(rng: &mut impl Rng, p: f64, steps: usize) -> Vec<bool> {
    (0..steps).map(|_| rng.gen::<f64>() < p).collect()
}
