//! Warmup adaptation: dual-averaging step size and windowed diagonal metric.

use rand_chacha::ChaCha8Rng;

use super::nuts::PhasePoint;
use super::Target;

/// Nesterov dual averaging on `log ε` toward a target acceptance statistic.
#[derive(Clone, Debug)]
pub(crate) struct DualAveraging {
    target: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

const DA_GAMMA: f64 = 0.05;
const DA_KAPPA: f64 = 0.75;
const DA_T0: f64 = 10.0;

impl DualAveraging {
    pub fn new(target: f64, eps: f64) -> Self {
        Self { target, mu: (10.0 * eps).ln(), counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    /// Feeds one acceptance statistic, returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + DA_T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / DA_GAMMA;
        let w = self.counter.powf(-DA_KAPPA);
        self.x_bar = w * x + (1.0 - w) * self.x_bar;
        x.exp()
    }

    /// Averaged step size used after warmup.
    pub fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean and variance.
#[derive(Clone, Debug)]
pub(crate) struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Sample variance shrunk toward `1e-3` with weight `5 / (n + 5)`.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Warmup phases: a fast initial buffer, doubling slow windows that estimate
/// the metric, and a fast terminal buffer.
#[derive(Clone, Debug)]
pub(crate) struct WindowSchedule {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window_end: usize,
    pub enabled: bool,
}

impl WindowSchedule {
    pub fn new(warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base) = (75, 50, 25);
        let enabled = warmup >= 20;
        if init_buffer + term_buffer + base > warmup {
            init_buffer = (0.15 * warmup as f64) as usize;
            term_buffer = (0.1 * warmup as f64) as usize;
            base = warmup.saturating_sub(init_buffer + term_buffer);
        }
        Self {
            warmup,
            init_buffer,
            term_buffer,
            window_size: base,
            next_window_end: (init_buffer + base).saturating_sub(1),
            enabled,
        }
    }

    pub fn in_slow_window(&self, it: usize) -> bool {
        self.enabled && it >= self.init_buffer && it + self.term_buffer < self.warmup
    }

    pub fn is_window_end(&self, it: usize) -> bool {
        self.enabled && it == self.next_window_end && it + 1 < self.warmup
    }

    pub fn advance(&mut self, it: usize) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_window_end == last {
            return;
        }
        self.window_size *= 2;
        self.next_window_end = it + self.window_size;
        if self.next_window_end != last && self.next_window_end + 2 * self.window_size >= self.warmup - self.term_buffer {
            self.next_window_end = last;
        }
    }
}

/// Doubling/halving search for a step size whose single leapfrog step has
/// acceptance near 0.8.
pub(crate) fn find_reasonable_step<T: Target + ?Sized>(
    target: &T,
    z: &PhasePoint,
    mut eps: f64,
    inv_metric: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut probe = z.clone();
    probe.resample_momentum(inv_metric, rng);
    let h0 = probe.hamiltonian(inv_metric);
    let start = probe.clone();
    probe.leapfrog(target, eps, inv_metric);
    let delta = h0 - probe.hamiltonian(inv_metric);
    let direction = if delta > 0.8f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let mut probe = start.clone();
        probe.resample_momentum(inv_metric, rng);
        let h0 = probe.hamiltonian(inv_metric);
        probe.leapfrog(target, eps, inv_metric);
        let delta = h0 - probe.hamiltonian(inv_metric);
        if direction > 0.0 && !(delta > 0.8f64.ln()) {
            break;
        }
        if direction < 0.0 && delta > 0.8f64.ln() {
            break;
        }
        eps = if direction > 0.0 { 2.0 * eps } else { 0.5 * eps };
        if !(1e-12..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-12, 1e7)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_schedule_matches_reference_boundaries() {
        // 1000 warmup iterations: windows end at 99, 149, 249, 449, 949
        let mut w = WindowSchedule::new(1000);
        let mut ends = Vec::new();
        for it in 0..1000 {
            if w.is_window_end(it) {
                ends.push(it);
                w.advance(it);
            }
        }
        assert_eq!(ends, vec![99, 149, 249, 449, 949]);
        assert!(!w.in_slow_window(74) && w.in_slow_window(75) && w.in_slow_window(949) && !w.in_slow_window(950));
    }

    #[test]
    fn short_warmup_scales_buffers() {
        let mut w = WindowSchedule::new(100);
        let mut ends = Vec::new();
        for it in 0..100 {
            if w.is_window_end(it) {
                ends.push(it);
                w.advance(it);
            }
        }
        assert_eq!(ends.last(), Some(&89));
        assert!(!WindowSchedule::new(10).enabled);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [[1.0, 2.0], [3.0, -1.0], [4.5, 0.0], [0.5, 7.0]];
        let mut w = Welford::new(2);
        for x in &xs {
            w.add(x);
        }
        let n = xs.len() as f64;
        for j in 0..2 {
            let m = xs.iter().map(|x| x[j]).sum::<f64>() / n;
            let v = xs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
            let expect = n / (n + 5.0) * v + 1e-3 * 5.0 / (n + 5.0);
            assert!((w.regularized_variance()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_averaging_moves_toward_target() {
        let mut da = DualAveraging::new(0.8, 1.0);
        let big = da.update(0.1);
        let mut da2 = DualAveraging::new(0.8, 1.0);
        let small = da2.update(1.0);
        assert!(big < small);
    }
}
