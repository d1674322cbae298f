//! One multinomial no-U-turn transition with a diagonal metric.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Target;

/// Energy error beyond which a trajectory is declared divergent.
const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Clone, Debug)]
pub(crate) struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    pub fn new<T: Target + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.log_density_and_grad(&q, &mut grad);
        Self { p: vec![0.0; q.len()], q, grad, logp }
    }

    fn kinetic(&self, inv_metric: &[f64]) -> f64 {
        0.5 * self.p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    pub fn hamiltonian(&self, inv_metric: &[f64]) -> f64 {
        let h = -self.logp + self.kinetic(inv_metric);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, inv_metric: &[f64]) -> Vec<f64> {
        self.p.iter().zip(inv_metric).map(|(p, m)| p * m).collect()
    }

    pub fn leapfrog<T: Target + ?Sized>(&mut self, target: &T, eps: f64, inv_metric: &[f64]) {
        for (p, g) in self.p.iter_mut().zip(&self.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in self.q.iter_mut().zip(&self.p).zip(inv_metric) {
            *q += eps * m * p;
        }
        self.logp = target.log_density_and_grad(&self.q, &mut self.grad);
        if !self.logp.is_finite() {
            return;
        }
        for (p, g) in self.p.iter_mut().zip(&self.grad) {
            *p += 0.5 * eps * g;
        }
    }

    pub fn resample_momentum(&mut self, inv_metric: &[f64], rng: &mut ChaCha8Rng) {
        for (p, m) in self.p.iter_mut().zip(inv_metric) {
            let z: f64 = rng.sample(StandardNormal);
            *p = z / m.sqrt();
        }
    }
}

/// Outcome of one transition.
#[derive(Clone, Debug)]
pub(crate) struct TransitionInfo {
    pub accept_stat: f64,
    pub divergent: bool,
    pub depth: u32,
    pub n_leapfrog: u32,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Generalised no-U-turn criterion.
fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct Tree<'a, T: Target + ?Sized> {
    target: &'a T,
    eps: f64,
    inv_metric: &'a [f64],
    h0: f64,
    n_leapfrog: u32,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Edge momenta of a subtree.
struct Edges {
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
}

impl<T: Target + ?Sized> Tree<'_, T> {
    /// Extends `z` by `2^depth` leapfrog steps in direction `sign`. On success
    /// returns the multinomial proposal, the subtree edges and `rho`, and adds
    /// the subtree weight to `log_sum_weight`.
    fn build(
        &mut self,
        depth: u32,
        z: &mut PhasePoint,
        sign: f64,
        rho: &mut [f64],
        log_sum_weight: &mut f64,
        rng: &mut ChaCha8Rng,
    ) -> Option<(PhasePoint, Edges)> {
        if depth == 0 {
            z.leapfrog(self.target, sign * self.eps, self.inv_metric);
            self.n_leapfrog += 1;
            let h = z.hamiltonian(self.inv_metric);
            if !z.logp.is_finite() || h - self.h0 > MAX_ENERGY_ERROR {
                self.divergent = true;
                return None;
            }
            let delta = self.h0 - h;
            *log_sum_weight = log_sum_exp(*log_sum_weight, delta);
            self.sum_metro_prob += if delta > 0.0 { 1.0 } else { delta.exp() };
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            let ps = z.p_sharp(self.inv_metric);
            let edges = Edges { p_beg: z.p.clone(), p_end: z.p.clone(), p_sharp_beg: ps.clone(), p_sharp_end: ps };
            return Some((z.clone(), edges));
        }

        let dim = rho.len();
        let mut rho_init = vec![0.0; dim];
        let mut lsw_init = f64::NEG_INFINITY;
        let (propose_init, init) = self.build(depth - 1, z, sign, &mut rho_init, &mut lsw_init, rng)?;

        let mut rho_final = vec![0.0; dim];
        let mut lsw_final = f64::NEG_INFINITY;
        let (propose_final, fin) = self.build(depth - 1, z, sign, &mut rho_final, &mut lsw_final, rng)?;

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        let propose = if lsw_final > lsw_subtree || rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            propose_final
        } else {
            propose_init
        };

        let rho_subtree = add(&rho_init, &rho_final);
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho_subtree);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &add(&rho_init, &fin.p_beg));
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &add(&rho_final, &init.p_end));
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        persist.then(|| {
            let edges = Edges {
                p_beg: init.p_beg,
                p_end: fin.p_end,
                p_sharp_beg: init.p_sharp_beg,
                p_sharp_end: fin.p_sharp_end,
            };
            (propose, edges)
        })
    }
}

/// Draws fresh momentum at `z` and performs one NUTS transition, replacing
/// `z` with the selected state.
pub(crate) fn transition<T: Target + ?Sized>(
    target: &T,
    z: &mut PhasePoint,
    eps: f64,
    inv_metric: &[f64],
    max_depth: u32,
    rng: &mut ChaCha8Rng,
) -> TransitionInfo {
    z.resample_momentum(inv_metric, rng);
    let h0 = z.hamiltonian(inv_metric);
    let mut tree = Tree { target, eps, inv_metric, h0, n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false };

    let mut z_fwd = z.clone();
    let mut z_bck = z.clone();
    let mut sample = z.clone();
    // momentum and sharp momentum at the backward and forward extremes
    let ps0 = z.p_sharp(inv_metric);
    let (mut lo_p, mut lo_sharp) = (z.p.clone(), ps0.clone());
    let (mut hi_p, mut hi_sharp) = (z.p.clone(), ps0);
    let mut rho = z.p.clone();
    let mut log_sum_weight = 0.0;
    let mut depth = 0;

    while depth < max_depth {
        let mut rho_new = vec![0.0; rho.len()];
        let mut lsw_subtree = f64::NEG_INFINITY;
        let forward = rng.random::<f64>() > 0.5;
        let built = if forward {
            tree.build(depth, &mut z_fwd, 1.0, &mut rho_new, &mut lsw_subtree, rng)
        } else {
            tree.build(depth, &mut z_bck, -1.0, &mut rho_new, &mut lsw_subtree, rng)
        };
        let Some((propose, new)) = built else { break };
        depth += 1;

        if lsw_subtree > log_sum_weight || rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
            sample = propose;
        }
        log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

        // `new.p_beg` is adjacent to the old trajectory, `new.p_end` is the new extreme
        let total = add(&rho, &rho_new);
        let persist = if forward {
            no_u_turn(&lo_sharp, &new.p_sharp_end, &total)
                && no_u_turn(&lo_sharp, &new.p_sharp_beg, &add(&rho, &new.p_beg))
                && no_u_turn(&hi_sharp, &new.p_sharp_end, &add(&rho_new, &hi_p))
        } else {
            no_u_turn(&new.p_sharp_end, &hi_sharp, &total)
                && no_u_turn(&new.p_sharp_end, &lo_sharp, &add(&rho_new, &lo_p))
                && no_u_turn(&new.p_sharp_beg, &hi_sharp, &add(&rho, &new.p_beg))
        };
        rho = total;
        if forward {
            (hi_p, hi_sharp) = (new.p_end, new.p_sharp_end);
        } else {
            (lo_p, lo_sharp) = (new.p_end, new.p_sharp_end);
        }
        if !persist {
            break;
        }
    }

    *z = sample;
    let accept_stat = if tree.n_leapfrog > 0 { tree.sum_metro_prob / f64::from(tree.n_leapfrog) } else { 0.0 };
    TransitionInfo { accept_stat, divergent: tree.divergent, depth, n_leapfrog: tree.n_leapfrog }
}
