//! Multinomial No-U-Turn transitions with a diagonal Euclidean metric, plus
//! the warmup machinery (dual-averaging step size, windowed variance
//! estimation).
//!
//! Trajectories are doubled in a random direction until the generalized
//! no-U-turn criterion fails, including the two extra checks across the
//! subtree junction. Proposals are sampled multinomially within subtrees and
//! with the progressive (biased) rule between the old tree and a new subtree.

use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::stats::log_add_exp;

/// Energy error beyond which a trajectory is declared divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub lp: f64,
}

impl PhasePoint {
    fn kinetic(&self, inv_metric: &[f64]) -> f64 {
        0.5 * self
            .p
            .iter()
            .zip(inv_metric)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    pub fn hamiltonian(&self, inv_metric: &[f64]) -> f64 {
        -self.lp + self.kinetic(inv_metric)
    }

    fn velocity(&self, inv_metric: &[f64]) -> Vec<f64> {
        self.p.iter().zip(inv_metric).map(|(p, m)| p * m).collect()
    }
}

pub(crate) fn evaluate<T: LogDensity + ?Sized>(target: &T, q: &[f64], grad: &mut [f64]) -> f64 {
    let lp = target.log_density_grad(q, grad);
    if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
        lp
    } else {
        f64::NEG_INFINITY
    }
}

pub(crate) fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    z: &mut PhasePoint,
    eps: f64,
    inv_metric: &[f64],
) {
    let half = 0.5 * eps;
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += half * g;
    }
    for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(inv_metric) {
        *q += eps * m * p;
    }
    z.lp = evaluate(target, &z.q, &mut z.grad);
    if z.lp == f64::NEG_INFINITY {
        return;
    }
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += half * g;
    }
}

fn sample_momentum<R: Rng + ?Sized>(rng: &mut R, z: &mut PhasePoint, inv_metric: &[f64]) {
    for (p, m) in z.p.iter_mut().zip(inv_metric) {
        let n: f64 = rng.sample(StandardNormal);
        *p = n / m.sqrt();
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TransitionStats {
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub accept_stat: f64,
    pub energy: f64,
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    let plus: f64 = p_sharp_plus.iter().zip(rho).map(|(a, b)| a * b).sum();
    let minus: f64 = p_sharp_minus.iter().zip(rho).map(|(a, b)| a * b).sum();
    plus > 0.0 && minus > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

struct TreeBuilder<'a, T: ?Sized> {
    target: &'a T,
    eps: f64,
    inv_metric: &'a [f64],
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Edge momenta of a subtree; `sharp` variants are velocities `M⁻¹ p`.
struct Edges {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
}

impl<'a, T: LogDensity + ?Sized> TreeBuilder<'a, T> {
    /// Extends `z` by `2^depth` leapfrog steps in direction `sign`. Returns
    /// whether the subtree is valid (no divergence, no U-turn inside).
    #[allow(clippy::too_many_arguments)]
    fn build<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        depth: usize,
        sign: f64,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        rho: &mut [f64],
        edges: &mut Edges,
        log_sum_weight: &mut f64,
    ) -> bool {
        if depth == 0 {
            leapfrog(self.target, z, sign * self.eps, self.inv_metric);
            self.n_leapfrog += 1;
            let mut h = z.hamiltonian(self.inv_metric);
            if h.is_nan() || z.lp == f64::NEG_INFINITY {
                h = f64::INFINITY;
            }
            if h - self.h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_add_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 {
                1.0
            } else {
                (self.h0 - h).exp()
            };
            z_propose.clone_from(z);
            let v = z.velocity(self.inv_metric);
            edges.p_sharp_beg.clone_from(&v);
            edges.p_sharp_end = v;
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            edges.p_beg.clone_from(&z.p);
            edges.p_end.clone_from(&z.p);
            return !self.divergent;
        }

        let dim = z.q.len();
        // Initial subtree.
        let mut lsw_init = f64::NEG_INFINITY;
        let mut rho_init = vec![0.0; dim];
        let mut init_edges = Edges {
            p_sharp_beg: Vec::new(),
            p_sharp_end: Vec::new(),
            p_beg: Vec::new(),
            p_end: Vec::new(),
        };
        if !self.build(
            rng,
            depth - 1,
            sign,
            z,
            z_propose,
            &mut rho_init,
            &mut init_edges,
            &mut lsw_init,
        ) {
            return false;
        }

        // Final subtree.
        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut rho_final = vec![0.0; dim];
        let mut final_edges = Edges {
            p_sharp_beg: Vec::new(),
            p_sharp_end: Vec::new(),
            p_beg: Vec::new(),
            p_end: Vec::new(),
        };
        if !self.build(
            rng,
            depth - 1,
            sign,
            z,
            &mut z_propose_final,
            &mut rho_final,
            &mut final_edges,
            &mut lsw_final,
        ) {
            return false;
        }

        let lsw_subtree = log_add_exp(lsw_init, lsw_final);
        *log_sum_weight = log_add_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (lsw_final - lsw_subtree).exp();
            if rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(
            &init_edges.p_sharp_beg,
            &final_edges.p_sharp_end,
            &rho_subtree,
        );
        let rho_ext = add(&rho_init, &final_edges.p_beg);
        persist &= no_u_turn(&init_edges.p_sharp_beg, &final_edges.p_sharp_beg, &rho_ext);
        let rho_ext = add(&rho_final, &init_edges.p_end);
        persist &= no_u_turn(&init_edges.p_sharp_end, &final_edges.p_sharp_end, &rho_ext);

        edges.p_sharp_beg = init_edges.p_sharp_beg;
        edges.p_beg = init_edges.p_beg;
        edges.p_sharp_end = final_edges.p_sharp_end;
        edges.p_end = final_edges.p_end;
        persist
    }
}

/// One NUTS transition from `current` (position, log density and gradient
/// must be valid). Returns the new point and transition statistics.
pub(crate) fn transition<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &PhasePoint,
    eps: f64,
    inv_metric: &[f64],
    max_depth: usize,
    rng: &mut R,
) -> (PhasePoint, TransitionStats) {
    let dim = current.q.len();
    let mut z0 = current.clone();
    sample_momentum(rng, &mut z0, inv_metric);
    let h0 = z0.hamiltonian(inv_metric);

    let mut z_fwd = z0.clone();
    let mut z_bck = z0.clone();
    let mut sample = z0.clone();

    let v0 = z0.velocity(inv_metric);
    // Outermost momenta of the whole trajectory at each end.
    let mut p_sharp_fwd_bck = v0.clone();
    let mut p_sharp_fwd_fwd = v0.clone();
    let mut p_fwd_bck = z0.p.clone();
    let mut p_fwd_fwd = z0.p.clone();
    let mut p_sharp_bck_fwd = v0.clone();
    let mut p_sharp_bck_bck = v0;
    let mut p_bck_fwd = z0.p.clone();
    let mut p_bck_bck = z0.p.clone();

    let mut rho = z0.p.clone();
    let mut log_sum_weight = 0.0;
    let mut depth = 0;

    let mut builder = TreeBuilder {
        target,
        eps,
        inv_metric,
        h0,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };

    while depth < max_depth {
        let mut rho_fwd = vec![0.0; dim];
        let mut rho_bck = vec![0.0; dim];
        let mut lsw_subtree = f64::NEG_INFINITY;
        let mut z_propose = z0.clone();

        let valid = if rng.random::<f64>() > 0.5 {
            // Extend forward: the existing tree becomes the backward part.
            rho_bck.clone_from(&rho);
            p_bck_fwd.clone_from(&p_fwd_bck);
            p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
            let mut edges = Edges {
                p_sharp_beg: Vec::new(),
                p_sharp_end: Vec::new(),
                p_beg: Vec::new(),
                p_end: Vec::new(),
            };
            let ok = builder.build(
                rng,
                depth,
                1.0,
                &mut z_fwd,
                &mut z_propose,
                &mut rho_fwd,
                &mut edges,
                &mut lsw_subtree,
            );
            if ok {
                p_sharp_fwd_bck = edges.p_sharp_beg;
                p_sharp_fwd_fwd = edges.p_sharp_end;
                p_fwd_bck = edges.p_beg;
                p_fwd_fwd = edges.p_end;
            }
            ok
        } else {
            rho_fwd.clone_from(&rho);
            p_fwd_bck.clone_from(&p_bck_fwd);
            p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
            let mut edges = Edges {
                p_sharp_beg: Vec::new(),
                p_sharp_end: Vec::new(),
                p_beg: Vec::new(),
                p_end: Vec::new(),
            };
            let ok = builder.build(
                rng,
                depth,
                -1.0,
                &mut z_bck,
                &mut z_propose,
                &mut rho_bck,
                &mut edges,
                &mut lsw_subtree,
            );
            if ok {
                p_sharp_bck_fwd = edges.p_sharp_beg;
                p_sharp_bck_bck = edges.p_sharp_end;
                p_bck_fwd = edges.p_beg;
                p_bck_bck = edges.p_end;
            }
            ok
        };

        if !valid {
            break;
        }
        depth += 1;

        if lsw_subtree > log_sum_weight {
            sample = z_propose;
        } else {
            let accept = (lsw_subtree - log_sum_weight).exp();
            if rng.random::<f64>() < accept {
                sample = z_propose;
            }
        }
        log_sum_weight = log_add_exp(log_sum_weight, lsw_subtree);

        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
        let rho_ext = add(&rho_bck, &p_fwd_bck);
        persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
        let rho_ext = add(&rho_fwd, &p_bck_fwd);
        persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
        if !persist {
            break;
        }
    }
    let _ = (&p_fwd_fwd, &p_bck_bck);

    let stats = TransitionStats {
        depth,
        n_leapfrog: builder.n_leapfrog,
        divergent: builder.divergent,
        accept_stat: if builder.n_leapfrog > 0 {
            builder.sum_metro_prob / builder.n_leapfrog as f64
        } else {
            0.0
        },
        energy: sample.hamiltonian(inv_metric),
    };
    (sample, stats)
}

/// Doubles or halves `eps` until one leapfrog step crosses an acceptance
/// probability of 0.8.
pub(crate) fn find_reasonable_step_size<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &PhasePoint,
    mut eps: f64,
    inv_metric: &[f64],
    rng: &mut R,
) -> f64 {
    let threshold = 0.8f64.ln();
    let mut z = current.clone();
    sample_momentum(rng, &mut z, inv_metric);
    let h0 = z.hamiltonian(inv_metric);
    leapfrog(target, &mut z, eps, inv_metric);
    let h = z.hamiltonian(inv_metric);
    let delta = if h.is_finite() {
        h0 - h
    } else {
        f64::NEG_INFINITY
    };
    let direction = if delta > threshold { 1 } else { -1 };
    for _ in 0..100 {
        let mut z = current.clone();
        sample_momentum(rng, &mut z, inv_metric);
        let h0 = z.hamiltonian(inv_metric);
        leapfrog(target, &mut z, eps, inv_metric);
        let h = z.hamiltonian(inv_metric);
        let delta = if h.is_finite() {
            h0 - h
        } else {
            f64::NEG_INFINITY
        };
        if (direction == 1 && !(delta > threshold)) || (direction == -1 && !(delta < threshold)) {
            break;
        }
        eps = if direction == 1 { eps * 2.0 } else { eps * 0.5 };
        if !(1e-12..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-12, 1e7)
}

#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
}

impl DualAveraging {
    pub fn new(eps: f64, delta: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            s_bar: 0.0,
            x_bar: 0.0,
            counter: 0.0,
            delta,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
        }
    }

    pub fn restart(&mut self, eps: f64) {
        *self = DualAveraging::new(eps, self.delta);
    }

    /// Returns the next step size after observing `accept_stat`.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = accept_stat.min(1.0);
        let w = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - w) * self.s_bar + w * (self.delta - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_w = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_w) * self.x_bar + x_w * x;
        x.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule: a fast initial buffer, doubling slow windows that
/// estimate the metric, and a terminal buffer for the step size alone.
#[derive(Debug, Clone)]
pub(crate) struct WindowSchedule {
    n_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window_end: usize,
    pub adapt_metric: bool,
}

impl WindowSchedule {
    pub fn new(n_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base) = (75usize, 50usize, 25usize);
        let adapt_metric = n_warmup >= 20;
        if init_buffer + base + term_buffer > n_warmup {
            init_buffer = (0.15 * n_warmup as f64) as usize;
            term_buffer = (0.1 * n_warmup as f64) as usize;
            base = n_warmup.saturating_sub(init_buffer + term_buffer);
        }
        let mut s = WindowSchedule {
            n_warmup,
            init_buffer,
            term_buffer,
            window_size: base,
            next_window_end: init_buffer + base,
            adapt_metric,
        };
        s.extend_last_window();
        s
    }

    fn extend_last_window(&mut self) {
        let slow_end = self.n_warmup.saturating_sub(self.term_buffer);
        let next_end = self.next_window_end + 2 * self.window_size;
        if next_end > slow_end {
            self.next_window_end = slow_end;
        }
    }

    /// Whether iteration `i` (0-based) falls inside a slow window.
    pub fn in_slow_window(&self, i: usize) -> bool {
        self.adapt_metric
            && i >= self.init_buffer
            && i < self.n_warmup.saturating_sub(self.term_buffer)
    }

    /// Whether a slow window closes after iteration `i`; advances the
    /// schedule when it does.
    pub fn window_closes(&mut self, i: usize) -> bool {
        if !self.in_slow_window(i) || i + 1 != self.next_window_end {
            return false;
        }
        self.window_size *= 2;
        self.next_window_end = i + 1 + self.window_size;
        self.extend_last_window();
        true
    }
}

/// Streaming mean/variance (Welford) for the metric estimate.
#[derive(Debug, Clone)]
pub(crate) struct VarianceEstimator {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceEstimator {
    pub fn new(dim: usize) -> Self {
        VarianceEstimator {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, q: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(q) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    /// Regularized variance, shrunk toward `1e-3`.
    pub fn estimate(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        let dim = self.mean.len();
        *self = VarianceEstimator::new(dim);
    }
}
