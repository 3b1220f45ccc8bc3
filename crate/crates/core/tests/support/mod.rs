//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the algorithms under test; formulas are written
//! out directly so that agreement is meaningful.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod checks;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major random image with values in [0, 255].
pub fn random_pixels(w: usize, h: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..w * h).map(|_| r.random_range(0.0..=255.0)).collect()
}

/// Half-sample symmetric index reflection.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Direct 2-D correlation with mirror extension.
pub fn correlate(px: &[f64], w: usize, h: usize, radius: isize, weight: &dyn Fn(isize, isize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let rr = reflect(r as isize + dy, h);
                    let cc = reflect(c as isize + dx, w);
                    acc += weight(dy, dx) * px[rr * w + cc];
                }
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Normalized 2-D Gaussian taps on the `ceil(3s)` (min 1) support, as a closure.
pub fn gaussian_weights(s: f64) -> (isize, Box<dyn Fn(isize, isize) -> f64>) {
    let radius = ((3.0 * s).ceil() as isize).max(1);
    let raw = move |dy: isize, dx: isize| {
        (-((dx * dx + dy * dy) as f64) / (2.0 * s * s)).exp() / (2.0 * std::f64::consts::PI * s * s)
    };
    let mut total = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            total += raw(dy, dx);
        }
    }
    (radius, Box::new(move |dy, dx| raw(dy, dx) / total))
}

/// Mean-free LOG taps on the `ceil(4s)` (min 2) support.
pub fn log_weights(s: f64) -> (isize, Box<dyn Fn(isize, isize) -> f64>) {
    let radius = ((4.0 * s).ceil() as isize).max(2);
    let raw = move |dy: isize, dx: isize| {
        let q = ((dx * dx + dy * dy) as f64) / (2.0 * s * s);
        -1.0 / (std::f64::consts::PI * s.powi(4)) * (1.0 - q) * (-q).exp()
    };
    let side = (2 * radius + 1) as f64;
    let mut mean = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            mean += raw(dy, dx);
        }
    }
    mean /= side * side;
    (radius, Box::new(move |dy, dx| raw(dy, dx) - mean))
}

/// A dense ε-SVR dual solution found by accelerated projected gradient.
pub struct QpSolution {
    /// `α_i − α*_i`.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Maximized dual objective.
    pub objective: f64,
    /// Whether a free variable pinned the bias (otherwise it is not unique).
    pub bias_pinned: bool,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

/// Euclidean projection onto `{0 ≤ v ≤ c, Σ s_t v_t = 0}` by bisection on
/// the multiplier of the equality constraint.
fn project(v: &[f64], s: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> (Vec<f64>, f64) {
        let p: Vec<f64> = v.iter().zip(s).map(|(x, si)| (x - lam * si).clamp(0.0, c)).collect();
        let g = p.iter().zip(s).map(|(x, si)| x * si).sum();
        (p, g)
    };
    // g(lam) is non-increasing in lam.
    let (mut lo, mut hi) = (-1.0, 1.0);
    while at(lo).1 < 0.0 {
        lo *= 2.0;
    }
    while at(hi).1 > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi)).0
}

/// Maximizes `Σ y_i θ_i − ε Σ |θ_i| − ½ θᵀKθ` with `θ = α − α*`, written over
/// the stacked `[α; α*]` with box and equality constraints.
pub fn svr_dual_oracle(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64, eps: f64, iters: usize) -> QpSolution {
    let l = x.len();
    let n = 2 * l;
    let k: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| rbf(a, b, gamma)).collect()).collect();
    let s: Vec<f64> = (0..n).map(|t| if t < l { 1.0 } else { -1.0 }).collect();
    let theta = |v: &[f64]| -> Vec<f64> { (0..l).map(|i| v[i] - v[i + l]).collect() };
    let dual = |v: &[f64]| -> f64 {
        let th = theta(v);
        let mut quad = 0.0;
        for i in 0..l {
            for j in 0..l {
                quad += th[i] * k[i][j] * th[j];
            }
        }
        let lin: f64 = (0..l).map(|i| y[i] * th[i] - eps * (v[i] + v[i + l])).sum();
        lin - 0.5 * quad
    };
    let grad = |v: &[f64]| -> Vec<f64> {
        let th = theta(v);
        let kt: Vec<f64> = (0..l).map(|i| (0..l).map(|j| k[i][j] * th[j]).sum()).collect();
        (0..n)
            .map(|t| if t < l { y[t] - eps - kt[t] } else { -y[t - l] - eps + kt[t - l] })
            .collect()
    };
    // Lipschitz bound: ‖[K −K; −K K]‖ ≤ 2 max row sum of |K|.
    let lip = 2.0 * k.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lip;

    let mut v = vec![0.0; n];
    let mut z = v.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = grad(&z);
        let cand: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a + step * b).collect();
        let next = project(&cand, &s, c);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let mom = (t - 1.0) / t_next;
        z = next.iter().zip(&v).map(|(a, b)| a + mom * (a - b)).collect();
        // Restart momentum whenever the objective drops.
        if dual(&next) < dual(&v) {
            z = next.clone();
            t = 1.0;
        } else {
            t = t_next;
        }
        v = next;
    }

    let coef = theta(&v);
    let f: Vec<f64> = (0..l).map(|i| (0..l).map(|j| coef[j] * k[i][j]).sum()).collect();
    // Bias from the variable farthest from its bounds (a free one pins y − f − b = ±ε).
    let mut best = (0.0, None);
    for tt in 0..n {
        let slack = v[tt].min(c - v[tt]);
        if slack > best.0 {
            best = (slack, Some(tt));
        }
    }
    let bias_pinned = best.0 > 1e-6 * c;
    let bias = match best {
        (_, Some(tt)) if bias_pinned => {
            if tt < l {
                y[tt] - eps - f[tt]
            } else {
                y[tt - l] + eps - f[tt - l]
            }
        }
        _ => {
            // No free variable: midpoint of the feasible bias interval.
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for i in 0..l {
                let r = y[i] - f[i];
                // α_i < C ⇒ r − b ≤ ε;  α_i > 0 ⇒ r − b ≥ ε;  mirrored for α*.
                if v[i] < c {
                    lo = lo.max(r - eps);
                }
                if v[i] > 0.0 {
                    hi = hi.min(r - eps);
                }
                if v[i + l] < c {
                    hi = hi.min(r + eps);
                }
                if v[i + l] > 0.0 {
                    lo = lo.max(r + eps);
                }
            }
            0.5 * (lo + hi)
        }
    };
    QpSolution {
        objective: dual(&v),
        coef,
        bias,
        bias_pinned,
    }
}

pub fn qp_predict(x_train: &[Vec<f64>], sol: &QpSolution, gamma: f64, q: &[f64]) -> f64 {
    x_train.iter().zip(&sol.coef).map(|(xi, a)| a * rbf(xi, q, gamma)).sum::<f64>() + sol.bias
}

/// Ranks by counting: `#{x_j < x_i} + (#{x_j = x_i} + 1) / 2`.
pub fn counting_ranks(a: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|&v| {
            let below = a.iter().filter(|&&u| u < v).count() as f64;
            let equal = a.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// `cov(a, b) / (sd(a) sd(b))` from the textbook sums.
pub fn covariance_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov = (0..a.len()).map(|i| (a[i] - ma) * (b[i] - mb)).sum::<f64>() / n;
    let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
    cov / (va.sqrt() * vb.sqrt())
}

pub fn rank_pearson(a: &[f64], b: &[f64]) -> f64 {
    covariance_pearson(&counting_ranks(a), &counting_ranks(b))
}

/// Right tail of Student's t by quadrature: with `x = √ν tan θ` the density
/// becomes proportional to `cos^(ν−1) θ`.
pub fn t_upper_tail(t: f64, nu: f64) -> f64 {
    let f = |th: f64| th.cos().max(0.0).powf(nu - 1.0);
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2;
    let theta_t = (t / nu.sqrt()).atan();
    simpson(theta_t, half, 200_000) / simpson(-half, half, 400_000)
}

/// Welch statistic and Welch–Satterthwaite degrees of freedom.
pub fn welch(a: &[f64], b: &[f64]) -> (f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|u| (u - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let t = (ma - mb) / (va / na + vb / nb).sqrt();
    let nu = (va / na + vb / nb).powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    (t, nu)
}

pub fn vqeg_logistic(b: [f64; 5], x: f64) -> f64 {
    b[0] * (0.5 - 1.0 / (1.0 + (b[1] * (x - b[2])).exp())) + b[3] * x + b[4]
}

/// Exact 8×8 orthonormal DCT-II by direct basis summation.
pub fn dct8(block: &[f64; 64]) -> [f64; 64] {
    let mut out = [0.0; 64];
    let a = |k: usize| if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    acc += block[y * 8 + x]
                        * (std::f64::consts::PI * (2 * y + 1) as f64 * u as f64 / 16.0).cos()
                        * (std::f64::consts::PI * (2 * x + 1) as f64 * v as f64 / 16.0).cos();
                }
            }
            out[u * 8 + v] = a(u) * a(v) * acc;
        }
    }
    out
}

/// Reference-level split oracle: the same ChaCha8 stream, Fisher–Yates from
/// the back with multiply-high index reduction, first `n_train` references train.
pub fn reference_split_oracle(refs_sorted: &[String], n_train: usize, repeats: usize, seed: u64) -> Vec<(Vec<String>, Vec<String>)> {
    use rand::RngCore;
    let mut r = rng(seed);
    (0..repeats)
        .map(|_| {
            let mut v = refs_sorted.to_vec();
            let mut i = v.len();
            while i > 1 {
                i -= 1;
                let j = ((r.next_u64() as u128 * (i as u128 + 1)) >> 64) as usize;
                v.swap(i, j);
            }
            let test = v.split_off(n_train);
            (v, test)
        })
        .collect()
}
