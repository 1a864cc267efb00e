//! Small derivative-free minimizers used by the likelihood fits: a
//! box-projected BFGS with central-difference gradients and Brent's
//! bounded one-dimensional search.

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted step.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence when the projected gradient's max-norm falls below
    /// `gtol * max(1, |f|)`.
    pub gtol: f64,
    /// Convergence when the relative decrease of `f` falls below `ftol`.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            gtol: 1e-7,
            ftol: 1e-13,
        }
    }
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn numeric_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64, lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            let up = (x[i] + h).min(upper[i]);
            let down = (x[i] - h).max(lower[i]);
            probe[i] = up;
            let f_up = if up > x[i] { f(&probe) } else { fx };
            probe[i] = down;
            let f_down = if down < x[i] { f(&probe) } else { fx };
            probe[i] = x[i];
            if up > down {
                (f_up - f_down) / (up - down)
            } else {
                0.0
            }
        })
        .collect()
}

/// Gradient with components that push against an active bound removed.
fn projected(g: &[f64], x: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    g.iter()
        .zip(x)
        .zip(lower.iter().zip(upper))
        .map(|((&gi, &xi), (&lo, &hi))| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f` over the box `[lower, upper]`.
pub fn bfgs_minimize<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: BfgsOptions,
) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_into(&mut x, lower, upper);
    let mut fx = f(&x);
    let mut trace = vec![fx];
    if !fx.is_finite() {
        return Minimum {
            x,
            value: fx,
            iterations: 0,
            converged: false,
            trace,
        };
    }
    let identity = |n: usize| -> Vec<f64> {
        let mut h = vec![0.0; n * n];
        (0..n).for_each(|i| h[i * n + i] = 1.0);
        h
    };
    let mut hinv = identity(n);
    let mut g = numeric_gradient(&f, &x, fx, lower, upper);
    let mut stalls = 0;

    for iter in 0..opts.max_iter {
        let pg = projected(&g, &x, lower, upper);
        if max_abs(&pg) <= opts.gtol * fx.abs().max(1.0) {
            return Minimum {
                x,
                value: fx,
                iterations: iter,
                converged: true,
                trace,
            };
        }
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| hinv[i * n + j] * pg[j]).sum::<f64>())
            .collect();
        if dir.iter().zip(&pg).map(|(d, g)| d * g).sum::<f64>() >= 0.0 {
            hinv = identity(n);
            dir = pg.iter().map(|g| -g).collect();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            clamp_into(&mut xn, lower, upper);
            let fxn = f(&xn);
            let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if fxn.is_finite() && fxn <= fx + 1e-4 * decrease {
                accepted = Some((xn, fxn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fxn)) = accepted else {
            if hinv != identity(n) {
                hinv = identity(n);
                continue;
            }
            // no descent possible along the gradient: stationary to working precision
            return Minimum {
                x,
                value: fx,
                iterations: iter,
                converged: true,
                trace,
            };
        };

        let gn = numeric_gradient(&f, &xn, fxn, lower, upper);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * max_abs(&s) * max_abs(&y) && sy > 0.0 {
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| hinv[i * n + j] * y[j]).sum())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let rel = (fx - fxn).abs() / fx.abs().max(1.0);
        x = xn;
        fx = fxn;
        g = gn;
        trace.push(fx);
        if rel <= opts.ftol {
            stalls += 1;
            if stalls >= 3 {
                return Minimum {
                    x,
                    value: fx,
                    iterations: iter + 1,
                    converged: true,
                    trace,
                };
            }
        } else {
            stalls = 0;
        }
    }
    Minimum {
        x,
        value: fx,
        iterations: opts.max_iter,
        converged: false,
        trace,
    }
}

/// Brent's method for a minimum of `f` on `[a, b]`. Returns `(x, f(x), converged)`.
pub fn brent_minimize<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> (f64, f64, bool) {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (a, b);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return (x, fx, true);
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfgs_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = bfgs_minimize(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], BfgsOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn bfgs_respects_bounds() {
        let f = |x: &[f64]| (x[0] + 3.0).powi(2) + (x[1] - 1.0).powi(2);
        let m = bfgs_minimize(f, &[0.5, 0.0], &[0.0, -2.0], &[2.0, 2.0], BfgsOptions::default());
        assert!(m.converged);
        assert_eq!(m.x[0], 0.0);
        assert!((m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn brent_parabola_and_boundary() {
        let (x, fx, ok) = brent_minimize(|t| (t - 2.5).powi(2) + 1.0, 1.0, 50.0, 1e-10, 200);
        assert!(ok && (x - 2.5).abs() < 1e-6 && (fx - 1.0).abs() < 1e-12);
        let (x, _, ok) = brent_minimize(|t| t, 1.0, 50.0, 1e-10, 200);
        assert!(ok && x < 1.0 + 1e-6);
    }
}
