//! Powell's direction-set minimization with bracketing + golden-section
//! line searches.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError {
    #[error("objective is not finite at the start point")]
    NonFiniteStart,
    #[error("objective returned a non-finite value at {point:?} (cycle {cycle})")]
    NonFinite { point: Vec<f64>, cycle: usize },
    #[error("start point is empty")]
    EmptyStart,
}

#[derive(Clone, Debug)]
pub struct PowellOptions {
    /// Relative per-cycle improvement below which the search stops.
    pub tol: f64,
    pub max_cycles: usize,
    /// First trial step of every line search, in parameter units.
    pub initial_step: f64,
    /// Absolute bracket width at which a golden-section search stops.
    pub line_tol: f64,
    pub max_bracket_steps: usize,
}

impl Default for PowellOptions {
    fn default() -> Self {
        PowellOptions { tol: 1e-4, max_cycles: 50, initial_step: 1.0, line_tol: 1e-4, max_bracket_steps: 40 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowellResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub cycles: usize,
    pub evaluations: usize,
}

const GOLDEN: f64 = 1.618_033_988_749_895;
const INV_GOLDEN: f64 = 0.618_033_988_749_895;

struct Objective<'a, F> {
    f: &'a mut F,
    evaluations: usize,
    cycle: usize,
}

impl<F: FnMut(&[f64]) -> f64> Objective<'_, F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64, OptimizeError> {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(OptimizeError::NonFinite { point: x.to_vec(), cycle: self.cycle })
        }
    }
}

fn along(x: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
    x.iter().zip(dir).map(|(a, d)| a + t * d).collect()
}

/// Minimizes `t ↦ f(x + t·dir)` from `t = 0` (value `f0`). Returns the best
/// step found and its value; never worse than `(0, f0)`.
fn line_search<F: FnMut(&[f64]) -> f64>(
    obj: &mut Objective<'_, F>,
    x: &[f64],
    dir: &[f64],
    f0: f64,
    opts: &PowellOptions,
) -> Result<(f64, f64), OptimizeError> {
    let dnorm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    if dnorm == 0.0 {
        return Ok((0.0, f0));
    }
    let h = opts.initial_step / dnorm;
    let tol = opts.line_tol / dnorm;
    let mut best = (0.0, f0);
    let note = |t: f64, v: f64, best: &mut (f64, f64)| {
        if v < best.1 {
            *best = (t, v);
        }
    };

    // Bracket a minimum: a < b < c with f(b) <= f(a), f(b) <= f(c).
    let fp = obj.eval(&along(x, dir, h))?;
    note(h, fp, &mut best);
    let (mut a, mut b, mut c, mut fa, mut fb, mut fc);
    if fp < f0 {
        a = 0.0;
        fa = f0;
        b = h;
        fb = fp;
        let mut step = h * GOLDEN;
        c = b + step;
        fc = obj.eval(&along(x, dir, c))?;
        note(c, fc, &mut best);
        let mut n = 0;
        while fc < fb && n < opts.max_bracket_steps {
            a = b;
            fa = fb;
            b = c;
            fb = fc;
            step *= GOLDEN;
            c = b + step;
            fc = obj.eval(&along(x, dir, c))?;
            note(c, fc, &mut best);
            n += 1;
        }
    } else {
        let fm = obj.eval(&along(x, dir, -h))?;
        note(-h, fm, &mut best);
        if fm < f0 {
            // Search backwards; keep a < b < c ordering.
            c = 0.0;
            fc = f0;
            b = -h;
            fb = fm;
            let mut step = h * GOLDEN;
            a = b - step;
            fa = obj.eval(&along(x, dir, a))?;
            note(a, fa, &mut best);
            let mut n = 0;
            while fa < fb && n < opts.max_bracket_steps {
                c = b;
                fc = fb;
                b = a;
                fb = fa;
                step *= GOLDEN;
                a = b - step;
                fa = obj.eval(&along(x, dir, a))?;
                note(a, fa, &mut best);
                n += 1;
            }
        } else {
            a = -h;
            fa = fm;
            b = 0.0;
            fb = f0;
            c = h;
            fc = fp;
        }
    }
    let _ = (fa, fc);

    // Golden-section refinement of [a, c] around b.
    while (c - a).abs() > tol {
        let (x_new, left) = if (b - a) > (c - b) { (b - (b - a) * (1.0 - INV_GOLDEN), true) } else { (b + (c - b) * (1.0 - INV_GOLDEN), false) };
        let fx = obj.eval(&along(x, dir, x_new))?;
        note(x_new, fx, &mut best);
        if fx < fb {
            if left {
                c = b;
            } else {
                a = b;
            }
            b = x_new;
            fb = fx;
        } else if left {
            a = x_new;
        } else {
            c = x_new;
        }
    }
    Ok(best)
}

/// Minimizes `f` from `x0` by Powell's direction-set method. The direction
/// of largest decrease is replaced by the cycle's net displacement when the
/// standard acceptance test allows it. Deterministic for fixed inputs.
pub fn powell_minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &PowellOptions,
) -> Result<PowellResult, OptimizeError> {
    let n = x0.len();
    if n == 0 {
        return Err(OptimizeError::EmptyStart);
    }
    let mut obj = Objective { f: &mut f, evaluations: 0, cycle: 0 };
    let mut x = x0.to_vec();
    let mut fx = obj.eval(&x).map_err(|_| OptimizeError::NonFiniteStart)?;
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            d
        })
        .collect();

    let mut cycles = 0;
    while cycles < opts.max_cycles {
        cycles += 1;
        obj.cycle = cycles;
        let x_start = x.clone();
        let f_start = fx;
        let mut biggest = (0usize, 0.0f64);
        for (i, d) in dirs.iter().enumerate() {
            let before = fx;
            let (t, ft) = line_search(&mut obj, &x, d, fx, opts)?;
            if ft < fx {
                x = along(&x, d, t);
                fx = ft;
            }
            if before - fx > biggest.1 {
                biggest = (i, before - fx);
            }
        }
        let improvement = f_start - fx;
        if improvement < opts.tol * (fx.abs() + opts.tol) {
            break;
        }
        let net: Vec<f64> = x.iter().zip(&x_start).map(|(a, b)| a - b).collect();
        let extrapolated: Vec<f64> = x.iter().zip(&x_start).map(|(a, b)| 2.0 * a - b).collect();
        let fe = obj.eval(&extrapolated)?;
        if fe < f_start {
            let del = biggest.1;
            let t = 2.0 * (f_start - 2.0 * fx + fe) * (f_start - fx - del).powi(2) - del * (f_start - fe).powi(2);
            if t < 0.0 {
                let (s, fs) = line_search(&mut obj, &x, &net, fx, opts)?;
                if fs < fx {
                    x = along(&x, &net, s);
                    fx = fs;
                }
                dirs[biggest.0] = dirs[n - 1].clone();
                dirs[n - 1] = net;
            }
        }
    }
    Ok(PowellResult { x, f: fx, cycles, evaluations: obj.evaluations })
}
