//! Ascent on the composite objective for a block of steps.

use std::collections::VecDeque;

use super::{composite_gradient, ModelState, ObjectiveTerms, OptimizerKind, StepRecord};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
const LBFGS_MEMORY: usize = 10;
// largest single coordinate move of a quasi-Newton trial step
const MAX_MOVE: f64 = 0.5;

pub(crate) struct Optimizer {
    kind: OptimizerKind,
    base_lr: f64,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn evaluate(state: &mut ModelState, x: &[f64]) -> Option<(ObjectiveTerms, Vec<f64>)> {
    state.set_parameters(x).ok()?;
    match composite_gradient(state) {
        Ok((f, g)) if f.total.is_finite() && g.iter().all(|v| v.is_finite()) => Some((f, g)),
        _ => None,
    }
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, step_size: f64) -> Self {
        Optimizer {
            kind,
            base_lr: step_size,
            lr: step_size,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// Runs `steps` steps from the current state; the state is left at the
    /// last accepted point.
    pub fn run_block(
        &mut self,
        state: &mut ModelState,
        steps: usize,
        iteration: usize,
        log: &mut Vec<StepRecord>,
    ) -> Result<ObjectiveTerms> {
        let x0 = state.parameters();
        let (f0, g0) = composite_gradient(state)?;
        if !f0.total.is_finite() {
            return Err(Error::NonFiniteObjective { iteration });
        }
        log.push(StepRecord {
            iteration,
            step: 0,
            total: f0.total,
        });
        let res = match self.kind {
            OptimizerKind::AdaptiveFirstOrder => self.adam(state, x0, f0, g0, steps, iteration, log),
            OptimizerKind::QuasiNewton => self.lbfgs(state, x0, f0, g0, steps, iteration, log),
        };
        Ok(res)
    }

    #[allow(clippy::too_many_arguments)]
    fn adam(
        &mut self,
        state: &mut ModelState,
        mut x: Vec<f64>,
        mut f: ObjectiveTerms,
        mut g: Vec<f64>,
        steps: usize,
        iteration: usize,
        log: &mut Vec<StepRecord>,
    ) -> ObjectiveTerms {
        if self.m.len() != x.len() {
            self.m = vec![0.0; x.len()];
            self.v = vec![0.0; x.len()];
            self.t = 0;
        }
        let mut accepted = 0;
        for _ in 0..steps {
            let t = self.t + 1;
            let m: Vec<f64> = self.m.iter().zip(&g).map(|(m, g)| BETA1 * m + (1.0 - BETA1) * g).collect();
            let v: Vec<f64> = self.v.iter().zip(&g).map(|(v, g)| BETA2 * v + (1.0 - BETA2) * g * g).collect();
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            let trial: Vec<f64> = x
                .iter()
                .zip(m.iter().zip(&v))
                .map(|(xi, (mi, vi))| xi + self.lr * (mi / c1) / ((vi / c2).sqrt() + EPS))
                .collect();
            match evaluate(state, &trial) {
                Some((ft, gt)) if ft.total >= f.total => {
                    x = trial;
                    f = ft;
                    g = gt;
                    self.m = m;
                    self.v = v;
                    self.t = t;
                    self.lr = (self.lr * 1.2).min(self.base_lr);
                    accepted += 1;
                    log.push(StepRecord {
                        iteration,
                        step: accepted,
                        total: f.total,
                    });
                }
                _ => {
                    // stale momentum can point downhill forever; restart it so
                    // the next trial moves along sign(g)
                    self.m.fill(0.0);
                    self.v.fill(0.0);
                    self.t = 0;
                    self.lr *= 0.5;
                    if self.lr < 1e-10 * self.base_lr {
                        break;
                    }
                }
            }
        }
        state.set_parameters(&x).expect("accepted parameters are valid");
        f
    }

    /// Memory is rebuilt each block: the imputation, hence the objective,
    /// changes between blocks.
    #[allow(clippy::too_many_arguments)]
    fn lbfgs(
        &mut self,
        state: &mut ModelState,
        mut x: Vec<f64>,
        mut f: ObjectiveTerms,
        mut g: Vec<f64>,
        steps: usize,
        iteration: usize,
        log: &mut Vec<StepRecord>,
    ) -> ObjectiveTerms {
        // pairs (s, y) for the minimization of −f
        let mut mem: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut accepted = 0;
        for _ in 0..steps {
            // two-loop recursion: d = H g with H the inverse-Hessian estimate of −f
            let mut q = g.clone();
            let mut alphas = Vec::with_capacity(mem.len());
            for (s, y) in mem.iter().rev() {
                let rho = 1.0 / dot(y, s);
                let a = rho * dot(s, &q);
                for (qi, yi) in q.iter_mut().zip(y) {
                    *qi -= a * yi;
                }
                alphas.push((a, rho));
            }
            let gamma = mem.back().map_or(self.base_lr, |(s, y)| dot(s, y) / dot(y, y));
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
            for ((s, y), (a, rho)) in mem.iter().zip(alphas.into_iter().rev()) {
                let b = rho * dot(y, &q);
                for (qi, si) in q.iter_mut().zip(s) {
                    *qi += (a - b) * si;
                }
            }
            let mut d = q;
            let mut slope = dot(&g, &d);
            if !(slope > 0.0) {
                mem.clear();
                d = g.iter().map(|v| v * self.base_lr).collect();
                slope = dot(&g, &d);
            }
            let big = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut step = if big > MAX_MOVE { MAX_MOVE / big } else { 1.0 };
            let mut moved = None;
            for _ in 0..30 {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
                if let Some((ft, gt)) = evaluate(state, &trial) {
                    if ft.total >= f.total + 1e-4 * step * slope {
                        moved = Some((trial, ft, gt));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((xn, fnew, gn)) = moved else {
                break;
            };
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(&gn).map(|(a, b)| a - b).collect();
            if dot(&s, &y) > 1e-12 {
                mem.push_back((s, y));
                if mem.len() > LBFGS_MEMORY {
                    mem.pop_front();
                }
            }
            x = xn;
            f = fnew;
            g = gn;
            accepted += 1;
            log.push(StepRecord {
                iteration,
                step: accepted,
                total: f.total,
            });
        }
        state.set_parameters(&x).expect("accepted parameters are valid");
        f
    }
}
