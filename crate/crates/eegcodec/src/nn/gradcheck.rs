//! Central finite-difference verification of analytic gradients.
//!
//! Used by unit tests and by the acceptance suite. Comparisons are relative
//! with an absolute floor tied to f32 forward-pass noise: a parameter whose
//! true derivative is below the floor cannot be resolved by differencing
//! f32 losses and is not counted against the check.

use super::store::ParamStore;
use super::tape::{Tape, Tid};

/// Result of one finite-difference sweep.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub worst_rel: f64,
    pub failures: Vec<(String, usize, f64, f64)>, // (name, index, analytic, numeric)
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// Compare analytic parameter gradients against central differences.
///
/// `build` must construct the full forward graph from the store and return
/// the scalar loss node. `picks` limits how many entries are probed per
/// tensor (spread evenly); `rel_tol` is the acceptance threshold for
/// resolvable entries and `abs_floor` the resolvability cutoff.
pub fn check_params(
    store: &mut ParamStore,
    names: &[String],
    picks: usize,
    rel_tol: f64,
    abs_floor: f64,
    build: &mut dyn FnMut(&mut Tape, &ParamStore) -> Tid,
) -> GradCheck {
    // Analytic gradients once.
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    tape.backward(loss);
    let analytic: std::collections::BTreeMap<String, Vec<f32>> =
        tape.param_grads().into_iter().collect();

    let mut out = GradCheck::default();
    for name in names {
        let n = store.get(name).expect("param exists").value.len();
        let indices: Vec<usize> = if n <= picks {
            (0..n).collect()
        } else {
            (0..picks).map(|i| i * n / picks).collect()
        };
        let Some(grad) = analytic.get(name) else {
            continue;
        };
        for idx in indices {
            let w0 = store.get(name).unwrap().value[idx];
            let h = (1e-2 * w0.abs()).max(1e-3);
            store.get_mut(name).unwrap().value[idx] = w0 + h;
            let mut tp = Tape::new();
            let lp = build(&mut tp, store);
            let fp = tp.scalar(lp) as f64;
            store.get_mut(name).unwrap().value[idx] = w0 - h;
            let mut tm = Tape::new();
            let lm = build(&mut tm, store);
            let fm = tm.scalar(lm) as f64;
            store.get_mut(name).unwrap().value[idx] = w0;

            let numeric = (fp - fm) / (2.0 * h as f64);
            let a = grad[idx] as f64;
            if numeric.abs() < abs_floor && a.abs() < abs_floor {
                continue; // below finite-difference resolution
            }
            out.checked += 1;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            if rel > out.worst_rel {
                out.worst_rel = rel;
            }
            if rel > rel_tol {
                out.failures.push((name.clone(), idx, a, numeric));
            }
        }
    }
    out
}

/// Same sweep over an explicit input leaf instead of parameters.
pub fn check_input(
    input: &mut Vec<f32>,
    shape: &[usize],
    picks: usize,
    rel_tol: f64,
    abs_floor: f64,
    build: &mut dyn FnMut(&mut Tape, Tid) -> Tid,
) -> GradCheck {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), shape.to_vec());
    let loss = build(&mut tape, x);
    tape.backward(loss);
    let analytic = tape.grad(x).expect("input gradient").to_vec();

    let n = input.len();
    let indices: Vec<usize> = if n <= picks {
        (0..n).collect()
    } else {
        (0..picks).map(|i| i * n / picks).collect()
    };
    let mut out = GradCheck::default();
    for idx in indices {
        let w0 = input[idx];
        let h = (1e-2 * w0.abs()).max(1e-3);
        input[idx] = w0 + h;
        let mut tp = Tape::new();
        let xp = tp.leaf(input.clone(), shape.to_vec());
        let fp = {
            let l = build(&mut tp, xp);
            tp.scalar(l) as f64
        };
        input[idx] = w0 - h;
        let mut tm = Tape::new();
        let xm = tm.leaf(input.clone(), shape.to_vec());
        let fm = {
            let l = build(&mut tm, xm);
            tm.scalar(l) as f64
        };
        input[idx] = w0;

        let numeric = (fp - fm) / (2.0 * h as f64);
        let a = analytic[idx] as f64;
        if numeric.abs() < abs_floor && a.abs() < abs_floor {
            continue;
        }
        out.checked += 1;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
        if rel > out.worst_rel {
            out.worst_rel = rel;
        }
        if rel > rel_tol {
            out.failures.push(("input".into(), idx, a, numeric));
        }
    }
    out
}
