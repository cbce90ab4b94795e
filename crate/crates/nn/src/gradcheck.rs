//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many elements per parameter block (evenly strided).
    pub max_elements: Option<usize>,
    /// Multiply analytic gradients by this factor before comparing. Used as
    /// a negative control; 1.0 in normal operation.
    pub corrupt_factor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-4,
            max_elements: None,
            corrupt_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_abs_err: f64,
    /// (max |analytic − numeric| − rounding floor)⁺ / max(‖analytic‖∞,
    /// ‖numeric‖∞) over the checked elements of the block
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.rel_err))
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.rel_err < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockReport> {
        self.blocks.iter().filter(move |b| b.rel_err >= self.tolerance)
    }
}

/// Bound on the rounding error of a central difference of `f` with step `h`.
pub fn rounding_floor(f: f64, h: f64) -> f64 {
    10.0 * f64::EPSILON * f.abs().max(1.0) / h
}

fn block_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, f64) {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let max_abs = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let excess = (max_abs - floor).max(0.0);
    let rel = if excess == 0.0 { 0.0 } else { excess / scale };
    (max_abs, rel)
}

/// Compare the analytic gradient of the scalar built by `build` against
/// central differences for every parameter in `store`.
pub fn finite_diff_check<F>(store: &mut ParamStore, build: F, opts: &GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let floor = rounding_floor(g.value(loss).data()[0], opts.step);
    g.backward(loss, store)?;

    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    let mut report = GradReport {
        blocks: Vec::with_capacity(ids.len()),
        tolerance: opts.tolerance,
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let v = build(&mut g, store)?;
        Ok(g.value(v).data()[0])
    };
    for id in ids {
        let n = store.get(id).value.len();
        let stride = match opts.max_elements {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for i in (0..n).step_by(stride) {
            analytic.push(store.get(id).grad.data()[i] * opts.corrupt_factor);
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - opts.step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * opts.step));
        }
        let (max_abs_err, rel_err) = block_rel_err(&analytic, &numeric, floor);
        report.blocks.push(BlockReport {
            name: store.get(id).name.clone(),
            checked: analytic.len(),
            max_abs_err,
            rel_err,
        });
    }
    store.zero_grad();
    Ok(report)
}
