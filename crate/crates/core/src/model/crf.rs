use neuralecho_nn::{Graph, NnError, Op, Tensor, Var};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Spectrogram;

/// Geometry of a complex ratio filter: `(2K+1)×(2N+1)` taps over
/// frequency offsets `−K..=K` and time offsets `−N..=N`, or `−2N..=0` when
/// causal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrfShape {
    pub k: usize,
    pub n: usize,
    pub causal: bool,
}

impl Default for CrfShape {
    fn default() -> Self {
        Self { k: 1, n: 1, causal: false }
    }
}

impl CrfShape {
    pub fn taps(&self) -> usize {
        (2 * self.k + 1) * (2 * self.n + 1)
    }

    /// `(τ_k, τ_n)` of tap `j`; taps are ordered frequency-major.
    pub fn offsets(&self, j: usize) -> (isize, isize) {
        let width = 2 * self.n + 1;
        let tk = (j / width) as isize - self.k as isize;
        let idx = (j % width) as isize;
        let tn = if self.causal { idx - 2 * self.n as isize } else { idx - self.n as isize };
        (tk, tn)
    }

    /// Tap index of the `(0, 0)` offset.
    pub fn center(&self) -> usize {
        let width = 2 * self.n + 1;
        let col = if self.causal { 2 * self.n } else { self.n };
        self.k * width + col
    }
}

/// Filters the spectrogram with per-bin taps: `taps[(n·F + k)·J + j]` is tap
/// `j` at bin `k`, frame `n`.
pub fn apply_crf(spec: &Spectrogram, shape: CrfShape, taps: &[Complex64]) -> Result<Spectrogram> {
    let (t, f, j) = (spec.frames(), spec.bins(), shape.taps());
    if taps.len() != t * f * j {
        return Err(Error::Shape(format!("{} taps for {t}x{f} bins x {j}", taps.len())));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); t * f];
    for n in 0..t {
        for k in 0..f {
            let mut acc = Complex64::new(0.0, 0.0);
            for jj in 0..j {
                let (tk, tn) = shape.offsets(jj);
                let (kk, nn) = (k as isize + tk, n as isize + tn);
                if kk >= 0 && (kk as usize) < f && nn >= 0 && (nn as usize) < t {
                    acc += taps[(n * f + k) * j + jj] * spec.get(kk as usize, nn as usize);
                }
            }
            out[n * f + k] = acc;
        }
    }
    Spectrogram::new(spec.config().clone(), t, spec.signal_len(), out)
}

/// Graph op: `signal [G, T, F, 2]`, `taps [T, G·J·2, F]` → `[G, T, F, 2]`.
/// Tap channel `(g·J + j)·2 + r` holds the real (`r = 0`) or imaginary part
/// of tap `j` for group `g`.
struct CrfOp {
    shape: CrfShape,
    groups: usize,
    frames: usize,
    bins: usize,
}

impl CrfOp {
    /// Calls `f(g, n, k, j, tap_re_index, src_index_or_none)` for every
    /// tap, with indices into the flat tap and signal arrays.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (gs, t, fb, jn) = (self.groups, self.frames, self.bins, self.shape.taps());
        for g in 0..gs {
            for n in 0..t {
                for jj in 0..jn {
                    let (tk, tn) = self.shape.offsets(jj);
                    let nn = n as isize + tn;
                    if nn < 0 || nn as usize >= t {
                        continue;
                    }
                    let tap_base = (n * gs * jn + g * jn + jj) * 2 * fb;
                    for k in 0..fb {
                        let kk = k as isize + tk;
                        if kk < 0 || kk as usize >= fb {
                            continue;
                        }
                        let src = ((g * t + nn as usize) * fb + kk as usize) * 2;
                        let dst = ((g * t + n) * fb + k) * 2;
                        f(tap_base + k, src, dst);
                    }
                }
            }
        }
    }
}

impl Op for CrfOp {
    fn name(&self) -> &'static str {
        "crf"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (taps, sig) = (inputs[0].data(), inputs[1].data());
        let gr = grad.data();
        let fb = self.bins;
        let mut g_taps = needs[0].then(|| vec![0.0; taps.len()]);
        let mut g_sig = needs[1].then(|| vec![0.0; sig.len()]);
        self.for_each(|ti, src, dst| {
            let (ar, ai) = (taps[ti], taps[ti + fb]);
            let (sr, si) = (sig[src], sig[src + 1]);
            let (gre, gim) = (gr[dst], gr[dst + 1]);
            // out += (ar + i·ai)(sr + i·si)
            if let Some(gt) = g_taps.as_mut() {
                gt[ti] += gre * sr + gim * si;
                gt[ti + fb] += -gre * si + gim * sr;
            }
            if let Some(gs) = g_sig.as_mut() {
                gs[src] += gre * ar + gim * ai;
                gs[src + 1] += -gre * ai + gim * ar;
            }
        });
        vec![
            g_taps.map(|d| Tensor::new(inputs[0].shape(), d).unwrap()),
            g_sig.map(|d| Tensor::new(inputs[1].shape(), d).unwrap()),
        ]
    }
}

fn shape_error(op: &'static str, detail: String) -> Error {
    Error::Nn(NnError::Shape { op, detail })
}

/// Applies per-bin complex ratio filters held in `taps` to `signal`.
pub fn crf(g: &mut Graph, taps: Var, signal: Var, shape: CrfShape) -> Result<Var> {
    let ss = g.shape(signal).to_vec();
    let ts = g.shape(taps).to_vec();
    let [groups, frames, bins, 2] = ss[..] else {
        return Err(shape_error("crf", format!("signal {ss:?}, expected [G, T, F, 2]")));
    };
    if ts != [frames, groups * shape.taps() * 2, bins] {
        return Err(shape_error(
            "crf",
            format!("taps {ts:?} for signal {ss:?} with {} taps", shape.taps()),
        ));
    }
    let op = CrfOp { shape, groups, frames, bins };
    let (tv, sv) = (g.value(taps).data(), g.value(signal).data());
    let mut out = vec![0.0; sv.len()];
    op.for_each(|ti, src, dst| {
        let (ar, ai) = (tv[ti], tv[ti + bins]);
        let (sr, si) = (sv[src], sv[src + 1]);
        out[dst] += ar * sr - ai * si;
        out[dst + 1] += ar * si + ai * sr;
    });
    let out = Tensor::new(&ss, out)?;
    Ok(g.apply(op, &[taps, signal], out)?)
}
