//! Graph ops specific to the echo-cancellation model. Complex tensors are
//! stored with a trailing `[re, im]` axis.

use neuralecho_nn::{Graph, NnError, Op, Tensor, Var};

use crate::error::{Error, Result};
use crate::signal::{istft_adjoint, overlap_add, LpsNorm, StftConfig};

fn shape_error(op: &'static str, detail: String) -> Error {
    Error::Nn(NnError::Shape { op, detail })
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("shape computed from data")
}

/// Number of reals in a packed `m×m` covariance including its diagonal.
pub fn cov_pack_width(channels: usize) -> usize {
    channels * (channels + 1)
}

/// Lower-triangle pairs `(i, j)`, row-major, diagonal included.
fn lower_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|i| (0..=i).map(move |j| (i, j))).collect()
}

struct CovPackOp {
    channels: usize,
    frames: usize,
    bins: usize,
}

impl CovPackOp {
    fn centered(&self, x: &[f64], n: usize, k: usize) -> Vec<(f64, f64)> {
        let (m, t, f) = (self.channels, self.frames, self.bins);
        let vals: Vec<(f64, f64)> = (0..m)
            .map(|c| {
                let i = ((c * t + n) * f + k) * 2;
                (x[i], x[i + 1])
            })
            .collect();
        let mr = vals.iter().map(|v| v.0).sum::<f64>() / m as f64;
        let mi = vals.iter().map(|v| v.1).sum::<f64>() / m as f64;
        vals.iter().map(|(a, b)| (a - mr, b - mi)).collect()
    }
}

impl Op for CovPackOp {
    fn name(&self) -> &'static str {
        "cov_pack"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0].data();
        let (m, t, f) = (self.channels, self.frames, self.bins);
        let pairs = lower_pairs(m);
        let w = cov_pack_width(m);
        let half = w / 2;
        let mut gx = vec![0.0; x.len()];
        for n in 0..t {
            for k in 0..f {
                let d = self.centered(x, n, k);
                let base = (n * f + k) * w;
                let gp = &grad.data()[base..base + w];
                let mut gd = vec![(0.0, 0.0); m];
                // entry d_i·conj(d_j) = (a_i a_j + b_i b_j) + i(b_i a_j − a_i b_j)
                for (p, &(i, j)) in pairs.iter().enumerate() {
                    let (gre, gim) = (gp[p], gp[half + p]);
                    let (ai, bi) = d[i];
                    let (aj, bj) = d[j];
                    gd[i].0 += gre * aj - gim * bj;
                    gd[i].1 += gre * bj + gim * aj;
                    gd[j].0 += gre * ai + gim * bi;
                    gd[j].1 += gre * bi - gim * ai;
                }
                let mr = gd.iter().map(|v| v.0).sum::<f64>() / m as f64;
                let mi = gd.iter().map(|v| v.1).sum::<f64>() / m as f64;
                for (c, (a, b)) in gd.iter().enumerate() {
                    let i = ((c * t + n) * f + k) * 2;
                    gx[i] = a - mr;
                    gx[i + 1] = b - mi;
                }
            }
        }
        vec![Some(tensor(inputs[0].shape(), gx))]
    }
}

/// Mean-removed spatial covariance `(z − μ)(z − μ)^H` of an `[M, T, F, 2]`
/// stack at every bin, packed (lower triangle with diagonal, real parts then
/// imaginary parts) into `[T, F·M(M+1)]`.
pub fn cov_pack(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let [channels, frames, bins, 2] = s[..] else {
        return Err(shape_error("cov_pack", format!("input {s:?}, expected [M, T, F, 2]")));
    };
    let op = CovPackOp { channels, frames, bins };
    let w = cov_pack_width(channels);
    let half = w / 2;
    let pairs = lower_pairs(channels);
    let xv = g.value(x).data();
    let mut out = vec![0.0; frames * bins * w];
    for n in 0..frames {
        for k in 0..bins {
            let d = op.centered(xv, n, k);
            let base = (n * bins + k) * w;
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let (ai, bi) = d[i];
                let (aj, bj) = d[j];
                out[base + p] = ai * aj + bi * bj;
                out[base + half + p] = bi * aj - ai * bj;
            }
        }
    }
    let out = tensor(&[frames, bins * w], out);
    Ok(g.apply(op, &[x], out)?)
}

struct FilterApplyOp {
    channels: usize,
    frames: usize,
    bins: usize,
}

impl Op for FilterApplyOp {
    fn name(&self) -> &'static str {
        "filter_apply"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (w, z) = (inputs[0].data(), inputs[1].data());
        let (m, t, f) = (self.channels, self.frames, self.bins);
        let gr = grad.data();
        let mut gw = needs[0].then(|| vec![0.0; w.len()]);
        let mut gz = needs[1].then(|| vec![0.0; z.len()]);
        for n in 0..t {
            for c in 0..m {
                for k in 0..f {
                    let wi = n * 2 * m * f + c * 2 * f + k;
                    let (wr, wim) = (w[wi], w[wi + f]);
                    let zi = ((c * t + n) * f + k) * 2;
                    let (zr, zim) = (z[zi], z[zi + 1]);
                    let o = (n * f + k) * 2;
                    let (gre, gim) = (gr[o], gr[o + 1]);
                    if let Some(gw) = gw.as_mut() {
                        gw[wi] += gre * zr + gim * zim;
                        gw[wi + f] += -gre * zim + gim * zr;
                    }
                    if let Some(gz) = gz.as_mut() {
                        gz[zi] += gre * wr + gim * wim;
                        gz[zi + 1] += -gre * wim + gim * wr;
                    }
                }
            }
        }
        vec![
            gw.map(|d| tensor(inputs[0].shape(), d)),
            gz.map(|d| tensor(inputs[1].shape(), d)),
        ]
    }
}

/// Single-tap filtering `Σ_c W_c(k,n)·Z_c(k,n)`. `w` is `[T, 2·M·F]` with the
/// real part of channel `c` at bin `k` in column `2c·F + k` and the imaginary
/// part at `(2c+1)·F + k`; `z` is `[M, T, F, 2]`. Output `[T, F, 2]`.
pub fn filter_apply(g: &mut Graph, w: Var, z: Var) -> Result<Var> {
    let zs = g.shape(z).to_vec();
    let ws = g.shape(w).to_vec();
    let [channels, frames, bins, 2] = zs[..] else {
        return Err(shape_error("filter_apply", format!("stack {zs:?}, expected [M, T, F, 2]")));
    };
    if ws != [frames, 2 * channels * bins] {
        return Err(shape_error("filter_apply", format!("filters {ws:?} for stack {zs:?}")));
    }
    let (wv, zv) = (g.value(w).data(), g.value(z).data());
    let mut out = vec![0.0; frames * bins * 2];
    for n in 0..frames {
        for c in 0..channels {
            for k in 0..bins {
                let wi = n * 2 * channels * bins + c * 2 * bins + k;
                let (wr, wim) = (wv[wi], wv[wi + bins]);
                let zi = ((c * frames + n) * bins + k) * 2;
                let (zr, zim) = (zv[zi], zv[zi + 1]);
                let o = (n * bins + k) * 2;
                out[o] += wr * zr - wim * zim;
                out[o + 1] += wr * zim + wim * zr;
            }
        }
    }
    let op = FilterApplyOp { channels, frames, bins };
    let out = tensor(&[frames, bins, 2], out);
    Ok(g.apply(op, &[w, z], out)?)
}

struct IstftOp {
    config: StftConfig,
    frames: usize,
}

impl Op for IstftOp {
    fn name(&self) -> &'static str {
        "istft"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let g = istft_adjoint(&self.config, self.frames, grad.data());
        vec![Some(tensor(inputs[0].shape(), g))]
    }
}

/// Time-domain synthesis of a `[T, F, 2]` spectrum to `len` samples.
pub fn istft_op(g: &mut Graph, spec: Var, config: &StftConfig, len: usize) -> Result<Var> {
    let s = g.shape(spec).to_vec();
    let [frames, bins, 2] = s[..] else {
        return Err(shape_error("istft", format!("input {s:?}, expected [T, F, 2]")));
    };
    if bins != config.bins() || frames != config.frames_for(len) {
        return Err(shape_error("istft", format!("{s:?} does not match {len} samples")));
    }
    let n_fft = config.fft_size;
    let planner_frames = spectrum_frames(g.value(spec).data(), frames, bins, n_fft);
    let out = tensor(&[len], overlap_add(config, &planner_frames, len));
    let op = IstftOp { config: config.clone(), frames };
    Ok(g.apply(op, &[spec], out)?)
}

/// Inverse real FFT of every frame of an interleaved `[T, F, 2]` buffer.
fn spectrum_frames(data: &[f64], frames: usize, bins: usize, n_fft: usize) -> Vec<Vec<f64>> {
    use num_complex::Complex64;
    let ifft = rustfft::FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let scale = 1.0 / n_fft as f64;
    (0..frames)
        .map(|n| {
            let row = &data[n * bins * 2..(n + 1) * bins * 2];
            for k in 0..bins {
                buf[k] = Complex64::new(row[2 * k], row[2 * k + 1]);
            }
            for k in bins..n_fft {
                buf[k] = buf[n_fft - k].conj();
            }
            ifft.process(&mut buf);
            buf.iter().map(|c| c.re * scale).collect()
        })
        .collect()
}

struct NormalizedLpsOp {
    norm: LpsNorm,
    floor: f64,
    raw: Tensor,
}

impl Op for NormalizedLpsOp {
    fn name(&self) -> &'static str {
        "normalized_lps"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let gl = self.norm.backward(&self.raw, grad);
        let x = inputs[0].data();
        let mut gx = vec![0.0; x.len()];
        for (i, g) in gl.data().iter().enumerate() {
            let (re, im) = (x[2 * i], x[2 * i + 1]);
            let s = 2.0 * g / (re * re + im * im + self.floor);
            gx[2 * i] = s * re;
            gx[2 * i + 1] = s * im;
        }
        vec![Some(tensor(inputs[0].shape(), gx))]
    }
}

/// `norm(ln(|S|² + floor))` of a `[T, F, 2]` spectrum, giving `[T, F]`.
pub fn normalized_lps(g: &mut Graph, spec: Var, norm: LpsNorm, floor: f64) -> Result<Var> {
    let s = g.shape(spec).to_vec();
    let [frames, bins, 2] = s[..] else {
        return Err(shape_error("normalized_lps", format!("input {s:?}, expected [T, F, 2]")));
    };
    let raw: Vec<f64> = g
        .value(spec)
        .data()
        .chunks_exact(2)
        .map(|c| (c[0] * c[0] + c[1] * c[1] + floor).ln())
        .collect();
    let raw = tensor(&[frames, bins], raw);
    let out = norm.apply(&raw);
    Ok(g.apply(NormalizedLpsOp { norm, floor, raw }, &[spec], out)?)
}

struct MagnitudeOp;

impl Op for MagnitudeOp {
    fn name(&self) -> &'static str {
        "magnitude"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0].data();
        let mut gx = vec![0.0; x.len()];
        for (i, (m, g)) in out.data().iter().zip(grad.data()).enumerate() {
            if *m > 0.0 {
                gx[2 * i] = g * x[2 * i] / m;
                gx[2 * i + 1] = g * x[2 * i + 1] / m;
            }
        }
        vec![Some(tensor(inputs[0].shape(), gx))]
    }
}

/// `|S|` of a complex tensor with trailing `[re, im]` axis; the gradient at
/// zero magnitude is taken as zero.
pub fn magnitude(g: &mut Graph, spec: Var) -> Result<Var> {
    let s = g.shape(spec).to_vec();
    if s.last() != Some(&2) {
        return Err(shape_error("magnitude", format!("input {s:?} has no trailing [re, im] axis")));
    }
    let data = g.value(spec).data().chunks_exact(2).map(|c| c[0].hypot(c[1])).collect();
    let out = tensor(&s[..s.len() - 1], data);
    Ok(g.apply(MagnitudeOp, &[spec], out)?)
}

/// Reporting and loss clamp for SI-SDR in dB.
pub const SI_SDR_CLAMP_DB: f64 = 60.0;

/// Scale-invariant SDR of `est` against `reference`, unclamped; `None` if
/// the reference is silent.
pub fn si_sdr_raw(est: &[f64], reference: &[f64]) -> Option<f64> {
    let ss: f64 = reference.iter().map(|v| v * v).sum();
    if ss <= 0.0 {
        return None;
    }
    let alpha = est.iter().zip(reference).map(|(e, s)| e * s).sum::<f64>() / ss;
    let (mut num, mut den) = (0.0, 0.0);
    for (e, s) in est.iter().zip(reference) {
        let t = alpha * s;
        num += t * t;
        den += (t - e) * (t - e);
    }
    Some(10.0 * (num / den).log10())
}

pub fn clamp_si_sdr(v: f64) -> f64 {
    if v.is_nan() {
        -SI_SDR_CLAMP_DB
    } else {
        v.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB)
    }
}

struct SiSdrOp {
    reference: Vec<f64>,
    active: bool,
}

impl Op for SiSdrOp {
    fn name(&self) -> &'static str {
        "si_sdr"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let est = inputs[0].data();
        let mut ge = vec![0.0; est.len()];
        if self.active {
            let s = &self.reference;
            let ss: f64 = s.iter().map(|v| v * v).sum();
            let alpha = est.iter().zip(s).map(|(e, r)| e * r).sum::<f64>() / ss;
            let t: Vec<f64> = s.iter().map(|v| alpha * v).collect();
            let r: Vec<f64> = t.iter().zip(est).map(|(a, e)| a - e).collect();
            let tt: f64 = t.iter().map(|v| v * v).sum();
            let rr: f64 = r.iter().map(|v| v * v).sum();
            let c = grad.data()[0] * 10.0 / std::f64::consts::LN_10;
            for i in 0..est.len() {
                ge[i] = c * (2.0 * t[i] / tt + 2.0 * r[i] / rr);
            }
        }
        vec![Some(tensor(inputs[0].shape(), ge))]
    }
}

/// Differentiable SI-SDR (dB) of a signal var against a fixed reference,
/// clamped to ±60 dB with zero gradient outside the clamp.
pub fn si_sdr_op(g: &mut Graph, est: Var, reference: &[f64]) -> Result<Var> {
    let e = g.value(est);
    if e.len() != reference.len() {
        return Err(Error::Shape(format!("estimate has {} samples, reference {}", e.len(), reference.len())));
    }
    let raw = si_sdr_raw(e.data(), reference).ok_or(Error::Silent("reference"))?;
    let value = clamp_si_sdr(raw);
    let active = raw.is_finite() && raw.abs() < SI_SDR_CLAMP_DB;
    let op = SiSdrOp { reference: reference.to_vec(), active };
    Ok(g.apply(op, &[est], Tensor::scalar(value))?)
}

struct L1Op {
    target: Vec<f64>,
}

impl Op for L1Op {
    fn name(&self) -> &'static str {
        "l1"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0].data();
        let c = grad.data()[0] / x.len() as f64;
        let gx = x
            .iter()
            .zip(&self.target)
            .map(|(a, b)| {
                let d = a - b;
                if d > 0.0 {
                    c
                } else if d < 0.0 {
                    -c
                } else {
                    0.0
                }
            })
            .collect();
        vec![Some(tensor(inputs[0].shape(), gx))]
    }
}

/// Mean absolute difference between a var and a fixed target of equal size.
pub fn l1_op(g: &mut Graph, x: Var, target: &[f64]) -> Result<Var> {
    let xv = g.value(x);
    if xv.len() != target.len() {
        return Err(Error::Shape(format!("l1 input {:?} vs target of {}", xv.shape(), target.len())));
    }
    let n = target.len().max(1) as f64;
    let v = xv.data().iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    Ok(g.apply(L1Op { target: target.to_vec() }, &[x], Tensor::scalar(v))?)
}
