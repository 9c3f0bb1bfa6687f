//! Contrastive objective and its analytic gradients.
//!
//! Per example with text `t`, positive clip `u⁺` and negatives `u₁…u_n`:
//!
//! ```text
//! ℓ = −sim(t, u⁺)/τ + log Σ_j exp(sim(t, u_j)/τ)
//! ```
//!
//! The positive pair is not part of the log-sum-exp unless
//! [`LossOptions::include_positive`] is set. Batch loss is the sum over
//! examples.

use nalgebra::DMatrix;

use super::params::{Diagnostics, ProbeParams};
use crate::error::{Error, Result};
use crate::linalg::dot;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossOptions {
    /// Add the positive pair to the log-sum-exp (InfoNCE form).
    pub include_positive: bool,
}

/// One training example with owned vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub text: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_text: DMatrix<f64>,
    pub w_audio: DMatrix<f64>,
    pub loss: f64,
    pub diagnostics: Diagnostics,
}

/// Example referring to columns of [`IndexedBatch`] matrices.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct IndexedExample {
    pub text: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Vectors stored once as columns (`d1 × b` texts, `d2 × m` clips) so that
/// clips shared between examples are projected once.
#[derive(Debug, Clone)]
pub(crate) struct IndexedBatch {
    pub texts: DMatrix<f64>,
    pub clips: DMatrix<f64>,
    pub examples: Vec<IndexedExample>,
}

impl IndexedBatch {
    fn from_examples(params: &ProbeParams, batch: &[Example]) -> Result<Self> {
        let d1 = params.text_dim();
        let d2 = params.audio_dim();
        let n_clips: usize = batch.iter().map(|e| 1 + e.negatives.len()).sum();
        let mut texts = DMatrix::zeros(d1, batch.len());
        let mut clips = DMatrix::zeros(d2, n_clips);
        let mut examples = Vec::with_capacity(batch.len());
        let mut next = 0;
        for (i, ex) in batch.iter().enumerate() {
            check_len(&ex.text, d1, "example text")?;
            texts.column_mut(i).copy_from_slice(&ex.text);
            let mut put = |v: &[f64]| -> Result<usize> {
                check_len(v, d2, "example clip")?;
                clips.column_mut(next).copy_from_slice(v);
                next += 1;
                Ok(next - 1)
            };
            let positive = put(&ex.positive)?;
            let negatives = ex.negatives.iter().map(|u| put(u)).collect::<Result<_>>()?;
            examples.push(IndexedExample {
                text: i,
                positive,
                negatives,
            });
        }
        Ok(Self {
            texts,
            clips,
            examples,
        })
    }
}

fn check_len(v: &[f64], expected: usize, context: &'static str) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual: v.len(),
        })
    }
}

/// Projected, activated and unit-normalised columns.
struct Projected {
    /// Pre-activation `W·x`.
    pre: DMatrix<f64>,
    /// Unit-norm `φ(W·x)`; zero columns where the norm vanished.
    unit: DMatrix<f64>,
    norms: Vec<f64>,
}

fn project(w: &DMatrix<f64>, x: &DMatrix<f64>, nonlinear: bool) -> Projected {
    let pre = w * x;
    let mut unit = pre.clone();
    if nonlinear {
        unit.apply(|v| *v = v.max(0.0));
    }
    let mut norms = Vec::with_capacity(unit.ncols());
    for mut col in unit.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
        norms.push(n);
    }
    Projected { pre, unit, norms }
}

/// Turns a gradient w.r.t. unit vectors into one w.r.t. pre-activations.
fn backprop_unit(p: &Projected, grad_unit: &mut DMatrix<f64>, nonlinear: bool) {
    for (c, mut g) in grad_unit.column_iter_mut().enumerate() {
        let n = p.norms[c];
        if n == 0.0 {
            g.fill(0.0);
            continue;
        }
        let unit = p.unit.column(c);
        let radial = g.dot(&unit);
        g.axpy(-radial, &unit, 1.0);
        g /= n;
        if nonlinear {
            for (gi, &a) in g.iter_mut().zip(p.pre.column(c).iter()) {
                if a <= 0.0 {
                    *gi = 0.0;
                }
            }
        }
    }
}

/// One `(text, clip)` similarity that received gradient.
struct PairTerm {
    text: usize,
    clip: usize,
    /// dℓ/dsim.
    coeff: f64,
    sim: f64,
}

/// Loss over all examples given a similarity oracle that returns `None` for
/// zero-norm pairs. Pair coefficients are collected into `terms` if given.
fn contrastive_terms(
    examples: &[IndexedExample],
    tau: f64,
    opts: LossOptions,
    mut sim: impl FnMut(usize, usize) -> Option<f64>,
    diagnostics: &mut Diagnostics,
    mut terms: Option<&mut Vec<PairTerm>>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut members = Vec::new();
    let mut sims: Vec<Option<f64>> = Vec::new();
    let mut logits = Vec::new();
    for ex in examples {
        if ex.negatives.is_empty() {
            return Err(Error::invalid("every example needs at least one negative"));
        }
        let mut lookup = |clip: usize| {
            let s = sim(ex.text, clip);
            if s.is_none() {
                diagnostics.zero_norm += 1;
            }
            s
        };
        let s_pos = lookup(ex.positive);
        members.clear();
        if opts.include_positive {
            members.push(ex.positive);
        }
        members.extend_from_slice(&ex.negatives);
        sims.clear();
        sims.extend(members.iter().map(|&c| lookup(c)));
        logits.clear();
        logits.extend(sims.iter().map(|s| s.unwrap_or(0.0) / tau));
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        total += -s_pos.unwrap_or(0.0) / tau + max + sum_exp.ln();

        if let Some(out) = terms.as_deref_mut() {
            if let Some(s) = s_pos {
                out.push(PairTerm {
                    text: ex.text,
                    clip: ex.positive,
                    coeff: -1.0 / tau,
                    sim: s,
                });
            }
            for ((&clip, s), l) in members.iter().zip(&sims).zip(&logits) {
                if let Some(s) = *s {
                    out.push(PairTerm {
                        text: ex.text,
                        clip,
                        coeff: (l - max).exp() / sum_exp / tau,
                        sim: s,
                    });
                }
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kernel {
    /// Projects every vector into the shared space.
    Projected,
    /// Linear probes only: works through `W2ᵀW2` in the audio space.
    Gram,
}

impl Kernel {
    /// The Gram form is cheaper when the audio dimension is below the
    /// projection dimension.
    pub(crate) fn for_params(params: &ProbeParams) -> Self {
        if !params.nonlinear && params.audio_dim() < params.proj_dim() {
            Kernel::Gram
        } else {
            Kernel::Projected
        }
    }
}

/// Loss and optionally gradients for an indexed batch.
pub(crate) fn evaluate(
    params: &ProbeParams,
    batch: &IndexedBatch,
    opts: LossOptions,
    want_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    evaluate_with(Kernel::for_params(params), params, batch, opts, want_grad)
}

pub(crate) fn evaluate_with(
    kernel: Kernel,
    params: &ProbeParams,
    batch: &IndexedBatch,
    opts: LossOptions,
    want_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    if batch.examples.is_empty() {
        return Err(Error::invalid("contrastive loss needs a non-empty batch"));
    }
    match kernel {
        Kernel::Projected => evaluate_projected(params, batch, opts, want_grad),
        Kernel::Gram => {
            if params.nonlinear {
                return Err(Error::invalid(
                    "the Gram kernel only applies to linear probes",
                ));
            }
            evaluate_gram(params, batch, opts, want_grad)
        }
    }
}

fn evaluate_projected(
    params: &ProbeParams,
    batch: &IndexedBatch,
    opts: LossOptions,
    want_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    let pt = project(&params.w_text, &batch.texts, params.nonlinear);
    let pu = project(&params.w_audio, &batch.clips, params.nonlinear);
    let mut diagnostics = Diagnostics::default();
    let mut terms = Vec::new();
    let sim = |t: usize, c: usize| {
        (pt.norms[t] > 0.0 && pu.norms[c] > 0.0).then(|| {
            dot(pt.unit.column(t).as_slice(), pu.unit.column(c).as_slice()).clamp(-1.0, 1.0)
        })
    };
    let total = contrastive_terms(
        &batch.examples,
        params.tau,
        opts,
        sim,
        &mut diagnostics,
        want_grad.then_some(&mut terms),
    )?;
    if !want_grad {
        return Ok((total, None));
    }
    let mut gt = DMatrix::zeros(pt.unit.nrows(), pt.unit.ncols());
    let mut gu = DMatrix::zeros(pu.unit.nrows(), pu.unit.ncols());
    for p in &terms {
        gt.column_mut(p.text)
            .axpy(p.coeff, &pu.unit.column(p.clip), 1.0);
        gu.column_mut(p.clip)
            .axpy(p.coeff, &pt.unit.column(p.text), 1.0);
    }
    backprop_unit(&pt, &mut gt, params.nonlinear);
    backprop_unit(&pu, &mut gu, params.nonlinear);
    Ok((
        total,
        Some(Gradients {
            w_text: gt * batch.texts.transpose(),
            w_audio: gu * batch.clips.transpose(),
            loss: total,
            diagnostics,
        }),
    ))
}

/// Linear probe without forming projected clips. With `x = W1 t`,
/// `x̂ = x/|x|` and `û = u/|W2 u|`, `sim = (W2ᵀx̂)·û` and `|W2 u|² = uᵀ(W2ᵀW2)u`.
fn evaluate_gram(
    params: &ProbeParams,
    batch: &IndexedBatch,
    opts: LossOptions,
    want_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    let w2 = &params.w_audio;
    let x = &params.w_text * &batch.texts;
    let text_norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    let mut x_unit = x;
    for (mut col, &n) in x_unit.column_iter_mut().zip(&text_norms) {
        if n > 0.0 {
            col /= n;
        }
    }
    let a = w2.tr_mul(&x_unit);
    let gram = w2.tr_mul(w2);
    let gu = &gram * &batch.clips;
    let mut u_unit = batch.clips.clone();
    let mut clip_ok = Vec::with_capacity(u_unit.ncols());
    for (c, mut col) in u_unit.column_iter_mut().enumerate() {
        let sq = dot(col.as_slice(), gu.column(c).as_slice());
        clip_ok.push(sq > 0.0);
        if sq > 0.0 {
            col /= sq.sqrt();
        }
    }

    let mut diagnostics = Diagnostics::default();
    let mut terms = Vec::new();
    let sim = |t: usize, c: usize| {
        (text_norms[t] > 0.0 && clip_ok[c])
            .then(|| dot(a.column(t).as_slice(), u_unit.column(c).as_slice()).clamp(-1.0, 1.0))
    };
    let total = contrastive_terms(
        &batch.examples,
        params.tau,
        opts,
        sim,
        &mut diagnostics,
        want_grad.then_some(&mut terms),
    )?;
    if !want_grad {
        return Ok((total, None));
    }

    // v_t = Σ_c w û_c, γ_t = Σ_c w·s, β_c = Σ_t w·s.
    let d2 = batch.clips.nrows();
    let mut v = DMatrix::zeros(d2, batch.texts.ncols());
    let mut gamma = vec![0.0; batch.texts.ncols()];
    let mut beta = vec![0.0; batch.clips.ncols()];
    for p in &terms {
        v.column_mut(p.text)
            .axpy(p.coeff, &u_unit.column(p.clip), 1.0);
        gamma[p.text] += p.coeff * p.sim;
        beta[p.clip] += p.coeff * p.sim;
    }
    // dW2 = X̂ Vᵀ − W2 Û diag(β) Ûᵀ
    let mut u_beta = u_unit.clone();
    for (mut col, &b) in u_beta.column_iter_mut().zip(&beta) {
        col *= b;
    }
    let w_audio = &x_unit * v.transpose() - w2 * (u_beta * u_unit.transpose());
    // dx_t = (W2 v_t − γ_t x̂_t)/|x_t|
    let mut dx = w2 * &v;
    for (t, mut col) in dx.column_iter_mut().enumerate() {
        let n = text_norms[t];
        if n > 0.0 {
            col.axpy(-gamma[t], &x_unit.column(t), 1.0);
            col /= n;
        } else {
            col.fill(0.0);
        }
    }
    Ok((
        total,
        Some(Gradients {
            w_text: dx * batch.texts.transpose(),
            w_audio,
            loss: total,
            diagnostics,
        }),
    ))
}

pub fn contrastive_loss(params: &ProbeParams, batch: &[Example], opts: LossOptions) -> Result<f64> {
    let indexed = IndexedBatch::from_examples(params, batch)?;
    evaluate(params, &indexed, opts, false).map(|(loss, _)| loss)
}

/// Exact gradients of [`contrastive_loss`] w.r.t. both projections. The ReLU
/// subgradient at 0 is taken as 0.
pub fn loss_gradients(
    params: &ProbeParams,
    batch: &[Example],
    opts: LossOptions,
) -> Result<Gradients> {
    let indexed = IndexedBatch::from_examples(params, batch)?;
    let (_, grads) = evaluate(params, &indexed, opts, true)?;
    Ok(grads.expect("gradients requested"))
}
