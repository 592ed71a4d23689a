//! Prompt transforms on plain matrices and their tape counterparts.

use super::PromptError;
use crate::numcore::{softmax_in_place, Tape, Tensor2, Var};

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), PromptError> {
    if cond {
        Ok(())
    } else {
        Err(PromptError::Shape(what()))
    }
}

/// Adds the shared prompt `p` to every feature row.
pub fn apply_gpf(x: &Tensor2, p: &[f64]) -> Result<Tensor2, PromptError> {
    check(p.len() == x.cols(), || format!("prompt of length {} for {} columns", p.len(), x.cols()))?;
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (o, &v) in out.row_mut(r).iter_mut().zip(p) {
            *o += v;
        }
    }
    Ok(out)
}

/// Per-node prompts `p_i = Σ_k softmax_k(x_i · a_k) P_k`.
pub fn gpf_plus_prompts(x: &Tensor2, tokens: &Tensor2, proj: &Tensor2) -> Result<Tensor2, PromptError> {
    check(tokens.rows() >= 1, || "at least one basis token required".into())?;
    check(tokens.shape() == proj.shape() && tokens.cols() == x.cols(), || {
        format!("tokens {:?}, projections {:?}, features {:?}", tokens.shape(), proj.shape(), x.shape())
    })?;
    let mut attn = x.matmul(&proj.transpose())?;
    for r in 0..attn.rows() {
        softmax_in_place(attn.row_mut(r));
    }
    Ok(attn.matmul(tokens)?)
}

/// Returns the prompted features `x_i + p_i` and the prompt rows `p_i`.
pub fn apply_gpf_plus(x: &Tensor2, tokens: &Tensor2, proj: &Tensor2) -> Result<(Tensor2, Tensor2), PromptError> {
    let prompts = gpf_plus_prompts(x, tokens, proj)?;
    let out = x.zip_map(&prompts, |a, b| a + b)?;
    Ok((out, prompts))
}

/// Row-wise Hadamard product with `q`.
pub fn apply_gprompt(e: &Tensor2, q: &[f64]) -> Result<Tensor2, PromptError> {
    check(q.len() == e.cols(), || format!("prompt of length {} for {} columns", q.len(), e.cols()))?;
    let mut out = e.clone();
    for r in 0..out.rows() {
        for (o, &w) in out.row_mut(r).iter_mut().zip(q) {
            *o *= w;
        }
    }
    Ok(out)
}

/// Row-softmax of `(h_v + s) · T_c`.
pub fn gppt_predict(e: &Tensor2, tokens: &Tensor2, structure: &[f64]) -> Result<Tensor2, PromptError> {
    check(tokens.cols() == e.cols() && structure.len() == e.cols(), || {
        format!("embeddings {:?}, tokens {:?}, structure {}", e.shape(), tokens.shape(), structure.len())
    })?;
    let shifted = apply_gpf(e, structure)?;
    let mut logits = shifted.matmul(&tokens.transpose())?;
    for r in 0..logits.rows() {
        softmax_in_place(logits.row_mut(r));
    }
    Ok(logits)
}

/// Mean negative log-likelihood of `labels` under row-softmax of `logits`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var, PromptError> {
    let (n, c) = tape.shape(logits);
    check(n == labels.len() && n > 0, || format!("{n} logit rows for {} labels", labels.len()))?;
    let mut onehot = Tensor2::zeros(n, c);
    for (i, &y) in labels.iter().enumerate() {
        check(y < c, || format!("label {y} with {c} classes"))?;
        onehot.set(i, y, 1.0);
    }
    let logp = tape.log_softmax(logits)?;
    let onehot = tape.constant(onehot);
    let picked = tape.mul(logp, onehot)?;
    let total = tape.sum(picked)?;
    Ok(tape.scale(total, -1.0 / n as f64)?)
}

/// `a ⊙ row` broadcast over rows.
pub(crate) fn mul_row(tape: &mut Tape, a: Var, row: Var) -> Result<Var, PromptError> {
    let ones = tape.constant(Tensor2::ones(tape.shape(a).0, 1));
    let tiled = tape.matmul(ones, row)?;
    Ok(tape.mul(a, tiled)?)
}

/// Tape version of [`gpf_plus_prompts`].
pub(crate) fn gpf_plus_prompts_var(tape: &mut Tape, x: Var, tokens: Var, proj: Var) -> Result<Var, PromptError> {
    let pt = tape.transpose(proj)?;
    let scores = tape.matmul(x, pt)?;
    let attn = tape.softmax(scores)?;
    Ok(tape.matmul(attn, tokens)?)
}
