//! Self-supervised objectives, recorded on a tape so they can be trained.

use std::sync::Arc;

use super::PretrainError;
use crate::encoder::{encode, EncoderVars, Propagation};
use crate::numcore::{Tape, Tensor2, Var};

/// Stacks `a` over `b` (same column count).
pub(crate) fn concat_rows(tape: &mut Tape, a: Var, b: Var) -> Result<Var, PretrainError> {
    let at = tape.transpose(a)?;
    let bt = tape.transpose(b)?;
    let joined = tape.concat_cols(&[at, bt])?;
    Ok(tape.transpose(joined)?)
}

fn check_same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<(), PretrainError> {
    if tape.shape(a) != tape.shape(b) {
        return Err(PretrainError::Shape(format!(
            "{what}: {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

/// Per-node bilinear discriminator with binary cross-entropy: true nodes
/// scored against the summary are positives, corrupted nodes negatives.
/// The loss averages over all `2n` terms.
pub fn dgi_loss(tape: &mut Tape, e: Var, e_corrupt: Var, summary: Var, disc: Var) -> Result<Var, PretrainError> {
    check_same_shape(tape, e, e_corrupt, "dgi embeddings")?;
    let h = tape.shape(e).1;
    if tape.shape(summary) != (1, h) || tape.shape(disc) != (h, h) {
        return Err(PretrainError::Shape(format!(
            "dgi summary {:?} / discriminator {:?} for width {h}",
            tape.shape(summary),
            tape.shape(disc)
        )));
    }
    let st = tape.transpose(summary)?;
    let ds = tape.matmul(disc, st)?;
    let pos = tape.matmul(e, ds)?;
    let neg = tape.matmul(e_corrupt, ds)?;
    let neg = tape.scale(neg, -1.0)?;
    let lp = tape.log_sigmoid(pos)?;
    let ln = tape.log_sigmoid(neg)?;
    let both = concat_rows(tape, lp, ln)?;
    let m = tape.mean(both)?;
    Ok(tape.scale(m, -1.0)?)
}

/// Logits `h_u · h_v` for each pair, as a column.
pub(crate) fn pair_logits(tape: &mut Tape, e: Var, pairs: &[(usize, usize)]) -> Result<Var, PretrainError> {
    let us = Arc::new(pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let vs = Arc::new(pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let hu = tape.select_rows(e, us)?;
    let hv = tape.select_rows(e, vs)?;
    let prod = tape.mul(hu, hv)?;
    Ok(tape.row_sum(prod)?)
}

/// Edge-score binary cross-entropy with `s_uv = σ(h_u · h_v)`, averaged over
/// positive and negative pairs together.
pub fn edgepred_loss(
    tape: &mut Tape,
    e: Var,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
) -> Result<Var, PretrainError> {
    if pos.is_empty() {
        return Err(PretrainError::EmptyPositives);
    }
    let lp = pair_logits(tape, e, pos)?;
    let mut terms = tape.log_sigmoid(lp)?;
    if !neg.is_empty() {
        let ln = pair_logits(tape, e, neg)?;
        let ln = tape.scale(ln, -1.0)?;
        let ln = tape.log_sigmoid(ln)?;
        terms = concat_rows(tape, terms, ln)?;
    }
    let m = tape.mean(terms)?;
    Ok(tape.scale(m, -1.0)?)
}

/// Scaled cosine error: mean over `rows` of `(1 - cos(x_i, z_i))^gamma`.
pub fn sce_loss(tape: &mut Tape, x: Var, z: Var, rows: Arc<Vec<usize>>, gamma: f64) -> Result<Var, PretrainError> {
    check_same_shape(tape, x, z, "sce")?;
    if rows.is_empty() {
        return Err(PretrainError::EmptyMask);
    }
    if gamma < 1.0 {
        return Err(PretrainError::InvalidConfig(format!("gamma {gamma} < 1")));
    }
    let xs = tape.select_rows(x, rows.clone())?;
    let zs = tape.select_rows(z, rows)?;
    let xn = tape.l2_normalize_rows(xs)?;
    let zn = tape.l2_normalize_rows(zs)?;
    let prod = tape.mul(xn, zn)?;
    let cos = tape.row_sum(prod)?;
    let gap = tape.scale(cos, -1.0)?;
    let gap = tape.add_scalar(gap, 1.0)?;
    let terms = tape.pow(gap, gamma)?;
    Ok(tape.mean(terms)?)
}

/// Learnable pieces of the masked autoencoder recorded on a tape.
#[derive(Clone, Debug)]
pub struct MaeVars {
    /// `1 x d` token replacing masked input rows.
    pub mask_token: Var,
    /// `1 x h` token replacing masked code rows before decoding.
    pub dmask_token: Var,
    /// Single linear message-passing layer mapping codes back to `d` columns.
    pub decoder: EncoderVars,
}

/// `x` with the rows in `masked` replaced by `token`.
fn replace_rows(tape: &mut Tape, x: Var, masked: &[usize], token: Var) -> Result<Var, PretrainError> {
    let (n, c) = tape.shape(x);
    let mut keep = Tensor2::ones(n, c);
    let mut indicator = Tensor2::zeros(n, 1);
    for &i in masked {
        keep.row_mut(i).fill(0.0);
        indicator.set(i, 0, 1.0);
    }
    let keep = tape.constant(keep);
    let indicator = tape.constant(indicator);
    let kept = tape.mul(x, keep)?;
    let tokens = tape.matmul(indicator, token)?;
    Ok(tape.add(kept, tokens)?)
}

/// Masked feature reconstruction: mask inputs, encode, re-mask the code,
/// decode and score the masked rows with [`sce_loss`].
pub fn graphmae_loss(
    tape: &mut Tape,
    prop: &Propagation,
    x: &Tensor2,
    encoder: &EncoderVars,
    mae: &MaeVars,
    masked: Arc<Vec<usize>>,
    gamma: f64,
) -> Result<Var, PretrainError> {
    if masked.is_empty() {
        return Err(PretrainError::EmptyMask);
    }
    let xv = tape.constant(x.clone());
    let x_masked = replace_rows(tape, xv, &masked, mae.mask_token)?;
    let code = encode(tape, prop, x_masked, encoder)?;
    let code = replace_rows(tape, code, &masked, mae.dmask_token)?;
    let z = encode(tape, prop, code, &mae.decoder)?;
    sce_loss(tape, xv, z, masked, gamma)
}

/// NT-Xent over the `2N` pooled rows of two views; row `i` of `z1` and row
/// `i` of `z2` are partners, every other row is a negative.
pub fn graphcl_loss(tape: &mut Tape, z1: Var, z2: Var, tau: f64) -> Result<Var, PretrainError> {
    check_same_shape(tape, z1, z2, "nt-xent views")?;
    let n = tape.shape(z1).0;
    if n < 2 {
        return Err(PretrainError::TooFewAnchors(n));
    }
    if !(tau > 0.0) {
        return Err(PretrainError::InvalidConfig(format!("temperature {tau}")));
    }
    let z = concat_rows(tape, z1, z2)?;
    let zn = tape.l2_normalize_rows(z)?;
    let znt = tape.transpose(zn)?;
    let sim = tape.matmul(zn, znt)?;
    let logits = tape.scale(sim, 1.0 / tau)?;
    // exp(-1e9) underflows to exactly 0, removing self-similarity from the denominator
    let m = 2 * n;
    let mut self_mask = Tensor2::zeros(m, m);
    let mut partner = Tensor2::zeros(m, m);
    for i in 0..m {
        self_mask.set(i, i, -1e9);
        partner.set(i, (i + n) % m, 1.0);
    }
    let self_mask = tape.constant(self_mask);
    let logits = tape.add(logits, self_mask)?;
    let logp = tape.log_softmax(logits)?;
    let partner = tape.constant(partner);
    let picked = tape.mul(logp, partner)?;
    let total = tape.sum(picked)?;
    Ok(tape.scale(total, -1.0 / m as f64)?)
}
