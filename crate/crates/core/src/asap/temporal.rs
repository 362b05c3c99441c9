//! Temporal embedding of correlated center features.

use super::config::{LevelConfig, TeKind};
use crate::autodiff::{MlpSpec, ParamStore, Tape, Var};
use crate::error::{Error, Result};

fn check_pair(tape: &Tape, prev: Var, cur: Var) -> Result<()> {
    if tape.shape(prev) != tape.shape(cur) || tape.shape(cur).len() != 2 {
        return Err(Error::Shape {
            op: "temporal_embedding",
            lhs: tape.shape(prev).to_vec(),
            rhs: tape.shape(cur).to_vec(),
        });
    }
    Ok(())
}

/// `zeta(concat(prev, cur))` row by row.
pub fn dte_forward(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    zeta: &MlpSpec,
    prev: Var,
    cur: Var,
) -> Result<Var> {
    check_pair(tape, prev, cur)?;
    let x = tape.concat_last(prev, cur)?;
    zeta.forward(tape, params, &format!("{prefix}.zeta"), x)
}

/// Attentive fusion; returns the `m x 2` attention and the embedded features.
pub fn ate_attention(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    gamma: &MlpSpec,
    zeta: &MlpSpec,
    prev: Var,
    cur: Var,
) -> Result<(Var, Var)> {
    check_pair(tape, prev, cur)?;
    if gamma.output_width() != 2 {
        return Err(Error::Config(format!(
            "gamma must output 2 logits, not {}",
            gamma.output_width()
        )));
    }
    let pair = tape.concat_last(prev, cur)?;
    let logits = gamma.forward(tape, params, &format!("{prefix}.gamma"), pair)?;
    let attn = tape.softmax_last(logits)?;
    let a1 = tape.select_col(attn, 0)?;
    let a2 = tape.select_col(attn, 1)?;
    let wp = tape.scale_rows(prev, a1)?;
    let wc = tape.scale_rows(cur, a2)?;
    let fused = tape.add(wp, wc)?;
    let out = zeta.forward(tape, params, &format!("{prefix}.zeta"), fused)?;
    Ok((attn, out))
}

pub fn ate_forward(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    gamma: &MlpSpec,
    zeta: &MlpSpec,
    prev: Var,
    cur: Var,
) -> Result<Var> {
    ate_attention(tape, params, prefix, gamma, zeta, prev, cur).map(|(_, out)| out)
}

/// Dispatches on the level's embedding kind; the attention is returned for ATE.
pub fn temporal_embed(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    level: &LevelConfig,
    prev: Var,
    cur: Var,
) -> Result<(Option<Var>, Var)> {
    match level.te {
        TeKind::Dte => Ok((None, dte_forward(tape, params, prefix, &level.zeta, prev, cur)?)),
        TeKind::Ate => {
            let gamma = level
                .gamma
                .as_ref()
                .ok_or_else(|| Error::Config("ATE level without gamma".into()))?;
            let (attn, out) = ate_attention(tape, params, prefix, gamma, &level.zeta, prev, cur)?;
            Ok((Some(attn), out))
        }
    }
}
