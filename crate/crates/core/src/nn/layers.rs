//! Building blocks recorded on a [`Tape`]. Complex activations are
//! `[batch, antennas, subcarriers]`; real sequence activations are stacked
//! row blocks of `[batch, width]`.

use cdlab_tensor::{complex_linear, CVar, Tape, Var};

use super::Bound;
use crate::error::{shape, Result};

/// `x·Wᵀ + b` over rows of `x`.
pub fn linear(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = tape.matmul_t(x, p.real(&format!("{name}.w"))?)?;
    Ok(tape.add_row(y, p.real(&format!("{name}.b"))?)?)
}

/// Layer norm over the last axis with learned gain and shift.
pub fn layer_norm(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let n = tape.layer_norm(x)?;
    let n = tape.mul_row(n, p.real(&format!("{name}.g"))?)?;
    Ok(tape.add_row(n, p.real(&format!("{name}.b"))?)?)
}

fn clinear(tape: &mut Tape, p: &Bound, name: &str, x: CVar) -> Result<CVar> {
    let w = p.complex(&format!("{name}.w"))?;
    let b = p.complex(&format!("{name}.b"))?;
    Ok(complex_linear(tape, x, w, Some(b))?)
}

fn dims3(tape: &Tape, x: CVar) -> Result<[usize; 3]> {
    match *tape.try_value(x.re)?.shape() {
        [b, t, c] => Ok([b, t, c]),
        ref s => Err(shape("cmixer", format!("expected [batch, ant, sub], got {s:?}"))),
    }
}

fn swap_last(tape: &mut Tape, x: CVar) -> Result<CVar> {
    Ok(tape.complex_permute(x, &[0, 2, 1])?)
}

/// Applies `f` to every antenna vector (`along_antennas`) or every
/// subcarrier vector of `x`, as rows.
fn along<F>(tape: &mut Tape, x: CVar, along_antennas: bool, f: F) -> Result<CVar>
where
    F: FnOnce(&mut Tape, CVar) -> Result<CVar>,
{
    let [b, t, c] = dims3(tape, x)?;
    let (x, lead, len) = if along_antennas {
        (swap_last(tape, x)?, c, t)
    } else {
        (x, t, c)
    };
    let rows = tape.complex_reshape(x, &[b * lead, len])?;
    let y = f(tape, rows)?;
    let out_len = tape.shape(y.re)[1];
    let y = tape.complex_reshape(y, &[b, lead, out_len])?;
    if along_antennas {
        swap_last(tape, y)
    } else {
        Ok(y)
    }
}

fn split_gelu(tape: &mut Tape, x: CVar) -> Result<CVar> {
    Ok(CVar {
        re: tape.gelu(x.re)?,
        im: tape.gelu(x.im)?,
    })
}

/// Residual complex MLP over rows: normalize re‖im jointly, expand ×2,
/// GELU on each part, project back, add the input.
fn token_mlp(tape: &mut Tape, p: &Bound, name: &str, x: CVar) -> Result<CVar> {
    let len = tape.shape(x.re)[1];
    let cat = tape.concat_last(&[x.re, x.im])?;
    let n = layer_norm(tape, p, &format!("{name}.norm"), cat)?;
    let normed = CVar {
        re: tape.slice_last(n, 0, len)?,
        im: tape.slice_last(n, len, 2 * len)?,
    };
    let h = clinear(tape, p, &format!("{name}.fc1"), normed)?;
    let h = split_gelu(tape, h)?;
    let y = clinear(tape, p, &format!("{name}.fc2"), h)?;
    Ok(tape.complex_add(x, y)?)
}

/// One mixing layer: antenna-axis MLP, then subcarrier-axis MLP.
pub fn cmixer_layer(tape: &mut Tape, p: &Bound, prefix: &str, k: usize, x: CVar) -> Result<CVar> {
    let x = along(tape, x, true, |t, r| token_mlp(t, p, &format!("{prefix}.l{k}.ant"), r))?;
    along(tape, x, false, |t, r| token_mlp(t, p, &format!("{prefix}.l{k}.sub"), r))
}

fn project(tape: &mut Tape, p: &Bound, name: &str, x: CVar) -> Result<CVar> {
    let x = along(tape, x, true, |t, r| clinear(t, p, &format!("{name}.ant"), r))?;
    along(tape, x, false, |t, r| clinear(t, p, &format!("{name}.sub"), r))
}

pub fn cmixer_in(tape: &mut Tape, p: &Bound, prefix: &str, x: CVar) -> Result<CVar> {
    project(tape, p, &format!("{prefix}.in"), x)
}

pub fn cmixer_out(tape: &mut Tape, p: &Bound, prefix: &str, x: CVar) -> Result<CVar> {
    project(tape, p, &format!("{prefix}.out"), x)
}

/// Input projection to the output dims, `depth` mixing layers, square
/// output projection.
pub fn cmixer(tape: &mut Tape, p: &Bound, prefix: &str, depth: usize, x: CVar) -> Result<CVar> {
    let mut h = cmixer_in(tape, p, prefix, x)?;
    for k in 0..depth {
        h = cmixer_layer(tape, p, prefix, k, h)?;
    }
    cmixer_out(tape, p, prefix, h)
}

/// Two-layer LSTM over `steps` consecutive row blocks of `xs`
/// (`[steps·batch, width]`, time-major) from a zero state. Gate order in the
/// stacked weights is input, forget, candidate, output. Returns the last
/// top-layer hidden state `[batch, width]`.
pub fn lstm(tape: &mut Tape, p: &Bound, xs: Var, steps: usize) -> Result<Var> {
    let [rows, width] = match *tape.try_value(xs)?.shape() {
        [r, w] if steps > 0 && r % steps == 0 => [r, w],
        ref s => return Err(shape("lstm", format!("{s:?} for {steps} steps"))),
    };
    let batch = rows / steps;
    let mut input = xs;
    let mut last = None;
    for l in 0..2 {
        let pre = linear_named(tape, p, &format!("lstm.l{l}"), input)?;
        let w_hh = p.real(&format!("lstm.l{l}.w_hh"))?;
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut g = tape.slice_rows(pre, t * batch, (t + 1) * batch)?;
            if let Some(h) = h {
                let r = tape.matmul_t(h, w_hh)?;
                g = tape.add(g, r)?;
            }
            let i = tape.slice_last(g, 0, width)?;
            let i = tape.sigmoid(i)?;
            let cand = tape.slice_last(g, 2 * width, 3 * width)?;
            let cand = tape.tanh(cand)?;
            let mut cell = tape.mul(i, cand)?;
            if let Some(c) = c {
                let f = tape.slice_last(g, width, 2 * width)?;
                let f = tape.sigmoid(f)?;
                let keep = tape.mul(f, c)?;
                cell = tape.add(cell, keep)?;
            }
            let o = tape.slice_last(g, 3 * width, 4 * width)?;
            let o = tape.sigmoid(o)?;
            let squashed = tape.tanh(cell)?;
            let hidden = tape.mul(o, squashed)?;
            h = Some(hidden);
            c = Some(cell);
            hs.push(hidden);
        }
        last = h;
        if l == 0 {
            input = tape.concat_rows(&hs)?;
        }
    }
    Ok(last.expect("two layers ran"))
}

fn linear_named(tape: &mut Tape, p: &Bound, layer: &str, x: Var) -> Result<Var> {
    let y = tape.matmul_t(x, p.real(&format!("{layer}.w_ih"))?)?;
    Ok(tape.add_row(y, p.real(&format!("{layer}.b"))?)?)
}

/// Pre-norm transformer block over `[batch·tokens, width]` rows, batch-major,
/// with full bidirectional attention.
pub fn attention_block(
    tape: &mut Tape,
    p: &Bound,
    k: usize,
    x: Var,
    batch: usize,
    heads: usize,
) -> Result<Var> {
    let pre = format!("attn.b{k}");
    let [rows, width] = match *tape.try_value(x)?.shape() {
        [r, w] if batch > 0 && r % batch == 0 && heads > 0 && w % heads == 0 => [r, w],
        ref s => return Err(shape("attention", format!("{s:?} for batch {batch}, {heads} heads"))),
    };
    let tokens = rows / batch;
    let dh = width / heads;

    let y = layer_norm(tape, p, &format!("{pre}.ln1"), x)?;
    let split = |tape: &mut Tape, m: &str| -> Result<Var> {
        let v = linear(tape, p, &format!("{pre}.{m}"), y)?;
        let v = tape.reshape(v, &[batch, tokens, heads, dh])?;
        let v = tape.permute(v, &[0, 2, 1, 3])?;
        Ok(tape.reshape(v, &[batch * heads, tokens, dh])?)
    };
    let q = split(tape, "q")?;
    let kk = split(tape, "k")?;
    let v = split(tape, "v")?;
    let scores = tape.matmul_t(q, kk)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let weights = tape.softmax(scores)?;
    let mixed = tape.matmul(weights, v)?;
    let mixed = tape.reshape(mixed, &[batch, heads, tokens, dh])?;
    let mixed = tape.permute(mixed, &[0, 2, 1, 3])?;
    let mixed = tape.reshape(mixed, &[rows, width])?;
    let attended = linear(tape, p, &format!("{pre}.o"), mixed)?;
    let x = tape.add(x, attended)?;

    let y = layer_norm(tape, p, &format!("{pre}.ln2"), x)?;
    let h = linear(tape, p, &format!("{pre}.ff1"), y)?;
    let h = tape.gelu(h)?;
    let h = linear(tape, p, &format!("{pre}.ff2"), h)?;
    Ok(tape.add(x, h)?)
}

/// `depth` attention blocks; `x` is `[batch·tokens, width]`, batch-major.
pub fn attention_encoder(
    tape: &mut Tape,
    p: &Bound,
    x: Var,
    batch: usize,
    heads: usize,
    depth: usize,
) -> Result<Var> {
    let mut h = x;
    for k in 0..depth {
        h = attention_block(tape, p, k, h, batch, heads)?;
    }
    Ok(h)
}
