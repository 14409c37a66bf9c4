use super::params::{Bound, EMBEDDING};
use super::state::{KvCache, ModelState};
use super::ModelConfig;
use crate::autograd::{Tape, Tensor, Var, MASK_NEG};
use crate::error::Result;

/// Causal, span-limited visibility for `tq` new queries over `memory` carried
/// rows followed by the `tq` new rows. Returns the additive mask and, for each
/// visible pair, the query−key distance.
fn visibility(tq: usize, memory: usize, span: Option<usize>) -> (Tensor<f32>, Vec<Option<usize>>) {
    let tk = memory + tq;
    let mut mask = vec![0.0f32; tq * tk];
    let mut dist = vec![None; tq * tk];
    for i in 0..tq {
        for j in 0..tk {
            let visible = j <= i + memory && span.is_none_or(|s| i + memory - j < s);
            if visible {
                dist[i * tk + j] = Some(i + memory - j);
            } else {
                mask[i * tk + j] = MASK_NEG as f32;
            }
        }
    }
    (Tensor::matrix(tq, tk, mask).expect("mask shape"), dist)
}

fn carried(tape: &mut Tape<f32>, rows: &super::RowBuffer) -> Result<Option<Var>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let t = Tensor::matrix(rows.rows(), rows.width(), rows.data().to_vec())?;
    Ok(Some(tape.constant(t)))
}

fn with_memory(tape: &mut Tape<f32>, memory: Option<Var>, new: Var) -> Result<Var> {
    match memory {
        Some(m) => tape.stack_rows(&[m, new]),
        None => Ok(new),
    }
}

fn linear(tape: &mut Tape<f32>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add(y, b),
        None => Ok(y),
    }
}

/// Runs the LSTM stack; returns final-layer outputs `[T, hidden]`.
fn lstm_stack(
    c: &ModelConfig,
    tape: &mut Tape<f32>,
    p: &Bound,
    tokens: &[u32],
    state: &ModelState,
    next: &mut ModelState,
) -> Result<Var> {
    let h = c.hidden_dim;
    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let mut x = tape.embedding_gather(p.get(EMBEDDING), &ids)?;
    for l in 0..c.num_layers {
        if l > 0 {
            x = tape.dropout(x, c.dropout)?;
        }
        let xw = linear(
            tape,
            x,
            p.get(&format!("lstm.{l}.w_ih")),
            Some(p.get(&format!("lstm.{l}.bias"))),
        )?;
        let w_hh = p.get(&format!("lstm.{l}.w_hh"));
        let (h0, c0) = &state.lstm[l];
        let mut hv = tape.constant(Tensor::matrix(1, h, h0.clone())?);
        let mut cv = tape.constant(Tensor::matrix(1, h, c0.clone())?);
        let mut outs = Vec::with_capacity(tokens.len());
        for t in 0..tokens.len() {
            let xt = tape.rows(xw, t, 1)?;
            let hw = tape.matmul(hv, w_hh)?;
            let gates = tape.add(xt, hw)?;
            let i = tape.slice(gates, 0, h)?;
            let i = tape.sigmoid(i)?;
            let f = tape.slice(gates, h, h)?;
            let f = tape.sigmoid(f)?;
            let g = tape.slice(gates, 2 * h, h)?;
            let g = tape.tanh(g)?;
            let o = tape.slice(gates, 3 * h, h)?;
            let o = tape.sigmoid(o)?;
            let fc = tape.mul(f, cv)?;
            let ig = tape.mul(i, g)?;
            cv = tape.add(fc, ig)?;
            let tc = tape.tanh(cv)?;
            hv = tape.mul(o, tc)?;
            outs.push(hv);
        }
        next.lstm[l] = (tape.data(hv).to_vec(), tape.data(cv).to_vec());
        x = tape.stack_rows(&outs)?;
    }
    tape.dropout(x, c.dropout)
}

pub(crate) fn lstm_forward(
    c: &ModelConfig,
    tape: &mut Tape<f32>,
    p: &Bound,
    tokens: &[u32],
    state: &ModelState,
) -> Result<(Var, ModelState)> {
    let mut next = state.clone();
    let hs = lstm_stack(c, tape, p, tokens, state, &mut next)?;
    let proj = linear(tape, hs, p.get("proj.weight"), Some(p.get("proj.bias")))?;
    next.position_offset += tokens.len();
    Ok((proj, next))
}

/// LSTM followed by multi-head attention of each h_t over the stored
/// final-layer states h_1..h_t; the projection sees `[a_t ; h_t]`.
pub(crate) fn lstma_forward(
    c: &ModelConfig,
    tape: &mut Tape<f32>,
    p: &Bound,
    tokens: &[u32],
    state: &ModelState,
) -> Result<(Var, ModelState)> {
    let mut next = state.clone();
    let hs = lstm_stack(c, tape, p, tokens, state, &mut next)?;
    let t = tokens.len();
    let mem_rows = state.attn_memory.rows();
    let mem = carried(tape, &state.attn_memory)?;
    let memory = with_memory(tape, mem, hs)?;

    let q = tape.matmul(hs, p.get("attn.query"))?;
    let k = tape.matmul(memory, p.get("attn.key"))?;
    let v = tape.matmul(memory, p.get("attn.value"))?;
    let (mask, _) = visibility(t, mem_rows, c.attention_span);
    let mask = tape.constant(mask);
    let dh = c.hidden_dim / c.num_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(c.num_heads);
    for head in 0..c.num_heads {
        let qh = tape.slice(q, head * dh, dh)?;
        let kh = tape.slice(k, head * dh, dh)?;
        let vh = tape.slice(v, head * dh, dh)?;
        heads.push(tape.scaled_dot_product(qh, kh, vh, mask, scale)?);
    }
    let joined = tape.concat(&heads)?;
    let attended = tape.matmul(joined, p.get("attn.output"))?;
    let cat = tape.concat(&[attended, hs])?;
    let proj = linear(tape, cat, p.get("proj.weight"), Some(p.get("proj.bias")))?;

    next.attn_memory.replace(tape.data(memory).to_vec());
    if let Some(s) = c.attention_span {
        next.attn_memory.keep_last(s);
    }
    next.position_offset += t;
    Ok((proj, next))
}

/// Sinusoidal encodings of distances `0..n`, `[n, width]`.
pub(crate) fn relative_encodings(n: usize, width: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(n * width);
    for d in 0..n {
        for i in 0..width {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / width as f64);
            let a = d as f64 * freq;
            data.push(if i % 2 == 0 { a.sin() } else { a.cos() } as f32);
        }
    }
    Tensor::matrix(n, width, data).expect("encoding shape")
}

/// Pre-norm Transformer with relative position attention: each head scores
/// `(q + u)·k + (q + v)·W_r r_{i−j}` where `r` are sinusoidal encodings of
/// the query−key distance and `u`, `v` are learned global biases.
pub(crate) fn transformer_forward(
    c: &ModelConfig,
    tape: &mut Tape<f32>,
    p: &Bound,
    tokens: &[u32],
    state: &ModelState,
) -> Result<(Var, ModelState)> {
    let mut next = state.clone();
    let t = tokens.len();
    let d = c.hidden_dim;
    let dh = d / c.num_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mem_rows = state.memory_len();
    let tk = mem_rows + t;
    let (mask, dist) = visibility(t, mem_rows, c.attention_span);
    let mask = tape.constant(mask);
    let enc = tape.constant(relative_encodings(tk, d));

    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let emb = tape.embedding_gather(p.get(EMBEDDING), &ids)?;
    let mut x = linear(tape, emb, p.get("input.weight"), Some(p.get("input.bias")))?;
    x = tape.dropout(x, c.dropout)?;

    for l in 0..c.num_layers {
        let n = |s: &str| format!("layer.{l}.{s}");
        let h = tape.layer_norm(x, p.get(&n("ln1.gain")), p.get(&n("ln1.bias")))?;
        let q = tape.matmul(h, p.get(&n("attn.query")))?;
        let k_new = tape.matmul(h, p.get(&n("attn.key")))?;
        let v_new = tape.matmul(h, p.get(&n("attn.value")))?;
        let cache: &KvCache = &state.kv_cache[l];
        let k_mem = carried(tape, &cache.keys)?;
        let v_mem = carried(tape, &cache.values)?;
        let k = with_memory(tape, k_mem, k_new)?;
        let v = with_memory(tape, v_mem, v_new)?;
        let r = tape.matmul(enc, p.get(&n("attn.position")))?;
        let qu = tape.add(q, p.get(&n("attn.content_bias")))?;
        let qv = tape.add(q, p.get(&n("attn.position_bias")))?;

        let mut heads = Vec::with_capacity(c.num_heads);
        for head in 0..c.num_heads {
            let off = head * dh;
            let quh = tape.slice(qu, off, dh)?;
            let qvh = tape.slice(qv, off, dh)?;
            let kh = tape.slice(k, off, dh)?;
            let vh = tape.slice(v, off, dh)?;
            let rh = tape.slice(r, off, dh)?;
            let by_distance = tape.matmul_t(qvh, rh)?;
            let pos = tape.gather_cols(by_distance, &dist, tk)?;
            let pos = tape.scale(pos, scale)?;
            let bias = tape.add(pos, mask)?;
            heads.push(tape.scaled_dot_product(quh, kh, vh, bias, scale)?);
        }
        let joined = tape.concat(&heads)?;
        let attended = tape.matmul(joined, p.get(&n("attn.output")))?;
        let attended = tape.dropout(attended, c.dropout)?;
        x = tape.add(x, attended)?;

        let h2 = tape.layer_norm(x, p.get(&n("ln2.gain")), p.get(&n("ln2.bias")))?;
        let ff = linear(tape, h2, p.get(&n("ff.w1")), Some(p.get(&n("ff.b1"))))?;
        let ff = tape.relu(ff)?;
        let ff = linear(tape, ff, p.get(&n("ff.w2")), Some(p.get(&n("ff.b2"))))?;
        let ff = tape.dropout(ff, c.dropout)?;
        x = tape.add(x, ff)?;

        let slot = &mut next.kv_cache[l];
        slot.keys.replace(tape.data(k).to_vec());
        slot.values.replace(tape.data(v).to_vec());
        if let Some(s) = c.attention_span {
            slot.keys.keep_last(s);
            slot.values.keep_last(s);
        }
    }

    let x = tape.layer_norm(x, p.get("final_ln.gain"), p.get("final_ln.bias"))?;
    let proj = linear(tape, x, p.get("proj.weight"), Some(p.get("proj.bias")))?;
    next.position_offset += t;
    Ok((proj, next))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visibility_is_causal_and_span_limited() {
        let (mask, dist) = visibility(2, 2, Some(2));
        // keys: two carried rows then two new rows
        assert_eq!(dist, vec![None, Some(1), Some(0), None, None, None, Some(1), Some(0)]);
        assert_eq!(mask.data()[0], MASK_NEG as f32);
        assert_eq!(mask.data()[1], 0.0);
        let (_, dist) = visibility(3, 0, None);
        assert_eq!(dist[2 * 3], Some(2));
        assert_eq!(dist[1], None);
    }

    #[test]
    fn encodings_start_at_sin0_cos0() {
        let e = relative_encodings(2, 4);
        assert_eq!(&e.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
    }
}
