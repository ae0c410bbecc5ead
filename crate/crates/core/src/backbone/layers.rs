use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Bound, ContextMode};
use crate::autodiff::{Graph, Var, DEFAULT_LEAKY_SLOPE};
use crate::data::WindowBatch;
use crate::error::{Error, Result};

/// Dropout is sampled only in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Embedded context of one batch.
#[derive(Clone, Copy, Debug)]
pub struct ContextBundle {
    /// `[B, L, d_dyn * embed_dim]`
    pub dyn_embed: Var,
    /// `[B, static_ctx_dim]`, absent when the dataset has no static columns.
    pub static_embed: Option<Var>,
}

/// Graph handles of a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// `[B, H, k]`
    pub forecast: Var,
    /// `[B, L, k]`
    pub recon: Var,
    /// `[B, k, k]`
    pub feature_attention: Var,
    /// `[B, L, L]`
    pub temporal_attention: Var,
}

fn check_batch(p: &Bound, batch: &WindowBatch) -> Result<()> {
    let c = p.config();
    let geo = &c.geometry;
    let ok = batch.l == c.l
        && batch.h == c.h
        && batch.k == c.k
        && batch.d_dyn == geo.dyn_cards.len()
        && batch.d_stat == geo.static_cards.len()
        && batch.d_real == geo.n_static_real;
    if !ok {
        return Err(Error::Dimension {
            op: "forward",
            shapes: vec![
                vec![batch.l, batch.h, batch.k, batch.d_dyn, batch.d_stat, batch.d_real],
                vec![
                    c.l,
                    c.h,
                    c.k,
                    geo.dyn_cards.len(),
                    geo.static_cards.len(),
                    geo.n_static_real,
                ],
            ],
        });
    }
    Ok(())
}

fn zeros(g: &mut Graph<f64>, shape: Vec<usize>) -> Result<Var> {
    let n = shape.iter().product();
    g.constant(shape, vec![0.0; n])
}

fn linear(g: &mut Graph<f64>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

fn dropout(g: &mut Graph<f64>, x: Var, rate: f64, mode: &mut Mode) -> Result<Var> {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let shape = g.shape(x).to_vec();
            let mask = (0..g.value(x).len())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            let m = g.constant(shape, mask)?;
            g.mul(x, m)
        }
        _ => Ok(x),
    }
}

/// Looks up categorical embeddings and projects static reals.
pub fn embed_context(g: &mut Graph<f64>, p: &Bound, batch: &WindowBatch) -> Result<ContextBundle> {
    check_batch(p, batch)?;
    let c = p.config();
    let (b, l) = (batch.b, batch.l);
    let mut dyn_parts = Vec::with_capacity(batch.d_dyn);
    for col in 0..batch.d_dyn {
        let idx: Vec<usize> = (0..b * l)
            .map(|r| batch.dyn_ctx[r * batch.d_dyn + col] as usize)
            .collect();
        dyn_parts.push(g.embedding(p.get(&format!("emb.dyn.{col}")), &idx)?);
    }
    let dyn_flat = g.concat(&dyn_parts, 1)?;
    let mut dyn_embed = g.reshape(dyn_flat, vec![b, l, c.dyn_ctx_dim()])?;

    let mut stat_parts = Vec::new();
    for col in 0..batch.d_stat {
        let idx: Vec<usize> = (0..b)
            .map(|r| batch.static_codes[r * batch.d_stat + col] as usize)
            .collect();
        stat_parts.push(g.embedding(p.get(&format!("emb.stat.{col}")), &idx)?);
    }
    if batch.d_real > 0 {
        let reals = g.constant(vec![b, batch.d_real], batch.static_real.clone())?;
        stat_parts.push(linear(g, reals, p.get("static_real.w"), p.get("static_real.b"))?);
    }
    let mut static_embed = match stat_parts.len() {
        0 => None,
        1 => Some(stat_parts[0]),
        _ => Some(g.concat(&stat_parts, 1)?),
    };
    match c.context_mode {
        ContextMode::Full => {}
        ContextMode::DynamicOnly => {
            if static_embed.is_some() {
                static_embed = Some(zeros(g, vec![b, c.static_ctx_dim()])?);
            }
        }
        ContextMode::StaticOnly => dyn_embed = zeros(g, vec![b, l, c.dyn_ctx_dim()])?,
    }
    Ok(ContextBundle {
        dyn_embed,
        static_embed,
    })
}

/// Per-timestep context `[B, L, ctx_dim]`: dynamic embeddings followed by the
/// static vector repeated over time.
pub fn context_sequence(g: &mut Graph<f64>, ctx: &ContextBundle) -> Result<Var> {
    let Some(s) = ctx.static_embed else {
        return Ok(ctx.dyn_embed);
    };
    let (b, l) = {
        let sh = g.shape(ctx.dyn_embed);
        (sh[0], sh[1])
    };
    let d = g.shape(s)[1];
    let s3 = g.reshape(s, vec![b, 1, d])?;
    let over_time = zeros(g, vec![1, l, 1])?;
    let tiled = g.add(s3, over_time)?;
    g.concat(&[ctx.dyn_embed, tiled], 2)
}

/// Same-padded convolution, FiLM-modulated by `ctx` when the block is
/// conditioned. Returns the pre-activation.
pub fn film_conv_block(g: &mut Graph<f64>, p: &Bound, x: Var, ctx: Option<Var>, block: usize) -> Result<Var> {
    let c = p.config();
    let conv = g.conv1d(x, p.get(&format!("conv{block}.w")))?;
    let y = g.add(conv, p.get(&format!("conv{block}.b")))?;
    if !c.context_blocks.includes(block) {
        return Ok(y);
    }
    let ctx = ctx.ok_or_else(|| Error::Contract(format!("block {block} is conditioned but no context given")))?;
    let proj = linear(
        g,
        ctx,
        p.get(&format!("film{block}.w")),
        p.get(&format!("film{block}.b")),
    )?;
    let gamma = g.slice(proj, 2, 0, c.k)?;
    let beta = g.slice(proj, 2, c.k, c.k)?;
    g.affine_modulate(y, gamma, beta)
}

/// Single-head attention over a complete graph with self-loops.
///
/// `v` is `[B, N, D]`. GATv2 scores `aᵀ LeakyReLU(W [v_i ‖ v_j])` with `W` of
/// shape `[2D, 2D]`; the v1 variant scores `LeakyReLU(aᵀ [W v_i ‖ W v_j])` with
/// `W` of shape `[D, D]`. `bias` is `[N, N]`. Returns `(sigmoid(α v), α)`.
pub fn graph_attention(
    g: &mut Graph<f64>,
    v: Var,
    w: Var,
    a: Var,
    bias: Var,
    gatv2: bool,
) -> Result<(Var, Var)> {
    let (b, n, d) = {
        let s = g.shape(v);
        (s[0], s[1], s[2])
    };
    let slope = DEFAULT_LEAKY_SLOPE;
    let scores = if gatv2 {
        let wl = g.slice(w, 0, 0, d)?;
        let wr = g.slice(w, 0, d, d)?;
        let left = g.matmul(v, wl)?;
        let right = g.matmul(v, wr)?;
        let li = g.reshape(left, vec![b, n, 1, 2 * d])?;
        let rj = g.reshape(right, vec![b, 1, n, 2 * d])?;
        let pair = g.add(li, rj)?;
        let act = g.leaky_relu(pair, slope);
        let e = g.matmul(act, a)?;
        g.reshape(e, vec![b, n, n])?
    } else {
        let wh = g.matmul(v, w)?;
        let a1 = g.slice(a, 0, 0, d)?;
        let a2 = g.slice(a, 0, d, d)?;
        let si = g.matmul(wh, a1)?;
        let sj = g.matmul(wh, a2)?;
        let sj = g.swap_last2(sj)?;
        let e = g.add(si, sj)?;
        g.leaky_relu(e, slope)
    };
    let scores = g.add(scores, bias)?;
    let attn = g.softmax(scores, 2)?;
    let mixed = g.matmul(attn, v)?;
    Ok((g.sigmoid(mixed), attn))
}

/// KPIs as nodes; each node is its length-L series.
pub fn feature_attention(g: &mut Graph<f64>, p: &Bound, h: Var) -> Result<(Var, Var)> {
    let nodes = g.swap_last2(h)?;
    let (out, attn) = graph_attention(
        g,
        nodes,
        p.get("fgat.w"),
        p.get("fgat.a"),
        p.get("fgat.bias"),
        p.config().use_gatv2,
    )?;
    Ok((g.swap_last2(out)?, attn))
}

/// Timesteps as nodes; each node is its k-vector.
pub fn temporal_attention(g: &mut Graph<f64>, p: &Bound, h: Var) -> Result<(Var, Var)> {
    graph_attention(
        g,
        h,
        p.get("tgat.w"),
        p.get("tgat.a"),
        p.get("tgat.bias"),
        p.config().use_gatv2,
    )
}

struct GruLayer {
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
    hidden: usize,
}

impl GruLayer {
    fn bind(p: &Bound, prefix: &str, layer: usize, hidden: usize) -> Self {
        let get = |n: &str| p.get(&format!("{prefix}.{layer}.{n}"));
        Self {
            w_ih: get("w_ih"),
            w_hh: get("w_hh"),
            b_ih: get("b_ih"),
            b_hh: get("b_hh"),
            hidden,
        }
    }

    fn input_gates(&self, g: &mut Graph<f64>, x: Var) -> Result<Var> {
        linear(g, x, self.w_ih, self.b_ih)
    }

    /// One step given precomputed input gates `[B, 3h]`; PyTorch gate order r, z, n.
    fn step(&self, g: &mut Graph<f64>, xg: Var, h: Var) -> Result<Var> {
        let n = self.hidden;
        let hg = linear(g, h, self.w_hh, self.b_hh)?;
        let gate = |g: &mut Graph<f64>, i: usize| -> Result<(Var, Var)> {
            Ok((g.slice(xg, 1, i * n, n)?, g.slice(hg, 1, i * n, n)?))
        };
        let (xr, hr) = gate(g, 0)?;
        let (xz, hz) = gate(g, 1)?;
        let (xn, hn) = gate(g, 2)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let rh = g.mul(r, hn)?;
        let cand = g.add(xn, rh)?;
        let cand = g.tanh(cand);
        // h' = (1 - z) n + z h
        let diff = g.sub(h, cand)?;
        let zd = g.mul(z, diff)?;
        g.add(cand, zd)
    }
}

/// Stacked GRU over `[B, L, in]`; returns the top layer's final hidden state.
fn gru_encode(g: &mut Graph<f64>, p: &Bound, xs: Var, mode: &mut Mode) -> Result<Var> {
    let c = p.config();
    let (b, l) = (g.shape(xs)[0], g.shape(xs)[1]);
    let hdim = c.gru_hidden;
    let mut seq = xs;
    let mut last = zeros(g, vec![b, hdim])?;
    for layer in 0..c.gru_layers {
        let cell = GruLayer::bind(p, "enc", layer, hdim);
        let gates = cell.input_gates(g, seq)?;
        let mut h = zeros(g, vec![b, hdim])?;
        let top = layer + 1 == c.gru_layers;
        let mut outs = Vec::with_capacity(if top { 0 } else { l });
        for t in 0..l {
            let xg = g.slice(gates, 1, t, 1)?;
            let xg = g.reshape(xg, vec![b, 3 * hdim])?;
            h = cell.step(g, xg, h)?;
            if !top {
                outs.push(g.reshape(h, vec![b, 1, hdim])?);
            }
        }
        if !top {
            seq = g.concat(&outs, 1)?;
            seq = dropout(g, seq, c.dropout, mode)?;
        }
        last = h;
    }
    Ok(last)
}

fn forecast_head(g: &mut Graph<f64>, p: &Bound, latent: Var, mode: &mut Mode) -> Result<Var> {
    let c = p.config();
    let mut z = latent;
    for i in 0..c.forecast_layers {
        z = linear(g, z, p.get(&format!("fc.{i}.w")), p.get(&format!("fc.{i}.b")))?;
        z = g.relu(z);
        z = dropout(g, z, c.dropout, mode)?;
    }
    let out = linear(g, z, p.get("fc.out.w"), p.get("fc.out.b"))?;
    let b = g.shape(out)[0];
    g.reshape(out, vec![b, c.h, c.k])
}

/// Unrolls the decoder for L steps. Every layer starts from a linear
/// projection of the latent; each step's input is the previous top hidden state.
fn recon_head(g: &mut Graph<f64>, p: &Bound, latent: Var) -> Result<Var> {
    let c = p.config();
    let b = g.shape(latent)[0];
    let rh = c.recon_hidden;
    let seed = linear(g, latent, p.get("dec.init.w"), p.get("dec.init.b"))?;
    let cells: Vec<GruLayer> = (0..c.recon_layers)
        .map(|i| GruLayer::bind(p, "dec", i, rh))
        .collect();
    let mut hs = vec![seed; c.recon_layers];
    let mut input = seed;
    let mut steps = Vec::with_capacity(c.l);
    for _ in 0..c.l {
        for (cell, h) in cells.iter().zip(hs.iter_mut()) {
            let xg = cell.input_gates(g, input)?;
            *h = cell.step(g, xg, *h)?;
            input = *h;
        }
        let y = linear(g, input, p.get("dec.out.w"), p.get("dec.out.b"))?;
        steps.push(g.reshape(y, vec![b, 1, c.k])?);
    }
    g.concat(&steps, 1)
}

/// Full network: context, two conv blocks, both attention views, fusion,
/// GRU encoder, forecast and reconstruction heads.
pub fn forward(g: &mut Graph<f64>, p: &Bound, batch: &WindowBatch, mut mode: Mode) -> Result<Outputs> {
    check_batch(p, batch)?;
    let c = p.config();
    let (b, l, k) = (batch.b, batch.l, batch.k);
    let x = g.constant(vec![b, l, k], batch.inputs.clone())?;
    let ctx = if c.context_blocks == super::ContextBlocks::None {
        None
    } else {
        let bundle = embed_context(g, p, batch)?;
        Some(context_sequence(g, &bundle)?)
    };
    let h1 = film_conv_block(g, p, x, ctx, 1)?;
    let h1 = g.relu(h1);
    let h2 = film_conv_block(g, p, h1, ctx, 2)?;
    let h = g.relu(h2);
    let (feat, feature_attention) = feature_attention(g, p, h)?;
    let (temp, temporal_attention) = temporal_attention(g, p, h)?;
    let fused = g.concat(&[h, feat, temp], 2)?;
    let latent = gru_encode(g, p, fused, &mut mode)?;
    let forecast = forecast_head(g, p, latent, &mut mode)?;
    let recon = recon_head(g, p, latent)?;
    Ok(Outputs {
        forecast,
        recon,
        feature_attention,
        temporal_attention,
    })
}
