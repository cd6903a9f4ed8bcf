use super::params::{block, tail, EMBED_B, EMBED_POS, EMBED_W};
use super::{ModelConfig, ModelError, Params};
use crate::numeric::{Graph, Tensor, Var};

/// Tokens fed to the encoder: one row of state features per token plus
/// the token's relative timestep inside the window (`0..L`).
#[derive(Clone, Debug, PartialEq)]
pub struct TokenInput {
    /// `[T × d_state]`.
    pub states: Tensor,
    pub steps: Vec<usize>,
}

impl TokenInput {
    pub fn tokens(&self) -> usize {
        self.steps.len()
    }
}

/// Parameters recorded as leaves of one graph.
pub struct Bound {
    config: ModelConfig,
    vars: Vec<Var>,
}

impl Bound {
    pub fn new(g: &mut Graph, params: &Params, requires_grad: bool) -> Result<Self, ModelError> {
        let vars = (0..params.len())
            .map(|i| g.leaf(params.shared(i), requires_grad))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Bound { config: *params.config(), vars })
    }

    /// Graph variables in parameter order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn block(&self, b: usize, offset: usize) -> Var {
        self.vars[super::params::BLOCKS + b * super::params::PER_BLOCK + offset]
    }

    fn tail(&self, offset: usize) -> Var {
        self.vars[super::params::BLOCKS + self.config.n_blocks * super::params::PER_BLOCK + offset]
    }
}

/// `x = states·W + b + pos[step]`; no unit-identity term.
pub fn embed(g: &mut Graph, p: &Bound, input: &TokenInput) -> Result<Var, ModelError> {
    let cfg = &p.config;
    let (rows, width) = input.states.rows_cols();
    if width != cfg.d_state {
        return Err(ModelError::Input(format!("state width {width}, model expects {}", cfg.d_state)));
    }
    if rows != input.steps.len() {
        return Err(ModelError::Input(format!("{rows} state rows but {} step indices", input.steps.len())));
    }
    if let Some(s) = input.steps.iter().find(|&&s| s >= cfg.context) {
        return Err(ModelError::Input(format!("step index {s} outside context {}", cfg.context)));
    }
    let s = g.constant(input.states.clone())?;
    let lin = g.matmul(s, p.vars[EMBED_W])?;
    let lin = g.add_row(lin, p.vars[EMBED_B])?;
    let pos = g.gather_rows(p.vars[EMBED_POS], &input.steps)?;
    Ok(g.add(lin, pos)?)
}

/// Runs every block under the same `allow` mask (`T×T`, row = query).
///
/// With `query` set, the last block only computes those rows and the
/// result has `query.len()` rows; earlier blocks still update every token.
pub fn encode(
    g: &mut Graph,
    p: &Bound,
    x: Var,
    allow: &[bool],
    query: Option<&[usize]>,
) -> Result<Var, ModelError> {
    let cfg = p.config;
    let t = g.value(x).rows_cols().0;
    if allow.len() != t * t {
        return Err(ModelError::Input(format!("mask has {} entries for {t} tokens", allow.len())));
    }
    let query_allow: Option<Vec<bool>> =
        query.map(|q| q.iter().flat_map(|&r| allow[r * t..(r + 1) * t].iter().copied()).collect());
    let dh = cfg.d_head();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut x = x;
    for b in 0..cfg.n_blocks {
        let last = b + 1 == cfg.n_blocks;
        let (q_rows, rows_allow) = match (last, query) {
            (true, Some(q)) => (Some(q), query_allow.as_deref().unwrap_or(allow)),
            _ => (None, allow),
        };
        let h = g.layer_norm(x, p.block(b, block::LN1_G), p.block(b, block::LN1_B))?;
        let (hq, xq) = match q_rows {
            Some(q) => (g.gather_rows(h, q)?, g.gather_rows(x, q)?),
            None => (h, x),
        };
        let qm = g.matmul(hq, p.block(b, block::WQ))?;
        let km = g.matmul(h, p.block(b, block::WK))?;
        let vm = g.matmul(h, p.block(b, block::WV))?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let qh = g.slice_cols(qm, head * dh, dh)?;
            let kh = g.slice_cols(km, head * dh, dh)?;
            let vh = g.slice_cols(vm, head * dh, dh)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.masked_softmax(scores, rows_allow)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat(&heads)? };
        let o = g.matmul(cat, p.block(b, block::WO))?;
        let o = g.add_row(o, p.block(b, block::BO))?;
        let x1 = g.add(xq, o)?;

        let h2 = g.layer_norm(x1, p.block(b, block::LN2_G), p.block(b, block::LN2_B))?;
        let f = g.matmul(h2, p.block(b, block::FF_W1))?;
        let f = g.add_row(f, p.block(b, block::FF_B1))?;
        let f = g.gelu(f)?;
        let f = g.matmul(f, p.block(b, block::FF_W2))?;
        let f = g.add_row(f, p.block(b, block::FF_B2))?;
        x = g.add(x1, f)?;
    }
    Ok(g.layer_norm(x, p.tail(tail::LN_G), p.tail(tail::LN_B))?)
}

/// Combined logits for rows of `h` taken in groups of `group` tokens that
/// share a timestep: row `r` gets `FC(h_r)` (intrinsic) followed by
/// `w·(h_r ⊕ h_j) + b` for each `j` of its group (interactive).
pub fn gar_head(g: &mut Graph, p: &Bound, h: Var, group: usize) -> Result<Var, ModelError> {
    let intr = intrinsic_head(g, p, h)?;
    let u = g.matmul(h, p.tail(tail::PAIR_SELF))?;
    let u = g.add_row(u, p.tail(tail::PAIR_B))?;
    let v = g.matmul(h, p.tail(tail::PAIR_OTHER))?;
    Ok(g.pair_logits(intr, u, v, group)?)
}

/// The intrinsic half of the head alone, `FC(h)`; a fixed-size action
/// head when `k_intr` is set to the full action count.
pub fn intrinsic_head(g: &mut Graph, p: &Bound, h: Var) -> Result<Var, ModelError> {
    let intr = g.matmul(h, p.tail(tail::INTR_W))?;
    Ok(g.add_row(intr, p.tail(tail::INTR_B))?)
}

/// Embed, encode and head in one call.
pub fn forward_logits(
    g: &mut Graph,
    p: &Bound,
    input: &TokenInput,
    allow: &[bool],
    query: Option<&[usize]>,
    group: usize,
) -> Result<Var, ModelError> {
    let x = embed(g, p, input)?;
    let h = encode(g, p, x, allow, query)?;
    gar_head(g, p, h, group)
}

/// Gradient-free forward returning the combined-logit matrix.
pub fn infer(
    params: &Params,
    input: &TokenInput,
    allow: &[bool],
    query: Option<&[usize]>,
    group: usize,
) -> Result<Tensor, ModelError> {
    let mut g = Graph::new();
    let p = Bound::new(&mut g, params, false)?;
    let out = forward_logits(&mut g, &p, input, allow, query, group)?;
    Ok(g.value(out).clone())
}
