use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mask::{self, MaskMode, VisibilityMask};
use crate::error::{Error, Result};
use crate::numerics::kernels;
use crate::numerics::{Array, ParamId, ParamSet, Segment, Tape, Var};
use crate::vocab::{SerializedTriple, TokenId, DEFAULT_MAX_SEQ_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub mask_mode: MaskMode,
    #[serde(default = "yes")]
    pub tie_embeddings: bool,
}

fn yes() -> bool {
    true
}

/// Final hidden rows plus per-layer key and value rows.
type Encoded = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>);

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            vocab_size,
            mask_mode: MaskMode::RoleSeparated,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(format!("model config: {m}")));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("layers, heads, d_model and d_ff must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return bad("vocab_size and max_seq_len must be positive");
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

const LAYER_PARAMS: [&str; 13] = [
    "ln1.g", "ln1.b", "wq", "wk", "wv", "wo", "bo", "ln2.g", "ln2.b", "w1", "b1", "w2", "b2",
];

#[derive(Clone, Copy, Debug)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct Ids {
    tok: ParamId,
    pos: ParamId,
    layers: Vec<LayerIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    out: ParamId,
}

/// Expected parameter names and shapes, in storage order.
pub fn param_layout(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (c.d_model, c.d_ff);
    let mut v = vec![
        ("tok_emb".to_string(), vec![c.vocab_size, d]),
        ("pos_emb".to_string(), vec![c.max_seq_len, d]),
    ];
    for l in 0..c.n_layers {
        for name in LAYER_PARAMS {
            let shape = match name {
                "wq" | "wk" | "wv" | "wo" => vec![d, d],
                "w1" => vec![d, f],
                "w2" => vec![f, d],
                "b1" => vec![f],
                _ => vec![d],
            };
            v.push((format!("layer{l}.{name}"), shape));
        }
    }
    v.push(("lnf.g".to_string(), vec![d]));
    v.push(("lnf.b".to_string(), vec![d]));
    if !c.tie_embeddings {
        v.push(("out_proj".to_string(), vec![c.vocab_size, d]));
    }
    v
}

/// Micro pre-norm transformer with learned positions and a (by default tied)
/// output projection.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub params: ParamSet,
    ids: Ids,
}

/// Tape handles for every parameter of one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    tok: Var,
    pos: Var,
    layers: Vec<[Var; 13]>,
    lnf_g: Var,
    lnf_b: Var,
    out: Var,
}

/// One sequence of a batched forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SeqView<'a> {
    pub ids: &'a [TokenId],
    pub mask: &'a VisibilityMask,
}

/// Output of a tape forward pass over concatenated sequences.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Final (normalised) hidden states, `[total_rows x d]`.
    pub hidden: Var,
    /// Row offset of each sequence.
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
}

impl Forward {
    pub fn row(&self, seq: usize, pos: usize) -> usize {
        debug_assert!(pos < self.lens[seq]);
        self.offsets[seq] + pos
    }
}

impl Model {
    /// Freshly initialised model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let resid = 1.0 / ((2 * config.n_layers) as f64).sqrt();
        for (name, shape) in param_layout(&config) {
            let n: usize = shape.iter().product();
            let short = name.rsplit('.').next().unwrap_or(&name);
            let data: Vec<f64> = if name.ends_with(".g") {
                vec![1.0; n]
            } else if name.ends_with(".b") || short.starts_with('b') {
                vec![0.0; n]
            } else {
                let std = match short {
                    "tok_emb" | "pos_emb" | "out_proj" => 0.02,
                    "wo" | "w2" => resid / (shape[0] as f64).sqrt(),
                    _ => 1.0 / (shape[0] as f64).sqrt(),
                };
                let dist = Normal::new(0.0, std).map_err(|e| Error::Contract(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            };
            params.push(name, Array::new(shape, data)?);
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter set after checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), id) in layout.iter().zip(params.ids()) {
            if params.name(id) != name || params.get(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} is `{}` {:?}, expected `{name}` {shape:?}",
                    id.0,
                    params.name(id),
                    params.get(id).shape()
                )));
            }
        }
        let per = LAYER_PARAMS.len();
        let layers = (0..config.n_layers)
            .map(|l| {
                let b = 2 + l * per;
                let p = |i: usize| ParamId(b + i);
                LayerIds {
                    ln1_g: p(0),
                    ln1_b: p(1),
                    wq: p(2),
                    wk: p(3),
                    wv: p(4),
                    wo: p(5),
                    bo: p(6),
                    ln2_g: p(7),
                    ln2_b: p(8),
                    w1: p(9),
                    b1: p(10),
                    w2: p(11),
                    b2: p(12),
                }
            })
            .collect();
        let after = 2 + config.n_layers * per;
        let ids = Ids {
            tok: ParamId(0),
            pos: ParamId(1),
            layers,
            lnf_g: ParamId(after),
            lnf_b: ParamId(after + 1),
            out: if config.tie_embeddings { ParamId(0) } else { ParamId(after + 2) },
        };
        Ok(Model { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mask_mode(&self) -> MaskMode {
        self.config.mask_mode
    }

    pub fn build_mask(&self, s: &SerializedTriple) -> VisibilityMask {
        VisibilityMask::build(s, self.config.mask_mode)
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if ids.len() > self.config.max_seq_len {
            return Err(Error::Truncation {
                what: "model input".into(),
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Records every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let p = &self.params;
        let tok = tape.param(p, self.ids.tok);
        let pos = tape.param(p, self.ids.pos);
        let layers = self
            .ids
            .layers
            .iter()
            .map(|l| {
                [
                    l.ln1_g, l.ln1_b, l.wq, l.wk, l.wv, l.wo, l.bo, l.ln2_g, l.ln2_b, l.w1, l.b1, l.w2, l.b2,
                ]
                .map(|id| tape.param(p, id))
            })
            .collect();
        let lnf_g = tape.param(p, self.ids.lnf_g);
        let lnf_b = tape.param(p, self.ids.lnf_b);
        let out = if self.config.tie_embeddings { tok } else { tape.param(p, self.ids.out) };
        Bound {
            tok,
            pos,
            layers,
            lnf_g,
            lnf_b,
            out,
        }
    }

    /// Differentiable forward pass over concatenated sequences, each under
    /// its own visibility mask.
    pub fn forward(&self, tape: &mut Tape, b: &Bound, seqs: &[SeqView<'_>]) -> Result<Forward> {
        if seqs.is_empty() {
            return Err(Error::Contract("forward: empty batch".into()));
        }
        let mut tok_rows = Vec::new();
        let mut pos_rows = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        let (mut offsets, mut lens) = (Vec::new(), Vec::new());
        for s in seqs {
            self.check_ids(s.ids)?;
            if s.mask.len() != s.ids.len() {
                return Err(Error::shape(format!(
                    "mask of size {} for sequence of {}",
                    s.mask.len(),
                    s.ids.len()
                )));
            }
            offsets.push(tok_rows.len());
            lens.push(s.ids.len());
            segments.push(Segment {
                offset: tok_rows.len(),
                len: s.ids.len(),
                visible: s.mask.shared(),
            });
            tok_rows.extend(s.ids.iter().map(|&t| t as usize));
            pos_rows.extend(0..s.ids.len());
        }
        let te = tape.select_rows(b.tok, &tok_rows)?;
        let pe = tape.select_rows(b.pos, &pos_rows)?;
        let mut x = tape.add(te, pe)?;
        for l in &b.layers {
            let [g1, b1, wq, wk, wv, wo, bo, g2, b2, w1, bf1, w2, bf2] = *l;
            let h = tape.layer_norm(x, g1, b1)?;
            let q = tape.matmul(h, wq)?;
            let k = tape.matmul(h, wk)?;
            let v = tape.matmul(h, wv)?;
            let a = tape.attention(q, k, v, &segments, self.config.n_heads)?;
            let o = tape.matmul(a, wo)?;
            let o = tape.add_row(o, bo)?;
            x = tape.add(x, o)?;
            let h2 = tape.layer_norm(x, g2, b2)?;
            let f = tape.matmul(h2, w1)?;
            let f = tape.add_row(f, bf1)?;
            let f = tape.gelu(f);
            let f = tape.matmul(f, w2)?;
            let f = tape.add_row(f, bf2)?;
            x = tape.add(x, f)?;
        }
        let hidden = tape.layer_norm(x, b.lnf_g, b.lnf_b)?;
        Ok(Forward { hidden, offsets, lens })
    }

    /// Vocabulary logits for the given hidden rows (`[m x d] -> [m x V]`).
    pub fn logits(&self, tape: &mut Tape, b: &Bound, rows: Var) -> Result<Var> {
        tape.matmul_t(rows, b.out)
    }

    fn p(&self, id: ParamId) -> &[f64] {
        self.params.get(id).data()
    }

    fn output_matrix(&self) -> &[f64] {
        self.p(self.ids.out)
    }

    /// Plain forward over one sequence (no gradient record). Returns the
    /// final hidden rows and per-layer key/value rows.
    fn run(&self, ids: &[TokenId], mask: &VisibilityMask) -> Result<Encoded> {
        self.check_ids(ids)?;
        if mask.len() != ids.len() || ids.is_empty() {
            return Err(Error::shape("encode: mask/sequence size mismatch"));
        }
        let (n, d) = (ids.len(), self.config.d_model);
        let (tok, pos) = (self.p(self.ids.tok), self.p(self.ids.pos));
        let mut x = vec![0.0; n * d];
        for (i, &t) in ids.iter().enumerate() {
            let t = t as usize;
            for c in 0..d {
                x[i * d + c] = tok[t * d + c] + pos[i * d + c];
            }
        }
        let (mut keys, mut values) = (Vec::new(), Vec::new());
        for l in 0..self.config.n_layers {
            let (k, v) = self.layer(l, &mut x, n, |qrow, i, keys, values, out| {
                self.attend(qrow, keys, values, mask.row(i), out)
            });
            keys.push(k);
            values.push(v);
        }
        Ok((self.final_norm(&x, n), keys, values))
    }

    fn attend(&self, q: &[f64], keys: &[f64], values: &[f64], visible: &[bool], out: &mut [f64]) {
        let (d, dh) = (self.config.d_model, self.config.d_head());
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; visible.len()];
        for h in 0..self.config.n_heads {
            let c0 = h * dh;
            kernels::attention_row(
                &q[c0..c0 + dh],
                keys,
                values,
                d,
                c0,
                visible,
                scale,
                &mut probs,
                &mut out[c0..c0 + dh],
            );
        }
    }

    /// One transformer block over `n` rows of `x`, in place. `attend`
    /// receives (query row, row index, all keys, all values, output).
    /// Returns this block's new key and value rows.
    fn layer<F>(&self, l: usize, x: &mut [f64], n: usize, attend: F) -> (Vec<f64>, Vec<f64>)
    where
        F: Fn(&[f64], usize, &[f64], &[f64], &mut [f64]),
    {
        let ids = self.ids.layers[l];
        let (d, f) = (self.config.d_model, self.config.d_ff);
        let mut h = vec![0.0; n * d];
        for i in 0..n {
            kernels::layer_norm_row(
                &x[i * d..(i + 1) * d],
                self.p(ids.ln1_g),
                self.p(ids.ln1_b),
                &mut h[i * d..(i + 1) * d],
            );
        }
        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        kernels::matmul(&h, self.p(ids.wq), n, d, d, &mut q);
        kernels::matmul(&h, self.p(ids.wk), n, d, d, &mut k);
        kernels::matmul(&h, self.p(ids.wv), n, d, d, &mut v);
        (k, v) = self.finish_layer(l, x, n, q, k, v, &attend, &mut h, f);
        (k, v)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_layer<F>(
        &self,
        l: usize,
        x: &mut [f64],
        n: usize,
        q: Vec<f64>,
        k: Vec<f64>,
        v: Vec<f64>,
        attend: &F,
        h: &mut [f64],
        f: usize,
    ) -> (Vec<f64>, Vec<f64>)
    where
        F: Fn(&[f64], usize, &[f64], &[f64], &mut [f64]),
    {
        let ids = self.ids.layers[l];
        let d = self.config.d_model;
        let mut a = vec![0.0; n * d];
        for i in 0..n {
            attend(&q[i * d..(i + 1) * d], i, &k, &v, &mut a[i * d..(i + 1) * d]);
        }
        let mut o = vec![0.0; n * d];
        kernels::matmul(&a, self.p(ids.wo), n, d, d, &mut o);
        add_bias(&mut o, self.p(ids.bo));
        x.iter_mut().zip(&o).for_each(|(xv, ov)| *xv += ov);
        for i in 0..n {
            kernels::layer_norm_row(
                &x[i * d..(i + 1) * d],
                self.p(ids.ln2_g),
                self.p(ids.ln2_b),
                &mut h[i * d..(i + 1) * d],
            );
        }
        let mut ff = vec![0.0; n * f];
        kernels::matmul(h, self.p(ids.w1), n, d, f, &mut ff);
        add_bias(&mut ff, self.p(ids.b1));
        ff.iter_mut().for_each(|z| *z = kernels::gelu(*z));
        let mut o2 = vec![0.0; n * d];
        kernels::matmul(&ff, self.p(ids.w2), n, f, d, &mut o2);
        add_bias(&mut o2, self.p(ids.b2));
        x.iter_mut().zip(&o2).for_each(|(xv, ov)| *xv += ov);
        (k, v)
    }

    fn final_norm(&self, x: &[f64], n: usize) -> Vec<f64> {
        let d = self.config.d_model;
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            kernels::layer_norm_row(
                &x[i * d..(i + 1) * d],
                self.p(self.ids.lnf_g),
                self.p(self.ids.lnf_b),
                &mut out[i * d..(i + 1) * d],
            );
        }
        out
    }

    fn row_logits(&self, hidden_row: &[f64]) -> Vec<f64> {
        let (d, v) = (self.config.d_model, self.config.vocab_size);
        let mut out = vec![0.0; v];
        kernels::matmul_t(hidden_row, self.output_matrix(), 1, d, v, &mut out);
        out
    }

    /// Encodes one sequence without recording gradients.
    pub fn encode(&self, ids: &[TokenId], mask: &VisibilityMask) -> Result<EncodedTriple> {
        let (hidden, _, _) = self.run(ids, mask)?;
        Ok(EncodedTriple {
            hidden,
            len: ids.len(),
            d: self.config.d_model,
            roles: None,
        })
    }

    /// Encodes a serialized triple (or query prefix) under the configured mask.
    pub fn encode_triple(&self, s: &SerializedTriple) -> Result<EncodedTriple> {
        let mut e = self.encode(&s.ids, &self.build_mask(s))?;
        e.roles = Some((s.pos_h, s.pos_r, s.pos_t));
        Ok(e)
    }

    /// Logits predicting the token at position `i` of an encoded sequence.
    pub fn next_token_logits(&self, e: &EncodedTriple, i: usize) -> Result<Vec<f64>> {
        if i == 0 || i > e.len {
            return Err(Error::Contract(format!(
                "next_token_logits: position {i} outside 1..={}",
                e.len
            )));
        }
        Ok(self.row_logits(e.row(i - 1)))
    }

    /// Starts incremental decoding from a query prefix (ending at `[T]`).
    pub fn start_decoding(&self, query: &SerializedTriple) -> Result<DecoderState> {
        let ids = &query.ids[..query.query_len];
        let mask = VisibilityMask::build(query, self.config.mask_mode).truncated(query.query_len);
        let (hidden, keys, values) = self.run(ids, &mask)?;
        Ok(DecoderState {
            ids: ids.to_vec(),
            query_len: query.query_len,
            hidden,
            keys,
            values,
        })
    }

    /// Logits for the token following the decoder state.
    pub fn state_logits(&self, st: &DecoderState) -> Vec<f64> {
        self.row_logits(st.last_hidden(self.config.d_model))
    }

    pub fn state_log_probs(&self, st: &DecoderState) -> Vec<f64> {
        kernels::log_softmax(&self.state_logits(st))
    }

    /// Appends one tail-side token, reusing cached keys and values.
    pub fn push_token(&self, st: &mut DecoderState, id: TokenId) -> Result<()> {
        let p = st.ids.len();
        if p >= self.config.max_seq_len {
            return Err(Error::Truncation {
                what: "decoded sequence".into(),
                len: p + 1,
                max: self.config.max_seq_len,
            });
        }
        if id as usize >= self.config.vocab_size {
            return Err(Error::Contract(format!("token id {id} outside vocabulary")));
        }
        let d = self.config.d_model;
        let (tok, pos) = (self.p(self.ids.tok), self.p(self.ids.pos));
        let t = id as usize;
        let mut x: Vec<f64> = (0..d).map(|c| tok[t * d + c] + pos[p * d + c]).collect();
        let visible = mask::tail_row(p);
        let f = self.config.d_ff;
        for l in 0..self.config.n_layers {
            let ids = self.ids.layers[l];
            let mut h = vec![0.0; d];
            kernels::layer_norm_row(&x, self.p(ids.ln1_g), self.p(ids.ln1_b), &mut h);
            let mut q = vec![0.0; d];
            let mut k = vec![0.0; d];
            let mut v = vec![0.0; d];
            kernels::matmul(&h, self.p(ids.wq), 1, d, d, &mut q);
            kernels::matmul(&h, self.p(ids.wk), 1, d, d, &mut k);
            kernels::matmul(&h, self.p(ids.wv), 1, d, d, &mut v);
            st.keys[l].extend_from_slice(&k);
            st.values[l].extend_from_slice(&v);
            let (keys, values) = (&st.keys[l], &st.values[l]);
            self.finish_layer(
                l,
                &mut x,
                1,
                q,
                Vec::new(),
                Vec::new(),
                &|qrow: &[f64], _i: usize, _k: &[f64], _v: &[f64], out: &mut [f64]| {
                    self.attend(qrow, keys, values, &visible, out)
                },
                &mut h,
                f,
            );
        }
        let out = self.final_norm(&x, 1);
        st.hidden.extend_from_slice(&out);
        st.ids.push(id);
        Ok(())
    }
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    let n = b.len();
    for row in x.chunks_mut(n) {
        row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
    }
}

/// Final hidden states of one encoded sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTriple {
    hidden: Vec<f64>,
    len: usize,
    d: usize,
    roles: Option<(usize, usize, usize)>,
}

impl EncodedTriple {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.hidden[i * self.d..(i + 1) * self.d]
    }

    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    /// States at the `[H]`, `[R]` and `[T]` markers.
    pub fn extract_role_states(&self) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (h, r, t) = self
            .roles
            .ok_or_else(|| Error::Contract("sequence carries no role markers".into()))?;
        if t >= self.len {
            return Err(Error::Contract("role marker outside the sequence".into()));
        }
        Ok((self.row(h).to_vec(), self.row(r).to_vec(), self.row(t).to_vec()))
    }
}

/// Key/value cache for incremental decoding. Positions can be dropped with
/// [`DecoderState::truncate`] for depth-first walks.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub ids: Vec<TokenId>,
    query_len: usize,
    hidden: Vec<f64>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl DecoderState {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn query_len(&self) -> usize {
        self.query_len
    }

    /// Tokens decoded after `[T]`.
    pub fn generated(&self) -> &[TokenId] {
        &self.ids[self.query_len..]
    }

    fn last_hidden(&self, d: usize) -> &[f64] {
        let n = self.ids.len();
        &self.hidden[(n - 1) * d..n * d]
    }

    /// Hidden state at position `i`.
    pub fn hidden_row(&self, i: usize, d: usize) -> &[f64] {
        &self.hidden[i * d..(i + 1) * d]
    }

    /// Drops positions beyond `len` (never below the query).
    pub fn truncate(&mut self, len: usize) {
        let len = len.max(self.query_len);
        if len >= self.ids.len() {
            return;
        }
        let d = self.hidden.len() / self.ids.len();
        self.ids.truncate(len);
        self.hidden.truncate(len * d);
        for k in self.keys.iter_mut().chain(self.values.iter_mut()) {
            k.truncate(len * d);
        }
    }
}
