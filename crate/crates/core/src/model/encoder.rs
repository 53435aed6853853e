use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::EncodedSequence;
use crate::error::{Error, Result};
use crate::model::params::{glorot, ParamStore};
use crate::model::tape::{SeqLayout, Tape, Var};
use crate::model::ModelConfig;

struct BlockIdx {
    q: (usize, usize),
    k: (usize, usize),
    v: (usize, usize),
    o: (usize, usize),
    attn_ln: (usize, usize),
    ffn_in: (usize, usize),
    ffn_out: (usize, usize),
    ffn_ln: (usize, usize),
}

struct Layout {
    token: usize,
    position: usize,
    embed_ln: (usize, usize),
    blocks: Vec<BlockIdx>,
    dense: (usize, usize),
    head_ln: (usize, usize),
    decoder_bias: usize,
}

impl Layout {
    fn resolve(store: &ParamStore, n_layers: usize) -> Result<Self> {
        let ix = |name: String| {
            store
                .index_of(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name:?}")))
        };
        let pair = |prefix: String, a: &str, b: &str| -> Result<(usize, usize)> {
            Ok((ix(format!("{prefix}.{a}"))?, ix(format!("{prefix}.{b}"))?))
        };
        let lin = |p: String| pair(p, "weight", "bias");
        let ln = |p: String| pair(p, "gamma", "beta");
        let blocks = (0..n_layers)
            .map(|i| {
                Ok(BlockIdx {
                    q: lin(format!("layer{i}.attn.q"))?,
                    k: lin(format!("layer{i}.attn.k"))?,
                    v: lin(format!("layer{i}.attn.v"))?,
                    o: lin(format!("layer{i}.attn.o"))?,
                    attn_ln: ln(format!("layer{i}.attn.ln"))?,
                    ffn_in: lin(format!("layer{i}.ffn.in"))?,
                    ffn_out: lin(format!("layer{i}.ffn.out"))?,
                    ffn_ln: ln(format!("layer{i}.ffn.ln"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Layout {
            token: ix("embed.token".into())?,
            position: ix("embed.position".into())?,
            embed_ln: ln("embed.ln".into())?,
            blocks,
            dense: lin("head.dense".into())?,
            head_ln: ln("head.ln".into())?,
            decoder_bias: ix("head.bias".into())?,
        })
    }
}

/// Encoder and MLM head parameters. The decoder has no storage of its own:
/// it reads the token embedding on every forward.
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    layout: Layout,
}

impl Clone for ModelParams {
    fn clone(&self) -> Self {
        ModelParams::from_store(self.config.clone(), self.store.clone()).unwrap()
    }
}

impl std::fmt::Debug for ModelParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelParams")
            .field("config", &self.config)
            .field("num_values", &self.store.num_values())
            .finish()
    }
}

fn push_linear<R: Rng>(s: &mut ParamStore, name: &str, i: usize, o: usize, rng: &mut R) {
    s.push(format!("{name}.weight"), glorot(i, o, rng));
    s.push(format!("{name}.bias"), Array2::zeros((1, o)));
}

fn push_ln(s: &mut ParamStore, name: &str, d: usize) {
    s.push(format!("{name}.gamma"), Array2::ones((1, d)));
    s.push(format!("{name}.beta"), Array2::zeros((1, d)));
}

impl ModelParams {
    /// Glorot-uniform matrices, zero biases, unit layer-norm gains.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, v) = (config.d_model, config.vocab_size);
        let mut s = ParamStore::new();
        s.push("embed.token", glorot(v, d, rng));
        s.push("embed.position", glorot(config.max_len, d, rng));
        push_ln(&mut s, "embed.ln", d);
        for i in 0..config.n_layers {
            for part in ["q", "k", "v", "o"] {
                push_linear(&mut s, &format!("layer{i}.attn.{part}"), d, d, rng);
            }
            push_ln(&mut s, &format!("layer{i}.attn.ln"), d);
            push_linear(&mut s, &format!("layer{i}.ffn.in"), d, config.d_ff, rng);
            push_linear(&mut s, &format!("layer{i}.ffn.out"), config.d_ff, d, rng);
            push_ln(&mut s, &format!("layer{i}.ffn.ln"), d);
        }
        push_linear(&mut s, "head.dense", d, d, rng);
        push_ln(&mut s, "head.ln", d);
        s.push("head.bias", Array2::zeros((1, v)));
        Self::from_store(config, s)
    }

    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&store, config.n_layers)?;
        let tok = store.value(layout.token);
        if tok.dim() != (config.vocab_size, config.d_model) {
            return Err(Error::shape(
                "embed.token",
                format!("{}x{}", config.vocab_size, config.d_model),
                format!("{}x{}", tok.nrows(), tok.ncols()),
            ));
        }
        Ok(ModelParams {
            config,
            store,
            layout,
        })
    }

    pub fn token_embedding(&self) -> &Array2<f64> {
        self.store.value(self.layout.token)
    }

    /// The MLM decoder weight, `Eᵀ` (d_model × |V|).
    pub fn decoder_weight(&self) -> Array2<f64> {
        self.token_embedding().t().to_owned()
    }

    pub fn decoder_bias_mut(&mut self) -> &mut Array2<f64> {
        &mut self.store.get_mut(self.layout.decoder_bias).value
    }
}

/// Parameters of one store placed on a tape, aligned with store order.
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }
}

/// Frozen parameters enter as constants and never receive gradients.
pub fn bind(tape: &mut Tape, store: &ParamStore) -> Bound {
    let vars = store
        .iter()
        .map(|p| {
            if p.frozen {
                tape.constant(p.value.clone())
            } else {
                tape.param(p.value.clone())
            }
        })
        .collect();
    Bound { vars }
}

/// Padded batch of encoded sequences, truncated to the longest active length.
#[derive(Clone, Debug)]
pub struct BatchInput {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub layout: SeqLayout,
}

impl BatchInput {
    pub fn new(seqs: &[&EncodedSequence], max_len: usize) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Empty("batch"));
        }
        for s in seqs {
            if s.ids.len() > max_len || s.attention_len > max_len {
                return Err(Error::TooLong {
                    len: s.ids.len().max(s.attention_len),
                    max_len,
                });
            }
        }
        let seq_len = seqs.iter().map(|s| s.attention_len).max().unwrap();
        let mut ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut positions = Vec::with_capacity(seqs.len() * seq_len);
        for s in seqs {
            for t in 0..seq_len {
                ids.push(s.ids.get(t).copied().unwrap_or(crate::corpus::Vocabulary::PAD_ID));
                positions.push(t);
            }
        }
        Ok(BatchInput {
            ids,
            positions,
            layout: SeqLayout {
                seq_len,
                lens: seqs.iter().map(|s| s.attention_len).collect(),
            },
        })
    }

    pub fn n_seq(&self) -> usize {
        self.layout.n_seq()
    }

    pub fn row(&self, seq: usize, pos: usize) -> usize {
        self.layout.row(seq, pos)
    }
}

/// Dropout probability plus the generator that draws its masks.
pub struct DropoutCtx<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl DropoutCtx<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.p <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.p;
        let (r, c) = tape.value(x).dim();
        let rng = &mut *self.rng;
        let mask = Array2::from_shape_fn((r, c), |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        tape.dropout(x, mask)
    }
}

/// Post-LN transformer encoder. Returns `[n_seq * seq_len, d_model]` hidden states.
pub fn encode_batch(
    tape: &mut Tape,
    model: &ModelParams,
    bound: &Bound,
    batch: &BatchInput,
    mut dropout: Option<&mut DropoutCtx<'_>>,
) -> Var {
    let l = &model.layout;
    let b = |i: usize| bound.var(i);
    let mut drop = |tape: &mut Tape, x: Var| match dropout.as_deref_mut() {
        Some(ctx) => ctx.apply(tape, x),
        None => x,
    };

    let tok = tape.embed(b(l.token), &batch.ids);
    let pos = tape.embed(b(l.position), &batch.positions);
    let x = tape.add(tok, pos);
    let x = tape.layer_norm(x, b(l.embed_ln.0), b(l.embed_ln.1));
    let mut x = drop(tape, x);

    for blk in &l.blocks {
        let q = tape.linear(x, b(blk.q.0), b(blk.q.1));
        let k = tape.linear(x, b(blk.k.0), b(blk.k.1));
        let v = tape.linear(x, b(blk.v.0), b(blk.v.1));
        let a = tape.attention(q, k, v, &batch.layout, model.config.n_heads);
        let o = tape.linear(a, b(blk.o.0), b(blk.o.1));
        let o = drop(tape, o);
        let res = tape.add(x, o);
        let h = tape.layer_norm(res, b(blk.attn_ln.0), b(blk.attn_ln.1));

        let f = tape.linear(h, b(blk.ffn_in.0), b(blk.ffn_in.1));
        let f = tape.gelu(f);
        let f = tape.linear(f, b(blk.ffn_out.0), b(blk.ffn_out.1));
        let f = drop(tape, f);
        let res = tape.add(h, f);
        x = tape.layer_norm(res, b(blk.ffn_ln.0), b(blk.ffn_ln.1));
    }
    x
}

/// Vocabulary logits for the given hidden rows: `layernorm(gelu(dense(h))) · Eᵀ + bias`.
pub fn mlm_logits(tape: &mut Tape, model: &ModelParams, bound: &Bound, hidden_rows: Var) -> Var {
    let l = &model.layout;
    let b = |i: usize| bound.var(i);
    let h = tape.linear(hidden_rows, b(l.dense.0), b(l.dense.1));
    let h = tape.gelu(h);
    let h = tape.layer_norm(h, b(l.head_ln.0), b(l.head_ln.1));
    let logits = tape.matmul_t(h, b(l.token));
    tape.add_row(logits, b(l.decoder_bias))
}

/// Hidden states of one sequence, `attention_len × d_model`.
pub fn encoder_forward(
    seq: &EncodedSequence,
    params: &ModelParams,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let batch = BatchInput::new(&[seq], params.config.max_len)?;
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &params.store);
    let mut ctx = DropoutCtx {
        p: params.config.dropout_p,
        rng,
    };
    let h = encode_batch(
        &mut tape,
        params,
        &bound,
        &batch,
        train_mode.then_some(&mut ctx),
    );
    let out = tape.value(h).slice(ndarray::s![..seq.attention_len, ..]).to_owned();
    Ok(out)
}

/// Vocabulary logit vector at one position of precomputed hidden states.
pub fn mlm_forward(hidden: &Array2<f64>, pos: usize, params: &ModelParams) -> Result<Vec<f64>> {
    if pos >= hidden.nrows() {
        return Err(Error::OutOfRange {
            what: "hidden states",
            index: pos,
            len: hidden.nrows(),
        });
    }
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &params.store);
    let row = tape.constant(hidden.row(pos).insert_axis(Axis(0)).to_owned());
    let logits = mlm_logits(&mut tape, params, &bound, row);
    let v = tape.value(logits).row(0).to_vec();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("MLM prediction".into()));
    }
    Ok(v)
}

/// Per-parameter gradients aligned with store order; `None` for frozen or
/// unused parameters.
#[derive(Debug)]
pub struct ParamGrads {
    pub grads: Vec<Option<Array2<f64>>>,
}

impl ParamGrads {
    pub fn count(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }
}

/// Rejects a non-finite loss, then backpropagates into every bound store.
pub fn compute_gradients(
    tape: &Tape,
    loss: Var,
    stores: &[(&ParamStore, &Bound)],
) -> Result<Vec<ParamGrads>> {
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss ({value})")));
    }
    let mut grads = tape.backward(loss);
    Ok(stores
        .iter()
        .map(|(store, bound)| collect_grads(&mut grads, store, bound))
        .collect())
}

pub fn collect_grads(
    grads: &mut crate::model::tape::Gradients,
    store: &ParamStore,
    bound: &Bound,
) -> ParamGrads {
    ParamGrads {
        grads: store
            .iter()
            .zip(&bound.vars)
            .map(|(p, &v)| if p.frozen { None } else { grads.take(v) })
            .collect(),
    }
}
