//! The full two-branch model: parameters, initialization, fusion, dropout
//! and the softmax head with cross-entropy loss.

pub mod checkpoint;

use rand::Rng as _;

use crate::cograph::{self, Adjacency, AdjacencyMode};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::init;
use crate::numerics::{ParamGrad, ParamSet, Tape, Tensor, Var};
use crate::seed::{self, Rng};
use crate::semantic::{
    conv_bank, gru_forward, masked_mean_pool, multi_head_attention, ConvBankParams, GruParams, MhaParams,
};
use crate::structural::{bigcn_forward, graph_mean_pool, BigcnParams};
use crate::textdata::{EncodedExample, PAD};

/// Floor applied to the true-class probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Embedding rows are drawn from U(-EMBED_INIT, EMBED_INIT).
pub const EMBED_INIT: f64 = 0.05;

/// Architecture dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters: usize,
    pub gru_hidden: usize,
    pub heads: usize,
    pub bidirectional: bool,
    pub gru_bias: bool,
    pub gcn_hidden: usize,
    pub gcn_bias: bool,
    pub shared_embedding: bool,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn from_run(cfg: &RunConfig, vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: cfg.embed_dim,
            kernel_sizes: cfg.kernel_sizes.clone(),
            filters: cfg.filters_per_kernel,
            gru_hidden: cfg.gru_hidden,
            heads: cfg.heads,
            bidirectional: cfg.bidirectional_gru,
            gru_bias: cfg.gru_bias,
            gcn_hidden: cfg.gcn_hidden,
            gcn_bias: cfg.gcn_bias,
            shared_embedding: cfg.shared_embedding,
            dropout: cfg.dropout,
        }
    }

    /// Width of the fused representation fed to the head.
    pub fn fused_dim(&self) -> usize {
        self.gru_hidden + 2 * self.gcn_hidden
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size.saturating_sub(1),
            self.embed_dim,
            self.filters,
            self.gru_hidden,
            self.heads,
            self.gcn_hidden,
        ];
        if dims.contains(&0) || self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
            return Err(Error::Config(format!("inconsistent model dimensions: {self:?}")));
        }
        if !self.gru_hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} attention heads do not divide width {}",
                self.heads, self.gru_hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `fused×2`
    pub w: Tensor,
    pub b: Tensor,
}

/// Every learnable tensor of the model, addressable by a stable dotted path.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embedding: Tensor,
    /// Separate structural-branch table when embeddings are not shared.
    pub gcn_embedding: Option<Tensor>,
    pub conv: ConvBankParams,
    pub gru_fwd: GruParams,
    pub gru_bwd: Option<GruParams>,
    /// `2h×h` merge of the two GRU directions.
    pub gru_proj: Option<Tensor>,
    pub mha: MhaParams,
    pub gcn: BigcnParams,
    pub head: HeadParams,
}

impl ModelParams {
    /// Names of tables whose row `PAD` is pinned to zero.
    pub const EMBEDDING_TABLES: [&'static str; 2] = ["embedding", "gcn.embedding"];

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|(_, t)| t.is_finite())
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.entries_mut() {
            t.zero_grad();
        }
    }

    /// Adds tape gradients (by parameter name) into the gradient slots.
    pub fn accumulate(&mut self, grads: &[(String, ParamGrad)]) -> Result<()> {
        let mut entries = self.entries_mut();
        for (name, g) in grads {
            let (_, t) = entries
                .iter_mut()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::State(format!("gradient for unknown parameter {name}")))?;
            g.accumulate_into(t)?;
        }
        Ok(())
    }
}

impl ParamSet for ModelParams {
    fn entries(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        if let Some(t) = &self.gcn_embedding {
            out.push(("gcn.embedding".into(), t));
        }
        out.extend(self.conv.entries("conv"));
        out.extend(self.gru_fwd.entries("gru.fwd"));
        if let Some(b) = &self.gru_bwd {
            out.extend(b.entries("gru.bwd"));
        }
        if let Some(t) = &self.gru_proj {
            out.push(("gru.proj".into(), t));
        }
        out.extend(self.mha.entries("mha"));
        out.extend(self.gcn.entries("gcn"));
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    fn entries_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding)];
        if let Some(t) = &mut self.gcn_embedding {
            out.push(("gcn.embedding".into(), t));
        }
        out.extend(self.conv.entries_mut("conv"));
        out.extend(self.gru_fwd.entries_mut("gru.fwd"));
        if let Some(b) = &mut self.gru_bwd {
            out.extend(b.entries_mut("gru.bwd"));
        }
        if let Some(t) = &mut self.gru_proj {
            out.push(("gru.proj".into(), t));
        }
        out.extend(self.mha.entries_mut("mha"));
        out.extend(self.gcn.entries_mut("gcn"));
        out.push(("head.w".into(), &mut self.head.w));
        out.push(("head.b".into(), &mut self.head.b));
        out
    }
}

fn embedding_table(vocab: usize, dim: usize, rng: &mut Rng) -> Tensor {
    let mut t = init::uniform(&[vocab, dim], EMBED_INIT, rng);
    t.data_mut()[PAD * dim..(PAD + 1) * dim].iter_mut().for_each(|v| *v = 0.0);
    t
}

/// Glorot-uniform weights, zero biases, small uniform embeddings with a zero
/// `PAD` row. Sampling order follows [`ParamSet::entries`].
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = seed::rng(seed, &[0x1417]);
    let d = config.embed_dim;
    let h = config.gru_hidden;
    let embedding = embedding_table(config.vocab_size, d, &mut rng);
    let gcn_embedding = (!config.shared_embedding).then(|| embedding_table(config.vocab_size, d, &mut rng));
    let conv = ConvBankParams::init(&config.kernel_sizes, config.filters, d, &mut rng);
    let channels = conv.channels();
    let gru_fwd = GruParams::init(channels, h, config.gru_bias, &mut rng);
    let gru_bwd = config
        .bidirectional
        .then(|| GruParams::init(channels, h, config.gru_bias, &mut rng));
    let gru_proj = config.bidirectional.then(|| init::glorot_matrix(2 * h, h, &mut rng));
    let mha = MhaParams::init(h, config.heads, &mut rng)?;
    let gcn = BigcnParams::init(d, config.gcn_hidden, config.gcn_bias, &mut rng);
    let head = HeadParams {
        w: init::glorot_matrix(config.fused_dim(), 2, &mut rng),
        b: init::zeros(&[2]),
    };
    Ok(ModelParams {
        embedding,
        gcn_embedding,
        conv,
        gru_fwd,
        gru_bwd,
        gru_proj,
        mha,
        gcn,
        head,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }
}

/// An encoded example together with its co-occurrence graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub example: EncodedExample,
    pub adjacency: Adjacency,
}

impl Sample {
    pub fn new(example: EncodedExample, window: usize, mode: AdjacencyMode) -> Result<Self> {
        let raw = cograph::build_cooccurrence(&example, window)?;
        Ok(Sample {
            adjacency: cograph::normalize(&raw, mode),
            example,
        })
    }

    pub fn label(&self) -> Option<u8> {
        self.example.label
    }
}

/// Concatenation with the sequential representation first.
pub fn fuse(tape: &mut Tape<'_>, h_attn: Var, h_gcn: Var) -> Result<Var> {
    tape.concat_cols(&[h_attn, h_gcn])
}

/// Inverted dropout: in training each entry is zeroed with probability `p`
/// and survivors are scaled by `1/(1-p)`; otherwise the identity.
pub fn dropout(tape: &mut Tape<'_>, x: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Value(format!("dropout rate {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let scale = 1.0 / (1.0 - p);
    let n = tape.value(x).len();
    let keep: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
        .collect();
    let keep = tape.constant(Tensor::new(tape.shape(x).to_vec(), keep)?);
    tape.mul(x, keep)
}

/// Output of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: [f64; 2],
    /// Cross-entropy against the example's label, when it has one.
    pub loss: Option<f64>,
    /// Argmax class; ties go to class 0.
    pub pred: u8,
}

struct Recorded {
    probs: Var,
    loss: Option<Var>,
}

/// Records the whole model on `tape` for explicit ids/mask/graph. Shapes are
/// whatever length `ids` has; callers decide whether padding is included.
#[allow(clippy::too_many_arguments)]
fn record<'a>(
    tape: &mut Tape<'a>,
    cfg: &ModelConfig,
    p: &'a ModelParams,
    ids: &[usize],
    mask: &[bool],
    adj: &Adjacency,
    label: Option<u8>,
    training: bool,
    rng: &mut Rng,
) -> Result<Recorded> {
    if ids.len() != mask.len() || adj.size() != ids.len() {
        return Err(Error::Dimension(format!(
            "{} ids, {} mask entries, {}-node graph",
            ids.len(),
            mask.len(),
            adj.size()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Contract("example has no valid positions".into()));
    }
    let table = tape.param("embedding", &p.embedding);
    let e = tape.gather_rows(table, ids)?;

    let conv = p.conv.bind(tape, "conv");
    let fwd = p.gru_fwd.bind(tape, "gru.fwd");
    let bwd = p.gru_bwd.as_ref().map(|g| g.bind(tape, "gru.bwd"));
    let mha = p.mha.bind(tape, "mha");
    let gcn = p.gcn.bind(tape, "gcn");

    let maps = conv_bank(tape, e, &conv)?;
    let mut seq = gru_forward(tape, maps, mask, &fwd, bwd.as_ref())?;
    if let Some(proj) = &p.gru_proj {
        let proj = tape.param("gru.proj", proj);
        seq = tape.matmul(seq, proj)?;
    }
    let att = multi_head_attention(tape, seq, mask, &mha)?;
    let h_attn = masked_mean_pool(tape, att, mask)?;

    let x = match &p.gcn_embedding {
        Some(t) => {
            let t = tape.param("gcn.embedding", t);
            tape.gather_rows(t, ids)?
        }
        None => e,
    };
    let graph = bigcn_forward(tape, x, adj, &gcn)?;
    let h_gcn = graph_mean_pool(tape, graph, mask)?;

    let fused = fuse(tape, h_attn, h_gcn)?;
    let fused = dropout(tape, fused, cfg.dropout, training, rng)?;
    let width = tape.value(fused).len();
    let row = tape.reshape(fused, &[1, width])?;
    let w = tape.param("head.w", &p.head.w);
    let b = tape.param("head.b", &p.head.b);
    let logits = tape.matmul(row, w)?;
    let logits = tape.add(logits, b)?;
    let probs = tape.softmax_rows(logits)?;
    let loss = match label {
        None => None,
        Some(l) if l <= 1 => {
            let pick = tape.index(probs, l as usize)?;
            let lp = tape.log_clamped(pick, PROB_FLOOR)?;
            Some(tape.affine(lp, -1.0, 0.0)?)
        }
        Some(l) => return Err(Error::Value(format!("label {l} outside {{0,1}}"))),
    };
    Ok(Recorded { probs, loss })
}

/// Valid positions of an encoded example form a prefix; everything past it is
/// padding that provably does not affect the output (zero embeddings, masked
/// recurrence, masked attention, isolated graph nodes). Computing on the
/// prefix alone is therefore exact.
fn effective_inputs(sample: &Sample) -> (Vec<usize>, Vec<bool>, Adjacency) {
    let ex = &sample.example;
    let is_prefix = ex.mask.iter().enumerate().all(|(i, &m)| m == (i < ex.true_len));
    if is_prefix && ex.true_len > 0 {
        let n = ex.true_len;
        (ex.ids[..n].to_vec(), vec![true; n], sample.adjacency.prefix(n))
    } else {
        (ex.ids.clone(), ex.mask.clone(), sample.adjacency.clone())
    }
}

fn prediction(tape: &Tape<'_>, rec: &Recorded) -> Result<Prediction> {
    let pv = tape.value(rec.probs);
    let probs = [pv[0], pv[1]];
    let loss = rec.loss.map(|l| tape.scalar(l));
    if !probs.iter().all(|p| p.is_finite()) || loss.is_some_and(|l| !l.is_finite()) {
        return Err(Error::Numeric(format!("non-finite output: probs {probs:?}, loss {loss:?}")));
    }
    Ok(Prediction {
        probs,
        loss,
        pred: u8::from(probs[1] > probs[0]),
    })
}

/// One forward pass. `rng` drives dropout and is untouched when `training`
/// is false.
pub fn forward(model: &Model, sample: &Sample, training: bool, rng: &mut Rng) -> Result<Prediction> {
    let (ids, mask, adj) = effective_inputs(sample);
    let mut tape = Tape::new();
    let rec = record(&mut tape, &model.config, &model.params, &ids, &mask, &adj, sample.label(), training, rng)?;
    prediction(&tape, &rec)
}

/// Inference-mode forward.
pub fn predict(model: &Model, sample: &Sample) -> Result<Prediction> {
    let mut unused = seed::rng(0, &[]);
    forward(model, sample, false, &mut unused)
}

/// Training-mode forward plus backward of the example's loss.
pub fn loss_and_grads(
    model: &Model,
    sample: &Sample,
    training: bool,
    rng: &mut Rng,
) -> Result<(Prediction, Vec<(String, ParamGrad)>)> {
    if sample.label().is_none() {
        return Err(Error::Contract("cannot compute a loss for an unlabelled example".into()));
    }
    let (ids, mask, adj) = effective_inputs(sample);
    let mut tape = Tape::new();
    let rec = record(&mut tape, &model.config, &model.params, &ids, &mask, &adj, sample.label(), training, rng)?;
    let out = prediction(&tape, &rec)?;
    tape.backward(rec.loss.expect("labelled"))?;
    Ok((out, tape.param_grads()))
}

/// Records the model on a caller-provided tape using the full padded length.
/// Exposed for gradient checking and for comparing against the trimmed path.
pub fn record_loss<'a>(
    tape: &mut Tape<'a>,
    config: &ModelConfig,
    params: &'a ModelParams,
    sample: &Sample,
) -> Result<Var> {
    let ex = &sample.example;
    let label = ex
        .label
        .ok_or_else(|| Error::Contract("cannot compute a loss for an unlabelled example".into()))?;
    let mut unused = seed::rng(0, &[]);
    let rec = record(tape, config, params, &ex.ids, &ex.mask, &sample.adjacency, Some(label), false, &mut unused)?;
    Ok(rec.loss.expect("labelled"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textdata::{encode, Vocabulary};

    fn toy_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            embed_dim: 8,
            kernel_sizes: vec![3, 4, 5],
            filters: 4,
            gru_hidden: 6,
            heads: 2,
            bidirectional: false,
            gru_bias: true,
            gcn_hidden: 4,
            gcn_bias: false,
            shared_embedding: true,
            dropout: 0.0,
        }
    }

    fn toy_sample(label: u8) -> Sample {
        let ex = EncodedExample {
            ids: vec![3, 7, 2, 11, 5, 0, 0],
            mask: vec![true, true, true, true, true, false, false],
            true_len: 5,
            label: Some(label),
        };
        Sample::new(ex, 3, AdjacencyMode::Raw).unwrap()
    }

    #[test]
    fn zero_head_gives_uniform_probs_and_ln2_loss() {
        let mut m = Model::new(toy_config(), 1).unwrap();
        m.params.head.w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let out = predict(&m, &toy_sample(1)).unwrap();
        assert_eq!(out.probs, [0.5, 0.5]);
        assert!((out.loss.unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(out.pred, 0);
    }

    #[test]
    fn same_seed_same_params_and_zero_pad_row() {
        let a = init_params(&toy_config(), 9).unwrap();
        let b = init_params(&toy_config(), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(&toy_config(), 10).unwrap());
        assert!(a.embedding.row(PAD).iter().all(|&v| v == 0.0));
        let w = &a.gcn.w_f;
        let bound = (6.0f64 / (w.shape()[0] + w.shape()[1]) as f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn param_names_are_unique() {
        let mut cfg = toy_config();
        cfg.bidirectional = true;
        cfg.shared_embedding = false;
        cfg.gcn_bias = true;
        let p = init_params(&cfg, 3).unwrap();
        let names: Vec<String> = p.entries().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(names.len(), dedup.len());
        assert!(names.contains(&"gru.proj".to_string()));
        assert!(names.contains(&"gcn.embedding".to_string()));
    }

    #[test]
    fn inconsistent_dims_are_config_errors() {
        let mut cfg = toy_config();
        cfg.heads = 4;
        assert!(matches!(init_params(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn trimmed_forward_equals_padded_forward() {
        let m = Model::new(toy_config(), 4).unwrap();
        let s = toy_sample(0);
        let trimmed = predict(&m, &s).unwrap();
        let mut tape = Tape::new();
        let loss = record_loss(&mut tape, &m.config, &m.params, &s).unwrap();
        assert!((tape.scalar(loss) - trimmed.loss.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dropout_contract() {
        let mut rng = seed::rng(1, &[]);
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        assert_eq!(dropout(&mut t, x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut t, x, 0.5, false, &mut rng).unwrap(), x);
        assert!(matches!(dropout(&mut t, x, 1.0, true, &mut rng), Err(Error::Value(_))));
        let y = dropout(&mut t, x, 0.5, true, &mut rng).unwrap();
        for (a, b) in t.value(y).iter().zip([1.0, 2.0, 3.0]) {
            assert!(*a == 0.0 || *a == 2.0 * b);
        }
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = seed::rng(77, &[]);
        let mut t = Tape::new();
        let x = t.constant(Tensor::filled(&[100_000], 3.0));
        let y = dropout(&mut t, x, 0.5, true, &mut rng).unwrap();
        let mean = t.value(y).iter().sum::<f64>() / 100_000.0;
        assert!((mean - 3.0).abs() / 3.0 < 0.02, "{mean}");
    }

    #[test]
    fn fuse_orders_semantic_first() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = t.constant(Tensor::vector(vec![3.0]).unwrap());
        let f = fuse(&mut t, a, b).unwrap();
        assert_eq!(t.value(f), &[1.0, 2.0, 3.0]);
        let c = t.constant(Tensor::vector(vec![5.0, 6.0]).unwrap());
        let ac = fuse(&mut t, a, c).unwrap();
        let ca = fuse(&mut t, c, a).unwrap();
        assert_ne!(t.value(ac), t.value(ca));
    }

    #[test]
    fn all_masked_example_is_rejected() {
        let m = Model::new(toy_config(), 4).unwrap();
        let ex = EncodedExample {
            ids: vec![0; 3],
            mask: vec![false; 3],
            true_len: 0,
            label: Some(0),
        };
        let s = Sample::new(ex, 2, AdjacencyMode::Raw).unwrap();
        assert!(matches!(predict(&m, &s), Err(Error::Contract(_))));
    }

    #[test]
    fn unknown_words_encode_to_unk_and_still_predict() {
        let vocab = Vocabulary::from_tsv("<pad>\t0\n<unk>\t1\na\t2\n").unwrap();
        let mut cfg = toy_config();
        cfg.vocab_size = vocab.len();
        let m = Model::new(cfg, 2).unwrap();
        let ex = encode(&["zzz".to_string(), "a".to_string()], &vocab, 6).unwrap();
        let s = Sample::new(ex, 3, AdjacencyMode::RowNorm).unwrap();
        let out = predict(&m, &s).unwrap();
        assert!((out.probs[0] + out.probs[1] - 1.0).abs() < 1e-12);
        assert!(out.loss.is_none());
    }
}
