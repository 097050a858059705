//! SHENet-mini: trajectory encoder, scene-token encoder, two-stream
//! cross-modal transformer and the offset head.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::trajdata::{Point, SceneRaster};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionBlockConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_traj: usize,
    pub n_layers_cross: usize,
    pub dropout: f64,
}

impl Default for AttentionBlockConfig {
    fn default() -> Self {
        Self { d_model: 32, n_heads: 4, n_layers_traj: 2, n_layers_cross: 2, dropout: 0.0 }
    }
}

/// Global pooling over refined scene tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub attention: AttentionBlockConfig,
    /// Hidden width of every position-wise feed-forward block.
    pub d_ff: usize,
    pub positional_encoding: bool,
    pub pooling: Pooling,
    pub t_pas: usize,
    pub t_fut: usize,
    pub n_cls: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            attention: AttentionBlockConfig::default(),
            d_ff: 64,
            positional_encoding: true,
            pooling: Pooling::Mean,
            t_pas: 8,
            t_fut: 12,
            n_cls: SceneRaster::DEFAULT_CLASSES,
            grid_h: SceneRaster::DEFAULT_SIDE,
            grid_w: SceneRaster::DEFAULT_SIDE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.attention;
        if a.d_model == 0 || a.n_heads == 0 || a.d_model % a.n_heads != 0 {
            return Err(Error::config(format!(
                "model.d_model = {} must be a positive multiple of model.n_heads = {}",
                a.d_model, a.n_heads
            )));
        }
        if a.n_layers_traj == 0 || a.n_layers_cross == 0 {
            return Err(Error::config("model.n_layers_traj and model.n_layers_cross must be at least 1"));
        }
        if !(0.0..1.0).contains(&a.dropout) {
            return Err(Error::config(format!("model.dropout = {} must be in [0, 1)", a.dropout)));
        }
        if self.d_ff == 0 || self.t_pas == 0 || self.t_fut == 0 || self.n_cls == 0 || self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        Ok(())
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let d = self.attention.d_model;
        let f = self.d_ff;
        let lin = |i: usize, o: usize| i * o + o;
        let mha = 4 * lin(d, d);
        let norm = 2 * d;
        let ffn = lin(d, f) + lin(f, d);
        let enc_layer = mha + norm + ffn + norm;
        let n_tra = self.attention.n_layers_traj;
        let traj = lin(2, d) + n_tra * enc_layer + lin(n_tra * d, d);
        let scene = lin(self.grid_h * self.grid_w, d);
        let stream = mha + norm + mha + norm + ffn + norm;
        let cross = 2 * self.attention.n_layers_cross * stream;
        let head = lin(2 * d, d) + lin(d, 2 * self.t_fut);
        traj + scene + cross + head
    }
}

#[derive(Clone, Copy, Debug)]
struct P(usize);

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: P,
    b: P,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: P,
    b: P,
}

#[derive(Clone, Copy, Debug)]
struct Mha {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Copy, Debug)]
struct Ffn {
    up: Linear,
    down: Linear,
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    attn: Mha,
    n1: Norm,
    ffn: Ffn,
    n2: Norm,
}

#[derive(Clone, Copy, Debug)]
struct CrossStream {
    ca: Mha,
    n1: Norm,
    sa: Mha,
    n2: Norm,
    ffn: Ffn,
    n3: Norm,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: Linear,
    encoder: Vec<EncoderLayer>,
    merge: Linear,
    scene: Linear,
    cross: Vec<(CrossStream, CrossStream)>,
    head_hidden: Linear,
    head_out: Linear,
}

struct Builder {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, data: Vec<f64>) -> P {
        self.names.push(name);
        self.tensors.push(Tensor::matrix(rows, cols, data).with_grad());
        P(self.tensors.len() - 1)
    }

    /// Xavier-uniform weights scaled by `gain`, zero bias.
    fn linear(&mut self, name: &str, i: usize, o: usize, gain: f64) -> Linear {
        let a = gain * (6.0 / (i + o) as f64).sqrt();
        let w = (0..i * o).map(|_| self.rng.random_range(-a..a)).collect();
        Linear {
            w: self.tensor(format!("{name}.weight"), i, o, w),
            b: self.tensor(format!("{name}.bias"), 1, o, vec![0.0; o]),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.tensor(format!("{name}.gamma"), 1, d, vec![1.0; d]),
            b: self.tensor(format!("{name}.beta"), 1, d, vec![0.0; d]),
        }
    }

    fn mha(&mut self, name: &str, d: usize) -> Mha {
        Mha {
            q: self.linear(&format!("{name}.q"), d, d, 1.0),
            k: self.linear(&format!("{name}.k"), d, d, 1.0),
            v: self.linear(&format!("{name}.v"), d, d, 1.0),
            o: self.linear(&format!("{name}.o"), d, d, 1.0),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, f: usize) -> Ffn {
        Ffn { up: self.linear(&format!("{name}.up"), d, f, 1.0), down: self.linear(&format!("{name}.down"), f, d, 1.0) }
    }
}

/// Trainable weights of the refinement network plus the config that fixes
/// their shapes.
#[derive(Clone, Debug)]
pub struct ShenetParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    layout: Layout,
}

impl ShenetParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.attention.d_model;
        let f = config.d_ff;
        let mut b = Builder { names: Vec::new(), tensors: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
        let embed = b.linear("traj.embed", 2, d, 1.0);
        let encoder = (0..config.attention.n_layers_traj)
            .map(|l| EncoderLayer {
                attn: b.mha(&format!("traj.layer{l}.attn"), d),
                n1: b.norm(&format!("traj.layer{l}.norm1"), d),
                ffn: b.ffn(&format!("traj.layer{l}.ffn"), d, f),
                n2: b.norm(&format!("traj.layer{l}.norm2"), d),
            })
            .collect();
        let merge = b.linear("traj.merge", config.attention.n_layers_traj * d, d, 1.0);
        let scene = b.linear("scene.proj", config.grid_h * config.grid_w, d, 1.0);
        let stream = |b: &mut Builder, name: String| CrossStream {
            ca: b.mha(&format!("{name}.ca"), d),
            n1: b.norm(&format!("{name}.norm1"), d),
            sa: b.mha(&format!("{name}.sa"), d),
            n2: b.norm(&format!("{name}.norm2"), d),
            ffn: b.ffn(&format!("{name}.ffn"), d, f),
            n3: b.norm(&format!("{name}.norm3"), d),
        };
        let cross = (0..config.attention.n_layers_cross)
            .map(|l| (stream(&mut b, format!("cross{l}.traj")), stream(&mut b, format!("cross{l}.scene"))))
            .collect();
        let head_hidden = b.linear("head.hidden", 2 * d, d, 1.0);
        // small output weights so the untrained head starts near the retrieved candidate
        let head_out = b.linear("head.out", d, 2 * config.t_fut, 0.1);
        let layout = Layout { embed, encoder, merge, scene, cross, head_hidden, head_out };
        Ok(Self { config: config.clone(), names: b.names, tensors: b.tensors, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    /// All parameters as one flat vector, in declaration order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!("{} values for {} parameters", flat.len(), self.param_count())));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Copy gradients of one backward pass into each tensor's `grad` slot
    /// (zero for parameters the loss does not reach).
    pub fn store_grads(&mut self, session_vars: &[Var], grads: &Gradients) {
        for (t, v) in self.tensors.iter_mut().zip(session_vars) {
            t.grad = Some(grads.get(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec));
        }
    }

    /// Offsets for one observed past, evaluated without dropout.
    pub fn offsets(&self, past: &[Point], raster: &SceneRaster) -> Result<Vec<Point>> {
        let mut s = Session::new(self);
        let out = s.forward(past, raster)?;
        Ok(s.points(out))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| NamedTensor { name: n.clone(), shape: t.shape.clone(), data: t.data.clone() })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint version {} (expected {CHECKPOINT_VERSION})", ck.version)));
        }
        let mut p = Self::init(&ck.config, 0)?;
        if ck.tensors.len() != p.tensors.len() {
            return Err(Error::Format(format!("checkpoint has {} tensors, config needs {}", ck.tensors.len(), p.tensors.len())));
        }
        for (i, nt) in ck.tensors.iter().enumerate() {
            if nt.name != p.names[i] || nt.shape != p.tensors[i].shape || nt.data.len() != p.tensors[i].len() {
                return Err(Error::Format(format!("checkpoint tensor {i} ({}) does not match the model layout", nt.name)));
            }
            p.tensors[i].data.clone_from(&nt.data);
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    /// Load a checkpoint, rejecting it unless its config equals `expected`.
    pub fn load(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let Some(e) = expected {
            if *e != ck.config {
                return Err(Error::config("checkpoint was trained with a different model config"));
            }
        }
        Self::from_checkpoint(&ck)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}

/// Attention probabilities of one head (`queries × keys`) recorded during a
/// forward pass.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    pub label: String,
    pub head: usize,
    pub weights: Var,
}

/// One forward graph over a parameter set.
pub struct Session<'p> {
    pub graph: Graph,
    params: &'p ShenetParams,
    vars: Vec<Var>,
    dropout: Option<ChaCha8Rng>,
    pub attention: Vec<AttentionMap>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ShenetParams) -> Self {
        let mut graph = Graph::new();
        let vars = params.tensors.iter().map(|t| graph.param(t.clone())).collect();
        Self { graph, params, vars, dropout: None, attention: Vec::new() }
    }

    /// Enable dropout (at the configured rate) with a dedicated RNG stream.
    pub fn with_dropout(mut self, seed: u64) -> Self {
        if self.params.config.attention.dropout > 0.0 {
            self.dropout = Some(ChaCha8Rng::seed_from_u64(seed));
        }
        self
    }

    /// Graph handles of the parameters, in declaration order.
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    pub fn points(&self, v: Var) -> Vec<Point> {
        self.graph.value(v).data.chunks(2).map(|c| [c[0], c[1]]).collect()
    }

    pub fn constant_points(&mut self, pts: &[Point]) -> Var {
        self.graph.constant(Tensor::matrix(pts.len(), 2, pts.iter().flat_map(|p| *p).collect()))
    }

    fn v(&self, p: P) -> Var {
        self.vars[p.0]
    }

    fn linear(&mut self, l: Linear, x: Var) -> Var {
        let y = self.graph.matmul(x, self.v(l.w));
        self.graph.add_row(y, self.v(l.b))
    }

    fn norm(&mut self, n: Norm, x: Var) -> Var {
        self.graph.layer_norm(x, self.v(n.g), self.v(n.b))
    }

    fn drop(&mut self, x: Var) -> Var {
        let Some(rng) = self.dropout.as_mut() else { return x };
        let p = self.params.config.attention.dropout;
        let t = self.graph.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask = (0..t.len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let m = self.graph.constant(Tensor::matrix(t.rows(), t.cols(), mask));
        self.graph.mul(x, m)
    }

    fn ffn(&mut self, f: Ffn, x: Var) -> Var {
        let h = self.linear(f.up, x);
        let h = self.graph.gelu(h);
        self.linear(f.down, h)
    }

    fn mha(&mut self, m: Mha, label: &str, q_in: Var, kv_in: Var) -> Var {
        let d = self.params.config.attention.d_model;
        let heads = self.params.config.attention.n_heads;
        let dh = d / heads;
        let q = self.linear(m.q, q_in);
        let k = self.linear(m.k, kv_in);
        let v = self.linear(m.v, kv_in);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.graph.slice_cols(q, h * dh, dh);
            let kh = self.graph.slice_cols(k, h * dh, dh);
            let vh = self.graph.slice_cols(v, h * dh, dh);
            let s = self.graph.matmul_bt(qh, kh);
            let s = self.graph.scale(s, scale);
            let a = self.graph.softmax_rows(s);
            self.attention.push(AttentionMap { label: label.to_string(), head: h, weights: a });
            let a = self.drop(a);
            outs.push(self.graph.matmul(a, vh));
        }
        let cat = if heads == 1 { outs[0] } else { self.graph.concat_cols(&outs) };
        self.linear(m.o, cat)
    }

    /// Multi-head attention sublayer of the first trajectory encoder layer,
    /// exposed for inspection.
    pub fn first_encoder_attention(&mut self, x: Var) -> Var {
        let m = self.params.layout.encoder[0].attn;
        self.mha(m, "traj.layer0", x, x)
    }

    /// Cross-attention sublayer of stream A in cross-modal layer `layer`.
    pub fn stream_cross_attention(&mut self, layer: usize, tra: Var, sce: Var) -> Var {
        let m = self.params.layout.cross[layer].0.ca;
        self.mha(m, &format!("cross{layer}.traj.ca"), tra, sce)
    }

    /// Linear embedding of the raw past plus positional encoding.
    pub fn embed_trajectory(&mut self, past: &[Point]) -> Result<Var> {
        let cfg = &self.params.config;
        if past.len() != cfg.t_pas {
            return Err(Error::shape(format!("past has {} points, model expects {}", past.len(), cfg.t_pas)));
        }
        if past.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { context: "trajectory encoder".into(), msg: "non-finite input".into() });
        }
        let x = self.constant_points(past);
        let x = self.linear(self.params.layout.embed, x);
        if !cfg.positional_encoding {
            return Ok(x);
        }
        let pe = self.graph.constant(positional_encoding(cfg.t_pas, cfg.attention.d_model));
        Ok(self.graph.add(x, pe))
    }

    /// `T_pas × d` motion tokens: every self-attention layer's output is kept,
    /// the stack is laid out as `T_pas × (N_tra·d)` and projected back to `d`.
    pub fn encode_trajectory(&mut self, past: &[Point]) -> Result<Var> {
        let mut x = self.embed_trajectory(past)?;
        let mut per_layer = Vec::new();
        for (l, layer) in self.params.layout.encoder.clone().into_iter().enumerate() {
            let a = self.mha(layer.attn, &format!("traj.layer{l}"), x, x);
            let a = self.drop(a);
            let h = self.graph.add(x, a);
            let h = self.norm(layer.n1, h);
            let f = self.ffn(layer.ffn, h);
            let f = self.drop(f);
            let o = self.graph.add(h, f);
            x = self.norm(layer.n2, o);
            per_layer.push(x);
        }
        let stacked = if per_layer.len() == 1 { per_layer[0] } else { self.graph.concat_cols(&per_layer) };
        let out = self.linear(self.params.layout.merge, stacked);
        self.check(out, "trajectory encoder")?;
        Ok(out)
    }

    /// `n_cls × d` scene tokens: each class plane flattened to `h·w` and
    /// projected by a shared linear map.
    pub fn encode_scene(&mut self, raster: &SceneRaster) -> Result<Var> {
        let cfg = &self.params.config;
        if (raster.n_cls(), raster.h(), raster.w()) != (cfg.n_cls, cfg.grid_h, cfg.grid_w) {
            return Err(Error::shape(format!(
                "raster is {}×{}×{}, model expects {}×{}×{}",
                raster.n_cls(),
                raster.h(),
                raster.w(),
                cfg.n_cls,
                cfg.grid_h,
                cfg.grid_w
            )));
        }
        let x = self.graph.constant(Tensor::matrix(cfg.n_cls, cfg.grid_h * cfg.grid_w, raster.grid().to_vec()));
        let out = self.linear(self.params.layout.scene, x);
        self.check(out, "scene encoder")?;
        Ok(out)
    }

    fn stream(&mut self, s: CrossStream, label: &str, x: Var, other: Var) -> Var {
        let c = self.mha(s.ca, &format!("{label}.ca"), x, other);
        let c = self.drop(c);
        let h = self.graph.add(x, c);
        let h1 = self.norm(s.n1, h);
        let a = self.mha(s.sa, &format!("{label}.sa"), h1, h1);
        let a = self.drop(a);
        let h = self.graph.add(h1, a);
        let h2 = self.norm(s.n2, h);
        let f = self.ffn(s.ffn, h2);
        let f = self.drop(f);
        let h = self.graph.add(h2, f);
        self.norm(s.n3, h)
    }

    /// Two-stream cross-modal transformer. Stream A queries scene tokens from
    /// trajectory tokens, stream B the reverse; both read the previous layer.
    pub fn cross_modal_forward(&mut self, tra: Var, sce: Var) -> Result<(Var, Var)> {
        let (mut a, mut b) = (tra, sce);
        for (l, (sa, sb)) in self.params.layout.cross.clone().into_iter().enumerate() {
            let na = self.stream(sa, &format!("cross{l}.traj"), a, b);
            let nb = self.stream(sb, &format!("cross{l}.scene"), b, a);
            for v in [na, nb] {
                self.check(v, &format!("cross-modal layer {l}"))?;
            }
            (a, b) = (na, nb);
        }
        Ok((a, b))
    }

    /// Pooled scene summary used by the offset head.
    pub fn pool_scene(&mut self, sce: Var) -> Var {
        match self.params.config.pooling {
            Pooling::Mean => self.graph.mean_rows(sce),
            Pooling::Max => self.graph.max_rows(sce),
        }
    }

    /// Last trajectory token joined with the pooled scene tokens, mapped by a
    /// one-hidden-layer MLP to `T_fut × 2` offsets.
    pub fn offset_head(&mut self, tra: Var, sce: Var) -> Result<Var> {
        let d = self.params.config.attention.d_model;
        let (tr, sr) = (self.graph.value(tra), self.graph.value(sce));
        if tr.cols() != d || sr.cols() != d || tr.rows() == 0 || sr.rows() == 0 {
            return Err(Error::shape(format!("offset head expects tokens of width {d}")));
        }
        let last = self.graph.select_row(tra, tr.rows() - 1);
        let pooled = self.pool_scene(sce);
        let cat = self.graph.concat_cols(&[last, pooled]);
        let h = self.linear(self.params.layout.head_hidden, cat);
        let h = self.graph.gelu(h);
        let out = self.linear(self.params.layout.head_out, h);
        let out = self.graph.reshape(out, self.params.config.t_fut, 2);
        self.check(out, "offset head")?;
        Ok(out)
    }

    /// Full forward pass to `T_fut × 2` offsets.
    pub fn forward(&mut self, past: &[Point], raster: &SceneRaster) -> Result<Var> {
        let tra = self.encode_trajectory(past)?;
        let sce = self.encode_scene(raster)?;
        let (tra, sce) = self.cross_modal_forward(tra, sce)?;
        self.offset_head(tra, sce)
    }

    fn check(&self, v: Var, context: &str) -> Result<()> {
        if self.graph.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric { context: context.into(), msg: "non-finite activations".into() })
        }
    }
}

/// Sinusoidal position table, `t × d`.
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            data[pos * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::matrix(t, d, data)
}
