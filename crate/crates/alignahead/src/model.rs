//! Graph neural network students: four layer families (convolutional,
//! mean-aggregating, max-pool aggregating, attention) plus optional
//! per-layer auxiliary classifiers, parameter initialization, and
//! checkpoint serialization.
//!
//! Parameters live on the model as plain matrices. Each forward pass pushes
//! them onto a fresh tape, either tracked (the student being trained) or as
//! constants (a peer whose outputs serve as distillation targets). The push
//! order is the single canonical parameter order shared by the optimizer and
//! the checkpoint format.

use std::io::{Read as _, Write as _};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::graph::GraphContext;
use crate::scalar::{num, Scalar};
use crate::sparse::CsrMatrix;
use crate::tape::{Reduce, Tape, Var};

/// Negative-side slope of the attention scoring nonlinearity.
const ATTN_LEAK: f64 = 0.2;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Gcn,
    SageMean,
    SagePool,
    Gat,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AuxKind {
    /// No per-layer classifiers.
    #[default]
    None,
    /// One extra layer of the backbone's own kind per hidden layer.
    Gnn,
    /// A plain linear map per hidden layer.
    Mlp,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Number of layers, including the output layer.
    pub depth: usize,
    /// Hidden width; for attention models this is the per-head width.
    pub hidden: usize,
    /// Attention heads on hidden layers. The output layer always runs a
    /// single head. Ignored by the other kinds.
    pub heads: usize,
    pub aux: AuxKind,
}

impl ModelSpec {
    /// Width of the representation produced by layer `i` (1-based) given
    /// `num_classes` outputs.
    fn width(&self, i: usize, num_classes: usize) -> usize {
        if i == self.depth {
            num_classes
        } else if self.kind == ModelKind::Gat {
            self.hidden * self.heads
        } else {
            self.hidden
        }
    }
}

/// Input to a layer: either the raw sparse feature matrix or a dense
/// intermediate already on the tape.
#[derive(Copy, Clone)]
pub enum Feed<'a, T: Scalar> {
    Sparse(&'a Arc<CsrMatrix<T>>),
    Dense(Var),
}

fn times_weight<T: Scalar>(tape: &Tape<T>, feed: Feed<'_, T>, w: Var) -> Var {
    match feed {
        Feed::Sparse(s) => tape.spmm(s, w),
        Feed::Dense(x) => tape.matmul(x, w),
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Act {
    Relu,
    Elu,
    Linear,
}

struct GatHead<T: Scalar> {
    w: DenseMatrix<T>,
    a_center: DenseMatrix<T>,
    a_nbr: DenseMatrix<T>,
}

enum LayerParams<T: Scalar> {
    Gcn { w: DenseMatrix<T>, b: DenseMatrix<T> },
    SageMean { w_self: DenseMatrix<T>, w_neigh: DenseMatrix<T>, b: DenseMatrix<T> },
    SagePool {
        w_pool: DenseMatrix<T>,
        b_pool: DenseMatrix<T>,
        w_self: DenseMatrix<T>,
        w_neigh: DenseMatrix<T>,
        b: DenseMatrix<T>,
    },
    Gat { heads: Vec<GatHead<T>>, b: DenseMatrix<T> },
    Linear { w: DenseMatrix<T>, b: DenseMatrix<T> },
}

pub struct Layer<T: Scalar> {
    params: LayerParams<T>,
    act: Act,
}

fn glorot<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| num::<T>(rng.random_range(-limit..limit)))
}

impl<T: Scalar> LayerParams<T> {
    fn init(kind: ModelKind, in_dim: usize, out_dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            ModelKind::Gcn => LayerParams::Gcn {
                w: glorot(in_dim, out_dim, rng),
                b: DenseMatrix::zeros(1, out_dim),
            },
            ModelKind::SageMean => LayerParams::SageMean {
                w_self: glorot(in_dim, out_dim, rng),
                w_neigh: glorot(in_dim, out_dim, rng),
                b: DenseMatrix::zeros(1, out_dim),
            },
            ModelKind::SagePool => LayerParams::SagePool {
                w_pool: glorot(in_dim, out_dim, rng),
                b_pool: DenseMatrix::zeros(1, out_dim),
                w_self: glorot(in_dim, out_dim, rng),
                w_neigh: glorot(out_dim, out_dim, rng),
                b: DenseMatrix::zeros(1, out_dim),
            },
            ModelKind::Gat => LayerParams::Gat {
                heads: (0..heads)
                    .map(|_| GatHead {
                        w: glorot(in_dim, out_dim, rng),
                        a_center: glorot(out_dim, 1, rng),
                        a_nbr: glorot(out_dim, 1, rng),
                    })
                    .collect(),
                b: DenseMatrix::zeros(1, out_dim * heads),
            },
        }
    }

    fn init_linear(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        LayerParams::Linear {
            w: glorot(in_dim, out_dim, rng),
            b: DenseMatrix::zeros(1, out_dim),
        }
    }

    /// The canonical parameter order. Forward, the optimizer, and the
    /// checkpoint format all walk matrices in exactly this order.
    fn fields(&self) -> Vec<&DenseMatrix<T>> {
        match self {
            LayerParams::Gcn { w, b } | LayerParams::Linear { w, b } => vec![w, b],
            LayerParams::SageMean { w_self, w_neigh, b } => vec![w_self, w_neigh, b],
            LayerParams::SagePool { w_pool, b_pool, w_self, w_neigh, b } => {
                vec![w_pool, b_pool, w_self, w_neigh, b]
            }
            LayerParams::Gat { heads, b } => {
                let mut out = Vec::with_capacity(3 * heads.len() + 1);
                for h in heads {
                    out.push(&h.w);
                    out.push(&h.a_center);
                    out.push(&h.a_nbr);
                }
                out.push(b);
                out
            }
        }
    }

    fn fields_mut(&mut self) -> Vec<&mut DenseMatrix<T>> {
        match self {
            LayerParams::Gcn { w, b } | LayerParams::Linear { w, b } => vec![w, b],
            LayerParams::SageMean { w_self, w_neigh, b } => vec![w_self, w_neigh, b],
            LayerParams::SagePool { w_pool, b_pool, w_self, w_neigh, b } => {
                vec![w_pool, b_pool, w_self, w_neigh, b]
            }
            LayerParams::Gat { heads, b } => {
                let mut out: Vec<&mut DenseMatrix<T>> = Vec::with_capacity(3 * heads.len() + 1);
                for h in heads {
                    out.push(&mut h.w);
                    out.push(&mut h.a_center);
                    out.push(&mut h.a_nbr);
                }
                out.push(b);
                out
            }
        }
    }
}

impl<T: Scalar> Layer<T> {
    fn num_params(&self) -> usize {
        self.params.fields().len()
    }

    /// Runs the layer with `vars` holding its parameters in canonical order.
    fn forward_with(
        &self,
        tape: &Tape<T>,
        ctx: &GraphContext<T>,
        feed: Feed<'_, T>,
        vars: &[Var],
    ) -> Var {
        let pre = match &self.params {
            LayerParams::Gcn { .. } => {
                let (w, b) = (vars[0], vars[1]);
                let xw = times_weight(tape, feed, w);
                tape.add_bias(tape.spmm(&ctx.norm_adj, xw), b)
            }
            LayerParams::Linear { .. } => {
                let (w, b) = (vars[0], vars[1]);
                tape.add_bias(times_weight(tape, feed, w), b)
            }
            LayerParams::SageMean { .. } => {
                let (w_self, w_neigh, b) = (vars[0], vars[1], vars[2]);
                let own = times_weight(tape, feed, w_self);
                let neigh = match feed {
                    Feed::Sparse(_) => tape.spmm(ctx.mean_features(), w_neigh),
                    Feed::Dense(x) => tape.matmul(tape.spmm(&ctx.mean_adj, x), w_neigh),
                };
                tape.add_bias(tape.add(own, neigh), b)
            }
            LayerParams::SagePool { .. } => {
                let (w_pool, b_pool, w_self, w_neigh, b) =
                    (vars[0], vars[1], vars[2], vars[3], vars[4]);
                let pooled = tape.relu(tape.add_bias(times_weight(tape, feed, w_pool), b_pool));
                let slots = tape.gather_rows(pooled, &ctx.nbhd.nbrs);
                let agg = tape.segment_reduce(Reduce::Max, slots, &ctx.nbhd.seg);
                let own = times_weight(tape, feed, w_self);
                tape.add_bias(tape.add(own, tape.matmul(agg, w_neigh)), b)
            }
            LayerParams::Gat { heads, .. } => {
                let nb = &ctx.nbhd_self;
                let mut head_outs = Vec::with_capacity(heads.len());
                for k in 0..heads.len() {
                    let (w, a_center, a_nbr) = (vars[3 * k], vars[3 * k + 1], vars[3 * k + 2]);
                    let z = times_weight(tape, feed, w);
                    let sc = tape.matmul(z, a_center);
                    let sn = tape.matmul(z, a_nbr);
                    let raw = tape.add(
                        tape.gather_rows(sc, &nb.centers),
                        tape.gather_rows(sn, &nb.nbrs),
                    );
                    let alpha = tape.segment_softmax(tape.leaky_relu(raw, ATTN_LEAK), &nb.seg);
                    head_outs.push(tape.segment_weighted_sum(alpha, z, &nb.nbrs, &nb.seg));
                }
                let b = vars[3 * heads.len()];
                let joined = if head_outs.len() == 1 {
                    head_outs[0]
                } else {
                    tape.concat_cols(&head_outs)
                };
                tape.add_bias(joined, b)
            }
        };
        match self.act {
            Act::Relu => tape.relu(pre),
            Act::Elu => tape.elu(pre),
            Act::Linear => pre,
        }
    }
}

/// Tape handles produced by one forward pass.
pub struct ForwardTrace {
    /// Post-activation output of every layer; the last entry is the logits.
    pub hidden: Vec<Var>,
    /// Auxiliary classifier logits for layers `1..depth`, empty when the
    /// model has no auxiliary heads.
    pub aux_logits: Vec<Var>,
    /// Parameter handles in canonical order (empty meaningfully only for
    /// tracked passes; constants are recorded too but have no gradients).
    pub params: Vec<Var>,
}

impl ForwardTrace {
    pub fn logits(&self) -> Var {
        *self.hidden.last().expect("model has at least one layer")
    }

    /// Classifier logits attached to layer `i` (1-based): the auxiliary head
    /// below the top, the model output at the top.
    pub fn layer_logits(&self, i: usize) -> Var {
        if i == self.hidden.len() {
            self.logits()
        } else {
            self.aux_logits[i - 1]
        }
    }
}

pub struct StudentModel<T: Scalar> {
    pub spec: ModelSpec,
    /// Layer widths, `[num_features, ..., num_classes]`.
    pub dims: Vec<usize>,
    layers: Vec<Layer<T>>,
    aux: Vec<Layer<T>>,
}

impl<T: Scalar> StudentModel<T> {
    /// Builds a model with fresh parameters. All random draws come from
    /// `rng` in canonical parameter order, so equal seeds give bit-equal
    /// models at equal precision.
    pub fn init(
        spec: &ModelSpec,
        num_features: usize,
        num_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(spec.depth >= 1, "depth must be at least 1");
        assert!(spec.hidden >= 1, "hidden width must be at least 1");
        assert!(spec.kind != ModelKind::Gat || spec.heads >= 1, "attention needs at least one head");

        let mut dims = Vec::with_capacity(spec.depth + 1);
        dims.push(num_features);
        for i in 1..=spec.depth {
            dims.push(spec.width(i, num_classes));
        }

        let hidden_act = if spec.kind == ModelKind::Gat { Act::Elu } else { Act::Relu };
        let mut layers = Vec::with_capacity(spec.depth);
        for i in 1..=spec.depth {
            let last = i == spec.depth;
            // Attention hidden layers concatenate `heads` blocks of width
            // `hidden`; the output layer runs one head of width C.
            let (out_dim, heads) = if spec.kind == ModelKind::Gat {
                if last {
                    (num_classes, 1)
                } else {
                    (spec.hidden, spec.heads)
                }
            } else {
                (dims[i], 1)
            };
            layers.push(Layer {
                params: LayerParams::init(spec.kind, dims[i - 1], out_dim, heads, rng),
                act: if last { Act::Linear } else { hidden_act },
            });
        }

        let mut aux = Vec::new();
        if spec.aux != AuxKind::None {
            for i in 1..spec.depth {
                let params = match spec.aux {
                    AuxKind::Mlp => LayerParams::init_linear(dims[i], num_classes, rng),
                    AuxKind::Gnn => {
                        let heads = 1; // single-head attention for aux outputs
                        LayerParams::init(spec.kind, dims[i], num_classes, heads, rng)
                    }
                    AuxKind::None => unreachable!(),
                };
                aux.push(Layer { params, act: Act::Linear });
            }
        }

        Self { spec: spec.clone(), dims, layers, aux }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// All parameter matrices in canonical order: backbone layers bottom to
    /// top, then auxiliary heads bottom to top.
    pub fn param_matrices(&self) -> Vec<&DenseMatrix<T>> {
        self.layers.iter().chain(&self.aux).flat_map(|l| l.params.fields()).collect()
    }

    pub fn param_matrices_mut(&mut self) -> Vec<&mut DenseMatrix<T>> {
        self.layers
            .iter_mut()
            .chain(&mut self.aux)
            .flat_map(|l| l.params.fields_mut())
            .collect()
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.param_matrices().iter().map(|m| m.as_slice().len()).sum()
    }

    /// Forward pass that first records the model's own parameters on the
    /// tape: tracked for the student under training, constant for a peer.
    pub fn forward(&self, tape: &Tape<T>, ctx: &GraphContext<T>, tracked: bool) -> ForwardTrace {
        let vars: Vec<Var> = self
            .param_matrices()
            .into_iter()
            .map(|m| if tracked { tape.param(m.clone()) } else { tape.constant(m.clone()) })
            .collect();
        self.forward_with(tape, ctx, &vars)
    }

    /// Forward pass over externally supplied parameter handles, in canonical
    /// order. This is what gradient checking drives directly.
    pub fn forward_with(
        &self,
        tape: &Tape<T>,
        ctx: &GraphContext<T>,
        vars: &[Var],
    ) -> ForwardTrace {
        let total: usize = self.layers.iter().chain(&self.aux).map(Layer::num_params).sum();
        assert_eq!(vars.len(), total, "expected {total} parameter handles, got {}", vars.len());

        let mut at = 0;
        let mut take = |l: &Layer<T>| {
            let n = l.num_params();
            at += n;
            vars[at - n..at].to_vec()
        };

        let mut hidden = Vec::with_capacity(self.layers.len());
        let mut feed = Feed::Sparse(&ctx.features);
        let layer_vars: Vec<Vec<Var>> = self.layers.iter().map(&mut take).collect();
        let aux_vars: Vec<Vec<Var>> = self.aux.iter().map(&mut take).collect();
        for (layer, lv) in self.layers.iter().zip(&layer_vars) {
            let h = layer.forward_with(tape, ctx, feed, lv);
            hidden.push(h);
            feed = Feed::Dense(h);
        }
        let aux_logits = self
            .aux
            .iter()
            .zip(&aux_vars)
            .enumerate()
            .map(|(i, (head, av))| head.forward_with(tape, ctx, Feed::Dense(hidden[i]), av))
            .collect();

        ForwardTrace { hidden, aux_logits, params: vars.to_vec() }
    }
}

// ── Checkpoints ─────────────────────────────────────────────────────────
//
// Layout: magic, little-endian u32 header length, JSON header, then each
// parameter matrix as raw little-endian scalars in canonical order. Saving
// and loading at the same precision round-trips bit for bit.

const CKPT_MAGIC: &[u8; 8] = b"GNNCKPT1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: ModelSpec,
    num_features: usize,
    num_classes: usize,
    precision: String,
    shapes: Vec<(usize, usize)>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
}

impl<T: Scalar> StudentModel<T> {
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), CheckpointError> {
        let mats = self.param_matrices();
        let header = CheckpointHeader {
            spec: self.spec.clone(),
            num_features: self.dims[0],
            num_classes: self.num_classes(),
            precision: T::NAME.to_string(),
            shapes: mats.iter().map(|m| m.shape()).collect(),
        };
        let header_json = serde_json::to_vec(&header)?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(CKPT_MAGIC)?;
        out.write_all(&(header_json.len() as u32).to_le_bytes())?;
        out.write_all(&header_json)?;
        for m in mats {
            for v in m.as_slice() {
                let x: f64 = num_traits::cast(*v).unwrap();
                if T::NAME == "f32" {
                    out.write_all(&(x as f32).to_le_bytes())?;
                } else {
                    out.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, CheckpointError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(CheckpointError::Format("not a checkpoint file".to_string()));
        }
        let mut len = [0u8; 4];
        file.read_exact(&mut len)?;
        let mut header_json = vec![0u8; u32::from_le_bytes(len) as usize];
        file.read_exact(&mut header_json)?;
        let header: CheckpointHeader = serde_json::from_slice(&header_json)?;
        if header.precision != T::NAME {
            return Err(CheckpointError::Format(format!(
                "checkpoint stores {} values, requested {}",
                header.precision,
                T::NAME
            )));
        }

        // Rebuild the skeleton with a throwaway seed, then overwrite every
        // matrix from the file.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model =
            StudentModel::<T>::init(&header.spec, header.num_features, header.num_classes, &mut rng);
        let mats = model.param_matrices_mut();
        if header.shapes.len() != mats.len() {
            return Err(CheckpointError::Format(format!(
                "checkpoint has {} matrices, model needs {}",
                header.shapes.len(),
                mats.len()
            )));
        }
        for (m, &(r, c)) in mats.into_iter().zip(&header.shapes) {
            if m.shape() != (r, c) {
                return Err(CheckpointError::Format(format!(
                    "shape mismatch: checkpoint {:?}, model {:?}",
                    (r, c),
                    m.shape()
                )));
            }
            for v in m.as_mut_slice() {
                if T::NAME == "f32" {
                    let mut buf = [0u8; 4];
                    file.read_exact(&mut buf)?;
                    *v = num::<T>(f32::from_le_bytes(buf) as f64);
                } else {
                    let mut buf = [0u8; 8];
                    file.read_exact(&mut buf)?;
                    *v = num::<T>(f64::from_le_bytes(buf));
                }
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use rand_chacha::rand_core::SeedableRng;

    use super::*;
    use crate::gradcheck::grad_check;
    use crate::graph::{generate_sbm, random_split, GraphContext, SbmParams};

    fn toy_ctx() -> GraphContext<f64> {
        let mut g = generate_sbm(&SbmParams {
            block_sizes: vec![4, 4],
            p_in: 0.9,
            p_out: 0.15,
            num_features: 5,
            noise: 0.3,
            seed: 33,
        });
        random_split(&mut g, 4, 2, 2, 5).unwrap();
        GraphContext::new(&g)
    }

    fn spec(kind: ModelKind, aux: AuxKind) -> ModelSpec {
        ModelSpec { kind, depth: 3, hidden: 4, heads: 2, aux }
    }

    #[test]
    fn forward_shapes_for_every_kind() {
        let ctx = toy_ctx();
        for kind in [ModelKind::Gcn, ModelKind::SageMean, ModelKind::SagePool, ModelKind::Gat] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let model = StudentModel::init(&spec(kind, AuxKind::Gnn), 5, 2, &mut rng);
            let tape = Tape::new();
            let trace = model.forward(&tape, &ctx, true);
            assert_eq!(trace.hidden.len(), 3);
            let hidden_width = if kind == ModelKind::Gat { 8 } else { 4 };
            assert_eq!(tape.shape(trace.hidden[0]), (8, hidden_width), "{kind:?}");
            assert_eq!(tape.shape(trace.hidden[1]), (8, hidden_width), "{kind:?}");
            assert_eq!(tape.shape(trace.logits()), (8, 2), "{kind:?}");
            assert_eq!(trace.aux_logits.len(), 2);
            for &a in &trace.aux_logits {
                assert_eq!(tape.shape(a), (8, 2));
            }
            assert_eq!(trace.layer_logits(3), trace.logits());
            assert_eq!(trace.layer_logits(1), trace.aux_logits[0]);
        }
    }

    #[test]
    fn forward_params_match_canonical_order() {
        let ctx = toy_ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = StudentModel::init(&spec(ModelKind::Gat, AuxKind::Mlp), 5, 2, &mut rng);
        let tape = Tape::new();
        let trace = model.forward(&tape, &ctx, true);
        let mats = model.param_matrices();
        assert_eq!(trace.params.len(), mats.len());
        for (&v, m) in trace.params.iter().zip(&mats) {
            assert_eq!(tape.value(v).as_slice(), m.as_slice());
            assert!(tape.is_tracked(v));
        }
    }

    #[test]
    fn peer_forward_is_fully_untracked() {
        let ctx = toy_ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = StudentModel::init(&spec(ModelKind::Gcn, AuxKind::Gnn), 5, 2, &mut rng);
        let tape = Tape::new();
        let trace = model.forward(&tape, &ctx, false);
        assert!(!tape.is_tracked(trace.logits()));
        for &a in &trace.aux_logits {
            assert!(!tape.is_tracked(a));
        }
    }

    #[test]
    fn same_seed_same_model_different_seed_differs() {
        let s = spec(ModelKind::SageMean, AuxKind::Gnn);
        let a = StudentModel::<f64>::init(&s, 5, 2, &mut ChaCha8Rng::seed_from_u64(9));
        let b = StudentModel::<f64>::init(&s, 5, 2, &mut ChaCha8Rng::seed_from_u64(9));
        let c = StudentModel::<f64>::init(&s, 5, 2, &mut ChaCha8Rng::seed_from_u64(10));
        for (ma, mb) in a.param_matrices().iter().zip(b.param_matrices()) {
            assert_eq!(ma.as_slice(), mb.as_slice());
        }
        let differs = a
            .param_matrices()
            .iter()
            .zip(c.param_matrices())
            .any(|(ma, mc)| ma.as_slice() != mc.as_slice());
        assert!(differs);
    }

    #[test]
    fn every_kind_passes_gradient_check_end_to_end() {
        let ctx = toy_ctx();
        let labels = ctx.class_indices.clone();
        let mask = ctx.train_mask.clone();
        for kind in [ModelKind::Gcn, ModelKind::SageMean, ModelKind::SagePool, ModelKind::Gat] {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let mut model = StudentModel::init(
                &ModelSpec { kind, depth: 2, hidden: 3, heads: 2, aux: AuxKind::Gnn },
                5,
                2,
                &mut rng,
            );
            // Jitter every matrix, biases included. Zero biases leave relu
            // and max-pool sitting exactly on their kinks (a zeroed hidden
            // row makes the next pool pre-activation exactly zero), where
            // finite differences rightly disagree with the subgradient.
            for m in model.param_matrices_mut() {
                for v in m.as_mut_slice() {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
            let model = model;
            let inits: Vec<DenseMatrix<f64>> =
                model.param_matrices().into_iter().cloned().collect();
            let report = grad_check(
                |tape, vars| {
                    let trace = model.forward_with(tape, &ctx, vars);
                    // touch the auxiliary head too so its weights get checked
                    let main = tape.softmax_xent_masked(trace.logits(), &labels, &mask);
                    let aux = tape.softmax_xent_masked(trace.aux_logits[0], &labels, &mask);
                    tape.add(main, aux)
                },
                &inits,
                1e-6,
            );
            assert!(
                report.worst() < 1e-5,
                "{kind:?}: worst relative error {:.3e}",
                report.worst()
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let ctx = toy_ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = StudentModel::<f64>::init(&spec(ModelKind::Gat, AuxKind::Gnn), 5, 2, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save_checkpoint(&path).unwrap();
        let back = StudentModel::<f64>::load_checkpoint(&path).unwrap();
        for (ma, mb) in model.param_matrices().iter().zip(back.param_matrices()) {
            assert_eq!(ma.as_slice(), mb.as_slice());
        }
        // forward outputs are bit-identical too
        let (t1, t2) = (Tape::new(), Tape::new());
        let l1 = model.forward(&t1, &ctx, false).logits();
        let l2 = back.forward(&t2, &ctx, false).logits();
        assert_eq!(t1.value(l1).as_slice(), t2.value(l2).as_slice());
    }

    #[test]
    fn f32_checkpoint_rejects_f64_load() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let model = StudentModel::<f32>::init(&spec(ModelKind::Gcn, AuxKind::None), 5, 2, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save_checkpoint(&path).unwrap();
        assert!(StudentModel::<f32>::load_checkpoint(&path).is_ok());
        assert!(StudentModel::<f64>::load_checkpoint(&path).is_err());
    }

    #[test]
    fn depth_one_model_is_a_single_output_layer() {
        let ctx = toy_ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let model = StudentModel::<f64>::init(
            &ModelSpec { kind: ModelKind::Gcn, depth: 1, hidden: 4, heads: 1, aux: AuxKind::Gnn },
            5,
            2,
            &mut rng,
        );
        let tape = Tape::new();
        let trace = model.forward(&tape, &ctx, true);
        assert_eq!(trace.hidden.len(), 1);
        assert!(trace.aux_logits.is_empty());
        assert_eq!(tape.shape(trace.logits()), (8, 2));
    }
}
