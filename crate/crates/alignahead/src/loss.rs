//! Training objectives: supervised terms, local-structure distillation
//! between peer models with cross-layer matching, and distribution-level
//! feature distillation through the per-layer classifiers.
//!
//! All peer-derived quantities enter as untracked tape values, so gradients
//! of any loss here flow only into the model being trained; alternating
//! optimization falls out of that for free.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::{EdgeIndex, GraphContext};
use crate::model::ForwardTrace;
use crate::scalar::{num, Scalar};
use crate::tape::{Tape, Var};

/// Pairwise similarity used to describe a node's local neighborhood.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum KernelKind {
    /// Squared Euclidean distance.
    Euclidean,
    /// Plain dot product.
    Linear,
    /// `(dot + c)^degree`.
    Poly { c: f64, degree: i32 },
    /// `exp(-dist2 / (2 sigma))`.
    Rbf { sigma: f64 },
}

impl KernelKind {
    pub fn poly_default() -> Self {
        KernelKind::Poly { c: 0.0, degree: 2 }
    }

    pub fn rbf_default() -> Self {
        KernelKind::Rbf { sigma: 100.0 }
    }
}

/// How layer `i` of the trained model picks the peer layer it learns from.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matching {
    /// Layer `i` targets peer layer `i`.
    Identity,
    /// Layer `i` targets peer layer `i + 1`; the top layer wraps to 1.
    LookAhead,
}

/// Peer layer (1-based) that layer `i` of `depth` aligns to.
pub fn align_target(matching: Matching, i: usize, depth: usize) -> usize {
    debug_assert!((1..=depth).contains(&i));
    match matching {
        Matching::Identity => i,
        Matching::LookAhead => i % depth + 1,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the local-structure term.
    pub alpha: f64,
    /// Mix between the plain supervised loss and the per-layer terms.
    pub beta: f64,
    /// Within the per-layer terms, mix between feature distillation and
    /// deep supervision.
    pub lambda: f64,
    pub kernel: KernelKind,
    pub matching: Matching,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.4,
            lambda: 0.2,
            kernel: KernelKind::Rbf { sigma: 100.0 },
            matching: Matching::LookAhead,
        }
    }
}

/// Coefficients of the four terms for a model of the given depth.
#[derive(Copy, Clone, Debug)]
pub struct LossWeights {
    pub ce: f64,
    pub ds: f64,
    pub fea: f64,
    pub structure: f64,
}

impl LossConfig {
    pub fn weights(&self, depth: usize) -> LossWeights {
        LossWeights {
            ce: 1.0 - self.beta,
            ds: self.beta / depth as f64 * (1.0 - self.lambda),
            fea: self.beta / depth as f64 * self.lambda,
            structure: self.alpha,
        }
    }
}

/// Per-edge kernel values for the feature map `z`, one row per directed
/// neighbor pair.
pub fn kernel_values<T: Scalar>(
    tape: &Tape<T>,
    z: Var,
    pairs: &Arc<crate::sparse::EdgePairs>,
    kind: KernelKind,
) -> Var {
    match kind {
        KernelKind::Euclidean => tape.edge_sq_dist(z, pairs),
        KernelKind::Linear => tape.edge_dot(z, pairs),
        KernelKind::Poly { c, degree } => {
            let dot = tape.edge_dot(z, pairs);
            tape.powi(tape.affine(dot, T::one(), num::<T>(c)), degree)
        }
        KernelKind::Rbf { sigma } => {
            let d = tape.edge_sq_dist(z, pairs);
            tape.exp(tape.affine(d, num::<T>(-1.0 / (2.0 * sigma)), T::zero()))
        }
    }
}

/// A node's local structure: softmax over the kernel values of its
/// neighbor pairs. Nodes without neighbors contribute no rows.
pub fn local_structure<T: Scalar>(
    tape: &Tape<T>,
    z: Var,
    edges: &EdgeIndex,
    kind: KernelKind,
) -> Var {
    let k = kernel_values(tape, z, &edges.pairs, kind);
    tape.segment_softmax(k, &edges.seg)
}

/// `KL(target || learner)` summed over all neighbor pairs and averaged over
/// the nodes that have any, with the logs clamped for stability.
pub fn kl_over_edges<T: Scalar>(tape: &Tape<T>, target: Var, learner: Var, non_isolated: usize) -> Var {
    let diff = tape.sub(tape.log_eps(target), tape.log_eps(learner));
    let total = tape.sum_all(tape.hadamard(target, diff));
    tape.affine(total, T::one() / num::<T>(non_isolated.max(1) as f64), T::zero())
}

/// Cross-layer local-structure distillation: every layer of `own` learns the
/// matched layer's structure from every peer, averaged over peers.
pub fn structure_loss<T: Scalar>(
    tape: &Tape<T>,
    ctx: &GraphContext<T>,
    own_hidden: &[Var],
    peers_hidden: &[&[Var]],
    kernel: KernelKind,
    matching: Matching,
) -> Var {
    let depth = own_hidden.len();
    assert!(!peers_hidden.is_empty(), "structure loss needs at least one peer");
    for p in peers_hidden {
        assert_eq!(p.len(), depth, "all models must share depth {depth}");
    }
    let edges = &ctx.edge_index;
    let own_s: Vec<Var> =
        own_hidden.iter().map(|&z| local_structure(tape, z, edges, kernel)).collect();

    let mut acc: Option<Var> = None;
    for i in 1..=depth {
        let j = align_target(matching, i, depth);
        for peer in peers_hidden {
            let t = local_structure(tape, peer[j - 1], edges, kernel);
            let term = kl_over_edges(tape, t, own_s[i - 1], edges.non_isolated);
            acc = Some(match acc {
                Some(a) => tape.add(a, term),
                None => term,
            });
        }
    }
    tape.affine(acc.unwrap(), T::one() / num::<T>(peers_hidden.len() as f64), T::zero())
}

/// Distribution returned by a layer classifier, compared against the matched
/// peer classifier with KL, averaged over nodes and peers.
///
/// Single-label models compare class softmaxes; multi-label models compare
/// the per-class Bernoulli distributions of their sigmoids, additionally
/// averaging over classes.
pub fn feature_loss<T: Scalar>(
    tape: &Tape<T>,
    ctx: &GraphContext<T>,
    own: &ForwardTrace,
    peers: &[&ForwardTrace],
    matching: Matching,
) -> Var {
    let depth = own.hidden.len();
    assert!(!peers.is_empty(), "feature loss needs at least one peer");
    let n = ctx.num_nodes;

    let mut acc: Option<Var> = None;
    for i in 1..=depth {
        let j = align_target(matching, i, depth);
        let own_logits = own.layer_logits(i);
        if ctx.is_multi() {
            let s = tape.sigmoid(own_logits);
            let s_c = tape.affine(s, -T::one(), T::one());
            let (log_s, log_sc) = (tape.log_eps(s), tape.log_eps(s_c));
            for peer in peers {
                let t = tape.sigmoid(peer.layer_logits(j));
                let t_c = tape.affine(t, -T::one(), T::one());
                let pos = tape.hadamard(t, tape.sub(tape.log_eps(t), log_s));
                let neg = tape.hadamard(t_c, tape.sub(tape.log_eps(t_c), log_sc));
                let total = tape.sum_all(tape.add(pos, neg));
                let term = tape.affine(
                    total,
                    T::one() / num::<T>((n * ctx.num_classes) as f64),
                    T::zero(),
                );
                acc = Some(match acc {
                    Some(a) => tape.add(a, term),
                    None => term,
                });
            }
        } else {
            let log_s = tape.log_softmax_rows(own_logits);
            for peer in peers {
                let log_t = tape.log_softmax_rows(peer.layer_logits(j));
                let t = tape.exp(log_t);
                let total = tape.sum_all(tape.hadamard(t, tape.sub(log_t, log_s)));
                let term = tape.affine(total, T::one() / num::<T>(n as f64), T::zero());
                acc = Some(match acc {
                    Some(a) => tape.add(a, term),
                    None => term,
                });
            }
        }
    }
    tape.affine(acc.unwrap(), T::one() / num::<T>(peers.len() as f64), T::zero())
}

/// Supervised loss of one logits matrix over an arbitrary node mask.
pub fn supervised_loss<T: Scalar>(
    tape: &Tape<T>,
    ctx: &GraphContext<T>,
    logits: Var,
    mask: &Arc<Vec<usize>>,
) -> Var {
    if ctx.is_multi() {
        tape.sigmoid_bce_masked(logits, &ctx.multi_targets, mask)
    } else {
        tape.softmax_xent_masked(logits, &ctx.class_indices, mask)
    }
}

/// Supervised loss of one logits matrix over the training mask.
pub fn label_loss<T: Scalar>(tape: &Tape<T>, ctx: &GraphContext<T>, logits: Var) -> Var {
    supervised_loss(tape, ctx, logits, &ctx.train_mask)
}

/// Deep supervision over an arbitrary mask: the supervised loss applied to
/// every layer's classifier, the top layer included.
pub fn deep_supervision_loss_masked<T: Scalar>(
    tape: &Tape<T>,
    ctx: &GraphContext<T>,
    trace: &ForwardTrace,
    mask: &Arc<Vec<usize>>,
) -> Var {
    let depth = trace.hidden.len();
    let mut acc = supervised_loss(tape, ctx, trace.layer_logits(1), mask);
    for i in 2..=depth {
        acc = tape.add(acc, supervised_loss(tape, ctx, trace.layer_logits(i), mask));
    }
    acc
}

/// Deep supervision over the training mask.
pub fn deep_supervision_loss<T: Scalar>(
    tape: &Tape<T>,
    ctx: &GraphContext<T>,
    trace: &ForwardTrace,
) -> Var {
    deep_supervision_loss_masked(tape, ctx, trace, &ctx.train_mask)
}

/// Every term of the objective, plus their weighted sum. Terms that are
/// structurally unavailable (no peers, no layer classifiers) are `None`;
/// terms whose coefficient is zero are still evaluated, on detached values,
/// so they can be logged without influencing gradients.
pub struct LossTerms {
    pub ce: Var,
    pub ds: Option<Var>,
    pub fea: Option<Var>,
    pub structure: Option<Var>,
    pub total: Var,
}

/// Loss values extracted for logging; absent terms read as zero.
#[derive(Copy, Clone, Debug, Default)]
pub struct LossValues {
    pub ce: f64,
    pub ds: f64,
    pub fea: f64,
    pub structure: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn read<T: Scalar>(&self, tape: &Tape<T>) -> LossValues {
        let get = |v: Var| num_traits::cast::<T, f64>(tape.scalar_value(v)).unwrap();
        LossValues {
            ce: get(self.ce),
            ds: self.ds.map_or(0.0, get),
            fea: self.fea.map_or(0.0, get),
            structure: self.structure.map_or(0.0, get),
            total: get(self.total),
        }
    }
}

fn detach_all<T: Scalar>(tape: &Tape<T>, vars: &[Var]) -> Vec<Var> {
    vars.iter().map(|&v| tape.detach(v)).collect()
}

fn detached_trace<T: Scalar>(tape: &Tape<T>, trace: &ForwardTrace) -> ForwardTrace {
    ForwardTrace {
        hidden: detach_all(tape, &trace.hidden),
        aux_logits: detach_all(tape, &trace.aux_logits),
        params: Vec::new(),
    }
}

/// Assembles the full objective for one model given its peers' forward
/// traces (which must have been recorded untracked).
pub fn total_loss<T: Scalar>(
    tape: &Tape<T>,
    ctx: &GraphContext<T>,
    own: &ForwardTrace,
    peers: &[&ForwardTrace],
    cfg: &LossConfig,
) -> LossTerms {
    let depth = own.hidden.len();
    let has_layer_heads = depth == 1 || own.aux_logits.len() == depth - 1;

    let LossWeights { ce: w_ce, ds: w_ds, fea: w_fea, structure: w_str } = cfg.weights(depth);

    let ce = if w_ce == 0.0 {
        label_loss(tape, ctx, tape.detach(own.logits()))
    } else {
        label_loss(tape, ctx, own.logits())
    };

    let ds = has_layer_heads.then(|| {
        if w_ds == 0.0 {
            deep_supervision_loss(tape, ctx, &detached_trace(tape, own))
        } else {
            deep_supervision_loss(tape, ctx, own)
        }
    });

    let fea = (has_layer_heads && !peers.is_empty()).then(|| {
        if w_fea == 0.0 {
            feature_loss(tape, ctx, &detached_trace(tape, own), peers, cfg.matching)
        } else {
            feature_loss(tape, ctx, own, peers, cfg.matching)
        }
    });

    let structure = (!peers.is_empty()).then(|| {
        let own_hidden = if w_str == 0.0 { detach_all(tape, &own.hidden) } else { own.hidden.clone() };
        let peer_hidden: Vec<&[Var]> = peers.iter().map(|p| p.hidden.as_slice()).collect();
        structure_loss(tape, ctx, &own_hidden, &peer_hidden, cfg.kernel, cfg.matching)
    });

    let mut total = tape.affine(ce, num::<T>(w_ce), T::zero());
    if let Some(ds) = ds {
        if w_ds != 0.0 {
            total = tape.add(total, tape.affine(ds, num::<T>(w_ds), T::zero()));
        }
    }
    if let Some(fea) = fea {
        if w_fea != 0.0 {
            total = tape.add(total, tape.affine(fea, num::<T>(w_fea), T::zero()));
        }
    }
    if let Some(st) = structure {
        if w_str != 0.0 {
            total = tape.add(total, tape.affine(st, num::<T>(w_str), T::zero()));
        }
    }

    LossTerms { ce, ds, fea, structure, total }
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dense::DenseMatrix;
    use crate::gradcheck::grad_check;
    use crate::graph::{
        generate_sbm, random_split, GraphContext, Graph, Labels, SplitTag, SbmParams,
    };
    use crate::model::{AuxKind, ModelKind, ModelSpec, StudentModel};

    /// Path graph 0 - 1 - 2 with fixed features; labels 0, 1, 0.
    fn path_ctx() -> GraphContext<f64> {
        let g = Graph {
            num_features: 2,
            num_classes: 2,
            edges: vec![(0, 1), (1, 2)],
            features: DenseMatrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            labels: Labels::Single(vec![0, 1, 0]),
            split: vec![SplitTag::Train, SplitTag::Train, SplitTag::Val],
        };
        GraphContext::new(&g)
    }

    fn trace_of(hidden: Vec<Var>, aux: Vec<Var>) -> ForwardTrace {
        ForwardTrace { hidden, aux_logits: aux, params: Vec::new() }
    }

    #[test]
    fn alignment_wraps_the_top_layer_to_the_bottom() {
        for depth in 1..=6 {
            for i in 1..=depth {
                assert_eq!(align_target(Matching::Identity, i, depth), i);
                let want = if i == depth { 1 } else { i + 1 };
                assert_eq!(align_target(Matching::LookAhead, i, depth), want);
            }
        }
    }

    #[test]
    fn structure_loss_matches_frozen_oracle() {
        // Frozen with an independent implementation: path graph, one layer,
        // one peer, learner rows [[1,0],[0,1],[1,1]], peer rows
        // [[1,1],[0,0],[2,0]].
        let ctx = path_ctx();
        let tape = Tape::new();
        let z_self =
            tape.param(DenseMatrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let z_peer =
            tape.constant(DenseMatrix::from_vec(3, 2, vec![1.0, 1.0, 0.0, 0.0, 2.0, 0.0]));
        let loss = structure_loss(
            &tape,
            &ctx,
            &[z_self],
            &[&[z_peer]],
            KernelKind::Euclidean,
            Matching::LookAhead,
        );
        assert!((tape.scalar_value(loss) - 0.276_241_636_802_486_42).abs() < 1e-12);

        let linear = structure_loss(
            &tape,
            &ctx,
            &[z_self],
            &[&[z_peer]],
            KernelKind::Linear,
            Matching::LookAhead,
        );
        assert!((tape.scalar_value(linear) - 0.040_038_168_985_911_497).abs() < 1e-12);
    }

    #[test]
    fn feature_loss_matches_frozen_oracles() {
        let ctx = path_ctx();
        let tape = Tape::new();
        let own = trace_of(
            vec![tape.param(DenseMatrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]))],
            vec![],
        );
        let peer = trace_of(
            vec![tape.constant(DenseMatrix::from_vec(3, 2, vec![0.0, 0.0, 2.0, 0.0, 1.0, -1.0]))],
            vec![],
        );
        let loss = feature_loss(&tape, &ctx, &own, &[&peer], Matching::LookAhead);
        assert!((tape.scalar_value(loss) - 0.425_550_914_279_970_88).abs() < 1e-12);
    }

    #[test]
    fn multi_label_feature_loss_matches_frozen_oracle() {
        let mut targets = DenseMatrix::zeros(3, 2);
        targets.set(0, 0, 1.0);
        targets.set(1, 1, 1.0);
        let g = Graph {
            num_features: 2,
            num_classes: 2,
            edges: vec![(0, 1), (1, 2)],
            features: DenseMatrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            labels: Labels::Multi(targets),
            split: vec![SplitTag::Train, SplitTag::Train, SplitTag::Val],
        };
        let ctx = GraphContext::<f64>::new(&g);
        let tape = Tape::new();
        let own = trace_of(
            vec![tape.param(DenseMatrix::from_vec(3, 2, vec![1.0, -0.5, 0.25, 2.0, -1.5, 0.0]))],
            vec![],
        );
        let peer = trace_of(
            vec![tape.constant(DenseMatrix::from_vec(3, 2, vec![0.5, 0.5, -1.0, 1.0, 2.0, -2.0]))],
            vec![],
        );
        let loss = feature_loss(&tape, &ctx, &own, &[&peer], Matching::LookAhead);
        assert!((tape.scalar_value(loss) - 0.315_768_572_468_716_92).abs() < 1e-12);
    }

    #[test]
    fn look_ahead_matching_reads_the_next_peer_layer() {
        // Own and peer hold identical per-layer values but the two layers
        // differ from each other. Identity matching pairs equal structures
        // (zero KL); look-ahead pairs layer 1 with layer 2 and wraps layer 2
        // back to layer 1, both cross-pairs being genuinely different.
        let ctx = path_ctx();
        let tape = Tape::new();
        let x = DenseMatrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DenseMatrix::from_vec(3, 2, vec![3.0, 0.0, 0.0, -2.0, 1.0, 5.0]);
        let own_h = vec![tape.param(x.clone()), tape.param(y.clone())];
        let peer_h = vec![tape.constant(x), tape.constant(y)];
        let id = structure_loss(
            &tape, &ctx, &own_h, &[&peer_h], KernelKind::Euclidean, Matching::Identity,
        );
        let ahead = structure_loss(
            &tape, &ctx, &own_h, &[&peer_h], KernelKind::Euclidean, Matching::LookAhead,
        );
        assert!(tape.scalar_value(id).abs() < 1e-12);
        assert!(tape.scalar_value(ahead) > 0.01);
    }

    #[test]
    fn peer_average_uses_one_over_m_minus_one() {
        // With three identical peers the average must equal the single-peer
        // loss exactly.
        let ctx = path_ctx();
        let tape = Tape::new();
        let z_self =
            tape.param(DenseMatrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let peer = DenseMatrix::from_vec(3, 2, vec![1.0, 1.0, 0.0, 0.0, 2.0, 0.0]);
        let p1 = tape.constant(peer.clone());
        let p2 = tape.constant(peer.clone());
        let p3 = tape.constant(peer);
        let one = structure_loss(
            &tape, &ctx, &[z_self], &[&[p1]], KernelKind::Euclidean, Matching::LookAhead,
        );
        let three = structure_loss(
            &tape,
            &ctx,
            &[z_self],
            &[&[p1], &[p2], &[p3]],
            KernelKind::Euclidean,
            Matching::LookAhead,
        );
        let (a, b) = (tape.scalar_value(one), tape.scalar_value(three));
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }

    #[test]
    fn total_loss_combines_terms_with_the_documented_weights() {
        let mut g = generate_sbm(&SbmParams {
            block_sizes: vec![4, 4],
            p_in: 0.9,
            p_out: 0.15,
            num_features: 5,
            noise: 0.3,
            seed: 40,
        });
        random_split(&mut g, 4, 2, 2, 6).unwrap();
        let ctx = GraphContext::<f64>::new(&g);
        let spec = ModelSpec {
            kind: ModelKind::Gcn,
            depth: 3,
            hidden: 4,
            heads: 1,
            aux: AuxKind::Gnn,
        };
        let own_model = StudentModel::init(&spec, 5, 2, &mut ChaCha8Rng::seed_from_u64(50));
        let peer_model = StudentModel::init(&spec, 5, 2, &mut ChaCha8Rng::seed_from_u64(51));
        let tape = Tape::new();
        let own = own_model.forward(&tape, &ctx, true);
        let peer = peer_model.forward(&tape, &ctx, false);
        let cfg = LossConfig {
            alpha: 0.7,
            beta: 0.4,
            lambda: 0.2,
            kernel: KernelKind::rbf_default(),
            matching: Matching::LookAhead,
        };
        let terms = total_loss(&tape, &ctx, &own, &[&peer], &cfg);
        let v = terms.read(&tape);
        let h = 3.0;
        let want = (1.0 - 0.4) * v.ce
            + 0.4 / h * (0.2 * v.fea + 0.8 * v.ds)
            + 0.7 * v.structure;
        assert!((v.total - want).abs() < 1e-12, "total {} vs recombined {want}", v.total);
        assert!(v.ce > 0.0 && v.ds > 0.0 && v.fea >= 0.0 && v.structure >= 0.0);
    }

    #[test]
    fn zero_coefficients_detach_but_still_log() {
        let mut g = generate_sbm(&SbmParams {
            block_sizes: vec![4, 4],
            p_in: 0.9,
            p_out: 0.15,
            num_features: 5,
            noise: 0.3,
            seed: 41,
        });
        random_split(&mut g, 4, 2, 2, 7).unwrap();
        let ctx = GraphContext::<f64>::new(&g);
        let spec = ModelSpec {
            kind: ModelKind::Gcn,
            depth: 2,
            hidden: 3,
            heads: 1,
            aux: AuxKind::Gnn,
        };
        let own_model = StudentModel::init(&spec, 5, 2, &mut ChaCha8Rng::seed_from_u64(52));
        let peer_model = StudentModel::init(&spec, 5, 2, &mut ChaCha8Rng::seed_from_u64(53));
        let tape = Tape::new();
        let own = own_model.forward(&tape, &ctx, true);
        let peer = peer_model.forward(&tape, &ctx, false);
        // alpha = 0: structure is logged but must not receive gradients.
        let cfg = LossConfig {
            alpha: 0.0,
            beta: 0.4,
            lambda: 0.2,
            kernel: KernelKind::Euclidean,
            matching: Matching::LookAhead,
        };
        let terms = total_loss(&tape, &ctx, &own, &[&peer], &cfg);
        let v = terms.read(&tape);
        assert!(v.structure > 0.0, "structure still evaluated for the log");
        assert!(!tape.is_tracked(terms.structure.unwrap()));
        assert!(tape.is_tracked(terms.total));
        let want = 0.6 * v.ce + 0.2 * (0.2 * v.fea + 0.8 * v.ds);
        assert!((v.total - want).abs() < 1e-12);
    }

    #[test]
    fn peers_receive_no_gradients_from_the_total() {
        let mut g = generate_sbm(&SbmParams {
            block_sizes: vec![4, 4],
            p_in: 0.9,
            p_out: 0.15,
            num_features: 5,
            noise: 0.3,
            seed: 42,
        });
        random_split(&mut g, 4, 2, 2, 8).unwrap();
        let ctx = GraphContext::<f64>::new(&g);
        let spec = ModelSpec {
            kind: ModelKind::SageMean,
            depth: 2,
            hidden: 3,
            heads: 1,
            aux: AuxKind::Gnn,
        };
        let own_model = StudentModel::init(&spec, 5, 2, &mut ChaCha8Rng::seed_from_u64(54));
        let peer_model = StudentModel::init(&spec, 5, 2, &mut ChaCha8Rng::seed_from_u64(55));
        let tape = Tape::new();
        let own = own_model.forward(&tape, &ctx, true);
        let peer = peer_model.forward(&tape, &ctx, false);
        let cfg = LossConfig {
            alpha: 1.0,
            beta: 0.4,
            lambda: 0.2,
            kernel: KernelKind::Euclidean,
            matching: Matching::LookAhead,
        };
        let terms = total_loss(&tape, &ctx, &own, &[&peer], &cfg);
        let mut grads = tape.backward(terms.total);
        for &p in &own.params {
            assert!(grads.take(p).is_some(), "every trained parameter gets a gradient");
        }
        for &p in &peer.params {
            assert!(grads.take(p).is_none(), "peer parameters stay untouched");
        }
    }

    #[test]
    fn full_objective_passes_gradient_check() {
        let mut g = generate_sbm(&SbmParams {
            block_sizes: vec![4, 4],
            p_in: 0.9,
            p_out: 0.15,
            num_features: 5,
            noise: 0.3,
            seed: 43,
        });
        random_split(&mut g, 4, 2, 2, 9).unwrap();
        let ctx = GraphContext::<f64>::new(&g);
        let spec = ModelSpec {
            kind: ModelKind::Gcn,
            depth: 2,
            hidden: 3,
            heads: 1,
            aux: AuxKind::Gnn,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let mut own_model = StudentModel::init(&spec, 5, 2, &mut rng);
        for m in own_model.param_matrices_mut() {
            for v in m.as_mut_slice() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let own_model = own_model;
        let peer_model = StudentModel::init(&spec, 5, 2, &mut rng);
        let cfg = LossConfig {
            alpha: 0.9,
            beta: 0.4,
            lambda: 0.2,
            kernel: KernelKind::rbf_default(),
            matching: Matching::LookAhead,
        };
        let inits: Vec<DenseMatrix<f64>> =
            own_model.param_matrices().into_iter().cloned().collect();
        let report = grad_check(
            |tape, vars| {
                let own = own_model.forward_with(tape, &ctx, vars);
                let peer = peer_model.forward(tape, &ctx, false);
                total_loss(tape, &ctx, &own, &[&peer], &cfg).total
            },
            &inits,
            1e-6,
        );
        assert!(report.worst() < 1e-5, "worst relative error {:.3e}", report.worst());
    }
}
