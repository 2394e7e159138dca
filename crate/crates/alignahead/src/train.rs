//! Alternating full-batch training of mutually distilling students.

use thiserror::Error;

use crate::dense::DenseMatrix;
use crate::graph::GraphContext;
use crate::loss::{
    deep_supervision_loss_masked, feature_loss, structure_loss, supervised_loss, total_loss,
    LossConfig,
};
use crate::metrics::{self, MetricLog, MetricRow, Split};
use crate::model::{ForwardTrace, StudentModel};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Evaluate and log every this many epochs; the final epoch is always
    /// evaluated.
    pub eval_every: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1e-3,
            weight_decay: 1e-4,
            eval_every: 1,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch} for student {student}")]
    Diverged { epoch: usize, student: usize },
}

/// Selection result for one student: the evaluated epoch with the highest
/// validation metric (earlier epoch wins ties) and the test metric there.
#[derive(Clone, Copy, Debug)]
pub struct BestEpoch {
    pub epoch: usize,
    pub val_metric: f64,
    pub test_metric: f64,
}

#[derive(Debug)]
pub struct TrainReport {
    pub log: MetricLog,
    pub best: Vec<BestEpoch>,
    /// Highest test-at-best-validation metric over the students.
    pub headline: f64,
}

/// Seed for student `k` derived from the run seed, so students start from
/// different parameters while the whole run stays reproducible.
pub fn student_seed(base: u64, k: usize) -> u64 {
    base ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn to_f64<T: Scalar>(tape: &Tape<T>, v: Var) -> f64 {
    num_traits::cast::<T, f64>(tape.scalar_value(v)).unwrap()
}

fn split_metric<T: Scalar>(
    ctx: &GraphContext<T>,
    logits: &DenseMatrix<T>,
    mask: &[usize],
) -> f64 {
    if ctx.is_multi() {
        metrics::micro_f1(logits, &ctx.multi_targets, mask)
    } else {
        metrics::accuracy(logits, &ctx.class_indices, mask)
    }
}

/// One half-step: recompute every forward, take a gradient step on student
/// `k` only. Returns the training loss total for the divergence check.
fn half_step<T: Scalar>(
    ctx: &GraphContext<T>,
    models: &mut [StudentModel<T>],
    opts: &mut [Adam<T>],
    k: usize,
    loss_cfg: &LossConfig,
) -> f64 {
    let tape = Tape::new();
    let own = models[k].forward(&tape, ctx, true);
    let peer_traces: Vec<ForwardTrace> = models
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, m)| m.forward(&tape, ctx, false))
        .collect();
    let peer_refs: Vec<&ForwardTrace> = peer_traces.iter().collect();
    let terms = total_loss(&tape, ctx, &own, &peer_refs, loss_cfg);
    let total = to_f64(&tape, terms.total);
    if !total.is_finite() {
        return total;
    }
    let mut grads = tape.backward(terms.total);
    let grad_list: Vec<Option<DenseMatrix<T>>> =
        own.params.iter().map(|&v| grads.take(v)).collect();
    opts[k].step(models[k].param_matrices_mut(), &grad_list);
    total
}

/// Evaluates every student on the current parameters and appends one row
/// per non-empty split. Loss terms are recomputed per split: the supervised
/// terms over that split's mask, the distillation terms over the whole
/// graph. Returns per-student (val-or-train selection metric, test metric).
fn evaluate_epoch<T: Scalar>(
    ctx: &GraphContext<T>,
    models: &[StudentModel<T>],
    cfg: &TrainConfig,
    epoch: usize,
    edges: &[(usize, usize)],
    log: &mut MetricLog,
) -> Vec<(f64, f64)> {
    let tape = Tape::new();
    let traces: Vec<ForwardTrace> =
        models.iter().map(|m| m.forward(&tape, ctx, false)).collect();
    let mut selection = Vec::with_capacity(models.len());

    for (k, own) in traces.iter().enumerate() {
        let depth = models[k].depth();
        let w = cfg.loss.weights(depth);
        let has_heads = depth == 1 || own.aux_logits.len() == depth - 1;
        let peers: Vec<&ForwardTrace> =
            traces.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, t)| t).collect();

        let fea = if has_heads && !peers.is_empty() {
            to_f64(&tape, feature_loss(&tape, ctx, own, &peers, cfg.loss.matching))
        } else {
            0.0
        };
        let str_term = if peers.is_empty() {
            0.0
        } else {
            let peer_hidden: Vec<&[Var]> = peers.iter().map(|p| p.hidden.as_slice()).collect();
            to_f64(
                &tape,
                structure_loss(&tape, ctx, &own.hidden, &peer_hidden, cfg.loss.kernel, cfg.loss.matching),
            )
        };

        let logits = tape.value(own.logits());
        let smooth = metrics::smoothness(&logits, edges);

        let mut train_metric = 0.0;
        let mut val_metric = None;
        let mut test_metric = 0.0;
        for (split, mask) in [
            (Split::Train, &ctx.train_mask),
            (Split::Val, &ctx.val_mask),
            (Split::Test, &ctx.test_mask),
        ] {
            if mask.is_empty() {
                continue;
            }
            let ce = to_f64(&tape, supervised_loss(&tape, ctx, own.logits(), mask));
            let ds = if has_heads {
                to_f64(&tape, deep_supervision_loss_masked(&tape, ctx, own, mask))
            } else {
                0.0
            };
            let metric = split_metric(ctx, &logits, mask);
            match split {
                Split::Train => train_metric = metric,
                Split::Val => val_metric = Some(metric),
                Split::Test => test_metric = metric,
            }
            log.push(MetricRow {
                epoch,
                student: k,
                split,
                loss_ce: ce,
                loss_ds: ds,
                loss_fea: fea,
                loss_str: str_term,
                loss_total: w.ce * ce + w.ds * ds + w.fea * fea + w.structure * str_term,
                metric,
                smoothness: smooth,
            });
        }
        selection.push((val_metric.unwrap_or(train_metric), test_metric));
    }
    selection
}

/// Trains all students for `cfg.epochs` epochs. Within an epoch students
/// update one at a time in index order; each sees its peers' most recent
/// parameters, recorded as constants, so peers receive no gradient. Model
/// selection uses the validation metric (the training metric if no
/// validation split exists).
pub fn train_students<T: Scalar>(
    ctx: &GraphContext<T>,
    models: &mut [StudentModel<T>],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    assert!(!models.is_empty(), "need at least one student");
    assert!(cfg.eval_every >= 1, "eval_every must be at least 1");
    let depth = models[0].depth();
    for m in models.iter() {
        assert_eq!(m.depth(), depth, "students must share depth");
        assert_eq!(m.num_classes(), ctx.num_classes, "students must match the label space");
    }

    let mut opts: Vec<Adam<T>> = models
        .iter()
        .map(|m| {
            let shapes: Vec<(usize, usize)> =
                m.param_matrices().iter().map(|p| p.shape()).collect();
            Adam::new(
                AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() },
                &shapes,
            )
        })
        .collect();

    let edges: Vec<(usize, usize)> = {
        let pairs = &ctx.edge_index.pairs;
        pairs.src.iter().copied().zip(pairs.dst.iter().copied()).collect()
    };

    let mut log = MetricLog::default();
    let mut best: Vec<BestEpoch> = vec![
        BestEpoch { epoch: 0, val_metric: f64::NEG_INFINITY, test_metric: 0.0 };
        models.len()
    ];

    for epoch in 1..=cfg.epochs {
        for k in 0..models.len() {
            let total = half_step(ctx, models, &mut opts, k, &cfg.loss);
            if !total.is_finite() {
                return Err(TrainError::Diverged { epoch, student: k });
            }
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let selection = evaluate_epoch(ctx, models, cfg, epoch, &edges, &mut log);
            for (k, (sel, test)) in selection.into_iter().enumerate() {
                if sel > best[k].val_metric {
                    best[k] = BestEpoch { epoch, val_metric: sel, test_metric: test };
                }
            }
        }
    }

    let headline = best.iter().map(|b| b.test_metric).fold(f64::NEG_INFINITY, f64::max);
    Ok(TrainReport { log, best, headline })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, random_split, GraphContext, SbmParams};
    use crate::loss::{KernelKind, Matching};
    use crate::model::{AuxKind, ModelKind, ModelSpec, StudentModel};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_graph() -> crate::graph::Graph {
        let mut g = generate_sbm(&SbmParams {
            block_sizes: vec![25; 4],
            p_in: 0.3,
            p_out: 0.02,
            num_features: 16,
            noise: 0.1,
            seed: 7,
        });
        random_split(&mut g, 40, 30, 30, 11).unwrap();
        g
    }

    fn gcn_spec(depth: usize, hidden: usize, aux: AuxKind) -> ModelSpec {
        ModelSpec { kind: ModelKind::Gcn, depth, hidden, heads: 1, aux }
    }

    fn init_students(
        specs: &[ModelSpec],
        ctx: &GraphContext<f64>,
        seed: u64,
    ) -> Vec<StudentModel<f64>> {
        specs
            .iter()
            .enumerate()
            .map(|(k, spec)| {
                let mut rng = ChaCha8Rng::seed_from_u64(student_seed(seed, k));
                StudentModel::init(spec, ctx.num_features, ctx.num_classes, &mut rng)
            })
            .collect()
    }

    fn plain_ce_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            loss: LossConfig { alpha: 0.0, beta: 0.0, ..LossConfig::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn with_distillation_off_each_student_matches_a_solo_run() {
        let g = toy_graph();
        let ctx = GraphContext::<f64>::new(&g);
        let specs = [gcn_spec(2, 8, AuxKind::None), gcn_spec(2, 8, AuxKind::None)];
        let cfg = plain_ce_config(10);

        let mut joint = init_students(&specs, &ctx, 3);
        train_students(&ctx, &mut joint, &cfg).unwrap();

        for k in 0..2 {
            let mut solo = vec![init_students(&specs, &ctx, 3).remove(k)];
            train_students(&ctx, &mut solo, &cfg).unwrap();
            for (a, b) in joint[k].param_matrices().into_iter().zip(solo[0].param_matrices()) {
                assert_eq!(a, b, "student {k} diverged from its solo trajectory");
            }
        }
    }

    #[test]
    fn a_half_step_leaves_every_peer_untouched() {
        let g = toy_graph();
        let ctx = GraphContext::<f64>::new(&g);
        let specs = [gcn_spec(2, 8, AuxKind::Gnn), gcn_spec(2, 8, AuxKind::Gnn)];
        let mut models = init_students(&specs, &ctx, 5);
        let mut opts: Vec<Adam<f64>> = models
            .iter()
            .map(|m| {
                let shapes: Vec<_> = m.param_matrices().iter().map(|p| p.shape()).collect();
                Adam::new(AdamConfig::default(), &shapes)
            })
            .collect();

        let before: Vec<DenseMatrix<f64>> =
            models[1].param_matrices().iter().map(|p| (*p).clone()).collect();
        let own_before: Vec<DenseMatrix<f64>> =
            models[0].param_matrices().iter().map(|p| (*p).clone()).collect();

        let total = half_step(&ctx, &mut models, &mut opts, 0, &LossConfig::default());
        assert!(total.is_finite());

        for (a, b) in models[1].param_matrices().into_iter().zip(&before) {
            assert_eq!(a, b, "peer parameters changed during another student's step");
        }
        let moved = models[0]
            .param_matrices()
            .iter()
            .zip(&own_before)
            .any(|(a, b)| a.max_abs_diff(b) > 0.0);
        assert!(moved, "the stepped student did not move");
    }

    #[test]
    fn reruns_with_equal_seeds_are_bit_identical() {
        let g = toy_graph();
        let ctx = GraphContext::<f64>::new(&g);
        let specs = [gcn_spec(2, 8, AuxKind::Gnn), gcn_spec(2, 8, AuxKind::Gnn)];
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };

        let run = || {
            let mut models = init_students(&specs, &ctx, 9);
            let report = train_students(&ctx, &mut models, &cfg).unwrap();
            let params: Vec<Vec<u64>> = models
                .iter()
                .map(|m| {
                    m.param_matrices()
                        .iter()
                        .flat_map(|p| p.as_slice().iter().map(|x| x.to_bits()))
                        .collect()
                })
                .collect();
            (params, report.log.to_csv())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sbm_toy_is_learnable_with_and_without_distillation() {
        let g = toy_graph();
        let ctx = GraphContext::<f64>::new(&g);

        let baseline_specs = [gcn_spec(2, 16, AuxKind::None)];
        let mut baseline = init_students(&baseline_specs, &ctx, 1);
        let baseline_report =
            train_students(&ctx, &mut baseline, &plain_ce_config(200)).unwrap();
        assert!(
            baseline_report.headline > 0.9,
            "baseline stuck at {}",
            baseline_report.headline
        );

        let distilled_specs = [gcn_spec(2, 16, AuxKind::Gnn), gcn_spec(2, 16, AuxKind::Gnn)];
        let mut distilled = init_students(&distilled_specs, &ctx, 1);
        let cfg = TrainConfig { epochs: 200, ..TrainConfig::default() };
        let report = train_students(&ctx, &mut distilled, &cfg).unwrap();
        assert!(report.headline > 0.9, "distilled stuck at {}", report.headline);
        for row in &report.log.rows {
            assert!(row.loss_total.is_finite());
        }
    }

    #[test]
    fn log_covers_every_epoch_student_and_split() {
        let g = toy_graph();
        let ctx = GraphContext::<f64>::new(&g);
        let specs = [gcn_spec(2, 8, AuxKind::Gnn), gcn_spec(2, 8, AuxKind::Gnn)];
        let mut models = init_students(&specs, &ctx, 2);
        let cfg = TrainConfig { epochs: 4, ..TrainConfig::default() };
        let report = train_students(&ctx, &mut models, &cfg).unwrap();

        assert_eq!(report.log.rows.len(), 4 * 2 * 3);
        let mut expected = Vec::new();
        for epoch in 1..=4usize {
            for student in 0..2usize {
                for split in [Split::Train, Split::Val, Split::Test] {
                    expected.push((epoch, student, split));
                }
            }
        }
        let got: Vec<_> =
            report.log.rows.iter().map(|r| (r.epoch, r.student, r.split)).collect();
        assert_eq!(got, expected);
        for b in &report.best {
            assert!(b.epoch >= 1 && b.epoch <= 4);
        }
    }

    #[test]
    fn eval_every_thins_the_log_but_keeps_the_last_epoch() {
        let g = toy_graph();
        let ctx = GraphContext::<f64>::new(&g);
        let specs = [gcn_spec(2, 8, AuxKind::None)];
        let mut models = init_students(&specs, &ctx, 2);
        let cfg = TrainConfig { epochs: 7, eval_every: 3, ..plain_ce_config(7) };
        let report = train_students(&ctx, &mut models, &cfg).unwrap();
        let epochs: Vec<usize> = report
            .log
            .rows
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.epoch)
            .collect();
        assert_eq!(epochs, vec![3, 6, 7]);
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let g = toy_graph();
        let ctx = GraphContext::<f64>::new(&g);
        let specs = [gcn_spec(2, 8, AuxKind::Gnn), gcn_spec(2, 8, AuxKind::Gnn)];
        let mut models = init_students(&specs, &ctx, 4);
        let cfg = TrainConfig { epochs: 10, lr: f64::INFINITY, ..TrainConfig::default() };
        match train_students(&ctx, &mut models, &cfg) {
            Err(TrainError::Diverged { epoch, .. }) => assert!(epoch <= 10),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn heterogeneous_equal_depth_students_train_together() {
        let g = toy_graph();
        let ctx = GraphContext::<f64>::new(&g);
        let specs = [
            gcn_spec(2, 8, AuxKind::Gnn),
            ModelSpec {
                kind: ModelKind::SageMean,
                depth: 2,
                hidden: 8,
                heads: 1,
                aux: AuxKind::Gnn,
            },
        ];
        let mut models = init_students(&specs, &ctx, 6);
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let report = train_students(&ctx, &mut models, &cfg).unwrap();
        for row in &report.log.rows {
            assert!(row.loss_total.is_finite());
            assert!(row.loss_str > 0.0, "structure term should be active");
        }
    }

    #[test]
    fn student_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..6).map(|k| student_seed(42, k)).collect();
        for i in 0..seeds.len() {
            for j in 0..i {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_eq!(seeds, (0..6).map(|k| student_seed(42, k)).collect::<Vec<_>>());
    }

    #[test]
    fn one_to_one_matching_trains_and_logs_structure() {
        let g = toy_graph();
        let ctx = GraphContext::<f64>::new(&g);
        let specs = [gcn_spec(3, 8, AuxKind::Gnn), gcn_spec(3, 8, AuxKind::Gnn)];
        let mut models = init_students(&specs, &ctx, 8);
        let cfg = TrainConfig {
            epochs: 3,
            loss: LossConfig {
                matching: Matching::Identity,
                kernel: KernelKind::Euclidean,
                ..LossConfig::default()
            },
            ..TrainConfig::default()
        };
        let report = train_students(&ctx, &mut models, &cfg).unwrap();
        assert!(report.log.rows.iter().all(|r| r.loss_total.is_finite()));
    }
}
