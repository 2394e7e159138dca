//! Finite-difference validation of the backward pass: every layer kind,
//! then the full distillation objective with a detached peer.

use alignahead::dense::DenseMatrix;
use alignahead::gradcheck::grad_check;
use alignahead::graph::{generate_sbm, random_split, GraphContext, SbmParams};
use alignahead::loss::{total_loss, LossConfig};
use alignahead::model::{AuxKind, ModelKind, ModelSpec, StudentModel};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut g = generate_sbm(&SbmParams {
        block_sizes: vec![3, 3, 2],
        p_in: 0.8,
        p_out: 0.3,
        num_features: 6,
        noise: 0.3,
        seed: 17,
    });
    random_split(&mut g, 4, 2, 2, 18).unwrap();
    let ctx = GraphContext::<f64>::new(&g);
    let labels = ctx.class_indices.clone();
    let mask = ctx.train_mask.clone();

    println!("cross-entropy + auxiliary heads, central differences h=1e-6\n");
    for kind in [ModelKind::Gcn, ModelKind::SageMean, ModelKind::SagePool, ModelKind::Gat] {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = ModelSpec { kind, depth: 3, hidden: 5, heads: 2, aux: AuxKind::Gnn };
        let mut model = StudentModel::init(&spec, 6, 3, &mut rng);
        // Move off the zero-bias init so relu and max-pool kinks do not sit
        // exactly at the evaluation point.
        for m in model.param_matrices_mut() {
            for v in m.as_mut_slice() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let inits: Vec<DenseMatrix<f64>> = model.param_matrices().into_iter().cloned().collect();
        let check = grad_check(
            |tape, vars| {
                let trace = model.forward_with(tape, &ctx, vars);
                let mut loss = tape.softmax_xent_masked(trace.logits(), &labels, &mask);
                for &aux in &trace.aux_logits {
                    loss = tape.add(loss, tape.softmax_xent_masked(aux, &labels, &mask));
                }
                loss
            },
            &inits,
            1e-6,
        );
        println!("  {kind:?}: worst relative error {:.2e} over {} parameter matrices",
            check.worst(), check.per_param.len());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let spec = ModelSpec { kind: ModelKind::Gcn, depth: 3, hidden: 5, heads: 1, aux: AuxKind::Gnn };
    let mut own = StudentModel::init(&spec, 6, 3, &mut rng);
    for m in own.param_matrices_mut() {
        for v in m.as_mut_slice() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let peer = StudentModel::init(&spec, 6, 3, &mut rng);
    let cfg = LossConfig::default();
    let inits: Vec<DenseMatrix<f64>> = own.param_matrices().into_iter().cloned().collect();
    let check = grad_check(
        |tape, vars| {
            let own_trace = own.forward_with(tape, &ctx, vars);
            let peer_trace = peer.forward(tape, &ctx, false);
            total_loss(tape, &ctx, &own_trace, &[&peer_trace], &cfg).total
        },
        &inits,
        1e-6,
    );
    println!("\nfull objective (ce + deep supervision + feature + structure):");
    println!("  worst relative error {:.2e}", check.worst());
}
