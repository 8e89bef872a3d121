//! Forward and backward passes for every layer type: plain affine/ReLU,
//! the contextual input MoE, the gated output MoE (dense, low-rank, or
//! banded experts), and the two-stage Eigen-style MoE baseline.
//!
//! Derivatives are hand-written; `grad_check` holds them to central finite
//! differences.

mod affine;
mod contextual;
mod eigen_moe;
mod expert;
mod gate;
mod gated;
mod grad_check;
mod stack;

pub use affine::AffineLayer;
pub use contextual::{ContextualMoeGrads, ContextualMoeLayer};
pub use eigen_moe::EigenMoeLayer;
pub use expert::ExpertMap;
pub use gate::{softmax, softmax_backward, softmax_ce, GateVector};
pub use gated::GatedMoeLayer;
pub use grad_check::{grad_check_gate, grad_check_stack, rel_err, GradCheckReport};
pub use stack::{Layer, LayerCache, LayerStack, StackGrads};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{glorot_init, BandedMatrix, LowRankMatrix, Matrix};
    use crate::rng::Rng;

    fn vecs(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.standard_normal()).collect())
            .collect()
    }

    #[test]
    fn contextual_identity_collapse() {
        // C_a=1, K=0, A=I, b=0 reduces to the identity map
        let mut l = ContextualMoeLayer::glorot(1, 0, 2, 2, &mut Rng::new(1));
        l.experts[0][0] = Matrix::identity(2);
        let gate = GateVector::one_hot(1, 0);
        let (y, _) = l.forward(&[vec![1.0, 2.0]], &gate).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn contextual_hand_case_two_experts() {
        // A_1=[2], A_2=[-1], b_2=[1], alpha=[0.25,0.75], x=[3] -> 0.25*6+0.75*(-2)=0
        let mut l = ContextualMoeLayer::glorot(2, 0, 1, 1, &mut Rng::new(1));
        l.experts[0][0] = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        l.experts[1][0] = Matrix::from_vec(1, 1, vec![-1.0]).unwrap();
        l.biases[1][0] = vec![1.0];
        let gate = GateVector::new(vec![0.25, 0.75], 1e-9).unwrap();
        let (y, _) = l.forward(&[vec![3.0]], &gate).unwrap();
        assert!((y[0] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn contextual_hand_case_window() {
        // C_a=1, K=1: A_{-1}=[1], A_0=[2], A_1=[3], window [1,1,1] -> [6]
        let mut l = ContextualMoeLayer::glorot(1, 1, 1, 1, &mut Rng::new(1));
        l.experts[0][0] = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        l.experts[0][1] = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        l.experts[0][2] = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        for j in 0..3 {
            l.biases[0][j] = vec![0.0];
        }
        let gate = GateVector::one_hot(1, 0);
        let (y, _) = l.forward(&vec![vec![1.0]; 3], &gate).unwrap();
        assert!((y[0] - 6.0).abs() < 1e-15);
    }

    #[test]
    fn contextual_rejects_bad_shapes_and_gates() {
        let l = ContextualMoeLayer::glorot(2, 1, 3, 3, &mut Rng::new(1));
        let gate = GateVector::uniform(2);
        assert!(l.forward(&vec![vec![0.0; 3]; 2], &gate).is_err()); // short window
        let bad_gate = GateVector::one_hot(3, 0);
        assert!(l.forward(&vec![vec![0.0; 3]; 3], &bad_gate).is_err());
        // off-simplex beyond 1e-6
        let off = GateVector::new(vec![0.6, 0.6], 0.5).unwrap();
        assert!(l.forward(&vec![vec![0.0; 3]; 3], &off).is_err());
    }

    #[test]
    fn contextual_zero_grad_out_gives_zero_grads() {
        let mut rng = Rng::new(7);
        let l = ContextualMoeLayer::glorot(2, 1, 4, 3, &mut rng);
        let gate = GateVector::new(vec![0.3, 0.7], 1e-9).unwrap();
        let window = vecs(&mut rng, 3, 3);
        let (_, cache) = l.forward(&window, &gate).unwrap();
        let g = l.backward(&cache, &[0.0; 4]).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.gate.iter().all(|&v| v == 0.0));
        assert!(g.window.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn contextual_single_class_gate_grad_is_scalar_product() {
        let mut rng = Rng::new(8);
        let l = ContextualMoeLayer::glorot(1, 0, 3, 3, &mut rng);
        let gate = GateVector::one_hot(1, 0);
        let x = vecs(&mut rng, 1, 3);
        let (_, cache) = l.forward(&x, &gate).unwrap();
        let grad_out = [0.5, -1.0, 2.0];
        let g = l.backward(&cache, &grad_out).unwrap();
        // grad_gate = grad_out . (A x + b); with alpha=1 the class sum is the output
        let (y, _) = l.forward(&x, &gate).unwrap();
        let want: f64 = y.iter().zip(&grad_out).map(|(a, b)| a * b).sum();
        assert!((g.gate[0] - want).abs() < 1e-12);
    }

    #[test]
    fn gated_single_expert_is_plain_affine() {
        let mut rng = Rng::new(9);
        let b = glorot_init(4, 4, &mut rng);
        let layer = GatedMoeLayer::glorot(vec![ExpertMap::Dense(b.clone())], &mut rng).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        let (z, _) = layer.forward(&x).unwrap();
        assert_eq!(z, b.apply(&x).unwrap());
    }

    #[test]
    fn gated_hand_case_uniform_gate() {
        // B_1=[1], B_2=[3], zero gate params force beta=[0.5,0.5]; y=2 -> 4
        let experts = vec![
            ExpertMap::Dense(Matrix::from_vec(1, 1, vec![1.0]).unwrap()),
            ExpertMap::Dense(Matrix::from_vec(1, 1, vec![3.0]).unwrap()),
        ];
        let layer = GatedMoeLayer::new(
            experts,
            vec![vec![0.0], vec![0.0]],
            Matrix::zeros(2, 1),
            vec![0.0, 0.0],
        )
        .unwrap();
        let (z, _) = layer.forward(&[2.0]).unwrap();
        assert!((z[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn gated_identical_experts_gate_invariant() {
        let mut rng = Rng::new(10);
        let b = glorot_init(3, 3, &mut rng);
        let bias = vec![0.1, -0.2, 0.3];
        let experts = vec![ExpertMap::Dense(b.clone()), ExpertMap::Dense(b.clone())];
        let x: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let mut outputs = Vec::new();
        for seed in 0..5 {
            let gate_w = glorot_init(2, 3, &mut Rng::new(seed + 100));
            let layer = GatedMoeLayer::new(
                experts.clone(),
                vec![bias.clone(); 2],
                gate_w,
                vec![0.0, 0.0],
            )
            .unwrap();
            outputs.push(layer.forward(&x).unwrap().0);
        }
        for o in &outputs[1..] {
            for (a, b) in o.iter().zip(&outputs[0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // and the gate-parameter gradients vanish
        let layer = GatedMoeLayer::new(
            experts,
            vec![bias; 2],
            glorot_init(2, 3, &mut rng),
            vec![0.0, 0.0],
        )
        .unwrap();
        let (_, cache) = layer.forward(&x).unwrap();
        let (_, grads) = layer.backward(&cache, &[1.0, -0.5, 0.2]).unwrap();
        for g in &grads[..layer.gate_weights.param_count() + 2] {
            assert!(g.abs() < 1e-12, "gate grad {g}");
        }
    }

    #[test]
    fn gated_banded_expert_equals_densified() {
        let mut rng = Rng::new(11);
        let banded = BandedMatrix::glorot(5, 2, &mut rng).unwrap();
        let gate_w = glorot_init(2, 5, &mut rng);
        let other = glorot_init(5, 5, &mut rng);
        let mk = |e0: ExpertMap| {
            GatedMoeLayer::new(
                vec![e0, ExpertMap::Dense(other.clone())],
                vec![vec![0.0; 5]; 2],
                gate_w.clone(),
                vec![0.0; 2],
            )
            .unwrap()
        };
        let l_banded = mk(ExpertMap::Banded(banded.clone()));
        let l_dense = mk(ExpertMap::Dense(banded.densify()));
        let x: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        assert_eq!(l_banded.forward(&x).unwrap().0, l_dense.forward(&x).unwrap().0);
    }

    #[test]
    fn eigen_single_expert_ignores_gate() {
        let mut rng = Rng::new(12);
        let l = EigenMoeLayer::glorot(1, 3, 4, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        let (z, _) = l.forward(&x).unwrap();
        let mut f = l.expert_weights[0].apply(&x).unwrap();
        for (fk, bk) in f.iter_mut().zip(&l.expert_biases[0]) {
            *fk = (*fk + bk).max(0.0);
        }
        assert_eq!(z, f);
    }

    #[test]
    fn eigen_hand_case() {
        // f1=ReLU(x), f2=ReLU(-x), uniform gate, x=2 -> 1
        let mut l = EigenMoeLayer::glorot(2, 1, 1, &mut Rng::new(1));
        l.expert_weights[0] = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        l.expert_weights[1] = Matrix::from_vec(1, 1, vec![-1.0]).unwrap();
        l.expert_biases = vec![vec![0.0], vec![0.0]];
        l.gate_weights = Matrix::zeros(2, 1);
        l.gate_bias = vec![0.0, 0.0];
        let (z, _) = l.forward(&[2.0]).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eigen_identical_experts_gate_invariant() {
        let mut rng = Rng::new(13);
        let w = glorot_init(3, 4, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        let mut first = None;
        for seed in 0..4 {
            let mut l = EigenMoeLayer::glorot(2, 3, 4, &mut Rng::new(seed + 55));
            l.expert_weights = vec![w.clone(), w.clone()];
            l.expert_biases = vec![vec![0.0; 3]; 2];
            let (z, _) = l.forward(&x).unwrap();
            match &first {
                None => first = Some(z),
                Some(f) => {
                    for (a, b) in z.iter().zip(f) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    fn single_layer_stack(layer: Layer, targets: usize, rng: &mut Rng) -> LayerStack {
        let out = layer.out_dim();
        let head = AffineLayer::glorot(targets, out, rng);
        LayerStack::new(vec![layer, Layer::Affine(head)], targets).unwrap()
    }

    #[test]
    fn finite_differences_all_layer_types() {
        for seed in 0..5u64 {
            let mut rng = Rng::new(seed * 31 + 1);

            // affine + relu
            let mut stack = LayerStack::new(
                vec![
                    Layer::Affine(AffineLayer::glorot(5, 4, &mut rng)),
                    Layer::Relu { dim: 5 },
                    Layer::Affine(AffineLayer::glorot(3, 5, &mut rng)),
                ],
                3,
            )
            .unwrap();
            let window = vecs(&mut rng, 1, 4);
            let rep = grad_check_stack(&mut stack, &window, None, 1, 1e-5, 1e-6).unwrap();
            assert!(rep.passed(), "affine/relu: {rep:?}");

            // contextual MoE
            let ctx = ContextualMoeLayer::glorot(3, 1, 4, 5, &mut rng);
            let mut stack = single_layer_stack(Layer::ContextualMoe(ctx), 3, &mut rng);
            let window = vecs(&mut rng, 3, 5);
            let gate = GateVector::new(vec![0.2, 0.5, 0.3], 1e-9).unwrap();
            let rep =
                grad_check_stack(&mut stack, &window, Some(&gate), 0, 1e-5, 1e-6).unwrap();
            assert!(rep.passed(), "contextual: {rep:?}");
            let rep = grad_check_gate(&stack, &window, &gate, 0, 1e-5, 1e-6).unwrap();
            assert!(rep.passed(), "contextual gate: {rep:?}");

            // gated MoE, dense + banded experts
            let gated_dense = GatedMoeLayer::glorot(
                vec![
                    ExpertMap::Dense(glorot_init(5, 5, &mut rng)),
                    ExpertMap::Banded(BandedMatrix::glorot(5, 1, &mut rng).unwrap()),
                ],
                &mut rng,
            )
            .unwrap();
            let mut stack = single_layer_stack(Layer::GatedMoe(gated_dense), 3, &mut rng);
            let window = vecs(&mut rng, 1, 5);
            let rep = grad_check_stack(&mut stack, &window, None, 2, 1e-5, 1e-6).unwrap();
            assert!(rep.passed(), "gated dense+banded: {rep:?}");

            let gated_lr = GatedMoeLayer::glorot(
                vec![
                    ExpertMap::LowRank(LowRankMatrix::new(glorot_init(3, 5, &mut rng)).unwrap()),
                    ExpertMap::LowRank(LowRankMatrix::new(glorot_init(3, 5, &mut rng)).unwrap()),
                ],
                &mut rng,
            )
            .unwrap();
            let mut stack = single_layer_stack(Layer::GatedMoe(gated_lr), 3, &mut rng);
            let rep = grad_check_stack(&mut stack, &window, None, 0, 1e-5, 1e-6).unwrap();
            assert!(rep.passed(), "gated low-rank: {rep:?}");

            // eigen MoE
            let eig = EigenMoeLayer::glorot(3, 4, 5, &mut rng);
            let mut stack = single_layer_stack(Layer::EigenMoe(eig), 3, &mut rng);
            let rep = grad_check_stack(&mut stack, &window, None, 1, 1e-5, 1e-6).unwrap();
            assert!(rep.passed(), "eigen: {rep:?}");
        }
    }

    #[test]
    fn negated_gradient_is_flagged() {
        let mut rng = Rng::new(77);
        let mut stack = LayerStack::new(
            vec![Layer::Affine(AffineLayer::glorot(3, 4, &mut rng))],
            3,
        )
        .unwrap();
        let window = vecs(&mut rng, 1, 4);
        let (_, _, grads) = stack.loss_and_grads(&window, None, 1).unwrap();
        // direct comparison with a deliberately negated analytic gradient
        let step = 1e-5;
        let mut params = stack.layers()[0].flat_params();
        let orig = params[0];
        params[0] = orig + step;
        stack.layers_mut()[0].set_flat_params(&params);
        let plus = stack.forward(&window, None, 1).unwrap().0;
        params[0] = orig - step;
        stack.layers_mut()[0].set_flat_params(&params);
        let minus = stack.forward(&window, None, 1).unwrap().0;
        let fd = (plus - minus) / (2.0 * step);
        let negated = -grads.per_layer[0][0];
        assert!(rel_err(negated, fd) > 1e-6);
    }

    #[test]
    fn one_hot_gates_select_single_expert() {
        let mut rng = Rng::new(14);
        let l = ContextualMoeLayer::glorot(3, 0, 4, 4, &mut rng);
        let x = vecs(&mut rng, 1, 4);
        for i in 0..3 {
            let gate = GateVector::one_hot(3, i);
            let (y, _) = l.forward(&x, &gate).unwrap();
            let mut want = l.experts[i][0].apply(&x[0]).unwrap();
            for (w, b) in want.iter_mut().zip(&l.biases[i][0]) {
                *w += b;
            }
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn moe_affine_in_input_given_fixed_gate() {
        // superposition within 1e-12 once the gate is held constant
        let mut rng = Rng::new(15);
        let l = ContextualMoeLayer::glorot(2, 1, 3, 3, &mut rng);
        let gate = GateVector::new(vec![0.4, 0.6], 1e-9).unwrap();
        let w1 = vecs(&mut rng, 3, 3);
        let w2 = vecs(&mut rng, 3, 3);
        let (y1, _) = l.forward(&w1, &gate).unwrap();
        let (y2, _) = l.forward(&w2, &gate).unwrap();
        let (a, b) = (0.7, -1.3);
        let combo: Vec<Vec<f64>> = w1
            .iter()
            .zip(&w2)
            .map(|(f1, f2)| f1.iter().zip(f2).map(|(x, y)| a * x + b * y).collect())
            .collect();
        let zeros = vec![vec![0.0; 3]; 3];
        let (y0, _) = l.forward(&zeros, &gate).unwrap();
        let (yc, _) = l.forward(&combo, &gate).unwrap();
        // affine: f(ax+by) = a f(x) + b f(y) + (1-a-b) f(0)
        for k in 0..3 {
            let want = a * y1[k] + b * y2[k] + (1.0 - a - b) * y0[k];
            assert!((yc[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn stack_rejects_broken_dim_chain() {
        let mut rng = Rng::new(16);
        let err = LayerStack::new(
            vec![
                Layer::Affine(AffineLayer::glorot(5, 4, &mut rng)),
                Layer::Affine(AffineLayer::glorot(3, 6, &mut rng)),
            ],
            3,
        );
        assert!(err.is_err());
    }

    #[test]
    fn logistic_regression_stack() {
        // [Affine, SoftmaxCE] behaves as multinomial logistic regression
        let mut rng = Rng::new(17);
        let stack = LayerStack::new(
            vec![Layer::Affine(AffineLayer::glorot(3, 2, &mut rng))],
            3,
        )
        .unwrap();
        let x = vecs(&mut rng, 1, 2);
        let (loss, posteriors, _) = stack.forward(&x, None, 0).unwrap();
        let sum: f64 = posteriors.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!((loss + posteriors[0].ln()).abs() < 1e-12);
    }
}
