//! Loss values and gradients against central differences on random inputs.

use proptest::prelude::*;
use voco::loss::{basis_similarity, prediction_loss, regularization_loss, similarity_logits, total_loss};

const H: f64 = 1e-6;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= (1e-4 * a.abs().max(b.abs())).max(1e-6)
}

fn l_pred(p: &[f64], q: &[Vec<f64>], y: &[f64]) -> f64 {
    prediction_loss(&similarity_logits(p, q).unwrap(), y).unwrap()
}

fn l_reg(q: &[Vec<f64>]) -> f64 {
    regularization_loss(&basis_similarity(q).unwrap()).unwrap()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Inputs away from the clamp and log-guard kinks, where the loss is smooth.
fn smooth(p: &[f64], q: &[Vec<f64>], y: &[f64]) -> bool {
    q.iter().zip(y).all(|(qi, &yi)| {
        let c = cos(p, qi);
        c.abs() > 1e-3 && (yi - c.max(0.0)).abs() > 1e-3 && (yi - c.max(0.0)).abs() < 1.0 - 1e-3
    }) && (0..q.len()).all(|i| (i + 1..q.len()).all(|j| cos(&q[i], &q[j]).abs() > 1e-3))
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>, Vec<f64>, f64)> {
    (2usize..=16, 2usize..=9).prop_flat_map(|(c, n)| {
        (
            prop::collection::vec(-1.0f64..1.0, c),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, c), n),
            prop::collection::vec(0.01f64..1.0, n),
            0.0f64..2.0,
        )
            .prop_map(|(p, q, w, lambda)| {
                let s: f64 = w.iter().sum();
                (p, q, w.into_iter().map(|v| v / s).collect(), lambda)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn value_ranges((p, q, y, lambda) in instance()) {
        let (r, _) = total_loss(&p, &q, &y, lambda).unwrap();
        prop_assert!(r.l_pred >= 0.0);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r.l_reg));
        prop_assert!(r.l.iter().all(|&l| (0.0..=1.0 + 1e-12).contains(&l)));
        prop_assert_eq!(r.l_total, r.l_pred + lambda * r.l_reg);
    }

    #[test]
    fn analytic_gradients_match_central_differences((p, q, y, lambda) in instance()) {
        prop_assume!(smooth(&p, &q, &y));
        let (_, g) = total_loss(&p, &q, &y, lambda).unwrap();
        for k in 0..p.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[k] += H;
            b[k] -= H;
            let fd = (l_pred(&a, &q, &y) - l_pred(&b, &q, &y)) / (2.0 * H);
            prop_assert!(close(g.dp[k], fd), "dp[{k}] {} vs {fd}", g.dp[k]);
        }
        for i in 0..q.len() {
            for k in 0..q[i].len() {
                let (mut a, mut b) = (q.clone(), q.clone());
                a[i][k] += H;
                b[i][k] -= H;
                let fd = lambda * (l_reg(&a) - l_reg(&b)) / (2.0 * H);
                prop_assert!(close(g.dq_regularization[i][k], fd));
                prop_assert_eq!(g.dq_prediction[i][k], 0.0);
            }
        }
    }

    #[test]
    fn rescaling_embeddings_changes_nothing((p, q, y, lambda) in instance(), k in 0.1f64..10.0) {
        let (a, _) = total_loss(&p, &q, &y, lambda).unwrap();
        let ps: Vec<f64> = p.iter().map(|v| v * k).collect();
        let qs: Vec<Vec<f64>> = q.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        let (b, _) = total_loss(&ps, &qs, &y, lambda).unwrap();
        prop_assert!((a.l_total - b.l_total).abs() < 1e-9);
    }
}
