mod common;

use proptest::prelude::*;

use chess_probe::probes::{
    loss_concept_vector, loss_logistic, loss_sequence, train_concept_vector, train_logistic, train_sequence,
    ConceptVectorProbe, HyperParams, LogisticProbe, Probe, SequenceProbe,
};

use common::{gaussian_rows, refs, rng};

fn hyper(seed: u64) -> HyperParams {
    HyperParams {
        epochs: 20,
        learning_rate: 0.05,
        seed,
        ..HyperParams::default()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn concept_vector_ranking_is_scale_invariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let v = gaussian_rows(&mut r, 1, 6, 1.0).remove(0);
        let xs = gaussian_rows(&mut r, 20, 6, 1.0);
        let p = ConceptVectorProbe { v: v.clone(), threshold: 0.3 };
        let q = ConceptVectorProbe { v: v.iter().map(|x| c * x).collect(), threshold: 0.3 * c };
        let sp: Vec<f64> = xs.iter().map(|x| p.score(x)).collect();
        let sq: Vec<f64> = xs.iter().map(|x| q.score(x)).collect();
        prop_assert_eq!(order(&sp), order(&sq));
        for x in &xs {
            prop_assert_eq!(p.predict(x), q.predict(x));
        }
    }

    #[test]
    fn logistic_loss_is_label_flip_symmetric(seed in any::<u64>(), lambda in 0.0f64..0.1) {
        let mut r = rng(seed);
        let pos = gaussian_rows(&mut r, 5, 4, 1.0);
        let neg = gaussian_rows(&mut r, 7, 4, 1.0);
        let theta = gaussian_rows(&mut r, 1, 5, 1.0).remove(0);
        let p = LogisticProbe::from_flat(&theta);
        let flipped = LogisticProbe::from_flat(&theta.iter().map(|x| -x).collect::<Vec<_>>());
        let (l1, g1) = loss_logistic(&p, &refs(&pos), &refs(&neg), lambda).unwrap();
        let (l2, g2) = loss_logistic(&flipped, &refs(&neg), &refs(&pos), lambda).unwrap();
        prop_assert!(close(l1, l2), "{} vs {}", l1, l2);
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            prop_assert!(close(*a, -b));
        }
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pos = gaussian_rows(&mut r, 12, 6, 1.0);
        let neg = gaussian_rows(&mut r, 9, 6, 1.0);
        let (pos, neg) = (refs(&pos), refs(&neg));
        let h = hyper(seed);
        prop_assert_eq!(train_logistic(&pos, &neg, &h).unwrap(), train_logistic(&pos, &neg, &h).unwrap());
        prop_assert_eq!(
            train_sequence(&pos, &neg, 2, 3, &h).unwrap(),
            train_sequence(&pos, &neg, 2, 3, &h).unwrap()
        );
        let pairs: Vec<(&[f64], &[f64])> = pos.iter().copied().zip(neg.iter().copied()).collect();
        prop_assert_eq!(train_concept_vector(&pairs, &h).unwrap(), train_concept_vector(&pairs, &h).unwrap());
    }

    #[test]
    fn full_batch_descent_lowers_the_loss(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pos = gaussian_rows(&mut r, 10, 4, 1.0);
        let neg = gaussian_rows(&mut r, 10, 4, 1.0);
        let (pos, neg) = (refs(&pos), refs(&neg));
        let lr = 0.01;

        // smooth and convex: every step must not increase the loss
        let mut p = LogisticProbe::from_flat(&gaussian_rows(&mut r, 1, 5, 1.0)[0]);
        let (mut prev, _) = loss_logistic(&p, &pos, &neg, 0.0).unwrap();
        let first = prev;
        for _ in 0..100 {
            let (_, g) = loss_logistic(&p, &pos, &neg, 0.0).unwrap();
            let theta: Vec<f64> = p.flat().iter().zip(g.flat()).map(|(x, g)| x - lr * g).collect();
            p = LogisticProbe::from_flat(&theta);
            let (l, _) = loss_logistic(&p, &pos, &neg, 0.0).unwrap();
            prop_assert!(l <= prev + 1e-12, "{} > {}", l, prev);
            prev = l;
        }
        prop_assert!(prev < first);

        // ReLU kinks allow tiny local increases, so compare the endpoints
        let mut s = SequenceProbe::init(2, 2, seed);
        let (first, _) = loss_sequence(&s, &pos, &neg, 0.0).unwrap();
        for _ in 0..100 {
            let (_, g) = loss_sequence(&s, &pos, &neg, 0.0).unwrap();
            let theta: Vec<f64> = s.flat().iter().zip(g.flat()).map(|(x, g)| x - lr * g).collect();
            s = SequenceProbe::from_flat(2, 2, &theta);
        }
        let (last, _) = loss_sequence(&s, &pos, &neg, 0.0).unwrap();
        prop_assert!(last <= first, "{} > {}", last, first);

        let pairs: Vec<(&[f64], &[f64])> = pos.iter().copied().zip(neg.iter().copied()).collect();
        let mut v = gaussian_rows(&mut r, 1, 4, 0.1).remove(0);
        let (first, _) = loss_concept_vector(&v, &pairs, 0.0).unwrap();
        for _ in 0..100 {
            let (_, g) = loss_concept_vector(&v, &pairs, 0.0).unwrap();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            for (x, gi) in v.iter_mut().zip(&g) {
                *x -= 1e-3 * gi;
            }
        }
        let (last, _) = loss_concept_vector(&v, &pairs, 0.0).unwrap();
        prop_assert!(last <= first + 1e-12, "{} > {}", last, first);
    }

    #[test]
    fn probes_survive_text_serialization(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = |r: &mut _, n| gaussian_rows(r, 1, n, 10.0).remove(0);
        let probes = [
            Probe::ConceptVector(ConceptVectorProbe { v: g(&mut r, 5), threshold: g(&mut r, 1)[0] }),
            Probe::Logistic(LogisticProbe::from_flat(&g(&mut r, 6))),
            Probe::Sequence(SequenceProbe::from_flat(3, 2, &g(&mut r, 3 + 4 + 1))),
        ];
        for p in probes {
            prop_assert_eq!(Probe::from_text(&p.to_text()).unwrap(), p);
        }
    }
}
