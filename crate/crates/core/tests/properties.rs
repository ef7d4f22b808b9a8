use cgrpo_core::grpo::compute_advantages;
use cgrpo_core::joint::{mix_gradients, MixRule};
use cgrpo_core::policy::{Gradient, PolicyDims};
use cgrpo_core::refinery::{validate_verdict, AuditStatus, AuditVerdict};
use cgrpo_core::rewards::{
    bleu1, format_reward, open_reward, parse_response, rouge1, ScorerRegistry, TaskType,
    SemanticScorer, TokenJaccard, TrigramCosine, Rewarder, RewardConfig,
};
use proptest::prelude::*;

const DIMS: PolicyDims = PolicyDims { vocab: 3, context: 2, embed: 2, hidden: 2 };

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            Just("lung"), Just("Right"), Just("ct"), Just("MRI,"), Just("x-ray"), Just("the"),
            Just("."), Just("liver"), Just("Liver"), Just("2"),
        ],
        0..7,
    )
    .prop_map(|w| w.join(" "))
}

fn raw_response() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        Just("<think>".to_string()),
        Just("</think>".to_string()),
        Just("<answer>".to_string()),
        Just("</answer>".to_string()),
        "[a-c ]{0,3}",
    ];
    prop::collection::vec(piece, 0..8).prop_map(|p| p.concat())
}

fn gradient() -> impl Strategy<Value = Gradient> {
    prop::collection::vec(-10.0f64..10.0, DIMS.num_params())
        .prop_map(|v| Gradient::from_parts(DIMS, v).unwrap())
}

fn note() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,6}", 0..15).prop_map(|w| w.join(" "))
}

fn verdict() -> impl Strategy<Value = AuditVerdict> {
    (
        prop_oneof![Just(AuditStatus::Consistent), Just(AuditStatus::NeedsFix), Just(AuditStatus::Drop)],
        "[ -~]{0,30}",
        "[ -~]{0,30}",
        "[A-Za-z][ -~]{0,30}",
        "[A-Za-z][ -~]{0,30}",
        note(),
    )
        .prop_map(|(status, ori_q, ori_a, new_q, new_a, notes)| AuditVerdict {
            status,
            ori_q,
            ori_a,
            new_q,
            new_a,
            notes,
        })
}

proptest! {
    #[test]
    fn metrics_bounded(a in text(), b in text()) {
        let reg = ScorerRegistry::default();
        let r = Rewarder::new(&RewardConfig::default(), &reg).unwrap();
        for v in [bleu1(&a, &b), rouge1(&a, &b), r.scorer().score(&a, &b), r.open_reward(&a, &b)] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn self_overlap_is_one(a in text()) {
        prop_assume!(!cgrpo_core::rewards::tokenize(&a).is_empty());
        prop_assert_eq!(bleu1(&a, &a), 1.0);
        prop_assert_eq!(rouge1(&a, &a), 1.0);
    }

    #[test]
    fn rouge_is_symmetric(a in text(), b in text()) {
        prop_assert!((rouge1(&a, &b) - rouge1(&b, &a)).abs() < 1e-15);
    }

    #[test]
    fn format_reward_iff_parse(raw in raw_response()) {
        prop_assert_eq!(format_reward(&raw) == 1.0, parse_response(&raw).is_ok());
    }

    #[test]
    fn lambda_extremes_isolate_components(a in text(), b in text()) {
        let (t, j) = (TrigramCosine, TokenJaccard);
        prop_assert_eq!(open_reward(&a, &b, 1.0, &t), open_reward(&a, &b, 1.0, &j));
        prop_assert_eq!(open_reward(&a, &b, 0.0, &t), t.score(&a, &b));
    }

    #[test]
    fn total_composes_task_and_format(raw in raw_response(), gold in text(), gamma in 0.0f64..=1.0) {
        let reg = ScorerRegistry::default();
        let cfg = RewardConfig { gamma, ..RewardConfig::default() };
        let r = Rewarder::new(&cfg, &reg).unwrap();
        for task in [TaskType::Close, TaskType::Open] {
            let b = r.total_reward(task, &raw, &gold);
            prop_assert!((b.total - (gamma * b.task_reward + (1.0 - gamma) * b.format_reward)).abs() < 1e-15);
            if b.format_reward == 0.0 {
                prop_assert_eq!(b.task_reward, 0.0);
            }
        }
    }

    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(0.0f64..1.0, 2..17)) {
        let a = compute_advantages(&rewards, 1e-8).unwrap();
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(std == 0.0 || (std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mixing_is_convex(gc in gradient(), go in gradient(), nc in 1usize..200, no in 1usize..200) {
        let m = mix_gradients(&gc, &go, nc, no, MixRule::AsPrinted).unwrap();
        for ((x, c), o) in m.as_slice().iter().zip(gc.as_slice()).zip(go.as_slice()) {
            prop_assert!(*x >= c.min(*o) - 1e-12 && *x <= c.max(*o) + 1e-12);
        }
    }

    #[test]
    fn mixing_is_linear(a in gradient(), b in gradient(), o in gradient(), s in -3.0f64..3.0, nc in 1usize..200, no in 1usize..200) {
        let mut combo = a.clone();
        combo.scale(s);
        combo.add_scaled(&b, 1.0).unwrap();
        let zero = Gradient::zeros(DIMS);
        let lhs = mix_gradients(&combo, &o, nc, no, MixRule::SameFraction).unwrap();
        let ma = mix_gradients(&a, &zero, nc, no, MixRule::SameFraction).unwrap();
        let mb = mix_gradients(&b, &zero, nc, no, MixRule::SameFraction).unwrap();
        let mo = mix_gradients(&zero, &o, nc, no, MixRule::SameFraction).unwrap();
        for i in 0..lhs.as_slice().len() {
            let rhs = s * ma.as_slice()[i] + mb.as_slice()[i] + mo.as_slice()[i];
            prop_assert!((lhs.as_slice()[i] - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn verdict_round_trips(v in verdict()) {
        prop_assert_eq!(validate_verdict(&v.to_json()).unwrap(), v);
    }
}
