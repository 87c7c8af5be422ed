use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, TestRunner};
use selfreason::datagen::{DsrRecord, Polarity, QcScores};
use selfreason::serialize_trajectory;
use selfreason::training::{build_stage_records, read_masked_records, write_masked_records, SegmentLabel};
use selfreason::trajectory::{
    Analysis, Document, EvidenceItem, Question, RelevanceJudgment, SelfReasoningTrajectory, TaskKind,
};

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 {}\"\\\\\n,.éü中😀]{0,20}".prop_map(|s| format!("t{s}"))
}

fn record() -> impl Strategy<Value = DsrRecord> {
    let ev = prop::collection::vec((text(), text(), 1usize..6), 0..3);
    (any::<bool>(), text(), ev, text(), text(), text()).prop_map(|(relevant, reason, ev, analysis, answer, q)| {
        let eap = if relevant {
            ev.into_iter().map(|(c, r, i)| EvidenceItem { cite_content: c, reason_for_cite: r, doc_index: i }).collect()
        } else {
            Vec::new()
        };
        let trajectory = SelfReasoningTrajectory::new(
            RelevanceJudgment { relevant, relevant_reason: reason },
            eap,
            Analysis { analysis, answer },
        )
        .unwrap();
        DsrRecord {
            question: Question { id: q.clone(), text: q, gold_answers: Vec::new(), task_kind: TaskKind::ShortQa },
            docs: vec![Document { id: "d".into(), title: "T".into(), body: "B".into(), rank: 1, score: 1.0 }],
            trajectory,
            polarity: if relevant { Polarity::Positive } else { Polarity::Negative },
            qc_scores: QcScores { answer_correct: true, citation_recall: None, citation_precision: None },
        }
    })
}

fn chars(s: &str, start: usize, end: usize) -> String {
    s.chars().skip(start).take(end - start).collect()
}

#[test]
fn masks_nest_over_two_hundred_records() {
    let mut runner = TestRunner::new(Config { cases: 200, ..Config::default() });
    runner
        .run(&record(), |r| {
            let per_stage: Vec<_> = (1..=3u8)
                .map(|s| {
                    let (mut recs, dropped) = build_stage_records(std::slice::from_ref(&r), s).unwrap();
                    assert!(dropped.is_empty());
                    recs.remove(0)
                })
                .collect();
            let labels: Vec<BTreeSet<SegmentLabel>> =
                per_stage.iter().map(|m| m.masked_labels.iter().copied().collect()).collect();
            prop_assert!(labels[0].is_superset(&labels[1]));
            prop_assert!(labels[1].is_superset(&labels[2]));
            prop_assert!(labels[2].is_empty());
            prop_assert_eq!(&labels[0], &[SegmentLabel::Eap, SegmentLabel::Tap].into_iter().collect());

            for m in &per_stage {
                prop_assert!(!m.masked_labels.contains(&SegmentLabel::Answer));
                let order: Vec<SegmentLabel> = m.segments.iter().map(|s| s.label).collect();
                prop_assert_eq!(order, [SegmentLabel::Rap, SegmentLabel::Eap, SegmentLabel::Tap, SegmentLabel::Answer]);
                prop_assert_eq!(m.segments[0].start, 0);
                prop_assert_eq!(m.segments[3].end, m.target_text.chars().count());
                for w in m.segments.windows(2) {
                    prop_assert_eq!(w[0].end, w[1].start);
                }
                let covered: String = m.segments.iter().map(|s| chars(&m.target_text, s.start, s.end)).collect();
                prop_assert_eq!(&covered, &m.target_text);
                let canonical = serialize_trajectory(&r.trajectory);
                prop_assert!(m.target_text.starts_with(&canonical));
                prop_assert_eq!(chars(&m.target_text, m.segments[3].start, m.segments[3].end), format!("\nFinal answer: {}", r.trajectory.tap.answer));
                let spans: Vec<(usize, usize)> = m.masked_spans.iter().map(|s| (s.start, s.end)).collect();
                let expected: Vec<(usize, usize)> = m
                    .segments
                    .iter()
                    .filter(|s| m.masked_labels.contains(&s.label))
                    .map(|s| (s.start, s.end))
                    .collect();
                prop_assert_eq!(spans, expected);
            }
            Ok(())
        })
        .unwrap();
}

#[test]
fn masked_records_round_trip_through_jsonl() {
    let mut runner = TestRunner::deterministic();
    let records: Vec<DsrRecord> = (0..20).map(|_| record().new_tree(&mut runner).unwrap().current()).collect();
    let (masked, _) = build_stage_records(&records, 1).unwrap();
    let mut buf = Vec::new();
    write_masked_records(&masked, &mut buf).unwrap();
    assert_eq!(read_masked_records(&buf[..]).unwrap(), masked);
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 20);
}
