//! Proptest strategies for stored types.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use childwatch::agents::{
    Caption, CaptionSequence, DebateRound, DebateTranscript, Decision, Risk, ThreatAssessment,
    ThreatLabel, Verdict,
};
use childwatch::ingest::BatchId;
use childwatch::store::{CycleError, EvidenceRef, Incident};
use proptest::prelude::*;

pub fn ts() -> impl Strategy<Value = DateTime<Utc>> {
    (0i64..4_000_000_000, 0u32..1_000_000_000).prop_map(|(s, ns)| DateTime::from_timestamp(s, ns).unwrap())
}

pub fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 .,'\"\\\\\u{e9}\u{4e2d}\n\t-]{0,24}"
}

pub fn assessment() -> impl Strategy<Value = ThreatAssessment> {
    (0u8..3, 0.0f64..=1.0, text(), prop::collection::vec("[a-z][a-z ]{0,11}", 0..4)).prop_map(|(l, c, r, mut cues)| {
        let label = [ThreatLabel::Normal, ThreatLabel::Suspicious, ThreatLabel::Abduction][l as usize];
        if label == ThreatLabel::Abduction && cues.is_empty() {
            cues.push("led away".into());
        }
        ThreatAssessment::new(label, c, r, cues).unwrap()
    })
}

pub fn transcript() -> impl Strategy<Value = DebateTranscript> {
    (
        assessment(),
        prop::collection::vec((text(), text(), assessment()), 0..4),
        proptest::option::of(text()),
    )
        .prop_map(|(initial, rounds, failure)| {
            let rounds: Vec<DebateRound> = rounds
                .into_iter()
                .enumerate()
                .map(|(i, (challenge, reply, revised))| DebateRound {
                    round: i as u32 + 1,
                    challenge,
                    reply,
                    revised,
                })
                .collect();
            DebateTranscript {
                initial,
                rounds_used: rounds.len() as u32,
                rounds,
                failure,
            }
        })
}

pub fn decision() -> impl Strategy<Value = Decision> {
    (any::<bool>(), any::<bool>(), text(), assessment(), proptest::option::of(transcript())).prop_map(
        |(alert, high, explanation, assessment, transcript)| Decision {
            verdict: if alert { Verdict::Alert } else { Verdict::NoAlert },
            confidence: assessment.confidence,
            explanation,
            risk: if high { Risk::High } else { Risk::Low },
            assessment,
            transcript,
        },
    )
}

pub fn captions(batch: u64) -> impl Strategy<Value = CaptionSequence> {
    (ts(), prop::collection::vec(("[a-zA-Z ]{1,30}", prop::collection::vec("[a-z]{1,8}", 0..3)), 1..6)).prop_map(
        move |(start, items)| {
            let captions = items
                .into_iter()
                .enumerate()
                .map(|(i, (text, entities))| Caption {
                    frame_seq: i as u64 + 1,
                    text: format!("x{text}"),
                    entities,
                    captured_at: start + chrono::TimeDelta::seconds(i as i64),
                })
                .collect();
            CaptionSequence::new(BatchId(batch), captions).unwrap()
        },
    )
}

prop_compose! {
    pub fn incident()(
        batch in 1u64..10_000,
        source in "[a-z0-9:/._-]{1,20}",
        created in ts(),
        start in ts(),
        span in 0i64..10,
        frames in prop::collection::vec((1u64..100, "[a-f0-9]{64}", ts()), 0..5),
        caption_seed in any::<bool>(),
        assessment_initial in proptest::option::of(assessment()),
        transcript in proptest::option::of(transcript()),
        decision in proptest::option::of(decision()),
        error in proptest::option::of(("[a-z]{3,10}", text())),
        latencies in prop::collection::btree_map("[a-z]{3,10}", 0.0f64..1e6, 0..5),
    )(
        caption_seq in proptest::option::weighted(if caption_seed { 0.9 } else { 0.1 }, captions(batch)),
        batch in Just(batch), source in Just(source), created in Just(created), start in Just(start),
        span in Just(span), frames in Just(frames), assessment_initial in Just(assessment_initial),
        transcript in Just(transcript), decision in Just(decision), error in Just(error), latencies in Just(latencies),
    ) -> Incident {
        let mut i = Incident::draft(BatchId(batch), source, (start, start + chrono::TimeDelta::seconds(span)));
        i.created_at = created;
        i.frames = frames
            .into_iter()
            .map(|(seq, sha256, captured_at)| EvidenceRef {
                frame_seq: seq,
                path: format!("evidence/x/{seq}.png"),
                sha256,
                captured_at,
            })
            .collect();
        i.caption_seq = caption_seq;
        i.assessment_initial = assessment_initial;
        i.transcript = transcript;
        i.error = error.map(|(stage, message)| CycleError { stage, message });
        // the store rejects cycles with neither
        i.decision = if decision.is_none() && i.error.is_none() {
            Some(Decision {
                verdict: Verdict::NoAlert,
                confidence: 0.1,
                explanation: "quiet".into(),
                risk: Risk::Low,
                assessment: ThreatAssessment::new(ThreatLabel::Normal, 0.1, "", vec![]).unwrap(),
                transcript: None,
            })
        } else {
            decision
        };
        i.stage_latencies_ms = latencies.into_iter().collect::<BTreeMap<_, _>>();
        i
    }
}
