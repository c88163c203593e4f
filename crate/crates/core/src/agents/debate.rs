use tracing::{debug, warn};

use crate::gateway::{render_template, Backend, ContentPart, ModelRequest, PromptPack, RequestKey};

use super::{
    request_assessment, AgentPolicy, AgentsError, CaptionSequence, DebateRound, DebateTranscript,
    ThreatAssessment, ThreatLabel,
};

/// True when a non-normal assessment sits inside the debate band.
pub fn should_debate(assessment: &ThreatAssessment, policy: &AgentPolicy) -> bool {
    assessment.label != ThreatLabel::Normal && policy.debate_band.contains(assessment.confidence)
}

fn render_rounds(rounds: &[DebateRound], pending: Option<(&str, &str)>) -> String {
    let mut out = String::from("Debate so far:\n");
    for r in rounds {
        out.push_str(&format!(
            "Round {} concerns: {}\nRound {} observations: {}\nRevised: {}\n",
            r.round,
            r.challenge,
            r.round,
            r.reply,
            r.revised.brief()
        ));
    }
    if let Some((challenge, reply)) = pending {
        let n = rounds.len() + 1;
        out.push_str(&format!(
            "Round {n} concerns: {challenge}\nRound {n} observations: {reply}\n"
        ));
    }
    out
}

/// Bounded challenge/reply exchange between the Situation Analyzer and the
/// Image Analyzer.
///
/// Each round the situation backend states its concerns, the image backend
/// answers with closer observations of `images`, and the situation backend
/// revises its assessment. The debate ends once the assessment no longer
/// qualifies for debate or after `max_debate_rounds`. A backend or parse
/// failure ends it early; the last good assessment is returned and the
/// transcript records the failure.
pub fn run_debate(
    seq: &CaptionSequence,
    initial: &ThreatAssessment,
    situation: &dyn Backend,
    image: &dyn Backend,
    images: &[ContentPart],
    policy: &AgentPolicy,
    prompts: &PromptPack,
) -> (ThreatAssessment, DebateTranscript) {
    let captions = seq.render();
    let batch = seq.batch_id.0;
    let mut current = initial.clone();
    let mut rounds: Vec<DebateRound> = Vec::new();
    let mut failure = None;

    for round in 1..=policy.max_debate_rounds {
        if !should_debate(&current, policy) {
            break;
        }
        match debate_round(
            round, &captions, batch, &current, &rounds, situation, image, images, prompts,
        ) {
            Ok(r) => {
                debug!(batch, round, from = %current.brief(), to = %r.revised.brief(), "debate round");
                current = r.revised.clone();
                rounds.push(r);
            }
            Err(e) => {
                warn!(batch, round, error = %e, "debate ended early");
                failure = Some(format!("round {round}: {e}"));
                break;
            }
        }
    }

    let transcript = DebateTranscript {
        initial: initial.clone(),
        rounds_used: rounds.len() as u32,
        rounds,
        failure,
    };
    (current, transcript)
}

#[allow(clippy::too_many_arguments)]
fn debate_round(
    round: u32,
    captions: &str,
    batch: u64,
    current: &ThreatAssessment,
    previous: &[DebateRound],
    situation: &dyn Backend,
    image: &dyn Backend,
    images: &[ContentPart],
    prompts: &PromptPack,
) -> Result<DebateRound, AgentsError> {
    let assessment_json = serde_json::to_string(current).expect("assessment serializes");
    let history = render_rounds(previous, None);

    let challenge_role = render_template(
        &prompts.debate_challenge_prompt,
        &[("captions", captions), ("assessment", &assessment_json)],
    );
    let challenge_req = ModelRequest::new(
        RequestKey::DebateChallenge { round },
        challenge_role,
        vec![ContentPart::text(history)],
    )
    .in_batch(batch);
    let challenge = situation.complete(&challenge_req)?.text.trim().to_string();

    let reply_role = render_template(
        &prompts.debate_reply_prompt,
        &[("captions", captions), ("challenge", &challenge)],
    );
    let mut reply_content = vec![ContentPart::text(challenge.clone())];
    reply_content.extend(images.iter().cloned());
    let reply_req = ModelRequest::new(RequestKey::DebateReply { round }, reply_role, reply_content)
        .in_batch(batch);
    let reply = image.complete(&reply_req)?.text.trim().to_string();

    let debate_block = render_rounds(previous, Some((&challenge, &reply)));
    let revise_role = render_template(
        &prompts.situation_prompt,
        &[("captions", captions), ("debate", &debate_block)],
    );
    let revise_req = ModelRequest::new(
        RequestKey::DebateRevision { round },
        revise_role,
        vec![ContentPart::text(debate_block.clone())],
    )
    .in_batch(batch);
    let revised = request_assessment(situation, &revise_req)?.assessment;

    Ok(DebateRound {
        round,
        challenge,
        reply,
        revised,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Caption;
    use crate::gateway::ScriptedBackend;
    use crate::ingest::BatchId;
    use chrono::Utc;

    fn assessment(label: ThreatLabel, confidence: f64) -> ThreatAssessment {
        ThreatAssessment::new(label, confidence, "r", vec!["unknown adult".into()]).unwrap()
    }

    fn seq() -> CaptionSequence {
        CaptionSequence::new(
            BatchId(1),
            vec![Caption {
                frame_seq: 1,
                text: "an adult walks with a child".into(),
                entities: vec!["child".into(), "adult".into()],
                captured_at: Utc::now(),
            }],
        )
        .unwrap()
    }

    fn json(label: &str, c: f64) -> String {
        format!(r#"{{"label":"{label}","confidence":{c},"rationale":"round","cues":["unknown adult"]}}"#)
    }

    fn script(revisions: &[(u32, String)]) -> ScriptedBackend {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for round in 1..=5 {
            pairs.push((format!("debate:{round}:challenge"), format!("concern {round}")));
            pairs.push((format!("debate:{round}:reply"), format!("observation {round}")));
        }
        for (round, text) in revisions {
            pairs.push((format!("debate:{round}"), text.clone()));
        }
        ScriptedBackend::from_pairs(pairs)
    }

    #[test]
    fn band_logic() {
        let policy = AgentPolicy::default();
        assert!(!should_debate(&assessment(ThreatLabel::Abduction, 0.95), &policy));
        assert!(should_debate(&assessment(ThreatLabel::Suspicious, 0.55), &policy));
        assert!(!should_debate(&assessment(ThreatLabel::Normal, 0.55), &policy));
    }

    #[test]
    fn stops_once_confidence_leaves_the_band() {
        // hand-walked: round 1 lifts 0.55 to 0.85, which is outside [0.40, 0.80)
        let backend = script(&[(1, json("abduction", 0.85)), (2, json("abduction", 0.99))]);
        let initial = assessment(ThreatLabel::Suspicious, 0.55);
        let (fin, transcript) = run_debate(
            &seq(), &initial, &backend, &backend, &[], &AgentPolicy::default(), &PromptPack::default(),
        );
        assert_eq!(transcript.rounds_used, 1);
        assert_eq!(fin.label, ThreatLabel::Abduction);
        assert_eq!(fin.confidence, 0.85);
        assert_eq!(transcript.rounds[0].challenge, "concern 1");
        assert_eq!(transcript.rounds[0].reply, "observation 1");
        let keys: Vec<String> = backend.requests().into_iter().map(|r| r.script_key).collect();
        assert_eq!(keys, vec!["debate:1:challenge", "debate:1:reply", "debate:1"]);
    }

    #[test]
    fn never_leaving_the_band_uses_every_round() {
        let backend = script(&[
            (1, json("suspicious", 0.6)),
            (2, json("suspicious", 0.65)),
            (3, json("suspicious", 0.7)),
        ]);
        let policy = AgentPolicy::default();
        let (fin, transcript) = run_debate(
            &seq(), &assessment(ThreatLabel::Suspicious, 0.5), &backend, &backend, &[], &policy,
            &PromptPack::default(),
        );
        assert_eq!(transcript.rounds_used, policy.max_debate_rounds);
        assert_eq!(fin.confidence, 0.7);
    }

    #[test]
    fn failure_in_round_two_keeps_round_one() {
        let mut backend_pairs = vec![
            ("debate:1:challenge".to_string(), "c1".to_string()),
            ("debate:1:reply".to_string(), "r1".to_string()),
            ("debate:1".to_string(), json("suspicious", 0.6)),
        ];
        backend_pairs.push(("debate:2:challenge".into(), "c2".into()));
        let backend = ScriptedBackend::from_pairs(backend_pairs);
        let (fin, transcript) = run_debate(
            &seq(), &assessment(ThreatLabel::Suspicious, 0.5), &backend, &backend, &[],
            &AgentPolicy::default(), &PromptPack::default(),
        );
        assert_eq!(transcript.rounds_used, 1);
        assert_eq!(fin.confidence, 0.6);
        let failure = transcript.failure.unwrap();
        assert!(failure.starts_with("round 2"), "{failure}");
    }

    #[test]
    fn zero_rounds_returns_initial() {
        let backend = script(&[]);
        let policy = AgentPolicy {
            max_debate_rounds: 0,
            ..AgentPolicy::default()
        };
        let initial = assessment(ThreatLabel::Suspicious, 0.5);
        let (fin, transcript) =
            run_debate(&seq(), &initial, &backend, &backend, &[], &policy, &PromptPack::default());
        assert_eq!(fin, initial);
        assert_eq!(transcript.rounds_used, 0);
        assert!(backend.requests().is_empty());
    }
}
