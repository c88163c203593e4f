use crate::gateway::{render_template, Backend, ContentPart, ModelRequest, PromptPack, RequestKey};

use super::{
    request_assessment, AgentPolicy, AgentsError, CaptionSequence, Decision, DebateTranscript,
    Risk, ThreatAssessment, ThreatLabel, Verdict,
};

/// Turns the final assessment into a verdict. Alerts require an abduction
/// label at or above the alert threshold; risk is high at or above the
/// high-risk threshold. Pure and deterministic.
pub fn decide(
    fin: &ThreatAssessment,
    transcript: Option<&DebateTranscript>,
    policy: &AgentPolicy,
) -> Decision {
    let verdict = if fin.label == ThreatLabel::Abduction && fin.confidence >= policy.alert_threshold
    {
        Verdict::Alert
    } else {
        Verdict::NoAlert
    };
    let risk = if fin.confidence >= policy.high_risk_threshold {
        Risk::High
    } else {
        Risk::Low
    };

    let mut explanation = format!(
        "Assessed as {} with confidence {:.2}.",
        fin.label.as_str(),
        fin.confidence
    );
    let rationale = fin.rationale.trim();
    if !rationale.is_empty() {
        explanation.push(' ');
        explanation.push_str(rationale);
        if !rationale.ends_with(['.', '!', '?']) {
            explanation.push('.');
        }
    }
    if !fin.cues.is_empty() {
        explanation.push_str(&format!(" Cues: {}.", fin.cues.join(", ")));
    }
    if let Some(t) = transcript {
        explanation.push(' ');
        explanation.push_str(&t.summary(fin));
    }

    Decision {
        verdict,
        confidence: fin.confidence,
        explanation,
        risk,
        assessment: fin.clone(),
        transcript: transcript.cloned(),
    }
}

/// Variant that asks the situation backend for the final judgement before
/// applying the same thresholds.
pub fn decide_with_backend(
    seq: &CaptionSequence,
    fin: &ThreatAssessment,
    transcript: Option<&DebateTranscript>,
    backend: &dyn Backend,
    policy: &AgentPolicy,
    prompts: &PromptPack,
) -> Result<Decision, AgentsError> {
    let assessment = serde_json::to_string(fin).expect("assessment serializes");
    let transcript_json = transcript
        .map(|t| serde_json::to_string(t).expect("transcript serializes"))
        .unwrap_or_else(|| "none".into());
    let role = render_template(
        &prompts.decision_prompt,
        &[
            ("captions", &seq.render()),
            ("assessment", &assessment),
            ("transcript", &transcript_json),
        ],
    );
    let request = ModelRequest::new(
        RequestKey::Decision,
        role,
        vec![ContentPart::text(format!("Final assessment so far: {assessment}"))],
    )
    .in_batch(seq.batch_id.0);
    let judged = request_assessment(backend, &request)?.assessment;
    Ok(decide(&judged, transcript, policy))
}
