use crate::gateway::{render_template, Backend, ContentPart, ModelRequest, PromptPack, RequestKey};

use super::{AgentsError, CaptionSequence, ThreatAssessment};

const REPAIR_REMINDER: &str = "Your previous reply could not be used";

/// An assessment plus how many model calls it took (1, or 2 after a repair).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAssessment {
    pub assessment: ThreatAssessment,
    pub attempts: u32,
}

/// Pulls the JSON object out of a model reply: a ```json fence if present,
/// else any fence, else the outermost braces.
fn json_payload(text: &str) -> Option<&str> {
    for opener in ["```json", "```JSON", "```"] {
        if let Some(start) = text.find(opener) {
            let body = &text[start + opener.len()..];
            if let Some(end) = body.find("```") {
                let inner = body[..end].trim();
                if inner.starts_with('{') {
                    return Some(inner);
                }
            }
        }
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Parses and validates `{label, confidence, rationale, cues}` from a reply.
pub fn parse_assessment(text: &str) -> Result<ThreatAssessment, String> {
    let payload = json_payload(text).ok_or_else(|| "no JSON object in reply".to_string())?;
    serde_json::from_str::<ThreatAssessment>(payload).map_err(|e| e.to_string())
}

/// Sends a structured request and parses the reply, re-prompting once with a
/// format reminder if the first reply is malformed.
pub fn request_assessment(
    backend: &dyn Backend,
    request: &ModelRequest,
) -> Result<ParsedAssessment, AgentsError> {
    let first = backend.complete(request)?;
    let reason = match parse_assessment(&first.text) {
        Ok(assessment) => {
            return Ok(ParsedAssessment {
                assessment,
                attempts: 1,
            })
        }
        Err(reason) => reason,
    };
    let mut repair = request.clone();
    repair.repair = true;
    repair.content.push(ContentPart::text(format!(
        "{REPAIR_REMINDER} ({reason}). Reply again with only the fenced JSON block \
         {{\"label\", \"confidence\", \"rationale\", \"cues\"}}; label is one of normal, \
         suspicious, abduction and confidence is between 0 and 1."
    )));
    let second = backend.complete(&repair)?;
    parse_assessment(&second.text)
        .map(|assessment| ParsedAssessment {
            assessment,
            attempts: 2,
        })
        .map_err(|reason| AgentsError::MalformedAssessment {
            attempts: 2,
            reason,
        })
}

/// Assesses the whole caption sequence at once, captions embedded oldest first.
pub fn analyze_situation(
    seq: &CaptionSequence,
    backend: &dyn Backend,
    prompts: &PromptPack,
) -> Result<ParsedAssessment, AgentsError> {
    if seq.is_empty() {
        return Err(AgentsError::EmptySequence);
    }
    let captions = seq.render();
    let role = render_template(
        &prompts.situation_prompt,
        &[("captions", &captions), ("debate", "")],
    );
    let request = ModelRequest::new(
        RequestKey::Situation,
        role,
        vec![ContentPart::text(format!("Captions, oldest first:\n{captions}"))],
    )
    .in_batch(seq.batch_id.0);
    request_assessment(backend, &request)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Caption, ThreatLabel};
    use crate::gateway::ScriptedBackend;
    use crate::ingest::BatchId;
    use chrono::{TimeZone, Utc};

    fn seq(texts: &[&str]) -> CaptionSequence {
        let captions = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Caption {
                frame_seq: i as u64 + 1,
                text: t.to_string(),
                entities: vec![],
                captured_at: Utc.timestamp_opt(1_700_000_000 + i as i64, 0).unwrap(),
            })
            .collect();
        CaptionSequence::new(BatchId(1), captions).unwrap()
    }

    #[test]
    fn parses_plain_and_fenced_json() {
        let plain = r#"{"label":"abduction","confidence":0.9,"rationale":"r","cues":["child resisting"]}"#;
        let a = parse_assessment(plain).unwrap();
        assert_eq!(a.label, ThreatLabel::Abduction);
        assert_eq!(a.confidence, 0.9);
        assert_eq!(a.cues, vec!["child resisting"]);

        let fenced = "Step 1: the child plays.\n```json\n{\"label\":\"normal\",\"confidence\":0.95}\n```";
        assert_eq!(parse_assessment(fenced).unwrap().label, ThreatLabel::Normal);
    }

    #[test]
    fn rejects_bad_label_and_range() {
        assert!(parse_assessment(r#"{"label":"maybe"}"#).is_err());
        assert!(parse_assessment(r#"{"label":"normal","confidence":1.7}"#).is_err());
        assert!(parse_assessment("no json here").is_err());
        assert!(parse_assessment(r#"{"label":"abduction","confidence":0.9,"cues":[]}"#).is_err());
    }

    #[test]
    fn repair_path_recovers_once() {
        let backend = ScriptedBackend::from_pairs([
            ("situation", r#"{"label":"maybe"}"#),
            ("situation:repair", r#"{"label":"suspicious","confidence":0.5,"rationale":"unclear"}"#),
        ]);
        let parsed = analyze_situation(&seq(&["a child walks"]), &backend, &PromptPack::default())
            .unwrap();
        assert_eq!(parsed.attempts, 2);
        assert_eq!(parsed.assessment.label, ThreatLabel::Suspicious);
        let reqs = backend.requests();
        assert_eq!(reqs[1].script_key, "situation:repair");
        assert!(reqs[1].text.contains(REPAIR_REMINDER));
    }

    #[test]
    fn out_of_range_after_repair_is_malformed() {
        let bad = r#"{"label":"abduction","confidence":1.7,"cues":["x"]}"#;
        let backend = ScriptedBackend::from_pairs([("situation", bad), ("situation:repair", bad)]);
        let err = analyze_situation(&seq(&["x"]), &backend, &PromptPack::default()).unwrap_err();
        assert!(matches!(err, AgentsError::MalformedAssessment { attempts: 2, .. }));
    }

    #[test]
    fn abduction_scenario_from_captions() {
        let backend = ScriptedBackend::from_pairs([(
            "situation",
            r#"```json
{"label":"abduction","confidence":0.9,"rationale":"an unknown adult is leading a child away, and the child appears to be resisting","cues":["unknown adult","child resisting"]}
```"#,
        )]);
        let s = seq(&["a child plays", "an adult approaches", "the adult grabs the child's arm"]);
        let parsed = analyze_situation(&s, &backend, &PromptPack::default()).unwrap();
        assert_eq!(parsed.assessment.label, ThreatLabel::Abduction);
        // captions appear in the prompt in capture order
        let text = &backend.requests()[0].text;
        let positions: Vec<usize> = ["frame 1:", "frame 2:", "frame 3:"]
            .iter()
            .map(|m| text.find(m).unwrap())
            .collect();
        assert!(positions.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn empty_sequence_never_calls_the_model() {
        let backend = ScriptedBackend::from_pairs([("situation", "{}")]);
        let empty = CaptionSequence::new(BatchId(1), vec![]).unwrap();
        assert_eq!(
            analyze_situation(&empty, &backend, &PromptPack::default()).unwrap_err(),
            AgentsError::EmptySequence
        );
        assert!(backend.requests().is_empty());
    }
}
