use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::gateway::{PromptPack, SharedBackend};
use crate::ingest::FrameBatch;

use super::{
    analyze_images, analyze_situation, decide, decide_with_backend, frame_images, run_debate,
    should_debate, AgentPolicy, AgentsError, CaptionSequence, Decision, DebateTranscript,
    ThreatAssessment,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisStage {
    Caption,
    Situation,
    Decision,
}

/// Everything one analysis cycle produced, with stage timings.
#[derive(Debug, Clone)]
pub struct CycleAnalysis {
    pub captions: CaptionSequence,
    pub initial: ThreatAssessment,
    pub transcript: Option<DebateTranscript>,
    pub decision: Decision,
    pub caption_ms: u64,
    /// Situation analysis, debate, and decision together.
    pub analysis_ms: u64,
    /// Portion of `analysis_ms` spent debating.
    pub debate_ms: u64,
}

#[derive(Debug, Clone)]
pub struct CycleFailure {
    pub stage: AnalysisStage,
    pub error: AgentsError,
    pub captions: Option<CaptionSequence>,
    pub initial: Option<ThreatAssessment>,
    pub caption_ms: u64,
    pub analysis_ms: u64,
}

/// The agent layer with its backends. Stateless between cycles, so one
/// instance can serve several worker threads.
#[derive(Clone)]
pub struct Workflow {
    pub image: SharedBackend,
    pub situation: SharedBackend,
    pub prompts: PromptPack,
}

impl Workflow {
    pub fn new(image: SharedBackend, situation: SharedBackend, prompts: PromptPack) -> Self {
        Self {
            image,
            situation,
            prompts,
        }
    }

    pub fn analyze(
        &self,
        batch: &FrameBatch,
        policy: &AgentPolicy,
    ) -> Result<CycleAnalysis, CycleFailure> {
        let t0 = Instant::now();
        let captions = analyze_images(batch, self.image.as_ref(), &self.prompts);
        let caption_ms = t0.elapsed().as_millis() as u64;
        let captions = captions.map_err(|error| CycleFailure {
            stage: AnalysisStage::Caption,
            error,
            captions: None,
            initial: None,
            caption_ms,
            analysis_ms: 0,
        })?;

        let t1 = Instant::now();
        let fail = |stage, error, initial: Option<ThreatAssessment>, captions: &CaptionSequence| {
            CycleFailure {
                stage,
                error,
                captions: Some(captions.clone()),
                initial,
                caption_ms,
                analysis_ms: t1.elapsed().as_millis() as u64,
            }
        };
        let initial = match analyze_situation(&captions, self.situation.as_ref(), &self.prompts) {
            Ok(parsed) => parsed.assessment,
            Err(e) => return Err(fail(AnalysisStage::Situation, e, None, &captions)),
        };

        let mut debate_ms = 0;
        let (fin, transcript) = if should_debate(&initial, policy) {
            let td = Instant::now();
            let images = frame_images(batch);
            let (fin, transcript) = run_debate(
                &captions,
                &initial,
                self.situation.as_ref(),
                self.image.as_ref(),
                &images,
                policy,
                &self.prompts,
            );
            debate_ms = td.elapsed().as_millis() as u64;
            (fin, Some(transcript))
        } else {
            (initial.clone(), None)
        };

        let decision = if policy.decision_via_backend {
            match decide_with_backend(
                &captions,
                &fin,
                transcript.as_ref(),
                self.situation.as_ref(),
                policy,
                &self.prompts,
            ) {
                Ok(d) => d,
                Err(e) => {
                    return Err(fail(AnalysisStage::Decision, e, Some(initial), &captions))
                }
            }
        } else {
            decide(&fin, transcript.as_ref(), policy)
        };

        Ok(CycleAnalysis {
            captions,
            initial,
            transcript,
            decision,
            caption_ms,
            analysis_ms: t1.elapsed().as_millis() as u64,
            debate_ms,
        })
    }
}
