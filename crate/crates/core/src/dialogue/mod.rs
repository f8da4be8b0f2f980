//! Multi-turn continuation induction.
//!
//! Starting from a question and an initial answer A^1, each turn k = 2..K
//! appends a scheduled follow-up prompt P^k and asks the backend for A^k
//! with the full prior conversation as context.

pub mod backend;
pub mod prompts;
pub mod simulator;

use serde::{Deserialize, Serialize};

pub use backend::{
    BackendError, ChatBackend, ChatReply, ChatRequest, DecodingConfig, HttpBackendConfig,
    HttpChatBackend, Message, RetryPolicy, Role,
};
pub use prompts::{build_prompt_library, schedule_prompt, PromptCard, PromptType};
pub use simulator::{DomainProfile, Regime, SimulatedChat, SimulatorProfile};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptTurn {
    pub turn: usize,
    pub prompt_type: PromptType,
    pub strength: u8,
    pub prompt: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueTranscript {
    pub item_id: String,
    #[serde(default)]
    pub domain_id: String,
    pub question: String,
    pub initial_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_latent: Option<f64>,
    pub turns: Vec<TranscriptTurn>,
    pub prompt_seed: u64,
    pub backend_id: String,
    pub decoding: DecodingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_directive: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl DialogueTranscript {
    /// Number of turns present, counting the initial answer.
    pub fn len(&self) -> usize {
        self.turns.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The message list sent to the backend when requesting turn `k`:
    /// `[directive?, Q, A^1, P^2, A^2, ..., P^k]`.
    pub fn messages_for_turn(&self, k: usize) -> Vec<Message> {
        let mut msgs = Vec::with_capacity(2 * k);
        if let Some(d) = &self.system_directive {
            msgs.push(Message::system(d.clone()));
        }
        msgs.push(Message::user(self.question.clone()));
        msgs.push(Message::assistant(self.initial_answer.clone()));
        for t in self.turns.iter().take(k.saturating_sub(2)) {
            msgs.push(Message::user(t.prompt.clone()));
            msgs.push(Message::assistant(t.answer.clone()));
        }
        msgs
    }
}

#[derive(Debug, Clone)]
pub struct InduceRequest<'a> {
    pub item_id: &'a str,
    pub domain_id: &'a str,
    pub question: &'a str,
    pub initial_answer: &'a str,
    pub initial_logprobs: Option<Vec<f64>>,
    pub decoding: DecodingConfig,
    pub prompt_seed: u64,
    pub system_directive: Option<&'a str>,
    pub retry: RetryPolicy,
    pub request_logprobs: bool,
}

/// Drives K-1 follow-up turns against `backend`.
///
/// Backend failures that survive the retry policy end the transcript early
/// with `truncated = true`; empty replies are kept and flagged.
pub fn induce_continuation(
    req: &InduceRequest<'_>,
    backend: &dyn ChatBackend,
) -> Result<DialogueTranscript> {
    let k_total = req.decoding.turn_budget;
    if k_total < 2 {
        return Err(Error::out_of_range("turn_budget", k_total, 2, usize::MAX));
    }
    let mut transcript = DialogueTranscript {
        item_id: req.item_id.to_string(),
        domain_id: req.domain_id.to_string(),
        question: req.question.to_string(),
        initial_answer: req.initial_answer.to_string(),
        initial_logprobs: req.initial_logprobs.clone(),
        initial_latent: backend.initial_annotation().latent,
        turns: Vec::with_capacity(k_total - 1),
        prompt_seed: req.prompt_seed,
        backend_id: backend.id().to_string(),
        decoding: req.decoding,
        system_directive: req.system_directive.map(str::to_string),
        truncated: false,
        failure: None,
    };
    let mut messages = transcript.messages_for_turn(2);
    for k in 2..=k_total {
        let card = schedule_prompt(k, k_total, req.prompt_seed)?;
        messages.push(Message::user(card.text));
        let chat = ChatRequest {
            messages: messages.clone(),
            decoding: req.decoding,
            logprobs: req.request_logprobs,
        };
        let reply = match req.retry.run(|| backend.chat_complete(&chat)) {
            Ok(r) => r,
            Err(e) => {
                transcript.truncated = true;
                transcript.failure = Some(format!("turn {k}: {e}"));
                break;
            }
        };
        let empty = reply.text.trim().is_empty();
        messages.push(Message::assistant(reply.text.clone()));
        transcript.turns.push(TranscriptTurn {
            turn: k,
            prompt_type: card.prompt_type,
            strength: card.strength,
            prompt: card.text.to_string(),
            answer: reply.text,
            logprobs: reply.logprobs,
            latent: reply.latent,
            empty,
        });
    }
    Ok(transcript)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Records every request and answers with a fixed script.
    struct Scripted {
        replies: Mutex<Vec<std::result::Result<String, BackendError>>>,
        seen: Mutex<Vec<Vec<Message>>>,
    }

    impl Scripted {
        fn new(replies: Vec<std::result::Result<String, BackendError>>) -> Self {
            Self { replies: Mutex::new(replies), seen: Mutex::new(vec![]) }
        }
    }

    impl ChatBackend for Scripted {
        fn id(&self) -> &str {
            "scripted"
        }
        fn chat_complete(&self, r: &ChatRequest) -> std::result::Result<ChatReply, BackendError> {
            backend::validate_messages(&r.messages)?;
            self.seen.lock().unwrap().push(r.messages.clone());
            let next = self.replies.lock().unwrap().remove(0);
            next.map(|text| ChatReply { text, ..Default::default() })
        }
    }

    fn request(k: usize, directive: Option<&'static str>) -> InduceRequest<'static> {
        InduceRequest {
            item_id: "i1",
            domain_id: "d",
            question: "What is 2+2?",
            initial_answer: "4",
            initial_logprobs: None,
            decoding: DecodingConfig { turn_budget: k, ..Default::default() },
            prompt_seed: 42,
            system_directive: directive,
            retry: RetryPolicy { max_attempts: 3, base_delay_ms: 0, factor: 2.0 },
            request_logprobs: false,
        }
    }

    #[test]
    fn k2_single_weak_turn() {
        let backend = Scripted::new(vec![Ok("still 4".into())]);
        let t = induce_continuation(&request(2, None), &backend).unwrap();
        assert_eq!(t.turns.len(), 1);
        assert_eq!(t.turns[0].strength, 1);
        let seen = backend.seen.lock().unwrap();
        assert_eq!(seen[0].len(), 3);
        assert_eq!(seen[0][0], Message::user("What is 2+2?"));
        assert_eq!(seen[0][1], Message::assistant("4"));
    }

    #[test]
    fn full_context_each_turn_with_directive() {
        let replies = (0..4).map(|i| Ok(format!("a{i}"))).collect();
        let backend = Scripted::new(replies);
        let d = prompts::POLITE_ALIGNED_DIRECTIVE;
        let t = induce_continuation(&request(5, Some(d)), &backend).unwrap();
        assert_eq!(t.turns.len(), 4);
        let seen = backend.seen.lock().unwrap();
        for (i, msgs) in seen.iter().enumerate() {
            assert_eq!(msgs[0], Message::system(d));
            // system + Q + A1 + (P, A) per earlier turn + current P
            assert_eq!(msgs.len(), 3 + 2 * i + 1);
            assert_eq!(*msgs, {
                let mut m = t.messages_for_turn(i + 2);
                m.push(Message::user(t.turns[i].prompt.clone()));
                m
            });
        }
        let library = build_prompt_library();
        assert!(t.turns.iter().all(|turn| library.iter().any(|c| c.text == turn.prompt)));
    }

    #[test]
    fn failure_after_retries_truncates() {
        let backend = Scripted::new(vec![
            Ok("a2".into()),
            Err(BackendError::Timeout),
            Err(BackendError::Timeout),
            Err(BackendError::Timeout),
        ]);
        let t = induce_continuation(&request(6, None), &backend).unwrap();
        assert!(t.truncated);
        assert_eq!(t.turns.len(), 1);
        assert!(t.failure.as_deref().unwrap().contains("turn 3"));
    }

    #[test]
    fn empty_reply_is_flagged() {
        let backend = Scripted::new(vec![Ok("".into()), Ok("ok".into())]);
        let t = induce_continuation(&request(3, None), &backend).unwrap();
        assert!(t.turns[0].empty);
        assert!(!t.turns[1].empty);
        assert!(!t.truncated);
    }

    #[test]
    fn simulator_transcripts_are_reproducible() {
        let p = SimulatorProfile::default();
        let d = DomainProfile::synthetic(1);
        let run = || {
            let chat = SimulatedChat::new(&p, &d, Regime::Hallucinated, 20, 9, "i1", "4");
            let t = induce_continuation(&request(20, None), &chat).unwrap();
            serde_json::to_string(&t).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        let t: DialogueTranscript = serde_json::from_str(&a).unwrap();
        assert_eq!(t.turns.len(), 19);
        assert!(t.initial_latent.is_some());
        assert!(t.turns.iter().all(|x| x.latent.is_some()));
    }
}
