//! Deterministic stand-in for an LLM chat backend.
//!
//! Each simulated item carries a hidden per-turn instability value (the
//! latent). Factual items follow a slowly drifting baseline with small noise
//! and one minor self-correction bump; hallucinated items get one sharp
//! rise-then-drop burst of larger amplitude at a seed-chosen turn. Baseline
//! level, drift and noise vary by domain, which the trajectory curvature
//! ignores but level- and variance-based scores do not.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::backend::{
    validate_messages, BackendError, ChatBackend, ChatReply, ChatRequest, InitialAnnotation,
    Message, Role,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Factual,
    Hallucinated,
}

impl Regime {
    pub fn from_label(label: u8) -> Self {
        if label == 1 { Regime::Hallucinated } else { Regime::Factual }
    }
}

/// Generator parameters shared by every domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorProfile {
    /// Earliest and latest turn at which the bump or burst peaks.
    pub event_turns: (usize, usize),
    pub factual_amplitude: (f64, f64),
    pub hallucinated_amplitude: (f64, f64),
    /// Extra baseline level of hallucinated items.
    pub hallucinated_offset: f64,
    /// Per-item jitter of the baseline level.
    pub level_jitter: f64,
}

impl Default for SimulatorProfile {
    fn default() -> Self {
        Self {
            event_turns: (3, 9),
            factual_amplitude: (0.10, 0.14),
            hallucinated_amplitude: (0.26, 0.34),
            hallucinated_offset: 0.05,
            level_jitter: 0.05,
        }
    }
}

impl SimulatorProfile {
    /// Last turn a burst can occupy; the burst is fully visible to a
    /// truncated sequence once K exceeds this by one.
    pub fn burst_horizon(&self) -> usize {
        self.event_turns.1 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainProfile {
    pub name: String,
    pub base_level: f64,
    /// Maximum absolute per-turn slope of the baseline.
    pub drift: f64,
    /// Half-width of the uniform per-turn noise.
    pub noise: f64,
}

impl DomainProfile {
    /// The `index`-th synthetic domain, named `sim-<index>`.
    pub fn synthetic(index: usize) -> Self {
        let i = (index % 6) as f64;
        Self {
            name: format!("sim-{index}"),
            base_level: 0.12 + 0.04 * i,
            drift: 0.004 + 0.001 * i,
            noise: 0.004 + 0.001 * ((index * 5) % 6) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrajectory {
    pub regime: Regime,
    /// Latent value per turn, index 0 is the initial answer.
    pub latents: Vec<f64>,
    /// 1-indexed turn carrying the bump or burst.
    pub event_turn: usize,
    pub amplitude: f64,
}

fn uniform(r: &mut rng::StageRng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo { r.random_range(lo..hi) } else { lo }
}

pub fn simulate_trajectory(
    profile: &SimulatorProfile,
    domain: &DomainProfile,
    regime: Regime,
    k_total: usize,
    seed: u64,
    item_id: &str,
) -> SimTrajectory {
    let mut r = rng::stream_for(seed, item_id);
    let offset = match regime {
        Regime::Factual => 0.0,
        Regime::Hallucinated => profile.hallucinated_offset,
    };
    let level = domain.base_level + offset + uniform(&mut r, (-profile.level_jitter, profile.level_jitter));
    let slope = uniform(&mut r, (-domain.drift, domain.drift));
    let (lo, hi) = profile.event_turns;
    let hi = hi.min(k_total.saturating_sub(1)).max(lo.min(k_total));
    let event_turn = if hi > lo { r.random_range(lo..=hi) } else { lo };
    let amplitude = match regime {
        Regime::Factual => uniform(&mut r, profile.factual_amplitude),
        Regime::Hallucinated => uniform(&mut r, profile.hallucinated_amplitude),
    };
    let latents = (1..=k_total)
        .map(|k| {
            let noise = uniform(&mut r, (-domain.noise, domain.noise));
            let bump = if k == event_turn { amplitude } else { 0.0 };
            (level + slope * (k - 1) as f64 + noise + bump).clamp(0.0, 1.0)
        })
        .collect();
    SimTrajectory { regime, latents, event_turn, amplitude }
}

const STEADY: [&str; 4] = [
    "Building on my earlier answer, the main point still holds: {a}.",
    "To add detail: the reasoning supports {a}, and nothing so far changes that.",
    "Continuing from before, I remain confident that the answer is {a}.",
    "Looking at it again, the answer {a} is consistent with everything discussed.",
];

const REVERSAL: [&str; 3] = [
    "Wait, I need to correct myself. {a} may be wrong; the opposite seems more plausible.",
    "On reflection, my earlier claim that the answer is {a} does not hold up. Let me reverse it.",
    "Actually, I was mistaken before. I no longer think {a} is right.",
];

const RECOVERY: [&str; 2] = [
    "Going back over it, I think my original answer {a} was right after all.",
    "Let me revise once more: returning to {a} seems most defensible.",
];

const MINOR: [&str; 2] = [
    "One small clarification: the answer {a} stands, though one detail needed wording.",
    "A minor correction to my phrasing, but the answer remains {a}.",
];

/// Simulated chat session for one item. The regime is fixed when the
/// session is created; replies depend only on `(seed, item_id, turn)`.
#[derive(Debug, Clone)]
pub struct SimulatedChat {
    id: String,
    item_id: String,
    seed: u64,
    initial_answer: String,
    trajectory: SimTrajectory,
}

impl SimulatedChat {
    pub fn new(
        profile: &SimulatorProfile,
        domain: &DomainProfile,
        regime: Regime,
        k_total: usize,
        seed: u64,
        item_id: &str,
        initial_answer: &str,
    ) -> Self {
        Self {
            id: "sim".to_string(),
            item_id: item_id.to_string(),
            seed,
            initial_answer: initial_answer.to_string(),
            trajectory: simulate_trajectory(profile, domain, regime, k_total, seed, item_id),
        }
    }

    pub fn trajectory(&self) -> &SimTrajectory {
        &self.trajectory
    }

    /// Produces the reply for the turn implied by `state` (one more than the
    /// number of assistant messages already present) and its latent value.
    pub fn simulate_reply(&self, state: &[Message]) -> Result<(String, f64), BackendError> {
        let turn = state.iter().filter(|m| m.role == Role::Assistant).count() + 1;
        let latent = *self.trajectory.latents.get(turn - 1).ok_or_else(|| {
            BackendError::InvalidRequest(format!(
                "turn {turn} beyond simulated budget {}",
                self.trajectory.latents.len()
            ))
        })?;
        let mut r = rng::stream_for(self.seed ^ turn as u64, &self.item_id);
        let event = self.trajectory.event_turn;
        let pool: &[&str] = match self.trajectory.regime {
            Regime::Hallucinated if turn == event => &REVERSAL,
            Regime::Hallucinated if turn == event + 1 => &RECOVERY,
            Regime::Factual if turn == event => &MINOR,
            _ => &STEADY,
        };
        let template = pool[r.random_range(0..pool.len())];
        let text = template.replace("{a}", self.initial_answer.trim());
        Ok((text, latent))
    }

    fn logprobs_for(&self, text: &str, latent: f64, turn: usize) -> Vec<f64> {
        let mut r = rng::stream_for(self.seed.wrapping_add(0x9e37_79b9) ^ turn as u64, &self.item_id);
        let centre = 0.3 + 3.0 * latent;
        text.split_whitespace()
            .map(|_| -(centre * (1.0 + r.random_range(-0.05..0.05))))
            .collect()
    }

    /// Token log-probabilities for the initial answer, in the same scale as
    /// the replies.
    pub fn initial_logprobs(&self) -> Vec<f64> {
        self.logprobs_for(&self.initial_answer.clone(), self.trajectory.latents[0], 1)
    }
}

impl ChatBackend for SimulatedChat {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        validate_messages(&request.messages)?;
        let (text, latent) = self.simulate_reply(&request.messages)?;
        let turn = request.messages.iter().filter(|m| m.role == Role::Assistant).count() + 1;
        let logprobs = request.logprobs.then(|| self.logprobs_for(&text, latent, turn));
        Ok(ChatReply { text, logprobs, latent: Some(latent) })
    }

    fn initial_annotation(&self) -> InitialAnnotation {
        InitialAnnotation { latent: self.trajectory.latents.first().copied() }
    }
}

/// Synthetic pooled hidden-state vector for one turn: the latent along a
/// fixed direction plus a domain-specific offset and Gaussian noise.
pub fn synthetic_feature(
    latent: f64,
    domain_index: usize,
    dim: usize,
    seed: u64,
    item_id: &str,
    turn: usize,
) -> Vec<f64> {
    let mut dir_rng = rng::stream(seed, 0xd1ec_7104);
    let direction: Vec<f64> = (0..dim).map(|_| dir_rng.random_range(-1.0..1.0)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let mut off_rng = rng::stream(seed, 0x0ff5_e700 + domain_index as u64);
    let offset: Vec<f64> = (0..dim).map(|_| off_rng.random_range(-0.3..0.3)).collect();
    let mut noise_rng = rng::stream_for(seed ^ (turn as u64).wrapping_mul(0x100_0193), item_id);
    let noise = Normal::new(0.0, 0.02).expect("valid sigma");
    (0..dim)
        .map(|j| 4.0 * latent * direction[j] / norm + offset[j] + noise.sample(&mut noise_rng))
        .collect()
}
