use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTokens {
    pub prompt: u64,
    pub completion: u64,
}

impl StageTokens {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }
}

/// Prompt/completion token counts, broken down by pipeline stage.
///
/// The totals are maintained alongside the stage map and always equal its sum.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLedger")]
pub struct TokenLedger {
    prompt_tokens: u64,
    completion_tokens: u64,
    stages: BTreeMap<String, StageTokens>,
}

#[derive(Deserialize)]
struct RawLedger {
    prompt_tokens: u64,
    completion_tokens: u64,
    #[serde(default)]
    stages: BTreeMap<String, StageTokens>,
}

impl TryFrom<RawLedger> for TokenLedger {
    type Error = String;

    fn try_from(raw: RawLedger) -> Result<Self, Self::Error> {
        let mut ledger = TokenLedger::default();
        for (stage, t) in &raw.stages {
            ledger.record(stage, t.prompt, t.completion);
        }
        if ledger.prompt_tokens != raw.prompt_tokens
            || ledger.completion_tokens != raw.completion_tokens
        {
            return Err(format!(
                "ledger totals ({}, {}) disagree with stage sum ({}, {})",
                raw.prompt_tokens,
                raw.completion_tokens,
                ledger.prompt_tokens,
                ledger.completion_tokens
            ));
        }
        Ok(ledger)
    }
}

impl TokenLedger {
    pub fn record(&mut self, stage: &str, prompt: u64, completion: u64) {
        let e = self.stages.entry(stage.to_string()).or_default();
        e.prompt += prompt;
        e.completion += completion;
        self.prompt_tokens += prompt;
        self.completion_tokens += completion;
    }

    pub fn merge(&mut self, other: &TokenLedger) {
        for (stage, t) in &other.stages {
            self.record(stage, t.prompt, t.completion);
        }
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.prompt_tokens
    }

    pub fn completion_tokens(&self) -> u64 {
        self.completion_tokens
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn stages(&self) -> &BTreeMap<String, StageTokens> {
        &self.stages
    }

    pub fn stage(&self, name: &str) -> StageTokens {
        self.stages.get(name).copied().unwrap_or_default()
    }
}

impl<'a> std::iter::Sum<&'a TokenLedger> for TokenLedger {
    fn sum<I: Iterator<Item = &'a TokenLedger>>(iter: I) -> Self {
        let mut out = TokenLedger::default();
        for l in iter {
            out.merge(l);
        }
        out
    }
}
