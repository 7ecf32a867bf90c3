//! Discovery-intent routing for the chat pane.
//!
//! The rule-based router is a pure function of the text. An optional
//! chat-completion endpoint can be configured; any failure there (network,
//! timeout, malformed output) falls back to the rules.

use std::time::Duration;

use nlctd_core::table::QueryMode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Discovery,
    Analysis,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extracted {
    pub mode: QueryMode,
    pub condition: String,
    pub key_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantTurn {
    pub text: String,
    pub detected_intent: Intent,
    /// Present exactly when the intent is discovery.
    pub extracted: Option<Extracted>,
    pub reply: String,
    /// `rules` or `llm`.
    pub router: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    /// Full URL of a chat-completions endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

/// Prompt sent to the external router. Replaceable; nothing else depends on
/// its wording, only on the JSON shape it asks for.
pub const ROUTER_PROMPT: &str = "You route messages for a table discovery assistant. \
Decide whether the user asks to find tables in a data lake (discovery), asks a question \
about data they already have (analysis), or something else (other). For discovery, pick \
mode nlc_union when they want tables to union with (same schema, more rows), nlc_join \
when they want tables to join with on a key column, otherwise nl_only. The condition is \
the user's description of the tables they want. Answer with a single JSON object and \
nothing else: {\"intent\": \"discovery\"|\"analysis\"|\"other\", \"mode\": \
\"nl_only\"|\"nlc_union\"|\"nlc_join\"|null, \"condition\": string|null, \
\"key_column\": string|null}";

const DISCOVERY_CUES: &[&str] = &[
    "find",
    "search",
    "look for",
    "looking for",
    "discover",
    "retrieve",
    "unionable",
    "joinable",
    "tables containing",
    "tables about",
    "tables with",
    "tables that",
    "tables of",
    "any tables",
];

const ANALYSIS_CUES: &[&str] = &[
    "mean", "average", "median", "sum", "total", "count", "how many", "max", "min", "column", "row", "plot",
    "chart", "compare", "distribution", "?",
];

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '\'' || c == '"'))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn has_cue(lower: &str, cues: &[&str]) -> bool {
    let tokens = words(lower);
    cues.iter().any(|cue| {
        if cue.contains(' ') || !cue.chars().all(char::is_alphanumeric) {
            lower.contains(cue)
        } else {
            tokens.iter().any(|t| t == cue)
        }
    })
}

/// Key column named after "column" or "key", e.g. "joinable on column name".
fn key_column(text: &str) -> Option<String> {
    let tokens = words(text);
    tokens
        .windows(2)
        .find(|w| matches!(w[0].to_lowercase().as_str(), "column" | "key"))
        .map(|w| w[1].trim_matches(|c| c == '"' || c == '\'').to_string())
        .filter(|k| !k.is_empty() && !matches!(k.to_lowercase().as_str(), "the" | "a" | "of"))
}

fn mode_of(lower: &str) -> QueryMode {
    let tokens = words(lower);
    let any = |set: &[&str]| tokens.iter().any(|t| set.contains(&t.as_str()));
    if any(&["unionable", "union"]) {
        QueryMode::NlcUnion
    } else if any(&["joinable", "join"]) {
        QueryMode::NlcJoin
    } else {
        QueryMode::NlOnly
    }
}

fn reply_for(intent: Intent, extracted: Option<&Extracted>) -> String {
    match (intent, extracted) {
        (Intent::Discovery, Some(e)) => {
            let what = match e.mode {
                QueryMode::NlOnly => "tables",
                QueryMode::NlcUnion => "unionable tables",
                QueryMode::NlcJoin => "joinable tables",
            };
            let mut s = format!("Searching for {what} matching: {}", e.condition);
            if let Some(k) = &e.key_column {
                s.push_str(&format!(" (key column {k})"));
            }
            s
        }
        (Intent::Analysis, _) => "I can route table discovery requests but do not answer questions about \
            table contents. Try a request such as \"Find unionable tables containing students with an \
            average grade above 80\"."
            .to_string(),
        _ => "Describe the tables you are looking for, for example \"Find joinable tables about cities on \
            column city\". Mention unionable or joinable to search with your uploaded table."
            .to_string(),
    }
}

fn turn(text: &str, intent: Intent, extracted: Option<Extracted>, router: &str) -> AssistantTurn {
    AssistantTurn {
        text: text.to_string(),
        detected_intent: intent,
        reply: reply_for(intent, extracted.as_ref()),
        extracted,
        router: router.to_string(),
    }
}

/// Lexicon router. The condition is the whole user text.
pub fn route_rules(text: &str) -> AssistantTurn {
    let trimmed = text.trim();
    let lower = trimmed.to_lowercase();
    if trimmed.is_empty() {
        return turn(text, Intent::Other, None, "rules");
    }
    if has_cue(&lower, DISCOVERY_CUES) {
        let mode = mode_of(&lower);
        let extracted = Extracted {
            mode,
            condition: trimmed.to_string(),
            key_column: if mode == QueryMode::NlcJoin { key_column(trimmed) } else { None },
        };
        return turn(text, Intent::Discovery, Some(extracted), "rules");
    }
    let intent = if has_cue(&lower, ANALYSIS_CUES) {
        Intent::Analysis
    } else {
        Intent::Other
    };
    turn(text, intent, None, "rules")
}

/// Routes with the LLM when configured, otherwise (or on any failure) with
/// the rules. Never fails.
pub fn route_intent(text: &str, llm: Option<&LlmConfig>) -> AssistantTurn {
    let Some(cfg) = llm else {
        return route_rules(text);
    };
    match ask_llm(text, cfg) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("assistant llm unavailable, using rules: {e}");
            route_rules(text)
        }
    }
}

fn ask_llm(text: &str, cfg: &LlmConfig) -> Result<AssistantTurn, String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(cfg.timeout))
        .build()
        .into();
    let body = json!({
        "model": cfg.model,
        "temperature": 0,
        "response_format": {"type": "json_object"},
        "messages": [
            {"role": "system", "content": ROUTER_PROMPT},
            {"role": "user", "content": text},
        ],
    });
    let mut req = agent.post(&cfg.endpoint);
    if let Some(key) = &cfg.api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
    let v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or("response has no choices[0].message.content")?;
    parse_llm_output(text, content)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LlmRoute {
    intent: Intent,
    #[serde(default)]
    mode: Option<QueryMode>,
    #[serde(default)]
    condition: Option<String>,
    #[serde(default)]
    key_column: Option<String>,
}

/// Strict parse of the structured output. Discovery needs a mode; a missing
/// condition defaults to the user text.
pub fn parse_llm_output(text: &str, content: &str) -> Result<AssistantTurn, String> {
    let r: LlmRoute = serde_json::from_str(content.trim()).map_err(|e| format!("malformed router output: {e}"))?;
    let extracted = match r.intent {
        Intent::Discovery => {
            let mode = r.mode.ok_or("discovery without a mode")?;
            let condition = r
                .condition
                .filter(|c| !c.trim().is_empty())
                .unwrap_or_else(|| text.trim().to_string());
            Some(Extracted {
                mode,
                condition,
                key_column: r.key_column.filter(|k| !k.trim().is_empty()),
            })
        }
        _ => None,
    };
    Ok(turn(text, r.intent, extracted, "llm"))
}
