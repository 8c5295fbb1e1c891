//! The design agent: prompt construction, a pluggable text generator,
//! netlist extraction, and the generate → verify → feedback retry loop.
//!
//! Basic tasks get up to three generations (two repairs); composite
//! tasks, which cost more per generation and repair poorly, get two. A
//! composite run first asks the generator to pick tools from the library,
//! then builds the design prompt around the chosen subcircuits. A
//! successful basic design is archived into the library.

mod extract;
mod prompt;

pub use extract::{extract_netlist, ExtractError};
pub use prompt::{
    build_basic_prompt, build_composite_prompt, build_feedback_prompt, build_retrieval_prompt,
    SYSTEM_PROMPT,
};

use std::time::Duration;

use thiserror::Error;

use crate::checks::{verify_circuit, VerifyOptions};
use crate::library::{archive_design, select_tools, ToolLibrary};
use crate::netlist::parse_netlist_partial;
use crate::report::{Stage, StageReport, VerificationOutcome};
use crate::tasks::TaskSpec;

/// Generation cap for basic tasks (two retries).
pub const MAX_BASIC_GENERATIONS: usize = 3;
/// Generation cap for composite tasks (one retry).
pub const MAX_COMPOSITE_GENERATIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum GeneratorError {
    #[error("replay script exhausted after {0} replies")]
    ScriptExhausted(usize),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed completion response: {0}")]
    BadResponse(String),
}

/// A pluggable text generator: a full conversation in, one reply out.
pub trait Generator {
    fn send(&mut self, messages: &[Message]) -> Result<String, GeneratorError>;
}

/// Replays canned replies in order, one per call; used for scripted runs
/// and deterministic benchmarking.
#[derive(Debug, Clone)]
pub struct ReplayGenerator {
    replies: Vec<String>,
    cursor: usize,
}

/// Delimiter line separating replies in a replay script file.
pub const REPLAY_DELIMITER: &str = "%%%";

impl ReplayGenerator {
    pub fn new(replies: Vec<String>) -> Self {
        ReplayGenerator { replies, cursor: 0 }
    }

    /// Parse a script file: replies separated by lines containing exactly
    /// [`REPLAY_DELIMITER`].
    pub fn from_script(text: &str) -> Self {
        let replies = text
            .split(&format!("\n{REPLAY_DELIMITER}\n"))
            .map(|s| s.trim_matches('\n').to_string())
            .filter(|s| !s.is_empty())
            .collect();
        ReplayGenerator::new(replies)
    }
}

impl Generator for ReplayGenerator {
    fn send(&mut self, _messages: &[Message]) -> Result<String, GeneratorError> {
        match self.replies.get(self.cursor) {
            Some(reply) => {
                self.cursor += 1;
                Ok(reply.clone())
            }
            None => Err(GeneratorError::ScriptExhausted(self.replies.len())),
        }
    }
}

/// Chat-completions client over HTTP(S): standard message-array request
/// and response bodies, bearer auth, bounded retries with exponential
/// backoff on transport errors.
pub struct RemoteGenerator {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub timeout: Duration,
    pub transport_retries: usize,
    token: String,
}

impl RemoteGenerator {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, token: impl Into<String>) -> Self {
        RemoteGenerator {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.5,
            top_p: 1.0,
            timeout: Duration::from_secs(120),
            transport_retries: 2,
            token: token.into(),
        }
    }
}

impl Generator for RemoteGenerator {
    fn send(&mut self, messages: &[Message]) -> Result<String, GeneratorError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "messages": messages.iter().map(|m| {
                serde_json::json!({ "role": m.role.as_str(), "content": m.content })
            }).collect::<Vec<_>>(),
        });
        let mut last_err = String::new();
        for attempt in 0..=self.transport_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 << attempt));
            }
            let response = ureq::post(&self.endpoint)
                .set("Authorization", &format!("Bearer {}", self.token))
                .set("Content-Type", "application/json")
                .timeout(self.timeout)
                .send_json(body.clone());
            match response {
                Ok(resp) => {
                    let json: serde_json::Value = resp
                        .into_json()
                        .map_err(|e| GeneratorError::BadResponse(e.to_string()))?;
                    return json["choices"][0]["message"]["content"]
                        .as_str()
                        .map(|s| s.to_string())
                        .ok_or_else(|| {
                            GeneratorError::BadResponse(
                                "response has no choices[0].message.content".into(),
                            )
                        });
                }
                Err(ureq::Error::Status(code, resp)) => {
                    last_err = format!(
                        "HTTP {code}: {}",
                        resp.into_string().unwrap_or_default()
                    );
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(GeneratorError::Transport(last_err))
    }
}

/// One generation within a trial.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Attempt {
    /// 1-based.
    pub index: usize,
    pub prompt_messages: Vec<Message>,
    pub raw_reply: String,
    pub extracted_netlist: Option<String>,
    pub outcome: Option<VerificationOutcome>,
}

/// A full design trial: every attempt, and whether the last one passed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrialRecord {
    pub task_id: u32,
    pub attempts: Vec<Attempt>,
    pub success: bool,
    /// Rough cost figure: total conversation characters / 4.
    pub tokens_estimate: u64,
    /// Set when the trial aborted on a generator transport failure.
    pub transport_failure: Option<String>,
}

/// A verified design ready for archiving, handed back so callers control
/// when library mutation happens.
#[derive(Debug, Clone)]
pub struct ArchiveCandidate {
    pub circuit: crate::netlist::Circuit,
    pub outcome: VerificationOutcome,
}

/// Drive the retry loop against a library snapshot without mutating it;
/// returns the trial record plus an archive candidate when a basic task
/// succeeded.
pub fn run_design_loop_readonly(
    task: &TaskSpec,
    generator: &mut dyn Generator,
    lib: &ToolLibrary,
    opts: &VerifyOptions,
) -> (TrialRecord, Option<ArchiveCandidate>) {
    let mut record = TrialRecord {
        task_id: task.id,
        attempts: Vec::new(),
        success: false,
        tokens_estimate: 0,
        transport_failure: None,
    };
    let mut candidate = None;

    let (mut conversation, cap, tools_active) = if task.composite {
        let selection = match select_tools_or_skip(task, generator, lib) {
            Ok(sel) => sel,
            Err(e) => {
                record.transport_failure = Some(e.to_string());
                return (record, None);
            }
        };
        let entries: Vec<&crate::library::ToolEntry> = selection
            .iter()
            .filter_map(|id| lib.get(*id))
            .collect();
        let active = !entries.is_empty();
        (
            build_composite_prompt(task, &entries),
            MAX_COMPOSITE_GENERATIONS,
            active,
        )
    } else {
        (build_basic_prompt(task), MAX_BASIC_GENERATIONS, false)
    };

    let verify_opts = VerifyOptions {
        tools_active,
        ..opts.clone()
    };

    for index in 1..=cap {
        let raw_reply = match generator.send(&conversation) {
            Ok(reply) => reply,
            Err(e) => {
                record.transport_failure = Some(e.to_string());
                break;
            }
        };
        let mut attempt = Attempt {
            index,
            prompt_messages: conversation.clone(),
            raw_reply: raw_reply.clone(),
            extracted_netlist: None,
            outcome: None,
        };

        let failure: StageReport = match extract_netlist(&raw_reply) {
            Err(e) => StageReport::failed(Stage::Requirement, vec![e.to_string()]),
            Ok(netlist_text) => {
                attempt.extracted_netlist = Some(netlist_text.clone());
                // composite replies instantiate library tools whose
                // definitions live here, not in the reply, so references
                // resolve only after injection
                let parsed = parse_netlist_partial(&netlist_text).and_then(|mut circuit| {
                    for def in lib.subckt_defs() {
                        circuit
                            .subckts
                            .entry(def.name.clone())
                            .or_insert_with(|| def.clone());
                    }
                    circuit.resolve()?;
                    Ok(circuit)
                });
                match parsed {
                    Err(e) => StageReport::failed(Stage::Requirement, vec![e.to_string()]),
                    Ok(circuit) => {
                        let outcome = verify_circuit(&circuit, task, &verify_opts);
                        let pass = outcome.final_pass;
                        let first_failure = outcome.first_failure().cloned();
                        attempt.outcome = Some(outcome.clone());
                        if pass {
                            record.attempts.push(attempt);
                            record.success = true;
                            if !task.composite {
                                candidate = Some(ArchiveCandidate { circuit, outcome });
                            }
                            record.tokens_estimate = estimate_tokens(&record);
                            return (record, candidate);
                        }
                        first_failure.unwrap_or_else(|| {
                            StageReport::failed(
                                Stage::Function,
                                vec!["verification failed without a stage report".into()],
                            )
                        })
                    }
                }
            }
        };

        conversation = build_feedback_prompt(&conversation, &raw_reply, &failure);
        record.attempts.push(attempt);
    }

    record.tokens_estimate = estimate_tokens(&record);
    (record, None)
}

fn select_tools_or_skip(
    task: &TaskSpec,
    generator: &mut dyn Generator,
    lib: &ToolLibrary,
) -> Result<Vec<u32>, GeneratorError> {
    if lib.is_empty() {
        return Ok(Vec::new());
    }
    select_tools(lib, task, generator).map(|sel| sel.ids)
}

fn estimate_tokens(record: &TrialRecord) -> u64 {
    let chars: usize = record
        .attempts
        .iter()
        .map(|a| {
            a.prompt_messages
                .iter()
                .map(|m| m.content.len())
                .sum::<usize>()
                + a.raw_reply.len()
        })
        .sum();
    (chars / 4) as u64
}

/// Drive the full loop and archive a successful basic design into the
/// library.
pub fn run_design_loop(
    task: &TaskSpec,
    generator: &mut dyn Generator,
    lib: &mut ToolLibrary,
    opts: &VerifyOptions,
) -> TrialRecord {
    let (record, candidate) = run_design_loop_readonly(task, generator, lib, opts);
    if let Some(c) = candidate {
        // archive errors do not invalidate the trial itself
        let _ = archive_design(lib, task, &c.circuit, &c.outcome);
    }
    record
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::benchmark_task;

    const GOOD_AMP: &str = "\
Here is the corrected design.

```
* common-source amplifier
.model nmos_model nmos level=1 kp=100e-6 vto=0.5
Vdd Vdd 0 5.0
Vin Vin 0 0.9
M1 Vout Vin 0 0 nmos_model w=5u l=1u
RD Vdd Vout 10k
.end
```
";

    const FLOATING_AMP: &str = "\
First attempt:

```
* amplifier with a dangling internal node
.model nmos_model nmos level=1 kp=100e-6 vto=0.5
Vdd Vdd 0 5.0
Vin Vin 0 0.9
M1 Vout Vin 0 0 nmos_model w=5u l=1u
RD Vdd Vout 10k
Rdangle lonely mid2 1k
Rdangle2 mid2 0 1k
.end
```
";

    fn opts() -> VerifyOptions {
        VerifyOptions::default()
    }

    #[test]
    fn failure_then_success_within_cap() {
        let task = benchmark_task(1).unwrap();
        let mut gen = ReplayGenerator::new(vec![FLOATING_AMP.into(), GOOD_AMP.into()]);
        let mut lib = ToolLibrary::new();
        let record = run_design_loop(&task, &mut gen, &mut lib, &opts());
        assert!(record.success);
        assert_eq!(record.attempts.len(), 2);
        // the second prompt carries the stage-2 diagnostic verbatim
        let second_prompt = &record.attempts[1].prompt_messages;
        let last = &second_prompt.last().unwrap().content;
        assert!(last.contains("op_check"), "{last}");
        assert!(last.contains("floating node"), "{last}");
        assert!(last.contains("lonely"), "{last}");
        // success archived the tool
        assert!(lib.get(1).is_some());
    }

    #[test]
    fn persistent_failure_hits_the_cap() {
        let task = benchmark_task(1).unwrap();
        let mut gen = ReplayGenerator::new(vec![
            FLOATING_AMP.into(),
            FLOATING_AMP.into(),
            FLOATING_AMP.into(),
            FLOATING_AMP.into(),
        ]);
        let mut lib = ToolLibrary::new();
        let record = run_design_loop(&task, &mut gen, &mut lib, &opts());
        assert!(!record.success);
        assert_eq!(record.attempts.len(), MAX_BASIC_GENERATIONS);
        assert!(lib.is_empty());
    }

    #[test]
    fn extraction_failure_counts_as_an_attempt() {
        let task = benchmark_task(1).unwrap();
        let mut gen = ReplayGenerator::new(vec!["I cannot help with that.".into(), GOOD_AMP.into()]);
        let mut lib = ToolLibrary::new();
        let record = run_design_loop(&task, &mut gen, &mut lib, &opts());
        assert!(record.success);
        assert_eq!(record.attempts.len(), 2);
        assert!(record.attempts[0].extracted_netlist.is_none());
        assert!(record.attempts[0].outcome.is_none());
        let repair = &record.attempts[1].prompt_messages.last().unwrap().content;
        assert!(repair.contains("no code block found"), "{repair}");
    }

    #[test]
    fn transport_failure_aborts_with_marker() {
        let task = benchmark_task(1).unwrap();
        let mut gen = ReplayGenerator::new(vec![]);
        let mut lib = ToolLibrary::new();
        let record = run_design_loop(&task, &mut gen, &mut lib, &opts());
        assert!(!record.success);
        assert!(record.transport_failure.is_some());
    }

    #[test]
    fn conversation_grows_by_exactly_two_messages_per_retry() {
        let task = benchmark_task(1).unwrap();
        let mut gen = ReplayGenerator::new(vec![
            FLOATING_AMP.into(),
            FLOATING_AMP.into(),
            FLOATING_AMP.into(),
        ]);
        let mut lib = ToolLibrary::new();
        let record = run_design_loop(&task, &mut gen, &mut lib, &opts());
        for pair in record.attempts.windows(2) {
            let prev = &pair[0].prompt_messages;
            let next = &pair[1].prompt_messages;
            assert_eq!(next.len(), prev.len() + 2);
            assert_eq!(&next[..prev.len()], &prev[..]);
        }
    }

    #[test]
    fn deterministic_under_identical_scripts() {
        let task = benchmark_task(1).unwrap();
        let run = || {
            let mut gen = ReplayGenerator::new(vec![FLOATING_AMP.into(), GOOD_AMP.into()]);
            let mut lib = ToolLibrary::new();
            run_design_loop(&task, &mut gen, &mut lib, &opts())
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn remote_generator_speaks_chat_completions() {
        use std::io::{Read, Write};
        // one-shot local HTTP server with a canned completion
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut read = 0;
            // read until the JSON body is complete enough to inspect
            loop {
                let n = stream.read(&mut buf[read..]).unwrap();
                read += n;
                let text = String::from_utf8_lossy(&buf[..read]);
                if text.contains("\"messages\"") && text.ends_with('}') {
                    break;
                }
                if n == 0 {
                    break;
                }
            }
            let request = String::from_utf8_lossy(&buf[..read]).to_string();
            let body = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": "[11]"}}]
            })
            .to_string();
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(response.as_bytes()).unwrap();
            request
        });

        let mut gen = RemoteGenerator::new(
            format!("http://{addr}/v1/chat/completions"),
            "test-model",
            "secret-token",
        );
        let reply = gen
            .send(&[Message::system(SYSTEM_PROMPT), Message::user("pick tools")])
            .unwrap();
        assert_eq!(reply, "[11]");
        let request = server.join().unwrap();
        assert!(request.contains("Authorization: Bearer secret-token"), "{request}");
        assert!(request.contains("\"model\":\"test-model\""));
        assert!(request.contains("\"temperature\":0.5"));
        assert!(request.contains("\"top_p\":1.0"));
    }

    #[test]
    fn replay_script_parsing() {
        let text = "reply one\nline two\n%%%\nreply two\n%%%\nreply three";
        let mut gen = ReplayGenerator::from_script(text);
        assert_eq!(gen.send(&[]).unwrap(), "reply one\nline two");
        assert_eq!(gen.send(&[]).unwrap(), "reply two");
        assert_eq!(gen.send(&[]).unwrap(), "reply three");
        assert!(gen.send(&[]).is_err());
    }
}
