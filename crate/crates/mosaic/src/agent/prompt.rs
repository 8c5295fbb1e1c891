//! Prompt construction from byte-stable templates.
//!
//! The templates live under `templates/` and carry bracketed
//! placeholders; builders substitute task fields, library tables, and
//! repair feedback. Every conversation opens with the same system
//! message.

use crate::library::{render_call_info, render_library_table, render_note_info, ToolEntry, ToolLibrary};
use crate::report::StageReport;
use crate::tasks::TaskSpec;

use super::{Message, Role};

pub const SYSTEM_PROMPT: &str = "You are an analog integrated circuits expert.";

const BASIC_TEMPLATE: &str = include_str!("templates/basic.txt");
const COMPOSITE_TEMPLATE: &str = include_str!("templates/composite.txt");
const RETRIEVAL_TEMPLATE: &str = include_str!("templates/retrieval.txt");

fn fill_task(template: &str, task: &TaskSpec) -> String {
    let inputs = if task.input_nodes.is_empty() {
        "-".to_string()
    } else {
        task.input_nodes.join(", ")
    };
    template
        .replace("[TASK]", &task.description)
        .replace("[INPUT]", &inputs)
        .replace("[OUTPUT]", &task.output_nodes.join(", "))
}

/// The opening conversation for a basic (non-composite) design task.
pub fn build_basic_prompt(task: &TaskSpec) -> Vec<Message> {
    vec![
        Message::system(SYSTEM_PROMPT),
        Message::user(fill_task(BASIC_TEMPLATE, task)),
    ]
}

/// The opening conversation for a composite task, with the selected
/// tools' specification table, usage notes, and call snippets filled in.
/// An empty selection keeps the prompt valid and marks the degradation in
/// the subcircuits section.
pub fn build_composite_prompt(task: &TaskSpec, tools: &[&ToolEntry]) -> Vec<Message> {
    let (info, note, call) = if tools.is_empty() {
        (
            "No subcircuits are currently available in the library.".to_string(),
            "Design the circuit from scratch with MOSFETs, resistors and capacitors.".to_string(),
            "(no subcircuits available)".to_string(),
        )
    } else {
        let mut lib = ToolLibrary::new();
        for &t in tools {
            lib.entries.insert(t.task_id, t.clone());
        }
        (
            render_library_table(&lib),
            render_note_info(tools, task),
            render_call_info(tools),
        )
    };
    let body = fill_task(COMPOSITE_TEMPLATE, task)
        .replace("[SUBCIRCUITS_INFO]", info.trim_end())
        .replace("[NOTE_INFO]", note.trim_end())
        .replace("[CALL_INFO]", call.trim_end());
    vec![Message::system(SYSTEM_PROMPT), Message::user(body)]
}

/// The retrieval prompt: the library table plus the task, asking for a
/// bracketed id list.
pub fn build_retrieval_prompt(lib: &ToolLibrary, task: &TaskSpec) -> Vec<Message> {
    let body = RETRIEVAL_TEMPLATE
        .replace("[TABLE]", render_library_table(lib).trim_end())
        .replace("[TASK]", &task.description);
    vec![Message::system(SYSTEM_PROMPT), Message::user(body)]
}

/// Extend a failed attempt's conversation with the assistant's raw reply
/// and a repair request carrying the failing stage's feedback verbatim.
pub fn build_feedback_prompt(
    conversation: &[Message],
    raw_reply: &str,
    report: &StageReport,
) -> Vec<Message> {
    let mut messages = conversation.to_vec();
    messages.push(Message {
        role: Role::Assistant,
        content: raw_reply.to_string(),
    });
    messages.push(Message::user(format!(
        "The design failed the {} check. Error information:\n\
         {}\n\
         Please fix these issues and regenerate the complete corrected NgSpice netlist \
         (the full code, not a diff), ending with .end.",
        report.stage, report.feedback
    )));
    messages
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{Stage, StageReport};
    use crate::tasks::benchmark_task;

    #[test]
    fn basic_prompt_carries_task_and_tips() {
        let task = benchmark_task(1).unwrap();
        let messages = build_basic_prompt(&task);
        assert_eq!(messages[0].content, SYSTEM_PROMPT);
        let user = &messages[1].content;
        assert!(user.contains("a single-stage common-source amplifier"));
        assert!(user.contains("Input node name: Vin."));
        assert!(user.contains("Output node name: Vout."));
        assert!(user.contains("connect the bulk of a MOSFET to its source"));
        assert!(user.contains("Assume the Vdd = 5.0 V"));
        assert!(!user.contains("[TASK]"));
    }

    #[test]
    fn oscillator_prompt_renders_dash_for_no_inputs() {
        let task = benchmark_task(16).unwrap();
        let messages = build_basic_prompt(&task);
        assert!(messages[1].content.contains("Input node name: -."));
    }

    #[test]
    fn composite_prompt_degrades_without_tools() {
        let task = benchmark_task(18).unwrap();
        let messages = build_composite_prompt(&task, &[]);
        let user = &messages[1].content;
        assert!(user.contains("an Opamp integrator with resistor R1 and capacitor Cf"));
        assert!(user.contains("No subcircuits are currently available"));
    }

    #[test]
    fn retrieval_prompt_embeds_table_and_list_request() {
        let lib = ToolLibrary::new();
        let task = benchmark_task(20).unwrap();
        let messages = build_retrieval_prompt(&lib, &task);
        let user = &messages[1].content;
        assert!(user.contains("enumerate them in a Python list like [0]"));
        assert!(user.contains("Id | Circuit Type"));
        assert!(user.contains("an Opamp adder"));
    }

    #[test]
    fn feedback_prompt_appends_exactly_two_messages() {
        let task = benchmark_task(1).unwrap();
        let convo = build_basic_prompt(&task);
        let report = StageReport::failed(
            Stage::OpCheck,
            vec!["MOSFET m2 is not conducting (cutoff): Vgs = 0.400 V must exceed Vth = 0.500 V.".into()],
        );
        let extended = build_feedback_prompt(&convo, "* broken reply", &report);
        assert_eq!(extended.len(), convo.len() + 2);
        assert_eq!(extended[..convo.len()], convo[..]);
        assert!(extended.last().unwrap().content.contains("op_check"));
        assert!(extended.last().unwrap().content.contains("m2"));
        assert!(extended.last().unwrap().content.contains("Vgs"));
    }
}
