use std::fmt::Write as _;

use super::{PolicyContext, PolicyMode};
use crate::types::Role;

pub const USER_TURN_MARKER: &str = "User: ";
pub const BOT_TURN_MARKER: &str = "Bot: ";
/// Prefix of the line holding the user's unfinished message.
pub const PARTIAL_TURN_MARKER: &str = "User (still typing): ";

const PREAMBLE: &str = "The user and the bot are chatting. The bot sees the user's message while it is being typed.";

const TAG_INSTRUCTION: &str = "\
Decide whether the bot should overlap with the user's unfinished message right now.
Reply with exactly one line in one of these forms:
[Await]
[Overlap] [Understanding] <short listener cue>
[Overlap] [Answer] <early reply>";

const FULL_INSTRUCTION: &str = "Write the bot's reply to the user's last message.";

fn one_line(text: &str) -> String {
    text.split(['\n', '\r']).collect::<Vec<_>>().join(" ")
}

/// Renders the policy context as a prompt. Identical contexts render to identical bytes.
pub fn render_prompt(ctx: &PolicyContext) -> String {
    let mut out = String::new();
    out.push_str(PREAMBLE);
    out.push_str("\n\n");
    for message in &ctx.transcript {
        let marker = match message.role {
            Role::User => USER_TURN_MARKER,
            Role::Bot => BOT_TURN_MARKER,
        };
        let _ = writeln!(out, "{marker}{}", one_line(&message.text));
    }
    match ctx.mode {
        PolicyMode::OverlapTrigger => {
            let _ = writeln!(out, "{PARTIAL_TURN_MARKER}{}", one_line(&ctx.live_draft));
            out.push('\n');
            out.push_str(TAG_INSTRUCTION);
            out.push('\n');
        }
        PolicyMode::FullResponse => {
            out.push('\n');
            out.push_str(FULL_INSTRUCTION);
            out.push('\n');
        }
    }
    out
}
