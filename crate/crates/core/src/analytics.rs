//! Conversation metrics computed from a [`ConversationLog`].
//!
//! All timing uses the log envelope timestamps. The conversation duration is
//! the span between the first and the last entry.
//!
//! | metric | definition |
//! |---|---|
//! | message length | mean character count of finalized messages (sealed `...` included) |
//! | total turns | finalized messages: user acks, bot sends (backchannels and sealed fragments count) |
//! | turns per minute | total turns / duration in minutes |
//! | overlap ratio | % of fixed-width time bins holding both a user `draft_update` and a `bot_char` |
//! | deletes per minute | user drafts that are not an extension of the previous draft, or bot retractions, per minute |

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::ConversationLog;
use crate::types::{is_deletion, Role};
use crate::wire::{RetractMode, WireEvent};

pub const DEFAULT_BIN_MS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("NO_MESSAGES: no finalized {0} messages")]
    NoMessages(Role),
    #[error("ZERO_DURATION: the log spans no time")]
    ZeroDuration,
    #[error("TOO_SHORT: duration {duration_ms} ms is shorter than one {bin_ms} ms bin")]
    TooShort { duration_ms: u64, bin_ms: u64 },
}

/// Unit in which deletions are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeleteUnit {
    /// One per non-extending draft update or bot retraction.
    #[default]
    Event,
    /// Number of characters removed.
    Character,
}

fn is_finalized_by(event: &WireEvent, role: Role) -> Option<usize> {
    match (event, role) {
        (WireEvent::UserMessageAck { message }, Role::User) | (WireEvent::BotSend { message }, Role::Bot) => {
            Some(message.char_len())
        }
        _ => None,
    }
}

pub fn duration_ms(log: &ConversationLog) -> u64 {
    match (log.entries().first(), log.entries().last()) {
        (Some(first), Some(last)) => last.ts - first.ts,
        _ => 0,
    }
}

fn minutes(log: &ConversationLog) -> Result<f64, MetricError> {
    match duration_ms(log) {
        0 => Err(MetricError::ZeroDuration),
        ms => Ok(ms as f64 / 60_000.0),
    }
}

pub fn mean_message_length(log: &ConversationLog, role: Role) -> Result<f64, MetricError> {
    let lengths: Vec<usize> = log
        .entries()
        .iter()
        .filter_map(|e| is_finalized_by(&e.event, role))
        .collect();
    if lengths.is_empty() {
        return Err(MetricError::NoMessages(role));
    }
    Ok(lengths.iter().sum::<usize>() as f64 / lengths.len() as f64)
}

pub fn total_turns(log: &ConversationLog, role: Role) -> u64 {
    log.entries()
        .iter()
        .filter(|e| is_finalized_by(&e.event, role).is_some())
        .count() as u64
}

pub fn turns_per_minute(log: &ConversationLog, role: Role) -> Result<f64, MetricError> {
    let minutes = minutes(log)?;
    Ok(total_turns(log, role) as f64 / minutes)
}

/// Percentage of `bin_ms` bins over `[first_ts, last_ts)` in which the user
/// updated a draft and the bot typed a character.
pub fn overlap_ratio(log: &ConversationLog, bin_ms: u64) -> Result<f64, MetricError> {
    assert!(bin_ms > 0, "bin width must be positive");
    let duration = duration_ms(log);
    if duration < bin_ms || duration == 0 {
        return Err(MetricError::TooShort {
            duration_ms: duration,
            bin_ms,
        });
    }
    let first = log.entries()[0].ts;
    let bins = duration.div_ceil(bin_ms) as usize;
    let mut user = vec![false; bins];
    let mut bot = vec![false; bins];
    for entry in log.entries() {
        // the span is half-open, so the closing instant belongs to no bin
        if entry.ts - first >= duration {
            continue;
        }
        let index = ((entry.ts - first) / bin_ms) as usize;
        match entry.event {
            WireEvent::DraftUpdate { .. } => user[index] = true,
            WireEvent::BotChar { .. } => bot[index] = true,
            _ => {}
        }
    }
    let both = user.iter().zip(&bot).filter(|(u, b)| **u && **b).count();
    Ok(100.0 * both as f64 / bins as f64)
}

/// Number of deletions by `role` in the given unit.
pub fn delete_count(log: &ConversationLog, role: Role, unit: DeleteUnit) -> u64 {
    let mut count = 0u64;
    match role {
        Role::User => {
            let mut previous = String::new();
            for entry in log.entries() {
                match &entry.event {
                    WireEvent::DraftUpdate { text, .. } => {
                        if is_deletion(&previous, text) {
                            count += match unit {
                                DeleteUnit::Event => 1,
                                DeleteUnit::Character => removed_chars(&previous, text),
                            };
                        }
                        previous = text.clone();
                    }
                    WireEvent::UserMessageAck { .. } => previous.clear(),
                    _ => {}
                }
            }
        }
        Role::Bot => {
            let mut typed = 0u64;
            for entry in log.entries() {
                match &entry.event {
                    WireEvent::BotChar { text_chunk } => typed += text_chunk.chars().count() as u64,
                    WireEvent::BotSend { .. } => typed = 0,
                    WireEvent::BotRetract { mode, .. } => {
                        count += match (unit, mode) {
                            (DeleteUnit::Event, _) => 1,
                            (DeleteUnit::Character, RetractMode::Full) => typed,
                            (DeleteUnit::Character, RetractMode::Seal) => 0,
                        };
                        typed = 0;
                    }
                    _ => {}
                }
            }
        }
    }
    count
}

/// Characters of `previous` beyond its longest common prefix with `next`.
fn removed_chars(previous: &str, next: &str) -> u64 {
    let common = previous
        .chars()
        .zip(next.chars())
        .take_while(|(a, b)| a == b)
        .count();
    (previous.chars().count() - common) as u64
}

pub fn deletes_per_minute(log: &ConversationLog, role: Role, unit: DeleteUnit) -> Result<f64, MetricError> {
    let minutes = minutes(log)?;
    Ok(delete_count(log, role, unit) as f64 / minutes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub bin_ms: u64,
    pub delete_unit: DeleteUnit,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            bin_ms: DEFAULT_BIN_MS,
            delete_unit: DeleteUnit::Event,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleMetrics {
    pub mean_message_length: Option<f64>,
    pub total_turns: u64,
    pub turns_per_minute: Option<f64>,
    pub deletes_per_minute: Option<f64>,
}

/// All metrics for one log. A cell that cannot be computed is `None`, and the
/// reason is recorded in `warnings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub user: Option<RoleMetrics>,
    pub bot: Option<RoleMetrics>,
    pub overlap_ratio: Option<f64>,
    pub duration_s: f64,
    pub bin_ms: u64,
    pub warnings: Vec<String>,
}

fn has_activity(log: &ConversationLog, role: Role) -> bool {
    log.entries().iter().any(|e| match role {
        Role::User => matches!(
            e.event,
            WireEvent::DraftUpdate { .. } | WireEvent::Send { .. } | WireEvent::UserMessageAck { .. }
        ),
        Role::Bot => matches!(
            e.event,
            WireEvent::BotChar { .. } | WireEvent::BotSend { .. } | WireEvent::BotRetract { .. }
        ),
    })
}

fn cell<T>(result: Result<T, MetricError>, warnings: &mut Vec<String>) -> Option<T> {
    result.map_err(|e| warnings.push(e.to_string())).ok()
}

pub fn build_report(log: &ConversationLog) -> MetricsReport {
    build_report_with(log, ReportOptions::default())
}

pub fn build_report_with(log: &ConversationLog, options: ReportOptions) -> MetricsReport {
    let mut warnings = Vec::new();
    let role_metrics = |role: Role, warnings: &mut Vec<String>| {
        if !has_activity(log, role) {
            warnings.push(format!("no {role} activity"));
            return None;
        }
        Some(RoleMetrics {
            mean_message_length: cell(mean_message_length(log, role), warnings),
            total_turns: total_turns(log, role),
            turns_per_minute: cell(turns_per_minute(log, role), warnings),
            deletes_per_minute: cell(deletes_per_minute(log, role, options.delete_unit), warnings),
        })
    };
    let user = role_metrics(Role::User, &mut warnings);
    let bot = role_metrics(Role::Bot, &mut warnings);
    let overlap_ratio = cell(overlap_ratio(log, options.bin_ms), &mut warnings);
    MetricsReport {
        user,
        bot,
        overlap_ratio,
        duration_s: duration_ms(log) as f64 / 1000.0,
        bin_ms: options.bin_ms,
        warnings,
    }
}

impl MetricsReport {
    /// Plain-text table with one row per metric and one column per role.
    pub fn to_table(&self) -> String {
        fn num(v: Option<f64>) -> String {
            v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
        }
        let pick = |f: &dyn Fn(&RoleMetrics) -> Option<f64>, r: &Option<RoleMetrics>| num(r.as_ref().and_then(f));
        let mut out = String::new();
        let _ = writeln!(out, "{:<20} {:>10} {:>10}", "metric", "user", "bot");
        type Row<'a> = (&'a str, &'a dyn Fn(&RoleMetrics) -> Option<f64>);
        let rows: [Row; 4] = [
            ("message length", &|m| m.mean_message_length),
            ("total turns", &|m| Some(m.total_turns as f64)),
            ("turns per minute", &|m| m.turns_per_minute),
            ("deletes per minute", &|m| m.deletes_per_minute),
        ];
        for (name, f) in rows {
            let _ = writeln!(out, "{:<20} {:>10} {:>10}", name, pick(f, &self.user), pick(f, &self.bot));
        }
        let overlap = self
            .overlap_ratio
            .map_or_else(|| "-".to_string(), |v| format!("{v:.1}%"));
        let _ = writeln!(out, "{:<20} {:>10}", "overlap ratio", overlap);
        let _ = writeln!(out, "{:<20} {:>10.1}", "duration (s)", self.duration_s);
        out
    }
}
