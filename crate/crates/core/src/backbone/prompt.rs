//! Chat-template assembly of LM inputs from text and audio segments.
//!
//! Layout: `<u> first \n second <a> response <e>`, where `(first, second)` is
//! `(audio, instruction)` for audio-first and the reverse for
//! instruction-first. An empty instruction drops the separator.

use super::tokenizer::{ASSISTANT, END, USER};
use crate::error::{Error, Result};
use crate::synthdata::PromptOrder;

/// One segment of the user turn.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Segment {
    Text(Vec<usize>),
    /// Rows `start..start + rows` of audio source `source`.
    Audio { source: usize, start: usize, rows: usize },
}

impl Segment {
    pub fn len(&self) -> usize {
        match self {
            Segment::Text(t) => t.len(),
            Segment::Audio { rows, .. } => *rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_slots(&self, out: &mut Vec<Slot>) {
        match self {
            Segment::Text(t) => out.extend(t.iter().map(|&id| Slot::Token(id))),
            Segment::Audio { source, start, rows } => {
                out.extend((*start..start + rows).map(|row| Slot::Audio { source: *source, row }))
            }
        }
    }
}

/// What occupies one LM input position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Token(usize),
    Audio { source: usize, row: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptAssembly {
    pub order: PromptOrder,
    pub slots: Vec<Slot>,
    /// True exactly on response positions (including the end marker).
    pub loss_mask: Vec<bool>,
}

impl PromptAssembly {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn has_response(&self) -> bool {
        self.loss_mask.iter().any(|&m| m)
    }

    /// The prompt up to and including the assistant marker.
    pub fn prefix(&self) -> PromptAssembly {
        let n = self.loss_mask.iter().position(|&m| m).unwrap_or(self.slots.len());
        PromptAssembly { order: self.order, slots: self.slots[..n].to_vec(), loss_mask: vec![false; n] }
    }

    /// Token ids at response positions.
    pub fn response_tokens(&self) -> Vec<usize> {
        self.slots
            .iter()
            .zip(&self.loss_mask)
            .filter_map(|(s, &m)| match (s, m) {
                (Slot::Token(id), true) => Some(*id),
                _ => None,
            })
            .collect()
    }

    pub fn push_token(&mut self, id: usize, in_loss: bool) {
        self.slots.push(Slot::Token(id));
        self.loss_mask.push(in_loss);
    }
}

/// Build the template for one sample. An empty `response` yields a prefix
/// ending in the assistant marker; otherwise the end marker is appended.
pub fn assemble_prompt(
    order: PromptOrder,
    audio: &Segment,
    instruction: &Segment,
    response: &[usize],
    separator: usize,
    context: usize,
) -> Result<PromptAssembly> {
    let (first, second) = match order {
        PromptOrder::AudioFirst => (audio, instruction),
        PromptOrder::InstructionFirst => (instruction, audio),
    };
    let mut slots = vec![Slot::Token(USER)];
    first.push_slots(&mut slots);
    if !first.is_empty() && !second.is_empty() {
        slots.push(Slot::Token(separator));
    }
    second.push_slots(&mut slots);
    slots.push(Slot::Token(ASSISTANT));
    let prompt_len = slots.len();
    if !response.is_empty() {
        slots.extend(response.iter().map(|&id| Slot::Token(id)));
        slots.push(Slot::Token(END));
    }
    if slots.len() > context {
        return Err(Error::Input(format!("assembled length {} exceeds the LM context {context}", slots.len())));
    }
    let loss_mask = (0..slots.len()).map(|i| i >= prompt_len).collect();
    Ok(PromptAssembly { order, slots, loss_mask })
}
