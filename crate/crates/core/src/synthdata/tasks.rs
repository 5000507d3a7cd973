use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::*;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Transcribe,
    Repeat,
    CipherTranslate,
    McClassify,
    CountMc,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Transcribe, Task::Repeat, Task::CipherTranslate, Task::McClassify, Task::CountMc];
    pub const ZERO_SHOT: [Task; 3] = [Task::CipherTranslate, Task::McClassify, Task::CountMc];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Transcribe => "transcribe",
            Task::Repeat => "repeat",
            Task::CipherTranslate => "cipher_translate",
            Task::McClassify => "mc_classify",
            Task::CountMc => "count_mc",
        }
    }

    pub fn is_asr(self) -> bool {
        matches!(self, Task::Transcribe | Task::Repeat)
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Position of the audio relative to the instruction in the LM input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrder {
    AudioFirst,
    InstructionFirst,
}

impl PromptOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptOrder::AudioFirst => "audio_first",
            PromptOrder::InstructionFirst => "instruction_first",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "audio_first" => Ok(Self::AudioFirst),
            "instruction_first" => Ok(Self::InstructionFirst),
            other => Err(Error::Config(format!("unknown order {other:?}"))),
        }
    }
}

/// How the instruction reaches the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionSource {
    Text,
    /// The instruction is rendered as a second utterance.
    RenderedAudio,
    /// As `RenderedAudio`, drawing from five paraphrases.
    RenderedAudioX5,
}

impl InstructionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            InstructionSource::Text => "text",
            InstructionSource::RenderedAudio => "rendered_audio",
            InstructionSource::RenderedAudioX5 => "rendered_audio_x5",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "rendered_audio" => Ok(Self::RenderedAudio),
            "rendered_audio_x5" => Ok(Self::RenderedAudioX5),
            other => Err(Error::Config(format!("unknown instruction source {other:?}"))),
        }
    }

    pub fn is_audio(self) -> bool {
        self != InstructionSource::Text
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSample {
    pub id: String,
    pub task: Task,
    pub order: PromptOrder,
    pub instruction_source: InstructionSource,
    /// The spoken content (or, for text-only samples, the text input).
    pub audio_tokens: String,
    pub instruction_text: String,
    pub reference_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub render_seed: u64,
}

fn random_content(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(CONTENT_LEN.0..=CONTENT_LEN.1);
    (0..len).map(|_| *CONTENT_ALPHABET.choose(rng).expect("non-empty alphabet")).collect()
}

/// Build one sample of `task`. `key` selects the correct choice slot for the
/// multiple-choice tasks.
pub fn make_sample(
    rng: &mut ChaCha8Rng,
    id: String,
    task: Task,
    order: PromptOrder,
    instruction_source: InstructionSource,
    key: usize,
) -> TaskSample {
    let mut content = random_content(rng);
    let (instruction_text, reference_answer, answer_format, choices) = match task {
        Task::Transcribe => (TRANSCRIBE_PROMPT.to_string(), content.clone(), None, None),
        Task::Repeat => {
            let prompt = match instruction_source {
                InstructionSource::RenderedAudioX5 => *ASR_PARAPHRASES.choose(rng).expect("paraphrases"),
                _ => REPEAT_PROMPT,
            };
            (prompt.to_string(), content.clone(), None, None)
        }
        Task::CipherTranslate => (CIPHER_PROMPT.to_string(), encipher(&content), None, None),
        Task::McClassify => {
            // The last letter is drawn from the group of the key slot.
            let group: Vec<char> = LETTER_GROUPS[key].chars().collect();
            content.pop();
            content.push(*group.choose(rng).expect("group is non-empty"));
            let choices: Vec<String> = LETTER_GROUPS.iter().map(|g| g.to_string()).collect();
            let answer = format!("{ANSWER_PREFIX}{}", CHOICE_LABELS[key]);
            (multiple_choice_prompt(LAST_LETTER_QUESTION, &choices), answer, Some(ANSWER_PREFIX.to_string()), Some(choices))
        }
        Task::CountMc => {
            let len = COUNT_CHOICES[key];
            content = (0..len).map(|_| *CONTENT_ALPHABET.choose(rng).expect("alphabet")).collect();
            let choices: Vec<String> = COUNT_CHOICES.iter().map(|n| n.to_string()).collect();
            let answer = format!("{ANSWER_PREFIX}{}", CHOICE_LABELS[key]);
            (multiple_choice_prompt(COUNT_QUESTION, &choices), answer, Some(ANSWER_PREFIX.to_string()), Some(choices))
        }
    };
    TaskSample {
        id,
        task,
        order,
        instruction_source,
        audio_tokens: content,
        instruction_text,
        reference_answer,
        answer_format,
        choices,
        render_seed: rng.next_u64(),
    }
}

fn generate(n: usize, seed: u64, prefix: &str, tasks: &[Task], order: PromptOrder, source: InstructionSource) -> Result<Vec<TaskSample>> {
    if n == 0 {
        return Err(Error::Input("corpus size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_task = vec![0usize; tasks.len()];
    let samples = (0..n)
        .map(|i| {
            let slot = i % tasks.len();
            let key = per_task[slot] % CHOICE_LABELS.len();
            per_task[slot] += 1;
            make_sample(&mut rng, format!("{prefix}-{i:06}"), tasks[slot], order, source, key)
        })
        .collect::<Vec<_>>();
    for s in &samples {
        verify_sample(s)?;
    }
    Ok(samples)
}

/// Text-only, instruction-first samples balanced over all five tasks.
pub fn gen_pretrain_corpus(n: usize, seed: u64) -> Result<Vec<TaskSample>> {
    generate(n, seed, "pt", &Task::ALL, PromptOrder::InstructionFirst, InstructionSource::Text)
}

/// ASR-only samples: transcribe for audio-first, repeat for instruction-first.
pub fn gen_alignment_corpus(n: usize, order: PromptOrder, source: InstructionSource, seed: u64) -> Result<Vec<TaskSample>> {
    let task = match order {
        PromptOrder::AudioFirst => Task::Transcribe,
        PromptOrder::InstructionFirst => Task::Repeat,
    };
    generate(n, seed, "al", &[task], order, source)
}

/// Held-out tasks never seen in alignment training; instruction-first, text
/// instructions.
pub fn gen_zeroshot_eval(n: usize, seed: u64) -> Result<Vec<TaskSample>> {
    generate(n, seed, "zs", &Task::ZERO_SHOT, PromptOrder::InstructionFirst, InstructionSource::Text)
}

/// Choice strings as they appear in `"A: x B: y C: z"`.
fn parse_choices(instruction: &str) -> Option<Vec<String>> {
    let mut out = Vec::new();
    for label in CHOICE_LABELS {
        let tag = format!("{label}: ");
        let start = instruction.rfind(&tag)? + tag.len();
        let rest = &instruction[start..];
        out.push(rest.split(' ').next()?.to_string());
    }
    Some(out)
}

/// Recompute the reference answer from the instruction text and content alone
/// and compare it with the stored one.
pub fn verify_sample(sample: &TaskSample) -> Result<()> {
    let content = &sample.audio_tokens;
    let bad = |why: &str| Err(Error::Input(format!("sample {}: {why}", sample.id)));
    if content.is_empty() || !content.chars().all(|c| CONTENT_ALPHABET.contains(&c)) {
        return bad("content outside the content alphabet");
    }
    let expected = match sample.task {
        Task::Transcribe | Task::Repeat => content.clone(),
        Task::CipherTranslate => {
            let decoded: Option<String> = sample
                .reference_answer
                .chars()
                .map(|c| {
                    let j = CIPHER_ALPHABET.iter().position(|&x| x == c)?;
                    let i = CIPHER_PERMUTATION.iter().position(|&p| p == j)?;
                    Some(CONTENT_ALPHABET[i])
                })
                .collect();
            if decoded.as_deref() != Some(content.as_str()) {
                return bad("cipher reference does not decode to the content");
            }
            return Ok(());
        }
        Task::McClassify | Task::CountMc => {
            let Some(choices) = parse_choices(&sample.instruction_text) else {
                return bad("instruction lacks A/B/C choices");
            };
            let hits: Vec<usize> = if sample.task == Task::McClassify {
                let last = content.chars().last().unwrap_or(' ');
                (0..3).filter(|&i| choices[i].contains(last)).collect()
            } else {
                let count = content.chars().count().to_string();
                (0..3).filter(|&i| choices[i] == count).collect()
            };
            if hits.len() != 1 {
                return bad("choices must contain the answer exactly once");
            }
            format!("The answer is: {}", CHOICE_LABELS[hits[0]])
        }
    };
    if expected != sample.reference_answer {
        return bad(&format!("reference {:?} != recomputed {expected:?}", sample.reference_answer));
    }
    Ok(())
}
