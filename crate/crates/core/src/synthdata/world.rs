//! Fixed vocabulary of the synthetic task world: alphabets, prompts and the
//! cipher permutation.

/// Letters that occur in spoken content.
pub const CONTENT_ALPHABET: [char; 8] = ['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'];

/// Output alphabet of the cipher task; disjoint from the content alphabet.
pub const CIPHER_ALPHABET: [char; 8] = ['J', 'K', 'L', 'M', 'N', 'P', 'Q', 'V'];

/// `CONTENT_ALPHABET[i]` enciphers to `CIPHER_ALPHABET[CIPHER_PERMUTATION[i]]`.
pub const CIPHER_PERMUTATION: [usize; 8] = [3, 6, 0, 7, 2, 5, 1, 4];

pub const CHOICE_LABELS: [char; 3] = ['A', 'B', 'C'];

pub const CONTENT_LEN: (usize, usize) = (3, 6);

/// Fixed choices of the letter-group question: choice `k` lists the letters
/// of group `k`.
pub const LETTER_GROUPS: [&str; 3] = ["abc", "def", "gh"];

/// Fixed choices of the counting question; choice `k` is `COUNT_CHOICES[k]`.
pub const COUNT_CHOICES: [usize; 3] = [3, 4, 5];

pub const TRANSCRIBE_PROMPT: &str = "Transcribe the audio clip into text.";
pub const REPEAT_PROMPT: &str = "Repeat exactly what the user says word by word.";

/// Spoken ASR instructions for the five-paraphrase condition; the first is the
/// repeat prompt itself.
pub const ASR_PARAPHRASES: [&str; 5] = [
    REPEAT_PROMPT,
    "Say again what the user says.",
    "Write down the words you hear.",
    "Copy the spoken words exactly.",
    "Echo the user word by word.",
];

pub const CIPHER_PROMPT: &str = "Translate to cipher.";
pub const LAST_LETTER_QUESTION: &str = "Which group holds the last letter?";
pub const COUNT_QUESTION: &str = "How many letters?";
pub const ANSWER_FORMAT: &str = "The answer format is 'The answer is: '.";
pub const ANSWER_PREFIX: &str = "The answer is: ";

pub fn encipher(text: &str) -> String {
    text.chars()
        .map(|c| match CONTENT_ALPHABET.iter().position(|&a| a == c) {
            Some(i) => CIPHER_ALPHABET[CIPHER_PERMUTATION[i]],
            None => c,
        })
        .collect()
}

/// `"A: x B: y C: z"`.
pub fn format_choices(choices: &[String]) -> String {
    choices
        .iter()
        .zip(CHOICE_LABELS)
        .map(|(c, l)| format!("{l}: {c}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn multiple_choice_prompt(question: &str, choices: &[String]) -> String {
    format!("{question} {ANSWER_FORMAT} {}", format_choices(choices))
}

/// Every fixed text fragment the tokenizer must cover with word symbols.
pub fn prompt_texts() -> Vec<&'static str> {
    let mut v = vec![TRANSCRIBE_PROMPT, CIPHER_PROMPT, LAST_LETTER_QUESTION, COUNT_QUESTION, ANSWER_FORMAT, ANSWER_PREFIX];
    v.extend(ASR_PARAPHRASES);
    v
}
