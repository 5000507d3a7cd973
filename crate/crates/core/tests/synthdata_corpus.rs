use std::collections::HashMap;

use aflab_core::synthdata::world::*;
use aflab_core::synthdata::*;

#[test]
fn alignment_prompts_follow_the_order() {
    let af = gen_alignment_corpus(50, PromptOrder::AudioFirst, InstructionSource::Text, 1).unwrap();
    assert!(af.iter().all(|s| s.instruction_text == "Transcribe the audio clip into text." && s.task == Task::Transcribe));
    let inf = gen_alignment_corpus(50, PromptOrder::InstructionFirst, InstructionSource::Text, 1).unwrap();
    assert!(inf.iter().all(|s| s.instruction_text == "Repeat exactly what the user says word by word." && s.task == Task::Repeat));
    assert!(af.iter().chain(&inf).all(|s| s.reference_answer == s.audio_tokens));
}

#[test]
fn five_paraphrases_are_drawn_uniformly() {
    let corpus = gen_alignment_corpus(5000, PromptOrder::InstructionFirst, InstructionSource::RenderedAudioX5, 2).unwrap();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in &corpus {
        *counts.entry(s.instruction_text.as_str()).or_default() += 1;
    }
    assert_eq!(counts.len(), 5);
    for p in ASR_PARAPHRASES {
        let share = counts[p] as f64 / corpus.len() as f64;
        assert!((share - 0.2).abs() < 0.03, "{p}: {share}");
    }
}

#[test]
fn zero_shot_tasks_never_appear_in_alignment_data() {
    let eval = gen_zeroshot_eval(300, 3).unwrap();
    let eval_prompts: Vec<&str> = vec![CIPHER_PROMPT, LAST_LETTER_QUESTION, COUNT_QUESTION, ANSWER_FORMAT];
    for order in [PromptOrder::AudioFirst, PromptOrder::InstructionFirst] {
        for source in [InstructionSource::Text, InstructionSource::RenderedAudio, InstructionSource::RenderedAudioX5] {
            for s in gen_alignment_corpus(500, order, source, 4).unwrap() {
                assert!(s.task.is_asr());
                let line = serde_json::to_string(&s).unwrap();
                for p in &eval_prompts {
                    assert!(!line.contains(p), "{p} leaked into {line}");
                }
                assert!(s.reference_answer.chars().all(|c| CONTENT_ALPHABET.contains(&c)));
            }
        }
    }
    assert!(eval.iter().all(|s| !s.task.is_asr()));
}

#[test]
fn answer_keys_are_balanced() {
    let eval = gen_zeroshot_eval(3000, 5).unwrap();
    for task in [Task::McClassify, Task::CountMc] {
        let keys: Vec<char> = eval.iter().filter(|s| s.task == task).map(|s| s.reference_answer.chars().last().unwrap()).collect();
        for label in CHOICE_LABELS {
            let share = keys.iter().filter(|&&k| k == label).count() as f64 / keys.len() as f64;
            assert!((share - 1.0 / 3.0).abs() <= 0.05, "{task} {label}: {share}");
        }
    }
}

#[test]
fn answers_follow_the_format_and_verify() {
    let pre = gen_pretrain_corpus(500, 6).unwrap();
    let mut per_task: HashMap<Task, usize> = HashMap::new();
    for s in &pre {
        *per_task.entry(s.task).or_default() += 1;
        verify_sample(s).unwrap();
        assert_eq!(s.order, PromptOrder::InstructionFirst);
        if matches!(s.task, Task::McClassify | Task::CountMc) {
            let ans = s.reference_answer.strip_prefix("The answer is: ").unwrap();
            assert!(["A", "B", "C"].contains(&ans));
            assert_eq!(s.choices.as_ref().unwrap().len(), 3);
        }
        if s.task == Task::CipherTranslate {
            assert!(s.reference_answer.chars().all(|c| CIPHER_ALPHABET.contains(&c)));
        }
    }
    assert_eq!(per_task.len(), 5);
    assert!(per_task.values().all(|&n| n == 100));
}

#[test]
fn generation_is_a_pure_function_of_the_seed() {
    assert_eq!(gen_zeroshot_eval(40, 9).unwrap(), gen_zeroshot_eval(40, 9).unwrap());
    assert_ne!(gen_zeroshot_eval(40, 9).unwrap(), gen_zeroshot_eval(40, 10).unwrap());
    assert!(gen_pretrain_corpus(0, 1).is_err());
}

#[test]
fn dataset_records_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.jsonl");
    let records: Vec<DatasetRecord> = gen_zeroshot_eval(12, 11)
        .unwrap()
        .into_iter()
        .map(|sample| DatasetRecord { sample, features: FeatureRef::Inline { frames_per_token: vec![12, 14] } })
        .collect();
    write_jsonl(&path, &records).unwrap();
    let back: Vec<DatasetRecord> = read_jsonl(&path).unwrap();
    assert_eq!(back, records);
}
