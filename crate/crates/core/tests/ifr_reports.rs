use aflab_core::compute::Tensor2D;
use aflab_core::ifr::*;
use aflab_core::synthdata::{gen_zeroshot_eval, Task, TaskSample};

fn answer_rule() -> DetectionRule {
    DetectionRule::AnswerFormat { prefix: "The answer is: ".into(), allowed: vec!['A', 'B', 'C'] }
}

#[test]
fn detection_examples() {
    let d = detect_followed("The answer is: B", &answer_rule());
    assert!(d.followed);
    assert_eq!(d.answer.as_deref(), Some("B"));
    assert!(!detect_followed("I think it is B.", &answer_rule()).followed);
    assert!(!detect_followed("The answer is: D", &answer_rule()).followed);
    let alpha = DetectionRule::TargetAlphabet { alphabet: vec!['J', 'K', 'L'], threshold: 0.9 };
    assert!(detect_followed("JKL KJ", &alpha).followed);
    assert!(!detect_followed("JKa", &alpha).followed);
    assert!(!detect_followed("", &alpha).followed);
    let rep = DetectionRule::ExactRepeat { reference: "abcd".into(), tolerance: 0.25 };
    assert!(detect_followed("abed", &rep).followed);
    assert!(!detect_followed("ab", &rep).followed);
}

fn respond(samples: &[TaskSample], mut follow: impl FnMut(usize, &TaskSample) -> bool) -> Vec<EvalResult> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| EvalResult {
            id: s.id.clone(),
            task: s.task,
            response: if follow(i, s) { s.reference_answer.clone() } else { s.audio_tokens.clone() },
            reference: s.reference_answer.clone(),
        })
        .collect()
}

#[test]
fn ifr_counts_and_macro_average() {
    let samples = gen_zeroshot_eval(60, 1).unwrap();
    let all = compute_ifr(&samples, &respond(&samples, |_, _| true), 0.9).unwrap();
    assert!(all.per_task.values().all(|t| t.ifr == 1.0 && t.accuracy == Some(1.0)));
    assert_eq!(all.macro_ifr, 1.0);

    // Follow exactly 3 of the 20 samples of each task.
    let mut seen = std::collections::HashMap::new();
    let results = respond(&samples, |_, s| {
        let n = seen.entry(s.task).or_insert(0);
        *n += 1;
        *n <= 3
    });
    let r = compute_ifr(&samples, &results, 0.9).unwrap();
    for t in r.per_task.values() {
        assert_eq!((t.n_total, t.n_followed), (20, 3));
        assert!((t.ifr - 0.15).abs() < 1e-12);
    }
    let hand = r.per_task.values().map(|t| t.n_followed as f64 / t.n_total as f64).sum::<f64>() / 3.0;
    assert!((r.macro_ifr - hand).abs() < 1e-15);

    let none = compute_ifr(&samples, &respond(&samples, |_, _| false), 0.9).unwrap();
    assert!(none.per_task.values().all(|t| t.accuracy.is_none() && t.ifr == 0.0));
}

#[test]
fn ifr_is_order_invariant_and_accuracy_bounded() {
    let samples = gen_zeroshot_eval(90, 2).unwrap();
    let mut results = respond(&samples, |i, _| i % 4 != 0);
    // Wrong but well-formed answers count as followed and inaccurate.
    for r in results.iter_mut().filter(|r| r.task == Task::McClassify).take(5) {
        let wrong = if r.reference.ends_with('A') { "The answer is: B" } else { "The answer is: A" };
        r.response = wrong.into();
    }
    let a = compute_ifr(&samples, &results, 0.9).unwrap();
    results.reverse();
    let b = compute_ifr(&samples, &results, 0.9).unwrap();
    assert_eq!(a.per_task, b.per_task);
    let mc = &a.per_task[&Task::McClassify];
    assert!(mc.accuracy.unwrap() < 1.0 && mc.accuracy.unwrap() >= 0.0);
}

#[test]
fn cosine_examples() {
    let m = Tensor2D::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
    assert!((cosine_report(&[(m.clone(), m.clone())]).unwrap().mean - 1.0).abs() < 1e-12);
    let a = Tensor2D::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
    let b = Tensor2D::from_rows(&[vec![0.0, 5.0], vec![3.0, 0.0]]).unwrap();
    assert_eq!(cosine_report(&[(a, b)]).unwrap().mean, 0.0);
    let z = Tensor2D::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    let r = cosine_report(&[(z.clone(), z)]).unwrap();
    assert_eq!(r.excluded_rows, 1);
}

#[test]
fn tables_round_trip_and_are_stable() {
    let samples = gen_zeroshot_eval(30, 3).unwrap();
    let report = compute_ifr(&samples, &respond(&samples, |i, _| i % 3 == 0), 0.9).unwrap();
    let rows = report_rows("E1", &report, Some((0.125, 40)));
    let csv = rows_to_csv(&rows);
    assert_eq!(csv, rows_to_csv(&report_rows("E1", &report, Some((0.125, 40)))));
    let back = parse_csv(&csv).unwrap();
    assert_eq!(back.len(), rows.len());
    for (b, r) in back.iter().zip(&rows) {
        assert_eq!((b.task.as_str(), b.n_total, b.n_followed), (r.task.as_str(), r.n_total, r.n_followed));
        if let (Some(x), Some(y)) = (b.ifr, r.ifr) {
            assert!((x - y).abs() < 1e-6);
        }
    }
    let macro_row = back.iter().find(|r| r.task == "macro").unwrap();
    assert!((macro_row.ifr.unwrap() - report.macro_ifr).abs() < 1e-6);
    assert!(rows_to_text(&rows).lines().count() == rows.len() + 1);
}

#[test]
fn single_run_single_row_table() {
    let samples: Vec<TaskSample> = gen_zeroshot_eval(3, 4).unwrap().into_iter().filter(|s| s.task == Task::CipherTranslate).collect();
    let report = compute_ifr(&samples, &respond(&samples, |_, _| true), 0.9).unwrap();
    let rows = report_rows("alignformer", &report, None);
    assert_eq!(rows.iter().filter(|r| r.task != "macro").count(), 1);
}

#[test]
fn edit_distance_properties() {
    assert_eq!(edit_distance(b"abc", b"acb"), 2);
    assert_eq!(edit_distance(b"abc", b"xabc"), 1);
}
