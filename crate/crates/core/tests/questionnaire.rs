use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};

use carevoice_core::audio::{parse_wav, AudioClip};
use carevoice_core::language::LanguageTag;
use carevoice_core::providers::{MockProviders, ProviderError, TextToSpeech};
use carevoice_core::questionnaire::{
    extract_questions, load_questionnaire, prerender_prompts, save_questionnaire, PromptCache, Questionnaire,
    QuestionnaireError,
};
use proptest::prelude::*;
use serde::Deserialize;

fn tag(s: &str) -> LanguageTag {
    LanguageTag::parse(s).unwrap()
}

#[derive(Deserialize)]
struct CorpusCase {
    name: String,
    document: String,
    expected: Vec<String>,
}

fn corpus() -> Vec<CorpusCase> {
    serde_json::from_str(include_str!("data/extraction_corpus.json")).unwrap()
}

#[test]
fn corpus_matches_hand_built_lists() {
    let cases = corpus();
    assert_eq!(cases.len(), 20);
    for case in cases {
        let got: Vec<String> = extract_questions(&case.document).into_iter().map(|q| q.text).collect();
        assert_eq!(got, case.expected, "{}", case.name);
        assert!(got.iter().all(|q| q.ends_with('?')), "{}", case.name);
    }
}

fn three_questions() -> Questionnaire {
    Questionnaire::from_document(
        "wellbeing",
        "Wellbeing",
        tag("en"),
        "Hello, please say a few words.",
        "How are you today? Did you sleep well? Do you feel alone?",
    )
    .unwrap()
}

#[test]
fn save_then_load_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.json");
    let q = three_questions();
    save_questionnaire(&q, &path).unwrap();
    assert_eq!(load_questionnaire(&path).unwrap(), q);
}

#[test]
fn load_reports_bad_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{ not json").unwrap();
    assert!(matches!(load_questionnaire(&path), Err(QuestionnaireError::InvalidManifest { .. })));
    let missing = load_questionnaire(&dir.path().join("absent.json"));
    assert!(matches!(missing, Err(QuestionnaireError::Io { .. })));
}

#[test]
fn prerender_translates_then_synthesizes_each_question() {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockProviders::with_builtin_data();
    let q = three_questions();
    let cache = prerender_prompts(&q, &mock, &mock, &tag("fr"), 1.0, &dir.path().join("fr")).unwrap();
    assert_eq!(cache.prompts.len(), 3);
    assert!(cache.covers(&q));
    let expected = ["comment allez-vous aujourd'hui?", "avez-vous bien dormi?", "vous sentez-vous seul?"];
    for (question, want) in q.questions.iter().zip(expected) {
        let clip = cache.prompt_clip(&question.id).unwrap().unwrap();
        assert_eq!(clip.tag("text"), Some(want));
        assert_eq!(clip.tag("language"), Some("fr"));
    }
    let reloaded = PromptCache::load(&dir.path().join("fr")).unwrap();
    assert_eq!(reloaded, cache);
}

#[test]
fn prerender_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockProviders::with_builtin_data();
    let q = three_questions();
    let a = prerender_prompts(&q, &mock, &mock, &tag("en"), 1.0, &dir.path().join("a")).unwrap();
    let b = prerender_prompts(&q, &mock, &mock, &tag("en"), 1.0, &dir.path().join("b")).unwrap();
    for (x, y) in a.entries().values().zip(b.entries().values()) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
}

/// Fails on the n-th synthesis call (1-based).
struct FailingTts {
    inner: MockProviders,
    fail_on: usize,
    calls: AtomicUsize,
}

impl TextToSpeech for FailingTts {
    fn synthesize(&self, text: &str, language: &LanguageTag, rate: f64) -> Result<AudioClip, ProviderError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) + 1 == self.fail_on {
            return Err(ProviderError::Unavailable("scripted outage".into()));
        }
        self.inner.synthesize(text, language, rate)
    }
}

#[test]
fn failure_mid_render_publishes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockProviders::with_builtin_data();
    let q = three_questions();
    // Call 1 is the welcome prompt, call 3 is question 2.
    let tts = FailingTts {
        inner: mock.clone(),
        fail_on: 3,
        calls: AtomicUsize::new(0),
    };
    let dest = dir.path().join("en");
    let err = prerender_prompts(&q, &tts, &mock, &tag("en"), 1.0, &dest).unwrap_err();
    assert!(matches!(err, QuestionnaireError::Provider(ProviderError::Unavailable(_))));
    assert!(!dest.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn failed_rerender_keeps_previous_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockProviders::with_builtin_data();
    let q = three_questions();
    let dest = dir.path().join("en");
    let good = prerender_prompts(&q, &mock, &mock, &tag("en"), 1.0, &dest).unwrap();
    let tts = FailingTts {
        inner: mock.clone(),
        fail_on: 2,
        calls: AtomicUsize::new(0),
    };
    assert!(prerender_prompts(&q, &tts, &mock, &tag("en"), 2.0, &dest).is_err());
    assert_eq!(PromptCache::load(&dest).unwrap(), good);
}

#[test]
fn prompt_wav_files_are_driver_format() {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockProviders::with_builtin_data();
    let cache = prerender_prompts(&three_questions(), &mock, &mock, &tag("en"), 1.0, dir.path()).unwrap();
    for path in cache.entries().values() {
        let clip = parse_wav(&fs::read(path).unwrap()).unwrap();
        assert_eq!(clip.format(), carevoice_core::audio::DRIVER_FORMAT);
    }
}

fn sentence_words() -> impl Strategy<Value = String> {
    "[A-Za-z¿é]{1,8}( [A-Za-z]{1,8}){0,5}"
}

proptest! {
    #[test]
    fn extracted_items_end_with_question_mark(doc in "[A-Za-z ?.!\n\r¿]{0,200}") {
        for q in extract_questions(&doc) {
            prop_assert!(q.text.ends_with('?'));
            prop_assert!(!q.text.trim().is_empty());
            prop_assert_eq!(q.text.trim(), q.text.as_str());
        }
    }

    #[test]
    fn line_endings_do_not_matter(doc in "[A-Za-z ?.!\n]{0,200}") {
        let crlf = doc.replace('\n', "\r\n");
        prop_assert_eq!(extract_questions(&doc), extract_questions(&crlf));
    }

    #[test]
    fn reextraction_with_filler_is_stable(
        questions in prop::collection::vec(sentence_words(), 1..6),
        fillers in prop::collection::vec((sentence_words(), prop::sample::select(vec![". ", "! ", "\n\n"])), 1..6),
    ) {
        let source: String = questions.iter().map(|q| format!("{q}? ")).collect();
        let first: Vec<String> = extract_questions(&source).into_iter().map(|q| q.text).collect();
        let mut doc = String::new();
        for (i, q) in first.iter().enumerate() {
            let (filler, end) = &fillers[i % fillers.len()];
            doc.push_str(filler);
            doc.push_str(end);
            doc.push_str(q);
            doc.push(' ');
        }
        let got: Vec<String> = extract_questions(&doc).into_iter().map(|q| q.text).collect();
        prop_assert_eq!(got, first);
    }

    #[test]
    fn positions_are_dense(doc in "[A-Za-z ?.]{0,120}") {
        let qs = extract_questions(&doc);
        for (i, q) in qs.iter().enumerate() {
            prop_assert_eq!(q.position, i);
            prop_assert_eq!(&q.id, &format!("q{}", i + 1));
        }
    }
}
