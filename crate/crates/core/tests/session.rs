mod common;

use std::sync::Arc;

use carevoice_core::audio::{AudioClip, DRIVER_FORMAT};
use carevoice_core::capture::RecordPolicy;
use carevoice_core::language::LanguageTag;
use carevoice_core::providers::{
    EmotionLabel, EmotionScores, LanguageDetector, LanguageGuess, MockProviders, ProviderError, Providers,
    TextToSpeech,
};
use carevoice_core::questionnaire::{prerender_prompts, Questionnaire};
use carevoice_core::session::{
    aggregate, ask_question, detect_user_language, final_emotion, run_session, AbortCause, AnswerRecord,
    ScriptedAudio, SessionContext, SessionError, SessionPolicy, SessionRecord, SessionStatus, Turn,
};
use carevoice_core::store::Store;
use common::*;
use proptest::prelude::*;

fn questionnaire(n: usize) -> Questionnaire {
    let doc = ["How are you today?", "Did you sleep well?", "Do you feel alone?"][..n].join(" ");
    Questionnaire::from_document("wellbeing", "Wellbeing", tag("en"), "Hello, please say a few words.", &doc).unwrap()
}

fn say(text: &str, lang: &str) -> AudioClip {
    MockProviders::new().synthesize(text, &tag(lang), 1.0).unwrap()
}

fn silence() -> AudioClip {
    AudioClip::silence(DRIVER_FORMAT, 48_000)
}

/// French welcome reply plus the three reference answers.
fn reference_script() -> ScriptedAudio {
    let mut audio = ScriptedAudio::new().with_take(Turn::Welcome, say("bonjour", "fr"));
    for (i, (fr, _, _)) in REFERENCE_ANSWERS.iter().enumerate() {
        audio.push_take(Turn::Question(i), say(fr, "fr"));
    }
    audio
}

fn mock_providers() -> Providers {
    Providers::uniform(Arc::new(MockProviders::with_builtin_data()))
}

fn ctx<'a>(q: &'a Questionnaire, providers: &'a Providers, policy: &'a SessionPolicy) -> SessionContext<'a> {
    SessionContext {
        questionnaire: q,
        providers,
        policy,
        device_id: "kiosk-1",
        prompts: &[],
    }
}

#[test]
fn welcome_reply_in_french_selects_french() {
    let (q, p, policy) = (questionnaire(1), mock_providers(), SessionPolicy::default());
    let mut audio = ScriptedAudio::new().with_take(Turn::Welcome, say("bonjour", "fr"));
    let d = detect_user_language(&ctx(&q, &p, &policy), &mut audio, &mut ()).unwrap();
    assert_eq!(d.language, "fr");
    assert!(!d.fallback);
    assert_eq!(d.attempts, 1);
}

#[test]
fn silent_welcome_falls_back_after_three_attempts() {
    let (q, p, policy) = (questionnaire(1), mock_providers(), SessionPolicy::default());
    let mut audio = ScriptedAudio::new();
    let d = detect_user_language(&ctx(&q, &p, &policy), &mut audio, &mut ()).unwrap();
    assert_eq!(d.language, "en");
    assert!(d.fallback);
    assert_eq!(d.attempts, 3);
    assert_eq!(audio.listens(), [Turn::Welcome; 3]);
    assert_eq!(audio.played().len(), 3);
}

struct TiedDetector;

impl LanguageDetector for TiedDetector {
    fn detect_language(&self, _: &AudioClip) -> Result<Vec<LanguageGuess>, ProviderError> {
        Ok(vec![
            LanguageGuess::new(tag("fr"), 0.5).unwrap(),
            LanguageGuess::new(tag("en"), 0.5).unwrap(),
        ])
    }
}

#[test]
fn tied_guesses_pick_lowest_code() {
    let q = questionnaire(1);
    let mut p = mock_providers();
    p.detector = Arc::new(TiedDetector);
    let policy = SessionPolicy::default();
    let mut audio = ScriptedAudio::new().with_take(Turn::Welcome, say("bonjour", "fr"));
    let d = detect_user_language(&ctx(&q, &p, &policy), &mut audio, &mut ()).unwrap();
    assert_eq!(d.language, "en");
}

#[test]
fn first_try_answer_populates_everything() {
    let (q, p, policy) = (questionnaire(1), mock_providers(), SessionPolicy::default());
    let mut audio = ScriptedAudio::new().with_take(Turn::Question(0), say(REFERENCE_ANSWERS[0].0, "fr"));
    let a = ask_question(&ctx(&q, &p, &policy), &q.questions[0], &tag("fr"), &mut audio, &mut ()).unwrap();
    let r = a.record;
    assert_eq!(r.repeats_used, 0);
    assert!(!r.no_response);
    assert_eq!(r.transcript_user.unwrap().text, REFERENCE_ANSWERS[0].0);
    assert_eq!(r.transcript_specialist.as_deref(), Some(REFERENCE_ANSWERS[0].1));
    assert_eq!(r.transcript_emotion_lang.as_deref(), Some(REFERENCE_ANSWERS[0].1));
    assert_eq!(r.emotion.unwrap().emotions(), REFERENCE_ANSWERS[0].2);
    assert_eq!(r.audio_ref.as_deref(), Some("answer-1.wav"));
    assert!(a.clip.is_some());
    assert_eq!(audio.played()[0].tag("text"), Some("comment allez-vous aujourd'hui?"));
}

#[test]
fn silence_then_answer_uses_one_repeat() {
    let (q, p, policy) = (questionnaire(1), mock_providers(), SessionPolicy::default());
    let mut audio = ScriptedAudio::new()
        .with_take(Turn::Question(0), silence())
        .with_take(Turn::Question(0), say("Je déteste ce monde", "fr"));
    let a = ask_question(&ctx(&q, &p, &policy), &q.questions[0], &tag("fr"), &mut audio, &mut ()).unwrap();
    assert_eq!(a.record.repeats_used, 1);
    assert!(!a.record.no_response);
    assert_eq!(audio.played().len(), 2);
    assert_eq!(audio.played()[0], audio.played()[1]);
}

#[test]
fn exhausted_repeats_flag_no_response() {
    let (q, p, policy) = (questionnaire(1), mock_providers(), SessionPolicy::default());
    let mut audio = ScriptedAudio::new();
    let a = ask_question(&ctx(&q, &p, &policy), &q.questions[0], &tag("fr"), &mut audio, &mut ()).unwrap();
    assert!(a.record.no_response);
    assert_eq!(a.record.repeats_used, 2);
    assert!(a.record.emotion.is_none() && a.clip.is_none());
    assert_eq!(audio.listens().len(), 3);
    a.record.validate().unwrap();
}

#[test]
fn long_answer_is_marked_truncated() {
    let (q, p) = (questionnaire(1), mock_providers());
    let policy = SessionPolicy {
        record: RecordPolicy {
            chunk_seconds: 0.5,
            max_chunks: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut audio = ScriptedAudio::new().with_take(Turn::Question(0), say(REFERENCE_ANSWERS[2].0, "fr"));
    let a = ask_question(&ctx(&q, &p, &policy), &q.questions[0], &tag("fr"), &mut audio, &mut ()).unwrap();
    assert!(a.record.truncated);
    assert!((a.clip.unwrap().duration_seconds() - 1.0).abs() < 1e-9);
}

#[test]
fn aggregate_matches_exact_oracle() {
    let answers: Vec<AnswerRecord> = REFERENCE_ANSWERS
        .iter()
        .enumerate()
        .map(|(i, (fr, en, v))| answered(i, fr, en, *v))
        .collect();
    let (mean, label) = aggregate(&answers);
    let mean = mean.unwrap();
    // Integer hundredths summed exactly, divided once.
    let hundredths = [[87, 1, 4, 1, 1], [9, 5, 72, 7, 6], [2, 85, 4, 2, 2]];
    for (field, got) in mean.emotions().iter().enumerate() {
        let sum: i64 = hundredths.iter().map(|row| row[field]).sum();
        let oracle = sum as f64 / 300.0;
        assert!((got - oracle).abs() < 1e-9, "field {field}: {got} vs {oracle}");
    }
    assert_eq!(label, Some(EmotionLabel::Joy));
}

#[test]
fn aggregate_edge_cases() {
    let one = vec![answered(0, "x", "y", [0.1, 0.2, 0.3, 0.05, 0.05])];
    let (mean, label) = aggregate(&one);
    assert_eq!(mean.unwrap(), one[0].emotion.unwrap());
    assert_eq!(label, Some(EmotionLabel::Sadness));
    let silent = vec![AnswerRecord::no_response("q1", 0, "Q?", 2)];
    assert_eq!(aggregate(&silent), (None, None));
}

#[test]
fn final_emotion_examples() {
    assert_eq!(final_emotion(&scores(REFERENCE_ANSWERS[0].2)), EmotionLabel::Joy);
    assert_eq!(final_emotion(&scores(REFERENCE_ANSWERS[1].2)), EmotionLabel::Sadness);
    assert_eq!(final_emotion(&scores(REFERENCE_ANSWERS[2].2)), EmotionLabel::Anger);
    assert_eq!(final_emotion(&scores([0.3; 5])), EmotionLabel::Joy);
}

fn unit() -> impl Strategy<Value = f64> {
    0.0f64..=1.0
}

fn any_scores() -> impl Strategy<Value = EmotionScores> {
    (unit(), unit(), unit(), unit(), unit(), -1.0f64..=1.0)
        .prop_map(|(a, b, c, d, e, s)| EmotionScores::new(a, b, c, d, e, s).unwrap())
}

proptest! {
    #[test]
    fn final_emotion_ignores_positive_scale(s in any_scores(), k in 0.001f64..1.0) {
        let scaled = EmotionScores::new(s.joy * k, s.anger * k, s.sadness * k, s.fear * k, s.disgust * k, s.sentiment).unwrap();
        prop_assert_eq!(final_emotion(&scaled), final_emotion(&s));
    }

    #[test]
    fn mean_of_identical_vectors_is_exact(s in any_scores(), n in 1usize..12) {
        let answers: Vec<AnswerRecord> = (0..n).map(|i| {
            let mut a = answered(i, "x", "y", [0.0; 5]);
            a.emotion = Some(s);
            a
        }).collect();
        prop_assert_eq!(aggregate(&answers).0, Some(s));
    }
}

fn store() -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    (dir, store)
}

#[test]
fn full_session_is_persisted() {
    let (q, p, policy) = (questionnaire(3), mock_providers(), SessionPolicy::default());
    let (_dir, store) = store();
    let mut audio = reference_script();
    let record = run_session(&ctx(&q, &p, &policy), &mut audio, &store, &mut ()).unwrap();
    assert_eq!(record.status, SessionStatus::Completed);
    assert_eq!(record.detected_language, "fr");
    assert_eq!(record.answers.len(), 3);
    assert!(record.answers.iter().all(|a| !a.no_response && a.repeats_used == 0));
    assert_eq!(record.final_label, Some(EmotionLabel::Joy));
    assert!(record.mean_emotion.is_some());
    assert_eq!(record.welcome_audio_ref.as_deref(), Some("welcome.wav"));
    assert_eq!(store.load_session(&record.id).unwrap(), record);
    assert!(store.read_attachment(&record.id, "answer-3.wav").is_ok());
}

#[test]
fn silent_user_yields_null_mean() {
    let (q, p, policy) = (questionnaire(1), mock_providers(), SessionPolicy::default());
    let (_dir, store) = store();
    let mut audio = ScriptedAudio::new().with_take(Turn::Welcome, say("bonjour", "fr"));
    let record = run_session(&ctx(&q, &p, &policy), &mut audio, &store, &mut ()).unwrap();
    assert_eq!(record.answers.len(), 1);
    assert!(record.answers[0].no_response);
    assert_eq!(record.answers[0].repeats_used, 2);
    assert_eq!((record.mean_emotion, record.final_label), (None, None));
}

#[test]
fn provider_outage_aborts_with_partial_record() {
    let q = questionnaire(3);
    let counting = Counting::failing_stt_on(MockProviders::with_builtin_data(), 2);
    let p = counting_providers(&counting);
    let policy = SessionPolicy::default();
    let (_dir, store) = store();
    let mut audio = reference_script();
    let err = run_session(&ctx(&q, &p, &policy), &mut audio, &store, &mut ()).unwrap_err();
    let SessionError::Aborted { record, cause } = err else {
        panic!("expected abort, got {err:?}");
    };
    assert!(matches!(cause, AbortCause::Provider(ProviderError::Unavailable(_))));
    assert_eq!(record.status, SessionStatus::Aborted);
    assert_eq!(record.answers.len(), 3);
    assert!(!record.answers[0].no_response);
    assert!(record.answers[1].no_response && record.answers[2].no_response);
    assert_eq!(record.mean_emotion.unwrap().emotions(), REFERENCE_ANSWERS[0].2);
    assert_eq!(store.load_session(&record.id).unwrap(), *record);
}

#[test]
fn provider_calls_per_answered_question() {
    struct Case {
        user: &'static str,
        specialist: &'static str,
        emotion: &'static str,
    }
    let cases = [
        Case { user: "fr", specialist: "en", emotion: "en" },
        Case { user: "en", specialist: "en", emotion: "en" },
        Case { user: "fr", specialist: "es", emotion: "en" },
        Case { user: "fr", specialist: "fr", emotion: "en" },
    ];
    for case in cases {
        let mut q = questionnaire(3);
        q.specialist_language = tag(case.specialist);
        let counting = Counting::new(MockProviders::with_builtin_data());
        let p = counting_providers(&counting);
        let policy = SessionPolicy {
            emotion_language: tag(case.emotion),
            ..Default::default()
        };
        let mut audio = ScriptedAudio::new().with_take(Turn::Welcome, say("hi", case.user));
        for i in 0..3 {
            audio.push_take(Turn::Question(i), say("something to say", case.user));
        }
        let (_dir, store) = store();
        let record = run_session(&ctx(&q, &p, &policy), &mut audio, &store, &mut ()).unwrap();
        assert!(record.answers.iter().all(|a| !a.no_response));
        let [tts, stt, translate, detect, emotion] = counting.counts();
        let n = 3;
        assert_eq!(tts, 1 + n, "one welcome plus one per question");
        assert_eq!(stt, n);
        assert_eq!(emotion, n);
        assert_eq!(detect, 1);
        let question_side = if case.user == case.specialist { 0 } else { n };
        let answer_side = translate - question_side;
        assert!(answer_side <= 2 * n, "{answer_side} answer translations");
        let expected_answer_side = usize::from(case.user != case.specialist)
            + usize::from(case.emotion != case.user && case.emotion != case.specialist);
        assert_eq!(answer_side, n * expected_answer_side);
    }
}

#[test]
fn prerendered_prompts_skip_synthesis() {
    let q = questionnaire(3);
    let mock = MockProviders::with_builtin_data();
    let dir = tempfile::tempdir().unwrap();
    let cache = prerender_prompts(&q, &mock, &mock, &tag("fr"), 1.0, &dir.path().join("fr")).unwrap();
    let counting = Counting::new(mock);
    let p = counting_providers(&counting);
    let policy = SessionPolicy::default();
    let prompts = [cache];
    let c = SessionContext {
        prompts: &prompts,
        ..ctx(&q, &p, &policy)
    };
    let (_d, store) = store();
    let mut audio = reference_script();
    run_session(&c, &mut audio, &store, &mut ()).unwrap();
    let [tts, _, translate, _, _] = counting.counts();
    assert_eq!(tts, 1, "only the welcome prompt is synthesized");
    assert_eq!(translate, 3, "only answers are translated");
    assert_eq!(audio.played()[1].tag("text"), Some("comment allez-vous aujourd'hui?"));
}

fn strip_volatile(mut r: SessionRecord) -> SessionRecord {
    r.id = String::new();
    r.started_at = at(0);
    r.finished_at = at(0);
    r
}

#[test]
fn identical_inputs_give_identical_records() {
    let (q, p, policy) = (questionnaire(3), mock_providers(), SessionPolicy::default());
    let (_dir, store) = store();
    let a = run_session(&ctx(&q, &p, &policy), &mut reference_script(), &store, &mut ()).unwrap();
    let b = run_session(&ctx(&q, &p, &policy), &mut reference_script(), &store, &mut ()).unwrap();
    assert_ne!(a.id, b.id);
    assert_eq!(strip_volatile(a), strip_volatile(b));
}

#[test]
fn invalid_policy_is_rejected() {
    let (q, p) = (questionnaire(1), mock_providers());
    let policy = SessionPolicy {
        max_repeats: 6,
        ..Default::default()
    };
    let (_dir, store) = store();
    let err = run_session(&ctx(&q, &p, &policy), &mut ScriptedAudio::new(), &store, &mut ()).unwrap_err();
    assert!(matches!(err, SessionError::InvalidPolicy(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn answers_always_cover_every_question(
        takes in prop::collection::vec(prop::collection::vec(any::<bool>(), 0..4), 3),
        fail_at in prop::option::of(1usize..5),
        max_repeats in 0u32..3,
    ) {
        let q = questionnaire(3);
        let counting = match fail_at {
            Some(n) => Counting::failing_stt_on(MockProviders::with_builtin_data(), n),
            None => Counting::new(MockProviders::with_builtin_data()),
        };
        let p = counting_providers(&counting);
        let policy = SessionPolicy { max_repeats, ..Default::default() };
        let mut audio = ScriptedAudio::new().with_take(Turn::Welcome, say("bonjour", "fr"));
        for (i, pattern) in takes.iter().enumerate() {
            for voiced in pattern {
                audio.push_take(Turn::Question(i), if *voiced { say(REFERENCE_ANSWERS[i].0, "fr") } else { silence() });
            }
        }
        let (_dir, store) = store();
        let record = match run_session(&ctx(&q, &p, &policy), &mut audio, &store, &mut ()) {
            Ok(r) => r,
            Err(SessionError::Aborted { record, .. }) => *record,
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(record.answers.len(), 3);
        prop_assert!(record.answers.iter().all(|a| a.repeats_used <= max_repeats));
        prop_assert!(record.validate(Some(3)).is_ok());
        prop_assert_eq!(store.load_session(&record.id).unwrap(), record);
    }
}

#[test]
fn language_tags_in_records_are_primary_subtags() {
    let r = reference_record("x");
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["detected_language"], "fr");
    assert_eq!(json["final_label"], "JOY");
    let back: SessionRecord = serde_json::from_value(json).unwrap();
    assert_eq!(back.detected_language, LanguageTag::parse("fr-FR").unwrap());
}
