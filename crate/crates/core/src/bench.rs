//! Per-question stage timing over repeated scripted sessions.

use std::fmt::Write as _;
use std::time::Duration;

use serde::Serialize;

use crate::audio::AudioClip;
use crate::language::LanguageTag;
use crate::providers::{ProviderError, TextToSpeech};
use crate::questionnaire::Questionnaire;
use crate::session::{run_session, ScriptedAudio, SessionContext, SessionError, Stage, StageTimings, Turn};
use crate::store::Store;

/// Answers used when a bench script is generated, cycled over questions.
pub const DEFAULT_ANSWERS: [&str; 3] = [
    "Je suis si heureux de vivre ici",
    "Je déteste ce monde",
    "Je ne peux pas tolérer ça. Je ne comprends pas pourquoi les gens font ça.",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub samples: usize,
}

impl Stat {
    /// Sample standard deviation; zero for a single sample.
    pub fn of(samples: &[Duration]) -> Stat {
        let ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        let n = ms.len();
        if n == 0 {
            return Stat {
                mean_ms: 0.0,
                stddev_ms: 0.0,
                samples: 0,
            };
        }
        let mean = ms.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Stat {
            mean_ms: mean,
            stddev_ms: var.sqrt(),
            samples: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub position: usize,
    pub question_id: String,
    /// One sample list per stage, in [`Stage::ALL`] order.
    #[serde(skip)]
    pub samples: Vec<Vec<Duration>>,
    #[serde(skip)]
    pub totals: Vec<Duration>,
}

impl BenchRow {
    pub fn stat(&self, stage: Stage) -> Stat {
        Stat::of(&self.samples[stage_index(stage)])
    }

    pub fn total(&self) -> Stat {
        Stat::of(&self.totals)
    }
}

fn stage_index(stage: Stage) -> usize {
    Stage::ALL.iter().position(|s| *s == stage).expect("stage listed")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub rows: Vec<BenchRow>,
}

/// Synthesizes one spoken reply for the welcome turn and each question.
pub fn scripted_answers(
    q: &Questionnaire,
    tts: &dyn TextToSpeech,
    language: &LanguageTag,
    answers: &[&str],
) -> Result<Vec<(Turn, AudioClip)>, ProviderError> {
    let mut out = vec![(Turn::Welcome, tts.synthesize("bonjour", language, 1.0)?)];
    if answers.is_empty() {
        return Ok(out);
    }
    for question in &q.questions {
        let text = answers[question.position % answers.len()];
        out.push((Turn::Question(question.position), tts.synthesize(text, language, 1.0)?));
    }
    Ok(out)
}

/// Runs `repetitions` full sessions from the same script and collects the
/// stage timings of every question.
pub fn run_bench(
    ctx: &SessionContext<'_>,
    script: &[(Turn, AudioClip)],
    store: &Store,
    repetitions: usize,
) -> Result<BenchReport, SessionError> {
    let q = ctx.questionnaire;
    let mut rows: Vec<BenchRow> = q
        .questions
        .iter()
        .map(|question| BenchRow {
            position: question.position,
            question_id: question.id.clone(),
            samples: vec![Vec::with_capacity(repetitions); Stage::ALL.len()],
            totals: Vec::with_capacity(repetitions),
        })
        .collect();
    for _ in 0..repetitions {
        let mut audio = ScriptedAudio::new();
        for (turn, clip) in script {
            audio.push_take(*turn, clip.clone());
        }
        let mut timings = StageTimings::default();
        run_session(ctx, &mut audio, store, &mut timings)?;
        for row in &mut rows {
            let turn = Turn::Question(row.position);
            let mut total = Duration::ZERO;
            for (i, stage) in Stage::ALL.iter().enumerate() {
                let d = timings.get(turn, *stage);
                row.samples[i].push(d);
                total += d;
            }
            row.totals.push(total);
        }
    }
    Ok(BenchReport { repetitions, rows })
}

impl BenchReport {
    /// Aligned table of `mean ± stddev` milliseconds.
    pub fn to_text(&self) -> String {
        let mut header = vec!["question".to_string()];
        header.extend(Stage::ALL.iter().map(|s| s.name().to_string()));
        header.push("total".into());
        let mut lines = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.question_id.clone()];
            let fmt = |s: Stat| format!("{:.3}±{:.3}", s.mean_ms, s.stddev_ms);
            cells.extend(Stage::ALL.iter().map(|s| fmt(row.stat(*s))));
            cells.push(fmt(row.total()));
            lines.push(cells);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("stage times in ms (mean±stddev over {} runs)\n", self.repetitions);
        for line in lines {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:>w$}", w = *w))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// One row per question with `<stage>_mean_ms` and `<stage>_stddev_ms`
    /// columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,question_id");
        for name in Stage::ALL.iter().map(|s| s.name()).chain(["total"]) {
            let _ = write!(out, ",{name}_mean_ms,{name}_stddev_ms");
        }
        out.push_str(",samples\n");
        for row in &self.rows {
            let _ = write!(out, "{},{}", row.position, row.question_id);
            for stat in Stage::ALL.iter().map(|s| row.stat(*s)).chain([row.total()]) {
                let _ = write!(out, ",{:.6},{:.6}", stat.mean_ms, stat.stddev_ms);
            }
            let _ = writeln!(out, ",{}", self.repetitions);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_uses_sample_stddev() {
        let s = Stat::of(&[Duration::from_millis(1), Duration::from_millis(3)]);
        assert!((s.mean_ms - 2.0).abs() < 1e-12);
        assert!((s.stddev_ms - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[Duration::from_millis(5)]).stddev_ms, 0.0);
    }
}
