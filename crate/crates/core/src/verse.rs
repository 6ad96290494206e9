//! Fei Hua Ling, the collaborative verse game.
//!
//! A round announces a keyword or a theme. Viewers quote verses in chat; a quote is
//! accepted when it is a corpus line that contains the keyword (or carries the theme
//! tag) and has not been accepted before in this round. The room wins together when
//! the number of accepted verses reaches the round threshold before the countdown ends.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// How many recent verses the board shows.
pub const BOARD_SIZE: usize = 9;
pub const DEFAULT_ROUND_MS: u64 = 300_000;
pub const DEFAULT_THRESHOLD: u32 = 20;

/// Canonical form used for corpus lookup and dedup: NFC, lowercased, with every
/// whitespace, punctuation and symbol character removed.
pub fn normalize_verse(text: &str) -> String {
    let mut current = normalize_once(text);
    // Removing characters can expose new canonical compositions (e.g. Hangul jamo
    // separated by punctuation); iterate to a fixed point.
    loop {
        let next = normalize_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn normalize_once(text: &str) -> String {
    let lowered: String = text.nfc().flat_map(char::to_lowercase).collect();
    lowered.nfc().filter(|c| c.is_alphanumeric()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerseEntry {
    pub normalized_text: String,
    /// The line as first written in the corpus file.
    pub display_text: String,
    pub source_title: String,
    pub themes: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerseCorpus {
    entries: Vec<VerseEntry>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("malformed corpus line {0}")]
    Malformed(usize),
}

impl VerseCorpus {
    /// Builds a corpus from entries, collapsing duplicates and merging their themes.
    pub fn from_entries(entries: impl IntoIterator<Item = VerseEntry>) -> Self {
        let mut corpus = VerseCorpus::default();
        for entry in entries {
            corpus.insert(entry);
        }
        corpus
    }

    fn insert(&mut self, mut entry: VerseEntry) {
        entry.normalized_text = normalize_verse(&entry.normalized_text);
        match self.index.get(&entry.normalized_text) {
            Some(&i) => self.entries[i].themes.extend(entry.themes),
            None => {
                self.index.insert(entry.normalized_text.clone(), self.entries.len());
                self.entries.push(entry);
            }
        }
    }

    pub fn entries(&self) -> &[VerseEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Looks up an already-normalized verse.
    pub fn get(&self, normalized: &str) -> Option<&VerseEntry> {
        self.index.get(normalized).map(|&i| &self.entries[i])
    }
}

/// Parses the corpus format: one `verse<TAB>source_title[<TAB>theme,theme...]` per
/// line. Blank lines and lines starting with `#` are skipped.
pub fn load_corpus(document: &[u8]) -> Result<VerseCorpus, CorpusError> {
    let text = std::str::from_utf8(document).map_err(|e| {
        let line_no = document[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        CorpusError::Malformed(line_no)
    })?;
    let mut corpus = VerseCorpus::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(CorpusError::Malformed(line_no));
        }
        let verse = fields[0].trim();
        let source = fields[1].trim();
        let normalized = normalize_verse(verse);
        if normalized.is_empty() || source.is_empty() {
            return Err(CorpusError::Malformed(line_no));
        }
        let themes = fields
            .get(2)
            .map(|t| {
                t.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect()
            })
            .unwrap_or_default();
        corpus.insert(VerseEntry {
            normalized_text: normalized,
            display_text: verse.to_owned(),
            source_title: source.to_owned(),
            themes,
        });
    }
    Ok(corpus)
}

/// The corpus shipped with the crate: classical lines tagged `flower`,
/// `hangzhou-jiangnan` and `nostalgia`.
pub const BUNDLED_CORPUS: &str = include_str!("../data/corpus.tsv");

pub fn bundled_corpus() -> VerseCorpus {
    load_corpus(BUNDLED_CORPUS.as_bytes()).expect("bundled corpus parses")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundMode {
    /// A verse qualifies if it contains any of `forms` (e.g. "花" and "flower").
    Keyword { label: String, forms: Vec<String> },
    /// A verse qualifies if its corpus entry carries this theme tag.
    Theme(String),
}

impl RoundMode {
    pub fn keyword(label: &str, forms: &[&str]) -> Self {
        RoundMode::Keyword {
            label: label.to_owned(),
            forms: forms.iter().map(|f| f.to_string()).collect(),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            RoundMode::Keyword { label, .. } => label,
            RoundMode::Theme(tag) => tag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinEffect {
    PetalField,
    FireworkVolley,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSpec {
    pub mode: RoundMode,
    #[serde(default = "default_duration")]
    pub duration_ms: u64,
    #[serde(default = "default_threshold")]
    pub threshold: u32,
    pub win_effect: WinEffect,
}

fn default_duration() -> u64 {
    DEFAULT_ROUND_MS
}

fn default_threshold() -> u32 {
    DEFAULT_THRESHOLD
}

impl RoundSpec {
    pub fn new(mode: RoundMode, win_effect: WinEffect) -> Self {
        Self { mode, duration_ms: DEFAULT_ROUND_MS, threshold: DEFAULT_THRESHOLD, win_effect }
    }

    pub fn validate(&self) -> Result<(), VerseError> {
        if self.duration_ms == 0 {
            return Err(VerseError::InvalidSpec("duration_ms must be positive"));
        }
        if self.threshold == 0 {
            return Err(VerseError::InvalidSpec("threshold must be at least 1"));
        }
        if let RoundMode::Keyword { forms, .. } = &self.mode {
            if forms.iter().all(|f| normalize_verse(f).is_empty()) {
                return Err(VerseError::InvalidSpec("keyword has no usable form"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerseError {
    #[error("a round is already running")]
    RoundAlreadyActive,
    #[error("invalid round spec: {0}")]
    InvalidSpec(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "at_ms", rename_all = "snake_case")]
pub enum RoundOutcome {
    Running,
    Won(u64),
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerseJudgment {
    Accepted,
    Duplicate,
    NotInCorpus,
    KeywordMiss,
    ThemeMiss,
    NoActiveRound,
}

impl VerseJudgment {
    pub const ALL: [VerseJudgment; 6] = [
        VerseJudgment::Accepted,
        VerseJudgment::Duplicate,
        VerseJudgment::NotInCorpus,
        VerseJudgment::KeywordMiss,
        VerseJudgment::ThemeMiss,
        VerseJudgment::NoActiveRound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VerseJudgment::Accepted => "accepted",
            VerseJudgment::Duplicate => "duplicate",
            VerseJudgment::NotInCorpus => "not_in_corpus",
            VerseJudgment::KeywordMiss => "keyword_miss",
            VerseJudgment::ThemeMiss => "theme_miss",
            VerseJudgment::NoActiveRound => "no_active_round",
        }
    }
}

/// Result of one submission: the judgment, and the win effect if it ended the round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub judgment: VerseJudgment,
    pub normalized: String,
    pub won: Option<WinEffect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerseRound {
    pub spec: RoundSpec,
    pub started_at_ms: u64,
    /// Accepted normalized verses in acceptance order; values are distinct.
    pub accepted: Vec<String>,
    pub combo: u32,
    pub outcome: RoundOutcome,
    #[serde(skip)]
    accepted_set: BTreeSet<String>,
    #[serde(skip)]
    keyword_forms: Vec<String>,
}

impl VerseRound {
    pub fn start(spec: RoundSpec, now_ms: u64) -> Result<Self, VerseError> {
        spec.validate()?;
        let keyword_forms = match &spec.mode {
            RoundMode::Keyword { forms, .. } => forms
                .iter()
                .map(|f| normalize_verse(f))
                .filter(|f| !f.is_empty())
                .collect(),
            RoundMode::Theme(_) => Vec::new(),
        };
        Ok(Self {
            spec,
            started_at_ms: now_ms,
            accepted: Vec::new(),
            combo: 0,
            outcome: RoundOutcome::Running,
            accepted_set: BTreeSet::new(),
            keyword_forms,
        })
    }

    pub fn is_running(&self) -> bool {
        self.outcome == RoundOutcome::Running
    }

    pub fn deadline_ms(&self) -> u64 {
        self.started_at_ms + self.spec.duration_ms
    }

    /// Applies the countdown. Returns true when this call moved the round to `Lost`.
    pub fn tick(&mut self, now_ms: u64) -> bool {
        if self.is_running()
            && now_ms >= self.deadline_ms()
            && (self.accepted.len() as u64) < u64::from(self.spec.threshold)
        {
            self.outcome = RoundOutcome::Lost;
            return true;
        }
        false
    }

    pub fn submit(&mut self, corpus: &VerseCorpus, text: &str, now_ms: u64) -> Submission {
        let normalized = normalize_verse(text);
        self.tick(now_ms);
        let judgment = self.judge(corpus, &normalized);
        let mut won = None;
        match judgment {
            VerseJudgment::NoActiveRound => {}
            VerseJudgment::Accepted => {
                self.accepted_set.insert(normalized.clone());
                self.accepted.push(normalized.clone());
                self.combo += 1;
                if self.accepted.len() as u64 >= u64::from(self.spec.threshold) {
                    self.outcome = RoundOutcome::Won(now_ms);
                    won = Some(self.spec.win_effect);
                }
            }
            _ => self.combo = 0,
        }
        Submission { judgment, normalized, won }
    }

    fn judge(&self, corpus: &VerseCorpus, normalized: &str) -> VerseJudgment {
        if !self.is_running() {
            return VerseJudgment::NoActiveRound;
        }
        let Some(entry) = corpus.get(normalized) else {
            return VerseJudgment::NotInCorpus;
        };
        match &self.spec.mode {
            RoundMode::Keyword { .. } => {
                if !self.keyword_forms.iter().any(|k| normalized.contains(k.as_str())) {
                    return VerseJudgment::KeywordMiss;
                }
            }
            RoundMode::Theme(tag) => {
                if !entry.themes.contains(tag) {
                    return VerseJudgment::ThemeMiss;
                }
            }
        }
        if self.accepted_set.contains(normalized) {
            return VerseJudgment::Duplicate;
        }
        VerseJudgment::Accepted
    }

    /// Remaining time shown on the board. Frozen at the win instant; zero once lost.
    pub fn countdown_ms(&self, now_ms: u64) -> u64 {
        let reference = match self.outcome {
            RoundOutcome::Running => now_ms,
            RoundOutcome::Won(at) => at,
            RoundOutcome::Lost => return 0,
        };
        self.deadline_ms().saturating_sub(reference.max(self.started_at_ms))
    }

    pub fn board_view(&self, now_ms: u64) -> BoardView {
        let skip = self.accepted.len().saturating_sub(BOARD_SIZE);
        BoardView {
            keyword_or_theme: self.spec.mode.label().to_owned(),
            last_nine: self.accepted[skip..].to_vec(),
            countdown_ms: self.countdown_ms(now_ms),
            combo: self.combo,
            progress: (self.accepted.len() as u32, self.spec.threshold),
            outcome: self.outcome,
        }
    }
}

/// What the on-screen board shows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardView {
    pub keyword_or_theme: String,
    pub last_nine: Vec<String>,
    pub countdown_ms: u64,
    pub combo: u32,
    pub progress: (u32, u32),
    pub outcome: RoundOutcome,
}

/// Holds the current round, enforcing that at most one runs at a time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerseGame {
    pub current: Option<VerseRound>,
    pub finished: Vec<RoundOutcome>,
}

impl VerseGame {
    pub fn start_round(&mut self, spec: RoundSpec, now_ms: u64) -> Result<&VerseRound, VerseError> {
        if self.current.as_ref().is_some_and(VerseRound::is_running) {
            return Err(VerseError::RoundAlreadyActive);
        }
        let round = VerseRound::start(spec, now_ms)?;
        if let Some(prev) = self.current.take() {
            self.finished.push(prev.outcome);
        }
        Ok(self.current.insert(round))
    }

    pub fn running(&self) -> Option<&VerseRound> {
        self.current.as_ref().filter(|r| r.is_running())
    }

    pub fn submit(&mut self, corpus: &VerseCorpus, text: &str, now_ms: u64) -> Submission {
        match self.current.as_mut() {
            Some(round) => round.submit(corpus, text, now_ms),
            None => Submission {
                judgment: VerseJudgment::NoActiveRound,
                normalized: normalize_verse(text),
                won: None,
            },
        }
    }

    pub fn board_view(&self, now_ms: u64) -> Option<BoardView> {
        self.running().map(|r| r.board_view(now_ms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(text: &str, themes: &[&str]) -> VerseEntry {
        VerseEntry {
            normalized_text: text.to_owned(),
            display_text: text.to_owned(),
            source_title: "t".into(),
            themes: themes.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn small_corpus() -> VerseCorpus {
        VerseCorpus::from_entries([
            entry("感时花溅泪", &[]),
            entry("花落知多少", &[]),
            entry("床前明月光", &["nostalgia"]),
            entry("水光潋滟晴方好", &["hangzhou-jiangnan"]),
            entry("日出江花红胜火", &["hangzhou-jiangnan"]),
        ])
    }

    fn flower_round(threshold: u32) -> VerseRound {
        let mut spec = RoundSpec::new(RoundMode::keyword("flower", &["花", "flower"]), WinEffect::PetalField);
        spec.threshold = threshold;
        VerseRound::start(spec, 1_000).unwrap()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_verse("明月几时有？"), "明月几时有");
        assert_eq!(normalize_verse("  Quiet  Night "), "quietnight");
        assert_eq!(normalize_verse("感时，花溅泪。"), "感时花溅泪");
        assert_eq!(normalize_verse("Cafe\u{301}!"), "café");
    }

    #[test]
    fn corpus_loading() {
        let doc = "# comment\n感时花溅泪\t春望\tflower\n花落知多少\t春晓\n\n水光潋滟晴方好\t饮湖上初晴后雨\thangzhou-jiangnan\n";
        let c = load_corpus(doc.as_bytes()).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.get("花落知多少").unwrap().themes.is_empty());
        assert!(load_corpus(b"").unwrap().is_empty());
    }

    #[test]
    fn corpus_duplicates_merge_themes() {
        let doc = "感时花溅泪\t春望\tflower\n感时花溅泪。\t春望\tnostalgia, war\n";
        let c = load_corpus(doc.as_bytes()).unwrap();
        assert_eq!(c.len(), 1);
        let themes: Vec<_> = c.entries()[0].themes.iter().cloned().collect();
        assert_eq!(themes, ["flower", "nostalgia", "war"]);
    }

    #[test]
    fn corpus_malformed_line_numbers() {
        assert_eq!(load_corpus(b"ok\tsrc\nno tab here\n"), Err(CorpusError::Malformed(2)));
        assert_eq!(load_corpus("，。\tsrc\n".as_bytes()), Err(CorpusError::Malformed(1)));
        assert_eq!(load_corpus(b"a\tb\tc\td\n"), Err(CorpusError::Malformed(1)));
    }

    #[test]
    fn start_round_fresh_state() {
        let r = flower_round(20);
        assert_eq!(r.countdown_ms(1_000), 300_000);
        let b = r.board_view(1_000);
        assert!(b.last_nine.is_empty());
        assert_eq!((b.combo, b.progress), (0, (0, 20)));
        assert_eq!(b.keyword_or_theme, "flower");
    }

    #[test]
    fn start_while_running_is_rejected() {
        let mut game = VerseGame::default();
        let spec = RoundSpec::new(RoundMode::Theme("hangzhou-jiangnan".into()), WinEffect::FireworkVolley);
        game.start_round(spec.clone(), 0).unwrap();
        assert_eq!(game.start_round(spec.clone(), 10).unwrap_err(), VerseError::RoundAlreadyActive);
        game.current.as_mut().unwrap().tick(300_000);
        assert!(game.start_round(spec, 300_001).is_ok());
        assert_eq!(game.finished, [RoundOutcome::Lost]);
    }

    #[test]
    fn accept_then_duplicate() {
        let corpus = small_corpus();
        let mut r = flower_round(20);
        let s = r.submit(&corpus, "感时花溅泪。", 2_000);
        assert_eq!(s.judgment, VerseJudgment::Accepted);
        assert_eq!(r.combo, 1);
        let s = r.submit(&corpus, "感时花溅泪", 2_100);
        assert_eq!(s.judgment, VerseJudgment::Duplicate);
        assert_eq!(r.combo, 0);
        assert_eq!(r.submit(&corpus, "床前明月光", 2_200).judgment, VerseJudgment::KeywordMiss);
        assert_eq!(r.submit(&corpus, "nice view", 2_300).judgment, VerseJudgment::NotInCorpus);
    }

    #[test]
    fn theme_round() {
        let corpus = small_corpus();
        let spec = RoundSpec::new(RoundMode::Theme("hangzhou-jiangnan".into()), WinEffect::FireworkVolley);
        let mut r = VerseRound::start(spec, 0).unwrap();
        assert_eq!(r.submit(&corpus, "水光潋滟晴方好", 1).judgment, VerseJudgment::Accepted);
        assert_eq!(r.submit(&corpus, "感时花溅泪", 2).judgment, VerseJudgment::ThemeMiss);
    }

    #[test]
    fn reaching_threshold_wins_and_freezes_countdown() {
        let corpus = small_corpus();
        let mut r = flower_round(2);
        r.submit(&corpus, "感时花溅泪", 11_000);
        let s = r.submit(&corpus, "花落知多少", 21_000);
        assert_eq!(s.won, Some(WinEffect::PetalField));
        assert_eq!(r.outcome, RoundOutcome::Won(21_000));
        // Remaining time at the win: start 1000 + 300000 - 21000.
        assert_eq!(r.board_view(100_000).countdown_ms, 280_000);
        assert!(!r.tick(1_000_000));
        assert_eq!(r.outcome, RoundOutcome::Won(21_000));
        assert_eq!(r.submit(&corpus, "日出江花红胜火", 22_000).judgment, VerseJudgment::NoActiveRound);
    }

    #[test]
    fn countdown_boundary() {
        let corpus = small_corpus();
        let mut r = flower_round(20);
        r.submit(&corpus, "感时花溅泪", 2_000);
        assert!(!r.tick(1_000 + 299_999));
        assert!(r.is_running());
        assert!(r.tick(1_000 + 300_000));
        assert_eq!(r.outcome, RoundOutcome::Lost);
        assert_eq!(r.submit(&corpus, "花落知多少", 400_000).judgment, VerseJudgment::NoActiveRound);
    }

    #[test]
    fn expired_submission_is_not_judged() {
        let corpus = small_corpus();
        let mut r = flower_round(20);
        assert_eq!(r.submit(&corpus, "花落知多少", 301_000).judgment, VerseJudgment::NoActiveRound);
        assert_eq!(r.outcome, RoundOutcome::Lost);
    }

    #[test]
    fn board_shows_most_recent_nine() {
        let entries: Vec<_> = (1..=11).map(|i| entry(&format!("花{i}"), &[])).collect();
        let corpus = VerseCorpus::from_entries(entries);
        let mut r = flower_round(20);
        for i in 1..=11 {
            assert_eq!(r.submit(&corpus, &format!("花{i}"), 5_000 + i).judgment, VerseJudgment::Accepted);
        }
        let b = r.board_view(6_000);
        let expected: Vec<String> = (3..=11).map(|i| format!("花{i}")).collect();
        assert_eq!(b.last_nine, expected);
        assert_eq!(b.progress, (11, 20));
        assert_eq!(b.combo, 11);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = RoundSpec::new(RoundMode::keyword("x", &["？"]), WinEffect::PetalField);
        assert!(VerseRound::start(spec.clone(), 0).is_err());
        spec.mode = RoundMode::keyword("x", &["x"]);
        spec.threshold = 0;
        assert!(VerseRound::start(spec.clone(), 0).is_err());
        spec.threshold = 1;
        spec.duration_ms = 0;
        assert!(VerseRound::start(spec, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,24}") {
            let once = normalize_verse(&s);
            prop_assert_eq!(normalize_verse(&once), once);
        }
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent_on_mixed_scripts(
            s in "[ \\t。，？！a-zA-Z\u{1100}-\u{1112}\u{1161}-\u{1175}\u{300}-\u{36f}İẞ感时花溅泪]{0,16}"
        ) {
            let once = normalize_verse(&s);
            prop_assert_eq!(normalize_verse(&once), once);
        }

        #[test]
        fn combo_equals_trailing_accepted_run(picks in proptest::collection::vec(0usize..8, 0..40)) {
            let corpus = small_corpus();
            let pool = ["感时花溅泪", "花落知多少", "床前明月光", "日出江花红胜火", "rubbish", "花落知多少！", "感时 花溅泪", "水光潋滟晴方好"];
            let mut r = flower_round(1000);
            let mut run = 0u32;
            let mut accepted = 0usize;
            for (i, p) in picks.iter().enumerate() {
                let j = r.submit(&corpus, pool[*p], 2_000 + i as u64).judgment;
                if j == VerseJudgment::Accepted { run += 1; accepted += 1; } else { run = 0; }
                prop_assert_eq!(r.combo, run);
            }
            prop_assert_eq!(r.accepted.len(), accepted);
            let distinct: BTreeSet<_> = r.accepted.iter().collect();
            prop_assert_eq!(distinct.len(), accepted);
        }
    }
}
