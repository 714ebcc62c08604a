//! Agreement corpora: the instance schema, a templated synthetic generator,
//! the JSONL loader/writer and seeded train/dev/test splitting.
//!
//! A template is a whitespace-separated pattern. Recognised slots:
//!
//! | slot               | expands to                                          |
//! |--------------------|-----------------------------------------------------|
//! | `{cue}`            | the subject noun, in the instance's number          |
//! | `{target}`         | the agreeing verb, in the instance's number         |
//! | `{distractors}`    | `attractor_count` distractor clauses                |
//! | `{noun}`           | any noun in a random number                         |
//! | `{a\|b\|c}`        | one of the listed literal words                     |
//!
//! Distractor clauses use `{attractor}` (a noun whose number differs from the
//! cue), `{verb:cue}` and `{verb:attractor}` (verbs agreeing with the cue or the
//! attractor) plus literals and choices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Reject, Result};

/// Grammatical number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NumberLabel {
    #[serde(rename = "sg")]
    Singular,
    #[serde(rename = "pl")]
    Plural,
}

impl NumberLabel {
    pub fn flip(self) -> Self {
        match self {
            NumberLabel::Singular => NumberLabel::Plural,
            NumberLabel::Plural => NumberLabel::Singular,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NumberLabel::Singular => "sg",
            NumberLabel::Plural => "pl",
        }
    }

    /// Binary target used by probes: singular is the positive class.
    pub fn as_target(self) -> f64 {
        match self {
            NumberLabel::Singular => 1.0,
            NumberLabel::Plural => 0.0,
        }
    }
}

impl fmt::Display for NumberLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A tokenized sentence with its cue (subject) and target (verb) positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementInstance {
    pub tokens: Vec<String>,
    pub cue_index: usize,
    pub target_index: usize,
    pub cue_number: NumberLabel,
    pub target_number: NumberLabel,
    pub target_sg_form: String,
    pub target_pl_form: String,
    pub attractor_count: usize,
}

impl AgreementInstance {
    /// Checks the structural invariants; returns a human-readable reason on
    /// failure.
    pub fn validate(&self) -> Result<(), String> {
        let len = self.tokens.len();
        if self.cue_index >= len {
            return Err(format!("cue_index {} out of range for {len} tokens", self.cue_index));
        }
        if self.target_index >= len {
            return Err(format!(
                "target_index {} out of range for {len} tokens",
                self.target_index
            ));
        }
        if self.cue_index == self.target_index {
            return Err(format!("cue_index == target_index == {}", self.cue_index));
        }
        if self.target_sg_form == self.target_pl_form {
            return Err(format!(
                "candidate forms are identical ({:?})",
                self.target_sg_form
            ));
        }
        let word = &self.tokens[self.target_index];
        let found = if *word == self.target_sg_form {
            NumberLabel::Singular
        } else if *word == self.target_pl_form {
            NumberLabel::Plural
        } else {
            return Err(format!(
                "target token {word:?} matches neither {:?} nor {:?}",
                self.target_sg_form, self.target_pl_form
            ));
        };
        if found != self.target_number {
            return Err(format!(
                "target token {word:?} is {found} but target_number is {}",
                self.target_number
            ));
        }
        if self.cue_number != self.target_number {
            return Err("cue_number differs from target_number".to_string());
        }
        Ok(())
    }

    /// Linear cue-target distance in word tokens.
    pub fn distance(&self) -> usize {
        self.target_index.abs_diff(self.cue_index)
    }

    pub fn form(&self, number: NumberLabel) -> &str {
        match number {
            NumberLabel::Singular => &self.target_sg_form,
            NumberLabel::Plural => &self.target_pl_form,
        }
    }

    pub fn correct_form(&self) -> &str {
        self.form(self.cue_number)
    }

    pub fn wrong_form(&self) -> &str {
        self.form(self.cue_number.flip())
    }
}

/// A lexeme with both number forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexemePair {
    pub sg: String,
    pub pl: String,
}

impl LexemePair {
    pub fn new(sg: &str, pl: &str) -> Self {
        Self {
            sg: sg.to_string(),
            pl: pl.to_string(),
        }
    }

    pub fn form(&self, number: NumberLabel) -> &str {
        match number {
            NumberLabel::Singular => &self.sg,
            NumberLabel::Plural => &self.pl,
        }
    }
}

/// Synthetic grammar: lexicons, sentence templates and distractor clauses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub nouns: Vec<LexemePair>,
    pub verbs: Vec<LexemePair>,
    pub templates: Vec<String>,
    pub distractor_clauses: Vec<String>,
    pub max_attractors: usize,
    /// Upper bound on the vocabulary (words plus special tokens).
    pub vocab_size: usize,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        let nouns = [
            ("boy", "boys"),
            ("girl", "girls"),
            ("dog", "dogs"),
            ("cat", "cats"),
            ("key", "keys"),
            ("teacher", "teachers"),
            ("doctor", "doctors"),
            ("farmer", "farmers"),
            ("car", "cars"),
            ("book", "books"),
            ("friend", "friends"),
            ("king", "kings"),
            ("student", "students"),
            ("painter", "painters"),
            ("bird", "birds"),
            ("horse", "horses"),
            ("writer", "writers"),
            ("pilot", "pilots"),
            ("lawyer", "lawyers"),
            ("child", "children"),
            ("man", "men"),
            ("woman", "women"),
            ("mouse", "mice"),
            ("baby", "babies"),
        ];
        let verbs = [
            ("goes", "go"),
            ("runs", "run"),
            ("holds", "hold"),
            ("likes", "like"),
            ("sees", "see"),
            ("knows", "know"),
            ("helps", "help"),
            ("finds", "find"),
            ("loves", "love"),
            ("eats", "eat"),
            ("reads", "read"),
            ("meets", "meet"),
            ("writes", "write"),
            ("wants", "want"),
            ("is", "are"),
            ("has", "have"),
        ];
        Self {
            nouns: nouns.iter().map(|(s, p)| LexemePair::new(s, p)).collect(),
            verbs: verbs.iter().map(|(s, p)| LexemePair::new(s, p)).collect(),
            templates: vec![
                "the {cue} {distractors} {target} to the {noun}".into(),
                "the {old|young|tall|small|happy} {cue} {distractors} {target} {here|today|again|now}".into(),
                "the {cue} {distractors} {target} the {noun} {here|today|again}".into(),
            ],
            distractor_clauses: vec![
                "that {verb:cue} the {attractor}".into(),
                "that the {attractor} {verb:attractor}".into(),
                "near the {attractor}".into(),
                "{behind|beside|with} the {old|small|} {attractor}".into(),
            ],
            max_attractors: 3,
            vocab_size: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Literal(String),
    Choice(Vec<String>),
    Cue,
    Target,
    Distractors,
    Noun,
    Attractor,
    VerbAgreeCue,
    VerbAgreeAttractor,
}

fn parse_pattern(pattern: &str) -> Result<Vec<Slot>> {
    pattern
        .split_whitespace()
        .map(|tok| {
            let Some(inner) = tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) else {
                if tok.contains('{') || tok.contains('}') {
                    return Err(Error::Config(format!("malformed slot {tok:?} in {pattern:?}")));
                }
                return Ok(Slot::Literal(tok.to_string()));
            };
            Ok(match inner {
                "cue" => Slot::Cue,
                "target" => Slot::Target,
                "distractors" => Slot::Distractors,
                "noun" => Slot::Noun,
                "attractor" => Slot::Attractor,
                "verb:cue" => Slot::VerbAgreeCue,
                "verb:attractor" => Slot::VerbAgreeAttractor,
                other if other.contains('|') => {
                    Slot::Choice(other.split('|').map(str::to_string).collect())
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown slot {{{other}}} in {pattern:?}"
                    )))
                }
            })
        })
        .collect()
}

fn count(slots: &[Slot], want: &Slot) -> usize {
    slots.iter().filter(|s| *s == want).count()
}

/// Part of speech of a lexicon entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordClass {
    Noun,
    Verb,
}

/// Reverse index from surface forms to (lemma, number, class).
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, (String, NumberLabel, WordClass)>,
}

impl Lexicon {
    pub fn lookup(&self, word: &str) -> Option<(&str, NumberLabel, WordClass)> {
        self.entries
            .get(word)
            .map(|(lemma, n, c)| (lemma.as_str(), *n, *c))
    }

    /// Lemma (singular form) of `word`, or the word itself when unknown.
    pub fn lemma<'a>(&'a self, word: &'a str) -> &'a str {
        self.lookup(word).map(|(l, _, _)| l).unwrap_or(word)
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nouns.is_empty() {
            return Err(Error::Config("noun lexicon is empty".into()));
        }
        if self.verbs.is_empty() {
            return Err(Error::Config("verb lexicon is empty".into()));
        }
        if self.templates.is_empty() {
            return Err(Error::Config("template set is empty".into()));
        }
        for pair in self.nouns.iter().chain(&self.verbs) {
            if pair.sg.is_empty() || pair.pl.is_empty() || pair.sg == pair.pl {
                return Err(Error::Config(format!(
                    "lexeme {:?}/{:?} needs two distinct non-empty forms",
                    pair.sg, pair.pl
                )));
            }
            if pair.sg.split_whitespace().count() != 1 || pair.pl.split_whitespace().count() != 1 {
                return Err(Error::Config(format!(
                    "lexeme {:?}/{:?} must be single words",
                    pair.sg, pair.pl
                )));
            }
        }
        for t in &self.templates {
            let slots = parse_pattern(t)?;
            if count(&slots, &Slot::Cue) != 1 || count(&slots, &Slot::Target) != 1 {
                return Err(Error::Config(format!(
                    "template {t:?} must contain exactly one {{cue}} and one {{target}}"
                )));
            }
            if count(&slots, &Slot::Distractors) != 1 {
                return Err(Error::Config(format!(
                    "template {t:?} must contain exactly one {{distractors}} slot"
                )));
            }
            let pos = |want: &Slot| slots.iter().position(|s| s == want).unwrap();
            if !(pos(&Slot::Cue) < pos(&Slot::Distractors) && pos(&Slot::Distractors) < pos(&Slot::Target)) {
                return Err(Error::Config(format!(
                    "template {t:?} must order {{cue}} {{distractors}} {{target}}"
                )));
            }
            if slots.iter().any(|s| {
                matches!(s, Slot::Attractor | Slot::VerbAgreeCue | Slot::VerbAgreeAttractor)
            }) {
                return Err(Error::Config(format!(
                    "template {t:?} uses a clause-only slot"
                )));
            }
        }
        if self.max_attractors > 0 && self.distractor_clauses.is_empty() {
            return Err(Error::Config(
                "max_attractors > 0 but no distractor clauses given".into(),
            ));
        }
        for c in &self.distractor_clauses {
            let slots = parse_pattern(c)?;
            if count(&slots, &Slot::Attractor) != 1 {
                return Err(Error::Config(format!(
                    "distractor clause {c:?} must contain exactly one {{attractor}}"
                )));
            }
            if slots
                .iter()
                .any(|s| matches!(s, Slot::Cue | Slot::Target | Slot::Distractors))
            {
                return Err(Error::Config(format!(
                    "distractor clause {c:?} may not place a cue, target or nested distractors"
                )));
            }
        }
        self.lexicon()?;
        let words = self.words()?;
        if words.len() + crate::vocab::SPECIAL_TOKENS.len() > self.vocab_size {
            return Err(Error::Config(format!(
                "grammar needs {} vocabulary entries but vocab_size is {}",
                words.len() + crate::vocab::SPECIAL_TOKENS.len(),
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Surface-form index over both lexicons. A form may not be claimed by two
    /// different (lemma, number, class) entries.
    pub fn lexicon(&self) -> Result<Lexicon> {
        let mut entries = BTreeMap::new();
        let mut add = |word: &str, lemma: &str, n: NumberLabel, c: WordClass| -> Result<()> {
            let value = (lemma.to_string(), n, c);
            if let Some(prev) = entries.insert(word.to_string(), value.clone()) {
                if prev != value {
                    return Err(Error::Config(format!("ambiguous lexicon form {word:?}")));
                }
            }
            Ok(())
        };
        for p in &self.nouns {
            add(&p.sg, &p.sg, NumberLabel::Singular, WordClass::Noun)?;
            add(&p.pl, &p.sg, NumberLabel::Plural, WordClass::Noun)?;
        }
        for p in &self.verbs {
            add(&p.sg, &p.sg, NumberLabel::Singular, WordClass::Verb)?;
            add(&p.pl, &p.sg, NumberLabel::Plural, WordClass::Verb)?;
        }
        Ok(Lexicon { entries })
    }

    /// Every word the grammar can emit.
    pub fn words(&self) -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for p in self.nouns.iter().chain(&self.verbs) {
            out.insert(p.sg.clone());
            out.insert(p.pl.clone());
        }
        for pat in self.templates.iter().chain(&self.distractor_clauses) {
            for slot in parse_pattern(pat)? {
                match slot {
                    Slot::Literal(w) => {
                        out.insert(w);
                    }
                    Slot::Choice(ws) => out.extend(ws.into_iter().filter(|w| !w.is_empty())),
                    _ => {}
                }
            }
        }
        Ok(out)
    }
}

struct Expander<'a> {
    config: &'a GrammarConfig,
    clauses: Vec<Vec<Slot>>,
}

impl Expander<'_> {
    fn push_choice(out: &mut Vec<String>, words: &[String], rng: &mut ChaCha8Rng) {
        let w = words.choose(rng).expect("choice slots are non-empty");
        // An empty alternative (`{a|}`) emits nothing.
        if !w.is_empty() {
            out.push(w.clone());
        }
    }

    fn clause(&self, cue: NumberLabel, rng: &mut ChaCha8Rng, out: &mut Vec<String>) {
        let clause = self.clauses.choose(rng).expect("validated non-empty");
        let attractor_number = cue.flip();
        for slot in clause {
            match slot {
                Slot::Literal(w) => out.push(w.clone()),
                Slot::Choice(ws) => Self::push_choice(out, ws, rng),
                Slot::Attractor => {
                    let n = self.config.nouns.choose(rng).unwrap();
                    out.push(n.form(attractor_number).to_string());
                }
                Slot::VerbAgreeCue => {
                    let v = self.config.verbs.choose(rng).unwrap();
                    out.push(v.form(cue).to_string());
                }
                Slot::VerbAgreeAttractor => {
                    let v = self.config.verbs.choose(rng).unwrap();
                    out.push(v.form(attractor_number).to_string());
                }
                Slot::Noun => {
                    let n = self.config.nouns.choose(rng).unwrap();
                    let num = if rng.random_bool(0.5) {
                        NumberLabel::Singular
                    } else {
                        NumberLabel::Plural
                    };
                    out.push(n.form(num).to_string());
                }
                Slot::Cue | Slot::Target | Slot::Distractors => unreachable!("validated"),
            }
        }
    }

    fn instance(
        &self,
        template: &[Slot],
        number: NumberLabel,
        attractors: usize,
        rng: &mut ChaCha8Rng,
    ) -> AgreementInstance {
        let cue = self.config.nouns.choose(rng).unwrap();
        let verb = self.config.verbs.choose(rng).unwrap();
        let mut tokens = Vec::new();
        let (mut cue_index, mut target_index) = (0, 0);
        for slot in template {
            match slot {
                Slot::Literal(w) => tokens.push(w.clone()),
                Slot::Choice(ws) => Self::push_choice(&mut tokens, ws, rng),
                Slot::Cue => {
                    cue_index = tokens.len();
                    tokens.push(cue.form(number).to_string());
                }
                Slot::Target => {
                    target_index = tokens.len();
                    tokens.push(verb.form(number).to_string());
                }
                Slot::Distractors => {
                    for _ in 0..attractors {
                        self.clause(number, rng, &mut tokens);
                    }
                }
                Slot::Noun => {
                    let n = self.config.nouns.choose(rng).unwrap();
                    let num = if rng.random_bool(0.5) {
                        NumberLabel::Singular
                    } else {
                        NumberLabel::Plural
                    };
                    tokens.push(n.form(num).to_string());
                }
                Slot::Attractor | Slot::VerbAgreeCue | Slot::VerbAgreeAttractor => {
                    unreachable!("validated")
                }
            }
        }
        AgreementInstance {
            tokens,
            cue_index,
            target_index,
            cue_number: number,
            target_number: number,
            target_sg_form: verb.sg.clone(),
            target_pl_form: verb.pl.clone(),
            attractor_count: attractors,
        }
    }
}

/// Generates `n` grammatical agreement instances.
///
/// Cue numbers alternate so the two classes differ by at most one; attractor
/// counts cycle through `0..=max_attractors` within each class. The result is
/// shuffled with the same seeded generator.
pub fn generate_corpus(config: &GrammarConfig, n: usize, seed: u64) -> Result<Vec<AgreementInstance>> {
    if n == 0 {
        return Err(Error::Config("corpus size must be positive".into()));
    }
    config.validate()?;
    let templates = config
        .templates
        .iter()
        .map(|t| parse_pattern(t))
        .collect::<Result<Vec<_>>>()?;
    let expander = Expander {
        config,
        clauses: config
            .distractor_clauses
            .iter()
            .map(|c| parse_pattern(c))
            .collect::<Result<Vec<_>>>()?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let number = if i % 2 == 0 {
            NumberLabel::Singular
        } else {
            NumberLabel::Plural
        };
        let attractors = (i / 2) % (config.max_attractors + 1);
        let template = templates.choose(&mut rng).unwrap();
        out.push(expander.instance(template, number, attractors, &mut rng));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Class counts for a set of instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelStats {
    pub n_singular: usize,
    pub n_plural: usize,
    pub majority_rate: f64,
}

pub fn label_stats(instances: &[AgreementInstance]) -> LabelStats {
    let n_singular = instances
        .iter()
        .filter(|i| i.cue_number == NumberLabel::Singular)
        .count();
    let n_plural = instances.len() - n_singular;
    let majority_rate = if instances.is_empty() {
        0.0
    } else {
        n_singular.max(n_plural) as f64 / instances.len() as f64
    };
    LabelStats {
        n_singular,
        n_plural,
        majority_rate,
    }
}

/// Loads a JSONL dataset and validates every record.
///
/// A malformed line aborts with [`Error::Parse`]; invariant violations are
/// collected over the whole file and returned together as
/// [`Error::Validation`].
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<AgreementInstance>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut rejects = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let inst: AgreementInstance = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match inst.validate() {
            Ok(()) => out.push(inst),
            Err(reason) => rejects.push(Reject {
                line: line_no,
                reason,
            }),
        }
    }
    if !rejects.is_empty() {
        for r in &rejects {
            log::warn!("{}:{}: {}", path.display(), r.line, r.reason);
        }
        return Err(Error::Validation(rejects));
    }
    let stats = label_stats(&out);
    log::info!(
        "loaded {} instances from {} ({} sg / {} pl, majority rate {:.4})",
        out.len(),
        path.display(),
        stats.n_singular,
        stats.n_plural,
        stats.majority_rate
    );
    Ok(out)
}

/// Writes instances as UTF-8 JSONL with LF line endings.
pub fn write_dataset(path: impl AsRef<Path>, instances: &[AgreementInstance]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for inst in instances {
        serde_json::to_writer(&mut buf, inst)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Index partition produced by [`split`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

impl Partition {
    pub fn select<T: Clone>(&self, items: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
        (pick(&self.train), pick(&self.dev), pick(&self.test))
    }
}

/// Stratified split of `0..labels.len()` into train/dev/test.
///
/// Split sizes are `round(n * train_frac)`, `round(n * dev_frac)` and the
/// remainder. Each class is shuffled and allotted proportionally so every
/// split keeps the input's class balance.
pub fn split_labels(
    labels: &[NumberLabel],
    train_frac: f64,
    dev_frac: f64,
    seed: u64,
) -> Result<Partition> {
    let in_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_unit(train_frac) || !in_unit(dev_frac) || train_frac + dev_frac >= 1.0 {
        return Err(Error::Config(format!(
            "split fractions must lie in (0,1) and sum below 1 (got {train_frac}, {dev_frac})"
        )));
    }
    let n = labels.len();
    let n_train = (n as f64 * train_frac).round() as usize;
    let n_dev = ((n as f64 * dev_frac).round() as usize).min(n - n_train);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = [NumberLabel::Singular, NumberLabel::Plural]
        .iter()
        .map(|&l| (0..n).filter(|&i| labels[i] == l).collect())
        .collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }

    let mut part = Partition {
        train: Vec::with_capacity(n_train),
        dev: Vec::with_capacity(n_dev),
        test: Vec::new(),
    };
    let (mut train_left, mut dev_left) = (n_train, n_dev);
    let mut remaining = n;
    for g in &groups {
        // Proportional share of what is still unallocated; the last group
        // absorbs the rounding.
        let share = |left: usize| -> usize {
            if remaining == g.len() {
                left
            } else {
                ((left as f64) * g.len() as f64 / remaining as f64).round() as usize
            }
        };
        let t = share(train_left).min(g.len());
        let d = share(dev_left).min(g.len() - t);
        part.train.extend_from_slice(&g[..t]);
        part.dev.extend_from_slice(&g[t..t + d]);
        part.test.extend_from_slice(&g[t + d..]);
        train_left -= t;
        dev_left -= d;
        remaining -= g.len();
    }
    part.train.shuffle(&mut rng);
    part.dev.shuffle(&mut rng);
    part.test.shuffle(&mut rng);
    Ok(part)
}

/// Stratified (by cue number) split of a dataset.
pub fn split(
    dataset: &[AgreementInstance],
    train_frac: f64,
    dev_frac: f64,
    seed: u64,
) -> Result<Partition> {
    let labels: Vec<_> = dataset.iter().map(|i| i.cue_number).collect();
    split_labels(&labels, train_frac, dev_frac, seed)
}
