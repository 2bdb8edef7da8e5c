//! Claim/evidence records, the JSONL corpus layout, and a seeded synthetic
//! multilingual corpus generator.
//!
//! Source-language examples are labelled by a containment rule (see
//! [`label_by_rule`]). Each target language is a bijective substitution of
//! the content vocabulary, so translating an example never changes the
//! outcome of the rule. Machine-translation noise is applied after labelling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probcore::NUM_CLASSES;

/// Separator placed between claim and evidence tokens.
pub const SEP_TOKEN: &str = "[SEP]";
/// Reserved negation marker; its presence in the evidence flips SUP to REF.
pub const NOT_TOKEN: &str = "[NOT]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "SUP")]
    Sup,
    #[serde(rename = "REF")]
    Ref,
    #[serde(rename = "NEI")]
    Nei,
}

impl Label {
    pub const ALL: [Label; NUM_CLASSES] = [Label::Sup, Label::Ref, Label::Nei];

    pub fn index(self) -> usize {
        match self {
            Label::Sup => 0,
            Label::Ref => 1,
            Label::Nei => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Sup => "SUP",
            Label::Ref => "REF",
            Label::Nei => "NEI",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SUP" => Ok(Label::Sup),
            "REF" => Ok(Label::Ref),
            "NEI" => Ok(Label::Nei),
            other => Err(Error::InvalidArgument(format!("unknown label `{other}`"))),
        }
    }
}

/// One claim/evidence pair in a given language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub claim: Vec<String>,
    pub evidence: Vec<String>,
    pub label: Label,
    pub lang: String,
    pub pair_id: u64,
}

/// An original example bound to one of its translations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    pub original: Example,
    pub translated: Example,
}

/// An original example with its translation into every target language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelGroup {
    pub original: Example,
    pub translations: Vec<Example>,
}

/// Wire form of an [`Example`]: one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    claim: String,
    evidence: String,
    label: String,
    lang: String,
    pair_id: u64,
}

impl From<&Example> for Record {
    fn from(ex: &Example) -> Self {
        Record {
            claim: ex.claim.join(" "),
            evidence: ex.evidence.join(" "),
            label: ex.label.as_str().to_string(),
            lang: ex.lang.clone(),
            pair_id: ex.pair_id,
        }
    }
}

fn split_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

impl Example {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&Record::from(self)).expect("record serialization is infallible")
    }

    pub fn from_json_line(line: &str) -> std::result::Result<Self, String> {
        let rec: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let label = rec.label.parse::<Label>().map_err(|e| e.to_string())?;
        Ok(Example {
            claim: split_tokens(&rec.claim),
            evidence: split_tokens(&rec.evidence),
            label,
            lang: rec.lang,
            pair_id: rec.pair_id,
        })
    }
}

/// The containment rule that defines the gold label of a claim/evidence pair.
///
/// SUP when every claim content token occurs in the evidence, REF when that
/// holds and the evidence carries [`NOT_TOKEN`], NEI otherwise.
pub fn label_by_rule<S: AsRef<str>>(claim: &[S], evidence: &[S]) -> Label {
    let evidence_set: HashSet<&str> = evidence.iter().map(AsRef::as_ref).collect();
    let contained = claim
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !is_reserved(t))
        .all(|t| evidence_set.contains(t));
    if !contained {
        Label::Nei
    } else if evidence_set.contains(NOT_TOKEN) {
        Label::Ref
    } else {
        Label::Sup
    }
}

pub fn is_reserved(token: &str) -> bool {
    token == SEP_TOKEN || token == NOT_TOKEN
}

// ---------------------------------------------------------------------------
// Vocabulary

/// Token-to-id table. Ids 0 and 1 are always [`SEP_TOKEN`] and [`NOT_TOKEN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const SEP_ID: u32 = 0;
    pub const NOT_ID: u32 = 1;

    /// Builds a vocabulary holding the reserved tokens followed by every
    /// other token seen in `examples`, sorted.
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut seen = std::collections::BTreeSet::new();
        for ex in examples {
            for t in ex.claim.iter().chain(&ex.evidence) {
                if !is_reserved(t) {
                    seen.insert(t.as_str());
                }
            }
        }
        let tokens = [SEP_TOKEN, NOT_TOKEN]
            .into_iter()
            .chain(seen)
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens).expect("sorted set has no duplicates")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != SEP_TOKEN || tokens[1] != NOT_TOKEN {
            return Err(Error::VocabularyMismatch(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::VocabularyMismatch(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Claim ids, then the separator, then evidence ids.
    pub fn encode(&self, example: &Example) -> Result<Vec<u32>> {
        let mut ids = Vec::with_capacity(example.claim.len() + example.evidence.len() + 1);
        for t in &example.claim {
            ids.push(self.lookup(t, example)?);
        }
        ids.push(Self::SEP_ID);
        for t in &example.evidence {
            ids.push(self.lookup(t, example)?);
        }
        Ok(ids)
    }

    fn lookup(&self, token: &str, example: &Example) -> Result<u32> {
        self.id(token).ok_or_else(|| {
            Error::VocabularyMismatch(format!(
                "token `{token}` (lang {}, pair_id {}) is not in the vocabulary",
                example.lang, example.pair_id
            ))
        })
    }
}

// ---------------------------------------------------------------------------
// JSONL I/O

/// Reads one example per line. Blank lines are skipped.
pub fn load_split(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let file = fs::File::open(path.as_ref())?;
    parse_split(BufReader::new(file))
}

pub fn parse_split(reader: impl BufRead) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = Example::from_json_line(&line).map_err(|reason| Error::Record {
            line: i + 1,
            reason,
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_split(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let mut buf = String::new();
    for ex in examples {
        buf.push_str(&ex.to_json_line());
        buf.push('\n');
    }
    let mut file = fs::File::create(path.as_ref())?;
    file.write_all(buf.as_bytes())?;
    Ok(())
}

/// Joins originals with translations on `pair_id`, in the order of `originals`.
pub fn pair_up(originals: &[Example], translations: &[Example]) -> Result<Vec<ParallelPair>> {
    let mut by_id: HashMap<u64, &Example> = HashMap::with_capacity(translations.len());
    for t in translations {
        by_id.insert(t.pair_id, t);
    }
    let mut pairs = Vec::with_capacity(originals.len());
    for o in originals {
        let t = by_id.remove(&o.pair_id).ok_or(Error::MissingCounterpart {
            pair_id: o.pair_id,
            side: "translations",
        })?;
        if o.label != t.label {
            return Err(Error::LabelMismatch {
                pair_id: o.pair_id,
                original: o.label.to_string(),
                translated: t.label.to_string(),
            });
        }
        pairs.push(ParallelPair {
            original: o.clone(),
            translated: t.clone(),
        });
    }
    if let Some(&pair_id) = by_id.keys().min() {
        return Err(Error::MissingCounterpart {
            pair_id,
            side: "originals",
        });
    }
    Ok(pairs)
}

/// Groups each original with its translation in every target language.
pub fn group_pairs(
    originals: &[Example],
    translations_by_lang: &[&[Example]],
) -> Result<Vec<ParallelGroup>> {
    let mut groups: Vec<ParallelGroup> = originals
        .iter()
        .map(|o| ParallelGroup {
            original: o.clone(),
            translations: Vec::with_capacity(translations_by_lang.len()),
        })
        .collect();
    for translations in translations_by_lang {
        for (group, pair) in groups.iter_mut().zip(pair_up(originals, translations)?) {
            group.translations.push(pair.translated);
        }
    }
    Ok(groups)
}

// ---------------------------------------------------------------------------
// Seeded shuffling

/// SplitMix64 finaliser; derives decorrelated seeds from `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const TARGET_STREAM: u64 = 0x5441_5247;

/// Deterministic permutation of `0..n` for a given `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, SHUFFLE_STREAM), epoch));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Permuted view of `items` for one epoch.
pub fn shuffle_epoch<T>(items: &[T], seed: u64, epoch: u64) -> Vec<&T> {
    epoch_permutation(items.len(), seed, epoch)
        .into_iter()
        .map(|i| &items[i])
        .collect()
}

/// Draws, per pair, which of `num_targets` translations is used this epoch.
pub fn draw_targets(num_pairs: usize, num_targets: usize, seed: u64, epoch: u64) -> Vec<usize> {
    assert!(num_targets > 0, "parallel training needs at least one target language");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, TARGET_STREAM), epoch));
    (0..num_pairs).map(|_| rng.random_range(0..num_targets)).collect()
}

// ---------------------------------------------------------------------------
// Corpus

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Source language first, then the targets.
    pub languages: Vec<String>,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    /// Number of source-language content tokens.
    pub vocab_size: usize,
    /// Fraction of the content vocabulary shared verbatim with each target.
    pub cognate_ratio: f64,
    /// Per-token probability of corrupting a translated token.
    pub noise_rate: f64,
    /// Content tokens are grouped into this many topics.
    pub num_topics: usize,
    /// Probability that an NEI claim is drawn from the evidence's own topic
    /// (still disjoint from the evidence tokens) instead of another topic.
    pub hard_nei_rate: f64,
    pub claim_len: (usize, usize),
    pub evidence_len: (usize, usize),
    pub seed: u64,
}

pub const SOURCE_LANG: &str = "src";

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            languages: ["src", "xa", "xb", "xc"].map(String::from).to_vec(),
            train_size: 5000,
            dev_size: 500,
            test_size: 1000,
            vocab_size: 600,
            cognate_ratio: 0.3,
            noise_rate: 0.02,
            num_topics: 2,
            hard_nei_rate: 0.15,
            claim_len: (4, 6),
            evidence_len: (6, 8),
            seed: 13,
        }
    }
}

impl CorpusSpec {
    pub fn source(&self) -> &str {
        &self.languages[0]
    }

    pub fn targets(&self) -> &[String] {
        &self.languages[1..]
    }

    pub fn size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_size,
            Split::Dev => self.dev_size,
            Split::Test => self.test_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::CorpusSpec(msg));
        if !(0.0..=1.0).contains(&self.cognate_ratio) {
            return bad(format!("cognate ratio {} outside [0, 1]", self.cognate_ratio));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise rate {} outside [0, 1]", self.noise_rate));
        }
        if !(0.0..=1.0).contains(&self.hard_nei_rate) {
            return bad(format!("hard NEI rate {} outside [0, 1]", self.hard_nei_rate));
        }
        if self.languages.is_empty() {
            return bad("no source language".into());
        }
        let distinct: HashSet<&String> = self.languages.iter().collect();
        if distinct.len() != self.languages.len() {
            return bad("duplicate language tag".into());
        }
        if self.targets().iter().any(|l| l == "w") {
            return bad("target tag `w` would collide with source token names".into());
        }
        for lang in &self.languages {
            if lang.is_empty() || !lang.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return bad(format!("invalid language tag `{lang}`"));
            }
        }
        if self.num_topics < 2 {
            return bad("need at least two topics".into());
        }
        let (cmin, cmax) = self.claim_len;
        let (emin, emax) = self.evidence_len;
        if cmin == 0 || cmin > cmax || emin == 0 || emin > emax {
            return bad("invalid claim/evidence length range".into());
        }
        if cmax > emin {
            return bad("claims must not be longer than the shortest evidence".into());
        }
        if self.vocab_size / self.num_topics < emax + cmax {
            return bad(format!(
                "vocabulary of {} tokens is too small for {} topics of evidence length {emax} and claim length {cmax}",
                self.vocab_size, self.num_topics
            ));
        }
        Ok(())
    }
}

/// Bijective substitution from source content tokens to a target language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMap {
    forward: HashMap<String, String>,
    inverse: HashMap<String, String>,
}

impl TokenMap {
    pub fn translate(&self, token: &str) -> String {
        if is_reserved(token) {
            return token.to_string();
        }
        self.forward
            .get(token)
            .cloned()
            .unwrap_or_else(|| token.to_string())
    }

    pub fn invert<'a>(&'a self, token: &'a str) -> Option<&'a str> {
        if is_reserved(token) {
            return Some(token);
        }
        self.inverse.get(token).map(String::as_str)
    }

    pub fn target_tokens(&self) -> impl Iterator<Item = &String> {
        self.inverse.keys()
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }
}

/// Examples keyed by split and language.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    /// Source language first.
    pub languages: Vec<String>,
    pub splits: BTreeMap<Split, BTreeMap<String, Vec<Example>>>,
}

impl Corpus {
    pub fn source(&self) -> &str {
        &self.languages[0]
    }

    pub fn targets(&self) -> &[String] {
        &self.languages[1..]
    }

    pub fn get(&self, split: Split, lang: &str) -> &[Example] {
        self.splits
            .get(&split)
            .and_then(|m| m.get(lang))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// All languages of a split, source first.
    pub fn all_languages(&self, split: Split) -> Vec<Example> {
        self.languages
            .iter()
            .flat_map(|l| self.get(split, l).iter().cloned())
            .collect()
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_examples(
            self.splits
                .values()
                .flat_map(|m| m.values())
                .flat_map(|v| v.iter()),
        )
    }

    /// Parallel groups (original + one translation per target) for a split.
    pub fn parallel_groups(&self, split: Split) -> Result<Vec<ParallelGroup>> {
        let translations: Vec<&[Example]> = self.targets().iter().map(|l| self.get(split, l)).collect();
        group_pairs(self.get(split, self.source()), &translations)
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        fs::create_dir_all(root)?;
        for (split, by_lang) in &self.splits {
            for (lang, examples) in by_lang {
                write_split(root.join(format!("{split}.{lang}.jsonl")), examples)?;
            }
        }
        Ok(())
    }

    /// Loads every `<split>.<lang>.jsonl` file under `root`. The source
    /// language is `src` when present, otherwise the first tag in sorted
    /// order.
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut splits: BTreeMap<Split, BTreeMap<String, Vec<Example>>> = BTreeMap::new();
        let mut langs = std::collections::BTreeSet::new();
        let mut entries: Vec<_> = fs::read_dir(root)?.collect::<std::io::Result<Vec<_>>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(stem) = name.strip_suffix(".jsonl") else {
                continue;
            };
            let Some((split, lang)) = stem.split_once('.') else {
                continue;
            };
            let Ok(split) = split.parse::<Split>() else {
                continue;
            };
            let examples = load_split(entry.path()).map_err(|e| match e {
                Error::Record { line, reason } => Error::Record {
                    line,
                    reason: format!("{name}: {reason}"),
                },
                other => other,
            })?;
            langs.insert(lang.to_string());
            splits.entry(split).or_default().insert(lang.to_string(), examples);
        }
        if langs.is_empty() {
            return Err(Error::Empty("corpus directory"));
        }
        let mut languages: Vec<String> = langs.into_iter().collect();
        if let Some(pos) = languages.iter().position(|l| l == SOURCE_LANG) {
            let src = languages.remove(pos);
            languages.insert(0, src);
        }
        Ok(Self { languages, splits })
    }
}

/// Output of [`generate_corpus`]: the corpus plus the substitution maps used.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub corpus: Corpus,
    pub token_maps: BTreeMap<String, TokenMap>,
}

fn content_token(i: usize) -> String {
    format!("w{i:04}")
}

fn build_token_map(lang: &str, vocab_size: usize, cognate_ratio: f64, rng: &mut ChaCha8Rng) -> TokenMap {
    let mut ids: Vec<usize> = (0..vocab_size).collect();
    ids.shuffle(rng);
    let shared = (cognate_ratio * vocab_size as f64).round() as usize;
    let remapped = &ids[shared..];
    // Fresh surface forms, assigned in shuffled order so the map is not
    // readable off the token names.
    let mut names: Vec<usize> = (0..remapped.len()).collect();
    names.shuffle(rng);
    let mut forward = HashMap::with_capacity(vocab_size);
    let mut inverse = HashMap::with_capacity(vocab_size);
    for &i in &ids[..shared] {
        forward.insert(content_token(i), content_token(i));
        inverse.insert(content_token(i), content_token(i));
    }
    for (&i, &n) in remapped.iter().zip(&names) {
        let target = format!("{lang}{n:04}");
        forward.insert(content_token(i), target.clone());
        inverse.insert(target, content_token(i));
    }
    TokenMap { forward, inverse }
}

fn sample_distinct<'a>(pool: &'a [usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    pool.choose_multiple(rng, n).copied().collect()
}

fn generate_source_example(
    spec: &CorpusSpec,
    topics: &[Vec<usize>],
    label: Label,
    pair_id: u64,
    rng: &mut ChaCha8Rng,
) -> Example {
    let topic = rng.random_range(0..topics.len());
    let ev_len = rng.random_range(spec.evidence_len.0..=spec.evidence_len.1);
    let claim_len = rng.random_range(spec.claim_len.0..=spec.claim_len.1);
    let evidence_ids = sample_distinct(&topics[topic], ev_len, rng);

    let claim_ids = match label {
        Label::Sup | Label::Ref => sample_distinct(&evidence_ids, claim_len, rng),
        Label::Nei if rng.random_bool(spec.hard_nei_rate) => {
            // Same topic, but none of the evidence tokens.
            let rest: Vec<usize> = topics[topic].iter().copied().filter(|i| !evidence_ids.contains(i)).collect();
            sample_distinct(&rest, claim_len, rng)
        }
        Label::Nei => {
            let mut other = rng.random_range(0..topics.len() - 1);
            if other >= topic {
                other += 1;
            }
            sample_distinct(&topics[other], claim_len, rng)
        }
    };

    let mut evidence: Vec<String> = evidence_ids.iter().map(|&i| content_token(i)).collect();
    let negate = match label {
        Label::Sup => false,
        Label::Ref => true,
        Label::Nei => rng.random_bool(0.5),
    };
    if negate {
        let pos = rng.random_range(0..=evidence.len());
        evidence.insert(pos, NOT_TOKEN.to_string());
    }
    let claim: Vec<String> = claim_ids.iter().map(|&i| content_token(i)).collect();
    debug_assert_eq!(label_by_rule(&claim, &evidence), label);
    Example {
        claim,
        evidence,
        label,
        lang: spec.source().to_string(),
        pair_id,
    }
}

fn translate_example(
    ex: &Example,
    lang: &str,
    map: &TokenMap,
    target_vocab: &[String],
    noise_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Example {
    let mut tr = |t: &String| -> String {
        if is_reserved(t) {
            return t.clone();
        }
        if noise_rate > 0.0 && rng.random_bool(noise_rate) {
            target_vocab.choose(rng).expect("non-empty vocabulary").clone()
        } else {
            map.translate(t)
        }
    };
    let claim = ex.claim.iter().map(&mut tr).collect();
    let evidence = ex.evidence.iter().map(&mut tr).collect();
    Example {
        claim,
        evidence,
        label: ex.label,
        lang: lang.to_string(),
        pair_id: ex.pair_id,
    }
}

/// Generates train/dev/test splits in every language of `spec`.
///
/// Labels are balanced across classes within each split, and every
/// translation keeps the label of its original.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let topic_size = spec.vocab_size / spec.num_topics;
    let topics: Vec<Vec<usize>> = (0..spec.num_topics)
        .map(|t| (t * topic_size..(t + 1) * topic_size).collect())
        .collect();

    let mut token_maps = BTreeMap::new();
    let mut target_vocabs = BTreeMap::new();
    for lang in spec.targets() {
        let map = build_token_map(lang, spec.vocab_size, spec.cognate_ratio, &mut rng);
        let mut vocab: Vec<String> = map.target_tokens().cloned().collect();
        vocab.sort();
        target_vocabs.insert(lang.clone(), vocab);
        token_maps.insert(lang.clone(), map);
    }

    let mut splits = BTreeMap::new();
    let mut next_pair_id = 0u64;
    for split in Split::ALL {
        let n = spec.size(split);
        let mut labels: Vec<Label> = (0..n).map(|i| Label::ALL[i % NUM_CLASSES]).collect();
        labels.shuffle(&mut rng);

        let originals: Vec<Example> = labels
            .iter()
            .map(|&label| {
                let id = next_pair_id;
                next_pair_id += 1;
                generate_source_example(spec, &topics, label, id, &mut rng)
            })
            .collect();

        let mut by_lang = BTreeMap::new();
        for lang in spec.targets() {
            let map = &token_maps[lang];
            let vocab = &target_vocabs[lang];
            let translated = originals
                .iter()
                .map(|ex| translate_example(ex, lang, map, vocab, spec.noise_rate, &mut rng))
                .collect();
            by_lang.insert(lang.clone(), translated);
        }
        by_lang.insert(spec.source().to_string(), originals);
        splits.insert(split, by_lang);
    }

    Ok(GeneratedCorpus {
        corpus: Corpus {
            languages: spec.languages.clone(),
            splits,
        },
        token_maps,
    })
}
