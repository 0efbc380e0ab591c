//! Synthetic question/answer corpus standing in for a fictitious-profile
//! benchmark: profiles own entity tokens, each pair is filled from a fixed
//! template, and entity tokens are the annotated key tokens.
//!
//! Token layout for a vocabulary of size `V`:
//!
//! ```text
//! 0            PAD   (left padding of model contexts)
//! 1            IDK   ("I don't know" target)
//! 2            JUNK  (reserved, never generated)
//! 3..E         function tokens: question words, fillers, relations
//! E..V         entity tokens
//! ```

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

pub type Token = u32;
pub type TokenSequence = Vec<Token>;

pub const PAD: Token = 0;
pub const IDK: Token = 1;
pub const JUNK: Token = 2;
const RESERVED: Token = 3;
const QUESTION_WORDS: Token = 2;
const FILLERS: Token = 2;

/// Partition of the token id space into reserved, function and entity tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub size: u32,
    pub entity_start: u32,
}

impl Vocab {
    /// Default layout: a quarter of the vocabulary (6..=20 tokens) is
    /// function tokens, the rest entities.
    pub fn new(size: u32) -> Result<Self> {
        if size < 16 {
            return Err(Error::param(format!("vocab_size must be >= 16, got {size}")));
        }
        let function = (size / 4).clamp(6, 20);
        Ok(Vocab {
            size,
            entity_start: RESERVED + function,
        })
    }

    /// Layout with an explicit first entity id.
    pub fn with_entity_start(size: u32, entity_start: u32) -> Result<Self> {
        if entity_start < RESERVED + QUESTION_WORDS + FILLERS + 1 || entity_start >= size {
            return Err(Error::param(format!(
                "entity_start {entity_start} incompatible with vocab size {size}"
            )));
        }
        Ok(Vocab { size, entity_start })
    }

    pub fn is_entity(&self, t: Token) -> bool {
        t >= self.entity_start && t < self.size
    }

    pub fn entity_count(&self) -> u32 {
        self.size - self.entity_start
    }

    fn question_word(&self, i: u32) -> Token {
        RESERVED + i % QUESTION_WORDS
    }

    fn filler(&self, i: u32) -> Token {
        RESERVED + QUESTION_WORDS + i % FILLERS
    }

    fn relation_count(&self) -> u32 {
        self.entity_start - RESERVED - QUESTION_WORDS - FILLERS
    }

    fn relation(&self, i: u32) -> Token {
        RESERVED + QUESTION_WORDS + FILLERS + i % self.relation_count()
    }

    fn entity(&self, i: u32) -> Token {
        self.entity_start + i % self.entity_count()
    }
}

/// One question/answer record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub profile_id: usize,
    pub question: TokenSequence,
    pub answer: TokenSequence,
    pub key_positions: Vec<usize>,
    pub paraphrase: TokenSequence,
    pub perturbed: Vec<TokenSequence>,
}

impl QAPair {
    pub fn key_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.answer.len()];
        for &k in &self.key_positions {
            if k < flags.len() {
                flags[k] = true;
            }
        }
        flags
    }

    /// Question followed by answer.
    pub fn full_text(&self) -> TokenSequence {
        let mut text = self.question.clone();
        text.extend_from_slice(&self.answer);
        text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub vocab: Vocab,
    pub seed: u64,
    pub profiles: usize,
    pub pairs: Vec<QAPair>,
}

impl Corpus {
    pub fn vocab_size(&self) -> usize {
        self.vocab.size as usize
    }

    pub fn pairs_of(&self, indices: &[usize]) -> Vec<&QAPair> {
        indices.iter().map(|&i| &self.pairs[i]).collect()
    }
}

/// Number of perturbed answers attached to each generated pair.
pub const DEFAULT_PERTURBATIONS: usize = 3;

const STREAM_PROFILES: u64 = 0x10;
const STREAM_PAIR: u64 = 0x1_0000;
const STREAM_PERTURB: u64 = 0x2_0000;

pub fn generate_corpus(
    seed: u64,
    profiles: usize,
    qa_per_profile: usize,
    vocab_size: u32,
) -> Result<Corpus> {
    generate_corpus_with(seed, profiles, qa_per_profile, vocab_size, DEFAULT_PERTURBATIONS)
}

/// Builds `profiles × qa_per_profile` pairs. Each profile owns a name entity;
/// answers follow `[name, relation, filler, attr, (filler, attr)*]` with one to
/// three attribute entities.
pub fn generate_corpus_with(
    seed: u64,
    profiles: usize,
    qa_per_profile: usize,
    vocab_size: u32,
    perturbations: usize,
) -> Result<Corpus> {
    if profiles < 2 {
        return Err(Error::param(format!("profiles must be >= 2, got {profiles}")));
    }
    if qa_per_profile < 1 {
        return Err(Error::param("qa_per_profile must be >= 1"));
    }
    if perturbations < 1 {
        return Err(Error::param("perturbation count must be >= 1"));
    }
    let vocab = Vocab::new(vocab_size)?;

    let mut name_order: Vec<u32> = (0..vocab.entity_count()).collect();
    name_order.shuffle(&mut rng_for(seed, STREAM_PROFILES));

    let mut pairs = Vec::with_capacity(profiles * qa_per_profile);
    for profile in 0..profiles {
        let name = vocab.entity(name_order[profile % name_order.len()]);
        for j in 0..qa_per_profile {
            let index = (profile * qa_per_profile + j) as u64;
            let mut rng = rng_for(seed, STREAM_PAIR + index);
            let j = j as u32;
            let relation = vocab.relation(j);
            let question_word = vocab.question_word(j / vocab.relation_count());
            let question = vec![question_word, relation, name];

            let attributes = rng.gen_range(1..=3);
            let mut answer = vec![name, relation, vocab.filler(0)];
            for a in 0..attributes {
                if a > 0 {
                    answer.push(vocab.filler(1));
                }
                let attr = loop {
                    let t = vocab.entity(rng.gen_range(0..vocab.entity_count()));
                    if t != name || vocab.entity_count() == 1 {
                        break t;
                    }
                };
                answer.push(attr);
            }

            let mut pair = QAPair {
                profile_id: profile,
                question,
                answer,
                key_positions: Vec::new(),
                paraphrase: Vec::new(),
                perturbed: Vec::new(),
            };
            pair.key_positions = annotate_key_tokens(&pair, AnnotationRule::Entity, &vocab)?
                .positions
                .into_iter()
                .collect();
            pair.paraphrase = paraphrase(&pair.answer, &pair.key_positions);
            pair.perturbed =
                make_perturbations(&pair, &vocab, perturbations, seed ^ (STREAM_PERTURB + index))?;
            pairs.push(pair);
        }
    }

    Ok(Corpus {
        vocab,
        seed,
        profiles,
        pairs,
    })
}

/// Rotates the non-key tokens by one slot, leaving key tokens in place.
fn paraphrase(answer: &[Token], key_positions: &[usize]) -> TokenSequence {
    let keys: BTreeSet<usize> = key_positions.iter().copied().collect();
    let free: Vec<usize> = (0..answer.len()).filter(|i| !keys.contains(i)).collect();
    let mut out = answer.to_vec();
    for (slot, &pos) in free.iter().enumerate() {
        out[pos] = answer[free[(slot + 1) % free.len()]];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationRule {
    /// Entity tokens are key, function tokens are not.
    Entity,
}

impl FromStr for AnnotationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity" => Ok(AnnotationRule::Entity),
            other => Err(Error::param(format!("unknown annotation rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyAnnotation {
    pub positions: BTreeSet<usize>,
    /// Set when the answer contains no key token at all.
    pub no_key_tokens: bool,
}

pub fn annotate_key_tokens(pair: &QAPair, rule: AnnotationRule, vocab: &Vocab) -> Result<KeyAnnotation> {
    if pair.answer.is_empty() {
        return Err(Error::Input("answer must be nonempty".into()));
    }
    let positions: BTreeSet<usize> = match rule {
        AnnotationRule::Entity => pair
            .answer
            .iter()
            .enumerate()
            .filter(|(_, &t)| vocab.is_entity(t))
            .map(|(i, _)| i)
            .collect(),
    };
    Ok(KeyAnnotation {
        no_key_tokens: positions.is_empty(),
        positions,
    })
}

/// Wrong answers obtained by swapping every key token for a different entity.
pub fn make_perturbations(pair: &QAPair, vocab: &Vocab, n: usize, seed: u64) -> Result<Vec<TokenSequence>> {
    if n < 1 {
        return Err(Error::param("n must be >= 1"));
    }
    if pair.key_positions.is_empty() {
        return Err(Error::Perturbation("pair has no key tokens to substitute".into()));
    }
    let spare = vocab.entity_count().saturating_sub(1) as f64;
    let capacity = spare.powi(pair.key_positions.len() as i32);
    if capacity < n as f64 {
        return Err(Error::Perturbation(format!(
            "vocabulary has {} entity tokens; cannot build {n} distinct substitutions",
            vocab.entity_count()
        )));
    }

    let mut rng = rng_for(seed, 0);
    let mut out: Vec<TokenSequence> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n {
            return Err(Error::Perturbation("failed to draw distinct perturbations".into()));
        }
        let mut candidate = pair.answer.clone();
        for &k in &pair.key_positions {
            let original = pair.answer[k];
            candidate[k] = loop {
                let t = vocab.entity(rng.gen_range(0..vocab.entity_count()));
                if t != original {
                    break t;
                }
            };
        }
        if !out.contains(&candidate) {
            out.push(candidate);
        }
    }
    Ok(out)
}

/// Disjoint index sets over the corpus pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub forget: Vec<usize>,
    pub retain: Vec<usize>,
    pub holdout: Vec<usize>,
    pub aux_real: Vec<usize>,
    pub aux_world: Vec<usize>,
}

impl SplitAssignment {
    /// Everything a fully trained model has seen.
    pub fn trained(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .forget
            .iter()
            .chain(&self.retain)
            .chain(&self.aux_real)
            .chain(&self.aux_world)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }

    /// Training data of the gold model (no forget pairs).
    pub fn gold_trained(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .retain
            .iter()
            .chain(&self.aux_real)
            .chain(&self.aux_world)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }

    /// Checks disjointness and coverage of `0..total`.
    pub fn validate(&self, total: usize) -> Result<()> {
        let mut seen = vec![false; total];
        for set in [&self.forget, &self.retain, &self.holdout, &self.aux_real, &self.aux_world] {
            for &i in set {
                if i >= total {
                    return Err(Error::Input(format!("split index {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Input(format!("pair {i} assigned twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Input(format!("pair {missing} not assigned")));
        }
        Ok(())
    }
}

/// Share of profiles placed in each auxiliary evaluation subset.
const AUX_FRACTION: f64 = 0.05;

/// Assigns whole profiles to splits. Fractions are measured against the whole
/// corpus; the realized forget and holdout sizes must land within one pair of
/// the request.
pub fn split_corpus(
    corpus: &Corpus,
    forget_fraction: f64,
    holdout_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    for (name, f) in [("forget_fraction", forget_fraction), ("holdout_fraction", holdout_fraction)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::param(format!("{name} must lie in (0,1), got {f}")));
        }
    }
    if forget_fraction + holdout_fraction >= 1.0 {
        return Err(Error::param("forget_fraction + holdout_fraction must be < 1"));
    }

    let profiles = corpus.profiles;
    let total_pairs = corpus.pairs.len();
    let per_profile = total_pairs as f64 / profiles as f64;
    let count_for = |name: &str, f: f64, min: usize| -> Result<usize> {
        let n = ((f * profiles as f64).round() as usize).max(min);
        let off = (n as f64 * per_profile - f * total_pairs as f64).abs();
        if off > 1.0 + 1e-9 {
            return Err(Error::Split {
                message: format!("{name}={f} is not reachable with {profiles} profiles"),
                nearest: n as f64 / profiles as f64,
            });
        }
        Ok(n)
    };
    let n_forget = count_for("forget_fraction", forget_fraction, 1)?;
    let n_holdout = count_for("holdout_fraction", holdout_fraction, 0)?;
    if n_forget + n_holdout >= profiles {
        return Err(Error::Split {
            message: "no profiles left for the retain split".into(),
            nearest: profiles.saturating_sub(n_holdout + 1).max(1) as f64 / profiles as f64,
        });
    }
    let spare = profiles - n_forget - n_holdout - 1;
    let n_aux = ((AUX_FRACTION * profiles as f64).floor() as usize).min(spare / 2);

    let mut order: Vec<usize> = (0..profiles).collect();
    order.shuffle(&mut rng_for(seed, 0x5117));

    let mut profile_split = vec![0u8; profiles];
    let bounds = [n_forget, n_holdout, n_aux, n_aux];
    let mut cursor = 0;
    for (label, &count) in bounds.iter().enumerate() {
        for &p in &order[cursor..cursor + count] {
            profile_split[p] = label as u8 + 1;
        }
        cursor += count;
    }

    let mut split = SplitAssignment {
        forget: Vec::new(),
        retain: Vec::new(),
        holdout: Vec::new(),
        aux_real: Vec::new(),
        aux_world: Vec::new(),
    };
    for (i, pair) in corpus.pairs.iter().enumerate() {
        match profile_split[pair.profile_id] {
            1 => split.forget.push(i),
            2 => split.holdout.push(i),
            3 => split.aux_real.push(i),
            4 => split.aux_world.push(i),
            _ => split.retain.push(i),
        }
    }
    Ok(split)
}

pub fn write_pairs(path: &Path, pairs: &[QAPair]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<QAPair>> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(serde_json::from_str(&line)?);
    }
    Ok(pairs)
}

#[derive(Serialize, Deserialize)]
struct CorpusMeta {
    vocab: Vocab,
    seed: u64,
    profiles: usize,
    pairs: usize,
}

/// Writes `corpus.json` (vocabulary and counts) and `pairs.jsonl` into `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = CorpusMeta {
        vocab: corpus.vocab,
        seed: corpus.seed,
        profiles: corpus.profiles,
        pairs: corpus.pairs.len(),
    };
    std::fs::write(dir.join("corpus.json"), serde_json::to_vec_pretty(&meta)?)?;
    write_pairs(&dir.join("pairs.jsonl"), &corpus.pairs)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let meta: CorpusMeta = serde_json::from_slice(&std::fs::read(dir.join("corpus.json"))?)?;
    let pairs = read_pairs(&dir.join("pairs.jsonl"))?;
    if pairs.len() != meta.pairs {
        return Err(Error::Format(format!(
            "corpus lists {} pairs but pairs.jsonl has {}",
            meta.pairs,
            pairs.len()
        )));
    }
    Ok(Corpus {
        vocab: meta.vocab,
        seed: meta.seed,
        profiles: meta.profiles,
        pairs,
    })
}

pub fn write_split(path: &Path, split: &SplitAssignment) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(split)?)?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<SplitAssignment> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn serialized(c: &Corpus) -> Vec<u8> {
        serde_json::to_vec(&c.pairs).unwrap()
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = generate_corpus(7, 10, 4, 64).unwrap();
        let b = generate_corpus(7, 10, 4, 64).unwrap();
        assert_eq!(a.pairs.len(), 40);
        assert_eq!(serialized(&a), serialized(&b));
    }

    #[test]
    fn seed_changes_content() {
        let a = generate_corpus(7, 10, 4, 64).unwrap();
        let b = generate_corpus(8, 10, 4, 64).unwrap();
        assert_ne!(serialized(&a), serialized(&b));
    }

    #[test]
    fn minimal_corpus_has_keys() {
        let c = generate_corpus(7, 2, 1, 64).unwrap();
        assert_eq!(c.pairs.len(), 2);
        for p in &c.pairs {
            assert!(!p.key_positions.is_empty());
        }
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(matches!(generate_corpus(1, 1, 4, 64), Err(Error::Parameter(_))));
        assert!(matches!(generate_corpus(1, 2, 0, 64), Err(Error::Parameter(_))));
        assert!(matches!(generate_corpus(1, 2, 1, 15), Err(Error::Parameter(_))));
    }

    #[test]
    fn pair_invariants_hold() {
        let c = generate_corpus(3, 20, 5, 96).unwrap();
        for p in &c.pairs {
            assert!(!p.answer.is_empty());
            assert!(p.key_positions.iter().all(|&k| k < p.answer.len()));
            assert!(p.perturbed.iter().all(|q| q != &p.answer && q.len() == p.answer.len()));
            assert_ne!(p.paraphrase, p.answer);
            for &k in &p.key_positions {
                assert_eq!(p.paraphrase[k], p.answer[k]);
            }
            assert!(p.answer.iter().all(|&t| t < c.vocab.size));
        }
    }

    fn pair_with_answer(answer: Vec<Token>) -> QAPair {
        QAPair {
            profile_id: 0,
            question: vec![3, 7, 20],
            answer,
            key_positions: vec![],
            paraphrase: vec![],
            perturbed: vec![],
        }
    }

    #[test]
    fn annotation_marks_entities() {
        let vocab = Vocab::with_entity_start(64, 19).unwrap();
        let pair = pair_with_answer(vec![4, 5, 6, 30, 7]);
        let a = annotate_key_tokens(&pair, AnnotationRule::Entity, &vocab).unwrap();
        assert_eq!(a.positions, BTreeSet::from([3]));
        assert!(!a.no_key_tokens);

        let pair = pair_with_answer(vec![4, 5, 6]);
        let a = annotate_key_tokens(&pair, AnnotationRule::Entity, &vocab).unwrap();
        assert!(a.positions.is_empty());
        assert!(a.no_key_tokens);
    }

    #[test]
    fn annotation_matches_scan_oracle() {
        let vocab = Vocab::with_entity_start(64, 19).unwrap();
        let answer = vec![5, 40, 6, 7, 8, 22, 9];
        let pair = pair_with_answer(answer.clone());
        let oracle: BTreeSet<usize> = answer
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| (t >= 19).then_some(i))
            .collect();
        assert_eq!(oracle, BTreeSet::from([1, 5]));
        let first = annotate_key_tokens(&pair, AnnotationRule::Entity, &vocab).unwrap();
        let second = annotate_key_tokens(&pair, AnnotationRule::Entity, &vocab).unwrap();
        assert_eq!(first.positions, oracle);
        assert_eq!(first, second);
    }

    #[test]
    fn annotation_errors() {
        let vocab = Vocab::new(64).unwrap();
        assert!("lexical".parse::<AnnotationRule>().is_err());
        let pair = pair_with_answer(vec![]);
        assert!(matches!(
            annotate_key_tokens(&pair, AnnotationRule::Entity, &vocab),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn perturbations_contract() {
        let c = generate_corpus(11, 4, 2, 64).unwrap();
        let pair = &c.pairs[0];
        let p = make_perturbations(pair, &c.vocab, 3, 5).unwrap();
        assert_eq!(p.len(), 3);
        for q in &p {
            assert_eq!(q.len(), pair.answer.len());
            assert_ne!(q, &pair.answer);
        }
        assert_ne!(p[0], p[1]);
        assert_ne!(p[1], p[2]);
        assert_ne!(p[0], p[2]);
        let again = make_perturbations(pair, &c.vocab, 3, 5).unwrap();
        assert_eq!(serde_json::to_vec(&p).unwrap(), serde_json::to_vec(&again).unwrap());
    }

    #[test]
    fn single_spare_entity_is_forced() {
        // Entities are exactly {20, 21}.
        let vocab = Vocab::with_entity_start(22, 20).unwrap();
        let mut pair = pair_with_answer(vec![4, 20, 5]);
        pair.key_positions = vec![1];
        let p = make_perturbations(&pair, &vocab, 1, 9).unwrap();
        assert_eq!(p, vec![vec![4, 21, 5]]);
        assert!(matches!(
            make_perturbations(&pair, &vocab, 2, 9),
            Err(Error::Perturbation(_))
        ));
    }

    #[test]
    fn split_one_percent() {
        let c = generate_corpus(1, 100, 2, 256).unwrap();
        let s = split_corpus(&c, 0.01, 0.1, 3).unwrap();
        s.validate(c.pairs.len()).unwrap();
        let profiles: BTreeSet<usize> = s.forget.iter().map(|&i| c.pairs[i].profile_id).collect();
        assert_eq!(profiles.len(), 1);
        assert_eq!(s.forget.len(), 2);
    }

    #[test]
    fn split_half_of_two() {
        let c = generate_corpus(1, 2, 3, 64).unwrap();
        let s = split_corpus(&c, 0.5, 0.1, 3).unwrap();
        s.validate(c.pairs.len()).unwrap();
        assert_eq!(s.forget.len(), 3);
        assert_eq!(s.retain.len(), 3);
        assert!(s.holdout.is_empty());
    }

    #[test]
    fn split_holdout_disjoint() {
        let c = generate_corpus(5, 10, 4, 64).unwrap();
        let s = split_corpus(&c, 0.1, 0.1, 3).unwrap();
        s.validate(c.pairs.len()).unwrap();
        let hold: BTreeSet<usize> = s.holdout.iter().map(|&i| c.pairs[i].profile_id).collect();
        let forget: BTreeSet<usize> = s.forget.iter().map(|&i| c.pairs[i].profile_id).collect();
        assert_eq!(hold.len(), 1);
        assert!(hold.is_disjoint(&forget));
        // Whole profiles only.
        for (i, p) in c.pairs.iter().enumerate() {
            let in_forget = s.forget.contains(&i);
            assert_eq!(in_forget, forget.contains(&p.profile_id));
        }
    }

    #[test]
    fn infeasible_split_names_nearest_fraction() {
        let c = generate_corpus(5, 10, 4, 64).unwrap();
        match split_corpus(&c, 0.13, 0.1, 3) {
            Err(Error::Split { nearest, .. }) => assert!((nearest - 0.1).abs() < 1e-12),
            other => panic!("expected split error, got {other:?}"),
        }
        assert!(matches!(split_corpus(&c, 0.0, 0.1, 3), Err(Error::Parameter(_))));
        assert!(matches!(split_corpus(&c, 0.6, 0.5, 3), Err(Error::Parameter(_))));
    }

    #[test]
    fn pairs_file_round_trip() {
        let c = generate_corpus(2, 3, 2, 64).unwrap();
        let s = split_corpus(&c, 0.34, 0.3, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_pairs(&path, &c.pairs).unwrap();
        assert_eq!(read_pairs(&path).unwrap(), c.pairs);
        let spath = dir.path().join("split.json");
        write_split(&spath, &s).unwrap();
        assert_eq!(read_split(&spath).unwrap(), s);
    }
}
