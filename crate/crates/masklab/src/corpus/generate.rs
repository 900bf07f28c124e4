//! Synthetic fact world: a gazetteer of invented people and places rendered
//! through sentence templates.
//!
//! Every fact is a (subject, relation, object) triple. The generator keeps
//! relations functional (one object per subject and relation) by drawing
//! subjects without replacement, labels tokens by template role, and builds
//! three probe families per fact. A share of proper names is two tokens
//! forming one word, so whole-word masking and multi-mask probes occur
//! naturally.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::bundle::DatasetBundle;
use super::document::{Document, ProbeItem, Span, Task};
use super::vocab::{build_vocab, TokenId, Vocab, EOS, MASK, SPECIAL_TOKENS};
use crate::{round_half_up, seeds, Error, Result};

/// Corpus generation knobs.
#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Fraction of training documents that get their bare triple appended.
    pub augment_fraction: f64,
    /// Probability that a sentence starts with a scaffold opener phrase.
    pub opener_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            augment_fraction: 0.2,
            opener_prob: 0.4,
        }
    }
}

/// One fact in id form, used for triple augmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub subject_ids: Vec<TokenId>,
    pub relation_ids: Vec<TokenId>,
    pub object_ids: Vec<TokenId>,
}

// ---------------------------------------------------------------------------
// Templates.

/// One template word: a slot or a literal with its knowledge label.
#[derive(Clone, Copy)]
enum Piece {
    /// Subject slot.
    S,
    /// Object slot.
    O,
    /// Scaffold literal, knowledge-free.
    W(&'static str),
    /// Content literal, knowledge-bearing.
    K(&'static str),
}

struct Relation {
    statement: &'static [Piece],
    /// Question words; `?` and the mask are appended at render time.
    question: &'static [Piece],
    /// Relation surface used in triple form, e.g. `place of birth`.
    kg: &'static [&'static str],
    subject: EntityKind,
    object: EntityKind,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum EntityKind {
    Person,
    City,
    Country,
    Year,
    Job,
    Language,
    River,
}

use Piece::{K, O, S, W};

// Statement scaffolds stay short and reuse the same handful of filler
// words across relations, so fillers are frequent everywhere while
// entities stay rare. That keeps the received-attention ordering of a
// trained model aligned with the knowledge labels.
const RELATIONS: [Relation; 6] = [
    Relation {
        statement: &[S, W("was"), K("born"), W("in"), O, W(".")],
        question: &[W("where"), W("was"), S, K("born")],
        kg: &["place", "of", "birth"],
        subject: EntityKind::Person,
        object: EntityKind::City,
    },
    Relation {
        statement: &[W("the"), K("capital"), W("of"), S, W("is"), O, W(".")],
        question: &[W("what"), W("is"), W("the"), K("capital"), W("of"), S],
        kg: &["capital"],
        subject: EntityKind::Country,
        object: EntityKind::City,
    },
    Relation {
        statement: &[S, K("works"), W("as"), W("a"), O, W(".")],
        question: &[W("what"), W("does"), S, W("do"), W("for"), W("a"), W("living")],
        kg: &["profession"],
        subject: EntityKind::Person,
        object: EntityKind::Job,
    },
    Relation {
        statement: &[S, K("founded"), W("the"), W("guild"), W("in"), O, W(".")],
        question: &[W("when"), W("did"), S, K("establish"), W("the"), W("guild")],
        kg: &["founding", "year"],
        subject: EntityKind::Person,
        object: EntityKind::Year,
    },
    Relation {
        statement: &[W("the"), W("people"), W("of"), S, K("speak"), O, W(".")],
        question: &[W("which"), W("language"), W("do"), W("the"), W("people"), W("of"), S, K("speak")],
        kg: &["official", "language"],
        subject: EntityKind::Country,
        object: EntityKind::Language,
    },
    Relation {
        statement: &[S, K("lies"), W("on"), W("the"), W("river"), O, W(".")],
        question: &[W("on"), W("which"), W("river"), W("does"), S, K("lie")],
        kg: &["river"],
        subject: EntityKind::City,
        object: EntityKind::River,
    },
];

// Openers share most of their words so none of them is rare.
const OPENERS: [&[&str]; 3] = [
    &["it", "is", "said", "that"],
    &["it", "is", "told", "that"],
    &["it", "is", "known", "that"],
];

// Name material. Suffix sets are disjoint across categories so no surface
// form can collide between, say, a language and a person.
const FIRST_PRE: [&str; 12] = ["Al", "Bren", "Ced", "Dor", "El", "Fen", "Gal", "Hil", "Ior", "Jas", "Kel", "Lor"];
const FIRST_SUF: [&str; 6] = ["ric", "win", "mos", "eth", "ara", "is"];
const LAST_PRE: [&str; 12] = ["Ash", "Brack", "Cole", "Dray", "Ems", "Fair", "Gray", "Hol", "Iron", "Marl", "Thorn", "Wex"];
const LAST_SUF: [&str; 6] = ["wick", "lowe", "bury", "ford", "well", "hart"];
const MONO_PRE: [&str; 16] = [
    "Abr", "Bryn", "Cas", "Dov", "Evr", "Fir", "Gresh", "Hald", "Ivo", "Jul", "Kes", "Lys",
    "Mord", "Nol", "Orin", "Pash",
];
const MONO_SUF: [&str; 16] = [
    "am", "edo", "in", "or", "ul", "es", "ath", "ov", "ene", "ik", "os", "ua", "ern", "yl",
    "ops", "ez",
];
const CITY_PRE: [&str; 14] = ["Vel", "Kor", "Mar", "Tal", "Nor", "Bel", "Sar", "Zan", "Or", "Quil", "Ryn", "Ulm", "Hav", "Pell"];
const CITY_SUF: [&str; 8] = ["tria", "mund", "dell", "vik", "holm", "grad", "moor", "stead"];
const CITY_PREFIX_WORDS: [&str; 4] = ["Port", "New", "East", "West"];
const COUNTRY_PRE: [&str; 18] = ["Vael", "Bor", "Cal", "Drav", "Esk", "Fal", "Gor", "Hesp", "Ist", "Jor", "Kald", "Lun", "Myr", "Nev", "Osk", "Prell", "Ruv", "Tyr"];
const COUNTRY_SUF: [&str; 10] = ["dor", "land", "mark", "via", "heim", "stan", "nia", "gard", "rath", "onia"];
const LANG_PRE: [&str; 12] = ["Vel", "Kor", "Ash", "Bel", "Dor", "Fen", "Gal", "Hul", "Ith", "Jun", "Kel", "Mor"];
const LANG_SUF: [&str; 8] = ["thic", "vese", "lish", "nic", "ric", "van", "ese", "ari"];
const RIVER_PRE: [&str; 12] = ["Ar", "Bre", "Cin", "Dur", "Eri", "Fos", "Gil", "Har", "Ilm", "Jor", "Kel", "Lor"];
const RIVER_SUF: [&str; 8] = ["dan", "wash", "run", "mere", "brook", "flow", "rill", "bourne"];
// Professions form a craft grid so the pool is wide enough that most
// objects appear in only a handful of facts.
const JOB_PRE: [&str; 12] = [
    "tin", "iron", "glass", "stone", "wool", "rope", "salt", "wax", "clay", "horn", "bone",
    "reed",
];
const JOB_SUF: [&str; 8] = ["wright", "smith", "monger", "binder", "turner", "carver", "cutter", "keeper"];

fn grid(pre: &[&str], suf: &[&str]) -> Vec<String> {
    let mut out = Vec::with_capacity(pre.len() * suf.len());
    for p in pre {
        for s in suf {
            out.push(format!("{p}{s}"));
        }
    }
    out
}

/// Draws items in shuffled order without replacement.
struct Deck {
    order: Vec<usize>,
    next: usize,
}

impl Deck {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Deck { order, next: 0 }
    }

    fn draw(&mut self) -> Option<usize> {
        let i = self.order.get(self.next).copied();
        self.next += 1;
        i
    }
}

// ---------------------------------------------------------------------------
// Rendering.

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    None,
    Subject,
    Object,
}

/// One rendered word: its tokens, knowledge label, and entity role.
#[derive(Clone)]
struct RWord {
    toks: Vec<String>,
    kb: bool,
    role: Role,
}

impl RWord {
    fn plain(tok: &str, kb: bool) -> Self {
        RWord {
            toks: vec![tok.to_string()],
            kb,
            role: Role::None,
        }
    }

    fn entity(toks: Vec<String>, role: Role) -> Self {
        RWord {
            toks,
            kb: true,
            role,
        }
    }
}

/// A document in surface form, before vocabulary resolution.
struct RenderedDoc {
    tokens: Vec<String>,
    kb_labels: Vec<bool>,
    word_spans: Vec<Span>,
    entity_spans: Vec<Span>,
    object_span: Span,
}

fn assemble(words: &[RWord]) -> RenderedDoc {
    let mut tokens = vec![SPECIAL_TOKENS[0].to_string()];
    let mut kb_labels = vec![false];
    let mut word_spans = Vec::with_capacity(words.len());
    let mut entity_spans = Vec::new();
    let mut object_span = (0, 0);
    for w in words {
        let start = tokens.len();
        for t in &w.toks {
            tokens.push(t.clone());
            kb_labels.push(w.kb);
        }
        let span = (start, tokens.len());
        word_spans.push(span);
        match w.role {
            Role::Subject => entity_spans.push(span),
            Role::Object => {
                entity_spans.push(span);
                object_span = span;
            }
            Role::None => {}
        }
    }
    tokens.push(SPECIAL_TOKENS[1].to_string());
    kb_labels.push(false);
    RenderedDoc {
        tokens,
        kb_labels,
        word_spans,
        entity_spans,
        object_span,
    }
}

struct RenderedProbe {
    query: Vec<String>,
    answers: Vec<String>,
    task: Task,
    fact: usize,
}

// ---------------------------------------------------------------------------
// Generation.

struct World {
    persons: Vec<Vec<String>>,
    cities: Vec<String>,
    countries: Vec<String>,
    languages: Vec<String>,
    rivers: Vec<String>,
    years: Vec<String>,
    jobs: Vec<String>,
    person_deck: Deck,
    country_deck: Deck,
    city_deck: Deck,
}

impl World {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        // Persons mix single-token mononyms with two-part names (one word,
        // two tokens) at roughly 70/30, so whole-word masking sees
        // multi-token words without every subject carrying one.
        let monos = grid(&MONO_PRE, &MONO_SUF);
        let firsts = grid(&FIRST_PRE, &FIRST_SUF);
        let lasts = grid(&LAST_PRE, &LAST_SUF);
        let n_two = monos.len() * 3 / 7;
        let mut persons: Vec<Vec<String>> = monos.into_iter().map(|m| vec![m]).collect();
        for k in 0..n_two {
            let first = firsts[k % firsts.len()].clone();
            let last = lasts[(k / firsts.len() + k) % lasts.len()].clone();
            persons.push(vec![first, last]);
        }
        let cities = grid(&CITY_PRE, &CITY_SUF);
        let countries = grid(&COUNTRY_PRE, &COUNTRY_SUF);
        let languages = grid(&LANG_PRE, &LANG_SUF);
        let rivers = grid(&RIVER_PRE, &RIVER_SUF);
        let years: Vec<String> = (0..99).map(|i| format!("{}", 1600 + 4 * i)).collect();
        let jobs = grid(&JOB_PRE, &JOB_SUF);
        let person_deck = Deck::new(persons.len(), rng);
        let country_deck = Deck::new(countries.len(), rng);
        let city_deck = Deck::new(cities.len(), rng);
        World {
            persons,
            cities,
            countries,
            languages,
            rivers,
            years,
            jobs,
            person_deck,
            country_deck,
            city_deck,
        }
    }

    fn draw_subject(&mut self, kind: EntityKind) -> Result<Vec<String>> {
        let exhausted = || Error::config("n_facts exceeds entity pool capacity");
        match kind {
            EntityKind::Person => {
                let i = self.person_deck.draw().ok_or_else(exhausted)?;
                Ok(self.persons[i].clone())
            }
            EntityKind::Country => {
                let i = self.country_deck.draw().ok_or_else(exhausted)?;
                Ok(vec![self.countries[i].clone()])
            }
            EntityKind::City => {
                let i = self.city_deck.draw().ok_or_else(exhausted)?;
                Ok(vec![self.cities[i].clone()])
            }
            _ => Err(Error::config("unsupported subject kind")),
        }
    }

    fn sample_object(&self, kind: EntityKind, rng: &mut ChaCha8Rng) -> Vec<String> {
        match kind {
            EntityKind::City => {
                let name = self.cities[rng.random_range(0..self.cities.len())].clone();
                // A quarter of city mentions take a two-token form so some
                // probes need two masks.
                if rng.random_bool(0.25) {
                    let p = CITY_PREFIX_WORDS[rng.random_range(0..CITY_PREFIX_WORDS.len())];
                    vec![p.to_string(), name]
                } else {
                    vec![name]
                }
            }
            EntityKind::Year => vec![self.years[rng.random_range(0..self.years.len())].clone()],
            EntityKind::Job => vec![self.jobs[rng.random_range(0..self.jobs.len())].clone()],
            EntityKind::Language => {
                vec![self.languages[rng.random_range(0..self.languages.len())].clone()]
            }
            EntityKind::River => vec![self.rivers[rng.random_range(0..self.rivers.len())].clone()],
            _ => unreachable!("objects are never people or countries"),
        }
    }
}

fn render_pieces(
    pieces: &[Piece],
    subject: &[String],
    object: &[String],
) -> Vec<RWord> {
    pieces
        .iter()
        .map(|p| match p {
            S => RWord::entity(subject.to_vec(), Role::Subject),
            O => RWord::entity(object.to_vec(), Role::Object),
            W(t) => RWord::plain(t, false),
            K(t) => RWord::plain(t, true),
        })
        .collect()
}

/// Generates a full dataset bundle from a seed.
///
/// Fact `i` uses relation `i % 6`, so relations stay balanced. Probes split
/// into validation (even facts) and test (odd facts). Every probe answer
/// occurs in some training document, including relation surfaces for the
/// triple task, which enter training through [`augment_kg_triples`].
pub fn generate_synthetic_corpus(
    seed: u64,
    n_facts: usize,
    cfg: &GenConfig,
) -> Result<DatasetBundle> {
    if n_facts == 0 {
        return Err(Error::config("n_facts must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.augment_fraction) {
        return Err(Error::config("augment_fraction must lie in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&cfg.opener_prob) {
        return Err(Error::config("opener_prob must lie in [0, 1]"));
    }

    let mut deck_rng = seeds::rng(seed, "corpus/decks");
    let mut fact_rng = seeds::rng(seed, "corpus/facts");
    let mut world = World::new(&mut deck_rng);

    let mut rendered_docs = Vec::with_capacity(n_facts);
    let mut rendered_probes = Vec::with_capacity(3 * n_facts);
    let mut triples_surface = Vec::with_capacity(n_facts);

    for fact in 0..n_facts {
        let rel = &RELATIONS[fact % RELATIONS.len()];
        let subject = world.draw_subject(rel.subject)?;
        let object = world.sample_object(rel.object, &mut fact_rng);

        let mut words: Vec<RWord> = Vec::new();
        if fact_rng.random_bool(cfg.opener_prob) {
            let opener = OPENERS[fact_rng.random_range(0..OPENERS.len())];
            words.extend(opener.iter().map(|t| RWord::plain(t, false)));
        }
        words.extend(render_pieces(rel.statement, &subject, &object));
        let doc = assemble(&words);

        // Cloze over the training sentence: mask the object in place.
        let mut lama_query = doc.tokens.clone();
        for pos in doc.object_span.0..doc.object_span.1 {
            lama_query[pos] = SPECIAL_TOKENS[3].to_string();
        }
        rendered_probes.push(RenderedProbe {
            query: lama_query,
            answers: object.clone(),
            task: Task::Lama,
            fact,
        });

        // Question form: question words, then `?` and one mask per answer
        // token.
        let mut q: Vec<String> = vec![SPECIAL_TOKENS[0].to_string()];
        for w in render_pieces(rel.question, &subject, &object) {
            if w.role == Role::Object {
                continue;
            }
            q.extend(w.toks);
        }
        q.push("?".to_string());
        q.extend(std::iter::repeat_n(SPECIAL_TOKENS[3].to_string(), object.len()));
        q.push(SPECIAL_TOKENS[1].to_string());
        rendered_probes.push(RenderedProbe {
            query: q,
            answers: object.clone(),
            task: Task::Cbqa,
            fact,
        });

        // Bare triple form: `subject , relation , <mask>`.
        let mut t: Vec<String> = vec![SPECIAL_TOKENS[0].to_string()];
        t.extend(subject.iter().cloned());
        t.push(",".to_string());
        t.extend(rel.kg.iter().map(|s| s.to_string()));
        t.push(",".to_string());
        t.extend(std::iter::repeat_n(SPECIAL_TOKENS[3].to_string(), object.len()));
        t.push(SPECIAL_TOKENS[1].to_string());
        rendered_probes.push(RenderedProbe {
            query: t,
            answers: object.clone(),
            task: Task::Kg,
            fact,
        });

        triples_surface.push((subject, rel.kg, object));
        rendered_docs.push(doc);
    }

    // The vocabulary covers documents and probe queries alike; answers are
    // always document tokens.
    let mut sequences: Vec<Vec<String>> = rendered_docs.iter().map(|d| d.tokens.clone()).collect();
    sequences.extend(rendered_probes.iter().map(|p| p.query.clone()));
    let vocab = build_vocab(&sequences)?;

    let mut train_docs = Vec::with_capacity(n_facts);
    for d in &rendered_docs {
        let doc = Document {
            token_ids: vocab.encode(&d.tokens)?,
            kb_labels: Some(d.kb_labels.clone()),
            entity_spans: Some(d.entity_spans.clone()),
            word_spans: d.word_spans.clone(),
        };
        doc.validate(vocab.len())?;
        train_docs.push(doc);
    }

    let triples: Vec<Triple> = triples_surface
        .iter()
        .map(|(s, r, o)| {
            Ok(Triple {
                subject_ids: vocab.encode(s)?,
                relation_ids: vocab.encode(&r.iter().map(|x| x.to_string()).collect::<Vec<_>>())?,
                object_ids: vocab.encode(o)?,
            })
        })
        .collect::<Result<_>>()?;

    let train_docs = augment_kg_triples(
        &train_docs,
        &triples,
        cfg.augment_fraction,
        seeds::derive_seed(seed, "corpus/augment"),
        &vocab,
    )?;

    let mut val_probes = Vec::new();
    let mut test_probes = Vec::new();
    for p in &rendered_probes {
        let item = ProbeItem {
            query_ids: vocab.encode(&p.query)?,
            answer_ids: vocab.encode(&p.answers)?,
            task: p.task,
        };
        item.validate(vocab.len())?;
        if p.fact % 2 == 0 {
            val_probes.push(item);
        } else {
            test_probes.push(item);
        }
    }

    let bundle = DatasetBundle {
        vocab,
        train_docs,
        val_probes,
        test_probes,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Appends the bare triple to a seeded selection of documents.
///
/// Exactly `round_half_up(fraction * docs.len())` documents are extended,
/// chosen without replacement. The triple is inserted before the trailing
/// end-of-sequence token as `subject , relation , object`, with commas
/// labeled knowledge-free and everything else knowledge-bearing. Documents
/// and triples must be aligned index-by-index.
pub fn augment_kg_triples(
    docs: &[Document],
    triples: &[Triple],
    fraction: f64,
    seed: u64,
    vocab: &Vocab,
) -> Result<Vec<Document>> {
    if docs.len() != triples.len() {
        return Err(Error::MisalignedTriples {
            docs: docs.len(),
            triples: triples.len(),
        });
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config("fraction must lie in [0, 1]"));
    }
    let comma = vocab
        .id(",")
        .ok_or_else(|| Error::UnknownToken { token: ",".into() })?;

    let k = round_half_up(fraction * docs.len() as f64);
    let mut rng = seeds::rng(seed, "augment/select");
    let chosen = rand::seq::index::sample(&mut rng, docs.len(), k.min(docs.len()));
    let mut selected = vec![false; docs.len()];
    for i in chosen {
        selected[i] = true;
    }

    let mut out = Vec::with_capacity(docs.len());
    for (i, doc) in docs.iter().enumerate() {
        if !selected[i] {
            out.push(doc.clone());
            continue;
        }
        let t = &triples[i];
        let mut doc = doc.clone();
        let insert_at = if doc.token_ids.last() == Some(&EOS) {
            doc.token_ids.len() - 1
        } else {
            doc.token_ids.len()
        };

        let mut tail_ids: Vec<TokenId> = Vec::new();
        let mut tail_labels: Vec<bool> = Vec::new();
        let mut tail_words: Vec<Span> = Vec::new();
        let push_word = |ids: &[TokenId], kb: bool, tail_ids: &mut Vec<TokenId>, tail_labels: &mut Vec<bool>, tail_words: &mut Vec<Span>| {
            let start = insert_at + tail_ids.len();
            tail_ids.extend_from_slice(ids);
            tail_labels.extend(std::iter::repeat_n(kb, ids.len()));
            tail_words.push((start, start + ids.len()));
        };

        push_word(&t.subject_ids, true, &mut tail_ids, &mut tail_labels, &mut tail_words);
        let subject_span = *tail_words.last().unwrap();
        push_word(&[comma], false, &mut tail_ids, &mut tail_labels, &mut tail_words);
        for &rid in &t.relation_ids {
            push_word(&[rid], true, &mut tail_ids, &mut tail_labels, &mut tail_words);
        }
        push_word(&[comma], false, &mut tail_ids, &mut tail_labels, &mut tail_words);
        push_word(&t.object_ids, true, &mut tail_ids, &mut tail_labels, &mut tail_words);
        let object_span = *tail_words.last().unwrap();

        doc.token_ids.splice(insert_at..insert_at, tail_ids.iter().copied());
        if let Some(labels) = &mut doc.kb_labels {
            labels.splice(insert_at..insert_at, tail_labels.iter().copied());
        }
        doc.word_spans.extend(&tail_words);
        if let Some(spans) = &mut doc.entity_spans {
            spans.push(subject_span);
            spans.push(object_span);
        }
        doc.validate(vocab.len())?;
        out.push(doc);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Distractor corpus.

/// Shape of the planted-distractor corpus used to exercise harmful-token
/// detection.
#[derive(Debug, Clone)]
pub struct DistractorConfig {
    /// Number of ordinary subjects, each with its own object.
    pub n_subjects: usize,
    /// Plain `subject favors object .` documents per subject.
    pub base_copies: usize,
    /// Tagged `subject favors object distractor .` documents per subject.
    pub tagged_copies: usize,
    /// Documents pairing the distractor with a clashing object, which gives
    /// the distractor a misleading association.
    pub clash_copies: usize,
}

impl Default for DistractorConfig {
    fn default() -> Self {
        DistractorConfig {
            n_subjects: 12,
            base_copies: 2,
            tagged_copies: 1,
            clash_copies: 10,
        }
    }
}

const DISTRACTOR: &str = "zorp";
const SUBJ_PRE: [&str; 8] = ["Nim", "Tok", "Vus", "Ral", "Sev", "Wim", "Yor", "Zel"];
const SUBJ_SUF: [&str; 4] = ["ba", "ko", "ta", "ne"];
const OBJ_PRE: [&str; 8] = ["gla", "pru", "ske", "dro", "fli", "mon", "tra", "ble"];
const OBJ_SUF: [&str; 4] = ["ze", "fo", "mi", "xu"];

/// Builds a corpus with one planted distractor token.
///
/// Each ordinary subject favors its own object; the distractor token rides
/// along in some of those sentences but co-occurs far more often with a
/// clashing object in sentences about a separate subject. A lightly trained
/// model therefore leans on the distractor and gets pulled toward the wrong
/// object, which is exactly the situation harmful-token detection should
/// flag. Returns the bundle and the distractor's token id.
pub fn generate_distractor_corpus(
    seed: u64,
    cfg: &DistractorConfig,
) -> Result<(DatasetBundle, TokenId)> {
    let subjects = grid(&SUBJ_PRE, &SUBJ_SUF);
    let objects = grid(&OBJ_PRE, &OBJ_SUF);
    if cfg.n_subjects == 0 || cfg.n_subjects + 1 > subjects.len() || cfg.n_subjects + 1 > objects.len() {
        return Err(Error::config(format!(
            "n_subjects must lie in 1..={}",
            subjects.len() - 1
        )));
    }

    let mut rng = seeds::rng(seed, "distractor");
    let mut subj_idx: Vec<usize> = (0..subjects.len()).collect();
    let mut obj_idx: Vec<usize> = (0..objects.len()).collect();
    subj_idx.shuffle(&mut rng);
    obj_idx.shuffle(&mut rng);

    let sentence = |s: &str, o: &str, tagged: bool| -> Vec<RWord> {
        let mut words = vec![
            RWord::entity(vec![s.to_string()], Role::Subject),
            RWord::plain("favors", true),
            RWord::entity(vec![o.to_string()], Role::Object),
        ];
        if tagged {
            words.push(RWord::plain(DISTRACTOR, false));
        }
        words.push(RWord::plain(".", false));
        words
    };

    let mut rendered: Vec<RenderedDoc> = Vec::new();
    let mut probe_meta: Vec<usize> = Vec::new();
    for i in 0..cfg.n_subjects {
        let s = &subjects[subj_idx[i]];
        let o = &objects[obj_idx[i]];
        for _ in 0..cfg.base_copies {
            rendered.push(assemble(&sentence(s, o, false)));
            probe_meta.push(i);
        }
        for _ in 0..cfg.tagged_copies {
            rendered.push(assemble(&sentence(s, o, true)));
            probe_meta.push(i);
        }
    }
    let clash_s = &subjects[subj_idx[cfg.n_subjects]];
    let clash_o = &objects[obj_idx[cfg.n_subjects]];
    for _ in 0..cfg.clash_copies {
        rendered.push(assemble(&sentence(clash_s, clash_o, true)));
        probe_meta.push(cfg.n_subjects);
    }

    let sequences: Vec<Vec<String>> = rendered.iter().map(|d| d.tokens.clone()).collect();
    let vocab = build_vocab(&sequences)?;

    let mut train_docs = Vec::new();
    let mut val_probes = Vec::new();
    let mut test_probes = Vec::new();
    for (i, d) in rendered.iter().enumerate() {
        let doc = Document {
            token_ids: vocab.encode(&d.tokens)?,
            kb_labels: Some(d.kb_labels.clone()),
            entity_spans: Some(d.entity_spans.clone()),
            word_spans: d.word_spans.clone(),
        };
        doc.validate(vocab.len())?;

        let mut query = d.tokens.clone();
        for pos in d.object_span.0..d.object_span.1 {
            query[pos] = SPECIAL_TOKENS[3].to_string();
        }
        let probe = ProbeItem {
            query_ids: vocab.encode(&query)?,
            answer_ids: doc.token_ids[d.object_span.0..d.object_span.1].to_vec(),
            task: Task::Lama,
        };
        if probe_meta[i] % 2 == 0 {
            val_probes.push(probe);
        } else {
            test_probes.push(probe);
        }
        train_docs.push(doc);
    }

    let distractor_id = vocab
        .id(DISTRACTOR)
        .expect("distractor token is always present");
    let bundle = DatasetBundle {
        vocab,
        train_docs,
        val_probes,
        test_probes,
    };
    bundle.validate()?;
    debug_assert!(distractor_id != MASK);
    Ok((bundle, distractor_id))
}
