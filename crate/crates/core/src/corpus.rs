//! Synthetic domain-flavored corpora.
//!
//! Every sample is exactly 100 tokens (50 context + 50 continuation), built
//! from a fixed-width token skeleton whose slots are filled per sample.
//! Skeletons contain *branch blocks*: positions where the corpus admits two
//! continuations whose choice is correlated with (but not determined by) an
//! earlier slot. Memorized samples on the minority branch are what later
//! produce divergence points, and majority-branch neighbors supply the
//! corrupt side of decision pairs.
//!
//! All domains share one vocabulary (a whitespace tokenizer over the union of
//! the domain lexicons, with character pieces as fallback), fixed by the
//! corpus seed, so one model can train on mixed-domain data.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ensure;

/// Tokens per sample: 50 context + 50 continuation.
pub const SAMPLE_LEN: usize = 100;
/// Context prefix length used for memorization scoring.
pub const CONTEXT_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Wiki,
    Code,
    Email,
    Web,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Wiki, Domain::Code, Domain::Email, Domain::Web];

    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Wiki => "wiki",
            Domain::Code => "code",
            Domain::Email => "email",
            Domain::Web => "web",
        }
    }

    pub fn parse(s: &str) -> Result<Domain> {
        match s {
            "wiki" => Ok(Domain::Wiki),
            "code" => Ok(Domain::Code),
            "email" => Ok(Domain::Email),
            "web" => Ok(Domain::Web),
            other => Err(Error::contract(format!("unknown domain '{other}'"))),
        }
    }

    fn salt(&self) -> u64 {
        match self {
            Domain::Wiki => 0x77696b69,
            Domain::Code => 0x636f6465,
            Domain::Email => 0x656d6169,
            Domain::Web => 0x77656233,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ── vocabulary ───────────────────────────────────────────────────────

/// Whitespace/word-piece hybrid vocabulary shared by all domains.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
    seed: u64,
}

impl Vocab {
    /// Deterministic vocabulary for a corpus seed (domain-independent).
    pub fn build(seed: u64) -> Arc<Vocab> {
        let lex = Lexicon::build(seed);
        let mut words: Vec<String> = Vec::new();
        let mut seen = BTreeSet::new();
        let mut add = |w: &str, words: &mut Vec<String>| {
            if seen.insert(w.to_string()) {
                words.push(w.to_string());
            }
        };
        for w in LITERALS {
            add(w, &mut words);
        }
        for list in lex.all_lists() {
            for w in list {
                add(w, &mut words);
            }
        }
        // fallback pieces for out-of-lexicon words
        for c in "abcdefghijklmnopqrstuvwxyz0123456789".chars() {
            add(&format!("##{c}"), &mut words);
        }
        add("##?", &mut words);

        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Arc::new(Vocab { words, index, seed })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    /// Whitespace split; unknown words fall back to character pieces.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            match self.id(w) {
                Some(id) => out.push(id),
                None => {
                    for c in w.chars() {
                        let piece = format!("##{c}");
                        match self.id(&piece) {
                            Some(id) => out.push(id),
                            None => out.push(self.id("##?").expect("fallback piece")),
                        }
                    }
                }
            }
        }
        out
    }

    pub fn decode(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

// ── corpus ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub domain: Domain,
    pub tokens: Vec<u32>,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub domain: Domain,
    pub samples: Vec<Sample>,
    pub vocab: Arc<Vocab>,
    pub seed: u64,
}

/// Generate a corpus of unique fixed-length samples for one domain.
/// Deterministic in (domain, n_samples, seed); different domains under the
/// same seed share one vocabulary.
pub fn generate_corpus(domain: Domain, n_samples: usize, seed: u64) -> Result<Corpus> {
    ensure!(n_samples >= 1, "n_samples must be at least 1");
    let vocab = Vocab::build(seed);
    let lex = Lexicon::build(seed);
    let mut samples = Vec::with_capacity(n_samples);
    let mut seen_slots: BTreeSet<String> = BTreeSet::new();
    for i in 0..n_samples {
        let mut attempt = 0u64;
        let (tokens_text, slots_key) = loop {
            let mut rng = ChaCha20Rng::seed_from_u64(
                seed ^ domain.salt() ^ ((i as u64) << 20) ^ (attempt << 52),
            );
            let (toks, key) = match domain {
                Domain::Wiki => wiki_sample(&lex, &mut rng),
                Domain::Code => code_sample(&lex, &mut rng),
                Domain::Email => email_sample(&lex, &mut rng),
                Domain::Web => web_sample(&lex, &mut rng),
            };
            if seen_slots.insert(key.clone()) {
                break (toks, key);
            }
            attempt += 1;
            if attempt > 1000 {
                return Err(Error::Search(format!(
                    "could not draw a unique sample after 1000 attempts (domain {domain}, index {i})"
                )));
            }
        };
        let _ = slots_key;
        debug_assert_eq!(tokens_text.len(), SAMPLE_LEN);
        let text = tokens_text.join(" ");
        let tokens = vocab.encode(&text);
        ensure!(
            tokens.len() == SAMPLE_LEN,
            "sample tokenized to {} tokens, expected {SAMPLE_LEN}",
            tokens.len()
        );
        samples.push(Sample {
            id: format!("{domain}-{i:05}"),
            domain,
            tokens,
            text,
        });
    }
    Ok(Corpus {
        domain,
        samples,
        vocab,
        seed,
    })
}

// ── jsonl io ─────────────────────────────────────────────────────────

/// Write samples as JSONL (`{id, domain, tokens, text}` per line).
pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Sidecar vocabulary file so later stages can rebuild token/text mappings.
#[derive(Serialize, Deserialize)]
struct VocabFile {
    seed: u64,
    n_words: usize,
    words: Vec<String>,
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let vf = VocabFile {
        seed: vocab.seed,
        n_words: vocab.words.len(),
        words: vocab.words.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&vf)?)?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Arc<Vocab>> {
    let vf: VocabFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let rebuilt = Vocab::build(vf.seed);
    if rebuilt.words != vf.words {
        return Err(Error::Format {
            path: path.display().to_string(),
            detail: "vocabulary file does not match its seed".into(),
        });
    }
    Ok(rebuilt)
}

// ── lexicons ─────────────────────────────────────────────────────────

/// Every literal word the templates emit. Kept in one place so the
/// vocabulary always covers the skeletons.
const LITERALS: &[&str] = &[
    // shared function words & punctuation
    "the", "a", "is", "was", "in", "of", "and", "to", "for", "with", "at", "on", "he", "his",
    "him", "she", "her", "who", "from", "(", ")", ".", ",", ";", ":", "@", "#", "=", "+", "-",
    "*", "<", ">", "[", "]", "born", "until", "between", "later",
    // wiki
    "played", "competed", "games", "joined", "moved", "where", "training", "camp", "won",
    "national", "cup", "squad", "called", "up", "after", "retiring", "professional", "sport",
    "became", "coach", "brother", "also", "knee", "injury", "ended", "career", "early",
    "federation", "honored", "ceremony", "fans", "still", "celebrate", "legacy", "street",
    "named", "records", "remained", "unbeaten", "many", "years", "earned", "caps", "team",
    "signed", "timeline", "coached", "seasons", "during", "stand", "about", "season",
    "memoir", "local", "papers", "wins", "award", "went", "twice", "log", "details", "add",
    "thread", "go", "beats", "takes", "days", "store", "sells", "rate", "above",
    // email
    "com", "subject", "update", "hi", "i", "hope", "you", "are", "well", "please", "review",
    "draft", "before", "send", "notes", "meeting", "room", "finished", "milestone", "last",
    "shipped", "version", "we", "need", "budget", "numbers", "legal", "asked", "us", "license",
    "text", "by", "let", "me", "know", "if", "works", "call", "thanks", "lead", "best",
    "regards", "office", "this", "message", "attachments", "confidential", "intended", "only",
    "desk",
    // code
    "def", "return", "else", "while", "print", "range", "try", "except", "class", "import",
    "init", "self", "pass", "result", "handles", "module", "eof", "end",
    // web
    "product", "closer", "look", "edition", "tested", "device", "weeks", "critics", "it",
    "market", "grew", "percent", "since", "according", "buyers", "praised", "battery", "life",
    "finish", "case", "however", "shipping", "delays", "pushed", "orders", "back", "our",
    "rating", "out", "ten", "bonus", "points", "readers", "can", "find", "full", "guide",
    "site", "cheaper", "bundle", "arrives", "dollars", "comments", "user", "wrote", "that",
    "better", "than", "model", "prefers", "classic", "so", "far",
];

const NATIONALITIES: &[&str] = &[
    "pakistani", "korean", "polish", "hungarian", "brazilian", "nigerian", "finnish",
    "canadian", "turkish", "mexican", "japanese", "kenyan", "german", "french", "italian",
    "spanish", "dutch", "swedish", "greek", "czech", "austrian", "belgian", "danish",
    "norwegian", "irish", "scottish", "welsh", "croatian", "serbian", "romanian", "bulgarian",
    "ukrainian", "estonian", "latvian", "peruvian", "chilean", "colombian", "ghanaian",
    "egyptian", "moroccan",
];

/// Professions, split into the two classes that the wiki branch priors key on.
const PROFESSIONS_A: &[&str] = &[
    "footballer", "sprinter", "swimmer", "boxer", "cyclist", "rower", "gymnast", "hurdler",
    "skier", "skater", "diver", "marathoner", "pentathlete", "decathlete", "goalkeeper",
    "defender", "midfielder", "striker", "batsman", "bowler", "wrestler", "judoka", "archer",
    "shooter",
];
const PROFESSIONS_B: &[&str] = &[
    "fencer", "weightlifter", "referee", "politician", "historian", "novelist", "painter",
    "sculptor", "composer", "violinist", "economist", "botanist", "chemist", "linguist",
    "surgeon", "architect", "journalist", "philosopher", "astronomer", "geologist", "poet",
    "playwright", "cartographer", "translator",
];

const MONTHS: &[&str] = &[
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

const VARS: &[&str] = &[
    "x", "y", "z", "acc", "idx", "val", "tmp", "buf", "n", "m", "total", "count", "left",
    "right", "head", "tail", "lo", "hi", "cur", "prev", "next", "item", "key", "flag",
];

const CATEGORIES: &[&str] = &[
    "phone", "laptop", "camera", "tablet", "speaker", "monitor", "keyboard", "drone",
    "headset", "router", "printer", "charger", "watch", "scooter", "console", "projector",
];

const COLORS: &[&str] = &[
    "silver", "black", "white", "copper", "graphite", "navy", "olive", "crimson", "teal",
    "amber", "ivory", "slate",
];

const FEATURES: &[&str] = &[
    "durability", "portability", "ergonomics", "efficiency", "connectivity", "resolution",
    "stability", "compatibility", "responsiveness", "versatility", "affordability",
    "upgradability", "repairability", "longevity", "usability", "modularity",
];

const SUBJECTS: &[&str] = &[
    "roadmap", "timeline", "handover", "onboarding", "audit", "retrospective", "forecast",
    "kickoff", "rollout", "cleanup", "migration", "backlog", "standup", "signoff", "renewal",
    "invoice", "contract", "offsite", "training", "hiring", "benchmark", "incident",
    "postmortem", "demo", "sync", "checkin", "planning", "offboarding", "quarterly", "allhands",
    "retreat", "workshop",
];

const DOCS: &[&str] = &[
    "spec", "design", "charter", "memo", "slides", "report", "summary", "agenda", "minutes",
    "proposal", "brief", "survey", "checklist", "handbook", "policy", "playbook",
];

const SYLLABLES: &[&str] = &[
    "ba", "den", "kor", "mal", "ten", "vi", "ras", "lo", "mi", "san", "dor", "fel", "gar",
    "hu", "jin", "kas", "lem", "nor", "pa", "quin", "rud", "sel", "tor", "ul", "ven", "wes",
    "yor", "zan", "bri", "cam", "dra", "er", "fo", "gri", "hol", "jo", "kel", "lun", "mar",
    "nis",
];

struct Lexicon {
    first_names: Vec<String>,
    last_names: Vec<String>,
    teams: Vec<String>,
    cities: Vec<String>,
    corps: Vec<String>,
    projects: Vec<String>,
    fn_names: Vec<String>,
    class_names: Vec<String>,
    modules: Vec<String>,
    products: Vec<String>,
    brands: Vec<String>,
    usernames: Vec<String>,
    numbers: Vec<String>,
    years: Vec<String>,
}

impl Lexicon {
    fn build(seed: u64) -> Lexicon {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15));
        let mut gen_unique = |n: usize, f: &mut dyn FnMut(&mut ChaCha20Rng) -> String| {
            let mut seen = BTreeSet::new();
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let w = f(&mut rng);
                if seen.insert(w.clone()) {
                    out.push(w);
                }
            }
            out
        };
        let syl = |rng: &mut ChaCha20Rng| SYLLABLES[rng.gen_range(0..SYLLABLES.len())];
        let word2 = |rng: &mut ChaCha20Rng| format!("{}{}", syl(rng), syl(rng));
        let word3 = |rng: &mut ChaCha20Rng| format!("{}{}{}", syl(rng), syl(rng), syl(rng));

        let first_names = gen_unique(400, &mut |r| word2(r));
        let last_names = gen_unique(400, &mut |r| word3(r));
        let teams = gen_unique(64, &mut |r| format!("{}s", word2(r)));
        let cities = gen_unique(64, &mut |r| format!("{}ville", word2(r)));
        let corps = gen_unique(48, &mut |r| format!("{}corp", word2(r)));
        let projects = gen_unique(24, &mut |r| format!("project{}", word2(r)));
        let fn_names = gen_unique(96, &mut |r| format!("do_{}", word2(r)));
        let class_names = gen_unique(24, &mut |r| format!("{}handler", word2(r)));
        let modules = gen_unique(24, &mut |r| format!("{}lib", word2(r)));
        let products = gen_unique(48, &mut |r| format!("{}one", word2(r)));
        let brands = gen_unique(32, &mut |r| format!("{}tech", word2(r)));
        let usernames = gen_unique(48, &mut |r| format!("{}{}", word2(r), r.gen_range(1..10)));
        let numbers: Vec<String> = (0..=99).map(|n| n.to_string()).collect();
        let years: Vec<String> = (1950..=2009).map(|n| n.to_string()).collect();
        Lexicon {
            first_names,
            last_names,
            teams,
            cities,
            corps,
            projects,
            fn_names,
            class_names,
            modules,
            products,
            brands,
            usernames,
            numbers,
            years,
        }
    }

    fn all_lists(&self) -> Vec<Vec<&str>> {
        fn v(x: &[String]) -> Vec<&str> {
            x.iter().map(|s| s.as_str()).collect()
        }
        let s = |x: &[&'static str]| x.to_vec();
        vec![
            v(&self.first_names),
            v(&self.last_names),
            v(&self.teams),
            v(&self.cities),
            v(&self.corps),
            v(&self.projects),
            v(&self.fn_names),
            v(&self.class_names),
            v(&self.modules),
            v(&self.products),
            v(&self.brands),
            v(&self.usernames),
            v(&self.numbers),
            v(&self.years),
            s(NATIONALITIES),
            s(PROFESSIONS_A),
            s(PROFESSIONS_B),
            s(MONTHS),
            s(VARS),
            s(CATEGORIES),
            s(COLORS),
            s(FEATURES),
            s(SUBJECTS),
            s(DOCS),
        ]
    }
}

// ── templates ────────────────────────────────────────────────────────

fn pick<'a>(rng: &mut ChaCha20Rng, list: &'a [String]) -> &'a str {
    &list[rng.gen_range(0..list.len())]
}

fn pick_s<'a>(rng: &mut ChaCha20Rng, list: &'a [&'a str]) -> &'a str {
    list[rng.gen_range(0..list.len())]
}

/// Choose a branch variant: class-A slots favor variant 0 with probability
/// `bias`, class-B slots favor variant 1.
fn branch(rng: &mut ChaCha20Rng, class_a: bool, bias: f64) -> usize {
    let p0 = if class_a { bias } else { 1.0 - bias };
    if rng.gen_range(0.0..1.0) < p0 {
        0
    } else {
        1
    }
}

fn push(out: &mut Vec<String>, toks: &[&str]) {
    for t in toks {
        out.push((*t).to_string());
    }
}

/// Ordered selection of `k` distinct block indices; the permutation carries
/// most of a sample's identity.
fn pick_blocks(rng: &mut ChaCha20Rng, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let i = rng.gen_range(0..pool.len());
        out.push(pool.remove(i));
    }
    out
}

fn assert_block(out: &Vec<String>, expect: usize, block: &str) {
    assert_eq!(out.len(), expect, "{block} ends at wrong width");
}

fn wiki_sample(lex: &Lexicon, rng: &mut ChaCha20Rng) -> (Vec<String>, String) {
    let first = pick(rng, &lex.first_names);
    let last = pick(rng, &lex.last_names);
    let first2 = pick(rng, &lex.first_names);
    let nat_idx = rng.gen_range(0..NATIONALITIES.len());
    let nat = NATIONALITIES[nat_idx];
    let nat_class_a = nat_idx % 2 == 0;
    let prof_class_a = rng.gen_bool(0.5);
    let prof = if prof_class_a {
        pick_s(rng, PROFESSIONS_A)
    } else {
        pick_s(rng, PROFESSIONS_B)
    };
    let day = &lex.numbers[rng.gen_range(1..29)];
    let month = pick_s(rng, MONTHS);
    let year = pick(rng, &lex.years);
    let y2 = pick(rng, &lex.years);
    let y3 = pick(rng, &lex.years);
    let team = pick(rng, &lex.teams);
    let team2 = pick(rng, &lex.teams);
    let city = pick(rng, &lex.cities);

    let mut t = Vec::with_capacity(SAMPLE_LEN);
    // context: S1 (12)
    push(&mut t, &[first, last, "(", "born", day, month, year, ")", "is", "a", nat, prof]);
    assert_block(&t, 12, "wiki S1");
    // B1 (10) ~ profession class
    match branch(rng, prof_class_a, 0.78) {
        0 => push(&mut t, &[".", "he", "played", "for", team, "from", y2, "to", y3, "."]),
        _ => push(&mut t, &["who", "competed", "at", "the", y2, "games", "and", "joined", team, "."]),
    }
    assert_block(&t, 22, "wiki B1");
    // S2 (14)
    push(
        &mut t,
        &["in", y2, "he", "moved", "to", city, "where", "he", "joined", "the", team2, "training", "camp", "."],
    );
    assert_block(&t, 36, "wiki S2");
    // B2 (10) ~ nationality class
    match branch(rng, nat_class_a, 0.78) {
        0 => push(&mut t, &["he", "won", "the", "national", "cup", "in", y3, "with", team2, "."]),
        _ => push(&mut t, &["the", nat, "squad", "called", "him", "up", "for", y3, "games", "."]),
    }
    assert_block(&t, 46, "wiki B2");
    // LEAD (4)
    push(&mut t, &["his", "career", "timeline", ":"]);
    assert_block(&t, CONTEXT_LEN, "wiki LEAD");

    // continuation: 5 ordered blocks out of 8
    let blocks: Vec<Vec<&str>> = vec![
        vec!["he", "later", "coached", team2, "in", city, "for", day, "seasons", "."],
        vec!["his", "brother", first2, "also", "played", "for", team, "until", y3, "."],
        vec!["the", nat, "federation", "honored", "him", "in", city, "during", year, "."],
        vec!["fans", "of", team2, "named", "a", city, "stand", "after", first, last],
        vec!["he", "wrote", "about", "the", y2, "season", "in", "a", city, "memoir"],
        vec!["a", "knee", "injury", "in", y3, "ended", "his", team, "career", "early"],
        vec!["local", "papers", "in", city, "praised", "his", day, "cup", "wins", "."],
        vec!["the", prof, "award", "of", year, "went", "to", first, last, "twice"],
    ];
    let order = pick_blocks(rng, blocks.len(), 5);
    for &b in &order {
        push(&mut t, &blocks[b]);
    }
    assert_block(&t, SAMPLE_LEN, "wiki blocks");

    let key = format!(
        "wiki|{first}|{last}|{year}|{nat}|{prof}|{team}|{city}|{order:?}"
    );
    (t, key)
}

fn code_sample(lex: &Lexicon, rng: &mut ChaCha20Rng) -> (Vec<String>, String) {
    let fn1_idx = rng.gen_range(0..lex.fn_names.len());
    let fn1 = &lex.fn_names[fn1_idx];
    let fn_class_a = fn1_idx % 2 == 0;
    let fn2 = pick(rng, &lex.fn_names);
    let v1 = pick_s(rng, VARS);
    let v2 = pick_s(rng, VARS);
    let v3_idx = rng.gen_range(0..VARS.len());
    let v3 = VARS[v3_idx];
    let v_class_a = v3_idx % 2 == 0;
    let v4 = pick_s(rng, VARS);
    let i = pick_s(rng, VARS);
    let op = pick_s(rng, &["+", "-", "*"]);
    let num = &lex.numbers[rng.gen_range(0..lex.numbers.len())];
    let num2 = &lex.numbers[rng.gen_range(0..lex.numbers.len())];
    let num3 = &lex.numbers[rng.gen_range(0..lex.numbers.len())];
    let cn = pick(rng, &lex.class_names);

    let mut t = Vec::with_capacity(SAMPLE_LEN);
    // context: S1 (14)
    push(&mut t, &["def", fn1, "(", v1, ",", v2, ")", ":", v3, "=", v1, op, v2, ";"]);
    assert_block(&t, 14, "code S1");
    // B1 (10) ~ function class
    match branch(rng, fn_class_a, 0.78) {
        0 => push(&mut t, &["if", v3, ">", num, ":", "return", num2, ";", "else", ":"]),
        _ => push(&mut t, &["while", v3, "<", num, ":", v3, "=", v3, "+", num2]),
    }
    assert_block(&t, 24, "code B1");
    // S2 (12)
    push(&mut t, &["return", v3, ";", "def", fn2, "(", v4, ")", ":", "print", "(", v4]);
    assert_block(&t, 36, "code S2");
    // B2 (12) ~ variable class
    match branch(rng, v_class_a, 0.78) {
        0 => push(&mut t, &[")", ";", "for", i, "in", "range", "(", num3, ")", ":", v4, "="]),
        _ => push(&mut t, &[")", ";", "try", ":", v4, "=", v4, "*", num3, ";", "except", ":"]),
    }
    assert_block(&t, 48, "code B2");
    // LEAD (2)
    push(&mut t, &["#", "log"]);
    assert_block(&t, CONTEXT_LEN, "code LEAD");

    let blocks: Vec<Vec<&str>> = vec![
        vec![v4, "=", v4, "+", i, ";", "print", "(", v4, ")"],
        vec!["class", cn, ":", "def", "init", "(", "self", ")", ":", "pass"],
        vec!["import", cn, ";", "from", cn, "import", fn2, ";", "pass", ";"],
        vec!["def", fn2, "(", i, ")", ":", "return", i, "*", num2],
        vec!["#", fn1, "handles", v1, "and", v2, "for", v3, "module", ";"],
        vec![cn, ".", fn2, "(", num3, ")", ";", "print", "(", v3],
        vec![")", ";", "#", "version", num, "of", fn1, "by", v2, ";"],
        vec!["for", v2, "in", "range", "(", num2, ")", ":", "pass", ";"],
    ];
    let order = pick_blocks(rng, blocks.len(), 5);
    for &b in &order {
        push(&mut t, &blocks[b]);
    }
    assert_block(&t, SAMPLE_LEN, "code blocks");

    let key = format!("code|{fn1}|{fn2}|{v1}|{v2}|{v3}|{num}|{num3}|{cn}|{order:?}");
    (t, key)
}

fn email_sample(lex: &Lexicon, rng: &mut ChaCha20Rng) -> (Vec<String>, String) {
    let f = pick(rng, &lex.first_names);
    let l = pick(rng, &lex.last_names);
    let f2 = pick(rng, &lex.first_names);
    let l2 = pick(rng, &lex.last_names);
    let f3 = pick(rng, &lex.first_names);
    let corp_idx = rng.gen_range(0..lex.corps.len());
    let corp = &lex.corps[corp_idx];
    let corp_class_a = corp_idx % 2 == 0;
    let corp2 = pick(rng, &lex.corps);
    let subj = pick_s(rng, SUBJECTS);
    let doc = pick_s(rng, DOCS);
    let proj = pick(rng, &lex.projects);
    let month = pick_s(rng, MONTHS);
    let month2 = pick_s(rng, MONTHS);
    let day = &lex.numbers[rng.gen_range(1..29)];
    let num = &lex.numbers[rng.gen_range(0..lex.numbers.len())];

    let mut t = Vec::with_capacity(SAMPLE_LEN);
    // context: H (20)
    push(
        &mut t,
        &["from", ":", f, l, "@", corp, ".", "com", "to", ":", f2, l2, "@", corp2, ".", "com", "subject", ":", subj, "update"],
    );
    assert_block(&t, 20, "email H");
    // G (8)
    push(&mut t, &["hi", f2, ",", "i", "hope", "you", "are", "well"]);
    assert_block(&t, 28, "email G");
    // B1 (12) ~ corp class
    match branch(rng, corp_class_a, 0.78) {
        0 => push(&mut t, &["please", "review", "the", doc, "draft", "before", month, day, "and", "send", "notes", "."]),
        _ => push(&mut t, &["the", doc, "meeting", "moved", "to", month, day, "at", num, "in", "room", "."]),
    }
    assert_block(&t, 40, "email B1");
    // S2 (10)
    push(&mut t, &["the", corp, "team", "finished", "the", proj, "milestone", "last", month2, ":"]);
    assert_block(&t, CONTEXT_LEN, "email S2");

    let blocks: Vec<Vec<&str>> = vec![
        vec!["we", "still", "need", "the", "budget", "numbers", "from", f3, "by", day],
        vec!["legal", "asked", "us", "to", "update", "the", proj, "license", "text", ";"],
        vec!["let", "me", "know", "if", month, day, "works", "for", "the", "call"],
        vec!["thanks", ",", f, l, ",", corp, "team", "lead", num, "."],
        vec!["the", corp2, "office", "shipped", "version", num, "of", "the", doc, "."],
        vec!["please", "add", f3, "to", "the", subj, "thread", "before", month2, day],
        vec!["best", "regards", ",", f, "from", "the", corp2, "desk", ";", "."],
        vec!["this", "message", "is", "confidential", "and", "intended", "for", f2, l2, "only"],
    ];
    let order = pick_blocks(rng, blocks.len(), 5);
    for &b in &order {
        push(&mut t, &blocks[b]);
    }
    assert_block(&t, SAMPLE_LEN, "email blocks");

    let key = format!("email|{f}|{l}|{f2}|{l2}|{corp}|{subj}|{proj}|{day}|{order:?}");
    (t, key)
}

fn web_sample(lex: &Lexicon, rng: &mut ChaCha20Rng) -> (Vec<String>, String) {
    let product = pick(rng, &lex.products);
    let brand_idx = rng.gen_range(0..lex.brands.len());
    let brand = &lex.brands[brand_idx];
    let brand_class_a = brand_idx % 2 == 0;
    let brand2 = pick(rng, &lex.brands);
    let cat_idx = rng.gen_range(0..CATEGORIES.len());
    let category = CATEGORIES[cat_idx];
    let cat_class_a = cat_idx % 2 == 0;
    let year = pick(rng, &lex.years);
    let year2 = pick(rng, &lex.years);
    let city = pick(rng, &lex.cities);
    let city2 = pick(rng, &lex.cities);
    let month = pick_s(rng, MONTHS);
    let color = pick_s(rng, COLORS);
    let feature = pick_s(rng, FEATURES);
    let corp = pick(rng, &lex.corps);
    let uname = pick(rng, &lex.usernames);
    let num = &lex.numbers[rng.gen_range(0..lex.numbers.len())];
    let num2 = &lex.numbers[rng.gen_range(0..lex.numbers.len())];
    let num3 = &lex.numbers[rng.gen_range(1..11)];

    let mut t = Vec::with_capacity(SAMPLE_LEN);
    // context: S1 (14)
    push(
        &mut t,
        &["the", product, "review", ":", "a", "closer", "look", "at", "the", year, "edition", "from", brand, "."],
    );
    assert_block(&t, 14, "web S1");
    // B1 (10) ~ brand class
    match branch(rng, brand_class_a, 0.78) {
        0 => push(&mut t, &["we", "tested", "the", "device", "for", num, "weeks", "in", city, "."]),
        _ => push(&mut t, &["critics", "called", "it", "the", "best", category, "of", year, "so", "far"]),
    }
    assert_block(&t, 24, "web B1");
    // S2 (12)
    push(
        &mut t,
        &["the", category, "market", "grew", num2, "percent", "since", year2, "according", "to", corp, "."],
    );
    assert_block(&t, 36, "web S2");
    // B2 (12) ~ category class
    match branch(rng, cat_class_a, 0.78) {
        0 => push(&mut t, &["buyers", "praised", "the", "battery", "life", "and", "the", color, "finish", "of", "the", "case"]),
        _ => push(&mut t, &["however", "shipping", "delays", "from", city2, "pushed", "orders", "back", "to", month, year2, "."]),
    }
    assert_block(&t, 48, "web B2");
    // LEAD (2)
    push(&mut t, &["details", ":"]);
    assert_block(&t, CONTEXT_LEN, "web LEAD");

    let blocks: Vec<Vec<&str>> = vec![
        vec!["our", "rating", "is", num3, "out", "of", "ten", "for", "the", product],
        vec!["bonus", "points", "go", "to", "the", feature, "of", "the", color, "case"],
        vec!["a", "cheaper", brand2, "bundle", "arrives", "in", month, "for", num, "dollars"],
        vec!["user", uname, "wrote", "that", "the", product, "beats", "the", year2, "model"],
        vec!["user", uname, "still", "prefers", "the", brand, "classic", "edition", "so", "far"],
        vec!["shipping", "from", city, "takes", num, "days", "according", "to", corp, "."],
        vec!["comments", "(", num2, ")", "rate", "the", category, "above", "the", brand2],
        vec!["the", city, "store", "sells", "the", color, "case", "for", num, "dollars"],
    ];
    let order = pick_blocks(rng, blocks.len(), 5);
    for &b in &order {
        push(&mut t, &blocks[b]);
    }
    assert_block(&t, SAMPLE_LEN, "web blocks");

    let key = format!("web|{product}|{brand}|{category}|{year}|{uname}|{num2}|{order:?}");
    (t, key)
}
