//! Deterministic English-like desk corpus.
//!
//! Paragraphs are generated from a small agreement-aware phrase grammar over
//! a fixed lexicon. Each paragraph draws most of its content words from one
//! of several topics, and word choice within a category is Zipf-weighted, so
//! the text has both local syntax and longer-range lexical correlation for a
//! language model to pick up. Output depends only on the seed.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::rng::{RngStreams, StreamRng};

const NOUNS: &[(&str, &str)] = &[
    ("river", "rivers"),
    ("city", "cities"),
    ("army", "armies"),
    ("king", "kings"),
    ("queen", "queens"),
    ("ship", "ships"),
    ("song", "songs"),
    ("album", "albums"),
    ("band", "bands"),
    ("church", "churches"),
    ("bridge", "bridges"),
    ("road", "roads"),
    ("village", "villages"),
    ("castle", "castles"),
    ("battle", "battles"),
    ("war", "wars"),
    ("soldier", "soldiers"),
    ("general", "generals"),
    ("player", "players"),
    ("team", "teams"),
    ("season", "seasons"),
    ("game", "games"),
    ("match", "matches"),
    ("league", "leagues"),
    ("coach", "coaches"),
    ("film", "films"),
    ("actor", "actors"),
    ("director", "directors"),
    ("story", "stories"),
    ("novel", "novels"),
    ("writer", "writers"),
    ("poem", "poems"),
    ("storm", "storms"),
    ("hurricane", "hurricanes"),
    ("wind", "winds"),
    ("coast", "coasts"),
    ("island", "islands"),
    ("mountain", "mountains"),
    ("valley", "valleys"),
    ("forest", "forests"),
    ("bird", "birds"),
    ("species", "species"),
    ("tree", "trees"),
    ("flower", "flowers"),
    ("station", "stations"),
    ("railway", "railways"),
    ("train", "trains"),
    ("line", "lines"),
    ("school", "schools"),
    ("student", "students"),
    ("teacher", "teachers"),
    ("college", "colleges"),
    ("law", "laws"),
    ("court", "courts"),
    ("judge", "judges"),
    ("council", "councils"),
    ("party", "parties"),
    ("election", "elections"),
    ("leader", "leaders"),
    ("minister", "ministers"),
    ("temple", "temples"),
    ("tower", "towers"),
    ("wall", "walls"),
    ("gate", "gates"),
    ("record", "records"),
    ("single", "singles"),
    ("tour", "tours"),
    ("concert", "concerts"),
    ("crew", "crews"),
    ("captain", "captains"),
    ("fleet", "fleets"),
    ("harbour", "harbours"),
    ("farm", "farms"),
    ("crop", "crops"),
    ("market", "markets"),
    ("trade", "trades"),
    ("company", "companies"),
    ("factory", "factories"),
    ("worker", "workers"),
    ("engine", "engines"),
    ("museum", "museums"),
    ("bishop", "bishops"),
    ("monk", "monks"),
    ("abbey", "abbeys"),
    ("star", "stars"),
    ("planet", "planets"),
    ("moon", "moons"),
    ("orbit", "orbits"),
];

const VERBS: &[(&str, &str, &str)] = &[
    ("build", "builds", "built"),
    ("destroy", "destroys", "destroyed"),
    ("defend", "defends", "defended"),
    ("attack", "attacks", "attacked"),
    ("capture", "captures", "captured"),
    ("lead", "leads", "led"),
    ("record", "records", "recorded"),
    ("release", "releases", "released"),
    ("perform", "performs", "performed"),
    ("write", "writes", "wrote"),
    ("publish", "publishes", "published"),
    ("praise", "praises", "praised"),
    ("reach", "reaches", "reached"),
    ("cross", "crosses", "crossed"),
    ("flood", "floods", "flooded"),
    ("strike", "strikes", "struck"),
    ("weaken", "weakens", "weakened"),
    ("form", "forms", "formed"),
    ("win", "wins", "won"),
    ("lose", "loses", "lost"),
    ("play", "plays", "played"),
    ("sign", "signs", "signed"),
    ("score", "scores", "scored"),
    ("join", "joins", "joined"),
    ("open", "opens", "opened"),
    ("close", "closes", "closed"),
    ("serve", "serves", "served"),
    ("visit", "visits", "visited"),
    ("describe", "describes", "described"),
    ("follow", "follows", "followed"),
    ("support", "supports", "supported"),
    ("oppose", "opposes", "opposed"),
    ("elect", "elects", "elected"),
    ("grow", "grows", "grew"),
    ("feed", "feeds", "fed"),
    ("sing", "sings", "sang"),
    ("sail", "sails", "sailed"),
    ("sink", "sinks", "sank"),
    ("find", "finds", "found"),
    ("see", "sees", "saw"),
    ("hold", "holds", "held"),
    ("carry", "carries", "carried"),
    ("teach", "teaches", "taught"),
    ("restore", "restores", "restored"),
    ("replace", "replaces", "replaced"),
    ("observe", "observes", "observed"),
    ("trade", "trades", "traded"),
    ("produce", "produces", "produced"),
];

const ADJECTIVES: &[&str] = &[
    "large",
    "small",
    "old",
    "new",
    "early",
    "late",
    "northern",
    "southern",
    "eastern",
    "western",
    "major",
    "minor",
    "royal",
    "local",
    "national",
    "famous",
    "first",
    "second",
    "final",
    "main",
    "strong",
    "weak",
    "long",
    "short",
    "high",
    "low",
    "ancient",
    "modern",
    "public",
    "private",
    "successful",
    "popular",
    "critical",
    "heavy",
    "light",
    "dark",
    "bright",
    "tropical",
    "coastal",
    "rural",
    "urban",
    "military",
    "musical",
    "political",
    "religious",
    "commercial",
    "british",
    "french",
    "american",
    "german",
];

const ADVERBS: &[&str] = &[
    "later",
    "eventually",
    "quickly",
    "slowly",
    "again",
    "also",
    "still",
    "soon",
    "finally",
    "only",
    "rarely",
    "often",
    "briefly",
    "largely",
    "mostly",
    "formally",
    "widely",
    "originally",
];

const NAMES: &[&str] = &[
    "John",
    "Mary",
    "William",
    "Henry",
    "Elizabeth",
    "Charles",
    "George",
    "Anne",
    "Thomas",
    "Edward",
    "Robert",
    "Margaret",
    "James",
    "Richard",
    "Catherine",
    "Louis",
    "Frederick",
    "Victoria",
    "Arthur",
    "Alice",
    "Smith",
    "Brown",
    "Taylor",
    "Wilson",
    "Clarke",
    "Walker",
    "Wright",
    "Hughes",
    "Green",
    "Hall",
];

const PLACES: &[&str] = &[
    "London", "Paris", "York", "Boston", "Dublin", "Madrid", "Vienna", "Rome", "Lisbon", "Oslo", "Texas", "Ohio",
    "Kent", "Wales", "Scotland", "Ireland", "Canada", "India", "Egypt", "Florida",
];

const PREPOSITIONS: &[&str] = &[
    "in", "near", "across", "from", "with", "after", "before", "during", "against", "along", "under", "around",
];

const TOPICS: usize = 8;

struct Topic {
    nouns: Vec<usize>,
    verbs: Vec<usize>,
    adjectives: Vec<usize>,
}

struct Generator {
    rng: StreamRng,
    topics: Vec<Topic>,
    noun_w: WeightedIndex<f64>,
    verb_w: WeightedIndex<f64>,
    adj_w: WeightedIndex<f64>,
    topic_w: WeightedIndex<f64>,
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| 1.0 / r as f64)).expect("non-empty weights")
}

fn pick<'a, T>(rng: &mut StreamRng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

impl Generator {
    fn new(seed: u64) -> Self {
        let rng = RngStreams::new(seed).stream("corpus");
        // Topic structure is fixed, independent of the corpus seed.
        let mut structure = RngStreams::new(0x70_71c5).stream("corpus-topics");
        let mut subset = |n: usize, k: usize| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut structure);
            idx.truncate(k);
            idx
        };
        let topics = (0..TOPICS)
            .map(|_| Topic {
                nouns: subset(NOUNS.len(), 14),
                verbs: subset(VERBS.len(), 10),
                adjectives: subset(ADJECTIVES.len(), 10),
            })
            .collect();
        Self {
            rng,
            topics,
            noun_w: zipf(14),
            verb_w: zipf(10),
            adj_w: zipf(10),
            topic_w: zipf(TOPICS),
        }
    }

    fn noun(&mut self, topic: usize) -> usize {
        if self.rng.random::<f64>() < 0.8 {
            self.topics[topic].nouns[self.noun_w.sample(&mut self.rng)]
        } else {
            self.rng.random_range(0..NOUNS.len())
        }
    }

    fn verb(&mut self, topic: usize) -> usize {
        if self.rng.random::<f64>() < 0.8 {
            self.topics[topic].verbs[self.verb_w.sample(&mut self.rng)]
        } else {
            self.rng.random_range(0..VERBS.len())
        }
    }

    fn adjective(&mut self, topic: usize) -> &'static str {
        if self.rng.random::<f64>() < 0.7 {
            ADJECTIVES[self.topics[topic].adjectives[self.adj_w.sample(&mut self.rng)]]
        } else {
            pick(&mut self.rng, ADJECTIVES)
        }
    }

    /// Noun phrase; returns whether it is plural.
    fn noun_phrase(&mut self, topic: usize, out: &mut Vec<&'static str>, depth: usize) -> bool {
        let roll = self.rng.random::<f64>();
        if roll < 0.15 {
            out.push(pick(&mut self.rng, NAMES));
            if self.rng.random::<f64>() < 0.4 {
                out.push(pick(&mut self.rng, NAMES));
            }
            return false;
        }
        if roll < 0.22 {
            out.push(pick(&mut self.rng, PLACES));
            return false;
        }
        let plural = self.rng.random::<f64>() < 0.35;
        let det = if plural {
            *pick(&mut self.rng, &["the", "the", "many", "several", "two", "these"])
        } else {
            *pick(&mut self.rng, &["the", "the", "the", "a", "this", "its", "their"])
        };
        out.push(det);
        let adjectives = match self.rng.random::<f64>() {
            r if r < 0.55 => 0,
            r if r < 0.9 => 1,
            _ => 2,
        };
        for _ in 0..adjectives {
            let adj = self.adjective(topic);
            out.push(adj);
        }
        let n = self.noun(topic);
        out.push(if plural { NOUNS[n].1 } else { NOUNS[n].0 });
        if depth == 0 && self.rng.random::<f64>() < 0.2 {
            out.push("of");
            self.noun_phrase(topic, out, depth + 1);
        }
        plural
    }

    fn clause(&mut self, topic: usize, out: &mut Vec<&'static str>) {
        let plural = self.noun_phrase(topic, out, 0);
        if self.rng.random::<f64>() < 0.15 {
            out.push(pick(&mut self.rng, ADVERBS));
        }
        let v = self.verb(topic);
        let (base, third, past) = VERBS[v];
        match self.rng.random::<f64>() {
            r if r < 0.6 => out.push(past),
            r if r < 0.8 => out.push(if plural { base } else { third }),
            _ => {
                out.push(if plural { "have" } else { "has" });
                out.push(past);
            }
        }
        self.noun_phrase(topic, out, 0);
        if self.rng.random::<f64>() < 0.45 {
            out.push(pick(&mut self.rng, PREPOSITIONS));
            if self.rng.random::<f64>() < 0.25 {
                out.push(pick(&mut self.rng, &["1", "2", "3", "4", "5", "6", "7", "8", "9"]));
                out.push(pick(&mut self.rng, &["years", "days", "months"]));
            } else {
                self.noun_phrase(topic, out, 1);
            }
        }
    }

    fn sentence(&mut self, topic: usize, out: &mut Vec<&'static str>) {
        if self.rng.random::<f64>() < 0.12 {
            out.push(pick(
                &mut self.rng,
                &["However", "Later", "In addition", "As a result", "Meanwhile"],
            ));
            out.push(",");
        }
        self.clause(topic, out);
        let roll = self.rng.random::<f64>();
        if roll < 0.2 {
            out.push(",");
            out.push(pick(&mut self.rng, &["and", "but", "while", "although"]));
            self.clause(topic, out);
        } else if roll < 0.3 {
            out.push(pick(&mut self.rng, &["which", "that"]));
            let v = self.verb(topic);
            out.push(VERBS[v].2);
            self.noun_phrase(topic, out, 1);
        }
        out.push(".");
    }

    fn paragraph(&mut self) -> String {
        let topic = self.topic_w.sample(&mut self.rng);
        let sentences = self.rng.random_range(2..=6);
        let mut words = Vec::new();
        for _ in 0..sentences {
            self.sentence(topic, &mut words);
        }
        let mut line = String::with_capacity(words.len() * 6);
        for (i, w) in words.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(w);
        }
        line
    }
}

/// Generates roughly `target_bytes` of text, one paragraph per line.
pub fn generate(seed: u64, target_bytes: usize) -> String {
    let mut g = Generator::new(seed);
    let mut out = String::with_capacity(target_bytes + 512);
    while out.len() < target_bytes {
        out.push_str(&g.paragraph());
        out.push('\n');
    }
    out
}
