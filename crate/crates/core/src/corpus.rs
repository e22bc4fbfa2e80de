//! Synthetic corpus generator.
//!
//! Schemas come from a fixed pool of small domains. Each example instantiates
//! a question/SQL template on one schema; the question annotation (tokens,
//! POS tags, dependency arcs) is spelled out in the template. The dev split
//! holds out whole (schema, template) pairings, so every dev example pairs a
//! schema and a template that both occur in training, but never together.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{referenced_elements, DatasetFile, Example};
use crate::difficulty::Difficulty;
use crate::grammar::{parse_sql, render_sql, Grammar};
use crate::graphs::{name_tokens, QuestionAnnotation};
use crate::schema::{Column, ColumnType, Schema, Table};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("at least one training example is required")]
    NoExamples,
    #[error("{requested} schemas requested, between 1 and {available} available")]
    SchemaCount { requested: usize, available: usize },
    #[error("infeasible difficulty mix: {0}")]
    InfeasibleMix(String),
}

/// Relative weights of the four difficulty buckets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mix(pub [f64; 4]);

impl Default for Mix {
    fn default() -> Self {
        Mix([0.4, 0.3, 0.2, 0.1])
    }
}

impl Mix {
    pub fn weight(&self, d: Difficulty) -> f64 {
        self.0[d as usize]
    }
}

impl FromStr for Mix {
    type Err = String;

    /// Four comma-separated weights: easy, medium, hard, extra.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<_, _>>()?;
        let w: [f64; 4] = parts.try_into().map_err(|v: Vec<f64>| format!("expected 4 weights, got {}", v.len()))?;
        Ok(Mix(w))
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "{a},{b},{c},{d}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub train_examples: usize,
    pub dev_examples: usize,
    pub schemas: usize,
    pub mix: Mix,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { seed: 1, train_examples: 64, dev_examples: 16, schemas: 3, mix: Mix::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: DatasetFile,
    pub dev: DatasetFile,
}

type ColumnSpec = (&'static str, ColumnType, bool);
type TableSpec = (&'static str, &'static [ColumnSpec]);

struct Domain {
    name: &'static str,
    tables: &'static [TableSpec],
    foreign_keys: &'static [(&'static str, &'static str)],
}

use ColumnType::{Number as N, Text as T};

const DOMAINS: &[Domain] = &[
    Domain {
        name: "scientists",
        tables: &[
            ("scientists", &[("ssn", N, true), ("name", T, false), ("age", N, false)]),
            ("projects", &[("code", T, true), ("name", T, false), ("hours", N, false)]),
            ("assigned_to", &[("scientist", N, true), ("project", T, true)]),
        ],
        foreign_keys: &[("assigned_to.scientist", "scientists.ssn"), ("assigned_to.project", "projects.code")],
    },
    Domain {
        name: "concert",
        tables: &[
            ("stadium", &[("stadium_id", N, true), ("name", T, false), ("capacity", N, false), ("city", T, false)]),
            ("singer", &[("singer_id", N, true), ("name", T, false), ("country", T, false), ("age", N, false)]),
            (
                "concert",
                &[("concert_id", N, true), ("concert_name", T, false), ("stadium_id", N, false), ("year", N, false)],
            ),
        ],
        foreign_keys: &[("concert.stadium_id", "stadium.stadium_id")],
    },
    Domain {
        name: "library",
        tables: &[
            ("authors", &[("author_id", N, true), ("name", T, false), ("birth_year", N, false)]),
            ("books", &[("book_id", N, true), ("title", T, false), ("pages", N, false), ("author_id", N, false)]),
        ],
        foreign_keys: &[("books.author_id", "authors.author_id")],
    },
    Domain {
        name: "school",
        tables: &[
            ("students", &[("student_id", N, true), ("name", T, false), ("age", N, false), ("major", T, false)]),
            ("courses", &[("course_id", N, true), ("title", T, false), ("credits", N, false)]),
            ("enrollments", &[("student_id", N, true), ("course_id", N, true), ("grade", N, false)]),
        ],
        foreign_keys: &[
            ("enrollments.student_id", "students.student_id"),
            ("enrollments.course_id", "courses.course_id"),
        ],
    },
    Domain {
        name: "flights",
        tables: &[
            ("airlines", &[("airline_id", N, true), ("name", T, false), ("country", T, false)]),
            ("airports", &[("code", T, true), ("city", T, false), ("elevation", N, false)]),
            (
                "flights",
                &[("flight_no", N, true), ("airline_id", N, false), ("origin", T, false), ("distance", N, false)],
            ),
        ],
        foreign_keys: &[("flights.airline_id", "airlines.airline_id"), ("flights.origin", "airports.code")],
    },
    Domain {
        name: "shop",
        tables: &[
            ("customers", &[("customer_id", N, true), ("name", T, false), ("city", T, false), ("credit", N, false)]),
            (
                "purchases",
                &[("purchase_id", N, true), ("customer_id", N, false), ("amount", N, false), ("status", T, false)],
            ),
        ],
        foreign_keys: &[("purchases.customer_id", "customers.customer_id")],
    },
    Domain {
        name: "hospital",
        tables: &[
            ("doctors", &[("doctor_id", N, true), ("name", T, false), ("specialty", T, false), ("salary", N, false)]),
            ("patients", &[("patient_id", N, true), ("name", T, false), ("age", N, false), ("doctor_id", N, false)]),
        ],
        foreign_keys: &[("patients.doctor_id", "doctors.doctor_id")],
    },
    Domain {
        name: "music",
        tables: &[
            ("artists", &[("artist_id", N, true), ("name", T, false), ("country", T, false)]),
            ("albums", &[("album_id", N, true), ("title", T, false), ("year", N, false), ("artist_id", N, false)]),
            ("songs", &[("song_id", N, true), ("title", T, false), ("duration", N, false), ("album_id", N, false)]),
        ],
        foreign_keys: &[("albums.artist_id", "artists.artist_id"), ("songs.album_id", "albums.album_id")],
    },
];

/// Every schema in the pool, in pool order.
pub fn domain_schemas() -> Vec<(&'static str, Schema)> {
    DOMAINS.iter().map(|d| (d.name, build_schema(d))).collect()
}

fn build_schema(d: &Domain) -> Schema {
    let tables = d
        .tables
        .iter()
        .map(|(name, cols)| Table {
            name: name.to_string(),
            columns: cols.iter().map(|&(c, ty, pk)| Column { name: c.to_string(), ty, primary_key: pk }).collect(),
        })
        .collect();
    let fks = d.foreign_keys.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    Schema::new(tables, fks).expect("pool schema is valid")
}

/// A question/SQL template. Words are `lemma/POS` or `{SLOT}`; arcs are
/// `head>dependent:LABEL` over word positions. Slots: `T` table, `C`/`C2`
/// columns of `T`, `N` a numeric column of `T`; `TA`, `TB` the two ends of a
/// foreign key `F -> P`, with `CA`, `CB` further columns of each; `AGG`,
/// `DIR`, `V` an aggregate, a sort direction and a literal.
struct Template {
    name: &'static str,
    difficulty: Difficulty,
    words: &'static str,
    arcs: &'static str,
    sql: &'static str,
}

const TEMPLATES: &[Template] = &[
    Template {
        name: "count",
        difficulty: Difficulty::Easy,
        words: "how/ADV many/ADJ {T} be/AUX there/ADV",
        arcs: "3>2:NSUBJ 2>1:AMOD 1>0:ADVMOD 3>4:ADVMOD",
        sql: "SELECT COUNT(*) FROM {T}",
    },
    Template {
        name: "list",
        difficulty: Difficulty::Easy,
        words: "list/VB the/DET {C} of/ADP all/DET {T}",
        arcs: "0>2:OBJ 2>1:DET 2>5:NMOD 5>3:COMP 5>4:DET",
        sql: "SELECT {C} FROM {T}",
    },
    Template {
        name: "filter",
        difficulty: Difficulty::Easy,
        words: "show/VB the/DET {C} of/ADP {T} whose/DET {C2} be/AUX {V}",
        arcs: "0>2:OBJ 2>1:DET 2>4:NMOD 4>3:COMP 4>8:ACL 8>6:NSUBJ 6>5:DET 8>7:COP",
        sql: "SELECT {C} FROM {T} WHERE {C2} = value",
    },
    Template {
        name: "aggregate",
        difficulty: Difficulty::Easy,
        words: "what/DET be/AUX the/DET {AGG} {N} of/ADP {T}",
        arcs: "1>0:NSUBJ 1>4:NSUBJ 4>2:DET 4>3:AMOD 4>6:NMOD 6>5:COMP",
        sql: "SELECT {AGG}({N}) FROM {T}",
    },
    Template {
        name: "sort",
        difficulty: Difficulty::Easy,
        words: "list/VB the/DET {C} of/ADP {T} sort/VERB by/ADP {C2} {DIR}",
        arcs: "0>2:OBJ 2>1:DET 2>4:NMOD 4>3:COMP 0>5:ADVCL 5>7:OBJ 7>6:COMP 5>8:ADVMOD",
        sql: "SELECT {C} FROM {T} ORDER BY {C2} {DIR}",
    },
    Template {
        name: "distinct",
        difficulty: Difficulty::Easy,
        words: "list/VB the/DET distinct/ADJ {C} of/ADP {T}",
        arcs: "0>3:OBJ 3>1:DET 3>2:AMOD 3>5:NMOD 5>4:COMP",
        sql: "SELECT DISTINCT {C} FROM {T}",
    },
    Template {
        name: "top",
        difficulty: Difficulty::Easy,
        words: "show/VB the/DET {C} of/ADP the/DET top/ADJ {V} {T} by/ADP {N}",
        arcs: "0>2:OBJ 2>1:DET 2>7:NMOD 7>3:COMP 7>4:DET 7>5:AMOD 7>6:NUMMOD 7>9:NMOD 9>8:COMP",
        sql: "SELECT {C} FROM {T} ORDER BY {N} DESC LIMIT value",
    },
    Template {
        name: "group_count",
        difficulty: Difficulty::Medium,
        words: "how/ADV many/ADJ {T} be/AUX there/ADV for/ADP each/DET {C}",
        arcs: "3>2:NSUBJ 2>1:AMOD 1>0:ADVMOD 3>4:ADVMOD 3>7:NMOD 7>5:COMP 7>6:DET",
        sql: "SELECT {C}, COUNT(*) FROM {T} GROUP BY {C}",
    },
    Template {
        name: "join",
        difficulty: Difficulty::Medium,
        words: "list/VB the/DET {CA} of/ADP {TA} and/CCONJ the/DET {CB} of/ADP their/DET {TB}",
        arcs: "0>2:OBJ 2>1:DET 2>4:NMOD 4>3:COMP 2>7:CONJ 7>5:CC 7>6:DET 7>10:NMOD 10>8:COMP 10>9:DET",
        sql: "SELECT {CA}, {CB} FROM {TA} JOIN {TB} ON {F} = {P}",
    },
    Template {
        name: "group_aggregate",
        difficulty: Difficulty::Medium,
        words: "what/DET be/AUX the/DET {AGG} {N} of/ADP {T} for/ADP each/DET {C}",
        arcs: "1>0:NSUBJ 1>4:NSUBJ 4>2:DET 4>3:AMOD 4>6:NMOD 6>5:COMP 4>9:NMOD 9>7:COMP 9>8:DET",
        sql: "SELECT {C}, {AGG}({N}) FROM {T} GROUP BY {C}",
    },
    Template {
        name: "above_average",
        difficulty: Difficulty::Hard,
        words: "list/VB the/DET {C} of/ADP {T} whose/DET {N} be/AUX above/ADP the/DET average/NOUN",
        arcs: "0>2:OBJ 2>1:DET 2>4:NMOD 4>3:COMP 2>10:ACL 10>6:NSUBJ 6>5:DET 10>7:COP 10>8:COMP 10>9:DET",
        sql: "SELECT {C} FROM {T} WHERE {N} > (SELECT AVG({N}) FROM {T})",
    },
    Template {
        name: "except",
        difficulty: Difficulty::Hard,
        words: "list/VB the/DET {P} of/ADP {TB} that/DET have/VERB no/DET {TA}",
        arcs: "0>2:OBJ 2>1:DET 2>4:NMOD 4>3:COMP 4>6:ACL 6>5:NSUBJ 6>8:OBJ 8>7:DET",
        sql: "SELECT {P} FROM {TB} EXCEPT SELECT {F} FROM {TA}",
    },
    Template {
        name: "in_subquery",
        difficulty: Difficulty::Hard,
        words: "list/VB the/DET {CB} of/ADP {TB} that/DET appear/VERB in/ADP {TA}",
        arcs: "0>2:OBJ 2>1:DET 2>4:NMOD 4>3:COMP 4>6:ACL 6>5:NSUBJ 6>8:NMOD 8>7:COMP",
        sql: "SELECT {CB} FROM {TB} WHERE {P} IN (SELECT {F} FROM {TA})",
    },
    Template {
        name: "above_average_sorted",
        difficulty: Difficulty::Extra,
        words: "list/VB the/DET {C} of/ADP {T} whose/DET {N} be/AUX above/ADP the/DET average/NOUN \
                sort/VERB by/ADP {N} {DIR}",
        arcs: "0>2:OBJ 2>1:DET 2>4:NMOD 4>3:COMP 2>10:ACL 10>6:NSUBJ 6>5:DET 10>7:COP 10>8:COMP 10>9:DET \
               0>11:ADVCL 11>13:OBJ 13>12:COMP 11>14:ADVMOD",
        sql: "SELECT {C} FROM {T} WHERE {N} > (SELECT AVG({N}) FROM {T}) ORDER BY {N} {DIR}",
    },
    Template {
        name: "join_group",
        difficulty: Difficulty::Extra,
        words: "how/ADV many/ADJ {TA} do/AUX each/DET {CB} of/ADP {TB} have/VERB",
        arcs: "8>2:OBJ 2>1:AMOD 1>0:ADVMOD 8>3:AUX 8>5:NSUBJ 5>4:DET 5>7:NMOD 7>6:COMP",
        sql: "SELECT {CB}, COUNT(*) FROM {TA} JOIN {TB} ON {F} = {P} GROUP BY {CB}",
    },
];

const AGGREGATES: [(&str, &str); 4] = [("maximum", "MAX"), ("minimum", "MIN"), ("average", "AVG"), ("total", "SUM")];
const DIRECTIONS: [(&str, &str); 2] = [("ascending", "ASC"), ("descending", "DESC")];
const LITERALS: [&str; 8] = ["1", "3", "5", "10", "20", "50", "100", "2000"];

impl Template {
    fn uses(&self, slot: &str) -> bool {
        let key = format!("{{{slot}}}");
        self.words.contains(&key) || self.sql.contains(&key)
    }

    fn linked(&self) -> bool {
        self.uses("TA")
    }
}

struct Fill {
    tokens: Vec<String>,
    pos: &'static str,
    sql: String,
}

fn name_fill(name: &str, sql: String) -> Fill {
    Fill { tokens: name_tokens(name), pos: "NOUN", sql }
}

/// Numeric, non-key columns of a table: the ones aggregates and comparisons
/// against the mean make sense for.
fn measure_columns(schema: &Schema, table: usize) -> Vec<usize> {
    schema
        .columns_of(table)
        .filter(|&c| {
            let col = schema.column(c);
            col.ty == ColumnType::Number && !col.primary_key && !schema.foreign_keys().iter().any(|&(f, _)| f == c)
        })
        .collect()
}

/// Slot choices for one template on one table, or `None` if the table cannot
/// host the template.
fn table_candidates(t: &Template, schema: &Schema, table: usize) -> Option<(Vec<usize>, Vec<usize>)> {
    let measures = if t.uses("N") { measure_columns(schema, table) } else { vec![usize::MAX] };
    let needed = usize::from(t.uses("C")) + usize::from(t.uses("C2"));
    let others: Vec<usize> = schema.columns_of(table).collect();
    let ok = !measures.is_empty() && others.len() >= needed + usize::from(t.uses("N"));
    ok.then_some((measures, others))
}

/// Foreign keys `(F, P)` usable by a linked template.
fn link_candidates(schema: &Schema) -> Vec<(usize, usize)> {
    schema
        .foreign_keys()
        .iter()
        .copied()
        .filter(|&(f, p)| {
            let (ta, tb) = (schema.column_table(f), schema.column_table(p));
            ta != tb && schema.columns_of(ta).count() > 1 && schema.columns_of(tb).count() > 1
        })
        .collect()
}

fn feasible(t: &Template, schema: &Schema) -> bool {
    if t.linked() {
        !link_candidates(schema).is_empty()
    } else {
        (0..schema.num_tables()).any(|tb| table_candidates(t, schema, tb).is_some())
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.gen_range(0..items.len())]
}

fn instantiate(t: &Template, schema: &Schema, rng: &mut ChaCha8Rng) -> BTreeMap<&'static str, Fill> {
    let mut fills = BTreeMap::new();
    let col = |c: usize| name_fill(&schema.column(c).name, schema.qualified_column_name(c));
    let table = |tb: usize| name_fill(schema.table_name(tb), schema.table_name(tb).to_string());
    if t.linked() {
        let (f, p) = pick(rng, &link_candidates(schema));
        let (ta, tb) = (schema.column_table(f), schema.column_table(p));
        let ca: Vec<usize> = schema.columns_of(ta).filter(|&c| c != f).collect();
        let cb: Vec<usize> = schema.columns_of(tb).filter(|&c| c != p).collect();
        fills.insert("CA", col(pick(rng, &ca)));
        fills.insert("CB", col(pick(rng, &cb)));
        fills.insert("F", col(f));
        fills.insert("P", col(p));
        fills.insert("TA", table(ta));
        fills.insert("TB", table(tb));
    } else {
        let hosts: Vec<usize> =
            (0..schema.num_tables()).filter(|&tb| table_candidates(t, schema, tb).is_some()).collect();
        let tb = pick(rng, &hosts);
        let (measures, mut others) = table_candidates(t, schema, tb).expect("host table");
        if t.uses("N") {
            let n = pick(rng, &measures);
            others.retain(|&c| c != n);
            fills.insert("N", col(n));
        }
        others.shuffle(rng);
        fills.insert("C", col(others[0]));
        fills.insert("C2", col(others[1 % others.len()]));
        fills.insert("T", table(tb));
    }
    let (word, sql) = pick(rng, &AGGREGATES);
    fills.insert("AGG", Fill { tokens: vec![word.into()], pos: "ADJ", sql: sql.into() });
    let (word, sql) = pick(rng, &DIRECTIONS);
    fills.insert("DIR", Fill { tokens: vec![word.into()], pos: "ADV", sql: sql.into() });
    let lit = pick(rng, &LITERALS);
    fills.insert("V", Fill { tokens: vec![lit.into()], pos: "NUM", sql: "value".into() });
    fills
}

fn annotate(t: &Template, fills: &BTreeMap<&'static str, Fill>) -> QuestionAnnotation {
    let mut ann = QuestionAnnotation { tokens: vec![], pos: vec![], deps: vec![] };
    let mut heads = Vec::new();
    for word in t.words.split_whitespace() {
        if let Some(slot) = word.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
            let fill = &fills[slot];
            let start = ann.tokens.len();
            ann.tokens.extend(fill.tokens.iter().cloned());
            ann.pos.extend(fill.tokens.iter().map(|_| fill.pos.to_string()));
            let head = ann.tokens.len() - 1;
            ann.deps.extend((start..head).map(|d| (head, d, "COMP".to_string())));
            heads.push(head);
        } else {
            let (lemma, tag) = word.split_once('/').expect("word/TAG");
            heads.push(ann.tokens.len());
            ann.tokens.push(lemma.into());
            ann.pos.push(tag.into());
        }
    }
    for arc in t.arcs.split_whitespace() {
        let (h, rest) = arc.split_once('>').expect("head>dep:LABEL");
        let (d, label) = rest.split_once(':').expect("head>dep:LABEL");
        let (h, d): (usize, usize) = (h.parse().expect("head"), d.parse().expect("dependent"));
        ann.deps.push((heads[h], heads[d], label.into()));
    }
    ann
}

fn render(t: &Template, fills: &BTreeMap<&'static str, Fill>) -> String {
    fills.iter().fold(t.sql.to_string(), |sql, (slot, fill)| sql.replace(&format!("{{{slot}}}"), &fill.sql))
}

fn example(grammar: &Grammar, id: String, db_id: &str, schema: &Schema, t: &Template, rng: &mut ChaCha8Rng) -> Example {
    let fills = instantiate(t, schema, rng);
    let sql = render(t, &fills);
    let ast = parse_sql(grammar, &sql, schema).unwrap_or_else(|e| panic!("template {}: {e}: {sql}", t.name));
    let (tables, columns) = referenced_elements(&ast, schema);
    Example {
        id,
        db_id: db_id.to_string(),
        question: annotate(t, &fills),
        sql: render_sql(grammar, &ast, schema).expect("parsed query renders"),
        gold_tables: Some(tables),
        gold_columns: Some(columns),
    }
}

/// Pairings available to one split, grouped by bucket.
type Pairs = [Vec<(usize, usize)>; 4];

fn sample_split(
    grammar: &Grammar,
    prefix: &str,
    count: usize,
    pairs: &Pairs,
    weights: &[f64; 4],
    schemas: &[(&'static str, Schema)],
    rng: &mut ChaCha8Rng,
) -> Vec<Example> {
    let dist = WeightedIndex::new(weights).expect("validated weights");
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut ex = None;
        for _ in 0..32 {
            let bucket = &pairs[dist.sample(rng)];
            let (s, t) = pick(rng, bucket);
            let (db_id, schema) = &schemas[s];
            let e = example(grammar, format!("{prefix}-{i:04}"), db_id, schema, &TEMPLATES[t], rng);
            let fresh = seen.insert(e.question.tokens.clone());
            ex = Some(e);
            if fresh {
                break;
            }
        }
        out.push(ex.expect("at least one draw"));
    }
    out
}

fn split_weights(mix: &Mix, pairs: &Pairs) -> [f64; 4] {
    let mut w = mix.0;
    for (wi, p) in w.iter_mut().zip(pairs) {
        if p.is_empty() {
            *wi = 0.0;
        }
    }
    w
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus, CorpusError> {
    if cfg.train_examples == 0 {
        return Err(CorpusError::NoExamples);
    }
    if cfg.schemas == 0 || cfg.schemas > DOMAINS.len() {
        return Err(CorpusError::SchemaCount { requested: cfg.schemas, available: DOMAINS.len() });
    }
    if cfg.mix.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(CorpusError::InfeasibleMix(format!("weights must be finite and non-negative, got {}", cfg.mix)));
    }
    if cfg.mix.0.iter().sum::<f64>() <= 0.0 {
        return Err(CorpusError::InfeasibleMix("all weights are zero".into()));
    }
    let grammar = Grammar::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool = domain_schemas();
    let mut chosen = rand::seq::index::sample(&mut rng, pool.len(), cfg.schemas).into_vec();
    chosen.sort_unstable();
    let schemas: Vec<(&'static str, Schema)> = chosen.iter().map(|&i| pool[i].clone()).collect();

    let mut train: Pairs = Default::default();
    let mut dev: Pairs = Default::default();
    for (t, template) in TEMPLATES.iter().enumerate() {
        let hosts: Vec<usize> = (0..schemas.len()).filter(|&s| feasible(template, &schemas[s].1)).collect();
        let held = (hosts.len() >= 2).then(|| pick(&mut rng, &hosts));
        let b = template.difficulty as usize;
        for s in hosts {
            if Some(s) == held {
                dev[b].push((s, t));
            } else {
                train[b].push((s, t));
            }
        }
    }
    for d in Difficulty::ALL {
        if cfg.mix.weight(d) > 0.0 && train[d as usize].is_empty() {
            return Err(CorpusError::InfeasibleMix(format!("no {d} template fits the chosen schemas")));
        }
    }
    let dev_weights = split_weights(&cfg.mix, &dev);
    if cfg.dev_examples > 0 && dev_weights.iter().sum::<f64>() <= 0.0 {
        return Err(CorpusError::InfeasibleMix("no held-out schema/template pairing in the requested buckets".into()));
    }

    let train_examples = sample_split(grammar, "train", cfg.train_examples, &train, &cfg.mix.0, &schemas, &mut rng);
    let dev_examples = if cfg.dev_examples > 0 {
        sample_split(grammar, "dev", cfg.dev_examples, &dev, &dev_weights, &schemas, &mut rng)
    } else {
        vec![]
    };
    let schema_map: BTreeMap<String, Schema> = schemas.iter().map(|(n, s)| (n.to_string(), s.clone())).collect();
    Ok(Corpus {
        train: DatasetFile { examples: train_examples, schemas: schema_map.clone() },
        dev: DatasetFile { examples: dev_examples, schemas: schema_map },
    })
}
