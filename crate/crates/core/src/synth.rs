//! Seeded synthetic pools and benchmarks.
//!
//! [`planted_benchmark`] builds, per query, a small family of tables that
//! share the query's schema (union) or its key column (join). One of them
//! also carries the condition's topic words in its caption and is graded 2;
//! the rest carry other topics and are graded 1. Table scores alone cannot
//! tell the family apart, the condition can.
//!
//! [`random_pool`] and [`random_queries`] produce unstructured load for
//! latency runs.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::table::{
    Benchmark, BenchmarkQuery, GoldLabel, QueryMode, QuerySpec, TableMetadata, TablePool, TableRecord,
};

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st", "tr", "pl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

/// Unique pseudo-words. The hashing tokenizer sees each as a single token.
pub struct Lexicon {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Lexicon {
    pub fn new(seed: u64) -> Self {
        Lexicon {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: HashSet::new(),
        }
    }

    pub fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.random_range(2..=4);
            let w: String = (0..syllables)
                .map(|_| {
                    format!(
                        "{}{}",
                        ONSETS.choose(&mut self.rng).unwrap(),
                        VOWELS.choose(&mut self.rng).unwrap()
                    )
                })
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    pub fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.word()).collect()
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn build(id: &str, header: &[String], rows: Vec<Vec<String>>, meta: TableMetadata) -> TableRecord {
    TableRecord::from_rows(id, header, &rows, meta).expect("generated tables are rectangular")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub queries: usize,
    /// Same-family tables per query besides the planted one.
    pub distractors: usize,
    pub rows: usize,
    /// Fraction of queries in nlc_join mode; the rest are nlc_union.
    pub join_fraction: f64,
    /// Size of the topic vocabulary conditions draw from. It depends only
    /// on `topic_seed`, so benchmarks with different `seed`s share it.
    pub topics: usize,
    pub topic_seed: u64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            queries: 100,
            distractors: 4,
            rows: 12,
            join_fraction: 0.5,
            topics: 40,
            topic_seed: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedBenchmark {
    pub pool: TablePool,
    pub benchmark: Benchmark,
    /// Query id to its planted table id.
    pub planted: BTreeMap<String, String>,
}

struct Domain {
    word: String,
    columns: Vec<String>,
    values: Vec<Vec<String>>,
}

impl Domain {
    fn new(lex: &mut Lexicon, rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(3..=5);
        Domain {
            word: lex.word(),
            columns: lex.words(n),
            values: (0..n).map(|_| lex.words(8)).collect(),
        }
    }

    fn rows(&self, cols: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
        (0..n)
            .map(|_| cols.iter().map(|&j| self.values[j].choose(rng).unwrap().clone()).collect())
            .collect()
    }
}

pub fn planted_benchmark(cfg: &PlantedConfig) -> PlantedBenchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lex = Lexicon::new(cfg.seed ^ 0x1e81c0);
    let family = cfg.distractors + 1;
    assert!(cfg.topics >= 2 * family, "need two distinct topic words per family member");
    let topic_words = Lexicon::new(cfg.topic_seed ^ 0x70b1c5).words(cfg.topics);
    let mut ids: Vec<usize> = (0..cfg.queries * family).collect();
    ids.shuffle(&mut rng);
    let mut ids = ids.into_iter().map(|i| format!("tbl_{i:05}"));

    let mut pool = TablePool::new(format!("planted-{}", cfg.seed));
    let mut queries = Vec::with_capacity(cfg.queries);
    let mut qrels = Vec::new();
    let mut planted = BTreeMap::new();
    for qi in 0..cfg.queries {
        let qid = format!("q{qi:03}");
        let domain = Domain::new(&mut lex, &mut rng);
        let join = rng.random_bool(cfg.join_fraction);
        let picked: Vec<&String> = topic_words.choose_multiple(&mut rng, 2 * family).collect();
        let topics: Vec<[String; 2]> = picked.chunks(2).map(|p| [p[0].clone(), p[1].clone()]).collect();
        let all: Vec<usize> = (0..domain.columns.len()).collect();
        let query_table = build(
            &qid,
            &domain.columns,
            domain.rows(&all, cfg.rows, &mut rng),
            TableMetadata::default(),
        );
        let verb = if join { "joinable" } else { "unionable" };
        let condition = format!("find {verb} tables about {} and {}", topics[0][0], topics[0][1]);

        for (j, topic) in topics.iter().enumerate() {
            let tid = ids.next().expect("enough ids");
            let meta = TableMetadata::new(
                format!("{} {} {}", domain.word, topic[0], topic[1]),
                format!("{} records of {}", topic[1], topic[0]),
            );
            let table = if join {
                // Key column plus fresh attribute columns.
                let extra = lex.words(rng.random_range(2..=3));
                let extra_vals: Vec<Vec<String>> = extra.iter().map(|_| lex.words(8)).collect();
                let mut header = vec![domain.columns[0].clone()];
                header.extend(extra.iter().cloned());
                let rows = (0..cfg.rows)
                    .map(|_| {
                        let mut r = vec![domain.values[0].choose(&mut rng).unwrap().clone()];
                        r.extend(extra_vals.iter().map(|v| v.choose(&mut rng).unwrap().clone()));
                        r
                    })
                    .collect();
                build(&tid, &header, rows, meta)
            } else {
                build(&tid, &domain.columns, domain.rows(&all, cfg.rows, &mut rng), meta)
            };
            pool.insert(table).expect("ids are unique");
            qrels.push(GoldLabel {
                query_id: qid.clone(),
                table_id: tid.clone(),
                relevance: if j == 0 { 2 } else { 1 },
            });
            if j == 0 {
                planted.insert(qid.clone(), tid);
            }
        }
        let spec = if join {
            QuerySpec::join(query_table, domain.columns[0].clone(), Some(condition), 10)
        } else {
            QuerySpec::union(query_table, Some(condition), 10)
        };
        queries.push(BenchmarkQuery { id: qid, spec });
    }
    PlantedBenchmark {
        pool,
        benchmark: Benchmark {
            max_grade: 2,
            queries,
            qrels,
        },
        planted,
    }
}

/// `n` loosely related tables over a shared vocabulary.
pub fn random_pool(n: usize, seed: u64) -> TablePool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lex = Lexicon::new(seed ^ 0x9001);
    let column_names = lex.words(400);
    let values = lex.words(3000);
    let caption_words = lex.words(600);
    let mut pool = TablePool::new(format!("random-{seed}"));
    for i in 0..n {
        let ncols = rng.random_range(3..=8);
        let header: Vec<String> = column_names.choose_multiple(&mut rng, ncols).cloned().collect();
        let nrows = rng.random_range(10..=40);
        let rows = (0..nrows)
            .map(|_| (0..ncols).map(|_| values.choose(&mut rng).unwrap().clone()).collect())
            .collect();
        let caption: Vec<&str> = caption_words
            .choose_multiple(&mut rng, 3)
            .map(String::as_str)
            .collect();
        let description: Vec<&str> = caption_words
            .choose_multiple(&mut rng, 6)
            .map(String::as_str)
            .collect();
        let meta = TableMetadata::new(caption.join(" "), description.join(" "));
        pool.insert(build(&format!("t{i:05}"), &header, rows, meta))
            .expect("ids are unique");
    }
    pool
}

/// Queries cycling through nl_only, nlc_union and nlc_join, each derived
/// from a random pool table (a row/column sample of it, plus caption words).
pub fn random_queries(pool: &TablePool, n: usize, k: usize, seed: u64) -> Vec<QuerySpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables: Vec<&TableRecord> = pool.iter().collect();
    (0..n)
        .map(|i| {
            let src = tables.choose(&mut rng).expect("non-empty pool");
            let condition = format!("tables about {}", src.metadata.caption);
            let ncols = rng.random_range(1..=src.columns.len().min(4));
            let cols: Vec<usize> = {
                let mut c: Vec<usize> = (0..src.columns.len()).collect();
                c.shuffle(&mut rng);
                c.truncate(ncols);
                c
            };
            let header: Vec<String> = cols.iter().map(|&j| src.columns[j].name.clone()).collect();
            let nrows = src.row_count.min(8);
            let rows = (0..nrows)
                .map(|r| cols.iter().map(|&j| src.columns[j].values[r].clone()).collect())
                .collect();
            let table = build(&format!("query{i}"), &header, rows, TableMetadata::default());
            match QueryMode::ALL[i % 3] {
                QueryMode::NlOnly => QuerySpec::nl_only(condition, k),
                QueryMode::NlcUnion => QuerySpec::union(table, Some(condition), k),
                QueryMode::NlcJoin => {
                    let key = header[0].clone();
                    QuerySpec::join(table, key, Some(condition), k)
                }
            }
        })
        .collect()
}

/// A tiny fixed table, handy for docs and smoke tests.
pub fn students_table() -> TableRecord {
    build(
        "students",
        &strings(&["name", "class", "math", "english", "average"]),
        vec![
            strings(&["Alice", "A", "92", "88", "90"]),
            strings(&["Bob", "A", "71", "80", "75.5"]),
            strings(&["Chen", "B", "85", "93", "89"]),
            strings(&["Dana", "B", "64", "70", "67"]),
        ],
        TableMetadata::new("student grades", "scores of students by class"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::validate_query;

    #[test]
    fn planted_shape() {
        let b = planted_benchmark(&PlantedConfig {
            queries: 10,
            ..Default::default()
        });
        assert_eq!(b.pool.len(), 50);
        assert_eq!(b.benchmark.queries.len(), 10);
        assert_eq!(b.benchmark.qrels.len(), 50);
        for q in &b.benchmark.queries {
            validate_query(&q.spec).unwrap();
            let planted = b.pool.get(&b.planted[&q.id]).unwrap();
            let cond = q.spec.condition_text().unwrap();
            let topic: Vec<&str> = planted.metadata.caption.split(' ').skip(1).collect();
            assert!(topic.iter().all(|w| cond.contains(w)));
        }
    }

    #[test]
    fn seeded() {
        let cfg = PlantedConfig {
            queries: 5,
            ..Default::default()
        };
        assert_eq!(planted_benchmark(&cfg), planted_benchmark(&cfg));
        let other = planted_benchmark(&PlantedConfig { seed: 1, ..cfg });
        assert_ne!(other.pool, planted_benchmark(&PlantedConfig { queries: 5, ..Default::default() }).pool);
    }

    #[test]
    fn random_pool_and_queries() {
        let pool = random_pool(30, 4);
        assert_eq!(pool.len(), 30);
        let qs = random_queries(&pool, 9, 5, 1);
        assert_eq!(qs.iter().filter(|q| q.mode == QueryMode::NlcJoin).count(), 3);
        for q in &qs {
            validate_query(q).unwrap();
        }
    }
}
