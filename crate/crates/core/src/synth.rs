//! Deterministic synthetic corpus, query log and relevance judgments with
//! planted semantic structure.
//!
//! Members belong to latent clusters. Each cluster owns a set of skill
//! concepts; some concepts are synonym groups with two unrelated surface
//! forms that share the same cluster affinity. A query names one surface
//! form, so relevant members holding only the other form share no token with
//! it. Lexical noise (skills and titles drawn from other clusters) makes
//! exact token matches an imperfect relevance signal.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{text_trigrams, words, FieldLayout};
use crate::indexer::MemberProfile;
use crate::pipeline::TrainRecord;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const JUDGMENTS_FILE: &str = "judgments.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const HELDOUT_FILE: &str = "heldout.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_members: usize,
    pub n_clusters: usize,
    /// Skill concepts owned by each cluster.
    pub skills_per_cluster: usize,
    /// How many of those concepts have two surface forms.
    pub synonym_groups_per_cluster: usize,
    pub titles_per_cluster: usize,
    pub n_companies: usize,
    pub skills_per_member: (usize, usize),
    /// Probability that a member's skill or title comes from another cluster.
    pub noise: f64,
    /// Exponent of the rank-frequency law for concepts, titles and companies.
    pub zipf_exponent: f64,
    pub queries_per_cluster: usize,
    pub train_examples: usize,
    pub heldout_examples: usize,
    /// Share of training negatives that hold the query's skill token but sit
    /// in another cluster.
    pub hard_negative_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 7,
            n_members: 50_000,
            n_clusters: 20,
            skills_per_cluster: 12,
            synonym_groups_per_cluster: 6,
            titles_per_cluster: 4,
            n_companies: 300,
            skills_per_member: (3, 5),
            noise: 0.35,
            zipf_exponent: 1.0,
            queries_per_cluster: 10,
            train_examples: 20_000,
            heldout_examples: 2_000,
            hard_negative_rate: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_clusters < 2 {
            return bad("n_clusters must be >= 2");
        }
        if self.n_members < self.n_clusters {
            return bad("n_members must be >= n_clusters");
        }
        if self.skills_per_cluster == 0 || self.titles_per_cluster == 0 || self.n_companies == 0 {
            return bad("every vocabulary size must be >= 1");
        }
        if self.synonym_groups_per_cluster > self.skills_per_cluster {
            return bad("synonym_groups_per_cluster exceeds skills_per_cluster");
        }
        let (lo, hi) = self.skills_per_member;
        if lo == 0 || lo > hi {
            return bad("skills_per_member must satisfy 1 <= min <= max");
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.hard_negative_rate) {
            return bad("noise and hard_negative_rate must lie in [0, 1]");
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return bad("zipf_exponent must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub qid: u64,
    pub text: String,
    pub facets: BTreeMap<String, Vec<String>>,
    /// The query's skill has a synonym it does not mention.
    pub synonym: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub qid: u64,
    pub relevant: Vec<u64>,
    #[serde(default)]
    pub synonym: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub members: Vec<MemberProfile>,
    pub queries: Vec<QueryRecord>,
    pub judgments: Vec<Judgment>,
    pub train: Vec<TrainRecord>,
    pub heldout: Vec<TrainRecord>,
}

struct Cluster {
    /// Each concept is one or two surface forms.
    skills: Vec<Vec<String>>,
    titles: Vec<String>,
}

struct WordGen {
    seen: HashSet<String>,
}

impl WordGen {
    const ONSETS: &'static [&'static str] = &[
        "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
        "br", "cr", "dr", "gl", "pl", "st", "tr", "sk",
    ];
    const VOWELS: &'static [&'static str] = &["a", "e", "i", "o", "u", "ai", "ou"];

    fn word(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let n = rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..n {
                w.push_str(Self::ONSETS.choose(rng).unwrap());
                w.push_str(Self::VOWELS.choose(rng).unwrap());
            }
            if rng.gen_bool(0.5) {
                w.push_str(["n", "r", "x", "l", "s"].choose(rng).unwrap());
            }
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn zipf(n: usize, s: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| 1.0 / (r as f64).powf(s))).expect("n >= 1")
}

struct World {
    clusters: Vec<Cluster>,
    companies: Vec<String>,
    concept_dist: WeightedIndex<f64>,
    title_dist: WeightedIndex<f64>,
    company_dist: WeightedIndex<f64>,
}

impl World {
    fn new(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut gen = WordGen { seen: HashSet::new() };
        let clusters = (0..cfg.n_clusters)
            .map(|_| Cluster {
                skills: (0..cfg.skills_per_cluster)
                    .map(|i| {
                        // Synonym groups are spread evenly over the concept ranks.
                        let (g, n) = (cfg.synonym_groups_per_cluster, cfg.skills_per_cluster);
                        let forms = if (i + 1) * g / n > i * g / n { 2 } else { 1 };
                        (0..forms).map(|_| gen.word(rng)).collect()
                    })
                    .collect(),
                titles: (0..cfg.titles_per_cluster).map(|_| gen.word(rng)).collect(),
            })
            .collect();
        World {
            clusters,
            companies: (0..cfg.n_companies).map(|_| gen.word(rng)).collect(),
            concept_dist: zipf(cfg.skills_per_cluster, cfg.zipf_exponent),
            title_dist: zipf(cfg.titles_per_cluster, cfg.zipf_exponent),
            company_dist: zipf(cfg.n_companies, cfg.zipf_exponent),
        }
    }

    /// A cluster other than `c`, or `c` itself with probability `1 - noise`.
    fn source_cluster(&self, c: usize, noise: f64, rng: &mut ChaCha8Rng) -> usize {
        if rng.gen_bool(noise) {
            let other = rng.gen_range(0..self.clusters.len() - 1);
            if other >= c {
                other + 1
            } else {
                other
            }
        } else {
            c
        }
    }

    fn member(&self, cfg: &SyntheticConfig, uid: u64, c: usize, layout: &FieldLayout, rng: &mut ChaCha8Rng) -> MemberProfile {
        let n_skills = rng.gen_range(cfg.skills_per_member.0..=cfg.skills_per_member.1);
        let mut skills: Vec<String> = Vec::with_capacity(n_skills);
        let mut attempts = 0;
        while skills.len() < n_skills && attempts < 20 * n_skills {
            attempts += 1;
            let src = self.source_cluster(c, cfg.noise, rng);
            let forms = &self.clusters[src].skills[self.concept_dist.sample(rng)];
            let form = forms.choose(rng).unwrap();
            if !skills.contains(form) {
                skills.push(form.clone());
            }
        }
        let src = self.source_cluster(c, cfg.noise, rng);
        let title = self.clusters[src].titles[self.title_dist.sample(rng)].clone();
        let company = self.companies[self.company_dist.sample(rng)].clone();
        let headline = std::iter::once(title.as_str())
            .chain(skills.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ");
        let facet = |name: &str| layout.facet_id(name).expect("default layout facet");
        let fields = BTreeMap::from([
            (layout.text_field, text_trigrams(&headline)),
            (facet("skill"), skills),
            (facet("title"), vec![title]),
            (facet("company"), vec![company]),
            (layout.word_field, words(&headline)),
        ]);
        MemberProfile { uid, fields }
    }

    /// A skill query for cluster `c`: the skill is typed as text and tagged
    /// as a skill facet.
    fn query(&self, c: usize, rng: &mut ChaCha8Rng) -> (String, bool) {
        let forms = &self.clusters[c].skills[self.concept_dist.sample(rng)];
        (forms.choose(rng).unwrap().clone(), forms.len() > 1)
    }
}

fn skill_query(skill: &str) -> (String, BTreeMap<String, Vec<String>>) {
    (
        skill.to_string(),
        BTreeMap::from([("skill".to_string(), vec![skill.to_string()])]),
    )
}

pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let layout = FieldLayout::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = World::new(cfg, &mut rng);

    let mut members = Vec::with_capacity(cfg.n_members);
    let mut cluster_of = Vec::with_capacity(cfg.n_members);
    let mut by_cluster: Vec<Vec<u64>> = vec![Vec::new(); cfg.n_clusters];
    for i in 0..cfg.n_members {
        let uid = i as u64 + 1;
        let c = if i < cfg.n_clusters { i } else { rng.gen_range(0..cfg.n_clusters) };
        members.push(world.member(cfg, uid, c, &layout, &mut rng));
        cluster_of.push(c);
        by_cluster[c].push(uid);
    }

    let skill_field = layout.facet_id("skill").expect("default layout facet");
    let mut holders: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for m in &members {
        for s in &m.fields[&skill_field] {
            holders.entry(s.as_str()).or_default().push(m.uid);
        }
    }

    let mut queries = Vec::new();
    let mut judgments = Vec::new();
    for c in 0..cfg.n_clusters {
        for _ in 0..cfg.queries_per_cluster {
            let qid = queries.len() as u64 + 1;
            let (skill, synonym) = world.query(c, &mut rng);
            let (text, facets) = skill_query(&skill);
            queries.push(QueryRecord { qid, text, facets, synonym });
            judgments.push(Judgment {
                qid,
                relevant: by_cluster[c].clone(),
                synonym,
            });
        }
    }

    let log = |n: usize, rng: &mut ChaCha8Rng| -> Vec<TrainRecord> {
        (0..n)
            .map(|_| {
                let c = rng.gen_range(0..cfg.n_clusters);
                let (skill, _) = world.query(c, rng);
                let positive_uid = *by_cluster[c].choose(rng).unwrap();
                let hard: Vec<u64> = if rng.gen_bool(cfg.hard_negative_rate) {
                    holders
                        .get(skill.as_str())
                        .map(|us| us.iter().copied().filter(|&u| cluster_of[u as usize - 1] != c).collect())
                        .unwrap_or_default()
                } else {
                    Vec::new()
                };
                let negative_uid = match hard.choose(rng) {
                    Some(&u) => u,
                    None => loop {
                        let u = rng.gen_range(1..=cfg.n_members as u64);
                        if cluster_of[u as usize - 1] != c {
                            break u;
                        }
                    },
                };
                let (text, facets) = skill_query(&skill);
                TrainRecord { text, facets, positive_uid, negative_uid }
            })
            .collect()
    };
    let train = log(cfg.train_examples, &mut rng);
    let heldout = log(cfg.heldout_examples, &mut rng);

    Ok(SyntheticData {
        members,
        queries,
        judgments,
        train,
        heldout,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read newline-delimited JSON, naming the file and line on parse errors.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::input(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

impl SyntheticData {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(CORPUS_FILE), &self.members)?;
        write_jsonl(&dir.join(QUERIES_FILE), &self.queries)?;
        write_jsonl(&dir.join(JUDGMENTS_FILE), &self.judgments)?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.train)?;
        write_jsonl(&dir.join(HELDOUT_FILE), &self.heldout)
    }
}
