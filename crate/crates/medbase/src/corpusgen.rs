//! Deterministic synthetic corpus generator.
//!
//! Produces MEDLINE-shaped gzip archives (with digest sidecars) plus a
//! manifest of exact expected outcomes: per-table row counts, error counts
//! by taxonomy code, and per-file PMID lists. The manifest is the oracle the
//! acceptance suite diffs pipeline output against.
//!
//! Every citation's content is a pure function of `(seed, pmid)`, so an
//! injected duplicate is byte-identical to its original and its expected
//! collision count is computable. Expected counts assume the default load
//! policy (duplicates skipped, overflow rejected).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use md5::{Digest, Md5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fetch::{hex_digest, Repository};
use crate::load::ErrorCode;
use crate::record::{
    AuthorEntry, ChemicalEntry, CitationRecord, CommentsCorrectionsEntry, DataBankEntry,
    GrantEntry, InvestigatorEntry, KeywordEntry, MeshEntry, PersonalNameEntry,
};

const PMID_BASE: i64 = 1_000_000;

/// Length that trips the 64-char cap on the initials column.
const OVERLONG_INITIALS_LEN: usize = 80;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub citations: u64,
    pub files: u32,
    pub seed: u64,
    /// Citations re-emitted under an already-used PMID.
    pub duplicate_pmids: u64,
    /// Citations whose first author carries overlong initials.
    pub overlong_fields: u64,
    /// PMIDs named in a trailing DeleteCitation block.
    pub deletions: u64,
    pub distinct_journals: u32,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            citations: 0,
            files: 1,
            seed: 0,
            duplicate_pmids: 0,
            overlong_fields: 0,
            deletions: 0,
            distinct_journals: 20,
        }
    }
}

impl CorpusSpec {
    fn validate(&self) -> Result<()> {
        if self.files == 0 {
            return Err(Error::InvalidSpec("files must be positive".into()));
        }
        if self.distinct_journals == 0 {
            return Err(Error::InvalidSpec("distinct_journals must be positive".into()));
        }
        if self.deletions > self.citations {
            return Err(Error::InvalidSpec(format!(
                "deletions ({}) exceed citations ({})",
                self.deletions, self.citations
            )));
        }
        if self.duplicate_pmids > self.citations {
            return Err(Error::InvalidSpec(format!(
                "duplicate_pmids ({}) exceed citations ({})",
                self.duplicate_pmids, self.citations
            )));
        }
        // Fault targets are drawn from disjoint citation ranges so expected
        // counts stay exact; the duplicate copies themselves occupy the last
        // `duplicate_pmids` slots.
        let needed = self
            .duplicate_pmids
            .saturating_mul(2)
            .saturating_add(self.deletions)
            .saturating_add(self.overlong_fields);
        if needed > self.citations {
            return Err(Error::InvalidSpec(format!(
                "2*duplicates + deletions + overlong ({needed}) exceed citations ({})",
                self.citations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileManifest {
    pub name: String,
    pub repository: Repository,
    pub citations: u64,
    pub deletions: u64,
    /// Document-order PMIDs, duplicates included.
    pub pmids: Vec<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: CorpusSpec,
    pub files: Vec<FileManifest>,
    /// Citation events the parser must yield over the whole corpus.
    pub citation_events: u64,
    pub deletion_events: u64,
    pub distinct_pmids: u64,
    /// Distinct journal titles among rows that survive deletions.
    pub distinct_journals: u64,
    pub expected_table_counts: BTreeMap<String, u64>,
    pub expected_errors_by_code: BTreeMap<ErrorCode, u64>,
}

impl CorpusManifest {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidSpec(format!("manifest serialization: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<CorpusManifest> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse manifest {}: {e}", path.display())))
    }
}

// === embedded word lists =============================================
// Realistic in shape, not in meaning.

const LAST_NAMES: &[&str] = &[
    "Martin", "Lefebvre", "Okafor", "Tanaka", "Silva", "Novak", "Hansen", "Rossi", "Kowalski",
    "Ivanov", "Schmidt", "Dubois", "M\u{fc}ller", "Garc\u{ed}a", "Nguyen", "Kim", "Chen",
    "Patel", "Andersson", "Moreau", "Fern\u{e1}ndez", "Yamamoto", "Costa", "Petrov",
];

const FORE_NAMES: &[&str] = &[
    "Emeric", "Mathilde", "H\u{e9}l\u{e8}ne", "Marion", "Fabien", "Arnaud", "Ana", "Jun",
    "Wei", "Olga", "Lars", "Sofia", "Pierre", "Ingrid", "Marco", "Yuki",
];

const TITLE_WORDS: &[&str] = &[
    "expression", "analysis", "clinical", "outcomes", "receptor", "signaling", "cohort",
    "randomized", "trial", "murine", "hepatic", "cardiac", "inhibition", "pathway",
    "biomarkers", "prevalence", "genomic", "screening", "therapy", "resistance",
];

const JOURNAL_CITIES: &[&str] = &[
    "Rouen", "Uppsala", "Kyoto", "Porto", "Gda\u{144}sk", "Trieste", "Leuven", "Tromsø",
];

const DESCRIPTORS: &[&str] = &[
    "Humans", "Animals", "Mice", "Female", "Male", "Adult", "Aged", "Liver", "Neoplasms",
    "Risk Factors", "Treatment Outcome", "Cell Line", "Mutation", "Signal Transduction",
    "Prospective Studies", "Gene Expression Regulation",
];

const QUALIFIERS: &[&str] = &[
    "genetics", "metabolism", "drug effects", "epidemiology", "pathology", "therapy",
    "diagnosis", "immunology",
];

const SUBSTANCES: &[&str] = &[
    "Vitamin A", "Interleukin-6", "Collagen", "Insulin", "Dopamine", "Caffeine",
    "Tumor Necrosis Factor-alpha", "Glucose", "Serotonin", "Cisplatin", "Metformin",
    "Hemoglobins",
];

const KEYWORD_WORDS: &[&str] = &[
    "microbiome", "epigenetics", "fibrosis", "immunotherapy", "sequencing", "stem cells",
    "inflammation", "prognosis", "machine learning", "proteomics",
];

const GENES: &[&str] = &["BRCA1", "TP53", "EGFR", "KRAS", "MYC", "APOE", "TNF", "VEGFA"];

const AGENCIES: &[&str] = &["NIH", "Inserm", "Wellcome Trust", "DFG", "JSPS"];

const COUNTRIES: &[&str] = &["United States", "France", "Japan", "Germany", "Sweden"];

const LANGUAGES: &[&str] = &["eng", "eng", "eng", "fre", "ger", "spa"];

const PUB_TYPES: &[&str] = &[
    "Journal Article",
    "Review",
    "Case Reports",
    "Comparative Study",
];

const BANKS: &[&str] = &["GENBANK", "ClinicalTrials.gov", "PDB"];

const SUBSETS: &[&str] = &["IM", "AIM", "E"];

fn journal_pool(distinct: u32) -> Vec<String> {
    (0..distinct)
        .map(|i| {
            let city = JOURNAL_CITIES[i as usize % JOURNAL_CITIES.len()];
            format!("Journal of Synthetic Biomedicine {city} Series {i:02}")
        })
        .collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &'a [&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

/// Per-citation RNG; content is a pure function of (seed, pmid).
fn citation_rng(seed: u64, pmid: i64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(pmid as u64),
    )
}

/// A generated citation plus the rendering detail the flat record cannot
/// carry (abstract segmentation).
#[derive(Debug, Clone)]
struct GenCitation {
    record: CitationRecord,
    abstract_segments: Vec<(Option<String>, String)>,
}

fn gen_sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut out = String::new();
    for i in 0..words {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(pick(rng, TITLE_WORDS));
    }
    out.push('.');
    out
}

fn gen_citation(
    seed: u64,
    pmid: i64,
    journal_title: &str,
    overlong_initials: bool,
) -> GenCitation {
    let mut rng = citation_rng(seed, pmid);
    let mut rec = CitationRecord {
        pmid,
        status: Some("MEDLINE".to_string()),
        ..Default::default()
    };

    // Title; some titles carry characters that must round-trip as entities.
    let mut title = gen_sentence(&mut rng, rng.gen_range(4..=9));
    match rng.gen_range(0..100) {
        0..=7 => title = format!("Expression & regulation: {title}"),
        8..=12 => title = format!("Outcomes <continued series>: {title}"),
        _ => {}
    }
    rec.article_title = Some(title);

    // Abstract: none, single unlabeled, or labeled segments.
    let mut segments: Vec<(Option<String>, String)> = Vec::new();
    match rng.gen_range(0..10) {
        0..=2 => {}
        3..=7 => segments.push((None, gen_sentence(&mut rng, rng.gen_range(10..=24)))),
        _ => {
            for label in ["OBJECTIVE", "METHODS", "RESULTS"] {
                segments.push((
                    Some(label.to_string()),
                    gen_sentence(&mut rng, rng.gen_range(8..=16)),
                ));
            }
        }
    }
    if !segments.is_empty() {
        let joined = segments
            .iter()
            .map(|(label, text)| match label {
                Some(l) => format!("{l}: {text}"),
                None => text.clone(),
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        rec.abstract_text = Some(joined);
    }

    // Journal block.
    rec.journal.title = Some(journal_title.to_string());
    rec.journal.iso_abbrev = Some(format!(
        "J Synth Biomed {}",
        journal_title.chars().rev().take(2).collect::<String>()
    ));
    rec.journal.issn = Some(format!(
        "{:04}-{:04}",
        rng.gen_range(0..10000),
        rng.gen_range(0..10000)
    ));
    rec.journal.volume = Some(rng.gen_range(1..400).to_string());
    rec.journal.issue = Some(rng.gen_range(1..52).to_string());
    if rng.gen_range(0..100) < 85 {
        rec.journal.pub_year = Some(rng.gen_range(2000..=2017));
        rec.journal.pub_month = Some(rng.gen_range(1..=12));
        rec.journal.pub_day = Some(rng.gen_range(1..=28));
    } else {
        rec.journal.medline_date_raw = Some(format!(
            "{} {}-{}",
            rng.gen_range(1998..=2016),
            ["Jan", "Apr", "Jul", "Nov"][rng.gen_range(0..4)],
            ["Feb", "Jun", "Sep", "Dec"][rng.gen_range(0..4)],
        ));
    }

    rec.pagination = Some(format!(
        "{}-{}",
        rng.gen_range(1..2000),
        rng.gen_range(2000..4000)
    ));
    rec.language = Some(pick(&mut rng, LANGUAGES).to_string());
    rec.country = Some(pick(&mut rng, COUNTRIES).to_string());
    rec.nlm_unique_id = Some(format!("{:07}", rng.gen_range(100000..9999999)));

    let year = rng.gen_range(2015..=2017);
    let month = rng.gen_range(1..=12u32);
    let day = rng.gen_range(1..=28u32);
    rec.dates.created = chrono::NaiveDate::from_ymd_opt(year, month, day);
    if rng.gen_bool(0.6) {
        rec.dates.completed = rec.dates.created.and_then(|d| d.succ_opt());
    }
    if rng.gen_bool(0.4) {
        rec.dates.revised = rec.dates.created;
    }

    // Authors: 1..=5, the first always personal so overlong initials have a
    // stable target.
    let author_count = rng.gen_range(1..=5);
    for ordinal in 1..=author_count {
        let collective = ordinal > 1 && rng.gen_range(0..100) < 5;
        if collective {
            rec.authors.push(AuthorEntry {
                ordinal,
                collective_name: Some(format!(
                    "{} {} Study Group",
                    pick(&mut rng, TITLE_WORDS),
                    pick(&mut rng, TITLE_WORDS)
                )),
                ..Default::default()
            });
            continue;
        }
        let last = pick(&mut rng, LAST_NAMES).to_string();
        let fore = pick(&mut rng, FORE_NAMES).to_string();
        let mut initials: String = fore.chars().take(1).collect();
        if rng.gen_bool(0.4) {
            initials.push(last.chars().next().unwrap_or('X'));
        }
        if ordinal == 1 && overlong_initials {
            initials = "X".repeat(OVERLONG_INITIALS_LEN);
        }
        let affiliation = if rng.gen_bool(0.4) {
            Some(format!(
                "Department of {}, University of {}, {}",
                pick(&mut rng, TITLE_WORDS),
                pick(&mut rng, JOURNAL_CITIES),
                pick(&mut rng, COUNTRIES)
            ))
        } else {
            None
        };
        let suffix = if rng.gen_range(0..100) < 8 {
            Some("Jr".to_string())
        } else {
            None
        };
        rec.authors.push(AuthorEntry {
            ordinal,
            last_name: Some(last),
            fore_name: Some(fore),
            initials: Some(initials),
            suffix,
            collective_name: None,
            affiliation,
        });
    }

    for _ in 0..rng.gen_range(0..=3) {
        rec.chemicals.push(ChemicalEntry {
            registry_number: Some(format!("{}-{}-{}",
                rng.gen_range(1000..99999),
                rng.gen_range(10..99),
                rng.gen_range(0..9),
            )),
            name_of_substance: pick(&mut rng, SUBSTANCES).to_string(),
        });
    }

    // MeSH: bias the first heading toward Humans so the canned join query
    // has something to match.
    let mesh_count = rng.gen_range(0..=6);
    for i in 0..mesh_count {
        let descriptor = if i == 0 && rng.gen_bool(0.6) {
            "Humans".to_string()
        } else {
            pick(&mut rng, DESCRIPTORS).to_string()
        };
        let mut qualifiers = Vec::new();
        for _ in 0..rng.gen_range(0..=2) {
            qualifiers.push((pick(&mut rng, QUALIFIERS).to_string(), rng.gen_bool(0.3)));
        }
        rec.mesh.push(MeshEntry {
            descriptor,
            descriptor_major: rng.gen_bool(0.25),
            qualifiers,
        });
    }

    for _ in 0..rng.gen_range(0..=4) {
        rec.keywords.push(KeywordEntry {
            keyword: pick(&mut rng, KEYWORD_WORDS).to_string(),
            major_topic: rng.gen_bool(0.2),
        });
    }

    for _ in 0..rng.gen_range(0..=2) {
        rec.grants.push(GrantEntry {
            grant_id: Some(format!("R01-{:05}", rng.gen_range(0..100000))),
            acronym: Some("CA".to_string()),
            agency: Some(pick(&mut rng, AGENCIES).to_string()),
            country: Some(pick(&mut rng, COUNTRIES).to_string()),
        });
    }

    rec.publication_types.push("Journal Article".to_string());
    if rng.gen_bool(0.3) {
        rec.publication_types
            .push(PUB_TYPES[rng.gen_range(1..PUB_TYPES.len())].to_string());
    }

    if rng.gen_bool(0.25) {
        let mut bank = DataBankEntry {
            name: pick(&mut rng, BANKS).to_string(),
            accession_numbers: Vec::new(),
        };
        for _ in 0..rng.gen_range(1..=3) {
            bank.accession_numbers
                .push(format!("X{:06}", rng.gen_range(0..1000000)));
        }
        rec.data_banks.push(bank);
    }

    for _ in 0..rng.gen_range(0..=2) {
        rec.gene_symbols.push(pick(&mut rng, GENES).to_string());
    }

    for _ in 0..rng.gen_range(0..=2) {
        rec.comments_corrections.push(CommentsCorrectionsEntry {
            ref_type: Some(["Cites", "ErratumFor", "CommentOn"][rng.gen_range(0..3)].to_string()),
            ref_pmid: Some(PMID_BASE + rng.gen_range(1..1000)),
            note: if rng.gen_bool(0.5) {
                Some(gen_sentence(&mut rng, 4))
            } else {
                None
            },
        });
    }

    if rng.gen_bool(0.15) {
        rec.personal_name_subjects.push(PersonalNameEntry {
            last_name: Some(pick(&mut rng, LAST_NAMES).to_string()),
            fore_name: Some(pick(&mut rng, FORE_NAMES).to_string()),
            initials: None,
            suffix: None,
        });
    }

    for _ in 0..rng.gen_range(0..=2) {
        rec.investigators.push(InvestigatorEntry {
            last_name: Some(pick(&mut rng, LAST_NAMES).to_string()),
            fore_name: None,
            initials: Some("R".to_string()),
            suffix: None,
            affiliation: None,
        });
    }

    rec.citation_subsets
        .push(pick(&mut rng, SUBSETS).to_string());

    GenCitation {
        record: rec,
        abstract_segments: segments,
    }
}

// === XML rendering ====================================================

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

fn tag(out: &mut String, indent: usize, name: &str, value: &str) {
    out.push_str(&" ".repeat(indent));
    out.push('<');
    out.push_str(name);
    out.push('>');
    out.push_str(&esc(value));
    out.push_str("</");
    out.push_str(name);
    out.push_str(">\n");
}

fn opt_tag(out: &mut String, indent: usize, name: &str, value: &Option<String>) {
    if let Some(v) = value {
        tag(out, indent, name, v);
    }
}

fn date_block(out: &mut String, indent: usize, name: &str, date: &Option<chrono::NaiveDate>) {
    use chrono::Datelike;
    if let Some(d) = date {
        out.push_str(&format!("{}<{}>\n", " ".repeat(indent), name));
        tag(out, indent + 2, "Year", &d.year().to_string());
        tag(out, indent + 2, "Month", &format!("{:02}", d.month()));
        tag(out, indent + 2, "Day", &format!("{:02}", d.day()));
        out.push_str(&format!("{}</{}>\n", " ".repeat(indent), name));
    }
}

fn yn(flag: bool) -> &'static str {
    if flag {
        "Y"
    } else {
        "N"
    }
}

fn render_citation(out: &mut String, gen: &GenCitation) {
    let rec = &gen.record;
    out.push_str("  <MedlineCitation Status=\"MEDLINE\" Owner=\"NLM\">\n");
    out.push_str(&format!(
        "    <PMID Version=\"1\">{}</PMID>\n",
        rec.pmid
    ));
    date_block(out, 4, "DateCreated", &rec.dates.created);
    date_block(out, 4, "DateCompleted", &rec.dates.completed);
    date_block(out, 4, "DateRevised", &rec.dates.revised);

    out.push_str("    <Article PubModel=\"Print\">\n");
    out.push_str("      <Journal>\n");
    opt_tag(out, 8, "ISSN", &rec.journal.issn);
    out.push_str("        <JournalIssue CitedMedium=\"Print\">\n");
    opt_tag(out, 10, "Volume", &rec.journal.volume);
    opt_tag(out, 10, "Issue", &rec.journal.issue);
    out.push_str("          <PubDate>\n");
    if let Some(raw) = &rec.journal.medline_date_raw {
        tag(out, 12, "MedlineDate", raw);
    } else {
        if let Some(y) = rec.journal.pub_year {
            tag(out, 12, "Year", &y.to_string());
        }
        if let Some(m) = rec.journal.pub_month {
            tag(out, 12, "Month", &format!("{m:02}"));
        }
        if let Some(d) = rec.journal.pub_day {
            tag(out, 12, "Day", &format!("{d:02}"));
        }
    }
    out.push_str("          </PubDate>\n");
    out.push_str("        </JournalIssue>\n");
    opt_tag(out, 8, "Title", &rec.journal.title);
    opt_tag(out, 8, "ISOAbbreviation", &rec.journal.iso_abbrev);
    out.push_str("      </Journal>\n");

    opt_tag(out, 6, "ArticleTitle", &rec.article_title);
    if let Some(p) = &rec.pagination {
        out.push_str("      <Pagination>\n");
        tag(out, 8, "MedlinePgn", p);
        out.push_str("      </Pagination>\n");
    }
    if !gen.abstract_segments.is_empty() {
        out.push_str("      <Abstract>\n");
        for (label, text) in &gen.abstract_segments {
            match label {
                Some(l) => out.push_str(&format!(
                    "        <AbstractText Label=\"{}\" NlmCategory=\"{}\">{}</AbstractText>\n",
                    esc(l),
                    esc(l),
                    esc(text)
                )),
                None => tag(out, 8, "AbstractText", text),
            }
        }
        out.push_str("      </Abstract>\n");
    }

    if !rec.authors.is_empty() {
        out.push_str("      <AuthorList CompleteYN=\"Y\">\n");
        for a in &rec.authors {
            out.push_str("        <Author ValidYN=\"Y\">\n");
            if let Some(c) = &a.collective_name {
                tag(out, 10, "CollectiveName", c);
            } else {
                opt_tag(out, 10, "LastName", &a.last_name);
                opt_tag(out, 10, "ForeName", &a.fore_name);
                opt_tag(out, 10, "Initials", &a.initials);
                opt_tag(out, 10, "Suffix", &a.suffix);
            }
            if let Some(aff) = &a.affiliation {
                out.push_str("          <AffiliationInfo>\n");
                tag(out, 12, "Affiliation", aff);
                out.push_str("          </AffiliationInfo>\n");
            }
            out.push_str("        </Author>\n");
        }
        out.push_str("      </AuthorList>\n");
    }

    opt_tag(out, 6, "Language", &rec.language);

    if !rec.data_banks.is_empty() {
        out.push_str("      <DataBankList CompleteYN=\"Y\">\n");
        for b in &rec.data_banks {
            out.push_str("        <DataBank>\n");
            tag(out, 10, "DataBankName", &b.name);
            if !b.accession_numbers.is_empty() {
                out.push_str("          <AccessionNumberList>\n");
                for acc in &b.accession_numbers {
                    tag(out, 12, "AccessionNumber", acc);
                }
                out.push_str("          </AccessionNumberList>\n");
            }
            out.push_str("        </DataBank>\n");
        }
        out.push_str("      </DataBankList>\n");
    }

    if !rec.grants.is_empty() {
        out.push_str("      <GrantList CompleteYN=\"Y\">\n");
        for g in &rec.grants {
            out.push_str("        <Grant>\n");
            opt_tag(out, 10, "GrantID", &g.grant_id);
            opt_tag(out, 10, "Acronym", &g.acronym);
            opt_tag(out, 10, "Agency", &g.agency);
            opt_tag(out, 10, "Country", &g.country);
            out.push_str("        </Grant>\n");
        }
        out.push_str("      </GrantList>\n");
    }

    if !rec.publication_types.is_empty() {
        out.push_str("      <PublicationTypeList>\n");
        for p in &rec.publication_types {
            tag(out, 8, "PublicationType", p);
        }
        out.push_str("      </PublicationTypeList>\n");
    }
    out.push_str("    </Article>\n");

    out.push_str("    <MedlineJournalInfo>\n");
    opt_tag(out, 6, "Country", &rec.country);
    opt_tag(out, 6, "NlmUniqueID", &rec.nlm_unique_id);
    out.push_str("    </MedlineJournalInfo>\n");

    if !rec.chemicals.is_empty() {
        out.push_str("    <ChemicalList>\n");
        for c in &rec.chemicals {
            out.push_str("      <Chemical>\n");
            opt_tag(out, 8, "RegistryNumber", &c.registry_number);
            tag(out, 8, "NameOfSubstance", &c.name_of_substance);
            out.push_str("      </Chemical>\n");
        }
        out.push_str("    </ChemicalList>\n");
    }

    for s in &rec.citation_subsets {
        tag(out, 4, "CitationSubset", s);
    }

    if !rec.comments_corrections.is_empty() {
        out.push_str("    <CommentsCorrectionsList>\n");
        for cc in &rec.comments_corrections {
            out.push_str(&format!(
                "      <CommentsCorrections RefType=\"{}\">\n",
                esc(cc.ref_type.as_deref().unwrap_or("Cites"))
            ));
            if let Some(p) = cc.ref_pmid {
                out.push_str(&format!(
                    "        <PMID Version=\"1\">{p}</PMID>\n"
                ));
            }
            opt_tag(out, 8, "Note", &cc.note);
            out.push_str("      </CommentsCorrections>\n");
        }
        out.push_str("    </CommentsCorrectionsList>\n");
    }

    if !rec.gene_symbols.is_empty() {
        out.push_str("    <GeneSymbolList>\n");
        for g in &rec.gene_symbols {
            tag(out, 6, "GeneSymbol", g);
        }
        out.push_str("    </GeneSymbolList>\n");
    }

    if !rec.mesh.is_empty() {
        out.push_str("    <MeshHeadingList>\n");
        for m in &rec.mesh {
            out.push_str("      <MeshHeading>\n");
            out.push_str(&format!(
                "        <DescriptorName MajorTopicYN=\"{}\">{}</DescriptorName>\n",
                yn(m.descriptor_major),
                esc(&m.descriptor)
            ));
            for (q, major) in &m.qualifiers {
                out.push_str(&format!(
                    "        <QualifierName MajorTopicYN=\"{}\">{}</QualifierName>\n",
                    yn(*major),
                    esc(q)
                ));
            }
            out.push_str("      </MeshHeading>\n");
        }
        out.push_str("    </MeshHeadingList>\n");
    }

    if !rec.personal_name_subjects.is_empty() {
        out.push_str("    <PersonalNameSubjectList>\n");
        for p in &rec.personal_name_subjects {
            out.push_str("      <PersonalNameSubject>\n");
            opt_tag(out, 8, "LastName", &p.last_name);
            opt_tag(out, 8, "ForeName", &p.fore_name);
            opt_tag(out, 8, "Initials", &p.initials);
            opt_tag(out, 8, "Suffix", &p.suffix);
            out.push_str("      </PersonalNameSubject>\n");
        }
        out.push_str("    </PersonalNameSubjectList>\n");
    }

    if !rec.investigators.is_empty() {
        out.push_str("    <InvestigatorList>\n");
        for p in &rec.investigators {
            out.push_str("      <Investigator ValidYN=\"Y\">\n");
            opt_tag(out, 8, "LastName", &p.last_name);
            opt_tag(out, 8, "ForeName", &p.fore_name);
            opt_tag(out, 8, "Initials", &p.initials);
            opt_tag(out, 8, "Suffix", &p.suffix);
            if let Some(aff) = &p.affiliation {
                out.push_str("        <AffiliationInfo>\n");
                tag(out, 10, "Affiliation", aff);
                out.push_str("        </AffiliationInfo>\n");
            }
            out.push_str("      </Investigator>\n");
        }
        out.push_str("    </InvestigatorList>\n");
    }

    if !rec.keywords.is_empty() {
        out.push_str("    <KeywordList Owner=\"NOTNLM\">\n");
        for k in &rec.keywords {
            out.push_str(&format!(
                "      <Keyword MajorTopicYN=\"{}\">{}</Keyword>\n",
                yn(k.major_topic),
                esc(&k.keyword)
            ));
        }
        out.push_str("    </KeywordList>\n");
    }

    out.push_str("  </MedlineCitation>\n");
}

// === generation =======================================================

/// Archive stems continue one sequence across both repositories.
fn file_stem(index: usize) -> String {
    format!("medline17n{:04}", index + 1)
}

/// Row contribution of one record per table, minus any rejected rows.
fn add_expected_rows(
    counts: &mut BTreeMap<String, u64>,
    rec: &CitationRecord,
    overlong: bool,
) {
    let mut add = |table: &str, n: u64| {
        if n > 0 {
            *counts.entry(table.to_string()).or_insert(0) += n;
        }
    };
    add("medline_citation", 1);
    // The overlong first-author row is rejected by the loader.
    add(
        "medline_author",
        rec.authors.len() as u64 - if overlong { 1 } else { 0 },
    );
    add("medline_chemical_list", rec.chemicals.len() as u64);
    add(
        "medline_mesh",
        rec.mesh.iter().map(|m| m.row_count() as u64).sum(),
    );
    add("medline_keyword_list", rec.keywords.len() as u64);
    add("medline_grant", rec.grants.len() as u64);
    add(
        "medline_publication_type",
        rec.publication_types.len() as u64,
    );
    add(
        "medline_data_bank",
        rec.data_banks.iter().map(|b| b.row_count() as u64).sum(),
    );
    add("medline_gene_symbol", rec.gene_symbols.len() as u64);
    add(
        "medline_comments_corrections",
        rec.comments_corrections.len() as u64,
    );
    add(
        "medline_personal_name_subject",
        rec.personal_name_subjects.len() as u64,
    );
    add("medline_investigator", rec.investigators.len() as u64);
    add("medline_citation_subset", rec.citation_subsets.len() as u64);
}

/// Generates the corpus into `out_dir` (`baseline/`, `updatefiles/`,
/// `manifest.json`). Byte-identical output for identical spec and seed.
pub fn generate(spec: &CorpusSpec, out_dir: &Path) -> Result<CorpusManifest> {
    spec.validate()?;
    let n = spec.citations;
    let dup = spec.duplicate_pmids;
    let primary_count = n - dup;

    // Slot layout: [dup sources][deletion targets][overlong targets]
    // [plain citations][duplicate copies].
    let pmid_for_slot = |slot: u64| -> i64 {
        if slot < primary_count {
            PMID_BASE + 1 + slot as i64
        } else {
            PMID_BASE + 1 + (slot - primary_count) as i64
        }
    };
    let deletion_range = dup..dup + spec.deletions;
    let overlong_range = dup + spec.deletions..dup + spec.deletions + spec.overlong_fields;

    let journals = journal_pool(spec.distinct_journals);
    let journal_for_pmid = |pmid: i64| -> &str {
        let idx = (pmid - PMID_BASE - 1) as usize % journals.len();
        &journals[idx]
    };
    let slot_is_overlong =
        |slot: u64| -> bool { slot < primary_count && overlong_range.contains(&slot) };
    // Duplicate copies regenerate their source slot's content, so a copy of
    // an overlong-free source is overlong-free too (sources sit below the
    // deletion range and are never flagged).

    let files = spec.files as u64;
    let per_file = n.div_ceil(files.max(1)).max(1);

    fs::create_dir_all(out_dir.join(Repository::Baseline.dir_name()))?;
    fs::create_dir_all(out_dir.join(Repository::DailyUpdate.dir_name()))?;

    let deleted_pmids: Vec<i64> = deletion_range
        .clone()
        .map(|slot| PMID_BASE + 1 + slot as i64)
        .collect();
    let deleted_set: BTreeSet<i64> = deleted_pmids.iter().copied().collect();

    let mut manifest = CorpusManifest {
        spec: spec.clone(),
        files: Vec::new(),
        citation_events: n,
        deletion_events: spec.deletions,
        distinct_pmids: primary_count,
        distinct_journals: 0,
        expected_table_counts: BTreeMap::new(),
        expected_errors_by_code: BTreeMap::new(),
    };
    for table in crate::schema::SchemaModel::medline().table_names() {
        manifest.expected_table_counts.insert(table.to_string(), 0);
    }

    let mut surviving_journals: BTreeSet<String> = BTreeSet::new();
    let mut duplicate_errors = 0u64;

    let mut slot = 0u64;
    for file_index in 0..spec.files as usize {
        let first = slot;
        let last = (first + per_file).min(n);
        slot = last;
        // Trailing empty files stay empty rather than shuffling earlier
        // slots around.
        let is_last = file_index + 1 == spec.files as usize;
        let repository = if spec.files >= 2 && is_last {
            Repository::DailyUpdate
        } else {
            Repository::Baseline
        };
        let stem = file_stem(file_index);
        let archive_name = format!("{stem}.xml.gz");
        let path = out_dir.join(repository.dir_name()).join(&archive_name);

        let file = File::create(&path)?;
        let gz = flate2::GzBuilder::new()
            .mtime(0)
            .write(BufWriter::new(file), flate2::Compression::new(6));
        let mut writer = CountingHashWriter::new(gz);

        writer.write_all(
            b"<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<MedlineCitationSet>\n",
        )?;

        let mut pmids = Vec::with_capacity((last - first) as usize);
        let mut xml = String::with_capacity(8 * 1024);
        for s in first..last {
            let pmid = pmid_for_slot(s);
            pmids.push(pmid);
            let overlong = slot_is_overlong(s);
            let gen = gen_citation(spec.seed, pmid, journal_for_pmid(pmid), overlong);

            let is_duplicate_copy = s >= primary_count;
            if is_duplicate_copy {
                // Every row of the copy collides with its original.
                duplicate_errors += gen.record.total_rows() as u64;
            } else if !deleted_set.contains(&pmid) {
                add_expected_rows(&mut manifest.expected_table_counts, &gen.record, overlong);
                if let Some(j) = &gen.record.journal.title {
                    surviving_journals.insert(j.clone());
                }
            }

            xml.clear();
            render_citation(&mut xml, &gen);
            writer.write_all(xml.as_bytes())?;
        }

        let mut deletions_here = 0u64;
        if is_last && !deleted_pmids.is_empty() {
            writer.write_all(b"  <DeleteCitation>\n")?;
            for pmid in &deleted_pmids {
                writer.write_all(
                    format!("    <PMID Version=\"1\">{pmid}</PMID>\n").as_bytes(),
                )?;
            }
            writer.write_all(b"  </DeleteCitation>\n")?;
            deletions_here = deleted_pmids.len() as u64;
        }

        writer.write_all(b"</MedlineCitationSet>\n")?;
        let digest = writer.finish()?;

        fs::write(
            out_dir
                .join(repository.dir_name())
                .join(format!("{archive_name}.md5")),
            format!("MD5({archive_name})= {digest}\n"),
        )?;

        manifest.files.push(FileManifest {
            name: archive_name,
            repository,
            citations: last - first,
            deletions: deletions_here,
            pmids,
        });
    }

    if spec.overlong_fields > 0 {
        manifest
            .expected_errors_by_code
            .insert(ErrorCode::FieldTooLong, spec.overlong_fields);
    }
    if duplicate_errors > 0 {
        manifest
            .expected_errors_by_code
            .insert(ErrorCode::DuplicateKey, duplicate_errors);
    }
    manifest.distinct_journals = surviving_journals.len() as u64;

    manifest.write_json(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Gzip writer that hashes the compressed bytes on the way out.
struct CountingHashWriter<W: Write> {
    inner: flate2::write::GzEncoder<HashWriter<W>>,
}

struct HashWriter<W: Write> {
    inner: W,
    hasher: Md5,
}

impl<W: Write> Write for HashWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

impl<W: Write> CountingHashWriter<W> {
    fn new(gz: flate2::write::GzEncoder<W>) -> CountingHashWriter<W> {
        // Rewrap so the hash sees compressed output.
        let (inner, compression) = (gz.into_inner(), flate2::Compression::new(6));
        CountingHashWriter {
            inner: flate2::GzBuilder::new().mtime(0).write(
                HashWriter {
                    inner,
                    hasher: Md5::new(),
                },
                compression,
            ),
        }
    }

    fn write_all(&mut self, buf: &[u8]) -> Result<()> {
        self.inner.write_all(buf).map_err(Error::Io)
    }

    fn finish(self) -> Result<String> {
        let hash_writer = self.inner.finish().map_err(Error::Io)?;
        let mut inner = hash_writer.inner;
        inner.flush()?;
        Ok(hex_digest(&hash_writer.hasher.finalize()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::ParseEvent;

    fn spec(citations: u64, files: u32, seed: u64) -> CorpusSpec {
        CorpusSpec {
            citations,
            files,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_byte_identical_for_same_seed() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let s = CorpusSpec {
            duplicate_pmids: 3,
            overlong_fields: 2,
            deletions: 4,
            ..spec(100, 2, 7)
        };
        let ma = generate(&s, a.path()).unwrap();
        let mb = generate(&s, b.path()).unwrap();

        for fm in &ma.files {
            let dir = fm.repository.dir_name();
            let fa = fs::read(a.path().join(dir).join(&fm.name)).unwrap();
            let fb = fs::read(b.path().join(dir).join(&fm.name)).unwrap();
            assert_eq!(fa, fb, "archive {} differs between runs", fm.name);
        }
        assert_eq!(
            serde_json::to_string(&ma).unwrap(),
            serde_json::to_string(&mb).unwrap()
        );
    }

    #[test]
    fn different_seed_changes_output() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&spec(10, 1, 1), a.path()).unwrap();
        generate(&spec(10, 1, 2), b.path()).unwrap();
        let fa = fs::read(a.path().join("baseline/medline17n0001.xml.gz")).unwrap();
        let fb = fs::read(b.path().join("baseline/medline17n0001.xml.gz")).unwrap();
        assert_ne!(fa, fb);
    }

    #[test]
    fn empty_corpus_is_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate(&spec(0, 1, 5), dir.path()).unwrap();
        assert_eq!(m.citation_events, 0);
        assert!(m.expected_table_counts.values().all(|&v| v == 0));

        let gz = dir.path().join("baseline/medline17n0001.xml.gz");
        let xml_path = crate::fetch::extract(&gz).unwrap();
        let events: Vec<_> = crate::parse::parse_path(&xml_path)
            .unwrap()
            .collect::<Result<Vec<_>>>()
            .unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(10, 1, 1);
        s.deletions = 11;
        assert!(matches!(
            generate(&s, dir.path()),
            Err(Error::InvalidSpec(_))
        ));
        let mut s = spec(10, 0, 1);
        s.files = 0;
        assert!(matches!(
            generate(&s, dir.path()),
            Err(Error::InvalidSpec(_))
        ));
        let s = CorpusSpec {
            duplicate_pmids: 4,
            deletions: 2,
            overlong_fields: 1,
            ..spec(10, 1, 1) // 2*4+2+1 = 11 > 10
        };
        assert!(matches!(
            generate(&s, dir.path()),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn parse_counts_match_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let s = CorpusSpec {
            duplicate_pmids: 5,
            deletions: 7,
            ..spec(120, 3, 42)
        };
        let manifest = generate(&s, dir.path()).unwrap();
        assert_eq!(manifest.files.len(), 3);
        assert_eq!(manifest.files[2].repository, Repository::DailyUpdate);

        let mut citations = 0u64;
        let mut deletions = 0u64;
        for fm in &manifest.files {
            let gz = dir
                .path()
                .join(fm.repository.dir_name())
                .join(&fm.name);
            let xml = crate::fetch::extract(&gz).unwrap();
            let mut seen_pmids = Vec::new();
            for ev in crate::parse::parse_path(&xml).unwrap() {
                match ev.unwrap() {
                    ParseEvent::Citation(c) => {
                        seen_pmids.push(c.pmid);
                        citations += 1;
                    }
                    ParseEvent::Deletion(_) => deletions += 1,
                }
            }
            assert_eq!(seen_pmids, fm.pmids, "pmid order mismatch in {}", fm.name);
        }
        assert_eq!(citations, manifest.citation_events);
        assert_eq!(deletions, manifest.deletion_events);
    }

    #[test]
    fn duplicates_are_byte_identical_to_their_source() {
        let a = gen_citation(9, PMID_BASE + 1, "Journal X", false);
        let b = gen_citation(9, PMID_BASE + 1, "Journal X", false);
        assert_eq!(a.record, b.record);
        let mut xa = String::new();
        let mut xb = String::new();
        render_citation(&mut xa, &a);
        render_citation(&mut xb, &b);
        assert_eq!(xa, xb);
    }

    #[test]
    fn generated_xml_passes_independent_wellformedness_check() {
        let dir = tempfile::tempdir().unwrap();
        let s = CorpusSpec {
            duplicate_pmids: 2,
            overlong_fields: 1,
            deletions: 3,
            ..spec(60, 2, 11)
        };
        let manifest = generate(&s, dir.path()).unwrap();
        for fm in &manifest.files {
            let gz = dir
                .path()
                .join(fm.repository.dir_name())
                .join(&fm.name);
            let xml_path = crate::fetch::extract(&gz).unwrap();
            let text = fs::read_to_string(&xml_path).unwrap();
            roxmltree::Document::parse(&text)
                .unwrap_or_else(|e| panic!("{} is not well-formed: {e}", fm.name));
        }
    }

    #[test]
    fn sidecars_verify_against_archives() {
        let dir = tempfile::tempdir().unwrap();
        generate(&spec(20, 2, 3), dir.path()).unwrap();
        let mut ep = crate::fetch::FileEndpoint::new(dir.path().to_path_buf());
        let manifest = crate::fetch::list_remote_files(&mut ep).unwrap();
        assert_eq!(manifest.entries.len(), 2);
        for entry in &manifest.entries {
            assert!(entry.checksum.is_some());
            let dest = tempfile::tempdir().unwrap();
            // download re-verifies the digest; a mismatch would error here.
            crate::fetch::download(
                &mut ep,
                entry,
                dest.path(),
                &crate::fetch::RetryPolicy::none(),
            )
            .unwrap();
        }
    }
}
