//! Typed citation data as produced by the parser and consumed by the loader.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuthorEntry {
    /// 1-based position within the citation's author list.
    pub ordinal: u32,
    pub last_name: Option<String>,
    pub fore_name: Option<String>,
    pub initials: Option<String>,
    pub suffix: Option<String>,
    pub collective_name: Option<String>,
    pub affiliation: Option<String>,
}

impl AuthorEntry {
    /// An author must carry a personal or collective name.
    pub fn is_named(&self) -> bool {
        self.last_name.is_some() || self.collective_name.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeshEntry {
    pub descriptor: String,
    pub descriptor_major: bool,
    /// Qualifier name with its own major-topic flag; empty for bare
    /// descriptors.
    pub qualifiers: Vec<(String, bool)>,
}

impl MeshEntry {
    /// Rows this heading expands to: one per qualifier, or a single
    /// null-qualifier row for a bare descriptor.
    pub fn row_count(&self) -> usize {
        self.qualifiers.len().max(1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChemicalEntry {
    pub registry_number: Option<String>,
    pub name_of_substance: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GrantEntry {
    pub grant_id: Option<String>,
    pub acronym: Option<String>,
    pub agency: Option<String>,
    pub country: Option<String>,
}

impl GrantEntry {
    pub fn is_empty(&self) -> bool {
        self.grant_id.is_none()
            && self.acronym.is_none()
            && self.agency.is_none()
            && self.country.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeywordEntry {
    pub keyword: String,
    pub major_topic: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataBankEntry {
    pub name: String,
    pub accession_numbers: Vec<String>,
}

impl DataBankEntry {
    /// One row per accession number; a bank without accessions still gets a
    /// row with a null accession.
    pub fn row_count(&self) -> usize {
        self.accession_numbers.len().max(1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommentsCorrectionsEntry {
    pub ref_type: Option<String>,
    pub ref_pmid: Option<i64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PersonalNameEntry {
    pub last_name: Option<String>,
    pub fore_name: Option<String>,
    pub initials: Option<String>,
    pub suffix: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvestigatorEntry {
    pub last_name: Option<String>,
    pub fore_name: Option<String>,
    pub initials: Option<String>,
    pub suffix: Option<String>,
    pub affiliation: Option<String>,
}

/// Journal and publication-date fields kept on the citation row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JournalInfo {
    pub title: Option<String>,
    pub iso_abbrev: Option<String>,
    pub issn: Option<String>,
    pub volume: Option<String>,
    pub issue: Option<String>,
    pub pub_year: Option<i32>,
    pub pub_month: Option<i32>,
    pub pub_day: Option<i32>,
    /// Verbatim MedlineDate string when the publication date is not
    /// structured; the year/month/day parts stay absent in that case.
    pub medline_date_raw: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CitationDates {
    pub created: Option<NaiveDate>,
    pub completed: Option<NaiveDate>,
    pub revised: Option<NaiveDate>,
}

/// One parsed document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CitationRecord {
    pub pmid: i64,
    pub status: Option<String>,
    pub dates: CitationDates,
    pub article_title: Option<String>,
    pub abstract_text: Option<String>,
    pub journal: JournalInfo,
    pub pagination: Option<String>,
    pub language: Option<String>,
    pub country: Option<String>,
    pub nlm_unique_id: Option<String>,
    pub authors: Vec<AuthorEntry>,
    pub mesh: Vec<MeshEntry>,
    pub chemicals: Vec<ChemicalEntry>,
    pub keywords: Vec<KeywordEntry>,
    pub grants: Vec<GrantEntry>,
    pub publication_types: Vec<String>,
    pub data_banks: Vec<DataBankEntry>,
    pub gene_symbols: Vec<String>,
    pub comments_corrections: Vec<CommentsCorrectionsEntry>,
    pub personal_name_subjects: Vec<PersonalNameEntry>,
    pub investigators: Vec<InvestigatorEntry>,
    pub citation_subsets: Vec<String>,
}

impl CitationRecord {
    /// Total relational rows this record expands to across all 13 tables.
    pub fn total_rows(&self) -> usize {
        1 + self.authors.len()
            + self.chemicals.len()
            + self.mesh.iter().map(MeshEntry::row_count).sum::<usize>()
            + self.keywords.len()
            + self.grants.len()
            + self.publication_types.len()
            + self.data_banks.iter().map(DataBankEntry::row_count).sum::<usize>()
            + self.gene_symbols.len()
            + self.comments_corrections.len()
            + self.personal_name_subjects.len()
            + self.investigators.len()
            + self.citation_subsets.len()
    }
}

/// What the streaming parser yields, in document order.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseEvent {
    Citation(Box<CitationRecord>),
    /// A PMID listed in a DeleteCitation block: remove it from every table.
    Deletion(i64),
}
