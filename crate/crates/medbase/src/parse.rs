//! Streaming parser for MEDLINE citation-set XML.
//!
//! Yields one event per citation (or per DeleteCitation PMID) in document
//! order. Memory use is bounded by the largest single citation: reader
//! buffers are scoped to the element being parsed and only the record under
//! construction is held.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDate;
use quick_xml::events::{BytesRef, BytesStart, Event};
use quick_xml::Reader;

use crate::error::{Error, Result};
use crate::record::{
    AuthorEntry, ChemicalEntry, CitationRecord, CommentsCorrectionsEntry, DataBankEntry,
    GrantEntry, InvestigatorEntry, KeywordEntry, MeshEntry, ParseEvent, PersonalNameEntry,
};

/// Counters accumulated while streaming one file.
#[derive(Debug, Clone, Default)]
pub struct ParseStats {
    pub citations: u64,
    pub deletions: u64,
    /// Citations skipped because they carried no usable PMID.
    pub skipped_no_pmid: u64,
    /// Elements outside the field mapping; ignored and counted, never fatal.
    pub unknown_elements: u64,
    /// Authors dropped for lacking both a last name and a collective name.
    pub invalid_authors: u64,
}

/// Single-pass iterator over a citation-set document.
pub struct CitationStream<R: BufRead> {
    reader: Reader<R>,
    buf: Vec<u8>,
    pending: VecDeque<ParseEvent>,
    /// Highest Version attribute seen per PMID. Only explicitly versioned
    /// citations are recorded, so this stays tiny on normal files.
    versioned: HashMap<i64, u32>,
    stats: ParseStats,
    finished: bool,
}

/// Streams `source` as a citation-set document.
pub fn parse_stream<R: BufRead>(source: R) -> CitationStream<R> {
    // Text is trimmed per element in read_text, not per event: event-level
    // trimming would eat the spaces around entity references.
    let reader = Reader::from_reader(source);
    CitationStream {
        reader,
        buf: Vec::with_capacity(4096),
        pending: VecDeque::new(),
        versioned: HashMap::new(),
        stats: ParseStats::default(),
        finished: false,
    }
}

/// Opens `path` and streams it.
pub fn parse_path(path: &Path) -> Result<CitationStream<BufReader<File>>> {
    let file = File::open(path)?;
    Ok(parse_stream(BufReader::new(file)))
}

/// Parses a fragment containing exactly one citation element.
pub fn map_citation(xml: &str) -> Result<CitationRecord> {
    let mut stream = parse_stream(xml.as_bytes());
    match stream.next() {
        Some(Ok(ParseEvent::Citation(rec))) => Ok(*rec),
        Some(Ok(ParseEvent::Deletion(_))) => Err(Error::XmlSyntax {
            position: 0,
            detail: "fragment contains a deletion, not a citation".into(),
        }),
        Some(Err(e)) => Err(e),
        None => Err(Error::XmlSyntax {
            position: 0,
            detail: "fragment contains no citation element".into(),
        }),
    }
}

enum TopLevel {
    Citation(Option<String>),
    Deletion,
    Eof,
    Other,
}

impl<R: BufRead> CitationStream<R> {
    pub fn stats(&self) -> &ParseStats {
        &self.stats
    }

    /// Applies the keep-highest-version rule and queues the events a
    /// citation expands to.
    fn enqueue_citation(&mut self, record: CitationRecord, version: u32) {
        let pmid = record.pmid;
        if let Some(&seen) = self.versioned.get(&pmid) {
            if version <= seen {
                return;
            }
        }
        if version > 1 {
            self.versioned.insert(pmid, version);
            // Revise in place: drop the rows of the lower version first.
            self.stats.deletions += 1;
            self.pending.push_back(ParseEvent::Deletion(pmid));
        }
        self.stats.citations += 1;
        self.pending.push_back(ParseEvent::Citation(Box::new(record)));
    }
}

impl<R: BufRead> Iterator for CitationStream<R> {
    type Item = Result<ParseEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(ev) = self.pending.pop_front() {
                return Some(Ok(ev));
            }
            if self.finished {
                return None;
            }
            self.buf.clear();
            let position = self.reader.buffer_position();
            let step = match self.reader.read_event_into(&mut self.buf) {
                Ok(Event::Start(e)) => match e.name().as_ref() {
                    b"MedlineCitation" => TopLevel::Citation(attr_string(&e, b"Status")),
                    b"DeleteCitation" => TopLevel::Deletion,
                    // Containers (MedlineCitationSet, PubmedArticle, ...)
                    // are simply descended into.
                    _ => TopLevel::Other,
                },
                Ok(Event::Eof) => TopLevel::Eof,
                Ok(_) => TopLevel::Other,
                Err(e) => {
                    self.finished = true;
                    return Some(Err(Error::XmlSyntax {
                        position,
                        detail: e.to_string(),
                    }));
                }
            };
            match step {
                TopLevel::Citation(status) => {
                    match parse_citation(&mut self.reader, status) {
                        Ok(parsed) => {
                            self.stats.unknown_elements += parsed.unknown_elements;
                            self.stats.invalid_authors += parsed.invalid_authors;
                            self.enqueue_citation(parsed.record, parsed.version);
                        }
                        Err(Error::MissingPmid { position }) => {
                            self.stats.skipped_no_pmid += 1;
                            return Some(Err(Error::MissingPmid { position }));
                        }
                        Err(e) => {
                            self.finished = true;
                            return Some(Err(e));
                        }
                    }
                }
                TopLevel::Deletion => match parse_delete_citation(&mut self.reader) {
                    Ok(pmids) => {
                        for p in pmids {
                            self.stats.deletions += 1;
                            self.pending.push_back(ParseEvent::Deletion(p));
                        }
                    }
                    Err(e) => {
                        self.finished = true;
                        return Some(Err(e));
                    }
                },
                TopLevel::Eof => {
                    self.finished = true;
                    return None;
                }
                TopLevel::Other => {}
            }
        }
    }
}

// === low-level helpers ===============================================

fn read_event<'b, R: BufRead>(reader: &mut Reader<R>, buf: &'b mut Vec<u8>) -> Result<Event<'b>> {
    buf.clear();
    let position = reader.buffer_position();
    reader.read_event_into(buf).map_err(|e| Error::XmlSyntax {
        position,
        detail: e.to_string(),
    })
}

fn eof_err<R: BufRead>(reader: &Reader<R>, what: &str) -> Error {
    Error::XmlSyntax {
        position: reader.buffer_position(),
        detail: format!("unexpected end of file {what}"),
    }
}

fn attr_string(e: &BytesStart<'_>, name: &[u8]) -> Option<String> {
    e.try_get_attribute(name)
        .ok()
        .flatten()
        .and_then(|a| {
            a.normalized_value(quick_xml::XmlVersion::Implicit1_0)
                .ok()
                .map(|v| v.into_owned())
        })
}

fn resolve_general_ref(r: &BytesRef<'_>) -> String {
    if let Ok(Some(ch)) = r.resolve_char_ref() {
        return ch.to_string();
    }
    match r.decode().as_deref() {
        Ok("amp") => "&".to_string(),
        Ok("lt") => "<".to_string(),
        Ok("gt") => ">".to_string(),
        Ok("quot") => "\"".to_string(),
        Ok("apos") => "'".to_string(),
        Ok(other) => format!("&{other};"),
        Err(_) => String::new(),
    }
}

/// Text content of the element just entered, flattening nested markup.
fn read_text<R: BufRead>(reader: &mut Reader<R>) -> Result<String> {
    let mut buf = Vec::new();
    let mut out = String::new();
    let mut depth = 0u32;
    loop {
        match read_event(reader, &mut buf)? {
            Event::Text(t) => {
                if let Ok(cow) = t.xml10_content() {
                    out.push_str(&cow);
                }
            }
            Event::CData(c) => {
                if let Ok(cow) = c.decode() {
                    out.push_str(&cow);
                }
            }
            Event::GeneralRef(r) => out.push_str(&resolve_general_ref(&r)),
            Event::Start(_) => depth += 1,
            Event::End(_) => {
                if depth == 0 {
                    break;
                }
                depth -= 1;
            }
            Event::Eof => return Err(eof_err(reader, "inside element")),
            _ => {}
        }
    }
    let trimmed = out.trim();
    Ok(if trimmed.len() == out.len() {
        out
    } else {
        trimmed.to_string()
    })
}

fn read_opt_text<R: BufRead>(reader: &mut Reader<R>) -> Result<Option<String>> {
    let s = read_text(reader)?;
    Ok(if s.is_empty() { None } else { Some(s) })
}

/// Skips the element just entered.
fn skip_element<R: BufRead>(reader: &mut Reader<R>) -> Result<()> {
    let mut buf = Vec::new();
    let mut depth = 0u32;
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(_) => depth += 1,
            Event::End(_) => {
                if depth == 0 {
                    return Ok(());
                }
                depth -= 1;
            }
            Event::Eof => return Err(eof_err(reader, "while skipping element")),
            _ => {}
        }
    }
}

fn yn_flag(v: Option<String>) -> bool {
    matches!(v.as_deref(), Some("Y") | Some("y"))
}

fn parse_month(s: &str) -> Option<i32> {
    if let Ok(n) = s.parse::<i32>() {
        return (1..=12).contains(&n).then_some(n);
    }
    let names = [
        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
    ];
    let lower = s.to_lowercase();
    names
        .iter()
        .position(|m| lower.starts_with(m))
        .map(|i| i as i32 + 1)
}

// === citation subtree =================================================

struct ParsedCitation {
    record: CitationRecord,
    version: u32,
    unknown_elements: u64,
    invalid_authors: u64,
}

/// Parses the body of a `MedlineCitation` element (the Start tag has been
/// consumed already).
fn parse_citation<R: BufRead>(
    reader: &mut Reader<R>,
    status: Option<String>,
) -> Result<ParsedCitation> {
    let mut rec = CitationRecord {
        status,
        ..CitationRecord::default()
    };
    let mut version = 1u32;
    let mut unknown = 0u64;
    let mut invalid_authors = 0u64;
    let mut buf = Vec::new();

    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"PMID" if rec.pmid == 0 => {
                    if let Some(v) = attr_string(&e, b"Version") {
                        version = v.parse().unwrap_or(1);
                    }
                    rec.pmid = read_text(reader)?.trim().parse().unwrap_or(0);
                }
                b"DateCreated" => rec.dates.created = parse_date(reader)?,
                b"DateCompleted" => rec.dates.completed = parse_date(reader)?,
                b"DateRevised" => rec.dates.revised = parse_date(reader)?,
                b"Article" => parse_article(reader, &mut rec, &mut unknown, &mut invalid_authors)?,
                b"MedlineJournalInfo" => parse_journal_info(reader, &mut rec)?,
                b"ChemicalList" => parse_chemical_list(reader, &mut rec)?,
                b"CitationSubset" => {
                    if let Some(s) = read_opt_text(reader)? {
                        rec.citation_subsets.push(s);
                    }
                }
                b"CommentsCorrectionsList" => parse_comments_corrections(reader, &mut rec)?,
                b"GeneSymbolList" => parse_gene_symbols(reader, &mut rec)?,
                b"MeshHeadingList" => parse_mesh_list(reader, &mut rec)?,
                b"PersonalNameSubjectList" => parse_personal_names(reader, &mut rec)?,
                b"InvestigatorList" => parse_investigators(reader, &mut rec)?,
                b"KeywordList" => parse_keywords(reader, &mut rec)?,
                // Fields whose tables were dropped from the model, plus
                // identifiers we do not store.
                b"OtherID" | b"OtherAbstract" | b"GeneralNote" | b"SpaceFlightMission" => {
                    skip_element(reader)?
                }
                _ => {
                    unknown += 1;
                    skip_element(reader)?;
                }
            },
            Event::End(e) if e.name().as_ref() == b"MedlineCitation" => break,
            Event::Eof => return Err(eof_err(reader, "inside MedlineCitation")),
            _ => {}
        }
    }

    if rec.pmid <= 0 {
        return Err(Error::MissingPmid {
            position: reader.buffer_position(),
        });
    }
    Ok(ParsedCitation {
        record: rec,
        version,
        unknown_elements: unknown,
        invalid_authors,
    })
}

fn parse_date<R: BufRead>(reader: &mut Reader<R>) -> Result<Option<NaiveDate>> {
    let mut buf = Vec::new();
    let mut year = None;
    let mut month = None;
    let mut day = None;
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Year" => year = read_text(reader)?.trim().parse::<i32>().ok(),
                b"Month" => month = parse_month(read_text(reader)?.trim()),
                b"Day" => day = read_text(reader)?.trim().parse::<u32>().ok(),
                _ => skip_element(reader)?,
            },
            Event::End(_) => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(match (year, month, day) {
        (Some(y), Some(m), Some(d)) => NaiveDate::from_ymd_opt(y, m as u32, d),
        (Some(y), Some(m), None) => NaiveDate::from_ymd_opt(y, m as u32, 1),
        _ => None,
    })
}

fn parse_article<R: BufRead>(
    reader: &mut Reader<R>,
    rec: &mut CitationRecord,
    unknown: &mut u64,
    invalid_authors: &mut u64,
) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Journal" => parse_journal(reader, rec)?,
                b"ArticleTitle" => rec.article_title = read_opt_text(reader)?,
                b"Pagination" => parse_pagination(reader, rec)?,
                b"Abstract" => rec.abstract_text = parse_abstract(reader)?,
                b"AuthorList" => parse_author_list(reader, rec, invalid_authors)?,
                b"Language" => {
                    let lang = read_opt_text(reader)?;
                    if rec.language.is_none() {
                        rec.language = lang;
                    }
                }
                b"DataBankList" => parse_data_banks(reader, rec)?,
                b"GrantList" => parse_grants(reader, rec)?,
                b"PublicationTypeList" => parse_publication_types(reader, rec)?,
                _ => {
                    *unknown += 1;
                    skip_element(reader)?;
                }
            },
            Event::End(e) if e.name().as_ref() == b"Article" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_journal<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"ISSN" => rec.journal.issn = read_opt_text(reader)?,
                b"Title" => rec.journal.title = read_opt_text(reader)?,
                b"ISOAbbreviation" => rec.journal.iso_abbrev = read_opt_text(reader)?,
                b"JournalIssue" => parse_journal_issue(reader, rec)?,
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"Journal" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_journal_issue<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Volume" => rec.journal.volume = read_opt_text(reader)?,
                b"Issue" => rec.journal.issue = read_opt_text(reader)?,
                b"PubDate" => parse_pub_date(reader, rec)?,
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"JournalIssue" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_pub_date<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Year" => rec.journal.pub_year = read_text(reader)?.trim().parse().ok(),
                b"Month" => rec.journal.pub_month = parse_month(read_text(reader)?.trim()),
                b"Day" => rec.journal.pub_day = read_text(reader)?.trim().parse().ok(),
                // Unstructured dates are stored verbatim; no guessing.
                b"MedlineDate" => rec.journal.medline_date_raw = read_opt_text(reader)?,
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"PubDate" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_pagination<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"MedlinePgn" => rec.pagination = read_opt_text(reader)?,
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"Pagination" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

/// Labeled segments are concatenated in document order as `LABEL: text`,
/// joined by one blank line.
fn parse_abstract<R: BufRead>(reader: &mut Reader<R>) -> Result<Option<String>> {
    let mut buf = Vec::new();
    let mut segments: Vec<String> = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"AbstractText" => {
                    let label = attr_string(&e, b"Label");
                    let text = read_text(reader)?;
                    if text.is_empty() {
                        continue;
                    }
                    segments.push(match label {
                        Some(l) => format!("{l}: {text}"),
                        None => text,
                    });
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"Abstract" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(if segments.is_empty() {
        None
    } else {
        Some(segments.join("\n\n"))
    })
}

fn parse_author_list<R: BufRead>(
    reader: &mut Reader<R>,
    rec: &mut CitationRecord,
    invalid_authors: &mut u64,
) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Author" => {
                    let author = parse_author(reader)?;
                    if author.is_named() {
                        let ordinal = rec.authors.len() as u32 + 1;
                        rec.authors.push(AuthorEntry { ordinal, ..author });
                    } else {
                        *invalid_authors += 1;
                    }
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"AuthorList" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_author<R: BufRead>(reader: &mut Reader<R>) -> Result<AuthorEntry> {
    let mut buf = Vec::new();
    let mut a = AuthorEntry::default();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"LastName" => a.last_name = read_opt_text(reader)?,
                b"ForeName" | b"FirstName" => a.fore_name = read_opt_text(reader)?,
                b"Initials" => a.initials = read_opt_text(reader)?,
                b"Suffix" => a.suffix = read_opt_text(reader)?,
                b"CollectiveName" => a.collective_name = read_opt_text(reader)?,
                // 2015+ DTD nests Affiliation inside AffiliationInfo; older
                // files put it directly under Author.
                b"AffiliationInfo" => {
                    if let Some(aff) = parse_affiliation_info(reader)? {
                        a.affiliation = Some(aff);
                    }
                }
                b"Affiliation" => a.affiliation = read_opt_text(reader)?,
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"Author" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(a)
}

fn parse_affiliation_info<R: BufRead>(reader: &mut Reader<R>) -> Result<Option<String>> {
    let mut buf = Vec::new();
    let mut affiliation = None;
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Affiliation" => affiliation = read_opt_text(reader)?,
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"AffiliationInfo" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(affiliation)
}

fn parse_journal_info<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Country" => rec.country = read_opt_text(reader)?,
                b"NlmUniqueID" => rec.nlm_unique_id = read_opt_text(reader)?,
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"MedlineJournalInfo" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_chemical_list<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Chemical" => {
                    let mut registry = None;
                    let mut name = None;
                    let mut inner = Vec::new();
                    loop {
                        match read_event(reader, &mut inner)? {
                            Event::Start(c) => match c.name().as_ref() {
                                b"RegistryNumber" => registry = read_opt_text(reader)?,
                                b"NameOfSubstance" => name = read_opt_text(reader)?,
                                _ => skip_element(reader)?,
                            },
                            Event::End(c) if c.name().as_ref() == b"Chemical" => break,
                            Event::Eof => break,
                            _ => {}
                        }
                    }
                    if let Some(name_of_substance) = name {
                        rec.chemicals.push(ChemicalEntry {
                            registry_number: registry,
                            name_of_substance,
                        });
                    }
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"ChemicalList" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_comments_corrections<R: BufRead>(
    reader: &mut Reader<R>,
    rec: &mut CitationRecord,
) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"CommentsCorrections" => {
                    let ref_type = attr_string(&e, b"RefType");
                    let mut entry = CommentsCorrectionsEntry {
                        ref_type,
                        ..Default::default()
                    };
                    let mut inner = Vec::new();
                    loop {
                        match read_event(reader, &mut inner)? {
                            Event::Start(c) => match c.name().as_ref() {
                                b"PMID" => entry.ref_pmid = read_text(reader)?.trim().parse().ok(),
                                b"Note" => entry.note = read_opt_text(reader)?,
                                _ => skip_element(reader)?,
                            },
                            Event::End(c) if c.name().as_ref() == b"CommentsCorrections" => break,
                            Event::Eof => break,
                            _ => {}
                        }
                    }
                    rec.comments_corrections.push(entry);
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"CommentsCorrectionsList" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_gene_symbols<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"GeneSymbol" => {
                    if let Some(g) = read_opt_text(reader)? {
                        rec.gene_symbols.push(g);
                    }
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"GeneSymbolList" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_mesh_list<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"MeshHeading" => {
                    let mut entry = MeshEntry::default();
                    let mut inner = Vec::new();
                    loop {
                        match read_event(reader, &mut inner)? {
                            Event::Start(c) => match c.name().as_ref() {
                                b"DescriptorName" => {
                                    entry.descriptor_major =
                                        yn_flag(attr_string(&c, b"MajorTopicYN"));
                                    entry.descriptor = read_text(reader)?;
                                }
                                b"QualifierName" => {
                                    let major = yn_flag(attr_string(&c, b"MajorTopicYN"));
                                    let name = read_text(reader)?;
                                    if !name.is_empty() {
                                        entry.qualifiers.push((name, major));
                                    }
                                }
                                _ => skip_element(reader)?,
                            },
                            Event::End(c) if c.name().as_ref() == b"MeshHeading" => break,
                            Event::Eof => break,
                            _ => {}
                        }
                    }
                    if !entry.descriptor.is_empty() {
                        rec.mesh.push(entry);
                    }
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"MeshHeadingList" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_personal_names<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"PersonalNameSubject" => {
                    let mut p = PersonalNameEntry::default();
                    let mut inner = Vec::new();
                    loop {
                        match read_event(reader, &mut inner)? {
                            Event::Start(c) => match c.name().as_ref() {
                                b"LastName" => p.last_name = read_opt_text(reader)?,
                                b"ForeName" => p.fore_name = read_opt_text(reader)?,
                                b"Initials" => p.initials = read_opt_text(reader)?,
                                b"Suffix" => p.suffix = read_opt_text(reader)?,
                                _ => skip_element(reader)?,
                            },
                            Event::End(c) if c.name().as_ref() == b"PersonalNameSubject" => break,
                            Event::Eof => break,
                            _ => {}
                        }
                    }
                    rec.personal_name_subjects.push(p);
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"PersonalNameSubjectList" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_investigators<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Investigator" => {
                    let mut p = InvestigatorEntry::default();
                    let mut inner = Vec::new();
                    loop {
                        match read_event(reader, &mut inner)? {
                            Event::Start(c) => match c.name().as_ref() {
                                b"LastName" => p.last_name = read_opt_text(reader)?,
                                b"ForeName" => p.fore_name = read_opt_text(reader)?,
                                b"Initials" => p.initials = read_opt_text(reader)?,
                                b"Suffix" => p.suffix = read_opt_text(reader)?,
                                b"AffiliationInfo" => {
                                    if let Some(aff) = parse_affiliation_info(reader)? {
                                        p.affiliation = Some(aff);
                                    }
                                }
                                b"Affiliation" => p.affiliation = read_opt_text(reader)?,
                                _ => skip_element(reader)?,
                            },
                            Event::End(c) if c.name().as_ref() == b"Investigator" => break,
                            Event::Eof => break,
                            _ => {}
                        }
                    }
                    rec.investigators.push(p);
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"InvestigatorList" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_keywords<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Keyword" => {
                    let major = yn_flag(attr_string(&e, b"MajorTopicYN"));
                    if let Some(keyword) = read_opt_text(reader)? {
                        rec.keywords.push(KeywordEntry {
                            keyword,
                            major_topic: major,
                        });
                    }
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"KeywordList" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_data_banks<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"DataBank" => {
                    let mut bank = DataBankEntry::default();
                    let mut inner = Vec::new();
                    loop {
                        match read_event(reader, &mut inner)? {
                            Event::Start(c) => match c.name().as_ref() {
                                b"DataBankName" => bank.name = read_text(reader)?,
                                b"AccessionNumberList" => {
                                    let mut acc_buf = Vec::new();
                                    loop {
                                        match read_event(reader, &mut acc_buf)? {
                                            Event::Start(a)
                                                if a.name().as_ref() == b"AccessionNumber" =>
                                            {
                                                if let Some(acc) = read_opt_text(reader)? {
                                                    bank.accession_numbers.push(acc);
                                                }
                                            }
                                            Event::Start(_) => skip_element(reader)?,
                                            Event::End(a)
                                                if a.name().as_ref() == b"AccessionNumberList" =>
                                            {
                                                break
                                            }
                                            Event::Eof => break,
                                            _ => {}
                                        }
                                    }
                                }
                                _ => skip_element(reader)?,
                            },
                            Event::End(c) if c.name().as_ref() == b"DataBank" => break,
                            Event::Eof => break,
                            _ => {}
                        }
                    }
                    if !bank.name.is_empty() {
                        rec.data_banks.push(bank);
                    }
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"DataBankList" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_grants<R: BufRead>(reader: &mut Reader<R>, rec: &mut CitationRecord) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"Grant" => {
                    let mut g = GrantEntry::default();
                    let mut inner = Vec::new();
                    loop {
                        match read_event(reader, &mut inner)? {
                            Event::Start(c) => match c.name().as_ref() {
                                b"GrantID" => g.grant_id = read_opt_text(reader)?,
                                b"Acronym" => g.acronym = read_opt_text(reader)?,
                                b"Agency" => g.agency = read_opt_text(reader)?,
                                b"Country" => g.country = read_opt_text(reader)?,
                                _ => skip_element(reader)?,
                            },
                            Event::End(c) if c.name().as_ref() == b"Grant" => break,
                            Event::Eof => break,
                            _ => {}
                        }
                    }
                    if !g.is_empty() {
                        rec.grants.push(g);
                    }
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"GrantList" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_publication_types<R: BufRead>(
    reader: &mut Reader<R>,
    rec: &mut CitationRecord,
) -> Result<()> {
    let mut buf = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) => match e.name().as_ref() {
                b"PublicationType" => {
                    if let Some(t) = read_opt_text(reader)? {
                        rec.publication_types.push(t);
                    }
                }
                _ => skip_element(reader)?,
            },
            Event::End(e) if e.name().as_ref() == b"PublicationTypeList" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(())
}

fn parse_delete_citation<R: BufRead>(reader: &mut Reader<R>) -> Result<Vec<i64>> {
    let mut buf = Vec::new();
    let mut pmids = Vec::new();
    loop {
        match read_event(reader, &mut buf)? {
            Event::Start(e) if e.name().as_ref() == b"PMID" => {
                if let Ok(p) = read_text(reader)?.trim().parse::<i64>() {
                    pmids.push(p);
                }
            }
            Event::Start(_) => skip_element(reader)?,
            Event::End(e) if e.name().as_ref() == b"DeleteCitation" => break,
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(pmids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::ParseEvent;

    fn citation(pmid: i64, body: &str) -> String {
        format!(
            "<MedlineCitation Status=\"MEDLINE\" Owner=\"NLM\">\
             <PMID Version=\"1\">{pmid}</PMID>{body}</MedlineCitation>"
        )
    }

    fn doc(inner: &str) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<MedlineCitationSet>{inner}</MedlineCitationSet>"
        )
    }

    const MINIMAL_BODY: &str = "<Article PubModel=\"Print\">\
        <Journal><Title>Test Journal</Title></Journal>\
        <ArticleTitle>A title</ArticleTitle></Article>";

    #[test]
    fn three_citations_in_document_order() {
        let xml = doc(&format!(
            "{}{}{}",
            citation(11, MINIMAL_BODY),
            citation(7, MINIMAL_BODY),
            citation(23, MINIMAL_BODY)
        ));
        let events: Vec<_> = parse_stream(xml.as_bytes()).map(|e| e.unwrap()).collect();
        let pmids: Vec<i64> = events
            .iter()
            .map(|e| match e {
                ParseEvent::Citation(c) => c.pmid,
                ParseEvent::Deletion(_) => panic!("unexpected deletion"),
            })
            .collect();
        assert_eq!(pmids, vec![11, 7, 23]);
    }

    #[test]
    fn empty_citation_set_yields_nothing() {
        let xml = doc("");
        assert_eq!(parse_stream(xml.as_bytes()).count(), 0);
    }

    #[test]
    fn delete_citation_yields_trailing_deletions() {
        let xml = doc(&format!(
            "{}<DeleteCitation><PMID Version=\"1\">12345</PMID></DeleteCitation>",
            citation(1, MINIMAL_BODY)
        ));
        let events: Vec<_> = parse_stream(xml.as_bytes()).map(|e| e.unwrap()).collect();
        assert_eq!(events.len(), 2);
        assert_eq!(events[1], ParseEvent::Deletion(12345));
    }

    #[test]
    fn absent_abstract_is_none_not_error() {
        let rec = map_citation(&citation(5, MINIMAL_BODY)).unwrap();
        assert_eq!(rec.pmid, 5);
        assert!(rec.abstract_text.is_none());
        assert_eq!(rec.article_title.as_deref(), Some("A title"));
    }

    #[test]
    fn full_citation_field_mapping() {
        let body = "<DateCreated><Year>2016</Year><Month>03</Month><Day>09</Day></DateCreated>\
            <Article PubModel=\"Print\">\
            <Journal><ISSN IssnType=\"Print\">0036-8075</ISSN>\
            <JournalIssue CitedMedium=\"Print\"><Volume>355</Volume><Issue>6324</Issue>\
            <PubDate><Year>2017</Year><Month>Feb</Month><Day>3</Day></PubDate></JournalIssue>\
            <Title>Science</Title><ISOAbbreviation>Science</ISOAbbreviation></Journal>\
            <ArticleTitle>Genes &amp; proteins &lt;in vivo&gt;: caf\u{e9} studies</ArticleTitle>\
            <Pagination><MedlinePgn>496-497</MedlinePgn></Pagination>\
            <Abstract><AbstractText Label=\"OBJECTIVE\">First part.</AbstractText>\
            <AbstractText Label=\"METHODS\">Second part.</AbstractText></Abstract>\
            <AuthorList CompleteYN=\"Y\">\
            <Author ValidYN=\"Y\"><LastName>M\u{fc}ller</LastName><ForeName>Ana</ForeName>\
            <Initials>A</Initials>\
            <AffiliationInfo><Affiliation>Rouen, France</Affiliation></AffiliationInfo></Author>\
            <Author><CollectiveName>Example Consortium</CollectiveName></Author>\
            </AuthorList>\
            <Language>eng</Language>\
            <DataBankList><DataBank><DataBankName>GENBANK</DataBankName>\
            <AccessionNumberList><AccessionNumber>X01234</AccessionNumber>\
            <AccessionNumber>X01235</AccessionNumber></AccessionNumberList></DataBank></DataBankList>\
            <GrantList><Grant><GrantID>R01-XY</GrantID><Agency>NIH</Agency>\
            <Country>United States</Country></Grant></GrantList>\
            <PublicationTypeList><PublicationType UI=\"D016428\">Journal Article</PublicationType>\
            </PublicationTypeList>\
            </Article>\
            <MedlineJournalInfo><Country>United States</Country><MedlineTA>Science</MedlineTA>\
            <NlmUniqueID>0404511</NlmUniqueID></MedlineJournalInfo>\
            <ChemicalList><Chemical><RegistryNumber>11103-57-4</RegistryNumber>\
            <NameOfSubstance UI=\"D014801\">Vitamin A</NameOfSubstance></Chemical></ChemicalList>\
            <CitationSubset>IM</CitationSubset>\
            <CommentsCorrectionsList><CommentsCorrections RefType=\"Cites\">\
            <RefSource>Science. 2016</RefSource><PMID Version=\"1\">999</PMID>\
            <Note>related</Note></CommentsCorrections></CommentsCorrectionsList>\
            <GeneSymbolList><GeneSymbol>BRCA1</GeneSymbol></GeneSymbolList>\
            <MeshHeadingList>\
            <MeshHeading><DescriptorName UI=\"D000818\" MajorTopicYN=\"N\">Animals</DescriptorName></MeshHeading>\
            <MeshHeading><DescriptorName UI=\"D005796\" MajorTopicYN=\"Y\">Genes</DescriptorName>\
            <QualifierName UI=\"Q000187\" MajorTopicYN=\"Y\">drug effects</QualifierName>\
            <QualifierName UI=\"Q000235\" MajorTopicYN=\"N\">genetics</QualifierName></MeshHeading>\
            <MeshHeading><DescriptorName UI=\"D006801\" MajorTopicYN=\"N\">Humans</DescriptorName></MeshHeading>\
            </MeshHeadingList>\
            <PersonalNameSubjectList><PersonalNameSubject><LastName>Curie</LastName>\
            <ForeName>Marie</ForeName></PersonalNameSubject></PersonalNameSubjectList>\
            <InvestigatorList><Investigator><LastName>Stone</LastName><Initials>R</Initials>\
            </Investigator></InvestigatorList>\
            <KeywordList Owner=\"NOTNLM\"><Keyword MajorTopicYN=\"Y\">genomics</Keyword></KeywordList>";
        let rec = map_citation(&citation(28000000, body)).unwrap();

        assert_eq!(rec.pmid, 28000000);
        assert_eq!(rec.status.as_deref(), Some("MEDLINE"));
        assert_eq!(rec.dates.created, NaiveDate::from_ymd_opt(2016, 3, 9));
        // Entities and non-ASCII round-trip byte-identically.
        assert_eq!(
            rec.article_title.as_deref(),
            Some("Genes & proteins <in vivo>: caf\u{e9} studies")
        );
        assert_eq!(
            rec.abstract_text.as_deref(),
            Some("OBJECTIVE: First part.\n\nMETHODS: Second part.")
        );
        assert_eq!(rec.journal.title.as_deref(), Some("Science"));
        assert_eq!(rec.journal.pub_year, Some(2017));
        assert_eq!(rec.journal.pub_month, Some(2));
        assert_eq!(rec.journal.pub_day, Some(3));
        assert!(rec.journal.medline_date_raw.is_none());
        assert_eq!(rec.pagination.as_deref(), Some("496-497"));
        assert_eq!(rec.language.as_deref(), Some("eng"));
        assert_eq!(rec.country.as_deref(), Some("United States"));
        assert_eq!(rec.nlm_unique_id.as_deref(), Some("0404511"));

        assert_eq!(rec.authors.len(), 2);
        assert_eq!(rec.authors[0].ordinal, 1);
        assert_eq!(rec.authors[1].ordinal, 2);
        assert_eq!(rec.authors[0].last_name.as_deref(), Some("M\u{fc}ller"));
        assert_eq!(rec.authors[0].affiliation.as_deref(), Some("Rouen, France"));
        assert_eq!(
            rec.authors[1].collective_name.as_deref(),
            Some("Example Consortium")
        );

        assert_eq!(rec.mesh.len(), 3);
        assert_eq!(rec.mesh[1].qualifiers.len(), 2);
        assert!(rec.mesh[1].descriptor_major);
        assert_eq!(rec.mesh[1].qualifiers[0], ("drug effects".into(), true));
        assert_eq!(rec.chemicals.len(), 1);
        assert_eq!(rec.chemicals[0].name_of_substance, "Vitamin A");
        assert_eq!(rec.keywords.len(), 1);
        assert!(rec.keywords[0].major_topic);
        assert_eq!(rec.grants.len(), 1);
        assert_eq!(rec.publication_types, vec!["Journal Article"]);
        assert_eq!(rec.data_banks[0].accession_numbers.len(), 2);
        assert_eq!(rec.gene_symbols, vec!["BRCA1"]);
        assert_eq!(rec.comments_corrections[0].ref_pmid, Some(999));
        assert_eq!(rec.personal_name_subjects.len(), 1);
        assert_eq!(rec.investigators.len(), 1);
        assert_eq!(rec.citation_subsets, vec!["IM"]);

        // 1 citation + 2 authors + 1 chemical + 4 mesh rows + 1 keyword
        // + 1 grant + 1 pubtype + 2 databank rows + 1 gene + 1 commcorr
        // + 1 pns + 1 investigator + 1 subset
        assert_eq!(rec.total_rows(), 18);
    }

    #[test]
    fn medline_date_kept_verbatim() {
        let body = "<Article><Journal><Title>J</Title><JournalIssue><PubDate>\
            <MedlineDate>1998 Dec-1999 Jan</MedlineDate></PubDate></JournalIssue></Journal>\
            <ArticleTitle>T</ArticleTitle></Article>";
        let rec = map_citation(&citation(2, body)).unwrap();
        assert_eq!(rec.journal.pub_year, None);
        assert_eq!(rec.journal.pub_month, None);
        assert_eq!(
            rec.journal.medline_date_raw.as_deref(),
            Some("1998 Dec-1999 Jan")
        );
    }

    #[test]
    fn minimal_citation_has_empty_collections() {
        let rec = map_citation(&citation(3, MINIMAL_BODY)).unwrap();
        assert!(rec.authors.is_empty());
        assert!(rec.mesh.is_empty());
        assert!(rec.chemicals.is_empty());
        assert!(rec.keywords.is_empty());
        assert!(rec.grants.is_empty());
        assert!(rec.data_banks.is_empty());
        assert_eq!(rec.total_rows(), 1);
    }

    #[test]
    fn citation_without_pmid_is_skipped_not_fatal() {
        let xml = doc(&format!(
            "<MedlineCitation Status=\"MEDLINE\">{MINIMAL_BODY}</MedlineCitation>{}",
            citation(42, MINIMAL_BODY)
        ));
        let mut stream = parse_stream(xml.as_bytes());
        let first = stream.next().unwrap();
        assert!(matches!(first, Err(Error::MissingPmid { .. })));
        let second = stream.next().unwrap().unwrap();
        match second {
            ParseEvent::Citation(c) => assert_eq!(c.pmid, 42),
            other => panic!("unexpected {other:?}"),
        }
        assert!(stream.next().is_none());
        assert_eq!(stream.stats().skipped_no_pmid, 1);
        assert_eq!(stream.stats().citations, 1);
    }

    #[test]
    fn malformed_xml_aborts_stream() {
        let xml = "<MedlineCitationSet><MedlineCitation><PMID>1</PMID></MedlineCitationSet>";
        let mut stream = parse_stream(xml.as_bytes());
        let mut saw_error = false;
        for ev in &mut stream {
            if let Err(Error::XmlSyntax { .. }) = ev {
                saw_error = true;
            }
        }
        assert!(saw_error);
    }

    #[test]
    fn versioned_pmid_revises_in_place() {
        let v1 = citation(9, MINIMAL_BODY);
        let v2 = "<MedlineCitation Status=\"MEDLINE\"><PMID Version=\"2\">9</PMID>\
            <Article><Journal><Title>J2</Title></Journal><ArticleTitle>T2</ArticleTitle>\
            </Article></MedlineCitation>";
        let xml = doc(&format!("{v1}{v2}"));
        let events: Vec<_> = parse_stream(xml.as_bytes()).map(|e| e.unwrap()).collect();
        assert_eq!(events.len(), 3);
        assert!(matches!(&events[0], ParseEvent::Citation(c) if c.pmid == 9));
        assert_eq!(events[1], ParseEvent::Deletion(9));
        assert!(
            matches!(&events[2], ParseEvent::Citation(c) if c.article_title.as_deref() == Some("T2"))
        );
    }

    #[test]
    fn stale_lower_version_is_dropped() {
        let v2 = "<MedlineCitation><PMID Version=\"2\">9</PMID>\
            <Article><Journal><Title>J2</Title></Journal><ArticleTitle>T2</ArticleTitle>\
            </Article></MedlineCitation>";
        let v1 = citation(9, MINIMAL_BODY);
        let xml = doc(&format!("{v2}{v1}"));
        let events: Vec<_> = parse_stream(xml.as_bytes()).map(|e| e.unwrap()).collect();
        // Deletion + v2 citation; the trailing v1 is stale and suppressed.
        assert_eq!(events.len(), 2);
        assert!(
            matches!(&events[1], ParseEvent::Citation(c) if c.article_title.as_deref() == Some("T2"))
        );
    }

    #[test]
    fn unknown_elements_are_counted_not_fatal() {
        let body = format!("{MINIMAL_BODY}<FutureDtdElement><Inner>x</Inner></FutureDtdElement>");
        let xml = doc(&citation(4, &body));
        let mut stream = parse_stream(xml.as_bytes());
        assert_eq!(stream.by_ref().filter_map(|e| e.ok()).count(), 1);
        assert!(stream.stats().unknown_elements >= 1);
    }

    #[test]
    fn author_without_name_is_dropped_ordinals_stay_sequential() {
        let body = "<Article><Journal><Title>J</Title></Journal><ArticleTitle>T</ArticleTitle>\
            <AuthorList><Author><ForeName>Only</ForeName></Author>\
            <Author><LastName>Real</LastName></Author></AuthorList></Article>";
        let rec = map_citation(&citation(6, body)).unwrap();
        assert_eq!(rec.authors.len(), 1);
        assert_eq!(rec.authors[0].ordinal, 1);
        assert_eq!(rec.authors[0].last_name.as_deref(), Some("Real"));
    }
}
