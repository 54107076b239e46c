//! Table representation, tokenization, template linearization, and gold
//! content-plan label extraction.
//!
//! A table is an ordered list of key-value slots. Linearization flattens it
//! into the template sentence `key is value ;` per slot. Gold plan labels
//! come from locating each slot's value in the reference summary (exact
//! match, then alias lookup, then token-overlap) and ranking the hits by
//! position.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Highest rank a slot can receive in a content plan. Slots ranked beyond
/// this become unselected, which keeps the CRF label alphabet bounded.
pub const RANK_CAP: usize = 16;

/// Label value for a slot that does not occur in the summary.
pub const NO_LABEL: usize = 0;

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const SEP_ID: usize = 4;
pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: empty table")]
    EmptyTable { line: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("alias table: {0}")]
    BadAliases(String),
}

/// One key-value pair of a table. Key and value are token sequences; the
/// value may be empty (kept so slot indices stay stable for labeling).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub key: Vec<String>,
    pub value: Vec<String>,
}

impl Slot {
    pub fn new(key: &str, value: &str) -> Self {
        Slot {
            key: tokenize(key),
            value: tokenize(value),
        }
    }

    pub fn has_empty_value(&self) -> bool {
        self.value.is_empty()
    }
}

/// Ordered list of slots. Duplicate keys are allowed and disambiguated by
/// position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub slots: Vec<Slot>,
    pub source_id: String,
}

impl Table {
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Table {
            slots: pairs.iter().map(|(k, v)| Slot::new(k, v)).collect(),
            source_id: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Per-slot plan labels: `0` means unselected, `1..=RANK_CAP` is the rank
/// of the slot in the summary order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanLabels(pub Vec<usize>);

impl PlanLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn selected(&self) -> usize {
        self.0.iter().filter(|&&l| l != NO_LABEL).count()
    }

    /// Gold labels must use each rank 1..=k exactly once.
    pub fn is_permutation_prefix(&self) -> bool {
        let mut ranks: Vec<usize> = self.0.iter().copied().filter(|&l| l != NO_LABEL).collect();
        ranks.sort_unstable();
        ranks.iter().enumerate().all(|(i, &r)| r == i + 1)
    }
}

impl fmt::Display for PlanLabels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|&l| {
                if l == NO_LABEL {
                    "∅".to_string()
                } else {
                    l.to_string()
                }
            })
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

/// A parsed dataset record: tokenized table plus tokenized reference
/// summary.
#[derive(Debug, Clone)]
pub struct Record {
    pub table: Table,
    pub summary: Vec<String>,
}

const SPLIT_PUNCT: [char; 8] = [',', '.', ';', ':', '(', ')', '-', '"'];

/// Lowercase, split on whitespace, and break the punctuation characters
/// `, . ; : ( ) - "` into standalone tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        let mut cur = String::new();
        for ch in chunk.chars() {
            if SPLIT_PUNCT.contains(&ch) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Inverse of `tokenize` up to the spacing/case normal form: tokens joined
/// by single spaces.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Flatten a table into the template sentence: for every slot,
/// `key is value ;`.
pub fn linearize(table: &Table) -> Vec<String> {
    let mut out = Vec::new();
    for slot in &table.slots {
        out.extend(slot.key.iter().cloned());
        out.push("is".to_string());
        out.extend(slot.value.iter().cloned());
        out.push(";".to_string());
    }
    out
}

/// Value-form aliases for fuzzy matching, e.g. country names to their
/// nationality adjectives. Keys and alias forms are stored tokenized.
#[derive(Debug, Clone, Default)]
pub struct AliasTable {
    map: HashMap<String, Vec<Vec<String>>>,
}

impl AliasTable {
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let raw: HashMap<String, Vec<String>> = serde_json::from_str(text)
            .map_err(|e| IngestError::BadAliases(e.to_string()))?;
        let mut map = HashMap::new();
        for (k, forms) in raw {
            let key = detokenize(&tokenize(&k));
            let toks: Vec<Vec<String>> = forms.iter().map(|f| tokenize(f)).collect();
            map.insert(key, toks);
        }
        Ok(AliasTable { map })
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    /// The alias table shipped with the crate (nationality adjectives and
    /// a few common equivalences).
    pub fn builtin() -> Self {
        Self::from_json(include_str!("../data/aliases.json"))
            .expect("builtin alias table parses")
    }

    fn forms_for(&self, tokens: &[String]) -> Vec<&Vec<String>> {
        let mut out = Vec::new();
        if let Some(forms) = self.map.get(&detokenize(tokens)) {
            out.extend(forms.iter());
        }
        if tokens.len() > 1 {
            for t in tokens {
                if let Some(forms) = self.map.get(t.as_str()) {
                    out.extend(forms.iter());
                }
            }
        }
        out
    }
}

fn find_subsequence(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
}

/// Locate a slot's value in a token sequence. Tiers, in order:
/// 1. earliest exact contiguous occurrence of the value tokens;
/// 2. earliest occurrence of any alias form of the value;
/// 3. if at least half of the value tokens occur anywhere, the earliest
///    position holding one of them.
pub fn fuzzy_match(slot: &Slot, summary: &[String], aliases: &AliasTable) -> Option<usize> {
    if slot.value.is_empty() {
        return None;
    }
    if let Some(pos) = find_subsequence(summary, &slot.value) {
        return Some(pos);
    }
    let alias_hit = aliases
        .forms_for(&slot.value)
        .into_iter()
        .filter_map(|form| find_subsequence(summary, form))
        .min();
    if alias_hit.is_some() {
        return alias_hit;
    }
    let covered = slot
        .value
        .iter()
        .filter(|v| summary.contains(v))
        .count();
    if covered * 2 >= slot.value.len() {
        summary
            .iter()
            .position(|t| slot.value.contains(t))
    } else {
        None
    }
}

/// Gold plan labels: slots whose values are located in the summary are
/// ranked by ascending position (ties by table order) and labeled 1..k;
/// everything else gets the unselected label. Ranks past `RANK_CAP` are
/// dropped to unselected.
pub fn extract_plan_labels(table: &Table, summary: &[String], aliases: &AliasTable) -> PlanLabels {
    let mut hits: Vec<(usize, usize)> = table
        .slots
        .iter()
        .enumerate()
        .filter_map(|(i, slot)| fuzzy_match(slot, summary, aliases).map(|pos| (pos, i)))
        .collect();
    hits.sort_unstable();
    let mut labels = vec![NO_LABEL; table.len()];
    for (rank, &(_, slot_idx)) in hits.iter().enumerate() {
        if rank + 1 > RANK_CAP {
            break;
        }
        labels[slot_idx] = rank + 1;
    }
    PlanLabels(labels)
}

/// Token vocabulary with five reserved entries at fixed ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Build over every table and summary token in the corpus, keeping
    /// tokens with frequency ≥ `min_freq`. Ordering is deterministic:
    /// frequency descending, then lexicographic.
    pub fn build(records: &[Record], min_freq: usize) -> Result<Self, IngestError> {
        if records.is_empty() {
            return Err(IngestError::EmptyCorpus);
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for rec in records {
            for slot in &rec.table.slots {
                for t in slot.key.iter().chain(slot.value.iter()) {
                    *freq.entry(t).or_insert(0) += 1;
                }
            }
            for t in &rec.summary {
                *freq.entry(t).or_insert(0) += 1;
            }
        }
        // template words are always part of the generator's input
        for t in ["is", ";"] {
            freq.entry(t).or_insert(1);
        }
        let mut entries: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|&(t, c)| c >= min_freq && !RESERVED_TOKENS.contains(&t))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(entries.iter().map(|(t, _)| t.to_string()));
        Ok(Self::from_tokens(id_to_token))
    }

    /// Rebuild from an ordered token list (checkpoint reload path).
    pub fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            token_to_id,
            id_to_token,
        }
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

/// Parse one JSONL dataset line: `{"table": [[key, value], ...],
/// "summary": "...", "id": optional}`.
pub fn parse_record(line: &str, line_no: usize) -> Result<Record, IngestError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| IngestError::Malformed {
            line: line_no,
            msg: format!("bad JSON: {e}"),
        })?;
    let obj = value.as_object().ok_or_else(|| IngestError::Malformed {
        line: line_no,
        msg: "record is not a JSON object".into(),
    })?;
    let table_field = obj.get("table").ok_or_else(|| IngestError::Malformed {
        line: line_no,
        msg: "missing \"table\" field".into(),
    })?;
    let pairs = table_field.as_array().ok_or_else(|| IngestError::Malformed {
        line: line_no,
        msg: "\"table\" must be an array of [key, value] pairs".into(),
    })?;
    if pairs.is_empty() {
        return Err(IngestError::EmptyTable { line: line_no });
    }
    let mut slots = Vec::with_capacity(pairs.len());
    for p in pairs {
        let pair = p.as_array().filter(|a| a.len() == 2).ok_or_else(|| {
            IngestError::Malformed {
                line: line_no,
                msg: "table entry is not a [key, value] pair".into(),
            }
        })?;
        let key = pair[0].as_str().ok_or_else(|| IngestError::Malformed {
            line: line_no,
            msg: "slot key is not a string".into(),
        })?;
        let value = pair[1].as_str().ok_or_else(|| IngestError::Malformed {
            line: line_no,
            msg: "slot value is not a string".into(),
        })?;
        let slot = Slot::new(key, value);
        if slot.key.is_empty() {
            return Err(IngestError::Malformed {
                line: line_no,
                msg: "slot key tokenizes to nothing".into(),
            });
        }
        slots.push(slot);
    }
    let summary = obj
        .get("summary")
        .and_then(|v| v.as_str())
        .ok_or_else(|| IngestError::Malformed {
            line: line_no,
            msg: "missing \"summary\" field".into(),
        })?;
    let source_id = obj
        .get("id")
        .and_then(|v| v.as_str())
        .map(|s| s.to_string())
        .unwrap_or_else(|| line_no.to_string());
    Ok(Record {
        table: Table {
            slots,
            source_id,
        },
        summary: tokenize(summary),
    })
}

/// Read a JSONL dataset file, skipping blank lines.
pub fn read_jsonl(path: &Path) -> Result<Vec<Record>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(line, i + 1)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_case_folding() {
        assert_eq!(tokenize("Edinho Júnior"), vec!["edinho", "júnior"]);
    }

    #[test]
    fn tokenize_punctuation_split() {
        assert_eq!(tokenize("tl;dr:"), vec!["tl", ";", "dr", ":"]);
        assert_eq!(tokenize("7 march, 1994"), vec!["7", "march", ",", "1994"]);
    }

    #[test]
    fn tokenize_idempotent_on_normal_form() {
        let s = "Name: Edinho (the \"Striker\") - b. 1994";
        let once = tokenize(s);
        let twice = tokenize(&detokenize(&once));
        assert_eq!(once, twice);
    }

    #[test]
    fn parse_record_single_slot() {
        let rec = parse_record(
            r#"{"table": [["name", "edinho júnior"]], "summary": "edinho júnior plays ."}"#,
            1,
        )
        .unwrap();
        assert_eq!(rec.table.len(), 1);
        assert_eq!(rec.table.slots[0].key, vec!["name"]);
        assert_eq!(rec.table.slots[0].value, vec!["edinho", "júnior"]);
    }

    #[test]
    fn parse_record_empty_table_rejected() {
        let err = parse_record(r#"{"table": [], "summary": "x"}"#, 3).unwrap_err();
        assert!(matches!(err, IngestError::EmptyTable { line: 3 }));
    }

    #[test]
    fn parse_record_value_punctuation() {
        let rec = parse_record(
            r#"{"table": [["birth_date", "7 march, 1994"]], "summary": "born 7 march , 1994"}"#,
            1,
        )
        .unwrap();
        assert_eq!(
            rec.table.slots[0].value,
            vec!["7", "march", ",", "1994"]
        );
    }

    #[test]
    fn parse_record_missing_fields() {
        assert!(parse_record(r#"{"summary": "x"}"#, 1).is_err());
        assert!(parse_record(r#"{"table": [["a","b"]]}"#, 1).is_err());
        assert!(parse_record("not json", 1).is_err());
    }

    #[test]
    fn linearize_single_slot_template() {
        let t = Table::from_pairs(&[("name", "edinho júnior")]);
        assert_eq!(
            detokenize(&linearize(&t)),
            "name is edinho júnior ;"
        );
    }

    #[test]
    fn linearize_two_slots() {
        let t = Table::from_pairs(&[
            ("name", "edinho júnior"),
            ("fullname", "edon júnior viegas amaral"),
        ]);
        assert_eq!(
            detokenize(&linearize(&t)),
            "name is edinho júnior ; fullname is edon júnior viegas amaral ;"
        );
    }

    #[test]
    fn linearize_empty_value_kept() {
        let t = Table::from_pairs(&[("height", "")]);
        assert!(t.slots[0].has_empty_value());
        assert_eq!(detokenize(&linearize(&t)), "height is ;");
    }

    #[test]
    fn linearize_length_identity() {
        let t = Table::from_pairs(&[
            ("name", "edinho júnior"),
            ("birth_date", "7 march, 1994"),
            ("height", ""),
        ]);
        let want: usize = t
            .slots
            .iter()
            .map(|s| s.key.len() + s.value.len() + 2)
            .sum();
        assert_eq!(linearize(&t).len(), want);
    }

    #[test]
    fn fuzzy_exact_at_position_zero() {
        let slot = Slot::new("name", "edinho júnior");
        let summary = tokenize("edinho júnior ( born 7 march , 1994 )");
        assert_eq!(
            fuzzy_match(&slot, &summary, &AliasTable::default()),
            Some(0)
        );
    }

    #[test]
    fn fuzzy_absent_value() {
        let slot = Slot::new("club", "boavista");
        let summary = tokenize("a sentence with nothing relevant");
        assert_eq!(fuzzy_match(&slot, &summary, &AliasTable::default()), None);
    }

    #[test]
    fn fuzzy_alias_lookup() {
        let aliases = AliasTable::from_json(r#"{"brazil": ["brazilian"]}"#).unwrap();
        let slot = Slot::new("nationality", "brazil");
        let summary = tokenize("he is a brazilian footballer");
        assert_eq!(fuzzy_match(&slot, &summary, &aliases), Some(3));
    }

    #[test]
    fn fuzzy_builtin_aliases_cover_nationalities() {
        let aliases = AliasTable::builtin();
        let slot = Slot::new("nationality", "brazil");
        let summary = tokenize("a brazilian striker");
        assert_eq!(fuzzy_match(&slot, &summary, &aliases), Some(1));
    }

    #[test]
    fn fuzzy_half_overlap_tier() {
        let slot = Slot::new("clubs", "real madrid castilla");
        // 2 of 3 value tokens occur, scattered
        let summary = tokenize("he joined madrid after leaving real sociedad");
        let pos = fuzzy_match(&slot, &summary, &AliasTable::default());
        assert_eq!(pos, Some(2)); // "madrid" is the first shared token
    }

    #[test]
    fn fuzzy_below_half_overlap_fails() {
        let slot = Slot::new("clubs", "real madrid castilla b");
        let summary = tokenize("he joined madrid");
        assert_eq!(fuzzy_match(&slot, &summary, &AliasTable::default()), None);
    }

    #[test]
    fn fuzzy_exact_matches_brute_force_scan() {
        // brute-force oracle over every start position
        let slot = Slot::new("x", "b c");
        let summary = tokenize("a b c d b c");
        let needle = &slot.value;
        let mut oracle = None;
        for start in 0..summary.len() {
            if start + needle.len() <= summary.len()
                && summary[start..start + needle.len()] == needle[..]
            {
                oracle = Some(start);
                break;
            }
        }
        assert_eq!(
            fuzzy_match(&slot, &summary, &AliasTable::default()),
            oracle
        );
        assert_eq!(oracle, Some(1));
    }

    #[test]
    fn extract_labels_rank_by_position() {
        // five slots; summary realizes them in the order 1,3,2,-,4
        let table = Table::from_pairs(&[
            ("name", "a push and a shove"),
            ("author", "christopher kelly"),
            ("country", "united states"),
            ("language", "english"),
            ("published", "2007"),
        ]);
        let summary = tokenize(
            "a push and a shove is a novel from the united states written by christopher kelly , published in 2007 .",
        );
        let labels = extract_plan_labels(&table, &summary, &AliasTable::default());
        assert_eq!(labels.0, vec![1, 3, 2, NO_LABEL, 4]);
        assert!(labels.is_permutation_prefix());
    }

    #[test]
    fn extract_labels_no_matches() {
        let table = Table::from_pairs(&[("a", "xyz"), ("b", "pqr")]);
        let summary = tokenize("completely unrelated words here");
        let labels = extract_plan_labels(&table, &summary, &AliasTable::default());
        assert_eq!(labels.0, vec![NO_LABEL, NO_LABEL]);
    }

    #[test]
    fn extract_labels_rank_cap() {
        let pairs: Vec<(String, String)> = (0..20)
            .map(|i| (format!("k{i}"), format!("v{i}")))
            .collect();
        let pair_refs: Vec<(&str, &str)> = pairs
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        let table = Table::from_pairs(&pair_refs);
        let summary: Vec<String> = (0..20).map(|i| format!("v{i}")).collect();
        let labels = extract_plan_labels(&table, &summary, &AliasTable::default());
        assert_eq!(labels.selected(), RANK_CAP);
        assert!(labels.is_permutation_prefix());
        assert_eq!(labels.0[19], NO_LABEL);
    }

    #[test]
    fn vocab_single_record() {
        let rec = parse_record(
            r#"{"table": [["name", "ada"]], "summary": "ada wrote programs"}"#,
            1,
        )
        .unwrap();
        let vocab = Vocab::build(&[rec], 1).unwrap();
        // distinct tokens: name, ada, wrote, programs + is, ; + 5 reserved
        assert_eq!(vocab.len(), 11);
        assert_eq!(vocab.id("<pad>"), PAD_ID);
        assert_eq!(vocab.id("nonexistent"), UNK_ID);
    }

    #[test]
    fn vocab_min_freq_drops_hapax() {
        let recs: Vec<Record> = [
            r#"{"table": [["k", "common"]], "summary": "common rare1"}"#,
            r#"{"table": [["k", "common"]], "summary": "common rare2"}"#,
        ]
        .iter()
        .enumerate()
        .map(|(i, l)| parse_record(l, i + 1).unwrap())
        .collect();
        let vocab = Vocab::build(&recs, 2).unwrap();
        assert_eq!(vocab.id("rare1"), UNK_ID);
        assert_ne!(vocab.id("common"), UNK_ID);
    }

    #[test]
    fn vocab_deterministic_across_builds() {
        let recs: Vec<Record> = (0..10)
            .map(|i| {
                parse_record(
                    &format!(
                        r#"{{"table": [["key{i}", "val{i} shared"]], "summary": "sentence {i} shared words"}}"#
                    ),
                    i + 1,
                )
                .unwrap()
            })
            .collect();
        let a = Vocab::build(&recs, 1).unwrap();
        let b = Vocab::build(&recs, 1).unwrap();
        assert_eq!(a.tokens(), b.tokens());
    }

    #[test]
    fn vocab_empty_corpus_rejected() {
        assert!(matches!(
            Vocab::build(&[], 1),
            Err(IngestError::EmptyCorpus)
        ));
    }
}
