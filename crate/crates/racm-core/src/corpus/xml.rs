//! Stack Exchange `Posts.xml` dump ingestion.
//!
//! A dump is a flat sequence of `<row .../>` elements. Question rows
//! (`PostTypeId="1"`) carry `Title`, `Body` and `Tags` attributes; answer
//! and wiki rows do not and are skipped. The HTML body is divided into a
//! code part (the contents of `<code>` regions) and a description part
//! (everything else with markup stripped).

use super::{dedup_tags, Corpus, Post};
use crate::error::{CoreError, Result};
use quick_xml::events::Event;
use quick_xml::Reader;
use std::collections::HashSet;
use std::io::BufReader;
use std::path::Path;

pub(super) fn ingest_xml_dump(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let mut reader = Reader::from_reader(BufReader::new(file));
    let mut buf = Vec::new();
    let mut corpus = Corpus::default();
    let mut seen = HashSet::new();
    let mut ordinal = 0usize;

    loop {
        match reader.read_event_into(&mut buf) {
            Ok(Event::Empty(e)) | Ok(Event::Start(e)) if e.name().as_ref() == b"row" => {
                ordinal += 1;
                let mut id = None;
                let mut post_type = None;
                let mut title = None;
                let mut body = None;
                let mut tags = None;
                for attr in e.attributes() {
                    let attr = attr.map_err(|e| CoreError::BadRecord {
                        ordinal,
                        reason: format!("bad attribute: {e}"),
                    })?;
                    let value = attr
                        .unescape_value()
                        .map_err(|e| CoreError::BadRecord {
                            ordinal,
                            reason: format!("bad attribute value: {e}"),
                        })?
                        .into_owned();
                    match attr.key.as_ref() {
                        b"Id" => id = Some(value),
                        b"PostTypeId" => post_type = Some(value),
                        b"Title" => title = Some(value),
                        b"Body" => body = Some(value),
                        b"Tags" => tags = Some(value),
                        _ => {}
                    }
                }
                if post_type.as_deref() != Some("1") {
                    continue; // answers and wiki rows carry no tags
                }
                let id = id.ok_or_else(|| missing(ordinal, "Id"))?;
                let title = title.ok_or_else(|| missing(ordinal, "Title"))?;
                let body = body.ok_or_else(|| missing(ordinal, "Body"))?;
                let tags = tags.ok_or_else(|| missing(ordinal, "Tags"))?;
                let (description, code) = split_body(&body);
                let post = Post {
                    id,
                    title: title.trim().to_string(),
                    description,
                    code,
                    tags: dedup_tags(parse_tags(&tags)),
                };
                corpus.push_checked(post, ordinal, &mut seen)?;
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => {
                return Err(CoreError::BadRecord {
                    ordinal: ordinal + 1,
                    reason: format!("xml error: {e}"),
                })
            }
        }
        buf.clear();
    }
    Ok(corpus)
}

fn missing(ordinal: usize, field: &str) -> CoreError {
    CoreError::BadRecord { ordinal, reason: format!("question row missing {field} attribute") }
}

/// Tags appear either as `<a><b>` or as `|a|b|`.
fn parse_tags(raw: &str) -> Vec<String> {
    let raw = raw.trim();
    let split: Vec<String> = if raw.starts_with('<') {
        raw.split(['<', '>']).filter(|s| !s.is_empty()).map(str::to_string).collect()
    } else if raw.contains('|') {
        raw.split('|').filter(|s| !s.is_empty()).map(str::to_string).collect()
    } else {
        raw.split_whitespace().map(str::to_string).collect()
    };
    split
}

/// Separate `<code>` regions from the rest of an HTML body. The remainder
/// has its markup stripped and entities decoded; code segments are joined
/// with newlines.
fn split_body(body: &str) -> (String, String) {
    let mut description = String::new();
    let mut code = String::new();
    let mut rest = body;
    loop {
        match find_ci(rest, "<code>") {
            Some(open) => {
                description.push_str(&rest[..open]);
                let after = &rest[open + 6..];
                match find_ci(after, "</code>") {
                    Some(close) => {
                        if !code.is_empty() {
                            code.push('\n');
                        }
                        code.push_str(&after[..close]);
                        rest = &after[close + 7..];
                    }
                    None => {
                        // unterminated region: treat the tail as code
                        if !code.is_empty() {
                            code.push('\n');
                        }
                        code.push_str(after);
                        rest = "";
                    }
                }
            }
            None => {
                description.push_str(rest);
                break;
            }
        }
    }
    let description = decode_entities(&strip_markup(&description));
    let code = decode_entities(&code);
    (normalize_ws(&description), code.trim().to_string())
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

/// Remove `<...>` spans, replacing each with a space so words stay apart.
fn strip_markup(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_tag = false;
    for c in s.chars() {
        match c {
            '<' => {
                in_tag = true;
                out.push(' ');
            }
            '>' if in_tag => in_tag = false,
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    out
}

fn decode_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c != '&' {
            out.push(c);
            continue;
        }
        let rest = &s[i..];
        let Some(semi) = rest.find(';') else {
            out.push(c);
            continue;
        };
        let entity = &rest[1..semi];
        let decoded = match entity {
            "lt" => Some('<'),
            "gt" => Some('>'),
            "amp" => Some('&'),
            "quot" => Some('"'),
            "apos" => Some('\''),
            "nbsp" => Some(' '),
            _ => {
                if let Some(num) = entity.strip_prefix("#x").or_else(|| entity.strip_prefix("#X")) {
                    u32::from_str_radix(num, 16).ok().and_then(char::from_u32)
                } else if let Some(num) = entity.strip_prefix('#') {
                    num.parse::<u32>().ok().and_then(char::from_u32)
                } else {
                    None
                }
            }
        };
        match decoded {
            Some(d) if semi <= 12 => {
                out.push(d);
                for _ in 0..semi {
                    chars.next();
                }
            }
            _ => out.push(c),
        }
    }
    out
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
