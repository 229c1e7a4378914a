//! Reader for tab-separated query logs with the column layout
//! `AnonID  Query  QueryTime  ItemRank  ClickURL`.

use std::io::BufRead;

use chrono::NaiveDateTime;

use crate::error::{Error, Result};

/// One raw log line. Click fields are parsed but never consumed downstream;
/// the models condition on queries only.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user_id: String,
    pub query: String,
    pub timestamp: i64,
    pub click_rank: Option<u32>,
    pub click_url: Option<String>,
}

/// Tally of skipped lines, by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SkipCounts {
    pub too_few_fields: u64,
    pub bad_timestamp: u64,
    pub empty_query: u64,
}

impl SkipCounts {
    pub fn total(&self) -> u64 {
        self.too_few_fields + self.bad_timestamp + self.empty_query
    }
}

/// Canonical query form: lowercased, trimmed, internal whitespace collapsed
/// to single spaces. Deduplication and vocabulary lookups all operate on
/// this form.
pub fn normalize_query(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Parses a `YYYY-MM-DD HH:MM:SS` timestamp into Unix seconds (taken as UTC).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(s.trim(), "%Y-%m-%d %H:%M:%S")
        .ok()
        .map(|dt| dt.and_utc().timestamp())
}

/// Reads all records from a log stream, in file order.
///
/// Malformed lines (missing fields, unparseable timestamps, queries that
/// normalize to nothing) are counted and skipped. If more than half of the
/// data lines are malformed the whole input is rejected as misformatted.
pub fn parse_log<R: BufRead>(reader: R) -> Result<(Vec<RawRecord>, SkipCounts)> {
    let mut records = Vec::new();
    let mut skips = SkipCounts::default();
    let mut data_lines: u64 = 0;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 && line.starts_with("AnonID") {
            continue; // header
        }
        if line.is_empty() {
            continue;
        }
        data_lines += 1;

        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            skips.too_few_fields += 1;
            continue;
        }
        let query = normalize_query(fields[1]);
        if query.is_empty() {
            skips.empty_query += 1;
            continue;
        }
        let Some(timestamp) = parse_timestamp(fields[2]) else {
            skips.bad_timestamp += 1;
            continue;
        };

        let click_rank = fields.get(3).and_then(|f| f.trim().parse::<u32>().ok());
        let click_url = fields
            .get(4)
            .map(|f| f.trim())
            .filter(|f| !f.is_empty())
            .map(str::to_string);

        records.push(RawRecord {
            user_id: fields[0].trim().to_string(),
            query,
            timestamp,
            click_rank,
            click_url,
        });
    }

    if data_lines > 0 && skips.total() * 2 > data_lines {
        return Err(Error::LogFormat(format!(
            "{} of {} lines malformed",
            skips.total(),
            data_lines
        )));
    }
    Ok((records, skips))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const HEADER: &str = "AnonID\tQuery\tQueryTime\tItemRank\tClickURL\n";

    #[test]
    fn header_plus_one_valid_line() {
        let input = format!("{HEADER}1\tweather boston\t2006-03-01 10:00:00\t\t\n");
        let (records, skips) = parse_log(Cursor::new(input)).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(skips.total(), 0);
        assert_eq!(records[0].user_id, "1");
        assert_eq!(records[0].query, "weather boston");
        assert_eq!(records[0].click_rank, None);
    }

    #[test]
    fn empty_query_skipped_and_counted() {
        let input = format!("{HEADER}1\t   \t2006-03-01 10:00:00\n1\tok\t2006-03-01 10:01:00\n");
        let (records, skips) = parse_log(Cursor::new(input)).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(skips.empty_query, 1);
    }

    #[test]
    fn bad_timestamp_fixture() {
        // Three data lines, one with an unparseable timestamp.
        let input = format!(
            "{HEADER}1\ta\t2006-03-01 10:00:00\n1\tb\tnot-a-date\n1\tc\t2006-03-01 10:02:00\n"
        );
        let (records, skips) = parse_log(Cursor::new(input)).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(skips.bad_timestamp, 1);
        assert_eq!(records[1].query, "c");
    }

    #[test]
    fn mostly_malformed_input_rejected() {
        let input = format!("{HEADER}garbage\nmore garbage\n1\ta\t2006-03-01 10:00:00\n");
        let err = parse_log(Cursor::new(input)).unwrap_err();
        assert!(err.to_string().contains("malformed"));
    }

    #[test]
    fn normalization_lowercases_and_collapses_whitespace() {
        assert_eq!(normalize_query("  New   YORK  pizza "), "new york pizza");
        assert_eq!(normalize_query("\t\t"), "");
    }

    #[test]
    fn click_fields_parsed_when_present() {
        let input = format!("{HEADER}7\tcars\t2006-03-01 10:00:00\t3\thttp://example.com\n");
        let (records, _) = parse_log(Cursor::new(input)).unwrap();
        assert_eq!(records[0].click_rank, Some(3));
        assert_eq!(records[0].click_url.as_deref(), Some("http://example.com"));
    }
}
