use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{KgError, Quadruple, Timestamp, Vocab};

/// Whether unseen names extend the vocabulary or are rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseMode {
    Strict,
    Grow,
}

/// How the fourth field of an event line becomes a tick.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeFormat {
    /// Opaque labels. Ticks are dense ranks of the sorted distinct labels once
    /// a whole file is loaded (ISO dates sort chronologically).
    #[default]
    Label,
    /// Decimal integers used directly as ticks, gaps preserved.
    Integer,
}

/// Parses one `s\tr\to\tt` line.
pub fn parse_quadruple_line(
    line: &str,
    vocab: &mut Vocab,
    mode: ParseMode,
    time_format: TimeFormat,
) -> Result<Quadruple, KgError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 || fields.iter().any(|f| f.is_empty()) {
        return Err(KgError::MalformedLine(fields.len()));
    }
    let time = match time_format {
        TimeFormat::Integer => {
            let t: u32 = fields[3]
                .trim()
                .parse()
                .map_err(|_| KgError::NonNumericTime(fields[3].to_string()))?;
            if mode == ParseMode::Strict && t as usize >= vocab.num_times() {
                return Err(KgError::UnknownSymbol {
                    kind: "time",
                    name: fields[3].to_string(),
                });
            }
            vocab.ensure_integer_tick(t);
            Timestamp(t)
        }
        TimeFormat::Label => match mode {
            ParseMode::Grow => vocab.intern_time(fields[3]),
            ParseMode::Strict => vocab.time_id(fields[3]).ok_or_else(|| KgError::UnknownSymbol {
                kind: "time",
                name: fields[3].to_string(),
            })?,
        },
    };
    let (subject, relation, object) = match mode {
        ParseMode::Grow => (
            vocab.intern_entity(fields[0]),
            vocab.intern_relation(fields[1]),
            vocab.intern_entity(fields[2]),
        ),
        ParseMode::Strict => {
            let unknown = |kind, name: &str| KgError::UnknownSymbol {
                kind,
                name: name.to_string(),
            };
            (
                vocab.entity_id(fields[0]).ok_or_else(|| unknown("entity", fields[0]))?,
                vocab.relation_id(fields[1]).ok_or_else(|| unknown("relation", fields[1]))?,
                vocab.entity_id(fields[2]).ok_or_else(|| unknown("entity", fields[2]))?,
            )
        }
    };
    Ok(Quadruple {
        subject,
        relation,
        object,
        time,
    })
}

fn with_line(line: usize, e: KgError) -> KgError {
    KgError::AtLine {
        line,
        source: Box::new(e),
    }
}

/// Reads a raw event log into a fresh vocabulary. Blank lines are skipped.
/// Under [`TimeFormat::Label`] the time table is re-sorted after reading so
/// that tick order follows label order.
pub fn load_events<R: BufRead>(reader: R, time_format: TimeFormat) -> Result<(Vocab, Vec<Quadruple>), KgError> {
    let mut vocab = Vocab::new();
    let mut quads = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q = parse_quadruple_line(&line, &mut vocab, ParseMode::Grow, time_format)
            .map_err(|e| with_line(i + 1, e))?;
        quads.push(q);
    }
    if time_format == TimeFormat::Label {
        let remap = vocab.sort_times();
        for q in &mut quads {
            q.time = Timestamp(remap[q.time.0 as usize]);
        }
    }
    Ok((vocab, quads))
}

/// Reads quadruples against an existing vocabulary (strict mode, labels
/// looked up as written).
pub fn read_quads<R: BufRead>(reader: R, vocab: &Vocab) -> Result<Vec<Quadruple>, KgError> {
    let mut vocab = vocab.clone();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let q = parse_quadruple_line(&line, &mut vocab, ParseMode::Strict, TimeFormat::Label)
            .map_err(|e| with_line(i + 1, e))?;
        out.push(q);
    }
    Ok(out)
}

/// Writes quadruples as `s\tr\to\tt` lines using vocabulary names.
pub fn write_quads<W: Write>(mut w: W, quads: &[Quadruple], vocab: &Vocab) -> Result<(), KgError> {
    for q in quads {
        let name = |o: Option<&str>, what: &'static str| {
            o.map(str::to_string).ok_or_else(|| KgError::UnknownSymbol {
                kind: what,
                name: format!("{q:?}"),
            })
        };
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            name(vocab.entity_name(q.subject), "entity")?,
            name(vocab.relation_name(q.relation), "relation")?,
            name(vocab.entity_name(q.object), "entity")?,
            name(vocab.time_label(q.time), "time")?,
        )?;
    }
    Ok(())
}
