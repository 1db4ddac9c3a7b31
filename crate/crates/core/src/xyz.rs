//! Multi-frame XYZ reading and writing.
//!
//! Each frame is a count line, a comment line and `El x y z` rows with
//! coordinates in Å printed as 6-decimal fixed point. The comment line may
//! carry a JSON object; its `name` field becomes [`Structure::name`].

use std::io::{BufRead, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{GpffError, Result};
use crate::geometry::Structure;

pub fn read_xyz<R: BufRead>(reader: R) -> Result<Vec<Structure>> {
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    parse_lines(&lines)
}

pub fn parse_xyz(text: &str) -> Result<Vec<Structure>> {
    let lines: Vec<String> = text.lines().map(str::to_string).collect();
    parse_lines(&lines)
}

pub fn read_xyz_file(path: impl AsRef<Path>) -> Result<Vec<Structure>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_xyz(std::io::BufReader::new(file))
}

fn parse_lines(lines: &[String]) -> Result<Vec<Structure>> {
    let mut frames = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let count_line = i + 1;
        let count: usize = lines[i].trim().parse().map_err(|_| GpffError::Parse {
            line: count_line,
            message: format!("expected atom count, found '{}'", lines[i].trim()),
        })?;
        if count == 0 {
            return Err(GpffError::Parse {
                line: count_line,
                message: "frame declares zero atoms".into(),
            });
        }
        let comment = lines.get(i + 1).ok_or_else(|| GpffError::Parse {
            line: count_line + 1,
            message: "missing comment line".into(),
        })?;
        let name = parse_comment(comment);
        let mut elements = Vec::with_capacity(count);
        let mut positions = Vec::with_capacity(count);
        for k in 0..count {
            let idx = i + 2 + k;
            let line = lines.get(idx).ok_or_else(|| GpffError::Parse {
                line: idx + 1,
                message: format!("frame declares {count} atoms but file ends after {k}"),
            })?;
            let (el, pos) = parse_atom(line, idx + 1, count, k)?;
            elements.push(el);
            positions.push(pos);
        }
        let mut s = Structure::new(elements, positions).map_err(|e| GpffError::Parse {
            line: count_line,
            message: e.to_string(),
        })?;
        s.name = name;
        frames.push(s);
        i += 2 + count;
    }
    Ok(frames)
}

fn parse_comment(comment: &str) -> Option<String> {
    match serde_json::from_str::<Value>(comment.trim()) {
        Ok(Value::Object(map)) => map.get("name").and_then(Value::as_str).map(str::to_string),
        _ => None,
    }
}

fn parse_atom(line: &str, lineno: usize, count: usize, k: usize) -> Result<(String, [f64; 3])> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(GpffError::Parse {
            line: lineno,
            message: format!(
                "expected 'El x y z' for atom {} of {count}, found '{}'",
                k + 1,
                line.trim()
            ),
        });
    }
    let el = fields[0];
    if !el.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        || !el.chars().all(|c| c.is_ascii_alphanumeric())
    {
        return Err(GpffError::Parse {
            line: lineno,
            message: format!("invalid element symbol '{el}'"),
        });
    }
    let mut pos = [0.0f64; 3];
    for d in 0..3 {
        pos[d] = fields[d + 1].parse().map_err(|_| GpffError::Parse {
            line: lineno,
            message: format!("invalid coordinate '{}'", fields[d + 1]),
        })?;
        if !pos[d].is_finite() {
            return Err(GpffError::Parse {
                line: lineno,
                message: format!("non-finite coordinate '{}'", fields[d + 1]),
            });
        }
    }
    Ok((el.to_string(), pos))
}

pub fn write_xyz<W: Write>(structures: &[Structure], mut w: W) -> Result<()> {
    for s in structures {
        writeln!(w, "{}", s.len())?;
        match &s.name {
            Some(name) => writeln!(w, "{}", serde_json::json!({ "name": name }))?,
            None => writeln!(w)?,
        }
        for (el, p) in s.elements.iter().zip(&s.positions) {
            writeln!(w, "{} {:.6} {:.6} {:.6}", el, p[0], p[1], p[2])?;
        }
    }
    Ok(())
}

pub fn to_xyz_string(structures: &[Structure]) -> String {
    let mut buf = Vec::new();
    write_xyz(structures, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("xyz output is ASCII")
}

pub fn write_xyz_file(path: impl AsRef<Path>, structures: &[Structure]) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = std::io::BufWriter::new(file);
    write_xyz(structures, &mut w)?;
    w.flush()?;
    Ok(())
}
