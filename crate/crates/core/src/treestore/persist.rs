//! Line-oriented snapshot document.
//!
//! ```text
//! safeguard-tree v1 commit=<n>
//! <canonical-path>\t<type-tag>\t<encoded-scalar>
//! ...
//! ```
//!
//! One line per leaf, sorted by path segments, every line newline-terminated.
//! Type tags are `s` (string), `i` (integer), `f` (float) and `b` (boolean).
//! Strings escape `\`, tab, LF and CR with a backslash.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::path::TreePath;
use super::value::TreeValue;
use super::TreeError;

const MAGIC: &str = "safeguard-tree v1 commit=";

pub fn encode(tree: &TreeValue, commit: u64) -> String {
    let mut out = format!("{MAGIC}{commit}\n");
    let mut prefix = Vec::new();
    write_leaves(tree, &mut prefix, &mut out);
    out
}

fn write_leaves(value: &TreeValue, prefix: &mut Vec<String>, out: &mut String) {
    match value {
        TreeValue::Absent => {}
        TreeValue::Map(m) => {
            for (k, v) in m {
                prefix.push(k.clone());
                write_leaves(v, prefix, out);
                prefix.pop();
            }
        }
        TreeValue::List(items) => {
            for (i, v) in items.iter().enumerate() {
                prefix.push(i.to_string());
                write_leaves(v, prefix, out);
                prefix.pop();
            }
        }
        scalar => {
            let (tag, text) = encode_scalar(scalar);
            let _ = writeln!(out, "{}\t{}\t{}", prefix.join("/"), tag, text);
        }
    }
}

fn encode_scalar(value: &TreeValue) -> (char, String) {
    match value {
        TreeValue::String(s) => ('s', escape(s)),
        TreeValue::Int(i) => ('i', i.to_string()),
        TreeValue::Float(f) => ('f', format!("{f:?}")),
        TreeValue::Bool(b) => ('b', b.to_string()),
        _ => unreachable!("only scalars are leaves"),
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str, line: usize) -> Result<String, TreeError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(corrupt(line, format!("bad escape sequence \\{other:?}")));
            }
        }
    }
    Ok(out)
}

fn corrupt(line: usize, msg: impl Into<String>) -> TreeError {
    TreeError::CorruptDocument {
        line,
        reason: msg.into(),
    }
}

/// Parses a snapshot document into `(tree, last commit number)`.
pub fn decode(doc: &str) -> Result<(TreeValue, u64), TreeError> {
    if !doc.ends_with('\n') {
        return Err(corrupt(0, "document is not newline-terminated (truncated?)"));
    }
    let mut lines = doc[..doc.len() - 1].split('\n');
    let header = lines.next().unwrap_or_default();
    let commit = header
        .strip_prefix(MAGIC)
        .and_then(|n| n.parse::<u64>().ok())
        .ok_or_else(|| corrupt(1, "missing or malformed header"))?;

    let mut root = BTreeMap::new();
    let mut previous: Option<TreePath> = None;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let mut fields = line.splitn(3, '\t');
        let (Some(path), Some(tag), Some(text)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(corrupt(line_no, "expected three tab-separated fields"));
        };
        let path = TreePath::parse(path).map_err(|e| corrupt(line_no, e.to_string()))?;
        if path.is_root() {
            return Err(corrupt(line_no, "leaf at root"));
        }
        if previous.as_ref().is_some_and(|p| p >= &path) {
            return Err(corrupt(line_no, "paths out of order or duplicated"));
        }
        let value = match tag {
            "s" => TreeValue::String(unescape(text, line_no)?),
            "i" => TreeValue::Int(text.parse().map_err(|_| corrupt(line_no, "bad integer"))?),
            "f" => TreeValue::Float(text.parse().map_err(|_| corrupt(line_no, "bad float"))?),
            "b" => TreeValue::Bool(text.parse().map_err(|_| corrupt(line_no, "bad boolean"))?),
            other => return Err(corrupt(line_no, format!("unknown type tag {other:?}"))),
        };
        insert_leaf(&mut root, path.segments(), value)
            .map_err(|reason| corrupt(line_no, reason))?;
        previous = Some(path);
    }

    let tree = if root.is_empty() {
        TreeValue::Absent
    } else {
        TreeValue::Map(root)
    };
    Ok((tree, commit))
}

fn insert_leaf(
    map: &mut BTreeMap<String, TreeValue>,
    segments: &[String],
    value: TreeValue,
) -> Result<(), &'static str> {
    let (head, rest) = segments.split_first().expect("non-root path");
    if rest.is_empty() {
        if map.contains_key(head) {
            return Err("leaf collides with an existing node");
        }
        map.insert(head.clone(), value);
        return Ok(());
    }
    let entry = map.entry(head.clone()).or_insert_with(TreeValue::map);
    match entry {
        TreeValue::Map(child) => insert_leaf(child, rest, value),
        _ => Err("path descends through a scalar leaf"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tree_is_header_only() {
        let doc = encode(&TreeValue::Absent, 0);
        assert_eq!(doc, "safeguard-tree v1 commit=0\n");
        assert_eq!(decode(&doc).unwrap(), (TreeValue::Absent, 0));
    }

    #[test]
    fn line_format_is_path_tag_scalar() {
        let tree = TreeValue::from_pairs([(
            "users",
            TreeValue::from_pairs([(
                "u1",
                TreeValue::from_pairs([
                    ("email", TreeValue::from("a@b.c")),
                    ("verified", TreeValue::from(true)),
                    ("age", TreeValue::from(30)),
                    ("score", TreeValue::from(0.5)),
                    ("note", TreeValue::from("tab\there\nline\\")),
                ]),
            )]),
        )]);
        let doc = encode(&tree, 7);
        assert_eq!(
            doc,
            "safeguard-tree v1 commit=7\n\
             users/u1/age\ti\t30\n\
             users/u1/email\ts\ta@b.c\n\
             users/u1/note\ts\ttab\\there\\nline\\\\\n\
             users/u1/score\tf\t0.5\n\
             users/u1/verified\tb\ttrue\n"
        );
        assert_eq!(decode(&doc).unwrap(), (tree, 7));
    }

    #[test]
    fn malformed_documents_are_corrupt() {
        let good = "safeguard-tree v1 commit=3\na/b\ti\t1\n";
        for bad in [
            "",
            "safeguard-tree v1 commit=3",
            "safeguard-tree v1 commit=3\na/b\ti\t1",
            "safeguard-tree v2 commit=3\n",
            "safeguard-tree v1 commit=x\n",
            "safeguard-tree v1 commit=3\na/b\tq\t1\n",
            "safeguard-tree v1 commit=3\na/b\ti\tone\n",
            "safeguard-tree v1 commit=3\na/b\ti\n",
            "safeguard-tree v1 commit=3\na/b\ti\t1\na/b\ti\t2\n",
            "safeguard-tree v1 commit=3\na\ti\t1\na/b\ti\t2\n",
            "safeguard-tree v1 commit=3\na/b\ts\tbad\\q\n",
        ] {
            assert!(
                matches!(decode(bad), Err(TreeError::CorruptDocument { .. })),
                "{bad:?}"
            );
        }
        assert!(decode(good).is_ok());
        assert!(decode(&good[..good.len() - 3]).is_err());
    }
}
