use std::fmt;
use std::str::FromStr;

use super::TreeError;

const FORBIDDEN: &[char] = &['/', '.', '#', '$', '[', ']'];

/// Checks a single key for use as a path segment.
pub fn validate_segment(segment: &str) -> Result<(), TreeError> {
    if segment.is_empty() {
        return Err(TreeError::InvalidPath("empty segment".into()));
    }
    if let Some(c) = segment
        .chars()
        .find(|c| FORBIDDEN.contains(c) || c.is_control())
    {
        return Err(TreeError::InvalidPath(format!(
            "segment {segment:?} contains forbidden character {c:?}"
        )));
    }
    Ok(())
}

/// Escapes an arbitrary string (an email, a device token) into a valid
/// segment. `%` and every forbidden character become `%XX`.
pub fn escape_key(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        if c == '%' || FORBIDDEN.contains(&c) || c.is_control() {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        } else {
            out.push(c);
        }
    }
    if out.is_empty() {
        out.push_str("%00");
    }
    out
}

/// Inverse of [`escape_key`].
pub fn unescape_key(key: &str) -> Option<String> {
    if key == "%00" {
        return Some(String::new());
    }
    let bytes = key.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = key.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

/// Slash-separated location in the tree. The empty path is the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreePath {
    segments: Vec<String>,
}

impl TreePath {
    pub fn root() -> Self {
        Self::default()
    }

    /// Parses `a/b/c`. Leading and trailing slashes are ignored, so `/a/b/`
    /// and `a/b` name the same node.
    pub fn parse(text: &str) -> Result<Self, TreeError> {
        let trimmed = text.trim_matches('/');
        if trimmed.is_empty() {
            return Ok(Self::root());
        }
        let segments = trimmed
            .split('/')
            .map(|s| validate_segment(s).map(|_| s.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { segments })
    }

    pub fn from_segments<I, S>(segments: I) -> Result<Self, TreeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        for s in &segments {
            validate_segment(s)?;
        }
        Ok(Self { segments })
    }

    pub fn child(&self, segment: impl Into<String>) -> Result<Self, TreeError> {
        let segment = segment.into();
        validate_segment(&segment)?;
        let mut segments = self.segments.clone();
        segments.push(segment);
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn is_root(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn last(&self) -> Option<&str> {
        self.segments.last().map(String::as_str)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.segments.is_empty() {
            return None;
        }
        Some(Self {
            segments: self.segments[..self.segments.len() - 1].to_vec(),
        })
    }

    pub fn starts_with(&self, prefix: &TreePath) -> bool {
        self.segments.starts_with(&prefix.segments)
    }
}

impl fmt::Display for TreePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.segments.join("/"))
    }
}

impl FromStr for TreePath {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum PatternSegment {
    Literal(String),
    Wildcard,
}

/// A path whose `*` segments match any single segment.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PathPattern {
    segments: Vec<PatternSegment>,
}

impl PathPattern {
    pub fn parse(text: &str) -> Result<Self, TreeError> {
        let trimmed = text.trim_matches('/');
        if trimmed.is_empty() {
            return Ok(Self { segments: vec![] });
        }
        let segments = trimmed
            .split('/')
            .map(|s| {
                if s == "*" {
                    Ok(PatternSegment::Wildcard)
                } else {
                    validate_segment(s).map(|_| PatternSegment::Literal(s.to_string()))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { segments })
    }

    pub fn matches(&self, path: &TreePath) -> bool {
        self.segments.len() == path.segments.len()
            && self
                .segments
                .iter()
                .zip(&path.segments)
                .all(|(p, s)| match p {
                    PatternSegment::Wildcard => true,
                    PatternSegment::Literal(l) => l == s,
                })
    }
}

impl fmt::Display for PathPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self
            .segments
            .iter()
            .map(|s| match s {
                PatternSegment::Wildcard => "*",
                PatternSegment::Literal(l) => l.as_str(),
            })
            .collect();
        f.write_str(&parts.join("/"))
    }
}
