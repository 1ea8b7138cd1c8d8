use std::collections::BTreeMap;

use serde_json::{Map, Number, Value};

use super::path::validate_segment;
use super::TreeError;

/// A node of the tree: a scalar leaf, a keyed map, a list, or nothing.
///
/// Values are normalized before they are stored: lists become maps keyed by
/// `"0"`, `"1"`, ... and `Absent` children or empty maps disappear. A stored
/// tree therefore never contains `List`, `Absent` children or empty maps.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum TreeValue {
    #[default]
    Absent,
    Bool(bool),
    Int(i64),
    Float(f64),
    String(String),
    Map(BTreeMap<String, TreeValue>),
    List(Vec<TreeValue>),
}

impl TreeValue {
    pub fn map() -> Self {
        TreeValue::Map(BTreeMap::new())
    }

    /// Builds a map from `(key, value)` pairs.
    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<TreeValue>,
    {
        TreeValue::Map(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    pub fn is_absent(&self) -> bool {
        matches!(self, TreeValue::Absent)
    }

    pub fn is_scalar(&self) -> bool {
        matches!(
            self,
            TreeValue::Bool(_) | TreeValue::Int(_) | TreeValue::Float(_) | TreeValue::String(_)
        )
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            TreeValue::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            TreeValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            TreeValue::Float(f) => Some(*f),
            TreeValue::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            TreeValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, TreeValue>> {
        match self {
            TreeValue::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn into_map(self) -> Option<BTreeMap<String, TreeValue>> {
        match self {
            TreeValue::Map(m) => Some(m),
            _ => None,
        }
    }

    /// Child by key; `Absent` for scalars and missing keys.
    pub fn child(&self, key: &str) -> &TreeValue {
        static ABSENT: TreeValue = TreeValue::Absent;
        match self {
            TreeValue::Map(m) => m.get(key).unwrap_or(&ABSENT),
            _ => &ABSENT,
        }
    }

    /// Returns the canonical stored form of this value and checks every key.
    pub fn normalized(self) -> Result<TreeValue, TreeError> {
        Ok(match self {
            TreeValue::List(items) => TreeValue::Map(
                items
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| (i.to_string(), v))
                    .collect(),
            )
            .normalized()?,
            TreeValue::Map(entries) => {
                let mut out = BTreeMap::new();
                for (k, v) in entries {
                    validate_segment(&k)?;
                    let v = v.normalized()?;
                    if !v.is_absent() {
                        out.insert(k, v);
                    }
                }
                if out.is_empty() {
                    TreeValue::Absent
                } else {
                    TreeValue::Map(out)
                }
            }
            scalar => scalar,
        })
    }

    /// Number of nodes, counting this one unless it is absent.
    pub fn node_count(&self) -> usize {
        match self {
            TreeValue::Absent => 0,
            TreeValue::Map(m) => 1 + m.values().map(TreeValue::node_count).sum::<usize>(),
            TreeValue::List(l) => 1 + l.iter().map(TreeValue::node_count).sum::<usize>(),
            _ => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            TreeValue::Absent => Value::Null,
            TreeValue::Bool(b) => Value::Bool(*b),
            TreeValue::Int(i) => Value::Number((*i).into()),
            TreeValue::Float(f) => Number::from_f64(*f).map_or(Value::Null, Value::Number),
            TreeValue::String(s) => Value::String(s.clone()),
            TreeValue::Map(m) => Value::Object(
                m.iter()
                    .map(|(k, v)| (k.clone(), v.to_json()))
                    .collect::<Map<_, _>>(),
            ),
            TreeValue::List(l) => Value::Array(l.iter().map(TreeValue::to_json).collect()),
        }
    }

    pub fn from_json(value: &Value) -> TreeValue {
        match value {
            Value::Null => TreeValue::Absent,
            Value::Bool(b) => TreeValue::Bool(*b),
            Value::Number(n) => match n.as_i64() {
                Some(i) => TreeValue::Int(i),
                None => TreeValue::Float(n.as_f64().unwrap_or(f64::NAN)),
            },
            Value::String(s) => TreeValue::String(s.clone()),
            Value::Array(a) => TreeValue::List(a.iter().map(TreeValue::from_json).collect()),
            Value::Object(o) => TreeValue::Map(
                o.iter()
                    .map(|(k, v)| (k.clone(), TreeValue::from_json(v)))
                    .collect(),
            ),
        }
    }
}

impl From<bool> for TreeValue {
    fn from(v: bool) -> Self {
        TreeValue::Bool(v)
    }
}

impl From<i64> for TreeValue {
    fn from(v: i64) -> Self {
        TreeValue::Int(v)
    }
}

impl From<u64> for TreeValue {
    fn from(v: u64) -> Self {
        TreeValue::Int(v as i64)
    }
}

impl From<i32> for TreeValue {
    fn from(v: i32) -> Self {
        TreeValue::Int(v.into())
    }
}

impl From<f64> for TreeValue {
    fn from(v: f64) -> Self {
        TreeValue::Float(v)
    }
}

impl From<&str> for TreeValue {
    fn from(v: &str) -> Self {
        TreeValue::String(v.to_string())
    }
}

impl From<String> for TreeValue {
    fn from(v: String) -> Self {
        TreeValue::String(v)
    }
}

impl<T: Into<TreeValue>> From<Vec<T>> for TreeValue {
    fn from(v: Vec<T>) -> Self {
        TreeValue::List(v.into_iter().map(Into::into).collect())
    }
}
