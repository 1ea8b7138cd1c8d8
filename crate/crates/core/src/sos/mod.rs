//! Emergency contacts and SOS fan-out.
//!
//! Contacts live at `contacts/<user>` as an index-keyed list of at most
//! three numbers. Each trigger sends one text per contact through the
//! [`SmsGateway`] port and records the outcome under
//! `alerts/<user>/<alert-id>`.

mod sms;

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::auth::UserRecord;
use crate::geo::GeoPoint;
use crate::time::secs;
use crate::treestore::{PushId, TreeError, TreePath, TreeStore, TreeValue};

pub use sms::{OutboxSmsGateway, SmsError, SmsGateway, SMS_OUTBOX_FILE};

pub const MAX_CONTACTS: usize = 3;
pub const MAP_URL_PREFIX: &str = "https://maps.example/?q=";
const LOCATION_MARKER: &str = "My location: ";

#[derive(Debug, Error)]
pub enum SosError {
    #[error("at most {MAX_CONTACTS} emergency contacts are allowed")]
    TooManyContacts,
    #[error("at least one emergency contact is required")]
    EmptyList,
    #[error("{0:?} is not a phone number")]
    InvalidNumber(String),
    #[error("no emergency contacts have been set")]
    NoContactsSet,
    #[error("unknown user")]
    UnknownUser,
    #[error(transparent)]
    Store(#[from] TreeError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ContactList {
    pub user_id: String,
    pub contacts: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DeliveryStatus {
    Sent,
    Failed,
}

impl DeliveryStatus {
    fn as_str(&self) -> &'static str {
        match self {
            DeliveryStatus::Sent => "sent",
            DeliveryStatus::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Delivery {
    pub number: String,
    pub status: DeliveryStatus,
    pub gateway_message_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SosAlert {
    pub alert_id: String,
    pub user_id: String,
    pub location: GeoPoint,
    pub triggered_at: i64,
    pub deliveries: Vec<Delivery>,
}

impl SosAlert {
    fn to_tree(&self) -> TreeValue {
        let deliveries: Vec<TreeValue> = self
            .deliveries
            .iter()
            .map(|d| {
                let mut m = TreeValue::from_pairs([
                    ("number", TreeValue::from(d.number.as_str())),
                    ("status", d.status.as_str().into()),
                ]);
                if let (TreeValue::Map(m), Some(id)) = (&mut m, &d.gateway_message_id) {
                    m.insert("gateway_message_id".into(), id.as_str().into());
                }
                m
            })
            .collect();
        TreeValue::from_pairs([
            ("user_id", TreeValue::from(self.user_id.as_str())),
            ("lat", self.location.lat().into()),
            ("lon", self.location.lon().into()),
            ("triggered_at", self.triggered_at.into()),
            ("deliveries", TreeValue::List(deliveries)),
        ])
    }

    fn from_tree(alert_id: &str, v: &TreeValue) -> Option<Self> {
        let location = GeoPoint::new(v.child("lat").as_f64()?, v.child("lon").as_f64()?).ok()?;
        let deliveries = indexed_children(v.child("deliveries"))
            .into_iter()
            .filter_map(|d| {
                Some(Delivery {
                    number: d.child("number").as_str()?.to_string(),
                    status: match d.child("status").as_str()? {
                        "sent" => DeliveryStatus::Sent,
                        _ => DeliveryStatus::Failed,
                    },
                    gateway_message_id: d
                        .child("gateway_message_id")
                        .as_str()
                        .map(str::to_string),
                })
            })
            .collect();
        Some(Self {
            alert_id: alert_id.to_string(),
            user_id: v.child("user_id").as_str()?.to_string(),
            location,
            triggered_at: v.child("triggered_at").as_i64()?,
            deliveries,
        })
    }
}

/// Values of a stored list (a map keyed `"0"`, `"1"`, ...) in index order.
pub(crate) fn indexed_children(v: &TreeValue) -> Vec<&TreeValue> {
    let Some(map) = v.as_map() else {
        return Vec::new();
    };
    let mut items: Vec<(usize, &TreeValue)> = map
        .iter()
        .filter_map(|(k, v)| Some((k.parse().ok()?, v)))
        .collect();
    items.sort_by_key(|(i, _)| *i);
    items.into_iter().map(|(_, v)| v).collect()
}

/// Strips spaces and dashes and checks for `+` followed by 4 to 15 digits
/// (the `+` is optional).
pub fn normalize_number(raw: &str) -> Result<String, SosError> {
    let compact: String = raw
        .chars()
        .filter(|c| !matches!(c, ' ' | '-' | '(' | ')'))
        .collect();
    let digits = compact.strip_prefix('+').unwrap_or(&compact);
    if (4..=15).contains(&digits.len()) && digits.chars().all(|c| c.is_ascii_digit()) {
        Ok(compact)
    } else {
        Err(SosError::InvalidNumber(raw.to_string()))
    }
}

/// The text sent to each contact.
pub fn render_message(first: &str, last: &str, location: GeoPoint) -> String {
    format!(
        "EMERGENCY from {first} {last}: I need help. {LOCATION_MARKER}{location} {MAP_URL_PREFIX}{location}"
    )
}

/// Recovers the location from a message produced by [`render_message`].
pub fn parse_location(body: &str) -> Option<GeoPoint> {
    let start = body.find(LOCATION_MARKER)? + LOCATION_MARKER.len();
    let coords = body[start..].split_whitespace().next()?;
    coords.parse().ok()
}

fn contacts_path(user_id: &str) -> Result<TreePath, TreeError> {
    TreePath::from_segments(["contacts", user_id])
}

fn alerts_path(user_id: &str) -> Result<TreePath, TreeError> {
    TreePath::from_segments(["alerts", user_id])
}

pub struct Sos {
    store: Arc<TreeStore>,
    sms: Arc<dyn SmsGateway>,
}

impl Sos {
    pub fn new(store: Arc<TreeStore>, sms: Arc<dyn SmsGateway>) -> Self {
        Self { store, sms }
    }

    /// Replaces the user's contacts with `numbers` (1 to 3, order kept).
    pub fn set_contacts(&self, user_id: &str, numbers: &[String]) -> Result<ContactList, SosError> {
        if numbers.is_empty() {
            return Err(SosError::EmptyList);
        }
        if numbers.len() > MAX_CONTACTS {
            return Err(SosError::TooManyContacts);
        }
        let contacts = numbers
            .iter()
            .map(|n| normalize_number(n))
            .collect::<Result<Vec<_>, _>>()?;
        self.store.set(
            &contacts_path(user_id)?,
            TreeValue::List(contacts.iter().map(|c| c.as_str().into()).collect()),
        )?;
        Ok(ContactList {
            user_id: user_id.to_string(),
            contacts,
        })
    }

    /// `None` until the user has stored a list.
    pub fn get_contacts(&self, user_id: &str) -> Result<Option<ContactList>, SosError> {
        let stored = self.store.get(&contacts_path(user_id)?);
        let contacts: Vec<String> = indexed_children(&stored)
            .into_iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect();
        Ok((!contacts.is_empty()).then(|| ContactList {
            user_id: user_id.to_string(),
            contacts,
        }))
    }

    /// Texts the user's location to every stored contact and records the
    /// alert. A failed send is recorded and the remaining contacts are still
    /// tried.
    pub fn trigger_sos(
        &self,
        user_id: &str,
        location: GeoPoint,
        now_ms: u64,
    ) -> Result<SosAlert, SosError> {
        let user = UserRecord::load(&self.store, user_id).ok_or(SosError::UnknownUser)?;
        let contacts = self
            .get_contacts(user_id)?
            .ok_or(SosError::NoContactsSet)?;
        let body = render_message(&user.first_name, &user.last_name, location);

        let deliveries = contacts
            .contacts
            .into_iter()
            .map(|number| match self.sms.send(&number, &body, now_ms) {
                Ok(id) => Delivery {
                    number,
                    status: DeliveryStatus::Sent,
                    gateway_message_id: Some(id),
                },
                Err(e) => {
                    tracing::warn!(%number, error = %e, "sos text failed");
                    Delivery {
                        number,
                        status: DeliveryStatus::Failed,
                        gateway_message_id: None,
                    }
                }
            })
            .collect();

        let mut alert = SosAlert {
            alert_id: String::new(),
            user_id: user_id.to_string(),
            location,
            triggered_at: secs(now_ms),
            deliveries,
        };
        let (id, _) = self
            .store
            .push(&alerts_path(user_id)?, alert.to_tree(), now_ms)?;
        alert.alert_id = id.into_string();
        Ok(alert)
    }

    /// All alerts of the user, newest first.
    pub fn list_alerts(&self, user_id: &str) -> Result<Vec<SosAlert>, SosError> {
        let all = self.store.get(&alerts_path(user_id)?);
        Ok(all
            .as_map()
            .into_iter()
            .flatten()
            .rev()
            .filter_map(|(id, v)| SosAlert::from_tree(id, v))
            .collect())
    }

    pub fn alert(&self, user_id: &str, alert_id: &str) -> Option<SosAlert> {
        PushId::parse(alert_id)?;
        let path = alerts_path(user_id).ok()?.child(alert_id).ok()?;
        SosAlert::from_tree(alert_id, &self.store.get(&path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use parking_lot::Mutex;

    #[derive(Default)]
    struct Recorder {
        sent: Mutex<Vec<(String, String)>>,
        fail: Vec<String>,
    }

    impl SmsGateway for Recorder {
        fn send(&self, number: &str, body: &str, _now_ms: u64) -> Result<String, SmsError> {
            if self.fail.iter().any(|f| f == number) {
                return Err(SmsError::Rejected(number.to_string()));
            }
            let mut sent = self.sent.lock();
            sent.push((number.to_string(), body.to_string()));
            Ok(format!("m{}", sent.len()))
        }
    }

    fn setup(fail: &[&str]) -> (Arc<TreeStore>, Arc<Recorder>, Sos) {
        let store = Arc::new(TreeStore::new());
        store
            .set(
                &TreePath::parse("users/u1").unwrap(),
                TreeValue::from_pairs([
                    ("id", "u1"),
                    ("first_name", "Rina"),
                    ("last_name", "Das"),
                    ("email", "r@x.y"),
                ]),
            )
            .unwrap();
        let sms = Arc::new(Recorder {
            fail: fail.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        });
        let sos = Sos::new(store.clone(), sms.clone());
        (store, sms, sos)
    }

    fn nums(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn contacts_bounds() {
        let (_, _, sos) = setup(&[]);
        let three = nums(&["+8801711000001", "+8801711000002", "+8801711000003"]);
        assert_eq!(sos.set_contacts("u1", &three).unwrap().contacts, three);
        assert_eq!(sos.get_contacts("u1").unwrap().unwrap().contacts, three);
        let four = nums(&["1111", "2222", "3333", "4444"]);
        assert!(matches!(
            sos.set_contacts("u1", &four),
            Err(SosError::TooManyContacts)
        ));
        assert!(matches!(sos.set_contacts("u1", &[]), Err(SosError::EmptyList)));
        assert!(matches!(
            sos.set_contacts("u1", &nums(&[""])),
            Err(SosError::InvalidNumber(_))
        ));
        sos.set_contacts("u1", &nums(&["+1 555-0100"])).unwrap();
        assert_eq!(
            sos.get_contacts("u1").unwrap().unwrap().contacts,
            ["+15550100"]
        );
    }

    #[test]
    fn fresh_user_has_no_contacts() {
        let (_, _, sos) = setup(&[]);
        assert_eq!(sos.get_contacts("u1").unwrap(), None);
        let loc = GeoPoint::new(1.0, 1.0).unwrap();
        assert!(matches!(
            sos.trigger_sos("u1", loc, 0),
            Err(SosError::NoContactsSet)
        ));
    }

    #[test]
    fn fan_out_one_text_per_contact() {
        let (_, sms, sos) = setup(&[]);
        sos.set_contacts("u1", &nums(&["+8801711000001", "+8801711000002"]))
            .unwrap();
        let loc = GeoPoint::new(23.8103, 90.4125).unwrap();
        let alert = sos.trigger_sos("u1", loc, 5_000).unwrap();
        let sent = sms.sent.lock();
        assert_eq!(sent.len(), 2);
        for (_, body) in sent.iter() {
            assert!(body.contains("23.810300,90.412500"));
            assert!(body.starts_with("EMERGENCY from Rina Das: I need help."));
            assert_eq!(parse_location(body), Some(loc));
        }
        assert_eq!(alert.deliveries.len(), 2);
        assert_eq!(alert.triggered_at, 5);
        assert_eq!(sos.list_alerts("u1").unwrap(), vec![alert]);
    }

    #[test]
    fn partial_failure_is_recorded() {
        let (_, _, sos) = setup(&["+8801711000002"]);
        sos.set_contacts("u1", &nums(&["+8801711000001", "+8801711000002"]))
            .unwrap();
        let alert = sos
            .trigger_sos("u1", GeoPoint::new(0.0, 0.0).unwrap(), 0)
            .unwrap();
        let statuses: Vec<_> = alert.deliveries.iter().map(|d| d.status).collect();
        assert_eq!(statuses, [DeliveryStatus::Sent, DeliveryStatus::Failed]);
        assert_eq!(sos.list_alerts("u1").unwrap().len(), 1);
    }

    #[test]
    fn alerts_newest_first() {
        let (_, _, sos) = setup(&[]);
        assert!(sos.list_alerts("u1").unwrap().is_empty());
        sos.set_contacts("u1", &nums(&["5550100"])).unwrap();
        let loc = GeoPoint::new(0.0, 0.0).unwrap();
        for t in 1..=3 {
            sos.trigger_sos("u1", loc, t * 1000).unwrap();
        }
        let times: Vec<_> = sos
            .list_alerts("u1")
            .unwrap()
            .iter()
            .map(|a| a.triggered_at)
            .collect();
        assert_eq!(times, [3, 2, 1]);
    }

    #[test]
    fn location_parses_back() {
        let p = GeoPoint::new(-33.868820, 151.209296).unwrap();
        let body = render_message("A", "B", p);
        assert_eq!(parse_location(&body), Some(p));
        assert_eq!(parse_location("no location here"), None);
    }
}
