//! Store contacts, trigger an SOS and read the SMS outbox.

use std::sync::Arc;

use safeguard::geo::GeoPoint;
use safeguard::sos::{parse_location, OutboxSmsGateway, Sos};
use safeguard::treestore::{TreePath, TreeStore, TreeValue};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Arc::new(TreeStore::new());
    store.set(
        &TreePath::parse("users/u1")?,
        TreeValue::from_pairs([("id", "u1"), ("first_name", "Nadia"), ("last_name", "Rahman"), ("email", "nadia@example.org")]),
    )?;

    // Every third send fails so the alert records a mixed outcome.
    let sms = Arc::new(OutboxSmsGateway::open(dir.path(), 1.0 / 3.0)?);
    let sos = Sos::new(store, sms.clone());
    sos.set_contacts(
        "u1",
        &["+880 1711-000001".into(), "+8801711000002".into(), "+8801711000003".into()],
    )?;

    let alert = sos.trigger_sos("u1", GeoPoint::new(23.8103, 90.4125)?, 1_700_000_000_000)?;
    for d in &alert.deliveries {
        println!("{} {:?}", d.number, d.status);
    }

    for line in std::fs::read_to_string(sms.path())?.lines() {
        let body = line.rsplit('\t').next().unwrap_or_default();
        println!("{line}");
        println!("  -> location {:?}", parse_location(body).map(|p| p.to_string()));
    }
    Ok(())
}
