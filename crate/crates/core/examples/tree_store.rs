//! Path-addressed writes, a wildcard trigger, a transaction and a
//! snapshot round trip.

use std::sync::Arc;

use parking_lot::Mutex;
use safeguard::treestore::{TreeError, TreePath, TreeStore, TreeValue, TriggerRegistration};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = TreeStore::new();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let _sub = store.subscribe(
        TriggerRegistration::new("users/*/first_name", "example.names")?,
        move |event| log.lock().push(format!("#{} {} = {:?}", event.commit, event.path, event.new)),
    )?;

    store.set(
        &TreePath::parse("users/u1")?,
        TreeValue::from_pairs([("first_name", "Nadia"), ("last_name", "Rahman")]),
    )?;
    store.set(&TreePath::parse("users/u1/first_name")?, "Nadia R.".into())?;

    let counter = TreePath::parse("stats/sos_count")?;
    for _ in 0..3 {
        store.transaction::<TreeError, _>(&counter, |cur| {
            Ok(Some(TreeValue::Int(cur.as_i64().unwrap_or(0) + 1)))
        })?;
    }

    store.flush();
    for line in seen.lock().iter() {
        println!("trigger {line}");
    }
    println!("sos_count = {:?}", store.get(&counter));

    let snapshot = store.snapshot();
    print!("{snapshot}");
    let restored = TreeStore::restore(&snapshot)?;
    assert_eq!(restored.get(&TreePath::root()), store.get(&TreePath::root()));
    println!("restored commit {}", restored.commit_number());
    Ok(())
}
