//! A chat write becomes a pending notification, and the dispatcher sends it
//! to each of the recipient's devices.

use std::sync::Arc;

use safeguard::auth::DeviceRegistry;
use safeguard::chat::{Chat, ChatConfig};
use safeguard::notify::{Notifier, NotifyConfig, OutboxPushSink};
use safeguard::treestore::{TreePath, TreeStore, TreeValue};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Arc::new(TreeStore::new());
    let (alice, bob) = ("aaaaaaaaaaaaaaaaaaaa", "bbbbbbbbbbbbbbbbbbbb");
    for (id, first) in [(alice, "Alice"), (bob, "Bob")] {
        store.set(
            &TreePath::from_segments(["users", id])?,
            TreeValue::from_pairs([("id", id), ("first_name", first), ("last_name", "Example"), ("email", "user@example.org")]),
        )?;
    }

    let sink = Arc::new(OutboxPushSink::open(dir.path())?);
    let notifier = Arc::new(Notifier::new(store.clone(), sink.clone(), NotifyConfig::default()));
    let _subscriptions = notifier.install()?;

    let devices = DeviceRegistry::new(store.clone());
    devices.register(bob, "bob-phone", 0)?;
    devices.register(bob, "bob-laptop", 0)?;

    let now = safeguard::time::now_ms();
    Chat::new(store.clone(), ChatConfig::default()).send_message(alice, bob, "On my way", now)?;
    store.flush();
    println!("pending: {}", notifier.pending().len());

    for record in notifier.dispatch_pending(now) {
        println!("{} -> {} {:?}", record.notification_id, record.device_token, record.status);
    }
    print!("{}", std::fs::read_to_string(sink.path())?);
    Ok(())
}
