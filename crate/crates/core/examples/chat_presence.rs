//! Search, a short conversation and checkpoint-based presence.

use std::sync::Arc;

use safeguard::chat::{Chat, ChatConfig};
use safeguard::treestore::{TreePath, TreeStore, TreeValue};

fn add_user(store: &TreeStore, id: &str, first: &str, last: &str) -> Result<(), Box<dyn std::error::Error>> {
    store.set(
        &TreePath::from_segments(["users", id])?,
        TreeValue::from_pairs([("id", id), ("first_name", first), ("last_name", last), ("email", "user@example.org")]),
    )?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = Arc::new(TreeStore::new());
    add_user(&store, "aaaaaaaaaaaaaaaaaaaa", "Alice", "Khan")?;
    add_user(&store, "bbbbbbbbbbbbbbbbbbbb", "Bob", "Roy")?;
    let (alice, bob) = ("aaaaaaaaaaaaaaaaaaaa", "bbbbbbbbbbbbbbbbbbbb");
    let chat = Chat::new(store, ChatConfig::default());
    let t0 = 1_700_000_000_000;

    for hit in chat.search_users("ro", 10, t0)? {
        println!("search: {} ({:?})", hit.display_name, hit.presence.state);
    }

    chat.checkpoint(alice, "chat-open", t0)?;
    chat.send_message(alice, bob, "Are you home?", t0)?;
    chat.send_message(bob, alice, "Yes, all good.", t0 + 5_000)?;
    for m in chat.get_conversation(bob, alice, None, 50)? {
        println!("[{}] {}: {}", m.id, m.sender_name, m.body);
    }

    for minutes in [0, 5, 6] {
        let p = chat.presence(alice, t0 + minutes * 60_000)?;
        println!("after {minutes} min Alice is {:?} ({:?} s)", p.state, p.seconds_since);
    }
    Ok(())
}
