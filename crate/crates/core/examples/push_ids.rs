//! Time-ordered 20-character keys.

use safeguard::treestore::{PushId, PushIdGenerator};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut generator = PushIdGenerator::new();
    let t = 1_500_000_000_000;
    let ids: Vec<PushId> = (0..5).map(|i| generator.next(t + i / 2)).collect();
    for id in &ids {
        println!("{}  t={}", id.as_str(), id.timestamp_ms());
    }
    assert!(ids.windows(2).all(|w| w[0].as_str() < w[1].as_str()));

    let parsed = PushId::parse(ids[0].as_str()).ok_or("not a push id")?;
    println!("decoded prefix of {} -> {} ms", parsed.as_str(), parsed.timestamp_ms());
    Ok(())
}
