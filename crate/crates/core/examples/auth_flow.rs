//! Register, read the emailed token, verify, log in, authenticate.

use std::sync::Arc;

use safeguard::auth::{password, Auth, AuthConfig, AuthError, MemoryMailer};
use safeguard::treestore::TreeStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = Arc::new(TreeStore::new());
    let mailer = Arc::new(MemoryMailer::new());
    let config = AuthConfig {
        password_iterations: password::MIN_ITERATIONS,
        ..AuthConfig::default()
    };
    let auth = Auth::new(store, mailer.clone(), config);
    let now = 1_700_000_000_000;

    let (user_id, _) = auth.register("Nadia", "Rahman", "nadia@example.org", "correct horse", now)?;
    println!("registered {user_id}");

    match auth.login("nadia@example.org", "correct horse", now) {
        Err(AuthError::EmailUnverified) => println!("login refused until the email is verified"),
        other => panic!("unexpected: {other:?}"),
    }

    let token = mailer.last_token().expect("verification mail was sent");
    auth.verify_email(&token, now + 60_000)?;
    let session = auth.login("nadia@example.org", "correct horse", now + 120_000)?;
    println!("session for {} expires at {}", session.user_id, session.expires_at);
    println!("authenticated as {}", auth.authenticate(&session.token, now + 180_000)?);

    auth.logout(&session.token)?;
    assert!(auth.authenticate(&session.token, now + 240_000).is_err());
    println!("logged out");
    Ok(())
}
