//! Run the HTTP service in-process on an ephemeral port and drive it with
//! a client: register, verify, log in, set contacts, trigger an SOS.

use safeguard::auth::{password, read_token_from_eml};
use safeguard::gateway::{serve, ServiceConfig};
use serde_json::{json, Value};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    tokio::runtime::Runtime::new()?.block_on(run())
}

async fn run() -> Result<(), Box<dyn std::error::Error>> {
    let data = tempfile::tempdir()?;
    let config = ServiceConfig {
        bind: "127.0.0.1:0".parse()?,
        data_dir: data.path().to_path_buf(),
        password_iterations: password::MIN_ITERATIONS,
        ..ServiceConfig::default()
    };
    let outbox = config.outbox_dir();
    let handle = serve(config).await?;
    let base = format!("http://{}", handle.addr());
    let http = reqwest::Client::new();

    let health: Value = http.get(format!("{base}/health")).send().await?.json().await?;
    println!("health {health}");

    http.post(format!("{base}/auth/register"))
        .json(&json!({"first_name": "Nadia", "last_name": "Rahman",
                      "email": "nadia@example.org", "password": "correct horse"}))
        .send()
        .await?
        .error_for_status()?;
    let mail = std::fs::read_dir(&outbox)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .find(|p| p.extension().is_some_and(|x| x == "eml"))
        .expect("verification mail in outbox");
    let token = read_token_from_eml(&mail)?.expect("token line");
    http.post(format!("{base}/auth/verify"))
        .json(&json!({"token": token}))
        .send()
        .await?
        .error_for_status()?;

    let login: Value = http
        .post(format!("{base}/auth/login"))
        .json(&json!({"email": "nadia@example.org", "password": "correct horse"}))
        .send()
        .await?
        .json()
        .await?;
    let session = login["token"].as_str().unwrap_or_default().to_string();

    http.put(format!("{base}/contacts"))
        .bearer_auth(&session)
        .json(&json!({"numbers": ["+8801711000001", "+8801711000002"]}))
        .send()
        .await?
        .error_for_status()?;
    let alert: Value = http
        .post(format!("{base}/sos"))
        .bearer_auth(&session)
        .json(&json!({"lat": 23.8103, "lon": 90.4125}))
        .send()
        .await?
        .json()
        .await?;
    println!("alert {}", alert["deliveries"]);

    let denied = http.get(format!("{base}/alerts")).send().await?;
    println!("without a session: {} {}", denied.status(), denied.text().await?);

    let commit = handle.shutdown().await?;
    println!("snapshot at commit {commit}");
    print!("{}", std::fs::read_to_string(outbox.join("sms-outbox.log"))?);
    Ok(())
}
