// Start the HTTP API on an ephemeral port, send it one request, shut down.
//
//     cargo run --example serve

use nlorp::artifacts::{load_artifacts, save_artifacts};
use nlorp::corpus::SubjectLineRecord;
use nlorp::lstm::LstmHyperparams;
use nlorp::pipeline::{train_artifacts, TrainingConfig};
use nlorp::service::{router, ServiceState};
use tokio::io::{AsyncReadExt, AsyncWriteExt};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = vec![
        SubjectLineRecord::new("Big summer sale", 0.25)?,
        SubjectLineRecord::new("Last chance: summer escapes", 0.15)?,
    ];
    let config = TrainingConfig {
        lstm: LstmHyperparams {
            embed_dim: 8,
            hidden_dim: 8,
            epochs: 3,
            ..LstmHyperparams::default()
        },
        ..TrainingConfig::default()
    };
    let dir = tempfile::tempdir()?;
    save_artifacts(dir.path(), &train_artifacts(&records, &config)?, &config)?;

    let state = ServiceState::new();
    state.install(load_artifacts(dir.path())?);

    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        println!("listening on {addr}");
        let server = tokio::spawn(async move { axum::serve(listener, router(state, true)).await });

        let body = r#"{"subject_line":"Last chance: big summer sale"}"#;
        let mut stream = tokio::net::TcpStream::connect(addr).await?;
        let request = format!(
            "POST /v1/predict HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        stream.write_all(request.as_bytes()).await?;
        let mut response = String::new();
        stream.read_to_string(&mut response).await?;
        let (head, json) = response.split_once("\r\n\r\n").unwrap_or((&response, ""));
        println!("{}", head.lines().next().unwrap_or_default());
        let value: serde_json::Value = serde_json::from_str(json)?;
        println!("{}", serde_json::to_string_pretty(&value)?);

        server.abort();
        Ok::<_, Box<dyn std::error::Error>>(())
    })
}
