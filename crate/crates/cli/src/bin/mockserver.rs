//! Deterministic mock language-model backend.
//!
//! Speaks the line-delimited protocol on stdin/stdout, or the same bodies
//! over HTTP POST with `--http ADDR`.

use std::io::{BufRead, Write};
use std::process::ExitCode;

use bridgeprobe::protocol::{codes, MockBackend, MockConfig, MockMode, Request, Response};
use clap::Parser;

#[derive(Parser)]
#[command(version, about = "Deterministic mock backend for bridgeprobe")]
struct Args {
    /// uniform | onehot:K | delta:WORD | table:PATH | table:{json} | random:SEED | scaled:F
    #[arg(long, default_value = "uniform")]
    mode: MockMode,
    #[arg(long, default_value_t = 12)]
    layers: usize,
    #[arg(long, default_value_t = 12)]
    heads: usize,
    #[arg(long = "max-pieces", default_value_t = 512)]
    max_pieces: usize,
    /// Serve HTTP on this address instead of stdio; port 0 picks a free port.
    #[arg(long)]
    http: Option<String>,
}

fn answer(backend: &MockBackend, line: &str) -> Response {
    match serde_json::from_str::<Request>(line) {
        Ok(request) => backend.handle(&request),
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string))
                .unwrap_or_default();
            Response::failure(&id, codes::BAD_REQUEST, e.to_string())
        }
    }
}

fn serve_stdio(backend: &MockBackend) -> std::io::Result<()> {
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = answer(backend, &line);
        serde_json::to_writer(&mut out, &response)?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}

fn serve_http(backend: &MockBackend, addr: &str) -> Result<(), String> {
    let server = tiny_http::Server::http(addr).map_err(|e| e.to_string())?;
    match server.server_addr().to_ip() {
        Some(bound) => eprintln!("listening on http://{bound}"),
        None => eprintln!("listening on {addr}"),
    }
    let json = tiny_http::Header::from_bytes("Content-Type", "application/json")
        .expect("static header");
    for mut request in server.incoming_requests() {
        let mut body = String::new();
        let response = match request.as_reader().read_to_string(&mut body) {
            Ok(_) => answer(backend, &body),
            Err(e) => Response::failure("", codes::BAD_REQUEST, e.to_string()),
        };
        let text = serde_json::to_string(&response).map_err(|e| e.to_string())?;
        let reply = tiny_http::Response::from_string(text).with_header(json.clone());
        if let Err(e) = request.respond(reply) {
            eprintln!("failed to respond: {e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let backend = MockBackend::new(MockConfig {
        mode: args.mode,
        layers: args.layers,
        heads: args.heads,
        max_input_pieces: args.max_pieces,
    });
    let result = match &args.http {
        Some(addr) => serve_http(&backend, addr),
        None => serve_stdio(&backend).map_err(|e| e.to_string()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": "server", "message": e }));
            ExitCode::FAILURE
        }
    }
}
