use std::process::ExitCode;

#[tokio::main]
async fn main() -> ExitCode {
    loadforge::cli::run().await
}
