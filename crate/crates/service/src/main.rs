use clap::Parser;

#[derive(Parser)]
#[command(name = "ssomvr-service", version, about = "Interactive ssomvr sessions over HTTP")]
struct Args {
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let listener = tokio::net::TcpListener::bind(&args.addr).await?;
    eprintln!("ssomvr-service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, ssomvr_service::router()).await
}
