use clap::Parser;
use cmtad_cli::commands::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!(
                "{}",
                serde_json::json!({ "error": { "kind": "usage", "message": msg.trim_end() } })
            );
            std::process::exit(2);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(1);
    }
}
