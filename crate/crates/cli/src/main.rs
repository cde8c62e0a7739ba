use clap::Parser;
use tmn_cli::commands::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let _ = e.print();
            let line = serde_json::json!({ "error": "validation", "message": e.kind().to_string() });
            eprintln!("{line}");
            std::process::exit(tmn_cli::EXIT_VALIDATION);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{}", tmn_cli::error_line(&e));
        std::process::exit(tmn_cli::exit_code(&e));
    }
}
