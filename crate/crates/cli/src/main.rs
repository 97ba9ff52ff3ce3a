use bsqr_cli::commands::{cli_main, init_threads};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
    std::process::exit(cli_main(std::env::args_os()));
}
