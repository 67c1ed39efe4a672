use clap::Parser;
use hpemm_cli::{run, Cli, EXIT_ERROR};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(out) => {
            if out.code == 0 {
                println!("{}", out.message);
            } else {
                eprintln!("{}", out.message);
            }
            out.code
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    };
    std::process::exit(code);
}
