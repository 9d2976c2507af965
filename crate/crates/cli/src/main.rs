use clap::Parser;

fn main() {
    mdmdp_cli::init_logging();
    let cli = match mdmdp_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    std::process::exit(mdmdp_cli::run(cli));
}
