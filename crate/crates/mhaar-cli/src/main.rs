use clap::Parser;

fn main() {
    let args = mhaar_cli::cli::Args::parse();
    match mhaar_cli::cli::execute(&args) {
        Ok(report) => {
            for line in report {
                println!("{line}");
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
