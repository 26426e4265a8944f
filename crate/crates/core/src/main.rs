fn main() {
    if let Err(e) = wds_core::cli::main_with_args(std::env::args_os().collect()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
