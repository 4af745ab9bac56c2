fn main() {
    let code = archscreen::cli::run_main(std::env::args_os());
    std::process::exit(code);
}
