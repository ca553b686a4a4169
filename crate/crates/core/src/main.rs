fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(tpadmm::cli::run_command(&argv));
}
