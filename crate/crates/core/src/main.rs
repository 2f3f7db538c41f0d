fn main() {
    std::process::exit(mcf_qkd::cli::run(std::env::args_os()));
}
