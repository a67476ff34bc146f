fn main() {
    std::process::exit(svropf::cli::run(std::env::args_os()));
}
