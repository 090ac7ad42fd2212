fn main() {
    std::process::exit(rephase::cli::run(std::env::args_os()));
}
