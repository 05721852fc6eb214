fn main() {
    std::process::exit(samom::cli::run(std::env::args_os()));
}
