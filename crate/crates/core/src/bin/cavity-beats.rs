fn main() {
    std::process::exit(cavity_beats::cli::run(std::env::args_os()));
}
