fn main() {
    std::process::exit(mimicmap::cli::run(std::env::args_os()));
}
