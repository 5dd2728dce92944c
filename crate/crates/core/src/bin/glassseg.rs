fn main() {
    std::process::exit(glassseg::cli::run(std::env::args_os()));
}
