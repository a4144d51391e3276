fn main() {
    std::process::exit(spandec::cli::run(std::env::args_os()));
}
