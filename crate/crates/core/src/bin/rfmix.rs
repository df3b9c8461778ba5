fn main() {
    std::process::exit(rfmix::cli::run(std::env::args_os()));
}
