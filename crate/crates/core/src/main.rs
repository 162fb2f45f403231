fn main() {
    std::process::exit(ddbranch::cli::run(std::env::args_os()));
}
