fn main() {
    std::process::exit(gldnet::cli::run(std::env::args_os()));
}
