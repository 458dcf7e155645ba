fn main() {
    std::process::exit(fgrnet::cli::run(std::env::args_os()));
}
