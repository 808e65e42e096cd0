fn main() {
    std::process::exit(gbmstab::cli::run(std::env::args_os()));
}
