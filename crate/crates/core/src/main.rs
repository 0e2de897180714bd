fn main() {
    std::process::exit(opnp::cli::run(std::env::args_os()));
}
