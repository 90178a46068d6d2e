fn main() {
    std::process::exit(qlmrank_cli::run(std::env::args_os()));
}
