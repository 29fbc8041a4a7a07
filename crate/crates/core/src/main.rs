fn main() {
    std::process::exit(trackcluster::cli::main_with(std::env::args_os()));
}
