fn main() {
    std::process::exit(vmfrobust::cli::run(std::env::args_os()));
}
