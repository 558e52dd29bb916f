fn main() {
    std::process::exit(data2ld::cli::run(std::env::args_os()));
}
